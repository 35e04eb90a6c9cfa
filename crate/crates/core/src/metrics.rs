//! Calibration error, uncertainty decomposition and ROC AUC.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PredictionRecord;

/// Bin index in `0..n_bins` for the half-open bins `((m-1)/N, m/N]`.
fn bin_of(conf: f64, n_bins: usize) -> usize {
    let n = n_bins as f64;
    let mut m = (conf * n).ceil().max(1.0) as usize;
    m = m.min(n_bins);
    // guard against rounding in conf * n near an edge
    while m > 1 && conf <= (m - 1) as f64 / n {
        m -= 1;
    }
    while m < n_bins && conf > m as f64 / n {
        m += 1;
    }
    m - 1
}

/// Expected calibration error on `(confidence, correct)` pairs.
pub fn ece_from_pairs(pairs: &[(f64, bool)], n_bins: usize) -> Result<f64> {
    if n_bins == 0 {
        return Err(Error::config("n_bins must be >= 1"));
    }
    if pairs.is_empty() {
        return Err(Error::domain("ECE of an empty record set"));
    }
    let mut count = vec![0usize; n_bins];
    let mut hits = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    for &(c, ok) in pairs {
        let b = bin_of(c, n_bins);
        count[b] += 1;
        hits[b] += ok as usize;
        conf_sum[b] += c;
    }
    let total = pairs.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let n = count[b] as f64;
            n / total * (hits[b] as f64 / n - conf_sum[b] / n).abs()
        })
        .sum())
}

pub fn ece(records: &[PredictionRecord], n_bins: usize) -> Result<f64> {
    let pairs = records
        .iter()
        .map(|r| {
            r.correct()
                .map(|ok| (r.confidence(), ok))
                .ok_or_else(|| Error::domain(format!("record {} has no label", r.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    ece_from_pairs(&pairs, n_bins)
}

/// Entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub total: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

/// Total uncertainty is the entropy of the marginal, aleatoric the mean
/// member entropy, epistemic their difference.
pub fn uncertainties(r: &PredictionRecord) -> Uncertainty {
    let total = entropy(&r.marginal);
    let h: Vec<f64> = r.probs.iter().map(|p| entropy(p)).collect();
    let n = h.len() as f64;
    let aleatoric = h[0] + h[1..].iter().map(|v| v - h[0]).sum::<f64>() / n;
    Uncertainty {
        total,
        aleatoric,
        epistemic: total - aleatoric,
    }
}

/// Area under the ROC curve by the Mann-Whitney statistic; ties count 1/2.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::domain("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::domain("AUC needs at least one positive and one negative"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of midranks of the positives, in units of half-ranks to stay exact
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        for &k in &idx[i..=j] {
            if positives[k] {
                rank_sum2 += mid2;
            }
        }
        i = j + 1;
    }
    let np = n_pos as u128;
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub accuracy: f64,
    pub ece: f64,
    pub n_bins: usize,
    /// ECE at other bin counts.
    pub ece_by_bins: BTreeMap<usize, f64>,
    pub mean_total: f64,
    pub mean_aleatoric: f64,
    pub mean_epistemic: f64,
    /// Aleatoric uncertainty separating incorrect (positive) from correct.
    pub auc_aleatoric: Option<f64>,
    /// Epistemic uncertainty separating OOD (positive) from in-distribution.
    pub auc_epistemic: Option<f64>,
    pub saturations: u64,
}

pub fn report(
    records: &[PredictionRecord],
    ood: Option<&[PredictionRecord]>,
    n_bins: usize,
) -> Result<MetricReport> {
    let n = records.len();
    let correct: Vec<bool> = records
        .iter()
        .map(|r| r.correct().ok_or_else(|| Error::domain("unlabelled record")))
        .collect::<Result<_>>()?;
    let accuracy = correct.iter().filter(|&&c| c).count() as f64 / n.max(1) as f64;
    let ece_main = ece(records, n_bins)?;
    let mut ece_by_bins = BTreeMap::new();
    for b in [10, 15, 20] {
        ece_by_bins.insert(b, ece(records, b)?);
    }
    let u: Vec<Uncertainty> = records.iter().map(uncertainties).collect();
    let mean = |f: fn(&Uncertainty) -> f64| u.iter().map(f).sum::<f64>() / n as f64;
    let incorrect: Vec<bool> = correct.iter().map(|c| !c).collect();
    let ua: Vec<f64> = u.iter().map(|v| v.aleatoric).collect();
    let auc_aleatoric = roc_auc(&ua, &incorrect).ok();
    let auc_epistemic = match ood {
        Some(o) if !o.is_empty() => {
            let mut s: Vec<f64> = u.iter().map(|v| v.epistemic).collect();
            let mut pos = vec![false; s.len()];
            for r in o {
                s.push(uncertainties(r).epistemic);
                pos.push(true);
            }
            Some(roc_auc(&s, &pos)?)
        }
        _ => None,
    };
    Ok(MetricReport {
        n,
        accuracy,
        ece: ece_main,
        n_bins,
        ece_by_bins,
        mean_total: mean(|v| v.total),
        mean_aleatoric: mean(|v| v.aleatoric),
        mean_epistemic: mean(|v| v.epistemic),
        auc_aleatoric,
        auc_epistemic,
        saturations: records.iter().map(|r| r.saturations).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(label: usize, probs: Vec<Vec<f64>>) -> PredictionRecord {
        let logits = probs.iter().map(|p| p.iter().map(|v| v.ln()).collect()).collect();
        let mut r = PredictionRecord::from_logits(0, Some(label), logits).unwrap();
        r.marginal = crate::inference::marginal(&probs);
        r.probs = probs;
        r
    }

    /// Pair-counting oracle.
    fn auc_brute(pos: &[f64], neg: &[f64]) -> f64 {
        let mut s = 0.0;
        for &p in pos {
            for &n in neg {
                s += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        s / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn ece_examples() {
        assert_eq!(ece_from_pairs(&[(1.0, true), (1.0, true)], 10).unwrap(), 0.0);
        let e = ece_from_pairs(&[(0.95, true), (0.95, true), (0.95, false)], 10).unwrap();
        assert!((e - (0.95 - 2.0 / 3.0)).abs() < 1e-12);
        assert!((e - 0.28333).abs() < 1e-5);
        assert_eq!(bin_of(0.9, 10), 8);
        assert_eq!(bin_of(0.3, 10), 2);
        assert_eq!(bin_of(0.30000000000000004, 10), 3);
        assert_eq!(bin_of(1.0, 10), 9);
        assert!(ece_from_pairs(&[], 10).is_err());
    }

    #[test]
    fn uncertainty_examples() {
        let u = uncertainties(&rec(0, vec![vec![0.5, 0.5]]));
        let ln2 = 2f64.ln();
        assert!((u.total - ln2).abs() < 1e-15 && (u.aleatoric - ln2).abs() < 1e-15);
        assert_eq!(u.epistemic, 0.0);
        let u = uncertainties(&rec(0, vec![vec![1.0, 0.0], vec![0.0, 1.0]]));
        assert!((u.total - std::f64::consts::LN_2).abs() < 1e-5);
        assert_eq!(u.aleatoric, 0.0);
        assert!((u.epistemic - ln2).abs() < 1e-15);
        let same = vec![vec![0.2, 0.7, 0.1]; 10];
        assert_eq!(uncertainties(&rec(1, same)).epistemic, 0.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[3.0, 4.0, 1.0, 2.0], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[1.0; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        let a = roc_auc(&[3.0, 2.0, 1.0, 2.5], &[true, true, false, false]).unwrap();
        assert_eq!(a, auc_brute(&[3.0, 2.0], &[1.0, 2.5]));
        assert_eq!(a, 0.75);
        let a = roc_auc(&[3.0, 2.0, 2.5, 2.0], &[true, true, false, false]).unwrap();
        assert_eq!(a, 0.625);
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(
            pos in proptest::collection::vec(0u8..6, 1..20),
            neg in proptest::collection::vec(0u8..6, 1..20),
        ) {
            let p: Vec<f64> = pos.iter().map(|&v| v as f64).collect();
            let n: Vec<f64> = neg.iter().map(|&v| v as f64).collect();
            let mut s = p.clone();
            s.extend(&n);
            let mut lab = vec![true; p.len()];
            lab.extend(vec![false; n.len()]);
            let a = roc_auc(&s, &lab).unwrap();
            prop_assert!((a - auc_brute(&p, &n)).abs() < 1e-12);
            // strictly monotone transform
            let t: Vec<f64> = s.iter().map(|v| (v * 0.7).exp() - 3.0).collect();
            prop_assert_eq!(roc_auc(&t, &lab).unwrap(), a);
        }

        #[test]
        fn epistemic_nonnegative_and_bounded(raw in proptest::collection::vec(proptest::collection::vec(-8.0f64..8.0, 5), 1..12)) {
            let r = PredictionRecord::from_logits(0, Some(0), raw).unwrap();
            let u = uncertainties(&r);
            prop_assert!(u.epistemic >= -1e-9);
            prop_assert!(u.total <= 5f64.ln() + 1e-12);
            prop_assert!(u.aleatoric >= 0.0);
        }

        #[test]
        fn ece_order_invariant(pairs in proptest::collection::vec((0.05f64..1.0, any::<bool>()), 1..50)) {
            let a = ece_from_pairs(&pairs, 10).unwrap();
            let mut rev = pairs.clone();
            rev.reverse();
            let b = ece_from_pairs(&rev, 10).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
