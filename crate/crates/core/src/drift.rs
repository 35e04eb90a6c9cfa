//! Conductance drift over time and its compensation.

use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_network, LogitModeFit};
use crate::crossbar::compensated_t_ratio;
use crate::dataset::Dataset;
use crate::device::T_REF;
use crate::error::{Error, Result};
use crate::inference::{run_ensemble, Backend, Deployment, EnsembleConfig, PredictionRecord};
use crate::metrics::{report, MetricReport};
use crate::network::{FixedWeights, NetworkModel};

/// Drift-correction coefficient `(t / T_REF)^nu_c`.
pub fn alpha(t: f64, nu_c: f64) -> Result<f64> {
    if !(t >= T_REF) || !t.is_finite() {
        return Err(Error::domain(format!(
            "time {t} s precedes the reference time {T_REF} s"
        )));
    }
    Ok((t / T_REF).powf(nu_c))
}

/// Default time grid in seconds.
pub const DEFAULT_TIMES: [f64; 7] = [20.0, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Nominal read timing, drifted conductances.
    Raw,
    /// NP read pulse shortened by the quantized drift coefficient.
    Compensated,
    /// Compensated, then logit correction fitted on the calibration subset.
    CompensatedCorrected,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::Raw,
        Scenario::Compensated,
        Scenario::CompensatedCorrected,
    ];
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub times: Vec<f64>,
    pub scenarios: Vec<Scenario>,
    pub n_mc: usize,
    pub n_bins: usize,
    /// Seed of the inference streams; shared by every time point.
    pub seed: u64,
    /// Fit the logit correction once at the first time and reuse it.
    pub reuse_fit: bool,
    #[serde(skip)]
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            times: DEFAULT_TIMES.to_vec(),
            scenarios: Scenario::ALL.to_vec(),
            n_mc: 10,
            n_bins: 10,
            seed: 0,
            reuse_fit: false,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub time: f64,
    pub scenario: Scenario,
    pub alpha: f64,
    pub t_ratio: u32,
    pub report: MetricReport,
}

const TAG_TEST: u64 = 0;
const TAG_OOD: u64 = 1;
const TAG_CALIB: u64 = 2;

/// Evaluates one programmed deployment at each time point. Cells are never
/// reprogrammed; every time point reuses the same inference streams so that
/// differences come from drift alone.
pub fn sweep(
    net: &NetworkModel,
    deployment: &Deployment,
    test: &Dataset,
    ood: Option<&Dataset>,
    calib: &Dataset,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if cfg.times.is_empty() {
        return Err(Error::config("empty time grid"));
    }
    if cfg.times.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::config("times must be sorted ascending"));
    }
    let cc = &deployment.core_config;
    for &t in &cfg.times {
        alpha(t, cc.nu_c)?;
    }
    let correct = cfg.scenarios.contains(&Scenario::CompensatedCorrected);
    if correct && calib.is_empty() {
        return Err(Error::config("logit correction needs a calibration subset"));
    }
    let scales = &deployment.scales;
    let ens = |tag: u64| EnsembleConfig {
        n_mc: cfg.n_mc,
        seed: cfg.seed,
        stream_tag: tag,
        workers: cfg.workers,
    };
    let clean = if correct {
        let fixed = FixedWeights::from_signs(net, &net.sign_matrices()?);
        run_ensemble(
            net,
            &Backend::Fixed(&fixed),
            scales,
            &calib.features,
            Some(&calib.labels),
            &EnsembleConfig { n_mc: 1, ..ens(TAG_CALIB) },
        )?
    } else {
        Vec::new()
    };
    let run = |t: f64, ratio: u32, data: &Dataset, tag: u64| -> Result<Vec<PredictionRecord>> {
        let snap = deployment.snapshot(t, Some(ratio))?;
        run_ensemble(net, &Backend::Hardware(&snap), scales, &data.features, Some(&data.labels), &ens(tag))
    };
    let mut fixed_fit: Option<LogitModeFit> = None;
    let mut rows = Vec::new();
    for &t in &cfg.times {
        let a = alpha(t, cc.nu_c)?;
        let comp_ratio = compensated_t_ratio(cc.t_ratio, a);
        let mut compensated: Option<(Vec<PredictionRecord>, Option<Vec<PredictionRecord>>)> = None;
        for &sc in &cfg.scenarios {
            let ratio = if sc == Scenario::Raw { cc.t_ratio } else { comp_ratio };
            let (test_rec, ood_rec) = if sc == Scenario::Raw {
                let o = ood.map(|d| run(t, ratio, d, TAG_OOD)).transpose()?;
                (run(t, ratio, test, TAG_TEST)?, o)
            } else {
                if compensated.is_none() {
                    let o = ood.map(|d| run(t, ratio, d, TAG_OOD)).transpose()?;
                    compensated = Some((run(t, ratio, test, TAG_TEST)?, o));
                }
                compensated.clone().unwrap()
            };
            let (test_rec, ood_rec) = if sc == Scenario::CompensatedCorrected {
                let fit = match (&fixed_fit, cfg.reuse_fit) {
                    (Some(f), true) => f.clone(),
                    _ => {
                        let hw = run(t, ratio, calib, TAG_CALIB)?;
                        let f = calibrate_network(&clean, &hw, calib.len())?;
                        if cfg.reuse_fit {
                            fixed_fit = Some(f.clone());
                        }
                        f
                    }
                };
                let o = ood_rec.map(|r| fit.apply(&r)).transpose()?;
                (fit.apply(&test_rec)?, o)
            } else {
                (test_rec, ood_rec)
            };
            rows.push(SweepRow {
                time: t,
                scenario: sc,
                alpha: a,
                t_ratio: ratio,
                report: report(&test_rec, ood_rec.as_deref(), cfg.n_bins)?,
            });
        }
    }
    Ok(rows)
}

/// Rows as CSV with the headline metrics.
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "time,scenario,alpha,t_ratio,accuracy,ece,mean_aleatoric,mean_epistemic,auc_aleatoric,auc_epistemic\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        let sc = serde_json::to_value(r.scenario).unwrap();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.time,
            sc.as_str().unwrap_or(""),
            r.alpha,
            r.t_ratio,
            r.report.accuracy,
            r.report.ece,
            r.report.mean_aleatoric,
            r.report.mean_epistemic,
            opt(r.report.auc_aleatoric),
            opt(r.report.auc_epistemic),
        ));
    }
    s
}
