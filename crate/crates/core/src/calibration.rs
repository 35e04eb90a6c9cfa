//! Logit correction.
//!
//! For each class `k` the logit `l_k` is bimodal: one mode when `k` is the
//! true label, another when it is not. Both modes are fit as Gaussians on a
//! clean reference and on hardware outputs. A hardware logit is mapped through
//! each mode's affine transform and the two estimates are blended by the
//! posterior probability of the mode.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PredictionRecord;

pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mu: f64,
    pub sigma: f64,
}

impl Gaussian {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Gaussian {
            mu,
            sigma: sigma.max(SIGMA_FLOOR),
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * (2.0 * PI).ln()
    }

    /// Population mean and std, std floored.
    pub fn fit(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mu = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
        Gaussian::new(mu, var.sqrt())
    }
}

/// The two modes of one class logit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassModes {
    /// Label equals the class.
    pub on: Gaussian,
    /// Label differs from the class.
    pub off: Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitModeFit {
    pub n_classes: usize,
    pub clean: Vec<ClassModes>,
    pub hardware: Vec<ClassModes>,
    /// Prior of the "on" mode per class. `None` uses `1/n`.
    #[serde(default)]
    pub class_priors: Option<Vec<f64>>,
}

/// Fits both modes of every class logit from labelled logit vectors.
pub fn fit_modes(logits: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<Vec<ClassModes>> {
    if logits.len() != labels.len() {
        return Err(Error::domain("logits and labels differ in length"));
    }
    let mut out = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let mut on = Vec::new();
        let mut off = Vec::new();
        for (l, &y) in logits.iter().zip(labels) {
            let v = *l
                .get(k)
                .ok_or_else(|| Error::domain(format!("logit vector shorter than {n_classes}")))?;
            if y == k {
                on.push(v);
            } else {
                off.push(v);
            }
        }
        if on.len() < 2 || off.len() < 2 {
            return Err(Error::InsufficientSamples {
                class: k,
                detail: format!("{} on-mode and {} off-mode samples, need 2 each", on.len(), off.len()),
            });
        }
        out.push(ClassModes {
            on: Gaussian::fit(&on),
            off: Gaussian::fit(&off),
        });
    }
    Ok(out)
}

impl LogitModeFit {
    fn prior_on(&self, k: usize) -> f64 {
        match &self.class_priors {
            Some(p) => p[k],
            None => 1.0 / self.n_classes as f64,
        }
    }

    /// Posterior probability that `k` is the true label given hardware logit `l`.
    pub fn posterior_label_prob(&self, k: usize, l: f64) -> f64 {
        let h = &self.hardware[k];
        let pi = self.prior_on(k);
        let a = h.on.ln_pdf(l) + pi.ln();
        let b = h.off.ln_pdf(l) + (1.0 - pi).ln();
        // logistic of a - b without overflow
        let d = a - b;
        if d >= 0.0 {
            1.0 / (1.0 + (-d).exp())
        } else {
            let e = d.exp();
            e / (1.0 + e)
        }
    }

    pub fn correct_logit(&self, k: usize, l: f64) -> f64 {
        let (c, h) = (&self.clean[k], &self.hardware[k]);
        let p = self.posterior_label_prob(k, l);
        let on = (l - h.on.mu) / h.on.sigma * c.on.sigma + c.on.mu;
        let off = (l - h.off.mu) / h.off.sigma * c.off.sigma + c.off.mu;
        p * on + (1.0 - p) * off
    }

    pub fn correct_logits(&self, l: &[f64]) -> Vec<f64> {
        l.iter().enumerate().map(|(k, &v)| self.correct_logit(k, v)).collect()
    }

    /// Applies the correction to every member of every record.
    pub fn apply(&self, records: &[PredictionRecord]) -> Result<Vec<PredictionRecord>> {
        records.iter().map(|r| r.map_logits(|l| self.correct_logits(l))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.clean.len() != self.n_classes || self.hardware.len() != self.n_classes {
            return Err(Error::config("logit fit must cover at least 2 classes on both sides"));
        }
        if let Some(p) = &self.class_priors {
            if p.len() != self.n_classes || p.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return Err(Error::config("class priors must lie in (0, 1), one per class"));
            }
        }
        Ok(())
    }
}

/// Pools every member's logits of the first `calib_size` records.
fn pooled(records: &[PredictionRecord], calib_size: usize) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut logits = Vec::new();
    let mut labels = Vec::new();
    for r in &records[..calib_size] {
        let y = r
            .label
            .ok_or_else(|| Error::domain(format!("calibration record {} has no label", r.id)))?;
        for l in &r.logits {
            logits.push(l.clone());
            labels.push(y);
        }
    }
    Ok((logits, labels))
}

/// Fits clean modes from the reference pass and hardware modes from the
/// hardware pass over the same calibration inputs, pooling members.
pub fn calibrate_network(
    clean: &[PredictionRecord],
    hardware: &[PredictionRecord],
    calib_size: usize,
) -> Result<LogitModeFit> {
    if calib_size == 0 {
        return Err(Error::config("calibration size must be positive"));
    }
    if calib_size > clean.len() || calib_size > hardware.len() {
        return Err(Error::config(format!(
            "calibration size {calib_size} exceeds the {} / {} available records",
            clean.len(),
            hardware.len()
        )));
    }
    let n_classes = clean[0].marginal.len();
    let (cl, cy) = pooled(clean, calib_size)?;
    let (hl, hy) = pooled(hardware, calib_size)?;
    let fit = LogitModeFit {
        n_classes,
        clean: fit_modes(&cl, &cy, n_classes)?,
        hardware: fit_modes(&hl, &hy, n_classes)?,
        class_priors: None,
    };
    fit.validate()?;
    Ok(fit)
}
