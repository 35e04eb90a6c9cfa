//! PCM device and differential-cell model.
//!
//! All conductances are in microsiemens, times in seconds. Stochasticity is
//! described by three state-dependent curves: programming noise `sigma_p(G)`,
//! read noise `sigma_r(G)` and the drift exponent `nu(G)`.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference time after programming at which the noise curves are defined.
pub const T_REF: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgCoeffs {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadCoeffs {
    pub r0: f64,
    pub r1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftCoeffs {
    pub nu0: f64,
    pub gscale: f64,
    #[serde(default = "default_nu_max")]
    pub nu_max: f64,
}

fn default_nu_max() -> f64 {
    0.2
}

/// Parametric state-dependent noise curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub prog: ProgCoeffs,
    pub read: ReadCoeffs,
    pub drift: DriftCoeffs,
    #[serde(default = "default_g_max")]
    pub g_max: f64,
}

fn default_g_max() -> f64 {
    25.0
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            prog: ProgCoeffs {
                c2: -0.0012,
                c1: 0.065,
                c0: 0.26,
                floor: 0.1,
            },
            read: ReadCoeffs { r0: 0.05, r1: 0.04 },
            drift: DriftCoeffs {
                nu0: 0.08,
                gscale: 28.0,
                nu_max: 0.2,
            },
            g_max: 25.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curve {
    Prog,
    Read,
    DriftExp,
}

impl NoiseModel {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let model: NoiseModel = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g_max > 0.0 && self.g_max.is_finite()) {
            return Err(Error::config(format!("g_max must be positive, got {}", self.g_max)));
        }
        if !(self.prog.floor > 0.0) {
            return Err(Error::config("programming-noise floor must be positive"));
        }
        if !(self.read.r0 > 0.0) || self.read.r1 < 0.0 {
            return Err(Error::config("read-noise coefficients must satisfy r0 > 0, r1 >= 0"));
        }
        if self.drift.nu0 < 0.0 || !(self.drift.gscale > 0.0) {
            return Err(Error::config("drift coefficients must satisfy nu0 >= 0, gscale > 0"));
        }
        if !(0.0..=0.2).contains(&self.drift.nu_max) {
            return Err(Error::config("drift clamp nu_max must lie in [0, 0.2]"));
        }
        Ok(())
    }

    /// Programming-noise standard deviation, uS.
    #[inline]
    pub fn sigma_prog(&self, g: f64) -> f64 {
        let p = &self.prog;
        (p.c2 * g * g + p.c1 * g + p.c0).max(p.floor)
    }

    /// Read-noise standard deviation, uS.
    #[inline]
    pub fn sigma_read(&self, g: f64) -> f64 {
        (self.read.r1 * g.max(0.0).sqrt()).max(self.read.r0)
    }

    #[inline]
    pub fn drift_exponent(&self, g: f64) -> f64 {
        let d = &self.drift;
        (d.nu0 * (-g / d.gscale).exp()).clamp(0.0, d.nu_max)
    }

    /// Checked evaluation of one curve.
    pub fn eval(&self, g: f64, which: Curve) -> Result<f64> {
        if !(0.0..=self.g_max).contains(&g) {
            return Err(Error::domain(format!(
                "conductance {g} uS outside [0, {}] uS",
                self.g_max
            )));
        }
        Ok(match which {
            Curve::Prog => self.sigma_prog(g),
            Curve::Read => self.sigma_read(g),
            Curve::DriftExp => self.drift_exponent(g),
        })
    }

    #[inline]
    pub fn clamp_g(&self, g: f64) -> f64 {
        g.clamp(0.0, self.g_max)
    }
}

/// Program-and-verify parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgramSettings {
    pub noise: bool,
    pub tolerance: f64,
    pub max_iters: u32,
}

impl Default for ProgramSettings {
    fn default() -> Self {
        ProgramSettings {
            noise: true,
            tolerance: 0.25,
            max_iters: 20,
        }
    }
}

impl ProgramSettings {
    /// One programming pulse, no verify. The residual error is the full `sigma_p`.
    pub fn single_shot() -> Self {
        ProgramSettings {
            noise: true,
            tolerance: f64::INFINITY,
            max_iters: 1,
        }
    }

    pub fn noiseless() -> Self {
        ProgramSettings {
            noise: false,
            ..Self::default()
        }
    }
}

/// Read-time effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadSettings {
    pub noise: bool,
    pub drift: bool,
}

impl Default for ReadSettings {
    fn default() -> Self {
        ReadSettings {
            noise: true,
            drift: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcmDevice {
    pub g_target: f64,
    pub g_programmed: f64,
}

impl PcmDevice {
    pub const OFF: PcmDevice = PcmDevice {
        g_target: 0.0,
        g_programmed: 0.0,
    };

    pub fn drifted(&self, model: &NoiseModel, t: f64) -> Result<f64> {
        drifted_conductance(self.g_programmed, model, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferentialCell {
    pub pos: PcmDevice,
    pub neg: PcmDevice,
}

impl DifferentialCell {
    /// Programmed (time T_REF, noise-free read) conductance difference.
    pub fn programmed_difference(&self) -> f64 {
        self.pos.g_programmed - self.neg.g_programmed
    }
}

/// Programs one device towards `target` with the program-and-verify loop.
pub fn program_device<R: Rng + ?Sized>(
    target: f64,
    model: &NoiseModel,
    settings: &ProgramSettings,
    rng: &mut R,
) -> PcmDevice {
    let target = model.clamp_g(target);
    if !settings.noise {
        return PcmDevice {
            g_target: target,
            g_programmed: target,
        };
    }
    let sigma = model.sigma_prog(target);
    let iters = settings.max_iters.max(1);
    let mut g = target;
    for _ in 0..iters {
        let eps: f64 = rng.sample(StandardNormal);
        g = model.clamp_g(target + sigma * eps);
        if (g - target).abs() <= settings.tolerance {
            break;
        }
    }
    PcmDevice {
        g_target: target,
        g_programmed: g,
    }
}

/// Programs a signed target onto a differential cell using one-sided mapping.
pub fn program_cell<R: Rng + ?Sized>(
    target: f64,
    model: &NoiseModel,
    settings: &ProgramSettings,
    rng: &mut R,
) -> Result<DifferentialCell> {
    if !target.is_finite() || target.abs() > model.g_max {
        return Err(Error::domain(format!(
            "cell target {target} uS exceeds +/-{} uS",
            model.g_max
        )));
    }
    if !(settings.tolerance > 0.0) {
        return Err(Error::domain("program-and-verify tolerance must be positive"));
    }
    let (pos_t, neg_t) = if target >= 0.0 {
        (target, 0.0)
    } else {
        (0.0, -target)
    };
    let pos = program_device(pos_t, model, settings, rng);
    let neg = program_device(neg_t, model, settings, rng);
    Ok(DifferentialCell { pos, neg })
}

/// Programs both devices of a cell towards the same conductance (noise-plane cell).
pub fn program_balanced_cell<R: Rng + ?Sized>(
    g: f64,
    model: &NoiseModel,
    settings: &ProgramSettings,
    rng: &mut R,
) -> DifferentialCell {
    DifferentialCell {
        pos: program_device(g, model, settings, rng),
        neg: program_device(g, model, settings, rng),
    }
}

/// Power-law drift `G(t) = G(T_REF) (t / T_REF)^-nu(G)`.
pub fn drifted_conductance(g: f64, model: &NoiseModel, t: f64) -> Result<f64> {
    if !(t >= T_REF) {
        return Err(Error::domain(format!(
            "read time {t} s precedes the reference time {T_REF} s"
        )));
    }
    if g <= 0.0 {
        return Ok(0.0);
    }
    let nu = model.drift_exponent(g);
    Ok(model.clamp_g(g * (t / T_REF).powf(-nu)))
}

/// One noisy read of a device at time `t`.
pub fn read_device<R: Rng + ?Sized>(
    dev: &PcmDevice,
    model: &NoiseModel,
    t: f64,
    settings: &ReadSettings,
    rng: &mut R,
) -> Result<f64> {
    let g = if settings.drift {
        dev.drifted(model, t)?
    } else {
        if !(t >= T_REF) {
            return Err(Error::domain(format!(
                "read time {t} s precedes the reference time {T_REF} s"
            )));
        }
        dev.g_programmed
    };
    Ok(noisy_read(g, model.sigma_read(g), settings.noise, model.g_max, rng))
}

#[inline]
pub(crate) fn noisy_read<R: Rng + ?Sized>(
    mean: f64,
    sigma: f64,
    noise: bool,
    g_max: f64,
    rng: &mut R,
) -> f64 {
    if !noise {
        return mean;
    }
    let eta: f64 = rng.sample(StandardNormal);
    (mean + sigma * eta).clamp(0.0, g_max)
}
