//! Run configuration: defaults, then a JSON file, then command-line flags.

use std::path::Path;

use imcbnn::crossbar::{CoreConfig, NoiseSwitches};
use imcbnn::device::{NoiseModel, ProgramSettings};
use imcbnn::drift::DEFAULT_TIMES;
use imcbnn::trainer::TrainConfig;
use imcbnn::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub n_mc: usize,
    pub n_r: u32,
    pub no_noise: bool,
    pub frequentist: bool,
    /// Read time in seconds after programming.
    pub time: f64,
    /// Shorten the NP read pulse to compensate drift at `time`.
    pub compensate: bool,
    pub n_bins: usize,
    pub n_calib: usize,
    pub n_test: usize,
    pub split_seed: u64,
    pub ood_seed: u64,
    pub noise_model: NoiseModel,
    pub train: TrainConfig,
    pub times: Vec<f64>,
    pub reuse_fit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            n_mc: 10,
            n_r: 1,
            no_noise: false,
            frequentist: false,
            time: 20.0,
            compensate: false,
            n_bins: 10,
            n_calib: 400,
            n_test: 400,
            split_seed: 0,
            ood_seed: 1,
            noise_model: NoiseModel::default(),
            train: TrainConfig::default(),
            times: DEFAULT_TIMES.to_vec(),
            reuse_fit: false,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let c: RunConfig = serde_json::from_str(&s)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.n_r, 1 | 2) {
            return Err(Error::Config(format!("--nr must be 1 or 2, got {}", self.n_r)));
        }
        if self.n_mc == 0 {
            return Err(Error::Config("--n-mc must be >= 1".into()));
        }
        if !(self.time.is_finite() && self.time > 0.0) {
            return Err(Error::Config(format!("bad read time {}", self.time)));
        }
        self.noise_model.validate()
    }

    pub fn core_config(&self) -> CoreConfig {
        let mut c = CoreConfig::for_mode(self.n_r);
        c.frequentist = self.frequentist;
        if self.no_noise {
            c.noise = NoiseSwitches::off();
            c.program = ProgramSettings::noiseless();
        }
        c
    }
}
