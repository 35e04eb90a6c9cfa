//! One weight-plane + noise-plane crossbar core.
//!
//! A weight sample is the sign of the duration-weighted charge collected from
//! one weight-plane (WP) cell and `n_r` arbitrated noise-plane (NP) cells:
//!
//! ```text
//! s = (G+_w - G-_w) / kappa + (t_ratio / kappa) * sum_np (G+_n - G-_n)
//! ```
//!
//! NP cells are programmed once with both devices at the same conductance, so
//! their frozen programming error (plus fresh read noise) is the noise source.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::{
    self, drifted_conductance, program_balanced_cell, program_cell, DifferentialCell, NoiseModel,
    ProgramSettings, ReadSettings, T_REF,
};
use crate::error::{Error, Result};
use crate::lfsr::Lfsr32;
use crate::reparam::{
    normal_cdf, required_np_sigma, solve_np_conductance, solve_np_conductance_with_read,
};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSwitches {
    pub wp_programming: bool,
    pub np_programming: bool,
    pub read: bool,
    pub drift: bool,
    /// Apply the drift law to noise-plane devices as well.
    pub np_drift: bool,
}

impl Default for NoiseSwitches {
    fn default() -> Self {
        NoiseSwitches {
            wp_programming: true,
            np_programming: true,
            read: true,
            drift: true,
            np_drift: false,
        }
    }
}

impl NoiseSwitches {
    pub fn off() -> Self {
        NoiseSwitches {
            wp_programming: false,
            np_programming: false,
            read: false,
            drift: false,
            np_drift: false,
        }
    }
}

/// How the NP conductance is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NpSizing {
    /// `sigma_p(G_n)` alone matches the required per-device sigma.
    Programming,
    /// `sqrt(sigma_p^2 + sigma_r^2)` matches it when read noise is enabled.
    ProgrammingAndRead,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreConfig {
    pub wp_rows: usize,
    pub np_rows: usize,
    pub cols: usize,
    pub kappa: f64,
    pub n_r: u32,
    /// Nominal T_NP / T_WP.
    pub t_ratio: u32,
    pub input_bits: u32,
    pub acc_bits: u32,
    pub frequentist: bool,
    pub nu_c: f64,
    pub program: ProgramSettings,
    pub noise: NoiseSwitches,
    pub np_sizing: NpSizing,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig {
            wp_rows: 128,
            np_rows: 16,
            cols: 128,
            kappa: 8.0,
            n_r: 1,
            t_ratio: 8,
            input_bits: 8,
            acc_bits: 16,
            frequentist: false,
            nu_c: 0.06,
            program: ProgramSettings::default(),
            noise: NoiseSwitches::default(),
            np_sizing: NpSizing::ProgrammingAndRead,
        }
    }
}

impl CoreConfig {
    /// Default geometry for a read mode: `n_r = 1` reads with T_NP = 8 T_WP,
    /// `n_r = 2` with T_NP = 4 T_WP.
    pub fn for_mode(n_r: u32) -> Self {
        CoreConfig {
            n_r,
            t_ratio: if n_r >= 2 { 4 } else { 8 },
            ..Self::default()
        }
    }

    pub fn total_rows(&self) -> usize {
        self.wp_rows + self.np_rows
    }

    pub fn input_range(&self) -> (i32, i32) {
        let h = 1i32 << (self.input_bits - 1);
        (-h, h - 1)
    }

    pub fn acc_range(&self) -> (i64, i64) {
        let h = 1i64 << (self.acc_bits - 1);
        (-h, h - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.wp_rows == 0 || self.cols == 0 {
            return Err(Error::config("core must have at least one WP row and one column"));
        }
        if !self.frequentist && (self.np_rows == 0 || !self.np_rows.is_power_of_two()) {
            return Err(Error::config(format!(
                "np_rows must be a nonzero power of two, got {}",
                self.np_rows
            )));
        }
        if !(1..=2).contains(&self.n_r) || (self.n_r as usize) > self.np_rows.max(1) {
            return Err(Error::config(format!("n_r must be 1 or 2, got {}", self.n_r)));
        }
        if self.t_ratio < 1 {
            return Err(Error::config("t_ratio must be >= 1"));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::config("kappa must be positive"));
        }
        if !(2..=16).contains(&self.input_bits) || !(2..=32).contains(&self.acc_bits) {
            return Err(Error::config("unsupported input/accumulator width"));
        }
        Ok(())
    }

    /// Conductance of each NP device, or an infeasibility error.
    pub fn np_conductance(&self, model: &NoiseModel) -> Result<f64> {
        let sigma = required_np_sigma(self.kappa, self.t_ratio, self.n_r);
        match self.np_sizing {
            NpSizing::ProgrammingAndRead if self.noise.read => {
                solve_np_conductance_with_read(model, sigma)
            }
            _ => solve_np_conductance(model, sigma),
        }
    }

    fn np_program_settings(&self) -> ProgramSettings {
        ProgramSettings {
            noise: self.noise.np_programming,
            ..ProgramSettings::single_shot()
        }
    }

    fn wp_program_settings(&self) -> ProgramSettings {
        ProgramSettings {
            noise: self.noise.wp_programming && self.program.noise,
            ..self.program
        }
    }
}

/// A programmed core.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Core {
    pub config: CoreConfig,
    pub model: NoiseModel,
    /// Row-major `wp_rows x cols`.
    pub wp: Vec<DifferentialCell>,
    /// Row-major `np_rows x cols`; empty in frequentist mode.
    pub np: Vec<DifferentialCell>,
    pub g_np: f64,
    /// Active T_NP / T_WP, changed only by drift compensation.
    pub t_ratio: u32,
}

impl Core {
    /// Programs a core. `values` is `wp_rows x cols` row-major: z values, or
    /// +/-1 weights in frequentist mode.
    pub fn program<R: Rng + ?Sized>(
        values: &[f64],
        config: &CoreConfig,
        model: &NoiseModel,
        rng: &mut R,
    ) -> Result<Core> {
        config.validate()?;
        if values.len() != config.wp_rows * config.cols {
            return Err(Error::domain(format!(
                "expected {}x{} values, got {}",
                config.wp_rows,
                config.cols,
                values.len()
            )));
        }
        let wp_settings = config.wp_program_settings();
        let mut wp = Vec::with_capacity(values.len());
        for &v in values {
            let target = if config.frequentist {
                if v != 1.0 && v != -1.0 {
                    return Err(Error::domain(format!("frequentist weight {v} is not +/-1")));
                }
                v * model.g_max
            } else {
                if !(v.abs() <= 3.0 * config.kappa.max(1.0)) || v.abs() * config.kappa > model.g_max
                {
                    return Err(Error::domain(format!(
                        "z = {v} maps outside the [0, {}] uS range",
                        model.g_max
                    )));
                }
                config.kappa * v
            };
            wp.push(program_cell(target, model, &wp_settings, rng)?);
        }

        let (np, g_np) = if config.frequentist {
            (Vec::new(), 0.0)
        } else {
            let g_np = config.np_conductance(model)?;
            let settings = config.np_program_settings();
            let np = (0..config.np_rows * config.cols)
                .map(|_| program_balanced_cell(g_np, model, &settings, rng))
                .collect();
            (np, g_np)
        };

        Ok(Core {
            config: *config,
            model: *model,
            wp,
            np,
            g_np,
            t_ratio: config.t_ratio,
        })
    }

    /// Sets the NP read duration for time `t` from the single drift-correction
    /// coefficient `alpha_t = (t / T_REF)^nu_c`. Returns the new ratio.
    pub fn set_drift_compensation(&mut self, t: f64) -> Result<u32> {
        let a = crate::drift::alpha(t, self.config.nu_c)?;
        self.t_ratio = compensated_t_ratio(self.config.t_ratio, a);
        Ok(self.t_ratio)
    }

    pub fn reset_compensation(&mut self) {
        self.t_ratio = self.config.t_ratio;
    }

    /// Precomputes mean conductances and read-noise sigmas at time `t`.
    pub fn view(&self, t: f64) -> Result<CoreView<'_>> {
        self.view_with_ratio(t, self.t_ratio)
    }

    /// As [`Core::view`] with an explicit NP duration ratio.
    pub fn view_with_ratio(&self, t: f64, t_ratio: u32) -> Result<CoreView<'_>> {
        if t_ratio < 1 {
            return Err(Error::config("t_ratio must be >= 1"));
        }
        if !(t >= T_REF) {
            return Err(Error::domain(format!(
                "read time {t} s precedes the reference time {T_REF} s"
            )));
        }
        let sw = self.config.noise;
        let model = &self.model;
        let drift = |g: f64, on: bool| -> Result<f64> {
            if on {
                drifted_conductance(g, model, t)
            } else {
                Ok(g)
            }
        };
        let mut wp = Vec::with_capacity(self.wp.len());
        for c in &self.wp {
            wp.push(DeviceReadPair::new(
                drift(c.pos.g_programmed, sw.drift)?,
                drift(c.neg.g_programmed, sw.drift)?,
                model,
            ));
        }
        let mut np = Vec::with_capacity(self.np.len());
        for c in &self.np {
            np.push(DeviceReadPair::new(
                drift(c.pos.g_programmed, sw.drift && sw.np_drift)?,
                drift(c.neg.g_programmed, sw.drift && sw.np_drift)?,
                model,
            ));
        }
        Ok(CoreView {
            core: self,
            wp,
            np,
            wp_weight: if self.config.frequentist {
                1.0
            } else {
                1.0 / self.config.kappa
            },
            np_weight: t_ratio as f64 / self.config.kappa,
        })
    }

    /// One row of sampled signs at time `t` (slow path; builds a view).
    pub fn sample_sign_row<R: Rng + ?Sized>(
        &self,
        wp_row: usize,
        t: f64,
        lfsr: &mut Lfsr32,
        rng: &mut R,
    ) -> Result<Vec<i8>> {
        let view = self.view(t)?;
        let mut out = vec![0i8; self.config.cols];
        view.sample_row(wp_row, lfsr, rng, &mut out);
        Ok(out)
    }

    pub fn read_settings(&self) -> ReadSettings {
        ReadSettings {
            noise: self.config.noise.read,
            drift: self.config.noise.drift,
        }
    }
}

/// `max(1, round(nominal / alpha))`.
pub fn compensated_t_ratio(nominal: u32, alpha: f64) -> u32 {
    ((nominal as f64 / alpha).round() as u32).max(1)
}

#[derive(Debug, Clone, Copy)]
struct DeviceReadPair {
    pos: f64,
    pos_sd: f64,
    neg: f64,
    neg_sd: f64,
}

impl DeviceReadPair {
    fn new(pos: f64, neg: f64, model: &NoiseModel) -> Self {
        DeviceReadPair {
            pos,
            pos_sd: model.sigma_read(pos),
            neg,
            neg_sd: model.sigma_read(neg),
        }
    }

    #[inline]
    fn read_difference<R: Rng + ?Sized>(&self, noise: bool, g_max: f64, rng: &mut R) -> f64 {
        device::noisy_read(self.pos, self.pos_sd, noise, g_max, rng)
            - device::noisy_read(self.neg, self.neg_sd, noise, g_max, rng)
    }
}

/// Read-time snapshot of a core at a fixed time.
pub struct CoreView<'a> {
    core: &'a Core,
    wp: Vec<DeviceReadPair>,
    np: Vec<DeviceReadPair>,
    wp_weight: f64,
    np_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MvmOutput {
    pub y: Vec<i32>,
    pub saturations: u32,
}

impl CoreView<'_> {
    pub fn core(&self) -> &Core {
        self.core
    }

    fn select_np_rows(&self, lfsr: &mut Lfsr32) -> (usize, Option<usize>) {
        let rows = self.core.config.np_rows;
        if self.core.config.n_r >= 2 {
            let (a, b) = lfsr.next_row_pair(rows);
            (a, Some(b))
        } else {
            (lfsr.next_row(rows), None)
        }
    }

    /// Samples the signs of the first `out.len()` columns of one WP row.
    pub fn sample_row<R: Rng + ?Sized>(
        &self,
        wp_row: usize,
        lfsr: &mut Lfsr32,
        rng: &mut R,
        out: &mut [i8],
    ) {
        let np_rows = if self.core.config.frequentist {
            None
        } else {
            Some(self.select_np_rows(lfsr))
        };
        self.sample_row_with(wp_row, np_rows, rng, out);
    }

    fn sample_row_with<R: Rng + ?Sized>(
        &self,
        wp_row: usize,
        np_rows: Option<(usize, Option<usize>)>,
        rng: &mut R,
        out: &mut [i8],
    ) {
        let cfg = &self.core.config;
        let noise = cfg.noise.read;
        let g_max = self.core.model.g_max;
        let wp_base = wp_row * cfg.cols;
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = self.wp_weight * self.wp[wp_base + i].read_difference(noise, g_max, rng);
            if let Some((a, b)) = np_rows {
                let mut n = self.np[a * cfg.cols + i].read_difference(noise, g_max, rng);
                if let Some(b) = b {
                    n += self.np[b * cfg.cols + i].read_difference(noise, g_max, rng);
                }
                s += self.np_weight * n;
            }
            *o = if s >= 0.0 { 1 } else { -1 };
        }
    }

    /// Row-by-row signed accumulation of `x` over the first `n_out` columns.
    ///
    /// Rows beyond `x.len()` are padding and receive zero input. The
    /// arbitration register still advances for every row.
    pub fn mvm<R: Rng + ?Sized>(
        &self,
        x: &[i8],
        n_out: usize,
        lfsr: &mut Lfsr32,
        rng: &mut R,
    ) -> MvmOutput {
        let cfg = &self.core.config;
        let n_out = n_out.min(cfg.cols);
        let (lo, hi) = cfg.acc_range();
        let mut acc = vec![0i64; n_out];
        let mut saturations = 0u32;
        let mut signs = vec![0i8; n_out];
        for j in 0..cfg.wp_rows {
            let np_rows = if cfg.frequentist {
                None
            } else {
                Some(self.select_np_rows(lfsr))
            };
            let xj = x.get(j).copied().unwrap_or(0) as i64;
            if xj == 0 {
                continue;
            }
            self.sample_row_with(j, np_rows, rng, &mut signs);
            for (a, &w) in acc.iter_mut().zip(&signs) {
                let v = *a + w as i64 * xj;
                *a = if v > hi {
                    saturations += 1;
                    hi
                } else if v < lo {
                    saturations += 1;
                    lo
                } else {
                    v
                };
            }
        }
        MvmOutput {
            y: acc.into_iter().map(|v| v as i32).collect(),
            saturations,
        }
    }
}

/// Result of an empirical sampling-law measurement.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProbeResult {
    pub z: f64,
    pub n: usize,
    pub plus: usize,
    pub p_hat: f64,
    /// `Phi(z)`.
    pub expected: f64,
    /// Mean of `Phi(z_programmed)` over the sampled cells.
    pub expected_programmed: f64,
    /// Half-width of the 99.7% (3 sigma) binomial interval around `expected`.
    pub ci_half_width: f64,
    pub t_ratio: u32,
}

impl ProbeResult {
    pub fn within_ci(&self) -> bool {
        (self.p_hat - self.expected).abs() <= self.ci_half_width
    }
}

/// Measures `P(w = +1)` for a cell programmed to `z`.
///
/// Every sample comes from a freshly programmed single-row core, so samples
/// are independent over WP and NP programming, as the sampling law requires.
/// Each deployment contributes one sample per column.
pub fn sampling_probe(
    z: f64,
    config: &CoreConfig,
    model: &NoiseModel,
    n_samples: usize,
    t: f64,
    compensate: bool,
    seed: u64,
) -> Result<ProbeResult> {
    let cfg = CoreConfig {
        wp_rows: 1,
        ..*config
    };
    let values = vec![z; cfg.cols];
    let mut plus = 0usize;
    let mut n = 0usize;
    let mut phi_prog = 0.0;
    let mut t_ratio = cfg.t_ratio;
    let mut batch = 0u64;
    let mut signs = vec![0i8; cfg.cols];
    while n < n_samples {
        let mut rng = stream_rng(seed, Stream::SampleCheck, &[batch]);
        let mut core = Core::program(&values, &cfg, model, &mut rng)?;
        if compensate {
            t_ratio = core.set_drift_compensation(t)?;
        }
        let view = core.view(t)?;
        let mut lfsr = Lfsr32::from_word(rng.random());
        view.sample_row(0, &mut lfsr, &mut rng, &mut signs);
        let take = (n_samples - n).min(cfg.cols);
        for (i, &s) in signs.iter().take(take).enumerate() {
            if s > 0 {
                plus += 1;
            }
            let zp = core.wp[i].programmed_difference() / cfg.kappa;
            phi_prog += normal_cdf(zp);
        }
        n += take;
        batch += 1;
    }
    let expected = normal_cdf(z);
    Ok(ProbeResult {
        z,
        n,
        plus,
        p_hat: plus as f64 / n as f64,
        expected,
        expected_programmed: phi_prog / n as f64,
        ci_half_width: 3.0 * (expected * (1.0 - expected) / n as f64).sqrt(),
        t_ratio,
    })
}
