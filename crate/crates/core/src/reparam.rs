//! Natural parameter -> probability -> Gaussian reparametrization -> conductance.

use serde::{Deserialize, Serialize};

use crate::device::NoiseModel;
use crate::error::{Error, Result};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: Acklam's rational approximation plus one Halley step.
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let mut x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x -= u / (1.0 + 0.5 * x * u);
    x
}

/// Clipping and scaling constants of the parameter mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reparam {
    pub lambda_clip: f64,
    pub z_clip: f64,
    pub kappa: f64,
}

impl Default for Reparam {
    fn default() -> Self {
        Reparam {
            lambda_clip: 3.3,
            z_clip: 3.0,
            kappa: 8.0,
        }
    }
}

impl Reparam {
    /// `p = 1 / (1 + exp(-2 lambda))` after clipping lambda.
    pub fn lambda_to_p(&self, lambda: f64) -> f64 {
        let l = lambda.clamp(-self.lambda_clip, self.lambda_clip);
        1.0 / (1.0 + (-2.0 * l).exp())
    }

    pub fn p_to_z(&self, p: f64) -> Result<f64> {
        if p.is_nan() {
            return Err(Error::domain("probability is NaN"));
        }
        let p = p.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
        Ok(normal_quantile(p).clamp(-self.z_clip, self.z_clip))
    }

    pub fn lambda_to_z(&self, lambda: f64) -> Result<f64> {
        if lambda.is_nan() {
            return Err(Error::domain("natural parameter is NaN"));
        }
        self.p_to_z(self.lambda_to_p(lambda))
    }

    /// Signed conductance target `kappa * z`.
    pub fn z_to_target(&self, z: f64) -> Result<f64> {
        if !(z.abs() <= self.z_clip) {
            return Err(Error::domain(format!(
                "z = {z} outside +/-{}",
                self.z_clip
            )));
        }
        Ok(self.kappa * z)
    }
}

/// Per-device programming-noise std each noise-plane device must contribute so
/// that the duration-weighted noise seen by the sense amplifier is N(0, 1) in
/// the z domain.
pub fn required_np_sigma(kappa: f64, t_ratio: u32, n_r: u32) -> f64 {
    kappa / (t_ratio as f64 * (2.0 * n_r as f64).sqrt())
}

fn smallest_root(model: &NoiseModel, sigma_req: f64, curve: impl Fn(f64) -> f64) -> Result<f64> {
    if !(sigma_req > 0.0) || !sigma_req.is_finite() {
        return Err(Error::domain(format!("required sigma must be positive, got {sigma_req}")));
    }
    const STEPS: usize = 5000;
    let f = |g: f64| curve(g) - sigma_req;
    let h = model.g_max / STEPS as f64;
    let mut lo = 0.0;
    let mut f_lo = f(lo);
    if f_lo == 0.0 {
        return Ok(0.0);
    }
    let mut sigma_max = curve(0.0);
    for i in 1..=STEPS {
        let hi = if i == STEPS { model.g_max } else { i as f64 * h };
        let f_hi = f(hi);
        sigma_max = sigma_max.max(f_hi + sigma_req);
        if f_hi == 0.0 {
            return Ok(hi);
        }
        if f_lo.signum() != f_hi.signum() {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if f(mid).signum() == f_lo.signum() {
                    a = mid;
                } else {
                    b = mid;
                }
                if b - a < 1e-12 {
                    break;
                }
            }
            return Ok(0.5 * (a + b));
        }
        lo = hi;
        f_lo = f_hi;
    }
    Err(Error::Infeasible {
        sigma_req,
        sigma_max,
        g_max: model.g_max,
    })
}

/// Smallest conductance whose programming noise equals `sigma_req`.
pub fn solve_np_conductance(model: &NoiseModel, sigma_req: f64) -> Result<f64> {
    smallest_root(model, sigma_req, |g| model.sigma_prog(g))
}

/// Smallest conductance whose combined programming and read noise,
/// `sqrt(sigma_p^2 + sigma_r^2)`, equals `sigma_req`.
pub fn solve_np_conductance_with_read(model: &NoiseModel, sigma_req: f64) -> Result<f64> {
    smallest_root(model, sigma_req, |g| {
        model.sigma_prog(g).hypot(model.sigma_read(g))
    })
}
