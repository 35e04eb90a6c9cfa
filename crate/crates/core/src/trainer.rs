//! Mean-field variational training of binary MLPs.
//!
//! Each weight is `Bern(p)` over `{-1, +1}` with `p = sigmoid(2 lambda)`. A
//! sample is drawn as `sign(lambda + delta)` with `delta = ln(u / (1 - u)) / 2`,
//! which has exactly that law; gradients flow through the relaxation
//! `tanh((lambda + delta) / tau)`. The objective is the minibatch negative
//! log-likelihood plus the KL divergence to a uniform `Bern(1/2)` prior,
//! divided by the training-set size.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::Dataset;
use crate::device::NoiseModel;
use crate::error::{Error, Result};
use crate::network::{LayerOp, LayerSpec, NetworkModel};
use crate::reparam::{normal_cdf, Reparam};
use crate::rng::{stream_rng, SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Hard-sign forward, relaxed backward.
    StraightThrough,
    /// Relaxed forward and backward.
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub temperature: f64,
    /// Multiplies the KL term; below 1 tempers the posterior, which small
    /// training sets need to avoid collapsing onto the prior.
    pub kl_weight: f64,
    pub estimator: Estimator,
    /// Perturb z by programming-noise-shaped Gaussian noise during training.
    pub hardware_aware: bool,
    pub lambda_init_std: f64,
    pub lambda_clip: f64,
    pub bn_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: vec![64, 128, 10],
            epochs: 100,
            batch_size: 64,
            lr: 0.01,
            temperature: 1.0,
            kl_weight: 0.03,
            estimator: Estimator::StraightThrough,
            hardware_aware: false,
            lambda_init_std: 0.3,
            lambda_clip: 3.3,
            bn_eps: 1e-5,
            seed: 0,
        }
    }
}

/// Parses `"64-128-10"`.
pub fn parse_arch(s: &str) -> Result<Vec<usize>> {
    let v = s
        .split('-')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::config(format!("bad layer width {p:?} in {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if v.len() < 2 {
        return Err(Error::config("architecture needs at least input and output widths"));
    }
    Ok(v)
}

/// `KL(Bern(p) || Bern(1/2)) = p ln 2p + (1 - p) ln 2(1 - p)`.
pub fn kl_bernoulli(p: f64) -> f64 {
    let t = |q: f64| if q > 0.0 { q * (2.0 * q).ln() } else { 0.0 };
    t(p) + t(1.0 - p)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub arch: Vec<usize>,
    /// `[in][out]` per layer.
    pub lambda: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub bn_mean: Vec<Vec<f64>>,
    pub bn_var: Vec<Vec<f64>>,
    pub bn_eps: f64,
}

/// Logistic noise for one weight sample of every layer.
#[derive(Debug, Clone)]
pub struct Noise {
    pub delta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Grads {
    pub lambda: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

struct Cache {
    input: Vec<f64>,
    w_soft: Vec<f64>,
    w: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    pre_act: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub nll: f64,
    pub correct: usize,
    pub grads: Grads,
    /// Per-layer batch mean and biased variance before BN.
    pub stats: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Mlp {
    pub fn init(cfg: &TrainConfig, rng: &mut SimRng) -> Result<Self> {
        if cfg.arch.len() < 2 || cfg.arch.contains(&0) {
            return Err(Error::config("bad architecture"));
        }
        let normal = rand_distr::Normal::new(0.0, cfg.lambda_init_std.max(0.0))
            .map_err(|e| Error::config(e.to_string()))?;
        let mut lambda = Vec::new();
        let (mut gamma, mut beta, mut mean, mut var) = (vec![], vec![], vec![], vec![]);
        for w in cfg.arch.windows(2) {
            lambda.push(
                (0..w[0] * w[1])
                    .map(|_| {
                        let v: f64 = rand_distr::Distribution::sample(&normal, rng);
                        v.clamp(-cfg.lambda_clip, cfg.lambda_clip)
                    })
                    .collect(),
            );
            gamma.push(vec![1.0; w[1]]);
            beta.push(vec![0.0; w[1]]);
            mean.push(vec![0.0; w[1]]);
            var.push(vec![1.0; w[1]]);
        }
        Ok(Mlp {
            arch: cfg.arch.clone(),
            lambda,
            gamma,
            beta,
            bn_mean: mean,
            bn_var: var,
            bn_eps: cfg.bn_eps,
        })
    }

    fn layers(&self) -> usize {
        self.arch.len() - 1
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Noise {
        Noise {
            delta: self
                .lambda
                .iter()
                .map(|l| {
                    l.iter()
                        .map(|_| {
                            let u: f64 = rng.random_range(f64::EPSILON..1.0);
                            0.5 * (u / (1.0 - u)).ln()
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Total KL to the uniform prior and its gradient `4 lambda p (1 - p)`.
    pub fn kl(&self) -> (f64, Vec<Vec<f64>>) {
        let mut total = 0.0;
        let grads = self
            .lambda
            .iter()
            .map(|l| {
                l.iter()
                    .map(|&x| {
                        let p = sigmoid(2.0 * x);
                        total += kl_bernoulli(p);
                        4.0 * x * p * (1.0 - p)
                    })
                    .collect()
            })
            .collect();
        (total, grads)
    }

    /// Minibatch negative log-likelihood (mean) and its gradient, using
    /// batch statistics in every BN layer. `lambda` overrides the model's
    /// parameters in the forward pass (hardware-aware perturbation); the
    /// gradient is taken as if it were the model's own.
    pub fn loss_and_grad(
        &self,
        lambda: &[Vec<f64>],
        x: &[&[f64]],
        y: &[usize],
        noise: &Noise,
        temperature: f64,
        estimator: Estimator,
    ) -> Result<BatchResult> {
        let b = x.len();
        if b < 2 {
            return Err(Error::config("batch norm needs at least 2 samples per batch"));
        }
        let bf = b as f64;
        let n_layers = self.layers();
        let mut act: Vec<f64> = x.iter().flat_map(|r| r.iter().copied()).collect();
        let mut caches = Vec::with_capacity(n_layers);
        let mut stats = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (n_in, n_out) = (self.arch[l], self.arch[l + 1]);
            let w_soft: Vec<f64> = lambda[l]
                .iter()
                .zip(&noise.delta[l])
                .map(|(&lam, &d)| ((lam + d) / temperature).tanh())
                .collect();
            let w: Vec<f64> = match estimator {
                Estimator::Relaxed => w_soft.clone(),
                Estimator::StraightThrough => lambda[l]
                    .iter()
                    .zip(&noise.delta[l])
                    .map(|(&lam, &d)| if lam + d >= 0.0 { 1.0 } else { -1.0 })
                    .collect(),
            };
            let mut h = vec![0.0; b * n_out];
            for s in 0..b {
                let a = &act[s * n_in..(s + 1) * n_in];
                let hs = &mut h[s * n_out..(s + 1) * n_out];
                for (i, &ai) in a.iter().enumerate() {
                    if ai == 0.0 {
                        continue;
                    }
                    for (o, &wv) in hs.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                        *o += ai * wv;
                    }
                }
            }
            let mut mean = vec![0.0; n_out];
            let mut var = vec![0.0; n_out];
            for s in 0..b {
                for j in 0..n_out {
                    mean[j] += h[s * n_out + j] / bf;
                }
            }
            for s in 0..b {
                for j in 0..n_out {
                    let d = h[s * n_out + j] - mean[j];
                    var[j] += d * d / bf;
                }
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.bn_eps).sqrt()).collect();
            let mut xhat = vec![0.0; b * n_out];
            let mut pre = vec![0.0; b * n_out];
            for s in 0..b {
                for j in 0..n_out {
                    let k = s * n_out + j;
                    xhat[k] = (h[k] - mean[j]) * inv_std[j];
                    pre[k] = self.gamma[l][j] * xhat[k] + self.beta[l][j];
                }
            }
            let next = if l + 1 < n_layers {
                pre.iter().map(|&v| v.max(0.0)).collect()
            } else {
                pre.clone()
            };
            stats.push((mean, var));
            caches.push(Cache {
                input: std::mem::replace(&mut act, next),
                w_soft,
                w,
                xhat,
                inv_std,
                pre_act: pre,
            });
        }

        let k = *self.arch.last().unwrap();
        let mut nll = 0.0;
        let mut correct = 0;
        let mut dact = vec![0.0; b * k];
        for s in 0..b {
            let logits = &act[s * k..(s + 1) * k];
            let p = crate::inference::softmax(logits)?;
            if y[s] >= k {
                return Err(Error::config(format!("label {} outside {k} classes", y[s])));
            }
            nll -= p[y[s]].max(f64::MIN_POSITIVE).ln() / bf;
            if crate::inference::argmax(logits) == y[s] {
                correct += 1;
            }
            for c in 0..k {
                dact[s * k + c] = (p[c] - if c == y[s] { 1.0 } else { 0.0 }) / bf;
            }
        }

        let mut g_lambda = vec![Vec::new(); n_layers];
        let mut g_gamma = vec![Vec::new(); n_layers];
        let mut g_beta = vec![Vec::new(); n_layers];
        for l in (0..n_layers).rev() {
            let c = &caches[l];
            let (n_in, n_out) = (self.arch[l], self.arch[l + 1]);
            let mut dy = dact;
            if l + 1 < n_layers {
                for (d, &p) in dy.iter_mut().zip(&c.pre_act) {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let mut dg = vec![0.0; n_out];
            let mut db = vec![0.0; n_out];
            let mut sum_dxh = vec![0.0; n_out];
            let mut sum_dxh_xh = vec![0.0; n_out];
            for s in 0..b {
                for j in 0..n_out {
                    let i = s * n_out + j;
                    dg[j] += dy[i] * c.xhat[i];
                    db[j] += dy[i];
                    let dxh = dy[i] * self.gamma[l][j];
                    sum_dxh[j] += dxh;
                    sum_dxh_xh[j] += dxh * c.xhat[i];
                }
            }
            let mut dh = vec![0.0; b * n_out];
            for s in 0..b {
                for j in 0..n_out {
                    let i = s * n_out + j;
                    let dxh = dy[i] * self.gamma[l][j];
                    dh[i] = c.inv_std[j] / bf * (bf * dxh - sum_dxh[j] - c.xhat[i] * sum_dxh_xh[j]);
                }
            }
            let mut dw = vec![0.0; n_in * n_out];
            let mut dprev = vec![0.0; b * n_in];
            for s in 0..b {
                let a = &c.input[s * n_in..(s + 1) * n_in];
                let dhs = &dh[s * n_out..(s + 1) * n_out];
                for i in 0..n_in {
                    let row_w = &c.w[i * n_out..(i + 1) * n_out];
                    let row_dw = &mut dw[i * n_out..(i + 1) * n_out];
                    let mut acc = 0.0;
                    for j in 0..n_out {
                        row_dw[j] += a[i] * dhs[j];
                        acc += dhs[j] * row_w[j];
                    }
                    dprev[s * n_in + i] = acc;
                }
            }
            g_lambda[l] = dw
                .iter()
                .zip(&c.w_soft)
                .map(|(&g, &ws)| g * (1.0 - ws * ws) / temperature)
                .collect();
            g_gamma[l] = dg;
            g_beta[l] = db;
            dact = dprev;
        }
        Ok(BatchResult {
            nll,
            correct,
            grads: Grads {
                lambda: g_lambda,
                gamma: g_gamma,
                beta: g_beta,
            },
            stats,
        })
    }

    /// Exports the manifest: linear, batch norm, and ReLU between layers.
    pub fn to_network(&self, metadata: serde_json::Value) -> NetworkModel {
        let n = self.layers();
        let mut layers = Vec::new();
        for l in 0..n {
            let (n_in, n_out) = (self.arch[l], self.arch[l + 1]);
            let mut lam = vec![0.0; n_in * n_out];
            for i in 0..n_in {
                for o in 0..n_out {
                    lam[o * n_in + i] = self.lambda[l][i * n_out + o];
                }
            }
            layers.push(LayerSpec {
                name: format!("fc{}", l + 1),
                op: LayerOp::Linear {
                    in_features: n_in,
                    out_features: n_out,
                    lambda: lam,
                },
            });
            layers.push(LayerSpec {
                name: format!("bn{}", l + 1),
                op: LayerOp::BatchNorm {
                    gamma: self.gamma[l].clone(),
                    beta: self.beta[l].clone(),
                    mean: self.bn_mean[l].clone(),
                    var: self.bn_var[l].clone(),
                    eps: self.bn_eps,
                },
            });
            if l + 1 < n {
                layers.push(LayerSpec {
                    name: format!("relu{}", l + 1),
                    op: LayerOp::Relu,
                });
            }
        }
        NetworkModel {
            input_shape: vec![self.arch[0]],
            layers,
            metadata,
        }
    }
}

/// Hand-written Adam over a list of parameter vectors.
struct Adam {
    lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[&Vec<f64>]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for i in 0..p.len() {
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = Self::B1 * *m + (1.0 - Self::B1) * g[i];
                *v = Self::B2 * *v + (1.0 - Self::B2) * g[i] * g[i];
                p[i] -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub nll: f64,
    pub kl: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub mlp: Mlp,
    pub network: NetworkModel,
    pub log: Vec<EpochLog>,
}

/// Perturbs `z` by `sigma_p(kappa |z|) / kappa` Gaussian noise and maps back to
/// natural parameters.
fn hardware_perturbed<R: Rng + ?Sized>(
    lambda: &[Vec<f64>],
    reparam: &Reparam,
    model: &NoiseModel,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    lambda
        .iter()
        .map(|l| {
            l.iter()
                .map(|&x| {
                    let z = reparam.lambda_to_z(x).unwrap_or(0.0);
                    let s = model.sigma_prog(model.clamp_g(reparam.kappa * z.abs())) / reparam.kappa;
                    let e: f64 = rng.sample(rand_distr::StandardNormal);
                    let zp = (z + s * e).clamp(-reparam.z_clip, reparam.z_clip);
                    let p = normal_cdf(zp);
                    (0.5 * (p / (1.0 - p)).ln()).clamp(-reparam.lambda_clip, reparam.lambda_clip)
                })
                .collect()
        })
        .collect()
}

pub fn train(data: &Dataset, cfg: &TrainConfig, model: &NoiseModel) -> Result<TrainResult> {
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if data.n_features() != cfg.arch[0] {
        return Err(Error::config(format!(
            "architecture expects {} inputs, data has {}",
            cfg.arch[0],
            data.n_features()
        )));
    }
    if *cfg.arch.last().unwrap() < data.n_classes {
        return Err(Error::config("output width is smaller than the class count"));
    }
    if !(cfg.temperature > 0.0) || cfg.batch_size < 2 {
        return Err(Error::config("temperature must be positive and batch_size >= 2"));
    }
    let reparam = Reparam::default();
    let mut rng = stream_rng(cfg.seed, Stream::Training, &[0]);
    let mut mlp = Mlp::init(cfg, &mut rng)?;
    let n = data.len();
    let sizes: Vec<usize> = mlp
        .lambda
        .iter()
        .map(Vec::len)
        .chain(mlp.gamma.iter().map(Vec::len))
        .chain(mlp.beta.iter().map(Vec::len))
        .collect();
    let mut adam = Adam::new(cfg.lr, &sizes);
    let mut log = Vec::with_capacity(cfg.epochs);
    let n_layers = mlp.layers();
    for epoch in 0..cfg.epochs {
        let mut erng = stream_rng(cfg.seed, Stream::Training, &[1, epoch as u64]);
        let mut idx: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut erng);
        let last = epoch + 1 == cfg.epochs;
        let mut stat_sum: Vec<(Vec<f64>, Vec<f64>)> = mlp
            .arch[1..]
            .iter()
            .map(|&w| (vec![0.0; w], vec![0.0; w]))
            .collect();
        let mut n_batches = 0usize;
        let (mut nll_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (bi, chunk) in idx.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let mut brng = stream_rng(cfg.seed, Stream::Training, &[2, epoch as u64, bi as u64]);
            let noise = mlp.sample_noise(&mut brng);
            let lam = if cfg.hardware_aware {
                hardware_perturbed(&mlp.lambda, &reparam, model, &mut brng)
            } else {
                mlp.lambda.clone()
            };
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| data.features[i].as_slice()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let r = mlp.loss_and_grad(&lam, &xs, &ys, &noise, cfg.temperature, cfg.estimator)?;
            if !r.nll.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss diverged at epoch {epoch}, batch {bi}"
                )));
            }
            nll_sum += r.nll * chunk.len() as f64;
            correct += r.correct;
            seen += chunk.len();
            if last {
                for (acc, (m, v)) in stat_sum.iter_mut().zip(&r.stats) {
                    acc.0.iter_mut().zip(m).for_each(|(a, b)| *a += b);
                    acc.1.iter_mut().zip(v).for_each(|(a, b)| *a += b);
                }
                n_batches += 1;
            }
            let (_, kl_grad) = mlp.kl();
            let scale = cfg.kl_weight / n as f64;
            let g_lambda: Vec<Vec<f64>> = r
                .grads
                .lambda
                .iter()
                .zip(&kl_grad)
                .map(|(g, k)| g.iter().zip(k).map(|(a, b)| a + scale * b).collect())
                .collect();
            {
                let Mlp {
                    lambda, gamma, beta, ..
                } = &mut mlp;
                let mut params: Vec<&mut Vec<f64>> = lambda
                    .iter_mut()
                    .chain(gamma.iter_mut())
                    .chain(beta.iter_mut())
                    .collect();
                let grads: Vec<&Vec<f64>> = g_lambda
                    .iter()
                    .chain(&r.grads.gamma)
                    .chain(&r.grads.beta)
                    .collect();
                adam.step(&mut params, &grads);
            }
            for l in &mut mlp.lambda {
                for v in l.iter_mut() {
                    *v = v.clamp(-cfg.lambda_clip, cfg.lambda_clip);
                }
            }
        }
        if last && n_batches > 0 {
            for l in 0..n_layers {
                let nb = n_batches as f64;
                mlp.bn_mean[l] = stat_sum[l].0.iter().map(|v| v / nb).collect();
                mlp.bn_var[l] = stat_sum[l].1.iter().map(|v| v / nb).collect();
            }
        }
        let (kl, _) = mlp.kl();
        if !kl.is_finite() || kl < 0.0 {
            return Err(Error::Numeric(format!("KL term invalid at epoch {epoch}: {kl}")));
        }
        log.push(EpochLog {
            epoch,
            nll: nll_sum / seen.max(1) as f64,
            kl,
            train_accuracy: correct as f64 / seen.max(1) as f64,
        });
    }
    let network = mlp.to_network(json!({
        "producer": "imcbnn-trainer",
        "arch": cfg.arch,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "hardware_aware": cfg.hardware_aware,
        "kl_weight": cfg.kl_weight,
    }));
    network.validate()?;
    Ok(TrainResult { mlp, network, log })
}

/// Ideal-sampling ensemble accuracy in floating point with population BN.
pub fn ensemble_accuracy(net: &NetworkModel, data: &Dataset, n_mc: usize, seed: u64) -> Result<f64> {
    let reparam = Reparam::default();
    let probs: Vec<Vec<f64>> = net
        .z_matrices(&reparam)?
        .into_iter()
        .map(|m| m.into_iter().map(normal_cdf).collect())
        .collect();
    let mut correct = 0;
    for (j, (x, &y)) in data.features.iter().zip(&data.labels).enumerate() {
        let mut avg: Option<Vec<f64>> = None;
        for i in 0..n_mc {
            let mut rng = stream_rng(seed, Stream::Software, &[u64::MAX, i as u64, j as u64]);
            let w: Vec<Vec<f64>> = probs
                .iter()
                .map(|m| m.iter().map(|&p| if rng.random::<f64>() < p { 1.0 } else { -1.0 }).collect())
                .collect();
            let l = net.forward_float(x, &w, &mut [])?;
            let p = crate::inference::softmax(&l)?;
            match &mut avg {
                Some(a) => a.iter_mut().zip(&p).for_each(|(s, v)| *s += v),
                None => avg = Some(p),
            }
        }
        if crate::inference::argmax(&avg.unwrap()) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
