//! Deployment of a network onto cores and ensembling-in-time.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossbar::{compensated_t_ratio, Core, CoreConfig, CoreView};
use crate::device::NoiseModel;
use crate::error::{Error, Result};
use crate::lfsr::Lfsr32;
use crate::network::{partition_layer, FixedWeights, NetworkModel, TileMapping, WeightSource};
use crate::reparam::{normal_cdf, Reparam};
use crate::rng::{derive_seed, stream_rng, SimRng, Stream};

/// Numerically stable softmax in f64.
pub fn softmax(l: &[f64]) -> Result<Vec<f64>> {
    if l.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("softmax input contains NaN".into()));
    }
    if l.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = l.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean of member probability vectors, accumulated as deviations from the
/// first member so that identical members reproduce it bit for bit.
pub fn marginal(probs: &[Vec<f64>]) -> Vec<f64> {
    let n = probs.len() as f64;
    let p0 = &probs[0];
    (0..p0.len())
        .map(|k| p0[k] + probs[1..].iter().map(|p| p[k] - p0[k]).sum::<f64>() / n)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: usize,
    pub label: Option<usize>,
    /// One logit vector per ensemble member.
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    pub marginal: Vec<f64>,
    pub predicted: usize,
    #[serde(default)]
    pub saturations: u64,
}

impl PredictionRecord {
    pub fn from_logits(id: usize, label: Option<usize>, logits: Vec<Vec<f64>>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::domain("a prediction needs at least one member"));
        }
        let probs = logits.iter().map(|l| softmax(l)).collect::<Result<Vec<_>>>()?;
        let marginal = marginal(&probs);
        let predicted = argmax(&marginal);
        Ok(PredictionRecord {
            id,
            label,
            logits,
            probs,
            marginal,
            predicted,
            saturations: 0,
        })
    }

    pub fn confidence(&self) -> f64 {
        self.marginal[self.predicted]
    }

    pub fn correct(&self) -> Option<bool> {
        self.label.map(|y| y == self.predicted)
    }

    /// Rebuilds probabilities after transforming every member's logits.
    pub fn map_logits(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let logits = self.logits.iter().map(|l| f(l)).collect();
        let mut r = Self::from_logits(self.id, self.label, logits)?;
        r.saturations = self.saturations;
        Ok(r)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeployedLayer {
    pub mapping: TileMapping,
    pub cores: Vec<Core>,
}

/// A network programmed onto cores: the frozen state of one deployment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Deployment {
    pub core_config: CoreConfig,
    pub model: NoiseModel,
    pub reparam: Reparam,
    pub scales: Vec<f64>,
    pub seed: u64,
    pub layers: Vec<DeployedLayer>,
}

impl Deployment {
    /// Programs every weight layer. Core `c` of weight layer `l` uses its own
    /// programming stream, so the result does not depend on thread count.
    pub fn program(
        net: &NetworkModel,
        config: &CoreConfig,
        model: &NoiseModel,
        reparam: &Reparam,
        scales: Vec<f64>,
        seed: u64,
    ) -> Result<Deployment> {
        config.validate()?;
        model.validate()?;
        let reparam = Reparam {
            kappa: config.kappa,
            ..*reparam
        };
        // surface infeasible sizing before any work
        if !config.frequentist {
            config.np_conductance(model)?;
        }
        let matrices = if config.frequentist {
            net.sign_matrices()?
        } else {
            net.z_matrices(&reparam)?
        };
        if scales.len() != matrices.len() {
            return Err(Error::config(format!(
                "{} quantization scales for {} weight layers",
                scales.len(),
                matrices.len()
            )));
        }
        let pad = if config.frequentist { 1.0 } else { 0.0 };
        let mut layers = Vec::with_capacity(matrices.len());
        for (wl, ((_, spec), m)) in net.weight_layers().zip(&matrices).enumerate() {
            let (rows, cols) = spec.weight_shape().expect("weight layer");
            let mapping = partition_layer(rows, cols, config.wp_rows, config.cols)?;
            let cores = mapping
                .tiles
                .par_iter()
                .map(|t| {
                    let width = t.col_end - t.col_start;
                    let cfg = CoreConfig {
                        cols: width,
                        ..*config
                    };
                    let mut values = vec![pad; cfg.wp_rows * width];
                    for i in t.row_start..t.row_end {
                        let r = i - t.row_start;
                        values[r * width..(r + 1) * width]
                            .copy_from_slice(&m[i * cols + t.col_start..i * cols + t.col_end]);
                    }
                    let mut rng = stream_rng(seed, Stream::Programming, &[wl as u64, t.core as u64]);
                    Core::program(&values, &cfg, model, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            layers.push(DeployedLayer { mapping, cores });
        }
        Ok(Deployment {
            core_config: *config,
            model: *model,
            reparam,
            scales,
            seed,
            layers,
        })
    }

    /// NP duration ratio after drift compensation at time `t`.
    pub fn compensated_ratio(&self, t: f64) -> Result<u32> {
        let a = crate::drift::alpha(t, self.core_config.nu_c)?;
        Ok(compensated_t_ratio(self.core_config.t_ratio, a))
    }

    /// Applies drift compensation to every core; returns the new ratio.
    pub fn set_drift_compensation(&mut self, t: f64) -> Result<u32> {
        let mut r = self.core_config.t_ratio;
        for l in &mut self.layers {
            for c in &mut l.cores {
                r = c.set_drift_compensation(t)?;
            }
        }
        Ok(r)
    }

    pub fn reset_compensation(&mut self) {
        for l in &mut self.layers {
            for c in &mut l.cores {
                c.reset_compensation();
            }
        }
    }

    /// Read-time views of every core at time `t`, with the cores' current
    /// NP ratio or an explicit override.
    pub fn snapshot(&self, t: f64, t_ratio: Option<u32>) -> Result<Snapshot<'_>> {
        let views = self
            .layers
            .iter()
            .map(|l| {
                l.cores
                    .iter()
                    .map(|c| c.view_with_ratio(t, t_ratio.unwrap_or(c.t_ratio)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Snapshot {
            deployment: self,
            views,
        })
    }

    pub fn num_cores(&self) -> usize {
        self.layers.iter().map(|l| l.cores.len()).sum()
    }
}

pub struct Snapshot<'a> {
    pub deployment: &'a Deployment,
    views: Vec<Vec<CoreView<'a>>>,
}

/// Per-(member, input) hardware weight source.
pub struct HardwareSource<'s, 'a> {
    snap: &'s Snapshot<'a>,
    lfsrs: Vec<Vec<Lfsr32>>,
    rng: SimRng,
    pub saturations: u64,
}

impl<'s, 'a> HardwareSource<'s, 'a> {
    pub fn new(snap: &'s Snapshot<'a>, seed: u64, counters: &[u64]) -> Self {
        let lfsrs = snap
            .views
            .iter()
            .enumerate()
            .map(|(wl, layer)| {
                (0..layer.len())
                    .map(|c| {
                        let mut k = counters.to_vec();
                        k.extend([u64::MAX, wl as u64, c as u64]);
                        Lfsr32::from_word(derive_seed(seed, Stream::Inference, &k))
                    })
                    .collect()
            })
            .collect();
        HardwareSource {
            snap,
            lfsrs,
            rng: stream_rng(seed, Stream::Inference, counters),
            saturations: 0,
        }
    }
}

impl WeightSource for HardwareSource<'_, '_> {
    fn mvm(&mut self, wl: usize, x: &[i8], y: &mut [i32]) -> Result<()> {
        let layer = &self.snap.deployment.layers[wl];
        for (t, view) in layer.mapping.tiles.iter().zip(&self.snap.views[wl]) {
            let out = view.mvm(
                &x[t.row_start..t.row_end],
                t.col_end - t.col_start,
                &mut self.lfsrs[wl][t.core],
                &mut self.rng,
            );
            self.saturations += out.saturations as u64;
            for (acc, v) in y[t.col_start..t.col_end].iter_mut().zip(out.y) {
                *acc = acc.saturating_add(v);
            }
        }
        Ok(())
    }
}

/// Ideal software sampler: every weight is drawn as an exact Bernoulli
/// variable with `P(w = +1) = Phi(z)`.
#[derive(Debug, Clone)]
pub struct SoftwareModel {
    /// `[in][out]` per weight layer.
    pub probs: Vec<Vec<f64>>,
    pub shapes: Vec<(usize, usize)>,
}

impl SoftwareModel {
    pub fn new(net: &NetworkModel, reparam: &Reparam) -> Result<Self> {
        Ok(SoftwareModel {
            probs: net
                .z_matrices(reparam)?
                .into_iter()
                .map(|m| m.into_iter().map(normal_cdf).collect())
                .collect(),
            shapes: net.weight_layers().map(|(_, l)| l.weight_shape().unwrap()).collect(),
        })
    }
}

struct SoftwareSource<'a> {
    model: &'a SoftwareModel,
    rng: SimRng,
}

impl WeightSource for SoftwareSource<'_> {
    fn mvm(&mut self, wl: usize, x: &[i8], y: &mut [i32]) -> Result<()> {
        let (_, cols) = self.model.shapes[wl];
        let p = &self.model.probs[wl];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0 {
                continue;
            }
            for (o, &pw) in y.iter_mut().zip(&p[i * cols..(i + 1) * cols]) {
                let w = if self.rng.random::<f64>() < pw { 1 } else { -1 };
                *o = o.saturating_add(w * xi as i32);
            }
        }
        Ok(())
    }
}

struct FixedSource<'a>(&'a FixedWeights);

impl WeightSource for FixedSource<'_> {
    fn mvm(&mut self, wl: usize, x: &[i8], y: &mut [i32]) -> Result<()> {
        self.0.apply(wl, x, y);
        Ok(())
    }
}

/// Where weight samples come from.
pub enum Backend<'s, 'a> {
    Hardware(&'s Snapshot<'a>),
    Software(&'s SoftwareModel),
    /// Deterministic weights, e.g. the most probable sign of every weight.
    Fixed(&'s FixedWeights),
}

#[derive(Debug, Clone, Copy)]
pub struct EnsembleConfig {
    pub n_mc: usize,
    pub seed: u64,
    /// Separates the random streams of different input sets.
    pub stream_tag: u64,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs `n_mc` forward passes per input, re-sampling every weight for every
/// member. Member `i` on input `j` draws from its own counter-derived stream.
pub fn run_ensemble(
    net: &NetworkModel,
    backend: &Backend<'_, '_>,
    scales: &[f64],
    inputs: &[Vec<f64>],
    labels: Option<&[usize]>,
    cfg: &EnsembleConfig,
) -> Result<Vec<PredictionRecord>> {
    if cfg.n_mc == 0 {
        return Err(Error::config("n_mc must be >= 1"));
    }
    if let Some(l) = labels {
        if l.len() != inputs.len() {
            return Err(Error::config("labels and inputs differ in length"));
        }
    }
    let one = |j: usize| -> Result<PredictionRecord> {
        let x = &inputs[j];
        let mut logits = Vec::with_capacity(cfg.n_mc);
        let mut saturations = 0;
        for i in 0..cfg.n_mc {
            let counters = [cfg.stream_tag, i as u64, j as u64];
            let l = match backend {
                Backend::Hardware(snap) => {
                    let mut src = HardwareSource::new(snap, cfg.seed, &counters);
                    let l = net.forward_quantized(x, scales, &mut src)?;
                    saturations += src.saturations;
                    l
                }
                Backend::Software(m) => {
                    let mut src = SoftwareSource {
                        model: m,
                        rng: stream_rng(cfg.seed, Stream::Software, &counters),
                    };
                    net.forward_quantized(x, scales, &mut src)?
                }
                Backend::Fixed(w) => net.forward_quantized(x, scales, &mut FixedSource(w))?,
            };
            logits.push(l);
        }
        let mut r = PredictionRecord::from_logits(j, labels.map(|l| l[j]), logits)?;
        r.saturations = saturations;
        Ok(r)
    };
    with_workers(cfg.workers, || {
        (0..inputs.len())
            .into_par_iter()
            .map(one)
            .collect::<Result<Vec<_>>>()
    })?
}

/// Records as JSON lines.
pub fn records_to_jsonl(records: &[PredictionRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn records_from_jsonl(s: &str) -> Result<Vec<PredictionRecord>> {
    s.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
