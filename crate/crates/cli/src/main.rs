//! Command-line front end: training, programming, inference, calibration,
//! drift sweeps, hardware cost estimates and sampling checks.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use imcbnn::calibration::calibrate_network;
use imcbnn::crossbar::sampling_probe;
use imcbnn::dataset::{scramble_pixels, split, Dataset, Split};
use imcbnn::drift::{rows_to_csv, sweep, SweepConfig};
use imcbnn::hw::{compare, evaluate, ComponentBudget, NodeScaling};
use imcbnn::inference::{
    run_ensemble, Backend, Deployment, EnsembleConfig, PredictionRecord, SoftwareModel,
};
use imcbnn::metrics::{report, MetricReport};
use imcbnn::network::{Encoding, FixedWeights, NetworkModel};
use imcbnn::reparam::Reparam;
use imcbnn::trainer::{parse_arch, train};
use imcbnn::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "imcbnn", version, about = "Binary Bayesian network on simulated PCM crossbars")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON noise-model coefficients.
    #[arg(long, global = true)]
    noise_model: Option<PathBuf>,
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    n_mc: Option<usize>,
    #[arg(long = "nr", global = true)]
    n_r: Option<u32>,
    #[arg(long, global = true)]
    no_noise: bool,
    #[arg(long, global = true)]
    frequentist: bool,
    /// Seconds since programming.
    #[arg(long, global = true)]
    time: Option<f64>,
    /// Worker threads (0 = one per core). Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct DeployArgs {
    /// Deployment state written by `program`.
    #[arg(long)]
    deployment: Option<PathBuf>,
    /// Network manifest, programmed in memory when no deployment is given.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset CSV; split into train / calibration / test.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct OodArgs {
    /// OOD inputs; defaults to pixel-scrambled test inputs.
    #[arg(long)]
    ood: Option<PathBuf>,
    #[arg(long)]
    no_ood: bool,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum BackendKind {
    Hardware,
    Software,
    Fixed,
}

#[derive(Subcommand)]
enum Command {
    /// Train a binary Bayesian MLP and write its manifest.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        kl_weight: Option<f64>,
        #[arg(long)]
        hardware_aware: bool,
        /// Train on every row instead of the training split.
        #[arg(long)]
        all: bool,
    },
    /// Program a manifest onto crossbar cores and save the deployment.
    Program {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Ensemble inference and metrics on the test split.
    Infer {
        #[command(flatten)]
        dep: DeployArgs,
        #[command(flatten)]
        ood: OodArgs,
        #[arg(long, value_enum, default_value = "hardware")]
        backend: BackendKind,
        #[arg(long)]
        compensate: bool,
    },
    /// Fit the logit correction on the calibration split.
    Calibrate {
        #[command(flatten)]
        dep: DeployArgs,
        #[command(flatten)]
        ood: OodArgs,
        #[arg(long)]
        compensate: bool,
    },
    /// Evaluate one deployment across a grid of read times.
    DriftSweep {
        #[command(flatten)]
        dep: DeployArgs,
        #[command(flatten)]
        ood: OodArgs,
        /// Comma-separated seconds.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        #[arg(long)]
        reuse_fit: bool,
    },
    /// Throughput, power and area from a budget file.
    HwModel {
        #[arg(long)]
        budget: PathBuf,
        /// Read-timing mode (T_NP / T_WP).
        #[arg(long)]
        mode: Option<u32>,
        /// Second budget to compare against.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// JSON node-scaling factors {delay, power, area}.
        #[arg(long)]
        scaling: Option<PathBuf>,
    },
    /// Empirical P(w = +1) of on-the-fly hardware samples against Phi(z).
    SampleCheck {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "-2,-1,0,1,2")]
        z: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long)]
        compensate: bool,
    },
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn resolve(g: &GlobalArgs) -> Result<RunConfig> {
    let mut c = match &g.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &g.noise_model {
        c.noise_model = imcbnn::device::NoiseModel::from_json_file(p)?;
    }
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(n) = g.n_mc {
        c.n_mc = n;
    }
    if let Some(n) = g.n_r {
        c.n_r = n;
    }
    if let Some(t) = g.time {
        c.time = t;
    }
    c.no_noise |= g.no_noise;
    c.frequentist |= g.frequentist;
    c.validate()?;
    Ok(c)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| io_err(&p, e))?;
    Ok(p)
}

fn write_json(dir: &Path, name: &str, v: &impl Serialize) -> Result<PathBuf> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write_text(dir, name, &s)
}

fn load_split(path: &Path, c: &RunConfig) -> Result<Split> {
    split(&Dataset::from_csv(path)?, c.n_calib, c.n_test, c.split_seed)
}

fn load_ood(args: &OodArgs, test: &Dataset, c: &RunConfig) -> Result<Option<Dataset>> {
    if args.no_ood {
        return Ok(None);
    }
    Ok(Some(match &args.ood {
        Some(p) => Dataset::from_csv(p)?,
        None => scramble_pixels(test, c.ood_seed),
    }))
}

/// Persisted deployment: the programmed cells together with their network.
#[derive(Serialize, Deserialize)]
struct DeploymentFile {
    config: RunConfig,
    seed: u64,
    network: Value,
    deployment: Deployment,
}

fn program_network(net: &NetworkModel, calib: &Dataset, c: &RunConfig) -> Result<Deployment> {
    let reparam = Reparam::default();
    let scales = net.calibrate_scales(&calib.features, &reparam)?;
    Deployment::program(net, &c.core_config(), &c.noise_model, &reparam, scales, c.seed)
}

/// Loads or programs the deployment. A stored deployment fixes the
/// programming-related settings, which are copied into the run config.
fn obtain(dep: &DeployArgs, c: &mut RunConfig, calib: &Dataset) -> Result<(NetworkModel, Deployment)> {
    match (&dep.deployment, &dep.model) {
        (Some(p), _) => {
            let s = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            let f: DeploymentFile = serde_json::from_str(&s)?;
            let net = NetworkModel::from_json_str(&f.network.to_string())?;
            c.n_r = f.config.n_r;
            c.no_noise = f.config.no_noise;
            c.frequentist = f.config.frequentist;
            c.noise_model = f.config.noise_model;
            c.n_calib = f.config.n_calib;
            c.n_test = f.config.n_test;
            c.split_seed = f.config.split_seed;
            if f.seed != c.seed {
                return Err(Error::Config(format!(
                    "deployment was programmed with seed {}, run uses --seed {}",
                    f.seed, c.seed
                )));
            }
            Ok((net, f.deployment))
        }
        (None, Some(m)) => {
            let net = NetworkModel::from_json_file(m)?;
            let d = program_network(&net, calib, c)?;
            Ok((net, d))
        }
        (None, None) => Err(Error::Config("need --deployment or --model".into())),
    }
}

fn ensemble(c: &RunConfig, tag: u64) -> EnsembleConfig {
    EnsembleConfig {
        n_mc: c.n_mc,
        seed: c.seed,
        stream_tag: tag,
        workers: 0,
    }
}

const TAG_TEST: u64 = 0;
const TAG_OOD: u64 = 1;
const TAG_CALIB: u64 = 2;

fn read_ratio(d: &Deployment, c: &RunConfig, compensate: bool) -> Result<u32> {
    if compensate {
        d.compensated_ratio(c.time)
    } else {
        Ok(d.core_config.t_ratio)
    }
}

fn hardware_records(
    net: &NetworkModel,
    d: &Deployment,
    c: &RunConfig,
    ratio: u32,
    data: &Dataset,
    tag: u64,
    labelled: bool,
) -> Result<Vec<PredictionRecord>> {
    let snap = d.snapshot(c.time, Some(ratio))?;
    let labels = labelled.then_some(data.labels.as_slice());
    run_ensemble(net, &Backend::Hardware(&snap), &d.scales, &data.features, labels, &ensemble(c, tag))
}

fn summary(name: &str, r: &MetricReport) {
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "{name}: n={} accuracy={:.4} ece={:.4} U_a={:.4} U_e={:.4} auc_a={} auc_e={}",
        r.n,
        r.accuracy,
        r.ece,
        r.mean_aleatoric,
        r.mean_epistemic,
        f(r.auc_aleatoric),
        f(r.auc_epistemic)
    );
}

fn run(cli: Cli) -> Result<()> {
    let mut c = resolve(&cli.global)?;
    if cli.global.workers > 0 {
        // ignore failure if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.workers)
            .build_global();
    }
    let out = &cli.global.out;
    match cli.command {
        Command::Train {
            data,
            arch,
            epochs,
            lr,
            batch_size,
            kl_weight,
            hardware_aware,
            all,
        } => {
            if let Some(a) = arch {
                c.train.arch = parse_arch(&a)?;
            }
            if let Some(e) = epochs {
                c.train.epochs = e;
            }
            if let Some(v) = lr {
                c.train.lr = v;
            }
            if let Some(v) = batch_size {
                c.train.batch_size = v;
            }
            if let Some(v) = kl_weight {
                c.train.kl_weight = v;
            }
            c.train.hardware_aware |= hardware_aware;
            c.train.seed = c.seed;
            let ds = Dataset::from_csv(&data)?;
            let train_set = if all { ds } else { split(&ds, c.n_calib, c.n_test, c.split_seed)?.train };
            let mut r = train(&train_set, &c.train, &c.noise_model)?;
            r.network.metadata = json!({
                "producer": "imcbnn train",
                "seed": c.seed,
                "config": c,
            });
            let p = write_text(out, "model.json", &r.network.to_json_string(Encoding::List)?)?;
            write_json(out, "train_log.json", &json!({"config": c, "seed": c.seed, "log": r.log}))?;
            if let Some(e) = r.log.last() {
                println!(
                    "epoch {}: nll={:.4} kl={:.2} train_accuracy={:.4}",
                    e.epoch, e.nll, e.kl, e.train_accuracy
                );
            }
            println!("wrote {}", p.display());
        }
        Command::Program { model, data } => {
            let s = load_split(&data, &c)?;
            let net = NetworkModel::from_json_file(&model)?;
            let d = program_network(&net, &s.calib, &c)?;
            let file = DeploymentFile {
                network: serde_json::from_str(&net.to_json_string(Encoding::List)?)?,
                config: c.clone(),
                seed: c.seed,
                deployment: d,
            };
            let mut text = serde_json::to_string(&file)?;
            text.push('\n');
            let p = write_text(out, "deployment.json", &text)?;
            println!(
                "programmed {} cores (n_r={}, t_ratio={}); wrote {}",
                file.deployment.num_cores(),
                file.deployment.core_config.n_r,
                file.deployment.core_config.t_ratio,
                p.display()
            );
        }
        Command::Infer {
            dep,
            ood,
            backend,
            compensate,
        } => {
            let s = load_split(&dep.data, &c)?;
            let (net, d) = obtain(&dep, &mut c, &s.calib)?;
            let s = load_split(&dep.data, &c)?;
            let ood_set = load_ood(&ood, &s.test, &c)?;
            let ratio = read_ratio(&d, &c, compensate)?;
            let software;
            let fixed;
            let snap;
            let b = match backend {
                BackendKind::Hardware => {
                    snap = d.snapshot(c.time, Some(ratio))?;
                    Backend::Hardware(&snap)
                }
                BackendKind::Software => {
                    software = SoftwareModel::new(&net, &d.reparam)?;
                    Backend::Software(&software)
                }
                BackendKind::Fixed => {
                    fixed = FixedWeights::from_signs(&net, &net.sign_matrices()?);
                    Backend::Fixed(&fixed)
                }
            };
            let recs = run_ensemble(&net, &b, &d.scales, &s.test.features, Some(&s.test.labels), &ensemble(&c, TAG_TEST))?;
            let ood_recs = ood_set
                .as_ref()
                .map(|o| run_ensemble(&net, &b, &d.scales, &o.features, None, &ensemble(&c, TAG_OOD)))
                .transpose()?;
            let rep = report(&recs, ood_recs.as_deref(), c.n_bins)?;
            summary("test", &rep);
            let p = write_json(
                out,
                "infer.json",
                &json!({
                    "config": c,
                    "seed": c.seed,
                    "backend": backend,
                    "time": c.time,
                    "t_ratio": ratio,
                    "report": rep,
                    "records": recs,
                    "ood_records": ood_recs,
                }),
            )?;
            println!("wrote {}", p.display());
        }
        Command::Calibrate { dep, ood, compensate } => {
            let s = load_split(&dep.data, &c)?;
            let (net, d) = obtain(&dep, &mut c, &s.calib)?;
            let s = load_split(&dep.data, &c)?;
            let ood_set = load_ood(&ood, &s.test, &c)?;
            let ratio = read_ratio(&d, &c, compensate)?;
            let fixed = FixedWeights::from_signs(&net, &net.sign_matrices()?);
            let clean = run_ensemble(
                &net,
                &Backend::Fixed(&fixed),
                &d.scales,
                &s.calib.features,
                Some(&s.calib.labels),
                &EnsembleConfig { n_mc: 1, ..ensemble(&c, TAG_CALIB) },
            )?;
            let hw_calib = hardware_records(&net, &d, &c, ratio, &s.calib, TAG_CALIB, true)?;
            let fit = calibrate_network(&clean, &hw_calib, s.calib.len())?;
            let test = hardware_records(&net, &d, &c, ratio, &s.test, TAG_TEST, true)?;
            let ood_recs = ood_set
                .as_ref()
                .map(|o| hardware_records(&net, &d, &c, ratio, o, TAG_OOD, false))
                .transpose()?;
            let before = report(&test, ood_recs.as_deref(), c.n_bins)?;
            let corrected_ood = ood_recs.as_ref().map(|r| fit.apply(r)).transpose()?;
            let after = report(&fit.apply(&test)?, corrected_ood.as_deref(), c.n_bins)?;
            summary("uncorrected", &before);
            summary("corrected", &after);
            let p = write_json(
                out,
                "calibration.json",
                &json!({
                    "config": c,
                    "seed": c.seed,
                    "time": c.time,
                    "t_ratio": ratio,
                    "fit": fit,
                    "uncorrected": before,
                    "corrected": after,
                }),
            )?;
            println!("wrote {}", p.display());
        }
        Command::DriftSweep {
            dep,
            ood,
            times,
            reuse_fit,
        } => {
            if let Some(t) = times {
                c.times = t;
            }
            c.reuse_fit |= reuse_fit;
            let s = load_split(&dep.data, &c)?;
            let (net, d) = obtain(&dep, &mut c, &s.calib)?;
            let s = load_split(&dep.data, &c)?;
            let ood_set = load_ood(&ood, &s.test, &c)?;
            let cfg = SweepConfig {
                times: c.times.clone(),
                n_mc: c.n_mc,
                n_bins: c.n_bins,
                seed: c.seed,
                reuse_fit: c.reuse_fit,
                ..SweepConfig::default()
            };
            let rows = sweep(&net, &d, &s.test, ood_set.as_ref(), &s.calib, &cfg)?;
            let mut jsonl = serde_json::to_string(&json!({"config": c, "seed": c.seed}))?;
            jsonl.push('\n');
            for r in &rows {
                jsonl.push_str(&serde_json::to_string(r)?);
                jsonl.push('\n');
            }
            write_text(out, "drift_sweep.jsonl", &jsonl)?;
            let csv = format!("# config: {}\n{}", serde_json::to_string(&c)?, rows_to_csv(&rows));
            let p = write_text(out, "drift_sweep.csv", &csv)?;
            for r in &rows {
                println!(
                    "t={:e} {:?} t_ratio={} accuracy={:.4} ece={:.4}",
                    r.time, r.scenario, r.t_ratio, r.report.accuracy, r.report.ece
                );
            }
            println!("wrote {}", p.display());
        }
        Command::HwModel {
            budget,
            mode,
            compare: other,
            scaling,
        } => {
            let b = ComponentBudget::from_file(&budget)?;
            let scale = match scaling {
                Some(p) => {
                    let s = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
                    serde_json::from_str::<NodeScaling>(&s)?
                }
                None => NodeScaling::identity(),
            };
            let e = scale.apply(&evaluate(&b, mode)?)?;
            println!(
                "{:?} mode {:?}: throughput {:.4} GOPS, power {:.4} mW, area {:.4} mm2, {:.2} GOPS/W, {:.2} GOPS/W/mm2",
                e.label,
                e.t_ratio,
                e.throughput_gops,
                e.power_w * 1e3,
                e.area_mm2,
                e.power_eff_gops_per_w,
                e.total_eff_gops_per_w_mm2
            );
            let cmp = match other {
                Some(p) => {
                    let o = ComponentBudget::from_file(&p)?;
                    let r = compare(&b, &o, mode)?;
                    println!(
                        "vs {:?}: throughput x{:.3}, power efficiency x{:.3}, total efficiency x{:.3}",
                        r.b.label, r.throughput_ratio, r.power_eff_ratio, r.total_eff_ratio
                    );
                    Some(r)
                }
                None => None,
            };
            write_json(
                out,
                "hw_model.json",
                &json!({"config": c, "seed": c.seed, "scaling": scale, "evaluation": e, "comparison": cmp}),
            )?;
        }
        Command::SampleCheck {
            z,
            samples,
            compensate,
        } => {
            let cc = c.core_config();
            let mut results = Vec::with_capacity(z.len());
            for (i, &zv) in z.iter().enumerate() {
                let r = sampling_probe(
                    zv,
                    &cc,
                    &c.noise_model,
                    samples,
                    c.time,
                    compensate,
                    imcbnn::rng::derive_seed(c.seed, imcbnn::rng::Stream::SampleCheck, &[i as u64]),
                )?;
                println!(
                    "z={:+.3} empirical {:.4} +/- {:.4} (Phi(z) = {:.4}, t_ratio {}) {}",
                    r.z,
                    r.p_hat,
                    r.ci_half_width,
                    r.expected,
                    r.t_ratio,
                    if r.within_ci() { "within" } else { "outside" }
                );
                results.push(r);
            }
            write_json(
                out,
                "sample_check.json",
                &json!({"config": c, "seed": c.seed, "samples": samples, "compensate": compensate, "results": results}),
            )?;
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible { .. } => 3,
        Error::Numeric(_) => 4,
        _ => 2,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Domain(_) => "domain",
        Error::Infeasible { .. } => "infeasible",
        Error::Config(_) => "config",
        Error::Numeric(_) => "numeric",
        Error::InsufficientSamples { .. } => "insufficient_samples",
        Error::Io { .. } => "io",
        Error::Parse(_) => "parse",
    }
}

fn error_line(code: u8, kind: &str, message: &str) {
    eprintln!("{}", json!({"error": {"code": code, "kind": kind, "message": message}}));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            error_line(2, "usage", first);
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            error_line(code, kind(&e), &e.to_string());
            ExitCode::from(code)
        }
    }
}
