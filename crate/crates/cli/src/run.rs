//! `confes run <config>`: seeds x methods training sweeps.
//!
//! Layout of a finished run directory:
//!
//! ```text
//! manifest.txt
//! seed_<s>/train.csv                 noisy training set with clean labels
//! seed_<s>/test.csv
//! seed_<s>/<method>/history.csv
//! seed_<s>/<method>/sieve.csv        sieving methods only
//! seed_<s>/<method>/hist_e<e>.csv    confidence-error histogram at snapshot e
//! seed_<s>/<method>/snapshot_e<e>.bin
//! ```
//!
//! Co-teaching methods also write `history_peer.csv` and
//! `snapshot_peer_e<e>.bin` for the second network.
//!
//! Data for seed `s` come from streams `(s, Data, 0)` (generation),
//! `(s, Split, 0)` (train/test split) and `(s, Subsample, 0)` (optional
//! class-balanced subsampling); label noise is injected with seed `s`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use confes::data::{self, balanced_subsample, gen_blobs, split, Dataset};
use confes::metrics::confidence_histogram;
use confes::nn::predict_proba;
use confes::rng::{stream, Stream};
use confes::sieve::{confidence_error, sieve_csv};
use confes::trainer::{
    criterion_of, pair_window_accuracy, train_ce, train_confes, train_coteaching, CoteachConfig,
    Method, TrainConfig, TrainHistory,
};
use confes::{Network, NoiseKind, NoiseSpec, OptimizerConfig, SieveConfig};

use crate::config::{join, RawConfig};
use crate::manifest::{data_config_hash, Manifest};
use crate::output::OutputDir;
use crate::CliError;

/// A training method, or cross-entropy on the clean labels as a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMethod {
    Train(Method),
    CleanCe,
}

impl fmt::Display for RunMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunMethod::Train(m) => m.fmt(f),
            RunMethod::CleanCe => f.write_str("ce_clean"),
        }
    }
}

impl FromStr for RunMethod {
    type Err = confes::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "ce_clean" {
            return Ok(RunMethod::CleanCe);
        }
        s.parse().map(RunMethod::Train)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Blobs {
        classes: usize,
        train_size: usize,
        test_size: usize,
        dim: usize,
        separation: f64,
        std: f64,
    },
    Csv {
        path: PathBuf,
        test_fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub per_class: Option<usize>,
    pub noise_kind: NoiseKind,
    pub noise_rate: f64,
    pub methods: Vec<RunMethod>,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub output_init_scale: f64,
    pub sieve: SieveConfig,
    pub coteach: CoteachConfig,
    pub eval_window: usize,
    pub snapshots: Vec<usize>,
    pub hist_bins: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Every setting with its effective value, in schema order.
    pub resolved: Vec<(String, String)>,
}

pub const RUN_KEYS: &[&str] = &[
    "data.source",
    "data.classes",
    "data.train_size",
    "data.test_size",
    "data.dim",
    "data.separation",
    "data.std",
    "data.path",
    "data.test_fraction",
    "data.per_class",
    "noise.kind",
    "noise.rate",
    "train.methods",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.momentum",
    "train.weight_decay",
    "train.lr_decay_factor",
    "train.hidden",
    "train.output_init_scale",
    "sieve.alpha",
    "sieve.warmup",
    "coteach.tau_est",
    "coteach.warmup",
    "eval.window",
    "eval.hist_bins",
    "snapshots",
    "seeds",
    "out",
];

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        Self::from_raw(&RawConfig::read(path)?, overrides)
    }

    pub fn from_raw(raw: &RawConfig, overrides: &Overrides) -> Result<Self, CliError> {
        raw.check_keys(RUN_KEYS)?;
        let mut resolved: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| resolved.push((k.to_owned(), v));

        let source: String = raw.get("data.source", "blobs".to_owned())?;
        put("data.source", source.clone());
        let data = match source.as_str() {
            "blobs" => {
                for k in ["data.path", "data.test_fraction"] {
                    if raw.has(k) {
                        return Err(CliError::Config(format!(
                            "'{k}' applies only to data.source = csv"
                        )));
                    }
                }
                let d = DataSource::Blobs {
                    classes: raw.get("data.classes", 4)?,
                    train_size: raw.get("data.train_size", 5000)?,
                    test_size: raw.get("data.test_size", 1000)?,
                    dim: raw.get("data.dim", 16)?,
                    separation: raw.get("data.separation", 6.0)?,
                    std: raw.get("data.std", 1.0)?,
                };
                if let DataSource::Blobs {
                    classes,
                    train_size,
                    test_size,
                    dim,
                    separation,
                    std,
                } = &d
                {
                    if *test_size == 0 || *train_size == 0 {
                        return Err(CliError::Config(
                            "train and test sizes must be positive".into(),
                        ));
                    }
                    put("data.classes", classes.to_string());
                    put("data.train_size", train_size.to_string());
                    put("data.test_size", test_size.to_string());
                    put("data.dim", dim.to_string());
                    put("data.separation", separation.to_string());
                    put("data.std", std.to_string());
                }
                d
            }
            "csv" => {
                for k in [
                    "data.classes",
                    "data.train_size",
                    "data.test_size",
                    "data.dim",
                    "data.separation",
                    "data.std",
                ] {
                    if raw.has(k) {
                        return Err(CliError::Config(format!(
                            "'{k}' applies only to data.source = blobs"
                        )));
                    }
                }
                let rel: PathBuf = raw.require::<String>("data.path")?.into();
                // relative paths are taken from the config file's directory
                let path = match raw.path().parent() {
                    Some(dir) if rel.is_relative() => dir.join(&rel),
                    _ => rel,
                };
                if !path.is_file() {
                    return Err(CliError::Config(format!(
                        "data file {} does not exist",
                        path.display()
                    )));
                }
                let test_fraction = raw.get("data.test_fraction", 1.0 / 6.0)?;
                put("data.path", path.display().to_string());
                put("data.test_fraction", f64::to_string(&test_fraction));
                DataSource::Csv {
                    path,
                    test_fraction,
                }
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown data.source '{other}' (blobs or csv)"
                )))
            }
        };
        let per_class = if raw.has("data.per_class") {
            let v: usize = raw.require("data.per_class")?;
            put("data.per_class", v.to_string());
            Some(v)
        } else {
            None
        };

        let noise_kind: NoiseKind = raw.get("noise.kind", NoiseKind::Symmetric)?;
        let noise_rate: f64 = raw.get("noise.rate", 0.4)?;
        put("noise.kind", noise_kind.to_string());
        put("noise.rate", noise_rate.to_string());

        let methods: Vec<RunMethod> =
            raw.get_list("train.methods", vec![RunMethod::Train(Method::Confes)])?;
        if methods.is_empty() {
            return Err(CliError::Config("train.methods is empty".into()));
        }
        put("train.methods", join(&methods));
        let epochs: usize = raw.get("train.epochs", 100)?;
        let defaults = OptimizerConfig::default();
        let optimizer = OptimizerConfig::new(
            raw.get("train.lr", defaults.lr0)?,
            raw.get("train.momentum", defaults.momentum)?,
            raw.get("train.weight_decay", defaults.weight_decay)?,
            epochs,
            raw.get("train.lr_decay_factor", defaults.lr_decay_factor)?,
        )?;
        put("train.epochs", epochs.to_string());
        put("train.lr", optimizer.lr0.to_string());
        put("train.momentum", optimizer.momentum.to_string());
        put("train.weight_decay", optimizer.weight_decay.to_string());
        put(
            "train.lr_decay_factor",
            optimizer.lr_decay_factor.to_string(),
        );
        let batch_size: usize = raw.get("train.batch_size", 128)?;
        let hidden: Vec<usize> = raw.get_list("train.hidden", vec![64, 64])?;
        let output_init_scale: f64 = raw.get("train.output_init_scale", 0.0)?;
        put("train.batch_size", batch_size.to_string());
        put("train.hidden", join(&hidden));
        put("train.output_init_scale", output_init_scale.to_string());

        let sieve_default = SieveConfig::default();
        let sieve = SieveConfig::new(
            raw.get("sieve.alpha", sieve_default.alpha0)?,
            raw.get("sieve.warmup", sieve_default.warmup_epochs)?,
        )?;
        put("sieve.alpha", sieve.alpha0.to_string());
        put("sieve.warmup", sieve.warmup_epochs.to_string());
        let coteach = CoteachConfig::new(
            raw.get("coteach.tau_est", noise_rate)?,
            raw.get("coteach.warmup", 30)?,
        )?;
        put("coteach.tau_est", coteach.tau_est.to_string());
        put("coteach.warmup", coteach.warmup_epochs.to_string());

        let eval_window: usize = raw.get("eval.window", 5)?;
        let hist_bins: usize = raw.get("eval.hist_bins", 10)?;
        if hist_bins < 2 {
            return Err(CliError::Config("eval.hist_bins must be at least 2".into()));
        }
        let snapshots: Vec<usize> = raw.get_list("snapshots", vec![10, 50, 100])?;
        put("eval.window", eval_window.to_string());
        put("eval.hist_bins", hist_bins.to_string());
        put("snapshots", join(&snapshots));

        let seeds: Vec<u64> = match overrides.seed {
            Some(s) => vec![s],
            None => raw.get_list("seeds", vec![1])?,
        };
        if seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        put("seeds", join(&seeds));
        let out = match &overrides.out {
            Some(o) => o.clone(),
            None => PathBuf::from(raw.get::<String>("out", "runs/experiment".to_owned())?),
        };
        put("out", out.display().to_string());

        Ok(ExperimentConfig {
            data,
            per_class,
            noise_kind,
            noise_rate,
            methods,
            optimizer,
            batch_size,
            hidden,
            output_init_scale,
            sieve,
            coteach,
            eval_window,
            snapshots,
            hist_bins,
            seeds,
            out,
            resolved,
        })
    }

    pub fn noise_label(&self) -> String {
        format!("{}_{}", self.noise_kind, self.noise_rate)
    }

    /// Training configuration of `method` for `seed`.
    pub fn train_config(&self, method: Method, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(method, self.optimizer, seed);
        cfg.batch_size = self.batch_size;
        cfg.hidden = self.hidden.clone();
        cfg.output_init_scale = self.output_init_scale;
        cfg.eval_window = self.eval_window;
        cfg.snapshot_epochs = self.snapshots.clone();
        cfg.sieve = method.uses_sieve().then_some(self.sieve);
        cfg.coteach = method.is_coteaching().then_some(self.coteach);
        cfg
    }
}

/// `(noisy train, test)` for one seed.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset), CliError> {
    let (train, test) = match &cfg.data {
        DataSource::Blobs {
            classes,
            train_size,
            test_size,
            dim,
            separation,
            std,
        } => {
            let n = train_size + test_size;
            let all = gen_blobs(
                *classes,
                n,
                *dim,
                *separation,
                *std,
                &mut stream(seed, Stream::Data, 0),
            )?;
            split(
                &all,
                *test_size as f64 / n as f64,
                &mut stream(seed, Stream::Split, 0),
            )?
        }
        DataSource::Csv {
            path,
            test_fraction,
        } => {
            let all = data::load(path)?;
            split(&all, *test_fraction, &mut stream(seed, Stream::Split, 0))?
        }
    };
    let mut noisy = NoiseSpec::new(cfg.noise_kind, cfg.noise_rate, seed)?.apply(&train)?;
    if let Some(per_class) = cfg.per_class {
        noisy = balanced_subsample(&noisy, per_class, &mut stream(seed, Stream::Subsample, 0))?;
    }
    Ok((noisy, test))
}

/// Outcome of one (seed, method) cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub seed: u64,
    pub method: RunMethod,
    pub last_window_acc: f64,
}

/// Confidence-error histogram of `net` on `train`, split by noise flag.
fn histogram_csv(net: &Network, train: &Dataset, bins: usize) -> Result<String, CliError> {
    let probs = predict_proba(net, train.features())?;
    let errors = train
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &y)| confidence_error(probs.row(i), y).map(|e| e.clamp(0.0, 1.0)))
        .collect::<Result<Vec<_>, _>>()?;
    let flags = train
        .noise_flags()
        .map(<[bool]>::to_vec)
        .unwrap_or_else(|| vec![false; train.len()]);
    Ok(confidence_histogram(&errors, &flags, bins)?.to_csv())
}

fn write_history(
    out: &mut OutputDir,
    dir: &str,
    suffix: &str,
    hist: &TrainHistory,
    train: &Dataset,
    bins: usize,
) -> Result<(), CliError> {
    out.write(
        &format!("{dir}/history{suffix}.csv"),
        hist.to_csv().as_bytes(),
    )?;
    for (e, net) in &hist.snapshots {
        out.write(&format!("{dir}/snapshot{suffix}_e{e}.bin"), &net.to_bytes())?;
        if suffix.is_empty() {
            out.write(
                &format!("{dir}/hist_e{e}.csv"),
                histogram_csv(net, train, bins)?.as_bytes(),
            )?;
        }
    }
    Ok(())
}

fn run_cell(
    cfg: &ExperimentConfig,
    method: RunMethod,
    seed: u64,
    train: &Dataset,
    test: &Dataset,
    out: &mut OutputDir,
) -> Result<f64, CliError> {
    let dir = format!("seed_{seed}/{method}");
    let acc = match method {
        RunMethod::CleanCe => {
            let clean = train.cleaned();
            let (_, hist) = train_ce(&cfg.train_config(Method::Ce, seed), &clean, test)?;
            write_history(out, &dir, "", &hist, &clean, cfg.hist_bins)?;
            hist.last_window_accuracy()
        }
        RunMethod::Train(m) if m.is_coteaching() => {
            let criterion = criterion_of(m).expect("co-teaching method");
            let (_, hists) = train_coteaching(&cfg.train_config(m, seed), train, test, criterion)?;
            write_history(out, &dir, "", &hists[0], train, cfg.hist_bins)?;
            write_history(out, &dir, "_peer", &hists[1], train, cfg.hist_bins)?;
            pair_window_accuracy(&hists)
        }
        RunMethod::Train(m) => {
            let tc = cfg.train_config(m, seed);
            let (_, hist) = if m.uses_sieve() {
                train_confes(&tc, train, test)?
            } else {
                train_ce(&tc, train, test)?
            };
            write_history(out, &dir, "", &hist, train, cfg.hist_bins)?;
            if m.uses_sieve() {
                out.write(
                    &format!("{dir}/sieve.csv"),
                    sieve_csv(hist.sieve_reports()).as_bytes(),
                )?;
            }
            hist.last_window_accuracy()
        }
    };
    // zero epochs leave nothing to average
    Ok(acc.unwrap_or(f64::NAN))
}

fn execute(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Vec<CellResult>, CliError> {
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let (train, test) = prepare_data(cfg, seed)?;
        out.write(
            &format!("seed_{seed}/train.csv"),
            data::to_csv(&train).as_bytes(),
        )?;
        out.write(
            &format!("seed_{seed}/test.csv"),
            data::to_csv(&test).as_bytes(),
        )?;
        for &method in &cfg.methods {
            let acc = run_cell(cfg, method, seed, &train, &test, out)?;
            eprintln!("seed {seed} {method}: last-window accuracy {acc:.4}");
            results.push(CellResult {
                seed,
                method,
                last_window_acc: acc,
            });
        }
    }
    Ok(results)
}

/// Run everything `cfg` describes into `cfg.out`.
pub fn run_config(cfg: &ExperimentConfig) -> Result<(PathBuf, Vec<CellResult>), CliError> {
    let mut out = OutputDir::create(&cfg.out)?;
    match execute(cfg, &mut out) {
        Ok(results) => {
            let mut m = Manifest::new();
            m.push("command", "run");
            for (k, v) in &cfg.resolved {
                m.push(format!("config.{k}"), v);
            }
            m.push("data_config_hash", data_config_hash(&cfg.resolved));
            m.push("noise", cfg.noise_label());
            for r in &results {
                m.push(
                    format!("result.{}.{}.last_window_acc", r.seed, r.method),
                    format!("{:.16e}", r.last_window_acc),
                );
            }
            Ok((out.commit(m)?, results))
        }
        Err(e) => {
            if let Some(q) = out.quarantine() {
                eprintln!("partial output moved to {}", q.display());
            }
            Err(e)
        }
    }
}

pub fn run_experiment(config: &Path, overrides: &Overrides) -> Result<PathBuf, CliError> {
    let cfg = ExperimentConfig::load(config, overrides)?;
    run_config(&cfg).map(|(dir, _)| dir)
}
