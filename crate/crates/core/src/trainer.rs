//! Training loops: plain cross-entropy, CONFES sieving, Co-teaching and its
//! confidence-error variant.
//!
//! Random streams used by a run with seed `s`:
//!
//! - network initialisation: `(s, Init, 0)`, and `(s, Init, 1)` for the peer
//!   network of a co-teaching pair;
//! - mini-batch order of epoch `i`: `(s, Shuffle, i)`.
//!
//! Sieving is a deterministic function of the model, so it consumes no
//! randomness and never perturbs the shuffle streams.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{mean_confidence_tracks, sieve_confusion, window_mean, ConfidenceTracks};
use crate::nn::{
    argmax, backward, clamped_nll, cosine_lr, predict_proba, sgd_step, Matrix, Network,
    OptimizerConfig,
};
use crate::rng::{stream, Stream};
use crate::sieve::{
    confidence_error_unchecked, rebuild_indices, select_clean, sieve_threshold, small_loss_select,
    SieveConfig, SieveReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ce,
    Confes,
    Coteaching,
    ConfesCoteaching,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Ce,
        Method::Confes,
        Method::Coteaching,
        Method::ConfesCoteaching,
    ];

    pub fn uses_sieve(self) -> bool {
        self == Method::Confes
    }

    pub fn is_coteaching(self) -> bool {
        matches!(self, Method::Coteaching | Method::ConfesCoteaching)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ce => "ce",
            Method::Confes => "confes",
            Method::Coteaching => "coteaching",
            Method::ConfesCoteaching => "confes_coteaching",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}'")))
    }
}

/// How a co-teaching network ranks the samples of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    SmallLoss,
    ConfidenceError,
}

/// Keep-fraction schedule of co-teaching: `1 - min(i / warmup, 1) * tau_est`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoteachConfig {
    /// Estimated noise rate; the fraction finally discarded per batch.
    pub tau_est: f64,
    pub warmup_epochs: usize,
}

impl CoteachConfig {
    pub fn new(tau_est: f64, warmup_epochs: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&tau_est) {
            return Err(Error::invalid(format!(
                "tau_est must lie in [0, 1), got {tau_est}"
            )));
        }
        if warmup_epochs == 0 {
            return Err(Error::invalid(
                "co-teaching warm-up must be at least 1 epoch",
            ));
        }
        Ok(CoteachConfig {
            tau_est,
            warmup_epochs,
        })
    }

    pub fn keep_fraction(&self, epoch: usize) -> f64 {
        let ramp = (epoch as f64 / self.warmup_epochs as f64).min(1.0);
        1.0 - ramp * self.tau_est
    }
}

/// Default snapshot epochs; the final epoch is always added.
pub const DEFAULT_SNAPSHOTS: [usize; 3] = [10, 50, 100];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    /// Required for [`Method::Confes`], rejected otherwise.
    pub sieve: Option<SieveConfig>,
    /// Required for the co-teaching methods, rejected otherwise.
    pub coteach: Option<CoteachConfig>,
    pub method: Method,
    pub seed: u64,
    pub eval_window: usize,
    /// Snapshots are taken after this many completed epochs.
    pub snapshot_epochs: Vec<usize>,
    /// Multiplier on the Glorot-initialised output-layer weights. Zero makes
    /// the untrained network predict the uniform distribution.
    pub output_init_scale: f64,
}

impl TrainConfig {
    /// Defaults for everything except the method's own sub-config, which is
    /// filled with its default when the method needs one.
    pub fn new(method: Method, optimizer: OptimizerConfig, seed: u64) -> Self {
        TrainConfig {
            optimizer,
            batch_size: 128,
            hidden: vec![64, 64],
            sieve: method.uses_sieve().then(SieveConfig::default),
            coteach: method.is_coteaching().then_some(CoteachConfig {
                tau_est: 0.4,
                warmup_epochs: 30,
            }),
            method,
            seed,
            eval_window: 5,
            snapshot_epochs: DEFAULT_SNAPSHOTS.to_vec(),
            output_init_scale: 0.0,
        }
    }

    pub fn validate(&self, train_len: usize) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.batch_size > train_len {
            return Err(Error::invalid(format!(
                "batch size {} must lie in 1..={train_len}",
                self.batch_size
            )));
        }
        if self.eval_window == 0 {
            return Err(Error::invalid("evaluation window must be positive"));
        }
        if self.method.uses_sieve() != self.sieve.is_some() {
            return Err(Error::invalid(format!(
                "sieve settings must be given exactly when the method sieves (method {})",
                self.method
            )));
        }
        if self.method.is_coteaching() != self.coteach.is_some() {
            return Err(Error::invalid(format!(
                "co-teaching settings must be given exactly for co-teaching methods (method {})",
                self.method
            )));
        }
        if !(self.output_init_scale >= 0.0 && self.output_init_scale.is_finite()) {
            return Err(Error::invalid(
                "output init scale must be finite and nonnegative",
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        Ok(())
    }

    fn snapshot_set(&self) -> BTreeSet<usize> {
        let total = self.optimizer.total_epochs;
        self.snapshot_epochs
            .iter()
            .copied()
            .filter(|&e| e <= total)
            .chain(std::iter::once(total))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean cross-entropy over the samples trained on this epoch.
    pub train_loss: f64,
    pub test_acc: f64,
    /// Number of (possibly duplicated) samples the network trained on.
    pub samples_seen: usize,
    pub sieve: Option<SieveReport>,
    /// End-of-epoch confidences over the noisy training samples.
    pub tracks: ConfidenceTracks,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub method: Method,
    pub records: Vec<EpochRecord>,
    /// `(completed epochs, network)` pairs.
    pub snapshots: Vec<(usize, Network)>,
    pub eval_window: usize,
}

pub const HISTORY_CSV_HEADER: &str =
    "epoch,lr,train_loss,test_acc,alpha,n_selected,tp,fp,fn,tn,fallback,conf_clean,conf_noisy,conf_pred";

impl TrainHistory {
    pub fn accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.test_acc).collect()
    }

    /// Mean test accuracy over the last `eval_window` epochs.
    pub fn last_window_accuracy(&self) -> Option<f64> {
        window_mean(&self.accuracies(), self.eval_window)
    }

    pub fn sieve_reports(&self) -> impl Iterator<Item = &SieveReport> {
        self.records.iter().filter_map(|r| r.sieve.as_ref())
    }

    pub fn snapshot(&self, epoch: usize) -> Option<&Network> {
        self.snapshots
            .iter()
            .find(|(e, _)| *e == epoch)
            .map(|(_, n)| n)
    }

    /// One row per epoch; columns that do not apply are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        for r in &self.records {
            let _ = write!(
                out,
                "{},{:.16e},{:.16e},{:.16e},",
                r.epoch, r.lr, r.train_loss, r.test_acc
            );
            match &r.sieve {
                Some(s) => {
                    let _ = write!(out, "{:.16e},{},", s.alpha, s.n_selected());
                    match &s.confusion {
                        Some(c) => {
                            let _ = write!(
                                out,
                                "{},{},{},{},",
                                c.tp_noisy_rejected,
                                c.fp_clean_rejected,
                                c.fn_noisy_selected,
                                c.tn_clean_selected
                            );
                        }
                        None => out.push_str(",,,,"),
                    }
                    out.push_str(if s.fallback { "1," } else { "0," });
                }
                None => out.push_str(",,,,,,,"),
            }
            let t = &r.tracks;
            let _ = writeln!(
                out,
                "{},{},{}",
                opt(t.clean),
                opt(t.noisy),
                opt(t.predicted)
            );
        }
        out
    }
}

/// Fraction of `test` whose argmax prediction equals the label.
pub fn evaluate(net: &Network, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let probs = predict_proba(net, test.features())?;
    Ok(accuracy(&probs, test.labels()))
}

fn accuracy(probs: &Matrix, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(probs.row(i)) == y)
        .count();
    hits as f64 / labels.len() as f64
}

fn check_inputs(cfg: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<()> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("training and test sets must be nonempty"));
    }
    if train.dim() != test.dim() || train.classes() != test.classes() {
        return Err(Error::invalid(format!(
            "train ({} features, {} classes) and test ({} features, {} classes) disagree",
            train.dim(),
            train.classes(),
            test.dim(),
            test.classes()
        )));
    }
    cfg.validate(train.len())
}

fn tracks(probs: &Matrix, train: &Dataset) -> Result<ConfidenceTracks> {
    match (train.true_labels(), train.noise_flags()) {
        (Some(truth), Some(flags)) => mean_confidence_tracks(probs, truth, train.labels(), flags),
        _ => Ok(ConfidenceTracks::default()),
    }
}

/// One epoch of mini-batch SGD over `train` rows `indices` (in that order
/// before shuffling). Returns the mean loss.
fn sgd_epoch(
    net: &mut Network,
    train: &Dataset,
    indices: &[usize],
    epoch: usize,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut rng = stream(cfg.seed, Stream::Shuffle, epoch as u32);
    let mut loss_sum = 0.0;
    for batch in batches(indices.len(), cfg.batch_size, &mut rng)? {
        let rows: Vec<usize> = batch.iter().map(|&p| indices[p]).collect();
        let x = train.features().select_rows(&rows);
        let y: Vec<usize> = rows.iter().map(|&r| train.labels()[r]).collect();
        let (grads, loss) = backward(net, &x, &y)?;
        sgd_step(net, &grads, lr, &cfg.optimizer)?;
        loss_sum += loss * rows.len() as f64;
    }
    Ok(loss_sum / indices.len() as f64)
}

/// Sieve the full training set with the frozen model's probabilities.
fn sieve_epoch(
    probs: &Matrix,
    train: &Dataset,
    epoch: usize,
    cfg: &SieveConfig,
) -> Result<(SieveReport, Vec<usize>)> {
    let alpha = sieve_threshold(epoch, cfg);
    let conf_errors: Vec<f64> = train
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &y)| confidence_error_unchecked(probs.row(i), y))
        .collect();
    let selected = select_clean(&conf_errors, alpha);
    let confusion = train
        .noise_flags()
        .map(|flags| sieve_confusion(&selected, flags))
        .transpose()?;
    let (indices, fallback) = match rebuild_indices(&selected) {
        Ok(ix) => (ix, false),
        Err(Error::EmptyCleanSet) => ((0..train.len()).collect(), true),
        Err(e) => return Err(e),
    };
    let report = SieveReport {
        epoch,
        alpha,
        conf_errors,
        selected,
        confusion,
        fallback,
    };
    Ok((report, indices))
}

/// Network for `train` initialised from stream `(seed, Init, index)`.
pub fn init_network(cfg: &TrainConfig, train: &Dataset, index: u32) -> Result<Network> {
    let mut net = Network::mlp(
        train.dim(),
        &cfg.hidden,
        train.classes(),
        &mut stream(cfg.seed, Stream::Init, index),
    )?;
    let last = net.layers_mut().last_mut().expect("at least one layer");
    last.weights_mut()
        .iter_mut()
        .for_each(|w| *w *= cfg.output_init_scale);
    Ok(net)
}

/// Cross-entropy or CONFES training of a single network initialised from
/// stream `(seed, Init, init_index)`.
fn train_single(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    init_index: u32,
) -> Result<(Network, TrainHistory)> {
    check_inputs(cfg, train, test)?;
    let sieve_cfg = match cfg.method {
        Method::Ce => None,
        Method::Confes => cfg.sieve,
        m => {
            return Err(Error::invalid(format!(
                "method {m} needs the co-teaching trainer"
            )))
        }
    };
    let mut net = init_network(cfg, train, init_index)?;
    let snaps = cfg.snapshot_set();
    let mut history = TrainHistory {
        method: cfg.method,
        records: Vec::with_capacity(cfg.optimizer.total_epochs),
        snapshots: Vec::new(),
        eval_window: cfg.eval_window,
    };
    if snaps.contains(&0) {
        history.snapshots.push((0, net.clone()));
    }
    let full: Vec<usize> = (0..train.len()).collect();
    // Probabilities of the current model on the training set; the end-of-epoch
    // pass doubles as the next epoch's frozen sieving pass.
    let mut train_probs = match sieve_cfg {
        Some(_) => Some(predict_proba(&net, train.features())?),
        None => None,
    };
    for epoch in 0..cfg.optimizer.total_epochs {
        let lr = cosine_lr(epoch, &cfg.optimizer)?;
        let (report, indices) = match (&sieve_cfg, &train_probs) {
            (Some(sc), Some(p)) => {
                let (r, ix) = sieve_epoch(p, train, epoch, sc)?;
                (Some(r), ix)
            }
            _ => (None, full.clone()),
        };
        let train_loss = sgd_epoch(&mut net, train, &indices, epoch, lr, cfg)?;
        let probs = predict_proba(&net, train.features())?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            test_acc: evaluate(&net, test)?,
            samples_seen: indices.len(),
            sieve: report,
            tracks: tracks(&probs, train)?,
        };
        history.records.push(record);
        if sieve_cfg.is_some() {
            train_probs = Some(probs);
        }
        if snaps.contains(&(epoch + 1)) {
            history.snapshots.push((epoch + 1, net.clone()));
        }
    }
    Ok((net, history))
}

/// Shuffled mini-batch SGD on the full (noisy) training set.
pub fn train_ce(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<(Network, TrainHistory)> {
    if cfg.method != Method::Ce {
        return Err(Error::invalid(format!(
            "train_ce called with method {}",
            cfg.method
        )));
    }
    train_single(cfg, train, test, 0)
}

/// CONFES: before each epoch, keep the samples whose confidence error is at
/// most the scheduled threshold, refill to the original size with duplicates
/// of the kept samples and train one epoch on the result. If nothing passes,
/// the epoch trains on the full set and the report is flagged.
pub fn train_confes(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<(Network, TrainHistory)> {
    if cfg.method != Method::Confes {
        return Err(Error::invalid(format!(
            "train_confes called with method {}",
            cfg.method
        )));
    }
    train_single(cfg, train, test, 0)
}

/// Per-sample ranking scores of a batch under `criterion`.
fn batch_scores(probs: &Matrix, labels: &[usize], criterion: Criterion) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| match criterion {
            Criterion::SmallLoss => clamped_nll(probs.row(i)[y]),
            Criterion::ConfidenceError => confidence_error_unchecked(probs.row(i), y),
        })
        .collect()
}

/// Two networks share the batch order; each ranks every batch by `criterion`
/// and its peer trains on the kept fraction.
pub fn train_coteaching(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    criterion: Criterion,
) -> Result<([Network; 2], [TrainHistory; 2])> {
    check_inputs(cfg, train, test)?;
    if !cfg.method.is_coteaching() {
        return Err(Error::invalid(format!(
            "train_coteaching called with method {}",
            cfg.method
        )));
    }
    let co = cfg.coteach.expect("validated");
    let nets = [0u32, 1].map(|i| init_network(cfg, train, i));
    let mut nets = match nets {
        [Ok(a), Ok(b)] => [a, b],
        [Err(e), _] | [_, Err(e)] => return Err(e),
    };
    let snaps = cfg.snapshot_set();
    let mut histories = [0, 1].map(|_| TrainHistory {
        method: cfg.method,
        records: Vec::with_capacity(cfg.optimizer.total_epochs),
        snapshots: Vec::new(),
        eval_window: cfg.eval_window,
    });
    if snaps.contains(&0) {
        for (h, n) in histories.iter_mut().zip(&nets) {
            h.snapshots.push((0, n.clone()));
        }
    }
    for epoch in 0..cfg.optimizer.total_epochs {
        let lr = cosine_lr(epoch, &cfg.optimizer)?;
        let keep = co.keep_fraction(epoch);
        let mut rng = stream(cfg.seed, Stream::Shuffle, epoch as u32);
        let mut loss_sum = [0.0; 2];
        let mut seen = [0usize; 2];
        for rows in batches(train.len(), cfg.batch_size, &mut rng)? {
            let x = train.features().select_rows(&rows);
            let y: Vec<usize> = rows.iter().map(|&r| train.labels()[r]).collect();
            let mut picks: [Vec<usize>; 2] = Default::default();
            for (pick, net) in picks.iter_mut().zip(&nets) {
                let probs = predict_proba(net, &x)?;
                let mask = small_loss_select(&batch_scores(&probs, &y, criterion), keep)?;
                *pick = (0..rows.len()).filter(|&i| mask[i]).collect();
            }
            for me in 0..2 {
                let chosen = &picks[1 - me];
                let xs = x.select_rows(chosen);
                let ys: Vec<usize> = chosen.iter().map(|&i| y[i]).collect();
                let (grads, loss) = backward(&nets[me], &xs, &ys)?;
                sgd_step(&mut nets[me], &grads, lr, &cfg.optimizer)?;
                loss_sum[me] += loss * chosen.len() as f64;
                seen[me] += chosen.len();
            }
        }
        for me in 0..2 {
            let probs = predict_proba(&nets[me], train.features())?;
            histories[me].records.push(EpochRecord {
                epoch,
                lr,
                train_loss: loss_sum[me] / seen[me] as f64,
                test_acc: evaluate(&nets[me], test)?,
                samples_seen: seen[me],
                sieve: None,
                tracks: tracks(&probs, train)?,
            });
            if snaps.contains(&(epoch + 1)) {
                histories[me].snapshots.push((epoch + 1, nets[me].clone()));
            }
        }
    }
    Ok((nets, histories))
}

/// Per-epoch mean of the two networks' test accuracies.
pub fn pair_accuracies(histories: &[TrainHistory; 2]) -> Vec<f64> {
    histories[0]
        .records
        .iter()
        .zip(&histories[1].records)
        .map(|(a, b)| (a.test_acc + b.test_acc) / 2.0)
        .collect()
}

/// Last-window accuracy of a co-teaching pair.
pub fn pair_window_accuracy(histories: &[TrainHistory; 2]) -> Option<f64> {
    window_mean(&pair_accuracies(histories), histories[0].eval_window)
}

/// Criterion used by a co-teaching method.
pub fn criterion_of(method: Method) -> Option<Criterion> {
    match method {
        Method::Coteaching => Some(Criterion::SmallLoss),
        Method::ConfesCoteaching => Some(Criterion::ConfidenceError),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::nn::{Activation, Layer};
    use crate::noise::{NoiseKind, NoiseSpec};

    fn blobs(k: usize, n: usize, sep: f64, seed: u64) -> Dataset {
        gen_blobs(k, n, 2, sep, 1.0, &mut stream(seed, Stream::Data, 0)).unwrap()
    }

    fn opt(epochs: usize) -> OptimizerConfig {
        OptimizerConfig::new(0.05, 0.9, 5e-4, epochs, 100.0).unwrap()
    }

    fn small_cfg(method: Method, epochs: usize) -> TrainConfig {
        let mut c = TrainConfig::new(method, opt(epochs), 7);
        c.batch_size = 32;
        c.hidden = vec![16];
        c
    }

    #[test]
    fn zero_epochs_returns_initial_network() {
        let train = blobs(2, 100, 4.0, 1);
        let cfg = small_cfg(Method::Ce, 0);
        let (net, hist) = train_ce(&cfg, &train, &train).unwrap();
        let init = init_network(&cfg, &train, 0).unwrap();
        assert!(init.layers()[1].weights().iter().all(|&w| w == 0.0));
        assert_eq!(net, init);
        assert!(hist.records.is_empty());
        assert_eq!(hist.last_window_accuracy(), None);
    }

    #[test]
    fn identical_seeds_identical_histories() {
        let train = NoiseSpec::new(NoiseKind::Symmetric, 0.3, 3)
            .unwrap()
            .apply(&blobs(3, 300, 3.0, 2))
            .unwrap();
        let test = blobs(3, 90, 3.0, 9);
        for method in [Method::Ce, Method::Confes] {
            let cfg = small_cfg(method, 6);
            let run = || match method {
                Method::Ce => train_ce(&cfg, &train, &test).unwrap(),
                _ => train_confes(&cfg, &train, &test).unwrap(),
            };
            let (n1, h1) = run();
            let (n2, h2) = run();
            assert_eq!(n1.to_bytes(), n2.to_bytes());
            assert_eq!(h1.to_csv(), h2.to_csv());
        }
    }

    /// Full-batch gradient descent logistic regression for two classes.
    fn logistic_regression_accuracy(train: &Dataset, test: &Dataset) -> f64 {
        let d = train.dim();
        let mut w = vec![0.0; d + 1];
        for _ in 0..2000 {
            let mut g = vec![0.0; d + 1];
            for (x, &y) in train.features().iter_rows().zip(train.labels()) {
                let z: f64 = w[d] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                let r = 1.0 / (1.0 + (-z).exp()) - y as f64;
                for j in 0..d {
                    g[j] += r * x[j];
                }
                g[d] += r;
            }
            for j in 0..=d {
                w[j] -= 0.1 * g[j] / train.len() as f64;
            }
        }
        let hits = test
            .features()
            .iter_rows()
            .zip(test.labels())
            .filter(|(x, &y)| {
                let z: f64 = w[d] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                usize::from(z > 0.0) == y
            })
            .count();
        hits as f64 / test.len() as f64
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let all = blobs(2, 600, 6.0, 11);
        let (train, test) =
            crate::data::split(&all, 1.0 / 3.0, &mut stream(11, Stream::Split, 0)).unwrap();
        let (_, hist) = train_ce(&small_cfg(Method::Ce, 50), &train, &test).unwrap();
        let acc = hist.records.last().unwrap().test_acc;
        let oracle = logistic_regression_accuracy(&train, &test);
        assert!(acc > 0.95, "{acc}");
        assert!(acc >= oracle - 0.02, "{acc} vs {oracle}");
    }

    #[test]
    fn config_violations_are_rejected() {
        let train = blobs(2, 50, 4.0, 1);
        let mut cfg = small_cfg(Method::Ce, 2);
        cfg.batch_size = 51;
        assert!(matches!(
            train_ce(&cfg, &train, &train),
            Err(Error::InvalidInput(_))
        ));
        let mut cfg = small_cfg(Method::Confes, 2);
        cfg.sieve = None;
        assert!(train_confes(&cfg, &train, &train).is_err());
        let mut cfg = small_cfg(Method::Ce, 2);
        cfg.sieve = Some(SieveConfig::default());
        assert!(train_ce(&cfg, &train, &train).is_err());
        assert!(train_confes(&small_cfg(Method::Ce, 2), &train, &train).is_err());
        let other = gen_blobs(2, 20, 3, 4.0, 1.0, &mut stream(1, Stream::Data, 0)).unwrap();
        assert!(train_ce(&small_cfg(Method::Ce, 2), &train, &other).is_err());
    }

    #[test]
    fn every_epoch_touches_n_samples() {
        let train = NoiseSpec::new(NoiseKind::Symmetric, 0.4, 5)
            .unwrap()
            .apply(&blobs(4, 203, 3.0, 4))
            .unwrap();
        for method in [Method::Ce, Method::Confes] {
            let (_, hist) = train_single(&small_cfg(method, 8), &train, &train, 0).unwrap();
            assert!(hist.records.iter().all(|r| r.samples_seen == train.len()));
        }
    }

    #[test]
    fn zero_threshold_trains_on_agreeing_samples() {
        let train = NoiseSpec::new(NoiseKind::Symmetric, 0.3, 5)
            .unwrap()
            .apply(&blobs(3, 240, 3.0, 4))
            .unwrap();
        let mut cfg = small_cfg(Method::Confes, 5);
        cfg.sieve = Some(SieveConfig::new(0.0, 1).unwrap());
        cfg.snapshot_epochs = (0..=5).collect();
        let (_, hist) = train_confes(&cfg, &train, &train).unwrap();
        for r in &hist.records {
            let s = r.sieve.as_ref().unwrap();
            assert_eq!(s.alpha, 0.0);
            let probs = predict_proba(hist.snapshot(r.epoch).unwrap(), train.features()).unwrap();
            for i in 0..train.len() {
                let agrees = argmax(probs.row(i)) == train.labels()[i];
                assert!(s.selected[i] == agrees || (s.selected[i] && s.conf_errors[i] == 0.0));
            }
        }
    }

    #[test]
    fn selection_is_reproducible_from_snapshots() {
        let train = NoiseSpec::new(NoiseKind::Pairflip, 0.3, 5)
            .unwrap()
            .apply(&blobs(3, 240, 3.0, 4))
            .unwrap();
        let mut cfg = small_cfg(Method::Confes, 6);
        cfg.sieve = Some(SieveConfig::new(0.3, 4).unwrap());
        cfg.snapshot_epochs = vec![0, 2, 5];
        let (_, hist) = train_confes(&cfg, &train, &train).unwrap();
        for &e in &[0usize, 2, 5] {
            let net = Network::from_bytes(&hist.snapshot(e).unwrap().to_bytes()).unwrap();
            let probs = predict_proba(&net, train.features()).unwrap();
            let (report, _) = sieve_epoch(&probs, &train, e, cfg.sieve.as_ref().unwrap()).unwrap();
            assert_eq!(&report, hist.records[e].sieve.as_ref().unwrap());
        }
        assert!(hist.snapshot(6).is_some());
    }

    #[test]
    fn empty_clean_set_falls_back_to_full_data() {
        // A network that always predicts class 0 with certainty, and labels that
        // are all 1, so every confidence error is 1.
        let layer =
            Layer::new(2, 2, vec![0.0; 4], vec![50.0, -50.0], Activation::Identity).unwrap();
        let net = Network::new(vec![layer]).unwrap();
        let base = blobs(2, 20, 3.0, 1);
        let train = base.with_labels(vec![1; 20]).unwrap();
        let probs = predict_proba(&net, train.features()).unwrap();
        let (report, indices) =
            sieve_epoch(&probs, &train, 0, &SieveConfig::new(0.5, 10).unwrap()).unwrap();
        assert!(report.fallback);
        assert_eq!(report.n_selected(), 0);
        assert_eq!(indices, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn clean_converged_model_keeps_everything() {
        let train = blobs(2, 200, 8.0, 21);
        let mut cfg = small_cfg(Method::Confes, 30);
        cfg.sieve = Some(SieveConfig::new(0.2, 5).unwrap());
        let (_, hist) = train_confes(&cfg, &train, &train).unwrap();
        let last = hist.records.last().unwrap().sieve.as_ref().unwrap();
        assert!(last.selected.iter().all(|&s| s));
        assert!(last.conf_errors.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn full_keep_coteaching_matches_ce() {
        let train = NoiseSpec::new(NoiseKind::Symmetric, 0.2, 5)
            .unwrap()
            .apply(&blobs(3, 150, 3.0, 4))
            .unwrap();
        let test = blobs(3, 60, 3.0, 8);
        let mut cfg = small_cfg(Method::Coteaching, 4);
        cfg.coteach = Some(CoteachConfig::new(0.0, 1).unwrap());
        for criterion in [Criterion::SmallLoss, Criterion::ConfidenceError] {
            let (nets, hists) = train_coteaching(&cfg, &train, &test, criterion).unwrap();
            let ce_cfg = small_cfg(Method::Ce, 4);
            for me in 0..2 {
                let (net, hist) = train_single(&ce_cfg, &train, &test, me as u32).unwrap();
                assert_eq!(nets[me], net);
                assert_eq!(hists[me].accuracies(), hist.accuracies());
            }
        }
    }

    #[test]
    fn coteaching_is_deterministic_and_discards() {
        let train = NoiseSpec::new(NoiseKind::Symmetric, 0.4, 5)
            .unwrap()
            .apply(&blobs(3, 150, 3.0, 4))
            .unwrap();
        let mut cfg = small_cfg(Method::ConfesCoteaching, 4);
        cfg.coteach = Some(CoteachConfig::new(0.4, 2).unwrap());
        let (a, ha) = train_coteaching(&cfg, &train, &train, Criterion::ConfidenceError).unwrap();
        let (b, hb) = train_coteaching(&cfg, &train, &train, Criterion::ConfidenceError).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha[0].to_csv(), hb[0].to_csv());
        assert_eq!(ha[0].records[0].samples_seen, 150);
        assert!(ha[0].records[3].samples_seen < 100);
        let acc = pair_accuracies(&ha);
        assert_eq!(
            acc[1],
            (ha[0].records[1].test_acc + ha[1].records[1].test_acc) / 2.0
        );
    }

    #[test]
    fn keep_fraction_schedule() {
        let c = CoteachConfig::new(0.4, 10).unwrap();
        assert_eq!(c.keep_fraction(0), 1.0);
        assert!((c.keep_fraction(5) - 0.8).abs() < 1e-15);
        assert!((c.keep_fraction(10) - 0.6).abs() < 1e-15);
        assert!((c.keep_fraction(50) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn evaluate_examples() {
        let layer = Layer::new(
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0; 2],
            Activation::Identity,
        )
        .unwrap();
        let net = Network::new(vec![layer]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 1.0]]).unwrap();
        let right = Dataset::new(x.clone(), vec![0, 1, 0], 2, None).unwrap();
        assert_eq!(evaluate(&net, &right).unwrap(), 1.0);
        let wrong = Dataset::new(x, vec![1, 0, 1], 2, None).unwrap();
        assert_eq!(evaluate(&net, &wrong).unwrap(), 0.0);
        let empty = right.subset(&[]);
        assert!(evaluate(&net, &empty).is_err());
    }

    #[test]
    fn history_csv_layout() {
        let train = NoiseSpec::new(NoiseKind::Symmetric, 0.3, 5)
            .unwrap()
            .apply(&blobs(2, 60, 3.0, 4))
            .unwrap();
        let (_, ce) = train_ce(&small_cfg(Method::Ce, 2), &train, &train).unwrap();
        let csv = ce.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], HISTORY_CSV_HEADER);
        assert_eq!(lines.len(), 3);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 14);
        assert_eq!(fields[0], "0");
        assert!(fields[4..11].iter().all(|f| f.is_empty()));
        assert!(!fields[11].is_empty());
        let (_, cf) = train_confes(&small_cfg(Method::Confes, 2), &train, &train).unwrap();
        let row: Vec<String> = cf
            .to_csv()
            .lines()
            .nth(2)
            .unwrap()
            .split(',')
            .map(str::to_owned)
            .collect();
        assert_eq!(row[10], "0");
        assert_eq!(
            row[5].parse::<usize>().unwrap(),
            cf.records[1].sieve.as_ref().unwrap().n_selected()
        );
    }

    #[test]
    fn methods_round_trip_names() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("dividemix".parse::<Method>().is_err());
    }
}
