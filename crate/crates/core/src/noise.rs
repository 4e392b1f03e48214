//! Label corruption: symmetric, pairflip and instance-dependent noise.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{softmax_in_place, Matrix};
use crate::rng::{self, Rng, Stream};

/// Draw cap for rejection sampling of the truncated normal.
pub const TRUNCATED_NORMAL_MAX_DRAWS: usize = 10_000;

/// Standard deviation of the per-sample flip rates in instance-dependent noise.
pub const INSTANCE_RATE_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Symmetric,
    Pairflip,
    Instance,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::Pairflip => "pairflip",
            NoiseKind::Instance => "instance",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(NoiseKind::Symmetric),
            "pairflip" => Ok(NoiseKind::Pairflip),
            "instance" => Ok(NoiseKind::Instance),
            other => Err(Error::invalid(format!(
                "unknown noise kind {other:?} (expected symmetric, pairflip or instance)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, rate: f64, seed: u64) -> Result<Self> {
        check_rate(rate)?;
        Ok(NoiseSpec { kind, rate, seed })
    }

    /// Corrupt the observed labels of `ds`. The current labels become the
    /// recorded clean labels; features are untouched.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        let mut rng = rng::stream(self.seed, Stream::Noise, 0);
        let k = ds.classes();
        let (noisy, _) = match self.kind {
            NoiseKind::Symmetric => apply_symmetric(ds.labels(), self.rate, k, &mut rng)?,
            NoiseKind::Pairflip => apply_pairflip(ds.labels(), self.rate, k, &mut rng)?,
            NoiseKind::Instance => {
                apply_instance_dependent(ds.features(), ds.labels(), self.rate, k, &mut rng)?
            }
        };
        let clean = Dataset::new(ds.features().clone(), ds.labels().to_vec(), k, None)?;
        clean.with_labels(noisy)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!(
            "noise rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "label {l} out of range for {k} classes"
        )));
    }
    Ok(())
}

/// Normal(mean, std^2) restricted to `[lo, hi]`, by rejection.
pub fn truncated_normal(mean: f64, std: f64, lo: f64, hi: f64, rng: &mut Rng) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::invalid(format!(
            "empty truncation interval [{lo}, {hi}]"
        )));
    }
    if !(std >= 0.0 && std.is_finite() && mean.is_finite()) {
        return Err(Error::invalid("std must be finite and nonnegative"));
    }
    if std == 0.0 {
        return if (lo..=hi).contains(&mean) {
            Ok(mean)
        } else {
            Err(Error::invalid(
                "degenerate normal lies outside the truncation interval",
            ))
        };
    }
    for _ in 0..TRUNCATED_NORMAL_MAX_DRAWS {
        let z: f64 = rng.sample(StandardNormal);
        let v = mean + std * z;
        if (lo..=hi).contains(&v) {
            return Ok(v);
        }
    }
    Err(Error::Internal(format!(
        "truncated normal N({mean}, {std}^2) on [{lo}, {hi}] exceeded {TRUNCATED_NORMAL_MAX_DRAWS} draws"
    )))
}

/// Flip each label with probability `rate` to a uniformly chosen different class.
pub fn apply_symmetric(
    labels: &[usize],
    rate: f64,
    k: usize,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<bool>)> {
    check_rate(rate)?;
    check_labels(labels, k)?;
    Ok(flip_each(labels, rate, rng, |y, rng| {
        let r = rng.random_range(0..k - 1);
        if r >= y {
            r + 1
        } else {
            r
        }
    }))
}

/// Flip each label with probability `rate` to `(label + 1) mod k`.
pub fn apply_pairflip(
    labels: &[usize],
    rate: f64,
    k: usize,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<bool>)> {
    check_rate(rate)?;
    check_labels(labels, k)?;
    Ok(flip_each(labels, rate, rng, |y, _| (y + 1) % k))
}

fn flip_each(
    labels: &[usize],
    rate: f64,
    rng: &mut Rng,
    mut target: impl FnMut(usize, &mut Rng) -> usize,
) -> (Vec<usize>, Vec<bool>) {
    let mut out = Vec::with_capacity(labels.len());
    let mut flags = Vec::with_capacity(labels.len());
    for &y in labels {
        let u: f64 = rng.random();
        let new = if u < rate { target(y, rng) } else { y };
        out.push(new);
        flags.push(new != y);
    }
    (out, flags)
}

/// Per-sample flip rates and class projections of instance-dependent noise.
#[derive(Debug, Clone)]
pub struct InstanceNoise {
    /// `q_i`, one per sample.
    pub flip_rates: Vec<f64>,
    /// One `d x k` row-major matrix per class.
    pub projections: Vec<Vec<f64>>,
    dim: usize,
    classes: usize,
}

impl InstanceNoise {
    /// Draw `q ~ TruncNormal(rate, 0.1^2, [0, 1])` for every sample, then one
    /// standard-normal `d x k` projection per class, shared by all samples.
    pub fn sample(n: usize, d: usize, rate: f64, k: usize, rng: &mut Rng) -> Result<Self> {
        check_rate(rate)?;
        let flip_rates = (0..n)
            .map(|_| truncated_normal(rate, INSTANCE_RATE_STD, 0.0, 1.0, rng))
            .collect::<Result<Vec<_>>>()?;
        let projections = (0..k)
            .map(|_| (0..d * k).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        Ok(InstanceNoise {
            flip_rates,
            projections,
            dim: d,
            classes: k,
        })
    }

    /// Noisy-label distribution of sample `x` with clean label `y` and flip
    /// rate `q`: mass `1 - q` on `y`, and `q * softmax(x . w_y)` spread over
    /// the other classes.
    pub fn row(&self, x: &[f64], y: usize, q: f64) -> Vec<f64> {
        let k = self.classes;
        let w = &self.projections[y];
        let mut p = vec![0.0; k];
        for (j, &xj) in x.iter().enumerate() {
            let wr = &w[j * k..(j + 1) * k];
            for (pc, &wv) in p.iter_mut().zip(wr) {
                *pc += xj * wv;
            }
        }
        p[y] = f64::NEG_INFINITY;
        softmax_in_place(&mut p);
        for v in p.iter_mut() {
            *v *= q;
        }
        p[y] = 1.0 - q;
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Instance-dependent noise: each sample flips with its own rate `q_i`, and
/// the target class depends on its features.
pub fn apply_instance_dependent(
    features: &Matrix,
    labels: &[usize],
    rate: f64,
    k: usize,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<bool>)> {
    check_labels(labels, k)?;
    if features.rows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} feature rows for {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if features.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite feature value"));
    }
    let model = InstanceNoise::sample(labels.len(), features.cols(), rate, k, rng)?;
    let mut out = Vec::with_capacity(labels.len());
    let mut flags = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        let p = model.row(features.row(i), y, model.flip_rates[i]);
        let new = sample_categorical(&p, rng);
        out.push(new);
        flags.push(new != y);
    }
    Ok((out, flags))
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn sample_categorical(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the final cumulative sum: take the last class
    // with positive mass.
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

/// Row-stochastic `k x k` matrix; entry `(l, j)` is the probability that
/// clean label `l` is observed as `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(k: usize, entries: Vec<f64>) -> Result<Self> {
        if k < 2 || entries.len() != k * k {
            return Err(Error::invalid(
                "transition matrix must be k x k with k >= 2",
            ));
        }
        if entries.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("transition entries must lie in [0, 1]"));
        }
        for (l, row) in entries.chunks_exact(k).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("row {l} sums to {s}")));
            }
        }
        Ok(TransitionMatrix { k, entries })
    }

    pub fn identity(k: usize) -> Self {
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            entries[i * k + i] = 1.0;
        }
        TransitionMatrix { k, entries }
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.k + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.entries[from * self.k..(from + 1) * self.k]
    }

    pub fn min_diagonal(&self) -> f64 {
        (0..self.k)
            .map(|j| self.get(j, j))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Analytic transition matrix of class-conditional noise.
pub fn transition_matrix(spec: &NoiseSpec, k: usize) -> Result<TransitionMatrix> {
    check_rate(spec.rate)?;
    if k < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    let tau = spec.rate;
    let mut entries = vec![0.0; k * k];
    match spec.kind {
        NoiseKind::Symmetric => {
            let off = tau / (k - 1) as f64;
            for l in 0..k {
                for j in 0..k {
                    entries[l * k + j] = if l == j { 1.0 - tau } else { off };
                }
            }
        }
        NoiseKind::Pairflip => {
            for l in 0..k {
                entries[l * k + l] += 1.0 - tau;
                entries[l * k + (l + 1) % k] += tau;
            }
        }
        NoiseKind::Instance => {
            return Err(Error::Unsupported(
                "instance-dependent noise has no single transition matrix".into(),
            ));
        }
    }
    TransitionMatrix::new(k, entries)
}
