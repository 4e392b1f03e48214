//! Finite-domain models with known class posteriors, used to check the
//! confidence-error probability-of-error bounds by Monte Carlo.
//!
//! A model is a table of points, each with a true posterior row `P(x)`. The
//! observed-label posterior is `P~_j(x) = sum_l T[l][j] P_l(x)`. An oracle
//! classifier is a fixed table of confidences within `eps` of `P~` at every
//! point. A draw picks a point uniformly, samples the observed label from
//! `P~(x)` and reads the oracle's confidences for that point.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::argmax;
use crate::noise::{sample_categorical, TransitionMatrix};
use crate::rng::{stream, Rng, Stream};

/// Row-sum tolerance for posterior tables.
const SIMPLEX_TOL: f64 = 1e-12;
/// Relative slack on the stored margin constants in the exhaustive check.
const CHECK_SLACK: f64 = 1e-12;
const MAX_PERTURB_ATTEMPTS: usize = 10_000;

/// Shape of the non-top classes when constructing a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailShape {
    /// Every non-top class carries the runner-up mass.
    Flat,
    /// One runner-up class; the others carry random fractions of its mass.
    Random,
}

impl fmt::Display for TailShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TailShape::Flat => "flat",
            TailShape::Random => "random",
        })
    }
}

impl FromStr for TailShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(TailShape::Flat),
            "random" => Ok(TailShape::Random),
            _ => Err(Error::invalid(format!("unknown tail shape '{s}'"))),
        }
    }
}

/// Finite domain with exact posteriors and margin constants `(mu, beta,
/// gamma)` such that `Pr_x[P_v(x) - P_w(x) <= t] <= beta * t^gamma` for all
/// `t` in `(0, mu]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TsybakovModel {
    k: usize,
    probs: Vec<Vec<f64>>,
    margin_floor: f64,
    mu: f64,
    beta: f64,
    gamma: f64,
}

impl TsybakovModel {
    /// Model over the given posterior rows. The margin floor is the smallest
    /// observed margin.
    pub fn from_table(probs: Vec<Vec<f64>>) -> Result<Self> {
        let floor = probs
            .iter()
            .map(|p| margin(p))
            .fold(f64::INFINITY, f64::min);
        Self::with_floor(probs, floor)
    }

    fn with_floor(probs: Vec<Vec<f64>>, margin_floor: f64) -> Result<Self> {
        let k = probs.first().map_or(0, Vec::len);
        if k < 2 {
            return Err(Error::invalid(
                "model needs at least one point and two classes",
            ));
        }
        for (x, p) in probs.iter().enumerate() {
            if p.len() != k {
                return Err(Error::invalid(format!(
                    "point {x} has {} classes, expected {k}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!(
                    "point {x} has a probability outside [0, 1]"
                )));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::invalid(format!("point {x} sums to {s}")));
            }
        }
        let margins: Vec<f64> = probs.iter().map(|p| margin(p)).collect();
        let (beta, gamma) = fit_margin_constants(&margins, margin_floor);
        let model = TsybakovModel {
            k,
            probs,
            margin_floor,
            mu: 1.0,
            beta,
            gamma,
        };
        model.check_margin_condition()?;
        Ok(model)
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn posterior(&self, x: usize) -> Result<&[f64]> {
        self.probs
            .get(x)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("point {x} not in a domain of {}", self.len())))
    }

    pub fn margin_floor(&self) -> f64 {
        self.margin_floor
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn margins(&self) -> Vec<f64> {
        self.probs.iter().map(|p| margin(p)).collect()
    }

    /// Exhaustive check of the margin condition at every jump of the
    /// empirical margin CDF inside `(0, mu]`, plus at `mu` itself.
    pub fn check_margin_condition(&self) -> Result<()> {
        let margins = self.margins();
        let n = margins.len() as f64;
        let mut ts: Vec<f64> = margins
            .iter()
            .copied()
            .filter(|&m| m > 0.0 && m <= self.mu)
            .collect();
        ts.push(self.mu);
        for t in ts {
            let mass = margins.iter().filter(|&&m| m <= t).count() as f64 / n;
            let bound = self.beta * t.powf(self.gamma);
            if mass > bound * (1.0 + CHECK_SLACK) {
                return Err(Error::Construction(format!(
                    "margin condition fails at t = {t}: mass {mass} > {bound}"
                )));
            }
        }
        Ok(())
    }
}

fn margin(p: &[f64]) -> f64 {
    let (v, w) = top_two(p);
    p[v] - p[w]
}

/// Best and second-best index, lowest index on ties.
fn top_two(p: &[f64]) -> (usize, usize) {
    let v = argmax(p);
    let mut w = if v == 0 { 1 } else { 0 };
    for (j, &pj) in p.iter().enumerate() {
        if j != v && pj > p[w] {
            w = j;
        }
    }
    (v, w)
}

/// `gamma` from a least-squares line through `log F(floor + s)` against
/// `log s` for the positive excesses `s`; `beta` is then the smallest value
/// making the condition hold at every observed margin.
fn fit_margin_constants(margins: &[f64], floor: f64) -> (f64, f64) {
    let n = margins.len() as f64;
    let mut sorted = margins.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cdf = |t: f64| sorted.partition_point(|&m| m <= t) as f64 / n;

    let mut distinct = sorted.clone();
    distinct.dedup();
    let pts: Vec<(f64, f64)> = distinct
        .iter()
        .filter(|&&m| m - floor > 1e-12)
        .map(|&m| ((m - floor).ln(), cdf(m).ln()))
        .collect();
    let mut gamma = 1.0;
    if pts.len() >= 2 {
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx > 0.0 && sxy / sxx > 0.0 {
            gamma = sxy / sxx;
        }
    }
    // F(t) / t^gamma peaks at a jump of F; t = 1 covers the one-hot case.
    let beta = distinct
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| cdf(m) / m.powf(gamma))
        .fold(1.0, f64::max);
    (beta, gamma)
}

/// Random model with `n_points` points whose margins are uniform on
/// `[margin_floor, 1]`.
pub fn make_tsybakov_model(
    k: usize,
    n_points: usize,
    margin_floor: f64,
    tail: TailShape,
    rng: &mut Rng,
) -> Result<TsybakovModel> {
    if k < 2 || n_points < 10 {
        return Err(Error::invalid("need k >= 2 and at least 10 points"));
    }
    if !(0.0..=1.0).contains(&margin_floor) {
        return Err(Error::Construction(format!(
            "no posterior has a margin of {margin_floor}; the floor must lie in [0, 1]"
        )));
    }
    let mut probs = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let v = rng.random_range(0..k);
        let m = if margin_floor < 1.0 {
            rng.random_range(margin_floor..=1.0)
        } else {
            1.0
        };
        let mut p = vec![0.0; k];
        match tail {
            TailShape::Flat => {
                let pw = (1.0 - m) / k as f64;
                p.fill(pw);
                p[v] = pw + m;
            }
            TailShape::Random => {
                let others: Vec<usize> = (0..k).filter(|&j| j != v).collect();
                let w = others[rng.random_range(0..others.len())];
                let ratios: Vec<(usize, f64)> = others
                    .iter()
                    .filter(|&&j| j != w)
                    .map(|&j| (j, rng.random::<f64>()))
                    .collect();
                let t = (1.0 - m) / (2.0 + ratios.iter().map(|r| r.1).sum::<f64>());
                p[w] = t;
                p[v] = t + m;
                for (j, r) in ratios {
                    p[j] = t * r;
                }
            }
        }
        probs.push(p);
    }
    TsybakovModel::with_floor(probs, margin_floor)
}

/// `(v, w)`: the Bayes prediction and the runner-up, lowest index on ties.
pub fn bayes_predict(model: &TsybakovModel, x: usize) -> Result<(usize, usize)> {
    Ok(top_two(model.posterior(x)?))
}

/// `P~_j = sum_l T[l][j] P_l`.
pub fn noisy_distribution(p: &[f64], t: &TransitionMatrix) -> Result<Vec<f64>> {
    let k = t.classes();
    if p.len() != k {
        return Err(Error::invalid(format!(
            "posterior has {} classes, transition matrix {k}",
            p.len()
        )));
    }
    let mut out = vec![0.0; k];
    for (l, &pl) in p.iter().enumerate() {
        for (o, &tau) in out.iter_mut().zip(t.row(l)) {
            *o += tau * pl;
        }
    }
    Ok(out)
}

pub fn noisy_posterior(model: &TsybakovModel, t: &TransitionMatrix, x: usize) -> Result<Vec<f64>> {
    noisy_distribution(model.posterior(x)?, t)
}

/// A distribution within `eps` of `target` in every coordinate: uniform
/// noise on `[-eps, eps]`, clamp to `[0, 1]`, renormalise, and redraw until
/// the deviation contract holds.
pub fn perturb(target: &[f64], eps: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::invalid(format!(
            "approximation error must lie in [0, 1), got {eps}"
        )));
    }
    if eps == 0.0 {
        return Ok(target.to_vec());
    }
    for _ in 0..MAX_PERTURB_ATTEMPTS {
        let mut c: Vec<f64> = target
            .iter()
            .map(|&p| (p + rng.random_range(-eps..=eps)).clamp(0.0, 1.0))
            .collect();
        let s: f64 = c.iter().sum();
        if s <= 0.0 {
            continue;
        }
        c.iter_mut().for_each(|v| *v /= s);
        if c.iter().zip(target).all(|(a, b)| (a - b).abs() <= eps) {
            return Ok(c);
        }
    }
    Err(Error::Internal(format!(
        "no perturbation within {eps} found after {MAX_PERTURB_ATTEMPTS} attempts"
    )))
}

pub fn perturbed_confidence(
    model: &TsybakovModel,
    t: &TransitionMatrix,
    eps: f64,
    x: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    perturb(&noisy_posterior(model, t, x)?, eps, rng)
}

/// A classifier's confidences at every domain point, within `eps` of the
/// noisy posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfidences {
    pub eps: f64,
    pub table: Vec<Vec<f64>>,
}

impl OracleConfidences {
    pub fn sample(
        model: &TsybakovModel,
        t: &TransitionMatrix,
        eps: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let table = (0..model.len())
            .map(|x| perturbed_confidence(model, t, eps, x, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(OracleConfidences { eps, table })
    }

    /// Largest deviation from the noisy posterior over the domain.
    pub fn max_deviation(&self, model: &TsybakovModel, t: &TransitionMatrix) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (x, c) in self.table.iter().enumerate() {
            let q = noisy_posterior(model, t, x)?;
            for (a, b) in c.iter().zip(&q) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }
}

/// One observed label per domain point, drawn from the noisy posterior.
pub fn sample_assignment(
    model: &TsybakovModel,
    t: &TransitionMatrix,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    (0..model.len())
        .map(|x| noisy_posterior(model, t, x).map(|q| sample_categorical(&q, rng)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Case {
    /// A noisy label accepted as clean.
    I,
    /// A clean label rejected as noisy.
    II,
    /// A clean label with low confidence.
    Lemma,
}

impl Case {
    pub const ALL: [Case; 3] = [Case::I, Case::II, Case::Lemma];
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::I => "I",
            Case::II => "II",
            Case::Lemma => "lemma",
        })
    }
}

fn check_shapes(
    model: &TsybakovModel,
    t: &TransitionMatrix,
    conf: Option<&OracleConfidences>,
    assignment: &[usize],
) -> Result<()> {
    if model.is_empty() {
        return Err(Error::invalid("empty domain"));
    }
    if t.classes() != model.classes() {
        return Err(Error::invalid(
            "transition matrix and model disagree on the class count",
        ));
    }
    if assignment.len() != model.len() || assignment.iter().any(|&y| y >= model.classes()) {
        return Err(Error::invalid(
            "assignment must give one valid label per point",
        ));
    }
    if let Some(c) = conf {
        if c.table.len() != model.len() || c.table.iter().any(|r| r.len() != model.classes()) {
            return Err(Error::invalid("confidence table does not match the domain"));
        }
    }
    Ok(())
}

/// `T[j][j] P_w + sum_{l != j} T[l][j] P_l`: the noisy mass on `j` with the
/// Bayes class replaced by the runner-up.
fn runner_up_mass(p: &[f64], w: usize, t: &TransitionMatrix, j: usize) -> f64 {
    let mut s = t.get(j, j) * p[w];
    for (l, &pl) in p.iter().enumerate() {
        if l != j {
            s += t.get(l, j) * pl;
        }
    }
    s
}

/// Case I: `max_x { -C[y~] + T[y'][y'] P_w + sum_{l != y'} T[l][y'] P_l }`.
/// Case II: `min_x { C[y'] - T[y~][y~] P_w - sum_{l != y~} T[l][y~] P_l }`.
/// Here `y~` is the point's assigned label and `y'` the oracle's argmax.
pub fn theorem1_thresholds(
    model: &TsybakovModel,
    t: &TransitionMatrix,
    conf: &OracleConfidences,
    assignment: &[usize],
    case: Case,
) -> Result<f64> {
    check_shapes(model, t, Some(conf), assignment)?;
    let terms = (0..model.len()).map(|x| {
        let p = &model.probs[x];
        let (_, w) = top_two(p);
        let c = &conf.table[x];
        let yp = argmax(c);
        let yt = assignment[x];
        match case {
            Case::I => -c[yt] + runner_up_mass(p, w, t, yp),
            _ => c[yp] - runner_up_mass(p, w, t, yt),
        }
    });
    match case {
        Case::I => Ok(terms.fold(f64::NEG_INFINITY, f64::max)),
        Case::II => Ok(terms.fold(f64::INFINITY, f64::min)),
        Case::Lemma => Err(Error::invalid("use lemma_threshold for the lemma event")),
    }
}

/// `min{1, min_x T[y~][y~] P_w + sum_{l != y~} T[l][y~] P_l}`, and whether
/// the outer minimum with 1 was binding.
pub fn lemma_threshold(
    model: &TsybakovModel,
    t: &TransitionMatrix,
    assignment: &[usize],
) -> Result<(f64, bool)> {
    check_shapes(model, t, None, assignment)?;
    let inner = (0..model.len())
        .map(|x| {
            let p = &model.probs[x];
            runner_up_mass(p, top_two(p).1, t, assignment[x])
        })
        .fold(f64::INFINITY, f64::min);
    Ok((inner.min(1.0), inner >= 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    pub empirical_p: f64,
    /// `beta * (eps / min_j T[j][j])^gamma`, plus `psi_hat` for case I.
    pub bound: f64,
    /// Frequency of `{y~ != v, v != y'}`; case I only.
    pub psi_hat: Option<f64>,
    pub mc_stderr: f64,
    pub n_draws: usize,
}

impl ErrorEstimate {
    pub fn violated(&self) -> bool {
        self.empirical_p > self.bound + 3.0 * self.mc_stderr
    }
}

pub const MIN_DRAWS: usize = 10_000;

/// Monte-Carlo frequency of the case's error event at threshold `alpha`.
pub fn estimate_error_probability(
    model: &TsybakovModel,
    t: &TransitionMatrix,
    conf: &OracleConfidences,
    alpha: f64,
    n_draws: usize,
    case: Case,
    rng: &mut Rng,
) -> Result<ErrorEstimate> {
    if n_draws < MIN_DRAWS {
        return Err(Error::invalid(format!(
            "need at least {MIN_DRAWS} draws, got {n_draws}"
        )));
    }
    check_shapes(model, t, Some(conf), &vec![0; model.len()])?;
    let noisy: Vec<Vec<f64>> = (0..model.len())
        .map(|x| noisy_posterior(model, t, x))
        .collect::<Result<_>>()?;
    let bayes: Vec<usize> = model.probs.iter().map(|p| argmax(p)).collect();
    let predicted: Vec<usize> = conf.table.iter().map(|c| argmax(c)).collect();

    let (mut hits, mut psi) = (0usize, 0usize);
    for _ in 0..n_draws {
        let x = rng.random_range(0..model.len());
        let y = sample_categorical(&noisy[x], rng);
        let c = &conf.table[x];
        let v = bayes[x];
        let ec = c[predicted[x]] - c[y];
        let event = match case {
            Case::I => y != v && ec <= alpha,
            Case::II => y == v && ec > alpha,
            Case::Lemma => y == v && c[y] < alpha,
        };
        hits += usize::from(event);
        psi += usize::from(y != v && v != predicted[x]);
    }
    let n = n_draws as f64;
    let p = hits as f64 / n;
    let psi_hat = (case == Case::I).then(|| psi as f64 / n);
    let core = model.beta * (conf.eps / t.min_diagonal()).powf(model.gamma);
    Ok(ErrorEstimate {
        empirical_p: p,
        bound: core + psi_hat.unwrap_or(0.0),
        psi_hat,
        mc_stderr: (p * (1.0 - p) / n).sqrt(),
        n_draws,
    })
}

/// One cell of a bound sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub case: Case,
    pub eps: f64,
    pub alpha: f64,
    pub estimate: ErrorEstimate,
    pub seed: u64,
    /// The lemma's outer minimum was binding, or `eps` is outside the range
    /// `eps < mu * min_j T[j][j]` that the bounds assume.
    pub degenerate: bool,
}

pub const BOUNDS_CSV_HEADER: &str = "case,eps,alpha,empirical_p,bound,mc_stderr,n_draws,seed";

pub fn bounds_csv<'a>(rows: impl IntoIterator<Item = &'a BoundRow>) -> String {
    let mut out = String::from(BOUNDS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let e = &r.estimate;
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            r.case, r.eps, r.alpha, e.empirical_p, e.bound, e.mc_stderr, e.n_draws, r.seed
        );
    }
    out
}

/// For each `eps`, sample an oracle table and evaluate all three events.
///
/// Streams of seed `s`: the label assignment behind the thresholds is
/// `(s, Assignment, 0)` and is shared across `eps`; the oracle table for the
/// `i`-th `eps` is `(s, Confidence, i)`; the draws of each case use
/// `(s, MonteCarlo, case)` for every `eps`, so the sweep compares the same
/// draws under increasing approximation error.
pub fn bounds_sweep(
    model: &TsybakovModel,
    t: &TransitionMatrix,
    eps_values: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<Vec<BoundRow>> {
    let assignment = sample_assignment(model, t, &mut stream(seed, Stream::Assignment, 0))?;
    let (lemma_alpha, lemma_binding) = lemma_threshold(model, t, &assignment)?;
    let limit = model.mu * t.min_diagonal();
    let mut rows = Vec::with_capacity(eps_values.len() * 3);
    for (i, &eps) in eps_values.iter().enumerate() {
        let conf = OracleConfidences::sample(
            model,
            t,
            eps,
            &mut stream(seed, Stream::Confidence, i as u32),
        )?;
        for (ci, case) in Case::ALL.into_iter().enumerate() {
            let alpha = match case {
                Case::Lemma => lemma_alpha,
                _ => theorem1_thresholds(model, t, &conf, &assignment, case)?,
            };
            let mut rng = stream(seed, Stream::MonteCarlo, ci as u32);
            let estimate =
                estimate_error_probability(model, t, &conf, alpha, n_draws, case, &mut rng)?;
            rows.push(BoundRow {
                case,
                eps,
                alpha,
                estimate,
                seed,
                degenerate: eps >= limit || (case == Case::Lemma && lemma_binding),
            });
        }
    }
    Ok(rows)
}
