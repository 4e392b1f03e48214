//! Sample-selection criteria and the clean-plus-duplicates rebuild.

use std::fmt::Write as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::Confusion2x2;
use crate::nn::{argmax, PROB_FLOOR};

/// Tolerance on `sum(probs) == 1` when validating a distribution.
const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SieveConfig {
    /// Initial threshold on the confidence error.
    pub alpha0: f64,
    /// Epochs over which the threshold decays linearly to zero.
    pub warmup_epochs: usize,
}

impl SieveConfig {
    pub fn new(alpha0: f64, warmup_epochs: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha0) {
            return Err(Error::invalid(format!(
                "alpha must lie in [0, 1], got {alpha0}"
            )));
        }
        if warmup_epochs == 0 {
            return Err(Error::invalid("warm-up epochs must be at least 1"));
        }
        Ok(SieveConfig {
            alpha0,
            warmup_epochs,
        })
    }
}

impl Default for SieveConfig {
    fn default() -> Self {
        SieveConfig {
            alpha0: 0.2,
            warmup_epochs: 30,
        }
    }
}

/// Outcome of sieving the full training set at the start of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SieveReport {
    pub epoch: usize,
    pub alpha: f64,
    pub conf_errors: Vec<f64>,
    pub selected: Vec<bool>,
    /// Present when the training set carries ground-truth noise flags.
    pub confusion: Option<Confusion2x2>,
    /// The sieve selected nothing and the epoch trained on the full set.
    pub fallback: bool,
}

impl SieveReport {
    pub fn n_selected(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

pub const SIEVE_CSV_HEADER: &str = "epoch,alpha_i,n_selected,tp,fp,fn,tn";

/// One row per epoch: `epoch,alpha_i,n_selected,tp,fp,fn,tn`, where tp =
/// noisy rejected, fp = clean rejected, fn = noisy selected, tn = clean
/// selected. Confusion columns are empty without ground truth.
pub fn sieve_csv<'a>(reports: impl IntoIterator<Item = &'a SieveReport>) -> String {
    let mut out = String::from(SIEVE_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{},{:.16e},{}", r.epoch, r.alpha, r.n_selected());
        match &r.confusion {
            Some(c) => {
                let _ = write!(
                    out,
                    ",{},{},{},{}",
                    c.tp_noisy_rejected,
                    c.fp_clean_rejected,
                    c.fn_noisy_selected,
                    c.tn_clean_selected
                );
            }
            None => out.push_str(",,,,"),
        }
        out.push('\n');
    }
    out
}

fn check_distribution(probs: &[f64], label: usize) -> Result<()> {
    if probs.len() < 2 {
        return Err(Error::invalid("distribution needs at least two classes"));
    }
    if label >= probs.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("probabilities must lie in [0, 1]"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// `max_j probs[j] - probs[given_label]`.
pub fn confidence_error(probs: &[f64], given_label: usize) -> Result<f64> {
    check_distribution(probs, given_label)?;
    Ok(confidence_error_unchecked(probs, given_label))
}

#[inline]
pub(crate) fn confidence_error_unchecked(probs: &[f64], given_label: usize) -> f64 {
    probs[argmax(probs)] - probs[given_label]
}

/// `probs[given_label] / max_j probs[j]`.
pub fn lrt_score(probs: &[f64], given_label: usize) -> Result<f64> {
    check_distribution(probs, given_label)?;
    let max = probs[argmax(probs)];
    if max < PROB_FLOOR {
        return Err(Error::invalid("maximum probability below floor"));
    }
    Ok(probs[given_label] / max)
}

/// `max(alpha0 - epoch * alpha0 / warmup, 0)`.
pub fn sieve_threshold(epoch: usize, cfg: &SieveConfig) -> f64 {
    // exact zero from the end of warm-up on; the formula can leave rounding residue
    if epoch >= cfg.warmup_epochs {
        return 0.0;
    }
    let a = cfg.alpha0 - epoch as f64 * cfg.alpha0 / cfg.warmup_epochs as f64;
    a.max(0.0)
}

/// `conf_errors[i] <= alpha`, inclusive.
pub fn select_clean(conf_errors: &[f64], alpha: f64) -> Vec<bool> {
    conf_errors.iter().map(|&e| e <= alpha).collect()
}

/// Indices of the rebuilt dataset: every selected sample, then selected
/// samples again in selection order, cycling until the length is restored.
pub fn rebuild_indices(mask: &[bool]) -> Result<Vec<usize>> {
    let clean: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| s.then_some(i))
        .collect();
    if clean.is_empty() {
        return Err(Error::EmptyCleanSet);
    }
    Ok(clean.iter().copied().cycle().take(mask.len()).collect())
}

/// Clean samples followed by their duplicates, with the original size.
pub fn rebuild_dataset(ds: &Dataset, mask: &[bool]) -> Result<Dataset> {
    if mask.len() != ds.len() {
        return Err(Error::invalid(format!(
            "mask of length {} for {} samples",
            mask.len(),
            ds.len()
        )));
    }
    Ok(ds.subset(&rebuild_indices(mask)?))
}

/// Mask of the `ceil(keep_fraction * n)` smallest values; ties go to the
/// lower index.
pub fn small_loss_select(losses: &[f64], keep_fraction: f64) -> Result<Vec<bool>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "keep fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("non-finite loss"));
    }
    let n = losses.len();
    // Guard the ceiling against products like (1/3) * 3 landing a hair above 1.
    let keep = ((keep_fraction * n as f64) - 1e-9)
        .ceil()
        .clamp(0.0, n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &i in &order[..keep] {
        mask[i] = true;
    }
    Ok(mask)
}
