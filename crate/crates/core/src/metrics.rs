//! Post-hoc diagnostics: sieve confusion, confidence histograms and
//! mean-confidence tracks. All functions are pure and order-independent.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::{argmax, Matrix};

/// Cross-tabulation of ground truth (clean / noisy) against the sieve
/// decision (selected / rejected). "Positive" means noisy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion2x2 {
    pub tn_clean_selected: usize,
    pub fp_clean_rejected: usize,
    pub fn_noisy_selected: usize,
    pub tp_noisy_rejected: usize,
}

impl Confusion2x2 {
    pub fn total(&self) -> usize {
        self.tn_clean_selected
            + self.fp_clean_rejected
            + self.fn_noisy_selected
            + self.tp_noisy_rejected
    }

    /// `(P[noisy, selected], P[clean, rejected])` over all samples.
    pub fn error_probabilities(&self) -> Option<(f64, f64)> {
        let n = self.total();
        (n > 0).then(|| {
            (
                self.fn_noisy_selected as f64 / n as f64,
                self.fp_clean_rejected as f64 / n as f64,
            )
        })
    }
}

pub fn sieve_confusion(selected: &[bool], noise_flags: &[bool]) -> Result<Confusion2x2> {
    if selected.len() != noise_flags.len() {
        return Err(Error::invalid(format!(
            "selection mask has {} entries, noise flags {}",
            selected.len(),
            noise_flags.len()
        )));
    }
    let mut c = Confusion2x2::default();
    for (&s, &noisy) in selected.iter().zip(noise_flags) {
        match (noisy, s) {
            (false, true) => c.tn_clean_selected += 1,
            (false, false) => c.fp_clean_rejected += 1,
            (true, true) => c.fn_noisy_selected += 1,
            (true, false) => c.tp_noisy_rejected += 1,
        }
    }
    Ok(c)
}

/// Ratios derived from a [`Confusion2x2`]; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SieveQuality {
    pub clean_precision: Option<f64>,
    pub clean_recall: Option<f64>,
    pub noisy_recall: Option<f64>,
}

pub fn precision_recall(c: &Confusion2x2) -> SieveQuality {
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    SieveQuality {
        clean_precision: ratio(
            c.tn_clean_selected,
            c.tn_clean_selected + c.fn_noisy_selected,
        ),
        clean_recall: ratio(
            c.tn_clean_selected,
            c.tn_clean_selected + c.fp_clean_rejected,
        ),
        noisy_recall: ratio(
            c.tp_noisy_rejected,
            c.tp_noisy_rejected + c.fn_noisy_selected,
        ),
    }
}

/// Equal-width histograms over `[0, 1]`, split by a group mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupHistogram {
    pub bins: usize,
    /// Counts for samples whose group flag is true.
    pub in_group: Vec<usize>,
    /// Counts for the rest.
    pub out_group: Vec<usize>,
}

impl GroupHistogram {
    pub fn edges(&self, bin: usize) -> (f64, f64) {
        (
            bin as f64 / self.bins as f64,
            (bin + 1) as f64 / self.bins as f64,
        )
    }

    /// `bin_lo,bin_hi,count_clean,count_noisy`, treating the group as noisy.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count_clean,count_noisy\n");
        for b in 0..self.bins {
            let (lo, hi) = self.edges(b);
            let _ = writeln!(
                out,
                "{lo:.16e},{hi:.16e},{},{}",
                self.out_group[b], self.in_group[b]
            );
        }
        out
    }
}

/// Bins are `[lo, hi)` except the last, which also takes 1.0.
pub fn confidence_histogram(values: &[f64], group: &[bool], bins: usize) -> Result<GroupHistogram> {
    if bins < 2 {
        return Err(Error::invalid("need at least two bins"));
    }
    if values.len() != group.len() {
        return Err(Error::invalid("values and group mask differ in length"));
    }
    let mut h = GroupHistogram {
        bins,
        in_group: vec![0; bins],
        out_group: vec![0; bins],
    };
    for (&v, &g) in values.iter().zip(group) {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("value {v} outside [0, 1]")));
        }
        let b = bin_of(v, bins);
        if g {
            h.in_group[b] += 1;
        } else {
            h.out_group[b] += 1;
        }
    }
    Ok(h)
}

fn bin_of(v: f64, bins: usize) -> usize {
    let nb = bins as f64;
    let mut b = ((v * nb).floor() as usize).min(bins - 1);
    // Correct for rounding in v * bins so the edge comparison is exact.
    if b > 0 && v < b as f64 / nb {
        b -= 1;
    } else if b + 1 < bins && v >= (b + 1) as f64 / nb {
        b += 1;
    }
    b
}

/// Mean confidences over the noisy samples, in their clean label, in their
/// given (noisy) label, and in the predicted label.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConfidenceTracks {
    pub clean: Option<f64>,
    pub noisy: Option<f64>,
    pub predicted: Option<f64>,
}

pub fn mean_confidence_tracks(
    probs: &Matrix,
    clean_labels: &[usize],
    noisy_labels: &[usize],
    noise_flags: &[bool],
) -> Result<ConfidenceTracks> {
    let n = probs.rows();
    if clean_labels.len() != n || noisy_labels.len() != n || noise_flags.len() != n {
        return Err(Error::invalid("label vectors must match probability rows"));
    }
    let k = probs.cols();
    if clean_labels.iter().chain(noisy_labels).any(|&l| l >= k) {
        return Err(Error::invalid("label out of range"));
    }
    let (mut c, mut y, mut p, mut m) = (0.0, 0.0, 0.0, 0usize);
    for i in (0..n).filter(|&i| noise_flags[i]) {
        let row = probs.row(i);
        c += row[clean_labels[i]];
        y += row[noisy_labels[i]];
        p += row[argmax(row)];
        m += 1;
    }
    if m == 0 {
        return Ok(ConfidenceTracks::default());
    }
    let m = m as f64;
    Ok(ConfidenceTracks {
        clean: Some(c / m),
        noisy: Some(y / m),
        predicted: Some(p / m),
    })
}

/// Mean of the last `window` values (or of all values if fewer).
pub fn window_mean(values: &[f64], window: usize) -> Option<f64> {
    let w = window.min(values.len());
    (w > 0).then(|| values[values.len() - w..].iter().sum::<f64>() / w as f64)
}

/// Least-squares slope of `values` against their index.
pub fn trend_slope(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mx = (n - 1) as f64 / 2.0;
    let my = values.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in values.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (v - my);
        sxx += dx * dx;
    }
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng as _;

    #[test]
    fn confusion_examples() {
        let c = sieve_confusion(&[true; 4], &[false; 4]).unwrap();
        assert_eq!(c.tn_clean_selected, 4);
        assert_eq!(c.total(), 4);
        let flags = [true, false, true, false, false];
        let sel: Vec<bool> = flags.iter().map(|f| !f).collect();
        let c = sieve_confusion(&sel, &flags).unwrap();
        assert_eq!((c.fp_clean_rejected, c.fn_noisy_selected), (0, 0));
        assert!(sieve_confusion(&[true], &[true, false]).is_err());
    }

    #[test]
    fn confusion_matches_naive_counts() {
        let mut rng = stream(1, Stream::Model, 0);
        for _ in 0..50 {
            let n = rng.random_range(1..300);
            let sel: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let flags: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let c = sieve_confusion(&sel, &flags).unwrap();
            let count = |s: bool, f: bool| (0..n).filter(|&i| sel[i] == s && flags[i] == f).count();
            assert_eq!(c.tn_clean_selected, count(true, false));
            assert_eq!(c.fp_clean_rejected, count(false, false));
            assert_eq!(c.fn_noisy_selected, count(true, true));
            assert_eq!(c.tp_noisy_rejected, count(false, true));
            assert_eq!(c.total(), n);
        }
    }

    #[test]
    fn precision_recall_examples() {
        let perfect = Confusion2x2 {
            tn_clean_selected: 6,
            fp_clean_rejected: 0,
            fn_noisy_selected: 0,
            tp_noisy_rejected: 4,
        };
        let q = precision_recall(&perfect);
        assert_eq!(
            (q.clean_precision, q.clean_recall, q.noisy_recall),
            (Some(1.0), Some(1.0), Some(1.0))
        );

        let everything = Confusion2x2 {
            tn_clean_selected: 6,
            fp_clean_rejected: 0,
            fn_noisy_selected: 4,
            tp_noisy_rejected: 0,
        };
        let q = precision_recall(&everything);
        assert_eq!((q.noisy_recall, q.clean_recall), (Some(0.0), Some(1.0)));

        let fig = Confusion2x2 {
            tn_clean_selected: 55,
            fp_clean_rejected: 5,
            fn_noisy_selected: 2,
            tp_noisy_rejected: 38,
        };
        let q = precision_recall(&fig);
        assert!((q.clean_precision.unwrap() - 55.0 / 57.0).abs() < 1e-15);
        assert!((q.clean_precision.unwrap() - 0.965).abs() < 1e-3);

        let empty = precision_recall(&Confusion2x2::default());
        assert_eq!(
            empty,
            SieveQuality {
                clean_precision: None,
                clean_recall: None,
                noisy_recall: None
            }
        );
    }

    #[test]
    fn histogram_edges() {
        let h = confidence_histogram(&[0.0; 7], &[false; 7], 10).unwrap();
        assert_eq!(h.out_group[0], 7);
        let h = confidence_histogram(
            &[1.0, 0.1, 0.3, 0.7, 0.9999],
            &[true, false, false, false, false],
            10,
        )
        .unwrap();
        assert_eq!(h.in_group[9], 1);
        assert_eq!(h.out_group[1], 1);
        assert_eq!(h.out_group[3], 1);
        assert_eq!(h.out_group[7], 1);
        assert_eq!(h.out_group[9], 1);
        assert!(confidence_histogram(&[1.5], &[true], 10).is_err());
        assert!(confidence_histogram(&[0.5], &[true], 1).is_err());
        for b in 1..10 {
            let edge = b as f64 / 10.0;
            assert_eq!(bin_of(edge, 10), b, "edge {edge}");
        }
    }

    #[test]
    fn histogram_uniform_counts_within_three_sigma() {
        let mut rng = stream(2, Stream::Model, 0);
        let n = 100_000;
        let values: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let h = confidence_histogram(&values, &vec![false; n], 10).unwrap();
        let expect = n as f64 / 10.0;
        let sigma = (n as f64 * 0.1 * 0.9).sqrt();
        for &c in &h.out_group {
            assert!((c as f64 - expect).abs() < 3.0 * sigma, "{c}");
        }
        assert_eq!(h.out_group.iter().sum::<usize>(), n);
    }

    #[test]
    fn tracks_examples() {
        let k = 4;
        let probs = Matrix::from_vec(3, k, vec![0.25; 12]).unwrap();
        let t =
            mean_confidence_tracks(&probs, &[0, 1, 2], &[1, 2, 3], &[true, true, true]).unwrap();
        assert_eq!(
            (t.clean, t.noisy, t.predicted),
            (Some(0.25), Some(0.25), Some(0.25))
        );

        // hand computation: samples 0 and 2 are noisy
        let probs = Matrix::from_rows(&[
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.7, 0.1],
            vec![0.1, 0.2, 0.7],
        ])
        .unwrap();
        let t =
            mean_confidence_tracks(&probs, &[0, 1, 2], &[1, 1, 0], &[true, false, true]).unwrap();
        assert!((t.clean.unwrap() - (0.6 + 0.7) / 2.0).abs() < 1e-15);
        assert!((t.noisy.unwrap() - (0.3 + 0.1) / 2.0).abs() < 1e-15);
        assert!((t.predicted.unwrap() - (0.6 + 0.7) / 2.0).abs() < 1e-15);

        let none = mean_confidence_tracks(&probs, &[0, 1, 2], &[0, 1, 2], &[false; 3]).unwrap();
        assert_eq!(none, ConfidenceTracks::default());
    }

    #[test]
    fn window_and_trend() {
        let acc = [0.1, 0.5, 0.8, 0.8, 0.9, 0.9, 1.0];
        assert!((window_mean(&acc, 5).unwrap() - 0.88).abs() < 1e-15);
        assert_eq!(window_mean(&[], 5), None);
        assert!((window_mean(&[0.5, 0.7], 5).unwrap() - 0.6).abs() < 1e-15);
        assert!((trend_slope(&[1.0, 3.0, 5.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(trend_slope(&[3.0, 2.0, 2.5, 0.0]).unwrap() < 0.0);
    }
}
