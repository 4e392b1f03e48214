//! Datasets, synthetic blobs, splits, batching and CSV persistence.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::Rng;

/// Features with observed labels and, when known, the clean labels they were
/// derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    classes: usize,
    true_labels: Option<Vec<usize>>,
    noise_flags: Option<Vec<bool>>,
}

impl Dataset {
    /// Checked constructor. Noise flags are derived from `labels != true_labels`.
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        classes: usize,
        true_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::invalid(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        let check = |ls: &[usize]| -> Result<()> {
            match ls.iter().find(|&&l| l >= classes) {
                Some(l) => Err(Error::invalid(format!(
                    "label {l} >= class count {classes}"
                ))),
                None => Ok(()),
            }
        };
        check(&labels)?;
        let noise_flags = match &true_labels {
            Some(t) => {
                if t.len() != n {
                    return Err(Error::invalid("true label vector length mismatch"));
                }
                check(t)?;
                Some(labels.iter().zip(t).map(|(a, b)| a != b).collect())
            }
            None => None,
        };
        Ok(Dataset {
            features,
            labels,
            classes,
            true_labels,
            noise_flags,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn true_labels(&self) -> Option<&[usize]> {
        self.true_labels.as_deref()
    }

    pub fn noise_flags(&self) -> Option<&[bool]> {
        self.noise_flags.as_deref()
    }

    /// Replace the observed labels, keeping the current clean labels (or
    /// adopting the current labels as clean when none are recorded).
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        let truth = self
            .true_labels
            .clone()
            .unwrap_or_else(|| self.labels.clone());
        Dataset::new(self.features.clone(), labels, self.classes, Some(truth))
    }

    /// The same samples labelled with their clean labels when known.
    pub fn cleaned(&self) -> Dataset {
        let labels = self
            .true_labels
            .clone()
            .unwrap_or_else(|| self.labels.clone());
        Dataset::new(
            self.features.clone(),
            labels.clone(),
            self.classes,
            Some(labels),
        )
        .expect("clean labels already validated")
    }

    /// Rows at `indices`, in that order; duplicates allowed.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let pick = |v: &[usize]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            features: self.features.select_rows(indices),
            labels: pick(&self.labels),
            classes: self.classes,
            true_labels: self.true_labels.as_deref().map(pick),
            noise_flags: self
                .noise_flags
                .as_deref()
                .map(|f| indices.iter().map(|&i| f[i]).collect()),
        }
    }

    /// Labels used for stratification: clean labels when known.
    fn strata(&self) -> &[usize] {
        self.true_labels.as_deref().unwrap_or(&self.labels)
    }

    /// Per-class index lists keyed by `labels`.
    fn by_class(&self, labels: &[usize]) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.classes];
        for (i, &l) in labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }
}

/// `k` isotropic Gaussian clusters in `d` dimensions.
///
/// Centres are drawn uniformly in an origin-centred hypercube whose side is scaled so the
/// mean pairwise distance is about `1.2 * separation`, and rejected until every
/// pair is at least `separation` apart. Class sizes
/// differ by at most one and the sample order is shuffled.
pub fn gen_blobs(
    k: usize,
    n: usize,
    d: usize,
    separation: f64,
    std: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    if k < 2 || n < k || d < 2 {
        return Err(Error::invalid(format!(
            "blobs need k >= 2, n >= k, d >= 2 (got k={k}, n={n}, d={d})"
        )));
    }
    if !(separation > 0.0 && separation.is_finite()) || !(std >= 0.0 && std.is_finite()) {
        return Err(Error::invalid(
            "separation must be positive and std nonnegative",
        ));
    }
    const MAX_ATTEMPTS: usize = 10_000;
    let side = 1.2 * separation * (6.0 / d as f64).sqrt();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while centers.len() < k {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::Construction(format!(
                "could not place {k} centres {separation} apart in {d} dimensions"
            )));
        }
        let c: Vec<f64> = (0..d)
            .map(|_| rng.random_range(-side / 2.0..side / 2.0))
            .collect();
        let far = centers.iter().all(|o| {
            o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>() >= separation * separation
        });
        if far {
            centers.push(c);
        }
    }

    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(rng);
    let mut data = Vec::with_capacity(n * d);
    for &l in &labels {
        for &c in &centers[l] {
            let z: f64 = rng.sample(StandardNormal);
            data.push(c + std * z);
        }
    }
    let features = Matrix::from_vec(n, d, data)?;
    Dataset::new(features, labels.clone(), k, Some(labels))
}

/// Stratified train/test split; both parts keep the original row order.
pub fn split(ds: &Dataset, test_fraction: f64, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let groups = ds.by_class(ds.strata());
    let mut is_test = vec![false; ds.len()];
    for (class, mut members) in groups.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "class {class} has fewer than 2 samples; cannot stratify"
            )));
        }
        members.shuffle(rng);
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        for &i in &members[..n_test] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| is_test[i]);
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// A shuffled permutation of `0..n` cut into chunks of `batch_size`; the last
/// chunk may be short.
pub fn batches(n: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// `min(per_class, class size)` samples per observed label, without
/// replacement, returned in shuffled order.
pub fn balanced_subsample(ds: &Dataset, per_class: usize, rng: &mut Rng) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::invalid("per-class count must be positive"));
    }
    let mut chosen = Vec::new();
    for mut members in ds.by_class(&ds.labels) {
        members.shuffle(rng);
        chosen.extend_from_slice(&members[..per_class.min(members.len())]);
    }
    chosen.shuffle(rng);
    Ok(ds.subset(&chosen))
}

/// Write `ds` as CSV.
///
/// Header `f0,...,f{d-1},label[,true_label]`, comma-delimited, `\n` line
/// endings, one sample per line and a terminating newline. Features use
/// scientific notation with 17 significant digits (`{:.16e}`), which
/// round-trips every finite `f64` exactly.
pub fn to_csv(ds: &Dataset) -> String {
    let d = ds.dim();
    let mut out = String::with_capacity(ds.len() * (d + 2) * 24);
    for j in 0..d {
        let _ = write!(out, "f{j},");
    }
    out.push_str("label");
    if ds.true_labels.is_some() {
        out.push_str(",true_label");
    }
    out.push('\n');
    for i in 0..ds.len() {
        for v in ds.features.row(i) {
            let _ = write!(out, "{v:.16e},");
        }
        let _ = write!(out, "{}", ds.labels[i]);
        if let Some(t) = &ds.true_labels {
            let _ = write!(out, ",{}", t[i]);
        }
        out.push('\n');
    }
    out
}

pub fn save(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv(ds)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_csv(&text, path)
}

/// Parse the CSV layout written by [`to_csv`]. The class count is one more
/// than the largest label present.
pub fn from_csv(text: &str, path: &Path) -> Result<Dataset> {
    let err = |line: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message,
    };
    if !text.ends_with('\n') {
        let line = text.lines().count().max(1);
        return Err(err(
            line,
            0,
            "file does not end with a newline (truncated?)".into(),
        ));
    }
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| err(1, 0, "missing header".into()))?;
    let names: Vec<&str> = header.split(',').collect();
    let d = names.iter().take_while(|n| n.starts_with('f')).count();
    for (j, name) in names[..d].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(err(
                1,
                j + 1,
                format!("expected column f{j}, found {name:?}"),
            ));
        }
    }
    let rest = &names[d..];
    let has_truth = match rest {
        ["label"] => false,
        ["label", "true_label"] => true,
        _ => {
            return Err(err(
                1,
                d + 1,
                format!("expected label[,true_label], found {rest:?}"),
            ));
        }
    };
    if d == 0 {
        return Err(err(1, 1, "no feature columns".into()));
    }
    let width = d + 1 + has_truth as usize;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut truth = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(err(
                lineno,
                fields.len().min(width),
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        for (j, f) in fields[..d].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| err(lineno, j + 1, format!("bad float {f:?}")))?;
            if !v.is_finite() {
                return Err(err(lineno, j + 1, format!("non-finite value {f:?}")));
            }
            data.push(v);
        }
        let parse_label = |col: usize| -> Result<usize> {
            fields[col]
                .parse()
                .map_err(|_| err(lineno, col + 1, format!("bad label {:?}", fields[col])))
        };
        labels.push(parse_label(d)?);
        if has_truth {
            truth.push(parse_label(d + 1)?);
        }
    }
    let n = labels.len();
    let classes = labels
        .iter()
        .chain(&truth)
        .max()
        .map_or(2, |&m| (m + 1).max(2));
    let features = Matrix::from_vec(n, d, data)?;
    Dataset::new(features, labels, classes, has_truth.then_some(truth))
}
