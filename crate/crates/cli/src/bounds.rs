//! `confes bounds <config>`: Monte-Carlo check of the confidence-error
//! bounds on constructed finite-domain models.
//!
//! For each seed a model is drawn from stream `(seed, Model, 0)` and swept
//! over `bounds.eps`. All rows go to `bounds.csv`. Rows whose empirical
//! frequency exceeds the bound by more than three standard errors, and rows
//! outside the bounds' assumptions, are reported on stderr and recorded as
//! `flag.*` manifest entries.

use std::path::{Path, PathBuf};

use confes::noise::transition_matrix;
use confes::rng::{stream, Stream};
use confes::theory::{
    bounds_csv, bounds_sweep, make_tsybakov_model, BoundRow, TailShape, MIN_DRAWS,
};
use confes::{NoiseKind, NoiseSpec};

use crate::config::{join, RawConfig};
use crate::manifest::Manifest;
use crate::output::OutputDir;
use crate::run::Overrides;
use crate::CliError;

pub const BOUNDS_KEYS: &[&str] = &[
    "model.classes",
    "model.points",
    "model.margin_floor",
    "model.tail",
    "noise.kind",
    "noise.rate",
    "bounds.eps",
    "bounds.draws",
    "seeds",
    "out",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsConfig {
    pub classes: usize,
    pub points: usize,
    pub margin_floor: f64,
    pub tail: TailShape,
    pub noise: NoiseSpec,
    pub eps: Vec<f64>,
    pub draws: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub resolved: Vec<(String, String)>,
}

impl BoundsConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        Self::from_raw(&RawConfig::read(path)?, overrides)
    }

    pub fn from_raw(raw: &RawConfig, overrides: &Overrides) -> Result<Self, CliError> {
        raw.check_keys(BOUNDS_KEYS)?;
        let classes: usize = raw.get("model.classes", 4)?;
        let points: usize = raw.get("model.points", 200)?;
        let margin_floor: f64 = raw.get("model.margin_floor", 0.3)?;
        let tail: TailShape = raw.get("model.tail", TailShape::Flat)?;
        let kind: NoiseKind = raw.get("noise.kind", NoiseKind::Symmetric)?;
        let rate: f64 = raw.get("noise.rate", 0.2)?;
        let eps: Vec<f64> = raw.get_list("bounds.eps", vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.2])?;
        let draws: usize = raw.get("bounds.draws", MIN_DRAWS)?;
        if eps.is_empty() {
            return Err(CliError::Config("bounds.eps is empty".into()));
        }
        if draws < MIN_DRAWS {
            return Err(CliError::Config(format!(
                "bounds.draws must be at least {MIN_DRAWS}"
            )));
        }
        let seeds: Vec<u64> = match overrides.seed {
            Some(s) => vec![s],
            None => raw.get_list("seeds", vec![1])?,
        };
        if seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        let out = match &overrides.out {
            Some(o) => o.clone(),
            None => PathBuf::from(raw.get::<String>("out", "runs/bounds".to_owned())?),
        };
        // the seed is irrelevant for the analytic transition matrix
        let noise = NoiseSpec::new(kind, rate, 0)?;
        let resolved = vec![
            ("model.classes".to_owned(), classes.to_string()),
            ("model.points".to_owned(), points.to_string()),
            ("model.margin_floor".to_owned(), margin_floor.to_string()),
            ("model.tail".to_owned(), tail.to_string()),
            ("noise.kind".to_owned(), kind.to_string()),
            ("noise.rate".to_owned(), rate.to_string()),
            ("bounds.eps".to_owned(), join(&eps)),
            ("bounds.draws".to_owned(), draws.to_string()),
            ("seeds".to_owned(), join(&seeds)),
            ("out".to_owned(), out.display().to_string()),
        ];
        Ok(BoundsConfig {
            classes,
            points,
            margin_floor,
            tail,
            noise,
            eps,
            draws,
            seeds,
            out,
            resolved,
        })
    }
}

/// `(seed, beta, gamma)` of one constructed model.
pub type ModelConstants = (u64, f64, f64);

/// Rows of every seed plus the fitted constants per seed.
pub fn sweep(cfg: &BoundsConfig) -> Result<(Vec<BoundRow>, Vec<ModelConstants>), CliError> {
    let t = transition_matrix(&cfg.noise, cfg.classes)?;
    let mut rows = Vec::new();
    let mut constants = Vec::new();
    for &seed in &cfg.seeds {
        let model = make_tsybakov_model(
            cfg.classes,
            cfg.points,
            cfg.margin_floor,
            cfg.tail,
            &mut stream(seed, Stream::Model, 0),
        )?;
        constants.push((seed, model.beta(), model.gamma()));
        rows.extend(bounds_sweep(&model, &t, &cfg.eps, cfg.draws, seed)?);
    }
    Ok((rows, constants))
}

fn flag_of(r: &BoundRow) -> Option<&'static str> {
    if r.estimate.violated() {
        Some("violated")
    } else if r.degenerate {
        Some("degenerate")
    } else {
        None
    }
}

pub fn run_bounds(config: &Path, overrides: &Overrides) -> Result<PathBuf, CliError> {
    let cfg = BoundsConfig::load(config, overrides)?;
    let (rows, constants) = sweep(&cfg)?;
    let mut out = OutputDir::create(&cfg.out)?;
    if let Err(e) = out.write("bounds.csv", bounds_csv(&rows).as_bytes()) {
        out.quarantine();
        return Err(e);
    }
    let mut m = Manifest::new();
    m.push("command", "bounds");
    for (k, v) in &cfg.resolved {
        m.push(format!("config.{k}"), v);
    }
    for (seed, beta, gamma) in &constants {
        m.push(format!("model.{seed}.beta"), format!("{beta:.16e}"));
        m.push(format!("model.{seed}.gamma"), format!("{gamma:.16e}"));
    }
    for r in &rows {
        if let Some(flag) = flag_of(r) {
            eprintln!(
                "seed {} case {} eps {}: {flag} (empirical {:.4e}, bound {:.4e})",
                r.seed, r.case, r.eps, r.estimate.empirical_p, r.estimate.bound
            );
            m.push(format!("flag.{}.{}.{}", r.seed, r.case, r.eps), flag);
        }
    }
    out.commit(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(text: &str) -> RawConfig {
        RawConfig::parse(text, Path::new("b.cfg")).unwrap()
    }

    #[test]
    fn config_checks() {
        let c = BoundsConfig::from_raw(&raw(""), &Overrides::default()).unwrap();
        assert_eq!(c.draws, MIN_DRAWS);
        assert_eq!(c.resolved.len(), BOUNDS_KEYS.len());
        assert!(
            BoundsConfig::from_raw(&raw("bounds.draws = 100\n"), &Overrides::default()).is_err()
        );
        assert!(
            BoundsConfig::from_raw(&raw("model.tail = lumpy\n"), &Overrides::default()).is_err()
        );
    }

    #[test]
    fn instance_noise_is_unsupported() {
        let c =
            BoundsConfig::from_raw(&raw("noise.kind = instance\n"), &Overrides::default()).unwrap();
        let e = sweep(&c).unwrap_err();
        assert_eq!(e.kind(), "unsupported");
    }
}
