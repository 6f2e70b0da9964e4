//! Experiment configuration files (JSON).

use std::path::{Path, PathBuf};

use igm_core::diagnostics::{Checks, Tolerances};
use igm_core::engine::ErrorModel;
use igm_core::problem::Loss;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generate::GeneratorSpec;

pub const DEFAULT_LS_ITERATIONS: usize = 500;
pub const DEFAULT_LOGISTIC_ITERATIONS: usize = 5000;
pub const SEED_ENV: &str = "IGM_LAB_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSource {
    /// CSV file with header `f1,...,fn,label`.
    Dataset(PathBuf),
    Generator(GeneratorSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialPoint {
    #[default]
    Zeros,
    /// Uniform in the ball of this radius, drawn from the run seed.
    RandomBall { radius: f64 },
}

impl InitialPoint {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let InitialPoint::RandomBall { radius } = *self {
            if !(radius >= 0.0 && radius.is_finite()) {
                return Err(ConfigError::Invalid(format!(
                    "ball radius {radius} must be >= 0"
                )));
            }
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            InitialPoint::Zeros => vec![0.0; dim],
            InitialPoint::RandomBall { radius } => {
                let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                let norm = igm_core::linalg::norm(&v);
                let u: f64 = rng.random();
                let r = radius * u.powf(1.0 / dim as f64);
                if norm > 0.0 {
                    v.iter_mut().for_each(|c| *c *= r / norm);
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    /// Seeds `0..count`.
    Count {
        count: u64,
    },
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::List(vec![0])
    }
}

impl Seeds {
    pub fn expand(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Count { count } => (0..*count).collect(),
        }
    }
}

fn default_tail_fraction() -> f64 {
    0.5
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    /// Required for datasets; for generators it defaults to the generator's loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<Loss>,
    pub error_model: ErrorModel,
    #[serde(default)]
    pub x0: InitialPoint,
    /// Defaults to 500 for least squares and 5000 for logistic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub verify: Checks,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    /// Previously issued optimal-set certificate; computed on the fly when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let ProblemSource::Dataset(p) = &mut self.problem {
            join(p);
        }
        if let Some(p) = &mut self.certificate {
            join(p);
        }
        join(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        match (&self.problem, self.loss) {
            (ProblemSource::Dataset(_), None) => {
                return bad("a dataset problem needs an explicit loss".into())
            }
            (ProblemSource::Generator(g), Some(loss)) if g.loss() != loss => {
                return bad(format!(
                    "loss {} does not match the {} generator",
                    loss.name(),
                    g.loss().name()
                ))
            }
            (ProblemSource::Generator(g), _) => g
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            _ => {}
        }
        if self.iterations == Some(0) {
            return bad("iterations must be at least 1".into());
        }
        if self.seeds.expand().is_empty() {
            return bad("seed list is empty".into());
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return bad(format!(
                "tail_fraction {} outside (0, 1]",
                self.tail_fraction
            ));
        }
        let t = &self.tolerances;
        if ![
            t.descent_rel,
            t.envelope_rel,
            t.recursion_abs,
            t.error_bound_abs,
        ]
        .iter()
        .all(|v| v.is_finite())
        {
            return bad("tolerances must be finite".into());
        }
        self.x0.validate()
    }

    pub fn loss(&self) -> Loss {
        match (&self.problem, self.loss) {
            (_, Some(loss)) => loss,
            (ProblemSource::Generator(g), None) => g.loss(),
            (ProblemSource::Dataset(_), None) => Loss::Square,
        }
    }

    pub fn iterations(&self) -> usize {
        self.iterations.unwrap_or(match self.loss() {
            Loss::Square => DEFAULT_LS_ITERATIONS,
            Loss::Logistic => DEFAULT_LOGISTIC_ITERATIONS,
        })
    }

    /// Applies `IGM_LAB_SEED` if set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                let seed = v
                    .trim()
                    .parse()
                    .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}={v:?} is not a seed")))?;
                self.seeds = Seeds::List(vec![seed]);
                Ok(())
            }
            Err(_) => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "problem": {"dataset": "tiny.csv"},
        "loss": "square",
        "error_model": {"kind": "zero"}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.iterations(), DEFAULT_LS_ITERATIONS);
        assert_eq!(cfg.seeds.expand(), vec![0]);
        assert_eq!(cfg.x0, InitialPoint::Zeros);
        assert_eq!(cfg.verify, Checks::default());
        assert_eq!(cfg.tail_fraction, 0.5);
    }

    #[test]
    fn seeds_list_or_count() {
        let cfg = ExperimentConfig::from_json(
            &MINIMAL.replace("\"loss\"", "\"seeds\": {\"count\": 3}, \"loss\""),
        )
        .unwrap();
        assert_eq!(cfg.seeds.expand(), vec![0, 1, 2]);
        let cfg = ExperimentConfig::from_json(
            &MINIMAL.replace("\"loss\"", "\"seeds\": [4, 9], \"loss\""),
        )
        .unwrap();
        assert_eq!(cfg.seeds.expand(), vec![4, 9]);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        for bad in [
            MINIMAL.replace("\"loss\": \"square\",", ""),
            MINIMAL.replace("\"loss\"", "\"iterations\": 0, \"loss\""),
            MINIMAL.replace("\"loss\"", "\"seeds\": [], \"loss\""),
            MINIMAL.replace("\"loss\"", "\"tail_fraction\": 0, \"loss\""),
            MINIMAL.replace("\"loss\"", "\"bogus\": 1, \"loss\""),
            MINIMAL.replace("\"loss\"", "\"x0\": {\"kind\":\"random_ball\",\"radius\":-1}, \"loss\""),
            r#"{"problem":{"generator":{"kind":"rank_deficient_ls","samples":5,"features":3,"rank":4,"noise_sigma":0,"seed":0}},"error_model":{"kind":"zero"}}"#.to_string(),
            r#"{"problem":{"generator":{"kind":"non_separable_logistic","samples":10,"features":3,"flip_fraction":0.1,"seed":0}},"loss":"square","error_model":{"kind":"zero"}}"#.to_string(),
        ] {
            assert!(ExperimentConfig::from_json(&bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn generator_implies_loss_and_iterations() {
        let cfg = ExperimentConfig::from_json(
            r#"{"problem":{"generator":{"kind":"non_separable_logistic","samples":10,"features":3,"flip_fraction":0.1,"seed":0}},"error_model":{"kind":"zero"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.loss(), Loss::Logistic);
        assert_eq!(cfg.iterations(), DEFAULT_LOGISTIC_ITERATIONS);
    }

    #[test]
    fn random_ball_stays_inside() {
        let mut rng = igm_core::engine::solver_rng(3);
        let ball = InitialPoint::RandomBall { radius: 2.0 };
        for _ in 0..100 {
            assert!(igm_core::linalg::norm(&ball.draw(5, &mut rng)) <= 2.0);
        }
    }

    #[test]
    fn digest_tracks_content() {
        let a = ExperimentConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.tail_fraction = 0.7;
        assert_ne!(a.digest(), b.digest());
    }
}
