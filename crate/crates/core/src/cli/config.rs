//! Scenario configuration files.
//!
//! ```toml
//! [model]
//! family = "three-state"        # or: fixture = "three_state.fkm"
//!
//! [run]
//! n_particles = 100
//! horizon = 10
//! epsilon = "zero"              # "reciprocal-sup", or { fixed = 0.5 }
//! replicates = 1
//! seed = 7
//!
//! [functional]
//! kind = "terminal-additive"
//! term = "value"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{FunctionalKind, PairFn, PathFunctional, StateFn};
use crate::oracle::fixtures;
use crate::oracle::FiniteStateModel;
use crate::particle::{EpsilonRule, SelectionConfig};
use crate::smoother::SmootherMode;
use crate::stats::Estimator;

use super::CliError;

/// Environment variable naming the directory that relative fixture paths resolve against.
pub const FIXTURES_ENV: &str = "FKGEN_FIXTURES";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub functional: FunctionalSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub checks: CheckSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// One of the built-in model names.
    pub family: Option<String>,
    /// Path to a fixture file.
    pub fixture: Option<String>,
    /// Final epoch of a time-homogeneous model; defaults to the model's own.
    pub horizon: Option<usize>,
    /// Numeric state labels used by the `value` catalog terms.
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub n_particles: usize,
    /// Final epoch of the run; defaults to the model horizon.
    pub horizon: Option<usize>,
    pub epsilon: EpsilonRule,
    pub replicates: usize,
    pub seed: u64,
    pub out: Option<String>,
    /// Estimators recorded by `compare-variance`.
    pub estimators: Vec<Estimator>,
    pub smoother: SmootherMode,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            n_particles: 100,
            horizon: None,
            epsilon: EpsilonRule::Zero,
            replicates: 1,
            seed: 0,
            out: None,
            estimators: Vec::new(),
            smoother: SmootherMode::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FunctionalSpec {
    pub kind: FunctionalKind,
    /// Per-epoch term of a terminal functional, or the epoch-0 term of a pairwise one.
    pub term: String,
    /// Transition term of a pairwise functional.
    pub pair: Option<String>,
    pub normalized: bool,
}

impl Default for FunctionalSpec {
    fn default() -> Self {
        Self {
            kind: FunctionalKind::TerminalAdditive,
            term: "value".into(),
            pair: None,
            normalized: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// Horizons of `compare-variance`, or the reported epochs of `hprocess`.
    pub horizons: Vec<usize>,
    /// Particle counts of `compare-variance`.
    pub n_particles: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSpec {
    /// Relative tolerance of the exact identities.
    pub tolerance: f64,
    /// Random measures drawn for the duality and segment identities.
    pub random_measures: usize,
    /// Allowed exponent range of the genealogical variance growth.
    pub genealogical_exponent: Option<[f64; 2]>,
    /// Allowed exponent range of the backward variance growth.
    pub smoothed_exponent: Option<[f64; 2]>,
    /// Allowed `|mean - mu_h(f)|` in per-replicate standard deviations.
    pub sigmas: f64,
    /// Path-enumeration cap of `oracle-check`.
    pub enumeration_cap: usize,
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            random_measures: 10,
            genealogical_exponent: None,
            smoothed_exponent: None,
            sigmas: 3.0,
            enumeration_cap: crate::oracle::DEFAULT_ENUMERATION_CAP,
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self =
            toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        config.check_shape()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn check_shape(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        match (&self.model.family, &self.model.fixture) {
            (Some(_), Some(_)) => {
                return bad("model: give either `family` or `fixture`, not both".into())
            }
            (None, None) => return bad("model: one of `family` or `fixture` is required".into()),
            (Some(f), None) if !fixtures::BUILTIN_NAMES.contains(&f.as_str()) => {
                return bad(format!(
                    "model: unknown family `{f}` (known: {})",
                    fixtures::BUILTIN_NAMES.join(", ")
                ))
            }
            _ => {}
        }
        if self.run.n_particles == 0 {
            return bad("run.n_particles must be at least 1".into());
        }
        if self.run.replicates == 0 {
            return bad("run.replicates must be at least 1".into());
        }
        if let EpsilonRule::Fixed(e) = self.run.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return bad(format!(
                    "run.epsilon: fixed value {e} must be finite and non-negative"
                ));
            }
        }
        match self.functional.kind {
            FunctionalKind::General => {
                return bad("functional.kind: general functionals are not configurable".into())
            }
            FunctionalKind::TerminalAdditive if self.functional.pair.is_some() => {
                return bad("functional.pair only applies to pairwise-additive functionals".into())
            }
            FunctionalKind::PairwiseAdditive if self.functional.pair.is_none() => {
                return bad("functional.pair is required for pairwise-additive functionals".into())
            }
            _ => {}
        }
        if !(self.checks.tolerance > 0.0) || !(self.checks.sigmas > 0.0) {
            return bad("checks.tolerance and checks.sigmas must be positive".into());
        }
        if self.grid.n_particles.contains(&0) {
            return bad("grid.n_particles entries must be at least 1".into());
        }
        Ok(())
    }

    /// Apply command-line overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<&Path>) -> Self {
        if let Some(s) = seed {
            self.run.seed = s;
        }
        if let Some(o) = out {
            self.run.out = Some(o.display().to_string());
        }
        self
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// SHA-256 of the resolved configuration without the output directory.
    pub fn scenario_hash(&self) -> Result<String, CliError> {
        let mut c = self.clone();
        c.run.out = None;
        let digest = Sha256::digest(c.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig::with_epsilon(self.run.epsilon)
    }

    /// The model, extended to `required` epochs when it is time-homogeneous.
    pub fn build_model(
        &self,
        base_dir: Option<&Path>,
        required: Option<usize>,
    ) -> Result<FiniteStateModel, CliError> {
        let mut model = match (&self.model.family, &self.model.fixture) {
            (Some(name), _) => fixtures::builtin(name).expect("family checked at parse time"),
            (_, Some(path)) => fixtures::load_fixture(&resolve_fixture(path, base_dir))?.model,
            _ => unreachable!("model shape checked at parse time"),
        };
        if let Some(values) = &self.model.values {
            model = model.with_values(values.clone())?;
        }
        if let Some(h) = self.model.horizon {
            model = model.with_horizon(h)?;
        }
        let need = required.unwrap_or(0).max(self.run.horizon.unwrap_or(0));
        if need > model.horizon() {
            if !model.is_homogeneous() {
                return Err(CliError::Config(format!(
                    "horizon {need} exceeds the {} epochs of a time-inhomogeneous model",
                    model.horizon()
                )));
            }
            model = model.with_horizon(need)?;
        }
        Ok(model)
    }

    pub fn horizon(&self, model: &FiniteStateModel) -> usize {
        self.run.horizon.unwrap_or(model.horizon())
    }

    /// The configured functional with terms on epochs `0..=horizon`.
    pub fn build_functional(
        &self,
        model: &FiniteStateModel,
        horizon: usize,
    ) -> Result<PathFunctional<usize>, CliError> {
        let values: Arc<[f64]> = model.values().into();
        let term = state_term(&self.functional.term, &values, model.dim())?;
        let f = match self.functional.kind {
            FunctionalKind::TerminalAdditive => PathFunctional::additive(vec![term; horizon + 1])?,
            FunctionalKind::PairwiseAdditive => {
                let name = self
                    .functional
                    .pair
                    .as_deref()
                    .expect("checked at parse time");
                let pair = pair_term(name, &values)?;
                PathFunctional::pairwise(term, vec![pair; horizon])
            }
            FunctionalKind::General => unreachable!("rejected at parse time"),
        };
        Ok(if self.functional.normalized {
            f.normalized()
        } else {
            f
        })
    }
}

fn resolve_fixture(path: &str, base_dir: Option<&Path>) -> PathBuf {
    let p = PathBuf::from(path);
    if p.is_absolute() {
        return p;
    }
    if let Some(dir) = std::env::var_os(FIXTURES_ENV) {
        let candidate = PathBuf::from(dir).join(&p);
        if candidate.exists() {
            return candidate;
        }
    }
    match base_dir {
        Some(d) => d.join(p),
        None => p,
    }
}

/// Terminal terms: `zero`, `one`, `value`, `indicator-<k>`.
pub fn state_term(name: &str, values: &Arc<[f64]>, dim: usize) -> Result<StateFn<usize>, CliError> {
    let f: StateFn<usize> = match name {
        "zero" => Arc::new(|_| 0.0),
        "one" => Arc::new(|_| 1.0),
        "value" => {
            let v = values.clone();
            Arc::new(move |x| v[*x])
        }
        _ => {
            let k = name
                .strip_prefix("indicator-")
                .and_then(|k| k.parse::<usize>().ok())
                .ok_or_else(|| CliError::Config(format!("functional: unknown term `{name}`")))?;
            if k >= dim {
                return Err(CliError::Config(format!(
                    "functional: `{name}` names a state outside 0..{dim}"
                )));
            }
            Arc::new(move |x| (*x == k) as u8 as f64)
        }
    };
    Ok(f)
}

/// Pair terms on `(previous, current)`: `product`, `increment`, `stay`, `jump`.
pub fn pair_term(name: &str, values: &Arc<[f64]>) -> Result<PairFn<usize>, CliError> {
    let v = values.clone();
    let f: PairFn<usize> = match name {
        "product" => Arc::new(move |a, b| v[*a] * v[*b]),
        "increment" => Arc::new(move |a, b| v[*b] - v[*a]),
        "stay" => Arc::new(|a, b| (a == b) as u8 as f64),
        "jump" => Arc::new(|a, b| (a != b) as u8 as f64),
        _ => {
            return Err(CliError::Config(format!(
                "functional: unknown pair term `{name}`"
            )))
        }
    };
    Ok(f)
}
