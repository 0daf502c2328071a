use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeynmanKacModel, PathFunctional, StateFn};
use crate::particle::{
    empirical_measure, mutate, select, GenealogyAccumulator, ParticleCloud, ParticleFilter,
    SelectionConfig,
};
use crate::rng::RandomStreams;
use crate::smoother::{OnlineSmoother, SmootherMode};

pub const BATCH_FORMAT_VERSION: u32 = 1;

/// Quantities recorded per replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// `gamma_n^N(1)`.
    Normalizer,
    /// `log gamma_n^N(1)`.
    LogNormalizer,
    /// Backward estimate `Q_n^N(F)`.
    Smoothed,
    /// `gamma_n^N(1) Q_n^N(F)`.
    UnnormalizedSmoothed,
    /// Ancestral-line estimate of `F`.
    Genealogical,
    /// `eta_n^N(f)`.
    Empirical,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::Normalizer,
        Estimator::LogNormalizer,
        Estimator::Smoothed,
        Estimator::UnnormalizedSmoothed,
        Estimator::Genealogical,
        Estimator::Empirical,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::Normalizer => "normalizer",
            Estimator::LogNormalizer => "log-normalizer",
            Estimator::Smoothed => "smoothed",
            Estimator::UnnormalizedSmoothed => "unnormalized-smoothed",
            Estimator::Genealogical => "genealogical",
            Estimator::Empirical => "empirical",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == name)
    }

    fn needs_smoother(&self) -> bool {
        matches!(self, Estimator::Smoothed | Estimator::UnnormalizedSmoothed)
    }
}

/// One end-to-end particle experiment, run once per replicate.
pub struct Scenario<'a, M: FeynmanKacModel> {
    pub id: String,
    pub model: &'a M,
    pub n_particles: usize,
    pub horizon: usize,
    pub selection: SelectionConfig,
    pub functional: Option<PathFunctional<M::State>>,
    pub test_function: Option<StateFn<M::State>>,
    pub smoother_mode: SmootherMode,
    /// Epochs at which estimators are recorded; empty means the horizon only.
    pub checkpoints: Vec<usize>,
}

impl<'a, M: FeynmanKacModel> Scenario<'a, M> {
    pub fn new(id: impl Into<String>, model: &'a M, n_particles: usize, horizon: usize) -> Self {
        Self {
            id: id.into(),
            model,
            n_particles,
            horizon,
            selection: SelectionConfig::default(),
            functional: None,
            test_function: None,
            smoother_mode: SmootherMode::Auto,
            checkpoints: Vec::new(),
        }
    }

    pub fn with_functional(mut self, functional: PathFunctional<M::State>) -> Self {
        self.functional = Some(functional);
        self
    }

    pub fn with_test_function(mut self, f: StateFn<M::State>) -> Self {
        self.test_function = Some(f);
        self
    }

    pub fn with_selection(mut self, selection: SelectionConfig) -> Self {
        self.selection = selection;
        self
    }

    pub fn with_smoother_mode(mut self, mode: SmootherMode) -> Self {
        self.smoother_mode = mode;
        self
    }

    pub fn with_checkpoints(mut self, checkpoints: Vec<usize>) -> Self {
        self.checkpoints = checkpoints;
        self
    }

    fn resolved_checkpoints(&self) -> Vec<usize> {
        if self.checkpoints.is_empty() {
            vec![self.horizon]
        } else {
            let mut c = self.checkpoints.clone();
            c.sort_unstable();
            c.dedup();
            c
        }
    }

    fn validate(&self, estimators: &[Estimator]) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::EmptyPopulation);
        }
        if self.horizon > self.model.horizon() {
            return Err(Error::EpochOutOfRange {
                epoch: self.horizon,
                min: 0,
                horizon: self.model.horizon(),
            });
        }
        if let Some(&c) = self.checkpoints.iter().find(|&&c| c > self.horizon) {
            return Err(Error::InvalidArgument(format!(
                "checkpoint {c} beyond horizon {}",
                self.horizon
            )));
        }
        if estimators.is_empty() {
            return Err(Error::InvalidArgument("no estimators requested".into()));
        }
        let needs_functional = estimators
            .iter()
            .any(|e| e.needs_smoother() || *e == Estimator::Genealogical);
        if needs_functional {
            let f = self.functional.as_ref().ok_or_else(|| {
                Error::InvalidArgument("path estimators need a functional".into())
            })?;
            f.require_additive("replicate estimators")?;
            f.check_covers(self.horizon)?;
        }
        if estimators.contains(&Estimator::Empirical) && self.test_function.is_none() {
            return Err(Error::InvalidArgument(
                "the empirical estimator needs a test function".into(),
            ));
        }
        Ok(())
    }
}

/// Values of one replicate, ordered checkpoint-major then by `estimators`.
pub fn run_replicate<M: FeynmanKacModel>(
    scenario: &Scenario<'_, M>,
    estimators: &[Estimator],
    replicate: u64,
    base_seed: u64,
) -> Result<Vec<f64>> {
    let checkpoints = scenario.resolved_checkpoints();
    let streams = RandomStreams::for_replicate(base_seed, replicate);
    let mut filter = ParticleFilter::start(
        scenario.model,
        scenario.n_particles,
        scenario.selection,
        streams,
    )?;
    let functional = scenario.functional.as_ref();
    let mut smoother =
        match functional {
            Some(f) if estimators.iter().any(Estimator::needs_smoother) => Some(
                OnlineSmoother::new(filter.current(), f.clone(), scenario.smoother_mode)?,
            ),
            _ => None,
        };
    let mut genealogy = match functional {
        Some(f) if estimators.contains(&Estimator::Genealogical) => {
            Some(GenealogyAccumulator::new(filter.current(), f.clone())?)
        }
        _ => None,
    };
    let mut out = Vec::with_capacity(checkpoints.len() * estimators.len());
    let mut next_checkpoint = checkpoints.iter().peekable();
    for epoch in 0..=scenario.horizon {
        if epoch > 0 {
            let prev = filter.advance()?;
            if let Some(s) = smoother.as_mut() {
                s.advance(&prev, filter.current(), scenario.model)?;
            }
            if let Some(g) = genealogy.as_mut() {
                g.advance(&prev, filter.current())?;
            }
        }
        if next_checkpoint.peek() != Some(&&epoch) {
            continue;
        }
        next_checkpoint.next();
        let cloud = filter.current();
        for e in estimators {
            let v = match e {
                Estimator::Normalizer => cloud.normalizer(),
                Estimator::LogNormalizer => cloud.log_normalizer,
                Estimator::Smoothed => smoother.as_ref().expect("validated").estimate(cloud)?,
                Estimator::UnnormalizedSmoothed => {
                    cloud.normalizer() * smoother.as_ref().expect("validated").estimate(cloud)?
                }
                Estimator::Genealogical => genealogy.as_ref().expect("validated").estimate(),
                Estimator::Empirical => {
                    let f = scenario.test_function.as_ref().expect("validated");
                    empirical_measure(cloud, |x| f(x))
                }
            };
            out.push(v);
        }
    }
    Ok(out)
}

/// Run `replicates` independent experiments. Replicate `r` draws from the
/// streams of `(base_seed, r)`, so the batch does not depend on `threads`.
pub fn run_replicates<M: FeynmanKacModel>(
    scenario: &Scenario<'_, M>,
    estimators: &[Estimator],
    replicates: usize,
    base_seed: u64,
    threads: Option<usize>,
) -> Result<ReplicateBatch> {
    scenario.validate(estimators)?;
    if replicates == 0 {
        return Err(Error::TooFewReplicates {
            required: 1,
            got: 0,
        });
    }
    let work = || {
        (0..replicates as u64)
            .into_par_iter()
            .map(|r| run_replicate(scenario, estimators, r, base_seed))
            .collect::<Result<Vec<_>>>()
    };
    let rows = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let checkpoints = scenario.resolved_checkpoints();
    let mut columns = Vec::with_capacity(checkpoints.len() * estimators.len());
    for &epoch in &checkpoints {
        for &estimator in estimators {
            columns.push(Column {
                estimator,
                epoch,
                values: Vec::with_capacity(replicates),
            });
        }
    }
    for row in rows {
        for (col, v) in columns.iter_mut().zip(row) {
            col.values.push(v);
        }
    }
    Ok(ReplicateBatch {
        scenario: scenario.id.clone(),
        n_particles: scenario.n_particles,
        horizon: scenario.horizon,
        replicates,
        base_seed,
        columns,
    })
}

/// Draws of `eta_{n+1}^N(f)` from one frozen cloud at epoch `n`, one per replicate.
pub fn one_step_batch<M: FeynmanKacModel>(
    model: &M,
    frozen: &ParticleCloud<M::State>,
    selection: &SelectionConfig,
    f: &(dyn Fn(&M::State) -> f64 + Sync),
    replicates: usize,
    base_seed: u64,
) -> Result<Vec<f64>> {
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let streams = RandomStreams::for_replicate(base_seed, r);
            let selected = select(frozen, model, selection, &streams)?;
            let next = mutate(selected, model, frozen.epoch + 1, &streams)?;
            Ok(empirical_measure(&next, f))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub estimator: Estimator,
    pub epoch: usize,
    pub values: Vec<f64>,
}

impl Column {
    pub fn name(&self) -> String {
        format!("{}@{}", self.estimator.as_str(), self.epoch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    scenario: String,
    n_particles: usize,
    horizon: usize,
    replicates: usize,
    base_seed: u64,
    columns: Vec<String>,
}

/// Per-replicate estimator values of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateBatch {
    pub scenario: String,
    pub n_particles: usize,
    pub horizon: usize,
    pub replicates: usize,
    pub base_seed: u64,
    pub columns: Vec<Column>,
}

/// Shortest decimal that reads back to the same `f64`.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:?}")
}

impl ReplicateBatch {
    pub fn column(&self, estimator: Estimator, epoch: usize) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.estimator == estimator && c.epoch == epoch)
            .map(|c| c.values.as_slice())
    }

    /// Column at the final horizon.
    pub fn values(&self, estimator: Estimator) -> Option<&[f64]> {
        self.column(estimator, self.horizon)
    }

    /// One row per replicate; an optional `#` comment line goes first.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["replicate".to_string()];
        header.extend(self.columns.iter().map(Column::name));
        w.write_record(&header)?;
        for r in 0..self.replicates {
            let mut record = vec![r.to_string()];
            record.extend(self.columns.iter().map(|c| format_float(c.values[r])));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar_json(&self) -> Result<String> {
        let sidecar = Sidecar {
            format_version: BATCH_FORMAT_VERSION,
            scenario: self.scenario.clone(),
            n_particles: self.n_particles,
            horizon: self.horizon,
            replicates: self.replicates,
            base_seed: self.base_seed,
            columns: self.columns.iter().map(Column::name).collect(),
        };
        Ok(serde_json::to_string_pretty(&sidecar)?)
    }

    /// Write `<stem>.csv` and `<stem>.json` under `dir`.
    pub fn save(
        &self,
        dir: &Path,
        stem: &str,
        comment: Option<&str>,
    ) -> Result<(PathBuf, PathBuf)> {
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        self.write_csv(BufWriter::new(File::create(&csv_path)?), comment)?;
        std::fs::write(&json_path, self.sidecar_json()? + "\n")?;
        Ok((csv_path, json_path))
    }

    /// Read a batch written by [`ReplicateBatch::save`].
    pub fn load(csv_path: &Path) -> Result<Self> {
        let sidecar: Sidecar =
            serde_json::from_str(&std::fs::read_to_string(csv_path.with_extension("json"))?)?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(csv_path)?;
        let header = reader.headers()?.clone();
        let mut columns = Vec::new();
        for name in header.iter().skip(1) {
            let (est, epoch) = name
                .split_once('@')
                .ok_or_else(|| Error::InvalidArgument(format!("bad column name {name}")))?;
            columns.push(Column {
                estimator: Estimator::parse(est)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator {est}")))?,
                epoch: epoch
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad epoch in column {name}")))?,
                values: Vec::new(),
            });
        }
        for record in reader.records() {
            let record = record?;
            for (col, field) in columns.iter_mut().zip(record.iter().skip(1)) {
                col.values.push(
                    field
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad number {field}")))?,
                );
            }
        }
        let batch = Self {
            scenario: sidecar.scenario,
            n_particles: sidecar.n_particles,
            horizon: sidecar.horizon,
            replicates: sidecar.replicates,
            base_seed: sidecar.base_seed,
            columns,
        };
        if batch
            .columns
            .iter()
            .any(|c| c.values.len() != batch.replicates)
        {
            return Err(Error::InvalidArgument(
                "batch CSV row count differs from its sidecar".into(),
            ));
        }
        Ok(batch)
    }
}
