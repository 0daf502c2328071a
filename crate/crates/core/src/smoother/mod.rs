//! Backward kernels on particle clouds and the forward-only recursion for
//! additive functionals.
//!
//! `W[j][i]` is the weight of particle `i` at epoch `n-1` as the backward
//! ancestor of particle `j` at epoch `n`. The smoother carries
//! `F_n^N(xi_n^j) = f_n(xi_n^j) + sum_i W[j][i] F_{n-1}^N(xi_{n-1}^i)` (or the
//! pairwise variant) so that `eta_n^N(F_n^N)` equals the backward path-space
//! estimate of `F_n` without storing paths.

mod batch;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use batch::{sample_backward_path, smoothed_estimate_batch, BackwardSampler};

use crate::error::{Error, Result};
use crate::model::{FeynmanKacModel, FunctionalKind, PathFunctional, State};
use crate::numeric::pairwise_sum;
use crate::particle::{potentials_of, ParticleCloud};

/// Row normalizers below this use the log-density path.
const LINEAR_FLOOR: f64 = 1e-280;
/// Populations at least this large build rows in parallel.
const PARALLEL_ROWS: usize = 256;

/// Row-major `N x N` backward weights at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardWeightMatrix {
    epoch: usize,
    size: usize,
    weights: Vec<f64>,
}

impl BackwardWeightMatrix {
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Weights over epoch `n-1` particles for current particle `j`.
    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.size..(j + 1) * self.size]
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.weights[j * self.size + i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks(self.size)
    }
}

fn check_consecutive<S>(prev: &ParticleCloud<S>, cur: &ParticleCloud<S>) -> Result<()> {
    if cur.epoch != prev.epoch + 1 {
        return Err(Error::HistoryGap(format!(
            "clouds at epochs {} and {} are not consecutive",
            prev.epoch, cur.epoch
        )));
    }
    if prev.len() != cur.len() || prev.is_empty() {
        return Err(Error::HistoryGap(format!(
            "cloud sizes differ: {} vs {}",
            prev.len(),
            cur.len()
        )));
    }
    Ok(())
}

/// Fill `row[i] ∝ G_{n-1}(prev[i]) H_n(prev[i], y)` and normalize it.
pub(crate) fn fill_row<M: FeynmanKacModel>(
    model: &M,
    epoch: usize,
    prev: &[M::State],
    prev_potentials: &[f64],
    y: &M::State,
    particle: usize,
    row: &mut [f64],
) -> Result<()> {
    let mut total = 0.0;
    for ((w, x), g) in row.iter_mut().zip(prev).zip(prev_potentials) {
        *w = g * model.transition_density(epoch, x, y);
        total += *w;
    }
    if total.is_finite() && total > LINEAR_FLOOR {
        let inv = 1.0 / total;
        row.iter_mut().for_each(|w| *w *= inv);
        return Ok(());
    }
    let mut max = f64::NEG_INFINITY;
    for ((w, x), g) in row.iter_mut().zip(prev).zip(prev_potentials) {
        *w = g.ln() + model.log_transition_density(epoch, x, y);
        if *w > max {
            max = *w;
        }
    }
    if !max.is_finite() {
        return Err(Error::ZeroBackwardNormalizer { epoch, particle });
    }
    let mut total = 0.0;
    for w in row.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::ZeroBackwardNormalizer { epoch, particle });
    }
    row.iter_mut().for_each(|w| *w /= total);
    Ok(())
}

/// Materialize `W` between consecutive clouds: `N^2` density evaluations.
pub fn backward_matrix<M: FeynmanKacModel>(
    prev: &ParticleCloud<M::State>,
    cur: &ParticleCloud<M::State>,
    model: &M,
) -> Result<BackwardWeightMatrix> {
    check_consecutive(prev, cur)?;
    let n = cur.len();
    let epoch = cur.epoch;
    let g = potentials_of(model, prev.epoch, &prev.positions)?;
    let mut weights = vec![0.0; n * n];
    let build = |(j, row): (usize, &mut [f64])| {
        fill_row(model, epoch, &prev.positions, &g, &cur.positions[j], j, row)
    };
    if n >= PARALLEL_ROWS {
        weights.par_chunks_mut(n).enumerate().try_for_each(build)?;
    } else {
        weights.chunks_mut(n).enumerate().try_for_each(build)?;
    }
    Ok(BackwardWeightMatrix {
        epoch,
        size: n,
        weights,
    })
}

/// Per-particle values `F_n^N(xi_n^j)` of the forward-only recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherState {
    pub epoch: usize,
    pub values: Vec<f64>,
    pub kind: FunctionalKind,
    pub normalized: bool,
}

impl SmootherState {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// `F_0^N = f_0` on the initial cloud.
pub fn init_smoother<S: State>(
    cloud: &ParticleCloud<S>,
    functional: &PathFunctional<S>,
) -> Result<SmootherState> {
    functional.require_additive("forward-only smoothing")?;
    functional.check_covers(cloud.epoch)?;
    if cloud.epoch != 0 {
        return Err(Error::HistoryGap("smoother must start at epoch 0".into()));
    }
    Ok(SmootherState {
        epoch: 0,
        values: cloud
            .positions
            .iter()
            .map(|x| functional.local(0, None, x))
            .collect(),
        kind: functional.kind(),
        normalized: functional.is_normalized(),
    })
}

fn check_update<S>(
    state: &SmootherState,
    prev: &ParticleCloud<S>,
    cur: &ParticleCloud<S>,
    functional: &PathFunctional<S>,
) -> Result<()> {
    functional.require_additive("forward-only smoothing")?;
    check_consecutive(prev, cur)?;
    if state.epoch != prev.epoch || state.values.len() != prev.len() {
        return Err(Error::HistoryGap(format!(
            "smoother state at epoch {} ({} values) does not match cloud at epoch {} ({} particles)",
            state.epoch,
            state.values.len(),
            prev.epoch,
            prev.len()
        )));
    }
    functional.check_covers(cur.epoch)
}

/// Value of the recursion for one current particle given its normalized row.
#[inline]
fn combine<S>(
    row: &[f64],
    previous: &[f64],
    prev: &[S],
    y: &S,
    epoch: usize,
    functional: &PathFunctional<S>,
) -> f64 {
    if functional.uses_previous(epoch) {
        row.iter()
            .zip(previous)
            .zip(prev)
            .map(|((w, v), x)| w * (functional.local(epoch, Some(x), y) + v))
            .sum()
    } else {
        let carried: f64 = row.iter().zip(previous).map(|(w, v)| w * v).sum();
        functional.local(epoch, None, y) + carried
    }
}

fn next_state(state: &SmootherState, epoch: usize, values: Vec<f64>) -> SmootherState {
    SmootherState {
        epoch,
        values,
        kind: state.kind,
        normalized: state.normalized,
    }
}

/// One step of the recursion with a materialized `W`.
pub fn forward_update<S: State>(
    state: &SmootherState,
    weights: &BackwardWeightMatrix,
    prev: &ParticleCloud<S>,
    cur: &ParticleCloud<S>,
    functional: &PathFunctional<S>,
) -> Result<SmootherState> {
    check_update(state, prev, cur, functional)?;
    if weights.epoch != cur.epoch || weights.size != cur.len() {
        return Err(Error::HistoryGap(format!(
            "backward matrix for epoch {} ({}x{}) does not match cloud at epoch {}",
            weights.epoch, weights.size, weights.size, cur.epoch
        )));
    }
    let epoch = cur.epoch;
    let eval = |(j, y): (usize, &S)| {
        combine(
            weights.row(j),
            &state.values,
            &prev.positions,
            y,
            epoch,
            functional,
        )
    };
    let values = if cur.len() >= PARALLEL_ROWS {
        cur.positions.par_iter().enumerate().map(eval).collect()
    } else {
        cur.positions.iter().enumerate().map(eval).collect()
    };
    Ok(next_state(state, epoch, values))
}

/// Same result as [`backward_matrix`] + [`forward_update`], building one row at a time (memory `O(N)` per worker).
pub fn streaming_update<M: FeynmanKacModel>(
    state: &SmootherState,
    prev: &ParticleCloud<M::State>,
    cur: &ParticleCloud<M::State>,
    model: &M,
    functional: &PathFunctional<M::State>,
) -> Result<SmootherState> {
    check_update(state, prev, cur, functional)?;
    let n = cur.len();
    let epoch = cur.epoch;
    let g = potentials_of(model, prev.epoch, &prev.positions)?;
    let eval = |row: &mut Vec<f64>, (j, y): (usize, &M::State)| -> Result<f64> {
        fill_row(model, epoch, &prev.positions, &g, y, j, row)?;
        Ok(combine(
            row,
            &state.values,
            &prev.positions,
            y,
            epoch,
            functional,
        ))
    };
    let values = if n >= PARALLEL_ROWS {
        cur.positions
            .par_iter()
            .enumerate()
            .map_init(|| vec![0.0; n], eval)
            .collect::<Result<Vec<_>>>()?
    } else {
        let mut row = vec![0.0; n];
        cur.positions
            .iter()
            .enumerate()
            .map(|item| eval(&mut row, item))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(next_state(state, epoch, values))
}

/// Distinct states of a cloud in order of first appearance, with multiplicities.
struct Buckets {
    slot_of: Vec<usize>,
    representative: Vec<usize>,
    counts: Vec<f64>,
}

fn buckets<M: FeynmanKacModel>(
    model: &M,
    positions: &[M::State],
    space: Option<usize>,
) -> Result<Buckets> {
    enum Index {
        Dense(Vec<usize>),
        Sparse(HashMap<usize, usize>),
    }
    const EMPTY: usize = usize::MAX;
    let mut index = match space {
        Some(d) if d <= 4 * positions.len().max(16) => Index::Dense(vec![EMPTY; d]),
        _ => Index::Sparse(HashMap::new()),
    };
    let mut slot_of = Vec::with_capacity(positions.len());
    let mut representative = Vec::new();
    let mut counts = Vec::new();
    for (i, x) in positions.iter().enumerate() {
        let key = model.state_index(x).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "coalesced smoothing needs indexed states, {x:?} has no index"
            ))
        })?;
        let entry = match &mut index {
            Index::Dense(v) => v.get_mut(key).ok_or_else(|| {
                Error::InvalidArgument(format!("state index {key} outside the state space"))
            })?,
            Index::Sparse(m) => m.entry(key).or_insert(EMPTY),
        };
        if *entry == EMPTY {
            *entry = representative.len();
            representative.push(i);
            counts.push(0.0);
        }
        counts[*entry] += 1.0;
        slot_of.push(*entry);
    }
    Ok(Buckets {
        slot_of,
        representative,
        counts,
    })
}

/// The recursion for models with indexed (finite) states.
///
/// `F_n^N(xi_n^j)` depends on `xi_n^j` only through its state, and particles
/// sharing a state at epoch `n-1` carry equal values, so the update runs over
/// the occupied states: `O(N + k_{n-1} k_n)` densities for `k` occupied states.
/// The result equals [`forward_update`] up to summation order.
pub fn coalesced_update<M: FeynmanKacModel>(
    state: &SmootherState,
    prev: &ParticleCloud<M::State>,
    cur: &ParticleCloud<M::State>,
    model: &M,
    functional: &PathFunctional<M::State>,
) -> Result<SmootherState> {
    check_update(state, prev, cur, functional)?;
    let epoch = cur.epoch;
    let space = model.state_space().map(|s| s.len());
    let from = buckets(model, &prev.positions, space)?;
    let to = buckets(model, &cur.positions, space)?;
    let from_states: Vec<M::State> = from
        .representative
        .iter()
        .map(|&i| prev.positions[i].clone())
        .collect();
    let from_values: Vec<f64> = from
        .representative
        .iter()
        .map(|&i| state.values[i])
        .collect();
    let weights: Vec<f64> = potentials_of(model, prev.epoch, &from_states)?
        .iter()
        .zip(&from.counts)
        .map(|(g, c)| g * c)
        .collect();
    let mut row = vec![0.0; from_states.len()];
    let mut per_state = Vec::with_capacity(to.representative.len());
    for &j in &to.representative {
        let y = &cur.positions[j];
        fill_row(model, epoch, &from_states, &weights, y, j, &mut row)?;
        per_state.push(combine(
            &row,
            &from_values,
            &from_states,
            y,
            epoch,
            functional,
        ));
    }
    let values = to.slot_of.iter().map(|&s| per_state[s]).collect();
    Ok(next_state(state, epoch, values))
}

/// `eta_n^N(F_n^N)`, divided by `n + 1` for normalized functionals.
pub fn smoothed_estimate<S>(state: &SmootherState, cloud: &ParticleCloud<S>) -> Result<f64> {
    if state.epoch != cloud.epoch || state.values.len() != cloud.len() {
        return Err(Error::HistoryGap(format!(
            "smoother state at epoch {} does not match cloud at epoch {}",
            state.epoch, cloud.epoch
        )));
    }
    let mean = pairwise_sum(&state.values) / state.values.len() as f64;
    Ok(if state.normalized {
        mean / (state.epoch + 1) as f64
    } else {
        mean
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmootherMode {
    /// Materialize `W` each epoch.
    Dense,
    /// Build rows on the fly.
    Streaming,
    /// Group particles by state index (finite state spaces).
    Coalesced,
    /// Coalesced when the model indexes its states, else dense up to 4096 particles, else streaming.
    #[default]
    Auto,
}

/// Forward-only smoother driven epoch by epoch alongside a particle filter.
#[derive(Debug, Clone)]
pub struct OnlineSmoother<S> {
    functional: PathFunctional<S>,
    state: SmootherState,
    mode: SmootherMode,
}

impl<S: State> OnlineSmoother<S> {
    pub fn new(
        initial: &ParticleCloud<S>,
        functional: PathFunctional<S>,
        mode: SmootherMode,
    ) -> Result<Self> {
        let state = init_smoother(initial, &functional)?;
        Ok(Self {
            functional,
            state,
            mode,
        })
    }

    /// Resume from a snapshot.
    pub fn resume(
        state: SmootherState,
        functional: PathFunctional<S>,
        mode: SmootherMode,
    ) -> Result<Self> {
        if state.kind != functional.kind() || state.normalized != functional.is_normalized() {
            return Err(Error::InvalidArgument(
                "snapshot was taken with a different functional".into(),
            ));
        }
        Ok(Self {
            functional,
            state,
            mode,
        })
    }

    fn resolve_mode<M: FeynmanKacModel<State = S>>(
        &self,
        model: &M,
        cur: &ParticleCloud<S>,
    ) -> SmootherMode {
        match self.mode {
            SmootherMode::Auto => {
                if cur
                    .positions
                    .first()
                    .and_then(|x| model.state_index(x))
                    .is_some()
                {
                    SmootherMode::Coalesced
                } else if cur.len() <= 4096 {
                    SmootherMode::Dense
                } else {
                    SmootherMode::Streaming
                }
            }
            other => other,
        }
    }

    pub fn advance<M: FeynmanKacModel<State = S>>(
        &mut self,
        prev: &ParticleCloud<S>,
        cur: &ParticleCloud<S>,
        model: &M,
    ) -> Result<()> {
        self.state = match self.resolve_mode(model, cur) {
            SmootherMode::Dense => {
                let w = backward_matrix(prev, cur, model)?;
                forward_update(&self.state, &w, prev, cur, &self.functional)?
            }
            SmootherMode::Streaming => {
                streaming_update(&self.state, prev, cur, model, &self.functional)?
            }
            SmootherMode::Coalesced | SmootherMode::Auto => {
                coalesced_update(&self.state, prev, cur, model, &self.functional)?
            }
        };
        Ok(())
    }

    pub fn estimate(&self, cloud: &ParticleCloud<S>) -> Result<f64> {
        smoothed_estimate(&self.state, cloud)
    }

    pub fn state(&self) -> &SmootherState {
        &self.state
    }

    pub fn epoch(&self) -> usize {
        self.state.epoch
    }

    pub fn functional(&self) -> &PathFunctional<S> {
        &self.functional
    }
}
