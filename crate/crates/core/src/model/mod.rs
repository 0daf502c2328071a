//! Feynman-Kac model interface.
//!
//! A model supplies the initial law `eta_0`, Markov transitions `M_n` (as a
//! sampler plus a density `H_n` against an implicit reference measure) and
//! `(0, 1]`-valued potentials `G_n` for epochs `0..=horizon`.

mod functional;

use std::fmt::Debug;

use rand::RngCore;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use functional::{FunctionalKind, PairFn, PathFn, PathFunctional, StateFn};

use crate::error::{Error, Result};
use crate::rng::{Lane, RandomStreams};

/// Requirements on particle states: comparable, printable and serializable.
pub trait State: Clone + PartialEq + Debug + Send + Sync + Serialize + DeserializeOwned {}

impl<T> State for T where T: Clone + PartialEq + Debug + Send + Sync + Serialize + DeserializeOwned {}

/// A Feynman-Kac model `(eta_0, M_n, H_n, G_n)` over an opaque state type.
///
/// Implementations must be pure: equal arguments give bitwise-equal results,
/// and evaluation is safe from many threads at once.
pub trait FeynmanKacModel: Sync {
    type State: State;

    /// Final epoch `n`.
    fn horizon(&self) -> usize;

    fn sample_initial<R: RngCore + ?Sized>(&self, rng: &mut R) -> Self::State;

    /// One draw of `M_epoch(from, .)`, for `1 <= epoch <= horizon`.
    fn sample_transition<R: RngCore + ?Sized>(
        &self,
        epoch: usize,
        from: &Self::State,
        rng: &mut R,
    ) -> Self::State;

    /// `H_epoch(from, to)`, the density of `M_epoch(from, .)` at `to`.
    fn transition_density(&self, epoch: usize, from: &Self::State, to: &Self::State) -> f64;

    /// `log H_epoch(from, to)`. Override when the log density is cheaper or
    /// more accurate than `ln` of the linear one.
    fn log_transition_density(&self, epoch: usize, from: &Self::State, to: &Self::State) -> f64 {
        self.transition_density(epoch, from, to).ln()
    }

    /// `G_epoch(x)` in `(0, 1]`.
    fn potential(&self, epoch: usize, x: &Self::State) -> f64;

    /// Full list of states when the state space is finite (shared by all epochs).
    fn state_space(&self) -> Option<Vec<Self::State>> {
        None
    }

    /// Position of `x` in [`FeynmanKacModel::state_space`], when finite.
    fn state_index(&self, _x: &Self::State) -> Option<usize> {
        None
    }
}

/// `G_n(x)`, checked against the epoch range and `(0, 1]`.
pub fn potential_eval<M: FeynmanKacModel>(model: &M, n: usize, x: &M::State) -> Result<f64> {
    if n > model.horizon() {
        return Err(Error::EpochOutOfRange {
            epoch: n,
            min: 0,
            horizon: model.horizon(),
        });
    }
    let g = model.potential(n, x);
    if g > 0.0 && g <= 1.0 {
        Ok(g)
    } else {
        Err(Error::PotentialOutOfRange {
            epoch: n,
            state: format!("{x:?}"),
            value: g,
        })
    }
}

/// `H_n(x, y)`, checked against the epoch range `1..=horizon` and positivity.
pub fn transition_density<M: FeynmanKacModel>(
    model: &M,
    n: usize,
    x: &M::State,
    y: &M::State,
) -> Result<f64> {
    if n == 0 || n > model.horizon() {
        return Err(Error::EpochOutOfRange {
            epoch: n,
            min: 1,
            horizon: model.horizon(),
        });
    }
    let h = model.transition_density(n, x, y);
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(Error::NonPositiveDensity {
            epoch: n,
            from: format!("{x:?}"),
            to: format!("{y:?}"),
            value: h,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    /// `G_n(x)` outside `(0, 1]`.
    Potential,
    /// `H_n(x, y) <= 0` or not finite.
    Density,
    /// `sum_y H_n(x, y)` differs from 1 on a finite state space.
    RowSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub epoch: usize,
    pub kind: ViolationKind,
    pub state: String,
    pub value: f64,
}

/// Outcome of [`validate_model`]. An empty violation list means the model
/// passed at the probe resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub probes: usize,
    pub exhaustive: bool,
    pub violations: Vec<Violation>,
    /// Largest `|sum_y H_n(x, y) - 1|` seen on a finite state space.
    pub max_row_sum_error: Option<f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Probe the standing assumptions `G_n in (0, 1]` and `H_n > 0`.
///
/// `probe_count` independent Markov paths are simulated and every potential,
/// every along-path density and the cross densities between neighbouring probes
/// are checked. Finite state spaces are additionally scanned exhaustively,
/// including the row sums of `H_n` under the counting measure.
pub fn validate_model<M: FeynmanKacModel>(
    model: &M,
    probe_count: usize,
    rng_seed: u64,
) -> Result<ValidationReport> {
    if probe_count == 0 {
        return Err(Error::InvalidArgument(
            "probe_count must be at least 1".into(),
        ));
    }
    let horizon = model.horizon();
    let streams = RandomStreams::new(rng_seed);
    let mut violations = Vec::new();

    let check_g = |n: usize, x: &M::State, violations: &mut Vec<Violation>| {
        let g = model.potential(n, x);
        if !(g > 0.0 && g <= 1.0) {
            violations.push(Violation {
                epoch: n,
                kind: ViolationKind::Potential,
                state: format!("{x:?}"),
                value: g,
            });
        }
    };
    let check_h = |n: usize, x: &M::State, y: &M::State, violations: &mut Vec<Violation>| {
        let h = model.transition_density(n, x, y);
        if !(h > 0.0 && h.is_finite()) {
            violations.push(Violation {
                epoch: n,
                kind: ViolationKind::Density,
                state: format!("{x:?} -> {y:?}"),
                value: h,
            });
        }
    };

    let mut prev: Vec<M::State> = (0..probe_count)
        .map(|k| model.sample_initial(&mut streams.stream(0, Lane::Probe, k)))
        .collect();
    for x in &prev {
        check_g(0, x, &mut violations);
    }
    for n in 1..=horizon {
        let cur: Vec<M::State> = prev
            .iter()
            .enumerate()
            .map(|(k, x)| model.sample_transition(n, x, &mut streams.stream(n, Lane::Probe, k)))
            .collect();
        for k in 0..probe_count {
            check_g(n, &cur[k], &mut violations);
            check_h(n, &prev[k], &cur[k], &mut violations);
            let other = (k + 1) % probe_count;
            if other != k {
                check_h(n, &prev[other], &cur[k], &mut violations);
            }
        }
        prev = cur;
    }

    let mut max_row_sum_error = None;
    let exhaustive = if let Some(states) = model.state_space() {
        let mut worst: f64 = 0.0;
        for n in 0..=horizon {
            for x in &states {
                check_g(n, x, &mut violations);
            }
        }
        for n in 1..=horizon {
            for x in &states {
                let mut row = 0.0;
                for y in &states {
                    check_h(n, x, y, &mut violations);
                    row += model.transition_density(n, x, y);
                }
                let err = (row - 1.0).abs();
                worst = worst.max(err);
                if !(err <= ROW_SUM_TOLERANCE) {
                    violations.push(Violation {
                        epoch: n,
                        kind: ViolationKind::RowSum,
                        state: format!("{x:?}"),
                        value: row,
                    });
                }
            }
        }
        max_row_sum_error = Some(worst);
        true
    } else {
        false
    };

    Ok(ValidationReport {
        probes: probe_count,
        exhaustive,
        violations,
        max_row_sum_error,
    })
}
