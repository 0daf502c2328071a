//! Exact computations on finite state spaces.
//!
//! Every quantity the particle estimators approximate (flows, normalizers,
//! backward kernels, path measures, semigroups, asymptotic variances,
//! stability constants and the h-process limit) is computed here by direct
//! matrix arithmetic, so tests can compare particle output against ground truth.

pub mod finite;
pub mod fixtures;

mod backward;
mod bounds;
mod flow;
mod hprocess;
mod paths;
mod semigroup;
mod variance;

use nalgebra::{DMatrix, DVector};

pub use backward::{
    duality_sides, exact_backward_kernel, exact_backward_values, exact_smoothed_additive,
    AdditiveAnalysis,
};
pub use bounds::{nonasymptotic_bounds, BoundReport};
pub use finite::FiniteStateModel;
pub use flow::{exact_flow, phi, ExactFlow};
pub use hprocess::{h_process, stationary_distribution, HProcess};
pub use paths::{
    backward_decomposition, enumerate_path_measure, enumerated_d_operator, segment_identity_sides,
    PathMeasure, DEFAULT_ENUMERATION_CAP,
};
pub use semigroup::{
    alpha_h, check_mm_condition, dobrushin, semigroup, semigroup_table, MmCondition,
    SemigroupEntry, SemigroupTable,
};
pub use variance::{clt_variance, genealogical_clt_variance, local_variance};

use crate::error::{Error, Result};
use crate::model::PathFunctional;

/// Per-epoch term tables of an additive functional on `{0, .., d-1}`.
///
/// `pairs[p][(y, x)]` is the epoch-`p` term for the transition `y -> x`
/// (terminal terms ignore `y`); `pairs[0]` is unused.
#[derive(Debug, Clone)]
pub(crate) struct TermTables {
    pub initial: DVector<f64>,
    pub pairs: Vec<DMatrix<f64>>,
}

pub(crate) fn term_tables(
    functional: &PathFunctional<usize>,
    horizon: usize,
    d: usize,
) -> Result<TermTables> {
    functional.require_additive("exact additive oracle")?;
    functional.check_covers(horizon)?;
    let initial = DVector::from_fn(d, |x, _| functional.local(0, None, &x));
    let mut pairs = vec![DMatrix::zeros(0, 0)];
    for p in 1..=horizon {
        pairs.push(DMatrix::from_fn(d, d, |y, x| {
            functional.local(p, Some(&y), &x)
        }));
    }
    Ok(TermTables { initial, pairs })
}

pub(crate) fn check_horizon(fsm: &FiniteStateModel, horizon: usize) -> Result<()> {
    if horizon > fsm.horizon() {
        Err(Error::EpochOutOfRange {
            epoch: horizon,
            min: 0,
            horizon: fsm.horizon(),
        })
    } else {
        Ok(())
    }
}

pub(crate) fn check_distribution_len(eta: &DVector<f64>, d: usize) -> Result<()> {
    if eta.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "measure has {} entries, model has {d} states",
            eta.len()
        )));
    }
    Ok(())
}
