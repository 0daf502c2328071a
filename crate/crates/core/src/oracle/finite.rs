use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::model::{FeynmanKacModel, ROW_SUM_TOLERANCE};
use crate::rng::uniform;

/// A Feynman-Kac model on `{0, .., d-1}` with explicit matrices.
///
/// The reference measure is the counting measure, so `H_n(x, y) = M_n[x][y]`.
/// Time-homogeneous models store one `(M, G)` pair and accept any horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteStateModel {
    initial: DVector<f64>,
    transitions: Vec<DMatrix<f64>>,
    potentials: Vec<DVector<f64>>,
    horizon: usize,
    homogeneous: bool,
    values: Vec<f64>,
    reversing_measure: Option<DVector<f64>>,
    initial_cdf: Vec<f64>,
    transition_cdfs: Vec<Vec<f64>>,
}

fn check_distribution(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidModel(format!(
            "{what} has negative or non-finite entries"
        )));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::InvalidModel(format!(
            "{what} sums to {s}, expected 1"
        )));
    }
    Ok(())
}

fn check_stochastic(m: &DMatrix<f64>, d: usize, what: &str) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {}x{}, expected {d}x{d}",
            m.nrows(),
            m.ncols()
        )));
    }
    for (x, row) in m.row_iter().enumerate() {
        if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidModel(format!(
                "{what} row {x} has negative or non-finite entries"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidModel(format!(
                "{what} row {x} sums to {s}, expected 1"
            )));
        }
    }
    Ok(())
}

fn check_potential(g: &DVector<f64>, d: usize, what: &str) -> Result<()> {
    if g.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "{what} has {} entries, expected {d}",
            g.len()
        )));
    }
    if let Some(v) = g.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Error::InvalidModel(format!(
            "{what} has entry {v} outside (0, 1]"
        )));
    }
    Ok(())
}

fn cumulative(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Inverse-CDF draw: first index whose cumulative mass exceeds `u * total`.
#[inline]
pub(crate) fn inverse_cdf(cdf: &[f64], u: f64) -> usize {
    let target = u * cdf[cdf.len() - 1];
    let idx = cdf.partition_point(|&c| c <= target);
    idx.min(cdf.len() - 1)
}

impl FiniteStateModel {
    pub fn homogeneous(
        initial: DVector<f64>,
        transition: DMatrix<f64>,
        potential: DVector<f64>,
        horizon: usize,
    ) -> Result<Self> {
        Self::build(initial, vec![transition], vec![potential], horizon, true)
    }

    /// `transitions[k]` is `M_{k+1}`, `potentials[k]` is `G_k`; one more potential than transitions.
    pub fn inhomogeneous(
        initial: DVector<f64>,
        transitions: Vec<DMatrix<f64>>,
        potentials: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if potentials.len() != transitions.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} transitions need {} potentials, got {}",
                transitions.len(),
                transitions.len() + 1,
                potentials.len()
            )));
        }
        let horizon = transitions.len();
        Self::build(initial, transitions, potentials, horizon, false)
    }

    /// `M(x, dy) = eta_0(dy)` with `G = 1`, on states labelled by `values`.
    pub fn iid_toy(values: Vec<f64>, weights: Vec<f64>, horizon: usize) -> Result<Self> {
        let d = weights.len();
        if values.len() != d {
            return Err(Error::DimensionMismatch(
                "iid-toy values and weights differ in length".into(),
            ));
        }
        let eta0 = DVector::from_vec(weights);
        let m = DMatrix::from_fn(d, d, |_, y| eta0[y]);
        Self::homogeneous(eta0, m, DVector::from_element(d, 1.0), horizon)?.with_values(values)
    }

    fn build(
        initial: DVector<f64>,
        transitions: Vec<DMatrix<f64>>,
        potentials: Vec<DVector<f64>>,
        horizon: usize,
        homogeneous: bool,
    ) -> Result<Self> {
        let d = initial.len();
        if d == 0 {
            return Err(Error::InvalidModel("state space is empty".into()));
        }
        check_distribution(&initial, "initial distribution")?;
        for (k, m) in transitions.iter().enumerate() {
            check_stochastic(m, d, &format!("transition M_{}", k + 1))?;
        }
        for (k, g) in potentials.iter().enumerate() {
            check_potential(g, d, &format!("potential G_{k}"))?;
        }
        let initial_cdf = cumulative(initial.iter().cloned());
        let transition_cdfs = transitions
            .iter()
            .map(|m| {
                (0..d)
                    .flat_map(|x| cumulative(m.row(x).iter().cloned()))
                    .collect()
            })
            .collect();
        Ok(Self {
            initial,
            transitions,
            potentials,
            horizon,
            homogeneous,
            values: (0..d).map(|x| x as f64).collect(),
            reversing_measure: None,
            initial_cdf,
            transition_cdfs,
        })
    }

    /// Numeric labels of the states, used by the functional catalog.
    pub fn with_values(mut self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} state values for {} states",
                values.len(),
                self.dim()
            )));
        }
        self.values = values;
        Ok(self)
    }

    /// Declare a measure `mu` with respect to which `M` is reversible.
    pub fn with_reversing_measure(mut self, mu: DVector<f64>) -> Result<Self> {
        if mu.len() != self.dim() {
            return Err(Error::DimensionMismatch(
                "reversing measure has the wrong length".into(),
            ));
        }
        check_distribution(&mu, "reversing measure")?;
        self.reversing_measure = Some(mu);
        Ok(self)
    }

    /// Same model with another final epoch. Only time-homogeneous models can be extended.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if !self.homogeneous && horizon > self.horizon {
            return Err(Error::InvalidArgument(format!(
                "time-inhomogeneous model has horizon {}, cannot extend to {horizon}",
                self.horizon
            )));
        }
        let mut out = self.clone();
        out.horizon = horizon;
        if !self.homogeneous {
            out.transitions.truncate(horizon);
            out.transition_cdfs.truncate(horizon);
            out.potentials.truncate(horizon + 1);
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.initial
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn reversing_measure(&self) -> Option<&DVector<f64>> {
        self.reversing_measure.as_ref()
    }

    #[inline]
    fn transition_slot(&self, n: usize) -> usize {
        if self.homogeneous {
            0
        } else {
            n - 1
        }
    }

    /// `M_n` for `1 <= n <= horizon` (any `n >= 1` when homogeneous).
    pub fn transition(&self, n: usize) -> &DMatrix<f64> {
        assert!(n >= 1, "M_0 does not exist");
        &self.transitions[self.transition_slot(n)]
    }

    /// `G_n` for `0 <= n <= horizon` (any `n` when homogeneous).
    pub fn potential_vector(&self, n: usize) -> &DVector<f64> {
        if self.homogeneous {
            &self.potentials[0]
        } else {
            &self.potentials[n]
        }
    }

    /// `Q_n(x, y) = G_{n-1}(x) M_n(x, y)`.
    pub fn q_matrix(&self, n: usize) -> DMatrix<f64> {
        let g = self.potential_vector(n - 1);
        let mut q = self.transition(n).clone();
        for (x, mut row) in q.row_iter_mut().enumerate() {
            row *= g[x];
        }
        q
    }

    /// Condition (H): every transition entry is strictly positive.
    pub fn has_positive_densities(&self) -> bool {
        self.transitions.iter().all(|m| m.iter().all(|v| *v > 0.0))
    }

    /// Largest deviation of a transition row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        self.transitions
            .iter()
            .flat_map(|m| {
                m.row_iter()
                    .map(|r| (r.sum() - 1.0).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }
}

impl FeynmanKacModel for FiniteStateModel {
    type State = usize;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn sample_initial<R: RngCore + ?Sized>(&self, rng: &mut R) -> usize {
        inverse_cdf(&self.initial_cdf, uniform(rng))
    }

    fn sample_transition<R: RngCore + ?Sized>(
        &self,
        epoch: usize,
        from: &usize,
        rng: &mut R,
    ) -> usize {
        let d = self.dim();
        let cdf = &self.transition_cdfs[self.transition_slot(epoch)];
        inverse_cdf(&cdf[from * d..(from + 1) * d], uniform(rng))
    }

    #[inline]
    fn transition_density(&self, epoch: usize, from: &usize, to: &usize) -> f64 {
        self.transitions[self.transition_slot(epoch)][(*from, *to)]
    }

    #[inline]
    fn potential(&self, epoch: usize, x: &usize) -> f64 {
        self.potential_vector(epoch)[*x]
    }

    fn state_space(&self) -> Option<Vec<usize>> {
        Some((0..self.dim()).collect())
    }

    #[inline]
    fn state_index(&self, x: &usize) -> Option<usize> {
        Some(*x)
    }
}
