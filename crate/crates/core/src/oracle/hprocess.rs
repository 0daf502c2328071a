use nalgebra::{DMatrix, DVector};

use super::FiniteStateModel;
use crate::error::{Error, Result};

/// Top eigenpair of `Q = diag(G) M` and the associated h-process.
#[derive(Debug, Clone, PartialEq)]
pub struct HProcess {
    pub eigenvalue: f64,
    /// Right eigenvector of `Q`, scaled to `max h = 1`.
    pub h: DVector<f64>,
    /// `mu_h(x) ∝ h(x) M(h)(x) mu(x)`.
    pub mu_h: DVector<f64>,
    /// `M_h(x, y) = M(x, y) h(y) / M(h)(x)`.
    pub m_h: DMatrix<f64>,
    /// Invariant law of `M_h`, solved independently of `mu_h`.
    pub m_h_stationary: DVector<f64>,
    /// `max_x |mu_h(x) - m_h_stationary(x)|`.
    pub stationarity_gap: f64,
    /// The measure `mu` used for `mu_h`: the declared reversing measure, or the invariant law of `M`.
    pub reference: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Invariant probability of a row-stochastic irreducible matrix, by a linear solve.
pub fn stationary_distribution(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = m.nrows();
    let mut a = m.transpose() - DMatrix::identity(d, d);
    for y in 0..d {
        a[(d - 1, y)] = 1.0;
    }
    let mut rhs = DVector::zeros(d);
    rhs[d - 1] = 1.0;
    let pi = a.lu().solve(&rhs).ok_or_else(|| {
        Error::NotPrimitive("transition matrix has no unique invariant law".into())
    })?;
    if pi.iter().any(|v| *v < -1e-12) {
        return Err(Error::NotPrimitive(
            "invariant law has negative entries".into(),
        ));
    }
    Ok(pi.map(|v| v.max(0.0)))
}

/// `A^k > 0` for `k = (d-1)^2 + 1` iff the nonnegative matrix `A` is primitive.
fn is_primitive(a: &DMatrix<f64>) -> bool {
    let d = a.nrows();
    let pattern = a.map(|v| v > 0.0);
    let mut power = pattern.clone();
    for _ in 1..(d - 1) * (d - 1) + 1 {
        let mut next = DMatrix::from_element(d, d, false);
        for i in 0..d {
            for j in 0..d {
                next[(i, j)] = (0..d).any(|k| power[(i, k)] && pattern[(k, j)]);
            }
        }
        power = next;
    }
    power.iter().all(|v| *v)
}

/// Power iteration from the uniform vector, stopped when
/// `max_x |Q h(x) / lambda - h(x)| <= tolerance`.
pub fn h_process(fsm: &FiniteStateModel, tolerance: f64, max_iters: usize) -> Result<HProcess> {
    if !fsm.is_homogeneous() {
        return Err(Error::InvalidArgument(
            "h-process needs a time-homogeneous model".into(),
        ));
    }
    if !(tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tolerance}"
        )));
    }
    let d = fsm.dim();
    let m = fsm.transition(1).clone();
    let q = fsm.q_matrix(1);
    if !is_primitive(&q) {
        return Err(Error::NotPrimitive(
            "Q = G M has no strictly positive power".into(),
        ));
    }
    let mut h = DVector::from_element(d, 1.0);
    let mut eigenvalue = 0.0;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let next = &q * &h;
        eigenvalue = next.max();
        let next = next / eigenvalue;
        residual = (&next - &h).amax();
        h = next;
        if residual <= tolerance {
            break;
        }
    }
    if residual > tolerance {
        return Err(Error::NonConvergence {
            iterations,
            residual,
        });
    }
    let m_of_h = &m * &h;
    let reference = match fsm.reversing_measure() {
        Some(mu) => mu.clone(),
        None => stationary_distribution(&m)?,
    };
    let unnormalized = h.component_mul(&m_of_h).component_mul(&reference);
    let mu_h = &unnormalized / unnormalized.sum();
    let m_h = DMatrix::from_fn(d, d, |x, y| m[(x, y)] * h[y] / m_of_h[x]);
    let m_h_stationary = stationary_distribution(&m_h)?;
    let stationarity_gap = (&mu_h - &m_h_stationary).amax();
    Ok(HProcess {
        eigenvalue,
        h,
        mu_h,
        m_h,
        m_h_stationary,
        stationarity_gap,
        reference,
        iterations,
        residual,
    })
}
