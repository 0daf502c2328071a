use nalgebra::{DMatrix, DVector};

use super::flow::{exact_flow, phi, ExactFlow};
use super::{check_distribution_len, term_tables, FiniteStateModel};
use crate::error::{Error, Result};
use crate::model::PathFunctional;

/// `M_{n, eta}[x][y] = G_{n-1}(y) M_n[y][x] eta(y) / sum_{y'} G_{n-1}(y') M_n[y'][x] eta(y')`.
pub fn exact_backward_kernel(
    fsm: &FiniteStateModel,
    n: usize,
    eta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let d = fsm.dim();
    check_distribution_len(eta, d)?;
    if n == 0 {
        return Err(Error::EpochOutOfRange {
            epoch: 0,
            min: 1,
            horizon: fsm.horizon(),
        });
    }
    let g = fsm.potential_vector(n - 1);
    let m = fsm.transition(n);
    let mut out = DMatrix::zeros(d, d);
    for x in 0..d {
        let mut total = 0.0;
        for y in 0..d {
            let w = g[y] * m[(y, x)] * eta[y];
            out[(x, y)] = w;
            total += w;
        }
        if !(total > 0.0) {
            return Err(Error::ZeroBackwardNormalizer {
                epoch: n,
                particle: x,
            });
        }
        for y in 0..d {
            out[(x, y)] /= total;
        }
    }
    Ok(out)
}

/// Both sides of the duality `Psi_{G_{n-1}}(eta)(f M_n(g)) = Phi_n(eta)(g M_{n,eta}(f))`.
pub fn duality_sides(
    fsm: &FiniteStateModel,
    n: usize,
    eta: &DVector<f64>,
    f: &DVector<f64>,
    g: &DVector<f64>,
) -> Result<(f64, f64)> {
    let d = fsm.dim();
    check_distribution_len(f, d)?;
    check_distribution_len(g, d)?;
    let backward = exact_backward_kernel(fsm, n, eta)?;
    let potential = fsm.potential_vector(n - 1);
    let weighted = eta.component_mul(potential);
    let psi = &weighted / weighted.sum();
    let m_g = fsm.transition(n) * g;
    let left = psi.dot(&f.component_mul(&m_g));
    let pushed = phi(fsm, n, eta)?;
    let back_f = &backward * f;
    let right = pushed.dot(&g.component_mul(&back_f));
    Ok((left, right))
}

/// Exact analogue of the particle recursion, `F_p(x) = sum_y M_{p, eta_{p-1}}(x, y) (f_p(y, x) + F_{p-1}(y))`,
/// with `F_0 = f_0`. Values are unnormalized.
pub fn exact_backward_values(
    fsm: &FiniteStateModel,
    horizon: usize,
    functional: &PathFunctional<usize>,
) -> Result<Vec<DVector<f64>>> {
    let flow = exact_flow(fsm, horizon)?;
    backward_values_with(fsm, &flow, functional)
}

fn backward_values_with(
    fsm: &FiniteStateModel,
    flow: &ExactFlow,
    functional: &PathFunctional<usize>,
) -> Result<Vec<DVector<f64>>> {
    let d = fsm.dim();
    let n = flow.horizon();
    let terms = term_tables(functional, n, d)?;
    let mut values = vec![terms.initial.clone()];
    for p in 1..=n {
        let kernel = exact_backward_kernel(fsm, p, &flow.eta[p - 1])?;
        let prev = &values[p - 1];
        let next = DVector::from_fn(d, |x, _| {
            (0..d)
                .map(|y| kernel[(x, y)] * (terms.pairs[p][(y, x)] + prev[y]))
                .sum()
        });
        values.push(next);
    }
    Ok(values)
}

/// `Q_n(F_n)` for additive `F_n` via the exact backward recursion.
pub fn exact_smoothed_additive(
    fsm: &FiniteStateModel,
    horizon: usize,
    functional: &PathFunctional<usize>,
) -> Result<f64> {
    Ok(AdditiveAnalysis::new(fsm, horizon, functional)?.smoothed())
}

/// Everything the variance and semigroup oracles need about one additive functional.
#[derive(Debug, Clone)]
pub struct AdditiveAnalysis {
    pub flow: ExactFlow,
    /// Exact backward values `F_p` (unnormalized), `p = 0..=n`.
    pub backward_values: Vec<DVector<f64>>,
    /// `Q_{p,n}(1)`.
    pub q_one: Vec<DVector<f64>>,
    /// Expected contribution of the terms after epoch `p`:
    /// `R_p = sum_{p < q <= n} Q_{p,q-1}(v_q)` with `v_q(a) = sum_b Q_q(a, b) f_q(a, b) Q_{q,n}(1)(b)`.
    pub future: Vec<DVector<f64>>,
    scale: f64,
}

impl AdditiveAnalysis {
    pub fn new(
        fsm: &FiniteStateModel,
        horizon: usize,
        functional: &PathFunctional<usize>,
    ) -> Result<Self> {
        let d = fsm.dim();
        let flow = exact_flow(fsm, horizon)?;
        let backward_values = backward_values_with(fsm, &flow, functional)?;
        let terms = term_tables(functional, horizon, d)?;
        let n = horizon;
        let mut q_one = vec![DVector::from_element(d, 1.0); n + 1];
        let mut future = vec![DVector::zeros(d); n + 1];
        for p in (0..n).rev() {
            let q = fsm.q_matrix(p + 1);
            q_one[p] = &q * &q_one[p + 1];
            let v = DVector::from_fn(d, |a, _| {
                (0..d)
                    .map(|b| q[(a, b)] * terms.pairs[p + 1][(a, b)] * q_one[p + 1][b])
                    .sum()
            });
            future[p] = v + &q * &future[p + 1];
        }
        Ok(Self {
            flow,
            backward_values,
            q_one,
            future,
            scale: functional.scale(1.0, n),
        })
    }

    pub fn horizon(&self) -> usize {
        self.flow.horizon()
    }

    /// `Q_n(F_n)`, normalization included.
    pub fn smoothed(&self) -> f64 {
        let n = self.horizon();
        self.scale * self.flow.eta[n].dot(&self.backward_values[n])
    }

    /// `Gamma_n(F_n) = gamma_n(1) Q_n(F_n)`.
    pub fn unnormalized(&self) -> f64 {
        self.flow.normalizers[self.horizon()] * self.smoothed()
    }

    /// `D_{p,n}(F_n)(x) = F_p(x) Q_{p,n}(1)(x) + R_p(x)`, normalization included.
    pub fn d_operator(&self, p: usize) -> DVector<f64> {
        (self.backward_values[p].component_mul(&self.q_one[p]) + &self.future[p]) * self.scale
    }

    /// Factor applied to raw sums (`1/(n+1)` for normalized functionals).
    pub fn scale(&self) -> f64 {
        self.scale
    }
}
