use nalgebra::DVector;

use super::backward::AdditiveAnalysis;
use super::flow::phi;
use super::{check_distribution_len, term_tables, FiniteStateModel};
use crate::error::{Error, Result};
use crate::model::PathFunctional;

fn variance_under(mu: &DVector<f64>, h: &DVector<f64>) -> f64 {
    let mean = mu.dot(h);
    mu.dot(&h.component_mul(h)) - mean * mean
}

/// Asymptotic variance of `sqrt(N) [Q_n^N - Q_n](F)` for the backward estimator with proportional selection:
/// `sum_p Var_{eta_p}(G_{p,n} P_{p,n}(F - Q_n F))`.
pub fn clt_variance(
    fsm: &FiniteStateModel,
    horizon: usize,
    functional: &PathFunctional<usize>,
) -> Result<f64> {
    let analysis = AdditiveAnalysis::new(fsm, horizon, functional)?;
    let c = analysis.smoothed();
    let mut total = 0.0;
    for p in 0..=horizon {
        let q_one = &analysis.q_one[p];
        let eta = &analysis.flow.eta[p];
        let h = (analysis.d_operator(p) - q_one * c) / eta.dot(q_one);
        total += variance_under(eta, &h);
    }
    Ok(total)
}

/// Asymptotic variance of `sqrt(N)` times the genealogical-tree estimator error,
/// with proportional selection. This is the variance of the particle
/// approximation of the flow on path space, computed through the first two
/// moments of the partial sums carried by each ancestral line.
pub fn genealogical_clt_variance(
    fsm: &FiniteStateModel,
    horizon: usize,
    functional: &PathFunctional<usize>,
) -> Result<f64> {
    let d = fsm.dim();
    let analysis = AdditiveAnalysis::new(fsm, horizon, functional)?;
    let terms = term_tables(functional, horizon, d)?;
    let scale = analysis.scale();
    let c_raw = analysis.smoothed() / scale;

    let mut m0 = fsm.initial().clone();
    let mut m1 = m0.component_mul(&terms.initial);
    let mut m2 = m1.component_mul(&terms.initial);
    let mut total = 0.0;
    for p in 0..=horizon {
        if p > 0 {
            let q = fsm.q_matrix(p);
            let t = &terms.pairs[p];
            let (mut n0, mut n1, mut n2) =
                (DVector::zeros(d), DVector::zeros(d), DVector::zeros(d));
            for x in 0..d {
                for y in 0..d {
                    let w = q[(x, y)];
                    let f = t[(x, y)];
                    n0[y] += m0[x] * w;
                    n1[y] += (m1[x] + m0[x] * f) * w;
                    n2[y] += (m2[x] + 2.0 * m1[x] * f + m0[x] * f * f) * w;
                }
            }
            (m0, m1, m2) = (n0, n1, n2);
        }
        let mass = m0.sum();
        let a = &analysis.q_one[p];
        let b = &analysis.future[p] - a * c_raw;
        let norm = analysis.flow.eta[p].dot(a);
        let mut first = 0.0;
        let mut second = 0.0;
        for x in 0..d {
            first += m1[x] * a[x] + m0[x] * b[x];
            second += m2[x] * a[x] * a[x] + 2.0 * m1[x] * a[x] * b[x] + m0[x] * b[x] * b[x];
        }
        let mean = first / (mass * norm);
        total += second / (mass * norm * norm) - mean * mean;
    }
    Ok(total * scale * scale)
}

/// `E[V_n(f)^2 | eta_{n-1}^N = eta] = sum_x eta(x) (K(f^2)(x) - K(f)(x)^2)` for the
/// selection-mutation transition `K(x, .) = eps G(x) M_n(x, .) + (1 - eps G(x)) Phi_n(eta)`.
/// With `epsilon = 0` this is `Var_{Phi_n(eta)}(f)`.
pub fn local_variance(
    fsm: &FiniteStateModel,
    n: usize,
    eta: &DVector<f64>,
    f: &DVector<f64>,
    epsilon: f64,
) -> Result<f64> {
    let d = fsm.dim();
    check_distribution_len(f, d)?;
    let pushed = phi(fsm, n, eta)?;
    let g = fsm.potential_vector(n - 1);
    let max_g = (0..d)
        .filter(|&x| eta[x] > 0.0)
        .map(|x| g[x])
        .fold(0.0, f64::max);
    if !(epsilon >= 0.0 && epsilon * max_g <= 1.0 + 1e-12) {
        return Err(Error::EpsilonConstraint {
            epoch: n - 1,
            epsilon,
            max_potential: max_g,
        });
    }
    let f2 = f.component_mul(f);
    let m_f = fsm.transition(n) * f;
    let m_f2 = fsm.transition(n) * &f2;
    let phi_f = pushed.dot(f);
    let phi_f2 = pushed.dot(&f2);
    let mut total = 0.0;
    for x in 0..d {
        let keep = epsilon * g[x];
        let kf = keep * m_f[x] + (1.0 - keep) * phi_f;
        let kf2 = keep * m_f2[x] + (1.0 - keep) * phi_f2;
        total += eta[x] * (kf2 - kf * kf);
    }
    Ok(total)
}
