use serde::{Deserialize, Serialize};

use super::semigroup::{alpha_h, check_mm_condition, dobrushin, semigroup, MmCondition};
use super::{check_horizon, FiniteStateModel};
use crate::error::{Error, Result};
use crate::stats::khintchine_constant;

/// Assembled non-asymptotic error bounds for additive functionals with unit-oscillation terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub horizon: usize,
    pub n_particles: usize,
    pub r: u32,
    pub a_r: f64,
    /// `min_{n,x,y,y'} H_n(x, y) / H_n(x, y')`.
    pub alpha: f64,
    /// `b_{p,n} = max Q_{p,n}(1) / min Q_{p,n}(1)`.
    pub b: Vec<f64>,
    /// `beta[p][k]` is the Dobrushin coefficient of `S_{p,p+k}`.
    pub beta: Vec<Vec<f64>>,
    /// `c_{p,n} = sum_{q<p} (1 - alpha^2)^{p-q} + sum_{p<=q<=n} b_{q,n}^2 beta(S_{p,q})`.
    pub c: Vec<f64>,
    /// `a_r sum_p b_{p,n}^2 c_{p,n}`: bound on `sqrt(N) E(|error|^r)^{1/r}` for `F_n`.
    pub additive_bound: f64,
    /// Same bound for the normalized functional (divided by `n + 1`).
    pub normalized_bound: f64,
    /// Scale `b` of the Gaussian tail `exp(-N eps^2 / (2 b^2))` for the normalized functional.
    pub concentration_scale: f64,
    /// Best regularity constants found for `m = 1..=d+1` (time-homogeneous models only).
    pub mm: Option<MmCondition>,
    /// Bound on `N E([Q_n^N - Q_n](F)^2)` for `|F| <= 1`, when `N > (n+1) rho delta^m`.
    pub mse_bound: Option<f64>,
}

fn best_mm(fsm: &FiniteStateModel) -> Result<Option<MmCondition>> {
    if !fsm.is_homogeneous() {
        return Ok(None);
    }
    let mut best: Option<MmCondition> = None;
    for m in 1..=fsm.dim() + 1 {
        if let Some(c) = check_mm_condition(fsm, m)? {
            if best.is_none_or(|b| c.constant() < b.constant()) {
                best = Some(c);
            }
        }
    }
    Ok(best)
}

pub fn nonasymptotic_bounds(
    fsm: &FiniteStateModel,
    horizon: usize,
    n_particles: usize,
    r: u32,
) -> Result<BoundReport> {
    check_horizon(fsm, horizon)?;
    if n_particles == 0 {
        return Err(Error::EmptyPopulation);
    }
    let n = horizon;
    let a_r = khintchine_constant(r)?;
    let alpha = alpha_h(fsm, n)?;

    let mut b = Vec::with_capacity(n + 1);
    let mut beta = Vec::with_capacity(n + 1);
    for p in 0..=n {
        let q_one = semigroup(fsm, p, n)?.column_sum();
        b.push(q_one.max() / q_one.min());
        let mut row = Vec::with_capacity(n - p + 1);
        for q in p..=n {
            let op = semigroup(fsm, p, q)?;
            let ones = op.column_sum();
            let mut s = op;
            for (x, mut r) in s.row_iter_mut().enumerate() {
                r /= ones[x];
            }
            row.push(dobrushin(&s));
        }
        beta.push(row);
    }
    let contraction = 1.0 - alpha * alpha;
    let c: Vec<f64> = (0..=n)
        .map(|p| {
            let past: f64 = (0..p).map(|q| contraction.powi((p - q) as i32)).sum();
            let ahead: f64 = (p..=n).map(|q| b[q] * b[q] * beta[p][q - p]).sum();
            past + ahead
        })
        .collect();
    let sum: f64 = (0..=n).map(|p| b[p] * b[p] * c[p]).sum();
    let scale = (n + 1) as f64;

    let mm = best_mm(fsm)?;
    let mse_bound = mm.and_then(|c| {
        let k = c.constant();
        let nf = n_particles as f64;
        (nf > scale * k).then(|| 2.0 * scale * k * (4.0 + k * (1.0 + 2.0 * (n as f64 + 2.0) / nf)))
    });
    Ok(BoundReport {
        horizon: n,
        n_particles,
        r,
        a_r,
        alpha,
        b,
        beta,
        c,
        additive_bound: a_r * sum,
        normalized_bound: a_r * sum / scale,
        concentration_scale: sum / scale,
        mm,
        mse_bound,
    })
}
