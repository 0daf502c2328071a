use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::flow::exact_flow;
use super::{check_horizon, FiniteStateModel};
use crate::error::{Error, Result};

/// `Q_{p,n} = Q_{p+1} ... Q_n`, the identity when `p = n`.
pub fn semigroup(fsm: &FiniteStateModel, p: usize, n: usize) -> Result<DMatrix<f64>> {
    check_horizon(fsm, n)?;
    if p > n {
        return Err(Error::InvalidArgument(format!(
            "semigroup start {p} after end {n}"
        )));
    }
    let mut out = DMatrix::identity(fsm.dim(), fsm.dim());
    for q in p + 1..=n {
        out *= fsm.q_matrix(q);
    }
    Ok(out)
}

/// Dobrushin coefficient of a row-stochastic matrix: largest half-L1 distance between rows.
pub fn dobrushin(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut worst: f64 = 0.0;
    for a in 0..d {
        for b in a + 1..d {
            let dist: f64 = (0..m.ncols()).map(|y| (m[(a, y)] - m[(b, y)]).abs()).sum();
            worst = worst.max(0.5 * dist);
        }
    }
    worst
}

fn row_normalize(q: &DMatrix<f64>, q_one: &DVector<f64>) -> DMatrix<f64> {
    let mut s = q.clone();
    for (x, mut row) in s.row_iter_mut().enumerate() {
        row /= q_one[x];
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupEntry {
    pub p: usize,
    pub n: usize,
    /// `Q_{p,n}`.
    pub operator: DMatrix<f64>,
    /// `Q_{p,n}(1)`.
    pub q_one: DVector<f64>,
    /// `S_{p,n}(g) = Q_{p,n}(g) / Q_{p,n}(1)`.
    pub normalized: DMatrix<f64>,
    /// `b_{p,n} = max_{x,y} Q_{p,n}(1)(x) / Q_{p,n}(1)(y)`.
    pub b: f64,
    /// Dobrushin coefficient of `S_{p,n}`.
    pub beta: f64,
    /// `G_{p,n} = Q_{p,n}(1) / eta_p Q_{p,n}(1)`.
    pub g_pn: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemigroupTable {
    pub entries: Vec<SemigroupEntry>,
}

impl SemigroupTable {
    pub fn get(&self, p: usize, n: usize) -> Option<&SemigroupEntry> {
        self.entries.iter().find(|e| e.p == p && e.n == n)
    }
}

pub fn semigroup_table(fsm: &FiniteStateModel, pairs: &[(usize, usize)]) -> Result<SemigroupTable> {
    let Some(max_n) = pairs.iter().map(|&(_, n)| n).max() else {
        return Ok(SemigroupTable::default());
    };
    let flow = exact_flow(fsm, max_n)?;
    let entries = pairs
        .iter()
        .map(|&(p, n)| {
            let operator = semigroup(fsm, p, n)?;
            let q_one = operator.column_sum();
            let normalized = row_normalize(&operator, &q_one);
            let b = q_one.max() / q_one.min();
            let g_pn = &q_one / flow.eta[p].dot(&q_one);
            Ok(SemigroupEntry {
                p,
                n,
                beta: dobrushin(&normalized),
                operator,
                q_one,
                normalized,
                b,
                g_pn,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SemigroupTable { entries })
}

/// Smallest constants `(delta, rho)` of the uniform regularity condition of order `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmCondition {
    pub m: usize,
    /// `max G / min G`.
    pub delta: f64,
    /// `max_{x,x',y} M^m(x, y) / M^m(x', y)`.
    pub rho: f64,
}

impl MmCondition {
    /// `rho delta^m`.
    pub fn constant(&self) -> f64 {
        self.rho * self.delta.powi(self.m as i32)
    }
}

/// `None` when some entry of `M^m` vanishes and no finite `rho` exists.
pub fn check_mm_condition(fsm: &FiniteStateModel, m: usize) -> Result<Option<MmCondition>> {
    if !fsm.is_homogeneous() {
        return Err(Error::InvalidArgument(
            "the regularity condition needs a time-homogeneous model".into(),
        ));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    let g = fsm.potential_vector(0);
    let delta = g.max() / g.min();
    let mut power = fsm.transition(1).clone();
    for _ in 1..m {
        power *= fsm.transition(1);
    }
    if power.iter().any(|v| *v <= 0.0) {
        return Ok(None);
    }
    let rho = power
        .column_iter()
        .map(|col| col.max() / col.min())
        .fold(1.0, f64::max);
    Ok(Some(MmCondition { m, delta, rho }))
}

/// `alpha(h) = min_{n, x, y, y'} H_n(x, y) / H_n(x, y')` over epochs `1..=horizon`.
pub fn alpha_h(fsm: &FiniteStateModel, horizon: usize) -> Result<f64> {
    check_horizon(fsm, horizon)?;
    let epochs = if fsm.is_homogeneous() { 1 } else { horizon };
    let mut alpha: f64 = 1.0;
    for n in 1..=epochs {
        for row in fsm.transition(n).row_iter() {
            let hi = row.max();
            let lo = row.min();
            alpha = alpha.min(lo / hi);
        }
    }
    Ok(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fixtures;

    fn flat(d: usize) -> FiniteStateModel {
        let w = vec![1.0 / d as f64; d];
        FiniteStateModel::iid_toy((0..d).map(|x| x as f64).collect(), w, 6).unwrap()
    }

    #[test]
    fn identity_has_unit_beta() {
        let m = fixtures::three_state();
        let t = semigroup_table(&m, &[(2, 2)]).unwrap();
        let e = t.get(2, 2).unwrap();
        assert_eq!(e.beta, 1.0);
        assert_eq!(e.b, 1.0);
    }

    #[test]
    fn equal_rows_forget_in_one_step() {
        let m = flat(3);
        let t = semigroup_table(&m, &[(0, 1), (1, 4)]).unwrap();
        for e in &t.entries {
            assert_eq!(e.beta, 0.0);
            assert_eq!(e.b, 1.0);
        }
    }

    #[test]
    fn g_pn_has_unit_mean() {
        let m = fixtures::three_state();
        let flow = exact_flow(&m, 6).unwrap();
        let t = semigroup_table(&m, &[(0, 6), (2, 5), (4, 6)]).unwrap();
        for e in &t.entries {
            assert!((flow.eta[e.p].dot(&e.g_pn) - 1.0).abs() < 1e-14);
            assert!(e.b >= 1.0);
            assert!((0.0..=1.0).contains(&e.beta));
        }
    }

    #[test]
    fn mm_condition_basics() {
        let c = check_mm_condition(&flat(3), 1).unwrap().unwrap();
        assert_eq!((c.delta, c.rho), (1.0, 1.0));
        let m = FiniteStateModel::homogeneous(
            DVector::from_vec(vec![0.5, 0.5]),
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.3, 0.7]),
            DVector::from_vec(vec![0.5, 1.0]),
            2,
        )
        .unwrap();
        let c = check_mm_condition(&m, 1).unwrap().unwrap();
        assert_eq!(c.delta, 2.0);
        assert!((c.rho - 7.0).abs() < 1e-12);
        let sparse = FiniteStateModel::homogeneous(
            DVector::from_vec(vec![0.5, 0.5]),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            2,
        )
        .unwrap();
        assert_eq!(check_mm_condition(&sparse, 1).unwrap(), None);
        assert_eq!(check_mm_condition(&sparse, 2).unwrap(), None);
    }

    #[test]
    fn alpha_of_fixture() {
        let m = fixtures::three_state();
        // rows (0.6,0.3,0.1), (0.2,0.5,0.3), (0.25,0.25,0.5)
        assert!((alpha_h(&m, 4).unwrap() - 0.1 / 0.6).abs() < 1e-15);
    }
}
