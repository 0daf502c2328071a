use nalgebra::{DMatrix, DVector};

use super::backward::exact_backward_kernel;
use super::flow::{exact_flow, phi};
use super::{check_distribution_len, check_horizon, FiniteStateModel};
use crate::error::{Error, Result};
use crate::model::PathFunctional;

pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// Number of paths `d^(len)`, or a cap error.
pub(crate) fn atom_count(d: usize, len: usize, cap: usize) -> Result<usize> {
    let mut atoms: u128 = 1;
    for _ in 0..len {
        atoms = atoms.saturating_mul(d as u128);
    }
    if atoms > cap as u128 {
        return Err(Error::EnumerationCap { atoms, cap });
    }
    Ok(atoms as usize)
}

/// Decode an atom index into a path; the first coordinate is the most significant digit.
pub(crate) fn decode(mut index: usize, d: usize, len: usize) -> Vec<usize> {
    let mut path = vec![0; len];
    for slot in path.iter_mut().rev() {
        *slot = index % d;
        index /= d;
    }
    path
}

/// Explicit `Gamma_n` over all `d^(n+1)` paths; `Q_n = Gamma_n / Gamma_n(1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMeasure {
    dim: usize,
    horizon: usize,
    masses: Vec<f64>,
    total: f64,
}

impl PathMeasure {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Unnormalized atom masses, indexed like [`PathMeasure::path`].
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// `Gamma_n(1) = Z_n`.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn path(&self, index: usize) -> Vec<usize> {
        decode(index, self.dim, self.horizon + 1)
    }

    pub fn normalized_mass(&self, index: usize) -> f64 {
        self.masses[index] / self.total
    }

    pub fn normalized_masses(&self) -> Vec<f64> {
        self.masses.iter().map(|m| m / self.total).collect()
    }

    /// `Gamma_n(F)`.
    pub fn unnormalized_expectation(&self, functional: &PathFunctional<usize>) -> Result<f64> {
        let mut acc = 0.0;
        for (k, m) in self.masses.iter().enumerate() {
            acc += m * functional.eval_path(&self.path(k))?;
        }
        Ok(acc)
    }

    /// `Q_n(F)`.
    pub fn expectation(&self, functional: &PathFunctional<usize>) -> Result<f64> {
        Ok(self.unnormalized_expectation(functional)? / self.total)
    }
}

/// Atom `(x_0..x_n)` gets `eta_0(x_0) prod_p M_p(x_{p-1}, x_p) prod_{p<n} G_p(x_p)`.
pub fn enumerate_path_measure(
    fsm: &FiniteStateModel,
    horizon: usize,
    cap: usize,
) -> Result<PathMeasure> {
    check_horizon(fsm, horizon)?;
    let d = fsm.dim();
    atom_count(d, horizon + 1, cap)?;
    let mut masses: Vec<f64> = fsm.initial().iter().cloned().collect();
    for p in 0..horizon {
        let g = fsm.potential_vector(p);
        let m = fsm.transition(p + 1);
        let mut next = Vec::with_capacity(masses.len() * d);
        for (k, mass) in masses.iter().enumerate() {
            let last = k % d;
            let carried = mass * g[last];
            for x in 0..d {
                next.push(carried * m[(last, x)]);
            }
        }
        masses = next;
    }
    let total = masses.iter().sum();
    Ok(PathMeasure {
        dim: d,
        horizon,
        masses,
        total,
    })
}

/// Normalized atom table of `eta_n(x_n) prod_{q=1}^n M_{q, eta_{q-1}}(x_q, x_{q-1})`,
/// indexed like [`enumerate_path_measure`].
pub fn backward_decomposition(
    fsm: &FiniteStateModel,
    horizon: usize,
    cap: usize,
) -> Result<Vec<f64>> {
    let d = fsm.dim();
    let atoms = atom_count(d, horizon + 1, cap)?;
    let flow = exact_flow(fsm, horizon)?;
    let kernels: Vec<DMatrix<f64>> = (1..=horizon)
        .map(|q| exact_backward_kernel(fsm, q, &flow.eta[q - 1]))
        .collect::<Result<_>>()?;
    Ok((0..atoms)
        .map(|k| {
            let path = decode(k, d, horizon + 1);
            let mut mass = flow.eta[horizon][path[horizon]];
            for q in 1..=horizon {
                mass *= kernels[q - 1][(path[q], path[q - 1])];
            }
            mass
        })
        .collect())
}

/// Both sides of the segment identity on paths `(x_p..x_n)`:
/// `(eta Q_{p,n})(x_n) prod_{q=p}^{n-1} M_{q+1, Phi_{p,q}(eta)}(x_{q+1}, x_q)` and
/// `eta(x_p) prod_{q=p}^{n-1} Q_{q+1}(x_q, x_{q+1})`.
pub fn segment_identity_sides(
    fsm: &FiniteStateModel,
    p: usize,
    n: usize,
    eta: &DVector<f64>,
    cap: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = fsm.dim();
    check_distribution_len(eta, d)?;
    check_horizon(fsm, n)?;
    if p > n {
        return Err(Error::InvalidArgument(format!(
            "segment start {p} after end {n}"
        )));
    }
    let len = n - p + 1;
    let atoms = atom_count(d, len, cap)?;
    let q_mats: Vec<DMatrix<f64>> = (p + 1..=n).map(|q| fsm.q_matrix(q)).collect();
    let mut pushed = eta.clone();
    let mut kernels = Vec::with_capacity(n - p);
    let mut gamma = eta.clone();
    for (k, q) in (p..n).enumerate() {
        kernels.push(exact_backward_kernel(fsm, q + 1, &pushed)?);
        pushed = phi(fsm, q + 1, &pushed)?;
        gamma = (gamma.transpose() * &q_mats[k]).transpose();
    }
    let mut left = Vec::with_capacity(atoms);
    let mut right = Vec::with_capacity(atoms);
    for k in 0..atoms {
        let seg = decode(k, d, len);
        let mut l = gamma[seg[len - 1]];
        let mut r = eta[seg[0]];
        for j in 0..len - 1 {
            l *= kernels[j][(seg[j + 1], seg[j])];
            r *= q_mats[j][(seg[j], seg[j + 1])];
        }
        left.push(l);
        right.push(r);
    }
    Ok((left, right))
}

/// `D_{p,n}(F)(x_p)` by summing over every path through `x_p`: backward
/// kernels `M_{q, eta_{q-1}}` before `p`, forward `Q_q` after. Works for any functional.
pub fn enumerated_d_operator(
    fsm: &FiniteStateModel,
    p: usize,
    n: usize,
    functional: &PathFunctional<usize>,
    cap: usize,
) -> Result<DVector<f64>> {
    if p > n {
        return Err(Error::InvalidArgument(format!(
            "epoch {p} after horizon {n}"
        )));
    }
    let d = fsm.dim();
    let atoms = atom_count(d, n + 1, cap)?;
    let flow = exact_flow(fsm, n)?;
    let kernels: Vec<DMatrix<f64>> = (1..=p)
        .map(|q| exact_backward_kernel(fsm, q, &flow.eta[q - 1]))
        .collect::<Result<_>>()?;
    let q_mats: Vec<DMatrix<f64>> = (p + 1..=n).map(|q| fsm.q_matrix(q)).collect();
    let mut out = DVector::zeros(d);
    for k in 0..atoms {
        let path = decode(k, d, n + 1);
        let mut w = 1.0;
        for q in 1..=p {
            w *= kernels[q - 1][(path[q], path[q - 1])];
        }
        for q in p + 1..=n {
            w *= q_mats[q - p - 1][(path[q - 1], path[q])];
        }
        out[path[p]] += w * functional.eval_path(&path)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fixtures;

    #[test]
    fn horizon_zero_atoms_are_initial_law() {
        let m = fixtures::three_state();
        let pm = enumerate_path_measure(&m, 0, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(pm.masses(), m.initial().as_slice());
        assert_eq!(pm.total(), 1.0);
    }

    #[test]
    fn cap_is_enforced() {
        let m = fixtures::three_state();
        assert!(matches!(
            enumerate_path_measure(&m, 4, 100),
            Err(Error::EnumerationCap {
                atoms: 243,
                cap: 100
            })
        ));
        assert!(enumerate_path_measure(&m, 4, 243).is_ok());
    }

    #[test]
    fn decode_order() {
        assert_eq!(decode(5, 3, 3), vec![0, 1, 2]);
        assert_eq!(decode(26, 3, 3), vec![2, 2, 2]);
    }

    #[test]
    fn flat_potential_gives_markov_law() {
        let m = FiniteStateModel::iid_toy(vec![-1.0, 1.0], vec![0.25, 0.75], 3).unwrap();
        let pm = enumerate_path_measure(&m, 3, DEFAULT_ENUMERATION_CAP).unwrap();
        assert!((pm.total() - 1.0).abs() < 1e-15);
        // path (1,1,0,1)
        let idx = 0b1101;
        assert!((pm.normalized_mass(idx) - 0.75f64.powi(3) * 0.25).abs() < 1e-16);
    }
}
