use nalgebra::DVector;

use super::{check_distribution_len, check_horizon, FiniteStateModel};
use crate::error::{Error, Result};

/// Exact unnormalized flow `gamma_p`, normalized flow `eta_p` and `Z_p = gamma_p(1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactFlow {
    pub gamma: Vec<DVector<f64>>,
    pub eta: Vec<DVector<f64>>,
    pub normalizers: Vec<f64>,
}

impl ExactFlow {
    pub fn horizon(&self) -> usize {
        self.eta.len() - 1
    }
}

/// Cross-check tolerance between the two normalizer computations.
const CROSS_CHECK_TOLERANCE: f64 = 1e-12;

/// `gamma_p = gamma_{p-1} Q_p` for `p <= horizon`, cross-checked against
/// `gamma_p(1) = prod_{q < p} eta_q(G_q)`.
pub fn exact_flow(fsm: &FiniteStateModel, horizon: usize) -> Result<ExactFlow> {
    check_horizon(fsm, horizon)?;
    let mut gamma = vec![fsm.initial().clone()];
    let mut eta = vec![fsm.initial().clone()];
    let mut normalizers = vec![1.0];
    let mut product = 1.0;
    for p in 1..=horizon {
        let prev = &gamma[p - 1];
        let next = (prev.transpose() * fsm.q_matrix(p)).transpose();
        product *= eta[p - 1].dot(fsm.potential_vector(p - 1));
        let total = next.sum();
        if !(total > 0.0) {
            return Err(Error::InvalidModel(format!("gamma_{p} has zero mass")));
        }
        if (total - product).abs() > CROSS_CHECK_TOLERANCE * product.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidModel(format!(
                "normalizer cross-check failed at epoch {p}: {total} vs {product}"
            )));
        }
        eta.push(&next / total);
        normalizers.push(total);
        gamma.push(next);
    }
    Ok(ExactFlow {
        gamma,
        eta,
        normalizers,
    })
}

/// `Phi_n(eta) = Psi_{G_{n-1}}(eta) M_n`.
pub fn phi(fsm: &FiniteStateModel, n: usize, eta: &DVector<f64>) -> Result<DVector<f64>> {
    check_distribution_len(eta, fsm.dim())?;
    if n == 0 {
        return Err(Error::EpochOutOfRange {
            epoch: 0,
            min: 1,
            horizon: fsm.horizon(),
        });
    }
    let weighted = eta.component_mul(fsm.potential_vector(n - 1));
    let mass = weighted.sum();
    if !(mass > 0.0) {
        return Err(Error::DegenerateWeights {
            epoch: n - 1,
            sum: mass,
        });
    }
    Ok((weighted.transpose() * fsm.transition(n)).transpose() / mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fixtures;
    use nalgebra::DMatrix;

    #[test]
    fn flat_potential_is_markov_flow() {
        let m = FiniteStateModel::homogeneous(
            DVector::from_vec(vec![0.2, 0.8]),
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.4, 0.6]),
            DVector::from_element(2, 1.0),
            4,
        )
        .unwrap();
        let flow = exact_flow(&m, 4).unwrap();
        let mut law = m.initial().clone();
        for p in 1..=4 {
            law = (law.transpose() * m.transition(p)).transpose();
            assert!((flow.normalizers[p] - 1.0).abs() < 1e-15);
            assert!((&flow.eta[p] - &law).amax() < 1e-15);
        }
    }

    #[test]
    fn single_state_normalizer_is_product() {
        let m = FiniteStateModel::inhomogeneous(
            DVector::from_vec(vec![1.0]),
            vec![DMatrix::from_element(1, 1, 1.0); 3],
            vec![0.5, 0.25, 0.8, 0.1]
                .into_iter()
                .map(|g| DVector::from_element(1, g))
                .collect(),
        )
        .unwrap();
        let flow = exact_flow(&m, 3).unwrap();
        assert!((flow.normalizers[3] - 0.5 * 0.25 * 0.8).abs() < 1e-16);
    }

    #[test]
    fn phi_matches_flow() {
        let m = fixtures::three_state();
        let flow = exact_flow(&m, 5).unwrap();
        for p in 1..=5 {
            let next = phi(&m, p, &flow.eta[p - 1]).unwrap();
            assert!((&next - &flow.eta[p]).amax() < 1e-14);
        }
        assert!(exact_flow(&m, m.horizon() + 1).is_err());
    }
}
