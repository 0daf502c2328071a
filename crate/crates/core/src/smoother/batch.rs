use rand::RngCore;

use super::{backward_matrix, fill_row, BackwardWeightMatrix};
use crate::error::{Error, Result};
use crate::model::{FeynmanKacModel, PathFunctional};
use crate::oracle::DEFAULT_ENUMERATION_CAP;
use crate::particle::{potentials_of, CloudHistory};
use crate::rng::uniform;

fn matrices<M: FeynmanKacModel>(
    history: &CloudHistory<M::State>,
    model: &M,
) -> Result<Vec<BackwardWeightMatrix>> {
    let clouds = history.clouds();
    (1..clouds.len())
        .map(|q| backward_matrix(&clouds[q - 1], &clouds[q], model))
        .collect()
}

/// `Q_n^N(F_n)` from a stored history.
///
/// Additive functionals use the backward marginals `mu_n = 1/N`,
/// `mu_{q-1} = mu_q W_q`; general functionals enumerate all `N^(n+1)` index
/// paths (capped at one million).
pub fn smoothed_estimate_batch<M: FeynmanKacModel>(
    history: &CloudHistory<M::State>,
    model: &M,
    functional: &PathFunctional<M::State>,
) -> Result<f64> {
    let n = history.horizon();
    functional.check_covers(n)?;
    let clouds = history.clouds();
    let size = history.n_particles();
    let ws = matrices(history, model)?;
    if !functional.is_additive() {
        return enumerate_general(history, &ws, functional);
    }
    let mut mu = vec![1.0 / size as f64; size];
    let mut total = 0.0;
    for q in (1..=n).rev() {
        let w = &ws[q - 1];
        let cur = &clouds[q].positions;
        let prev = &clouds[q - 1].positions;
        let mut next = vec![0.0; size];
        for (j, y) in cur.iter().enumerate() {
            let row = w.row(j);
            if functional.uses_previous(q) {
                let local: f64 = row
                    .iter()
                    .zip(prev)
                    .map(|(wi, x)| wi * functional.local(q, Some(x), y))
                    .sum();
                total += mu[j] * local;
            } else {
                total += mu[j] * functional.local(q, None, y);
            }
            for (acc, wi) in next.iter_mut().zip(row) {
                *acc += mu[j] * wi;
            }
        }
        mu = next;
    }
    for (m, x) in mu.iter().zip(&clouds[0].positions) {
        total += m * functional.local(0, None, x);
    }
    Ok(functional.scale(total, n))
}

fn enumerate_general<S: crate::model::State>(
    history: &CloudHistory<S>,
    ws: &[BackwardWeightMatrix],
    functional: &PathFunctional<S>,
) -> Result<f64> {
    let n = history.horizon();
    let size = history.n_particles();
    let cap = DEFAULT_ENUMERATION_CAP;
    let mut atoms: u128 = 1;
    for _ in 0..=n {
        atoms = atoms.saturating_mul(size as u128);
    }
    if atoms > cap as u128 {
        return Err(Error::EnumerationCap { atoms, cap });
    }
    let clouds = history.clouds();
    let mut indices = vec![0usize; n + 1];
    let mut path: Vec<S> = clouds.iter().map(|c| c.positions[0].clone()).collect();
    let mut total = 0.0;
    for k in 0..atoms as usize {
        let mut rest = k;
        for slot in indices.iter_mut().rev() {
            *slot = rest % size;
            rest /= size;
        }
        let mut mass = 1.0 / size as f64;
        for q in 1..=n {
            mass *= ws[q - 1].get(indices[q], indices[q - 1]);
        }
        if mass == 0.0 {
            continue;
        }
        for (p, &i) in indices.iter().enumerate() {
            path[p] = clouds[p].positions[i].clone();
        }
        total += mass * functional.eval_path(&path)?;
    }
    Ok(total)
}

/// Draws index paths from `Q_n^N`, with the backward rows precomputed as CDFs.
pub struct BackwardSampler<'a, S> {
    history: &'a CloudHistory<S>,
    cdfs: Vec<Vec<f64>>,
}

impl<'a, S: crate::model::State> BackwardSampler<'a, S> {
    pub fn new<M: FeynmanKacModel<State = S>>(
        history: &'a CloudHistory<S>,
        model: &M,
    ) -> Result<Self> {
        let cdfs = matrices(history, model)?
            .into_iter()
            .map(|w| {
                let mut out = Vec::with_capacity(w.size() * w.size());
                for row in w.rows() {
                    let mut acc = 0.0;
                    out.extend(row.iter().map(|v| {
                        acc += v;
                        acc
                    }));
                }
                out
            })
            .collect();
        Ok(Self { history, cdfs })
    }

    /// Particle indices `(i_0, .., i_n)` of one backward path.
    pub fn sample_indices<R: RngCore + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let n = self.history.horizon();
        let size = self.history.n_particles();
        let mut out = vec![0; n + 1];
        out[n] = ((uniform(rng) * size as f64) as usize).min(size - 1);
        for q in (1..=n).rev() {
            let j = out[q];
            let cdf = &self.cdfs[q - 1][j * size..(j + 1) * size];
            out[q - 1] = crate::oracle::finite::inverse_cdf(cdf, uniform(rng));
        }
        out
    }

    pub fn sample_path<R: RngCore + ?Sized>(&self, rng: &mut R) -> Vec<S> {
        let clouds = self.history.clouds();
        self.sample_indices(rng)
            .into_iter()
            .enumerate()
            .map(|(p, i)| clouds[p].positions[i].clone())
            .collect()
    }
}

/// One backward path, computing only the `n` rows it visits (`n N` densities).
pub fn sample_backward_path<M: FeynmanKacModel, R: RngCore + ?Sized>(
    history: &CloudHistory<M::State>,
    model: &M,
    rng: &mut R,
) -> Result<Vec<M::State>> {
    let n = history.horizon();
    let size = history.n_particles();
    let clouds = history.clouds();
    let mut index = ((uniform(rng) * size as f64) as usize).min(size - 1);
    let mut path = vec![clouds[n].positions[index].clone()];
    let mut row = vec![0.0; size];
    for q in (1..=n).rev() {
        let prev = &clouds[q - 1];
        let g = potentials_of(model, prev.epoch, &prev.positions)?;
        fill_row(
            model,
            q,
            &prev.positions,
            &g,
            &clouds[q].positions[index],
            index,
            &mut row,
        )?;
        let mut acc = 0.0;
        for v in row.iter_mut() {
            acc += *v;
            *v = acc;
        }
        index = crate::oracle::finite::inverse_cdf(&row, uniform(rng));
        path.push(prev.positions[index].clone());
    }
    path.reverse();
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fixtures;
    use crate::particle::{run_filter, SelectionConfig};
    use crate::rng::RandomStreams;
    use crate::smoother::{OnlineSmoother, SmootherMode};

    #[test]
    fn batch_matches_forward_only() {
        let m = fixtures::three_state_inhomogeneous();
        let h = run_filter(
            &m,
            60,
            &SelectionConfig::default(),
            10,
            &RandomStreams::new(6),
        )
        .unwrap();
        let fs = [
            PathFunctional::homogeneous(|x: &usize| [0.3, -1.0, 2.5][*x], 10),
            PathFunctional::homogeneous_pairwise(
                |x: &usize| *x as f64,
                |a: &usize, b: &usize| (a * b) as f64,
                10,
            )
            .normalized(),
        ];
        for f in fs {
            let mut sm =
                OnlineSmoother::new(&h.clouds()[0], f.clone(), SmootherMode::Dense).unwrap();
            for n in 1..=10 {
                sm.advance(&h.clouds()[n - 1], &h.clouds()[n], &m).unwrap();
            }
            let a = sm.estimate(h.last()).unwrap();
            let b = smoothed_estimate_batch(&h, &m, &f).unwrap();
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn single_particle_path() {
        let m = fixtures::three_state();
        let h = run_filter(
            &m,
            1,
            &SelectionConfig::default(),
            5,
            &RandomStreams::new(6),
        )
        .unwrap();
        let expected: Vec<usize> = h.clouds().iter().map(|c| c.positions[0]).collect();
        let mut rng = RandomStreams::new(1).auxiliary(0);
        assert_eq!(sample_backward_path(&h, &m, &mut rng).unwrap(), expected);
        let sampler = BackwardSampler::new(&h, &m).unwrap();
        assert_eq!(sampler.sample_path(&mut rng), expected);
    }

    #[test]
    fn general_enumeration_cap() {
        let m = fixtures::three_state();
        let h = run_filter(
            &m,
            40,
            &SelectionConfig::default(),
            4,
            &RandomStreams::new(6),
        )
        .unwrap();
        let f = PathFunctional::<usize>::general(|p| p.len() as f64);
        assert!(matches!(
            smoothed_estimate_batch(&h, &m, &f),
            Err(Error::EnumerationCap { .. })
        ));
    }
}
