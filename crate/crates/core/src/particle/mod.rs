//! Mean-field genetic particle approximation of the flow `eta_n`.
//!
//! Each epoch runs a selection step (keep with probability `eps_n G_n(x)`,
//! otherwise draw an ancestor proportional to `G_n`) followed by independent
//! mutations through `M_{n+1}`. Ancestor indices are recorded so that both
//! the genealogical tree and the backward smoother can be built afterwards.

mod genealogy;
mod history;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use genealogy::{
    ancestral_lines, genealogical_estimate, lineage_stats, GenealogyAccumulator, LineageStats,
};
pub use history::{CloudHistory, HISTORY_FORMAT, HISTORY_VERSION};

use crate::error::{Error, Result};
use crate::model::{FeynmanKacModel, State};
use crate::numeric::pairwise_sum;
use crate::oracle::finite::inverse_cdf;
use crate::rng::{uniform, Lane, RandomStreams};

/// Populations at least this large are processed with rayon.
const PARALLEL_THRESHOLD: usize = 4096;

/// Particle positions at one epoch, with the selection ancestors that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: State")]
pub struct ParticleCloud<S> {
    pub epoch: usize,
    pub positions: Vec<S>,
    /// `parents[i] = j` when particle `i` descends from particle `j` of the
    /// previous epoch (0-based). Absent at epoch 0.
    pub parents: Option<Vec<usize>>,
    /// `log gamma_n^N(1) = sum_{p < n} log eta_p^N(G_p)`.
    pub log_normalizer: f64,
}

impl<S> ParticleCloud<S> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `gamma_n^N(1)` on the linear scale.
    pub fn normalizer(&self) -> f64 {
        self.log_normalizer.exp()
    }
}

/// How `eps_n` is chosen at each selection.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonRule {
    /// Proportional selection (the simple genetic model).
    #[default]
    Zero,
    /// `eps_n = 1 / max_i G_n(xi_n^i)`.
    ReciprocalSup,
    Fixed(f64),
}

/// Only multinomial resampling is provided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resampling {
    #[default]
    Multinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub epsilon: EpsilonRule,
    pub resampling: Resampling,
}

impl SelectionConfig {
    pub fn with_epsilon(epsilon: EpsilonRule) -> Self {
        Self {
            epsilon,
            resampling: Resampling::Multinomial,
        }
    }
}

/// Output of the selection step: `hat xi_n` and the ancestor of each slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedCloud<S> {
    pub epoch: usize,
    pub positions: Vec<S>,
    pub ancestors: Vec<usize>,
    /// Realized `eps_n`.
    pub epsilon: f64,
    /// `log eta_n^N(G_n)`.
    pub log_mean_potential: f64,
    /// `log gamma_{n+1}^N(1)`, ready for the next cloud.
    pub log_normalizer: f64,
}

/// Evaluate `G_n` on every particle, rejecting values outside `(0, 1]`.
pub(crate) fn potentials_of<M: FeynmanKacModel>(
    model: &M,
    epoch: usize,
    positions: &[M::State],
) -> Result<Vec<f64>> {
    let eval = |x: &M::State| {
        let g = model.potential(epoch, x);
        if g > 0.0 && g <= 1.0 {
            Ok(g)
        } else {
            Err(Error::PotentialOutOfRange {
                epoch,
                state: format!("{x:?}"),
                value: g,
            })
        }
    };
    if positions.len() >= PARALLEL_THRESHOLD {
        positions.par_iter().map(eval).collect()
    } else {
        positions.iter().map(eval).collect()
    }
}

/// `xi_0`: `n_particles` iid draws from `eta_0`.
pub fn init_cloud<M: FeynmanKacModel>(
    model: &M,
    n_particles: usize,
    streams: &RandomStreams,
) -> Result<ParticleCloud<M::State>> {
    if n_particles == 0 {
        return Err(Error::EmptyPopulation);
    }
    let draw = |i: usize| model.sample_initial(&mut streams.stream(0, Lane::Initial, i));
    let positions = if n_particles >= PARALLEL_THRESHOLD {
        (0..n_particles).into_par_iter().map(draw).collect()
    } else {
        (0..n_particles).map(draw).collect()
    };
    Ok(ParticleCloud {
        epoch: 0,
        positions,
        parents: None,
        log_normalizer: 0.0,
    })
}

fn realized_epsilon(rule: EpsilonRule, epoch: usize, max_potential: f64) -> Result<f64> {
    match rule {
        EpsilonRule::Zero => Ok(0.0),
        EpsilonRule::ReciprocalSup => Ok(1.0 / max_potential),
        EpsilonRule::Fixed(eps) => {
            if eps >= 0.0 && eps * max_potential <= 1.0 + 1e-12 {
                Ok(eps)
            } else {
                Err(Error::EpsilonConstraint {
                    epoch,
                    epsilon: eps,
                    max_potential,
                })
            }
        }
    }
}

/// Selection `xi_n -> hat xi_n`.
///
/// Particle `i` is kept with probability `eps_n G_n(xi_n^i)` (ancestor `i`),
/// otherwise its ancestor is drawn from the categorical law proportional to
/// `G_n`, by an inverse-CDF walk over the particle order with one uniform.
pub fn select<M: FeynmanKacModel>(
    cloud: &ParticleCloud<M::State>,
    model: &M,
    config: &SelectionConfig,
    streams: &RandomStreams,
) -> Result<SelectedCloud<M::State>> {
    let epoch = cloud.epoch;
    let n_particles = cloud.len();
    if n_particles == 0 {
        return Err(Error::EmptyPopulation);
    }
    let weights = potentials_of(model, epoch, &cloud.positions)?;
    let total = pairwise_sum(&weights);
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateWeights { epoch, sum: total });
    }
    let max_potential = weights.iter().cloned().fold(0.0, f64::max);
    let epsilon = realized_epsilon(config.epsilon, epoch, max_potential)?;

    let mut cdf = Vec::with_capacity(n_particles);
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cdf.push(acc);
    }

    let pick = |i: usize| -> usize {
        let mut rng = streams.stream(epoch, Lane::Selection, i);
        if epsilon > 0.0 && uniform(&mut rng) < epsilon * weights[i] {
            i
        } else {
            inverse_cdf(&cdf, uniform(&mut rng))
        }
    };
    let ancestors: Vec<usize> = if n_particles >= PARALLEL_THRESHOLD {
        (0..n_particles).into_par_iter().map(pick).collect()
    } else {
        (0..n_particles).map(pick).collect()
    };
    let positions = ancestors
        .iter()
        .map(|&j| cloud.positions[j].clone())
        .collect();
    let log_mean_potential = (total / n_particles as f64).ln();
    Ok(SelectedCloud {
        epoch,
        positions,
        ancestors,
        epsilon,
        log_mean_potential,
        log_normalizer: cloud.log_normalizer + log_mean_potential,
    })
}

/// Mutation `hat xi_n -> xi_{n+1}` through `M_{n+1}`.
pub fn mutate<M: FeynmanKacModel>(
    selected: SelectedCloud<M::State>,
    model: &M,
    next_epoch: usize,
    streams: &RandomStreams,
) -> Result<ParticleCloud<M::State>> {
    if next_epoch != selected.epoch + 1 || next_epoch > model.horizon() {
        return Err(Error::EpochOutOfRange {
            epoch: next_epoch,
            min: selected.epoch + 1,
            horizon: model.horizon().min(selected.epoch + 1),
        });
    }
    let draw = |(i, x): (usize, &M::State)| {
        model.sample_transition(
            next_epoch,
            x,
            &mut streams.stream(next_epoch, Lane::Mutation, i),
        )
    };
    let positions = if selected.positions.len() >= PARALLEL_THRESHOLD {
        selected
            .positions
            .par_iter()
            .enumerate()
            .map(draw)
            .collect()
    } else {
        selected.positions.iter().enumerate().map(draw).collect()
    };
    Ok(ParticleCloud {
        epoch: next_epoch,
        positions,
        parents: Some(selected.ancestors),
        log_normalizer: selected.log_normalizer,
    })
}

/// Selection followed by mutation.
pub fn step<M: FeynmanKacModel>(
    cloud: &ParticleCloud<M::State>,
    model: &M,
    config: &SelectionConfig,
    streams: &RandomStreams,
) -> Result<ParticleCloud<M::State>> {
    let selected = select(cloud, model, config, streams)?;
    mutate(selected, model, cloud.epoch + 1, streams)
}

/// Full run from epoch 0 to `horizon`, retaining every cloud.
pub fn run_filter<M: FeynmanKacModel>(
    model: &M,
    n_particles: usize,
    config: &SelectionConfig,
    horizon: usize,
    streams: &RandomStreams,
) -> Result<CloudHistory<M::State>> {
    if horizon > model.horizon() {
        return Err(Error::EpochOutOfRange {
            epoch: horizon,
            min: 0,
            horizon: model.horizon(),
        });
    }
    let mut history = CloudHistory::new(init_cloud(model, n_particles, streams)?)?;
    for _ in 0..horizon {
        let next = step(history.last(), model, config, streams)?;
        history.push(next)?;
    }
    Ok(history)
}

/// Streaming filter that keeps only the current cloud.
pub struct ParticleFilter<'a, M: FeynmanKacModel> {
    model: &'a M,
    config: SelectionConfig,
    streams: RandomStreams,
    current: ParticleCloud<M::State>,
}

impl<'a, M: FeynmanKacModel> ParticleFilter<'a, M> {
    pub fn start(
        model: &'a M,
        n_particles: usize,
        config: SelectionConfig,
        streams: RandomStreams,
    ) -> Result<Self> {
        let current = init_cloud(model, n_particles, &streams)?;
        Ok(Self {
            model,
            config,
            streams,
            current,
        })
    }

    pub fn current(&self) -> &ParticleCloud<M::State> {
        &self.current
    }

    pub fn epoch(&self) -> usize {
        self.current.epoch
    }

    /// Advance one epoch and hand back the cloud that was replaced.
    pub fn advance(&mut self) -> Result<ParticleCloud<M::State>> {
        let next = step(&self.current, self.model, &self.config, &self.streams)?;
        Ok(std::mem::replace(&mut self.current, next))
    }
}

/// `eta_n^N(f) = (1/N) sum_j f(xi_n^j)`.
pub fn empirical_measure<S, F: Fn(&S) -> f64>(cloud: &ParticleCloud<S>, f: F) -> f64 {
    let values: Vec<f64> = cloud.positions.iter().map(f).collect();
    pairwise_sum(&values) / cloud.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fixtures;
    use crate::oracle::FiniteStateModel;
    use nalgebra::{DMatrix, DVector};

    fn toy(h: usize) -> FiniteStateModel {
        FiniteStateModel::iid_toy(vec![-1.0, 1.0], vec![0.5, 0.5], h).unwrap()
    }

    #[test]
    fn single_particle_cloud() {
        let c = init_cloud(&toy(2), 1, &RandomStreams::new(3)).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.log_normalizer, 0.0);
        assert!(c.parents.is_none());
        assert!(matches!(
            init_cloud(&toy(2), 0, &RandomStreams::new(3)),
            Err(Error::EmptyPopulation)
        ));
    }

    #[test]
    fn initial_frequencies() {
        let c = init_cloud(&toy(0), 100_000, &RandomStreams::new(17)).unwrap();
        let freq = empirical_measure(&c, |x| (*x == 0) as u8 as f64);
        assert!((freq - 0.5).abs() < 0.01, "{freq}");
    }

    #[test]
    fn reciprocal_sup_keeps_everyone_when_flat() {
        let m = toy(3);
        let c = init_cloud(&m, 50, &RandomStreams::new(5)).unwrap();
        let s = select(
            &c,
            &m,
            &SelectionConfig::with_epsilon(EpsilonRule::ReciprocalSup),
            &RandomStreams::new(5),
        )
        .unwrap();
        assert_eq!(s.epsilon, 1.0);
        assert_eq!(s.ancestors, (0..50).collect::<Vec<_>>());
        assert_eq!(s.log_mean_potential, 0.0);
    }

    #[test]
    fn zero_epsilon_flat_weights_are_uniform() {
        let m = toy(3);
        let c = init_cloud(&m, 4, &RandomStreams::new(5)).unwrap();
        let mut counts = [0usize; 4];
        for r in 0..20_000u64 {
            let s = select(
                &c,
                &m,
                &SelectionConfig::default(),
                &RandomStreams::for_replicate(5, r),
            )
            .unwrap();
            counts[s.ancestors[0]] += 1;
        }
        // binomial sd = sqrt(20000 * 0.25 * 0.75) ~ 61
        for c in counts {
            assert!((c as f64 - 5000.0).abs() < 4.0 * 61.3, "{counts:?}");
        }
    }

    #[test]
    fn weighted_ancestor_frequencies() {
        // three particles with weights (0.2, 0.3, 0.5)
        let g = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        let m = FiniteStateModel::homogeneous(
            DVector::from_element(3, 1.0 / 3.0),
            DMatrix::from_element(3, 3, 1.0 / 3.0),
            g,
            1,
        )
        .unwrap();
        let cloud = ParticleCloud {
            epoch: 0,
            positions: vec![0usize, 1, 2],
            parents: None,
            log_normalizer: 0.0,
        };
        let reps = 100_000u64;
        let mut counts = [0usize; 3];
        for r in 0..reps {
            let s = select(
                &cloud,
                &m,
                &SelectionConfig::default(),
                &RandomStreams::for_replicate(9, r),
            )
            .unwrap();
            counts[s.ancestors[0]] += 1;
        }
        for (k, p) in [0.2, 0.3, 0.5].iter().enumerate() {
            let sd = (reps as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (counts[k] as f64 - reps as f64 * p).abs() < 3.0 * sd,
                "{counts:?}"
            );
        }
    }

    #[test]
    fn fixed_epsilon_constraint() {
        let m = fixtures::three_state();
        let c = init_cloud(&m, 10, &RandomStreams::new(1)).unwrap();
        let cfg = SelectionConfig::with_epsilon(EpsilonRule::Fixed(1.5));
        assert!(matches!(
            select(&c, &m, &cfg, &RandomStreams::new(1)),
            Err(Error::EpsilonConstraint { .. })
        ));
        let cfg = SelectionConfig::with_epsilon(EpsilonRule::Fixed(0.5));
        let s = select(&c, &m, &cfg, &RandomStreams::new(1)).unwrap();
        assert_eq!(s.epsilon, 0.5);
    }

    #[test]
    fn flat_potential_keeps_normalizer_at_one() {
        let m = toy(6);
        let h = run_filter(
            &m,
            30,
            &SelectionConfig::default(),
            6,
            &RandomStreams::new(2),
        )
        .unwrap();
        assert_eq!(h.len(), 7);
        for c in h.clouds() {
            assert_eq!(c.log_normalizer, 0.0);
        }
    }

    #[test]
    fn horizon_zero_history() {
        let m = fixtures::three_state();
        let h = run_filter(
            &m,
            8,
            &SelectionConfig::default(),
            0,
            &RandomStreams::new(2),
        )
        .unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h.last().epoch, 0);
    }

    #[test]
    fn mutate_rejects_epoch_overflow() {
        let m = toy(1);
        let streams = RandomStreams::new(2);
        let c = init_cloud(&m, 3, &streams).unwrap();
        let s = select(&c, &m, &SelectionConfig::default(), &streams).unwrap();
        assert!(mutate(s.clone(), &m, 2, &streams).is_err());
        let next = mutate(s, &m, 1, &streams).unwrap();
        let s1 = select(&next, &m, &SelectionConfig::default(), &streams).unwrap();
        assert!(mutate(s1, &m, 2, &streams).is_err());
    }

    #[test]
    fn potential_breach_is_reported() {
        struct Bad;
        impl FeynmanKacModel for Bad {
            type State = u8;
            fn horizon(&self) -> usize {
                1
            }
            fn sample_initial<R: rand::RngCore + ?Sized>(&self, _: &mut R) -> u8 {
                0
            }
            fn sample_transition<R: rand::RngCore + ?Sized>(
                &self,
                _: usize,
                _: &u8,
                _: &mut R,
            ) -> u8 {
                0
            }
            fn transition_density(&self, _: usize, _: &u8, _: &u8) -> f64 {
                1.0
            }
            fn potential(&self, _: usize, _: &u8) -> f64 {
                0.0
            }
        }
        let c = init_cloud(&Bad, 3, &RandomStreams::new(0)).unwrap();
        assert!(matches!(
            select(
                &c,
                &Bad,
                &SelectionConfig::default(),
                &RandomStreams::new(0)
            ),
            Err(Error::PotentialOutOfRange { epoch: 0, .. })
        ));
    }

    #[test]
    fn streaming_filter_matches_history() {
        let m = fixtures::three_state().with_horizon(5).unwrap();
        let streams = RandomStreams::for_replicate(4, 2);
        let h = run_filter(&m, 64, &SelectionConfig::default(), 5, &streams).unwrap();
        let mut f = ParticleFilter::start(&m, 64, SelectionConfig::default(), streams).unwrap();
        for n in 1..=5 {
            let prev = f.advance().unwrap();
            assert_eq!(&prev, h.cloud(n - 1).unwrap());
            assert_eq!(f.current(), h.cloud(n).unwrap());
        }
    }

    #[test]
    fn parallel_population_is_reproducible() {
        // above PARALLEL_THRESHOLD so rayon paths run
        let m = fixtures::three_state().with_horizon(2).unwrap();
        let a = run_filter(
            &m,
            5000,
            &SelectionConfig::default(),
            2,
            &RandomStreams::new(8),
        )
        .unwrap();
        let b = run_filter(
            &m,
            5000,
            &SelectionConfig::default(),
            2,
            &RandomStreams::new(8),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_measure_basics() {
        let c = ParticleCloud {
            epoch: 0,
            positions: vec![3usize, 7],
            parents: None,
            log_normalizer: 0.0,
        };
        assert_eq!(empirical_measure(&c, |_| 2.5), 2.5);
        assert_eq!(empirical_measure(&c, |x| (*x == 3) as u8 as f64), 0.5);
    }
}
