use serde::{Deserialize, Serialize};

use super::{CloudHistory, ParticleCloud};
use crate::error::{Error, Result};
use crate::model::{PathFunctional, State};
use crate::numeric::pairwise_sum;

/// `lines[i][p]` is the index, at epoch `p`, of the ancestor of particle `i` of the final epoch.
pub fn ancestral_lines<S: State>(history: &CloudHistory<S>) -> Result<Vec<Vec<usize>>> {
    let n = history.horizon();
    let count = history.n_particles();
    let mut lines = vec![vec![0usize; n + 1]; count];
    for (i, line) in lines.iter_mut().enumerate() {
        line[n] = i;
    }
    for p in (1..=n).rev() {
        let parents = history.parents(p)?;
        for line in lines.iter_mut() {
            line[p - 1] = parents[line[p]];
        }
    }
    Ok(lines)
}

/// `(1/N) sum_i F_n(xi_{0,n}^i, .., xi_{n,n}^i)` over the ancestral lines of the final cloud.
pub fn genealogical_estimate<S: State>(
    history: &CloudHistory<S>,
    functional: &PathFunctional<S>,
) -> Result<f64> {
    let n = history.horizon();
    functional.check_covers(n)?;
    let lines = ancestral_lines(history)?;
    let clouds = history.clouds();
    let mut values = Vec::with_capacity(lines.len());
    let mut path = Vec::with_capacity(n + 1);
    for line in &lines {
        path.clear();
        path.extend(
            line.iter()
                .enumerate()
                .map(|(p, &k)| clouds[p].positions[k].clone()),
        );
        values.push(functional.eval_path(&path)?);
    }
    Ok(pairwise_sum(&values) / values.len() as f64)
}

/// Shape of the genealogical tree of the final cloud.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageStats {
    pub horizon: usize,
    pub n_particles: usize,
    /// Distinct ancestors of the final cloud at each epoch.
    pub distinct_ancestors: Vec<usize>,
    /// Epochs back to the most recent common ancestor, if the lines have coalesced.
    pub coalescence_depth: Option<usize>,
}

pub fn lineage_stats<S: State>(history: &CloudHistory<S>) -> Result<LineageStats> {
    let n = history.horizon();
    let count = history.n_particles();
    let mut distinct = vec![0usize; n + 1];
    let mut alive: Vec<usize> = (0..count).collect();
    distinct[n] = count;
    let mut mark = vec![false; count];
    for p in (1..=n).rev() {
        let parents = history.parents(p)?;
        let mut next = Vec::with_capacity(alive.len());
        for &i in &alive {
            let j = parents[i];
            if !mark[j] {
                mark[j] = true;
                next.push(j);
            }
        }
        for &j in &next {
            mark[j] = false;
        }
        alive = next;
        distinct[p - 1] = alive.len();
    }
    let coalescence_depth = (0..=n).find(|&k| distinct[n - k] == 1);
    Ok(LineageStats {
        horizon: n,
        n_particles: count,
        distinct_ancestors: distinct,
        coalescence_depth,
    })
}

/// Online genealogical estimator for additive functionals: carries the
/// running value `F_p` along each ancestral line without storing the tree.
#[derive(Debug, Clone)]
pub struct GenealogyAccumulator<S> {
    functional: PathFunctional<S>,
    epoch: usize,
    values: Vec<f64>,
}

impl<S: State> GenealogyAccumulator<S> {
    pub fn new(initial: &ParticleCloud<S>, functional: PathFunctional<S>) -> Result<Self> {
        functional.require_additive("genealogy accumulator")?;
        functional.check_covers(initial.epoch)?;
        if initial.epoch != 0 {
            return Err(Error::HistoryGap(
                "accumulator must start at epoch 0".into(),
            ));
        }
        let values = initial
            .positions
            .iter()
            .map(|x| functional.local(0, None, x))
            .collect();
        Ok(Self {
            functional,
            epoch: 0,
            values,
        })
    }

    /// Move to the epoch of `cur`, whose parents index into `prev`.
    pub fn advance(&mut self, prev: &ParticleCloud<S>, cur: &ParticleCloud<S>) -> Result<()> {
        if prev.epoch != self.epoch || cur.epoch != self.epoch + 1 {
            return Err(Error::HistoryGap(format!(
                "accumulator at epoch {} cannot advance with clouds ({}, {})",
                self.epoch, prev.epoch, cur.epoch
            )));
        }
        let p = cur.epoch;
        self.functional.check_covers(p)?;
        let parents = cur
            .parents
            .as_ref()
            .ok_or_else(|| Error::HistoryGap(format!("epoch {p} has no parent indices")))?;
        self.values = parents
            .iter()
            .zip(&cur.positions)
            .map(|(&a, x)| self.values[a] + self.functional.local(p, Some(&prev.positions[a]), x))
            .collect();
        self.epoch = p;
        Ok(())
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn estimate(&self) -> f64 {
        let raw = pairwise_sum(&self.values) / self.values.len() as f64;
        self.functional.scale(raw, self.epoch)
    }
}
