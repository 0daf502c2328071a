//! Path functionals `F_n(x_0, ..., x_n)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type StateFn<S> = Arc<dyn Fn(&S) -> f64 + Send + Sync>;
pub type PairFn<S> = Arc<dyn Fn(&S, &S) -> f64 + Send + Sync>;
pub type PathFn<S> = Arc<dyn Fn(&[S]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionalKind {
    /// `sum_p f_p(x_p)`.
    TerminalAdditive,
    /// `f_0(x_0) + sum_{p >= 1} f_p(x_{p-1}, x_p)`.
    PairwiseAdditive,
    /// Arbitrary function of the whole path; only usable by enumeration.
    General,
}

impl FunctionalKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FunctionalKind::TerminalAdditive => "terminal-additive",
            FunctionalKind::PairwiseAdditive => "pairwise-additive",
            FunctionalKind::General => "general",
        }
    }
}

#[derive(Clone)]
enum Terms<S> {
    Terminal(Vec<StateFn<S>>),
    Pairwise {
        initial: StateFn<S>,
        // pairs[k] is the term of epoch k + 1
        pairs: Vec<PairFn<S>>,
    },
    General(PathFn<S>),
}

/// A functional on path space, optionally normalized by the path length.
#[derive(Clone)]
pub struct PathFunctional<S> {
    terms: Terms<S>,
    normalized: bool,
    unit_oscillation: bool,
}

impl<S> fmt::Debug for PathFunctional<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PathFunctional")
            .field("kind", &self.kind())
            .field("horizon", &self.horizon())
            .field("normalized", &self.normalized)
            .finish()
    }
}

impl<S> PathFunctional<S> {
    /// Terminal-additive functional with one term per epoch `0..terms.len()`.
    pub fn additive(terms: Vec<StateFn<S>>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument(
                "additive functional needs at least one term".into(),
            ));
        }
        Ok(Self::from_terms(Terms::Terminal(terms)))
    }

    /// The same term `f` at every epoch `0..=horizon`.
    pub fn homogeneous<F>(f: F, horizon: usize) -> Self
    where
        F: Fn(&S) -> f64 + Send + Sync + 'static,
    {
        let f: StateFn<S> = Arc::new(f);
        Self::from_terms(Terms::Terminal(vec![f; horizon + 1]))
    }

    /// Pairwise-additive functional; `pairs[k]` is the term of epoch `k + 1`.
    pub fn pairwise(initial: StateFn<S>, pairs: Vec<PairFn<S>>) -> Self {
        Self::from_terms(Terms::Pairwise { initial, pairs })
    }

    /// Pairwise functional with one shared pair term on epochs `1..=horizon`.
    pub fn homogeneous_pairwise<F0, F>(initial: F0, pair: F, horizon: usize) -> Self
    where
        F0: Fn(&S) -> f64 + Send + Sync + 'static,
        F: Fn(&S, &S) -> f64 + Send + Sync + 'static,
    {
        let pair: PairFn<S> = Arc::new(pair);
        Self::pairwise(Arc::new(initial), vec![pair; horizon])
    }

    pub fn general<F>(f: F) -> Self
    where
        F: Fn(&[S]) -> f64 + Send + Sync + 'static,
    {
        Self::from_terms(Terms::General(Arc::new(f)))
    }

    fn from_terms(terms: Terms<S>) -> Self {
        Self {
            terms,
            normalized: false,
            unit_oscillation: false,
        }
    }

    /// Divide every estimate by the path length `n + 1`.
    pub fn normalized(mut self) -> Self {
        self.normalized = true;
        self
    }

    /// Declare `osc(f_p) <= 1` for every term. Bound reporters rely on it;
    /// [`PathFunctional::max_oscillation`] checks it on a finite state list.
    pub fn with_unit_oscillation(mut self) -> Self {
        self.unit_oscillation = true;
        self
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn declares_unit_oscillation(&self) -> bool {
        self.unit_oscillation
    }

    pub fn kind(&self) -> FunctionalKind {
        match self.terms {
            Terms::Terminal(_) => FunctionalKind::TerminalAdditive,
            Terms::Pairwise { .. } => FunctionalKind::PairwiseAdditive,
            Terms::General(_) => FunctionalKind::General,
        }
    }

    /// Last epoch covered by the terms; `None` for general functionals.
    pub fn horizon(&self) -> Option<usize> {
        match &self.terms {
            Terms::Terminal(t) => Some(t.len() - 1),
            Terms::Pairwise { pairs, .. } => Some(pairs.len()),
            Terms::General(_) => None,
        }
    }

    pub fn is_additive(&self) -> bool {
        !matches!(self.terms, Terms::General(_))
    }

    /// Errors unless the functional has terms for every epoch `0..=n`.
    pub fn check_covers(&self, n: usize) -> Result<()> {
        match self.horizon() {
            Some(h) if h < n => Err(Error::FunctionalTooShort {
                requested: n,
                available: h,
            }),
            _ => Ok(()),
        }
    }

    pub(crate) fn require_additive(&self, operation: &'static str) -> Result<()> {
        if self.is_additive() {
            Ok(())
        } else {
            Err(Error::UnsupportedFunctional {
                operation,
                kind: self.kind().as_str(),
            })
        }
    }

    /// The epoch-`p` term. `prev` is the state at `p - 1`; terminal terms and
    /// the epoch-0 term ignore it.
    ///
    /// Panics on general functionals, or when a pairwise term at `p >= 1` gets no predecessor.
    #[inline]
    pub fn local(&self, p: usize, prev: Option<&S>, x: &S) -> f64 {
        match &self.terms {
            Terms::Terminal(t) => (t[p])(x),
            Terms::Pairwise { initial, pairs } => {
                if p == 0 {
                    initial(x)
                } else {
                    let prev = prev.expect("pairwise term needs the previous state");
                    (pairs[p - 1])(prev, x)
                }
            }
            Terms::General(_) => panic!("general functionals have no per-epoch terms"),
        }
    }

    /// True when the epoch-`p` term depends on the previous state.
    pub fn uses_previous(&self, p: usize) -> bool {
        matches!(self.terms, Terms::Pairwise { .. }) && p > 0
    }

    /// `F_n` on a full path `x_0..x_n`, including the normalization when set.
    pub fn eval_path(&self, path: &[S]) -> Result<f64> {
        if path.is_empty() {
            return Err(Error::InvalidArgument("empty path".into()));
        }
        let n = path.len() - 1;
        let raw = match &self.terms {
            Terms::General(f) => f(path),
            _ => {
                self.check_covers(n)?;
                let mut acc = self.local(0, None, &path[0]);
                for p in 1..=n {
                    acc += self.local(p, Some(&path[p - 1]), &path[p]);
                }
                acc
            }
        };
        Ok(self.scale(raw, n))
    }

    /// Apply the `1/(n+1)` factor when the functional is normalized.
    #[inline]
    pub fn scale(&self, raw: f64, n: usize) -> f64 {
        if self.normalized {
            raw / (n + 1) as f64
        } else {
            raw
        }
    }

    /// Largest oscillation of any term over `states` (pairs of states for pairwise terms).
    pub fn max_oscillation(&self, states: &[S]) -> Result<f64> {
        self.require_additive("max_oscillation")?;
        let n = self.horizon().unwrap_or(0);
        let mut worst: f64 = 0.0;
        for p in 0..=n {
            let values: Vec<f64> = if self.uses_previous(p) {
                states
                    .iter()
                    .flat_map(|a| states.iter().map(move |b| (a, b)))
                    .map(|(a, b)| self.local(p, Some(a), b))
                    .collect()
            } else {
                states.iter().map(|x| self.local(p, None, x)).collect()
            };
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            worst = worst.max(hi - lo);
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_path_sum() {
        let f = PathFunctional::homogeneous(|x: &f64| *x, 3);
        assert_eq!(f.kind(), FunctionalKind::TerminalAdditive);
        assert_eq!(f.horizon(), Some(3));
        assert_eq!(f.eval_path(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 10.0);
        let g = f.normalized();
        assert_eq!(g.eval_path(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        // shorter paths use the leading terms
        assert_eq!(g.eval_path(&[1.0, 3.0]).unwrap(), 2.0);
    }

    #[test]
    fn pairwise_path_sum() {
        let f = PathFunctional::homogeneous_pairwise(|x: &f64| *x, |a: &f64, b: &f64| a * b, 2);
        // 1 + 1*2 + 2*3
        assert_eq!(f.eval_path(&[1.0, 2.0, 3.0]).unwrap(), 9.0);
        assert!(f.uses_previous(1));
        assert!(!f.uses_previous(0));
    }

    #[test]
    fn too_long_path_rejected() {
        let f = PathFunctional::homogeneous(|x: &f64| *x, 1);
        assert!(matches!(
            f.eval_path(&[0.0, 0.0, 0.0]),
            Err(Error::FunctionalTooShort {
                requested: 2,
                available: 1
            })
        ));
    }

    #[test]
    fn oscillation_scan() {
        let f = PathFunctional::homogeneous(|x: &usize| *x as f64 * 0.5, 2);
        assert_eq!(f.max_oscillation(&[0, 1, 2]).unwrap(), 1.0);
        let g = PathFunctional::<usize>::general(|p| p.len() as f64);
        assert!(g.max_oscillation(&[0, 1]).is_err());
    }
}
