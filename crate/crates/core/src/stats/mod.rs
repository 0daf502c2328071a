//! Replicate experiments and statistical verdicts.

mod replicates;

use serde::{Deserialize, Serialize};

pub use replicates::{
    one_step_batch, run_replicate, run_replicates, Column, Estimator, ReplicateBatch, Scenario,
    BATCH_FORMAT_VERSION,
};

use crate::error::{Error, Result};
use crate::numeric::mean_and_variance;

/// Pass threshold for every z-type verdict.
pub const Z_THRESHOLD: f64 = 3.0;

fn require_replicates(values: &[f64], required: usize) -> Result<()> {
    if values.len() < required {
        return Err(Error::TooFewReplicates {
            required,
            got: values.len(),
        });
    }
    Ok(())
}

/// `N` times the unbiased sample variance.
pub fn scaled_variance(values: &[f64], n_particles: usize) -> Result<f64> {
    require_replicates(values, 2)?;
    Ok(n_particles as f64 * mean_and_variance(values).1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZVerdict {
    pub replicates: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub z: f64,
    pub passed: bool,
}

/// `z = sqrt(R) (mean - target) / sd`; passes when `|z| <= 3`. A batch with
/// zero spread passes only if it equals the target.
pub fn unbiasedness_test(values: &[f64], target: f64) -> Result<ZVerdict> {
    require_replicates(values, 2)?;
    let (mean, var) = mean_and_variance(values);
    let sd = var.sqrt();
    let z = if sd > 0.0 {
        (values.len() as f64).sqrt() * (mean - target) / sd
    } else if mean == target {
        0.0
    } else {
        f64::INFINITY.copysign(mean - target)
    };
    Ok(ZVerdict {
        replicates: values.len(),
        mean,
        std_dev: sd,
        z,
        passed: z.abs() <= Z_THRESHOLD,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(ln x, ln v)`.
pub fn variance_growth_fit(points: &[(f64, f64)]) -> Result<GrowthFit> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(
            "growth fit needs at least two points".into(),
        ));
    }
    if points.iter().any(|(x, v)| !(*x > 0.0 && *v > 0.0)) {
        return Err(Error::InvalidArgument(
            "growth fit needs positive coordinates".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, v)| (x.ln(), v.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "growth fit needs distinct x values".into(),
        ));
    }
    let exponent = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(GrowthFit {
        exponent,
        intercept: my - exponent * mx,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub epsilon: f64,
    /// `b / sqrt(N) + epsilon`.
    pub threshold: f64,
    pub exceedances: usize,
    pub frequency: f64,
    /// `exp(-N epsilon^2 / (2 b^2))`.
    pub bound: f64,
    /// Binomial `3 sigma` allowance at the bound.
    pub slack: f64,
    pub passed: bool,
}

/// Empirical tail of `|error|` against the Gaussian concentration bound.
pub fn concentration_check(
    errors: &[f64],
    n_particles: usize,
    b: f64,
    epsilons: &[f64],
) -> Result<Vec<TailRow>> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "concentration scale b must be positive, got {b}"
        )));
    }
    require_replicates(errors, 1)?;
    let r = errors.len() as f64;
    let nf = n_particles as f64;
    epsilons
        .iter()
        .map(|&eps| {
            if !(eps > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "epsilon must be positive, got {eps}"
                )));
            }
            let threshold = b / nf.sqrt() + eps;
            let exceedances = errors.iter().filter(|e| e.abs() >= threshold).count();
            let frequency = exceedances as f64 / r;
            let bound = (-nf * eps * eps / (2.0 * b * b)).exp();
            let p = bound.min(1.0);
            let slack = Z_THRESHOLD * (p * (1.0 - p) / r).sqrt();
            Ok(TailRow {
                epsilon: eps,
                threshold,
                exceedances,
                frequency,
                bound,
                slack,
                passed: frequency <= bound + slack,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalErrorVerdict {
    pub mean: ZVerdict,
    /// Sample variance of `V = sqrt(N) (eta_n^N(f) - Phi_n(eta_{n-1}^N)(f))`.
    pub variance: f64,
    pub expected_variance: f64,
    /// `|variance - expected| / expected` (0 when both vanish).
    pub relative_variance_error: f64,
}

/// `values[r]` are replicate draws of `eta_n^N(f)` from one frozen cloud whose
/// exact one-step prediction is `target`.
pub fn local_error_field(
    values: &[f64],
    target: f64,
    n_particles: usize,
    expected_variance: f64,
) -> Result<LocalErrorVerdict> {
    require_replicates(values, 2)?;
    let scale = (n_particles as f64).sqrt();
    let field: Vec<f64> = values.iter().map(|v| scale * (v - target)).collect();
    let mean = unbiasedness_test(&field, 0.0)?;
    let variance = mean_and_variance(&field).1;
    let relative_variance_error = if expected_variance == 0.0 {
        if variance == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (variance - expected_variance).abs() / expected_variance
    };
    Ok(LocalErrorVerdict {
        mean,
        variance,
        expected_variance,
        relative_variance_error,
    })
}

fn ln_factorial(k: u32) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// Raw moment constant: `((2k)! 2^-k / k!)^(1/2k)` for `r = 2k`,
/// `((2k+1)! 2^-k / k!)^(1/(2k+1))` for `r = 2k+1`.
fn khintchine_raw(r: u32) -> f64 {
    let k = r / 2;
    let log = ln_factorial(r) - k as f64 * std::f64::consts::LN_2 - ln_factorial(k);
    (log / r as f64).exp()
}

/// Smallest admissible `a_r`: since `L_r` norms increase with `r`, any
/// constant valid for `s >= r` is valid for `r`, so `a_r = min_{s >= r} raw_s`.
/// Even and odd raw constants each increase with `r`, so only `r` and `r + 1` compete.
pub fn khintchine_constant(r: u32) -> Result<f64> {
    if r == 0 {
        return Err(Error::InvalidArgument(
            "moment order r must be at least 1".into(),
        ));
    }
    Ok((r..=r + 1)
        .map(khintchine_raw)
        .fold(f64::INFINITY, f64::min))
}
