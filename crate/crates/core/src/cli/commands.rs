use std::path::Path;

use nalgebra::DVector;
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{state_term, ScenarioConfig};
use super::{num, CliError, Command, Output};
use crate::error::Error;
use crate::model::{validate_model, FunctionalKind, PathFunctional};
use crate::numeric::mean_and_variance;
use crate::oracle::{
    backward_decomposition, duality_sides, enumerate_path_measure, enumerated_d_operator,
    exact_flow, h_process, segment_identity_sides, AdditiveAnalysis, FiniteStateModel,
};
use crate::particle::{genealogical_estimate, lineage_stats, run_filter, ParticleFilter};
use crate::rng::{uniform, RandomStreams};
use crate::smoother::{OnlineSmoother, SmootherState};
use crate::stats::{
    run_replicates, scaled_variance, unbiasedness_test, variance_growth_fit, Estimator, Scenario,
    Z_THRESHOLD,
};

pub(super) fn dispatch(
    command: Command,
    config: &ScenarioConfig,
    base_dir: Option<&Path>,
    out: &Output,
) -> Result<(), CliError> {
    match command {
        Command::Smooth => smooth(config, base_dir, out),
        Command::Genealogy => genealogy(config, base_dir, out),
        Command::CompareVariance => compare_variance(config, base_dir, out),
        Command::OracleCheck => oracle_check(config, base_dir, out),
        Command::Hprocess => hprocess(config, base_dir, out),
    }
}

fn exact_smoothed(
    model: &FiniteStateModel,
    horizon: usize,
    f: &PathFunctional<usize>,
) -> Result<f64, CliError> {
    Ok(AdditiveAnalysis::new(model, horizon, f)?.smoothed())
}

#[derive(Serialize)]
struct StateSnapshot<'a> {
    seed: u64,
    scenario_hash: &'a str,
    states: Vec<SmootherState>,
}

fn smooth(config: &ScenarioConfig, base_dir: Option<&Path>, out: &Output) -> Result<(), CliError> {
    let model = config.build_model(base_dir, None)?;
    let horizon = config.horizon(&model);
    let f = config.build_functional(&model, horizon)?;
    let exact = (0..=horizon)
        .map(|p| exact_smoothed(&model, p, &f))
        .collect::<Result<Vec<_>, _>>()?;
    let runs = (0..config.run.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let streams = RandomStreams::for_replicate(config.run.seed, r);
            let mut filter =
                ParticleFilter::start(&model, config.run.n_particles, config.selection(), streams)?;
            let mut smoother =
                OnlineSmoother::new(filter.current(), f.clone(), config.run.smoother)?;
            let mut trace = Vec::with_capacity(horizon + 1);
            for epoch in 0..=horizon {
                if epoch > 0 {
                    let prev = filter.advance()?;
                    smoother.advance(&prev, filter.current(), &model)?;
                }
                let cloud = filter.current();
                trace.push((cloud.log_normalizer, smoother.estimate(cloud)?));
            }
            Ok((trace, smoother.state().clone()))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mut rows = Vec::new();
    let mut states = Vec::new();
    for (r, (trace, state)) in runs.into_iter().enumerate() {
        for (epoch, (log_z, est)) in trace.into_iter().enumerate() {
            rows.push(vec![
                r.to_string(),
                epoch.to_string(),
                num(log_z),
                num(est),
                num(exact[epoch]),
            ]);
        }
        states.push(state);
    }
    out.write_csv(
        "smooth.csv",
        &["replicate", "epoch", "log_normalizer", "estimate", "exact"],
        &rows,
    )?;
    let snapshot = StateSnapshot {
        seed: out.seed(),
        scenario_hash: out.hash(),
        states,
    };
    out.write_text(
        "smoother_state.json",
        &(serde_json::to_string_pretty(&snapshot).map_err(Error::from)? + "\n"),
    )
}

fn genealogy(
    config: &ScenarioConfig,
    base_dir: Option<&Path>,
    out: &Output,
) -> Result<(), CliError> {
    let model = config.build_model(base_dir, None)?;
    let horizon = config.horizon(&model);
    let f = config.build_functional(&model, horizon)?;
    let exact = exact_smoothed(&model, horizon, &f)?;
    let runs = (0..config.run.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let streams = RandomStreams::for_replicate(config.run.seed, r);
            let history = run_filter(
                &model,
                config.run.n_particles,
                &config.selection(),
                horizon,
                &streams,
            )?;
            Ok((
                genealogical_estimate(&history, &f)?,
                lineage_stats(&history)?,
            ))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mut rows = Vec::new();
    let mut lineage = Vec::new();
    for (r, (est, stats)) in runs.into_iter().enumerate() {
        rows.push(vec![
            r.to_string(),
            num(est),
            num(exact),
            stats
                .coalescence_depth
                .map(|d| d.to_string())
                .unwrap_or_default(),
        ]);
        for (epoch, count) in stats.distinct_ancestors.iter().enumerate() {
            lineage.push(vec![r.to_string(), epoch.to_string(), count.to_string()]);
        }
    }
    out.write_csv(
        "genealogy.csv",
        &["replicate", "estimate", "exact", "coalescence_depth"],
        &rows,
    )?;
    out.write_csv(
        "lineage.csv",
        &["replicate", "epoch", "distinct_ancestors"],
        &lineage,
    )
}

fn in_range(range: Option<[f64; 2]>, v: f64) -> bool {
    range.is_none_or(|[lo, hi]| v >= lo && v <= hi)
}

fn compare_variance(
    config: &ScenarioConfig,
    base_dir: Option<&Path>,
    out: &Output,
) -> Result<(), CliError> {
    let header = [
        "horizon",
        "n_particles",
        "estimator",
        "replicates",
        "mean",
        "scaled_variance",
        "exponent",
        "r_squared",
    ];
    let mut horizons = config.grid.horizons.clone();
    horizons.sort_unstable();
    horizons.dedup();
    let Some(&max_horizon) = horizons.last() else {
        return out.write_csv("compare_variance.csv", &header, &[]);
    };
    let estimators = if config.run.estimators.is_empty() {
        vec![Estimator::Genealogical, Estimator::Smoothed]
    } else {
        config.run.estimators.clone()
    };
    if estimators.contains(&Estimator::Empirical) {
        return Err(CliError::Config(
            "compare-variance does not record the empirical estimator".into(),
        ));
    }
    if config.run.replicates < 2 {
        return Err(CliError::Config(
            "compare-variance needs run.replicates >= 2".into(),
        ));
    }
    let model = config.build_model(base_dir, Some(max_horizon))?;
    let f = config.build_functional(&model, max_horizon)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &n_particles in &config.grid.n_particles {
        let scenario = Scenario::new("compare-variance", &model, n_particles, max_horizon)
            .with_functional(f.clone())
            .with_selection(config.selection())
            .with_smoother_mode(config.run.smoother)
            .with_checkpoints(horizons.clone());
        let batch = run_replicates(
            &scenario,
            &estimators,
            config.run.replicates,
            config.run.seed,
            None,
        )?;
        for &est in &estimators {
            let mut cells = Vec::with_capacity(horizons.len());
            for &n in &horizons {
                let values = batch.column(est, n).expect("column recorded");
                let (mean, _) = mean_and_variance(values);
                cells.push((n, mean, scaled_variance(values, n_particles)?));
            }
            let points: Vec<(f64, f64)> =
                cells.iter().map(|&(n, _, v)| ((n + 1) as f64, v)).collect();
            let fit = if points.len() >= 2 && points.iter().all(|&(_, v)| v > 0.0) {
                Some(variance_growth_fit(&points)?)
            } else {
                None
            };
            if let Some(fit) = &fit {
                let range = match est {
                    Estimator::Genealogical => config.checks.genealogical_exponent,
                    Estimator::Smoothed => config.checks.smoothed_exponent,
                    _ => None,
                };
                if !in_range(range, fit.exponent) {
                    failures.push(format!(
                        "{} exponent {:.3} at N={n_particles} outside {:?}",
                        est.as_str(),
                        fit.exponent,
                        range.expect("range present when out of it")
                    ));
                }
            }
            for (n, mean, var) in cells {
                rows.push(vec![
                    n.to_string(),
                    n_particles.to_string(),
                    est.as_str().to_string(),
                    config.run.replicates.to_string(),
                    num(mean),
                    num(var),
                    fit.as_ref().map(|f| num(f.exponent)).unwrap_or_default(),
                    fit.as_ref().map(|f| num(f.r_squared)).unwrap_or_default(),
                ]);
            }
        }
    }
    out.write_csv("compare_variance.csv", &header, &rows)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failures.join("; ")))
    }
}

struct CheckRow {
    check: &'static str,
    case: String,
    error: f64,
    tolerance: f64,
}

impl CheckRow {
    fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

/// `max |a - b|` relative to the largest magnitude on either side.
fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let gap = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        gap
    } else {
        gap / scale
    }
}

fn random_vector<R: RngCore>(rng: &mut R, d: usize, probability: bool) -> DVector<f64> {
    let v = DVector::from_fn(d, |_, _| {
        if probability {
            0.05 + uniform(rng)
        } else {
            2.0 * uniform(rng) - 1.0
        }
    });
    if probability {
        let s = v.sum();
        v / s
    } else {
        v
    }
}

fn oracle_check(
    config: &ScenarioConfig,
    base_dir: Option<&Path>,
    out: &Output,
) -> Result<(), CliError> {
    let model = config.build_model(base_dir, None)?;
    let horizon = config.horizon(&model);
    let report = validate_model(&model.with_horizon(horizon)?, 64, config.run.seed)?;
    if !report.passed() {
        let v = &report.violations[0];
        return Err(CliError::ModelContract(format!(
            "{} violation(s), first at epoch {} ({:?}, {} = {})",
            report.violations.len(),
            v.epoch,
            v.kind,
            v.state,
            v.value
        )));
    }
    let tol = config.checks.tolerance;
    let cap = config.checks.enumeration_cap;
    let d = model.dim();
    let f = config.build_functional(&model, horizon)?;
    let mut rng = RandomStreams::new(config.run.seed).auxiliary(0x6f72_6163);
    let mut rows = Vec::new();

    for k in 0..config.checks.random_measures {
        for n in 1..=horizon {
            let eta = random_vector(&mut rng, d, true);
            let a = random_vector(&mut rng, d, false);
            let b = random_vector(&mut rng, d, false);
            let (lhs, rhs) = duality_sides(&model, n, &eta, &a, &b)?;
            rows.push(CheckRow {
                check: "duality",
                case: format!("measure={k} epoch={n}"),
                error: relative_gap(&[lhs], &[rhs]),
                tolerance: tol,
            });
        }
    }

    let paths = enumerate_path_measure(&model, horizon, cap)?;
    let backward = backward_decomposition(&model, horizon, cap)?;
    rows.push(CheckRow {
        check: "backward-decomposition",
        case: format!("horizon={horizon}"),
        error: relative_gap(&backward, &paths.normalized_masses()),
        tolerance: tol,
    });

    for k in 0..config.checks.random_measures {
        let p = if horizon == 0 { 0 } else { k % horizon };
        let eta = random_vector(&mut rng, d, true);
        let (lhs, rhs) = segment_identity_sides(&model, p, horizon, &eta, cap)?;
        rows.push(CheckRow {
            check: "segment-identity",
            case: format!("measure={k} start={p} end={horizon}"),
            error: relative_gap(&lhs, &rhs),
            tolerance: tol,
        });
    }

    let analysis = AdditiveAnalysis::new(&model, horizon, &f)?;
    let flow = exact_flow(&model, horizon)?;
    let target = analysis.unnormalized();
    rows.push(CheckRow {
        check: "path-expectation",
        case: format!("horizon={horizon}"),
        error: relative_gap(&[paths.unnormalized_expectation(&f)?], &[target]),
        tolerance: tol,
    });
    for p in 0..=horizon {
        let d_op = analysis.d_operator(p);
        rows.push(CheckRow {
            check: "semigroup",
            case: format!("p={p}"),
            error: relative_gap(&[flow.gamma[p].dot(&d_op)], &[target]),
            tolerance: tol,
        });
        let enumerated = enumerated_d_operator(&model, p, horizon, &f, cap)?;
        rows.push(CheckRow {
            check: "d-operator",
            case: format!("p={p}"),
            error: relative_gap(enumerated.as_slice(), d_op.as_slice()),
            tolerance: tol,
        });
    }

    if config.run.replicates >= 2 {
        let scenario = Scenario::new("oracle-check", &model, config.run.n_particles, horizon)
            .with_functional(f.clone())
            .with_selection(config.selection())
            .with_smoother_mode(config.run.smoother);
        let est = [Estimator::UnnormalizedSmoothed, Estimator::Normalizer];
        let batch = run_replicates(
            &scenario,
            &est,
            config.run.replicates,
            config.run.seed,
            None,
        )?;
        let targets = [target, flow.normalizers[horizon]];
        for (e, t) in est.iter().zip(targets) {
            let verdict = unbiasedness_test(batch.values(*e).expect("recorded"), t)?;
            rows.push(CheckRow {
                check: "unbiasedness",
                case: e.as_str().to_string(),
                error: verdict.z.abs(),
                tolerance: Z_THRESHOLD,
            });
        }
    }

    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.check.to_string(),
                r.case.clone(),
                num(r.error),
                num(r.tolerance),
                r.passed().to_string(),
            ]
        })
        .collect();
    out.write_csv(
        "oracle_check.csv",
        &["check", "case", "error", "tolerance", "passed"],
        &table,
    )?;
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} ({})", r.check, r.case))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed.join(", ")))
    }
}

fn hprocess(
    config: &ScenarioConfig,
    base_dir: Option<&Path>,
    out: &Output,
) -> Result<(), CliError> {
    if config.functional.kind != FunctionalKind::TerminalAdditive {
        return Err(CliError::Config(
            "hprocess needs a terminal-additive functional".into(),
        ));
    }
    let model = config.build_model(base_dir, None)?;
    let horizon = config.horizon(&model);
    let mut checkpoints: Vec<usize> = config
        .grid
        .horizons
        .iter()
        .copied()
        .filter(|&n| n <= horizon)
        .collect();
    if config.grid.horizons.iter().any(|&n| n > horizon) {
        return Err(CliError::Config(format!(
            "grid.horizons must not exceed the run horizon {horizon}"
        )));
    }
    checkpoints.push(horizon);
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let values: std::sync::Arc<[f64]> = model.values().into();
    let term = state_term(&config.functional.term, &values, model.dim())?;
    let f_values: DVector<f64> = DVector::from_fn(model.dim(), |x, _| term(&x));
    let f = PathFunctional::additive(vec![term; horizon + 1])?.normalized();
    let limit = h_process(&model, 1e-14, 1_000_000)?;
    let mu_h = limit.mu_h.dot(&f_values);
    let scenario = Scenario::new("hprocess", &model, config.run.n_particles, horizon)
        .with_functional(f.clone())
        .with_selection(config.selection())
        .with_smoother_mode(config.run.smoother)
        .with_checkpoints(checkpoints.clone());
    let batch = run_replicates(
        &scenario,
        &[Estimator::Smoothed],
        config.run.replicates,
        config.run.seed,
        None,
    )?;
    let mut rows = Vec::new();
    let mut final_pass = true;
    for &n in &checkpoints {
        let values = batch.column(Estimator::Smoothed, n).expect("recorded");
        let (mean, var) = mean_and_variance(values);
        let sd = var.sqrt();
        let gap = (mean - mu_h).abs();
        let passed = if values.len() >= 2 {
            gap <= config.checks.sigmas * sd
        } else {
            gap <= config.checks.tolerance
        };
        if n == horizon {
            final_pass = passed;
        }
        rows.push(vec![
            n.to_string(),
            config.run.n_particles.to_string(),
            values.len().to_string(),
            num(mean),
            num(sd),
            num(sd / (values.len() as f64).sqrt()),
            num(exact_smoothed(&model, n, &f)?),
            num(mu_h),
            num(gap),
            passed.to_string(),
        ]);
    }
    out.write_csv(
        "hprocess.csv",
        &[
            "horizon",
            "n_particles",
            "replicates",
            "mean",
            "std_dev",
            "std_error",
            "exact",
            "mu_h",
            "gap",
            "passed",
        ],
        &rows,
    )?;
    if final_pass {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(format!(
            "gap to the h-process limit at horizon {horizon} exceeds {} standard deviations",
            config.checks.sigmas
        )))
    }
}
