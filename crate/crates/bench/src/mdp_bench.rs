//! Repeated-trial OPE benchmark on a tabular MDP with exact ground truth.

use flowis::mdp::{exact_value, sample_trajectories, StochasticPolicy, Trajectory};
use flowis::quotient::{
    empirical_quotient_ratio, estimate_value, exact_flows, EstimateReport, QuotientRatioTable,
    QuotientSpec, RatioMode,
};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, MdpSection};
use crate::emit::{Cell, Table};
use crate::error::Result;
use crate::summary::ErrorSummary;
use crate::world::{derive_seed, mdp_setup};

/// Ratio table for the FF estimators on one dataset.
fn ratio_table(
    section: &MdpSection,
    spec: &QuotientSpec,
    data: &[Trajectory<f64>],
    target: &StochasticPolicy<f64>,
    behavior: &StochasticPolicy<f64>,
    exact: Option<&QuotientRatioTable<f64>>,
) -> flowis::Result<QuotientRatioTable<f64>> {
    match (section.ratio_mode, exact) {
        (RatioMode::Exact, Some(t)) => Ok(t.clone()),
        (mode, _) => {
            empirical_quotient_ratio(data, spec, target, behavior, mode, section.split_fraction)
        }
    }
}

fn exact_ratio_table(
    section: &MdpSection,
    spec: &QuotientSpec,
    mdp: &flowis::mdp::TabularMdp<f64>,
    target: &StochasticPolicy<f64>,
    behavior: &StochasticPolicy<f64>,
) -> flowis::Result<Option<QuotientRatioTable<f64>>> {
    if section.ratio_mode != RatioMode::Exact {
        return Ok(None);
    }
    let fp = exact_flows(mdp, target, spec)?;
    let fb = exact_flows(mdp, behavior, spec)?;
    QuotientRatioTable::exact(&fp, &fb, spec).map(Some)
}

/// Runs every configured estimator on `data`.
fn estimate_all(
    section: &MdpSection,
    spec: &QuotientSpec,
    data: &[Trajectory<f64>],
    target: &StochasticPolicy<f64>,
    behavior: &StochasticPolicy<f64>,
    exact: Option<&QuotientRatioTable<f64>>,
) -> Vec<flowis::Result<EstimateReport>> {
    let needs_table = section.estimators.iter().any(|m| m.needs_ratios());
    let table = if needs_table {
        Some(ratio_table(section, spec, data, target, behavior, exact))
    } else {
        None
    };
    section
        .estimators
        .iter()
        .map(|&method| {
            let ratios = match (&table, method.needs_ratios()) {
                (Some(Err(e)), true) => return Err(e.clone()),
                (Some(Ok(t)), true) => Some(t),
                _ => None,
            };
            estimate_value(data, method, target, behavior, ratios, section.discount)
        })
        .collect()
}

/// One row per estimator: bias, std and RMSE over trials against the exact
/// target value. An estimator that fails on some trial keeps its row, with
/// the failure count and first error.
pub fn run_mdp_benchmark(config: &ExperimentConfig) -> Result<Table> {
    let section = config.mdp()?;
    let (mdp, target, behavior) = mdp_setup(section)?;
    let spec = section.quotient_spec()?;
    let truth = exact_value(&mdp, &target)?;
    let exact = exact_ratio_table(section, &spec, &mdp, &target, &behavior)?;

    let trials: Vec<Vec<flowis::Result<EstimateReport>>> = (0..config.n_trials)
        .into_par_iter()
        .map(|trial| {
            let seed = derive_seed(config.seed, &[trial as u64]);
            match sample_trajectories(&mdp, &behavior, config.n_logged, seed) {
                Ok(data) => estimate_all(section, &spec, &data, &target, &behavior, exact.as_ref()),
                Err(e) => section.estimators.iter().map(|_| Err(e.clone())).collect(),
            }
        })
        .collect();

    let mut table = Table::new(
        "mdp_benchmark",
        &[
            "estimator",
            "true_value",
            "mean_estimate",
            "bias",
            "std",
            "rmse",
            "mean_ess",
            "n_ok",
            "n_failed",
            "failure",
        ],
    );
    for (i, method) in section.estimators.iter().enumerate() {
        let mut summary = ErrorSummary::new(truth);
        let mut ess = Vec::new();
        for trial in &trials {
            match &trial[i] {
                Ok(r) => {
                    summary.push(r.estimate);
                    ess.push(r.ess);
                }
                Err(e) => summary.fail(e.to_string()),
            }
        }
        let mean_ess = (!ess.is_empty()).then(|| ess.iter().sum::<f64>() / ess.len() as f64);
        table.push(summary.row(method.name(), mean_ess));
    }
    Ok(table)
}

/// Estimator reports on a fixed logged dataset.
pub fn evaluate_mdp_dataset(config: &ExperimentConfig, data: &[Trajectory<f64>]) -> Result<Table> {
    let section = config.mdp()?;
    let (mdp, target, behavior) = mdp_setup(section)?;
    let spec = section.quotient_spec()?;
    let exact = exact_ratio_table(section, &spec, &mdp, &target, &behavior)?;
    let reports = estimate_all(section, &spec, data, &target, &behavior, exact.as_ref());
    let mut table = Table::new(
        "mdp_estimates",
        &[
            "method",
            "estimate",
            "ess",
            "min_weight",
            "max_weight",
            "n",
            "n_used",
            "n_skipped",
        ],
    );
    for (method, report) in section.estimators.iter().zip(reports) {
        // Strict: the first failure aborts with its own error kind.
        let r = report?;
        debug_assert_eq!(r.method, *method);
        table.push(vec![
            Cell::text(r.method.name()),
            Cell::Real(r.estimate),
            Cell::Real(r.ess),
            Cell::Real(r.min_weight),
            Cell::Real(r.max_weight),
            Cell::count(r.n),
            Cell::count(r.n_used),
            Cell::count(r.n_skipped),
        ]);
    }
    Ok(table)
}
