//! Repeated-trial slate OPE benchmark with exact ground truth from the
//! slate lattice.

use flowis::slate_ope::{
    estimate_slate_value, exact_slate_value, fit_reward_model, log_slates, EstimatorReport,
    LoggedSlateDataset, SlateRewardModel,
};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, SlateSection};
use crate::emit::{Cell, Table};
use crate::error::{BenchError, Result};
use crate::summary::ErrorSummary;
use crate::world::{derive_seed, slate_policy, SlatePolicy, SlateWorld};

/// Pseudo-count of the tabular reward model used by DR and DM.
pub const REWARD_PSEUDO_COUNT: f64 = 1.0;

pub struct SlateSetup {
    pub world: SlateWorld,
    pub target: SlatePolicy,
    pub behavior: SlatePolicy,
}

pub fn slate_setup(section: &SlateSection) -> Result<SlateSetup> {
    let world = SlateWorld::from_section(section);
    let target = slate_policy(&world, &section.target)?;
    let behavior = slate_policy(&world, &section.behavior)?;
    Ok(SlateSetup {
        world,
        target,
        behavior,
    })
}

fn estimate_all(
    section: &SlateSection,
    data: &LoggedSlateDataset<f64>,
    setup: &SlateSetup,
    model: Option<&dyn SlateRewardModel<f64>>,
) -> Vec<flowis::Result<EstimatorReport>> {
    let options = section.options();
    section
        .estimators
        .iter()
        .map(|&m| estimate_slate_value(data, m, &setup.target, &setup.behavior, model, &options))
        .collect()
}

/// One row per `(K, estimator)`: bias, std and RMSE over trials against the
/// exact target value. The reward model for DR/DM is fit on an independent
/// batch logged under the behavior policy.
pub fn run_slate_benchmark(config: &ExperimentConfig) -> Result<Table> {
    let section = config.slate()?;
    let setup = slate_setup(section)?;
    let reward = |x: usize, s| setup.world.mean_reward(x, s);
    let needs_model = section.estimators.iter().any(|m| m.needs_reward_model());

    let mut table = Table::new(
        "slate_benchmark",
        &[
            "k",
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
    for &k in &section.slate_sizes {
        let truth: f64 = exact_slate_value(
            &setup.target,
            section.num_contexts,
            k,
            &reward,
            section.lattice_budget,
        )?;
        let log = |stream: u64, trial: usize| {
            log_slates(
                &setup.behavior,
                "behavior",
                section.num_contexts,
                k,
                config.n_logged,
                derive_seed(config.seed, &[k as u64, trial as u64, stream]),
                &reward,
                section.reward_noise,
            )
        };
        let trials: Vec<Vec<flowis::Result<EstimatorReport>>> = (0..config.n_trials)
            .into_par_iter()
            .map(|trial| {
                let data = match log(0, trial) {
                    Ok(d) => d,
                    Err(e) => return section.estimators.iter().map(|_| Err(e.clone())).collect(),
                };
                let model = if needs_model {
                    match log(1, trial) {
                        Ok(held_out) => {
                            Some(fit_reward_model(&held_out.records, REWARD_PSEUDO_COUNT))
                        }
                        Err(e) => {
                            return section.estimators.iter().map(|_| Err(e.clone())).collect()
                        }
                    }
                } else {
                    None
                };
                estimate_all(
                    section,
                    &data,
                    &setup,
                    model.as_ref().map(|m| m as &dyn SlateRewardModel<f64>),
                )
            })
            .collect();

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
            let mut row = vec![Cell::count(k)];
            row.extend(summary.row(method.name(), mean_ess));
            table.push(row);
        }
    }
    Ok(table)
}

/// Estimator reports on a fixed logged dataset. IS estimators use every
/// record; DR and DM fit the reward model on the first half and evaluate on
/// the second.
pub fn evaluate_slate_dataset(
    config: &ExperimentConfig,
    data: &LoggedSlateDataset<f64>,
) -> Result<Table> {
    let section = config.slate()?;
    if data.catalog_size != section.catalog_size {
        return Err(BenchError::Config(format!(
            "dataset catalog {} differs from configured catalog {}",
            data.catalog_size, section.catalog_size
        )));
    }
    let setup = slate_setup(section)?;
    let options = section.options();
    let half = data.len() / 2;
    let (fit, eval) = (data.slice(0..half), data.slice(half..data.len()));
    let model = fit_reward_model(&fit.records, REWARD_PSEUDO_COUNT);

    let mut table = Table::new(
        "slate_estimates",
        &[
            "method",
            "estimate",
            "ess",
            "min_weight",
            "max_weight",
            "mean_weight",
            "n_used",
            "n_skipped_support",
        ],
    );
    for &method in &section.estimators {
        let r = if method.needs_reward_model() {
            if half == 0 {
                return Err(BenchError::Config(format!(
                    "{method} needs at least two records"
                )));
            }
            estimate_slate_value(
                &eval,
                method,
                &setup.target,
                &setup.behavior,
                Some(&model),
                &options,
            )?
        } else {
            estimate_slate_value(data, method, &setup.target, &setup.behavior, None, &options)?
        };
        table.push(vec![
            Cell::text(r.method.name()),
            Cell::Real(r.estimate),
            Cell::Real(r.ess),
            Cell::Real(r.min_weight),
            Cell::Real(r.max_weight),
            Cell::Real(r.mean_weight),
            Cell::count(r.n_used),
            Cell::count(r.n_skipped_support),
        ]);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flowis::slate_ope::SlateMethod;

    fn small(n_trials: usize) -> ExperimentConfig {
        ExperimentConfig {
            seed: 11,
            n_trials,
            n_logged: 300,
            slate: Some(SlateSection {
                catalog_size: 6,
                slate_sizes: vec![2, 3],
                num_contexts: 2,
                ..SlateSection::default()
            }),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn rows_per_size_and_estimator() {
        let t = run_slate_benchmark(&small(4)).unwrap();
        assert_eq!(t.rows.len(), 8);
        assert_eq!(t.get(4, "k"), Some(&Cell::Int(3)));
        assert_eq!(t.get(5, "estimator"), Some(&Cell::text("ff_ois")));
        assert_eq!(run_slate_benchmark(&small(4)).unwrap(), t);
    }

    #[test]
    fn on_policy_ois_is_exact_mean_of_rewards() {
        let mut cfg = small(50);
        let s = cfg.slate.as_mut().unwrap();
        s.behavior = s.target.clone();
        s.estimators = vec![SlateMethod::TreeOis, SlateMethod::FfOis];
        let t = run_slate_benchmark(&cfg).unwrap();
        // Weights are exactly one, so both estimators coincide.
        assert_eq!(t.rows[0][2..], t.rows[1][2..]);
        for row in 0..t.rows.len() {
            let bias = t.get(row, "bias").unwrap().as_real().unwrap();
            let std = t.get(row, "std").unwrap().as_real().unwrap();
            assert!(bias.abs() < 4.0 * std / (50f64).sqrt());
        }
    }

    #[test]
    fn dataset_evaluation_uses_halves_for_dr() {
        let cfg = small(1);
        let s = cfg.slate().unwrap();
        let setup = slate_setup(s).unwrap();
        let data = log_slates(
            &setup.behavior,
            "b",
            2,
            3,
            100,
            5,
            &|x, set| setup.world.mean_reward(x, set),
            0.1,
        )
        .unwrap();
        let t = evaluate_slate_dataset(&cfg, &data).unwrap();
        assert_eq!(t.get(0, "n_used"), Some(&Cell::Int(100)));
        assert_eq!(t.get(2, "n_used"), Some(&Cell::Int(50)));
    }
}
