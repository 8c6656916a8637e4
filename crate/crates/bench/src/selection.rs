//! Off-policy model selection: how well each estimator ranks a set of
//! candidate slate policies against their exact values.

use flowis::slate_ope::{
    estimate_slate_value, exact_slate_value, fit_reward_model, log_slates, SlateMethod,
    SlateRewardModel, SupportMode,
};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, SelectionSection};
use crate::emit::{Cell, Table};
use crate::error::{BenchError, Result};
use crate::slate_bench::{slate_setup, REWARD_PSEUDO_COUNT};
use crate::world::{derive_seed, slate_policy, SlatePolicy};

/// Ranks `1..=n` with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks. `None` with
/// fewer than two points or a constant input.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Selection quality of one estimator on one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialScore {
    /// The chosen candidate has the best true value.
    pub top1: bool,
    pub spearman: Option<f64>,
    /// Best true value minus that of the chosen candidate.
    pub regret: f64,
}

/// Scores a selection from estimates over the candidates that produced one
/// (`None` entries are skipped). `None` if nothing was estimated.
pub fn score_selection(truth: &[f64], estimates: &[Option<f64>]) -> Option<TrialScore> {
    let pairs: Vec<(f64, f64)> = truth
        .iter()
        .zip(estimates)
        .filter_map(|(&t, e)| e.map(|e| (t, e)))
        .collect();
    let chosen = pairs.iter().max_by(|a, b| a.1.total_cmp(&b.1))?;
    let best = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (t, e): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    Some(TrialScore {
        top1: chosen.0 >= best,
        spearman: spearman(&t, &e),
        regret: best - chosen.0,
    })
}

pub struct SelectionOutput {
    pub selection: Table,
    pub candidates: Table,
}

fn candidates(
    config: &ExperimentConfig,
    sel: &SelectionSection,
) -> Result<Vec<(String, SlatePolicy)>> {
    let section = config.slate()?;
    let setup = slate_setup(section)?;
    sel.candidates
        .iter()
        .enumerate()
        .map(|(i, spec)| Ok((spec.label(i), slate_policy(&setup.world, spec)?)))
        .collect()
}

/// Logs `n_trials` datasets under the configured behavior policy and, per
/// estimator, averages top-1 accuracy, Spearman correlation and regret of the
/// candidate ranking. Unsupported records are skipped.
pub fn run_model_selection(config: &ExperimentConfig) -> Result<SelectionOutput> {
    let section = config.slate()?;
    let sel = config
        .selection
        .as_ref()
        .ok_or_else(|| BenchError::Config("missing [selection] section".into()))?;
    let k = sel.slate_size;
    if k == 0 || k > section.catalog_size {
        return Err(BenchError::Config(format!(
            "slate size {k} outside 1..={}",
            section.catalog_size
        )));
    }
    let setup = slate_setup(section)?;
    let reward = |x: usize, s| setup.world.mean_reward(x, s);
    let cands = candidates(config, sel)?;
    let truth = cands
        .iter()
        .map(|(_, p)| {
            exact_slate_value(p, section.num_contexts, k, &reward, section.lattice_budget)
        })
        .collect::<flowis::Result<Vec<f64>>>()?;
    let mut options = section.options();
    options.support = SupportMode::Skip;
    let needs_model = sel.estimators.iter().any(|m| m.needs_reward_model());

    let trials: Vec<flowis::Result<Vec<Vec<flowis::Result<f64>>>>> = (0..config.n_trials)
        .into_par_iter()
        .map(|trial| {
            let log = |stream: u64| {
                log_slates(
                    &setup.behavior,
                    "behavior",
                    section.num_contexts,
                    k,
                    config.n_logged,
                    derive_seed(config.seed, &[trial as u64, stream]),
                    &reward,
                    section.reward_noise,
                )
            };
            let data = log(0)?;
            let model = if needs_model {
                Some(fit_reward_model(&log(1)?.records, REWARD_PSEUDO_COUNT))
            } else {
                None
            };
            let model = model.as_ref().map(|m| m as &dyn SlateRewardModel<f64>);
            Ok(sel
                .estimators
                .iter()
                .map(|&method| {
                    cands
                        .iter()
                        .map(|(_, p)| {
                            estimate_slate_value(&data, method, p, &setup.behavior, model, &options)
                                .map(|r| r.estimate)
                        })
                        .collect()
                })
                .collect())
        })
        .collect();

    let mut selection = Table::new(
        "model_selection",
        &[
            "estimator",
            "top1_accuracy",
            "mean_spearman",
            "mean_regret",
            "n_ok",
            "n_failed",
            "candidate_skips",
            "failure",
        ],
    );
    for (i, method) in sel.estimators.iter().enumerate() {
        selection.push(summarize(*method, i, &truth, &trials));
    }

    let mut cand_table = Table::new("candidates", &["candidate", "true_value"]);
    for ((name, _), t) in cands.iter().zip(&truth) {
        cand_table.push(vec![Cell::text(name.clone()), Cell::Real(*t)]);
    }
    Ok(SelectionOutput {
        selection,
        candidates: cand_table,
    })
}

fn summarize(
    method: SlateMethod,
    i: usize,
    truth: &[f64],
    trials: &[flowis::Result<Vec<Vec<flowis::Result<f64>>>>],
) -> Vec<Cell> {
    let mut scores = Vec::new();
    let mut n_failed = 0;
    let mut skips = 0;
    let mut failure = None;
    for trial in trials {
        match trial {
            Ok(est) => {
                let est: Vec<Option<f64>> = est[i]
                    .iter()
                    .map(|e| match e {
                        Ok(v) => Some(*v),
                        Err(err) => {
                            skips += 1;
                            failure.get_or_insert_with(|| err.to_string());
                            None
                        }
                    })
                    .collect();
                match score_selection(truth, &est) {
                    Some(s) => scores.push(s),
                    None => {
                        n_failed += 1;
                        failure
                            .get_or_insert_with(|| "no candidate could be estimated".to_string());
                    }
                }
            }
            Err(e) => {
                n_failed += 1;
                failure.get_or_insert_with(|| e.to_string());
            }
        }
    }
    let n = scores.len();
    let mean = |f: &dyn Fn(&TrialScore) -> Option<f64>| {
        let v: Vec<f64> = scores.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    vec![
        Cell::text(method.name()),
        Cell::real_opt(mean(&|s| Some(if s.top1 { 1.0 } else { 0.0 }))),
        Cell::real_opt(mean(&|s| s.spearman)),
        Cell::real_opt(mean(&|s| Some(s.regret))),
        Cell::count(n),
        Cell::count(n_failed),
        Cell::count(skips),
        failure.map_or(Cell::Missing, Cell::Text),
    ]
}
