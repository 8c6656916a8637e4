//! Off-policy evaluation of slate policies from logged `(x, σ, R)` records.
//!
//! Weights come in two flavors: the ordered tree weight along the logged
//! generation order, and the unordered forward-flow weight `F_π(S)/F_β(S)`
//! computed by Forward-DP. MPL and OPCB weights marginalize further using
//! full-lattice flows.

mod estimators;
mod reward;
mod weights;

pub use estimators::{
    estimate_slate_value, exact_slate_value, EstimatorReport, SlateMethod, SlateOptions,
    SupportMode,
};
pub use reward::{
    fit_reward_model, FnRewardModel, Provenance, SlateRewardModel, TabularRewardModel,
};
pub use weights::{dp_mpl_weight, dp_opcb_weight, ff_weight, tree_weight, SlateClasses};

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::mdp::{sample_categorical, trajectory_rng};
use crate::scalar::Scalar;
use crate::slate::{check_slate, ItemSet, OrderConditionedPolicy};

/// One logged slate: context, generation order `σ`, reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SlateRecord<T> {
    pub context: usize,
    pub ordering: Vec<usize>,
    pub reward: T,
}

impl<T: Scalar> SlateRecord<T> {
    /// The unordered slate `S = set(σ)`.
    pub fn slate(&self) -> ItemSet {
        ItemSet::from_items(&self.ordering)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LoggedSlateDataset<T> {
    pub catalog_size: usize,
    pub slate_size: usize,
    pub behavior_id: String,
    pub records: Vec<SlateRecord<T>>,
}

impl<T: Scalar> LoggedSlateDataset<T> {
    /// Validates that every ordering has `slate_size` distinct in-catalog items.
    pub fn new(
        catalog_size: usize,
        slate_size: usize,
        behavior_id: impl Into<String>,
        records: Vec<SlateRecord<T>>,
    ) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.ordering.len() != slate_size {
                return Err(OpeError::Validation(format!(
                    "record {i}: ordering has {} items, expected {slate_size}",
                    r.ordering.len()
                )));
            }
            check_slate(&r.ordering, catalog_size)
                .map_err(|e| OpeError::Validation(format!("record {i}: {e}")))?;
            if !r.reward.is_finite() {
                return Err(OpeError::Validation(format!(
                    "record {i}: non-finite reward"
                )));
            }
        }
        Ok(LoggedSlateDataset {
            catalog_size,
            slate_size,
            behavior_id: behavior_id.into(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records `range` as a dataset with the same metadata.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        LoggedSlateDataset {
            records: self.records[range].to_vec(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        LoggedSlateDataset {
            catalog_size: self.catalog_size,
            slate_size: self.slate_size,
            behavior_id: self.behavior_id.clone(),
            records: Vec::new(),
        }
    }
}

/// One generation order of `k` items from `policy` in `context`.
pub fn sample_ordering<T, P, R>(policy: &P, context: usize, k: usize, rng: &mut R) -> Vec<usize>
where
    T: Scalar,
    P: OrderConditionedPolicy<T> + ?Sized,
    R: Rng,
{
    let mut prefix = Vec::with_capacity(k);
    for _ in 0..k {
        let dist = policy.next_item_dist_ordered(context, &prefix);
        prefix.push(sample_categorical(rng, &dist));
    }
    prefix
}

/// `n` records logged by `policy`: context uniform on `0..num_contexts`,
/// reward `mean_reward(x, S)` plus Gaussian noise. Record `i` uses stream `i`
/// of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn log_slates<T, P, F>(
    policy: &P,
    behavior_id: &str,
    num_contexts: usize,
    k: usize,
    n: usize,
    seed: u64,
    mean_reward: &F,
    noise_std: T,
) -> Result<LoggedSlateDataset<T>>
where
    T: Scalar,
    P: OrderConditionedPolicy<T> + ?Sized,
    F: Fn(usize, ItemSet) -> T + Sync + ?Sized,
{
    if num_contexts == 0 || k == 0 || k > policy.catalog_size() {
        return Err(OpeError::Config(format!(
            "cannot log size-{k} slates from {} items over {num_contexts} contexts",
            policy.catalog_size()
        )));
    }
    let records = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(seed, i as u64);
            let context = rng.random_range(0..num_contexts);
            let ordering = sample_ordering(policy, context, k, &mut rng);
            let noise: f64 = rng.sample(StandardNormal);
            let reward =
                mean_reward(context, ItemSet::from_items(&ordering)) + noise_std * T::lit(noise);
            SlateRecord {
                context,
                ordering,
                reward,
            }
        })
        .collect();
    LoggedSlateDataset::new(policy.catalog_size(), k, behavior_id, records)
}

/// One JSON object per line: `{"context":3,"ordering":[4,1,7],"reward":0.25}`.
pub fn write_slate_records<T: Scalar, W: Write>(
    mut out: W,
    records: &[SlateRecord<T>],
) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| OpeError::Validation(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| OpeError::Io {
            path: "<slate writer>".into(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}

pub fn read_slate_records<T: Scalar, R: BufRead>(input: R) -> Result<Vec<SlateRecord<T>>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| OpeError::Io {
            path: "<slate reader>".into(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| OpeError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
