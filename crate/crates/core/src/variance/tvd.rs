//! Set-sufficiency diagnostic: how much a slate policy's next-item law moves
//! when the same picked set is presented in different orders.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tvd;
use crate::error::{OpeError, Result};
use crate::mdp::{sample_categorical, trajectory_rng};
use crate::scalar::Scalar;
use crate::slate::OrderConditionedPolicy;
use crate::stats::{mean, median, quantile};

/// Largest subset whose orderings are enumerated.
pub const MAX_TVD_SUBSET: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    /// `S` uniform among subsets of size `t`.
    Random,
    /// `S` is the first `t` picks of a rollout of the policy whose prefix is
    /// always presented in ascending item order.
    BehaviorInduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvdRow {
    pub size: usize,
    pub median_max: f64,
    pub p90_max: f64,
    pub median_mean: f64,
    pub mean_max: f64,
    pub n_draws: usize,
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn canonical_rollout<T: Scalar, R: Rng>(
    policy: &dyn OrderConditionedPolicy<T>,
    context: usize,
    t: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::with_capacity(t);
    for _ in 0..t {
        let dist = policy.next_item_dist_ordered(context, &picked);
        let item = sample_categorical(rng, &dist);
        let pos = picked.partition_point(|&p| p < item);
        picked.insert(pos, item);
    }
    picked
}

/// `(max, mean)` pairwise TVD of the next-item law across orderings of `set`.
fn draw_stats<T: Scalar>(
    policy: &dyn OrderConditionedPolicy<T>,
    context: usize,
    set: &[usize],
) -> Result<(f64, f64)> {
    let dists: Vec<Vec<T>> = permutations(set)
        .iter()
        .map(|sigma| policy.next_item_dist_ordered(context, sigma))
        .collect();
    let (mut max, mut sum, mut pairs) = (0.0f64, 0.0f64, 0usize);
    for i in 0..dists.len() {
        for j in i + 1..dists.len() {
            let d = tvd(&dists[i], &dists[j])?.as_f64();
            max = max.max(d);
            sum += d;
            pairs += 1;
        }
    }
    Ok((max, if pairs == 0 { 0.0 } else { sum / pairs as f64 }))
}

/// For every size `t`, draws `n_draws` (context, subset) pairs and
/// summarizes the maximum and mean pairwise TVD across orderings.
/// Contexts are uniform over `0..num_contexts`.
pub fn set_sufficiency_tvd<T: Scalar>(
    policy: &dyn OrderConditionedPolicy<T>,
    num_contexts: usize,
    mode: SubsetMode,
    sizes: &[usize],
    n_draws: usize,
    seed: u64,
) -> Result<Vec<TvdRow>> {
    let m = policy.catalog_size();
    if num_contexts == 0 || n_draws == 0 {
        return Err(OpeError::Validation(
            "need at least one context and one draw".into(),
        ));
    }
    sizes
        .iter()
        .map(|&t| {
            if t == 0 || t >= m {
                return Err(OpeError::Validation(format!(
                    "subset size {t} outside 1..{m}"
                )));
            }
            if t > MAX_TVD_SUBSET {
                return Err(OpeError::Refused {
                    what: "ordering enumeration".into(),
                    required: format!("{t}! orderings"),
                    limit: format!("{MAX_TVD_SUBSET}!"),
                });
            }
            let stats = (0..n_draws)
                .into_par_iter()
                .map(|d| {
                    let mut rng = trajectory_rng(seed, ((t as u64) << 32) | d as u64);
                    let context = rng.random_range(0..num_contexts);
                    let set = match mode {
                        SubsetMode::Random => {
                            let mut s = sample(&mut rng, m, t).into_vec();
                            s.sort_unstable();
                            s
                        }
                        SubsetMode::BehaviorInduced => {
                            canonical_rollout(policy, context, t, &mut rng)
                        }
                    };
                    draw_stats(policy, context, &set)
                })
                .collect::<Result<Vec<_>>>()?;
            let (maxes, means): (Vec<f64>, Vec<f64>) = stats.into_iter().unzip();
            Ok(TvdRow {
                size: t,
                median_max: median(&maxes),
                p90_max: quantile(&maxes, 0.9),
                median_mean: median(&means),
                mean_max: mean(&maxes),
                n_draws,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slate::{ContextDependentPl, FixedScorePl, PositionPerturbedPl};

    fn base(m: usize) -> FixedScorePl<f64> {
        let logits = (0..3)
            .map(|c| (0..m).map(|i| ((i * 5 + c) % 7) as f64 * 0.3).collect())
            .collect();
        FixedScorePl::from_logits(logits, 1.0)
    }

    #[test]
    fn permutations_count() {
        assert_eq!(permutations(&[1, 2, 3, 4]).len(), 24);
        assert_eq!(permutations(&[5]).len(), 1);
    }

    #[test]
    fn set_sufficient_policy_is_exactly_zero() {
        let pi = ContextDependentPl::<f64>::random(8, 3, 0.7, 4);
        for mode in [SubsetMode::Random, SubsetMode::BehaviorInduced] {
            for row in set_sufficiency_tvd(&pi, 3, mode, &[1, 2, 3, 4], 20, 9).unwrap() {
                assert_eq!(
                    (row.median_max, row.p90_max, row.median_mean, row.mean_max),
                    (0.0, 0.0, 0.0, 0.0)
                );
            }
        }
    }

    #[test]
    fn single_item_prefix_is_zero() {
        let pi = PositionPerturbedPl::new(base(8), 1.0, 2);
        let rows = set_sufficiency_tvd(&pi, 3, SubsetMode::Random, &[1], 30, 1).unwrap();
        assert_eq!(rows[0].mean_max, 0.0);
    }

    #[test]
    fn tvd_grows_with_perturbation() {
        let small = PositionPerturbedPl::new(base(8), 0.1, 2);
        let large = PositionPerturbedPl::new(base(8), 0.5, 2);
        let a = set_sufficiency_tvd(&small, 3, SubsetMode::Random, &[3], 40, 5).unwrap();
        let b = set_sufficiency_tvd(&large, 3, SubsetMode::Random, &[3], 40, 5).unwrap();
        assert!(a[0].median_max > 0.0);
        assert!(b[0].median_max > a[0].median_max);
        assert!(b[0].p90_max <= 1.0);
    }

    #[test]
    fn oversized_subset_refused() {
        let pi = ContextDependentPl::<f64>::random(10, 1, 0.1, 0);
        assert!(matches!(
            set_sufficiency_tvd(&pi, 1, SubsetMode::Random, &[8], 1, 0),
            Err(OpeError::Refused { .. })
        ));
    }
}
