//! Ordering-nuisance gap: the variance removed by weighting a slate with its
//! unordered set ratio `W = π(S|x)/β(S|x)` instead of the ordered ratio.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{chi_square_divergence, ClassTerm, GapReport, MAX_ATOMS};
use crate::error::{OpeError, Result};
use crate::scalar::Scalar;
use crate::slate::{binomial, slate_rank, ItemSet, OrderConditionedPolicy};

/// Largest slate size whose `K!` orderings are enumerated.
pub const MAX_ORDERING_SLATE: usize = 6;

/// `(E[R | x, σ], E[R² | x, σ])` for an ordering `σ` shown in context `x`.
pub type RewardMoments<T> = Arc<dyn Fn(usize, &[usize]) -> (T, T) + Send + Sync>;

/// Contexts with known probabilities, a slate size, and reward moments.
#[derive(Clone)]
pub struct EnumerableSlateWorld<T> {
    pub context_probs: Vec<T>,
    pub slate_size: usize,
    pub reward_moments: RewardMoments<T>,
}

impl<T: Scalar> EnumerableSlateWorld<T> {
    pub fn new(context_probs: Vec<T>, slate_size: usize, reward_moments: RewardMoments<T>) -> Self {
        EnumerableSlateWorld {
            context_probs,
            slate_size,
            reward_moments,
        }
    }

    /// Uniform contexts with reward `mean(x, S) + N(0, noise_var)`.
    pub fn with_set_reward<F>(num_contexts: usize, slate_size: usize, noise_var: T, mean: F) -> Self
    where
        F: Fn(usize, ItemSet) -> T + Send + Sync + 'static,
    {
        let p = T::one() / T::count(num_contexts);
        EnumerableSlateWorld {
            context_probs: vec![p; num_contexts],
            slate_size,
            reward_moments: Arc::new(move |x, sigma| {
                let m = mean(x, ItemSet::from_items(sigma));
                (m, m * m + noise_var)
            }),
        }
    }
}

struct Ordering<T> {
    p_target: T,
    p_behavior: T,
}

struct SetClass<T> {
    moments: (T, T),
    orderings: Vec<Ordering<T>>,
}

fn enumerate_context<T: Scalar>(
    context: usize,
    k: usize,
    target: &dyn OrderConditionedPolicy<T>,
    behavior: &dyn OrderConditionedPolicy<T>,
    moments: &RewardMoments<T>,
) -> Result<BTreeMap<usize, SetClass<T>>> {
    let mut classes: BTreeMap<usize, SetClass<T>> = BTreeMap::new();
    let mut stack: Vec<(Vec<usize>, T, T)> = vec![(Vec::new(), T::one(), T::one())];
    while let Some((prefix, pt, pb)) = stack.pop() {
        if prefix.len() == k {
            if pb == T::zero() && pt > T::zero() {
                return Err(OpeError::support(
                    format!("context {context}, ordering {prefix:?}"),
                    pt.as_f64(),
                    0.0,
                ));
            }
            let set = ItemSet::from_items(&prefix);
            let m = moments(context, &prefix);
            let entry = classes.entry(slate_rank(set)).or_insert_with(|| SetClass {
                moments: m,
                orderings: Vec::new(),
            });
            let tol = T::lit(1e-12) * (T::one() + entry.moments.1.abs());
            if (entry.moments.0 - m.0).abs() > tol || (entry.moments.1 - m.1).abs() > tol {
                return Err(OpeError::Validation(format!(
                    "reward depends on the order of slate {:?} in context {context}",
                    set.to_vec()
                )));
            }
            entry.orderings.push(Ordering {
                p_target: pt,
                p_behavior: pb,
            });
            continue;
        }
        let dt = target.next_item_dist_ordered(context, &prefix);
        let db = behavior.next_item_dist_ordered(context, &prefix);
        for item in 0..dt.len() {
            let (nt, nb) = (pt * dt[item], pb * db[item]);
            if nt == T::zero() && nb == T::zero() {
                continue;
            }
            let mut next = prefix.clone();
            next.push(item);
            stack.push((next, nt, nb));
        }
    }
    Ok(classes)
}

/// Analytic `E_{x,S∼β}[E[R²|x,S] W² χ²(π(σ|x,S) ‖ β(σ|x,S))]` alongside the
/// enumerated variances of the ordered and unordered IS summands.
///
/// In the per-class terms, class ids are `x · C(M,K) + rank(S)`, `f_beta` is
/// `p(x) β(S|x)` and `g` is `√E[R²|x,S]`.
pub fn ordering_nuisance_gap<T: Scalar>(
    world: &EnumerableSlateWorld<T>,
    target: &dyn OrderConditionedPolicy<T>,
    behavior: &dyn OrderConditionedPolicy<T>,
) -> Result<GapReport<T>> {
    let k = world.slate_size;
    let m = behavior.catalog_size();
    if target.catalog_size() != m {
        return Err(OpeError::Validation(format!(
            "catalog sizes differ: target {}, behavior {m}",
            target.catalog_size()
        )));
    }
    if k == 0 || k > m {
        return Err(OpeError::Validation(format!(
            "slate size {k} outside 1..={m}"
        )));
    }
    if k > MAX_ORDERING_SLATE {
        return Err(OpeError::Refused {
            what: "ordering enumeration".into(),
            required: format!("K = {k}"),
            limit: format!("K <= {MAX_ORDERING_SLATE}"),
        });
    }
    let per_context: f64 = (m - k + 1..=m).map(|v| v as f64).product();
    let atoms = per_context * world.context_probs.len() as f64;
    if atoms > MAX_ATOMS as f64 {
        return Err(OpeError::Refused {
            what: "ordering enumeration".into(),
            required: format!("{atoms} orderings"),
            limit: MAX_ATOMS.to_string(),
        });
    }
    let n_slates = binomial(m, k) as usize;

    let mut per_class_terms = Vec::new();
    let (mut tree_m1, mut tree_m2) = (T::zero(), T::zero());
    let (mut ff_m1, mut ff_m2) = (T::zero(), T::zero());
    for (x, &px) in world.context_probs.iter().enumerate() {
        if px == T::zero() {
            continue;
        }
        let classes = enumerate_context(x, k, target, behavior, &world.reward_moments)?;
        for (rank, class) in classes {
            let (mean, second) = class.moments;
            let set_t: T = class.orderings.iter().map(|o| o.p_target).sum();
            let set_b: T = class.orderings.iter().map(|o| o.p_behavior).sum();
            for o in &class.orderings {
                if o.p_behavior > T::zero() {
                    let rho = o.p_target / o.p_behavior;
                    tree_m1 = tree_m1 + px * o.p_behavior * rho * mean;
                    tree_m2 = tree_m2 + px * o.p_behavior * rho * rho * second;
                }
            }
            if set_b == T::zero() {
                continue;
            }
            let w = set_t / set_b;
            ff_m1 = ff_m1 + px * set_b * w * mean;
            ff_m2 = ff_m2 + px * set_b * w * w * second;

            let chi2 = if set_t > T::zero() {
                let p: Vec<T> = class.orderings.iter().map(|o| o.p_target / set_t).collect();
                let q: Vec<T> = class
                    .orderings
                    .iter()
                    .map(|o| o.p_behavior / set_b)
                    .collect();
                chi_square_divergence(&p, &q)?
            } else {
                T::zero()
            };
            let f_beta = px * set_b;
            per_class_terms.push(ClassTerm {
                class: x * n_slates + rank,
                f_beta,
                g: second.max(T::zero()).sqrt(),
                w,
                chi2,
                contribution: f_beta * second * w * w * chi2,
            });
        }
    }
    let analytic_gap: T = per_class_terms.iter().map(|t| t.contribution).sum();
    let var_traj = tree_m2 - tree_m1 * tree_m1;
    let var_ff = ff_m2 - ff_m1 * ff_m1;
    Ok(GapReport {
        analytic_gap,
        exhaustive_var_traj: var_traj,
        exhaustive_var_ff: var_ff,
        exhaustive_gap: var_traj - var_ff,
        empirical_var_traj: 0.0,
        empirical_var_ff: 0.0,
        empirical_gap: 0.0,
        n_samples: 0,
        per_class_terms,
    })
}
