use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::weights::{guarded_ratio, mpl_from_marginals, slate_location};
use super::{tree_weight, LoggedSlateDataset, SlateClasses, SlateRecord, SlateRewardModel};
use crate::error::{OpeError, Result};
use crate::scalar::Scalar;
use crate::slate::{
    forward_dp, full_lattice_flows, DpOptions, ItemSet, LatticeFlows, SetSufficientPolicy,
    DEFAULT_LATTICE_BUDGET,
};
use crate::stats::WeightStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlateMethod {
    TreeOis,
    TreeWis,
    FfOis,
    FfWis,
    TreeDr,
    FfDr,
    Dm,
    MplOis,
    MplWis,
    OpcbOis,
    OpcbWis,
    OpcbDr,
}

impl SlateMethod {
    pub const ALL: [SlateMethod; 12] = [
        SlateMethod::TreeOis,
        SlateMethod::TreeWis,
        SlateMethod::FfOis,
        SlateMethod::FfWis,
        SlateMethod::TreeDr,
        SlateMethod::FfDr,
        SlateMethod::Dm,
        SlateMethod::MplOis,
        SlateMethod::MplWis,
        SlateMethod::OpcbOis,
        SlateMethod::OpcbWis,
        SlateMethod::OpcbDr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SlateMethod::TreeOis => "tree_ois",
            SlateMethod::TreeWis => "tree_wis",
            SlateMethod::FfOis => "ff_ois",
            SlateMethod::FfWis => "ff_wis",
            SlateMethod::TreeDr => "tree_dr",
            SlateMethod::FfDr => "ff_dr",
            SlateMethod::Dm => "dm",
            SlateMethod::MplOis => "mpl_ois",
            SlateMethod::MplWis => "mpl_wis",
            SlateMethod::OpcbOis => "opcb_ois",
            SlateMethod::OpcbWis => "opcb_wis",
            SlateMethod::OpcbDr => "opcb_dr",
        }
    }

    pub fn needs_reward_model(self) -> bool {
        matches!(
            self,
            SlateMethod::TreeDr | SlateMethod::FfDr | SlateMethod::Dm | SlateMethod::OpcbDr
        )
    }

    fn weighting(self) -> Weighting {
        match self {
            SlateMethod::TreeOis | SlateMethod::TreeWis | SlateMethod::TreeDr => Weighting::Tree,
            SlateMethod::FfOis | SlateMethod::FfWis | SlateMethod::FfDr => Weighting::Ff,
            SlateMethod::Dm => Weighting::None,
            SlateMethod::MplOis | SlateMethod::MplWis => Weighting::Mpl,
            SlateMethod::OpcbOis | SlateMethod::OpcbWis | SlateMethod::OpcbDr => Weighting::Opcb,
        }
    }

    fn combine(self) -> Combine {
        match self {
            SlateMethod::TreeOis
            | SlateMethod::FfOis
            | SlateMethod::MplOis
            | SlateMethod::OpcbOis => Combine::Ois,
            SlateMethod::TreeWis
            | SlateMethod::FfWis
            | SlateMethod::MplWis
            | SlateMethod::OpcbWis => Combine::Wis,
            SlateMethod::TreeDr | SlateMethod::FfDr | SlateMethod::OpcbDr => Combine::Dr,
            SlateMethod::Dm => Combine::Dm,
        }
    }
}

impl std::fmt::Display for SlateMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SlateMethod {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Self> {
        SlateMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| OpeError::Config(format!("unknown slate estimator {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Weighting {
    Tree,
    Ff,
    Mpl,
    Opcb,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Combine {
    Ois,
    Wis,
    Dr,
    Dm,
}

/// What to do with a record whose logged slate the behavior policy cannot produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportMode {
    /// Fail with the support violation.
    #[default]
    Strict,
    /// Drop the record and count it.
    Skip,
}

#[derive(Debug, Clone)]
pub struct SlateOptions {
    pub support: SupportMode,
    /// Cap on `C(M, K)` for DM, MPL and OPCB lattices.
    pub lattice_budget: u64,
    pub classes: Option<SlateClasses>,
    pub dp: DpOptions,
}

impl Default for SlateOptions {
    fn default() -> Self {
        SlateOptions {
            support: SupportMode::Strict,
            lattice_budget: DEFAULT_LATTICE_BUDGET,
            classes: None,
            dp: DpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub method: SlateMethod,
    pub estimate: f64,
    pub ess: f64,
    pub min_weight: f64,
    pub max_weight: f64,
    pub mean_weight: f64,
    pub n_used: usize,
    /// Records dropped for lack of behavior support (or zero mass under both policies).
    pub n_skipped_support: usize,
}

impl EstimatorReport {
    pub fn to_record(&self) -> Vec<(&'static str, String)> {
        vec![
            ("method", self.method.to_string()),
            ("estimate", format!("{:e}", self.estimate)),
            ("ess", format!("{:e}", self.ess)),
            ("min_weight", format!("{:e}", self.min_weight)),
            ("max_weight", format!("{:e}", self.max_weight)),
            ("mean_weight", format!("{:e}", self.mean_weight)),
            ("n_used", self.n_used.to_string()),
            ("n_skipped_support", self.n_skipped_support.to_string()),
        ]
    }
}

/// Per-context lattice summaries shared by the records of that context.
struct ContextCache<T> {
    dm: Option<T>,
    pi_marginals: Vec<T>,
    beta_marginals: Vec<T>,
    pi_classes: Vec<T>,
    beta_classes: Vec<T>,
}

fn unique<K: Copy + Ord>(keys: impl Iterator<Item = K>) -> Vec<K> {
    let mut v: Vec<K> = keys.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Direct-method value `Σ_S F_π(S) q̂(x, S)` from a target lattice.
fn dm_value<T: Scalar>(
    lattice: &LatticeFlows<T>,
    context: usize,
    model: &dyn SlateRewardModel<T>,
) -> T {
    lattice
        .slates()
        .map(|(s, f)| f * model.predict(context, s))
        .sum()
}

/// Slate-level OPE estimate.
///
/// IS methods average `w·R` (or self-normalize by `Σ w`); DR methods average
/// `DM(x) + w·(R − q̂(x, S))` where `DM(x) = Σ_S F_π(S) q̂(x, S)` over every
/// size-`K` slate; `dm` averages `DM(x)` alone.
pub fn estimate_slate_value<T, P, Q>(
    dataset: &LoggedSlateDataset<T>,
    method: SlateMethod,
    target: &P,
    behavior: &Q,
    reward_model: Option<&dyn SlateRewardModel<T>>,
    options: &SlateOptions,
) -> Result<EstimatorReport>
where
    T: Scalar,
    P: SetSufficientPolicy<T> + ?Sized,
    Q: SetSufficientPolicy<T> + ?Sized,
{
    if method.needs_reward_model() && reward_model.is_none() {
        return Err(OpeError::Config(format!("{method} needs a reward model")));
    }
    let weighting = method.weighting();
    let classes = match weighting {
        Weighting::Opcb => Some(
            options
                .classes
                .as_ref()
                .ok_or_else(|| OpeError::Config(format!("{method} needs a class function")))?,
        ),
        _ => None,
    };
    for (name, p) in [
        ("target", target.catalog_size()),
        ("behavior", behavior.catalog_size()),
    ] {
        if p != dataset.catalog_size {
            return Err(OpeError::Config(format!(
                "{name} policy has {p} items, dataset catalog has {}",
                dataset.catalog_size
            )));
        }
    }
    let k = dataset.slate_size;
    let records = &dataset.records;

    // Forward-DP propensities, one per distinct (context, slate).
    let ff_cache: HashMap<(usize, ItemSet), (T, T)> = if weighting == Weighting::Ff {
        let keys = unique(records.iter().map(|r| (r.context, r.slate())));
        let vals = keys
            .par_iter()
            .map(|&(x, s)| {
                let items = s.to_vec();
                Ok((
                    forward_dp(target, x, &items, options.dp)?.propensity,
                    forward_dp(behavior, x, &items, options.dp)?.propensity,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        keys.into_iter().zip(vals).collect()
    } else {
        HashMap::new()
    };

    // Lattice summaries, one per distinct context.
    let needs_dm = matches!(method.combine(), Combine::Dr | Combine::Dm);
    let needs_beta_lattice = matches!(weighting, Weighting::Mpl | Weighting::Opcb);
    let ctx_cache: HashMap<usize, ContextCache<T>> = if needs_dm || needs_beta_lattice {
        let contexts = unique(records.iter().map(|r| r.context));
        let vals = contexts
            .par_iter()
            .map(|&x| {
                let lp = full_lattice_flows(target, x, k, options.lattice_budget)?;
                let dm = reward_model
                    .filter(|_| needs_dm)
                    .map(|m| dm_value(&lp, x, m));
                let mut c = ContextCache {
                    dm,
                    pi_marginals: Vec::new(),
                    beta_marginals: Vec::new(),
                    pi_classes: Vec::new(),
                    beta_classes: Vec::new(),
                };
                if needs_beta_lattice {
                    let lb = full_lattice_flows(behavior, x, k, options.lattice_budget)?;
                    if let Some(cls) = classes {
                        c.pi_classes = cls.masses(x, &lp)?;
                        c.beta_classes = cls.masses(x, &lb)?;
                    } else {
                        c.pi_marginals = lp.inclusion_marginals;
                        c.beta_marginals = lb.inclusion_marginals;
                    }
                }
                Ok(c)
            })
            .collect::<Result<Vec<_>>>()?;
        contexts.into_iter().zip(vals).collect()
    } else {
        HashMap::new()
    };

    let weight_of = |r: &SlateRecord<T>| -> Result<Option<T>> {
        match weighting {
            Weighting::None => Ok(Some(T::one())),
            Weighting::Tree => tree_weight(r, target, behavior).map(Some),
            Weighting::Ff => {
                let (p, b) = ff_cache[&(r.context, r.slate())];
                guarded_ratio(p, b, || slate_location(r))
            }
            Weighting::Mpl => {
                let c = &ctx_cache[&r.context];
                mpl_from_marginals(r, &c.pi_marginals, &c.beta_marginals)
            }
            Weighting::Opcb => {
                let c = &ctx_cache[&r.context];
                let cls = classes.expect("checked").class_of(r.context, r.slate());
                guarded_ratio(c.pi_classes[cls], c.beta_classes[cls], || {
                    format!("context {}, class {cls}", r.context)
                })
            }
        }
    };
    let outcomes: Vec<Result<Option<T>>> = records.par_iter().map(weight_of).collect();

    let mut used: Vec<(T, &SlateRecord<T>)> = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for (r, outcome) in records.iter().zip(outcomes) {
        match outcome {
            Ok(Some(w)) => used.push((w, r)),
            Ok(None) => skipped += 1,
            Err(e) if e.is_support_violation() && options.support == SupportMode::Skip => {
                skipped += 1
            }
            Err(e) => return Err(e),
        }
    }
    let weights: Vec<T> = used.iter().map(|(w, _)| *w).collect();
    let estimate = if used.is_empty() {
        f64::NAN
    } else {
        let n = T::count(used.len());
        match method.combine() {
            Combine::Ois => used.iter().map(|(w, r)| *w * r.reward).sum::<T>() / n,
            Combine::Wis => {
                let den: T = weights.iter().copied().sum();
                if den > T::zero() {
                    used.iter().map(|(w, r)| *w * r.reward).sum::<T>() / den
                } else {
                    T::zero()
                }
            }
            Combine::Dm => {
                used.iter()
                    .map(|(_, r)| ctx_cache[&r.context].dm.expect("dm"))
                    .sum::<T>()
                    / n
            }
            Combine::Dr => {
                let model = reward_model.expect("checked");
                used.iter()
                    .map(|(w, r)| {
                        let dm = ctx_cache[&r.context].dm.expect("dm");
                        dm + *w * (r.reward - model.predict(r.context, r.slate()))
                    })
                    .sum::<T>()
                    / n
            }
        }
        .as_f64()
    };
    let stats = WeightStats::from_weights(&weights);
    Ok(EstimatorReport {
        method,
        estimate,
        ess: stats.ess,
        min_weight: stats.min,
        max_weight: stats.max,
        mean_weight: stats.mean,
        n_used: used.len(),
        n_skipped_support: skipped,
    })
}

/// `V(π) = (1/|X|) Σ_x Σ_{|S|=K} F_π^x(S) r(x, S)` with contexts uniform on `0..num_contexts`.
pub fn exact_slate_value<T, P, F>(
    policy: &P,
    num_contexts: usize,
    k: usize,
    mean_reward: &F,
    budget: u64,
) -> Result<T>
where
    T: Scalar,
    P: SetSufficientPolicy<T> + ?Sized,
    F: Fn(usize, ItemSet) -> T + Sync + ?Sized,
{
    let per_context = (0..num_contexts)
        .into_par_iter()
        .map(|x| {
            let lattice = full_lattice_flows(policy, x, k, budget)?;
            Ok(lattice
                .slates()
                .map(|(s, f)| f * mean_reward(x, s))
                .sum::<T>())
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(per_context.into_iter().sum::<T>() / T::count(num_contexts))
}
