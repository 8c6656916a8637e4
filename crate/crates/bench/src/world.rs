//! Synthetic environments and policy construction from config specs.

use flowis::mdp::trajectory_rng;
use flowis::mdp::{
    build_policy, optimal_q, random_mdp, ActionTable, PolicyKind, StochasticPolicy, TabularMdp,
};
use flowis::slate::{
    ContextDependentPl, FixedScorePl, ItemSet, OrderConditionedPolicy, PositionPerturbedPl,
    SetSufficientPolicy, UniformSlatePolicy,
};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{
    MdpPolicyKind, MdpPolicySpec, MdpSection, SlatePolicyKind, SlatePolicySpec, SlateSection,
};
use crate::error::{BenchError, Result};

/// Mixes a base seed with a path of indices (splitmix64 finalizer per step).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for &p in path {
        h = h
            .wrapping_add(p.wrapping_mul(0xBF58_476D_1CE4_E5B9))
            .wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

/// Contexts with per-item qualities in `[0, 1)` and reward
/// `r(x, S) = mean_{i∈S} q_i − λ Σ_{i<j∈S} min(q_i, q_j)` plus `N(0, σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlateWorld {
    pub quality: Vec<Vec<f64>>,
    pub interaction: f64,
    pub noise_std: f64,
}

impl SlateWorld {
    pub fn generate(
        num_contexts: usize,
        catalog_size: usize,
        interaction: f64,
        noise_std: f64,
        seed: u64,
    ) -> Self {
        let quality = (0..num_contexts)
            .map(|x| {
                let mut rng = trajectory_rng(seed, x as u64);
                (0..catalog_size).map(|_| rng.random::<f64>()).collect()
            })
            .collect();
        SlateWorld {
            quality,
            interaction,
            noise_std,
        }
    }

    pub fn from_section(s: &SlateSection) -> Self {
        Self::generate(
            s.num_contexts,
            s.catalog_size,
            s.interaction,
            s.reward_noise,
            s.world_seed,
        )
    }

    pub fn num_contexts(&self) -> usize {
        self.quality.len()
    }

    pub fn catalog_size(&self) -> usize {
        self.quality.first().map_or(0, Vec::len)
    }

    /// Mean reward of showing `slate` in context `x`.
    pub fn mean_reward(&self, x: usize, slate: ItemSet) -> f64 {
        let q: Vec<f64> = slate.iter().map(|i| self.quality[x][i]).collect();
        if q.is_empty() {
            return 0.0;
        }
        let mean = q.iter().sum::<f64>() / q.len() as f64;
        let mut penalty = 0.0;
        for i in 0..q.len() {
            for j in i + 1..q.len() {
                penalty += q[i].min(q[j]);
            }
        }
        mean - self.interaction * penalty
    }
}

/// Set-sufficient slate policies buildable from a config spec.
#[derive(Debug, Clone)]
pub enum SlatePolicy {
    Fixed(FixedScorePl<f64>),
    SetDependent(ContextDependentPl<f64>),
    Uniform(UniformSlatePolicy),
}

impl SetSufficientPolicy<f64> for SlatePolicy {
    fn catalog_size(&self) -> usize {
        match self {
            SlatePolicy::Fixed(p) => SetSufficientPolicy::<f64>::catalog_size(p),
            SlatePolicy::SetDependent(p) => SetSufficientPolicy::<f64>::catalog_size(p),
            SlatePolicy::Uniform(p) => SetSufficientPolicy::<f64>::catalog_size(p),
        }
    }

    fn next_item_dist(&self, context: usize, picked: ItemSet) -> Vec<f64> {
        match self {
            SlatePolicy::Fixed(p) => p.next_item_dist(context, picked),
            SlatePolicy::SetDependent(p) => p.next_item_dist(context, picked),
            SlatePolicy::Uniform(p) => p.next_item_dist(context, picked),
        }
    }

    fn fixed_scores(&self, context: usize) -> Option<Vec<f64>> {
        match self {
            SlatePolicy::Fixed(p) => p.fixed_scores(context),
            SlatePolicy::SetDependent(_) => None,
            SlatePolicy::Uniform(p) => SetSufficientPolicy::<f64>::fixed_scores(p, context),
        }
    }
}

fn slate_logits(quality: &[Vec<f64>], spec: &SlatePolicySpec) -> Result<Vec<Vec<f64>>> {
    if !(spec.temperature > 0.0) || !spec.temperature.is_finite() {
        return Err(BenchError::Config(format!(
            "temperature {} must be positive",
            spec.temperature
        )));
    }
    Ok(quality
        .iter()
        .enumerate()
        .map(|(x, q)| {
            let mut rng = trajectory_rng(spec.seed, x as u64);
            q.iter()
                .map(|&v| {
                    let noise: f64 = rng.sample(StandardNormal);
                    (v + spec.score_noise * noise) / spec.temperature
                })
                .collect()
        })
        .collect())
}

/// Builds a set-sufficient policy scored by the world's item qualities.
pub fn slate_policy(world: &SlateWorld, spec: &SlatePolicySpec) -> Result<SlatePolicy> {
    match spec.kind {
        SlatePolicyKind::Uniform => Ok(SlatePolicy::Uniform(UniformSlatePolicy {
            m: world.catalog_size(),
        })),
        SlatePolicyKind::PlackettLuce => Ok(SlatePolicy::Fixed(FixedScorePl::from_logits(
            slate_logits(&world.quality, spec)?,
            1.0,
        ))),
        SlatePolicyKind::SetDependent => Ok(SlatePolicy::SetDependent(ContextDependentPl::new(
            slate_logits(&world.quality, spec)?,
            spec.interaction,
            spec.seed,
        ))),
        SlatePolicyKind::PositionPerturbed => Err(BenchError::Config(
            "position_perturbed policies are order-conditioned; use them with `diagnose`".into(),
        )),
    }
}

/// Builds any policy spec as an order-conditioned policy.
pub fn order_conditioned_policy(
    world: &SlateWorld,
    spec: &SlatePolicySpec,
) -> Result<Box<dyn OrderConditionedPolicy<f64>>> {
    if spec.kind == SlatePolicyKind::PositionPerturbed {
        let base = FixedScorePl::from_logits(slate_logits(&world.quality, spec)?, 1.0);
        return Ok(Box::new(PositionPerturbedPl::new(
            base,
            spec.epsilon,
            spec.seed,
        )));
    }
    Ok(Box::new(slate_policy(world, spec)?))
}

/// The configured random MDP.
pub fn build_mdp(s: &MdpSection) -> Result<TabularMdp<f64>> {
    Ok(random_mdp(
        s.num_states,
        s.num_actions,
        s.horizon,
        s.reward_noise,
        s.discount,
        s.env_seed,
    )?)
}

fn perturbed_scores(q: &ActionTable<f64>, spec: &MdpPolicySpec) -> ActionTable<f64> {
    let mut out = q.clone();
    if spec.score_noise != 0.0 {
        let mut rng = trajectory_rng(spec.score_seed, 0);
        for v in out.values.iter_mut() {
            let noise: f64 = rng.sample(StandardNormal);
            *v += spec.score_noise * noise;
        }
    }
    out
}

/// A policy over `Q*` of `mdp` as described by `spec`.
pub fn mdp_policy(
    mdp: &TabularMdp<f64>,
    q_star: &ActionTable<f64>,
    spec: &MdpPolicySpec,
) -> Result<StochasticPolicy<f64>> {
    let kind = match spec.kind {
        MdpPolicyKind::Uniform => {
            return Ok(StochasticPolicy::uniform(
                mdp.num_states(),
                mdp.num_actions(),
            ));
        }
        MdpPolicyKind::Softmax => PolicyKind::Softmax {
            temperature: spec.temperature,
        },
        MdpPolicyKind::EpsilonGreedy => PolicyKind::EpsilonGreedy {
            epsilon: spec.epsilon,
        },
    };
    Ok(build_policy(kind, &perturbed_scores(q_star, spec))?)
}

/// The configured MDP with its target and behavior policies.
pub fn mdp_setup(
    s: &MdpSection,
) -> Result<(
    TabularMdp<f64>,
    StochasticPolicy<f64>,
    StochasticPolicy<f64>,
)> {
    let mdp = build_mdp(s)?;
    let q = optimal_q(&mdp);
    let target = mdp_policy(&mdp, &q, &s.target)?;
    let behavior = mdp_policy(&mdp, &q, &s.behavior)?;
    Ok((mdp, target, behavior))
}
