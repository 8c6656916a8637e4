//! Tabular finite-horizon MDPs, stochastic policies, trajectories, and the
//! exact policy value used as ground truth.
//!
//! Layers are 0-based: `t` runs over `0..horizon`, and discounting multiplies
//! the reward at layer `t` by `γ^t`.

mod enumerate;
mod io;
mod sample;

pub use enumerate::{enumerate_prefixes, enumerate_trajectories, Path, MAX_ENUMERATED_PATHS};
pub use io::{read_trajectories, write_trajectories};
pub use sample::{sample_categorical, sample_trajectories, trajectory_rng};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::scalar::Scalar;

/// Finite-horizon MDP with Gaussian rewards around `reward_mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp<T> {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// Indexed `(state, action, next_state)`.
    transition: Vec<T>,
    /// Indexed `(state, action)`.
    reward_mean: Vec<T>,
    reward_noise_std: T,
    initial_dist: Vec<T>,
    discount: T,
}

impl<T: Scalar> TabularMdp<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transition: Vec<T>,
        reward_mean: Vec<T>,
        reward_noise_std: T,
        initial_dist: Vec<T>,
        discount: T,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(OpeError::Config(
                "MDP needs at least one state and one action".into(),
            ));
        }
        if horizon == 0 {
            return Err(OpeError::Config("horizon must be at least 1".into()));
        }
        let sa = num_states * num_actions;
        if transition.len() != sa * num_states {
            return Err(OpeError::Config(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                sa * num_states
            )));
        }
        if reward_mean.len() != sa {
            return Err(OpeError::Config(format!(
                "reward_mean has {} entries, expected {sa}",
                reward_mean.len()
            )));
        }
        if initial_dist.len() != num_states {
            return Err(OpeError::Config(format!(
                "initial_dist has {} entries, expected {num_states}",
                initial_dist.len()
            )));
        }
        if !(discount > T::zero() && discount <= T::one()) {
            return Err(OpeError::Validation(format!(
                "discount {discount} outside (0, 1]"
            )));
        }
        if !(reward_noise_std >= T::zero()) || !reward_noise_std.is_finite() {
            return Err(OpeError::Validation(format!(
                "reward_noise_std {reward_noise_std} must be finite and non-negative"
            )));
        }
        if reward_mean.iter().any(|r| !r.is_finite()) {
            return Err(OpeError::Validation("non-finite reward mean".into()));
        }
        for (row_idx, row) in transition.chunks(num_states).enumerate() {
            check_distribution(row).map_err(|msg| {
                OpeError::Validation(format!(
                    "transition row (state {}, action {}): {msg}",
                    row_idx / num_actions,
                    row_idx % num_actions
                ))
            })?;
        }
        check_distribution(&initial_dist)
            .map_err(|msg| OpeError::Validation(format!("initial_dist: {msg}")))?;
        Ok(TabularMdp {
            num_states,
            num_actions,
            horizon,
            transition,
            reward_mean,
            reward_noise_std,
            initial_dist,
            discount,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn discount(&self) -> T {
        self.discount
    }

    pub fn reward_noise_std(&self) -> T {
        self.reward_noise_std
    }

    pub fn initial_dist(&self) -> &[T] {
        &self.initial_dist
    }

    /// `P(· | state, action)`.
    pub fn transition_row(&self, state: usize, action: usize) -> &[T] {
        let start = (state * self.num_actions + action) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    pub fn reward_mean(&self, state: usize, action: usize) -> T {
        self.reward_mean[state * self.num_actions + action]
    }

    /// Copy with every tensor relabelled by `perm`: old state `s` becomes `perm[s]`.
    pub fn permute_states(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_states;
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(OpeError::Config(
                "state permutation is not a bijection".into(),
            ));
        }
        let a = self.num_actions;
        let mut transition = vec![T::zero(); self.transition.len()];
        let mut reward_mean = vec![T::zero(); self.reward_mean.len()];
        let mut initial_dist = vec![T::zero(); n];
        for s in 0..n {
            initial_dist[perm[s]] = self.initial_dist[s];
            for act in 0..a {
                reward_mean[perm[s] * a + act] = self.reward_mean(s, act);
                for (s2, &p) in self.transition_row(s, act).iter().enumerate() {
                    transition[(perm[s] * a + act) * n + perm[s2]] = p;
                }
            }
        }
        TabularMdp::new(
            n,
            a,
            self.horizon,
            transition,
            reward_mean,
            self.reward_noise_std,
            initial_dist,
            self.discount,
        )
    }
}

/// Returns a message when `row` is not a probability vector.
pub(crate) fn check_distribution<T: Scalar>(row: &[T]) -> std::result::Result<(), String> {
    let mut total = T::zero();
    for &p in row {
        if !p.is_finite() || p < T::zero() {
            return Err(format!(
                "entry {p} is not a finite non-negative probability"
            ));
        }
        total = total + p;
    }
    if (total - T::one()).abs() > T::norm_tol() {
        return Err(format!("sums to {total}, expected 1"));
    }
    Ok(())
}

/// A real-valued table over `(state, action)`, optionally one per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionTable<T> {
    pub num_states: usize,
    pub num_actions: usize,
    /// `Some(h)` for per-layer tables of `h` layers.
    pub layers: Option<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> ActionTable<T> {
    pub fn stationary(num_states: usize, num_actions: usize, values: Vec<T>) -> Self {
        ActionTable {
            num_states,
            num_actions,
            layers: None,
            values,
        }
    }

    fn rows(&self) -> usize {
        self.layers.unwrap_or(1) * self.num_states
    }

    fn check_shape(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 || self.layers == Some(0) {
            return Err(OpeError::Config("empty action table".into()));
        }
        if self.values.len() != self.rows() * self.num_actions {
            return Err(OpeError::Config(format!(
                "action table has {} entries, expected {}",
                self.values.len(),
                self.rows() * self.num_actions
            )));
        }
        Ok(())
    }
}

/// Policy family built from an action-value table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind<T> {
    /// `softmax(q / temperature)`.
    Softmax {
        temperature: T,
    },
    /// Greedy action (lowest index on ties) gets `1 - ε + ε/|A|`, others `ε/|A|`.
    EpsilonGreedy {
        epsilon: T,
    },
    Uniform,
}

/// Stochastic policy `π(a | s)` or, when layered, `π_t(a | s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy<T> {
    num_states: usize,
    num_actions: usize,
    layers: Option<usize>,
    probs: Vec<T>,
}

impl<T: Scalar> StochasticPolicy<T> {
    /// Validates rows; `layers = Some(h)` stores `h` stacked `(state, action)` tables.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        layers: Option<usize>,
        probs: Vec<T>,
    ) -> Result<Self> {
        let table = ActionTable {
            num_states,
            num_actions,
            layers,
            values: probs,
        };
        table.check_shape()?;
        for (row_idx, row) in table.values.chunks(num_actions).enumerate() {
            check_distribution(row)
                .map_err(|msg| OpeError::Validation(format!("policy row {row_idx}: {msg}")))?;
        }
        Ok(StochasticPolicy {
            num_states,
            num_actions,
            layers,
            probs: table.values,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = T::one() / T::count(num_actions);
        StochasticPolicy {
            num_states,
            num_actions,
            layers: None,
            probs: vec![p; num_states * num_actions],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn layers(&self) -> Option<usize> {
        self.layers
    }

    /// Action distribution at `(time, state)`; stationary policies ignore `time`.
    pub fn row(&self, time: usize, state: usize) -> &[T] {
        let r = match self.layers {
            None => state,
            Some(h) => time.min(h - 1) * self.num_states + state,
        };
        &self.probs[r * self.num_actions..(r + 1) * self.num_actions]
    }

    pub fn prob(&self, time: usize, state: usize, action: usize) -> T {
        self.row(time, state)[action]
    }

    /// Errors unless this policy can act in `mdp` at every layer.
    pub fn check_compatible(&self, mdp: &TabularMdp<T>) -> Result<()> {
        if self.num_states != mdp.num_states() || self.num_actions != mdp.num_actions() {
            return Err(OpeError::Config(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.num_states,
                self.num_actions,
                mdp.num_states(),
                mdp.num_actions()
            )));
        }
        if let Some(h) = self.layers {
            if h < mdp.horizon() {
                return Err(OpeError::Config(format!(
                    "policy has {h} layers, MDP horizon is {}",
                    mdp.horizon()
                )));
            }
        }
        Ok(())
    }
}

/// Builds a policy of the given family from `table`.
pub fn build_policy<T: Scalar>(
    kind: PolicyKind<T>,
    table: &ActionTable<T>,
) -> Result<StochasticPolicy<T>> {
    table.check_shape()?;
    if table.values.iter().any(|v| !v.is_finite()) {
        return Err(OpeError::Validation("non-finite action-table entry".into()));
    }
    let n_actions = table.num_actions;
    let mut probs = Vec::with_capacity(table.values.len());
    match kind {
        PolicyKind::Uniform => {
            probs.resize(table.values.len(), T::one() / T::count(n_actions));
        }
        PolicyKind::Softmax { temperature } => {
            if !(temperature > T::zero()) || !temperature.is_finite() {
                return Err(OpeError::Validation(format!(
                    "softmax temperature {temperature} must be positive"
                )));
            }
            for row in table.values.chunks(n_actions) {
                probs.extend(softmax(row, temperature));
            }
        }
        PolicyKind::EpsilonGreedy { epsilon } => {
            if !(epsilon >= T::zero() && epsilon <= T::one()) {
                return Err(OpeError::Validation(format!(
                    "epsilon {epsilon} outside [0, 1]"
                )));
            }
            let explore = epsilon / T::count(n_actions);
            for row in table.values.chunks(n_actions) {
                let greedy = argmax(row);
                probs.extend((0..n_actions).map(|a| {
                    if a == greedy {
                        T::one() - epsilon + explore
                    } else {
                        explore
                    }
                }));
            }
        }
    }
    StochasticPolicy::new(table.num_states, n_actions, table.layers, probs)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable `softmax(row / temperature)`.
pub fn softmax<T: Scalar>(row: &[T], temperature: T) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row
        .iter()
        .map(|&v| ((v - max) / temperature).exp())
        .collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Per-decision likelihood ratio `π(a|s) / β(a|s)` at layer `time`.
pub fn step_ratio<T: Scalar>(
    target: &StochasticPolicy<T>,
    behavior: &StochasticPolicy<T>,
    time: usize,
    state: usize,
    action: usize,
) -> Result<T> {
    let b = behavior.prob(time, state, action);
    let p = target.prob(time, state, action);
    if b <= T::zero() {
        return Err(OpeError::support(
            format!("layer {time}, state {state}, action {action}"),
            p.as_f64(),
            b.as_f64(),
        ));
    }
    Ok(p / b)
}

/// Distribution of `s_t` for every layer, propagated forward from `d0`.
pub fn state_marginals<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &StochasticPolicy<T>,
) -> Result<Vec<Vec<T>>> {
    policy.check_compatible(mdp)?;
    let n = mdp.num_states();
    let mut layers = Vec::with_capacity(mdp.horizon());
    let mut current = mdp.initial_dist().to_vec();
    for t in 0..mdp.horizon() {
        let mut next = vec![T::zero(); n];
        if t + 1 < mdp.horizon() {
            for (s, &mass) in current.iter().enumerate() {
                if mass == T::zero() {
                    continue;
                }
                for (a, &pa) in policy.row(t, s).iter().enumerate() {
                    let w = mass * pa;
                    if w == T::zero() {
                        continue;
                    }
                    for (s2, &p) in mdp.transition_row(s, a).iter().enumerate() {
                        next[s2] = next[s2] + w * p;
                    }
                }
            }
        }
        layers.push(std::mem::replace(&mut current, next));
    }
    Ok(layers)
}

/// `V(π) = Σ_t γ^t E[r_t]` by forward propagation of state-action marginals.
pub fn exact_value<T: Scalar>(mdp: &TabularMdp<T>, policy: &StochasticPolicy<T>) -> Result<T> {
    let marginals = state_marginals(mdp, policy)?;
    let mut value = T::zero();
    let mut disc = T::one();
    for (t, dist) in marginals.iter().enumerate() {
        let mut expected = T::zero();
        for (s, &mass) in dist.iter().enumerate() {
            for (a, &pa) in policy.row(t, s).iter().enumerate() {
                expected = expected + mass * pa * mdp.reward_mean(s, a);
            }
        }
        value = value + disc * expected;
        disc = disc * mdp.discount();
    }
    Ok(value)
}

/// Finite-horizon optimal action values `Q*_t(s, a)` by backward induction.
pub fn optimal_q<T: Scalar>(mdp: &TabularMdp<T>) -> ActionTable<T> {
    let (n, na, h) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut values = vec![T::zero(); h * n * na];
    let mut next_v = vec![T::zero(); n];
    for t in (0..h).rev() {
        let mut v = vec![T::zero(); n];
        for s in 0..n {
            let mut best = T::neg_infinity();
            for a in 0..na {
                let future: T = mdp
                    .transition_row(s, a)
                    .iter()
                    .zip(&next_v)
                    .map(|(&p, &nv)| p * nv)
                    .sum();
                let q = mdp.reward_mean(s, a) + mdp.discount() * future;
                values[(t * n + s) * na + a] = q;
                best = best.max(q);
            }
            v[s] = best;
        }
        next_v = v;
    }
    ActionTable {
        num_states: n,
        num_actions: na,
        layers: Some(h),
        values,
    }
}

fn random_simplex<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    // Normalized exponentials: a flat Dirichlet draw.
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut out: Vec<T> = raw.iter().map(|&x| T::lit(x / total)).collect();
    // Put the rounding residue on the largest entry so rows sum to one.
    let residue = T::one() - out.iter().copied().sum::<T>();
    let big = argmax(&out);
    out[big] = out[big] + residue;
    out
}

/// Seeded MDP with flat-Dirichlet transitions and initial law, rewards uniform on `[0, 1)`.
pub fn random_mdp<T: Scalar>(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    reward_noise_std: T,
    discount: T,
    seed: u64,
) -> Result<TabularMdp<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        transition.extend(random_simplex::<T>(&mut rng, num_states));
    }
    let reward_mean = (0..num_states * num_actions)
        .map(|_| T::lit(rng.random::<f64>()))
        .collect();
    let initial = random_simplex(&mut rng, num_states);
    TabularMdp::new(
        num_states,
        num_actions,
        horizon,
        transition,
        reward_mean,
        reward_noise_std,
        initial,
        discount,
    )
}

/// Seeded stationary policy with flat-Dirichlet rows, floored at `min_prob` then renormalized.
pub fn random_policy<T: Scalar>(
    num_states: usize,
    num_actions: usize,
    min_prob: f64,
    seed: u64,
) -> StochasticPolicy<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Vec::with_capacity(num_states * num_actions);
    for _ in 0..num_states {
        let row: Vec<f64> = random_simplex::<f64>(&mut rng, num_actions)
            .into_iter()
            .map(|p| p + min_prob)
            .collect();
        let total: f64 = row.iter().sum();
        let mut row: Vec<T> = row.iter().map(|&p| T::lit(p / total)).collect();
        let residue = T::one() - row.iter().copied().sum::<T>();
        let big = argmax(&row);
        row[big] = row[big] + residue;
        probs.extend(row);
    }
    StochasticPolicy::new(num_states, num_actions, None, probs).expect("normalized rows")
}

/// One decision: pre-action state, chosen action, observed reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, T)", into = "(usize, usize, T)")]
pub struct Step<T: Copy> {
    pub state: usize,
    pub action: usize,
    pub reward: T,
}

impl<T: Copy> From<(usize, usize, T)> for Step<T> {
    fn from((state, action, reward): (usize, usize, T)) -> Self {
        Step {
            state,
            action,
            reward,
        }
    }
}

impl<T: Copy> From<Step<T>> for (usize, usize, T) {
    fn from(s: Step<T>) -> Self {
        (s.state, s.action, s.reward)
    }
}

/// A fixed-horizon episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Trajectory<T: Copy> {
    pub seed_id: u64,
    pub steps: Vec<Step<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `Σ_t γ^t r_t`.
    pub fn discounted_return(&self, discount: T) -> T {
        let mut disc = T::one();
        let mut total = T::zero();
        for step in &self.steps {
            total = total + disc * step.reward;
            disc = disc * discount;
        }
        total
    }
}
