use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{Step, StochasticPolicy, TabularMdp, Trajectory};
use crate::error::{OpeError, Result};
use crate::scalar::Scalar;

/// Generator for trajectory `index` under `seed`: stream `index` of a ChaCha8 keyed by `seed`.
///
/// Streams are independent of one another, so sampling order and thread count
/// never change the output.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws an index from `probs` by inversion; zero-mass entries are never returned.
pub fn sample_categorical<T: Scalar, R: Rng>(rng: &mut R, probs: &[T]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last_positive = i;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// `n` i.i.d. episodes of `policy` in `mdp`; trajectory `i` carries `seed_id = i`.
pub fn sample_trajectories<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &StochasticPolicy<T>,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory<T>>> {
    policy.check_compatible(mdp)?;
    if n == 0 {
        return Err(OpeError::Config("need at least one trajectory".into()));
    }
    let trajectories = (0..n as u64)
        .into_par_iter()
        .map(|index| sample_one(mdp, policy, &mut trajectory_rng(seed, index), index))
        .collect();
    Ok(trajectories)
}

fn sample_one<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &StochasticPolicy<T>,
    rng: &mut ChaCha8Rng,
    seed_id: u64,
) -> Trajectory<T> {
    let noise = mdp.reward_noise_std();
    let mut steps = Vec::with_capacity(mdp.horizon());
    let mut state = sample_categorical(rng, mdp.initial_dist());
    for t in 0..mdp.horizon() {
        let action = sample_categorical(rng, policy.row(t, state));
        let mut reward = mdp.reward_mean(state, action);
        if noise > T::zero() {
            let z: f64 = rng.sample(StandardNormal);
            reward = reward + noise * T::lit(z);
        }
        steps.push(Step {
            state,
            action,
            reward,
        });
        if t + 1 < mdp.horizon() {
            state = sample_categorical(rng, mdp.transition_row(state, action));
        }
    }
    Trajectory { seed_id, steps }
}
