//! Exhaustive enumeration of state-action paths in small MDPs, with the path
//! probability under each of several policies. Rewards are integrated out
//! (they do not enter likelihood ratios).

use super::{StochasticPolicy, TabularMdp};
use crate::error::{OpeError, Result};
use crate::scalar::Scalar;

/// Refuse enumerations producing more paths than this.
pub const MAX_ENUMERATED_PATHS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Path<T> {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    /// Path probability under each policy, in the order given.
    pub probs: Vec<T>,
}

/// All pre-action histories `(s_0, a_0, …, s_layer)` reachable under at least one policy.
pub fn enumerate_prefixes<T: Scalar>(
    mdp: &TabularMdp<T>,
    policies: &[&StochasticPolicy<T>],
    layer: usize,
) -> Result<Vec<Path<T>>> {
    if layer >= mdp.horizon() {
        return Err(OpeError::Config(format!(
            "layer {layer} outside horizon {}",
            mdp.horizon()
        )));
    }
    enumerate(mdp, policies, layer + 1, layer)
}

/// All full trajectories `(s_0, a_0, …, s_{H-1}, a_{H-1})` reachable under at least one policy.
pub fn enumerate_trajectories<T: Scalar>(
    mdp: &TabularMdp<T>,
    policies: &[&StochasticPolicy<T>],
) -> Result<Vec<Path<T>>> {
    enumerate(mdp, policies, mdp.horizon(), mdp.horizon())
}

fn enumerate<T: Scalar>(
    mdp: &TabularMdp<T>,
    policies: &[&StochasticPolicy<T>],
    n_states: usize,
    n_actions: usize,
) -> Result<Vec<Path<T>>> {
    for p in policies {
        p.check_compatible(mdp)?;
    }
    let mut out = Vec::new();
    let mut frontier: Vec<Path<T>> = mdp
        .initial_dist()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > T::zero())
        .map(|(s, &p)| Path {
            states: vec![s],
            actions: vec![],
            probs: vec![p; policies.len()],
        })
        .collect();
    while let Some(path) = frontier.pop() {
        if path.states.len() == n_states && path.actions.len() == n_actions {
            out.push(path);
            if out.len() > MAX_ENUMERATED_PATHS {
                return Err(OpeError::Refused {
                    what: "path enumeration".into(),
                    required: format!("more than {MAX_ENUMERATED_PATHS} paths"),
                    limit: MAX_ENUMERATED_PATHS.to_string(),
                });
            }
            continue;
        }
        let t = path.actions.len();
        let s = *path.states.last().expect("non-empty path");
        if path.actions.len() < path.states.len() {
            for a in 0..mdp.num_actions() {
                let probs: Vec<T> = policies
                    .iter()
                    .zip(&path.probs)
                    .map(|(pol, &p)| p * pol.prob(t, s, a))
                    .collect();
                if probs.iter().all(|&p| p == T::zero()) {
                    continue;
                }
                let mut actions = path.actions.clone();
                actions.push(a);
                frontier.push(Path {
                    states: path.states.clone(),
                    actions,
                    probs,
                });
            }
        } else {
            let a = *path.actions.last().expect("action taken");
            for (s2, &p2) in mdp.transition_row(s, a).iter().enumerate() {
                if p2 == T::zero() {
                    continue;
                }
                let mut states = path.states.clone();
                states.push(s2);
                frontier.push(Path {
                    states,
                    actions: path.actions.clone(),
                    probs: path.probs.iter().map(|&p| p * p2).collect(),
                });
            }
        }
    }
    Ok(out)
}
