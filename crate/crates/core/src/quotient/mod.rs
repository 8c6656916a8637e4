//! Quotients of the rollout tree and forward-flow importance sampling.
//!
//! A quotient assigns every pre-action history `h_t` to a class `z_t` within
//! its layer. Class ids are contiguous integers from zero within each layer;
//! a class is addressed by `(layer, class)`.

mod estimate;
mod flows;
mod io;
mod ratio;

pub use estimate::{estimate_value, EstimateReport, Method};
pub use flows::{check_sufficiency, exact_flows, FlowTable, SufficiencyReport};
pub use io::{parse_columns, read_flow_table, write_flow_table, write_ratio_table, ColumnRow};
pub use ratio::{
    empirical_quotient_ratio, QuotientRatioTable, RatioLookup, RatioMode, DEFAULT_SPLIT_FRACTION,
};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::mdp::Trajectory;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuotientKind {
    /// Every distinct history prefix is its own class (per-decision IS).
    Identity,
    /// `z_t = (s_t, t)` (marginalized IS).
    StateTime,
    /// `z_t = (φ(s_t), t)` for a user abstraction `φ`.
    Abstraction { class_of_state: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotientSpec {
    kind: QuotientKind,
    layers: usize,
    num_states: usize,
}

impl QuotientSpec {
    pub fn identity(layers: usize, num_states: usize) -> Self {
        QuotientSpec {
            kind: QuotientKind::Identity,
            layers,
            num_states,
        }
    }

    pub fn state_time(layers: usize, num_states: usize) -> Self {
        QuotientSpec {
            kind: QuotientKind::StateTime,
            layers,
            num_states,
        }
    }

    /// `class_of_state[s] = φ(s)`; the image must be exactly `0..n_classes`.
    pub fn abstraction(layers: usize, class_of_state: Vec<usize>) -> Result<Self> {
        let n_classes = class_of_state.iter().max().map_or(0, |m| m + 1);
        let mut used = vec![false; n_classes];
        for &c in &class_of_state {
            used[c] = true;
        }
        if class_of_state.is_empty() || used.iter().any(|u| !u) {
            return Err(OpeError::Validation(
                "abstraction class ids must be contiguous from 0".into(),
            ));
        }
        Ok(QuotientSpec {
            num_states: class_of_state.len(),
            kind: QuotientKind::Abstraction { class_of_state },
            layers,
        })
    }

    pub fn kind(&self) -> &QuotientKind {
        &self.kind
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// Number of classes per layer; `None` for the identity quotient.
    pub fn classes_per_layer(&self) -> Option<usize> {
        match &self.kind {
            QuotientKind::Identity => None,
            QuotientKind::StateTime => Some(self.num_states),
            QuotientKind::Abstraction { class_of_state } => {
                Some(class_of_state.iter().max().map_or(0, |m| m + 1))
            }
        }
    }

    /// Class of `state` for the state-based quotients.
    pub fn state_class(&self, state: usize) -> Result<usize> {
        if state >= self.num_states {
            return Err(OpeError::Validation(format!(
                "state {state} outside 0..{}",
                self.num_states
            )));
        }
        match &self.kind {
            QuotientKind::Identity => Err(OpeError::Unsupported(
                "identity classes depend on the whole prefix".into(),
            )),
            QuotientKind::StateTime => Ok(state),
            QuotientKind::Abstraction { class_of_state } => Ok(class_of_state[state]),
        }
    }
}

/// Interning key of an identity-quotient class: parent class, the action and
/// reward bits that left it, and the state entered.
type PrefixKey = (usize, usize, u64, usize);

/// Maps trajectories to per-layer class ids, interning identity-quotient prefixes.
#[derive(Debug, Clone)]
pub struct ClassAssigner {
    spec: QuotientSpec,
    roots: HashMap<usize, usize>,
    layers: Vec<HashMap<PrefixKey, usize>>,
}

impl ClassAssigner {
    pub fn new(spec: QuotientSpec) -> Self {
        let layers = vec![HashMap::new(); spec.layers.saturating_sub(1)];
        ClassAssigner {
            spec,
            roots: HashMap::new(),
            layers,
        }
    }

    pub fn spec(&self) -> &QuotientSpec {
        &self.spec
    }

    /// Number of classes seen so far at `layer`.
    pub fn num_classes(&self, layer: usize) -> usize {
        match self.spec.classes_per_layer() {
            Some(n) => n,
            None if layer == 0 => self.roots.len(),
            None => self.layers[layer - 1].len(),
        }
    }

    fn check_len<T: Scalar>(&self, trajectory: &Trajectory<T>) -> Result<()> {
        if trajectory.len() != self.spec.layers {
            return Err(OpeError::Validation(format!(
                "trajectory {} has {} steps, quotient has {} layers",
                trajectory.seed_id,
                trajectory.len(),
                self.spec.layers
            )));
        }
        Ok(())
    }

    /// Class id at every layer, interning prefixes not seen before.
    pub fn assign<T: Scalar>(&mut self, trajectory: &Trajectory<T>) -> Result<Vec<usize>> {
        self.check_len(trajectory)?;
        if self.spec.kind != QuotientKind::Identity {
            return self.state_classes(trajectory);
        }
        let mut ids = Vec::with_capacity(trajectory.len());
        for (t, step) in trajectory.steps.iter().enumerate() {
            if step.state >= self.spec.num_states {
                return Err(OpeError::Validation(format!(
                    "unknown state {}",
                    step.state
                )));
            }
            let id = if t == 0 {
                let next = self.roots.len();
                *self.roots.entry(step.state).or_insert(next)
            } else {
                let prev = &trajectory.steps[t - 1];
                let key = (
                    ids[t - 1],
                    prev.action,
                    prev.reward.as_f64().to_bits(),
                    step.state,
                );
                let map = &mut self.layers[t - 1];
                let next = map.len();
                *map.entry(key).or_insert(next)
            };
            ids.push(id);
        }
        Ok(ids)
    }

    /// Class ids without interning; `None` from the first unseen prefix on.
    pub fn lookup<T: Scalar>(&self, trajectory: &Trajectory<T>) -> Result<Vec<Option<usize>>> {
        self.check_len(trajectory)?;
        if self.spec.kind != QuotientKind::Identity {
            return Ok(self
                .state_classes(trajectory)?
                .into_iter()
                .map(Some)
                .collect());
        }
        let mut ids: Vec<Option<usize>> = Vec::with_capacity(trajectory.len());
        for (t, step) in trajectory.steps.iter().enumerate() {
            if step.state >= self.spec.num_states {
                return Err(OpeError::Validation(format!(
                    "unknown state {}",
                    step.state
                )));
            }
            let id = if t == 0 {
                self.roots.get(&step.state).copied()
            } else {
                let prev = &trajectory.steps[t - 1];
                ids[t - 1].and_then(|parent| {
                    self.layers[t - 1]
                        .get(&(
                            parent,
                            prev.action,
                            prev.reward.as_f64().to_bits(),
                            step.state,
                        ))
                        .copied()
                })
            };
            ids.push(id);
        }
        Ok(ids)
    }

    fn state_classes<T: Scalar>(&self, trajectory: &Trajectory<T>) -> Result<Vec<usize>> {
        trajectory
            .steps
            .iter()
            .map(|s| self.spec.state_class(s.state))
            .collect()
    }
}

/// Class ids for every trajectory, interned in dataset order.
pub fn assign_classes<T: Scalar>(
    dataset: &[Trajectory<T>],
    spec: &QuotientSpec,
) -> Result<(ClassAssigner, Vec<Vec<usize>>)> {
    let mut assigner = ClassAssigner::new(spec.clone());
    let ids = dataset
        .iter()
        .map(|t| assigner.assign(t))
        .collect::<Result<Vec<_>>>()?;
    Ok((assigner, ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Step;

    fn traj(states: &[usize]) -> Trajectory<f64> {
        Trajectory {
            seed_id: 0,
            steps: states
                .iter()
                .map(|&s| Step {
                    state: s,
                    action: 0,
                    reward: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn state_time_classes_are_states() {
        let spec = QuotientSpec::state_time(3, 6);
        let (_, ids) = assign_classes(&[traj(&[2, 5, 2])], &spec).unwrap();
        assert_eq!(ids[0], vec![2, 5, 2]);
    }

    #[test]
    fn abstraction_merges_states() {
        let spec = QuotientSpec::abstraction(2, vec![0, 1, 2, 3, 4, 2]).unwrap();
        let (_, ids) = assign_classes(&[traj(&[0, 2]), traj(&[1, 5])], &spec).unwrap();
        assert_eq!(ids[0][1], ids[1][1]);
        assert_ne!(ids[0][0], ids[1][0]);
    }

    #[test]
    fn abstraction_requires_contiguous_ids() {
        assert!(QuotientSpec::abstraction(2, vec![0, 2]).is_err());
        assert!(QuotientSpec::abstraction(2, vec![]).is_err());
    }

    #[test]
    fn identity_shares_common_prefix() {
        let spec = QuotientSpec::identity(3, 4);
        let (assigner, ids) = assign_classes(
            &[traj(&[1, 2, 3]), traj(&[1, 2, 0]), traj(&[1, 3, 3])],
            &spec,
        )
        .unwrap();
        assert_eq!(ids[0][..2], ids[1][..2]);
        assert_ne!(ids[0][2], ids[1][2]);
        assert_eq!(ids[0][0], ids[2][0]);
        assert_ne!(ids[0][1], ids[2][1]);
        assert_eq!(assigner.num_classes(2), 3);
        // Same state at layer 2 but different histories stay separate.
        assert_ne!(ids[0][2], ids[2][2]);
        assert_eq!(
            assigner.lookup(&traj(&[1, 2, 1])).unwrap(),
            vec![Some(0), Some(0), None]
        );
    }

    #[test]
    fn identity_distinguishes_rewards() {
        let spec = QuotientSpec::identity(2, 2);
        let mut a = traj(&[0, 1]);
        let mut b = traj(&[0, 1]);
        a.steps[0].reward = 0.5;
        b.steps[0].reward = 0.25;
        let (_, ids) = assign_classes(&[a, b], &spec).unwrap();
        assert_eq!(ids[0][0], ids[1][0]);
        assert_ne!(ids[0][1], ids[1][1]);
    }

    #[test]
    fn unknown_state_is_validation_error() {
        for spec in [
            QuotientSpec::state_time(2, 3),
            QuotientSpec::identity(2, 3),
            QuotientSpec::abstraction(2, vec![0, 0, 1]).unwrap(),
        ] {
            let err = assign_classes(&[traj(&[0, 7])], &spec).unwrap_err();
            assert!(matches!(err, OpeError::Validation(_)), "{spec:?}: {err}");
        }
    }

    #[test]
    fn layer_count_must_match() {
        let spec = QuotientSpec::state_time(3, 3);
        assert!(assign_classes(&[traj(&[0, 1])], &spec).is_err());
    }
}
