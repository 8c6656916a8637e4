use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{QuotientKind, QuotientSpec};
use crate::error::{OpeError, Result};
use crate::mdp::{state_marginals, StochasticPolicy, TabularMdp, MAX_ENUMERATED_PATHS};
use crate::scalar::Scalar;

/// Forward flow `F_μ(z)` into every quotient class, one table per policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTable<T> {
    /// `flows[layer][class]`.
    pub flows: Vec<Vec<T>>,
}

impl<T: Scalar> FlowTable<T> {
    pub fn layers(&self) -> usize {
        self.flows.len()
    }

    pub fn flow(&self, layer: usize, class: usize) -> T {
        self.flows[layer][class]
    }

    pub fn layer_total(&self, layer: usize) -> T {
        self.flows[layer].iter().copied().sum()
    }
}

/// Exact flows by one forward sweep over layers.
///
/// Layer-0 flows are the initial distribution pushed through the quotient map;
/// each later layer is the previous one pushed through `P_μ`. Only the
/// state-based quotients are supported: identity flows are prefix
/// probabilities and are estimated empirically instead.
pub fn exact_flows<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &StochasticPolicy<T>,
    spec: &QuotientSpec,
) -> Result<FlowTable<T>> {
    let n_classes = spec.classes_per_layer().ok_or_else(|| {
        OpeError::Unsupported("exact flows need a state-based quotient, not identity".into())
    })?;
    if spec.layers() != mdp.horizon() || spec.num_states() != mdp.num_states() {
        return Err(OpeError::Config(format!(
            "quotient covers {} layers / {} states, MDP has {} / {}",
            spec.layers(),
            spec.num_states(),
            mdp.horizon(),
            mdp.num_states()
        )));
    }
    let marginals = state_marginals(mdp, policy)?;
    let flows = marginals
        .iter()
        .map(|dist| {
            let mut layer = vec![T::zero(); n_classes];
            for (s, &mass) in dist.iter().enumerate() {
                let c = spec.state_class(s).expect("state in range");
                layer[c] = layer[c] + mass;
            }
            layer
        })
        .collect();
    Ok(FlowTable { flows })
}

/// Outcome of the exhaustive sufficiency check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyReport {
    /// Largest absolute difference in continuation probability between merged histories.
    pub max_discrepancy: f64,
    /// Largest difference in mean reward along a shared continuation.
    pub max_reward_discrepancy: f64,
    /// `(layer, state_a, state_b)` attaining `max_discrepancy`, if any pair was compared.
    pub worst_pair: Option<(usize, usize, usize)>,
}

impl SufficiencyReport {
    pub fn is_sufficient(&self, tol: f64) -> bool {
        self.max_discrepancy <= tol && self.max_reward_discrepancy <= tol
    }
}

type Continuation = HashMap<Vec<usize>, (f64, Vec<f64>)>;

/// Continuation law from `state` at `layer` under `policy`: atoms are
/// `(a_t, s_{t+1}, …, a_{H-1})` with their probability and mean rewards.
fn continuation<T: Scalar>(
    mdp: &TabularMdp<T>,
    policy: &StochasticPolicy<T>,
    layer: usize,
    state: usize,
) -> Result<Continuation> {
    let mut out = HashMap::new();
    let mut stack = vec![(vec![state], 1.0f64, Vec::<f64>::new())];
    while let Some((seq, p, rewards)) = stack.pop() {
        // seq alternates state, action, state, …; it ends on a state here.
        let t = layer + seq.len() / 2;
        let s = *seq.last().expect("non-empty");
        for (a, &pa) in policy.row(t, s).iter().enumerate() {
            let pa = pa.as_f64();
            if pa == 0.0 {
                continue;
            }
            let mut r = rewards.clone();
            r.push(mdp.reward_mean(s, a).as_f64());
            let mut with_a = seq.clone();
            with_a.push(a);
            if t + 1 == mdp.horizon() {
                out.insert(with_a[1..].to_vec(), (p * pa, r));
                if out.len() > MAX_ENUMERATED_PATHS {
                    return Err(OpeError::Refused {
                        what: "continuation enumeration".into(),
                        required: format!("more than {MAX_ENUMERATED_PATHS} atoms"),
                        limit: MAX_ENUMERATED_PATHS.to_string(),
                    });
                }
                continue;
            }
            for (s2, &p2) in mdp.transition_row(s, a).iter().enumerate() {
                let p2 = p2.as_f64();
                if p2 == 0.0 {
                    continue;
                }
                let mut next = with_a.clone();
                next.push(s2);
                stack.push((next, p * pa * p2, r.clone()));
            }
        }
    }
    Ok(out)
}

/// Exhaustively compares continuation laws of histories merged by `spec`,
/// under each policy. State-based quotients only: under the Markov property a
/// history's continuation depends on `(s_t, t)`, so pairs of states sharing a
/// class and reachable at that layer (positive flow under some policy) are compared.
pub fn check_sufficiency<T: Scalar>(
    mdp: &TabularMdp<T>,
    spec: &QuotientSpec,
    policies: &[&StochasticPolicy<T>],
) -> Result<SufficiencyReport> {
    if matches!(spec.kind(), QuotientKind::Identity) {
        // Singleton classes are trivially sufficient.
        return Ok(SufficiencyReport {
            max_discrepancy: 0.0,
            max_reward_discrepancy: 0.0,
            worst_pair: None,
        });
    }
    let flows: Vec<FlowTable<T>> = policies
        .iter()
        .map(|p| exact_flows(mdp, p, &spec.clone_as_state_time()))
        .collect::<Result<_>>()?;
    let mut report = SufficiencyReport {
        max_discrepancy: 0.0,
        max_reward_discrepancy: 0.0,
        worst_pair: None,
    };
    for layer in 0..mdp.horizon() {
        let reachable: Vec<usize> = (0..mdp.num_states())
            .filter(|&s| flows.iter().any(|f| f.flow(layer, s) > T::zero()))
            .collect();
        for (i, &s1) in reachable.iter().enumerate() {
            for &s2 in &reachable[i + 1..] {
                if spec.state_class(s1)? != spec.state_class(s2)? {
                    continue;
                }
                for policy in policies {
                    let c1 = continuation(mdp, policy, layer, s1)?;
                    let c2 = continuation(mdp, policy, layer, s2)?;
                    let (d, dr) = compare(&c1, &c2);
                    if d > report.max_discrepancy || report.worst_pair.is_none() {
                        report.max_discrepancy = d;
                        report.worst_pair = Some((layer, s1, s2));
                    }
                    report.max_reward_discrepancy = report.max_reward_discrepancy.max(dr);
                }
            }
        }
    }
    Ok(report)
}

fn compare(a: &Continuation, b: &Continuation) -> (f64, f64) {
    let mut d = 0.0f64;
    let mut dr = 0.0f64;
    for (k, (pa, ra)) in a {
        match b.get(k) {
            Some((pb, rb)) => {
                d = d.max((pa - pb).abs());
                for (x, y) in ra.iter().zip(rb) {
                    dr = dr.max((x - y).abs());
                }
            }
            None => d = d.max(*pa),
        }
    }
    for (k, (pb, _)) in b {
        if !a.contains_key(k) {
            d = d.max(*pb);
        }
    }
    (d, dr)
}

impl QuotientSpec {
    fn clone_as_state_time(&self) -> QuotientSpec {
        QuotientSpec::state_time(self.layers(), self.num_states())
    }
}
