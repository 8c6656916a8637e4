use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ratio::prefix_ratios;
use super::{QuotientRatioTable, RatioLookup, RatioMode};
use crate::error::{OpeError, Result};
use crate::mdp::{StochasticPolicy, Trajectory};
use crate::scalar::Scalar;
use crate::stats::WeightStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ois,
    Wis,
    Pdis,
    Wpdis,
    FfOis,
    FfWis,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ois,
        Method::Wis,
        Method::Pdis,
        Method::Wpdis,
        Method::FfOis,
        Method::FfWis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ois => "ois",
            Method::Wis => "wis",
            Method::Pdis => "pdis",
            Method::Wpdis => "wpdis",
            Method::FfOis => "ff_ois",
            Method::FfWis => "ff_wis",
        }
    }

    pub fn needs_ratios(self) -> bool {
        matches!(self, Method::FfOis | Method::FfWis)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| OpeError::Config(format!("unknown estimator {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    pub estimate: f64,
    /// `(Σw)² / Σw²` of the trajectory-level (final-decision) weights.
    pub ess: f64,
    /// Extremes over every weight the estimator applied.
    pub min_weight: f64,
    pub max_weight: f64,
    /// Records in the evaluation range.
    pub n: usize,
    pub n_used: usize,
    /// Records dropped for an unsupported class or a leave-one-out singleton.
    pub n_skipped: usize,
}

impl EstimateReport {
    /// Flat `key=value` record.
    pub fn to_record(&self) -> Vec<(&'static str, String)> {
        vec![
            ("method", self.method.to_string()),
            ("estimate", format!("{:e}", self.estimate)),
            ("ess", format!("{:e}", self.ess)),
            ("min_weight", format!("{:e}", self.min_weight)),
            ("max_weight", format!("{:e}", self.max_weight)),
            ("n", self.n.to_string()),
            ("n_used", self.n_used.to_string()),
            ("n_skipped", self.n_skipped.to_string()),
        ]
    }
}

/// Per-decision weights and discounted rewards of one record, or `None` if skipped.
type Decisions<T> = Option<(Vec<T>, Vec<T>)>;

fn decisions<T: Scalar>(
    trajectory: &Trajectory<T>,
    method: Method,
    target: &StochasticPolicy<T>,
    behavior: &StochasticPolicy<T>,
    ratios: Option<&QuotientRatioTable<T>>,
    discount: T,
) -> Result<Decisions<T>> {
    let rho = prefix_ratios(trajectory, target, behavior)?;
    let h = trajectory.len();
    let mut rewards = Vec::with_capacity(h);
    let mut disc = T::one();
    for step in &trajectory.steps {
        rewards.push(disc * step.reward);
        disc = disc * discount;
    }
    let weights = match method {
        Method::Ois | Method::Wis => vec![rho[h]; h],
        Method::Pdis | Method::Wpdis => rho[1..].to_vec(),
        Method::FfOis | Method::FfWis => {
            let table = ratios.expect("checked by caller");
            let ids = table.assigner().lookup(trajectory)?;
            let mut w = Vec::with_capacity(h);
            for (t, step) in trajectory.steps.iter().enumerate() {
                let class_ratio = match table.lookup(t, ids[t], Some(rho[t])) {
                    RatioLookup::Ratio(r) => r,
                    RatioLookup::Unsupported | RatioLookup::ExcludedSingleton => return Ok(None),
                };
                // rho[t + 1] / rho[t] would lose bits; recompute the step ratio.
                let b = behavior.prob(t, step.state, step.action);
                let p = target.prob(t, step.state, step.action);
                if b <= T::zero() {
                    return Err(OpeError::support(
                        format!(
                            "layer {t}, class {}, action {}",
                            ids[t].map_or("?".into(), |c| c.to_string()),
                            step.action
                        ),
                        p.as_f64(),
                        b.as_f64(),
                    ));
                }
                w.push(class_ratio * (p / b));
            }
            w
        }
    };
    Ok(Some((weights, rewards)))
}

/// Off-policy value estimate from logged trajectories.
///
/// OIS/WIS weight the whole return by `ρ_{1:H}`; PDIS/WPDIS weight `γ^t r_t`
/// by `ρ_{1:t}`; FF-OIS/FF-WIS weight it by `ŵ_t(z_t)·ρ_t`. The weighted
/// variants self-normalize per decision time (WIS once, over trajectories).
pub fn estimate_value<T: Scalar>(
    dataset: &[Trajectory<T>],
    method: Method,
    target: &StochasticPolicy<T>,
    behavior: &StochasticPolicy<T>,
    ratios: Option<&QuotientRatioTable<T>>,
    discount: T,
) -> Result<EstimateReport> {
    if method.needs_ratios() && ratios.is_none() {
        return Err(OpeError::Config(format!(
            "{method} needs a quotient ratio table"
        )));
    }
    let range = match ratios {
        Some(table) if method.needs_ratios() => {
            if let Some(len) = table.dataset_len() {
                if len != dataset.len() {
                    return Err(OpeError::Config(format!(
                        "ratio table was estimated on {len} records, dataset has {}",
                        dataset.len()
                    )));
                }
            }
            if table.mode() == RatioMode::Exact || table.mode() == RatioMode::Pooled {
                0..dataset.len()
            } else {
                table.eval_range(dataset.len())
            }
        }
        _ => 0..dataset.len(),
    };
    let records: Vec<Decisions<T>> = dataset[range.clone()]
        .par_iter()
        .map(|traj| decisions(traj, method, target, behavior, ratios, discount))
        .collect::<Result<_>>()?;
    let used: Vec<&(Vec<T>, Vec<T>)> = records.iter().flatten().collect();
    let n_used = used.len();
    let mut all_weights = Vec::new();
    let mut final_weights = Vec::with_capacity(n_used);
    for (w, _) in &used {
        all_weights.extend_from_slice(w);
        if let Some(&last) = w.last() {
            final_weights.push(last);
        }
    }
    let estimate = if n_used == 0 {
        f64::NAN
    } else {
        aggregate(method, &used).as_f64()
    };
    let all = WeightStats::from_weights(&all_weights);
    let last = WeightStats::from_weights(&final_weights);
    Ok(EstimateReport {
        method,
        estimate,
        ess: last.ess,
        min_weight: all.min,
        max_weight: all.max,
        n: range.len(),
        n_used,
        n_skipped: range.len() - n_used,
    })
}

fn aggregate<T: Scalar>(method: Method, used: &[&(Vec<T>, Vec<T>)]) -> T {
    let n = T::count(used.len());
    match method {
        Method::Ois | Method::Pdis | Method::FfOis => {
            let total: T = used
                .iter()
                .map(|(w, r)| w.iter().zip(r).map(|(&w, &r)| w * r).sum::<T>())
                .sum();
            total / n
        }
        Method::Wis => {
            let num: T = used
                .iter()
                .map(|(w, r)| w.first().copied().unwrap_or(T::one()) * r.iter().copied().sum::<T>())
                .sum();
            let den: T = used
                .iter()
                .map(|(w, _)| w.first().copied().unwrap_or(T::one()))
                .sum();
            if den > T::zero() {
                num / den
            } else {
                T::zero()
            }
        }
        Method::Wpdis | Method::FfWis => {
            let h = used.iter().map(|(w, _)| w.len()).max().unwrap_or(0);
            let mut value = T::zero();
            for t in 0..h {
                let mut num = T::zero();
                let mut den = T::zero();
                for (w, r) in used {
                    num = num + w[t] * r[t];
                    den = den + w[t];
                }
                if den > T::zero() {
                    value = value + num / den;
                }
            }
            value
        }
    }
}
