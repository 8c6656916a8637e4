use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClassAssigner, FlowTable, QuotientSpec};
use crate::error::{OpeError, Result};
use crate::mdp::{step_ratio, StochasticPolicy, Trajectory};
use crate::scalar::Scalar;

/// Fraction of the data used for estimating ratios in split mode.
pub const DEFAULT_SPLIT_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    /// `F_π / F_β` from exact flows.
    Exact,
    /// Class means of `ρ_{1:t-1}` over the whole dataset.
    Pooled,
    /// Ratios from a leading fraction of the data, evaluated on the rest.
    Split,
    /// Each sample's class mean excludes the sample itself.
    LeaveOneOut,
}

impl std::fmt::Display for RatioMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RatioMode::Exact => "exact",
            RatioMode::Pooled => "pooled",
            RatioMode::Split => "split",
            RatioMode::LeaveOneOut => "leave_one_out",
        })
    }
}

impl std::str::FromStr for RatioMode {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(RatioMode::Exact),
            "pooled" => Ok(RatioMode::Pooled),
            "split" => Ok(RatioMode::Split),
            "leave_one_out" | "loo" => Ok(RatioMode::LeaveOneOut),
            other => Err(OpeError::Config(format!("unknown ratio mode {other:?}"))),
        }
    }
}

/// Result of asking a ratio table for `ŵ_t(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioLookup<T> {
    Ratio(T),
    /// No behavior mass (or no estimation sample) in this class.
    Unsupported,
    /// Leave-one-out query on a class whose only member is the sample itself.
    ExcludedSingleton,
}

#[derive(Debug, Clone, PartialEq)]
struct ClassStat<T> {
    sum: T,
    count: usize,
    /// Common value when every member contributed the same bits.
    uniform: Option<T>,
    ratio: Option<T>,
}

impl<T: Scalar> ClassStat<T> {
    fn empty() -> Self {
        ClassStat {
            sum: T::zero(),
            count: 0,
            uniform: None,
            ratio: None,
        }
    }

    fn push(&mut self, value: T) {
        self.uniform = match (self.count, self.uniform) {
            (0, _) => Some(value),
            (_, Some(u)) if u.to_f64().map(f64::to_bits) == value.to_f64().map(f64::to_bits) => {
                Some(u)
            }
            _ => None,
        };
        self.sum = self.sum + value;
        self.count += 1;
    }

    fn finish(&mut self) {
        if self.count > 0 {
            self.ratio = Some(self.uniform.unwrap_or(self.sum / T::count(self.count)));
        }
    }
}

/// Per-class flow ratios `w(z)` or their empirical estimates `ŵ_t(z)`.
#[derive(Debug, Clone)]
pub struct QuotientRatioTable<T> {
    mode: RatioMode,
    assigner: ClassAssigner,
    stats: Vec<Vec<ClassStat<T>>>,
    /// Dataset indices the estimator should evaluate on.
    eval: std::ops::Range<usize>,
    dataset_len: Option<usize>,
}

/// Running products `ρ_{1:t}` for `t = 0..=H`, starting from 1.
pub(crate) fn prefix_ratios<T: Scalar>(
    trajectory: &Trajectory<T>,
    target: &StochasticPolicy<T>,
    behavior: &StochasticPolicy<T>,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(trajectory.len() + 1);
    let mut running = T::one();
    out.push(running);
    for (t, step) in trajectory.steps.iter().enumerate() {
        running = running * step_ratio(target, behavior, t, step.state, step.action)?;
        out.push(running);
    }
    Ok(out)
}

impl<T: Scalar> QuotientRatioTable<T> {
    /// `w(z) = F_π(z) / F_β(z)` wherever `F_β(z) > 0`.
    pub fn exact(
        target: &FlowTable<T>,
        behavior: &FlowTable<T>,
        spec: &QuotientSpec,
    ) -> Result<Self> {
        let n_classes = spec.classes_per_layer().ok_or_else(|| {
            OpeError::Unsupported("exact ratios need a state-based quotient".into())
        })?;
        if target.layers() != spec.layers() || behavior.layers() != spec.layers() {
            return Err(OpeError::Config(
                "flow tables and quotient disagree on layers".into(),
            ));
        }
        let stats = (0..spec.layers())
            .map(|t| {
                if target.flows[t].len() != n_classes || behavior.flows[t].len() != n_classes {
                    return Err(OpeError::Config(format!(
                        "flow table layer {t} has wrong width"
                    )));
                }
                Ok((0..n_classes)
                    .map(|c| {
                        let b = behavior.flow(t, c);
                        ClassStat {
                            ratio: (b > T::zero()).then(|| target.flow(t, c) / b),
                            ..ClassStat::empty()
                        }
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(QuotientRatioTable {
            mode: RatioMode::Exact,
            assigner: ClassAssigner::new(spec.clone()),
            stats,
            eval: 0..usize::MAX,
            dataset_len: None,
        })
    }

    pub fn mode(&self) -> RatioMode {
        self.mode
    }

    pub fn spec(&self) -> &QuotientSpec {
        self.assigner.spec()
    }

    pub fn assigner(&self) -> &ClassAssigner {
        &self.assigner
    }

    pub fn layers(&self) -> usize {
        self.stats.len()
    }

    pub fn num_classes(&self, layer: usize) -> usize {
        self.stats[layer].len()
    }

    /// Dataset records to evaluate on: the held-out part in split mode, all
    /// records otherwise.
    pub fn eval_range(&self, dataset_len: usize) -> std::ops::Range<usize> {
        self.eval.start.min(dataset_len)..self.eval.end.min(dataset_len)
    }

    /// Size of the dataset the table was estimated from, if empirical.
    pub fn dataset_len(&self) -> Option<usize> {
        self.dataset_len
    }

    /// Pooled or exact ratio of a class.
    pub fn ratio(&self, layer: usize, class: usize) -> Option<T> {
        self.stats.get(layer)?.get(class)?.ratio
    }

    /// Number of estimation samples falling in the class.
    pub fn support_count(&self, layer: usize, class: usize) -> usize {
        self.stats
            .get(layer)
            .and_then(|l| l.get(class))
            .map_or(0, |s| s.count)
    }

    /// `ŵ_t(z)` for a sample in `class`; `own` is the sample's own prefix
    /// ratio, required in leave-one-out mode.
    pub fn lookup(&self, layer: usize, class: Option<usize>, own: Option<T>) -> RatioLookup<T> {
        let Some(stat) = class.and_then(|c| self.stats.get(layer)?.get(c)) else {
            return RatioLookup::Unsupported;
        };
        if self.mode != RatioMode::LeaveOneOut {
            return stat
                .ratio
                .map_or(RatioLookup::Unsupported, RatioLookup::Ratio);
        }
        match stat.count {
            0 => RatioLookup::Unsupported,
            1 => RatioLookup::ExcludedSingleton,
            n => match (stat.uniform, own) {
                (Some(u), _) => RatioLookup::Ratio(u),
                (None, Some(own)) => RatioLookup::Ratio((stat.sum - own) / T::count(n - 1)),
                (None, None) => RatioLookup::Unsupported,
            },
        }
    }

    /// Flat `(layer, class, ratio, support_count)` rows in layer-major order.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize, Option<T>, usize)> + '_ {
        self.stats.iter().enumerate().flat_map(|(t, layer)| {
            layer
                .iter()
                .enumerate()
                .map(move |(c, s)| (t, c, s.ratio, s.count))
        })
    }
}

/// Empirical quotient ratios `ŵ_t(z)`: the mean of `ρ_{1:t-1}` over the
/// logged trajectories in class `z`.
///
/// In split mode the first `⌊split_fraction·N⌋` records (clamped to
/// `1..N-1`) estimate the ratios and the rest are flagged for evaluation.
pub fn empirical_quotient_ratio<T: Scalar>(
    dataset: &[Trajectory<T>],
    spec: &QuotientSpec,
    target: &StochasticPolicy<T>,
    behavior: &StochasticPolicy<T>,
    mode: RatioMode,
    split_fraction: f64,
) -> Result<QuotientRatioTable<T>> {
    if dataset.is_empty() {
        return Err(OpeError::Validation("empty dataset".into()));
    }
    let n = dataset.len();
    let (fit, eval) = match mode {
        RatioMode::Exact => {
            return Err(OpeError::Config(
                "exact ratios come from flow tables".into(),
            ));
        }
        RatioMode::Pooled | RatioMode::LeaveOneOut => (0..n, 0..n),
        RatioMode::Split => {
            if !(split_fraction > 0.0 && split_fraction < 1.0) {
                return Err(OpeError::Config(format!(
                    "split fraction {split_fraction} outside (0, 1)"
                )));
            }
            if n < 2 {
                return Err(OpeError::Validation(
                    "split mode needs at least 2 records".into(),
                ));
            }
            let k = ((split_fraction * n as f64).floor() as usize).clamp(1, n - 1);
            (0..k, k..n)
        }
    };
    let ratios: Vec<Vec<T>> = dataset[fit.clone()]
        .par_iter()
        .map(|traj| prefix_ratios(traj, target, behavior))
        .collect::<Result<_>>()?;
    let mut assigner = ClassAssigner::new(spec.clone());
    let mut stats: Vec<Vec<ClassStat<T>>> = vec![Vec::new(); spec.layers()];
    if let Some(k) = spec.classes_per_layer() {
        for layer in &mut stats {
            *layer = vec![ClassStat::empty(); k];
        }
    }
    for (traj, rho) in dataset[fit].iter().zip(&ratios) {
        let ids = assigner.assign(traj)?;
        for (t, &c) in ids.iter().enumerate() {
            let layer = &mut stats[t];
            if c >= layer.len() {
                layer.resize(c + 1, ClassStat::empty());
            }
            layer[c].push(rho[t]);
        }
    }
    for layer in &mut stats {
        for s in layer.iter_mut() {
            s.finish();
        }
    }
    Ok(QuotientRatioTable {
        mode,
        assigner,
        stats,
        eval,
        dataset_len: Some(n),
    })
}
