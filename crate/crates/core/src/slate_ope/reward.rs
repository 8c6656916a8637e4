use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::SlateRecord;
use crate::scalar::Scalar;
use crate::slate::ItemSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Fixed,
    FittedOnSplit,
}

/// Control variate `q̂(x, S)`; deterministic in its arguments.
pub trait SlateRewardModel<T: Scalar>: Send + Sync {
    fn predict(&self, context: usize, slate: ItemSet) -> T;
    fn provenance(&self) -> Provenance;
}

/// A fixed model given by a function.
pub struct FnRewardModel<F>(pub F);

impl<T: Scalar, F: Fn(usize, ItemSet) -> T + Send + Sync> SlateRewardModel<T> for FnRewardModel<F> {
    fn predict(&self, context: usize, slate: ItemSet) -> T {
        (self.0)(context, slate)
    }

    fn provenance(&self) -> Provenance {
        Provenance::Fixed
    }
}

/// Per-`(x, S)` mean reward shrunk toward the global mean.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularRewardModel<T> {
    cells: HashMap<(usize, ItemSet), T>,
    global_mean: T,
}

impl<T: Scalar> SlateRewardModel<T> for TabularRewardModel<T> {
    fn predict(&self, context: usize, slate: ItemSet) -> T {
        self.cells
            .get(&(context, slate))
            .copied()
            .unwrap_or(self.global_mean)
    }

    fn provenance(&self) -> Provenance {
        Provenance::FittedOnSplit
    }
}

impl<T: Scalar> TabularRewardModel<T> {
    pub fn global_mean(&self) -> T {
        self.global_mean
    }
}

/// `q̂(x, S) = (Σ R + c·R̄) / (n + c)` over the records with that `(x, S)`,
/// with `R̄` the global mean and `c = pseudo_count`; unseen cells predict `R̄`.
pub fn fit_reward_model<T: Scalar>(
    records: &[SlateRecord<T>],
    pseudo_count: T,
) -> TabularRewardModel<T> {
    let global_mean = if records.is_empty() {
        T::zero()
    } else {
        records.iter().map(|r| r.reward).sum::<T>() / T::count(records.len())
    };
    let mut sums: HashMap<(usize, ItemSet), (T, usize)> = HashMap::new();
    for r in records {
        let e = sums.entry((r.context, r.slate())).or_insert((T::zero(), 0));
        e.0 = e.0 + r.reward;
        e.1 += 1;
    }
    let cells = sums
        .into_iter()
        .map(|(k, (s, n))| {
            (
                k,
                (s + pseudo_count * global_mean) / (T::count(n) + pseudo_count),
            )
        })
        .collect();
    TabularRewardModel { cells, global_mean }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_toward_global_mean() {
        let rec = |x, o: Vec<usize>, r| SlateRecord {
            context: x,
            ordering: o,
            reward: r,
        };
        let data = vec![
            rec(0, vec![0, 1], 1.0),
            rec(0, vec![1, 0], 3.0),
            rec(1, vec![0, 2], 0.0f64),
        ];
        let m = fit_reward_model(&data, 1.0);
        let g = 4.0 / 3.0;
        assert!((m.predict(0, ItemSet::from_items(&[0, 1])) - (4.0 + g) / 3.0).abs() < 1e-15);
        assert!((m.predict(1, ItemSet::from_items(&[0, 2])) - g / 2.0).abs() < 1e-15);
        assert_eq!(m.predict(5, ItemSet::from_items(&[0, 2])), g);
        assert_eq!(m.provenance(), Provenance::FittedOnSplit);
    }
}
