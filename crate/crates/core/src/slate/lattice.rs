use serde::{Deserialize, Serialize};

use super::{ItemSet, SetSufficientPolicy, MAX_CATALOG};
use crate::error::{OpeError, Result};
use crate::scalar::Scalar;

/// Default cap on `C(M, K)` for full-lattice computations.
pub const DEFAULT_LATTICE_BUDGET: u64 = 200_000;

/// `C(n, k)`, saturating at `u64::MAX`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Flows `F_μ^x(S)` over every subset with `|S| ≤ K` of an `M`-item catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LatticeFlows<T> {
    pub m: usize,
    pub k: usize,
    /// `levels[l][r]` is the flow of the size-`l` subset with colex rank `r`.
    pub levels: Vec<Vec<T>>,
    /// `P(d ∈ S)` for a size-`K` slate, per item `d`.
    pub inclusion_marginals: Vec<T>,
    /// Number of `next_item_dist` calls made.
    pub queries: usize,
}

/// Colex rank of a set among the subsets of the same size: the position of
/// `set` in [`LatticeFlows::slates`] when `|set| = K`.
pub fn slate_rank(set: ItemSet) -> usize {
    colex_rank(set)
}

fn colex_rank(set: ItemSet) -> usize {
    set.iter()
        .enumerate()
        .map(|(i, pos)| binomial(pos, i + 1) as usize)
        .sum()
}

/// Size-`l` subsets of `0..m` in colex order.
fn subsets_of_size(m: usize, l: usize) -> impl Iterator<Item = ItemSet> {
    let mut next = if l > m {
        None
    } else if l == 0 {
        Some(0u64)
    } else {
        Some(u64::MAX >> (64 - l))
    };
    std::iter::from_fn(move || {
        let s = next?;
        next = if s == 0 {
            None
        } else {
            let c = s & s.wrapping_neg();
            let r = s.wrapping_add(c);
            if r == 0 {
                None
            } else {
                let n = (((r ^ s) >> 2) / c) | r;
                (m == 64 || n < 1u64 << m).then_some(n)
            }
        };
        Some(ItemSet(s))
    })
}

impl<T: Scalar> LatticeFlows<T> {
    pub fn flow(&self, set: ItemSet) -> T {
        self.levels[set.len()][colex_rank(set)]
    }

    /// `(S, F(S))` over the size-`K` slates.
    pub fn slates(&self) -> impl Iterator<Item = (ItemSet, T)> + '_ {
        subsets_of_size(self.m, self.k).zip(self.levels[self.k].iter().copied())
    }

    /// Total flow of the size-`K` slates in each class of `class_of`.
    pub fn class_masses(&self, num_classes: usize, class_of: impl Fn(ItemSet) -> usize) -> Vec<T> {
        let mut out = vec![T::zero(); num_classes];
        for (s, f) in self.slates() {
            let c = class_of(s);
            out[c] = out[c] + f;
        }
        out
    }
}

/// Forward flows over the whole size-`≤ K` subset lattice plus inclusion
/// marginals, refusing when `C(M, K)` exceeds `budget`.
pub fn full_lattice_flows<T, P>(
    policy: &P,
    context: usize,
    k: usize,
    budget: u64,
) -> Result<LatticeFlows<T>>
where
    T: Scalar,
    P: SetSufficientPolicy<T> + ?Sized,
{
    let m = policy.catalog_size();
    if m > MAX_CATALOG || k == 0 || k > m {
        return Err(OpeError::Validation(format!(
            "need 1 <= K <= M <= 64, got K={k}, M={m}"
        )));
    }
    let need = binomial(m, k);
    if need > budget {
        return Err(OpeError::Refused {
            what: format!("full lattice for M={m}, K={k}"),
            required: format!("{need} subsets"),
            limit: budget.to_string(),
        });
    }
    let mut levels: Vec<Vec<T>> = (0..=k)
        .map(|l| vec![T::zero(); binomial(m, l) as usize])
        .collect();
    levels[0][0] = T::one();
    let mut queries = 0;
    for l in 0..k {
        let (lower, upper) = levels.split_at_mut(l + 1);
        let (here, next) = (&lower[l], &mut upper[0]);
        for (rank, set) in subsets_of_size(m, l).enumerate() {
            let f = here[rank];
            if f == T::zero() {
                continue;
            }
            let dist = policy.next_item_dist(context, set);
            queries += 1;
            for (a, &p) in dist.iter().enumerate() {
                if set.contains(a) || !(p > T::zero()) {
                    continue;
                }
                let to = colex_rank(set.with(a));
                next[to] = next[to] + f * p;
            }
        }
    }
    let mut inclusion = vec![T::zero(); m];
    for (set, f) in subsets_of_size(m, k).zip(levels[k].iter()) {
        for d in set.iter() {
            inclusion[d] = inclusion[d] + *f;
        }
    }
    Ok(LatticeFlows {
        m,
        k,
        levels,
        inclusion_marginals: inclusion,
        queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slate::{
        enumerate_orderings, forward_dp, ContextDependentPl, DpOptions, FixedScorePl,
        UniformSlatePolicy,
    };

    #[test]
    fn binomials() {
        assert_eq!(binomial(15, 4), 1365);
        assert_eq!(binomial(4, 5), 0);
        assert_eq!(binomial(64, 32), 1_832_624_140_942_590_534);
    }

    #[test]
    fn colex_enumeration_is_ranked() {
        for l in 0..=7 {
            let sets: Vec<ItemSet> = subsets_of_size(7, l).collect();
            assert_eq!(sets.len() as u64, binomial(7, l));
            for (r, s) in sets.iter().enumerate() {
                assert_eq!(s.len(), l);
                assert_eq!(colex_rank(*s), r);
            }
        }
    }

    #[test]
    fn uniform_lattice() {
        let lf: LatticeFlows<f64> =
            full_lattice_flows(&UniformSlatePolicy { m: 4 }, 0, 2, DEFAULT_LATTICE_BUDGET).unwrap();
        for (_, f) in lf.slates() {
            assert!((f - 1.0 / 6.0).abs() < 1e-15);
        }
        for &p in &lf.inclusion_marginals {
            assert!((p - 0.5).abs() < 1e-15);
        }
        let lf: LatticeFlows<f64> =
            full_lattice_flows(&UniformSlatePolicy { m: 3 }, 0, 3, DEFAULT_LATTICE_BUDGET).unwrap();
        assert!((lf.levels[3][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn marginals_match_enumeration() {
        let pl = FixedScorePl::from_weights(vec![vec![0.5, 0.3, 0.2]]);
        let lf: LatticeFlows<f64> = full_lattice_flows(&pl, 0, 2, DEFAULT_LATTICE_BUDGET).unwrap();
        let p = |s: &[usize]| enumerate_orderings::<f64, _>(&pl, 0, s).unwrap();
        assert!((lf.inclusion_marginals[0] - (p(&[0, 1]) + p(&[0, 2]))).abs() < 1e-15);
        assert!((lf.inclusion_marginals[2] - (p(&[0, 2]) + p(&[1, 2]))).abs() < 1e-15);
    }

    #[test]
    fn lattice_agrees_with_forward_dp() {
        let pl = ContextDependentPl::<f64>::random(7, 2, 1.0, 4);
        let lf: LatticeFlows<f64> = full_lattice_flows(&pl, 1, 3, DEFAULT_LATTICE_BUDGET).unwrap();
        let total: f64 = lf.slates().map(|(_, f)| f).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((lf.inclusion_marginals.iter().sum::<f64>() - 3.0).abs() < 1e-12);
        for (s, f) in lf.slates() {
            let d = forward_dp(&pl, 1, &s.to_vec(), DpOptions::default())
                .unwrap()
                .propensity;
            assert!((d - f).abs() < 1e-12);
            assert_eq!(lf.flow(s), f);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let err = full_lattice_flows::<f64, _>(
            &UniformSlatePolicy { m: 30 },
            0,
            10,
            DEFAULT_LATTICE_BUDGET,
        )
        .unwrap_err();
        assert!(matches!(err, OpeError::Refused { .. }));
    }
}
