//! Unordered slate propensities for set-sufficient autoregressive slate policies.
//!
//! A slate policy picks `K` distinct items from a catalog of `M ≤ 64` items one
//! at a time. It is set-sufficient when the next-item distribution depends on
//! the picked prefix only through its set, which lets [`forward_dp`] sum over
//! all `K!` generation orders with one pass over the `2^K` subsets of a slate.
//!
//! Inside a [`SubsetFlowTable`], bit `j` of a mask stands for the `j`-th
//! smallest item of the slate.

mod enumerate;
mod forward_dp;
mod gumbel;
mod lattice;
mod policy;
mod table_io;

pub use enumerate::{
    enumerate_orderings, enumerate_orderings_with_guard, DEFAULT_ENUMERATION_GUARD,
};
pub use forward_dp::{
    forward_dp, verify_query_bound, DpOptions, DpOutput, QueryAudit, SpaceMode, SubsetFlowTable,
    LOG_SPACE_K, MAX_SLATE_SIZE,
};
pub use gumbel::{gumbel_top_k_mc, gumbel_top_k_policy, McEstimate};
pub use lattice::{binomial, full_lattice_flows, slate_rank, LatticeFlows, DEFAULT_LATTICE_BUDGET};
pub use policy::{
    ContextDependentPl, FixedScorePl, FnPolicy, OrderConditionedPolicy, PositionPerturbedPl,
    SetSufficientPolicy, UniformSlatePolicy,
};
pub use table_io::{read_subset_table, write_subset_table};

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};

/// Largest supported catalog.
pub const MAX_CATALOG: usize = 64;

/// A set of catalog items as a 64-bit mask.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct ItemSet(pub u64);

impl ItemSet {
    pub const EMPTY: ItemSet = ItemSet(0);

    pub fn from_items(items: &[usize]) -> Self {
        ItemSet(items.iter().fold(0u64, |m, &i| m | (1u64 << i)))
    }

    pub fn contains(self, item: usize) -> bool {
        item < 64 && self.0 >> item & 1 == 1
    }

    #[must_use]
    pub fn with(self, item: usize) -> Self {
        ItemSet(self.0 | (1u64 << item))
    }

    #[must_use]
    pub fn without(self, item: usize) -> Self {
        ItemSet(self.0 & !(1u64 << item))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Items in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            (rest != 0).then(|| {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                i
            })
        })
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }
}

/// Validates a slate against a catalog of size `m`.
pub(crate) fn check_slate(slate: &[usize], m: usize) -> Result<ItemSet> {
    if m > MAX_CATALOG {
        return Err(OpeError::Config(format!(
            "catalog size {m} exceeds {MAX_CATALOG}"
        )));
    }
    let mut set = ItemSet::EMPTY;
    for &item in slate {
        if item >= m {
            return Err(OpeError::Validation(format!(
                "item {item} outside catalog of {m}"
            )));
        }
        if set.contains(item) {
            return Err(OpeError::Validation(format!(
                "duplicate item {item} in slate"
            )));
        }
        set = set.with(item);
    }
    Ok(set)
}
