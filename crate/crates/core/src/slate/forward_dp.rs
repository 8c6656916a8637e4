use serde::{Deserialize, Serialize};

use super::{check_slate, ItemSet, SetSufficientPolicy};
use crate::error::{OpeError, Result};
use crate::scalar::{log_add_exp, Scalar};

/// Largest slate the subset table is allocated for (`2^24` entries).
pub const MAX_SLATE_SIZE: usize = 24;

/// Above this slate size [`SpaceMode::Auto`] works in log space.
pub const LOG_SPACE_K: usize = 16;

/// Partial flows below this (in linear space) trigger a log-space rerun under
/// [`SpaceMode::Auto`].
const UNDERFLOW_GUARD: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceMode {
    Linear,
    Log,
    /// Linear unless `K > 16` or a partial flow underflows the guard.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DpOptions {
    pub space: SpaceMode,
    /// Memoize `next_item_dist` per picked set. Without the cache each flow
    /// pulls from its predecessors and re-queries the policy per edge.
    pub cache: bool,
}

impl Default for DpOptions {
    fn default() -> Self {
        DpOptions {
            space: SpaceMode::Auto,
            cache: true,
        }
    }
}

/// `F_μ^x(S(m))` for every mask `m` over the items of one slate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SubsetFlowTable<T> {
    /// Slate items in ascending order; bit `j` of a mask is `slate_items[j]`.
    pub slate_items: Vec<usize>,
    pub log_space: bool,
    /// Length `2^K`; log flows when `log_space`.
    pub flow: Vec<T>,
}

impl<T: Scalar> SubsetFlowTable<T> {
    pub fn k(&self) -> usize {
        self.slate_items.len()
    }

    pub fn full_mask(&self) -> usize {
        (1usize << self.k()) - 1
    }

    /// Catalog item set of a mask.
    pub fn items_of(&self, mask: usize) -> ItemSet {
        mask_to_set(&self.slate_items, mask)
    }

    /// Linear-space flow of a mask.
    pub fn linear(&self, mask: usize) -> T {
        if self.log_space {
            self.flow[mask].exp()
        } else {
            self.flow[mask]
        }
    }

    pub fn propensity(&self) -> T {
        self.linear(self.full_mask())
    }

    pub fn log_propensity(&self) -> T {
        let v = self.flow[self.full_mask()];
        if self.log_space {
            v
        } else {
            v.ln()
        }
    }
}

/// Record of the picked sets passed to `next_item_dist`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAudit {
    /// `queried[m]` is set when mask `m` was passed to the policy.
    pub queried: Vec<bool>,
    /// Total number of policy calls, repeated sets included.
    pub count: usize,
}

impl QueryAudit {
    fn new(k: usize) -> Self {
        QueryAudit {
            queried: vec![false; 1 << k],
            count: 0,
        }
    }

    pub fn distinct(&self) -> usize {
        self.queried.iter().filter(|&&q| q).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpOutput<T> {
    pub propensity: T,
    pub table: SubsetFlowTable<T>,
    pub audit: QueryAudit,
    /// A linear pass underflowed and was redone in log space.
    pub escalated: bool,
}

fn mask_to_set(items: &[usize], mask: usize) -> ItemSet {
    let mut set = ItemSet::EMPTY;
    let mut rest = mask;
    while rest != 0 {
        let j = rest.trailing_zeros() as usize;
        set = set.with(items[j]);
        rest &= rest - 1;
    }
    set
}

/// Masks of `0..2^k` grouped by popcount, ascending within each group.
fn masks_by_popcount(k: usize) -> impl Iterator<Item = usize> {
    (0..=k).flat_map(move |level| {
        let mut next = if level == 0 {
            Some(0usize)
        } else {
            Some((1usize << level) - 1)
        };
        std::iter::from_fn(move || {
            let m = next?;
            next = if m == 0 {
                None
            } else {
                // Gosper's hack: next integer with the same popcount.
                let c = m & m.wrapping_neg();
                let r = m + c;
                let n = (((r ^ m) >> 2) / c) | r;
                (n < 1usize << k).then_some(n)
            };
            Some(m)
        })
    })
}

struct Query<'a, T, P: ?Sized> {
    policy: &'a P,
    context: usize,
    items: &'a [usize],
    audit: QueryAudit,
    _t: std::marker::PhantomData<T>,
}

impl<T: Scalar, P: SetSufficientPolicy<T> + ?Sized> Query<'_, T, P> {
    /// Next-item probabilities of the slate's items given the picked mask.
    fn ask(&mut self, mask: usize) -> Result<Vec<T>> {
        self.audit.count += 1;
        self.audit.queried[mask] = true;
        let dist = self
            .policy
            .next_item_dist(self.context, mask_to_set(self.items, mask));
        if dist.len() != self.policy.catalog_size() {
            return Err(OpeError::Validation(format!(
                "next_item_dist returned {} entries for a catalog of {}",
                dist.len(),
                self.policy.catalog_size()
            )));
        }
        Ok(self
            .items
            .iter()
            .map(|&i| {
                let p = dist[i];
                if p.is_finite() && p > T::zero() {
                    p
                } else {
                    T::zero()
                }
            })
            .collect())
    }
}

/// Exact unordered slate propensity `μ(S | x)` by the forward subset recursion
/// `F(S) = Σ_{a∈S} F(S∖a) · μ(a | x, S∖a)`, `F(∅) = 1`.
///
/// With the cache on, every proper subset of the slate is passed to the
/// policy exactly once (`2^K − 1` queries).
pub fn forward_dp<T, P>(
    policy: &P,
    context: usize,
    slate: &[usize],
    options: DpOptions,
) -> Result<DpOutput<T>>
where
    T: Scalar,
    P: SetSufficientPolicy<T> + ?Sized,
{
    let k = slate.len();
    if k == 0 || k > MAX_SLATE_SIZE {
        return Err(OpeError::Validation(format!(
            "slate size {k} outside 1..={MAX_SLATE_SIZE}"
        )));
    }
    check_slate(slate, policy.catalog_size())?;
    let mut items = slate.to_vec();
    items.sort_unstable();
    let log = match options.space {
        SpaceMode::Linear => false,
        SpaceMode::Log => true,
        SpaceMode::Auto => k > LOG_SPACE_K,
    };
    let mut q = Query {
        policy,
        context,
        items: &items,
        audit: QueryAudit::new(k),
        _t: std::marker::PhantomData,
    };
    let (flow, underflow) = run(&mut q, k, log, options.cache)?;
    let (flow, log, escalated) = if underflow && options.space == SpaceMode::Auto {
        q.audit = QueryAudit::new(k);
        (run(&mut q, k, true, options.cache)?.0, true, true)
    } else {
        (flow, log, false)
    };
    let table = SubsetFlowTable {
        slate_items: items.clone(),
        log_space: log,
        flow,
    };
    Ok(DpOutput {
        propensity: table.propensity(),
        table,
        audit: q.audit,
        escalated,
    })
}

/// One pass; also reports whether a positive linear flow fell below the guard.
fn run<T: Scalar, P: SetSufficientPolicy<T> + ?Sized>(
    q: &mut Query<'_, T, P>,
    k: usize,
    log: bool,
    cache: bool,
) -> Result<(Vec<T>, bool)> {
    let full = (1usize << k) - 1;
    let zero = if log { T::neg_infinity() } else { T::zero() };
    let mut flow = vec![zero; 1 << k];
    flow[0] = if log { T::zero() } else { T::one() };
    let guard = T::lit(UNDERFLOW_GUARD).max(T::min_positive_value());
    let mut underflow = false;
    if cache {
        // Push each finished flow along its out-edges; predecessors of a mask
        // all have smaller popcount, so they are final before it is visited.
        for mask in masks_by_popcount(k) {
            if mask == full {
                continue;
            }
            let probs = q.ask(mask)?;
            let here = flow[mask];
            for (j, &p) in probs.iter().enumerate() {
                if mask >> j & 1 == 1 {
                    continue;
                }
                let to = mask | 1 << j;
                if log {
                    flow[to] = log_add_exp(flow[to], here + p.ln());
                } else {
                    let add = here * p;
                    if here > T::zero() && p > T::zero() && add < guard {
                        underflow = true;
                    }
                    flow[to] = flow[to] + add;
                }
            }
        }
    } else {
        for mask in masks_by_popcount(k).skip(1) {
            let mut acc = zero;
            let mut rest = mask;
            while rest != 0 {
                let j = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                let from = mask & !(1 << j);
                let p = q.ask(from)?[j];
                if log {
                    acc = log_add_exp(acc, flow[from] + p.ln());
                } else {
                    let add = flow[from] * p;
                    if flow[from] > T::zero() && p > T::zero() && add < guard {
                        underflow = true;
                    }
                    acc = acc + add;
                }
            }
            flow[mask] = acc;
        }
    }
    Ok((flow, underflow))
}

/// `(observed, bound)` policy queries for one slate with caching on; the two
/// agree at `2^K − 1`.
pub fn verify_query_bound<T, P>(
    policy: &P,
    context: usize,
    slate: &[usize],
) -> Result<(usize, usize)>
where
    T: Scalar,
    P: SetSufficientPolicy<T> + ?Sized,
{
    let out: DpOutput<T> = forward_dp(policy, context, slate, DpOptions::default())?;
    Ok((out.audit.count, (1usize << slate.len()) - 1))
}
