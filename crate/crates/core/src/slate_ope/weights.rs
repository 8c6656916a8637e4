use std::fmt;
use std::sync::Arc;

use super::SlateRecord;
use crate::error::{OpeError, Result};
use crate::scalar::Scalar;
use crate::slate::{
    binomial, forward_dp, full_lattice_flows, slate_rank, DpOptions, ItemSet, LatticeFlows,
    OrderConditionedPolicy, SetSufficientPolicy,
};

/// Class function `c(S)` for class-marginalized (OPCB) weights.
#[derive(Clone)]
pub enum SlateClasses {
    /// Every slate is its own class.
    Identity,
    /// A single class holding every slate.
    Constant,
    /// Two classes: slates containing the item (class 1) or not (class 0).
    ContainsItem(usize),
    Custom {
        num_classes: usize,
        class_of: Arc<dyn Fn(usize, ItemSet) -> usize + Send + Sync>,
    },
}

impl fmt::Debug for SlateClasses {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlateClasses::Identity => f.write_str("Identity"),
            SlateClasses::Constant => f.write_str("Constant"),
            SlateClasses::ContainsItem(d) => write!(f, "ContainsItem({d})"),
            SlateClasses::Custom { num_classes, .. } => write!(f, "Custom({num_classes} classes)"),
        }
    }
}

impl SlateClasses {
    pub fn num_classes(&self, m: usize, k: usize) -> usize {
        match self {
            SlateClasses::Identity => binomial(m, k) as usize,
            SlateClasses::Constant => 1,
            SlateClasses::ContainsItem(_) => 2,
            SlateClasses::Custom { num_classes, .. } => *num_classes,
        }
    }

    pub fn class_of(&self, context: usize, slate: ItemSet) -> usize {
        match self {
            SlateClasses::Identity => slate_rank(slate),
            SlateClasses::Constant => 0,
            SlateClasses::ContainsItem(d) => usize::from(slate.contains(*d)),
            SlateClasses::Custom { class_of, .. } => class_of(context, slate),
        }
    }

    /// Class probabilities `P_μ(c | x)` from lattice flows, normalized by the
    /// total size-`K` mass so that a single class has probability exactly 1.
    pub(crate) fn masses<T: Scalar>(
        &self,
        context: usize,
        lattice: &LatticeFlows<T>,
    ) -> Result<Vec<T>> {
        let n = self.num_classes(lattice.m, lattice.k);
        let mut out = vec![T::zero(); n];
        for (s, f) in lattice.slates() {
            let c = self.class_of(context, s);
            if c >= n {
                return Err(OpeError::Validation(format!("class {c} outside 0..{n}")));
            }
            out[c] = out[c] + f;
        }
        let total: T = out.iter().copied().sum();
        if total > T::zero() {
            for m in &mut out {
                *m = *m / total;
            }
        }
        Ok(out)
    }
}

/// `p / b`, `None` when both vanish, a support violation when only `b` does.
pub(crate) fn guarded_ratio<T: Scalar>(
    p: T,
    b: T,
    location: impl FnOnce() -> String,
) -> Result<Option<T>> {
    if b > T::zero() {
        Ok(Some(p / b))
    } else if p > T::zero() {
        Err(OpeError::support(location(), p.as_f64(), b.as_f64()))
    } else {
        Ok(None)
    }
}

/// Ordered tree weight `Π_t π(σ_t | σ_{<t}) / β(σ_t | σ_{<t})` along the logged order.
pub fn tree_weight<T, P, Q>(record: &SlateRecord<T>, target: &P, behavior: &Q) -> Result<T>
where
    T: Scalar,
    P: OrderConditionedPolicy<T> + ?Sized,
    Q: OrderConditionedPolicy<T> + ?Sized,
{
    let mut w = T::one();
    for t in 0..record.ordering.len() {
        let prefix = &record.ordering[..t];
        let item = record.ordering[t];
        let p = target.next_item_dist_ordered(record.context, prefix)[item];
        let b = behavior.next_item_dist_ordered(record.context, prefix)[item];
        if !(b > T::zero()) {
            return Err(OpeError::support(
                format!("context {}, step {t}, item {item}", record.context),
                p.as_f64(),
                b.as_f64(),
            ));
        }
        w = w * (p / b);
    }
    Ok(w)
}

/// Forward-flow weight `F_π(S) / F_β(S)`; the logged order is ignored.
/// `None` when both propensities vanish.
pub fn ff_weight<T, P, Q>(record: &SlateRecord<T>, target: &P, behavior: &Q) -> Result<Option<T>>
where
    T: Scalar,
    P: SetSufficientPolicy<T> + ?Sized,
    Q: SetSufficientPolicy<T> + ?Sized,
{
    let p = forward_dp(
        target,
        record.context,
        &record.ordering,
        DpOptions::default(),
    )?
    .propensity;
    let b = forward_dp(
        behavior,
        record.context,
        &record.ordering,
        DpOptions::default(),
    )?
    .propensity;
    guarded_ratio(p, b, || slate_location(record))
}

pub(crate) fn slate_location<T: Scalar>(record: &SlateRecord<T>) -> String {
    format!(
        "context {}, slate {:?}",
        record.context,
        record.slate().to_vec()
    )
}

/// Product of inclusion-marginal ratios `Π_{d∈S} π_incl(d|x) / β_incl(d|x)`.
/// Not the joint slate ratio in general, so estimators built on it are biased.
pub fn dp_mpl_weight<T, P, Q>(
    record: &SlateRecord<T>,
    target: &P,
    behavior: &Q,
    budget: u64,
) -> Result<Option<T>>
where
    T: Scalar,
    P: SetSufficientPolicy<T> + ?Sized,
    Q: SetSufficientPolicy<T> + ?Sized,
{
    let k = record.ordering.len();
    let lp = full_lattice_flows(target, record.context, k, budget)?;
    let lb = full_lattice_flows(behavior, record.context, k, budget)?;
    mpl_from_marginals(record, &lp.inclusion_marginals, &lb.inclusion_marginals)
}

pub(crate) fn mpl_from_marginals<T: Scalar>(
    record: &SlateRecord<T>,
    pi: &[T],
    beta: &[T],
) -> Result<Option<T>> {
    let mut w = T::one();
    for d in record.slate().iter() {
        match guarded_ratio(pi[d], beta[d], || {
            format!("context {}, inclusion of item {d}", record.context)
        })? {
            Some(r) => w = w * r,
            None => return Ok(None),
        }
    }
    Ok(Some(w))
}

/// Class weight `P_π(c(S) | x) / P_β(c(S) | x)`.
pub fn dp_opcb_weight<T, P, Q>(
    record: &SlateRecord<T>,
    target: &P,
    behavior: &Q,
    classes: &SlateClasses,
    budget: u64,
) -> Result<Option<T>>
where
    T: Scalar,
    P: SetSufficientPolicy<T> + ?Sized,
    Q: SetSufficientPolicy<T> + ?Sized,
{
    let k = record.ordering.len();
    let mp = classes.masses(
        record.context,
        &full_lattice_flows(target, record.context, k, budget)?,
    )?;
    let mb = classes.masses(
        record.context,
        &full_lattice_flows(behavior, record.context, k, budget)?,
    )?;
    let c = classes.class_of(record.context, record.slate());
    guarded_ratio(mp[c], mb[c], || {
        format!("context {}, class {c}", record.context)
    })
}
