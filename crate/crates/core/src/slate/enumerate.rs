use super::{check_slate, OrderConditionedPolicy};
use crate::error::{OpeError, Result};
use crate::scalar::Scalar;

/// Default cap on the slate size for `K!` enumeration.
pub const DEFAULT_ENUMERATION_GUARD: usize = 10;

/// `μ(S | x)` as the sum over all `K!` orderings of the product of next-item
/// probabilities, for slates up to [`DEFAULT_ENUMERATION_GUARD`].
pub fn enumerate_orderings<T, P>(policy: &P, context: usize, slate: &[usize]) -> Result<T>
where
    T: Scalar,
    P: OrderConditionedPolicy<T> + ?Sized,
{
    enumerate_orderings_with_guard(policy, context, slate, DEFAULT_ENUMERATION_GUARD)
}

pub fn enumerate_orderings_with_guard<T, P>(
    policy: &P,
    context: usize,
    slate: &[usize],
    max_k: usize,
) -> Result<T>
where
    T: Scalar,
    P: OrderConditionedPolicy<T> + ?Sized,
{
    let k = slate.len();
    if k > max_k {
        let cost: f64 = (1..=k).map(|i| i as f64).product();
        return Err(OpeError::Refused {
            what: format!("enumerating orderings of a size-{k} slate"),
            required: format!("{cost:.3e} orderings"),
            limit: format!("K <= {max_k}"),
        });
    }
    if k == 0 {
        return Err(OpeError::Validation("empty slate".into()));
    }
    check_slate(slate, policy.catalog_size())?;
    let mut prefix = Vec::with_capacity(k);
    let mut used = vec![false; k];
    Ok(visit(
        policy,
        context,
        slate,
        &mut prefix,
        &mut used,
        T::one(),
    ))
}

fn visit<T: Scalar, P: OrderConditionedPolicy<T> + ?Sized>(
    policy: &P,
    context: usize,
    slate: &[usize],
    prefix: &mut Vec<usize>,
    used: &mut [bool],
    mass: T,
) -> T {
    if prefix.len() == slate.len() {
        return mass;
    }
    let dist = policy.next_item_dist_ordered(context, prefix);
    let mut total = T::zero();
    for j in 0..slate.len() {
        if used[j] {
            continue;
        }
        let p = dist[slate[j]];
        if p <= T::zero() {
            continue;
        }
        used[j] = true;
        prefix.push(slate[j]);
        total = total + visit(policy, context, slate, prefix, used, mass * p);
        prefix.pop();
        used[j] = false;
    }
    total
}
