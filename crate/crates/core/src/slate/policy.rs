use super::ItemSet;
use crate::scalar::Scalar;

/// Autoregressive slate policy whose next-item law depends on the picked
/// prefix only through its set.
pub trait SetSufficientPolicy<T: Scalar>: Send + Sync {
    fn catalog_size(&self) -> usize;

    /// `μ(· | x, S)`: a vector of length `M`, zero on `picked`, summing to 1.
    fn next_item_dist(&self, context: usize, picked: ItemSet) -> Vec<T>;

    /// Per-item logits when the policy is a fixed-score Plackett–Luce model,
    /// so that Gumbel-top-K sampling applies.
    fn fixed_scores(&self, _context: usize) -> Option<Vec<T>> {
        None
    }
}

/// Slate policy whose next-item law may depend on the order of the prefix.
pub trait OrderConditionedPolicy<T: Scalar>: Send + Sync {
    fn catalog_size(&self) -> usize;

    /// `μ(· | x, σ_{<t})`: zero on prefix items, summing to 1.
    fn next_item_dist_ordered(&self, context: usize, prefix: &[usize]) -> Vec<T>;
}

impl<T: Scalar, P: SetSufficientPolicy<T> + ?Sized> OrderConditionedPolicy<T> for P {
    fn catalog_size(&self) -> usize {
        SetSufficientPolicy::catalog_size(self)
    }

    fn next_item_dist_ordered(&self, context: usize, prefix: &[usize]) -> Vec<T> {
        self.next_item_dist(context, ItemSet::from_items(prefix))
    }
}

/// Softmax of `logits` restricted to items outside `picked`.
fn masked_softmax<T: Scalar>(logits: &[T], picked: ItemSet) -> Vec<T> {
    let hi = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| !picked.contains(*i))
        .map(|(_, &l)| l)
        .fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if picked.contains(i) || l == T::neg_infinity() {
                T::zero()
            } else {
                (l - hi).exp()
            }
        })
        .collect();
    let total: T = out.iter().copied().sum();
    if total > T::zero() {
        for p in &mut out {
            *p = *p / total;
        }
    }
    out
}

/// Plackett–Luce policy with per-(context, item) logits and a temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedScorePl<T> {
    /// `logits[x][i] / temperature`.
    scaled: Vec<Vec<T>>,
}

impl<T: Scalar> FixedScorePl<T> {
    /// `μ(a | x, S) ∝ exp(ℓ(x, a) / temperature)` over `a ∉ S`.
    pub fn from_logits(logits: Vec<Vec<T>>, temperature: T) -> Self {
        assert!(temperature > T::zero(), "temperature must be positive");
        let m = logits.first().map_or(0, Vec::len);
        assert!(logits.iter().all(|l| l.len() == m), "ragged logit table");
        let scaled = logits
            .into_iter()
            .map(|row| row.into_iter().map(|l| l / temperature).collect())
            .collect();
        FixedScorePl { scaled }
    }

    /// Step probabilities proportional to non-negative item weights.
    pub fn from_weights(weights: Vec<Vec<T>>) -> Self {
        let logits = weights
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|w| {
                        assert!(w >= T::zero(), "negative weight");
                        if w == T::zero() {
                            T::neg_infinity()
                        } else {
                            w.ln()
                        }
                    })
                    .collect()
            })
            .collect();
        FixedScorePl::from_logits(logits, T::one())
    }

    pub fn num_contexts(&self) -> usize {
        self.scaled.len()
    }
}

impl<T: Scalar> SetSufficientPolicy<T> for FixedScorePl<T> {
    fn catalog_size(&self) -> usize {
        self.scaled.first().map_or(0, Vec::len)
    }

    fn next_item_dist(&self, context: usize, picked: ItemSet) -> Vec<T> {
        masked_softmax(&self.scaled[context % self.scaled.len()], picked)
    }

    fn fixed_scores(&self, context: usize) -> Option<Vec<T>> {
        Some(self.scaled[context % self.scaled.len()].clone())
    }
}

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in `[-1, 1)` from hashed keys.
fn hashed_unit(keys: &[u64]) -> f64 {
    let h = keys.iter().fold(0u64, |acc, &k| mix64(acc ^ mix64(k)));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Plackett–Luce-style policy whose logits depend on the picked set:
/// `ℓ(x, S, a) = base(x, a) + scale · u(seed, x, S, a)` with `u` a hashed
/// uniform on `[-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextDependentPl<T> {
    base: Vec<Vec<T>>,
    scale: T,
    seed: u64,
}

impl<T: Scalar> ContextDependentPl<T> {
    pub fn new(base: Vec<Vec<T>>, scale: T, seed: u64) -> Self {
        ContextDependentPl { base, scale, seed }
    }

    /// Seeded random base logits in `[-1, 1)` over `num_contexts × m`.
    pub fn random(m: usize, num_contexts: usize, scale: T, seed: u64) -> Self {
        let base = (0..num_contexts)
            .map(|x| {
                (0..m)
                    .map(|a| T::lit(hashed_unit(&[seed, 0xBA5E, x as u64, a as u64])))
                    .collect()
            })
            .collect();
        ContextDependentPl::new(base, scale, seed)
    }

    fn logits(&self, context: usize, picked: ItemSet) -> Vec<T> {
        let x = context % self.base.len();
        self.base[x]
            .iter()
            .enumerate()
            .map(|(a, &b)| {
                let u = hashed_unit(&[self.seed, x as u64, picked.0, a as u64]);
                b + self.scale * T::lit(u)
            })
            .collect()
    }
}

impl<T: Scalar> SetSufficientPolicy<T> for ContextDependentPl<T> {
    fn catalog_size(&self) -> usize {
        self.base.first().map_or(0, Vec::len)
    }

    fn next_item_dist(&self, context: usize, picked: ItemSet) -> Vec<T> {
        masked_softmax(&self.logits(context, picked), picked)
    }
}

/// Set-sufficient policy defined by a closure.
pub struct FnPolicy<F> {
    m: usize,
    f: F,
}

impl<F> FnPolicy<F> {
    pub fn new(m: usize, f: F) -> Self {
        FnPolicy { m, f }
    }
}

impl<T, F> SetSufficientPolicy<T> for FnPolicy<F>
where
    T: Scalar,
    F: Fn(usize, ItemSet) -> Vec<T> + Send + Sync,
{
    fn catalog_size(&self) -> usize {
        self.m
    }

    fn next_item_dist(&self, context: usize, picked: ItemSet) -> Vec<T> {
        (self.f)(context, picked)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformSlatePolicy {
    pub m: usize,
}

impl<T: Scalar> SetSufficientPolicy<T> for UniformSlatePolicy {
    fn catalog_size(&self) -> usize {
        self.m
    }

    fn next_item_dist(&self, _context: usize, picked: ItemSet) -> Vec<T> {
        let p = T::one() / T::count(self.m - picked.len());
        (0..self.m)
            .map(|i| if picked.contains(i) { T::zero() } else { p })
            .collect()
    }

    fn fixed_scores(&self, _context: usize) -> Option<Vec<T>> {
        Some(vec![T::zero(); self.m])
    }
}

/// Plackett–Luce logger whose logits are perturbed by where earlier items sit
/// in the prefix: `ℓ(a) + ε · Σ_j (j+1) · u(σ_j, a)`. Order-conditioned for
/// `ε ≠ 0`; reduces to the base policy at `ε = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionPerturbedPl<T> {
    base: FixedScorePl<T>,
    epsilon: T,
    seed: u64,
}

impl<T: Scalar> PositionPerturbedPl<T> {
    pub fn new(base: FixedScorePl<T>, epsilon: T, seed: u64) -> Self {
        PositionPerturbedPl {
            base,
            epsilon,
            seed,
        }
    }
}

impl<T: Scalar> PositionPerturbedPl<T> {
    fn dist(&self, context: usize, prefix: &[usize]) -> Vec<T> {
        let mut logits = self.base.fixed_scores(context).expect("fixed-score base");
        for (a, l) in logits.iter_mut().enumerate() {
            let shift: f64 = prefix
                .iter()
                .enumerate()
                .map(|(j, &b)| (j + 1) as f64 * hashed_unit(&[self.seed, b as u64, a as u64]))
                .sum();
            *l = *l + self.epsilon * T::lit(shift);
        }
        masked_softmax(&logits, ItemSet::from_items(prefix))
    }
}

// Concrete impls: a generic one would overlap the blanket impl for
// set-sufficient policies.
macro_rules! position_perturbed_impl {
    ($($t:ty),*) => {$(
        impl OrderConditionedPolicy<$t> for PositionPerturbedPl<$t> {
            fn catalog_size(&self) -> usize {
                SetSufficientPolicy::catalog_size(&self.base)
            }

            fn next_item_dist_ordered(&self, context: usize, prefix: &[usize]) -> Vec<$t> {
                self.dist(context, prefix)
            }
        }
    )*};
}

position_perturbed_impl!(f32, f64);
