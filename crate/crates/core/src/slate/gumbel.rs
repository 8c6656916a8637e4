use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_slate, ItemSet, SetSufficientPolicy};
use crate::error::{OpeError, Result};
use crate::mdp::trajectory_rng;
use crate::scalar::Scalar;

const CHUNK: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    /// Binomial standard error `sqrt(p̂(1 − p̂)/n)`.
    pub std_error: f64,
    pub n_samples: usize,
}

/// Monte Carlo slate propensity of a fixed-score Plackett–Luce policy: the
/// fraction of Gumbel-perturbed top-K draws equal to `slate` as a set.
pub fn gumbel_top_k_mc<T: Scalar>(
    logits: &[T],
    slate: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let m = logits.len();
    let target = check_slate(slate, m)?;
    let k = slate.len();
    if k == 0 || n_samples == 0 {
        return Err(OpeError::Config(
            "need a non-empty slate and at least one sample".into(),
        ));
    }
    let logits: Vec<f64> = logits.iter().map(|l| l.as_f64()).collect();
    let n_chunks = n_samples.div_ceil(CHUNK);
    let hits: usize = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = trajectory_rng(seed, c as u64);
            let len = CHUNK.min(n_samples - c * CHUNK);
            let mut keys = vec![(0.0f64, 0usize); m];
            let mut hits = 0usize;
            for _ in 0..len {
                for (i, key) in keys.iter_mut().enumerate() {
                    let u: f64 = rng.random();
                    // u ∈ [0, 1): 1 − u ∈ (0, 1] keeps both logs finite or +inf.
                    let g = -(-(1.0 - u).ln()).ln();
                    *key = (
                        if logits[i] == f64::NEG_INFINITY {
                            logits[i]
                        } else {
                            logits[i] + g
                        },
                        i,
                    );
                }
                if k < m {
                    keys.select_nth_unstable_by(k - 1, |a, b| b.0.total_cmp(&a.0));
                }
                let drawn = keys[..k]
                    .iter()
                    .fold(ItemSet::EMPTY, |s, &(_, i)| s.with(i));
                hits += usize::from(drawn == target);
            }
            hits
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let p = hits as f64 / n_samples as f64;
    Ok(McEstimate {
        estimate: p,
        std_error: (p * (1.0 - p) / n_samples as f64).sqrt(),
        n_samples,
    })
}

/// [`gumbel_top_k_mc`] on a policy's fixed scores; context-dependent
/// policies are unsupported.
pub fn gumbel_top_k_policy<T, P>(
    policy: &P,
    context: usize,
    slate: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate>
where
    T: Scalar,
    P: SetSufficientPolicy<T> + ?Sized,
{
    let scores = policy.fixed_scores(context).ok_or_else(|| {
        OpeError::Unsupported("Gumbel-top-K sampling needs a fixed-score policy".into())
    })?;
    gumbel_top_k_mc(&scores, slate, n_samples, seed)
}
