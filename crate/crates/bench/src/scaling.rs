//! Slate propensity cost: forward DP against `K!` enumeration and Gumbel
//! sampling.
//!
//! The `scaling` table holds deterministic columns only (policy query counts,
//! agreement with the DP, status); wall-clock times go to a separate
//! `timing` table.

use std::time::Instant;

use flowis::mdp::trajectory_rng;
use flowis::slate::{enumerate_orderings_with_guard, forward_dp, gumbel_top_k_policy, DpOptions};
use flowis::slate_ope::sample_ordering;
use flowis::OpeError;

use crate::config::ScalingSection;
use crate::emit::{Cell, Table};
use crate::error::{BenchError, Result};
use crate::world::{derive_seed, slate_policy, SlatePolicy, SlateWorld};

/// Minimum measured span per slate before a timing is reported.
const MIN_SPAN_SECS: f64 = 2e-3;

/// Policy calls made by `K!` enumeration: one per internal node of the
/// ordering tree, `Σ_{j<K} K!/(K−j)!`.
pub fn enumeration_queries(k: usize) -> f64 {
    let mut total = 0.0;
    let mut falling = 1.0;
    for j in 0..k {
        total += falling;
        falling *= (k - j) as f64;
    }
    total
}

/// Mean seconds per call of `f`, repeating until [`MIN_SPAN_SECS`] elapses.
pub fn time_per_call<R>(mut f: impl FnMut() -> R) -> (f64, R) {
    let start = Instant::now();
    let mut out = f();
    let mut reps = 1u32;
    while start.elapsed().as_secs_f64() < MIN_SPAN_SECS {
        out = f();
        reps += 1;
    }
    (start.elapsed().as_secs_f64() / reps as f64, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingOutput {
    pub scaling: Table,
    pub timing: Table,
}

#[derive(Default)]
struct MethodAcc {
    queries: f64,
    max_diff: f64,
    seconds: f64,
    n: usize,
}

impl MethodAcc {
    fn add(&mut self, queries: f64, diff: f64, seconds: f64) {
        self.queries += queries;
        self.max_diff = self.max_diff.max(diff);
        self.seconds += seconds;
        self.n += 1;
    }

    fn mean_queries(&self) -> f64 {
        self.queries / self.n.max(1) as f64
    }

    fn mean_seconds(&self) -> f64 {
        self.seconds / self.n.max(1) as f64
    }
}

/// Test slates for size `k`: orderings drawn from the policy itself.
fn test_slates(
    policy: &SlatePolicy,
    num_contexts: usize,
    k: usize,
    n: usize,
    seed: u64,
) -> Vec<(usize, Vec<usize>)> {
    (0..n)
        .map(|s| {
            let mut rng = trajectory_rng(derive_seed(seed, &[k as u64]), s as u64);
            let context = s % num_contexts;
            (context, sample_ordering(policy, context, k, &mut rng))
        })
        .collect()
}

/// Times the three propensity methods over `section.slate_sizes`.
///
/// Enumeration above the guard is refused and its cost extrapolated as
/// `c · queries(K)`, with `c` the mean seconds per enumeration query over the
/// measured sizes.
pub fn run_scaling(
    section: &ScalingSection,
    num_contexts: usize,
    seed: u64,
) -> Result<ScalingOutput> {
    let world = SlateWorld::generate(
        num_contexts,
        section.catalog_size,
        0.0,
        0.0,
        derive_seed(seed, &[u64::MAX]),
    );
    let policy = slate_policy(&world, &section.policy)?;
    if let Some(&k) = section
        .slate_sizes
        .iter()
        .find(|&&k| k == 0 || k > section.catalog_size)
    {
        return Err(BenchError::Config(format!(
            "slate size {k} outside 1..={}",
            section.catalog_size
        )));
    }

    struct Row {
        k: usize,
        method: &'static str,
        status: String,
        queries: Option<f64>,
        samples: Option<usize>,
        max_diff: Option<f64>,
        seconds: Option<f64>,
        extrapolated: bool,
    }
    let mut rows = Vec::new();
    let mut per_query = Vec::new();

    for &k in &section.slate_sizes {
        let slates = test_slates(&policy, num_contexts, k, section.n_slates, seed);
        let mut dp = MethodAcc::default();
        let mut en = MethodAcc::default();
        let mut mc = MethodAcc::default();
        let mut en_status = "ok".to_string();
        let mut mc_status = "ok".to_string();
        for (s, (context, slate)) in slates.iter().enumerate() {
            let (secs, out) = time_per_call(|| {
                forward_dp::<f64, _>(&policy, *context, slate, DpOptions::default())
            });
            let out = out?;
            dp.add(out.audit.count as f64, 0.0, secs);
            let exact = out.propensity;

            if k <= section.enumeration_guard {
                let (secs, p) = time_per_call(|| {
                    enumerate_orderings_with_guard::<f64, _>(
                        &policy,
                        *context,
                        slate,
                        section.enumeration_guard,
                    )
                });
                en.add(enumeration_queries(k), (p? - exact).abs(), secs);
            } else {
                en_status = "refused".into();
            }

            if section.gumbel_samples > 0 {
                let mc_seed = derive_seed(seed, &[k as u64, s as u64]);
                let start = Instant::now();
                match gumbel_top_k_policy::<f64, _>(
                    &policy,
                    *context,
                    slate,
                    section.gumbel_samples,
                    mc_seed,
                ) {
                    Ok(est) => mc.add(
                        0.0,
                        (est.estimate - exact).abs(),
                        start.elapsed().as_secs_f64(),
                    ),
                    Err(OpeError::Unsupported(m)) => mc_status = format!("unsupported: {m}"),
                    Err(e) => return Err(e.into()),
                }
            } else {
                mc_status = "disabled".into();
            }
        }

        rows.push(Row {
            k,
            method: "forward_dp",
            status: "ok".into(),
            queries: Some(dp.mean_queries()),
            samples: None,
            max_diff: Some(0.0),
            seconds: Some(dp.mean_seconds()),
            extrapolated: false,
        });
        if en.n > 0 {
            per_query.push(en.mean_seconds() / enumeration_queries(k));
        }
        rows.push(Row {
            k,
            method: "enumeration",
            queries: Some(enumeration_queries(k)),
            samples: None,
            max_diff: (en.n > 0).then_some(en.max_diff),
            seconds: (en.n > 0).then(|| en.mean_seconds()),
            extrapolated: en.n == 0,
            status: en_status,
        });
        rows.push(Row {
            k,
            method: "gumbel_mc",
            queries: None,
            samples: (mc.n > 0).then_some(section.gumbel_samples),
            max_diff: (mc.n > 0).then_some(mc.max_diff),
            seconds: (mc.n > 0).then(|| mc.mean_seconds()),
            extrapolated: false,
            status: mc_status,
        });
    }

    // Cost model for refused sizes; if nothing was measured, calibrate at the guard.
    let mut c = per_query.iter().sum::<f64>() / per_query.len().max(1) as f64;
    if per_query.is_empty() && rows.iter().any(|r| r.extrapolated) {
        let k = section.enumeration_guard.clamp(1, section.catalog_size);
        let slates = test_slates(&policy, num_contexts, k, section.n_slates.max(1), seed);
        let mut total = 0.0;
        for (context, slate) in &slates {
            let (secs, p) = time_per_call(|| {
                enumerate_orderings_with_guard::<f64, _>(&policy, *context, slate, k)
            });
            p?;
            total += secs;
        }
        c = total / slates.len() as f64 / enumeration_queries(k);
    }

    let mut scaling = Table::new(
        "scaling",
        &[
            "k",
            "method",
            "status",
            "query_count",
            "samples",
            "max_abs_diff_vs_dp",
            "extrapolated",
        ],
    );
    let mut timing = Table::new(
        "timing",
        &["k", "method", "seconds_per_slate", "extrapolated"],
    );
    for r in rows {
        let seconds = if r.extrapolated {
            r.queries.map(|q| c * q)
        } else {
            r.seconds
        };
        scaling.push(vec![
            Cell::count(r.k),
            Cell::text(r.method),
            Cell::text(r.status),
            Cell::real_opt(r.queries),
            r.samples.map_or(Cell::Missing, Cell::count),
            Cell::real_opt(r.max_diff),
            Cell::Bool(r.extrapolated),
        ]);
        timing.push(vec![
            Cell::count(r.k),
            Cell::text(r.method),
            Cell::real_opt(seconds),
            Cell::Bool(r.extrapolated),
        ]);
    }
    Ok(ScalingOutput { scaling, timing })
}
