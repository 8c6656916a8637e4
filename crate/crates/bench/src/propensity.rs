//! Exact slate propensities for a list of slates.

use flowis::slate::{forward_dp, DpOptions};

use crate::config::PropensitySection;
use crate::emit::{Cell, Table};
use crate::error::{BenchError, Result};
use crate::scaling::time_per_call;
use crate::world::{derive_seed, slate_policy, SlateWorld};

pub struct PropensityOutput {
    pub propensities: Table,
    pub timing: Table,
}

/// Items joined by spaces, as written in the `slate` column.
pub fn slate_label(slate: &[usize]) -> String {
    slate
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// One row per configured slate: `μ(S | x)` by the subset DP.
pub fn run_propensity(section: &PropensitySection, seed: u64) -> Result<PropensityOutput> {
    if section.context >= section.num_contexts {
        return Err(BenchError::Config(format!(
            "context {} outside 0..{}",
            section.context, section.num_contexts
        )));
    }
    let world = SlateWorld::generate(
        section.num_contexts,
        section.catalog_size,
        0.0,
        0.0,
        derive_seed(seed, &[u64::MAX]),
    );
    let policy = slate_policy(&world, &section.policy)?;
    let options = DpOptions {
        space: section.space,
        cache: true,
    };
    let mut propensities = Table::new(
        "propensities",
        &[
            "context",
            "slate",
            "propensity",
            "log_propensity",
            "query_count",
            "log_space",
            "escalated",
        ],
    );
    let mut timing = Table::new("timing", &["context", "slate", "seconds"]);
    for slate in &section.slates {
        let (secs, out) =
            time_per_call(|| forward_dp::<f64, _>(&policy, section.context, slate, options));
        let out = out?;
        propensities.push(vec![
            Cell::count(section.context),
            Cell::text(slate_label(slate)),
            Cell::Real(out.propensity),
            Cell::Real(out.table.log_propensity()),
            Cell::count(out.audit.count),
            Cell::Bool(out.table.log_space),
            Cell::Bool(out.escalated),
        ]);
        timing.push(vec![
            Cell::count(section.context),
            Cell::text(slate_label(slate)),
            Cell::Real(secs),
        ]);
    }
    Ok(PropensityOutput {
        propensities,
        timing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use flowis::slate::{enumerate_orderings, SpaceMode};

    #[test]
    fn matches_enumeration() {
        let section = PropensitySection {
            catalog_size: 7,
            num_contexts: 2,
            context: 1,
            slates: vec![vec![0, 3, 5], vec![6, 1, 2, 4]],
            ..PropensitySection::default()
        };
        let out = run_propensity(&section, 9).unwrap();
        let world = SlateWorld::generate(2, 7, 0.0, 0.0, derive_seed(9, &[u64::MAX]));
        let policy = slate_policy(&world, &section.policy).unwrap();
        for (row, slate) in section.slates.iter().enumerate() {
            let p: f64 = enumerate_orderings(&policy, 1, slate).unwrap();
            let got = out
                .propensities
                .get(row, "propensity")
                .unwrap()
                .as_real()
                .unwrap();
            assert!((got - p).abs() < 1e-12);
        }
        assert_eq!(out.propensities.get(1, "query_count"), Some(&Cell::Int(15)));
        assert_eq!(
            out.propensities.get(1, "slate"),
            Some(&Cell::text("6 1 2 4"))
        );
    }

    #[test]
    fn log_space_agrees() {
        let mut section = PropensitySection::default();
        let lin = run_propensity(&section, 1).unwrap();
        section.space = SpaceMode::Log;
        let log = run_propensity(&section, 1).unwrap();
        let a = lin
            .propensities
            .get(0, "propensity")
            .unwrap()
            .as_real()
            .unwrap();
        let b = log
            .propensities
            .get(0, "propensity")
            .unwrap()
            .as_real()
            .unwrap();
        assert!((a - b).abs() < 1e-12 * a);
        assert_eq!(
            log.propensities.get(0, "log_space"),
            Some(&Cell::Bool(true))
        );
    }
}
