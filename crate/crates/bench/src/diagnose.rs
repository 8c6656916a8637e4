//! Diagnostics: set-sufficiency TVD, variance gaps and quotient sufficiency.

use flowis::mdp::{random_mdp, random_policy};
use flowis::quotient::check_sufficiency;
use flowis::slate::ContextDependentPl;
use flowis::variance::{
    empirical_variance_gap, ordering_nuisance_gap, set_sufficiency_tvd, EnumerableSlateWorld,
    EnumerableSystem,
};

use crate::config::{DiagnoseSection, Diagnostic, ExperimentConfig};
use crate::emit::{Cell, Table};
use crate::error::{BenchError, Result};
use crate::world::{derive_seed, mdp_setup, order_conditioned_policy, SlateWorld};

/// Runs the configured diagnostic.
pub fn run_diagnostic(config: &ExperimentConfig) -> Result<Table> {
    let d = config
        .diagnose
        .clone()
        .ok_or_else(|| BenchError::Config("missing [diagnose] section".into()))?;
    match d.operation {
        Diagnostic::Tvd => tvd_table(&d, config.seed),
        Diagnostic::VarianceGap => variance_gap_table(&d, config.seed, config.n_logged),
        Diagnostic::OrderingGap => ordering_gap_table(&d, config.seed),
        Diagnostic::Sufficiency => sufficiency_table(config),
    }
}

fn tvd_table(d: &DiagnoseSection, seed: u64) -> Result<Table> {
    let world = SlateWorld::generate(
        d.num_contexts,
        d.catalog_size,
        0.0,
        0.0,
        derive_seed(seed, &[0]),
    );
    let policy = order_conditioned_policy(&world, &d.policy)?;
    let rows = set_sufficiency_tvd(
        policy.as_ref(),
        d.num_contexts,
        d.subset_mode,
        &d.sizes,
        d.n_draws,
        seed,
    )?;
    let mut t = Table::new(
        "tvd",
        &[
            "size",
            "median_max_tvd",
            "p90_max_tvd",
            "median_mean_tvd",
            "mean_max_tvd",
            "n_draws",
        ],
    );
    for r in rows {
        t.push(vec![
            Cell::count(r.size),
            Cell::Real(r.median_max),
            Cell::Real(r.p90_max),
            Cell::Real(r.median_mean),
            Cell::Real(r.mean_max),
            Cell::count(r.n_draws),
        ]);
    }
    Ok(t)
}

const GAP_COLUMNS: [&str; 9] = [
    "instance",
    "analytic_gap",
    "exhaustive_gap",
    "exhaustive_var_traj",
    "exhaustive_var_ff",
    "empirical_gap",
    "n_samples",
    "discrepancy",
    "num_classes",
];

fn gap_row(i: usize, r: &flowis::Gap, num_classes: usize) -> Vec<Cell> {
    vec![
        Cell::count(i),
        Cell::Real(r.analytic_gap),
        Cell::Real(r.exhaustive_gap),
        Cell::Real(r.exhaustive_var_traj),
        Cell::Real(r.exhaustive_var_ff),
        Cell::Real(r.empirical_gap),
        Cell::count(r.n_samples),
        Cell::Real(r.discrepancy()),
        Cell::count(num_classes),
    ]
}

/// Random MDPs with random policies; classes are the terminal state and the
/// per-class return is `g(z) = (z + 1) / S`.
fn variance_gap_table(d: &DiagnoseSection, seed: u64, n_samples: usize) -> Result<Table> {
    let mut t = Table::new("variance_gap", &GAP_COLUMNS);
    for i in 0..d.instances {
        let s = derive_seed(seed, &[i as u64]);
        let mdp = random_mdp::<f64>(d.num_states, d.num_actions, d.horizon, 0.0, 1.0, s)?;
        let target = random_policy(d.num_states, d.num_actions, 0.05, derive_seed(s, &[1]));
        let behavior = random_policy(d.num_states, d.num_actions, 0.05, derive_seed(s, &[2]));
        let system = EnumerableSystem::from_mdp(&mdp, &target, &behavior, |states, _| {
            *states.last().unwrap()
        })?;
        let n_states = d.num_states as f64;
        let g = move |z: usize| (z + 1) as f64 / n_states;
        let report = empirical_variance_gap(&system, &g, n_samples, derive_seed(s, &[3]))?;
        t.push(gap_row(i, &report, system.num_classes()));
    }
    Ok(t)
}

/// Random slate worlds: the configured (possibly order-conditioned) target
/// against a hot set-dependent behavior policy.
fn ordering_gap_table(d: &DiagnoseSection, seed: u64) -> Result<Table> {
    let mut t = Table::new("ordering_gap", &GAP_COLUMNS);
    for i in 0..d.instances {
        let s = derive_seed(seed, &[i as u64]);
        let world = SlateWorld::generate(d.num_contexts, d.catalog_size, 0.1, 0.1, s);
        let mut spec = d.policy.clone();
        spec.seed = derive_seed(s, &[1]);
        let target = order_conditioned_policy(&world, &spec)?;
        let behavior =
            ContextDependentPl::random(d.catalog_size, d.num_contexts, 0.5, derive_seed(s, &[2]));
        let noise_var = world.noise_std * world.noise_std;
        let reward_world = world.clone();
        let ew = EnumerableSlateWorld::with_set_reward(
            d.num_contexts,
            d.slate_size,
            noise_var,
            move |x, set| reward_world.mean_reward(x, set),
        );
        let report = ordering_nuisance_gap(&ew, target.as_ref(), &behavior)?;
        let classes = report.per_class_terms.len();
        t.push(gap_row(i, &report, classes));
    }
    Ok(t)
}

/// Continuation-law check of the configured MDP quotient under both policies.
fn sufficiency_table(config: &ExperimentConfig) -> Result<Table> {
    let section = config.mdp()?;
    let (mdp, target, behavior) = mdp_setup(section)?;
    let spec = section.quotient_spec()?;
    let r = check_sufficiency(&mdp, &spec, &[&target, &behavior])?;
    let mut t = Table::new(
        "sufficiency",
        &[
            "max_discrepancy",
            "max_reward_discrepancy",
            "worst_layer",
            "worst_state_a",
            "worst_state_b",
        ],
    );
    let pair = |f: fn((usize, usize, usize)) -> usize| {
        r.worst_pair.map_or(Cell::Missing, |p| Cell::count(f(p)))
    };
    t.push(vec![
        Cell::Real(r.max_discrepancy),
        Cell::Real(r.max_reward_discrepancy),
        pair(|p| p.0),
        pair(|p| p.1),
        pair(|p| p.2),
    ]);
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SlatePolicySpec;
    use flowis::variance::SubsetMode;

    fn cfg(op: Diagnostic) -> ExperimentConfig {
        ExperimentConfig {
            seed: 4,
            n_logged: 2000,
            diagnose: Some(DiagnoseSection {
                operation: op,
                instances: 3,
                n_draws: 20,
                ..DiagnoseSection::default()
            }),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn tvd_zero_for_set_sufficient_policy() {
        let mut c = cfg(Diagnostic::Tvd);
        let d = c.diagnose.as_mut().unwrap();
        d.policy = SlatePolicySpec::plackett_luce(1.0);
        d.subset_mode = SubsetMode::BehaviorInduced;
        let t = run_diagnostic(&c).unwrap();
        for row in 0..t.rows.len() {
            assert_eq!(t.get(row, "median_max_tvd").unwrap().as_real(), Some(0.0));
        }
    }

    #[test]
    fn tvd_positive_for_position_perturbed() {
        let t = run_diagnostic(&cfg(Diagnostic::Tvd)).unwrap();
        assert!(t.get(2, "median_max_tvd").unwrap().as_real().unwrap() > 0.0);
    }

    #[test]
    fn gaps_agree_with_enumeration() {
        for op in [Diagnostic::VarianceGap, Diagnostic::OrderingGap] {
            let t = run_diagnostic(&cfg(op)).unwrap();
            assert_eq!(t.rows.len(), 3);
            for row in 0..3 {
                let gap = t.get(row, "analytic_gap").unwrap().as_real().unwrap();
                assert!(gap >= -1e-12, "{op:?}: {gap}");
                assert!(t.get(row, "discrepancy").unwrap().as_real().unwrap() < 1e-9);
            }
        }
    }

    #[test]
    fn state_time_quotient_is_sufficient() {
        let mut c = cfg(Diagnostic::Sufficiency);
        c.mdp = Some(crate::config::MdpSection {
            num_states: 4,
            num_actions: 2,
            horizon: 3,
            ..Default::default()
        });
        let t = run_diagnostic(&c).unwrap();
        assert_eq!(t.get(0, "max_discrepancy").unwrap().as_real(), Some(0.0));
    }
}
