//! Exact and Monte Carlo variance gap on a finite quotient:
//! `Var_β(ρG) − Var_β(w g) = Σ_z F_β(z) g(z)² w(z)² χ²(P_π(·|z) ‖ P_β(·|z))`.

use rand::Rng;
use rayon::prelude::*;

use super::{chi_square_divergence, ClassTerm, GapReport};
use crate::error::{OpeError, Result};
use crate::mdp::{enumerate_trajectories, trajectory_rng, StochasticPolicy, TabularMdp};
use crate::scalar::Scalar;
use crate::stats::sample_variance;

/// Refuse systems with more atoms than this.
pub const MAX_ATOMS: usize = 1_000_000;

const SAMPLE_CHUNK: usize = 1 << 14;

/// A complete trajectory with its terminal class and its probability under
/// the behavior and target policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom<T> {
    pub class: usize,
    pub p_behavior: T,
    pub p_target: T,
}

/// A finite trajectory space partitioned into classes.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumerableSystem<T> {
    atoms: Vec<Atom<T>>,
    num_classes: usize,
}

impl<T: Scalar> EnumerableSystem<T> {
    pub fn new(atoms: Vec<Atom<T>>) -> Result<Self> {
        if atoms.len() > MAX_ATOMS {
            return Err(OpeError::Refused {
                what: "variance-gap enumeration".into(),
                required: format!("{} atoms", atoms.len()),
                limit: MAX_ATOMS.to_string(),
            });
        }
        if atoms.is_empty() {
            return Err(OpeError::Validation("system has no atoms".into()));
        }
        let mut total_b = T::zero();
        let mut total_p = T::zero();
        for a in &atoms {
            if !(a.p_behavior >= T::zero() && a.p_target >= T::zero()) {
                return Err(OpeError::Validation(
                    "atom probabilities must be non-negative".into(),
                ));
            }
            total_b = total_b + a.p_behavior;
            total_p = total_p + a.p_target;
        }
        let tol = T::lit(1e-9).max(T::epsilon() * T::count(atoms.len()));
        if (total_b - T::one()).abs() > tol || (total_p - T::one()).abs() > tol {
            return Err(OpeError::Validation(format!(
                "atom masses sum to {total_b} (behavior) and {total_p} (target)"
            )));
        }
        let num_classes = atoms.iter().map(|a| a.class + 1).max().unwrap_or(0);
        Ok(EnumerableSystem { atoms, num_classes })
    }

    /// Enumerates every full trajectory of `mdp`; `class_of(states, actions)`
    /// gives the terminal class.
    pub fn from_mdp<F>(
        mdp: &TabularMdp<T>,
        target: &StochasticPolicy<T>,
        behavior: &StochasticPolicy<T>,
        class_of: F,
    ) -> Result<Self>
    where
        F: Fn(&[usize], &[usize]) -> usize,
    {
        let paths = enumerate_trajectories(mdp, &[target, behavior])?;
        let atoms = paths
            .iter()
            .map(|p| Atom {
                class: class_of(&p.states, &p.actions),
                p_target: p.probs[0],
                p_behavior: p.probs[1],
            })
            .collect();
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &[Atom<T>] {
        &self.atoms
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `(F_β(z), F_π(z))` for every class.
    pub fn class_masses(&self) -> Vec<(T, T)> {
        let mut out = vec![(T::zero(), T::zero()); self.num_classes];
        for a in &self.atoms {
            let e = &mut out[a.class];
            e.0 = e.0 + a.p_behavior;
            e.1 = e.1 + a.p_target;
        }
        out
    }

    fn check_support(&self) -> Result<()> {
        for (i, a) in self.atoms.iter().enumerate() {
            if a.p_behavior == T::zero() && a.p_target > T::zero() {
                return Err(OpeError::support(
                    format!("atom {i} (class {})", a.class),
                    a.p_target.as_f64(),
                    0.0,
                ));
            }
        }
        Ok(())
    }
}

fn class_weights<T: Scalar>(masses: &[(T, T)]) -> Vec<T> {
    masses
        .iter()
        .map(|&(fb, fp)| if fb > T::zero() { fp / fb } else { T::zero() })
        .collect()
}

fn analytic_terms<T: Scalar>(
    system: &EnumerableSystem<T>,
    masses: &[(T, T)],
    g: &dyn Fn(usize) -> T,
) -> Result<Vec<ClassTerm<T>>> {
    let mut cond_p: Vec<Vec<T>> = vec![Vec::new(); system.num_classes];
    let mut cond_q: Vec<Vec<T>> = vec![Vec::new(); system.num_classes];
    for a in &system.atoms {
        let (fb, fp) = masses[a.class];
        cond_q[a.class].push(if fb > T::zero() {
            a.p_behavior / fb
        } else {
            T::zero()
        });
        cond_p[a.class].push(if fp > T::zero() {
            a.p_target / fp
        } else {
            T::zero()
        });
    }
    (0..system.num_classes)
        .map(|z| {
            let (fb, fp) = masses[z];
            let gz = g(z);
            if fb == T::zero() || fp == T::zero() {
                return Ok(ClassTerm {
                    class: z,
                    f_beta: fb,
                    g: gz,
                    w: T::zero(),
                    chi2: T::zero(),
                    contribution: T::zero(),
                });
            }
            let w = fp / fb;
            let chi2 = chi_square_divergence(&cond_p[z], &cond_q[z])?;
            Ok(ClassTerm {
                class: z,
                f_beta: fb,
                g: gz,
                w,
                chi2,
                contribution: fb * gz * gz * w * w * chi2,
            })
        })
        .collect()
}

/// `Var_β` of a summand over the atoms.
fn variance_over<T: Scalar>(atoms: &[Atom<T>], f: impl Fn(&Atom<T>) -> T) -> T {
    let mut m1 = T::zero();
    let mut m2 = T::zero();
    for a in atoms.iter().filter(|a| a.p_behavior > T::zero()) {
        let v = f(a);
        m1 = m1 + a.p_behavior * v;
        m2 = m2 + a.p_behavior * v * v;
    }
    m2 - m1 * m1
}

/// Analytic per-class gap and, independently, both variances by enumeration.
/// Errors if the two disagree beyond rounding.
pub fn exact_variance_gap<T: Scalar>(
    system: &EnumerableSystem<T>,
    g: &dyn Fn(usize) -> T,
) -> Result<GapReport<T>> {
    system.check_support()?;
    let masses = system.class_masses();
    let w = class_weights(&masses);
    let per_class_terms = analytic_terms(system, &masses, g)?;
    let analytic_gap: T = per_class_terms.iter().map(|t| t.contribution).sum();

    let var_traj = variance_over(&system.atoms, |a| a.p_target / a.p_behavior * g(a.class));
    let var_ff = variance_over(&system.atoms, |a| w[a.class] * g(a.class));
    let report = GapReport {
        analytic_gap,
        exhaustive_var_traj: var_traj,
        exhaustive_var_ff: var_ff,
        exhaustive_gap: var_traj - var_ff,
        empirical_var_traj: 0.0,
        empirical_var_ff: 0.0,
        empirical_gap: 0.0,
        n_samples: 0,
        per_class_terms,
    };
    let scale = T::one().max(var_traj.abs()).as_f64();
    let tol = 1e-9f64.max(T::epsilon().as_f64() * 1e4) * scale;
    if report.discrepancy() > tol {
        return Err(OpeError::Validation(format!(
            "analytic gap {} disagrees with enumerated gap {}",
            report.analytic_gap, report.exhaustive_gap
        )));
    }
    Ok(report)
}

/// [`exact_variance_gap`] plus Monte Carlo sample variances from `n_samples`
/// trajectories drawn under the behavior policy.
pub fn empirical_variance_gap<T: Scalar>(
    system: &EnumerableSystem<T>,
    g: &(dyn Fn(usize) -> T + Sync),
    n_samples: usize,
    seed: u64,
) -> Result<GapReport<T>> {
    let mut report = exact_variance_gap(system, g)?;
    let masses = system.class_masses();
    let w = class_weights(&masses);
    let mut cumulative = Vec::with_capacity(system.atoms.len());
    let mut acc = 0.0f64;
    for a in &system.atoms {
        acc += a.p_behavior.as_f64();
        cumulative.push(acc);
    }
    let n_chunks = n_samples.div_ceil(SAMPLE_CHUNK);
    let draws: Vec<(f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = trajectory_rng(seed, chunk as u64);
            let len = SAMPLE_CHUNK.min(n_samples - chunk * SAMPLE_CHUNK);
            (0..len)
                .map(|_| {
                    let u = rng.random::<f64>() * acc;
                    let mut i = cumulative
                        .partition_point(|&c| c <= u)
                        .min(cumulative.len() - 1);
                    while system.atoms[i].p_behavior == T::zero() && i > 0 {
                        i -= 1;
                    }
                    let a = &system.atoms[i];
                    let gz = g(a.class).as_f64();
                    let rho = (a.p_target / a.p_behavior).as_f64();
                    (rho * gz, w[a.class].as_f64() * gz)
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect();
    let (traj, ff): (Vec<f64>, Vec<f64>) = draws.into_iter().unzip();
    report.empirical_var_traj = sample_variance(&traj);
    report.empirical_var_ff = sample_variance(&ff);
    report.empirical_gap = report.empirical_var_traj - report.empirical_var_ff;
    report.n_samples = n_samples;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{random_mdp, random_policy};

    /// Three classes with two or three members each.
    pub(crate) fn toy() -> EnumerableSystem<f64> {
        let raw = [
            (0, 0.10, 0.05),
            (0, 0.15, 0.25),
            (1, 0.20, 0.10),
            (1, 0.10, 0.05),
            (1, 0.05, 0.15),
            (2, 0.25, 0.20),
            (2, 0.15, 0.20),
        ];
        EnumerableSystem::new(
            raw.iter()
                .map(|&(class, p_behavior, p_target)| Atom {
                    class,
                    p_behavior,
                    p_target,
                })
                .collect(),
        )
        .unwrap()
    }

    fn toy_g(z: usize) -> f64 {
        [1.0, -2.0, 0.5][z]
    }

    #[test]
    fn identical_policies_give_zero_gap() {
        let atoms = toy()
            .atoms()
            .iter()
            .map(|a| Atom {
                p_target: a.p_behavior,
                ..*a
            })
            .collect();
        let sys = EnumerableSystem::new(atoms).unwrap();
        let r = exact_variance_gap(&sys, &toy_g).unwrap();
        assert_eq!(r.analytic_gap, 0.0);
        assert!(r.per_class_terms.iter().all(|t| t.chi2 == 0.0));
    }

    #[test]
    fn zero_g_gives_zero_gap() {
        let r = exact_variance_gap(&toy(), &|_| 0.0).unwrap();
        assert_eq!(r.analytic_gap, 0.0);
        assert!(r.exhaustive_gap.abs() < 1e-15);
    }

    #[test]
    fn toy_matches_double_loop() {
        let sys = toy();
        let r = exact_variance_gap(&sys, &toy_g).unwrap();
        // Σ_z g² (Σ_{τ∈z} p_π²/p_β − F_π²/F_β), one class at a time.
        let mut oracle = 0.0;
        for z in 0..3 {
            let (mut fb, mut fp, mut s) = (0.0, 0.0, 0.0);
            for a in sys.atoms().iter().filter(|a| a.class == z) {
                fb += a.p_behavior;
                fp += a.p_target;
                s += a.p_target * a.p_target / a.p_behavior;
            }
            oracle += toy_g(z).powi(2) * (s - fp * fp / fb);
        }
        assert!(
            (r.analytic_gap - oracle).abs() < 1e-12,
            "{} vs {oracle}",
            r.analytic_gap
        );
        assert!(r.discrepancy() < 1e-12);
        assert!(r.per_class_terms.iter().all(|t| t.contribution >= 0.0));
    }

    #[test]
    fn empirical_gap_close_to_analytic() {
        let r = empirical_variance_gap(&toy(), &toy_g, 100_000, 11).unwrap();
        let rel = (r.empirical_gap - r.analytic_gap).abs() / r.analytic_gap;
        assert!(rel < 0.1, "relative error {rel}");
        assert_eq!(r.n_samples, 100_000);
    }

    #[test]
    fn random_mdp_gap_matches_enumeration() {
        for seed in 0..5 {
            let mdp = random_mdp::<f64>(3, 2, 3, 0.5, 1.0, seed).unwrap();
            let pi = random_policy::<f64>(3, 2, 0.05, seed + 100);
            let beta = random_policy::<f64>(3, 2, 0.05, seed + 200);
            let sys =
                EnumerableSystem::from_mdp(&mdp, &pi, &beta, |s, _| *s.last().unwrap()).unwrap();
            let r = exact_variance_gap(&sys, &|z| 1.0 + z as f64).unwrap();
            assert!(r.discrepancy() < 1e-9);
            assert!(r.analytic_gap >= 0.0);
        }
    }

    #[test]
    fn unsupported_atom_is_error() {
        let atoms = vec![
            Atom {
                class: 0,
                p_behavior: 1.0f64,
                p_target: 0.5,
            },
            Atom {
                class: 0,
                p_behavior: 0.0,
                p_target: 0.5,
            },
        ];
        let sys = EnumerableSystem::new(atoms).unwrap();
        assert!(exact_variance_gap(&sys, &|_| 1.0)
            .unwrap_err()
            .is_support_violation());
    }
}
