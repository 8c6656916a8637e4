//! Variance gaps between trajectory-level and quotient-level importance
//! weights, divergences between discrete distributions, and the
//! set-sufficiency TVD diagnostic for slate loggers.

mod gap;
mod ordering;
mod tvd;

pub use gap::{empirical_variance_gap, exact_variance_gap, Atom, EnumerableSystem, MAX_ATOMS};
pub use ordering::{ordering_nuisance_gap, EnumerableSlateWorld, MAX_ORDERING_SLATE};
pub use tvd::{set_sufficiency_tvd, SubsetMode, TvdRow, MAX_TVD_SUBSET};

use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::scalar::Scalar;

/// One class's share of the analytic gap: `F_β g² w² χ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTerm<T> {
    pub class: usize,
    pub f_beta: T,
    pub g: T,
    pub w: T,
    pub chi2: T,
    pub contribution: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport<T> {
    /// Sum of the per-class contributions.
    pub analytic_gap: T,
    /// `Var_β` of the trajectory-weighted summand, by enumeration.
    pub exhaustive_var_traj: T,
    /// `Var_β` of the class-weighted summand, by enumeration.
    pub exhaustive_var_ff: T,
    pub exhaustive_gap: T,
    /// Monte Carlo sample variances; zero when `n_samples == 0`.
    pub empirical_var_traj: f64,
    pub empirical_var_ff: f64,
    pub empirical_gap: f64,
    pub n_samples: usize,
    pub per_class_terms: Vec<ClassTerm<T>>,
}

impl<T: Scalar> GapReport<T> {
    /// `|analytic − exhaustive|`.
    pub fn discrepancy(&self) -> f64 {
        (self.analytic_gap - self.exhaustive_gap).abs().as_f64()
    }
}

fn check_pair<T: Scalar>(p: &[T], q: &[T]) -> Result<()> {
    if p.len() != q.len() {
        return Err(OpeError::Validation(format!(
            "distributions have lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// `χ²(p ‖ q) = Σ_{q>0} p²/q − 1`, summed over the support of `q`.
pub fn chi_square_divergence<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    check_pair(p, q)?;
    let mut acc = T::zero();
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if qi > T::zero() {
            acc = acc + pi * pi / qi;
        } else if pi > T::zero() {
            return Err(OpeError::support(
                format!("index {i}"),
                pi.as_f64(),
                qi.as_f64(),
            ));
        }
    }
    Ok((acc - T::one()).max(T::zero()))
}

/// Total-variation distance `½ Σ |p − q|`.
pub fn tvd<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    check_pair(p, q)?;
    let l1: T = p.iter().zip(q).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(l1 * T::lit(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn chi2_basic_values() {
        assert_eq!(
            chi_square_divergence(&[0.3f64, 0.7], &[0.3, 0.7]).unwrap(),
            0.0
        );
        assert!((chi_square_divergence(&[1.0f64, 0.0], &[0.5, 0.5]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn chi2_support_violation() {
        let err = chi_square_divergence(&[0.5f64, 0.5], &[1.0, 0.0]).unwrap_err();
        assert!(err.is_support_violation());
        assert!(chi_square_divergence(&[0.5f64], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn chi2_is_variance_of_ratio() {
        let mut rng = crate::mdp::trajectory_rng(3, 0);
        for _ in 0..20 {
            let mut p: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            let mut q: Vec<f64> = (0..5).map(|_| rng.random::<f64>() + 0.05).collect();
            let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
            p.iter_mut().for_each(|x| *x /= sp);
            q.iter_mut().for_each(|x| *x /= sq);
            let m: f64 = p.iter().zip(&q).map(|(a, b)| b * (a / b)).sum();
            let var: f64 = p.iter().zip(&q).map(|(a, b)| b * (a / b - m).powi(2)).sum();
            let chi = chi_square_divergence(&p, &q).unwrap();
            assert!((chi - var).abs() < 1e-12, "{chi} vs {var}");
        }
    }

    #[test]
    fn tvd_values() {
        assert_eq!(tvd(&[0.5f64, 0.5, 0.0], &[0.5, 0.5, 0.0]).unwrap(), 0.0);
        assert!((tvd(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((tvd(&[0.2f64, 0.8], &[0.5, 0.5]).unwrap() - 0.3).abs() < 1e-15);
    }
}
