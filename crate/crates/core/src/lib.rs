//! Quotient-DAG forward-flow importance sampling for off-policy evaluation.
//!
//! The crate covers two settings that share one idea: importance weights
//! placed on a coarser quotient of the rollout tree, equal to the ratio of
//! target and behavior forward flows into the quotient node.
//!
//! * [`mdp`] and [`quotient`]: tabular finite-horizon MDPs, exact and
//!   empirical forward flows, and the OIS/WIS/PDIS/WPDIS/FF estimators.
//! * [`slate`] and [`slate_ope`]: exact unordered slate propensities for
//!   set-sufficient autoregressive slate policies via a subset dynamic
//!   program, with enumeration and Gumbel-top-K baselines, and the
//!   tree/forward-flow/DR/MPL/OPCB slate estimators built on it.
//! * [`variance`]: exact variance gaps, chi-square divergences, and the
//!   set-sufficiency total-variation diagnostic.
//!
//! Numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix `f64`.

pub mod error;
pub mod mdp;
pub mod quotient;
pub mod scalar;
pub mod slate;
pub mod slate_ope;
pub mod stats;
pub mod variance;

pub use error::{OpeError, Result};
pub use scalar::Scalar;

pub type Mdp = mdp::TabularMdp<f64>;
pub type Policy = mdp::StochasticPolicy<f64>;
pub type Episode = mdp::Trajectory<f64>;
pub type Flows = quotient::FlowTable<f64>;
pub type RatioTable = quotient::QuotientRatioTable<f64>;
pub type SubsetFlows = slate::SubsetFlowTable<f64>;
pub type SlateDataset = slate_ope::LoggedSlateDataset<f64>;
pub type Gap = variance::GapReport<f64>;
