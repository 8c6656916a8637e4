//! Declarative experiment configuration, read from TOML. Unknown keys are
//! rejected at every level.
//!
//! ```toml
//! seed = 7
//! n_trials = 200
//! n_logged = 5000
//!
//! [mdp]
//! num_states = 20
//! num_actions = 4
//! horizon = 5
//! estimators = ["ois", "wis", "ff_ois", "ff_wis"]
//! target = { kind = "softmax", temperature = 0.5 }
//! behavior = { kind = "epsilon_greedy", epsilon = 0.3 }
//!
//! [output]
//! format = "csv"
//! ```

use std::path::{Path, PathBuf};

use flowis::quotient::{Method, QuotientSpec, RatioMode, DEFAULT_SPLIT_FRACTION};
use flowis::slate::{DpOptions, SpaceMode, DEFAULT_ENUMERATION_GUARD, DEFAULT_LATTICE_BUDGET};
use flowis::slate_ope::{SlateClasses, SlateMethod, SlateOptions, SupportMode};
use flowis::variance::SubsetMode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_trials: usize,
    /// Logged records per trial.
    pub n_logged: usize,
    pub mdp: Option<MdpSection>,
    pub slate: Option<SlateSection>,
    pub selection: Option<SelectionSection>,
    pub scaling: Option<ScalingSection>,
    pub propensity: Option<PropensitySection>,
    pub diagnose: Option<DiagnoseSection>,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            n_trials: 100,
            n_logged: 1000,
            mdp: None,
            slate: None,
            selection: None,
            scaling: None,
            propensity: None,
            diagnose: None,
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdpPolicyKind {
    Uniform,
    Softmax,
    EpsilonGreedy,
}

/// A policy over the optimal action values `Q*`, optionally perturbed by
/// Gaussian noise before the softmax or argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpPolicySpec {
    pub kind: MdpPolicyKind,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub score_noise: f64,
    #[serde(default)]
    pub score_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuotientChoice {
    Identity,
    StateTime,
    Abstraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdpSection {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub reward_noise: f64,
    pub discount: f64,
    pub env_seed: u64,
    pub quotient: QuotientChoice,
    /// `φ(s)` for the abstraction quotient.
    pub class_of_state: Vec<usize>,
    pub ratio_mode: RatioMode,
    pub split_fraction: f64,
    pub estimators: Vec<Method>,
    pub target: MdpPolicySpec,
    pub behavior: MdpPolicySpec,
    /// Logged trajectories to evaluate instead of running the benchmark.
    pub dataset: Option<PathBuf>,
}

impl Default for MdpSection {
    fn default() -> Self {
        MdpSection {
            num_states: 20,
            num_actions: 4,
            horizon: 5,
            reward_noise: 0.1,
            discount: 1.0,
            env_seed: 0,
            quotient: QuotientChoice::StateTime,
            class_of_state: Vec::new(),
            ratio_mode: RatioMode::Pooled,
            split_fraction: DEFAULT_SPLIT_FRACTION,
            estimators: Method::ALL.to_vec(),
            target: MdpPolicySpec {
                kind: MdpPolicyKind::Softmax,
                temperature: 1.0,
                epsilon: 0.0,
                score_noise: 0.0,
                score_seed: 0,
            },
            behavior: MdpPolicySpec {
                kind: MdpPolicyKind::EpsilonGreedy,
                temperature: 1.0,
                epsilon: 0.3,
                score_noise: 0.0,
                score_seed: 0,
            },
            dataset: None,
        }
    }
}

impl MdpSection {
    pub fn quotient_spec(&self) -> Result<QuotientSpec> {
        Ok(match self.quotient {
            QuotientChoice::Identity => QuotientSpec::identity(self.horizon, self.num_states),
            QuotientChoice::StateTime => QuotientSpec::state_time(self.horizon, self.num_states),
            QuotientChoice::Abstraction => {
                if self.class_of_state.len() != self.num_states {
                    return Err(BenchError::Config(format!(
                        "class_of_state has {} entries for {} states",
                        self.class_of_state.len(),
                        self.num_states
                    )));
                }
                QuotientSpec::abstraction(self.horizon, self.class_of_state.clone())?
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlatePolicyKind {
    Uniform,
    /// Fixed per-context scores: `(quality + noise) / temperature`.
    PlackettLuce,
    /// Scores additionally perturbed by a hash of the picked set.
    SetDependent,
    /// Scores perturbed by the positions of earlier picks (order-conditioned).
    PositionPerturbed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlatePolicySpec {
    pub kind: SlatePolicyKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default)]
    pub score_noise: f64,
    #[serde(default)]
    pub seed: u64,
    /// Scale of the set-dependent perturbation.
    #[serde(default)]
    pub interaction: f64,
    /// Scale of the position perturbation.
    #[serde(default)]
    pub epsilon: f64,
}

impl SlatePolicySpec {
    pub fn plackett_luce(temperature: f64) -> Self {
        SlatePolicySpec {
            kind: SlatePolicyKind::PlackettLuce,
            name: None,
            temperature,
            score_noise: 0.0,
            seed: 0,
            interaction: 0.0,
            epsilon: 0.0,
        }
    }

    /// Context-dependent Plackett–Luce whose logits are re-perturbed for every picked set.
    pub fn set_dependent(temperature: f64, interaction: f64, seed: u64) -> Self {
        SlatePolicySpec {
            kind: SlatePolicyKind::SetDependent,
            interaction,
            seed,
            ..Self::plackett_luce(temperature)
        }
    }

    pub fn label(&self, index: usize) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("candidate_{index}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlateSection {
    pub catalog_size: usize,
    pub slate_sizes: Vec<usize>,
    pub num_contexts: usize,
    pub reward_noise: f64,
    /// Redundancy coefficient `λ`.
    pub interaction: f64,
    pub world_seed: u64,
    pub estimators: Vec<SlateMethod>,
    pub support: SupportMode,
    pub lattice_budget: u64,
    /// OPCB classes: whether the slate contains this item.
    pub opcb_item: Option<usize>,
    pub target: SlatePolicySpec,
    pub behavior: SlatePolicySpec,
    /// Logged records to evaluate instead of running the benchmark.
    pub dataset: Option<PathBuf>,
}

impl Default for SlateSection {
    fn default() -> Self {
        SlateSection {
            catalog_size: 10,
            slate_sizes: vec![3, 4, 5],
            num_contexts: 5,
            reward_noise: 1.0,
            interaction: 0.1,
            world_seed: 0,
            estimators: vec![
                SlateMethod::TreeOis,
                SlateMethod::FfOis,
                SlateMethod::TreeDr,
                SlateMethod::FfDr,
            ],
            support: SupportMode::Strict,
            lattice_budget: DEFAULT_LATTICE_BUDGET,
            opcb_item: None,
            target: SlatePolicySpec::set_dependent(0.5, 0.5, 2),
            behavior: SlatePolicySpec::set_dependent(1.0, 0.5, 1),
            dataset: None,
        }
    }
}

impl SlateSection {
    pub fn options(&self) -> SlateOptions {
        SlateOptions {
            support: self.support,
            lattice_budget: self.lattice_budget,
            classes: self.opcb_item.map(SlateClasses::ContainsItem),
            dp: DpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSection {
    pub slate_size: usize,
    pub estimators: Vec<SlateMethod>,
    pub candidates: Vec<SlatePolicySpec>,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            slate_size: 4,
            estimators: vec![SlateMethod::TreeOis, SlateMethod::FfOis, SlateMethod::FfWis],
            candidates: [0.25, 0.35, 0.5, 0.7, 1.0, 1.4, 2.0, 2.8]
                .into_iter()
                .map(|t| SlatePolicySpec::set_dependent(t, 0.5, 2))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    pub catalog_size: usize,
    pub slate_sizes: Vec<usize>,
    /// Slates timed per size.
    pub n_slates: usize,
    pub enumeration_guard: usize,
    pub gumbel_samples: usize,
    pub policy: SlatePolicySpec,
}

impl Default for ScalingSection {
    fn default() -> Self {
        ScalingSection {
            catalog_size: 15,
            slate_sizes: (2..=12).collect(),
            n_slates: 5,
            enumeration_guard: 8,
            gumbel_samples: 100_000,
            policy: SlatePolicySpec::plackett_luce(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropensitySection {
    pub catalog_size: usize,
    pub num_contexts: usize,
    pub context: usize,
    pub slates: Vec<Vec<usize>>,
    pub space: SpaceMode,
    pub policy: SlatePolicySpec,
}

impl Default for PropensitySection {
    fn default() -> Self {
        PropensitySection {
            catalog_size: 10,
            num_contexts: 1,
            context: 0,
            slates: vec![vec![0, 1, 2]],
            space: SpaceMode::Auto,
            policy: SlatePolicySpec::plackett_luce(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnostic {
    /// Set-sufficiency TVD across prefix orderings.
    Tvd,
    /// Trajectory vs class-weight variance on random enumerable MDPs.
    VarianceGap,
    /// Ordered vs unordered slate-weight variance on random slate worlds.
    OrderingGap,
    /// Continuation-law check of the configured MDP quotient.
    Sufficiency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseSection {
    pub operation: Diagnostic,
    pub subset_mode: SubsetMode,
    pub sizes: Vec<usize>,
    pub n_draws: usize,
    /// Random instances for the gap diagnostics.
    pub instances: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub catalog_size: usize,
    pub slate_size: usize,
    pub num_contexts: usize,
    pub policy: SlatePolicySpec,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        DiagnoseSection {
            operation: Diagnostic::Tvd,
            subset_mode: SubsetMode::Random,
            sizes: vec![1, 2, 3, 4],
            n_draws: 160,
            instances: 20,
            num_states: 3,
            num_actions: 2,
            horizon: 3,
            catalog_size: 5,
            slate_size: 3,
            num_contexts: 2,
            policy: SlatePolicySpec {
                kind: SlatePolicyKind::PositionPerturbed,
                name: None,
                temperature: 1.0,
                score_noise: 0.0,
                seed: 0,
                interaction: 0.0,
                epsilon: 0.3,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub format: OutputFormat,
    pub path: PathBuf,
    /// Also write wall-clock measurements (never byte-reproducible) to a
    /// separate `timing` table.
    pub timing: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            format: OutputFormat::Csv,
            path: PathBuf::from("results"),
            timing: false,
        }
    }
}

fn one() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            BenchError::Config(message) => BenchError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(BenchError::Config("n_trials must be at least 1".into()));
        }
        if self.n_logged == 0 {
            return Err(BenchError::Config("n_logged must be at least 1".into()));
        }
        if let Some(m) = &self.mdp {
            if m.num_states == 0 || m.num_actions == 0 || m.horizon == 0 {
                return Err(BenchError::Config("mdp dimensions must be positive".into()));
            }
            if !(0.0..=1.0).contains(&m.discount) {
                return Err(BenchError::Config(format!(
                    "discount {} outside [0, 1]",
                    m.discount
                )));
            }
        }
        if let Some(s) = &self.slate {
            if s.num_contexts == 0 || s.catalog_size == 0 {
                return Err(BenchError::Config(
                    "slate world needs contexts and items".into(),
                ));
            }
            if let Some(&k) = s
                .slate_sizes
                .iter()
                .find(|&&k| k == 0 || k > s.catalog_size)
            {
                return Err(BenchError::Config(format!(
                    "slate size {k} outside 1..={}",
                    s.catalog_size
                )));
            }
        }
        if let Some(sel) = &self.selection {
            if sel.candidates.is_empty() {
                return Err(BenchError::Config(
                    "selection needs at least one candidate".into(),
                ));
            }
        }
        if let Some(sc) = &self.scaling {
            if sc.enumeration_guard > DEFAULT_ENUMERATION_GUARD {
                return Err(BenchError::Config(format!(
                    "enumeration_guard above {DEFAULT_ENUMERATION_GUARD}"
                )));
            }
        }
        Ok(())
    }

    /// Canonical TOML text; insensitive to formatting and comments of the source.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`Self::canonical`], hex encoded. The output directory is
    /// left out so that identical runs written to different places match.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.path = OutputSection::default().path;
        hex::encode(Sha256::digest(c.canonical().as_bytes()))
    }

    pub fn mdp(&self) -> Result<&MdpSection> {
        self.mdp
            .as_ref()
            .ok_or_else(|| BenchError::Config("missing [mdp] section".into()))
    }

    pub fn slate(&self) -> Result<&SlateSection> {
        self.slate
            .as_ref()
            .ok_or_else(|| BenchError::Config("missing [slate] section".into()))
    }
}
