//! Experiment configuration: one TOML file per run, unknown keys rejected.

use kinlab::control::{Chi, GccMode, VelocityWeight};
use kinlab::evolve::EvolutionConfig;
use kinlab::funineq::{BoxDomain, DivergenceOptions, KornConstraint};
use kinlab::hypo::{Confinement, GapScanConfig, Kappa};
use kinlab::phase::{DegeneracyWeight, Potential, Region, SpatialDomain, VelocitySpace};
use kinlab::transport::VelocityLaw;
use kinlab::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Experiment kind; the subcommand selects it, the file may name a default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Simulate,
    Gap,
    Gcc,
    Cheeger,
    Ineq,
    Hypo,
    Validate,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Gap => "gap",
            Self::Gcc => "gcc",
            Self::Cheeger => "cheeger",
            Self::Ineq => "ineq",
            Self::Hypo => "hypo",
            Self::Validate => "validate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: Option<ModelBlock>,
    #[serde(default)]
    pub evolution: Option<EvolutionConfig>,
    #[serde(default)]
    pub numerical: NumericalBlock,
    #[serde(default)]
    pub control: Option<ControlBlock>,
    #[serde(default)]
    pub battery: Option<BatteryBlock>,
    #[serde(default)]
    pub ineq: Option<IneqBlock>,
    #[serde(default)]
    pub hypo: Option<HypoBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Collision operator choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CollisionSpec {
    Bgk,
    FokkerPlanck,
    /// Kernel matrix `k(v_i, v_j)` read from CSV, relative to the config file.
    Kernel { path: String },
}

/// Initial datum for evolution runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// `f_∞ (1 + a cos(2π m·ξ)(1 + v₁))` with `ξ` the position rescaled to the unit box.
    Cosine { amplitude: f64, mode: [f64; 2] },
    /// `f_∞ (1 + r)` with `r` uniform in `[−1, 1]` per node, mass-corrected.
    Random { seed: u64 },
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self::Cosine { amplitude: 0.5, mode: [1.0, 0.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub domain: SpatialDomain,
    pub cells: Vec<usize>,
    pub velocity: VelocitySpace,
    #[serde(default = "zero_potential")]
    pub potential: Potential,
    pub sigma: DegeneracyWeight,
    pub collision: CollisionSpec,
    /// Accommodation coefficient; absent means specular walls.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub initial: InitialSpec,
}

fn zero_potential() -> Potential {
    Potential::Zero
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericalBlock {
    /// Random zero-mass data in the η battery (0 disables the certificate).
    #[serde(default)]
    pub battery: usize,
    /// Horizon of the battery runs; defaults to the evolution's η horizon.
    #[serde(default)]
    pub battery_horizon: Option<f64>,
    /// Add the final state of the decay run to the battery.
    #[serde(default = "yes")]
    pub battery_tail: bool,
    /// Also compute the generator gap during `simulate`.
    #[serde(default)]
    pub compute_gap: bool,
    /// Allowed relative distance between gap and fitted rate.
    #[serde(default = "gap_tol")]
    pub gap_tolerance: f64,
    #[serde(default = "r2_min")]
    pub r2_min: f64,
    /// Allowed excess of the certified rate over the fitted squared-norm rate.
    #[serde(default = "cert_tol")]
    pub certificate_tolerance: f64,
}

fn yes() -> bool {
    true
}
fn gap_tol() -> f64 {
    0.15
}
fn r2_min() -> f64 {
    0.99
}
fn cert_tol() -> f64 {
    0.10
}

impl Default for NumericalBlock {
    fn default() -> Self {
        Self {
            battery: 0,
            battery_horizon: None,
            battery_tail: true,
            compute_gap: false,
            gap_tolerance: gap_tol(),
            r2_min: r2_min(),
            certificate_tolerance: cert_tol(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiBlock {
    /// Time steps `T/n` for the normalization study, coarse to fine.
    pub steps: Vec<usize>,
    /// Trajectories checked per step.
    #[serde(default = "psi_samples")]
    pub samples: usize,
    #[serde(default = "psi_tol")]
    pub tolerance: f64,
    /// Sampling of the ψ construction, per axis and in velocity.
    #[serde(default = "sixteen")]
    pub positions: usize,
    #[serde(default = "sixteen")]
    pub velocities: usize,
}

fn sixteen() -> usize {
    16
}

fn psi_samples() -> usize {
    64
}
fn psi_tol() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBlock {
    pub chi: Chi,
    pub region: Region,
    #[serde(default)]
    pub w: VelocityWeight,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "sixty_four")]
    pub positions: usize,
    #[serde(default = "sixty_four")]
    pub velocities: usize,
    #[serde(default = "refine")]
    pub refine: usize,
    #[serde(default = "one")]
    pub threshold: f64,
    #[serde(default = "deterministic")]
    pub mode: GccMode,
    #[serde(default = "particles")]
    pub particles: usize,
    #[serde(default = "gaussian")]
    pub law: VelocityLaw,
    /// Initial conditions `[x₁, x₂, v₁, v₂]` for the particle estimate.
    #[serde(default)]
    pub initial: Vec<[f64; 4]>,
    /// Expected verdict; absent means the check must pass.
    #[serde(default)]
    pub expect_pass: Option<bool>,
    /// Re-run with doubled sampling and report the relative change of `c_min`.
    #[serde(default)]
    pub stability: bool,
    #[serde(default)]
    pub psi: Option<PsiBlock>,
}

fn sixty_four() -> usize {
    64
}
fn refine() -> usize {
    256
}
fn one() -> f64 {
    1.0
}
fn deterministic() -> GccMode {
    GccMode::Deterministic
}
fn particles() -> usize {
    10_000
}
fn gaussian() -> VelocityLaw {
    VelocityLaw::Gaussian
}

/// Which property a kernel battery checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatteryCheck {
    Cheeger,
    Gamma2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryBlock {
    pub check: BatteryCheck,
    pub kernels: usize,
    #[serde(default = "two")]
    pub m_min: usize,
    pub m_max: usize,
    /// Positive profiles per kernel (Γ₂ only).
    #[serde(default = "one_usize")]
    pub profiles: usize,
    #[serde(default = "yes")]
    pub reversible: bool,
    #[serde(default = "battery_tol")]
    pub tolerance: f64,
}

fn two() -> usize {
    2
}
fn one_usize() -> usize {
    1
}
fn battery_tol() -> f64 {
    1e-9
}

/// Zero-mean right-hand side for the divergence problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RhsSpec {
    /// `Π sin(2π k ξ_i)` on the box rescaled to the unit box.
    SineProduct { k: f64 },
}

/// Functional inequality to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IneqKind {
    Divergence,
    PoincareLions,
    WeightedPoincare,
    Korn,
    Stokes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IneqBlock {
    pub shape: BoxDomain,
    #[serde(default = "zero_potential")]
    pub potential: Potential,
    /// Cells per axis, coarse to fine.
    pub resolutions: Vec<[usize; 2]>,
    pub checks: Vec<IneqKind>,
    #[serde(default = "default_rhs")]
    pub rhs: RhsSpec,
    #[serde(default)]
    pub divergence: DivergenceOptions,
    #[serde(default = "residual_tol")]
    pub residual_tolerance: f64,
    /// Allowed relative spread of the empirical constant across resolutions.
    #[serde(default = "spread")]
    pub spread_tolerance: f64,
    #[serde(default = "korn_constraint")]
    pub korn_constraint: KornConstraint,
    /// Degree of the polynomial Korn oracle (0 disables it).
    #[serde(default)]
    pub oracle_degree: usize,
    #[serde(default = "oracle_tol")]
    pub oracle_tolerance: f64,
    #[serde(default = "trials")]
    pub trials: usize,
}

fn default_rhs() -> RhsSpec {
    RhsSpec::SineProduct { k: 1.0 }
}
fn residual_tol() -> f64 {
    1e-6
}
fn spread() -> f64 {
    0.2
}
fn korn_constraint() -> KornConstraint {
    KornConstraint::Averages
}
fn oracle_tol() -> f64 {
    0.1
}
fn trials() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommutatorBlock {
    /// Interval counts of the difference ladder, coarse to fine.
    pub intervals: Vec<usize>,
    #[serde(default = "antisymmetry_pairs")]
    pub antisymmetry_pairs: usize,
    #[serde(default = "antisymmetry_n")]
    pub antisymmetry_n: usize,
    /// Grid and trial count of the weighted 2D Poincaré check (0 disables it).
    #[serde(default)]
    pub poincare_n: usize,
    #[serde(default = "trials")]
    pub poincare_trials: usize,
}

fn antisymmetry_pairs() -> usize {
    16
}
fn antisymmetry_n() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypoBlock {
    #[serde(default = "tanh")]
    pub kappa: Kappa,
    #[serde(default = "confinement")]
    pub confinement: Confinement,
    #[serde(default = "delta0")]
    pub delta0: f64,
    #[serde(default)]
    pub commutators: Option<CommutatorBlock>,
    #[serde(default)]
    pub scan: Option<GapScanConfig>,
    /// Allowed relative change of the `p = 1` gap between the two finest resolutions.
    #[serde(default = "quarter")]
    pub variation_tolerance: f64,
}

fn tanh() -> Kappa {
    Kappa::Tanh
}
fn confinement() -> Confinement {
    Confinement { omega: 1.0, quartic: 0.1 }
}
fn delta0() -> f64 {
    1.0
}
fn quarter() -> f64 {
    0.25
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub dir: Option<String>,
    /// Emit a matplotlib script for the decay curve.
    #[serde(default)]
    pub plot_script: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Invalid(format!("config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Structural checks that do not need any numerics.
    pub fn check(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Invalid("config: name must not be empty".into()));
        }
        if let Some(e) = &self.evolution {
            e.validate()?;
        }
        if let Some(c) = &self.control {
            if !(c.horizon > 0.0 && c.dt > 0.0) {
                return Err(Error::Invalid("control: horizon and dt must be positive".into()));
            }
            if c.mode == GccMode::Full && c.initial.is_empty() {
                return Err(Error::Invalid("control: particle mode needs initial conditions".into()));
            }
            if let Some(p) = &c.psi {
                if p.steps.is_empty() || p.samples == 0 {
                    return Err(Error::Invalid("control.psi: steps and samples must be nonempty".into()));
                }
            }
        }
        if let Some(b) = &self.battery {
            if b.kernels == 0 || b.m_min < 2 || b.m_max < b.m_min || b.profiles == 0 {
                return Err(Error::Invalid("battery: need kernels ≥ 1 and 2 ≤ m_min ≤ m_max".into()));
            }
        }
        if let Some(i) = &self.ineq {
            if i.resolutions.is_empty() || i.checks.is_empty() {
                return Err(Error::Invalid("ineq: resolutions and checks must be nonempty".into()));
            }
        }
        if let Some(h) = &self.hypo {
            if h.commutators.is_none() && h.scan.is_none() {
                return Err(Error::Invalid("hypo: give a commutators or a scan block".into()));
            }
            if let Some(c) = &h.commutators {
                if c.intervals.len() < 2 {
                    return Err(Error::Invalid("hypo.commutators: at least two resolutions are needed".into()));
                }
            }
        }
        Ok(())
    }

    /// Canonical TOML with every default filled in.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.resolved_toml().as_bytes()))
    }
}
