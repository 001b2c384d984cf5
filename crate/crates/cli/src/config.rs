//! Experiment configuration.
//!
//! A config is a TOML document with the sections below; unknown keys are
//! rejected. Every section except `experiment`, `domain`, `model` and
//! `sampling` is an optional analysis stage.
//!
//! ```toml
//! [experiment]
//! id = "quadratic-oracle"
//! seed = 7
//!
//! [domain]
//! d = 2
//! eps = 0.125          # lattice spacing
//! box_lo = [0.0, 0.0]  # defaults to the unit cube
//! box_hi = [1.0, 1.0]
//!
//! [model]
//! kind = "grad"        # xy | xyfield | grad | graddelta
//! lambda = 0.0         # grad: quartic coefficient
//! delta = 0.785        # graddelta: cutoff in (0, pi/2)
//! h = 0.0              # xyfield: single-site field
//!
//! [beta]
//! form = "constant"    # or form = "log", A = 10, C = 19
//! beta0 = 1.0
//!
//! [sampling]
//! chains = 4
//! samples = 1000
//! thin = 5
//! # burnin = 200      # default: 20 autocorrelation times
//! blocks = 4          # jackknife blocks per chain
//! ```

use std::f64::consts::{FRAC_PI_2, PI};

use gradfield_core::statistics::TestFunction;
use gradfield_core::{BetaSchedule, DomainDescriptor, Model, Potential};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub domain: DomainSection,
    pub model: ModelSection,
    pub beta: BetaSchedule,
    pub sampling: SamplingSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vortices: Option<VorticesSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluct: Option<FluctSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contour: Option<ContourSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brascamp_lieb: Option<BrascampLiebSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub couple: Option<CoupleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk: Option<WalkSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub d: usize,
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_hi: Option<Vec<f64>>,
}

impl DomainSection {
    pub fn descriptor(&self) -> DomainDescriptor {
        DomainDescriptor {
            d: self.d,
            eps: self.eps,
            box_lo: self.box_lo.clone().unwrap_or_else(|| vec![0.0; self.d]),
            box_hi: self.box_hi.clone().unwrap_or_else(|| vec![1.0; self.d]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Xy,
    Xyfield,
    Grad,
    Graddelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
}

impl ModelSection {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        match self.kind {
            ModelKind::Graddelta => match self.delta {
                Some(d) if d > 0.0 && d < FRAC_PI_2 => {}
                Some(d) => return bad(format!("model.delta must lie in (0, pi/2), got {d}")),
                None => return bad("model.delta is required for graddelta".into()),
            },
            _ if self.delta.is_some() => return bad("model.delta only applies to graddelta".into()),
            _ => {}
        }
        match (self.kind, self.lambda) {
            (ModelKind::Grad, Some(l)) if !(l >= 0.0 && l.is_finite()) => {
                return bad(format!("model.lambda must be nonnegative, got {l}"))
            }
            (ModelKind::Grad, _) | (_, None) => {}
            _ => return bad("model.lambda only applies to grad".into()),
        }
        match (self.kind, self.h) {
            (ModelKind::Xyfield, Some(h)) if h.is_finite() => {}
            (ModelKind::Xyfield, _) => return bad("model.h is required for xyfield".into()),
            (_, Some(_)) => return bad("model.h only applies to xyfield".into()),
            _ => {}
        }
        Ok(())
    }

    pub fn to_model(&self) -> Result<Model, CliError> {
        self.validate()?;
        Ok(match self.kind {
            ModelKind::Xy => Model::xy(),
            ModelKind::Xyfield => Model::Xy { field: self.h.unwrap_or(0.0) },
            ModelKind::Grad => match self.lambda.unwrap_or(0.0) {
                0.0 => Model::Gradient(Potential::quadratic()),
                l => Model::Gradient(Potential::anharmonic(l)?),
            },
            ModelKind::Graddelta => Model::Gradient(Potential::truncated_convex(self.delta.unwrap_or_default())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub chains: usize,
    pub samples: usize,
    pub thin: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burnin: Option<usize>,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
}

fn default_blocks() -> usize {
    4
}

/// Test function names accepted on the command line and in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PhiKind {
    Bump,
    Sine,
}

impl PhiKind {
    pub fn build(self, lo: &[f64], hi: &[f64]) -> TestFunction {
        match self {
            PhiKind::Bump => TestFunction::bump_middle_half(lo, hi),
            PhiKind::Sine => TestFunction::first_sine(lo, hi),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PhiKind::Bump => "bump",
            PhiKind::Sine => "sine",
        }
    }
}

/// Gaussian-oracle comparison (quadratic model only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default = "default_phi")]
    pub phi: PhiKind,
}

fn default_phi() -> PhiKind {
    PhiKind::Bump
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VorticesSection {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluctSection {
    pub phi: Vec<PhiKind>,
    /// Explicit `t` grid; defaults to `{0.25, 0.5, 1, 1.5, 2}/√Q`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tgrid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContourSection {
    /// Each `β` gets its own sampling run.
    pub betas: Vec<f64>,
    pub a: Vec<f64>,
    /// Canonical edge indices; defaults to the edge leaving the central
    /// vertex along the first axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrascampLiebSection {
    pub t: Vec<f64>,
    #[serde(default = "default_phi")]
    pub phi: PhiKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleSection {
    pub delta: f64,
    pub draws: usize,
    #[serde(default = "default_couple_thin")]
    pub thin: usize,
    #[serde(default = "default_pilot")]
    pub pilot: usize,
}

fn default_couple_thin() -> usize {
    5
}

fn default_pilot() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkSection {
    /// Diffusive scale: the walk runs for `t/ε²`.
    pub eps: f64,
    pub t: f64,
    /// Independent environments.
    pub pairs: usize,
    /// Walkers sharing each environment.
    #[serde(default = "default_walkers")]
    pub walkers: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Langevin relaxation after the Gaussian start.
    #[serde(default = "default_burn")]
    pub burn: f64,
}

fn default_walkers() -> usize {
    1
}

fn default_dt() -> f64 {
    0.01
}

fn default_burn() -> f64 {
    5.0
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        let id = &self.experiment.id;
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return bad("experiment.id must be a nonempty [A-Za-z0-9_-] string");
        }
        // TOML integers are signed
        if i64::try_from(self.experiment.seed).is_err() {
            return bad("experiment.seed must be at most 2^63 - 1");
        }
        let dsc = self.domain.descriptor();
        if dsc.box_lo.len() != dsc.d || dsc.box_hi.len() != dsc.d {
            return bad("domain.box_lo and domain.box_hi need d entries");
        }
        if !(self.domain.eps > 0.0) {
            return bad("domain.eps must be positive");
        }
        self.model.validate()?;
        let s = &self.sampling;
        if s.chains == 0 || s.samples == 0 || s.thin == 0 || s.blocks == 0 || s.burnin == Some(0) {
            return bad("sampling.chains, samples, thin, blocks and burnin must be positive");
        }
        if let Some(c) = &self.contour {
            if c.betas.is_empty() || c.a.is_empty() {
                return bad("contour.betas and contour.a must be nonempty");
            }
            if c.betas.iter().any(|b| !(*b > 0.0)) || c.a.iter().any(|a| !(*a > 0.0 && *a <= PI)) {
                return bad("contour.betas must be positive and contour.a in (0, pi]");
            }
        }
        if let Some(f) = &self.fluct {
            if f.phi.is_empty() {
                return bad("fluct.phi must be nonempty");
            }
        }
        if let Some(c) = &self.couple {
            if !(c.delta > 0.0 && c.delta < FRAC_PI_2) {
                return Err(CliError::Config(format!("couple.delta must lie in (0, pi/2), got {}", c.delta)));
            }
            if self.model.kind != ModelKind::Xy {
                return bad("couple needs model.kind = \"xy\"");
            }
        }
        if self.oracle.is_some() && !matches!(self.model.to_model()?, Model::Gradient(p) if p.has_constant_curvature())
        {
            return bad("the oracle stage needs the quadratic model");
        }
        if let Some(w) = &self.walk {
            if matches!(self.model.kind, ModelKind::Xy | ModelKind::Xyfield) {
                return bad("walk needs a gradient model");
            }
            if !(w.eps > 0.0 && w.t > 0.0 && w.dt > 0.0 && w.burn >= 0.0) || w.pairs == 0 || w.walkers == 0 {
                return bad("walk.eps, t, dt, pairs and walkers must be positive");
            }
        }
        Ok(())
    }
}
