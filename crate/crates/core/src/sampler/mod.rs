//! Finite-volume Gibbs samplers with Dirichlet (zero) boundary values.
//!
//! Hamiltonians are summed over canonical (undirected) edges:
//!
//! * XY: `H = -β Σ_b cos(θ(head) - θ(tail)) - h Σ_x cos θ(x)`
//! * gradient: `H = β Σ_b V(θ(head) - θ(tail))`
//!
//! Boundary vertices are never updated.

mod ensemble;
mod vonmises;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeDomain;
use crate::potentials::{Family, Potential};
use crate::rng::{stream_rng, StreamRng};

pub use ensemble::{
    equilibrate, run_chains, sample_ensemble, ChainRun, ChainSpec, ChainSummary, Ensemble, EnsembleDiagnostics,
    Equilibration, Sample,
};
pub use vonmises::{sample_von_mises, wrap_angle};

/// Target measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model {
    /// XY model with single-site field `h` (zero for the plain model).
    Xy { field: f64 },
    /// Real-valued gradient field with pair potential `V`.
    Gradient(Potential),
}

impl Model {
    pub fn xy() -> Self {
        Model::Xy { field: 0.0 }
    }

    pub fn is_angular(&self) -> bool {
        matches!(self, Model::Xy { .. })
    }

    /// Pair potential of the Hamiltonian (`-cos` for XY).
    pub fn pair_potential(&self) -> Potential {
        match self {
            Model::Xy { .. } => Potential::cosine(),
            Model::Gradient(p) => *p,
        }
    }

    pub fn field(&self) -> f64 {
        match self {
            Model::Xy { field } => *field,
            Model::Gradient(_) => 0.0,
        }
    }

    /// Command-line tag: `xy`, `xyfield`, `grad` or `graddelta`.
    pub fn tag(&self) -> &'static str {
        match self {
            Model::Xy { field } if *field == 0.0 => "xy",
            Model::Xy { .. } => "xyfield",
            Model::Gradient(p) => match p.family() {
                Family::TruncatedConvex { .. } => "graddelta",
                _ => "grad",
            },
        }
    }
}

/// Field values on every vertex.
#[derive(Debug, Clone)]
pub struct SpinConfig {
    pub domain: Arc<LatticeDomain>,
    pub theta: Vec<f64>,
    pub model: Model,
}

impl SpinConfig {
    pub fn zeros(domain: Arc<LatticeDomain>, model: Model) -> Self {
        let n = domain.num_vertices();
        Self { domain, theta: vec![0.0; n], model }
    }

    pub fn from_values(domain: Arc<LatticeDomain>, model: Model, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != domain.num_vertices() {
            return Err(Error::Precondition(format!("expected {} values, got {}", domain.num_vertices(), theta.len())));
        }
        let mut cfg = Self { domain, theta, model };
        cfg.enforce_invariants();
        Ok(cfg)
    }

    /// Pins the boundary and wraps XY angles.
    pub fn enforce_invariants(&mut self) {
        for v in 0..self.theta.len() {
            if self.domain.is_boundary(v) {
                self.theta[v] = 0.0;
            } else if self.model.is_angular() {
                self.theta[v] = wrap_angle(self.theta[v]);
            }
        }
    }

    pub fn boundary_is_pinned(&self) -> bool {
        self.domain.boundary_vertices().all(|v| self.theta[v] == 0.0)
    }

    /// Global Hamiltonian at inverse temperature `beta` (boundary field
    /// terms, being constant, are omitted).
    pub fn hamiltonian(&self, beta: f64) -> f64 {
        let v = self.model.pair_potential();
        let pair: f64 = self.domain.edges().iter().map(|e| v.value(self.theta[e.head] - self.theta[e.tail])).sum();
        let h = self.model.field();
        let site: f64 = if h != 0.0 { self.domain.interior().iter().map(|&x| self.theta[x].cos()).sum() } else { 0.0 };
        beta * pair - h * site
    }

    /// `Σ_b cos(θ(head) - θ(tail))`, the default mixing observable.
    pub fn sum_cos_eta(&self) -> f64 {
        self.domain.edges().iter().map(|e| (self.theta[e.head] - self.theta[e.tail]).cos()).sum()
    }

    /// `H(θ with θ(x) = to) - H(θ)`.
    pub fn local_delta(&self, beta: f64, x: usize, to: f64) -> f64 {
        let from = self.theta[x];
        let v = self.model.pair_potential();
        let mut pair = 0.0;
        for inc in self.domain.incident(x) {
            let y = self.theta[inc.neighbor];
            pair += v.difference(from - y, to - y);
        }
        let h = self.model.field();
        // -h (cos to - cos from) = h·(V(to) - V(from)) with V = -cos
        let site = if h != 0.0 { h * Potential::cosine().difference(from, to) } else { 0.0 };
        beta * pair + site
    }
}

/// Proposal/acceptance counts for one update kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counter {
    pub proposed: u64,
    pub accepted: u64,
}

impl Counter {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub metropolis: Counter,
    pub overrelax: Counter,
    pub heatbath: u64,
    pub langevin: u64,
}

/// Primary update of a composite sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Update {
    HeatBath,
    Metropolis { width: f64 },
    Langevin { dt: f64 },
}

/// One primary sweep followed by `overrelax` reflection sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    pub update: Update,
    pub overrelax: usize,
}

impl Scheme {
    /// Heat bath for XY-type models, Metropolis for gradient models, each
    /// followed by two reflection sweeps.
    pub fn default_for(model: &Model, beta: f64, dim: usize) -> Self {
        let update = match model {
            Model::Xy { .. } => Update::HeatBath,
            Model::Gradient(p) => {
                let curvature = p.second(0.0).max(1e-12) * beta * 2.0 * dim as f64;
                Update::Metropolis { width: 2.0 / curvature.sqrt() }
            }
        };
        Self { update, overrelax: 2 }
    }
}

/// A single Markov chain.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub config: SpinConfig,
    pub beta: f64,
    pub seed: u64,
    pub stream: u64,
    pub sweeps: u64,
    pub stats: AcceptanceStats,
    rng: StreamRng,
    scratch: Vec<f64>,
}

impl SamplerState {
    pub fn new(config: SpinConfig, beta: f64, seed: u64, stream: u64) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::NonPositiveBeta(beta));
        }
        if config.domain.interior().is_empty() {
            return Err(Error::EmptyInterior);
        }
        Ok(Self {
            config,
            beta,
            seed,
            stream,
            sweeps: 0,
            stats: AcceptanceStats::default(),
            rng: stream_rng(seed, stream),
            scratch: Vec::new(),
        })
    }

    pub fn rng(&mut self) -> &mut StreamRng {
        &mut self.rng
    }

    /// Random-walk Metropolis: one `Uniform(-width, width)` proposal per
    /// interior vertex, in index order.
    pub fn metropolis_sweep(&mut self, width: f64) {
        let dom = Arc::clone(&self.config.domain);
        let angular = self.config.model.is_angular();
        for &x in dom.interior() {
            let step = self.rng.random_range(-1.0..1.0) * width;
            let mut to = self.config.theta[x] + step;
            if angular {
                to = wrap_angle(to);
            }
            let dh = self.config.local_delta(self.beta, x, to);
            let accept = dh <= 0.0 || self.rng.random::<f64>() < (-dh).exp();
            if accept {
                self.config.theta[x] = to;
            }
            self.stats.metropolis.record(accept);
        }
        self.sweeps += 1;
    }

    /// Exact resampling of each interior angle from its von Mises
    /// conditional.
    pub fn heatbath_sweep(&mut self) -> Result<()> {
        let Model::Xy { field } = self.config.model else {
            return Err(Error::ModelMismatch { op: "heatbath_sweep", model: self.config.model.tag().into() });
        };
        let dom = Arc::clone(&self.config.domain);
        for &x in dom.interior() {
            let (kappa, mu) = self.local_field(x, field);
            self.config.theta[x] = sample_von_mises(&mut self.rng, mu, kappa);
        }
        self.stats.heatbath += dom.interior().len() as u64;
        self.sweeps += 1;
        Ok(())
    }

    /// Polar form `(R, μ)` of `β Σ_y e^{iθ(y)} + h`.
    fn local_field(&self, x: usize, field: f64) -> (f64, f64) {
        let (mut c, mut s) = (field, 0.0);
        for inc in self.config.domain.incident(x) {
            let t = self.config.theta[inc.neighbor];
            c += self.beta * t.cos();
            s += self.beta * t.sin();
        }
        (c.hypot(s), s.atan2(c))
    }

    /// Reflection sweep. For XY-type models `θ ↦ 2μ - θ` about the local
    /// field direction (energy preserving, always accepted); for gradient
    /// models `θ ↦ 2m - θ` about the neighbour mean, Metropolis-corrected.
    pub fn overrelax_sweep(&mut self) {
        let dom = Arc::clone(&self.config.domain);
        match self.config.model {
            Model::Xy { field } => {
                for &x in dom.interior() {
                    let (r, mu) = self.local_field(x, field);
                    if r > 0.0 {
                        self.config.theta[x] = wrap_angle(2.0 * mu - self.config.theta[x]);
                    }
                    self.stats.overrelax.record(true);
                }
            }
            Model::Gradient(_) => {
                for &x in dom.interior() {
                    let inc = dom.incident(x);
                    let m = inc.iter().map(|i| self.config.theta[i.neighbor]).sum::<f64>() / inc.len() as f64;
                    let to = 2.0 * m - self.config.theta[x];
                    let dh = self.config.local_delta(self.beta, x, to);
                    let accept = dh <= 0.0 || self.rng.random::<f64>() < (-dh).exp();
                    if accept {
                        self.config.theta[x] = to;
                    }
                    self.stats.overrelax.record(accept);
                }
            }
        }
        self.sweeps += 1;
    }

    /// Euler-Maruyama step of `dθ = -∇H dt + √2 dB` on all interior
    /// vertices at once. The stationary law carries an `O(dt)` bias.
    pub fn langevin_sweep(&mut self, dt: f64) -> Result<()> {
        let Model::Gradient(potential) = self.config.model else {
            return Err(Error::ModelMismatch { op: "langevin_sweep", model: self.config.model.tag().into() });
        };
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let dom = Arc::clone(&self.config.domain);
        langevin_step(&dom, &potential, self.beta, &mut self.config.theta, &mut self.scratch, dt, &mut self.rng);
        self.stats.langevin += dom.interior().len() as u64;
        self.sweeps += 1;
        Ok(())
    }

    /// Composite sweep of `scheme`.
    pub fn sweep(&mut self, scheme: &Scheme) -> Result<()> {
        match scheme.update {
            Update::HeatBath => self.heatbath_sweep()?,
            Update::Metropolis { width } => self.metropolis_sweep(width),
            Update::Langevin { dt } => self.langevin_sweep(dt)?,
        }
        for _ in 0..scheme.overrelax {
            self.overrelax_sweep();
        }
        Ok(())
    }
}

/// `∂H/∂θ(x) / β = Σ_y V'(θ(x) - θ(y))` for every interior vertex, in
/// interior order.
pub fn langevin_drift(dom: &LatticeDomain, potential: &Potential, theta: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(
        dom.interior()
            .iter()
            .map(|&x| dom.incident(x).iter().map(|inc| potential.first(theta[x] - theta[inc.neighbor])).sum::<f64>()),
    );
}

/// `θ ← θ - β dt ∂H/∂θ + √(2dt) ξ` on interior vertices, drifts evaluated
/// on the pre-step configuration.
pub(crate) fn langevin_step<R: Rng + ?Sized>(
    dom: &LatticeDomain,
    potential: &Potential,
    beta: f64,
    theta: &mut [f64],
    drift: &mut Vec<f64>,
    dt: f64,
    rng: &mut R,
) {
    langevin_drift(dom, potential, theta, drift);
    let noise = (2.0 * dt).sqrt();
    for (k, &x) in dom.interior().iter().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        theta[x] += -beta * dt * drift[k] + noise * z;
    }
}

/// Metropolis acceptance probability `min(1, e^{-ΔH})` for moving vertex
/// `x` of `cfg` to `to`.
pub fn acceptance_probability(cfg: &SpinConfig, beta: f64, x: usize, to: f64) -> f64 {
    (-cfg.local_delta(beta, x, to)).exp().min(1.0)
}

/// Uniform angles on `[-π, π)` at interior vertices.
pub fn random_angles<R: Rng + ?Sized>(cfg: &mut SpinConfig, rng: &mut R) {
    for &x in cfg.domain.clone().interior() {
        cfg.theta[x] = rng.random_range(-PI..PI);
    }
}
