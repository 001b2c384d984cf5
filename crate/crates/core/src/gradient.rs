//! Edge increments, vortices, potential reconstruction and the coupling
//! between the XY model and a convexified gradient model.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{DirectedEdge, LatticeDomain};
use crate::potentials::Potential;
use crate::rng::StreamRng;
use crate::sampler::{equilibrate, Model, SamplerState, Scheme, SpinConfig};

/// Plaquette sums further than this from a multiple of `2π` are rejected.
pub const CENSUS_TOLERANCE: f64 = 1e-6;
const PATH_TOLERANCE: f64 = 1e-8;
const ALTERNATIVE_PATHS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Xy,
    GradientModel,
    Coupled,
}

/// `η` on canonical edges; the reverse orientation carries `-η`.
#[derive(Debug, Clone)]
pub struct GradientConfig {
    pub domain: Arc<LatticeDomain>,
    pub eta: Vec<f64>,
    pub source: Source,
}

impl GradientConfig {
    pub fn new(domain: Arc<LatticeDomain>, eta: Vec<f64>, source: Source) -> Result<Self> {
        if eta.len() != domain.num_edges() {
            return Err(Error::Precondition(format!("expected {} edge values, got {}", domain.num_edges(), eta.len())));
        }
        Ok(Self { domain, eta, source })
    }

    /// Value on a directed edge.
    #[inline]
    pub fn directed(&self, de: DirectedEdge) -> f64 {
        de.sign() * self.eta[de.edge]
    }

    pub fn max_abs(&self) -> f64 {
        self.eta.iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    /// Canonical edges with `|η| > delta`.
    pub fn bad_edges(&self, delta: f64) -> Vec<usize> {
        (0..self.eta.len()).filter(|&e| self.eta[e].abs() > delta).collect()
    }
}

/// Representative of `raw` in `[-π, π)` for `raw ∈ (-2π, 2π)`.
#[inline]
pub fn smallest_increment(raw: f64) -> f64 {
    if raw < -PI {
        raw + TAU
    } else if raw >= PI {
        raw - TAU
    } else {
        raw
    }
}

/// Edge increments of a configuration: the smallest angular increment
/// for XY-type models, the plain difference for gradient models.
pub fn eta_from_theta(cfg: &SpinConfig) -> GradientConfig {
    let angular = cfg.model.is_angular();
    let eta = cfg
        .domain
        .edges()
        .iter()
        .map(|e| {
            let raw = cfg.theta[e.head] - cfg.theta[e.tail];
            if angular {
                smallest_increment(raw)
            } else {
                raw
            }
        })
        .collect();
    GradientConfig {
        domain: Arc::clone(&cfg.domain),
        eta,
        source: if angular { Source::Xy } else { Source::GradientModel },
    }
}

/// Per-plaquette charges `k_P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VortexCensus {
    pub charges: Vec<i8>,
    pub n_plus: usize,
    pub n_minus: usize,
    pub charged: Vec<usize>,
    pub max_residual: f64,
}

impl VortexCensus {
    pub fn is_vortex_free(&self) -> bool {
        self.charged.is_empty()
    }

    pub fn n_vortices(&self) -> usize {
        self.charged.len()
    }
}

/// Oriented sum of `η` around plaquette `p`.
pub fn plaquette_sum(g: &GradientConfig, p: usize) -> f64 {
    g.domain.plaquettes()[p].edges.iter().map(|&de| g.directed(de)).sum()
}

pub fn vortex_census(g: &GradientConfig) -> Result<VortexCensus> {
    let n = g.domain.num_plaquettes();
    let mut census =
        VortexCensus { charges: vec![0; n], n_plus: 0, n_minus: 0, charged: Vec::new(), max_residual: 0.0 };
    for p in 0..n {
        let s = plaquette_sum(g, p);
        let k = (s / TAU).round();
        let residual = (s - TAU * k).abs();
        if residual > CENSUS_TOLERANCE || k.abs() > 2.0 {
            return Err(Error::CorruptedConfig { plaquette: p, residual });
        }
        census.max_residual = census.max_residual.max(residual);
        let k = k as i8;
        census.charges[p] = k;
        if k != 0 {
            census.charged.push(p);
            if k > 0 {
                census.n_plus += 1;
            } else {
                census.n_minus += 1;
            }
        }
    }
    Ok(census)
}

/// Sum of `η` along a closed chain of directed edges.
pub fn winding_sum(g: &GradientConfig, path: &[DirectedEdge]) -> Result<f64> {
    let dom = &g.domain;
    if let (Some(&first), Some(&last)) = (path.first(), path.last()) {
        for w in path.windows(2) {
            if dom.head(w[0]) != dom.tail(w[1]) {
                return Err(Error::OpenCycle { start: dom.tail(first), end: dom.head(w[0]) });
            }
        }
        if dom.head(last) != dom.tail(first) {
            return Err(Error::OpenCycle { start: dom.tail(first), end: dom.head(last) });
        }
    }
    Ok(path.iter().map(|&de| g.directed(de)).sum())
}

/// Staircase path from `from` to `to`: coordinate 1 first, then 2, and so
/// on. `None` if it leaves the domain.
fn staircase(dom: &LatticeDomain, from: usize, to: usize) -> Option<Vec<DirectedEdge>> {
    let target = dom.coords(to).to_vec();
    let mut at = from;
    let mut path = Vec::new();
    for axis in 0..dom.dim() {
        while dom.coords(at)[axis] != target[axis] {
            let step = if dom.coords(at)[axis] < target[axis] { 1 } else { -1 };
            let next = dom.shift(at, axis, step)?;
            path.push(dom.edge_between(at, next)?);
            at = next;
        }
    }
    Some(path)
}

/// Shortest path from `from` to every vertex, as predecessor directed
/// edges of a breadth-first tree.
fn bfs_tree(dom: &LatticeDomain, from: usize) -> Vec<Option<DirectedEdge>> {
    let mut pred = vec![None; dom.num_vertices()];
    let mut seen = vec![false; dom.num_vertices()];
    let mut queue = std::collections::VecDeque::from([from]);
    seen[from] = true;
    while let Some(v) = queue.pop_front() {
        for inc in dom.incident(v) {
            if !seen[inc.neighbor] {
                seen[inc.neighbor] = true;
                pred[inc.neighbor] = Some(inc.leaving());
                queue.push_back(inc.neighbor);
            }
        }
    }
    pred
}

/// Integrates a vortex-free `η` from `anchor`: `Φ(anchor) = 0` and
/// `Φ(x)` is the sum along the staircase path. Vertices whose staircase
/// leaves the domain are reached along a breadth-first tree instead.
/// Path independence is then spot-checked on random monotone paths.
pub fn reconstruct_phi<R: Rng + ?Sized>(g: &GradientConfig, anchor: usize, rng: &mut R) -> Result<Vec<f64>> {
    let census = vortex_census(g)?;
    if !census.is_vortex_free() {
        return Err(Error::VortexObstruction { n_vortices: census.n_vortices() });
    }
    let dom = &g.domain;
    let n = dom.num_vertices();
    let mut phi = vec![f64::NAN; n];
    for x in 0..n {
        if let Some(path) = staircase(dom, anchor, x) {
            phi[x] = path.iter().map(|&de| g.directed(de)).sum();
        }
    }
    if phi.iter().any(|v| v.is_nan()) {
        let pred = bfs_tree(dom, anchor);
        for x in 0..n {
            if phi[x].is_nan() {
                let mut acc = 0.0;
                let mut at = x;
                while at != anchor {
                    let de = pred[at].ok_or_else(|| {
                        Error::InvalidDomain(format!("vertex {x} is not connected to anchor {anchor}"))
                    })?;
                    acc += g.directed(de);
                    at = dom.tail(de);
                }
                phi[x] = acc;
            }
        }
    }

    let scale = g.max_abs().max(1.0);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < ALTERNATIVE_PATHS.min(n) && attempts < 20 * ALTERNATIVE_PATHS {
        attempts += 1;
        let x = rng.random_range(0..n);
        let Some(sum) = random_monotone_sum(g, anchor, x, rng) else { continue };
        checked += 1;
        let discrepancy = (sum - phi[x]).abs();
        if discrepancy > PATH_TOLERANCE * scale * (1.0 + dom.num_edges() as f64).sqrt() {
            return Err(Error::PathDependence { vertex: x, discrepancy });
        }
    }
    Ok(phi)
}

/// Sum of `η` along a uniformly shuffled monotone path, or `None` if the
/// path leaves the domain.
fn random_monotone_sum<R: Rng + ?Sized>(g: &GradientConfig, from: usize, to: usize, rng: &mut R) -> Option<f64> {
    let dom = &g.domain;
    let mut steps = Vec::new();
    for axis in 0..dom.dim() {
        let delta = dom.coords(to)[axis] - dom.coords(from)[axis];
        steps.extend(std::iter::repeat_n((axis, delta.signum()), delta.unsigned_abs() as usize));
    }
    steps.shuffle(rng);
    let mut at = from;
    let mut sum = 0.0;
    for (axis, step) in steps {
        let next = dom.shift(at, axis, step)?;
        sum += g.directed(dom.edge_between(at, next)?);
        at = next;
    }
    Some(sum)
}

/// Reconstructs `Φ` from an XY configuration and checks that it lifts the
/// angles: `θ(x) - θ(anchor) ≡ Φ(x) (mod 2π)`.
pub fn reconstruct_from_xy<R: Rng + ?Sized>(cfg: &SpinConfig, anchor: usize, rng: &mut R) -> Result<Vec<f64>> {
    let g = eta_from_theta(cfg);
    let phi = reconstruct_phi(&g, anchor, rng)?;
    for (x, &p) in phi.iter().enumerate() {
        let gap = cfg.theta[x] - cfg.theta[anchor] - p;
        let off = (gap - TAU * (gap / TAU).round()).abs();
        if off > PATH_TOLERANCE * (1.0 + p.abs()) {
            return Err(Error::PathDependence { vertex: x, discrepancy: off });
        }
    }
    Ok(phi)
}

/// Parameters of the XY / truncated-convex coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub delta: f64,
    pub beta: f64,
    /// Composite sweeps between successive draws of either chain.
    pub thin: usize,
    /// Post-pilot burn-in; `None` uses the sampler's autocorrelation rule.
    pub burnin: Option<usize>,
    /// Draws from each chain used to estimate `μ(𝓑)` and `μ^δ(𝓑)`.
    pub pilot_draws: usize,
    /// Maximum number of `μ^δ` draws per coupled draw.
    pub budget: usize,
    pub seed: u64,
    /// The XY chain uses `stream`, the gradient chain `stream + 1`.
    pub stream: u64,
}

impl CouplingSpec {
    pub fn new(delta: f64, beta: f64, seed: u64) -> Self {
        Self { delta, beta, thin: 5, burnin: None, pilot_draws: 500, budget: 10_000, seed, stream: 0 }
    }
}

/// One coupled draw.
#[derive(Debug, Clone)]
pub struct CoupledPair {
    pub eta_xy: GradientConfig,
    pub eta_delta: GradientConfig,
    pub agreed: bool,
    /// Canonical edges of `eta_xy` with `|η| > δ`.
    pub bad_edges: Vec<usize>,
    /// `μ^δ` draws consumed (zero when the pair agrees).
    pub attempts: usize,
}

/// Pilot estimates behind the rejection step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    /// Estimate of `c = μ(𝓑ᶜ)`.
    pub c: f64,
    pub c_se: f64,
    /// Estimate of `c' = μ^δ(𝓑ᶜ)`.
    pub c_prime: f64,
    pub c_prime_se: f64,
    /// `max(0, (c' - c)/c')`: acceptance probability of a good `μ^δ` draw.
    pub accept_good: f64,
}

/// Realises the coupling draw by draw.
///
/// `μ^δ = c ρ + (1 - c) λ` with `ρ` the common law on `𝓑ᶜ`. Given an XY
/// draw in `𝓑ᶜ` the pair agrees; otherwise a `λ` draw is produced by
/// rejection from `μ^δ`: bad draws are kept, good ones are kept with
/// probability `(c' - c)/c'`.
#[derive(Debug, Clone)]
pub struct Coupler {
    spec: CouplingSpec,
    xy: SamplerState,
    grad: SamplerState,
    xy_scheme: Scheme,
    grad_scheme: Scheme,
    weights: MixtureWeights,
    decide: StreamRng,
}

impl Coupler {
    pub fn new(dom: &Arc<LatticeDomain>, spec: CouplingSpec) -> Result<Self> {
        let potential = Potential::truncated_convex(spec.delta)?;
        if spec.thin == 0 || spec.budget == 0 {
            return Err(Error::InvalidParameter("thin and budget must be positive".into()));
        }
        let mut xy =
            SamplerState::new(SpinConfig::zeros(Arc::clone(dom), Model::xy()), spec.beta, spec.seed, spec.stream)?;
        let mut grad = SamplerState::new(
            SpinConfig::zeros(Arc::clone(dom), Model::Gradient(potential)),
            spec.beta,
            spec.seed,
            spec.stream + 1,
        )?;
        let xy_scheme = equilibrate(&mut xy, None, spec.burnin)?.scheme;
        let grad_scheme = equilibrate(&mut grad, None, spec.burnin)?.scheme;
        let mut this = Self {
            spec,
            xy,
            grad,
            xy_scheme,
            grad_scheme,
            weights: MixtureWeights { c: 1.0, c_se: 0.0, c_prime: 1.0, c_prime_se: 0.0, accept_good: 0.0 },
            decide: crate::rng::stream_rng(spec.seed, spec.stream + 2),
        };
        let n = spec.pilot_draws.max(1);
        let (mut good_xy, mut good_grad) = (0usize, 0usize);
        for _ in 0..n {
            good_xy += this.next_xy()?.bad_edges(spec.delta).is_empty() as usize;
            good_grad += this.next_grad()?.bad_edges(spec.delta).is_empty() as usize;
        }
        let (c, cp) = (good_xy as f64 / n as f64, good_grad as f64 / n as f64);
        let se = |p: f64| (p * (1.0 - p) / n as f64).sqrt();
        this.weights = MixtureWeights {
            c,
            c_se: se(c),
            c_prime: cp,
            c_prime_se: se(cp),
            accept_good: if cp > 0.0 { ((cp - c) / cp).max(0.0) } else { 0.0 },
        };
        Ok(this)
    }

    pub fn weights(&self) -> MixtureWeights {
        self.weights
    }

    pub fn spec(&self) -> &CouplingSpec {
        &self.spec
    }

    /// Next thinned XY draw, as increments.
    pub fn next_xy(&mut self) -> Result<GradientConfig> {
        for _ in 0..self.spec.thin {
            self.xy.sweep(&self.xy_scheme)?;
        }
        Ok(eta_from_theta(&self.xy.config))
    }

    /// Next thinned draw of the truncated-convex gradient model.
    pub fn next_grad(&mut self) -> Result<GradientConfig> {
        for _ in 0..self.spec.thin {
            self.grad.sweep(&self.grad_scheme)?;
        }
        Ok(eta_from_theta(&self.grad.config))
    }

    pub fn draw(&mut self) -> Result<CoupledPair> {
        let eta_xy = self.next_xy()?;
        let bad_edges = eta_xy.bad_edges(self.spec.delta);
        if bad_edges.is_empty() {
            let mut eta_delta = eta_xy.clone();
            eta_delta.source = Source::Coupled;
            return Ok(CoupledPair { eta_xy, eta_delta, agreed: true, bad_edges, attempts: 0 });
        }
        for attempt in 1..=self.spec.budget {
            let mut y = self.next_grad()?;
            let keep =
                !y.bad_edges(self.spec.delta).is_empty() || self.decide.random::<f64>() < self.weights.accept_good;
            if keep {
                y.source = Source::Coupled;
                let agreed = y.eta == eta_xy.eta;
                return Ok(CoupledPair { eta_xy, eta_delta: y, agreed, bad_edges, attempts: attempt });
            }
        }
        Err(Error::RejectionBudgetExhausted { budget: self.spec.budget })
    }
}

/// A single coupled draw from freshly equilibrated chains.
pub fn couple_xy_gradient(dom: &Arc<LatticeDomain>, spec: CouplingSpec) -> Result<CoupledPair> {
    Coupler::new(dom, spec)?.draw()
}
