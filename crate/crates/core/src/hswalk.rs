//! Random walk with jump rates `Ṽ''(η̃_t(b))` in a Langevin-driven
//! gradient environment.
//!
//! The environment lives in the rescaled variable `θ̃ = √β θ` and solves
//! `dθ̃(x) = -Σ_{y~x} Ṽ'(θ̃(x) - θ̃(y)) dt + √2 dB_x` with `Ṽ(s) = β V(s/√β)`,
//! whose stationary law is the Dirichlet Gibbs measure in that variable.
//! Walks are simulated by thinning against a constant cap, with rates
//! frozen between environment steps.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{jackknife, jackknife_mean};
use crate::error::{Error, Result};
use crate::lattice::LatticeDomain;
use crate::oracle::{edge_weights_to_vertex, GaussianOracle, SineBasisSampler};
use crate::potentials::Potential;
use crate::rng::{stream_rng, StreamRng};
use crate::sampler::langevin_step;
use crate::statistics::{empirical_char_fn, CharFnEstimate, EnergyKind};

/// Smallest trajectory count accepted by [`diffusive_scaling_check`].
pub const MIN_TRAJECTORIES: usize = 500;

/// Time-dependent symmetric jump rates on the canonical edges of a domain.
pub trait JumpRates {
    fn domain(&self) -> &Arc<LatticeDomain>;
    fn rate(&self, edge: usize) -> f64;
    fn time(&self) -> f64;
    /// Time until the rates next change; infinite for frozen rates.
    fn step_size(&self) -> f64;
    fn advance(&mut self) -> Result<()>;
}

/// Rates that never change.
#[derive(Debug, Clone)]
pub struct FrozenRates {
    domain: Arc<LatticeDomain>,
    rates: Vec<f64>,
}

impl FrozenRates {
    pub fn new(domain: Arc<LatticeDomain>, rates: Vec<f64>) -> Result<Self> {
        if rates.len() != domain.num_edges() || rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::InvalidParameter("need one finite nonnegative rate per edge".into()));
        }
        Ok(Self { domain, rates })
    }

    pub fn uniform(domain: Arc<LatticeDomain>, rate: f64) -> Result<Self> {
        let n = domain.num_edges();
        Self::new(domain, vec![rate; n])
    }
}

impl JumpRates for FrozenRates {
    fn domain(&self) -> &Arc<LatticeDomain> {
        &self.domain
    }
    fn rate(&self, edge: usize) -> f64 {
        self.rates[edge]
    }
    fn time(&self) -> f64 {
        0.0
    }
    fn step_size(&self) -> f64 {
        f64::INFINITY
    }
    fn advance(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Langevin gradient dynamics on a Dirichlet box.
#[derive(Debug, Clone)]
pub struct EnvironmentProcess {
    domain: Arc<LatticeDomain>,
    /// `Ṽ`.
    potential: Potential,
    beta: f64,
    /// `θ̃` on every vertex (zero on the boundary).
    pub theta: Vec<f64>,
    pub dt: f64,
    pub time: f64,
    /// Largest `|η̃|` tolerated before the run is declared unstable.
    pub guard: f64,
    /// Set to `false` to integrate the deterministic gradient flow.
    pub noise: bool,
    rng: StreamRng,
    drift: Vec<f64>,
}

impl EnvironmentProcess {
    /// Flat start. `potential` is the bare `V`; it is rescaled by `beta`.
    pub fn new(
        domain: Arc<LatticeDomain>,
        potential: Potential,
        beta: f64,
        dt: f64,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        if domain.interior().is_empty() {
            return Err(Error::EmptyInterior);
        }
        let tilde = potential.rescaled(beta)?;
        if let Some(cp) = potential.c_plus() {
            if !(dt > 0.0 && dt <= 1e-2 / cp + 1e-15) {
                return Err(Error::InvalidParameter(format!("dt must lie in (0, {}], got {dt}", 1e-2 / cp)));
            }
        } else if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let n = domain.num_vertices();
        Ok(Self {
            domain,
            potential: tilde,
            beta,
            theta: vec![0.0; n],
            dt,
            time: 0.0,
            guard: 1e4,
            noise: true,
            rng: stream_rng(seed, stream),
            drift: Vec::new(),
        })
    }

    /// Same as [`new`](Self::new) but skips the step-size heuristic; for
    /// integrator-bias studies.
    pub fn with_any_dt(
        domain: Arc<LatticeDomain>,
        potential: Potential,
        beta: f64,
        dt: f64,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        let mut env = Self::new(domain, potential, beta, 1e-3 / potential.c_plus().unwrap_or(1.0), seed, stream)?;
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        env.dt = dt;
        Ok(env)
    }

    /// Rescaled potential `Ṽ`.
    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Replaces the field by an exact draw of the unit-stiffness Gaussian
    /// (the quadratic model's stationary law), then relaxes for `burn`
    /// time units. For the quadratic model `burn = 0` is exact.
    pub fn initialize_gaussian(&mut self, burn: f64) -> Result<()> {
        self.theta = match SineBasisSampler::new(&self.domain) {
            Ok(s) => s.sample(&mut self.rng, 1.0),
            Err(_) => GaussianOracle::new(&self.domain)?.sample(&mut self.rng, 1.0),
        };
        evolve_environment(self, burn)
    }

    #[inline]
    pub fn eta_tilde(&self, edge: usize) -> f64 {
        let e = self.domain.edges()[edge];
        self.theta[e.head] - self.theta[e.tail]
    }

    pub fn step(&mut self) -> Result<()> {
        if self.noise {
            langevin_step(&self.domain, &self.potential, 1.0, &mut self.theta, &mut self.drift, self.dt, &mut self.rng);
        } else {
            crate::sampler::langevin_drift(&self.domain, &self.potential, &self.theta, &mut self.drift);
            for (k, &x) in self.domain.interior().iter().enumerate() {
                self.theta[x] -= self.dt * self.drift[k];
            }
        }
        self.time += self.dt;
        let worst = self.domain.interior().iter().map(|&x| self.theta[x].abs()).fold(0.0, f64::max);
        // |η̃| ≤ 2 max |θ̃|
        if !(2.0 * worst <= self.guard) {
            let value = (0..self.domain.num_edges()).map(|e| self.eta_tilde(e).abs()).fold(0.0, f64::max);
            if !(value <= self.guard) {
                return Err(Error::Instability { value, guard: self.guard });
            }
        }
        Ok(())
    }
}

impl JumpRates for EnvironmentProcess {
    fn domain(&self) -> &Arc<LatticeDomain> {
        &self.domain
    }
    fn rate(&self, edge: usize) -> f64 {
        self.potential.second(self.eta_tilde(edge))
    }
    fn time(&self) -> f64 {
        self.time
    }
    fn step_size(&self) -> f64 {
        self.dt
    }
    fn advance(&mut self) -> Result<()> {
        self.step()
    }
}

/// Advances by `ceil(horizon/dt)` Euler-Maruyama steps.
pub fn evolve_environment(env: &mut EnvironmentProcess, horizon: f64) -> Result<()> {
    let steps = (horizon / env.dt - 1e-9).ceil().max(0.0) as usize;
    for _ in 0..steps {
        env.step()?;
    }
    Ok(())
}

/// What happens near the edge of the finite box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// Killed on reaching a boundary vertex.
    Absorbing,
    /// Discarded once within `margin` (a fraction of the box side) of
    /// the box edge.
    Guarded { margin: f64 },
    /// Jumps onto boundary vertices are suppressed.
    Reflecting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkSpec {
    pub horizon: f64,
    /// Thinning cap `Λ ≥ sup` of the realised rates.
    pub cap: f64,
    pub boundary: BoundaryMode,
}

/// A realised path `X(t)`, `0 ≤ t ≤ horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkTrajectory {
    pub start: usize,
    /// Jump times, increasing.
    pub times: Vec<f64>,
    /// Position after each jump.
    pub positions: Vec<usize>,
    /// Rate of the edge crossed at each jump.
    pub jump_rates: Vec<f64>,
    pub horizon: f64,
    pub killed_at: Option<f64>,
    pub discarded: bool,
    /// Rates seen at candidate events: their mean estimates the time
    /// average of the rate of a uniformly chosen incident edge.
    pub candidate_rate_sum: f64,
    pub candidates: u64,
    pub min_rate: f64,
    pub max_rate: f64,
}

impl WalkTrajectory {
    fn new(start: usize, horizon: f64) -> Self {
        Self {
            start,
            times: Vec::new(),
            positions: Vec::new(),
            jump_rates: Vec::new(),
            horizon,
            killed_at: None,
            discarded: false,
            candidate_rate_sum: 0.0,
            candidates: 0,
            min_rate: f64::INFINITY,
            max_rate: f64::NEG_INFINITY,
        }
    }

    pub fn position_at(&self, t: f64) -> usize {
        match self.times.partition_point(|&s| s <= t) {
            0 => self.start,
            k => self.positions[k - 1],
        }
    }

    /// `X(t) - X(0)` in lattice units.
    pub fn displacement_at(&self, dom: &LatticeDomain, t: f64) -> Vec<i64> {
        let x = self.position_at(t);
        dom.coords(x).iter().zip(dom.coords(self.start)).map(|(a, b)| a - b).collect()
    }

    /// `∫_0^{min(upto, death)} f(X(s)) ds`.
    pub fn occupation_integral<F: Fn(usize) -> f64>(&self, upto: f64, f: F) -> f64 {
        let end = upto.min(self.killed_at.unwrap_or(f64::INFINITY)).min(self.horizon);
        let mut acc = 0.0;
        let mut t = 0.0;
        let mut at = self.start;
        for (&s, &x) in self.times.iter().zip(&self.positions) {
            if s >= end {
                break;
            }
            acc += (s - t) * f(at);
            t = s;
            at = x;
        }
        if self.killed_at.is_none_or(|k| k > t) {
            acc += (end - t).max(0.0) * f(at);
        }
        acc
    }

    pub fn mean_candidate_rate(&self) -> f64 {
        self.candidate_rate_sum / self.candidates as f64
    }

    pub fn alive_at(&self, t: f64) -> bool {
        self.killed_at.is_none_or(|k| k > t)
    }
}

struct Walker {
    pos: usize,
    active: bool,
    traj: WalkTrajectory,
}

/// Simulates independent walkers in one shared environment, advancing
/// the environment as needed. Walk time 0 is the environment's current
/// time.
pub fn simulate_walks<E: JumpRates, R: Rng + ?Sized>(
    env: &mut E,
    starts: &[usize],
    spec: &WalkSpec,
    rng: &mut R,
) -> Result<Vec<WalkTrajectory>> {
    let dom = Arc::clone(env.domain());
    let d = dom.dim();
    let n_dirs = 2 * d;
    if !(spec.cap > 0.0 && spec.horizon >= 0.0) {
        return Err(Error::InvalidParameter("cap must be positive and horizon nonnegative".into()));
    }
    let guard_box = match spec.boundary {
        BoundaryMode::Guarded { margin } => Some(guard_limits(&dom, margin)),
        _ => None,
    };
    let mut walkers: Vec<Walker> = starts
        .iter()
        .map(|&s| Walker { pos: s, active: !dom.is_boundary(s), traj: WalkTrajectory::new(s, spec.horizon) })
        .collect();
    for w in walkers.iter_mut().filter(|w| !w.active) {
        w.traj.killed_at = Some(0.0);
    }
    let total = n_dirs as f64 * spec.cap;
    let t0 = env.time();
    let mut seg_start = 0.0;
    while seg_start < spec.horizon && walkers.iter().any(|w| w.active) {
        let seg_end = (env.time() - t0 + env.step_size()).min(spec.horizon);
        for w in walkers.iter_mut().filter(|w| w.active) {
            let mut t = seg_start;
            loop {
                let wait: f64 = Exp1.sample(rng);
                t += wait / total;
                if t >= seg_end {
                    break;
                }
                let dir = rng.random_range(0..n_dirs);
                let (axis, step) = (dir / 2, if dir % 2 == 0 { 1 } else { -1 });
                let Some(next) = dom.shift(w.pos, axis, step) else { continue };
                let de = dom.edge_between(w.pos, next).expect("shifted vertex is adjacent");
                let r = env.rate(de.edge);
                if r > spec.cap * (1.0 + 1e-12) {
                    return Err(Error::ThinningCapViolated { rate: r, cap: spec.cap });
                }
                let tr = &mut w.traj;
                tr.candidate_rate_sum += r;
                tr.candidates += 1;
                tr.min_rate = tr.min_rate.min(r);
                tr.max_rate = tr.max_rate.max(r);
                if rng.random::<f64>() * spec.cap >= r {
                    continue;
                }
                if matches!(spec.boundary, BoundaryMode::Reflecting) && dom.is_boundary(next) {
                    continue;
                }
                w.pos = next;
                tr.times.push(t);
                tr.positions.push(next);
                tr.jump_rates.push(r);
                if dom.is_boundary(next) {
                    // absorbing, or a guarded box too small to catch it
                    tr.killed_at = Some(t);
                    tr.discarded |= guard_box.is_some();
                    w.active = false;
                    break;
                }
                if let Some((lo, hi)) = &guard_box {
                    if dom.coords(next).iter().enumerate().any(|(a, &c)| c <= lo[a] || c >= hi[a]) {
                        tr.discarded = true;
                        w.active = false;
                        break;
                    }
                }
            }
        }
        seg_start = seg_end;
        if seg_start < spec.horizon && walkers.iter().any(|w| w.active) {
            env.advance()?;
        }
    }
    Ok(walkers.into_iter().map(|w| w.traj).collect())
}

pub fn simulate_walk<E: JumpRates, R: Rng + ?Sized>(
    env: &mut E,
    start: usize,
    spec: &WalkSpec,
    rng: &mut R,
) -> Result<WalkTrajectory> {
    Ok(simulate_walks(env, &[start], spec, rng)?.pop().expect("one walker"))
}

/// Integer coordinates at or beyond which a guarded walk is discarded.
fn guard_limits(dom: &LatticeDomain, margin: f64) -> (Vec<i64>, Vec<i64>) {
    let d = dom.dim();
    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    for v in 0..dom.num_vertices() {
        for (a, &c) in dom.coords(v).iter().enumerate() {
            lo[a] = lo[a].min(c);
            hi[a] = hi[a].max(c);
        }
    }
    let pad: Vec<i64> = (0..d).map(|a| (margin * (hi[a] - lo[a]) as f64).ceil() as i64).collect();
    ((0..d).map(|a| lo[a] + pad[a]).collect(), (0..d).map(|a| hi[a] - pad[a]).collect())
}

/// Box side (in lattice units) needed for a guarded walk of `horizon`.
pub fn guarded_box_side(dim: usize, horizon: f64) -> usize {
    (8.0 * (2.0 * dim as f64 * horizon).sqrt()).ceil() as usize
}

/// Direct Gillespie simulation of the rate-one simple random walk on
/// `Z^d`, returning `X(horizon)`. Independent of the thinning code.
pub fn free_srw_endpoint<R: Rng + ?Sized>(dim: usize, horizon: f64, rng: &mut R) -> Vec<i64> {
    let mut x = vec![0i64; dim];
    let total = 2.0 * dim as f64;
    let mut t = 0.0;
    loop {
        let w: f64 = Exp1.sample(rng);
        t += w / total;
        if t > horizon {
            return x;
        }
        let dir = rng.random_range(0..2 * dim);
        x[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
    }
}

/// One time point of [`ScalingReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    /// Macroscopic time.
    pub t: f64,
    /// `Var(ε X_α(t/ε²)) / (2t)` per axis.
    pub var_ratio: Vec<f64>,
    pub var_ratio_se: Vec<f64>,
    /// `Cov(ε X_1, ε X_2)`, zero in one dimension.
    pub cross_cov: f64,
    pub cross_cov_se: f64,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub eps: f64,
    pub n_used: usize,
    pub n_discarded: usize,
    pub rows: Vec<ScalingRow>,
    /// Characteristic function of `ε X_1` at the last time against
    /// `exp(-u² t)`.
    pub charfn: CharFnEstimate,
    pub gaussian_pass: bool,
}

/// Diffusive scaling of `ε X(t/ε²)`. `groups` are jackknife units
/// (typically one environment each).
pub fn diffusive_scaling_check(
    dom: &LatticeDomain,
    groups: &[Vec<WalkTrajectory>],
    eps: f64,
    t_grid: &[f64],
) -> Result<ScalingReport> {
    let d = dom.dim();
    let kept: Vec<Vec<&WalkTrajectory>> =
        groups.iter().map(|g| g.iter().filter(|w| !w.discarded && w.killed_at.is_none()).collect()).collect();
    let n_used: usize = kept.iter().map(Vec::len).sum();
    let n_total: usize = groups.iter().map(Vec::len).sum();
    if n_used < MIN_TRAJECTORIES {
        return Err(Error::InsufficientSamples { needed: MIN_TRAJECTORIES, got: n_used });
    }
    if t_grid.is_empty() {
        return Err(Error::InvalidParameter("empty time grid".into()));
    }
    let kept: Vec<Vec<&WalkTrajectory>> = kept.into_iter().filter(|g| !g.is_empty()).collect();
    let coord = |t: f64, a: usize| -> Vec<Vec<f64>> {
        kept.iter()
            .map(|g| g.iter().map(|w| eps * w.displacement_at(dom, t / (eps * eps))[a] as f64).collect())
            .collect()
    };
    let mut rows = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let per_axis: Vec<Vec<Vec<f64>>> = (0..d).map(|a| coord(t, a)).collect();
        let mut row = ScalingRow {
            t,
            var_ratio: Vec::new(),
            var_ratio_se: Vec::new(),
            cross_cov: 0.0,
            cross_cov_se: 0.0,
            mean: Vec::new(),
            mean_se: Vec::new(),
        };
        for xs in &per_axis {
            let (m, mse) = jackknife_mean(xs);
            let sq: Vec<Vec<f64>> = xs.iter().map(|g| g.iter().map(|x| x * x).collect()).collect();
            let (v, vse) = jackknife_mean(&sq);
            let denom = 2.0 * t;
            row.mean.push(m);
            row.mean_se.push(mse);
            row.var_ratio.push(if t > 0.0 { v / denom } else { v });
            row.var_ratio_se.push(if t > 0.0 { vse / denom } else { vse });
        }
        if d >= 2 {
            let prod: Vec<Vec<f64>> = per_axis[0]
                .iter()
                .zip(&per_axis[1])
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).collect())
                .collect();
            let (c, cse) = jackknife_mean(&prod);
            row.cross_cov = c;
            row.cross_cov_se = cse;
        }
        rows.push(row);
    }
    let t_last = *t_grid.last().expect("nonempty");
    let q = 2.0 * t_last;
    let u_grid: Vec<f64> = [0.25, 0.5, 1.0, 1.5, 2.0].iter().map(|c| c / q.sqrt()).collect();
    let charfn = empirical_char_fn(&coord(t_last, 0), &u_grid, q, EnergyKind::Continuum, None)?;
    let gaussian_pass =
        (0..u_grid.len()).all(|i| (charfn.re[i] - charfn.reference[i]).abs() <= (3.0 * charfn.se_re[i]).max(0.01));
    Ok(ScalingReport { eps, n_used, n_discarded: n_total - n_used, rows, charfn, gaussian_pass })
}

/// Parameters of [`covariance_representation_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCheckSpec {
    pub beta: f64,
    pub dt: f64,
    /// Time truncation of the integral.
    pub truncation: f64,
    /// Environments, each an independent jackknife group.
    pub n_env: usize,
    /// Walkers per start vertex and environment.
    pub walkers: usize,
    /// Langevin relaxation after the Gaussian start (ignored for
    /// constant curvature).
    pub burn: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    /// `|Σ_x ∂F(x) E_x[∂G(X_T)]|` at the truncation time.
    pub tail_integrand: f64,
    pub truncation_warning: bool,
    /// `|lhs - rhs| ≤ 3 √(se_l² + se_r²)`.
    pub agree: bool,
}

/// Right side of the covariance identity for `F = Σ_b u(b) η̃(b)` and
/// `G = Σ_b v(b) η̃(b)`:
/// `∫_0^T Σ_x ∂F(x) E_x[∂G(X_t)] dt` with the walk killed on the
/// boundary. Returns `(rhs, se, tail)`.
pub fn covariance_rhs(
    dom: &Arc<LatticeDomain>,
    potential: &Potential,
    u: &[f64],
    v: &[f64],
    spec: &CovarianceCheckSpec,
) -> Result<(f64, f64, f64)> {
    let du = edge_weights_to_vertex(dom, u);
    let dv = edge_weights_to_vertex(dom, v);
    let interior = dom.interior();
    let mut dv_full = vec![0.0; dom.num_vertices()];
    for (k, &x) in interior.iter().enumerate() {
        dv_full[x] = dv[k];
    }
    let starts: Vec<(usize, f64)> =
        interior.iter().enumerate().filter(|(k, _)| du[*k] != 0.0).map(|(k, &x)| (x, du[k])).collect();
    let cap =
        potential.c_plus().ok_or_else(|| Error::Precondition("covariance check needs bounded curvature".into()))?;
    let walk_spec = WalkSpec { horizon: spec.truncation, cap, boundary: BoundaryMode::Absorbing };
    let mut estimates = Vec::with_capacity(spec.n_env);
    let mut tails = Vec::with_capacity(spec.n_env);
    for k in 0..spec.n_env {
        let mut rng = stream_rng(spec.seed, crate::rng::substream(2, k as u64));
        let start_list: Vec<usize> = starts.iter().flat_map(|&(x, _)| std::iter::repeat_n(x, spec.walkers)).collect();
        let trajs = if potential.has_constant_curvature() {
            let mut env = FrozenRates::uniform(Arc::clone(dom), potential.second(0.0))?;
            simulate_walks(&mut env, &start_list, &walk_spec, &mut rng)?
        } else {
            let mut env = EnvironmentProcess::new(
                Arc::clone(dom),
                *potential,
                spec.beta,
                spec.dt,
                spec.seed,
                crate::rng::substream(1, k as u64),
            )?;
            env.initialize_gaussian(spec.burn)?;
            simulate_walks(&mut env, &start_list, &walk_spec, &mut rng)?
        };
        let mut est = 0.0;
        let mut tail = 0.0;
        for (i, &(_, w)) in starts.iter().enumerate() {
            let chunk = &trajs[i * spec.walkers..(i + 1) * spec.walkers];
            let occ: f64 = chunk.iter().map(|tr| tr.occupation_integral(spec.truncation, |y| dv_full[y])).sum::<f64>()
                / spec.walkers as f64;
            let end: f64 = chunk
                .iter()
                .filter(|tr| tr.alive_at(spec.truncation))
                .map(|tr| dv_full[tr.position_at(spec.truncation)])
                .sum::<f64>()
                / spec.walkers as f64;
            est += w * occ;
            tail += w * end;
        }
        estimates.push(vec![est]);
        tails.push(tail);
    }
    let (rhs, se) = jackknife_mean(&estimates);
    let tail = (tails.iter().sum::<f64>() / tails.len() as f64).abs();
    Ok((rhs, se, tail))
}

/// Compares the covariance identity's two sides. `lhs_groups` hold
/// `(F, G)` pairs from direct sampling, one jackknife group each.
pub fn covariance_representation_check(
    dom: &Arc<LatticeDomain>,
    potential: &Potential,
    u: &[f64],
    v: &[f64],
    lhs_groups: &[Vec<(f64, f64)>],
    spec: &CovarianceCheckSpec,
) -> Result<CovarianceReport> {
    let flat: Vec<Vec<f64>> = lhs_groups.iter().map(|g| g.iter().flat_map(|&(f, g)| [f, g]).collect()).collect();
    let (lhs, lhs_se) = jackknife(&flat, |xs| {
        let n = xs.len() / 2;
        let (mut sf, mut sg, mut sfg) = (0.0, 0.0, 0.0);
        for p in xs.chunks_exact(2) {
            sf += p[0];
            sg += p[1];
            sfg += p[0] * p[1];
        }
        let n = n as f64;
        sfg / n - (sf / n) * (sg / n)
    });
    let (rhs, rhs_se, tail) = covariance_rhs(dom, potential, u, v, spec)?;
    let truncation_warning = tail > 0.1 * rhs.abs().max(1e-12);
    if truncation_warning {
        log::warn!("integrand at the truncation time is {tail:e}, over 10% of the accumulated {rhs:e}");
    }
    let agree = (lhs - rhs).abs() <= 3.0 * (lhs_se * lhs_se + rhs_se * rhs_se).sqrt();
    Ok(CovarianceReport { lhs, lhs_se, rhs, rhs_se, tail_integrand: tail, truncation_warning, agree })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{ks_one_sample, mean, variance};
    use crate::lattice::build_rect_domain;
    use crate::oracle::{dirichlet_green, dirichlet_laplacian};
    use nalgebra::DMatrix;

    fn square(n: f64) -> Arc<LatticeDomain> {
        Arc::new(build_rect_domain(2, 1.0, &[0.0, 0.0], &[n, n]).unwrap())
    }

    fn centre(dom: &LatticeDomain, n: i64) -> usize {
        dom.index_of(&[n / 2, n / 2]).unwrap()
    }

    #[test]
    fn srw_mean_square_displacement() {
        let side = 2 * guarded_box_side(2, 10.0) as i64;
        let dom = square(side as f64);
        let mut env = FrozenRates::uniform(dom.clone(), 1.0).unwrap();
        let spec = WalkSpec { horizon: 10.0, cap: 1.0, boundary: BoundaryMode::Guarded { margin: 0.1 } };
        let mut rng = stream_rng(1, 0);
        let starts = vec![centre(&dom, side); 20_000];
        let trajs = simulate_walks(&mut env, &starts, &spec, &mut rng).unwrap();
        assert!(trajs.iter().all(|t| !t.discarded));
        let sq: Vec<f64> =
            trajs.iter().map(|t| t.displacement_at(&dom, 10.0).iter().map(|x| (x * x) as f64).sum()).collect();
        let (m, s) = (mean(&sq), (variance(&sq) / sq.len() as f64).sqrt());
        assert!((m - 40.0).abs() < 3.0 * s, "{m} ± {s}");
        // direct Gillespie oracle
        let direct: Vec<f64> =
            (0..20_000).map(|_| free_srw_endpoint(2, 10.0, &mut rng).iter().map(|x| (x * x) as f64).sum()).collect();
        let ks = crate::diagnostics::ks_two_sample(&sq, &direct);
        assert!(ks.p_value > 0.01, "{ks:?}");
        // every candidate accepted when the cap equals the rate
        let accepted: u64 = trajs.iter().map(|t| t.times.len() as u64).sum();
        let cands: u64 = trajs.iter().map(|t| t.candidates).sum();
        assert_eq!(accepted, cands);
        assert!(trajs.iter().all(|t| t.displacement_at(&dom, 0.0) == vec![0, 0] || t.times[0] == 0.0));
    }

    #[test]
    fn thinned_waiting_times_are_exponential() {
        let dom = square(60.0);
        let mut env = FrozenRates::uniform(dom.clone(), 0.4).unwrap();
        let spec = WalkSpec { horizon: 400.0, cap: 1.0, boundary: BoundaryMode::Guarded { margin: 0.1 } };
        let tr = simulate_walk(&mut env, centre(&dom, 60), &spec, &mut stream_rng(2, 0)).unwrap();
        let mut gaps: Vec<f64> = tr.times.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.truncate(500);
        let rate = 4.0 * 0.4;
        let ks = ks_one_sample(&gaps, |x| 1.0 - (-rate * x).exp());
        assert!(ks.p_value > 0.01, "{ks:?}");
    }

    #[test]
    fn cap_violation_is_reported() {
        let dom = square(6.0);
        let mut env = FrozenRates::uniform(dom.clone(), 2.0).unwrap();
        let spec = WalkSpec { horizon: 10.0, cap: 1.0, boundary: BoundaryMode::Absorbing };
        let err = simulate_walk(&mut env, centre(&dom, 6), &spec, &mut stream_rng(3, 0)).unwrap_err();
        assert!(matches!(err, Error::ThinningCapViolated { .. }));
    }

    #[test]
    fn checkerboard_visits_follow_conductances() {
        // reflecting walk on the 3x3 interior; edges touching the centre
        // have conductance 3, the rest 1
        let dom = square(4.0);
        let c = centre(&dom, 4);
        let rates: Vec<f64> = dom.edges().iter().map(|e| if e.head == c || e.tail == c { 3.0 } else { 1.0 }).collect();
        let mut env = FrozenRates::new(dom.clone(), rates.clone()).unwrap();
        let spec = WalkSpec { horizon: 200_000.0, cap: 3.0, boundary: BoundaryMode::Reflecting };
        let tr = simulate_walk(&mut env, c, &spec, &mut stream_rng(4, 0)).unwrap();
        let mut visits = vec![0usize; dom.num_vertices()];
        for &x in &tr.positions {
            visits[x] += 1;
        }
        let conductance = |x: usize| -> f64 {
            dom.incident(x).iter().filter(|i| !dom.is_boundary(i.neighbor)).map(|i| rates[i.edge]).sum()
        };
        let corner = dom.index_of(&[1, 1]).unwrap();
        let side = dom.index_of(&[1, 2]).unwrap();
        let ratio = visits[c] as f64 / visits[corner] as f64;
        assert!((ratio / (conductance(c) / conductance(corner)) - 1.0).abs() < 0.03, "{ratio}");
        let ratio = visits[side] as f64 / visits[corner] as f64;
        assert!((ratio / (conductance(side) / conductance(corner)) - 1.0).abs() < 0.03, "{ratio}");
        // time occupation of the continuous-time walk is uniform
        let oc = tr.occupation_integral(spec.horizon, |y| (y == c) as u8 as f64);
        let ok = tr.occupation_integral(spec.horizon, |y| (y == corner) as u8 as f64);
        assert!((oc / ok - 1.0).abs() < 0.05, "{}", oc / ok);
    }

    #[test]
    fn flat_noiseless_environment_stays_flat() {
        let dom = square(8.0);
        let mut env =
            EnvironmentProcess::new(dom, Potential::truncated_convex(0.7).unwrap(), 10.0, 0.01, 1, 0).unwrap();
        env.noise = false;
        evolve_environment(&mut env, 5.0).unwrap();
        assert!(env.theta.iter().all(|&t| t == 0.0));
        assert!((env.time - 5.0).abs() < 1e-9);
    }

    #[test]
    fn step_size_heuristic_enforced() {
        let dom = square(4.0);
        assert!(EnvironmentProcess::new(dom.clone(), Potential::quadratic(), 1.0, 0.05, 1, 0).is_err());
        assert!(EnvironmentProcess::with_any_dt(dom, Potential::quadratic(), 1.0, 0.05, 1, 0).is_ok());
    }

    /// Stationary covariance of the Euler-Maruyama chain:
    /// `(L - dt L²/2)⁻¹`.
    fn em_covariance(dom: &LatticeDomain, dt: f64) -> DMatrix<f64> {
        let l = dirichlet_laplacian(dom).unwrap();
        let m = &l - (&l * &l) * (0.5 * dt);
        m.try_inverse().unwrap()
    }

    fn edge_var(cov: &DMatrix<f64>, dom: &LatticeDomain, edge: usize) -> f64 {
        let mut u = vec![0.0; dom.num_edges()];
        u[edge] = 1.0;
        let c = edge_weights_to_vertex(dom, &u);
        c.dot(&(cov * &c))
    }

    #[test]
    fn quadratic_environment_keeps_its_law() {
        let dom = square(6.0);
        let dt = 0.01;
        let probe = dom.edge_between(centre(&dom, 6), centre(&dom, 6) + 1).unwrap().edge;
        let exact = edge_var(&dirichlet_green(&dom).unwrap(), &dom, probe);
        let em = edge_var(&em_covariance(&dom, dt), &dom, probe);
        let mut groups = Vec::new();
        for k in 0..20 {
            let mut env = EnvironmentProcess::new(dom.clone(), Potential::quadratic(), 3.0, dt, 7, k).unwrap();
            env.initialize_gaussian(0.0).unwrap();
            let mut g = Vec::new();
            for _ in 0..100 {
                evolve_environment(&mut env, 1.0).unwrap();
                g.push(env.eta_tilde(probe).powi(2));
            }
            groups.push(g);
        }
        let (v, se) = jackknife_mean(&groups);
        assert!((v - em).abs() < 3.0 * se, "{v} ± {se}, em {em}, exact {exact}");
        assert!((v - exact).abs() < 3.0 * se + (em - exact).abs());
    }

    #[test]
    fn integrator_bias_is_first_order() {
        let dom = square(4.0);
        let c = centre(&dom, 4);
        let probe = dom.edge_between(c, c + 1).unwrap().edge;
        let exact = edge_var(&dirichlet_green(&dom).unwrap(), &dom, probe);
        let b1 = edge_var(&em_covariance(&dom, 0.02), &dom, probe) - exact;
        let b2 = edge_var(&em_covariance(&dom, 0.01), &dom, probe) - exact;
        assert!((b1 / b2 - 2.0).abs() < 0.1, "{}", b1 / b2);
        // and the simulated chain shows the larger bias at a coarse step
        let mut vals = Vec::new();
        let mut env = EnvironmentProcess::with_any_dt(dom.clone(), Potential::quadratic(), 1.0, 0.1, 9, 0).unwrap();
        env.initialize_gaussian(0.0).unwrap();
        for _ in 0..200_000 {
            env.step().unwrap();
            vals.push(env.eta_tilde(probe).powi(2));
        }
        let em = edge_var(&em_covariance(&dom, 0.1), &dom, probe);
        let (v, se) = jackknife_mean(&crate::diagnostics::into_blocks(&vals, 50));
        assert!((v - em).abs() < 3.0 * se, "{v} ± {se} vs {em} (exact {exact})");
    }

    #[test]
    fn rates_stay_in_ellipticity_window_and_approach_one() {
        let delta = 0.6;
        let pot = Potential::truncated_convex(delta).unwrap();
        let dom = square(16.0);
        let mut means = Vec::new();
        for (k, beta) in [10.0, 40.0, 160.0].into_iter().enumerate() {
            let mut groups = Vec::new();
            for e in 0..6 {
                let mut env = EnvironmentProcess::new(dom.clone(), pot, beta, 0.01, 17, (k * 10 + e) as u64).unwrap();
                env.initialize_gaussian(2.0).unwrap();
                let spec = WalkSpec { horizon: 4.0, cap: 1.0, boundary: BoundaryMode::Guarded { margin: 0.1 } };
                let trajs = simulate_walks(
                    &mut env,
                    &vec![centre(&dom, 16); 30],
                    &spec,
                    &mut stream_rng(5, (k * 10 + e) as u64),
                )
                .unwrap();
                for t in &trajs {
                    assert!(t.min_rate >= delta.cos() - 1e-12 && t.max_rate <= 1.0 + 1e-12);
                }
                groups.push(trajs.iter().map(|t| t.mean_candidate_rate()).collect::<Vec<_>>());
            }
            means.push(jackknife_mean(&groups));
        }
        for w in means.windows(2) {
            assert!(w[1].0 + 2.0 * (w[0].1 + w[1].1) >= w[0].0, "{means:?}");
        }
        assert!(means[2].0 > 0.99);
        assert!(means[0].0 < means[2].0);
    }

    #[test]
    fn scaling_report_on_simple_walk() {
        let eps = 0.25;
        let horizon = 1.0 / (eps * eps);
        let side = guarded_box_side(2, horizon);
        let dom = square(side as f64);
        let spec = WalkSpec { horizon, cap: 1.0, boundary: BoundaryMode::Guarded { margin: 0.1 } };
        let mut groups = Vec::new();
        for g in 0..20 {
            let mut env = FrozenRates::uniform(dom.clone(), 1.0).unwrap();
            groups.push(
                simulate_walks(&mut env, &vec![centre(&dom, side as i64); 50], &spec, &mut stream_rng(6, g as u64))
                    .unwrap(),
            );
        }
        let rep = diffusive_scaling_check(&dom, &groups, eps, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(rep.rows[0].var_ratio, vec![0.0, 0.0]);
        for row in &rep.rows[1..] {
            for a in 0..2 {
                assert!((row.var_ratio[a] - 1.0).abs() < 3.0 * row.var_ratio_se[a]);
                assert!(row.mean[a].abs() < 3.0 * row.mean_se[a]);
            }
            assert!(row.cross_cov.abs() < 3.0 * row.cross_cov_se);
        }
        assert!(rep.gaussian_pass);
        assert!(diffusive_scaling_check(&dom, &groups[..5], eps, &[1.0]).is_err());
    }

    #[test]
    fn covariance_identity_quadratic() {
        let dom = square(4.0);
        let c = centre(&dom, 4);
        let b = dom.edge_between(c, c + 1).unwrap().edge;
        let mut u = vec![0.0; dom.num_edges()];
        u[b] = 1.0;
        let spec =
            CovarianceCheckSpec { beta: 1.0, dt: 0.01, truncation: 40.0, n_env: 40, walkers: 500, burn: 0.0, seed: 3 };
        let (rhs, se, tail) = covariance_rhs(&dom, &Potential::quadratic(), &u, &u, &spec).unwrap();
        let oracle = edge_var(&dirichlet_green(&dom).unwrap(), &dom, b);
        assert!((rhs - oracle).abs() < 3.0 * se, "{rhs} ± {se} vs {oracle}");
        assert!(tail < 1e-6);
        let zero = vec![0.0; dom.num_edges()];
        let (r0, _, _) = covariance_rhs(&dom, &Potential::quadratic(), &zero, &u, &spec).unwrap();
        assert_eq!(r0, 0.0);
    }
}
