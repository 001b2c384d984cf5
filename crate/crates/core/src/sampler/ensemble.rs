//! Independent chains, burn-in policy and mixing diagnostics.

use std::sync::Arc;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AcceptanceStats, Model, SamplerState, Scheme, SpinConfig, Update};
use crate::diagnostics::{integrated_autocorr_time, inter_chain_ratio};
use crate::error::{Error, Result};
use crate::lattice::LatticeDomain;

const PILOT_SWEEPS: usize = 400;
const TUNE_ROUNDS: usize = 20;
const TUNE_BATCH: usize = 10;
const MIN_BURNIN: usize = 50;
const RATIO_WARN: f64 = 1.1;

/// Parameters shared by every chain of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSpec {
    pub model: Model,
    pub beta: f64,
    /// `None` picks [`Scheme::default_for`].
    pub scheme: Option<Scheme>,
    pub n_chains: usize,
    /// Post-pilot burn-in in sweeps; `None` uses 20 integrated
    /// autocorrelation times measured on the pilot.
    pub burnin: Option<usize>,
    pub n_samples: usize,
    pub thin: usize,
    pub seed: u64,
    /// Chain `c` uses RNG stream `stream_offset + c`.
    pub stream_offset: u64,
}

impl ChainSpec {
    pub fn new(model: Model, beta: f64, seed: u64) -> Self {
        Self { model, beta, scheme: None, n_chains: 4, burnin: None, n_samples: 1000, thin: 1, seed, stream_offset: 0 }
    }

    fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::InvalidParameter("n_chains must be at least 1".into()));
        }
        if self.thin == 0 || self.burnin == Some(0) {
            return Err(Error::InvalidParameter("burnin and thin must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-chain bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub stream: u64,
    pub scheme: Scheme,
    pub burnin_sweeps: usize,
    /// Integrated autocorrelation time of `Σ_b cos η(b)`, in recorded samples.
    pub tau_int: f64,
    /// Same, measured on the pilot, in composite sweeps.
    pub pilot_tau: f64,
    pub acceptance: AcceptanceStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleDiagnostics {
    pub chains: Vec<ChainSummary>,
    /// Gelman-Rubin style ratio on `Σ_b cos η(b)`; NaN with one chain.
    pub inter_chain_ratio: f64,
    pub warning: Option<String>,
}

/// Per-chain observations from [`run_chains`].
#[derive(Debug, Clone)]
pub struct ChainRun<T> {
    pub per_chain: Vec<Vec<T>>,
    pub diagnostics: EnsembleDiagnostics,
}

impl<T> ChainRun<T> {
    pub fn flatten(self) -> Vec<T> {
        self.per_chain.into_iter().flatten().collect()
    }
}

/// A recorded configuration with its provenance.
#[derive(Debug, Clone)]
pub struct Sample {
    pub chain: usize,
    pub stream: u64,
    pub sweep: u64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub domain: Arc<LatticeDomain>,
    pub model: Model,
    pub beta: f64,
    pub seed: u64,
    pub samples: Vec<Sample>,
    pub diagnostics: EnsembleDiagnostics,
}

impl Ensemble {
    pub fn config(&self, i: usize) -> SpinConfig {
        SpinConfig { domain: Arc::clone(&self.domain), theta: self.samples[i].theta.clone(), model: self.model }
    }
}

/// Runs `spec.n_chains` chains in parallel and applies `visit` to every
/// recorded configuration. The third argument of `visit` is the sweep
/// count at recording time.
pub fn run_chains<T, F>(dom: &Arc<LatticeDomain>, spec: &ChainSpec, visit: F) -> Result<ChainRun<T>>
where
    T: Send,
    F: Fn(&SpinConfig, usize, u64) -> T + Sync,
{
    spec.validate()?;
    let results: Vec<Result<(Vec<T>, ChainSummary, Vec<f64>)>> =
        (0..spec.n_chains).into_par_iter().map(|c| run_one(dom, spec, c, &visit)).collect();
    let mut per_chain = Vec::with_capacity(spec.n_chains);
    let mut chains = Vec::with_capacity(spec.n_chains);
    let mut traces = Vec::with_capacity(spec.n_chains);
    for r in results {
        let (obs, summary, trace) = r?;
        per_chain.push(obs);
        chains.push(summary);
        traces.push(trace);
    }
    let ratio =
        if traces.len() > 1 && traces.iter().all(|t| t.len() > 1) { inter_chain_ratio(&traces) } else { f64::NAN };
    let warning = (ratio > RATIO_WARN).then(|| {
        let msg = format!("inter-chain variance ratio {ratio:.3} exceeds {RATIO_WARN}");
        warn!("{msg}");
        msg
    });
    Ok(ChainRun { per_chain, diagnostics: EnsembleDiagnostics { chains, inter_chain_ratio: ratio, warning } })
}

fn run_one<T, F>(
    dom: &Arc<LatticeDomain>,
    spec: &ChainSpec,
    c: usize,
    visit: &F,
) -> Result<(Vec<T>, ChainSummary, Vec<f64>)>
where
    F: Fn(&SpinConfig, usize, u64) -> T,
{
    let stream = spec.stream_offset + c as u64;
    let cfg = SpinConfig::zeros(Arc::clone(dom), spec.model);
    let mut st = SamplerState::new(cfg, spec.beta, spec.seed, stream)?;
    let eq = equilibrate(&mut st, spec.scheme, spec.burnin)?;
    let (scheme, pilot_tau, burnin) = (eq.scheme, eq.pilot_tau, eq.burnin_sweeps);
    debug!("chain {c}: pilot tau {pilot_tau:.2}, burn-in {burnin}");

    let mut obs = Vec::with_capacity(spec.n_samples);
    let mut trace = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        for _ in 0..spec.thin {
            st.sweep(&scheme)?;
        }
        trace.push(st.config.sum_cos_eta());
        obs.push(visit(&st.config, c, st.sweeps));
    }
    let tau_int = if trace.len() > 1 { integrated_autocorr_time(&trace) } else { f64::NAN };
    let summary =
        ChainSummary { chain: c, stream, scheme, burnin_sweeps: burnin, tau_int, pilot_tau, acceptance: st.stats };
    Ok((obs, summary, trace))
}

/// Outcome of [`equilibrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibration {
    pub scheme: Scheme,
    /// Integrated autocorrelation time of `Σ_b cos η(b)` on the pilot.
    pub pilot_tau: f64,
    /// Sweeps spent, pilot included.
    pub burnin_sweeps: usize,
}

/// Brings a chain to equilibrium: tunes the Metropolis width (if any)
/// towards 50% acceptance, runs a pilot to estimate the autocorrelation
/// time, then burns in for `burnin` further sweeps or, if `None`, for 20
/// autocorrelation times. Acceptance counters are reset afterwards.
pub fn equilibrate(st: &mut SamplerState, scheme: Option<Scheme>, burnin: Option<usize>) -> Result<Equilibration> {
    let dim = st.config.domain.dim();
    let mut scheme = scheme.unwrap_or_else(|| Scheme::default_for(&st.config.model, st.beta, dim));
    if let Update::Metropolis { width } = scheme.update {
        scheme.update = Update::Metropolis { width: tune_width(st, width) };
    }
    let mut pilot = Vec::with_capacity(PILOT_SWEEPS);
    for _ in 0..PILOT_SWEEPS {
        st.sweep(&scheme)?;
        pilot.push(st.config.sum_cos_eta());
    }
    let pilot_tau = integrated_autocorr_time(&pilot[PILOT_SWEEPS / 2..]);
    let extra = burnin.unwrap_or_else(|| ((20.0 * pilot_tau).ceil() as usize).max(MIN_BURNIN));
    for _ in 0..extra {
        st.sweep(&scheme)?;
    }
    st.stats = AcceptanceStats::default();
    Ok(Equilibration { scheme, pilot_tau, burnin_sweeps: PILOT_SWEEPS + extra })
}

/// Adjusts the Metropolis width towards 50% acceptance. Runs before any
/// recorded sample, so the recorded chain is time-homogeneous.
fn tune_width(st: &mut SamplerState, mut width: f64) -> f64 {
    for _ in 0..TUNE_ROUNDS {
        let before = st.stats.metropolis;
        for _ in 0..TUNE_BATCH {
            st.metropolis_sweep(width);
        }
        let proposed = st.stats.metropolis.proposed - before.proposed;
        let accepted = st.stats.metropolis.accepted - before.accepted;
        let rate = accepted as f64 / proposed.max(1) as f64;
        width *= (2.0 * (rate - 0.5)).exp();
        if st.config.model.is_angular() {
            width = width.min(std::f64::consts::PI);
        }
    }
    width
}

/// Runs the chains and keeps every recorded configuration.
pub fn sample_ensemble(dom: &Arc<LatticeDomain>, spec: &ChainSpec) -> Result<Ensemble> {
    let run = run_chains(dom, spec, |cfg, c, sweep| Sample {
        chain: c,
        stream: spec.stream_offset + c as u64,
        sweep,
        theta: cfg.theta.clone(),
    })?;
    let diagnostics = run.diagnostics.clone();
    Ok(Ensemble {
        domain: Arc::clone(dom),
        model: spec.model,
        beta: spec.beta,
        seed: spec.seed,
        samples: run.flatten(),
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{into_blocks, jackknife_mean};
    use crate::lattice::build_rect_domain;
    use crate::oracle::dirichlet_green;
    use crate::potentials::Potential;

    #[test]
    fn streams_are_distinct() {
        let dom = Arc::new(build_rect_domain(2, 1.0, &[0.0, 0.0], &[5.0, 5.0]).unwrap());
        let mut spec = ChainSpec::new(Model::xy(), 1.0, 12);
        spec.n_samples = 5;
        spec.burnin = Some(1);
        let ens = sample_ensemble(&dom, &spec).unwrap();
        assert_eq!(ens.samples.len(), 20);
        let last: Vec<_> = (0..4).map(|c| ens.samples[c * 5 + 4].theta.clone()).collect();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(last[i], last[j]);
            }
        }
        assert!(ens.samples.iter().all(|s| dom.boundary_vertices().all(|v| s.theta[v] == 0.0)));
    }

    #[test]
    fn invalid_spec() {
        let dom = Arc::new(build_rect_domain(2, 1.0, &[0.0, 0.0], &[3.0, 3.0]).unwrap());
        let mut spec = ChainSpec::new(Model::xy(), 1.0, 1);
        spec.n_chains = 0;
        assert!(sample_ensemble(&dom, &spec).is_err());
        spec.n_chains = 1;
        spec.thin = 0;
        assert!(sample_ensemble(&dom, &spec).is_err());
    }

    #[test]
    fn quadratic_covariance_matches_green_function() {
        let dom = Arc::new(build_rect_domain(2, 1.0, &[0.0, 0.0], &[4.0, 4.0]).unwrap());
        let beta = 1.0;
        let mut spec = ChainSpec::new(Model::Gradient(Potential::quadratic()), beta, 2024);
        spec.n_chains = 8;
        spec.n_samples = 4000;
        spec.thin = 2;
        let interior = dom.interior().to_vec();
        let run =
            run_chains(&dom, &spec, |cfg, _, _| interior.iter().map(|&x| cfg.theta[x]).collect::<Vec<f64>>()).unwrap();
        let g = dirichlet_green(&dom).unwrap();
        let m = interior.len();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in i..m {
                let groups: Vec<Vec<f64>> = run
                    .per_chain
                    .iter()
                    .flat_map(|ch| into_blocks(&ch.iter().map(|v| v[i] * v[j]).collect::<Vec<_>>(), 10))
                    .collect();
                let (est, se) = jackknife_mean(&groups);
                worst = worst.max((est - g[(i, j)] / beta).abs() / se);
            }
        }
        // 45 entries: the largest z-score of correlated normals rarely exceeds 4
        assert!(worst < 4.0, "worst z {worst}");
    }

    #[test]
    fn huge_beta_xy_is_flat() {
        let dom = Arc::new(build_rect_domain(2, 1.0, &[0.0, 0.0], &[6.0, 6.0]).unwrap());
        let mut spec = ChainSpec::new(Model::xy(), 1e6, 3);
        spec.n_chains = 2;
        spec.n_samples = 50;
        spec.burnin = Some(10);
        let run = run_chains(&dom, &spec, |cfg, _, _| {
            dom.edges().iter().map(|e| (cfg.theta[e.head] - cfg.theta[e.tail]).abs()).fold(0.0, f64::max)
        })
        .unwrap();
        assert!(run.flatten().into_iter().all(|m| m < 0.05));
    }

    #[test]
    fn metropolis_tuning_reaches_half_acceptance() {
        let dom = Arc::new(build_rect_domain(2, 1.0, &[0.0, 0.0], &[6.0, 6.0]).unwrap());
        let mut spec = ChainSpec::new(Model::Gradient(Potential::truncated_convex(0.7).unwrap()), 30.0, 5);
        spec.n_chains = 1;
        spec.n_samples = 200;
        spec.scheme = Some(Scheme { update: Update::Metropolis { width: 5.0 }, overrelax: 0 });
        let run = run_chains(&dom, &spec, |_, _, _| ()).unwrap();
        let rate = run.diagnostics.chains[0].acceptance.metropolis.rate();
        assert!((rate - 0.5).abs() < 0.1, "{rate}");
    }
}
