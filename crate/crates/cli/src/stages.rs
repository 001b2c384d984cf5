//! Analysis stages. Each returns its verdict, a JSON summary and the
//! files it wants written; writing is left to the caller.

use std::f64::consts::PI;
use std::sync::Arc;

use gradfield_core::diagnostics::{jackknife_covariance, jackknife_mean, wilson_interval};
use gradfield_core::gradient::{vortex_census, Coupler, CouplingSpec};
use gradfield_core::hswalk::{
    diffusive_scaling_check, guarded_box_side, simulate_walks, BoundaryMode, EnvironmentProcess, FrozenRates,
    ScalingReport, WalkSpec, WalkTrajectory,
};
use gradfield_core::oracle::{dirichlet_green, edge_form_covariance};
use gradfield_core::rng::{stream_rng, substream};
use gradfield_core::statistics::{
    brascamp_lieb_check, contour_probability, convex_contour_bound, default_t_grid, dirichlet_energy, fit_contour_rate,
    gaussian_limit_report, EnergyKind, Pairing, RatePoint,
};
use gradfield_core::{build_rect_domain, LatticeDomain, Model, Potential};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    BrascampLiebSection, ContourSection, CoupleSection, FluctSection, OracleSection, PhiKind, WalkSection,
};
use crate::samples::SampleSet;
use crate::{to_json, CliError, Result};

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub name: String,
    /// `None` for purely descriptive stages.
    pub verdict: Option<bool>,
    pub summary: Value,
    /// `(relative path, contents)`.
    pub files: Vec<(String, Vec<u8>)>,
}

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn phi_for(set: &SampleSet, kind: PhiKind) -> gradfield_core::statistics::TestFunction {
    kind.build(&set.sidecar.domain.box_lo, &set.sidecar.domain.box_hi)
}

/// Canonical edge leaving the vertex nearest the box centre along the
/// first axis.
pub fn central_edge(dom: &LatticeDomain) -> Option<usize> {
    let d = dom.dim();
    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    for v in 0..dom.num_vertices() {
        for (a, &c) in dom.coords(v).iter().enumerate() {
            lo[a] = lo[a].min(c);
            hi[a] = hi[a].max(c);
        }
    }
    let mid: Vec<i64> = (0..d).map(|a| (lo[a] + hi[a]) / 2).collect();
    let v = dom.index_of(&mid)?;
    let w = dom.shift(v, 0, 1)?;
    dom.edge_between(v, w).map(|de| de.edge)
}

/// One row of the oracle covariance table.
#[derive(Debug, Clone, Serialize)]
pub struct CovarianceEntry {
    pub i: usize,
    pub j: usize,
    pub empirical: f64,
    pub se: f64,
    pub oracle: f64,
    pub z: f64,
}

/// Sampled covariance of `θ` on interior vertices against the inverse
/// Dirichlet Laplacian, and `Var⟨η̃, φ⟩` against the oracle quadratic form.
pub fn oracle_stage(set: &SampleSet, cfg: &OracleSection, blocks: usize) -> Result<StageOutput> {
    let dom = &set.domain;
    let beta = set.beta();
    let interior = dom.interior().to_vec();
    let green = dirichlet_green(dom)?;
    let groups = set.grouped(blocks, |th| interior.iter().map(|&x| th[x]).collect::<Vec<f64>>());
    let (cov, se) = jackknife_covariance(&groups);
    let n = interior.len();
    let mut entries = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let oracle = green[(i, j)] / beta;
            let k = i * n + j;
            entries.push(CovarianceEntry {
                i: interior[i],
                j: interior[j],
                empirical: cov[k],
                se: se[k],
                oracle,
                z: (cov[k] - oracle) / se[k],
            });
        }
    }
    let worst_z = entries.iter().map(|e| e.z.abs()).fold(0.0, f64::max);
    let over = entries.iter().filter(|e| !(e.z.abs() <= 3.0)).count();

    let phi = phi_for(set, cfg.phi);
    let pairing = Pairing::new(dom, &phi)?;
    let pgroups = set.grouped(blocks, |th| pairing.evaluate(&set.eta(th), beta));
    let (var, var_se) = gradfield_core::diagnostics::jackknife(&pgroups, gradfield_core::diagnostics::variance);
    let w: Vec<f64> = pairing.weights.iter().map(|x| x * pairing.scale).collect();
    let var_oracle = beta * edge_form_covariance(dom, &green, &w, &w, beta);
    let pairing_z = (var - var_oracle) / var_se;
    let pass = over == 0 && pairing_z.abs() <= 3.0;
    let csv = csv_bytes(
        &["i", "j", "empirical", "se", "oracle", "z"],
        entries.iter().map(|e| {
            [
                e.i.to_string(),
                e.j.to_string(),
                e.empirical.to_string(),
                e.se.to_string(),
                e.oracle.to_string(),
                e.z.to_string(),
            ]
        }),
    );
    let summary = json!({
        "entries": entries.len(),
        "entries_outside_3se": over,
        "worst_abs_z": worst_z,
        "pairing": {
            "phi": cfg.phi.name(),
            "variance": var,
            "variance_se": var_se,
            "oracle": var_oracle,
            "z": pairing_z,
        },
        "pass": pass,
    });
    let mut files = vec![("oracle_covariance.csv".to_string(), csv)];
    files.push(("oracle.json".into(), to_json(&summary)));
    Ok(StageOutput { name: "oracle".into(), verdict: Some(pass), summary, files })
}

#[derive(Debug, Clone, Serialize)]
pub struct CensusRecord {
    pub chain: usize,
    pub sweep: u64,
    pub n_plus: usize,
    pub n_minus: usize,
    pub charged_plaquettes: Vec<usize>,
}

pub fn vortices_stage(set: &SampleSet) -> Result<StageOutput> {
    if !set.model.is_angular() {
        return Err(CliError::Usage("vortex census needs an XY sample".into()));
    }
    let mut records = Vec::with_capacity(set.len());
    for (c, chain) in set.chains.iter().enumerate() {
        for (sweep, th) in chain {
            let census = vortex_census(&set.eta(th))?;
            records.push(CensusRecord {
                chain: c,
                sweep: *sweep,
                n_plus: census.n_plus,
                n_minus: census.n_minus,
                charged_plaquettes: census.charged,
            });
        }
    }
    let with = records.iter().filter(|r| r.n_plus + r.n_minus > 0).count();
    let (lo, hi) = wilson_interval(with, records.len(), 1.96);
    let summary = json!({
        "samples": records.len(),
        "with_vortex": with,
        "fraction": with as f64 / records.len().max(1) as f64,
        "wilson95": [lo, hi],
    });
    let files = vec![("vortices.json".to_string(), to_json(&json!({ "summary": summary, "census": records })))];
    Ok(StageOutput { name: "vortices".into(), verdict: None, summary, files })
}

/// Characteristic-function test of `⟨η̃, φ⟩` against `N(0, Q_ε)`.
pub fn fluct_stage(set: &SampleSet, cfg: &FluctSection, blocks: usize) -> Result<StageOutput> {
    let mut files = Vec::new();
    let mut reports = serde_json::Map::new();
    let mut pass = true;
    for &kind in &cfg.phi {
        let phi = phi_for(set, kind);
        let pairing = Pairing::new(&set.domain, &phi)?;
        let q = pairing.discrete_energy();
        let q_cont = dirichlet_energy(&phi, None)?;
        let groups = set.grouped(blocks, |th| pairing.evaluate(&set.eta(th), set.beta()));
        let grid = cfg.tgrid.clone().unwrap_or_else(|| default_t_grid(q));
        let rep = gaussian_limit_report(&groups, q, EnergyKind::Discrete, Some(q_cont), &grid)?;
        pass &= rep.pass;
        let c = &rep.charfn;
        files.push((
            format!("fluct_{}.csv", kind.name()),
            csv_bytes(
                &["t", "re", "im", "se_re", "se_im", "ref"],
                (0..c.t.len())
                    .map(|i| [c.t[i], c.re[i], c.im[i], c.se_re[i], c.se_im[i], c.reference[i]].map(|x| x.to_string())),
            ),
        ));
        reports.insert(kind.name().into(), serde_json::to_value(&rep).expect("serializable"));
    }
    let summary = json!({ "reports": reports, "pass": pass });
    files.push(("fluct.json".into(), to_json(&summary)));
    Ok(StageOutput { name: "fluct".into(), verdict: Some(pass), summary, files })
}

#[derive(Debug, Clone, Serialize)]
pub struct ContourRow {
    pub beta: f64,
    pub a: f64,
    pub n: usize,
    pub hits: usize,
    pub p: f64,
    pub se: f64,
    pub convex_bound: Option<f64>,
    pub within_bound: Option<bool>,
}

/// Contour probabilities for one or more sample sets (one per `β`),
/// with the exponential-rate regression across all cells.
pub fn contour_stage(sets: &[SampleSet], cfg: &ContourSection) -> Result<StageOutput> {
    let mut rows = Vec::new();
    for set in sets {
        let dom = &set.domain;
        let edges = match &cfg.edges {
            Some(e) => e.clone(),
            None => vec![central_edge(dom).ok_or_else(|| CliError::Usage("domain has no central edge".into()))?],
        };
        if let Some(&b) = edges.iter().find(|&&b| b >= dom.num_edges()) {
            return Err(CliError::Usage(format!("edge {b} out of range (domain has {} edges)", dom.num_edges())));
        }
        let etas: Vec<Vec<f64>> = set.chains.iter().flatten().map(|(_, th)| set.eta(th).eta).collect();
        let refs: Vec<&[f64]> = etas.iter().map(Vec::as_slice).collect();
        let potential = set.model.pair_potential();
        for &a in &cfg.a {
            let est = contour_probability(&refs, &edges, a)?;
            let bound = match set.model {
                Model::Gradient(p) if p.supports_contour_bound() && p.delta().is_some_and(|d| a < d) => {
                    Some(convex_contour_bound(&potential, set.beta(), a, edges.len())?)
                }
                _ => None,
            };
            rows.push(ContourRow {
                beta: set.beta(),
                a,
                n: est.n,
                hits: est.hits,
                p: est.p,
                se: est.se,
                convex_bound: bound,
                within_bound: bound.map(|b| est.p <= b + 2.0 * est.se),
            });
        }
    }
    let points: Vec<RatePoint> = rows.iter().map(|r| RatePoint { beta: r.beta, a: r.a, p: r.p, se: r.se }).collect();
    let fit = fit_contour_rate(&points).ok();
    let bounds_ok = rows.iter().all(|r| r.within_bound != Some(false));
    let pass = bounds_ok && fit.as_ref().is_none_or(|f| f.pass);
    let csv = csv_bytes(
        &["beta", "a", "n", "hits", "p", "se", "convex_bound"],
        rows.iter().map(|r| {
            [
                r.beta.to_string(),
                r.a.to_string(),
                r.n.to_string(),
                r.hits.to_string(),
                r.p.to_string(),
                r.se.to_string(),
                r.convex_bound.map_or(String::new(), |b| b.to_string()),
            ]
        }),
    );
    let summary = json!({
        "rows": rows,
        "fit": fit,
        "reference_slope": -1.0 / (PI * PI),
        "bounds_ok": bounds_ok,
        "pass": pass,
    });
    let files = vec![("contour.csv".to_string(), csv), ("contour.json".into(), to_json(&summary))];
    Ok(StageOutput { name: "contour".into(), verdict: Some(pass), summary, files })
}

pub fn brascamp_lieb_stage(set: &SampleSet, cfg: &BrascampLiebSection, blocks: usize) -> Result<StageOutput> {
    let Model::Gradient(potential) = set.model else {
        return Err(CliError::Usage("Brascamp-Lieb check needs a convex gradient model".into()));
    };
    let sb = set.beta().sqrt();
    let edge_groups = set.grouped(blocks, |th| set.eta(th).eta.iter().map(|e| sb * e).collect::<Vec<f64>>());
    let pairing = Pairing::new(&set.domain, &phi_for(set, cfg.phi))?;
    let pgroups = set.grouped(blocks, |th| pairing.evaluate(&set.eta(th), set.beta()));
    let rep = brascamp_lieb_check(&potential, &edge_groups, &pgroups, pairing.discrete_energy(), &cfg.t)?;
    let pass = rep.variance_pass && rep.mgf_pass;
    let summary = serde_json::to_value(&rep).expect("serializable");
    let csv = csv_bytes(
        &["edge", "variance", "se", "bound"],
        (0..rep.edge_variance.len()).map(|b| {
            [
                b.to_string(),
                rep.edge_variance[b].to_string(),
                rep.edge_variance_se[b].to_string(),
                rep.variance_bound.to_string(),
            ]
        }),
    );
    let files = vec![("brascamp_lieb.csv".to_string(), csv), ("brascamp_lieb.json".into(), to_json(&summary))];
    Ok(StageOutput { name: "brascamp_lieb".into(), verdict: Some(pass), summary, files })
}

/// Draws from the XY / truncated-convex coupling.
pub fn couple_stage(dom: &Arc<LatticeDomain>, beta: f64, cfg: &CoupleSection, seed: u64) -> Result<StageOutput> {
    let spec = CouplingSpec { thin: cfg.thin, pilot_draws: cfg.pilot, ..CouplingSpec::new(cfg.delta, beta, seed) };
    let mut coupler = Coupler::new(dom, spec)?;
    let mut rows = Vec::with_capacity(cfg.draws);
    let mut agreed = 0;
    let mut mismatched = 0;
    for k in 0..cfg.draws {
        let pair = coupler.draw()?;
        if pair.agreed {
            agreed += 1;
            if pair.eta_xy.eta != pair.eta_delta.eta {
                mismatched += 1;
            }
        }
        rows.push([
            k.to_string(),
            pair.agreed.to_string(),
            pair.bad_edges.len().to_string(),
            pair.eta_xy.max_abs().to_string(),
        ]);
    }
    let freq = agreed as f64 / cfg.draws.max(1) as f64;
    let (lo, hi) = wilson_interval(agreed, cfg.draws, 1.96);
    let pass = freq >= 0.99 && mismatched == 0;
    let summary = json!({
        "draws": cfg.draws,
        "agreed": agreed,
        "agreement": freq,
        "wilson95": [lo, hi],
        "agreed_but_different": mismatched,
        "weights": coupler.weights(),
        "pass": pass,
    });
    let files = vec![
        ("couple.csv".to_string(), csv_bytes(&["draw", "agreed", "n_bad_edges", "max_abs_eta"], rows)),
        ("couple.json".into(), to_json(&summary)),
    ];
    Ok(StageOutput { name: "couple".into(), verdict: Some(pass), summary, files })
}

/// Walks in `pairs` independent environments on a guarded box, each
/// environment shared by `walkers` walkers. Returns trajectories grouped
/// by environment and the lattice they ran on.
pub fn run_walks(
    potential: &Potential,
    beta: f64,
    d: usize,
    cfg: &WalkSection,
    seed: u64,
) -> Result<(Arc<LatticeDomain>, Vec<Vec<WalkTrajectory>>)> {
    let horizon = cfg.t / (cfg.eps * cfg.eps);
    let side = guarded_box_side(d, horizon);
    let side = side + side % 2;
    let dom = Arc::new(build_rect_domain(d, 1.0, &vec![0.0; d], &vec![side as f64; d])?);
    let centre = dom.index_of(&vec![(side / 2) as i64; d]).expect("centre lies in the box");
    let cap =
        potential.c_plus().ok_or_else(|| CliError::Usage("walk needs a potential with bounded curvature".into()))?;
    let spec = WalkSpec { horizon, cap, boundary: BoundaryMode::Guarded { margin: 0.1 } };
    let starts = vec![centre; cfg.walkers];
    let groups: Vec<Result<Vec<WalkTrajectory>>> = (0..cfg.pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, substream(4, k as u64));
            if potential.has_constant_curvature() {
                let mut env = FrozenRates::uniform(Arc::clone(&dom), potential.second(0.0))?;
                Ok(simulate_walks(&mut env, &starts, &spec, &mut rng)?)
            } else {
                let mut env =
                    EnvironmentProcess::new(Arc::clone(&dom), *potential, beta, cfg.dt, seed, substream(3, k as u64))?;
                env.initialize_gaussian(cfg.burn)?;
                Ok(simulate_walks(&mut env, &starts, &spec, &mut rng)?)
            }
        })
        .collect();
    Ok((dom, groups.into_iter().collect::<Result<_>>()?))
}

/// Verdict on a scaling report: variance ratio 1 within 3 SE (constant
/// curvature) or within `tolerance`, zero cross covariance within 3 SE,
/// and the Gaussian characteristic-function check.
pub fn scaling_verdict(rep: &ScalingReport, constant_curvature: bool, tolerance: f64) -> bool {
    let last = rep.rows.last().expect("nonempty grid");
    let var_ok = last.var_ratio.iter().zip(&last.var_ratio_se).all(|(r, se)| {
        if constant_curvature {
            (r - 1.0).abs() <= 3.0 * se
        } else {
            (r - 1.0).abs() <= tolerance
        }
    });
    var_ok && last.cross_cov.abs() <= 3.0 * last.cross_cov_se && rep.gaussian_pass
}

pub fn walk_stage(potential: &Potential, beta: f64, d: usize, cfg: &WalkSection, seed: u64) -> Result<StageOutput> {
    let (dom, groups) = run_walks(potential, beta, d, cfg, seed)?;
    let t_grid: Vec<f64> = [0.25, 0.5, 0.75, 1.0].iter().map(|f| f * cfg.t).collect();
    let rep = diffusive_scaling_check(&dom, &groups, cfg.eps, &t_grid)?;
    let pass = scaling_verdict(&rep, potential.has_constant_curvature(), 0.05);
    let mut header = vec!["pair_id".to_string(), "t".to_string()];
    header.extend((1..=d).map(|a| format!("x_{a}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for (k, g) in groups.iter().enumerate() {
        for (w, tr) in g.iter().enumerate() {
            for &t in &t_grid {
                let mut r = vec![(k * cfg.walkers + w).to_string(), t.to_string()];
                r.extend(
                    tr.displacement_at(&dom, t / (cfg.eps * cfg.eps)).iter().map(|x| (cfg.eps * *x as f64).to_string()),
                );
                rows.push(r);
            }
        }
    }
    let rates: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|t| t.mean_candidate_rate()).collect()).collect();
    let (mean_rate, mean_rate_se) = jackknife_mean(&rates);
    let summary = json!({
        "report": rep,
        "mean_rate_seen": mean_rate,
        "mean_rate_seen_se": mean_rate_se,
        "pass": pass,
    });
    let files = vec![("walk.csv".to_string(), csv_bytes(&header, rows)), ("walk.json".into(), to_json(&summary))];
    Ok(StageOutput { name: "walk".into(), verdict: Some(pass), summary, files })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelKind, ModelSection, SamplingSection};
    use gradfield_core::DomainDescriptor;

    fn set(kind: ModelKind, delta: Option<f64>, beta: f64) -> SampleSet {
        let dsc = DomainDescriptor { d: 2, eps: 0.125, box_lo: vec![0.0, 0.0], box_hi: vec![1.0, 1.0] };
        let model = ModelSection { kind, lambda: None, delta, h: None };
        let sampling = SamplingSection { chains: 2, samples: 600, thin: 2, burnin: None, blocks: 4 };
        SampleSet::generate(&dsc, &model, beta, &sampling, 11, 0).unwrap()
    }

    #[test]
    fn central_edge_is_central() {
        let dom = build_rect_domain(2, 0.125, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let e = dom.edge(central_edge(&dom).unwrap());
        assert_eq!(dom.coords(e.tail), &[4, 4]);
    }

    #[test]
    fn stages_produce_tables() {
        let xy = set(ModelKind::Xy, None, 8.0);
        let out = vortices_stage(&xy).unwrap();
        assert_eq!(out.summary["samples"], 1200);
        let f = fluct_stage(&xy, &FluctSection { phi: vec![PhiKind::Bump], tgrid: None }, 4).unwrap();
        let table = String::from_utf8(f.files[0].1.clone()).unwrap();
        assert!(table.starts_with("t,re,im,se_re,se_im,ref\n"));
        assert_eq!(table.lines().count(), 6);
        let c =
            contour_stage(&[xy], &ContourSection { betas: vec![8.0], a: vec![0.1, 0.2, 0.3], edges: None }).unwrap();
        assert!(c.summary["fit"]["slope"].as_f64().unwrap() < 0.0);
        assert!(c.summary["fit"]["c_fit"].as_f64().is_some());
        let g = set(ModelKind::Graddelta, Some(1.0), 20.0);
        assert!(vortices_stage(&g).is_err());
        let bl = brascamp_lieb_stage(&g, &BrascampLiebSection { t: vec![0.5, 1.0], phi: PhiKind::Bump }, 4).unwrap();
        assert_eq!(bl.verdict, Some(true));
    }
}
