//! Fluctuation fields, characteristic-function tests, contour
//! probabilities and Brascamp-Lieb checks.

use std::f64::consts::PI;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{jackknife, jackknife_mean, mean, skewness_kurtosis, wilson_interval};
use crate::error::{Error, Result};
use crate::gradient::GradientConfig;
use crate::lattice::LatticeDomain;
use crate::potentials::Potential;

/// Smallest sample accepted by [`gaussian_limit_report`].
pub const MIN_REPORT_SAMPLES: usize = 1000;
const MIN_CHARFN_SAMPLES: usize = 100;

/// Closed-form test functions, all of product form `Π_α f_α(x_α)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TestFunction {
    /// `Π exp(-1/(1 - u_α²))` with `u_α` the affine map of `[lo_α, hi_α]`
    /// onto `[-1, 1]`.
    Bump { lo: Vec<f64>, hi: Vec<f64> },
    /// `Π sin(k_α π (x_α - lo_α)/(hi_α - lo_α))` on the box, zero outside.
    Sine { lo: Vec<f64>, hi: Vec<f64>, modes: Vec<u32> },
    /// `Π (1 - u_α²)^p`, compactly supported and `C^{p-1}`.
    PolynomialBump { lo: Vec<f64>, hi: Vec<f64>, power: u32 },
}

impl TestFunction {
    /// Smooth bump on the middle half of the box `[lo, hi]`.
    pub fn bump_middle_half(lo: &[f64], hi: &[f64]) -> Self {
        let (l, h) = lo.iter().zip(hi).map(|(&a, &b)| (a + 0.25 * (b - a), b - 0.25 * (b - a))).unzip();
        TestFunction::Bump { lo: l, hi: h }
    }

    /// First sine mode of the box.
    pub fn first_sine(lo: &[f64], hi: &[f64]) -> Self {
        TestFunction::Sine { lo: lo.to_vec(), hi: hi.to_vec(), modes: vec![1; lo.len()] }
    }

    pub fn dim(&self) -> usize {
        self.bounds().0.len()
    }

    fn bounds(&self) -> (&[f64], &[f64]) {
        match self {
            TestFunction::Bump { lo, hi }
            | TestFunction::Sine { lo, hi, .. }
            | TestFunction::PolynomialBump { lo, hi, .. } => (lo, hi),
        }
    }

    /// Closed box outside of which `φ` vanishes.
    pub fn support(&self) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = self.bounds();
        (lo.to_vec(), hi.to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds();
        if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidParameter("test function box must satisfy lo < hi on every axis".into()));
        }
        if let TestFunction::Sine { modes, .. } = self {
            if modes.len() != lo.len() || modes.contains(&0) {
                return Err(Error::InvalidParameter("sine modes must be positive, one per axis".into()));
            }
        }
        if let TestFunction::PolynomialBump { power, .. } = self {
            if *power < 2 {
                return Err(Error::InvalidParameter("polynomial bump needs power >= 2".into()));
            }
        }
        Ok(())
    }

    /// `(f_α(t), f_α'(t))`.
    fn factor(&self, axis: usize, t: f64) -> (f64, f64) {
        let (lo, hi) = self.bounds();
        let (a, b) = (lo[axis], hi[axis]);
        if t <= a || t >= b {
            return (0.0, 0.0);
        }
        let du = 2.0 / (b - a);
        let u = (2.0 * t - a - b) / (b - a);
        match self {
            TestFunction::Bump { .. } => {
                let s = 1.0 - u * u;
                let f = (-1.0 / s).exp();
                (f, f * (-2.0 * u / (s * s)) * du)
            }
            TestFunction::Sine { modes, .. } => {
                let w = modes[axis] as f64 * PI / (b - a);
                let arg = w * (t - a);
                (arg.sin(), w * arg.cos())
            }
            TestFunction::PolynomialBump { power, .. } => {
                let p = *power as i32;
                let s = 1.0 - u * u;
                (s.powi(p), p as f64 * s.powi(p - 1) * (-2.0 * u) * du)
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(a, &t)| self.factor(a, t).0).product()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let factors: Vec<(f64, f64)> = x.iter().enumerate().map(|(a, &t)| self.factor(a, t)).collect();
        (0..x.len())
            .map(|a| factors.iter().enumerate().map(|(b, f)| if a == b { f.1 } else { f.0 }).product())
            .collect()
    }

    /// `∫ |∇φ|²` by adaptive quadrature of the one-dimensional factors.
    pub fn continuum_energy(&self) -> f64 {
        let (lo, hi) = self.bounds();
        let d = lo.len();
        let sq: Vec<f64> = (0..d).map(|a| integrate(|t| self.factor(a, t).0.powi(2), lo[a], hi[a])).collect();
        let dsq: Vec<f64> = (0..d).map(|a| integrate(|t| self.factor(a, t).1.powi(2), lo[a], hi[a])).collect();
        (0..d).map(|a| dsq[a] * (0..d).filter(|&b| b != a).map(|b| sq[b]).product::<f64>()).sum()
    }
}

/// Adaptive Simpson quadrature to roughly machine precision.
fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    // split first so that narrow features are not missed by the first
    // Simpson estimate
    let pieces = 16;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (x0, x1) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let xm = 0.5 * (x0 + x1);
            let (f0, fm, f1) = (f(x0), f(xm), f(x1));
            let whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
            step(&f, x0, x1, f0, fm, f1, whole, 1e-14, 40)
        })
        .sum()
}

/// Precomputed weights of the pairing
/// `⟨η̃, φ⟩ = ε^{d/2-1} Σ_b ∇φ(b) √β η(b)` over canonical edges.
#[derive(Debug, Clone)]
pub struct Pairing {
    /// `∇φ(b) = φ(head) - φ(tail)`.
    pub weights: Vec<f64>,
    /// `ε^{d/2-1}`.
    pub scale: f64,
    /// `φ` is nonzero on or next to the boundary.
    pub touches_boundary: bool,
    spacing: f64,
    dim: usize,
}

impl Pairing {
    pub fn new(dom: &LatticeDomain, phi: &TestFunction) -> Result<Self> {
        phi.validate()?;
        if phi.dim() != dom.dim() {
            return Err(Error::InvalidParameter(format!(
                "test function has dimension {}, domain {}",
                phi.dim(),
                dom.dim()
            )));
        }
        let values: Vec<f64> = (0..dom.num_vertices()).map(|v| phi.eval(&dom.position(v))).collect();
        Ok(Self::from_vertex_values(dom, &values))
    }

    /// Pairing with a function given by its lattice values.
    pub fn from_vertex_values(dom: &LatticeDomain, values: &[f64]) -> Self {
        let weights = dom.edges().iter().map(|e| values[e.head] - values[e.tail]).collect();
        let near_boundary =
            |v: usize| dom.is_boundary(v) || dom.incident(v).iter().any(|i| dom.is_boundary(i.neighbor));
        let touches_boundary = (0..dom.num_vertices()).any(|v| values[v].abs() > 1e-300 && near_boundary(v));
        let d = dom.dim();
        let eps = dom.spacing();
        Self { weights, scale: eps.powf(d as f64 / 2.0 - 1.0), touches_boundary, spacing: eps, dim: d }
    }

    /// `⟨η̃, φ⟩` for the raw increments `g` at inverse temperature `beta`.
    pub fn evaluate(&self, g: &GradientConfig, beta: f64) -> f64 {
        self.scale * beta.sqrt() * self.dot(&g.eta)
    }

    /// `ε^{d/2-1} Σ_b ∇φ(b) x(b)` for edge values already rescaled.
    pub fn evaluate_rescaled(&self, eta_tilde: &[f64]) -> f64 {
        self.scale * self.dot(eta_tilde)
    }

    fn dot(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, e)| w * e).sum()
    }

    /// `ε^{d-2} Σ_b (∇φ(b))²`.
    pub fn discrete_energy(&self) -> f64 {
        self.spacing.powf(self.dim as f64 - 2.0) * self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// `⟨η̃, φ⟩`, warning when `φ` reaches the pinned boundary.
pub fn fluctuation_functional(g: &GradientConfig, phi: &TestFunction, beta: f64) -> Result<f64> {
    let p = Pairing::new(&g.domain, phi)?;
    if p.touches_boundary {
        warn!("test function does not vanish within one lattice spacing of the boundary");
    }
    Ok(p.evaluate(g, beta))
}

/// Which energy a reference curve uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnergyKind {
    Continuum,
    Discrete,
}

/// `∫ |∇φ|²` (continuum) or the lattice surrogate on `dom`.
pub fn dirichlet_energy(phi: &TestFunction, dom: Option<&LatticeDomain>) -> Result<f64> {
    phi.validate()?;
    match dom {
        None => Ok(phi.continuum_energy()),
        Some(d) => Ok(Pairing::new(d, phi)?.discrete_energy()),
    }
}

/// Empirical characteristic function with jackknife errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharFnEstimate {
    pub t: Vec<f64>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub se_re: Vec<f64>,
    pub se_im: Vec<f64>,
    pub n: usize,
    /// `exp(-t² Q / 2)`.
    pub reference: Vec<f64>,
    pub q: f64,
    pub q_kind: EnergyKind,
    /// Secondary energy, reported for comparison only.
    pub q_secondary: Option<f64>,
}

/// `E cos(tX)`, `E sin(tX)` per `t`, with groups as jackknife units.
pub fn empirical_char_fn(
    groups: &[Vec<f64>],
    t_grid: &[f64],
    q: f64,
    q_kind: EnergyKind,
    q_secondary: Option<f64>,
) -> Result<CharFnEstimate> {
    let n: usize = groups.iter().map(Vec::len).sum();
    if n < MIN_CHARFN_SAMPLES {
        return Err(Error::InsufficientSamples { needed: MIN_CHARFN_SAMPLES, got: n });
    }
    let mut est = CharFnEstimate {
        t: t_grid.to_vec(),
        re: Vec::new(),
        im: Vec::new(),
        se_re: Vec::new(),
        se_im: Vec::new(),
        n,
        reference: t_grid.iter().map(|t| (-0.5 * t * t * q).exp()).collect(),
        q,
        q_kind,
        q_secondary,
    };
    for &t in t_grid {
        let c: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| (t * v).cos()).collect()).collect();
        let s: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| (t * v).sin()).collect()).collect();
        let (re, se_re) = jackknife_mean(&c);
        let (im, se_im) = jackknife_mean(&s);
        est.re.push(re);
        est.im.push(im);
        est.se_re.push(if t == 0.0 { 0.0 } else { se_re });
        est.se_im.push(if t == 0.0 { 0.0 } else { se_im });
    }
    Ok(est)
}

/// `{0.25, 0.5, 1, 1.5, 2} / √Q`.
pub fn default_t_grid(q: f64) -> Vec<f64> {
    [0.25, 0.5, 1.0, 1.5, 2.0].iter().map(|c| c / q.sqrt()).collect()
}

/// Gaussian-limit verdict for one test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLimitReport {
    pub charfn: CharFnEstimate,
    /// Largest `|re - ref|` minus its allowance `max(3 SE, 0.01)`;
    /// non-positive on pass.
    pub worst_excess: f64,
    pub pass: bool,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub variance_ratio: f64,
    pub variance_ratio_se: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Compares the pairing samples with `N(0, q)`.
pub fn gaussian_limit_report(
    groups: &[Vec<f64>],
    q: f64,
    q_kind: EnergyKind,
    q_secondary: Option<f64>,
    t_grid: &[f64],
) -> Result<GaussianLimitReport> {
    let n: usize = groups.iter().map(Vec::len).sum();
    if n < MIN_REPORT_SAMPLES {
        return Err(Error::InsufficientSamples { needed: MIN_REPORT_SAMPLES, got: n });
    }
    if !(q > 0.0) {
        return Err(Error::Precondition(format!("reference energy must be positive, got {q}")));
    }
    let charfn = empirical_char_fn(groups, t_grid, q, q_kind, q_secondary)?;
    let worst_excess = (0..t_grid.len())
        .map(|i| (charfn.re[i] - charfn.reference[i]).abs() - (3.0 * charfn.se_re[i]).max(0.01))
        .fold(f64::NEG_INFINITY, f64::max);
    let (m, mean_se) = jackknife_mean(groups);
    let (variance, variance_se) = jackknife(groups, crate::diagnostics::variance);
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let (skewness, excess_kurtosis) = skewness_kurtosis(&all);
    Ok(GaussianLimitReport {
        pass: worst_excess <= 0.0,
        worst_excess,
        mean: m,
        mean_se,
        variance,
        variance_se,
        variance_ratio: variance / q,
        variance_ratio_se: variance_se / q,
        skewness,
        excess_kurtosis,
        charfn,
    })
}

/// Empirical probability that every edge of a contour exceeds `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourEstimate {
    pub n: usize,
    pub hits: usize,
    pub p: f64,
    pub se: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// `exp(1 - βa²/π²)^{|𝒞|}` when the convex bound applies.
    pub convex_bound: Option<f64>,
}

/// `P(|η(b)| > a for all b ∈ 𝒞)` from samples of canonical-edge values.
/// Distinct canonical indices guarantee that no edge appears with its
/// reverse.
pub fn contour_probability(samples: &[&[f64]], contour: &[usize], a: f64) -> Result<ContourEstimate> {
    if !(a > 0.0 && a <= PI) {
        return Err(Error::Precondition(format!("threshold must lie in (0, pi], got {a}")));
    }
    let mut seen = contour.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != contour.len() || contour.is_empty() {
        return Err(Error::Precondition("contour must be a nonempty set of distinct edges".into()));
    }
    let n = samples.len();
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let hits = samples.iter().filter(|s| contour.iter().all(|&b| s[b].abs() > a)).count();
    let p = hits as f64 / n as f64;
    let (wilson_lo, wilson_hi) = wilson_interval(hits, n, 1.96);
    Ok(ContourEstimate { n, hits, p, se: (p * (1.0 - p) / n as f64).sqrt(), wilson_lo, wilson_hi, convex_bound: None })
}

/// `exp(1 - βa²/π²)^{size}`, valid for `0 < a < δ ≤ π/3`.
pub fn convex_contour_bound(potential: &Potential, beta: f64, a: f64, size: usize) -> Result<f64> {
    let delta = potential
        .delta()
        .ok_or_else(|| Error::Precondition("convex contour bound needs the truncated-convex family".into()))?;
    if !potential.supports_contour_bound() || !(a > 0.0 && a < delta) {
        return Err(Error::Precondition(format!("need 0 < a < delta <= pi/3, got a = {a}, delta = {delta}")));
    }
    Ok((1.0 - beta * a * a / (PI * PI)).exp().powi(size as i32))
}

/// One `(β, a)` cell of the rate regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub beta: f64,
    pub a: f64,
    pub p: f64,
    pub se: f64,
}

/// Weighted fit of `log p = intercept + slope · βa²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    /// Smallest `c` with `p ≤ c exp(-βa²/π²)` at every used point.
    pub c_fit: f64,
    pub points_used: usize,
    /// `slope ≤ -1/π² + 2 SE`.
    pub pass: bool,
}

/// Cells with `p = 0` carry no information on the log scale and are
/// skipped; at least two distinct `βa²` values are needed.
pub fn fit_contour_rate(points: &[RatePoint]) -> Result<RateFit> {
    let used: Vec<&RatePoint> = points.iter().filter(|p| p.p > 0.0 && p.se > 0.0).collect();
    let xs: Vec<f64> = used.iter().map(|p| p.beta * p.a * p.a).collect();
    if used.len() < 2 || xs.iter().all(|&x| (x - xs[0]).abs() < 1e-12) {
        return Err(Error::InsufficientSamples { needed: 2, got: used.len() });
    }
    let ys: Vec<f64> = used.iter().map(|p| p.p.ln()).collect();
    let ws: Vec<f64> = used.iter().map(|p| (p.p / p.se).powi(2)).collect();
    let sw: f64 = ws.iter().sum();
    let xm = ws.iter().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = ws.iter().zip(&ys).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = ws.iter().zip(&xs).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = (0..xs.len()).map(|i| ws[i] * (xs[i] - xm) * (ys[i] - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    // scale the nominal error by the reduced chi-square when it exceeds one
    let dof = (xs.len() as f64 - 2.0).max(1.0);
    let chi2: f64 = (0..xs.len()).map(|i| ws[i] * (ys[i] - intercept - slope * xs[i]).powi(2)).sum::<f64>() / dof;
    let slope_se = (chi2.max(1.0) / sxx).sqrt();
    let c_fit = used.iter().map(|p| p.p * (p.beta * p.a * p.a / (PI * PI)).exp()).fold(0.0, f64::max);
    Ok(RateFit {
        slope,
        slope_se,
        intercept,
        c_fit,
        points_used: used.len(),
        pass: slope <= -1.0 / (PI * PI) + 2.0 * slope_se,
    })
}

/// Brascamp-Lieb comparison, in the rescaled variable `η̃ = √β η`, whose
/// law has potential `Ṽ` with `inf Ṽ'' = inf V''`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrascampLiebReport {
    pub normalization: String,
    pub c_minus: f64,
    pub variance_bound: f64,
    pub edge_variance: Vec<f64>,
    pub edge_variance_se: Vec<f64>,
    /// Largest `(var - bound)/SE` over edges with nonzero variance.
    pub worst_variance_z: f64,
    pub variance_pass: bool,
    pub t: Vec<f64>,
    pub mgf: Vec<f64>,
    pub mgf_se: Vec<f64>,
    pub mgf_bound: Vec<f64>,
    pub mgf_pass: bool,
}

/// `edge_groups[g][i]` is the `η̃` vector of sample `i` in group `g`;
/// `pairing_groups` holds `⟨η̃, φ⟩` for the same samples and `q` is
/// `ε^{d-2} Σ (∇φ)²`.
pub fn brascamp_lieb_check(
    potential: &Potential,
    edge_groups: &[Vec<Vec<f64>>],
    pairing_groups: &[Vec<f64>],
    q: f64,
    t_values: &[f64],
) -> Result<BrascampLiebReport> {
    let c_minus = potential.c_minus().ok_or(Error::NonConvexPotential)?;
    let n_edges = edge_groups.iter().flatten().next().map_or(0, Vec::len);
    let bound = 1.0 / c_minus;
    let mut edge_variance = Vec::with_capacity(n_edges);
    let mut edge_variance_se = Vec::with_capacity(n_edges);
    let mut worst = f64::NEG_INFINITY;
    let mut variance_pass = true;
    for b in 0..n_edges {
        let groups: Vec<Vec<f64>> = edge_groups.iter().map(|g| g.iter().map(|s| s[b]).collect()).collect();
        let (v, se) = jackknife(&groups, crate::diagnostics::variance);
        if v > 0.0 {
            worst = worst.max((v - bound) / se);
        }
        variance_pass &= v <= bound + 3.0 * se;
        edge_variance.push(v);
        edge_variance_se.push(se);
    }
    let mut mgf = Vec::new();
    let mut mgf_se = Vec::new();
    let mut mgf_bound = Vec::new();
    let mut mgf_pass = true;
    for &t in t_values {
        let vals: Vec<Vec<f64>> = pairing_groups.iter().map(|g| g.iter().map(|x| (t * x).exp()).collect()).collect();
        let (m, se) = if t == 0.0 { (1.0, 0.0) } else { jackknife_mean(&vals) };
        let bnd = (0.5 * t * t * q / c_minus).exp();
        mgf_pass &= m <= bnd + 3.0 * se;
        mgf.push(m);
        mgf_se.push(se);
        mgf_bound.push(bnd);
    }
    Ok(BrascampLiebReport {
        normalization: "rescaled: eta_tilde = sqrt(beta) * eta".into(),
        c_minus,
        variance_bound: bound,
        edge_variance,
        edge_variance_se,
        worst_variance_z: worst,
        variance_pass,
        t: t_values.to_vec(),
        mgf,
        mgf_se,
        mgf_bound,
        mgf_pass,
    })
}

/// Mean of `⟨η̃, φ⟩` and its jackknife error.
pub fn pairing_mean(groups: &[Vec<f64>]) -> (f64, f64) {
    if groups.len() == 1 {
        return (mean(&groups[0]), f64::NAN);
    }
    jackknife_mean(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::into_blocks;
    use crate::gradient::Source;
    use crate::lattice::build_rect_domain;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};
    use std::sync::Arc;

    #[test]
    fn sine_energy_closed_form() {
        let phi = TestFunction::first_sine(&[0.0, 0.0], &[1.0, 1.0]);
        assert_relative_eq!(phi.continuum_energy(), PI * PI / 2.0, max_relative = 1e-10);
        let higher = TestFunction::Sine { lo: vec![0.0, 0.0], hi: vec![2.0, 1.0], modes: vec![2, 3] };
        // ∫∫ |∇φ|² = (k1² π²/L1² + k2² π²/L2²) L1 L2 / 4
        let exact = (4.0 * PI * PI / 4.0 + 9.0 * PI * PI) * 2.0 / 4.0;
        assert_relative_eq!(higher.continuum_energy(), exact, max_relative = 1e-10);
    }

    #[test]
    fn bump_energy_against_fine_riemann_sum() {
        let phi = TestFunction::bump_middle_half(&[0.0, 0.0], &[1.0, 1.0]);
        let q = phi.continuum_energy();
        let n = 4000;
        let h = 0.5 / n as f64;
        // midpoint rule on [1/4, 3/4]², separable
        let mut sq = 0.0;
        let mut dsq = 0.0;
        for i in 0..n {
            let t = 0.25 + (i as f64 + 0.5) * h;
            let (f, df) = phi.factor(0, t);
            sq += f * f * h;
            dsq += df * df * h;
        }
        assert_relative_eq!(q, 2.0 * sq * dsq, max_relative = 1e-8);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for phi in [
            TestFunction::bump_middle_half(&[0.0, 0.0], &[1.0, 2.0]),
            TestFunction::first_sine(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]),
            TestFunction::PolynomialBump { lo: vec![0.1, 0.2], hi: vec![0.9, 0.7], power: 3 },
        ] {
            let x: Vec<f64> = (0..phi.dim()).map(|a| 0.37 + 0.05 * a as f64).collect();
            let g = phi.gradient(&x);
            for a in 0..x.len() {
                let h = 1e-6;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[a] += h;
                xm[a] -= h;
                let fd = (phi.eval(&xp) - phi.eval(&xm)) / (2.0 * h);
                assert!((fd - g[a]).abs() < 1e-7 * (1.0 + g[a].abs()), "{phi:?} axis {a}");
            }
        }
    }

    #[test]
    fn discrete_energy_converges() {
        let phi = TestFunction::first_sine(&[0.0, 0.0], &[1.0, 1.0]);
        let dom = build_rect_domain(2, 1.0 / 64.0, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let q = dirichlet_energy(&phi, Some(&dom)).unwrap();
        assert!((q / (PI * PI / 2.0) - 1.0).abs() < 0.005);
        let poly = TestFunction::PolynomialBump { lo: vec![0.0; 2], hi: vec![1.0; 2], power: 2 };
        assert!(dirichlet_energy(&poly, None).unwrap() > 0.0);
    }

    #[test]
    fn pairing_hand_example() {
        let dom = Arc::new(build_rect_domain(2, 1.0, &[0.0, 0.0], &[2.0, 2.0]).unwrap());
        let centre = dom.index_of(&[1, 1]).unwrap();
        let left = dom.index_of(&[1, 0]).unwrap();
        let right = dom.index_of(&[1, 2]).unwrap();
        let mut values = vec![0.0; 9];
        values[left] = 1.0;
        values[right] = 1.0;
        let p = Pairing::from_vertex_values(&dom, &values);
        // η̃ = +1 on both edges pointing away from the centre
        let mut eta = vec![0.0; dom.num_edges()];
        for target in [left, right] {
            let de = dom.edge_between(centre, target).unwrap();
            eta[de.edge] = de.sign();
        }
        assert_relative_eq!(p.evaluate_rescaled(&eta), 2.0);
        assert!(p.touches_boundary);
        assert_eq!(p.evaluate_rescaled(&vec![0.0; dom.num_edges()]), 0.0);
    }

    #[test]
    fn pairing_is_linear() {
        let dom = Arc::new(build_rect_domain(2, 0.125, &[0.0, 0.0], &[1.0, 1.0]).unwrap());
        let f1: Vec<f64> = (0..dom.num_vertices()).map(|v| (v as f64).sin()).collect();
        let f2: Vec<f64> = (0..dom.num_vertices()).map(|v| (v as f64 * 0.3).cos()).collect();
        let sum: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        let eta: Vec<f64> = (0..dom.num_edges()).map(|e| (e as f64 * 1.7).sin()).collect();
        let g = GradientConfig::new(dom.clone(), eta, Source::GradientModel).unwrap();
        let v = |f: &[f64]| Pairing::from_vertex_values(&dom, f).evaluate(&g, 3.0);
        assert_relative_eq!(v(&sum), v(&f1) + v(&f2), epsilon = 1e-12);
    }

    #[test]
    fn char_fn_of_gaussian_and_constant() {
        let q: f64 = 2.5;
        let mut rng = stream_rng(10, 0);
        let nd = Normal::new(0.0, q.sqrt()).unwrap();
        let xs: Vec<f64> = (0..20_000).map(|_| nd.sample(&mut rng)).collect();
        let groups = into_blocks(&xs, 20);
        let grid = default_t_grid(q);
        let est = empirical_char_fn(&groups, &grid, q, EnergyKind::Discrete, None).unwrap();
        for i in 0..grid.len() {
            assert!((est.re[i] - est.reference[i]).abs() < 3.5 * est.se_re[i] + 1e-3);
        }
        let zero = empirical_char_fn(&groups, &[0.0], q, EnergyKind::Discrete, None).unwrap();
        assert_eq!((zero.re[0], zero.im[0], zero.se_re[0]), (1.0, 0.0, 0.0));
        let consts = vec![vec![0.7; 100], vec![0.7; 100]];
        let c = empirical_char_fn(&consts, &[1.3], 1.0, EnergyKind::Discrete, None).unwrap();
        assert_relative_eq!(c.re[0], (1.3f64 * 0.7).cos(), epsilon = 1e-14);
        assert!(empirical_char_fn(&[vec![0.0; 50]], &[1.0], 1.0, EnergyKind::Discrete, None).is_err());
    }

    #[test]
    fn report_on_gaussian_passes_and_detects_wrong_variance() {
        let q: f64 = 1.7;
        let mut rng = stream_rng(11, 0);
        let nd = Normal::new(0.0, q.sqrt()).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| nd.sample(&mut rng)).collect();
        let groups = into_blocks(&xs, 20);
        let r = gaussian_limit_report(&groups, q, EnergyKind::Discrete, None, &default_t_grid(q)).unwrap();
        assert!(r.pass);
        assert!((r.variance_ratio - 1.0).abs() < 3.0 * r.variance_ratio_se);
        let bad = gaussian_limit_report(&groups, 1.4 * q, EnergyKind::Discrete, None, &default_t_grid(q)).unwrap();
        assert!(!bad.pass);
        assert!(matches!(
            gaussian_limit_report(&into_blocks(&xs[..999], 3), q, EnergyKind::Discrete, None, &[1.0]),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn convex_bound_value_and_preconditions() {
        let v = Potential::truncated_convex(PI / 3.0).unwrap();
        let b = convex_contour_bound(&v, 20.0, PI / 3.0 - 1e-12, 1).unwrap();
        assert_relative_eq!(b, (1.0f64 - 20.0 / 9.0).exp(), max_relative = 1e-9);
        assert!(convex_contour_bound(&Potential::truncated_convex(1.2).unwrap(), 20.0, 0.5, 1).is_err());
        assert!(convex_contour_bound(&v, 20.0, 1.1, 1).is_err());
        assert!(convex_contour_bound(&v, 20.0, 1e-9, 1).unwrap() >= 1.0);
    }

    #[test]
    fn contour_counts_and_validation() {
        let s1 = [0.5, -0.9, 0.1];
        let s2 = [0.05, 0.95, -0.6];
        let samples: Vec<&[f64]> = vec![&s1, &s2];
        let e = contour_probability(&samples, &[1], 0.8).unwrap();
        assert_eq!((e.hits, e.n), (2, 2));
        let e = contour_probability(&samples, &[0, 1], 0.3).unwrap();
        assert_eq!(e.hits, 1);
        assert!(contour_probability(&samples, &[1, 1], 0.3).is_err());
        assert!(contour_probability(&samples, &[1], 0.0).is_err());
        assert_eq!(contour_probability(&samples, &[2], 1e-12).unwrap().p, 1.0);
    }

    #[test]
    fn rate_fit_recovers_planted_slope() {
        let points: Vec<RatePoint> = [(10.0, 0.3), (20.0, 0.5), (40.0, 0.5), (10.0, 0.8)]
            .iter()
            .map(|&(beta, a): &(f64, f64)| {
                let p = 0.7 * (-0.15 * beta * a * a).exp();
                RatePoint { beta, a, p, se: 0.01 * p }
            })
            .collect();
        let fit = fit_contour_rate(&points).unwrap();
        assert_relative_eq!(fit.slope, -0.15, max_relative = 1e-9);
        assert_relative_eq!(fit.intercept, 0.7f64.ln(), max_relative = 1e-9);
        assert!(fit.pass);
        let shallow: Vec<RatePoint> =
            points.iter().map(|p| RatePoint { p: (-0.01 * p.beta * p.a * p.a).exp(), ..*p }).collect();
        assert!(!fit_contour_rate(&shallow).unwrap().pass);
    }

    #[test]
    fn brascamp_lieb_on_gaussian_and_errors() {
        let mut rng = stream_rng(12, 0);
        let nd = Normal::new(0.0, 0.8).unwrap();
        let edges: Vec<Vec<Vec<f64>>> =
            (0..10).map(|_| (0..500).map(|_| vec![nd.sample(&mut rng), 0.0, nd.sample(&mut rng)]).collect()).collect();
        let pair: Vec<Vec<f64>> = edges.iter().map(|g| g.iter().map(|s| s[0] + s[2]).collect()).collect();
        let q = 2.0 * 0.64;
        let r = brascamp_lieb_check(&Potential::quadratic(), &edges, &pair, q, &[0.0, 0.5, 1.0]).unwrap();
        assert!(r.variance_pass && r.mgf_pass);
        assert_eq!((r.mgf[0], r.mgf_bound[0]), (1.0, 1.0));
        let tc = Potential::truncated_convex(PI / 3.0).unwrap();
        assert_relative_eq!(
            brascamp_lieb_check(&tc, &edges, &pair, q, &[]).unwrap().variance_bound,
            2.0,
            epsilon = 1e-12
        );
        assert!(matches!(
            brascamp_lieb_check(&Potential::cosine(), &edges, &pair, q, &[]),
            Err(Error::NonConvexPotential)
        ));
    }
}
