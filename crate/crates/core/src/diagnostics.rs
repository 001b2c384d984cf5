//! Monte Carlo bookkeeping: autocorrelation, inter-chain agreement,
//! jackknife errors and goodness-of-fit tests.

/// Window constant of the automatic windowing rule.
const SOKAL_C: f64 = 5.0;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Sample skewness and excess kurtosis (moment estimators).
pub fn skewness_kurtosis(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let n = xs.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

/// Integrated autocorrelation time `τ = 1/2 + Σ_t ρ(t)` with the
/// self-consistent window `W ≥ c·τ(W)`.
///
/// Returns `0.5` for series too short or constant.
pub fn integrated_autocorr_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return 0.5;
    }
    let m = mean(xs);
    let c0 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return 0.5;
    }
    let mut tau = 0.5;
    for lag in 1..n / 2 {
        let c: f64 = (0..n - lag).map(|i| (xs[i] - m) * (xs[i + lag] - m)).sum::<f64>() / n as f64;
        tau += c / c0;
        if lag as f64 >= SOKAL_C * tau {
            break;
        }
    }
    tau.max(0.5)
}

/// Ratio of pooled to within-chain variance (Gelman-Rubin `R̂`).
pub fn inter_chain_ratio(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m < 2 || n < 2 {
        return 1.0;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let w = chains.iter().map(|c| variance(&c[..n])).sum::<f64>() / m as f64;
    let b = n as f64 * variance(&means);
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let pooled = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    (pooled / w).sqrt()
}

/// Splits one series into `blocks` contiguous groups (the remainder is
/// dropped from the last block onward).
pub fn into_blocks(xs: &[f64], blocks: usize) -> Vec<Vec<f64>> {
    let blocks = blocks.max(1).min(xs.len().max(1));
    let len = xs.len() / blocks;
    (0..blocks).map(|b| xs[b * len..(b + 1) * len].to_vec()).collect()
}

/// Delete-one-group jackknife of a statistic of the pooled sample.
///
/// Returns `(estimate on all data, standard error)`.
pub fn jackknife<F>(groups: &[Vec<f64>], stat: F) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let full = stat(&all);
    let g = groups.len();
    if g < 2 {
        return (full, f64::NAN);
    }
    let mut reps = Vec::with_capacity(g);
    let mut buf = Vec::with_capacity(all.len());
    for skip in 0..g {
        buf.clear();
        for (k, grp) in groups.iter().enumerate() {
            if k != skip {
                buf.extend_from_slice(grp);
            }
        }
        reps.push(stat(&buf));
    }
    let rm = mean(&reps);
    let var = reps.iter().map(|r| (r - rm) * (r - rm)).sum::<f64>() * (g - 1) as f64 / g as f64;
    (full, var.sqrt())
}

/// Jackknife of a pooled mean of per-sample values, computed from group
/// sums in linear time.
pub fn jackknife_mean(groups: &[Vec<f64>]) -> (f64, f64) {
    let sums: Vec<(f64, usize)> = groups.iter().map(|g| (g.iter().sum(), g.len())).collect();
    let total: f64 = sums.iter().map(|s| s.0).sum();
    let count: usize = sums.iter().map(|s| s.1).sum();
    let full = total / count as f64;
    let g = sums.len();
    if g < 2 {
        return (full, f64::NAN);
    }
    let reps: Vec<f64> = sums.iter().map(|&(s, c)| (total - s) / (count - c) as f64).collect();
    let rm = mean(&reps);
    let var = reps.iter().map(|r| (r - rm) * (r - rm)).sum::<f64>() * (g - 1) as f64 / g as f64;
    (full, var.sqrt())
}

/// Covariance matrix of vector samples with entrywise jackknife errors.
///
/// `groups[g][i]` is sample `i` of group `g`; all vectors share one
/// length `n`. Returns row-major `n × n` estimates and errors, using the
/// `1/N` normalisation.
pub fn jackknife_covariance(groups: &[Vec<Vec<f64>>]) -> (Vec<f64>, Vec<f64>) {
    let n = groups.iter().flatten().next().map_or(0, Vec::len);
    let stats: Vec<(Vec<f64>, Vec<f64>, usize)> = groups
        .iter()
        .map(|g| {
            let mut s = vec![0.0; n];
            let mut m = vec![0.0; n * n];
            for x in g {
                for i in 0..n {
                    s[i] += x[i];
                    for j in i..n {
                        m[i * n + j] += x[i] * x[j];
                    }
                }
            }
            (s, m, g.len())
        })
        .collect();
    let mut s_all = vec![0.0; n];
    let mut m_all = vec![0.0; n * n];
    let mut count = 0;
    for (s, m, c) in &stats {
        s_all.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        m_all.iter_mut().zip(m).for_each(|(a, b)| *a += b);
        count += c;
    }
    let cov_of = |s: &[f64], m: &[f64], c: usize| -> Vec<f64> {
        let c = c as f64;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = m[i * n + j] / c - (s[i] / c) * (s[j] / c);
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    };
    let full = cov_of(&s_all, &m_all, count);
    let g = stats.len();
    if g < 2 {
        return (full, vec![f64::NAN; n * n]);
    }
    let mut reps = Vec::with_capacity(g);
    for (s, m, c) in &stats {
        let s_loo: Vec<f64> = s_all.iter().zip(s).map(|(a, b)| a - b).collect();
        let m_loo: Vec<f64> = m_all.iter().zip(m).map(|(a, b)| a - b).collect();
        reps.push(cov_of(&s_loo, &m_loo, count - c));
    }
    let se = (0..n * n)
        .map(|k| {
            let rm = reps.iter().map(|r| r[k]).sum::<f64>() / g as f64;
            (reps.iter().map(|r| (r[k] - rm).powi(2)).sum::<f64>() * (g - 1) as f64 / g as f64).sqrt()
        })
        .collect();
    (full, se)
}

/// Wilson score interval for a binomial proportion at `z` standard
/// deviations.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Survival function of the Kolmogorov distribution,
/// `Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} exp(-2k²λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Outcome of a Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

/// One-sample KS test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    KsResult { statistic: d, p_value: ks_p_value(d, n) }
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let n_eff = (n * m) as f64 / (n + m) as f64;
    KsResult { statistic: d, p_value: ks_p_value(d, n_eff) }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Complementary error function (Numerical Recipes `erfcc`, relative error
/// below 1.2e-7).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn covariance_jackknife_matches_scalar_route() {
        let mut rng = stream_rng(5, 0);
        let groups: Vec<Vec<Vec<f64>>> = (0..6)
            .map(|_| {
                (0..50)
                    .map(|_| {
                        let a: f64 = StandardNormal.sample(&mut rng);
                        let b: f64 = StandardNormal.sample(&mut rng);
                        vec![a, a + b]
                    })
                    .collect()
            })
            .collect();
        let (cov, se) = jackknife_covariance(&groups);
        let pop_var = |xs: &[f64]| variance(xs) * (xs.len() - 1) as f64 / xs.len() as f64;
        let second: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|x| x[1]).collect()).collect();
        let (v, vse) = jackknife(&second, pop_var);
        assert!((cov[3] - v).abs() < 1e-12 && (se[3] - vse).abs() < 1e-12);
        assert_eq!(cov[1], cov[2]);
        assert!((cov[1] - 1.0).abs() < 4.0 * se[1]);
    }

    #[test]
    fn moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        let (s, _) = skewness_kurtosis(&xs);
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn tau_of_ar1() {
        // AR(1) with coefficient a has τ = (1 + a) / (2 (1 - a)).
        let a: f64 = 0.8;
        let mut rng = stream_rng(1, 0);
        let mut x = 0.0;
        let series: Vec<f64> = (0..200_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = a * x + z;
                x
            })
            .collect();
        let tau = integrated_autocorr_time(&series);
        let exact = (1.0 + a) / (2.0 * (1.0 - a));
        assert!((tau - exact).abs() < 0.1 * exact, "tau {tau} vs {exact}");

        let white: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        assert!((integrated_autocorr_time(&white) - 0.5).abs() < 0.1);
    }

    #[test]
    fn inter_chain_ratio_detects_offset() {
        let mut rng = stream_rng(2, 0);
        let chains: Vec<Vec<f64>> =
            (0..4).map(|_| (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        assert!(inter_chain_ratio(&chains) < 1.01);
        let mut shifted = chains.clone();
        shifted[0].iter_mut().for_each(|x| *x += 3.0);
        assert!(inter_chain_ratio(&shifted) > 1.1);
    }

    #[test]
    fn jackknife_agrees_with_iid_se() {
        let mut rng = stream_rng(3, 0);
        let xs: Vec<f64> = (0..40_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let groups = into_blocks(&xs, 40);
        let (m, se) = jackknife_mean(&groups);
        assert!((se - 1.0 / 200.0).abs() < 0.0015);
        assert!(m.abs() < 4.0 * se);
        let (m2, se2) = jackknife(&groups, mean);
        assert!((m - m2).abs() < 1e-12);
        assert!((se - se2).abs() < 1e-9);
    }

    #[test]
    fn wilson_contains_truth() {
        let (lo, hi) = wilson_interval(30, 100, 1.96);
        assert!(lo < 0.3 && hi > 0.3);
        let (lo0, hi0) = wilson_interval(0, 100, 1.96);
        assert_eq!(lo0, 0.0);
        assert!(hi0 > 0.0 && hi0 < 0.05);
    }

    #[test]
    fn kolmogorov_reference_values() {
        // Q(1.3581) ≈ 0.05, Q(1.6276) ≈ 0.01
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_q(1.6276) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn ks_tests() {
        let mut rng = stream_rng(4, 0);
        let u: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_one_sample(&u, |x| x.clamp(0.0, 1.0)).p_value > 0.01);
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        assert!(ks_one_sample(&sq, |x| x.clamp(0.0, 1.0)).p_value < 1e-6);
        let v: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_two_sample(&u, &v).p_value > 0.01);
        assert!(ks_two_sample(&u, &sq).p_value < 1e-6);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-7);
        assert!((normal_cdf(1.959964) - 0.975).abs() < 1e-6);
        assert!((normal_cdf(-3.0) - 0.0013499).abs() < 1e-6);
    }
}
