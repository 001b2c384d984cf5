//! Exact Gaussian reference for the quadratic potential.
//!
//! With `V(x) = x²/2` the Dirichlet measure on `θ|_interior` is centred
//! Gaussian with covariance `L⁻¹/β`, where `L` is the graph Laplacian
//! restricted to interior vertices. Everything here is dense linear
//! algebra and is meant for grids of at most a few thousand vertices.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::lattice::LatticeDomain;

/// Dirichlet Laplacian on interior vertices, indexed like `dom.interior()`.
pub fn dirichlet_laplacian(dom: &LatticeDomain) -> Result<DMatrix<f64>> {
    let interior = dom.interior();
    if interior.is_empty() {
        return Err(Error::EmptyInterior);
    }
    let mut pos = vec![usize::MAX; dom.num_vertices()];
    for (k, &x) in interior.iter().enumerate() {
        pos[x] = k;
    }
    let m = interior.len();
    let mut l = DMatrix::zeros(m, m);
    for (k, &x) in interior.iter().enumerate() {
        for inc in dom.incident(x) {
            l[(k, k)] += 1.0;
            let j = pos[inc.neighbor];
            if j != usize::MAX {
                l[(k, j)] -= 1.0;
            }
        }
    }
    Ok(l)
}

/// `G = L⁻¹` on interior vertices.
pub fn dirichlet_green(dom: &LatticeDomain) -> Result<DMatrix<f64>> {
    let l = dirichlet_laplacian(dom)?;
    let chol = l.cholesky().ok_or_else(|| Error::LinearAlgebra("Laplacian is not positive definite".into()))?;
    Ok(chol.inverse())
}

/// Maps a full vertex vector to the interior vector `c` with
/// `Σ_b w(b)(θ(head) - θ(tail)) = Σ_x c(x) θ(x)` for `θ` vanishing on the
/// boundary.
pub fn edge_weights_to_vertex(dom: &LatticeDomain, w: &[f64]) -> DVector<f64> {
    let mut full = vec![0.0; dom.num_vertices()];
    for (e, &we) in dom.edges().iter().zip(w) {
        full[e.head] += we;
        full[e.tail] -= we;
    }
    DVector::from_iterator(dom.interior().len(), dom.interior().iter().map(|&x| full[x]))
}

/// `Cov(Σ_b u(b) η(b), Σ_b v(b) η(b))` under the quadratic model at
/// inverse temperature `beta`, for edge weight vectors `u`, `v`.
pub fn edge_form_covariance(dom: &LatticeDomain, green: &DMatrix<f64>, u: &[f64], v: &[f64], beta: f64) -> f64 {
    let cu = edge_weights_to_vertex(dom, u);
    let cv = edge_weights_to_vertex(dom, v);
    cu.dot(&(green * cv)) / beta
}

/// Exact sampler via the Cholesky factor of `L`.
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    interior: Vec<usize>,
    n_vertices: usize,
    upper: DMatrix<f64>,
}

impl GaussianOracle {
    pub fn new(dom: &LatticeDomain) -> Result<Self> {
        let l = dirichlet_laplacian(dom)?;
        let chol = l.cholesky().ok_or_else(|| Error::LinearAlgebra("Laplacian is not positive definite".into()))?;
        Ok(Self { interior: dom.interior().to_vec(), n_vertices: dom.num_vertices(), upper: chol.l().transpose() })
    }

    /// Full vertex vector with interior law `N(0, L⁻¹/β)` and zero boundary.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, beta: f64) -> Vec<f64> {
        let m = self.interior.len();
        let xi = DVector::from_iterator(m, (0..m).map(|_| StandardNormal.sample(rng)));
        let y = self.upper.solve_upper_triangular(&xi).expect("Cholesky factor is nonsingular");
        let s = beta.sqrt().recip();
        let mut theta = vec![0.0; self.n_vertices];
        for (k, &x) in self.interior.iter().enumerate() {
            theta[x] = y[k] * s;
        }
        theta
    }
}

/// Exact sampler for rectangular boxes, diagonalising `L` with the
/// discrete sine basis. Costs `O(N Σ_α n_α)` per draw instead of `O(N²)`.
#[derive(Debug, Clone)]
pub struct SineBasisSampler {
    shape: Vec<usize>,
    interior: Vec<usize>,
    n_vertices: usize,
    /// `sin_tables[α][i * n + k] = √(2/(n+1)) sin(π (i+1)(k+1)/(n+1))`
    sin_tables: Vec<Vec<f64>>,
    /// `1/√λ_k` in row-major mode order.
    inv_sqrt_eig: Vec<f64>,
}

impl SineBasisSampler {
    /// Fails unless the interior is a full rectangular block.
    pub fn new(dom: &LatticeDomain) -> Result<Self> {
        let interior = dom.interior();
        if interior.is_empty() {
            return Err(Error::EmptyInterior);
        }
        let d = dom.dim();
        let mut lo = vec![i64::MAX; d];
        let mut hi = vec![i64::MIN; d];
        for &x in interior {
            for (a, &c) in dom.coords(x).iter().enumerate() {
                lo[a] = lo[a].min(c);
                hi[a] = hi[a].max(c);
            }
        }
        let shape: Vec<usize> = (0..d).map(|a| (hi[a] - lo[a] + 1) as usize).collect();
        if shape.iter().product::<usize>() != interior.len() {
            return Err(Error::InvalidDomain("interior is not a rectangular block".into()));
        }
        let sin_tables = shape
            .iter()
            .map(|&n| {
                let norm = (2.0 / (n + 1) as f64).sqrt();
                let mut t = vec![0.0; n * n];
                for i in 0..n {
                    for k in 0..n {
                        t[i * n + k] = norm * (PI * ((i + 1) * (k + 1)) as f64 / (n + 1) as f64).sin();
                    }
                }
                t
            })
            .collect();
        let eig1: Vec<Vec<f64>> = shape
            .iter()
            .map(|&n| (1..=n).map(|k| 2.0 - 2.0 * (PI * k as f64 / (n + 1) as f64).cos()).collect())
            .collect();
        let total = interior.len();
        let mut inv_sqrt_eig = vec![0.0; total];
        let mut idx = vec![0usize; d];
        for slot in inv_sqrt_eig.iter_mut() {
            let lam: f64 = (0..d).map(|a| eig1[a][idx[a]]).sum();
            *slot = lam.sqrt().recip();
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(Self { shape, interior: interior.to_vec(), n_vertices: dom.num_vertices(), sin_tables, inv_sqrt_eig })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, beta: f64) -> Vec<f64> {
        let s = beta.sqrt().recip();
        let coeffs: Vec<f64> = self
            .inv_sqrt_eig
            .iter()
            .map(|&w| {
                let z: f64 = StandardNormal.sample(rng);
                w * s * z
            })
            .collect();
        let a = self.synthesize(coeffs);
        let mut theta = vec![0.0; self.n_vertices];
        for (k, &x) in self.interior.iter().enumerate() {
            theta[x] = a[k];
        }
        theta
    }

    /// Applies the orthogonal sine matrix along each axis to mode
    /// coefficients, giving interior values in row-major order.
    fn synthesize(&self, mut a: Vec<f64>) -> Vec<f64> {
        let mut buf = vec![0.0; a.len()];
        for (axis, &n) in self.shape.iter().enumerate() {
            let inner: usize = self.shape[axis + 1..].iter().product();
            let outer: usize = self.shape[..axis].iter().product();
            let table = &self.sin_tables[axis];
            for o in 0..outer {
                for r in 0..inner {
                    let base = o * n * inner + r;
                    for i in 0..n {
                        let row = &table[i * n..(i + 1) * n];
                        buf[base + i * inner] = row.iter().enumerate().map(|(k, t)| t * a[base + k * inner]).sum();
                    }
                }
            }
            std::mem::swap(&mut a, &mut buf);
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_rect_domain;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;

    #[test]
    fn single_interior_vertex() {
        let dom = build_rect_domain(2, 1.0, &[0.0, 0.0], &[2.0, 2.0]).unwrap();
        let g = dirichlet_green(&dom).unwrap();
        assert_relative_eq!(g[(0, 0)], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn one_dimensional_chain_green_function() {
        // 3x3 interior of a 5x5 grid: compare a few entries with a direct
        // solve of L x = e_0 by Gauss-Seidel.
        let dom = build_rect_domain(2, 1.0, &[0.0, 0.0], &[4.0, 4.0]).unwrap();
        let l = dirichlet_laplacian(&dom).unwrap();
        let g = dirichlet_green(&dom).unwrap();
        let m = l.nrows();
        let mut x = vec![0.0; m];
        for _ in 0..2000 {
            for i in 0..m {
                let rhs = if i == 0 { 1.0 } else { 0.0 };
                let off: f64 = (0..m).filter(|&j| j != i).map(|j| l[(i, j)] * x[j]).sum();
                x[i] = (rhs - off) / l[(i, i)];
            }
        }
        for i in 0..m {
            assert_relative_eq!(g[(i, 0)], x[i], epsilon = 1e-12);
        }
        // symmetry of the corner Green function
        assert_relative_eq!(g[(0, 8)], g[(8, 0)], epsilon = 1e-14);
        assert_relative_eq!(g[(0, 0)], g[(8, 8)], epsilon = 1e-14);
    }

    #[test]
    fn sine_sampler_matches_green_function() {
        let dom = build_rect_domain(2, 1.0, &[0.0, 0.0], &[5.0, 4.0]).unwrap();
        let g = dirichlet_green(&dom).unwrap();
        let s = SineBasisSampler::new(&dom).unwrap();
        let m = dom.interior().len();
        let mut cov = DMatrix::<f64>::zeros(m, m);
        let mut rng = stream_rng(1, 0);
        let n = 40_000;
        for _ in 0..n {
            let t = s.sample(&mut rng, 2.0);
            let v: Vec<f64> = dom.interior().iter().map(|&x| t[x]).collect();
            for i in 0..m {
                for j in 0..m {
                    cov[(i, j)] += v[i] * v[j] / n as f64;
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                let target = g[(i, j)] / 2.0;
                let se = ((g[(i, i)] * g[(j, j)] + g[(i, j)].powi(2)) / 4.0 / n as f64).sqrt();
                assert!((cov[(i, j)] - target).abs() < 5.0 * se, "({i},{j})");
            }
        }
    }

    #[test]
    fn sine_basis_diagonalises_laplacian() {
        let dom = build_rect_domain(3, 1.0, &[0.0; 3], &[4.0, 3.0, 5.0]).unwrap();
        let s = SineBasisSampler::new(&dom).unwrap();
        let l = dirichlet_laplacian(&dom).unwrap();
        let g = dirichlet_green(&dom).unwrap();
        // reconstruct G = Σ_k ψ_k ψ_kᵀ / λ_k from unit-coefficient draws
        let m = dom.interior().len();
        let mut recon = DMatrix::<f64>::zeros(m, m);
        let mut mode = vec![0.0; m];
        for k in 0..m {
            mode.iter_mut().for_each(|v| *v = 0.0);
            mode[k] = s.inv_sqrt_eig[k];
            let v = s.synthesize(mode.clone());
            for i in 0..m {
                for j in 0..m {
                    recon[(i, j)] += v[i] * v[j];
                }
            }
        }
        assert!((&recon - &g).abs().max() < 1e-12);
        assert!((&l * &recon - DMatrix::identity(m, m)).abs().max() < 1e-10);
    }

    #[test]
    fn cholesky_sampler_variance() {
        let dom = build_rect_domain(2, 1.0, &[0.0, 0.0], &[2.0, 2.0]).unwrap();
        let o = GaussianOracle::new(&dom).unwrap();
        let mut rng = stream_rng(4, 0);
        let n = 50_000;
        let v: f64 = (0..n).map(|_| o.sample(&mut rng, 1.0)[4].powi(2)).sum::<f64>() / n as f64;
        assert!((v - 0.25).abs() < 3.0 * 0.25 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn non_rectangular_interior_rejected() {
        let dom =
            LatticeDomain::from_predicate(2, 1.0, &[0.0, 0.0], &[6.0, 6.0], |p| !(p[0] > 3.5 && p[1] > 3.5)).unwrap();
        assert!(SineBasisSampler::new(&dom).is_err());
        assert!(GaussianOracle::new(&dom).is_ok());
    }
}
