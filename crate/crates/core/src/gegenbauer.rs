//! Ultraspherical polynomials and numerical Schoenberg coefficients.
//!
//! A continuous `C: [0, π] → R^{p×p}` is a valid isotropic covariance on S^d
//! exactly when its expansion in `P_k^{(d−1)/2}(cos θ)` has positive
//! semidefinite coefficient matrices. Projecting a model onto that basis by
//! quadrature and eigen-checking each coefficient gives an oracle that does
//! not depend on any closed-form parameter condition.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::SphereDim;

/// Default truncation degree.
pub const DEFAULT_MAX_DEGREE: usize = 50;
/// Default number of quadrature nodes on [0, π].
pub const DEFAULT_QUAD_NODES: usize = 400;

const PANEL_NODES: usize = 16;

/// `P_k^λ(μ)`. For λ = 0 the Chebyshev normalization `P_k^0(cos θ) = cos kθ`
/// is used.
pub fn ultraspherical_eval(lambda: f64, k: usize, mu: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut cur = if lambda == 0.0 { mu } else { 2.0 * lambda * mu };
    for n in 2..=k {
        let next = recurrence_step(lambda, n, mu, cur, prev);
        prev = cur;
        cur = next;
    }
    cur
}

#[inline]
fn recurrence_step(lambda: f64, n: usize, mu: f64, p1: f64, p2: f64) -> f64 {
    if lambda == 0.0 {
        2.0 * mu * p1 - p2
    } else {
        let nf = n as f64;
        (2.0 * mu * (nf + lambda - 1.0) * p1 - (nf + 2.0 * lambda - 2.0) * p2) / nf
    }
}

/// Ultraspherical basis on S^d truncated at `max_degree`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UltrasphericalBasis {
    pub lambda: f64,
    pub max_degree: usize,
}

impl UltrasphericalBasis {
    pub fn for_sphere(dim: SphereDim, max_degree: usize) -> Self {
        UltrasphericalBasis {
            lambda: (dim.d() as f64 - 1.0) / 2.0,
            max_degree,
        }
    }

    /// All `P_0 .. P_K` at `mu`.
    pub fn eval_all(&self, mu: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.max_degree + 1);
        out.push(1.0);
        if self.max_degree == 0 {
            return out;
        }
        out.push(if self.lambda == 0.0 {
            mu
        } else {
            2.0 * self.lambda * mu
        });
        for n in 2..=self.max_degree {
            let v = recurrence_step(self.lambda, n, mu, out[n - 1], out[n - 2]);
            out.push(v);
        }
        out
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1] by Newton iteration on the
/// Legendre recurrence.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut deriv = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            deriv = nf * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / deriv;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
        nodes[i] = -x;
        weights[i] = w;
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule on [0, π] with about `n_quad` nodes.
pub(crate) fn composite_rule(n_quad: usize) -> (Vec<f64>, Vec<f64>) {
    let panels = n_quad.div_ceil(PANEL_NODES).max(1);
    let per_panel = n_quad.div_ceil(panels).max(2);
    let (gx, gw) = gauss_legendre(per_panel);
    let width = std::f64::consts::PI / panels as f64;
    let mut nodes = Vec::with_capacity(panels * per_panel);
    let mut weights = Vec::with_capacity(panels * per_panel);
    for panel in 0..panels {
        let mid = (panel as f64 + 0.5) * width;
        for (x, w) in gx.iter().zip(&gw) {
            nodes.push(mid + 0.5 * width * x);
            weights.push(0.5 * width * w);
        }
    }
    (nodes, weights)
}

/// Integral of `P_k P_m (sin θ)^{d−1}` over [0, π] under the module's rule.
pub fn basis_inner_product(dim: SphereDim, k: usize, m: usize, n_quad: usize) -> f64 {
    let basis = UltrasphericalBasis::for_sphere(dim, k.max(m));
    let (nodes, weights) = composite_rule(n_quad);
    nodes
        .iter()
        .zip(&weights)
        .map(|(&t, &w)| {
            let vals = basis.eval_all(t.cos());
            w * sphere_weight(dim, t) * vals[k] * vals[m]
        })
        .sum()
}

#[inline]
fn sphere_weight(dim: SphereDim, theta: f64) -> f64 {
    match dim {
        SphereDim::Circle => 1.0,
        SphereDim::Sphere => theta.sin(),
    }
}

/// Coefficient matrices `B_0 .. B_K` of a truncated expansion.
#[derive(Debug, Clone)]
pub struct SchoenbergSequence {
    pub matrices: Vec<DMatrix<f64>>,
    /// Max componentwise reconstruction error on a θ check grid.
    pub residual: f64,
    /// Largest diagonal entry of `C(0)`; sets the scale of PSD tolerances.
    pub variance_scale: f64,
}

impl SchoenbergSequence {
    /// `1e−6 · max_i C_ii(0)`.
    pub fn default_tolerance(&self) -> f64 {
        1e-6 * self.variance_scale
    }
}

/// Projects `cov` onto the ultraspherical basis of S^d.
///
/// `cov(θ)` must return a p×p matrix (row-major nested vectors).
pub fn extract_schoenberg<F>(
    cov: F,
    dim: SphereDim,
    max_degree: usize,
    n_quad: usize,
) -> Result<SchoenbergSequence>
where
    F: Fn(f64) -> Vec<Vec<f64>>,
{
    if n_quad < 4 * max_degree.max(1) {
        return Err(Error::invalid(format!(
            "n_quad = {n_quad} too small for degree {max_degree} (need at least {})",
            4 * max_degree.max(1)
        )));
    }
    let c0 = cov(0.0);
    let p = c0.len();
    if p == 0 || c0.iter().any(|r| r.len() != p) {
        return Err(Error::invalid(
            "covariance must return a non-empty square matrix",
        ));
    }
    let variance_scale = (0..p).map(|i| c0[i][i]).fold(f64::MIN, f64::max);

    let basis = UltrasphericalBasis::for_sphere(dim, max_degree);
    let (nodes, weights) = composite_rule(n_quad);
    let mut numer = vec![DMatrix::<f64>::zeros(p, p); max_degree + 1];
    let mut norms = vec![0.0; max_degree + 1];
    for (&t, &w) in nodes.iter().zip(&weights) {
        let wt = w * sphere_weight(dim, t);
        let polys = basis.eval_all(t.cos());
        let c = cov(t);
        for (k, pk) in polys.iter().enumerate() {
            norms[k] += wt * pk * pk;
            let scale = wt * pk;
            let target = &mut numer[k];
            for i in 0..p {
                for j in 0..p {
                    target[(i, j)] += scale * c[i][j];
                }
            }
        }
    }
    let matrices: Vec<DMatrix<f64>> = numer.into_iter().zip(&norms).map(|(m, &n)| m / n).collect();

    let mut residual: f64 = 0.0;
    const CHECK_POINTS: usize = 181;
    for s in 0..CHECK_POINTS {
        let t = std::f64::consts::PI * s as f64 / (CHECK_POINTS - 1) as f64;
        let polys = basis.eval_all(t.cos());
        let c = cov(t);
        for i in 0..p {
            for j in 0..p {
                let approx: f64 = matrices
                    .iter()
                    .zip(&polys)
                    .map(|(b, pk)| b[(i, j)] * pk)
                    .sum();
                residual = residual.max((approx - c[i][j]).abs());
            }
        }
    }

    Ok(SchoenbergSequence {
        matrices,
        residual,
        variance_scale,
    })
}

/// A coefficient matrix whose smallest eigenvalue is below `−tol`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeFailure {
    pub degree: usize,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdReport {
    pub tolerance: f64,
    pub min_eigenvalues: Vec<f64>,
    pub failures: Vec<DegreeFailure>,
}

impl PsdReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Flags every degree whose coefficient matrix has an eigenvalue below `−tol`.
pub fn check_psd_sequence(seq: &SchoenbergSequence, tol: f64) -> PsdReport {
    let min_eigenvalues: Vec<f64> = seq.matrices.iter().map(min_eigenvalue).collect();
    let failures = min_eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &e)| e < -tol)
        .map(|(degree, &min_eigenvalue)| DegreeFailure {
            degree,
            min_eigenvalue,
        })
        .collect();
    PsdReport {
        tolerance: tol,
        min_eigenvalues,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Preset;
    use approx::assert_abs_diff_eq;

    #[test]
    fn polynomial_examples() {
        assert_abs_diff_eq!(ultraspherical_eval(0.5, 1, 0.3), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(
            ultraspherical_eval(0.0, 3, 0.5f64.cos()),
            1.5f64.cos(),
            epsilon = 1e-14
        );
        for lambda in [0.0, 0.5, 1.0, 2.5] {
            assert_eq!(ultraspherical_eval(lambda, 0, 0.77), 1.0);
        }
        // Legendre P_2 = (3μ² − 1)/2
        assert_abs_diff_eq!(
            ultraspherical_eval(0.5, 2, 0.4),
            (3.0 * 0.16 - 1.0) / 2.0,
            epsilon = 1e-15
        );
        // Chebyshev identity over many degrees
        for k in 0..40 {
            let t: f64 = 1.234;
            assert_abs_diff_eq!(
                ultraspherical_eval(0.0, k, t.cos()),
                (k as f64 * t).cos(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn generating_function() {
        // Σ r^k P_k^λ(μ) = (1 + r² − 2rμ)^{−λ}
        for lambda in [0.5, 1.0, 1.5] {
            let (r, mu): (f64, f64) = (0.3, -0.45);
            let basis = UltrasphericalBasis {
                lambda,
                max_degree: 60,
            };
            let series: f64 = basis
                .eval_all(mu)
                .iter()
                .enumerate()
                .map(|(k, v)| r.powi(k as i32) * v)
                .sum();
            let closed = (1.0 + r * r - 2.0 * r * mu).powf(-lambda);
            assert_abs_diff_eq!(series, closed, epsilon = 1e-12);
        }
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(10);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert_abs_diff_eq!(integral, 2.0 / 19.0, epsilon = 1e-14);
    }

    #[test]
    fn orthogonality() {
        for dim in [SphereDim::Circle, SphereDim::Sphere] {
            for k in 0..=20 {
                for m in 0..k {
                    let ip = basis_inner_product(dim, k, m, DEFAULT_QUAD_NODES);
                    assert!(ip.abs() < 1e-8, "{dim:?} <P{k}, P{m}> = {ip}");
                }
            }
        }
        // Chebyshev norms: π for k = 0, π/2 otherwise
        assert_abs_diff_eq!(
            basis_inner_product(SphereDim::Circle, 0, 0, 400),
            std::f64::consts::PI,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            basis_inner_product(SphereDim::Circle, 5, 5, 400),
            std::f64::consts::FRAC_PI_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn single_basis_function_is_recovered() {
        for dim in [SphereDim::Circle, SphereDim::Sphere] {
            let lambda = (dim.d() as f64 - 1.0) / 2.0;
            let seq = extract_schoenberg(
                |t| vec![vec![2.5 * ultraspherical_eval(lambda, 2, t.cos())]],
                dim,
                10,
                200,
            )
            .unwrap();
            for (k, b) in seq.matrices.iter().enumerate() {
                let expected = if k == 2 { 2.5 } else { 0.0 };
                assert_abs_diff_eq!(b[(0, 0)], expected, epsilon = 1e-6);
            }
            assert!(seq.residual < 1e-10);
        }
    }

    #[test]
    fn constant_function() {
        let seq = extract_schoenberg(|_| vec![vec![1.7]], SphereDim::Sphere, 8, 100).unwrap();
        assert_abs_diff_eq!(seq.matrices[0][(0, 0)], 1.7, epsilon = 1e-12);
        for b in &seq.matrices[1..] {
            assert!(b[(0, 0)].abs() < 1e-6);
        }
    }

    #[test]
    fn quadrature_too_coarse() {
        assert!(extract_schoenberg(|_| vec![vec![1.0]], SphereDim::Sphere, 30, 100).is_err());
    }

    #[test]
    fn exponential_preset_has_psd_coefficients() {
        let spec = Preset::M1.bivariate([1.0, 1.0], 0.5, 0.1, 0.2, false);
        let seq =
            extract_schoenberg(|t| spec.radial_matrix(t), SphereDim::Sphere, 30, 400).unwrap();
        let report = check_psd_sequence(&seq, 1e-6);
        assert!(report.is_ok(), "{report:?}");
        for b in &seq.matrices {
            assert_abs_diff_eq!(b[(0, 1)], b[(1, 0)], epsilon = 1e-9);
        }
    }

    #[test]
    fn psd_check_examples() {
        let identities = SchoenbergSequence {
            matrices: vec![DMatrix::identity(2, 2); 4],
            residual: 0.0,
            variance_scale: 1.0,
        };
        assert!(check_psd_sequence(&identities, 1e-6).is_ok());

        let bad = SchoenbergSequence {
            matrices: vec![
                DMatrix::identity(2, 2),
                DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            ],
            residual: 0.0,
            variance_scale: 1.0,
        };
        let report = check_psd_sequence(&bad, 1e-6);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].degree, 1);
        assert_abs_diff_eq!(report.failures[0].min_eigenvalue, -1.0, epsilon = 1e-12);

        let empty = SchoenbergSequence {
            matrices: vec![],
            residual: 0.0,
            variance_scale: 1.0,
        };
        assert!(check_psd_sequence(&empty, 1e-6).is_ok());
    }

    #[test]
    fn residual_shrinks_with_degree_for_cauchy() {
        let spec = Preset::M2.bivariate([1.0, 1.0], 0.5, 2.0, 3.0, false);
        let residuals: Vec<f64> = [10, 20, 40, 80, 160]
            .iter()
            .map(|&k| {
                extract_schoenberg(
                    |t| spec.radial_matrix(t),
                    SphereDim::Sphere,
                    k,
                    4 * k.max(100),
                )
                .unwrap()
                .residual
            })
            .collect();
        assert!(residuals.windows(2).all(|w| w[1] < w[0]), "{residuals:?}");
        // the cusp at θ = 0 limits the rate to roughly 1/K
        assert!(residuals[4] < 0.6 * residuals[3], "{residuals:?}");
    }
}
