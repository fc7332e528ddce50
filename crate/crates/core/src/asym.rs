//! Rotation-induced asymmetric cross-covariances.
//!
//! Component `i` of the asymmetric field is the symmetric field read at a
//! rotated location, `Z^a_i(x) = Z_i(R_i x)`, so
//! `cov{Z^a_i(x), Z^a_j(y)} = C_ij(θ(R_i x, R_j y))`. Rotations share one axis
//! and use angles `δ_i` summing to zero; for p = 2 these are `±η/2`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{
    angle_between, axis_from_angles, rotation_s1, rotation_s2, RotationMatrix, SphereDim,
    SpherePoint,
};
use crate::models::{CompiledRadial, RadialModelSpec};

fn half_pi() -> f64 {
    FRAC_PI_2
}

/// Relative rotation angle `η` and shared axis `(α₁, α₂)` (axis ignored on S¹).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymmetrySpec {
    pub eta: f64,
    #[serde(default = "half_pi")]
    pub alpha1: f64,
    #[serde(default = "half_pi")]
    pub alpha2: f64,
    /// Free angles `δ_1 .. δ_{p−1}` for p > 2; `η` is unused then.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
}

impl AsymmetrySpec {
    pub fn new(eta: f64, alpha1: f64, alpha2: f64) -> Self {
        AsymmetrySpec {
            eta,
            alpha1,
            alpha2,
            deltas: None,
        }
    }

    /// Asymmetry on S¹, where only the angle matters.
    pub fn circle(eta: f64) -> Self {
        Self::new(eta, FRAC_PI_2, FRAC_PI_2)
    }

    /// Per-component angles `δ_i`, summing to zero.
    pub fn angles(&self, p: usize) -> Result<Vec<f64>> {
        match (&self.deltas, p) {
            (_, 0) => Err(Error::invalid("p must be positive")),
            (_, 1) => Ok(vec![0.0]),
            (None, 2) => Ok(vec![0.5 * self.eta, -0.5 * self.eta]),
            (None, _) => Err(Error::invalid(format!(
                "p = {p} needs explicit deltas (p - 1 angles)"
            ))),
            (Some(d), _) if d.len() != p - 1 => Err(Error::invalid(format!(
                "expected {} deltas for p = {p}, got {}",
                p - 1,
                d.len()
            ))),
            (Some(d), _) => {
                let mut all = d.clone();
                all.push(-d.iter().sum::<f64>());
                Ok(all)
            }
        }
    }

    /// Checks the angle ranges for the sphere dimension.
    pub fn check_range(&self, dim: SphereDim) -> Result<()> {
        let eta_ok = match dim {
            SphereDim::Sphere => (0.0..PI).contains(&self.eta),
            SphereDim::Circle => self.eta > -PI && self.eta < PI,
        };
        if self.deltas.is_none() && !eta_ok {
            return Err(Error::invalid(format!(
                "eta = {} outside its range on S^{}",
                self.eta,
                dim.d()
            )));
        }
        if dim == SphereDim::Sphere {
            axis_from_angles(self.alpha1, self.alpha2)?;
        }
        Ok(())
    }

    /// The rotation axis with `α₁` taken modulo 2π.
    pub fn axis(&self) -> Result<SpherePoint> {
        axis_from_angles(self.alpha1.rem_euclid(2.0 * PI) % (2.0 * PI), self.alpha2)
    }
}

/// A base isotropic model plus optional rotations.
#[derive(Debug, Clone)]
pub struct AsymmetricCovariance {
    base: RadialModelSpec,
    asym: Option<AsymmetrySpec>,
    dim: SphereDim,
    rotations: Vec<RotationMatrix>,
    compiled: CompiledRadial,
}

impl AsymmetricCovariance {
    /// Builds the model. Parameter validity of `base` is not checked here; see
    /// [`RadialModelSpec::validate`].
    pub fn new(base: RadialModelSpec, asym: Option<AsymmetrySpec>, dim: SphereDim) -> Result<Self> {
        let p = base.p();
        if p == 0 {
            return Err(Error::invalid("model has no variables"));
        }
        let rotations = match &asym {
            None => vec![RotationMatrix::identity(dim); p],
            Some(a) => {
                let angles = a.angles(p)?;
                match dim {
                    SphereDim::Circle => angles.iter().map(|&d| rotation_s1(d)).collect(),
                    SphereDim::Sphere => {
                        let axis = a.axis()?;
                        angles
                            .iter()
                            .map(|&d| rotation_s2(&axis, d))
                            .collect::<Result<_>>()?
                    }
                }
            }
        };
        let compiled = base.compile();
        Ok(AsymmetricCovariance {
            base,
            asym,
            dim,
            rotations,
            compiled,
        })
    }

    pub fn symmetric(base: RadialModelSpec, dim: SphereDim) -> Result<Self> {
        Self::new(base, None, dim)
    }

    pub fn base(&self) -> &RadialModelSpec {
        &self.base
    }

    pub fn asymmetry(&self) -> Option<&AsymmetrySpec> {
        self.asym.as_ref()
    }

    pub fn dim(&self) -> SphereDim {
        self.dim
    }

    pub fn p(&self) -> usize {
        self.base.p()
    }

    pub fn rotations(&self) -> &[RotationMatrix] {
        &self.rotations
    }

    /// `C_ii(0)`.
    pub fn variance(&self, i: usize) -> f64 {
        self.base.sigma2[i]
    }

    fn check_point(&self, x: &SpherePoint) -> Result<()> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim.d(),
                found: x.dim().d(),
            });
        }
        Ok(())
    }

    /// `F^a_ij(x, y) = C_ij(θ(x, R_i⁻¹ R_j y))`, zero-based variable indices.
    pub fn cross_cov(&self, i: usize, j: usize, x: &SpherePoint, y: &SpherePoint) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        let p = self.p();
        if i >= p || j >= p {
            return Err(Error::invalid(format!(
                "variable index out of range for p = {p}"
            )));
        }
        Ok(self.cross_cov_unchecked(i, j, x.xyz(), y.xyz()))
    }

    /// Cross-covariance on S¹ from the angle difference alone:
    /// `cos θ' = cos θ cos(δ_j − δ_i) + (x₁y₂ − x₂y₁) sin(δ_j − δ_i)`,
    /// where `x₁y₂ − x₂y₁ = sin θ` up to sign.
    ///
    /// With `δ₁ = η/2, δ₂ = −η/2` the sign of the sine term is negative for
    /// `(i, j) = (0, 1)` and positive for `(1, 0)`.
    pub fn circle_cross_cov(
        &self,
        i: usize,
        j: usize,
        x: &SpherePoint,
        y: &SpherePoint,
    ) -> Result<f64> {
        SphereDim::Circle.check(self.dim)?;
        self.check_point(x)?;
        self.check_point(y)?;
        let p = self.p();
        if i >= p || j >= p {
            return Err(Error::invalid(format!(
                "variable index out of range for p = {p}"
            )));
        }
        let delta = match &self.asym {
            Some(a) => {
                let d = a.angles(p)?;
                d[j] - d[i]
            }
            None => 0.0,
        };
        let (x, y) = (x.xyz(), y.xyz());
        let cos_theta = x[0] * y[0] + x[1] * y[1];
        let wedge = x[0] * y[1] - x[1] * y[0];
        let (s, c) = delta.sin_cos();
        // the matching sine keeps the inversion accurate near 0 and π
        let cos_rot = cos_theta * c + wedge * s;
        let sin_rot = wedge * c - cos_theta * s;
        let theta = sin_rot.abs().atan2(cos_rot);
        Ok(self.compiled.eval(i, j, theta))
    }

    #[inline]
    pub(crate) fn cross_cov_unchecked(
        &self,
        i: usize,
        j: usize,
        x: &[f64; 3],
        y: &[f64; 3],
    ) -> f64 {
        let theta = if i == j {
            angle_between(x, y)
        } else {
            angle_between(
                &self.rotations[i].apply_xyz(x),
                &self.rotations[j].apply_xyz(y),
            )
        };
        self.compiled.eval(i, j, theta)
    }

    /// Covariance from precomputed raw and rotated coordinates.
    #[inline]
    pub(crate) fn eval_prepared(&self, a: &PreparedObs, b: &PreparedObs) -> f64 {
        let theta = if a.var == b.var {
            angle_between(&a.raw, &b.raw)
        } else {
            angle_between(&a.rotated, &b.rotated)
        };
        self.compiled.eval(a.var, b.var, theta)
    }

    #[inline]
    pub(crate) fn eval_radial(&self, i: usize, j: usize, theta: f64) -> f64 {
        self.compiled.eval(i, j, theta)
    }

    pub(crate) fn prepare(&self, site: &SpherePoint, var: usize) -> PreparedObs {
        PreparedObs {
            raw: *site.xyz(),
            rotated: self.rotations[var].apply_xyz(site.xyz()),
            var,
        }
    }

    pub(crate) fn prepare_all(&self, sites: &[SpherePoint], vars: &[usize]) -> Vec<PreparedObs> {
        sites
            .iter()
            .zip(vars)
            .map(|(s, &v)| self.prepare(s, v))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PreparedObs {
    pub raw: [f64; 3],
    pub rotated: [f64; 3],
    pub var: usize,
}

/// Covariance matrix of a list of (site, variable) observations.
#[derive(Debug, Clone)]
pub struct BlockCovariance {
    pub matrix: DMatrix<f64>,
    pub warnings: Vec<String>,
}

/// Entry `(l, r)` is `F^a_{v_l v_r}(x_l, x_r)`. Variables are zero-based.
pub fn build_block_cov(
    model: &AsymmetricCovariance,
    sites: &[SpherePoint],
    vars: &[usize],
) -> Result<BlockCovariance> {
    if sites.len() != vars.len() {
        return Err(Error::invalid(format!(
            "{} sites but {} variable indices",
            sites.len(),
            vars.len()
        )));
    }
    for s in sites {
        model.check_point(s)?;
    }
    if let Some(&v) = vars.iter().find(|&&v| v >= model.p()) {
        return Err(Error::invalid(format!("variable index {v} out of range")));
    }
    let prepared = model.prepare_all(sites, vars);
    Ok(BlockCovariance {
        matrix: assemble(model, &prepared),
        warnings: duplicate_warnings(sites, vars),
    })
}

pub(crate) fn assemble(model: &AsymmetricCovariance, prepared: &[PreparedObs]) -> DMatrix<f64> {
    let n = prepared.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for l in 0..n {
        m[(l, l)] = model.variance(prepared[l].var);
        for r in l + 1..n {
            let v = model.eval_prepared(&prepared[l], &prepared[r]);
            m[(l, r)] = v;
            m[(r, l)] = v;
        }
    }
    m
}

fn duplicate_warnings(sites: &[SpherePoint], vars: &[usize]) -> Vec<String> {
    let mut warnings = Vec::new();
    for l in 0..sites.len() {
        for r in l + 1..sites.len() {
            if vars[l] == vars[r] && sites[l] == sites[r] {
                warnings.push(format!(
                    "observations {l} and {r} share site and variable {}; matrix is singular",
                    vars[l]
                ));
            }
        }
    }
    warnings
}
