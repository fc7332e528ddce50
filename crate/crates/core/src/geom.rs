//! Points, geodesic distance and rotations on the circle S¹ and the sphere S².
//!
//! Both spheres share one representation: a point on S¹ is stored as a unit
//! vector in the `xy`-plane of R³ (third coordinate exactly zero) and a
//! rotation of S¹ is a rotation of R³ about the `z` axis. Every S¹ formula
//! therefore reduces to the 2×2 upper-left block.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radius used to convert physical distances on Earth to radians.
pub const EARTH_RADIUS_KM: f64 = 6378.0;

/// Dimension `d` of the unit sphere S^d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SphereDim {
    /// The unit circle S¹ ⊂ R².
    #[serde(rename = "S1")]
    Circle,
    /// The unit sphere S² ⊂ R³.
    #[serde(rename = "S2")]
    Sphere,
}

impl SphereDim {
    pub fn d(self) -> usize {
        match self {
            SphereDim::Circle => 1,
            SphereDim::Sphere => 2,
        }
    }

    /// Ambient dimension `d + 1`.
    pub fn ambient(self) -> usize {
        self.d() + 1
    }

    pub(crate) fn check(self, other: SphereDim) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.d(),
                found: other.d(),
            })
        }
    }
}

/// A site on S¹ or S², stored as a unit vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint {
    coords: [f64; 3],
    dim: SphereDim,
}

impl SpherePoint {
    /// Builds a point from raw Cartesian coordinates (length 2 for S¹, 3 for
    /// S²). The vector is renormalized onto the sphere.
    pub fn new(coords: &[f64]) -> Result<Self> {
        let (raw, dim) = match *coords {
            [x, y] => ([x, y, 0.0], SphereDim::Circle),
            [x, y, z] => ([x, y, z], SphereDim::Sphere),
            _ => {
                return Err(Error::invalid(format!(
                    "a sphere point needs 2 or 3 coordinates, got {}",
                    coords.len()
                )))
            }
        };
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::invalid(
                "cannot normalize a zero or non-finite vector",
            ));
        }
        Ok(SpherePoint {
            coords: [raw[0] / norm, raw[1] / norm, raw[2] / norm],
            dim,
        })
    }

    /// Point on S¹ at polar angle `angle` (radians).
    pub fn from_angle(angle: f64) -> Self {
        SpherePoint {
            coords: [angle.cos(), angle.sin(), 0.0],
            dim: SphereDim::Circle,
        }
    }

    /// Point on S² from azimuth (longitude) and colatitude, both in radians.
    pub fn from_spherical(azimuth: f64, colatitude: f64) -> Self {
        let s = colatitude.sin();
        SpherePoint {
            coords: [s * azimuth.cos(), s * azimuth.sin(), colatitude.cos()],
            dim: SphereDim::Sphere,
        }
    }

    /// Point on S² from longitude/latitude in degrees.
    pub fn from_lon_lat_deg(lon: f64, lat: f64) -> Result<Self> {
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::invalid(format!(
                "longitude/latitude out of range: ({lon}, {lat})"
            )));
        }
        let colat = PI / 2.0 - lat.to_radians();
        Ok(Self::from_spherical(lon.to_radians(), colat))
    }

    /// Longitude in [−180, 180) and latitude in [−90, 90], degrees. S² only.
    pub fn to_lon_lat_deg(&self) -> Result<(f64, f64)> {
        SphereDim::Sphere.check(self.dim)?;
        let [x, y, z] = self.coords;
        let mut lon = y.atan2(x).to_degrees();
        if lon >= 180.0 {
            lon -= 360.0;
        }
        let lat = z.atan2(x.hypot(y)).to_degrees();
        Ok((lon, lat))
    }

    /// Polar angle in (−π, π]. S¹ only.
    pub fn angle(&self) -> Result<f64> {
        SphereDim::Circle.check(self.dim)?;
        Ok(self.coords[1].atan2(self.coords[0]))
    }

    pub fn dim(&self) -> SphereDim {
        self.dim
    }

    /// Cartesian coordinates, `d + 1` entries.
    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim.ambient()]
    }

    pub(crate) fn xyz(&self) -> &[f64; 3] {
        &self.coords
    }

    pub(crate) fn from_xyz_unchecked(coords: [f64; 3], dim: SphereDim) -> Self {
        SpherePoint { coords, dim }
    }

    pub fn antipode(&self) -> Self {
        let [x, y, z] = self.coords;
        SpherePoint {
            coords: [-x, -y, -z],
            dim: self.dim,
        }
    }
}

#[inline]
pub(crate) fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Angle between two unit vectors as `atan2(|a × b|, a·b)`, which keeps full
/// precision near 0 and π where `arccos` loses half the digits.
#[inline]
pub(crate) fn angle_between(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    if a == b {
        return 0.0;
    }
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    dot3(&cross, &cross).sqrt().atan2(dot3(a, b))
}

/// Great-circle distance `arccos(xᵀy)` in [0, π].
pub fn geodesic_distance(x: &SpherePoint, y: &SpherePoint) -> Result<f64> {
    x.dim.check(y.dim)?;
    Ok(angle_between(&x.coords, &y.coords))
}

/// Converts a physical distance on Earth to radians.
pub fn km_to_radians(km: f64) -> f64 {
    km / EARTH_RADIUS_KM
}

/// A proper rotation of R^(d+1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix {
    m: [[f64; 3]; 3],
    dim: SphereDim,
}

impl RotationMatrix {
    pub fn identity(dim: SphereDim) -> Self {
        RotationMatrix {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            dim,
        }
    }

    pub fn dim(&self) -> SphereDim {
        self.dim
    }

    /// Entry `(r, c)`, zero-based, within the `(d+1)×(d+1)` block.
    pub fn entry(&self, r: usize, c: usize) -> f64 {
        assert!(r < self.dim.ambient() && c < self.dim.ambient());
        self.m[r][c]
    }

    /// Rows of the `(d+1)×(d+1)` matrix.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let n = self.dim.ambient();
        (0..n).map(|r| self.m[r][..n].to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = [[0.0; 3]; 3];
        for (r, row) in self.m.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                t[c][r] = *v;
            }
        }
        RotationMatrix {
            m: t,
            dim: self.dim,
        }
    }

    /// Matrix product `self · rhs`.
    pub fn compose(&self, rhs: &RotationMatrix) -> Self {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[r][k] * rhs.m[k][c]).sum();
            }
        }
        RotationMatrix {
            m: out,
            dim: self.dim,
        }
    }

    #[inline]
    pub(crate) fn apply_xyz(&self, v: &[f64; 3]) -> [f64; 3] {
        [
            dot3(&self.m[0], v),
            dot3(&self.m[1], v),
            dot3(&self.m[2], v),
        ]
    }

    /// Rotates a point. The result is not renormalized.
    pub fn apply(&self, p: &SpherePoint) -> Result<SpherePoint> {
        self.dim.check(p.dim)?;
        Ok(SpherePoint::from_xyz_unchecked(
            self.apply_xyz(&p.coords),
            p.dim,
        ))
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest elementwise deviation of `RᵀR` from the identity.
    pub fn orthogonality_error(&self) -> f64 {
        let rtr = self.transpose().compose(self);
        let mut worst: f64 = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((rtr.m[r][c] - target).abs());
            }
        }
        worst
    }

    /// True when `RᵀR = I` and `det R = 1` within `tol`.
    pub fn is_rotation(&self, tol: f64) -> bool {
        self.orthogonality_error() <= tol && (self.determinant() - 1.0).abs() <= tol
    }
}

/// Rotation of the circle, `[[cos δ, sin δ], [−sin δ, cos δ]]`.
pub fn rotation_s1(delta: f64) -> RotationMatrix {
    let (s, c) = delta.sin_cos();
    RotationMatrix {
        m: [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]],
        dim: SphereDim::Circle,
    }
}

/// Rodrigues rotation `I + sin δ Ω + (1 − cos δ) Ω²` about a unit axis, where
/// `Ω` is the cross-product matrix of the axis.
pub fn rotation_s2(axis: &SpherePoint, delta: f64) -> Result<RotationMatrix> {
    SphereDim::Sphere.check(axis.dim)?;
    let [w1, w2, w3] = axis.coords;
    let omega = [[0.0, -w3, w2], [w3, 0.0, -w1], [-w2, w1, 0.0]];
    let mut omega2 = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            omega2[r][c] = (0..3).map(|k| omega[r][k] * omega[k][c]).sum();
        }
    }
    let (s, c) = delta.sin_cos();
    let vers = 1.0 - c;
    let mut m = [[0.0; 3]; 3];
    for r in 0..3 {
        for col in 0..3 {
            let id = if r == col { 1.0 } else { 0.0 };
            m[r][col] = id + s * omega[r][col] + vers * omega2[r][col];
        }
    }
    Ok(RotationMatrix {
        m,
        dim: SphereDim::Sphere,
    })
}

/// Unit axis `(cos α₁ sin α₂, sin α₁ sin α₂, cos α₂)`.
pub fn axis_from_angles(alpha1: f64, alpha2: f64) -> Result<SpherePoint> {
    if !(0.0..2.0 * PI).contains(&alpha1) {
        return Err(Error::invalid(format!("alpha1 = {alpha1} outside [0, 2π)")));
    }
    if !(0.0..=PI).contains(&alpha2) {
        return Err(Error::invalid(format!("alpha2 = {alpha2} outside [0, π]")));
    }
    Ok(SpherePoint::from_spherical(alpha1, alpha2))
}

/// The equiangular experimental grid on S².
///
/// Longitudes are `2π(k−1)/n`. With `pole_safe` off colatitudes are
/// `π(k−1)/n`, and the points collapsing onto the north pole are merged into
/// one; with `pole_safe` on colatitudes are the midpoints `π(2k−1)/(2n)`.
pub fn paper_grid(n_per_axis: usize, pole_safe: bool) -> Result<Vec<SpherePoint>> {
    if n_per_axis < 2 {
        return Err(Error::invalid("grid needs at least 2 angles per axis"));
    }
    let n = n_per_axis as f64;
    let mut points: Vec<SpherePoint> = Vec::with_capacity(n_per_axis * n_per_axis);
    for kc in 0..n_per_axis {
        let colat = if pole_safe {
            PI * (2.0 * kc as f64 + 1.0) / (2.0 * n)
        } else {
            PI * kc as f64 / n
        };
        for kl in 0..n_per_axis {
            let lon = 2.0 * PI * kl as f64 / n;
            let p = SpherePoint::from_spherical(lon, colat);
            let duplicate = !pole_safe
                && points
                    .iter()
                    .any(|q| dot3(&p.coords, &q.coords) > 1.0 - 1e-12);
            if !duplicate {
                points.push(p);
            }
        }
    }
    Ok(points)
}
