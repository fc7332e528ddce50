//! Simple co-kriging and drop-one cross-validation scores.

use std::f64::consts::PI;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asym::{assemble, AsymmetricCovariance, PreparedObs};
use crate::error::{Error, Result};
use crate::geom::SpherePoint;
use crate::linalg::{factor_with_jitter, Factorization};
use crate::simulate::ObservationSet;

/// Predictive variances at or below this are clamped before scoring.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionResult {
    pub mean: f64,
    /// Conditional variance, floored at zero.
    pub variance: f64,
    pub site: SpherePoint,
    pub var: usize,
}

/// Conditioning set factored once, reusable for many targets.
pub struct Cokriger<'a> {
    model: &'a AsymmetricCovariance,
    prepared: Vec<PreparedObs>,
    factor: Factorization,
    weights: DVector<f64>,
}

fn check_data(model: &AsymmetricCovariance, data: &ObservationSet) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("no observations to condition on"));
    }
    if data.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim().d(),
            found: data.dim().d(),
        });
    }
    if data.p() > model.p() {
        return Err(Error::invalid(format!(
            "data use {} variables, model has {}",
            data.p(),
            model.p()
        )));
    }
    Ok(())
}

impl<'a> Cokriger<'a> {
    pub fn new(model: &'a AsymmetricCovariance, data: &ObservationSet) -> Result<Self> {
        check_data(model, data)?;
        let prepared = model.prepare_all(&data.sites, &data.vars);
        let sigma = assemble(model, &prepared);
        let factor = factor_with_jitter(&sigma, 0.0)?;
        let weights = factor
            .cholesky
            .solve(&DVector::from_column_slice(&data.values));
        Ok(Cokriger {
            model,
            prepared,
            factor,
            weights,
        })
    }

    /// Jitter added to the diagonal to make the system factorable.
    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    pub fn predict(&self, site: &SpherePoint, var: usize) -> Result<PredictionResult> {
        if site.dim() != self.model.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model.dim().d(),
                found: site.dim().d(),
            });
        }
        if var >= self.model.p() {
            return Err(Error::invalid(format!("variable index {var} out of range")));
        }
        let target = self.model.prepare(site, var);
        let k = DVector::from_iterator(
            self.prepared.len(),
            self.prepared
                .iter()
                .map(|o| self.model.eval_prepared(&target, o)),
        );
        let mean = k.dot(&self.weights);
        let reduction = k.dot(&self.factor.cholesky.solve(&k));
        Ok(PredictionResult {
            mean,
            variance: (self.model.variance(var) - reduction).max(0.0),
            site: *site,
            var,
        })
    }
}

/// Zero-mean co-kriging prediction of variable `target_var` at `target_site`.
pub fn cokrige(
    model: &AsymmetricCovariance,
    data: &ObservationSet,
    target_site: &SpherePoint,
    target_var: usize,
) -> Result<PredictionResult> {
    Cokriger::new(model, data)?.predict(target_site, target_var)
}

/// One held-out prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub index: usize,
    pub var: usize,
    pub observed: f64,
    pub predicted: f64,
    pub variance: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableScores {
    pub var: usize,
    pub n: usize,
    pub mspe: f64,
    pub lscore: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScores {
    pub mspe: f64,
    pub lscore: f64,
    pub n: usize,
    pub per_variable: Vec<VariableScores>,
    /// Number of predictive variances raised to [`VARIANCE_FLOOR`].
    pub clamped: usize,
    #[serde(skip)]
    pub points: Vec<CvPoint>,
}

/// Negative Gaussian log predictive density of error `e` under variance `v`.
pub fn log_score(e: f64, v: f64) -> f64 {
    0.5 * (2.0 * PI * v).ln() + e * e / (2.0 * v)
}

impl CvScores {
    pub fn from_points(points: Vec<CvPoint>) -> Self {
        let mut clamped = 0;
        let scored: Vec<(usize, f64, f64)> = points
            .iter()
            .map(|p| {
                let v = if p.variance <= VARIANCE_FLOOR {
                    clamped += 1;
                    VARIANCE_FLOOR
                } else {
                    p.variance
                };
                (p.var, p.error * p.error, log_score(p.error, v))
            })
            .collect();
        let summarize = |rows: &[&(usize, f64, f64)]| -> (f64, f64) {
            let n = rows.len() as f64;
            (
                rows.iter().map(|r| r.1).sum::<f64>() / n,
                rows.iter().map(|r| r.2).sum::<f64>() / n,
            )
        };
        let all: Vec<_> = scored.iter().collect();
        let (mspe, lscore) = summarize(&all);
        let p = points.iter().map(|x| x.var + 1).max().unwrap_or(0);
        let per_variable = (0..p)
            .filter_map(|v| {
                let rows: Vec<_> = scored.iter().filter(|r| r.0 == v).collect();
                if rows.is_empty() {
                    return None;
                }
                let (mspe, lscore) = summarize(&rows);
                Some(VariableScores {
                    var: v,
                    n: rows.len(),
                    mspe,
                    lscore,
                })
            })
            .collect();
        CvScores {
            mspe,
            lscore,
            n: points.len(),
            per_variable,
            clamped,
            points,
        }
    }
}

/// Drop-one cross-validation: each observation is predicted from all the
/// others, including the collocated observation of the other variable.
///
/// Uses the identities `z_k − ẑ_k = (Σ⁻¹z)_k / (Σ⁻¹)_kk` and
/// `v_k = 1 / (Σ⁻¹)_kk`, so one factorization serves every held-out point.
pub fn drop_one_cv(model: &AsymmetricCovariance, data: &ObservationSet) -> Result<CvScores> {
    check_data(model, data)?;
    if data.len() < 2 {
        return Err(Error::invalid(
            "cross-validation needs at least 2 observations",
        ));
    }
    let prepared = model.prepare_all(&data.sites, &data.vars);
    let sigma = assemble(model, &prepared);
    let factor = factor_with_jitter(&sigma, 0.0)?;
    let inv = factor.cholesky.inverse();
    let z = DVector::from_column_slice(&data.values);
    let alpha = &inv * &z;
    let mut points = Vec::with_capacity(data.len());
    for k in 0..data.len() {
        let q = inv[(k, k)];
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::Numerical {
                message: format!("precision diagonal at observation {k} is {q}"),
                jitter: factor.jitter,
            });
        }
        let error = alpha[k] / q;
        points.push(CvPoint {
            index: k,
            var: data.vars[k],
            observed: data.values[k],
            predicted: data.values[k] - error,
            variance: 1.0 / q,
            error,
        });
    }
    Ok(CvScores::from_points(points))
}

/// Drop-one cross-validation by refactoring the conditioning set for every
/// held-out observation. Slow; kept as a reference for [`drop_one_cv`].
pub fn drop_one_cv_direct(model: &AsymmetricCovariance, data: &ObservationSet) -> Result<CvScores> {
    check_data(model, data)?;
    if data.len() < 2 {
        return Err(Error::invalid(
            "cross-validation needs at least 2 observations",
        ));
    }
    let points = (0..data.len())
        .into_par_iter()
        .map(|k| {
            let rest = data.without(k);
            let pred = cokrige(model, &rest, &data.sites[k], data.vars[k])?;
            let error = data.values[k] - pred.mean;
            Ok(CvPoint {
                index: k,
                var: data.vars[k],
                observed: data.values[k],
                predicted: pred.mean,
                variance: pred.variance,
                error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvScores::from_points(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asym::AsymmetrySpec;
    use crate::geom::{paper_grid, SphereDim};
    use crate::models::Preset;
    use crate::simulate::FieldSimulator;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix3, Vector3};

    fn model(eta: f64) -> AsymmetricCovariance {
        AsymmetricCovariance::new(
            Preset::M1.bivariate([1.0, 1.0], 0.5, 0.1, 0.2, false),
            Some(AsymmetrySpec::new(eta, 1.0, 1.2)),
            SphereDim::Sphere,
        )
        .unwrap()
    }

    fn data(m: &AsymmetricCovariance, n: usize, rep: u64) -> ObservationSet {
        FieldSimulator::new(m, &paper_grid(n, true).unwrap(), 0.0)
            .unwrap()
            .draw(3, rep)
    }

    #[test]
    fn interpolates_observed_values() {
        let m = model(0.6);
        let d = data(&m, 5, 0);
        for k in [0, 3, 7] {
            let p = cokrige(&m, &d, &d.sites[k], d.vars[k]).unwrap();
            assert_abs_diff_eq!(p.mean, d.values[k], epsilon = 1e-8);
            assert!(p.variance < 1e-8);
        }
    }

    #[test]
    fn prior_prediction_outside_support() {
        let m = AsymmetricCovariance::symmetric(Preset::M3.univariate(1.7, 0.2), SphereDim::Sphere)
            .unwrap();
        let d = ObservationSet::new(
            vec![
                SpherePoint::from_spherical(0.0, 0.3),
                SpherePoint::from_spherical(0.1, 0.3),
            ],
            vec![0, 0],
            vec![1.0, -2.0],
        )
        .unwrap();
        let p = cokrige(&m, &d, &SpherePoint::from_spherical(0.0, 2.5), 0).unwrap();
        assert_eq!(p.mean, 0.0);
        assert_eq!(p.variance, 1.7);
    }

    #[test]
    fn matches_hand_solved_normal_equations() {
        let m = AsymmetricCovariance::symmetric(Preset::M1.univariate(1.0, 0.9), SphereDim::Sphere)
            .unwrap();
        let sites = [0.2, 0.5, 1.1].map(|c| SpherePoint::from_spherical(0.3, c));
        let z = [0.4, -0.1, 0.8];
        let d = ObservationSet::new(sites.to_vec(), vec![0; 3], z.to_vec()).unwrap();
        let target = SpherePoint::from_spherical(0.9, 0.7);
        let cov = |a: &SpherePoint, b: &SpherePoint| m.cross_cov(0, 0, a, b).unwrap();
        let s = Matrix3::from_fn(|r, c| cov(&sites[r], &sites[c]));
        let k = Vector3::from_fn(|r, _| cov(&target, &sites[r]));
        let w = s.try_inverse().unwrap() * k;
        let p = cokrige(&m, &d, &target, 0).unwrap();
        assert_abs_diff_eq!(p.mean, w.dot(&Vector3::from(z)), epsilon = 1e-12);
        assert_abs_diff_eq!(p.variance, 1.0 - w.dot(&k), epsilon = 1e-12);
    }

    #[test]
    fn fast_and_direct_cv_agree() {
        let m = model(0.6);
        let d = data(&m, 6, 1);
        let fast = drop_one_cv(&m, &d).unwrap();
        let direct = drop_one_cv_direct(&m, &d).unwrap();
        assert_eq!(fast.n, d.len());
        assert_abs_diff_eq!(fast.mspe, direct.mspe, epsilon = 1e-9);
        assert_abs_diff_eq!(fast.lscore, direct.lscore, epsilon = 1e-9);
        for (a, b) in fast.points.iter().zip(&direct.points) {
            assert_abs_diff_eq!(a.predicted, b.predicted, epsilon = 1e-9);
            assert_abs_diff_eq!(a.variance, b.variance, epsilon = 1e-9);
        }
        assert_eq!(fast.per_variable.len(), 2);
        assert_eq!(fast.per_variable.iter().map(|v| v.n).sum::<usize>(), fast.n);
    }

    #[test]
    fn independent_pair_gives_prior_scores() {
        let m = AsymmetricCovariance::symmetric(Preset::M3.univariate(1.0, 0.1), SphereDim::Sphere)
            .unwrap();
        let d = ObservationSet::new(
            vec![
                SpherePoint::from_spherical(0.0, 0.5),
                SpherePoint::from_spherical(0.0, 2.0),
            ],
            vec![0, 0],
            vec![0.6, -1.2],
        )
        .unwrap();
        let s = drop_one_cv(&m, &d).unwrap();
        assert_abs_diff_eq!(s.mspe, (0.36 + 1.44) / 2.0, epsilon = 1e-15);
        let want = 0.5 * (log_score(0.6, 1.0) + log_score(-1.2, 1.0));
        assert_abs_diff_eq!(s.lscore, want, epsilon = 1e-15);
    }

    #[test]
    fn duplicated_observations_predict_perfectly() {
        let m = model(0.3);
        let base = data(&m, 4, 2);
        let mut sites = base.sites.clone();
        sites.extend(base.sites.iter().copied());
        let mut vars = base.vars.clone();
        vars.extend(base.vars.iter().copied());
        let mut values = base.values.clone();
        values.extend(base.values.iter().copied());
        let dup = ObservationSet::new(sites, vars, values).unwrap();
        let s = drop_one_cv(&m, &dup).unwrap();
        assert!(s.mspe < 1e-6, "mspe {}", s.mspe);
        assert!(s.clamped > 0 || s.points.iter().all(|p| p.variance < 1e-4));
    }

    #[test]
    fn variance_shrinks_as_data_grow() {
        let m = model(0.6);
        let d = data(&m, 5, 3);
        let target = SpherePoint::from_spherical(0.4, 1.3);
        let mut last = f64::INFINITY;
        for n in [1, 4, 9, 15, d.len()] {
            let sub = ObservationSet::new(
                d.sites[..n].to_vec(),
                d.vars[..n].to_vec(),
                d.values[..n].to_vec(),
            )
            .unwrap();
            let v = cokrige(&m, &sub, &target, 1).unwrap().variance;
            assert!(v <= last + 1e-8);
            assert!(v >= 0.0 && v <= 1.0 + 1e-8);
            last = v;
        }
    }

    #[test]
    fn errors() {
        let m = model(0.1);
        let empty = ObservationSet::new(vec![], vec![], vec![]).unwrap();
        assert!(cokrige(&m, &empty, &SpherePoint::from_spherical(0.0, 1.0), 0).is_err());
        let one = data(&m, 2, 0).without(0);
        let single = ObservationSet::new(vec![one.sites[0]], vec![0], vec![1.0]).unwrap();
        assert!(drop_one_cv(&m, &single).is_err());
        let circle =
            ObservationSet::new(vec![SpherePoint::from_angle(0.1)], vec![0], vec![1.0]).unwrap();
        assert!(matches!(
            cokrige(&m, &circle, &SpherePoint::from_spherical(0.0, 1.0), 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
