//! Exact simulation of p-variate Gaussian fields at a finite set of sites.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::asym::{assemble, AsymmetricCovariance};
use crate::error::{Error, Result};
use crate::geom::{SphereDim, SpherePoint};
use crate::linalg::factor_with_jitter;

/// Provenance of a simulated data set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub seed: u64,
    pub replicate: u64,
    pub jitter: f64,
}

/// Observed values of a p-variate field. Variable indices are zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    dim: SphereDim,
    pub sites: Vec<SpherePoint>,
    pub vars: Vec<usize>,
    pub values: Vec<f64>,
    pub meta: Option<SimulationMeta>,
}

impl ObservationSet {
    pub fn new(sites: Vec<SpherePoint>, vars: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if sites.len() != vars.len() || sites.len() != values.len() {
            return Err(Error::invalid(format!(
                "observation columns differ in length: {} sites, {} vars, {} values",
                sites.len(),
                vars.len(),
                values.len()
            )));
        }
        let dim = sites.first().map(|s| s.dim()).unwrap_or(SphereDim::Sphere);
        if let Some(bad) = sites.iter().find(|s| s.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim.d(),
                found: bad.dim().d(),
            });
        }
        Ok(ObservationSet {
            dim,
            sites,
            vars,
            values,
            meta: None,
        })
    }

    pub fn dim(&self) -> SphereDim {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of variables, `1 + max var`.
    pub fn p(&self) -> usize {
        self.vars.iter().max().map_or(0, |v| v + 1)
    }

    /// Indices of the observations of one variable.
    pub fn indices_of(&self, var: usize) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.vars[k] == var).collect()
    }

    /// Distinct sites in order of first appearance.
    pub fn distinct_sites(&self) -> Vec<SpherePoint> {
        let mut out: Vec<SpherePoint> = Vec::new();
        for s in &self.sites {
            if !out.contains(s) {
                out.push(*s);
            }
        }
        out
    }

    /// Position of the observation of `var` at `site`, if any.
    pub fn find(&self, site: &SpherePoint, var: usize) -> Option<usize> {
        (0..self.len()).find(|&k| self.vars[k] == var && self.sites[k] == *site)
    }

    /// Copy without observation `k`.
    pub fn without(&self, k: usize) -> ObservationSet {
        ObservationSet {
            dim: self.dim,
            sites: drop_index(&self.sites, k),
            vars: drop_index(&self.vars, k),
            values: drop_index(&self.values, k),
            meta: self.meta,
        }
    }
}

fn drop_index<T: Copy>(v: &[T], k: usize) -> Vec<T> {
    v.iter()
        .enumerate()
        .filter(|(i, _)| *i != k)
        .map(|(_, x)| *x)
        .collect()
}

/// Every (site, variable) combination, site-major.
pub fn full_layout(sites: &[SpherePoint], p: usize) -> (Vec<SpherePoint>, Vec<usize>) {
    let mut all_sites = Vec::with_capacity(sites.len() * p);
    let mut vars = Vec::with_capacity(sites.len() * p);
    for s in sites {
        for v in 0..p {
            all_sites.push(*s);
            vars.push(v);
        }
    }
    (all_sites, vars)
}

/// Counter-based generator for replicate `replicate` of experiment `seed`.
/// Distinct replicates read disjoint ChaCha streams.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// A factored covariance ready to draw replicates from.
pub struct FieldSimulator {
    sites: Vec<SpherePoint>,
    vars: Vec<usize>,
    lower: DMatrix<f64>,
    jitter: f64,
}

impl FieldSimulator {
    /// Factors the covariance of every (site, variable) combination.
    pub fn new(model: &AsymmetricCovariance, sites: &[SpherePoint], jitter: f64) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::invalid("no sites to simulate at"));
        }
        if !(jitter >= 0.0) {
            return Err(Error::invalid("jitter must be non-negative"));
        }
        if let Some(s) = sites.iter().find(|s| s.dim() != model.dim()) {
            return Err(Error::DimensionMismatch {
                expected: model.dim().d(),
                found: s.dim().d(),
            });
        }
        model.base().ensure_valid()?;
        let (all_sites, vars) = full_layout(sites, model.p());
        let prepared = model.prepare_all(&all_sites, &vars);
        let cov = assemble(model, &prepared);
        let factor = factor_with_jitter(&cov, jitter)?;
        Ok(FieldSimulator {
            sites: all_sites,
            vars,
            lower: factor.cholesky.l(),
            jitter: factor.jitter,
        })
    }

    /// Jitter actually added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Replicate `replicate` under experiment seed `seed`.
    pub fn draw(&self, seed: u64, replicate: u64) -> ObservationSet {
        let mut rng = replicate_rng(seed, replicate);
        let u = DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|_| StandardNormal.sample(&mut rng)),
        );
        let z = &self.lower * u;
        ObservationSet {
            dim: self.sites[0].dim(),
            sites: self.sites.clone(),
            vars: self.vars.clone(),
            values: z.iter().copied().collect(),
            meta: Some(SimulationMeta {
                seed,
                replicate,
                jitter: self.jitter,
            }),
        }
    }
}

/// One realization at every (site, variable) combination.
pub fn simulate_field(
    model: &AsymmetricCovariance,
    sites: &[SpherePoint],
    seed: u64,
    jitter: f64,
) -> Result<ObservationSet> {
    Ok(FieldSimulator::new(model, sites, jitter)?.draw(seed, 0))
}

/// Mean of `Z_i(x)·Z_j(y)` across replicates, with `x` and `y` indices into
/// the distinct sites of the first replicate.
pub fn empirical_cross_cov(
    replicates: &[ObservationSet],
    i: usize,
    j: usize,
    x: usize,
    y: usize,
) -> Result<f64> {
    if replicates.len() < 2 {
        return Err(Error::invalid("need at least two replicates"));
    }
    let first = &replicates[0];
    if replicates[1..]
        .iter()
        .any(|r| r.sites != first.sites || r.vars != first.vars)
    {
        return Err(Error::invalid("replicates have different site layouts"));
    }
    let sites = first.distinct_sites();
    let (sx, sy) = match (sites.get(x), sites.get(y)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::invalid("site index out of range")),
    };
    let (l, r) = match (first.find(sx, i), first.find(sy, j)) {
        (Some(l), Some(r)) => (l, r),
        _ => {
            return Err(Error::invalid(
                "variable not observed at the requested site",
            ))
        }
    };
    let total: f64 = replicates
        .iter()
        .map(|rep| rep.values[l] * rep.values[r])
        .sum();
    Ok(total / replicates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asym::AsymmetrySpec;
    use crate::models::Preset;
    use rand::Rng;

    fn m1_asym(eta: f64) -> AsymmetricCovariance {
        AsymmetricCovariance::new(
            Preset::M1.bivariate([1.0, 1.0], 0.5, 0.1, 0.2, false),
            Some(AsymmetrySpec::new(
                eta,
                1.5707963267948966,
                1.5707963267948966,
            )),
            SphereDim::Sphere,
        )
        .unwrap()
    }

    #[test]
    fn single_site_returns_first_normal_draw() {
        let model =
            AsymmetricCovariance::symmetric(Preset::M1.univariate(1.0, 0.2), SphereDim::Sphere)
                .unwrap();
        let site = SpherePoint::new(&[0.0, 0.0, 1.0]).unwrap();
        let obs = simulate_field(&model, &[site], 42, 0.0).unwrap();
        let expected: f64 = StandardNormal.sample(&mut replicate_rng(42, 0));
        assert_eq!(obs.values, vec![expected]);
        assert_eq!(obs.meta.unwrap().jitter, 0.0);
    }

    #[test]
    fn reproducible_and_replicates_differ() {
        let sites = crate::geom::paper_grid(4, true).unwrap();
        let sim = FieldSimulator::new(&m1_asym(0.6), &sites, 0.0).unwrap();
        assert_eq!(sim.draw(3, 1), sim.draw(3, 1));
        assert_ne!(sim.draw(3, 1).values, sim.draw(3, 2).values);
        assert_ne!(sim.draw(3, 1).values, sim.draw(4, 1).values);
    }

    #[test]
    fn asymmetry_changes_the_realization() {
        let sites = crate::geom::paper_grid(6, true).unwrap();
        let a = simulate_field(&m1_asym(0.0), &sites, 11, 0.0).unwrap();
        let b = simulate_field(&m1_asym(0.6), &sites, 11, 0.0).unwrap();
        assert!(a.values.iter().zip(&b.values).any(|(x, y)| x != y));
    }

    #[test]
    fn invalid_model_is_rejected() {
        let model = AsymmetricCovariance::symmetric(
            Preset::M1.bivariate([1.0, 1.0], 0.99, 0.05, 0.5, false),
            SphereDim::Sphere,
        )
        .unwrap();
        let sites = crate::geom::paper_grid(3, true).unwrap();
        assert!(matches!(
            FieldSimulator::new(&model, &sites, 0.0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn coincident_sites_trigger_jitter() {
        let model =
            AsymmetricCovariance::symmetric(Preset::M1.univariate(1.0, 0.2), SphereDim::Sphere)
                .unwrap();
        let s = SpherePoint::new(&[0.0, 1.0, 0.0]).unwrap();
        let sim = FieldSimulator::new(&model, &[s, s], 0.0).unwrap();
        assert!(sim.jitter() > 0.0);
    }

    #[test]
    fn empirical_cross_cov_examples() {
        let sites = crate::geom::paper_grid(2, true).unwrap();
        let (all, vars) = full_layout(&sites, 2);
        let zeros = ObservationSet::new(all.clone(), vars.clone(), vec![0.0; all.len()]).unwrap();
        assert_eq!(
            empirical_cross_cov(&[zeros.clone(), zeros.clone()], 0, 1, 0, 1).unwrap(),
            0.0
        );
        assert!(empirical_cross_cov(&[zeros.clone()], 0, 1, 0, 1).is_err());
        assert!(empirical_cross_cov(&[zeros.clone(), zeros.clone()], 0, 1, 0, 9).is_err());

        let mut rng = rand::thread_rng();
        let mut other = zeros.clone();
        other.sites.reverse();
        other.values = (0..other.len()).map(|_| rng.gen()).collect();
        assert!(empirical_cross_cov(&[zeros, other], 0, 0, 0, 0).is_err());
    }

    #[test]
    fn variance_is_recovered() {
        let sites = crate::geom::paper_grid(2, true).unwrap();
        let sim = FieldSimulator::new(&m1_asym(0.6), &sites, 0.0).unwrap();
        let reps: Vec<_> = (0..4000).map(|r| sim.draw(5, r)).collect();
        let v = empirical_cross_cov(&reps, 1, 1, 2, 2).unwrap();
        // standard error of the variance estimate is sqrt(2/4000) ≈ 0.022
        assert!((v - 1.0).abs() < 0.09, "{v}");
    }

    #[test]
    fn observation_set_checks_lengths() {
        let s = SpherePoint::new(&[1.0, 0.0, 0.0]).unwrap();
        assert!(ObservationSet::new(vec![s], vec![0, 1], vec![0.0]).is_err());
        let mixed = ObservationSet::new(
            vec![s, SpherePoint::from_angle(0.1)],
            vec![0, 0],
            vec![0.0, 1.0],
        );
        assert!(mixed.is_err());
    }
}
