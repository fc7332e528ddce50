//! Pairwise composite-likelihood estimation of bivariate models.
//!
//! The objective sums bivariate Gaussian log-densities over every unordered
//! pair of observations whose sites lie within a geodesic cutoff. Parameters
//! are searched in unconstrained coordinates with Nelder–Mead; invalid
//! parameter vectors score `−∞` and are never passed to the density.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asym::{AsymmetricCovariance, AsymmetrySpec};
use crate::error::{Error, Result};
use crate::geom::{angle_between, SphereDim};
use crate::models::{Family, Preset};
use crate::optimize::{minimize, NelderMeadOptions};
use crate::simulate::{replicate_rng, ObservationSet};

/// Symmetric or asymmetric, separable or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Variant {
    pub asymmetric: bool,
    pub separable: bool,
}

impl Variant {
    pub const SYM_SEP: Variant = Variant {
        asymmetric: false,
        separable: true,
    };
    pub const SYM_NONSEP: Variant = Variant {
        asymmetric: false,
        separable: false,
    };
    pub const ASYM_SEP: Variant = Variant {
        asymmetric: true,
        separable: true,
    };
    pub const ASYM_NONSEP: Variant = Variant {
        asymmetric: true,
        separable: false,
    };

    /// In order of increasing flexibility.
    pub const ALL: [Variant; 4] = [
        Variant::SYM_SEP,
        Variant::SYM_NONSEP,
        Variant::ASYM_SEP,
        Variant::ASYM_NONSEP,
    ];

    pub fn label(self) -> &'static str {
        match (self.asymmetric, self.separable) {
            (false, true) => "sym-sep",
            (false, false) => "sym-nonsep",
            (true, true) => "asym-sep",
            (true, false) => "asym-nonsep",
        }
    }

    /// The same variant without rotations.
    pub fn symmetric(self) -> Variant {
        Variant {
            asymmetric: false,
            ..self
        }
    }

    pub fn n_params(self, dim: SphereDim) -> usize {
        parameter_names(self, dim).len()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts `sym-sep`, `asymxnonsep`, `asym_nonsep` and similar.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (sym, rest) = if let Some(r) = lower.strip_prefix("asym") {
            (false, r)
        } else if let Some(r) = lower.strip_prefix("sym") {
            (true, r)
        } else {
            return Err(Error::invalid(format!("unknown variant {s:?}")));
        };
        let rest = rest.trim_start_matches(['-', '_', 'x', ' ', ',', '/']);
        let separable = match rest {
            "sep" => true,
            "nonsep" | "non-sep" | "non_sep" => false,
            _ => return Err(Error::invalid(format!("unknown variant {s:?}"))),
        };
        Ok(Variant {
            asymmetric: !sym,
            separable,
        })
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.label().to_string()
    }
}

/// Names of the free parameters, in storage order.
pub fn parameter_names(variant: Variant, dim: SphereDim) -> Vec<&'static str> {
    let mut names = vec!["sigma2_1", "sigma2_2", "rho12"];
    if variant.separable {
        names.push("c");
    } else {
        names.extend(["c11", "c22"]);
    }
    if variant.asymmetric {
        names.push("eta");
        if dim == SphereDim::Sphere {
            names.extend(["alpha1", "alpha2"]);
        }
    }
    names
}

/// Free parameters of a bivariate variant, in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub variant: Variant,
    pub dim: SphereDim,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

// keeps logistic-mapped angles away from the endpoints of their range
const EDGE: f64 = 1e-9;

fn logit(p: f64) -> f64 {
    let p = p.clamp(EDGE, 1.0 - EDGE);
    (p / (1.0 - p)).ln()
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

impl ParameterVector {
    pub fn new(variant: Variant, dim: SphereDim, values: Vec<f64>) -> Result<Self> {
        let names = parameter_names(variant, dim);
        if names.len() != values.len() {
            return Err(Error::invalid(format!(
                "{variant} on S^{} has {} parameters, got {}",
                dim.d(),
                names.len(),
                values.len()
            )));
        }
        Ok(ParameterVector {
            variant,
            dim,
            names: names.into_iter().map(String::from).collect(),
            values,
        })
    }

    /// Assembles a vector from natural parameters. `c22` is ignored for
    /// separable variants and `asym` for symmetric ones.
    pub fn from_parts(
        variant: Variant,
        dim: SphereDim,
        sigma2: [f64; 2],
        rho12: f64,
        c11: f64,
        c22: f64,
        asym: &AsymmetrySpec,
    ) -> Self {
        let mut values = vec![sigma2[0], sigma2[1], rho12, c11];
        if !variant.separable {
            values.push(c22);
        }
        if variant.asymmetric {
            values.push(asym.eta);
            if dim == SphereDim::Sphere {
                values.extend([asym.alpha1, asym.alpha2]);
            }
        }
        Self::new(variant, dim, values).expect("length matches by construction")
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.values[k])
    }

    pub fn sigma2(&self) -> [f64; 2] {
        [self.values[0], self.values[1]]
    }

    pub fn rho12(&self) -> f64 {
        self.values[2]
    }

    pub fn scales(&self) -> (f64, f64) {
        if self.variant.separable {
            (self.values[3], self.values[3])
        } else {
            (self.values[3], self.values[4])
        }
    }

    fn asym_offset(&self) -> usize {
        if self.variant.separable {
            4
        } else {
            5
        }
    }

    /// Rotation parameters; `None` for symmetric variants.
    pub fn asymmetry(&self) -> Option<AsymmetrySpec> {
        if !self.variant.asymmetric {
            return None;
        }
        let k = self.asym_offset();
        Some(match self.dim {
            SphereDim::Sphere => {
                AsymmetrySpec::new(self.values[k], self.values[k + 1], self.values[k + 2])
            }
            SphereDim::Circle => AsymmetrySpec::circle(self.values[k]),
        })
    }

    pub fn to_model(&self, preset: Preset) -> Result<AsymmetricCovariance> {
        let (c11, c22) = self.scales();
        let base = preset.bivariate(
            self.sigma2(),
            self.rho12(),
            c11,
            c22,
            self.variant.separable,
        );
        AsymmetricCovariance::new(base, self.asymmetry(), self.dim)
    }

    /// The same parameters under another variant. Dropped entries are lost;
    /// added ones come from the separable scale or from `asym`.
    pub fn convert(&self, variant: Variant, asym: &AsymmetrySpec) -> Self {
        let (c11, c22) = self.scales();
        let own = self.asymmetry();
        Self::from_parts(
            variant,
            self.dim,
            self.sigma2(),
            self.rho12(),
            c11,
            c22,
            own.as_ref().unwrap_or(asym),
        )
    }

    /// Unconstrained search coordinates.
    pub fn encode(&self) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.values.len());
        u.push(self.values[0].ln());
        u.push(self.values[1].ln());
        u.push(self.values[2].clamp(-1.0 + EDGE, 1.0 - EDGE).atanh());
        let k = self.asym_offset();
        for &c in &self.values[3..k] {
            u.push(c.ln());
        }
        if self.variant.asymmetric {
            match self.dim {
                SphereDim::Sphere => {
                    u.push(logit(self.values[k] / PI));
                    u.push(self.values[k + 1]);
                    u.push(logit(self.values[k + 2] / PI));
                }
                SphereDim::Circle => {
                    u.push((self.values[k] / PI).clamp(-1.0 + EDGE, 1.0 - EDGE).atanh());
                }
            }
        }
        u
    }

    /// Inverse of [`encode`](Self::encode); `α₁` comes back in `[0, 2π)`.
    pub fn decode(variant: Variant, dim: SphereDim, u: &[f64]) -> Result<Self> {
        let mut v = Vec::with_capacity(u.len());
        if u.len() != variant.n_params(dim) {
            return Err(Error::DimensionMismatch {
                expected: variant.n_params(dim),
                found: u.len(),
            });
        }
        v.push(u[0].exp());
        v.push(u[1].exp());
        v.push(u[2].tanh());
        let k = if variant.separable { 4 } else { 5 };
        v.extend(u[3..k].iter().map(|x| x.exp()));
        if variant.asymmetric {
            match dim {
                SphereDim::Sphere => {
                    v.push(PI * logistic(u[k]));
                    v.push(u[k + 1].rem_euclid(2.0 * PI) % (2.0 * PI));
                    v.push(PI * logistic(u[k + 2]));
                }
                SphereDim::Circle => v.push(PI * u[k].tanh()),
            }
        }
        Self::new(variant, dim, v)
    }
}

#[derive(Debug, Clone, Copy)]
struct Pair {
    l: u32,
    r: u32,
    theta: f64,
}

/// Pairs within the cutoff, precomputed once per data set.
#[derive(Debug, Clone)]
pub struct CompositeLikelihood {
    dim: SphereDim,
    p: usize,
    xyz: Vec<[f64; 3]>,
    vars: Vec<usize>,
    values: Vec<f64>,
    pairs: Vec<Pair>,
}

impl CompositeLikelihood {
    /// All unordered observation pairs within `cutoff`, collocated
    /// cross-variable pairs included.
    pub fn new(data: &ObservationSet, cutoff: f64) -> Result<Self> {
        Self::with_options(data, cutoff, true)
    }

    pub fn with_options(
        data: &ObservationSet,
        cutoff: f64,
        include_collocated_cross: bool,
    ) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff <= PI) {
            return Err(Error::invalid(format!("cutoff {cutoff} outside (0, pi]")));
        }
        let xyz: Vec<[f64; 3]> = data.sites.iter().map(|s| *s.xyz()).collect();
        let n = xyz.len();
        let mut pairs = Vec::new();
        for l in 0..n {
            for r in l + 1..n {
                let theta = angle_between(&xyz[l], &xyz[r]);
                if theta > cutoff {
                    continue;
                }
                if !include_collocated_cross && theta == 0.0 && data.vars[l] != data.vars[r] {
                    continue;
                }
                pairs.push(Pair {
                    l: l as u32,
                    r: r as u32,
                    theta,
                });
            }
        }
        if pairs.is_empty() {
            return Err(Error::invalid("cutoff excludes all pairs"));
        }
        Ok(CompositeLikelihood {
            dim: data.dim(),
            p: data.p(),
            xyz,
            vars: data.vars.clone(),
            values: data.values.clone(),
            pairs,
        })
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn dim(&self) -> SphereDim {
        self.dim
    }

    /// Whether `model` may be evaluated: parameter constraints and angle
    /// ranges hold.
    pub fn admits(&self, model: &AsymmetricCovariance) -> bool {
        model.base().validate().is_ok()
            && model
                .asymmetry()
                .map_or(true, |a| a.check_range(self.dim).is_ok())
            && (model.base().family != Family::Wendland
                || model.base().spectral_report().is_ok_and(|r| r.is_ok()))
    }

    fn check_compatible(&self, model: &AsymmetricCovariance) -> Result<()> {
        if model.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim.d(),
                found: model.dim().d(),
            });
        }
        if model.p() < self.p {
            return Err(Error::invalid(format!(
                "model has {} variables but data use {}",
                model.p(),
                self.p
            )));
        }
        Ok(())
    }

    /// Log composite likelihood, or `−∞` for an inadmissible model.
    pub fn evaluate(&self, model: &AsymmetricCovariance) -> f64 {
        self.evaluate_observed(model, &mut |_| {})
    }

    /// As [`evaluate`](Self::evaluate), calling `observer` on every model
    /// whose density is actually computed.
    pub fn evaluate_observed(
        &self,
        model: &AsymmetricCovariance,
        observer: &mut dyn FnMut(&AsymmetricCovariance),
    ) -> f64 {
        if self.check_compatible(model).is_err() || !self.admits(model) {
            return f64::NEG_INFINITY;
        }
        observer(model);
        self.log_density_sum(model)
    }

    fn log_density_sum(&self, model: &AsymmetricCovariance) -> f64 {
        let rotated: Vec<[f64; 3]> = self
            .xyz
            .iter()
            .zip(&self.vars)
            .map(|(x, &v)| model.rotations()[v].apply_xyz(x))
            .collect();
        let var: Vec<f64> = (0..model.p()).map(|i| model.variance(i)).collect();
        let log_two_pi = (2.0 * PI).ln();
        let mut total = 0.0;
        for pair in &self.pairs {
            let (l, r) = (pair.l as usize, pair.r as usize);
            let (i, j) = (self.vars[l], self.vars[r]);
            let theta = if i == j {
                pair.theta
            } else {
                angle_between(&rotated[l], &rotated[r])
            };
            let k = model.eval_radial(i, j, theta);
            let (s1, s2) = (var[i], var[j]);
            let det = s1 * s2 - k * k;
            if det <= 1e-12 * s1 * s2 {
                return f64::NEG_INFINITY;
            }
            let (z1, z2) = (self.values[l], self.values[r]);
            let quad = s2 * z1 * z1 - 2.0 * k * z1 * z2 + s1 * z2 * z2;
            total += -log_two_pi - 0.5 * det.ln() - quad / (2.0 * det);
        }
        total
    }
}

/// Log composite likelihood of `data` under `model`, pairs within `cutoff`.
pub fn cl_objective(
    model: &AsymmetricCovariance,
    data: &ObservationSet,
    cutoff: f64,
) -> Result<f64> {
    let cl = CompositeLikelihood::new(data, cutoff)?;
    cl.check_compatible(model)?;
    Ok(cl.evaluate(model))
}

/// Starting point from moments of the data.
pub fn auto_init(
    _preset: Preset,
    variant: Variant,
    data: &ObservationSet,
) -> Result<ParameterVector> {
    if data.is_empty() {
        return Err(Error::invalid("no observations"));
    }
    if data.p() > 2 {
        return Err(Error::invalid(format!(
            "bivariate variants need 2 variables, data have {}",
            data.p()
        )));
    }
    let mut sigma2 = [0.0; 2];
    for (v, s) in sigma2.iter_mut().enumerate() {
        let idx = data.indices_of(v);
        if idx.len() < 2 {
            return Err(Error::invalid(format!(
                "variable {} has fewer than 2 observations",
                v + 1
            )));
        }
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&k| data.values[k]).sum::<f64>() / n;
        *s = idx
            .iter()
            .map(|&k| (data.values[k] - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        if !(*s > 0.0) {
            return Err(Error::invalid(format!(
                "variable {} has zero variance",
                v + 1
            )));
        }
    }
    let rho = collocated_correlation(data).clamp(-0.95, 0.95);

    let sites = data.distinct_sites();
    if sites.len() < 2 {
        return Err(Error::invalid("need at least two distinct sites"));
    }
    let mut dists = Vec::with_capacity(sites.len() * (sites.len() - 1) / 2);
    for a in 0..sites.len() {
        for b in a + 1..sites.len() {
            dists.push(angle_between(sites[a].xyz(), sites[b].xyz()));
        }
    }
    let c = median(&mut dists) / 3.0;
    let asym = AsymmetrySpec::new(0.05, FRAC_PI_2, FRAC_PI_2);
    Ok(ParameterVector::from_parts(
        variant,
        data.dim(),
        sigma2,
        rho,
        c,
        c,
        &asym,
    ))
}

fn site_key(x: &[f64; 3]) -> [u64; 3] {
    [x[0].to_bits(), x[1].to_bits(), x[2].to_bits()]
}

/// Pearson correlation of variables 1 and 2 over sites observing both.
fn collocated_correlation(data: &ObservationSet) -> f64 {
    let mut first: HashMap<[u64; 3], f64> = HashMap::new();
    for k in data.indices_of(0) {
        first
            .entry(site_key(data.sites[k].xyz()))
            .or_insert(data.values[k]);
    }
    let pairs: Vec<(f64, f64)> = data
        .indices_of(1)
        .into_iter()
        .filter_map(|k| {
            first
                .get(&site_key(data.sites[k].xyz()))
                .map(|&a| (a, data.values[k]))
        })
        .collect();
    if pairs.len() < 2 {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let (ma, mb) = pairs
        .iter()
        .fold((0.0, 0.0), |(sa, sb), (a, b)| (sa + a / n, sb + b / n));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma).powi(2);
        sbb += (b - mb).powi(2);
    }
    let r = sab / (saa * sbb).sqrt();
    if r.is_finite() {
        r
    } else {
        0.0
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Where the search starts.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// [`auto_init`] plus random perturbations.
    Auto,
    /// Explicit start points; perturbations are drawn around the first.
    Given(Vec<ParameterVector>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Geodesic cutoff in radians.
    pub cutoff: f64,
    /// Total number of starts, including the given or automatic ones.
    pub starts: usize,
    /// Objective evaluations allowed per start.
    pub budget: usize,
    /// Seed for the perturbed starts.
    pub seed: u64,
    /// Standard deviation of start perturbations in search coordinates.
    pub perturbation: f64,
    pub include_collocated_cross: bool,
    pub xtol: f64,
    pub ftol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            cutoff: 1.0,
            starts: 5,
            budget: 5000,
            seed: 0,
            perturbation: 0.5,
            include_collocated_cross: true,
            xtol: 1e-6,
            ftol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub preset: Preset,
    pub estimate: ParameterVector,
    /// Log composite likelihood at the estimate.
    pub objective: f64,
    pub n_pairs: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub identifiability_notes: Vec<String>,
}

impl FitResult {
    pub fn model(&self) -> Result<AsymmetricCovariance> {
        self.estimate.to_model(self.preset)
    }
}

/// Maximizes the composite likelihood of `data` over `variant` of `preset`.
pub fn fit(
    preset: Preset,
    variant: Variant,
    data: &ObservationSet,
    init: &Init,
    opts: &FitOptions,
) -> Result<FitResult> {
    let cl = CompositeLikelihood::with_options(data, opts.cutoff, opts.include_collocated_cross)?;
    fit_prepared(preset, variant, &cl, data, init, opts, &|_| {})
}

/// As [`fit`] with a precomputed pair set and an observer called on every
/// model whose density is evaluated.
pub fn fit_prepared(
    preset: Preset,
    variant: Variant,
    cl: &CompositeLikelihood,
    data: &ObservationSet,
    init: &Init,
    opts: &FitOptions,
    observer: &(dyn Fn(&AsymmetricCovariance) + Sync),
) -> Result<FitResult> {
    if data.p() != 2 || data.indices_of(0).is_empty() || data.indices_of(1).is_empty() {
        return Err(Error::invalid(
            "bivariate variants need both variables present",
        ));
    }
    let dim = data.dim();
    let given = match init {
        Init::Auto => vec![auto_init(preset, variant, data)?],
        Init::Given(v) if v.is_empty() => return Err(Error::invalid("no start points given")),
        Init::Given(v) => v.clone(),
    };
    for g in &given {
        if g.variant != variant || g.dim != dim {
            return Err(Error::invalid(format!(
                "start point is {} on S^{}, fitting {variant} on S^{}",
                g.variant,
                g.dim.d(),
                dim.d()
            )));
        }
    }

    let objective = |pv: &ParameterVector| -> f64 {
        match pv.to_model(preset) {
            Ok(m) => cl.evaluate_observed(&m, &mut |m| observer(m)),
            Err(_) => f64::NEG_INFINITY,
        }
    };

    if opts.budget == 0 {
        let start = given[0].clone();
        let value = objective(&start);
        return Ok(finish(preset, start, value, cl.n_pairs(), 0, 1, false));
    }

    let mut starts: Vec<Vec<f64>> = given.iter().map(|g| g.encode()).collect();
    let centre = starts[0].clone();
    for s in starts.len()..opts.starts.max(1) {
        let mut rng = replicate_rng(opts.seed, s as u64);
        starts.push(
            centre
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + opts.perturbation * z
                })
                .collect(),
        );
    }

    let nm = NelderMeadOptions {
        max_evals: opts.budget,
        xtol: opts.xtol,
        ftol: opts.ftol,
        initial_step: 0.5,
    };
    let neg = |u: &[f64]| -> f64 {
        match ParameterVector::decode(variant, dim, u) {
            Ok(pv) => -objective(&pv),
            Err(_) => f64::INFINITY,
        }
    };
    let runs: Vec<_> = starts
        .par_iter()
        .map(|u0| {
            let u0 = make_feasible(u0, variant, &neg);
            u0.map(|u0| minimize(&neg, &u0, &nm))
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (k, run) in runs.iter().enumerate() {
        if let Some(r) = run {
            if r.value.is_finite() && best.map_or(true, |(_, v)| r.value < v) {
                best = Some((k, r.value));
            }
        }
    }
    let Some((k, _)) = best else {
        return Err(Error::Numerical {
            message: "no start point reached a finite composite likelihood".into(),
            jitter: 0.0,
        });
    };
    let run = runs[k].as_ref().expect("best run exists");
    let iterations = runs.iter().flatten().map(|r| r.iterations).sum();
    let evaluations = runs.iter().flatten().map(|r| r.evaluations).sum();
    let estimate = ParameterVector::decode(variant, dim, &run.x)?;
    Ok(finish(
        preset,
        estimate,
        -run.value,
        cl.n_pairs(),
        iterations,
        evaluations,
        run.converged,
    ))
}

/// Moves an infeasible start toward a conservative anchor (zero
/// correlation, scales capped at 3 radians) until the objective is finite.
fn make_feasible(u0: &[f64], variant: Variant, neg: &dyn Fn(&[f64]) -> f64) -> Option<Vec<f64>> {
    if neg(u0).is_finite() {
        return Some(u0.to_vec());
    }
    let mut anchor = u0.to_vec();
    anchor[2] = 0.0;
    let k = if variant.separable { 4 } else { 5 };
    for c in &mut anchor[3..k] {
        *c = c.min(3f64.ln());
    }
    if !neg(&anchor).is_finite() {
        return None;
    }
    // bisect on the segment for the feasible point closest to u0
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let trial: Vec<f64> = anchor
            .iter()
            .zip(u0)
            .map(|(a, b)| a + mid * (b - a))
            .collect();
        if neg(&trial).is_finite() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(
        anchor
            .iter()
            .zip(u0)
            .map(|(a, b)| a + lo * (b - a))
            .collect(),
    )
}

fn finish(
    preset: Preset,
    estimate: ParameterVector,
    objective: f64,
    n_pairs: usize,
    iterations: usize,
    evaluations: usize,
    converged: bool,
) -> FitResult {
    let mut notes = Vec::new();
    if let Some(eta) = estimate.get("eta") {
        if estimate.dim == SphereDim::Sphere && eta.abs() < 0.01 {
            notes.push(format!(
                "eta = {eta:.4} is below 0.01: axis angles alpha1, alpha2 are unidentifiable"
            ));
        }
    }
    if let Some(a2) = estimate.get("alpha2") {
        if a2 < 1e-3 || PI - a2 < 1e-3 {
            notes.push("axis at a pole: alpha1 is unidentifiable".to_string());
        }
    }
    FitResult {
        preset,
        estimate,
        objective,
        n_pairs,
        iterations,
        evaluations,
        converged,
        identifiability_notes: notes,
    }
}
