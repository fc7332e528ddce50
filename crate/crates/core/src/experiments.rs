//! Monte Carlo studies and the model-comparison pipeline.
//!
//! A study is a grid of cells (preset × separability × scenario), each run
//! for a number of replicates. Every replicate owns a generator stream, so
//! results do not depend on scheduling, and each finished replicate is
//! written to its own file so an interrupted study can resume.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::asym::AsymmetrySpec;
use crate::error::{Error, Result};
use crate::estimate::{
    auto_init, fit_prepared, CompositeLikelihood, FitOptions, Init, ParameterVector, Variant,
};
use crate::geom::{paper_grid, SphereDim};
use crate::io::{ingest_residuals, write_json};
use crate::models::Preset;
use crate::predict::{drop_one_cv, VariableScores};
use crate::simulate::{FieldSimulator, ObservationSet};

/// Studies with a larger share of failed replicates are marked invalid.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

/// JSON Schema of [`ExperimentConfig`] documents.
pub const CONFIG_SCHEMA: &str = include_str!("../schema/experiment_config.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Separability {
    Sep,
    Nonsep,
}

impl Separability {
    pub fn is_separable(self) -> bool {
        self == Separability::Sep
    }

    fn label(self) -> &'static str {
        match self {
            Separability::Sep => "sep",
            Separability::Nonsep => "nonsep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub rho12: f64,
    pub eta: f64,
}

/// Parameters shared by every cell; `rho12` and `eta` come from the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthTable {
    pub sigma2: [f64; 2],
    pub c11: f64,
    pub c22: f64,
    /// Common scale of separable cells.
    pub c_separable: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for TruthTable {
    fn default() -> Self {
        TruthTable {
            sigma2: [1.0, 1.0],
            c11: 0.1,
            c22: 0.2,
            c_separable: 0.1,
            alpha1: FRAC_PI_2,
            alpha2: FRAC_PI_2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n_per_axis: usize,
    pub pole_safe: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_per_axis: 15,
            pole_safe: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Start at the true parameters (rotations removed for symmetric fits).
    Truth,
    /// Start from moments of the data.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyFit {
    pub init: InitMode,
    pub starts: usize,
    pub budget: usize,
    pub include_collocated_cross: bool,
}

impl Default for StudyFit {
    fn default() -> Self {
        StudyFit {
            init: InitMode::Truth,
            starts: 1,
            budget: 5000,
            include_collocated_cross: true,
        }
    }
}

fn default_name() -> String {
    "study".to_string()
}

fn default_separability() -> Vec<Separability> {
    vec![Separability::Nonsep]
}

fn default_replicates() -> usize {
    100
}

fn default_cutoff() -> f64 {
    1.0
}

/// Settings of a bias or score study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub presets: Vec<Preset>,
    #[serde(default = "default_separability")]
    pub separability: Vec<Separability>,
    #[serde(default)]
    pub truth: TruthTable,
    pub scenarios: Vec<Scenario>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Composite-likelihood cutoff in radians.
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default)]
    pub fit: StudyFit,
    /// Where per-replicate files and tables go; nothing is written if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// One combination of preset, separability and scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub preset: Preset,
    pub separability: Separability,
    pub rho12: f64,
    pub eta: f64,
}

impl Cell {
    pub fn key(&self) -> String {
        format!(
            "{}-{}-rho{}-eta{}",
            self.preset,
            self.separability.label(),
            self.rho12,
            self.eta
        )
    }

    fn variant(&self) -> Variant {
        Variant {
            asymmetric: true,
            separable: self.separability.is_separable(),
        }
    }

    /// True parameters of the asymmetric model generating this cell.
    pub fn truth(&self, t: &TruthTable) -> ParameterVector {
        let (c11, c22) = if self.separability.is_separable() {
            (t.c_separable, t.c_separable)
        } else {
            (t.c11, t.c22)
        };
        ParameterVector::from_parts(
            self.variant(),
            SphereDim::Sphere,
            t.sigma2,
            self.rho12,
            c11,
            c22,
            &AsymmetrySpec::new(self.eta, t.alpha1, t.alpha2),
        )
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &preset in &self.presets {
            for &separability in &self.separability {
                for s in &self.scenarios {
                    cells.push(Cell {
                        preset,
                        separability,
                        rho12: s.rho12,
                        eta: s.eta,
                    });
                }
            }
        }
        cells
    }

    /// Semantic checks beyond the JSON shape.
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be positive"));
        }
        if self.presets.is_empty() || self.separability.is_empty() || self.scenarios.is_empty() {
            return Err(Error::invalid(
                "presets, separability and scenarios must be nonempty",
            ));
        }
        if !(self.cutoff > 0.0 && self.cutoff <= std::f64::consts::PI) {
            return Err(Error::invalid(format!(
                "cutoff {} outside (0, pi]",
                self.cutoff
            )));
        }
        if self.grid.n_per_axis < 2 {
            return Err(Error::invalid("grid needs at least 2 points per axis"));
        }
        if self.fit.starts == 0 {
            return Err(Error::invalid("fit.starts must be positive"));
        }
        for cell in self.cells() {
            let truth = cell.truth(&self.truth);
            let model = truth.to_model(cell.preset)?;
            model
                .base()
                .ensure_valid()
                .map_err(|e| Error::Validation(format!("cell {}: {e}", cell.key())))?;
            if let Some(a) = model.asymmetry() {
                a.check_range(SphereDim::Sphere)?;
            }
        }
        Ok(())
    }

    fn sites(&self) -> Result<Vec<crate::geom::SpherePoint>> {
        paper_grid(self.grid.n_per_axis, self.grid.pole_safe)
    }

    fn fit_options(&self, seed: u64) -> FitOptions {
        FitOptions {
            cutoff: self.cutoff,
            starts: self.fit.starts,
            budget: self.fit.budget,
            seed,
            include_collocated_cross: self.fit.include_collocated_cross,
            ..FitOptions::default()
        }
    }

    /// Identifies everything that affects replicate results of `cell`.
    fn fingerprint(&self, study: &str, cell: &Cell) -> Result<String> {
        let key = serde_json::to_string(&(
            study,
            cell,
            &self.truth,
            &self.grid,
            self.seed,
            self.cutoff,
            &self.fit,
        ))?;
        Ok(format!("{:016x}", fnv1a(key.as_bytes())))
    }
}

/// 64-bit FNV-1a, used for stable seeds and cache keys.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn cell_seed(seed: u64, cell: &Cell) -> u64 {
    fnv1a(format!("{seed}/{}", cell.key()).as_bytes())
}

/// Mean and Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Estimate {
                mean: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let se = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            f64::NAN
        };
        Estimate { mean, se }
    }
}

/// Linear-interpolation sample quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Runs `task` for every (cell, replicate), reusing finished replicate files
/// under `dir` when given.
fn run_replicates<T, F>(
    cfg: &ExperimentConfig,
    study: &str,
    cells: &[Cell],
    task: F,
) -> Result<Vec<Vec<T>>>
where
    T: Serialize + DeserializeOwned + Send,
    F: Fn(usize, u64) -> T + Sync,
{
    let dirs: Vec<Option<PathBuf>> = cells
        .iter()
        .map(|c| -> Result<Option<PathBuf>> {
            Ok(match &cfg.output_dir {
                Some(d) => Some(d.join("replicates").join(study).join(format!(
                    "{}-{}",
                    c.key(),
                    cfg.fingerprint(study, c)?
                ))),
                None => None,
            })
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..cfg.replicates as u64).map(move |r| (c, r)))
        .collect();
    let results: Vec<T> = jobs
        .par_iter()
        .map(|&(c, r)| -> Result<T> {
            let file = dirs[c].as_ref().map(|d| d.join(format!("rep_{r:05}.json")));
            if let Some(f) = &file {
                if let Ok(text) = std::fs::read_to_string(f) {
                    if let Ok(v) = serde_json::from_str(&text) {
                        return Ok(v);
                    }
                }
            }
            let v = task(c, r);
            if let Some(f) = &file {
                write_json(f, &v)?;
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let mut grouped: Vec<Vec<T>> = (0..cells.len()).map(|_| Vec::new()).collect();
    for ((c, _), v) in jobs.into_iter().zip(results) {
        grouped[c].push(v);
    }
    Ok(grouped)
}

fn simulators(cfg: &ExperimentConfig, cells: &[Cell]) -> Result<Vec<FieldSimulator>> {
    let sites = cfg.sites()?;
    cells
        .iter()
        .map(|c| FieldSimulator::new(&c.truth(&cfg.truth).to_model(c.preset)?, &sites, 0.0))
        .collect()
}

fn initial(
    mode: InitMode,
    truth: &ParameterVector,
    preset: Preset,
    variant: Variant,
    data: &ObservationSet,
) -> Result<Init> {
    Ok(match mode {
        InitMode::Truth => Init::Given(vec![
            truth.convert(variant, &AsymmetrySpec::new(0.05, FRAC_PI_2, FRAC_PI_2))
        ]),
        InitMode::Auto => Init::Given(vec![auto_init(preset, variant, data)?]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRecord {
    pub replicate: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<Vec<f64>>,
    #[serde(default)]
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub n: usize,
    pub mean: Estimate,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    /// Middle-95% interval of the estimates.
    pub q025: f64,
    pub q975: f64,
    pub median_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasCell {
    pub cell: Cell,
    pub replicates: usize,
    pub failures: usize,
    pub unconverged: usize,
    pub parameters: Vec<ParameterSummary>,
    pub records: Vec<BiasRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub name: String,
    pub valid: bool,
    pub cells: Vec<BiasCell>,
}

fn summarize_parameters(truth: &ParameterVector, records: &[BiasRecord]) -> Vec<ParameterSummary> {
    truth
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut xs: Vec<f64> = records
                .iter()
                .filter_map(|r| r.estimate.as_ref().map(|e| e[k]))
                .collect();
            let mean = Estimate::of(&xs);
            xs.sort_by(f64::total_cmp);
            let median = quantile(&xs, 0.5);
            ParameterSummary {
                name: name.clone(),
                truth: truth.values[k],
                n: xs.len(),
                mean,
                median,
                q25: quantile(&xs, 0.25),
                q75: quantile(&xs, 0.75),
                q025: quantile(&xs, 0.025),
                q975: quantile(&xs, 0.975),
                median_bias: median - truth.values[k],
            }
        })
        .collect()
}

/// Simulates every cell under its truth, fits the matching asymmetric
/// variant and summarizes the estimates.
pub fn run_bias_study(cfg: &ExperimentConfig) -> Result<BiasReport> {
    cfg.validate()?;
    let cells = cfg.cells();
    let sims = simulators(cfg, &cells)?;
    let grouped = run_replicates(cfg, "bias", &cells, |c, r| {
        let cell = &cells[c];
        let seed = cell_seed(cfg.seed, cell);
        let data = sims[c].draw(seed, r);
        let truth = cell.truth(&cfg.truth);
        let outcome = (|| -> Result<_> {
            let variant = cell.variant();
            let cl = CompositeLikelihood::with_options(
                &data,
                cfg.cutoff,
                cfg.fit.include_collocated_cross,
            )?;
            let init = initial(cfg.fit.init, &truth, cell.preset, variant, &data)?;
            fit_prepared(
                cell.preset,
                variant,
                &cl,
                &data,
                &init,
                &cfg.fit_options(seed ^ r),
                &|_| {},
            )
        })();
        match outcome {
            Ok(f) => BiasRecord {
                replicate: r,
                error: None,
                estimate: Some(f.estimate.values),
                converged: f.converged,
            },
            Err(e) => BiasRecord {
                replicate: r,
                error: Some(e.to_string()),
                estimate: None,
                converged: false,
            },
        }
    })?;
    let mut valid = true;
    let cells_out = cells
        .iter()
        .zip(grouped)
        .map(|(cell, records)| {
            let failures = records.iter().filter(|r| r.error.is_some()).count();
            if failures as f64 > MAX_FAILURE_SHARE * records.len() as f64 {
                valid = false;
            }
            BiasCell {
                cell: *cell,
                replicates: records.len(),
                failures,
                unconverged: records
                    .iter()
                    .filter(|r| r.error.is_none() && !r.converged)
                    .count(),
                parameters: summarize_parameters(&cell.truth(&cfg.truth), &records),
                records,
            }
        })
        .collect();
    let report = BiasReport {
        name: cfg.name.clone(),
        valid,
        cells: cells_out,
    };
    if let Some(dir) = &cfg.output_dir {
        write_json(&dir.join("bias_report.json"), &report)?;
        crate::io::write_atomic(&dir.join("bias_estimates.csv"), &bias_csv(&report)?)?;
    }
    Ok(report)
}

/// Long-format CSV of every estimate, for plotting.
pub fn bias_csv(report: &BiasReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cell", "replicate", "parameter", "truth", "estimate"])?;
    for cell in &report.cells {
        for rec in &cell.records {
            if let Some(est) = &rec.estimate {
                for (p, v) in cell.parameters.iter().zip(est) {
                    w.write_record([
                        cell.cell.key(),
                        rec.replicate.to_string(),
                        p.name.clone(),
                        p.truth.to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Cross-validation outcome of one fitted variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRecord {
    pub mspe: f64,
    pub lscore: f64,
    pub objective: f64,
    pub converged: bool,
    pub estimate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub replicate: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symmetric: Option<ArmRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asymmetric: Option<ArmRecord>,
}

/// Scores of one fitted variant in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub cell: Cell,
    /// `S` for the symmetric fit, `A` for the asymmetric one.
    pub fitted: String,
    pub replicates: usize,
    pub mspe: Estimate,
    pub lscore: Estimate,
}

/// Paired improvement of the asymmetric fit, `S − A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cell: Cell,
    pub replicates: usize,
    pub failures: usize,
    pub mspe_gain: Estimate,
    pub lscore_gain: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub name: String,
    pub valid: bool,
    pub rows: Vec<ScoreRow>,
    pub comparisons: Vec<Comparison>,
}

impl ScoreTable {
    pub fn comparison(
        &self,
        preset: Preset,
        separability: Separability,
        rho12: f64,
        eta: f64,
    ) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| {
            c.cell.preset == preset
                && c.cell.separability == separability
                && c.cell.rho12 == rho12
                && c.cell.eta == eta
        })
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model",
            "separability",
            "rho12",
            "eta",
            "fitted",
            "replicates",
            "mspe",
            "mspe_se",
            "lscore",
            "lscore_se",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.cell.preset.to_string(),
                r.cell.separability.label().to_string(),
                r.cell.rho12.to_string(),
                r.cell.eta.to_string(),
                r.fitted.clone(),
                r.replicates.to_string(),
                r.mspe.mean.to_string(),
                r.mspe.se.to_string(),
                r.lscore.mean.to_string(),
                r.lscore.se.to_string(),
            ])?;
        }
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

impl fmt::Display for ScoreTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<6} {:<7} {:>6} {:>6} {:>3} {:>5}  {:>16}  {:>16}",
            "model", "sep", "rho12", "eta", "fit", "n", "MSPE (se)", "LSCORE (se)"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<6} {:<7} {:>6} {:>6} {:>3} {:>5}  {:>7.4} ({:.4})  {:>7.4} ({:.4})",
                r.cell.preset.to_string(),
                r.cell.separability.label(),
                r.cell.rho12,
                r.cell.eta,
                r.fitted,
                r.replicates,
                r.mspe.mean,
                r.mspe.se,
                r.lscore.mean,
                r.lscore.se
            )?;
        }
        if !self.valid {
            writeln!(
                f,
                "warning: more than 20% of replicates failed in some cell"
            )?;
        }
        Ok(())
    }
}

fn score_arm(
    cell: &Cell,
    cfg: &ExperimentConfig,
    cl: &CompositeLikelihood,
    data: &ObservationSet,
    variant: Variant,
    seed: u64,
) -> Result<ArmRecord> {
    let truth = cell.truth(&cfg.truth);
    let init = initial(cfg.fit.init, &truth, cell.preset, variant, data)?;
    let fitted = fit_prepared(
        cell.preset,
        variant,
        cl,
        data,
        &init,
        &cfg.fit_options(seed),
        &|_| {},
    )?;
    let cv = drop_one_cv(&fitted.model()?, data)?;
    Ok(ArmRecord {
        mspe: cv.mspe,
        lscore: cv.lscore,
        objective: fitted.objective,
        converged: fitted.converged,
        estimate: fitted.estimate.values,
    })
}

/// Fits the symmetric and asymmetric variant to data simulated from each
/// asymmetric truth and scores both by drop-one cross-validation.
pub fn run_score_study(cfg: &ExperimentConfig) -> Result<ScoreTable> {
    cfg.validate()?;
    let cells = cfg.cells();
    let sims = simulators(cfg, &cells)?;
    let grouped = run_replicates(cfg, "score", &cells, |c, r| {
        let cell = &cells[c];
        let seed = cell_seed(cfg.seed, cell);
        let data = sims[c].draw(seed, r);
        let outcome = (|| -> Result<(ArmRecord, ArmRecord)> {
            let cl = CompositeLikelihood::with_options(
                &data,
                cfg.cutoff,
                cfg.fit.include_collocated_cross,
            )?;
            let a = cell.variant();
            let s = a.symmetric();
            Ok((
                score_arm(cell, cfg, &cl, &data, s, seed ^ r)?,
                score_arm(cell, cfg, &cl, &data, a, seed ^ r)?,
            ))
        })();
        match outcome {
            Ok((s, a)) => ScoreRecord {
                replicate: r,
                error: None,
                symmetric: Some(s),
                asymmetric: Some(a),
            },
            Err(e) => ScoreRecord {
                replicate: r,
                error: Some(e.to_string()),
                symmetric: None,
                asymmetric: None,
            },
        }
    })?;

    let mut valid = true;
    let mut rows = Vec::new();
    let mut comparisons = Vec::new();
    for (cell, records) in cells.iter().zip(&grouped) {
        let ok: Vec<(&ArmRecord, &ArmRecord)> = records
            .iter()
            .filter_map(|r| Some((r.symmetric.as_ref()?, r.asymmetric.as_ref()?)))
            .collect();
        let failures = records.len() - ok.len();
        if failures as f64 > MAX_FAILURE_SHARE * records.len() as f64 {
            valid = false;
        }
        for (label, arms) in [
            ("S", ok.iter().map(|p| p.0).collect::<Vec<_>>()),
            ("A", ok.iter().map(|p| p.1).collect()),
        ] {
            let mspe: Vec<f64> = arms.iter().map(|a| a.mspe).collect();
            let lscore: Vec<f64> = arms.iter().map(|a| a.lscore).collect();
            rows.push(ScoreRow {
                cell: *cell,
                fitted: label.to_string(),
                replicates: ok.len(),
                mspe: Estimate::of(&mspe),
                lscore: Estimate::of(&lscore),
            });
        }
        let dm: Vec<f64> = ok.iter().map(|(s, a)| s.mspe - a.mspe).collect();
        let dl: Vec<f64> = ok.iter().map(|(s, a)| s.lscore - a.lscore).collect();
        comparisons.push(Comparison {
            cell: *cell,
            replicates: ok.len(),
            failures,
            mspe_gain: Estimate::of(&dm),
            lscore_gain: Estimate::of(&dl),
        });
    }
    let table = ScoreTable {
        name: cfg.name.clone(),
        valid,
        rows,
        comparisons,
    };
    if let Some(dir) = &cfg.output_dir {
        write_json(&dir.join("score_table.json"), &table)?;
        crate::io::write_atomic(&dir.join("score_table.csv"), &table.to_csv()?)?;
    }
    Ok(table)
}

/// Settings of the four-model comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: Preset,
    /// Composite-likelihood cutoff in radians.
    pub cutoff: f64,
    /// Starts for the first model; later models start from earlier fits.
    pub starts: usize,
    pub budget: usize,
    pub seed: u64,
    /// Also start every later model from the automatic initial value.
    pub auto_start_all: bool,
    pub min_observations: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            preset: Preset::M1,
            cutoff: 1.0,
            starts: 5,
            budget: 5000,
            seed: 0,
            auto_start_all: true,
            min_observations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRow {
    /// 1 sym-sep, 2 sym-nonsep, 3 asym-sep, 4 asym-nonsep.
    pub model: usize,
    pub variant: Variant,
    pub n_params: usize,
    pub estimate: ParameterVector,
    pub log_cl: f64,
    pub converged: bool,
    pub identifiability_notes: Vec<String>,
    pub mspe: f64,
    pub lscore: f64,
    pub per_variable: Vec<VariableScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub preset: Preset,
    pub cutoff: f64,
    pub n_observations: usize,
    pub n_pairs: usize,
    pub rows: Vec<PipelineRow>,
    /// Model number with the highest log composite likelihood.
    pub best_log_cl: usize,
    /// Model number with the lowest pooled MSPE.
    pub best_mspe: usize,
}

impl fmt::Display for PipelineReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<6} {:<12} {:>3} {:>14} {:>9} {:>9}",
            "model", "variant", "k", "log-CL", "MSPE", "LSCORE"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<6} {:<12} {:>3} {:>14.3} {:>9.4} {:>9.4}",
                r.model,
                r.variant.label(),
                r.n_params,
                r.log_cl,
                r.mspe,
                r.lscore
            )?;
        }
        for r in &self.rows {
            let params: Vec<String> = r
                .estimate
                .names
                .iter()
                .zip(&r.estimate.values)
                .map(|(n, v)| format!("{n}={v:.4}"))
                .collect();
            writeln!(f, "model {}: {}", r.model, params.join(" "))?;
        }
        Ok(())
    }
}

fn with_eta(pv: &ParameterVector, variant: Variant, eta: f64) -> ParameterVector {
    let mut out = pv.convert(variant, &AsymmetrySpec::new(eta, FRAC_PI_2, FRAC_PI_2));
    if !pv.variant.asymmetric {
        if let Some(k) = out.names.iter().position(|n| n == "eta") {
            out.values[k] = eta;
        }
    }
    out
}

/// Fits the four nested variants in order, warm-starting each from the
/// simpler fits it contains, and scores them.
pub fn compare_models(data: &ObservationSet, cfg: &PipelineConfig) -> Result<PipelineReport> {
    let cl = CompositeLikelihood::new(data, cfg.cutoff)?;
    let mut fits: Vec<ParameterVector> = Vec::new();
    let mut rows = Vec::new();
    for (m, &variant) in Variant::ALL.iter().enumerate() {
        let auto = auto_init(cfg.preset, variant, data)?;
        let mut starts = Vec::new();
        if m == 0 || cfg.auto_start_all {
            starts.push(auto.clone());
        }
        // earlier fits nested in this variant
        for prev in &fits {
            let nested = (!prev.variant.asymmetric || variant.asymmetric)
                && (prev.variant.separable || !variant.separable);
            if !nested {
                continue;
            }
            if variant.asymmetric && !prev.variant.asymmetric {
                starts.push(with_eta(prev, variant, 0.05));
                starts.push(with_eta(prev, variant, 0.0));
            } else {
                starts.push(prev.convert(variant, &AsymmetrySpec::new(0.05, FRAC_PI_2, FRAC_PI_2)));
            }
        }
        let opts = FitOptions {
            cutoff: cfg.cutoff,
            starts: if m == 0 { cfg.starts } else { 1 },
            budget: cfg.budget,
            seed: cfg.seed,
            ..FitOptions::default()
        };
        let result = fit_prepared(
            cfg.preset,
            variant,
            &cl,
            data,
            &Init::Given(starts),
            &opts,
            &|_| {},
        )?;
        let cv = drop_one_cv(&result.model()?, data)?;
        fits.push(result.estimate.clone());
        rows.push(PipelineRow {
            model: m + 1,
            variant,
            n_params: variant.n_params(data.dim()),
            estimate: result.estimate,
            log_cl: result.objective,
            converged: result.converged,
            identifiability_notes: result.identifiability_notes,
            mspe: cv.mspe,
            lscore: cv.lscore,
            per_variable: cv.per_variable,
        });
    }
    let best_log_cl = rows
        .iter()
        .fold(&rows[0], |b, r| if r.log_cl > b.log_cl { r } else { b })
        .model;
    let best_mspe = rows
        .iter()
        .fold(&rows[0], |b, r| if r.mspe < b.mspe { r } else { b })
        .model;
    Ok(PipelineReport {
        preset: cfg.preset,
        cutoff: cfg.cutoff,
        n_observations: data.len(),
        n_pairs: cl.n_pairs(),
        rows,
        best_log_cl,
        best_mspe,
    })
}

/// Ingests a residual CSV and runs [`compare_models`].
pub fn run_data_pipeline(data_csv: &Path, cfg: &PipelineConfig) -> Result<PipelineReport> {
    let data = ingest_residuals(data_csv, cfg.min_observations)?;
    compare_models(&data, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_keys_match(schema: &serde_json::Value, value: &serde_json::Value, at: &str) {
        let props = schema["properties"]
            .as_object()
            .unwrap_or_else(|| panic!("{at}: no properties"));
        assert_eq!(schema["additionalProperties"], false, "{at}");
        let fields = value.as_object().unwrap();
        let mut a: Vec<&String> = props.keys().collect();
        let mut b: Vec<&String> = fields.keys().collect();
        a.sort();
        b.sort();
        assert_eq!(a, b, "{at}");
        for (k, sub) in props {
            if sub.get("properties").is_some() {
                let inner = if fields[k].is_array() {
                    &fields[k][0]
                } else {
                    &fields[k]
                };
                assert_keys_match(sub, inner, &format!("{at}.{k}"));
            } else if let Some(items) = sub.get("items").filter(|i| i.get("properties").is_some()) {
                assert_keys_match(items, &fields[k][0], &format!("{at}.{k}[]"));
            }
        }
    }

    #[test]
    fn schema_lists_every_config_field() {
        let schema: serde_json::Value = serde_json::from_str(CONFIG_SCHEMA).unwrap();
        let mut cfg = small_config();
        cfg.output_dir = Some(PathBuf::from("out"));
        let value = serde_json::to_value(&cfg).unwrap();
        assert_keys_match(&schema, &value, "config");
        let required: Vec<&str> = schema["required"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap())
            .collect();
        for key in value.as_object().unwrap().keys() {
            let mut partial = value.clone();
            partial.as_object_mut().unwrap().remove(key);
            let parsed = serde_json::from_value::<ExperimentConfig>(partial);
            assert_eq!(parsed.is_err(), required.contains(&key.as_str()), "{key}");
        }
    }

    #[test]
    fn schema_defaults_match_struct_defaults() {
        let schema: serde_json::Value = serde_json::from_str(CONFIG_SCHEMA).unwrap();
        let minimal = ExperimentConfig::from_json(
            r#"{"presets": ["M1"], "scenarios": [{"rho12": 0.5, "eta": 0.1}]}"#,
        )
        .unwrap();
        let value = serde_json::to_value(&minimal).unwrap();
        for (k, sub) in schema["properties"].as_object().unwrap() {
            if let Some(d) = sub.get("default") {
                assert_eq!(&value[k], d, "{k}");
            }
            if let Some(props) = sub.get("properties").and_then(|p| p.as_object()) {
                for (kk, inner) in props {
                    if let Some(d) = inner.get("default") {
                        assert_eq!(&value[k][kk], d, "{k}.{kk}");
                    }
                }
            }
        }
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "name": "smoke",
                "presets": ["M1"],
                "scenarios": [{"rho12": 0.5, "eta": 0.6}],
                "grid": {"n_per_axis": 5, "pole_safe": true},
                "replicates": 3,
                "seed": 9,
                "fit": {"budget": 200}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config();
        cfg.replicates = 0;
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))));
        let mut cfg = small_config();
        cfg.scenarios[0].rho12 = 0.99;
        cfg.truth.c11 = 0.05;
        cfg.truth.c22 = 0.5;
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
        assert!(
            ExperimentConfig::from_json(r#"{"presets": ["M1"], "scenarios": [], "oops": 1}"#)
                .is_err()
        );
        let mut cfg = small_config();
        cfg.scenarios[0].eta = 4.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cells_cover_the_grid() {
        let mut cfg = small_config();
        cfg.presets = Preset::ALL.to_vec();
        cfg.separability = vec![Separability::Sep, Separability::Nonsep];
        cfg.scenarios.push(Scenario {
            rho12: 0.25,
            eta: 0.1,
        });
        let cells = cfg.cells();
        assert_eq!(cells.len(), 12);
        let keys: std::collections::BTreeSet<String> = cells.iter().map(|c| c.key()).collect();
        assert_eq!(keys.len(), 12);
        let sep = cells
            .iter()
            .find(|c| c.separability == Separability::Sep)
            .unwrap();
        assert_eq!(sep.truth(&cfg.truth).names.len(), 7);
    }

    #[test]
    fn zero_budget_gives_zero_bias() {
        let mut cfg = small_config();
        cfg.fit.budget = 0;
        let report = run_bias_study(&cfg).unwrap();
        assert!(report.valid);
        for p in &report.cells[0].parameters {
            assert_eq!(p.median_bias, 0.0, "{}", p.name);
            assert_eq!(p.n, 3);
        }
    }

    #[test]
    fn quantiles_and_estimates() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&xs, 0.5), 3.0);
        assert_eq!(quantile(&xs, 0.25), 2.0);
        assert_eq!(quantile(&xs, 0.1), 1.4);
        let e = Estimate::of(&[1.0, 3.0]);
        assert_eq!(e.mean, 2.0);
        assert!((e.se - 1.0).abs() < 1e-15);
    }

    #[test]
    fn score_study_resumes_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.output_dir = Some(dir.path().to_path_buf());
        let first = run_score_study(&cfg).unwrap();
        assert_eq!(first.rows.len(), 2);
        assert!(first.rows.iter().all(|r| r.replicates == 3));
        let bytes = std::fs::read(dir.path().join("score_table.json")).unwrap();

        // poison one replicate file: a rerun must read it instead of recomputing
        let cell_dir = std::fs::read_dir(dir.path().join("replicates/score"))
            .unwrap()
            .next()
            .unwrap()
            .unwrap()
            .path();
        let rep = cell_dir.join("rep_00000.json");
        let mut rec: ScoreRecord =
            serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
        rec.symmetric.as_mut().unwrap().mspe = 100.0;
        write_json(&rep, &rec).unwrap();
        let second = run_score_study(&cfg).unwrap();
        assert!(second.rows[0].mspe.mean > 30.0);

        std::fs::remove_dir_all(dir.path().join("replicates")).unwrap();
        run_score_study(&cfg).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("score_table.json")).unwrap(),
            bytes
        );
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
