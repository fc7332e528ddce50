use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use spherecov::experiments::{
    bias_csv, run_bias_study, run_data_pipeline, run_score_study, ExperimentConfig, PipelineConfig,
};
use spherecov::gegenbauer::{
    check_psd_sequence, extract_schoenberg, PsdReport, DEFAULT_MAX_DEGREE, DEFAULT_QUAD_NODES,
};
use spherecov::geom::km_to_radians;
use spherecov::io::{
    read_observations_csv, to_json_bytes, write_atomic, write_json, write_observations_csv,
    ModelDocument, Sidecar,
};
use spherecov::predict::CvPoint;
use spherecov::simulate::FieldSimulator;
use spherecov::{
    drop_one_cv, fit, paper_grid, Error, FitOptions, FitResult, Init, Preset, SphereDim,
    SpherePoint, ValidationReport, Variant,
};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "spherecov",
    version,
    about = "Asymmetric covariance models on spheres"
)]
struct Cli {
    /// Seed for simulation and multi-start fitting; overrides config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one realization on a regular grid; writes a CSV and a JSON sidecar.
    Simulate(SimulateArgs),
    /// Check the expansion coefficients of a model for positive semidefiniteness.
    CheckPsd(CheckPsdArgs),
    /// Fit a model variant by maximum composite likelihood.
    Fit(FitArgs),
    /// Drop-one cross-validation scores of a model on a data set.
    Cv(CvArgs),
    /// Estimate bias of the fitted parameters over simulated replicates.
    BiasStudy(StudyArgs),
    /// Compare symmetric and asymmetric fits by cross-validation scores.
    ScoreStudy(StudyArgs),
    /// Fit and compare the four nested models on a residual data set.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Model document (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Points per axis on S², or the number of sites on S¹.
    #[arg(long, default_value_t = 15)]
    grid: usize,
    /// Keep both poles in the grid, duplicating them along each meridian.
    #[arg(long)]
    with_poles: bool,
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    /// Initial diagonal jitter for the Cholesky factorization.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Base name of the output files.
    #[arg(long, default_value = "simulated")]
    name: String,
}

#[derive(Args)]
struct CheckPsdArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_DEGREE)]
    max_degree: usize,
    #[arg(long, default_value_t = DEFAULT_QUAD_NODES)]
    quad_nodes: usize,
    /// Eigenvalue tolerance; defaults to 1e-6 times the largest variance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
#[group(multiple = false)]
struct Cutoff {
    /// Composite-likelihood cutoff in radians.
    #[arg(long)]
    cutoff_rad: Option<f64>,
    /// Composite-likelihood cutoff in kilometres on the Earth.
    #[arg(long)]
    cutoff_km: Option<f64>,
}

impl Cutoff {
    fn radians(&self) -> Option<f64> {
        self.cutoff_rad.or(self.cutoff_km.map(km_to_radians))
    }
}

#[derive(Args)]
struct FitArgs {
    /// Observations CSV.
    #[arg(long)]
    data: PathBuf,
    /// Model preset (M1, M2 or M3).
    #[arg(long)]
    model: Preset,
    /// sym-sep, sym-nonsep, asym-sep or asym-nonsep.
    #[arg(long, default_value = "asym-nonsep")]
    variant: Variant,
    #[command(flatten)]
    cutoff: Cutoff,
    #[arg(long, default_value_t = 5)]
    starts: usize,
    /// Objective evaluations per start.
    #[arg(long, default_value_t = 5000)]
    budget: usize,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct ModelSource {
    /// Model document (JSON).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output of `fit` (JSON).
    #[arg(long)]
    fit: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    source: ModelSource,
}

#[derive(Args)]
struct StudyArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the replicate count of the configuration.
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    data: PathBuf,
    /// Pipeline settings (JSON); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<Preset>,
    #[command(flatten)]
    cutoff: Cutoff,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
}

enum Failure {
    Usage(String),
    Validation(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Numerical { .. } => Failure::Numerical(msg),
            Error::Io(_) => Failure::Usage(msg),
            _ => Failure::Validation(msg),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let result = match &cli.command {
        Command::Simulate(a) => simulate(&cli, &out_dir, a),
        Command::CheckPsd(a) => check_psd(&out_dir, cli.out_dir.is_some(), a),
        Command::Fit(a) => run_fit(&cli, &out_dir, a),
        Command::Cv(a) => run_cv(&out_dir, a),
        Command::BiasStudy(a) => study(&cli, a, true),
        Command::ScoreStudy(a) => study(&cli, a, false),
        Command::Pipeline(a) => pipeline(&cli, &out_dir, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}

fn existing(path: &Path) -> std::result::Result<&Path, Failure> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Failure::Usage(format!("{}: no such file", path.display())))
    }
}

fn ensure_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))
}

fn print_json<T: Serialize>(value: &T) -> Outcome {
    let bytes = to_json_bytes(value)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

fn sites_for(dim: SphereDim, n: usize, pole_safe: bool) -> Result<Vec<SpherePoint>, Error> {
    match dim {
        SphereDim::Sphere => paper_grid(n, pole_safe),
        SphereDim::Circle => {
            if n == 0 {
                return Err(Error::InvalidArgument("need at least one site".into()));
            }
            Ok((0..n)
                .map(|k| SpherePoint::from_angle(TAU * k as f64 / n as f64))
                .collect())
        }
    }
}

fn simulate(cli: &Cli, out_dir: &Path, a: &SimulateArgs) -> Outcome {
    let doc = ModelDocument::read(existing(&a.model)?)?;
    let model = doc.build_valid()?;
    let sites = sites_for(doc.dim, a.grid, !a.with_poles)?;
    let seed = cli.seed.unwrap_or(0);
    let data = FieldSimulator::new(&model, &sites, a.jitter)?.draw(seed, a.replicate);
    ensure_dir(out_dir)?;
    let csv = out_dir.join(format!("{}.csv", a.name));
    write_observations_csv(&csv, &data)?;
    let sidecar = Sidecar {
        model: doc,
        n_observations: data.len(),
        meta: data.meta.expect("simulated data carry provenance"),
    };
    write_json(&out_dir.join(format!("{}.json", a.name)), &sidecar)?;
    println!("wrote {} observations to {}", data.len(), csv.display());
    Ok(())
}

#[derive(Serialize)]
struct PsdOutput {
    ok: bool,
    validation: ValidationReport,
    expansion_residual: f64,
    psd: PsdReport,
}

fn check_psd(out_dir: &Path, write: bool, a: &CheckPsdArgs) -> Outcome {
    let doc = ModelDocument::read(existing(&a.model)?)?;
    let spec = doc.radial_spec()?;
    let validation = spec.validate();
    let seq = extract_schoenberg(
        |t| spec.radial_matrix(t),
        doc.dim,
        a.max_degree,
        a.quad_nodes,
    )?;
    let tol = a.tol.unwrap_or_else(|| seq.default_tolerance());
    let psd = check_psd_sequence(&seq, tol);
    let out = PsdOutput {
        ok: validation.is_ok() && psd.is_ok(),
        validation,
        expansion_residual: seq.residual,
        psd,
    };
    print_json(&out)?;
    if write {
        ensure_dir(out_dir)?;
        write_json(&out_dir.join("psd_report.json"), &out)?;
    }
    if out.ok {
        Ok(())
    } else {
        let mut reasons: Vec<String> = out
            .validation
            .violations
            .iter()
            .map(|v| format!("{} (margin {:e})", v.constraint, v.margin))
            .collect();
        let failures = &out.psd.failures;
        reasons.extend(
            failures
                .iter()
                .take(3)
                .map(|f| format!("degree {} has eigenvalue {:e}", f.degree, f.min_eigenvalue)),
        );
        if failures.len() > 3 {
            reasons.push(format!("{} more failing degrees", failures.len() - 3));
        }
        Err(Failure::Validation(format!(
            "model is not valid: {}",
            reasons.join("; ")
        )))
    }
}

fn run_fit(cli: &Cli, out_dir: &Path, a: &FitArgs) -> Outcome {
    let data = read_observations_csv(existing(&a.data)?)?;
    let defaults = FitOptions::default();
    let opts = FitOptions {
        cutoff: a.cutoff.radians().unwrap_or(defaults.cutoff),
        starts: a.starts,
        budget: a.budget,
        seed: cli.seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let result = fit(a.model, a.variant, &data, &Init::Auto, &opts)?;
    if !result.objective.is_finite() {
        return Err(Failure::Numerical(
            "no start reached a finite composite likelihood".into(),
        ));
    }
    print_json(&result)?;
    ensure_dir(out_dir)?;
    write_json(&out_dir.join("fit.json"), &result)?;
    Ok(())
}

fn points_csv(points: &[CvPoint]) -> String {
    let mut out = String::from("index,var,observed,predicted,variance,error\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.index,
            p.var + 1,
            p.observed,
            p.predicted,
            p.variance,
            p.error
        ));
    }
    out
}

fn run_cv(out_dir: &Path, a: &CvArgs) -> Outcome {
    let data = read_observations_csv(existing(&a.data)?)?;
    let model = match (&a.source.model, &a.source.fit) {
        (Some(path), _) => ModelDocument::read(existing(path)?)?.build_valid()?,
        (None, Some(path)) => {
            let text = fs::read_to_string(existing(path)?).map_err(Error::from)?;
            let fitted: FitResult = serde_json::from_str(&text).map_err(Error::from)?;
            fitted.model()?
        }
        (None, None) => return Err(Failure::Usage("need --model or --fit".into())),
    };
    let scores = drop_one_cv(&model, &data)?;
    print_json(&scores)?;
    ensure_dir(out_dir)?;
    write_json(&out_dir.join("cv_scores.json"), &scores)?;
    write_atomic(
        &out_dir.join("cv_points.csv"),
        points_csv(&scores.points).as_bytes(),
    )?;
    Ok(())
}

fn study(cli: &Cli, a: &StudyArgs, bias: bool) -> Outcome {
    let mut cfg = ExperimentConfig::read(existing(&a.config)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.replicates {
        cfg.replicates = n;
    }
    let dir = cli
        .out_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&dir)?;
    cfg.output_dir = Some(dir.clone());
    write_json(&dir.join("config.json"), &cfg)?;
    let valid = if bias {
        let report = run_bias_study(&cfg)?;
        write_atomic(&dir.join("bias_estimates.csv"), &bias_csv(&report)?)?;
        print_json(&report)?;
        report.valid
    } else {
        let table = run_score_study(&cfg)?;
        print!("{table}");
        table.valid
    };
    if valid {
        Ok(())
    } else {
        Err(Failure::Numerical(
            "more than 20% of replicates failed in some cell".into(),
        ))
    }
}

fn pipeline(cli: &Cli, out_dir: &Path, a: &PipelineArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(existing(path)?).map_err(Error::from)?;
            serde_json::from_str(&text).map_err(Error::from)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(p) = a.model {
        cfg.preset = p;
    }
    if let Some(c) = a.cutoff.radians() {
        cfg.cutoff = c;
    }
    if let Some(s) = a.starts {
        cfg.starts = s;
    }
    if let Some(b) = a.budget {
        cfg.budget = b;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let report = run_data_pipeline(existing(&a.data)?, &cfg)?;
    print!("{report}");
    ensure_dir(out_dir)?;
    write_json(&out_dir.join("pipeline_report.json"), &report)?;
    Ok(())
}
