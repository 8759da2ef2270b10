use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::DMatrix;
use unmix_core::extract::{spherical_kmeans, vca};
use unmix_core::metrics::evaluate;
use unmix_core::simgen::{generate_scene, ClassLibrary, GroundTruth, SceneSpec};
use unmix_core::solvers::{elmm, fclsu, relmm, sclsu, SolverConfig, UnmixResult};
use unmix_core::subspace::estimate_id;
use unmix_core::{AbundanceMatrix, EndmemberMatrix, ScalingMatrix, SpectralCube};

use crate::error::CliError;
use crate::formats::{
    percentile, read_cube, read_matrix, read_stack, write_cube, write_matrix, write_pgm,
    write_report, write_stack,
};

pub const CUBE_FILE: &str = "cube.json";
pub const TRUTH_ABUNDANCES: &str = "truth_abundances.csv";
pub const TRUTH_SCALINGS: &str = "truth_scalings.csv";
pub const TRUTH_REFERENCES: &str = "truth_references.csv";
pub const TRUTH_LOCALS: &str = "truth_locals.json";
pub const ABUNDANCES: &str = "abundances.csv";
pub const SCALINGS: &str = "scalings.csv";
pub const REFERENCES: &str = "references.csv";
pub const LOCALS: &str = "locals.json";
pub const OBJECTIVE: &str = "objective.csv";
pub const ENDMEMBERS: &str = "endmembers.csv";
pub const EVAL_REPORT: &str = "eval.txt";

#[derive(Debug, Parser)]
#[command(name = "hsi-unmix", version, about = "Hyperspectral unmixing under spectral variability")]
pub struct Cli {
    /// Worker threads for the solvers (0 = one per core). Results do not
    /// depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with ground truth.
    Generate(GenerateArgs),
    /// Estimate the signal subspace dimension of a cube.
    Idest(IdestArgs),
    /// Extract reference endmembers.
    Extract(ExtractArgs),
    /// Estimate abundances, scalings and endmembers.
    Unmix(UnmixArgs),
    /// Score an unmixing result against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Fclsu,
    Sclsu,
    Elmm,
    Relmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Extractor {
    Vca,
    Kmeans,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Number of classes.
    #[arg(long, default_value_t = 3)]
    pub p: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub shadow_fraction: f64,
    /// Signal-to-noise ratio in dB; `inf` disables the noise.
    #[arg(long, default_value_t = 30.0)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 200)]
    pub bands: usize,
    #[arg(long, default_value_t = 100)]
    pub lines: usize,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Spectral variants per class.
    #[arg(long, default_value_t = 10)]
    pub variants: usize,
    /// Dirichlet concentration of the abundances.
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct IdestArgs {
    /// Cube header (`.json`).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long)]
    pub p: usize,
    #[arg(long = "extract", value_enum, default_value_t = Extractor::Kmeans)]
    pub extractor: Extractor,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct UnmixArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Endmember count; required unless `--endmembers` is given.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, value_enum, default_value_t = Method::Relmm)]
    pub method: Method,
    /// Extractor used when no `--endmembers` file is given.
    #[arg(long = "extract", value_enum, default_value_t = Extractor::Kmeans)]
    pub extractor: Extractor,
    /// Initial endmembers (CSV, one column per endmember).
    #[arg(long)]
    pub endmembers: Option<PathBuf>,
    /// Defaults to 0.01 for ELMM and 0.1 for RELMM.
    #[arg(long)]
    pub lambda_s: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub lambda_s0: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Re-estimate the references without the unit-norm constraint (RELMM).
    #[arg(long)]
    pub unnormalized: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `unmix`.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory written by `generate`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Where to write the report; defaults to the `--input` directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Append a CSV row `label,armse,mean_sam_deg,recon_rmse` to this file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value = "")]
    pub label: String,
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} threads: {e}", cli.threads)))?;
    pool.install(|| match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Idest(a) => idest(&a),
        Command::Extract(a) => extract(&a),
        Command::Unmix(a) => unmix(&a),
        Command::Eval(a) => eval(&a),
    })
}

pub fn generate(args: &GenerateArgs) -> Result<(), CliError> {
    let spec = SceneSpec {
        bands: args.bands,
        lines: args.lines,
        samples: args.samples,
        classes: args.p,
        variants_per_class: args.variants,
        dirichlet_alpha: args.alpha,
        snr_db: args.snr_db,
        shadow_fraction: args.shadow_fraction,
        seed: args.seed,
        ..SceneSpec::default()
    };
    let (cube, truth) = generate_scene(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let dir = &args.output_dir;
    ensure_dir(dir)?;
    write_cube(&dir.join(CUBE_FILE), &cube)?;
    write_matrix(&dir.join(TRUTH_ABUNDANCES), truth.abundances.data())?;
    write_matrix(&dir.join(TRUTH_SCALINGS), truth.scalings.data())?;
    write_matrix(&dir.join(TRUTH_REFERENCES), truth.library.references.data())?;
    write_stack(&dir.join(TRUTH_LOCALS), &truth.locals)?;
    write_report(&dir.join("scene.txt"), &[
        ("bands", spec.bands.to_string()),
        ("lines", spec.lines.to_string()),
        ("samples", spec.samples.to_string()),
        ("classes", spec.classes.to_string()),
        ("variants_per_class", spec.variants_per_class.to_string()),
        ("dirichlet_alpha", spec.dirichlet_alpha.to_string()),
        ("snr_db", spec.snr_db.to_string()),
        ("shadow_fraction", spec.shadow_fraction.to_string()),
        ("seed", spec.seed.to_string()),
        ("noise_variance", format!("{:?}", truth.noise_variance)),
    ])?;
    info!("wrote scene to {}", dir.display());
    Ok(())
}

pub fn idest(args: &IdestArgs) -> Result<(), CliError> {
    let cube = read_cube(&args.input)?;
    let est = estimate_id(&cube);
    ensure_dir(&args.output_dir)?;
    write_matrix(
        &args.output_dir.join("noise_band_power.csv"),
        &DMatrix::from_column_slice(est.noise_band_power.len(), 1, &est.noise_band_power),
    )?;
    write_matrix(
        &args.output_dir.join("eigen_signal_power.csv"),
        &DMatrix::from_column_slice(est.eigen_signal_power.len(), 1, &est.eigen_signal_power),
    )?;
    write_report(&args.output_dir.join("idest.txt"), &[("dimension", est.dimension.to_string())])?;
    println!("dimension={}", est.dimension);
    Ok(())
}

fn run_extractor(cube: &SpectralCube, p: usize, which: Extractor, seed: u64) -> Result<unmix_core::extract::ExtractionResult, CliError> {
    Ok(match which {
        Extractor::Vca => vca(cube, p, seed)?,
        Extractor::Kmeans => spherical_kmeans(cube, p, seed)?,
    })
}

pub fn extract(args: &ExtractArgs) -> Result<(), CliError> {
    let cube = read_cube(&args.input)?;
    let res = run_extractor(&cube, args.p, args.extractor, args.seed)?;
    ensure_dir(&args.output_dir)?;
    write_matrix(&args.output_dir.join(ENDMEMBERS), res.endmembers.data())?;
    if let Some(idx) = &res.pixel_indices {
        let col: Vec<f64> = idx.iter().map(|&i| i as f64).collect();
        write_matrix(&args.output_dir.join("pixel_indices.csv"), &DMatrix::from_column_slice(col.len(), 1, &col))?;
    }
    if let Some(labels) = &res.labels {
        let col: Vec<f64> = labels.iter().map(|l| l.map_or(-1.0, |v| v as f64)).collect();
        write_matrix(&args.output_dir.join("labels.csv"), &DMatrix::from_column_slice(col.len(), 1, &col))?;
    }
    Ok(())
}

fn solver_config(args: &UnmixArgs) -> SolverConfig {
    let default_lambda = if args.method == Method::Elmm { 0.01 } else { 0.1 };
    SolverConfig {
        lambda_s: args.lambda_s.unwrap_or(default_lambda),
        lambda_s0: args.lambda_s0,
        epsilon: args.epsilon,
        max_outer_iter: args.max_iter,
        seed: args.seed,
        normalize_references: !args.unnormalized,
        ..SolverConfig::default()
    }
}

pub fn unmix(args: &UnmixArgs) -> Result<(), CliError> {
    let cube = read_cube(&args.input)?;
    let refs = match (&args.endmembers, args.p) {
        (Some(path), p) => {
            let m = read_matrix(path)?;
            if p.is_some_and(|p| p != m.ncols()) {
                return Err(CliError::Usage(format!(
                    "--p {} disagrees with the {} columns of {}",
                    p.unwrap_or(0),
                    m.ncols(),
                    path.display()
                )));
            }
            EndmemberMatrix::new(m).map_err(|e| CliError::format(path, "columns", e.to_string()))?
        }
        (None, Some(p)) => run_extractor(&cube, p, args.extractor, args.seed)?.endmembers,
        (None, None) => return Err(CliError::Usage("either --p or --endmembers is required".into())),
    };
    let cfg = solver_config(args);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if matches!(args.method, Method::Elmm | Method::Relmm) {
        cfg.validate_variability().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let result = match args.method {
        Method::Fclsu => fclsu(&cube, &refs, &cfg)?,
        Method::Sclsu => sclsu(&cube, &refs, &cfg)?,
        Method::Elmm => {
            let init = sclsu(&cube, &refs, &cfg)?;
            elmm(&cube, &refs, &cfg, &init)?
        }
        Method::Relmm => relmm(&cube, &refs, &cfg)?,
    };
    write_result(&args.output_dir, &cube, &result)?;
    println!(
        "iterations={} converged={} recon_rmse={:?}",
        result.iterations, result.converged, result.reconstruction_rmse
    );
    Ok(())
}

pub fn write_result(dir: &Path, cube: &SpectralCube, result: &UnmixResult) -> Result<(), CliError> {
    ensure_dir(dir)?;
    write_matrix(&dir.join(ABUNDANCES), result.abundances.data())?;
    write_matrix(&dir.join(SCALINGS), result.scalings.data())?;
    write_matrix(&dir.join(REFERENCES), result.references.data())?;
    write_stack(&dir.join(LOCALS), &result.locals)?;
    let trace = &result.objective_trace;
    write_matrix(&dir.join(OBJECTIVE), &DMatrix::from_column_slice(trace.len(), 1, trace))?;
    write_report(&dir.join("unmix.txt"), &[
        ("iterations", result.iterations.to_string()),
        ("converged", result.converged.to_string()),
        ("recon_rmse", format!("{:?}", result.reconstruction_rmse)),
        ("flagged_pixels", result.flagged_pixels.len().to_string()),
    ])?;
    let (lines, samples) = (cube.lines(), cube.samples());
    for (p, row) in result.abundances.data().row_iter().enumerate() {
        let values: Vec<f64> = row.iter().copied().collect();
        write_pgm(&dir.join(format!("abundance_{p}.pgm")), &values, lines, samples, 1.0)?;
    }
    for (p, row) in result.scalings.data().row_iter().enumerate() {
        let values: Vec<f64> = row.iter().copied().collect();
        let vmax = percentile(&values, 99.0);
        write_pgm(&dir.join(format!("scaling_{p}.pgm")), &values, lines, samples, vmax)?;
    }
    Ok(())
}

fn read_truth(dir: &Path) -> Result<GroundTruth, CliError> {
    let path = dir.join(TRUTH_REFERENCES);
    let references = EndmemberMatrix::normalized(read_matrix(&path)?)
        .map_err(|e| CliError::format(&path, "columns", e.to_string()))?;
    let path = dir.join(TRUTH_ABUNDANCES);
    let abundances = AbundanceMatrix::new(read_matrix(&path)?).map_err(|e| CliError::format(&path, "values", e.to_string()))?;
    let path = dir.join(TRUTH_SCALINGS);
    let scalings = ScalingMatrix::new(read_matrix(&path)?).map_err(|e| CliError::format(&path, "values", e.to_string()))?;
    let locals = read_stack(&dir.join(TRUTH_LOCALS))?;
    Ok(GroundTruth {
        abundances,
        scalings,
        locals,
        library: ClassLibrary { variants: Vec::new(), references },
        variant_index: Vec::new(),
        shadow_pixels: Vec::new(),
        noise_variance: 0.0,
    })
}

fn read_result(dir: &Path) -> Result<UnmixResult, CliError> {
    let path = dir.join(ABUNDANCES);
    let abundances = AbundanceMatrix::new(read_matrix(&path)?).map_err(|e| CliError::format(&path, "values", e.to_string()))?;
    let path = dir.join(SCALINGS);
    let scalings = ScalingMatrix::new(read_matrix(&path)?).map_err(|e| CliError::format(&path, "values", e.to_string()))?;
    let path = dir.join(REFERENCES);
    let references = EndmemberMatrix::new(read_matrix(&path)?).map_err(|e| CliError::format(&path, "columns", e.to_string()))?;
    let locals = read_stack(&dir.join(LOCALS))?;
    let trace = read_matrix(&dir.join(OBJECTIVE))?;
    Ok(UnmixResult {
        abundances,
        scalings,
        references,
        locals,
        objective_trace: trace.iter().copied().collect(),
        reconstruction_rmse: f64::NAN,
        iterations: 0,
        converged: false,
        flagged_pixels: Vec::new(),
    })
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let cube = read_cube(&args.truth.join(CUBE_FILE))?;
    let truth = read_truth(&args.truth)?;
    let result = read_result(&args.input)?;
    let p_est = result.references.count();
    let p_true = truth.library.references.count();
    if p_est != p_true {
        return Err(CliError::Usage(format!("result has {p_est} endmembers, truth has {p_true}")));
    }
    let report = evaluate(&cube, &result, &truth).map_err(|e| CliError::Usage(e.to_string()))?;
    let out_dir = args.output_dir.as_ref().unwrap_or(&args.input);
    ensure_dir(out_dir)?;
    let perm: Vec<String> = report.permutation.iter().map(|v| v.to_string()).collect();
    let entries = [
        ("armse", format!("{:?}", report.armse)),
        ("mean_sam_deg", format!("{:?}", report.mean_sam_deg)),
        ("recon_rmse", format!("{:?}", report.recon_rmse)),
        ("sam_skipped", report.sam_skipped.to_string()),
        ("permutation", perm.join(" ")),
    ];
    write_report(&out_dir.join(EVAL_REPORT), &entries)?;
    for (k, v) in &entries {
        println!("{k}={v}");
    }
    if let Some(csv) = &args.csv {
        use std::io::Write;
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(csv)
            .map_err(|e| CliError::io(csv, e))?;
        writeln!(f, "{},{:?},{:?},{:?}", args.label, report.armse, report.mean_sam_deg, report.recon_rmse)
            .map_err(|e| CliError::io(csv, e))?;
    }
    Ok(())
}
