//! `sesync` command-line interface.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use sesync::data_matrices::DataMatrixSet;
use sesync::experiments::{generate_cube, CubeConfig};
use sesync::g2o::{read_g2o, read_trajectory, write_g2o, write_trajectory};
use sesync::pipeline::{
    certify_estimate, run_benchmark, solve_with_matrices, summarize, write_rows_csv, Initialization, SolverConfig,
    TrialSpec,
};
use sesync::staircase::StaircaseConfig;

#[derive(Parser)]
#[command(name = "sesync", version, about = "Certifiably correct pose-graph optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a g2o instance and report the certificate.
    Solve(SolveArgs),
    /// Generate a synthetic cube (or grid) instance with ground truth.
    Generate(GenerateArgs),
    /// Certify a candidate trajectory for a g2o instance.
    Certify(CertifyArgs),
    /// Sweep one generator parameter over repeated trials.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Random,
    Chordal,
}

impl From<InitArg> for Initialization {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Random => Initialization::Random,
            InitArg::Chordal => Initialization::Chordal,
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Initialization of the first staircase level.
    #[arg(long, value_enum, default_value = "random")]
    init: InitArg,
    /// Initial relaxation rank (default: 4 for planar, 5 for spatial).
    #[arg(long)]
    r0: Option<usize>,
    /// Maximum relaxation rank.
    #[arg(long)]
    rmax: Option<usize>,
    /// Gradient-norm tolerance (default: 1e-6 √(dn)).
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Certificate eigenvalue tolerance (default: relative to the data scale).
    #[arg(long)]
    eig_tol: Option<f64>,
    /// Seed of the random initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Block-Jacobi preconditioning of the inner solves.
    #[arg(long)]
    preconditioner: bool,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        let mut cfg = SolverConfig { init: self.init.into(), seed: self.seed, preconditioner: self.preconditioner, ..Default::default() };
        cfg.rtr.grad_tol = self.grad_tol;
        cfg.staircase.r0 = self.r0;
        cfg.staircase.r_max = self.rmax;
        cfg.staircase.eig_tol = self.eig_tol;
        cfg
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Input g2o file.
    #[arg(long)]
    input: PathBuf,
    /// Trajectory output; `.g2o` writes vertex records, anything else TUM.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Per-iteration optimizer trace (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Directory for Matrix Market dumps of the data matrices.
    #[arg(long)]
    dump_matrices: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct GenerateArgs {
    /// Lattice side length.
    #[arg(long, default_value_t = 10)]
    s: usize,
    /// Loop-closure probability.
    #[arg(long, default_value_t = 0.1)]
    plc: f64,
    /// Rotation noise (rad).
    #[arg(long, default_value_t = 0.1)]
    sigma_r: f64,
    /// Translation noise (m).
    #[arg(long, default_value_t = 0.5)]
    sigma_t: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Manhattan radius of loop-closure candidates.
    #[arg(long, default_value_t = 1)]
    lc_radius: usize,
    /// Output g2o file (ground-truth vertices plus measurements).
    #[arg(long)]
    output: PathBuf,
    /// Ground-truth trajectory (default: output with extension `truth.tum`).
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    /// Input g2o file.
    #[arg(long)]
    input: PathBuf,
    /// Candidate trajectory (`.g2o` vertex records or TUM).
    #[arg(long)]
    candidate: PathBuf,
    #[arg(long)]
    eig_tol: Option<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    SigmaR,
    SigmaT,
    Plc,
    S,
}

impl Param {
    fn name(self) -> &'static str {
        match self {
            Param::SigmaR => "sigma_r",
            Param::SigmaT => "sigma_t",
            Param::Plc => "p_lc",
            Param::S => "s",
        }
    }

    fn apply(self, cube: &mut CubeConfig, v: f64) -> Result<(), String> {
        match self {
            Param::SigmaR => cube.sigma_r = v,
            Param::SigmaT => cube.sigma_t = v,
            Param::Plc => cube.p_lc = v,
            Param::S => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(format!("s must be a positive integer, got {v}"));
                }
                cube.s = v as usize;
            }
        }
        Ok(())
    }
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Swept parameter.
    #[arg(long, value_enum)]
    param: Param,
    /// Comma-separated values of the swept parameter.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Trials per value; trial k uses seed `seed + k`.
    #[arg(long, default_value_t = 30)]
    trials: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 5)]
    s: usize,
    #[arg(long, default_value_t = 0.1)]
    plc: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma_r: f64,
    #[arg(long, default_value_t = 0.5)]
    sigma_t: f64,
    #[arg(long, default_value_t = 3)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "random")]
    init: InitArg,
    /// Per-trial CSV (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-value summary as JSON (default: stderr).
    #[arg(long)]
    summary: Option<PathBuf>,
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn writer(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    let mut w = writer(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Prefixes errors with the file they concern.
fn in_file<T, E: std::fmt::Display>(path: &Path, r: Result<T, E>) -> CliResult<T> {
    r.map_err(|e| format!("{}: {e}", path.display()).into())
}

fn exit_status(certified: bool) -> ExitCode {
    if certified {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn cmd_solve(args: &SolveArgs) -> CliResult<ExitCode> {
    let file = in_file(&args.input, read_g2o(&args.input))?;
    let g = &file.graph;
    info!("{} poses, {} measurements, d = {}", g.num_poses(), g.num_measurements(), g.dim());
    let start = std::time::Instant::now();
    let mats = DataMatrixSet::build(g)?;
    let build = start.elapsed().as_secs_f64();
    if let Some(dir) = &args.dump_matrices {
        mats.dump_matrix_market(dir)?;
    }
    let mut out = solve_with_matrices(g, &mats, &args.solver.config())?;
    out.result.timings.build = build;
    out.result.timings.total += build;
    let result = &out.result;

    if let Some(path) = &args.output {
        write_trajectory(path, &result.estimate, g.original_ids())?;
    }
    if let Some(path) = &args.trace {
        result.write_trace(BufWriter::new(File::create(path)?))?;
    }
    write_json(args.json.as_deref(), result)?;
    info!(
        "objective {:.6e}, certified {}, {:.3}s",
        result.objective_value,
        result.is_certified(),
        result.timings.total
    );
    Ok(exit_status(result.is_certified()))
}

fn cmd_generate(args: &GenerateArgs) -> CliResult<ExitCode> {
    let cfg = CubeConfig {
        s: args.s,
        p_lc: args.plc,
        sigma_r: args.sigma_r,
        sigma_t: args.sigma_t,
        seed: args.seed,
        dim: args.dim,
        lc_radius: args.lc_radius,
    };
    let (g, truth) = generate_cube(&cfg)?;
    write_g2o(BufWriter::new(File::create(&args.output)?), &g, Some(&truth))?;
    let truth_path = args.truth.clone().unwrap_or_else(|| args.output.with_extension("truth.tum"));
    write_trajectory(&truth_path, &truth, g.original_ids())?;
    info!("wrote {} poses, {} measurements", g.num_poses(), g.num_measurements());
    Ok(ExitCode::SUCCESS)
}

fn cmd_certify(args: &CertifyArgs) -> CliResult<ExitCode> {
    let file = in_file(&args.input, read_g2o(&args.input))?;
    let candidate = in_file(&args.candidate, read_trajectory(&args.candidate, &file.graph))?;
    let cfg = StaircaseConfig { eig_tol: args.eig_tol, ..Default::default() };
    let report = certify_estimate(&file.graph, &candidate, &cfg)?;
    write_json(args.json.as_deref(), &report)?;
    Ok(exit_status(report.certificate.is_certified))
}

fn cmd_benchmark(args: &BenchmarkArgs) -> CliResult<ExitCode> {
    let base = CubeConfig {
        s: args.s,
        p_lc: args.plc,
        sigma_r: args.sigma_r,
        sigma_t: args.sigma_t,
        dim: args.dim,
        ..Default::default()
    };
    let mut specs = Vec::new();
    for &value in &args.values {
        for k in 0..args.trials {
            let mut cube = CubeConfig { seed: args.seed + k, ..base.clone() };
            args.param.apply(&mut cube, value)?;
            cube.validate()?;
            let solver = SolverConfig { init: args.init.into(), seed: args.seed + k, ..Default::default() };
            specs.push(TrialSpec { index: specs.len(), param: args.param.name().into(), value, cube, solver });
        }
    }
    let rows = run_benchmark(&specs, args.jobs);
    write_rows_csv(writer(args.output.as_deref())?, &rows)?;
    let summary = summarize(&rows);
    match &args.summary {
        Some(p) => write_json(Some(p), &summary)?,
        None => {
            for s in &summary {
                eprintln!(
                    "{} = {}: certified {}/{} ({:.0}%), failures {}, mean objective {:.6e}, mean time {:.3}s",
                    s.param,
                    s.value,
                    s.certified,
                    s.trials,
                    100.0 * s.certification_rate,
                    s.failures,
                    s.mean_objective,
                    s.mean_time_s
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
