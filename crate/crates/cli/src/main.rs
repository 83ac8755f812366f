//! `cfm`: joint feature selection and labeling from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cfm_core::eval::{self, all_triplets, cycle_check, labeling_blocks, rank_diagnostic};
use cfm_core::io::{
    metrics_report, point_cloud_text, trace_csv, LabelingFile, MetricRecord, ProblemFile,
    TruthFile,
};
use cfm_core::{affine_factorize, generate, solve, validate_instance, SolverConfig, SynthParams};

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_WARNING: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "cfm", version, about = "Joint selection and labeling of features across images")]
struct Cli {
    /// Worker threads for the solver (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted problem and its ground truth.
    Synth(SynthArgs),
    /// Solve a problem file.
    Solve(SolveArgs),
    /// Score a labeling against ground truth.
    Eval(EvalArgs),
    /// Affine reconstruction from a labeling.
    Reconstruct(ReconstructArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    universe: usize,
    #[arg(long, default_value_t = 0)]
    outliers: usize,
    /// Coordinate noise, in units of the scene extent.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Fraction of true matches reassigned in every block.
    #[arg(long, default_value_t = 0.0)]
    corrupt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Build W by matching random descriptors of this dimension instead.
    #[arg(long)]
    descriptors: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    descriptor_noise: f64,
    #[arg(long, default_value = "problem.json")]
    out: PathBuf,
    #[arg(long, default_value = "truth.json")]
    truth: PathBuf,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, default_value = "labeling.json")]
    out: PathBuf,
    #[arg(long, default_value = "trace.csv")]
    trace: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated increasing ρ values.
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long)]
    max_inner: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use raw pixel coordinates in the geometric term.
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    labeling: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Problem file, for the rank diagnostic of the selected coordinates.
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    rank: usize,
    /// Instance name written in the report (default: labeling file name).
    #[arg(long)]
    instance: Option<String>,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long)]
    labeling: PathBuf,
    #[arg(long, default_value = "points.txt")]
    out: PathBuf,
}

enum Outcome {
    Done,
    Warning,
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_synth(a: &SynthArgs) -> anyhow::Result<Outcome> {
    let params = SynthParams {
        n: a.n,
        universe: a.universe,
        outliers: a.outliers,
        sigma: a.sigma,
        corruption: a.corrupt,
        seed: a.seed,
    };
    let mut planted = generate(&params)?;
    if let Some(dim) = a.descriptors {
        planted = planted.with_descriptor_matching(dim, a.descriptor_noise, a.seed)?;
    }
    let cfg = SolverConfig::with_k(a.universe);
    write(&a.out, &ProblemFile::from_instance(&planted.instance, Some(&cfg)).to_json())?;
    write(&a.truth, &TruthFile::from_truth(&planted.truth).to_json())?;
    log::info!(
        "wrote {} images with {} candidates each, {:.3} of true matches corrupted",
        a.n,
        a.universe + a.outliers,
        planted.corrupted_fraction()
    );
    Ok(Outcome::Done)
}

fn solver_config(file: &ProblemFile, a: &SolveArgs) -> SolverConfig {
    let mut cfg = file.solver.clone().unwrap_or_default();
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(r) = a.rank {
        cfg.rank = r;
    }
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(rho) = &a.rho {
        cfg.rho_schedule = rho.clone();
    }
    if let Some(s) = a.max_sweeps {
        cfg.max_sweeps = s;
    }
    if let Some(s) = a.max_inner {
        cfg.max_inner = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.no_normalize {
        cfg.normalize_coordinates = false;
    }
    cfg
}

fn cmd_solve(a: &SolveArgs) -> anyhow::Result<Outcome> {
    let file = ProblemFile::parse(&read(&a.problem)?)?;
    let cfg = solver_config(&file, a);
    cfg.validate()?;
    let inst = file.to_instance()?;
    let inst = validate_instance(inst.features().to_vec(), inst.scores().clone(), &cfg)?;
    let state = solve(&inst, &cfg)?;
    write(&a.out, &LabelingFile::from_labeling(&state.x).to_json())?;
    write(&a.trace, &trace_csv(&state.trace))?;
    if let Some(p) = state.final_parts() {
        println!("objective\t{}\tcycle\t{}\tgeo\t{}", p.total, p.cycle, p.geo);
    }
    if state.max_sweeps_hit {
        log::warn!("a ρ stage stopped at the sweep limit before converging");
        return Ok(Outcome::Warning);
    }
    Ok(Outcome::Done)
}

fn cmd_eval(a: &EvalArgs) -> anyhow::Result<Outcome> {
    let labeling = LabelingFile::parse(&read(&a.labeling)?)?;
    let truth = TruthFile::parse(&read(&a.truth)?)?.to_truth()?;
    let sizes = truth.sizes();
    let x = labeling.to_labeling(&sizes)?;
    let name = a.instance.clone().unwrap_or_else(|| {
        a.labeling
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });

    let mut records = vec![
        MetricRecord::new("recall", eval::recall(&x, &truth).value, &name),
        MetricRecord::new("precision", eval::precision(&x, &truth).value, &name),
        MetricRecord::new("inlier_fraction", eval::inlier_fraction(&x, &truth), &name),
        MetricRecord::new(
            "cycle_violation",
            cycle_check(&labeling_blocks(&x, &sizes), all_triplets(x.n())),
            &name,
        ),
    ];
    if let Some(path) = &a.problem {
        let inst = ProblemFile::parse(&read(path)?)?.to_instance()?;
        if inst.sizes() != sizes {
            bail!("problem candidate counts {:?} differ from the truth file {:?}", inst.sizes(), sizes);
        }
        let coords: Vec<_> = inst.features().iter().map(|f| f.coordinates.clone()).collect();
        let diag = rank_diagnostic(&x.measurement_matrix(&coords), a.rank);
        records.push(MetricRecord::new("rank_tail_ratio", diag.tail_ratio, &name));
        for (i, s) in diag.singular_values.iter().enumerate() {
            records.push(MetricRecord::new(format!("singular_value_{}", i + 1), *s, &name));
        }
    }
    print!("{}", metrics_report(&records));
    Ok(Outcome::Done)
}

fn cmd_reconstruct(a: &ReconstructArgs) -> anyhow::Result<Outcome> {
    let inst = ProblemFile::parse(&read(&a.problem)?)?.to_instance()?;
    let x = LabelingFile::parse(&read(&a.labeling)?)?.to_labeling(&inst.sizes())?;
    let coords: Vec<_> = inst.features().iter().map(|f| f.coordinates.clone()).collect();
    let rec = affine_factorize(&x.measurement_matrix(&coords))?;
    write(&a.out, &point_cloud_text(&rec.shape))?;
    println!("reprojection_rms\t{}", rec.reprojection_rms);
    if rec.degenerate {
        log::warn!("selected points are degenerate: centered measurements have rank below 3");
        return Ok(Outcome::Warning);
    }
    Ok(Outcome::Done)
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
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
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Warning) => ExitCode::from(EXIT_WARNING),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
