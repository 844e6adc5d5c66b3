//! Command implementations behind the `protoflow` binary.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use protoflow::io::{
    ablation_csv, deltas_csv, gradcheck_csv, parse_config, parse_csv, prepare_output_dir, read_text, summary_row,
    sweep_csv, sweep_heatmap_csv, theory_bounds_csv, to_csv, write_atomic, write_json, write_run_bundle, AngleRow,
    RunConfigFile, RunDir, ANGLES_FILE,
};
use protoflow::metrics::{delta_analysis, pearson};
use protoflow::theory::{bound_suite, lemma_suite, WorldGenConfig};
use protoflow::trainer::{gradient_suite, run_ablation_suite, run_experiment, run_sweep, Variant, ABLATION_VARIANTS};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VIOLATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

pub const THREADS_ENV: &str = "PROTOFLOW_THREADS";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<protoflow::Error> for CliError {
    fn from(e: protoflow::Error) -> Self {
        let code = match e {
            protoflow::Error::Numeric(_) | protoflow::Error::DegeneratePrototype(_) => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult = Result<u8, CliError>;

#[derive(Debug, Parser)]
#[command(name = "protoflow", version, about = "Prototype-flow experiments on synthetic drifting streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one configuration and write its run directory.
    Run(RunArgs),
    /// Run Full and the single-factor ablations over several seeds.
    Ablate(SuiteArgs),
    /// Grid over curvature and separation weights.
    Sweep(SweepArgs),
    /// Check the margin, curvature and risk bounds on random worlds.
    Theory(TheoryArgs),
    /// Compare every analytic gradient against finite differences.
    Gradcheck(GradArgs),
    /// Class-level comparison of two run directories.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML run configuration; defaults to the standard benchmark.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fraction of training timestamps to shuffle.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Order of the incremental steps, e.g. `3,1,2`.
    #[arg(long, value_delimiter = ',')]
    pub order: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seed: Vec<u64>,
    /// Comma-separated variant names; defaults to Full and the five ablations.
    #[arg(long, value_delimiter = ',')]
    pub variant: Option<Vec<String>>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Grid as `curve=a,b,...;sep=c,d,...`.
    #[arg(long, default_value = "curve=0,0.1,0.3,0.5,1.0;sep=0,0.05,0.1,0.2")]
    pub grid: String,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seed: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub worlds: usize,
    /// Monte Carlo samples per risk estimate.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1000)]
    pub trajectories: usize,
    /// Points on each margin grid of the Lipschitz check.
    #[arg(long, default_value_t = 1000)]
    pub grid_points: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct GradArgs {
    /// Number of random instances (seeds `0..n`).
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Directory for `gradcheck.csv`; the table is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run directory treated as the method under study.
    pub run: PathBuf,
    /// Run directory treated as the reference.
    pub reference: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,
}

/// Caps rayon's pool at `PROTOFLOW_THREADS` when set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot configure threads: {e}")))
}

fn parse_variant(name: &str) -> Result<Variant, CliError> {
    Variant::parse(name).ok_or_else(|| {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        CliError::usage(format!("unknown variant `{name}`; expected one of {}", names.join(", ")))
    })
}

fn load_config(path: Option<&Path>) -> Result<RunConfigFile, CliError> {
    let Some(path) = path else {
        return Ok(RunConfigFile::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn experiment_config(args: &ExperimentArgs) -> Result<RunConfigFile, CliError> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(a) = args.alpha {
        cfg.train.time_shuffle = a;
    }
    if let Some(o) = &args.order {
        cfg.order = o.clone();
    }
    cfg.to_experiment()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(CliError::from)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

pub fn cmd_run(args: &RunArgs) -> CliResult {
    let mut cfg = experiment_config(&args.experiment)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(v) = &args.variant {
        cfg.variant = parse_variant(v)?;
    }
    prepare_output_dir(&args.out, args.overwrite)?;
    let record = run_experiment(&cfg.to_experiment()?)?;
    write_run_bundle(&args.out, &cfg, &record, true)?;
    let s = summary_row(&record);
    println!(
        "{} seed {}: mIoU_all {} mIoU_old {} mIoU_new {} F {} -> {}",
        s.variant,
        s.seed,
        fmt_opt(s.miou_all),
        fmt_opt(s.miou_old),
        fmt_opt(s.miou_new),
        fmt_opt(s.forgetting),
        args.out.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_ablate(args: &SuiteArgs) -> CliResult {
    let cfg = experiment_config(&args.experiment)?;
    let variants = match &args.variant {
        None => ABLATION_VARIANTS.to_vec(),
        Some(names) => names.iter().map(|n| parse_variant(n)).collect::<Result<_, _>>()?,
    };
    if args.seed.is_empty() || variants.is_empty() {
        return Err(CliError::usage("need at least one seed and one variant"));
    }
    prepare_output_dir(&args.out, args.overwrite)?;
    let (runs, rows) = run_ablation_suite(&cfg.to_experiment()?, &variants, &args.seed)?;
    for (v, records) in &runs {
        for r in records {
            let mut echo = cfg.clone();
            echo.variant = *v;
            echo.seed = r.seed;
            let dir = args.out.join("runs").join(format!("{}_seed{}", v.name(), r.seed));
            write_run_bundle(&dir, &echo, r, true)?;
        }
    }
    write_text(&args.out.join("ablation.csv"), &ablation_csv(&rows)?)?;
    println!("{:<12} {:>9} {:>9} {:>9} {:>9} {:>9}", "variant", "mIoU_all", "mIoU_old", "mIoU_new", "F", "margin");
    for r in &rows {
        println!(
            "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            r.variant.name(),
            r.miou_all,
            r.miou_old,
            r.miou_new,
            r.forgetting,
            r.min_cosine_margin
        );
    }
    Ok(EXIT_OK)
}

/// Parses `curve=0,0.5;sep=0,0.1` into the two axes.
pub fn parse_grid(spec: &str) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let (mut curve, mut sep) = (None, None);
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("grid part `{part}` is not `name=v1,v2`")))?;
        let vals: Vec<f64> = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().ok().filter(|x| x.is_finite() && *x >= 0.0))
            .collect::<Option<_>>()
            .ok_or_else(|| CliError::usage(format!("grid values `{values}` must be non-negative numbers")))?;
        let slot = match key.trim() {
            "curve" => &mut curve,
            "sep" => &mut sep,
            other => return Err(CliError::usage(format!("unknown grid axis `{other}`; use curve and sep"))),
        };
        if slot.replace(vals).is_some() {
            return Err(CliError::usage(format!("grid axis `{}` given twice", key.trim())));
        }
    }
    match (curve, sep) {
        (Some(c), Some(s)) => Ok((c, s)),
        _ => Err(CliError::usage("grid needs both `curve=` and `sep=` axes")),
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult {
    let cfg = experiment_config(&args.experiment)?;
    let (curve, sep) = parse_grid(&args.grid)?;
    prepare_output_dir(&args.out, args.overwrite)?;
    let cells = run_sweep(&cfg.to_experiment()?, &curve, &sep, &args.seed)?;
    write_text(&args.out.join("sweep.csv"), &sweep_csv(&cells)?)?;
    write_text(&args.out.join("sweep_miou.csv"), &sweep_heatmap_csv(&cells, |c| c.miou_all))?;
    write_text(&args.out.join("sweep_forgetting.csv"), &sweep_heatmap_csv(&cells, |c| c.forgetting))?;
    println!("{:>7} {:>7} {:>9} {:>9}", "curve", "sep", "mIoU_all", "F");
    for c in &cells {
        println!("{:>7} {:>7} {:>9.4} {:>9.4}", c.curve, c.sep, c.miou_all, c.forgetting);
    }
    Ok(EXIT_OK)
}

pub fn cmd_theory(args: &TheoryArgs) -> CliResult {
    if args.samples < 1000 || args.grid_points < 2 {
        return Err(CliError::usage("need --samples >= 1000 and --grid-points >= 2"));
    }
    prepare_output_dir(&args.out, args.overwrite)?;
    let lemmas = lemma_suite(args.seed, args.trajectories, args.grid_points);
    let bounds = bound_suite(args.seed, args.worlds, args.samples, &WorldGenConfig::default())?;
    write_json(&args.out.join("theory_lemmas.json"), &lemmas)?;
    write_json(&args.out.join("theory_bounds.json"), &bounds)?;
    write_text(&args.out.join("theory_bounds.csv"), &theory_bounds_csv(&bounds)?)?;
    println!(
        "lemmas: {} trajectories, violations margin-path {} path-curvature {} lipschitz {}",
        lemmas.trajectories, lemmas.margin_path_violations, lemmas.path_curvature_violations, lemmas.lipschitz_violations
    );
    println!(
        "bounds: {} worlds ({} two-class), violations margin {} forgetting {} regret {} regret-relation {} exact-risk {}",
        bounds.worlds,
        bounds.two_class_worlds,
        bounds.margin_bound_violations,
        bounds.forgetting_violations,
        bounds.regret_violations,
        bounds.regret_relation_violations,
        bounds.exact_risk_mismatches
    );
    Ok(if lemmas.pass() && bounds.pass() { EXIT_OK } else { EXIT_VIOLATION })
}

pub fn cmd_gradcheck(args: &GradArgs) -> CliResult {
    if args.seeds == 0 || !(args.tolerance > 0.0) {
        return Err(CliError::usage("need --seeds >= 1 and a positive --tolerance"));
    }
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let report = gradient_suite(&seeds, args.tolerance)?;
    if let Some(out) = &args.out {
        prepare_output_dir(out, args.overwrite)?;
        write_text(&out.join("gradcheck.csv"), &gradcheck_csv(&report)?)?;
    }
    println!("{:>5} {:<14} {:>3} {:>3} {:>6} {:>12}", "seed", "case", "d", "K", "params", "max_rel_err");
    for c in &report.cases {
        println!(
            "{:>5} {:<14} {:>3} {:>3} {:>6} {:>12.3e}",
            c.seed, c.name, c.feature_dim, c.classes, c.params, c.max_rel_error
        );
    }
    println!("worst {:.3e} (tolerance {:.0e})", report.worst(), report.tolerance);
    Ok(if report.pass() { EXIT_OK } else { EXIT_VIOLATION })
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> CliResult {
    let a = RunDir::load(&args.run)?;
    let b = RunDir::load(&args.reference)?;
    if a.config.to_experiment()?.schedule != b.config.to_experiment()?.schedule {
        return Err(CliError::usage(format!(
            "{} and {} were run on different schedules",
            args.run.display(),
            args.reference.display()
        )));
    }
    let deltas = delta_analysis(&a.class_summaries(), &b.class_summaries())?;
    let comparable: Vec<_> = deltas.iter().filter(|d| d.curvature.is_some()).collect();
    let favorable = comparable.iter().filter(|d| d.favorable).count();
    let corr = |r: &RunDir| -> Result<Option<f64>, CliError> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = r
            .per_class
            .iter()
            .filter_map(|c| c.mean_curvature.map(|k| (k, c.forgetting)))
            .unzip();
        Ok(pearson(&xs, &ys)?)
    };
    if let Some(out) = &args.out {
        prepare_output_dir(out, args.overwrite)?;
        write_text(&out.join("deltas.csv"), &deltas_csv(&deltas)?)?;
        let mut angles = Vec::new();
        for (label, dir) in [("run", &args.run), ("reference", &args.reference)] {
            let rows: Vec<AngleRow> = parse_csv(&read_text(&dir.join(ANGLES_FILE))?)?;
            angles.extend(rows.into_iter().map(|r| LabelledAngle {
                run: label,
                class_a: r.class_a,
                class_b: r.class_b,
                degrees: r.degrees,
                margin: r.margin,
            }));
        }
        write_text(&out.join("angles.csv"), &to_csv(&angles)?)?;
    }
    println!("{:>5} {:>10} {:>10} {:>10} {:>9}", "class", "d_curv", "d_forget", "d_iou", "favorable");
    for d in &deltas {
        println!(
            "{:>5} {:>10} {:>10.4} {:>10.4} {:>9}",
            d.class,
            fmt_opt(d.curvature),
            d.forgetting,
            d.iou,
            d.favorable
        );
    }
    println!("favorable quadrant: {favorable}/{}", comparable.len());
    println!(
        "curvature-forgetting correlation: run {} reference {}",
        fmt_opt(corr(&a)?),
        fmt_opt(corr(&b)?)
    );
    println!(
        "min cosine margin: run {} reference {}",
        fmt_opt(a.summary.min_cosine_margin),
        fmt_opt(b.summary.min_cosine_margin)
    );
    Ok(EXIT_OK)
}

#[derive(serde::Serialize)]
struct LabelledAngle {
    run: &'static str,
    class_a: usize,
    class_b: usize,
    degrees: f64,
    margin: f64,
}

pub fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Theory(a) => cmd_theory(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Analyze(a) => cmd_analyze(a),
    }
}

/// Parses `args`, runs the command and maps every outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let outcome = configure_threads().and_then(|_| dispatch(&cli));
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
