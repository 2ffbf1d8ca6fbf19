use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use llrbc::bench::{evaluate_benchmark, results_csv, DECODE_LIMIT};
use llrbc::experiment::{frozen_test_set, ExperimentConfig, OrderSpec, Overrides};
use llrbc::lifelong::Method;
use llrbc::policy::PolicyParams;
use llrbc::profile::Profile;
use llrbc::tasks::{write_cvrplib, write_tsplib, Distribution, ProblemKind};
use llrbc::{Error, Result};

const OUTPUT_ROOT_VAR: &str = "LLRBC_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "llrbc", version, about = "Lifelong learning for neural routing solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (order, method) pair of an experiment and write its report.
    Run(RunArgs),
    /// Rebuild metrics, the summary table and charts of a run directory.
    Report {
        dir: PathBuf,
    },
    /// Write frozen test sets (JSON, optionally TSPLIB/CVRPLIB files).
    GenTasks(GenArgs),
    /// Evaluate checkpoints on directories of TSPLIB/CVRPLIB files.
    BenchEval(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags below override its fields.
    config: Option<PathBuf>,
    /// Comma-separated order presets (order1..order5).
    #[arg(long, value_delimiter = ',')]
    preset: Vec<String>,
    /// Comma-separated methods: llr-bc, finetune, restart, ewc.
    #[arg(long, value_delimiter = ',')]
    method: Vec<Method>,
    #[arg(long, value_parser = parse_profile)]
    profile: Option<Profile>,
    #[arg(long)]
    problem: Option<ProblemKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's, else under $LLRBC_OUTPUT_ROOT).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Parse and check the config, then exit without training.
    #[arg(long)]
    validate_only: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "tsp")]
    problem: ProblemKind,
    /// Comma-separated distribution ids.
    #[arg(long, value_delimiter = ',', default_value = "U,GM,E,C,G,R")]
    tasks: Vec<Distribution>,
    #[arg(long, value_parser = parse_profile, default_value = "desk")]
    profile: Profile,
    /// One node count for every task instead of the profile's scale map.
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Also write one TSPLIB/CVRPLIB file per instance.
    #[arg(long)]
    tsplib: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Checkpoint file, optionally named as NAME=PATH; repeatable.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<String>,
    /// Instance directory; repeatable.
    #[arg(long = "dir", required = true)]
    dirs: Vec<PathBuf>,
    #[arg(long, default_value_t = DECODE_LIMIT)]
    limit: usize,
    /// Directory for the result CSVs (printed to stdout otherwise).
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    match s.to_ascii_lowercase().as_str() {
        "desk" => Ok(Profile::Desk),
        "paper" => Ok(Profile::Paper),
        other => Err(format!("unknown profile `{other}` (expected desk or paper)")),
    }
}

fn output_root() -> PathBuf {
    env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("llrbc-runs"), PathBuf::from)
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            if args.preset.is_empty() || args.method.is_empty() {
                return Err(Error::Config(
                    "without a config file both --preset and --method are required".into(),
                ));
            }
            ExperimentConfig {
                problem: ProblemKind::Cvrp,
                orders: Vec::new(),
                methods: Vec::new(),
                profile: Profile::Desk,
                seed: 0,
                output_dir: None,
                overrides: Overrides::default(),
            }
        }
    };
    if !args.preset.is_empty() {
        cfg.orders = args.preset.iter().cloned().map(OrderSpec::Preset).collect();
    }
    if !args.method.is_empty() {
        cfg.methods = args.method.clone();
    }
    if let Some(p) = args.profile {
        cfg.profile = p;
    }
    if let Some(p) = args.problem {
        cfg.problem = p;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.output {
        cfg.output_dir = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = build_config(&args)?;
    let hash = cfg.hash();
    if args.validate_only {
        println!("config ok ({hash})");
        return Ok(());
    }
    let dir = match &cfg.output_dir {
        Some(d) if d.is_absolute() || env::var_os(OUTPUT_ROOT_VAR).is_none() => d.clone(),
        Some(d) => output_root().join(d),
        None => output_root().join(&hash[..12]),
    };
    info!("writing to {}", dir.display());
    let report = llrbc::experiment::run_experiment(&cfg, &dir)?;
    print!("{}", report.markdown);
    println!("\nartifacts: {}", dir.display());
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let report = llrbc::report::write_report(dir)?;
    print!("{}", report.markdown);
    Ok(())
}

fn gen_tasks(args: GenArgs) -> Result<()> {
    let cfg = ExperimentConfig {
        problem: args.problem,
        orders: vec![OrderSpec::Custom {
            name: "gen".into(),
            tasks: args.tasks.clone(),
        }],
        methods: vec![Method::FineTune],
        profile: args.profile,
        seed: args.seed,
        output_dir: None,
        overrides: Overrides {
            scale: args.scale,
            test_instances: args.count,
            ..Overrides::default()
        },
    };
    cfg.validate()?;
    let count = cfg.test_instances();
    for &d in &args.tasks {
        let task = cfg.task(d);
        let set = frozen_test_set(&args.output, &task, count)?;
        if args.tsplib {
            let dir = args.output.join("tsplib").join(task.label());
            fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            for (i, inst) in set.iter().enumerate() {
                let (text, ext) = match inst.kind {
                    ProblemKind::Tsp => (write_tsplib(inst)?, "tsp"),
                    ProblemKind::Cvrp => (write_cvrplib(inst)?, "vrp"),
                };
                let path = dir.join(format!("{}_{i:04}.{ext}", task.label()));
                fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
            }
        }
        println!("{}: {count} instances", task.label());
    }
    Ok(())
}

fn bench_eval(args: BenchArgs) -> Result<()> {
    let mut checkpoints = Vec::new();
    for spec in &args.checkpoints {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => (spec.clone(), PathBuf::from(spec)),
        };
        checkpoints.push((name, PolicyParams::load(&path)?));
    }
    for dir in &args.dirs {
        let suite = evaluate_benchmark(&checkpoints, dir, args.limit)?;
        for s in &suite.unreadable {
            warn!("unreadable {}: {}", s.path.display(), s.reason);
        }
        for name in &suite.over_limit {
            warn!("{name} exceeds the decode limit {}", args.limit);
        }
        for (name, results) in suite.checkpoints.iter().zip(&suite.results) {
            let csv = results_csv(results)?;
            match &args.output {
                Some(out) => {
                    let stem = dir.file_name().map_or("bench".into(), |s| s.to_string_lossy().into_owned());
                    let file = out.join(format!("{}_{stem}.csv", sanitize(name)));
                    llrbc::io::write_atomic(&file, csv.as_bytes())?;
                    println!("{}", file.display());
                }
                None => print!("# {name} on {}\n{csv}", dir.display()),
            }
        }
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Report { dir } => report(&dir),
        Command::GenTasks(a) => gen_tasks(a),
        Command::BenchEval(a) => bench_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
