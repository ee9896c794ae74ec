use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dagforge::bench::{self, BenchConfig, BenchError, CsvStore};
use dagforge::graphgen::{generate_dag, read_dag, write_dag, Dag};
use dagforge::network::{compile, Checkpoint, CompileOptions};
use dagforge::par::map_collect;
use dagforge::verify::{verify_checkpoint, verify_dag, Tolerances, VerifyReport};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "dagforge", version, about = "Compile DAGs into layered networks, verify and benchmark them")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample an Erdős-Rényi graph, keep its largest component and orient it.
    Gen(GenArgs),
    /// Run layering, equivalence, gradient, mask and reassignment checks.
    Verify(VerifyArgs),
    /// Time the forward schedules over a grid and append records to a CSV.
    Bench(BenchArgs),
    /// Summarize a record CSV into gains, heights and attenuation.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, value_parser = parse_nodes)]
    nodes: usize,
    #[arg(long, value_parser = parse_prob)]
    prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Edge-list output path.
    #[arg(long)]
    out: PathBuf,
    /// Also write a compiled network checkpoint (JSON) for the DAG.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Verify this edge-list file instead of generated graphs.
    #[arg(long, conflicts_with_all = ["nodes", "prob"])]
    dag: Option<PathBuf>,
    #[arg(long, value_parser = parse_nodes, requires = "prob")]
    nodes: Option<usize>,
    #[arg(long, value_parser = parse_prob, requires = "nodes")]
    prob: Option<f64>,
    /// Number of seeds (graphs when generating, weight draws for --dag).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative tolerance of the forward-equivalence checks.
    #[arg(long, default_value_t = Tolerances::default().forward_rel, value_parser = parse_positive)]
    tolerance: f64,
    /// Relative tolerance of the gradient check.
    #[arg(long, default_value_t = Tolerances::default().grad_rel, value_parser = parse_positive)]
    grad_tolerance: f64,
    /// Load a network checkpoint and check it.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// JSON grid definition.
    #[arg(long)]
    config: PathBuf,
    /// Record CSV; existing records are kept and skipped.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    num_batches: Option<usize>,
    #[arg(long)]
    seeds_per_cell: Option<usize>,
    #[arg(long)]
    warmup_passes: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Record CSV written by `bench`.
    #[arg(long)]
    records: PathBuf,
    /// Gain summary CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Also write the text tables here instead of only printing them.
    #[arg(long)]
    text: Option<PathBuf>,
}

fn parse_nodes(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 2 => Ok(n),
        Ok(_) => Err("at least 2 nodes are needed".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_prob(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is not a probability in [0, 1]"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("verification failed")]
    Verify,
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Verify => 2,
            CliError::Io { .. } => 3,
        }
    }

    fn io(path: &Path, e: impl ToString) -> Self {
        CliError::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}

fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let generated = generate_dag(args.nodes, args.prob, args.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let file = File::create(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let mut out = BufWriter::new(file);
    write_dag(&generated.dag, &mut out).and_then(|_| out.flush()).map_err(|e| CliError::io(&args.out, e))?;
    println!(
        "wrote {} nodes, {} edges to {}",
        generated.dag.node_count(),
        generated.dag.edge_count(),
        args.out.display()
    );
    if let Some(path) = &args.checkpoint {
        let net = compile::<f64>(&generated.dag, CompileOptions::default(), args.seed)
            .map_err(|e| CliError::Usage(format!("cannot compile the generated DAG: {e}")))?;
        fs::write(path, Checkpoint::from_net(&net).to_json()).map_err(|e| CliError::io(path, e))?;
        println!("wrote checkpoint (H = {}) to {}", net.height(), path.display());
    }
    Ok(())
}

fn load_dag(path: &Path) -> Result<Dag, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_dag(BufReader::new(file)).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let tol = Tolerances { forward_rel: args.tolerance, grad_rel: args.grad_tolerance, ..Tolerances::default() };
    let seeds: Vec<u64> = (0..args.seeds).map(|s| args.seed + s).collect();
    let mut runs: Vec<(String, VerifyReport)> = Vec::new();

    if let Some(path) = &args.checkpoint {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut report = VerifyReport::default();
        report.push(verify_checkpoint(&text));
        runs.push((format!("checkpoint {}", path.display()), report));
    }
    if let Some(path) = &args.dag {
        let dag = load_dag(path)?;
        let reports = map_collect(seeds.clone(), |s| verify_dag(&dag, s, &tol));
        runs.extend(seeds.iter().zip(reports).map(|(s, r)| (format!("{} weight seed {s}", path.display()), r)));
    } else if let (Some(n), Some(p)) = (args.nodes, args.prob) {
        let results = map_collect(seeds.clone(), |s| {
            generate_dag(n, p, s).map(|g| verify_dag(&g.dag, s, &tol)).map_err(|e| e.to_string())
        });
        for (s, result) in seeds.iter().zip(results) {
            let report = result.map_err(|e| CliError::Usage(format!("seed {s}: {e}")))?;
            runs.push((format!("n={n} p={p} seed {s}"), report));
        }
    } else if args.checkpoint.is_none() {
        return Err(CliError::Usage("give --dag, --nodes with --prob, or --checkpoint".into()));
    }

    let mut ok = true;
    for (label, report) in &runs {
        println!("== {label}");
        println!("{report}");
        ok &= report.all_passed();
    }
    if ok {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::Verify)
    }
}

fn bench_error(e: BenchError, out: &Path) -> CliError {
    match e {
        BenchError::Io(e) => CliError::io(out, e),
        BenchError::Csv(e) => CliError::io(out, e),
        other => CliError::Usage(other.to_string()),
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
    let mut config =
        BenchConfig::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", args.config.display())))?;
    if let Some(v) = args.num_batches {
        config.num_batches = v;
    }
    if let Some(v) = args.seeds_per_cell {
        config.seeds_per_cell = v;
    }
    if let Some(v) = args.warmup_passes {
        config.warmup_passes = v;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut store = CsvStore::open(&args.out).map_err(|e| bench_error(e, &args.out))?;
    let total = config.record_count();
    let mut done = store.len();
    if done > 0 {
        println!("resuming: {done} of {total} records already in {}", args.out.display());
    }
    let produced = bench::run_grid(&config, &mut store, |r| {
        done += 1;
        println!(
            "[{done}/{total}] {} n={} p={} seed={} batch={} H={} {:.4}s",
            r.method, r.n, r.p, r.seed, r.batch_size, r.height, r.elapsed_seconds
        );
    })
    .map_err(|e| bench_error(e, &args.out))?;
    println!("{} new records in {}", produced.len(), args.out.display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let records = bench::read_records(&args.records).map_err(|e| match e {
        BenchError::Io(e) => CliError::io(&args.records, e),
        BenchError::Csv(e) if e.is_io_error() => CliError::io(&args.records, e),
        other => CliError::Usage(format!("{}: {other}", args.records.display())),
    })?;
    let summary = bench::summarize(&records);
    let csv = bench::gain_rows_to_csv(&summary.gains).map_err(|e| CliError::io(&args.out, e))?;
    fs::write(&args.out, csv).map_err(|e| CliError::io(&args.out, e))?;
    let text = bench::render_report(&summary);
    print!("{text}");
    if let Some(path) = &args.text {
        fs::write(path, &text).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
