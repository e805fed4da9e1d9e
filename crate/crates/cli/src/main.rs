//! `manitopo`: sampling, Čech complexes, Betti numbers, critical points and
//! regime experiments from the command line.
//!
//! Exit codes: 0 on success, 1 for runtime failures, 2 for argument errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use manitopo::cech::build_cech;
use manitopo::critical_points::{self, counts_from, enumerate_critical_points};
use manitopo::experiments::{
    self, aggregate, coverage_probe, hash_text, parse_density, parse_manifold, recovery_experiment, run_regime,
    summary_csv, write_records_jsonl, Metadata, Normalization, Process, Regime, RegimeConfig, Statistic,
};
use manitopo::homology::betti_numbers;
use manitopo::limit_theory::{self, LimitConstants};
use manitopo::sampling::{sample, Manifold, PointCloud};
use manitopo::Metric;

#[derive(Parser, Debug)]
#[command(name = "manitopo", version, about = "Random point clouds on manifolds: Čech homology and distance-function critical points")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (or directory for `regime` and `recover`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replicate pools.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Regime config file (`regime`, `recover`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Per-stage timing on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a point cloud and write it as JSON.
    Sample {
        /// e.g. `flat_torus(m=2, side=1)`, `sphere2(radius=1)`.
        #[arg(long)]
        manifold: String,
        /// `uniform` or `cosine(amplitude=..)`.
        #[arg(long, default_value = "uniform")]
        density: String,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "binomial")]
        process: ProcessArg,
    },
    /// Build the Čech complex and print face counts.
    Cech {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        max_dim: usize,
    },
    /// Betti numbers of the Čech complex over Z/2.
    Betti {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        max_k: usize,
    },
    /// Critical points of the distance function with value at most r.
    Crit {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        r: f64,
        /// Defaults to the ambient dimension.
        #[arg(long)]
        max_index: Option<usize>,
    },
    /// Euler characteristic from the Čech complex and from critical points.
    Euler {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        r: f64,
    },
    /// Limit constants: closed forms (m = 3) or Monte Carlo.
    Limits {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        k: Option<usize>,
        /// A nonnegative number or `inf`.
        #[arg(long)]
        lambda: Option<String>,
        #[arg(long, value_enum, default_value = "gamma")]
        quantity: Quantity,
        /// Monte Carlo even where a closed form exists.
        #[arg(long)]
        numeric: bool,
        #[arg(long, default_value_t = 1_000_000)]
        n_mc: usize,
        /// CSV of γ_1..γ_3 and the Euler limit over a λ-grid (m = 3).
        #[arg(long)]
        curve: bool,
        /// Comma-separated λ values for `--curve`.
        #[arg(long, default_value = "0,0.25,0.5,0.75,1,1.5,2,3,4,5")]
        grid: String,
    },
    /// Run a regime sweep from --config; writes records and summaries.
    Regime,
    /// Whether a cloud covers its manifold at radius r (conservative).
    Coverage {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        r: f64,
        /// Net spacing; defaults to r/8.
        #[arg(long)]
        eps_net: Option<f64>,
    },
    /// Betti recovery under a coverage radius rule from --config.
    Recover,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProcessArg {
    Binomial,
    Poisson,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Quantity {
    Gamma,
    MuC,
    MuB,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

struct Timer {
    verbose: bool,
    start: Instant,
}

impl Timer {
    fn new(verbose: bool) -> Timer {
        Timer { verbose, start: Instant::now() }
    }

    fn stage(&mut self, name: &str) {
        if self.verbose {
            eprintln!("[{name}] {:.3}s", self.start.elapsed().as_secs_f64());
        }
        self.start = Instant::now();
    }
}

fn run(cli: &Cli) -> Outcome {
    let mut timer = Timer::new(cli.verbose);
    match &cli.command {
        Command::Sample { manifold, density, n, process } => {
            let manifold = parse_manifold(manifold).map_err(usage)?;
            let spec = parse_density(density).map_err(usage)?;
            let density = spec.build(&manifold).map_err(usage)?;
            let process = match process {
                ProcessArg::Binomial => Process::Binomial,
                ProcessArg::Poisson => Process::Poisson,
            };
            let seed = cli.seed.unwrap_or(0);
            let cloud = sample(&manifold, &density, process.mode(*n), seed).map_err(usage)?;
            timer.stage("sample");
            let meta = Metadata::new(command_hash(&cli.command, &[]), seed);
            let mut value = serde_json::to_value(&cloud).map_err(runtime)?;
            value["meta"] = serde_json::to_value(&meta).map_err(runtime)?;
            let text = serde_json::to_string(&value).map_err(runtime)? + "\n";
            emit(cli.out.as_deref(), &text)?;
            if cli.out.is_some() {
                println!("points={}", cloud.len());
            }
        }
        Command::Cech { cloud, eps, max_dim } => {
            let (cloud, bytes) = load_cloud(cloud)?;
            timer.stage("load");
            let complex = build_cech(&cloud, *eps, *max_dim).map_err(usage)?;
            timer.stage("cech");
            println!("faces={}", tuple(&complex.face_counts()));
            if let Some(path) = &cli.out {
                let meta = Metadata::new(command_hash(&cli.command, &bytes), cloud.seed);
                let mut buf = meta.json_line().into_bytes();
                buf.push(b'\n');
                complex.write_jsonl(&mut buf).map_err(runtime)?;
                write_file(path, &buf)?;
            }
        }
        Command::Betti { cloud, eps, max_k } => {
            let (cloud, bytes) = load_cloud(cloud)?;
            timer.stage("load");
            let complex = build_cech(&cloud, *eps, max_k + 1).map_err(usage)?;
            timer.stage("cech");
            let betti = betti_numbers(&complex, *max_k).map_err(runtime)?;
            timer.stage("homology");
            let line = format!("betti={}", tuple(&betti));
            println!("{line}");
            write_summary(cli, &bytes, cloud.seed, &line)?;
        }
        Command::Crit { cloud, r, max_index } => {
            let (cloud, bytes) = load_cloud(cloud)?;
            timer.stage("load");
            let max_index = max_index.unwrap_or(cloud.dim());
            let points = enumerate_critical_points(&cloud, *r, max_index).map_err(usage)?;
            timer.stage("critical points");
            let counts = counts_from(cloud.len(), *r, max_index, &points);
            println!("N={}", tuple(&counts.counts));
            if let Some(path) = &cli.out {
                let meta = Metadata::new(command_hash(&cli.command, &bytes), cloud.seed);
                let mut buf = meta.json_line().into_bytes();
                buf.push(b'\n');
                critical_points::write_jsonl(&points, &mut buf).map_err(runtime)?;
                write_file(path, &buf)?;
            }
        }
        Command::Euler { cloud, r } => {
            let (cloud, bytes) = load_cloud(cloud)?;
            timer.stage("load");
            let d = cloud.dim();
            // union of balls: no homology in degree >= d in R^d, up to d on T^d
            let top = match cloud.metric() {
                Metric::Periodic { .. } => d,
                Metric::Euclidean => d.saturating_sub(1),
            };
            let complex = build_cech(&cloud, *r, top + 1).map_err(usage)?;
            let betti = betti_numbers(&complex, top).map_err(runtime)?;
            let chi_cech: i64 = betti.iter().enumerate().map(|(k, &b)| if k % 2 == 0 { b as i64 } else { -(b as i64) }).sum();
            timer.stage("cech + homology");
            let points = enumerate_critical_points(&cloud, *r, d).map_err(usage)?;
            let chi_morse = counts_from(cloud.len(), *r, d, &points).euler();
            timer.stage("critical points");
            let line = format!("chi_cech={chi_cech} chi_morse={chi_morse}");
            println!("{line}");
            write_summary(cli, &bytes, cloud.seed, &line)?;
            if chi_cech != chi_morse {
                return Err(Failure::Runtime("Morse-Euler identity violated".into()));
            }
        }
        Command::Limits { m, k, lambda, quantity, numeric, n_mc, curve, grid } => {
            limits(cli, *m, *k, lambda.as_deref(), *quantity, *numeric, *n_mc, *curve, grid)?;
        }
        Command::Regime => {
            let config = load_config(cli)?;
            let records = run_regime(&config).map_err(usage)?;
            timer.stage("replicates");
            if cli.verbose {
                let total: f64 = records.iter().map(|r| r.wall_time).sum();
                eprintln!("[replicate time] total {total:.3}s over {} records", records.len());
            }
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir).map_err(runtime)?;
            let stem = config.output_stem("regime");
            let meta = config.metadata();
            let mut buf = Vec::new();
            write_records_jsonl(&meta, &records, &mut buf).map_err(runtime)?;
            write_file(&dir.join(format!("{stem}.jsonl")), &buf)?;
            let rows = summaries(&config, &records);
            write_file(&dir.join(format!("{stem}.csv")), summary_csv(&meta, &rows).as_bytes())?;
            timer.stage("write");
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            println!("records={} failed={failed} output={}", records.len(), dir.join(&stem).display());
            let violations = experiments::morse_euler_violations(&records);
            if !violations.is_empty() {
                return Err(Failure::Runtime(format!("Morse-Euler identity violated in {} records", violations.len())));
            }
        }
        Command::Coverage { cloud, r, eps_net } => {
            let (cloud, bytes) = load_cloud(cloud)?;
            if matches!(cloud.spec, Manifold::Ambient { .. }) {
                return Err(Failure::Usage("coverage needs a cloud sampled from a manifold".into()));
            }
            let eps_net = eps_net.unwrap_or(r / 8.0);
            if !(eps_net > 0.0 && eps_net < *r) {
                return Err(Failure::Usage(format!("need 0 < eps_net < r, got eps_net = {eps_net}, r = {r}")));
            }
            let covered = coverage_probe(&cloud, *r, eps_net);
            timer.stage("coverage");
            let line = format!("covered={covered}");
            println!("{line}");
            write_summary(cli, &bytes, cloud.seed, &line)?;
        }
        Command::Recover => {
            let config = load_config(cli)?;
            let report = recovery_experiment(&config).map_err(usage)?;
            timer.stage("replicates");
            let ok = report.rows.iter().filter(|r| r.success).count();
            println!("expected={} success={ok}/{} rate={}", tuple(&report.expected), report.rows.len(), report.success_rate);
            if let Some(dir) = &cli.out {
                fs::create_dir_all(dir).map_err(runtime)?;
                let meta = config.metadata();
                let mut buf = meta.json_line().into_bytes();
                buf.push(b'\n');
                for row in &report.rows {
                    buf.extend(serde_json::to_string(row).map_err(runtime)?.bytes());
                    buf.push(b'\n');
                }
                write_file(&dir.join(format!("{}.jsonl", config.output_stem("recover"))), &buf)?;
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn limits(
    cli: &Cli,
    m: usize,
    k: Option<usize>,
    lambda: Option<&str>,
    quantity: Quantity,
    numeric: bool,
    n_mc: usize,
    curve: bool,
    grid: &str,
) -> Outcome {
    let seed = cli.seed.unwrap_or(0);
    let meta = Metadata::new(command_hash(&cli.command, &[]), seed);
    if curve {
        if m != 3 {
            return Err(Failure::Usage("closed-form curves exist for m = 3 only".into()));
        }
        let grid = grid
            .split(',')
            .map(|t| parse_lambda(t.trim()))
            .collect::<Result<Vec<f64>, _>>()?;
        if grid.iter().any(|l| l.is_infinite()) {
            return Err(Failure::Usage("curve grid must be finite".into()));
        }
        let text = meta.csv_comment() + &limit_theory::gamma_curves_csv_m3(&grid);
        return emit(cli.out.as_deref(), &text);
    }
    let k = k.ok_or_else(|| Failure::Usage("--k is required unless --curve is given".into()))?;
    let constants: LimitConstants = match quantity {
        Quantity::Gamma => {
            let lambda = parse_lambda(lambda.ok_or_else(|| Failure::Usage("--lambda is required for gamma".into()))?)?;
            if m == 3 && !numeric {
                limit_theory::gamma_closed_constants_m3(k, lambda).map_err(usage)?
            } else {
                limit_theory::gamma_numeric(m, k, lambda, n_mc, seed).map_err(usage)?
            }
        }
        Quantity::MuC => limit_theory::mu_c_estimate(m, k, n_mc, seed).map_err(usage)?,
        Quantity::MuB => limit_theory::mu_b_estimate(m, k, n_mc, seed).map_err(usage)?,
    };
    if constants.standard_error > 0.0 {
        println!("{:.6} +- {:.6}", constants.value, constants.standard_error);
    } else {
        println!("{:.6}", constants.value);
    }
    if cli.out.is_some() {
        let text = format!("{}{}\n{}\n", meta.csv_comment(), LimitConstants::CSV_HEADER, constants.csv_row());
        emit(cli.out.as_deref(), &text)?;
    }
    Ok(())
}

fn parse_lambda(text: &str) -> Result<f64, Failure> {
    let value = match text {
        "inf" | "infinity" => f64::INFINITY,
        _ => text.parse::<f64>().map_err(|_| Failure::Usage(format!("cannot parse lambda from {text:?}")))?,
    };
    if value.is_nan() || value < 0.0 {
        return Err(Failure::Usage(format!("lambda must be nonnegative, got {text}")));
    }
    Ok(value)
}

/// Per-n summaries of every statistic the run produced.
fn summaries(config: &RegimeConfig, records: &[experiments::ExperimentRecord]) -> Vec<experiments::SummaryRow> {
    let m = config.manifold.intrinsic_dim();
    let max_index = config.max_index.min(config.manifold.ambient_dim());
    let mut norms: Vec<Normalization> = (0..=max_index).map(|k| Normalization::PerN(Statistic::Critical(k))).collect();
    if config.betti {
        norms.extend((0..=m).map(|k| Normalization::PerN(Statistic::Betti(k))));
    }
    norms.push(Normalization::PerN(Statistic::Euler));
    if config.regime() == Regime::Subcritical {
        norms.extend((1..=max_index).map(Normalization::SubcriticalCrit));
        if config.betti {
            norms.extend((1..m).map(Normalization::SubcriticalBetti));
        }
    }
    norms.into_iter().filter_map(|n| aggregate(records, n, m).ok()).flatten().collect()
}

fn load_config(cli: &Cli) -> Result<RegimeConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Usage("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut config = RegimeConfig::parse(&text).map_err(usage)?;
    if let Some(seed) = cli.seed {
        config.base_seed = seed;
    }
    config.validate().map_err(usage)?;
    Ok(config)
}

/// A cloud JSON file as written by `sample`, or a bare array of points in
/// Euclidean space.
fn load_cloud(path: &Path) -> Result<(PointCloud, Vec<u8>), Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let bad = |e: serde_json::Error| Failure::Usage(format!("{} is not a point cloud: {e}", path.display()));
    let value: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
    let cloud = if value.is_array() {
        let rows: Vec<Vec<f64>> = serde_json::from_value(value).map_err(bad)?;
        let dim = rows.first().map_or(0, |r| r.len());
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Failure::Usage(format!("{}: points must be nonempty rows of equal length", path.display())));
        }
        PointCloud::euclidean(&rows)
    } else {
        PointCloud::from_json(text).map_err(bad)?
    };
    Ok((cloud, bytes))
}

fn command_hash(command: &Command, input: &[u8]) -> String {
    let mut text = format!("{command:?}\n");
    text.push_str(&hash_text(&String::from_utf8_lossy(input)));
    hash_text(&text)
}

fn write_summary(cli: &Cli, input: &[u8], seed: u64, line: &str) -> Outcome {
    if let Some(path) = &cli.out {
        let meta = Metadata::new(command_hash(&cli.command, input), seed);
        write_file(path, format!("{}{line}\n", meta.csv_comment()).as_bytes())?;
    }
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(path) => write_file(path, text.as_bytes()),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(runtime),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn tuple(values: &[usize]) -> String {
    let parts: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    format!("({})", parts.join(","))
}
