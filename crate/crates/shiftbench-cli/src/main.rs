//! Command-line front end for the dataset-shift benchmark suite.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use shiftbench::bench::{
    run_benchmark, write_output, BenchConfig, MethodSpec, Protocol,
};
use shiftbench::data::{
    gen_synthetic_corpus, parse_records, write_records, yearly_stats, SyntheticCorpusSpec,
};
use shiftbench::{Result, ShiftError};

#[derive(Parser)]
#[command(
    name = "shiftbench",
    version,
    about = "Dataset-shift benchmarks: importance-weighted learning under \
             magnitude-controlled shift"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark protocol and emit its CSV table plus sidecar.
    Bench {
        #[command(subcommand)]
        protocol: BenchCmd,
    },
    /// Summarize a records file year by year (instances, items, likes).
    Stats {
        /// Records file (newline-delimited JSON).
        #[arg(long)]
        records: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Treat soft invariant violations as errors.
        #[arg(long)]
        strict: bool,
    },
    /// Generate a synthetic drifting catalog on disk.
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Weighted linear regression under magnitude-controlled target shift.
    Regression(RegressionArgs),
    /// Weighted item-category classification across year pairs.
    Category(CategoryArgs),
    /// Importance-weighted set matching trained on the earliest year.
    Matching(MatchingArgs),
    /// Year-membership discrimination accuracy versus year gap.
    Yeardisc(YeardiscArgs),
}

/// Flags shared by every bench subcommand. Values given here override the
/// config file, which overrides built-in defaults.
#[derive(Args)]
struct CommonBench {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV output path (sidecar metadata lands at <output>.meta.json).
    /// Without it the CSV goes to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Comma-separated seed list, e.g. 0,1,2,3,4.
    #[arg(long)]
    seeds: Option<String>,
    /// Base seed; with --n-seeds expands to base..base+n. Ignored when
    /// --seeds is given.
    #[arg(long)]
    random_seed: Option<u64>,
    /// Number of seeds to expand from --random-seed.
    #[arg(long)]
    n_seeds: Option<usize>,
    /// Comma-separated method list, e.g. erm,iwerm,riwerm(0.5).
    #[arg(long)]
    methods: Option<String>,
    /// Run cells one by one instead of in parallel.
    #[arg(long)]
    serial: bool,
    /// Records file; switches the data source from synthetic to catalog.
    #[arg(long)]
    records: Option<String>,
    /// Binary feature matrix accompanying --records.
    #[arg(long)]
    features_bin: Option<String>,
    /// Sidecar id index accompanying --features-bin.
    #[arg(long)]
    features_index: Option<String>,
}

#[derive(Args)]
struct RegressionArgs {
    #[command(flatten)]
    common: CommonBench,
    /// Disable the shift grid (collapses to the single W = 0 cell).
    #[arg(long)]
    target_shift: Option<bool>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    train_mu: Option<f64>,
    #[arg(long)]
    train_sigma: Option<f64>,
    /// Single-cell override for the test target mean.
    #[arg(long)]
    test_mu: Option<f64>,
    #[arg(long)]
    test_sigma: Option<f64>,
    /// Comma-separated W buckets, e.g. 0,10,20,30,40,50.
    #[arg(long)]
    buckets: Option<String>,
    /// Weight source: true_ratio, gaussian_fit, or discriminator.
    #[arg(long)]
    weight_source: Option<String>,
}

#[derive(Args)]
struct CategoryArgs {
    #[command(flatten)]
    common: CommonBench,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    /// Weight source: gaussian_fit or discriminator.
    #[arg(long)]
    weight_source: Option<String>,
}

#[derive(Args)]
struct MatchingArgs {
    #[command(flatten)]
    common: CommonBench,
    /// Comma-separated candidate-set sizes, e.g. 4,8.
    #[arg(long)]
    k_values: Option<String>,
    /// Training year (default: earliest catalog year).
    #[arg(long)]
    train_year: Option<i64>,
}

#[derive(Args)]
struct YeardiscArgs {
    #[command(flatten)]
    common: CommonBench,
    /// Anchor year compared against every other year (default earliest).
    #[arg(long)]
    anchor_year: Option<i64>,
    #[arg(long)]
    fit_size: Option<usize>,
    #[arg(long)]
    eval_size: Option<usize>,
}

#[derive(Args)]
struct GenSyntheticArgs {
    /// Directory receiving records.jsonl, features.bin, features.index.json.
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long)]
    n_outfits: Option<usize>,
    /// Comma-separated years, e.g. 2011,2012,2013.
    #[arg(long)]
    years: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// Uniform per-dimension drift applied once per year step.
    #[arg(long)]
    drift: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_list<T: FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| ShiftError::Config(format!(
                "bad {what} entry `{s}` in `{text}`"
            )))
        })
        .collect()
}

fn parse_methods(text: &str) -> Result<Vec<MethodSpec>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(MethodSpec::from_str)
        .collect()
}

fn parse_weight_source(text: &str) -> Result<shiftbench::weights::RatioMethod> {
    use shiftbench::weights::RatioMethod;
    match text {
        "true_ratio" => Ok(RatioMethod::TrueRatio),
        "gaussian_fit" => Ok(RatioMethod::GaussianFit),
        "discriminator" => Ok(RatioMethod::Discriminator),
        other => Err(ShiftError::Config(format!(
            "unknown weight source `{other}` (expected true_ratio, gaussian_fit, \
             or discriminator)"
        ))),
    }
}

fn base_config(common: &CommonBench, protocol: Protocol) -> Result<BenchConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            BenchConfig::from_toml_str(&text)?
        }
        None => BenchConfig::default(),
    };
    cfg.protocol = protocol;
    if let Some(path) = &common.output {
        cfg.output = Some(path.to_string_lossy().into_owned());
    }
    if let Some(seeds) = &common.seeds {
        cfg.seeds = parse_list(seeds, "seed")?;
    } else if let Some(base) = common.random_seed {
        let n = common.n_seeds.unwrap_or(cfg.seeds.len().max(1));
        cfg.seeds = (0..n as u64).map(|i| base + i).collect();
    } else if let Some(n) = common.n_seeds {
        cfg.seeds = (0..n as u64).collect();
    }
    if let Some(methods) = &common.methods {
        cfg.methods = parse_methods(methods)?;
    }
    if common.serial {
        cfg.parallel = false;
    }
    if let Some(records) = &common.records {
        cfg.source.records = Some(records.clone());
    }
    if let Some(bin) = &common.features_bin {
        cfg.source.features_bin = Some(bin.clone());
    }
    if let Some(idx) = &common.features_index {
        cfg.source.features_index = Some(idx.clone());
    }
    Ok(cfg)
}

fn build_config(cmd: &BenchCmd) -> Result<BenchConfig> {
    match cmd {
        BenchCmd::Regression(a) => {
            let mut cfg = base_config(&a.common, Protocol::RegressionTargetShift)?;
            let p = &mut cfg.regression;
            if let Some(v) = a.target_shift {
                p.target_shift = v;
            }
            if let Some(v) = a.pool_size {
                p.pool_size = v;
            }
            if let Some(v) = a.train_size {
                p.train_size = v;
            }
            if let Some(v) = a.test_size {
                p.test_size = v;
            }
            if let Some(v) = a.train_mu {
                p.train_mu = v;
            }
            if let Some(v) = a.train_sigma {
                p.train_sigma = v;
            }
            if let Some(v) = a.test_mu {
                p.test_mu = Some(v);
            }
            if let Some(v) = a.test_sigma {
                p.test_sigma = v;
            }
            if let Some(buckets) = &a.buckets {
                p.buckets = parse_list(buckets, "bucket")?;
            }
            if let Some(src) = &a.weight_source {
                p.weight_source = parse_weight_source(src)?;
            }
            Ok(cfg)
        }
        BenchCmd::Category(a) => {
            let mut cfg = base_config(&a.common, Protocol::CategoryCovariateShift)?;
            if let Some(v) = a.train_size {
                cfg.category.train_size = v;
            }
            if let Some(v) = a.test_size {
                cfg.category.test_size = v;
            }
            if let Some(src) = &a.weight_source {
                cfg.category.weight_source = parse_weight_source(src)?;
            }
            Ok(cfg)
        }
        BenchCmd::Matching(a) => {
            let mut cfg = base_config(&a.common, Protocol::SetMatching)?;
            if let Some(ks) = &a.k_values {
                cfg.matching.k_values = parse_list(ks, "K")?;
            }
            if let Some(y) = a.train_year {
                cfg.matching.train_year = Some(y);
            }
            Ok(cfg)
        }
        BenchCmd::Yeardisc(a) => {
            let mut cfg = base_config(&a.common, Protocol::YearDiscrimination)?;
            if let Some(y) = a.anchor_year {
                cfg.yeardisc.anchor_year = Some(y);
            }
            if let Some(v) = a.fit_size {
                cfg.yeardisc.fit_size = v;
            }
            if let Some(v) = a.eval_size {
                cfg.yeardisc.eval_size = v;
            }
            Ok(cfg)
        }
    }
}

fn run_bench(cmd: &BenchCmd) -> Result<()> {
    let cfg = build_config(cmd)?;
    let out = run_benchmark(&cfg)?;
    match &cfg.output {
        Some(_) => write_output(&cfg, &out)?,
        None => print!("{}", out.csv),
    }
    Ok(())
}

fn run_stats(records: &Path, output: Option<&Path>, strict: bool) -> Result<()> {
    let file = std::fs::File::open(records)?;
    let outcome = parse_records(std::io::BufReader::new(file), strict)?;
    for w in &outcome.warnings {
        eprintln!("warning: {}:{}: {}", records.display(), w.line, w.message);
    }
    let csv = yearly_stats(&outcome.records)?.to_csv();
    match output {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_gen_synthetic(args: &GenSyntheticArgs) -> Result<()> {
    let mut spec = SyntheticCorpusSpec::default();
    if let Some(n) = args.n_outfits {
        spec.n_outfits = n;
    }
    if let Some(years) = &args.years {
        spec.years = parse_list(years, "year")?;
    }
    if let Some(d) = args.dim {
        spec.dim = d;
        spec.drift_per_step = vec![spec.drift_per_step.first().copied().unwrap_or(0.0); d];
    }
    if let Some(step) = args.drift {
        spec.drift_per_step = vec![step; spec.dim];
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (records, store) = gen_synthetic_corpus(&spec)?;
    std::fs::create_dir_all(&args.output_dir)?;
    let records_path = args.output_dir.join("records.jsonl");
    let file = std::fs::File::create(&records_path)?;
    write_records(&records, std::io::BufWriter::new(file))?;
    store.write_files(
        &args.output_dir.join("features.bin"),
        &args.output_dir.join("features.index.json"),
    )?;
    println!(
        "wrote {} records ({} items, dim {}) to {}",
        records.len(),
        store.len(),
        store.dim(),
        args.output_dir.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Bench { protocol } => run_bench(protocol),
        Command::Stats {
            records,
            output,
            strict,
        } => run_stats(records, output.as_deref(), *strict),
        Command::GenSynthetic(args) => run_gen_synthetic(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_default_env()
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_class())
        }
    }
}
