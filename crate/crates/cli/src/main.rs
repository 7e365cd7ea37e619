use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use prunelens::config::SweepConfig;
use prunelens::evals::TaskGroup;
use prunelens::{pool, runner};
use prunelens_core::attribution::AttributionMethod;

#[derive(Parser)]
#[command(
    name = "prunelens",
    version,
    about = "Train, prune, and evaluate small vision models: saliency quality, \
             object discovery, and distortion robustness across a sparsity sweep."
)]
struct Cli {
    /// TOML config file; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Reuse existing artifacts (datasets, pool entries, evaluation cells)
    /// whose recorded config hash matches the current config.
    #[arg(long, global = true)]
    resume: bool,

    /// Accepted for interface stability; every run is already fully
    /// deterministic given the config and seed.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Worker threads for parallel evaluation (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and persist the train and test splits.
    GenData,
    /// Train the dense model (pool entry 0).
    Train,
    /// Build the pruning pool: iteratively prune and retrain to the target
    /// sparsity, persisting every entry.
    PruneSweep,
    /// Compute and persist saliency maps for one pool entry.
    Attribute {
        /// Pool entry index.
        #[arg(long, default_value_t = 0)]
        entry: usize,
        /// Comma-separated method names; defaults to the configured set.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        /// Also render a PNG heatmap per image.
        #[arg(long)]
        png: bool,
    },
    /// Score saliency quality (mass and rank metrics) for every pool entry.
    EvalInterp,
    /// Evaluate object discovery (IoU and localization rate) for every entry.
    EvalOd {
        /// Also dump per-image boxes as JSON lines.
        #[arg(long)]
        boxes: bool,
    },
    /// Evaluate accuracy under every configured distortion for every entry.
    EvalHa,
    /// Assemble report.csv, report.json, sweet_spots.json, and plots,
    /// computing any missing evaluation cells.
    Report {
        /// Recompute a 1% sample of cached cells and fail on any mismatch.
        #[arg(long)]
        verify_cache: bool,
    },
    /// End-to-end: data, pool, all evaluations, report, and plots.
    Sweep {
        /// Recompute a 1% sample of cached cells and fail on any mismatch.
        #[arg(long)]
        verify_cache: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    let cfg = load_config(cli.config.as_deref())?;

    match cli.command {
        Command::GenData => {
            let (train, test) = runner::ensure_data(&cfg, cli.resume)?;
            println!(
                "data: {} train / {} test samples in {}",
                train.len(),
                test.len(),
                cfg.data_dir().display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train => {
            let (train, _) = runner::ensure_data(&cfg, true)?;
            let out = pool::train_dense(&cfg, &train, cli.resume)?;
            let entry = out.manifest.entries.first().context("empty pool")?;
            println!(
                "dense model at {} (trained {} round(s))",
                pool::entry_model_path(&cfg.pool_dir(), entry.n).display(),
                out.trained_rounds
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::PruneSweep => {
            let (train, _) = runner::ensure_data(&cfg, true)?;
            let out = pool::build_or_resume_pool(&cfg, &train, cli.resume)?;
            let last = out.manifest.entries.last().context("empty pool")?;
            println!(
                "pool: {} entries, final sparsity {:.4} (trained {} round(s)) in {}",
                out.manifest.entries.len(),
                last.sparsity_prunable,
                out.trained_rounds,
                cfg.pool_dir().display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Attribute {
            entry,
            methods,
            png,
        } => {
            let methods = parse_methods(&cfg, &methods)?;
            let written = runner::run_attribute(&cfg, entry, &methods, png)?;
            for path in &written {
                println!("saliency: {}", path.display());
            }
            if written.is_empty() {
                eprintln!("no requested method applies to this model family");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::EvalInterp => {
            let out = runner::run_groups(&cfg, &[TaskGroup::Interp], cli.resume)?;
            finish(out)
        }
        Command::EvalOd { boxes } => {
            let out = runner::run_groups(&cfg, &[TaskGroup::ObjectDiscovery], cli.resume)?;
            if boxes && out.complete() {
                for path in runner::dump_boxes(&cfg)? {
                    println!("boxes: {}", path.display());
                }
            }
            finish(out)
        }
        Command::EvalHa => {
            let out = runner::run_groups(&cfg, &[TaskGroup::Alignment], cli.resume)?;
            finish(out)
        }
        Command::Report { verify_cache } => {
            let out = runner::run_report(&cfg, verify_cache)?;
            finish(out)
        }
        Command::Sweep { verify_cache } => {
            let out = runner::run_sweep(&cfg, cli.resume, verify_cache)?;
            println!(
                "pool: {} entries (trained {} round(s)); rows: {} ({} cached cells)",
                out.manifest.entries.len(),
                out.trained_rounds,
                out.rows.len(),
                out.cache_hits
            );
            finish(out)
        }
    }
}

fn load_config(path: Option<&std::path::Path>) -> Result<SweepConfig> {
    let cfg: SweepConfig = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => SweepConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_methods(cfg: &SweepConfig, names: &[String]) -> Result<Vec<AttributionMethod>> {
    if names.is_empty() {
        return Ok(cfg.attribution.methods.clone());
    }
    names
        .iter()
        .map(|n| AttributionMethod::from_name(n).map_err(|e| anyhow::anyhow!("{e}")))
        .collect()
}

/// Prints report paths and failures; maps completeness to the exit code
/// (0 = every cell evaluated, 2 = some cells failed and were skipped).
fn finish(out: runner::SweepOutcome) -> Result<ExitCode> {
    for path in &out.report_paths {
        println!("wrote: {}", path.display());
    }
    if out.cells_verified > 0 {
        println!("cache check: {} cell(s) reverified", out.cells_verified);
    }
    for f in &out.failures {
        eprintln!("failed: {f}");
    }
    if out.complete() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "partial: {} cell(s) failed; completed cells are cached and a \
             rerun with --resume will retry only the failures",
            out.failures.len()
        );
        Ok(ExitCode::from(2))
    }
}
