//! `volprompt`: batch runs, cache administration and the HTTP server.
//!
//! Exit codes: 0 success, 2 bad input, 3 predictor failure, 4 I/O failure.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use volprompt::batch::{run_batch, BatchSpec};
use volprompt::engine::{Engine, EngineConfig};
use volprompt::native::GrowParams;
use volprompt::orchestrator::Mode;
use volprompt::predictor::{EmbeddingCache, DEFAULT_BUDGET};
use volprompt::volume::WindowLevel;
use volprompt::Error;

#[derive(Parser)]
#[command(name = "volprompt", version, about = "Prompt-driven volumetric annotation")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Directory for persisted sessions and uploaded volumes
    #[arg(long, env = "VOLPROMPT_DATA_ROOT", global = true)]
    data_root: Option<PathBuf>,
    /// Directory for the embedding cache
    #[arg(long, env = "VOLPROMPT_CACHE_ROOT", global = true)]
    cache_root: Option<PathBuf>,
    /// Embedding cache budget in bytes
    #[arg(long, env = "VOLPROMPT_CACHE_BUDGET", default_value_t = DEFAULT_BUDGET, global = true)]
    cache_budget: u64,
    /// Command line that starts a model bridge
    #[arg(long, env = "VOLPROMPT_BRIDGE_COMMAND", global = true)]
    bridge_command: Option<String>,
    /// Native predictor intensity tolerance, as a fraction of the slice range
    #[arg(
        long,
        env = "VOLPROMPT_NATIVE_TOLERANCE_FRACTION",
        default_value_t = 0.1,
        global = true
    )]
    tolerance_fraction: f64,
    /// Native predictor region cap, as a fraction of the slice area
    #[arg(
        long,
        env = "VOLPROMPT_NATIVE_MAX_REGION_FRACTION",
        default_value_t = 1.0,
        global = true
    )]
    max_region_fraction: f64,
    /// Propagation worker threads
    #[arg(long, env = "VOLPROMPT_JOB_WORKERS", default_value_t = 2, global = true)]
    workers: usize,
}

impl ConfigArgs {
    fn engine_config(&self, persist: bool) -> EngineConfig {
        EngineConfig {
            data_root: if persist { self.data_root.clone() } else { None },
            cache_root: self.cache_root.clone(),
            cache_budget: self.cache_budget,
            grow: GrowParams {
                tolerance_fraction: self.tolerance_fraction,
                max_region_fraction: self.max_region_fraction,
            },
            bridge_command: self.bridge_command.clone(),
            job_workers: self.workers.max(1),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API
    Serve {
        #[arg(long, env = "VOLPROMPT_HOST", default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, env = "VOLPROMPT_PORT", default_value_t = 8080)]
        port: u16,
        /// Largest accepted volume upload, in bytes
        #[arg(long, env = "VOLPROMPT_UPLOAD_LIMIT", default_value_t = volprompt_server::DEFAULT_UPLOAD_LIMIT)]
        upload_limit: usize,
    },
    /// Predict prompted slices and propagate through one volume
    Run(RunArgs),
    /// Inspect or prune the embedding cache
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
    /// List available predictors
    Predictors,
}

#[derive(Args)]
struct RunArgs {
    /// Input volume (.nii, .nii.gz or .nrrd)
    #[arg(long)]
    volume: PathBuf,
    /// Prompt file (JSON)
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long, default_value = "native")]
    predictor: String,
    /// all, left or right
    #[arg(long, default_value = "all")]
    mode: Mode,
    /// Source slice for left/right runs
    #[arg(long)]
    from_slice: Option<usize>,
    /// Output labelmap; the extension picks NRRD or NIfTI
    #[arg(long, short)]
    output: PathBuf,
    /// Reference labelmap to score against
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Where to write the JSON report
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, requires = "level")]
    window: Option<f64>,
    #[arg(long, requires = "window")]
    level: Option<f64>,
}

#[derive(Subcommand)]
enum CacheAction {
    Stats,
    /// Evict least recently used entries down to the budget
    Gc {
        /// Override the configured budget for this pass
        #[arg(long)]
        budget: Option<u64>,
    },
    Clear,
}

/// Exit status for an engine error.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ComputeFailed(_)
        | Error::BridgeUnavailable(_)
        | Error::Protocol(_)
        | Error::InvalidDescriptor(_)
        | Error::NoPromptedSlices
        | Error::SequenceBusy
        | Error::SessionBusy(_) => 3,
        Error::Io(_) | Error::CacheIo(_) => 4,
        Error::MalformedHeader(_)
        | Error::UnsupportedDatatype(_)
        | Error::TruncatedData { .. }
        | Error::IndexOutOfRange { .. }
        | Error::NonPositiveWindow(_)
        | Error::DimsMismatch(_)
        | Error::OutOfBounds { .. }
        | Error::InvalidPrompt(_)
        | Error::RunSumMismatch { .. }
        | Error::NothingToUndo
        | Error::NothingToRedo
        | Error::UnknownSession(_)
        | Error::UnknownVolume(_)
        | Error::InvalidLabel(_)
        | Error::DuplicatePredictorId(_)
        | Error::UnknownPredictor(_)
        | Error::UnsupportedPrompt(_)
        | Error::SequenceUnsupported(_)
        | Error::NoPositiveSeeds
        | Error::NoConditionalSlices
        | Error::FromSliceNotConditional(_)
        | Error::UnknownJob(_)
        | Error::InvalidRequest(_) => 2,
    }
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("reports serialise"));
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Serve {
            host,
            port,
            upload_limit,
        } => {
            let engine = Arc::new(Engine::open(cli.config.engine_config(true))?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(volprompt_server::serve(
                engine,
                SocketAddr::new(host, port),
                upload_limit,
            ))?;
            Ok(())
        }
        Command::Run(args) => {
            for p in [&args.volume, &args.prompts].into_iter().chain(&args.reference) {
                if !p.is_file() {
                    return Err(Error::InvalidRequest(format!("{} is not a readable file", p.display())));
                }
            }
            let engine = Engine::open(cli.config.engine_config(false))?;
            let spec = BatchSpec {
                volume: args.volume,
                prompts: args.prompts,
                predictor_id: args.predictor,
                mode: args.mode,
                from_slice: args.from_slice,
                window: args
                    .window
                    .zip(args.level)
                    .map(|(window, level)| WindowLevel { window, level }),
                output: args.output,
                reference: args.reference,
                report: args.report,
            };
            let report = run_batch(&engine, &spec)?;
            let written = report.slices.iter().filter(|s| s.area > 0).count();
            log::info!("{} of {} slices annotated", written, report.slices.len());
            if let Some(d) = report.volume_dice {
                println!("volume dice {d:.4}");
            }
            for w in &report.warnings {
                log::warn!("{w}");
            }
            Ok(())
        }
        Command::Cache { action } => {
            let root = cli
                .config
                .cache_root
                .ok_or_else(|| Error::InvalidRequest("no cache root configured (--cache-root)".into()))?;
            let cache = EmbeddingCache::open(root, cli.config.cache_budget)?;
            match action {
                CacheAction::Stats => print_json(&cache.stats()),
                CacheAction::Gc { budget } => print_json(&cache.gc(budget)?),
                CacheAction::Clear => print_json(&serde_json::json!({"removed": cache.clear()?})),
            }
            Ok(())
        }
        Command::Predictors => {
            let engine = Engine::open(cli.config.engine_config(false))?;
            print_json(&engine.predictors());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
