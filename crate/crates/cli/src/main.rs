use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use rmfs::harness::{self, Grid, InstanceSource, SweepParam};
use rmfs::server::{self, Endpoint, Pinned};
use rmfs_core::datagen::{Dataset, Scale, ScenarioConfig};
use rmfs_core::env::EnvConfig;
use rmfs_core::obs::PruneConfig;
use rmfs_core::sim::{log_to_text, replay, LogHeader, LOG_FORMAT, LOG_VERSION};
use rmfs_core::{gen_instance, run_episode, AllocatorKind, EpisodeOutcome, SchedulerKind, SimConfig};

#[derive(Parser)]
#[command(name = "rmfs", version, about = "Mobile fulfillment simulator and environment server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance file.
    Gen {
        #[command(flatten)]
        source: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run one episode and print its metrics.
    Run(RunArgs),
    /// Run a grid of allocators × schedulers × seeds, optionally sweeping K or p.
    #[command(alias = "grid")]
    Sweep(SweepArgs),
    /// Re-execute an event log and check it line by line.
    Replay {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        log: PathBuf,
    },
    /// Serve the environment protocol.
    Serve {
        #[arg(long, env = "RMFS_ENDPOINT", default_value = "127.0.0.1:7878")]
        endpoint: Endpoint,
    },
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// synth, real, scaled or micro.
    #[arg(long, default_value = "synth")]
    scenario: String,
    #[arg(long, default_value = "small")]
    scale: Scale,
    /// Override the preset's order count.
    #[arg(long)]
    orders: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// Instance file; generated from the scenario when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    source: ScenarioArgs,
    #[arg(long, default_value = "soft")]
    allocator: AllocatorKind,
    /// A heuristic name, or `remote` to let a protocol client decide.
    #[arg(long, default_value = "bias")]
    scheduler: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    /// Write the event log here.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Listening address for `--scheduler remote`.
    #[arg(long, env = "RMFS_ENDPOINT", default_value = "127.0.0.1:7878")]
    endpoint: String,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    source: ScenarioArgs,
    #[arg(long, value_delimiter = ',', default_values_t = AllocatorKind::ALL.to_vec())]
    allocators: Vec<AllocatorKind>,
    #[arg(long, value_delimiter = ',', default_values_t = SchedulerKind::ALL.to_vec())]
    schedulers: Vec<SchedulerKind>,
    /// Number of seeds, starting at `--first-seed`.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    #[arg(long, requires = "values")]
    param: Option<SweepParam>,
    #[arg(long, value_delimiter = ',', requires = "param")]
    values: Vec<f64>,
    /// Results CSV; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RMFS_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(dataset: &Option<PathBuf>, source: &ScenarioArgs, seed: u64) -> anyhow::Result<Dataset> {
    match dataset {
        Some(p) => Dataset::load(p).with_context(|| format!("loading {}", p.display())),
        None => instance_source(None, source).load(seed),
    }
}

fn instance_source(dataset: Option<&PathBuf>, s: &ScenarioArgs) -> InstanceSource {
    match dataset {
        Some(p) => InstanceSource::File(p.clone()),
        None => InstanceSource::Scenario {
            scenario: s.scenario.clone(),
            scale: s.scale,
            orders: s.orders,
        },
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Gen { source, seed, out } => {
            let mut cfg = ScenarioConfig::preset(&source.scenario, source.scale, seed)
                .with_context(|| format!("unknown scenario `{}`", source.scenario))?;
            if let Some(n) = source.orders {
                cfg.num_orders = n;
            }
            let ds = gen_instance(&cfg)?;
            ds.save(&out)?;
            println!("wrote {} ({} orders) to {}", ds.name, ds.orders.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => run_one(args),
        Command::Sweep(args) => {
            let grid = Grid {
                source: instance_source(args.dataset.as_ref(), &args.source),
                allocators: args.allocators,
                schedulers: args.schedulers,
                seeds: (args.first_seed..args.first_seed + args.seeds).collect(),
                sweep: args.param.map(|p| (p, args.values)),
                base: SimConfig::default(),
            };
            let rows = grid.run()?;
            match &args.out {
                Some(p) => harness::write_csv(&rows, BufWriter::new(File::create(p)?))?,
                None => harness::write_csv(&rows, io::stdout().lock())?,
            }
            harness::print_summary(&harness::summarize(&rows), io::stderr().lock())?;
            let failed = rows.iter().filter(|r| r.failed()).count();
            if failed > 0 {
                eprintln!("{failed} episode(s) failed");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { dataset, log } => {
            let ds = Dataset::load(&dataset)?;
            let text = std::fs::read_to_string(&log)?;
            match replay(&ds, &text) {
                Ok(m) => {
                    println!("replay ok: makespan {} s, {} orders completed", m.makespan, m.completed);
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    eprintln!("replay failed: {e}");
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        Command::Serve { endpoint } => {
            server::serve(&endpoint)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_one(args: RunArgs) -> anyhow::Result<ExitCode> {
    let ds = load(&args.dataset, &args.source, args.seed)?;
    let mut cfg = SimConfig::with_allocator(args.allocator, args.seed);
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(p) = args.p {
        cfg.shaping.p = p;
    }
    let start = Instant::now();
    let outcome = if args.scheduler == "remote" {
        let listener = TcpListener::bind(args.endpoint.trim_start_matches("tcp://"))?;
        eprintln!("waiting for a client on {}", listener.local_addr()?);
        let pinned = Pinned {
            dataset: ds.clone(),
            config: EnvConfig {
                sim: cfg.clone(),
                prune: Some(PruneConfig::default()),
            },
        };
        let finished = server::serve_pinned_once(&listener, pinned)?;
        let Some(f) = finished.into_iter().last() else {
            bail!("the client disconnected before requesting a result");
        };
        Ok(EpisodeOutcome {
            metrics: f.metrics,
            log: f.log,
            shaped_return: 0.0,
            initial_potential: 0.0,
            final_potential: 0.0,
            diagnostics: Vec::new(),
        })
    } else {
        let kind: SchedulerKind = args.scheduler.parse().map_err(anyhow::Error::msg)?;
        run_episode(&ds, &cfg, kind)
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let row = harness::row(&ds, &cfg, &args.scheduler, outcome.as_ref().map_err(|e| e.to_string()), wall_ms);
    let mut out = io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(&row)?)?;
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            eprintln!("episode failed: {e}");
            return Ok(ExitCode::FAILURE);
        }
    };
    if let Some(path) = &args.log {
        let header = LogHeader {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            dataset: ds.name.clone(),
            scheduler: args.scheduler.clone(),
            config: cfg,
        };
        std::fs::write(path, log_to_text(&header, &outcome))?;
    }
    Ok(ExitCode::SUCCESS)
}
