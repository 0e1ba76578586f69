//! Operator entry points. Offline subcommands print pretty JSON on stdout
//! and use the exit codes in [`exit`].

use std::ffi::OsString;
use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cimgw_core::cim::{diff_libraries, load_library, CimLibrary};
use cimgw_core::schema::{plan_schema_with, PlanOptions, StorageCatalog};
use cimgw_core::topology::{parse_topology, validate, TopologyDocument};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::clock::SystemClock;
use crate::config::GatewayConfig;
use crate::runtime::{bind, build_gateway, RunningGateway, ServeOptions};
use crate::server::ServerHandle;
use crate::sim::{self, Scenario, SimNode};
use crate::sync::SyncExit;

pub mod exit {
    pub const SUCCESS: i32 = 0;
    /// The report or diff is non-empty.
    pub const FINDINGS: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const RUNTIME: i32 = 3;
}

#[derive(Debug, Parser)]
#[command(
    name = "cimgw",
    version,
    about = "CIM gateway between a local SCADA node and a cloud database"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the gateway.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the local SCADA simulator.
    Sim {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        listen: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a topology document against a class library.
    Validate {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        topology: PathBuf,
    },
    /// Print the schema changes a topology needs.
    PlanSchema {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        topology: PathBuf,
        /// Current catalog as JSON; an empty store when absent.
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        allow_drops: bool,
    },
    /// Compare two class libraries.
    DiffLib {
        #[arg(long)]
        old: PathBuf,
        #[arg(long)]
        new: PathBuf,
    },
}

struct Failure(String);

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn library(path: &Path) -> Result<CimLibrary, Failure> {
    load_library(&read(path)?).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn topology(path: &Path) -> Result<TopologyDocument, Failure> {
    parse_topology(&read(path)?).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn report(out: &mut dyn Write, value: &impl Serialize, empty: bool) -> Result<i32, Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| Failure(e.to_string()))?;
    Ok(if empty { exit::SUCCESS } else { exit::FINDINGS })
}

pub fn run_command<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    exit::SUCCESS
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    exit::USAGE
                }
            };
        }
    };
    match run(cli.command, out) {
        Ok(code) => code,
        Err(Failure(message)) => {
            let _ = writeln!(err, "error: {message}");
            exit::RUNTIME
        }
    }
}

fn run(command: Command, out: &mut dyn Write) -> Result<i32, Failure> {
    match command {
        Command::Validate {
            library: lib,
            topology: topo,
        } => {
            let r = validate(&topology(&topo)?, &library(&lib)?);
            report(out, &r, r.is_empty())
        }
        Command::PlanSchema {
            library: lib,
            topology: topo,
            catalog,
            allow_drops,
        } => {
            let catalog = match catalog {
                Some(path) => serde_json::from_slice::<StorageCatalog>(&read(&path)?)
                    .map_err(|e| Failure(format!("{}: {e}", path.display())))?,
                None => StorageCatalog::default(),
            };
            let diff = plan_schema_with(
                &topology(&topo)?,
                &library(&lib)?,
                &catalog,
                PlanOptions { allow_drops },
            )
            .map_err(|e| Failure(e.to_string()))?;
            report(out, &diff, diff.is_empty())
        }
        Command::DiffLib { old, new } => {
            let d = diff_libraries(&library(&old)?, &library(&new)?);
            report(out, &d, d.is_empty())
        }
        Command::Serve { config } => serve(&config, out),
        Command::Sim {
            scenario,
            listen,
            seed,
        } => simulate(&scenario, &listen, seed, out),
    }
}

fn init_logging() {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .try_init();
}

fn tokio_runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure(e.to_string()))
}

fn serve(config: &Path, out: &mut dyn Write) -> Result<i32, Failure> {
    init_logging();
    let cfg = GatewayConfig::load(config).map_err(|e| Failure(e.to_string()))?;
    let opts = ServeOptions::from_config(&cfg).map_err(|e| Failure(e.to_string()))?;
    let gw = Arc::new(build_gateway(&cfg).map_err(|e| Failure(e.to_string()))?);
    tokio_runtime()?.block_on(async {
        let listener = bind(&cfg.listen).await.map_err(|e| Failure(e.to_string()))?;
        let mut running = RunningGateway::start(gw, listener, opts);
        let _ = writeln!(out, "gateway listening on {}", running.url());
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {
                running.stop().await;
                Ok(exit::SUCCESS)
            }
            exit = running.sync_stopped() => match exit {
                SyncExit::FatalStoreFailure(cause) => Err(Failure(format!("sync loop stopped: {cause}"))),
                SyncExit::Shutdown => Ok(exit::SUCCESS),
            },
        }
    })
}

fn simulate(
    scenario: &Path,
    listen: &str,
    seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    init_logging();
    let mut sc = Scenario::load(scenario).map_err(|e| Failure(e.to_string()))?;
    if let Some(seed) = seed {
        sc = sc.with_seed(seed);
    }
    let node = Arc::new(SimNode::new(sc, Arc::new(SystemClock)));
    tokio_runtime()?.block_on(async {
        let server = ServerHandle::bind(sim::server::router(node), listen)
            .await
            .map_err(|e| Failure(format!("listen on {listen}: {e}")))?;
        let _ = writeln!(out, "simulator listening on {}", server.url());
        let _ = tokio::signal::ctrl_c().await;
        server.stop().await;
        Ok(exit::SUCCESS)
    })
}
