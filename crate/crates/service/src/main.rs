use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use sbac::config::{LlmConfig, ServiceConfig};
use sbac::store::{FileStore, MemoryStore, Store};
use sbac::transport::{LiveTransport, RecordingTransport, ReplayTransport};
use sbac::{oracle, replay, Archive, Gateway, ReplayError, Service, Transport};

#[derive(Parser)]
#[command(name = "sbac", version, about = "Sketch-based access control authoring service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        serve: ServeArgs,
        /// Answer model calls from a fixture directory instead of the live endpoint.
        #[arg(long, value_name = "DIR")]
        replay: Option<PathBuf>,
    },
    /// Re-run an exported session against its recorded calls.
    Replay { archive: PathBuf },
    /// Run a deterministic oracle on a JSON input file.
    Oracle {
        #[command(subcommand)]
        which: OracleCommand,
    },
    /// Record or check model-call fixtures.
    Fixtures {
        #[command(subcommand)]
        action: FixturesCommand,
    },
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Session directory; sessions are kept in memory when unset.
    #[arg(long, env = "SBAC_STORE_DIR")]
    store: Option<PathBuf>,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Rename/text-only propagation: {policyNumber, field, newValue, policies, insights?}
    Ripple { input: PathBuf },
    /// Enumeration, scoring and selection: {schemas, k?, policies?}
    Vignette { input: PathBuf },
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// Serve against the live endpoint, writing every call to DIR.
    Record {
        #[arg(long)]
        dir: PathBuf,
        #[command(flatten)]
        serve: ServeArgs,
    },
    /// Check that a fixture directory is complete and parseable.
    Verify { dir: PathBuf },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Serve { serve, replay } => {
            let transport: Arc<dyn Transport> = match replay {
                Some(dir) => Arc::new(ReplayTransport::from_dir(&dir).map_err(|e| e.to_string())?),
                None => Arc::new(LiveTransport::new(LlmConfig::from_env().map_err(|e| e.to_string())?)),
            };
            serve_with(serve, transport)
        }
        Command::Replay { archive } => {
            let archive: Archive = serde_json::from_str(&read(&archive)?).map_err(|e| e.to_string())?;
            match replay(&archive) {
                Ok(state) => {
                    println!("replayed {} calls; final state matches the archive", state.call_log.len());
                    Ok(())
                }
                Err(ReplayError::Diverged { replayed }) => {
                    print_json(&serde_json::to_value(&*replayed).unwrap_or_default());
                    Err("replayed state differs from the archived state".into())
                }
                Err(e) => Err(e.to_string()),
            }
        }
        Command::Oracle { which } => {
            let out = match which {
                OracleCommand::Ripple { input } => oracle::ripple(&read(&input)?)?,
                OracleCommand::Vignette { input } => oracle::vignette(&read(&input)?)?,
            };
            print_json(&out);
            Ok(())
        }
        Command::Fixtures { action: FixturesCommand::Record { dir, serve } } => {
            let live = Arc::new(LiveTransport::new(LlmConfig::from_env().map_err(|e| e.to_string())?));
            serve_with(serve, Arc::new(RecordingTransport::new(live, dir)))
        }
        Command::Fixtures { action: FixturesCommand::Verify { dir } } => {
            let (count, problems) = oracle::verify_fixtures(&dir)?;
            for p in &problems {
                println!("{p}");
            }
            if problems.is_empty() {
                println!("{count} fixtures ok");
                Ok(())
            } else {
                Err(format!("{} problems in {count} fixtures", problems.len()))
            }
        }
    }
}

fn serve_with(args: ServeArgs, transport: Arc<dyn Transport>) -> Result<(), String> {
    let mut config = ServiceConfig::from_env().map_err(|e| e.to_string())?;
    config.store_dir = args.store.or(config.store_dir);
    let store: Arc<dyn Store> = match &config.store_dir {
        Some(dir) => Arc::new(FileStore::open(dir).map_err(|e| e.to_string())?),
        None => Arc::new(MemoryStore::new()),
    };
    let svc = Arc::new(Service::new(store, Gateway::new(transport), config));
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.addr).await.map_err(|e| e.to_string())?;
        tracing::info!(addr = %args.addr, "listening");
        axum::serve(listener, sbac::http::router(svc))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| e.to_string())
    })
}
