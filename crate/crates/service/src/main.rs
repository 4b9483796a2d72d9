use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use geocut_core::RunConfig;
use geocut_service::{router, spawn_sweeper, AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "geocut-service", version, about = "HTTP server for interactive contour extraction")]
struct Args {
    #[arg(long, env = "GEOCUT_BIND", default_value = "127.0.0.1")]
    bind: IpAddr,
    #[arg(long, env = "GEOCUT_PORT", default_value_t = 8080)]
    port: u16,
    /// Seconds a session may stay untouched before it is dropped.
    #[arg(long, env = "GEOCUT_IDLE_SECS", default_value_t = 1800)]
    idle_secs: u64,
    /// Largest accepted image upload, in bytes.
    #[arg(long, env = "GEOCUT_MAX_BYTES", default_value_t = 20 << 20)]
    max_bytes: usize,
    /// Default JSON or TOML run configuration for new sessions.
    #[arg(long, env = "GEOCUT_CONFIG")]
    config: Option<PathBuf>,
    /// Directory for graph caches that survive restarts.
    #[arg(long, env = "GEOCUT_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// Allowed browser origin; repeat for several. Any origin when absent.
    #[arg(long = "cors-origin", env = "GEOCUT_CORS_ORIGIN", value_delimiter = ',')]
    cors_origins: Vec<String>,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let run = match args.config.as_deref().map(RunConfig::load).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(dir) = &args.cache_dir {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("error: cache dir {}: {e}", dir.display());
            return ExitCode::from(2);
        }
    }
    let idle = Duration::from_secs(args.idle_secs.max(1));
    let state = AppState::new(ServiceConfig {
        max_bytes: args.max_bytes,
        idle,
        cache_dir: args.cache_dir,
        run,
        cors_origins: args.cors_origins,
    });
    spawn_sweeper(state.clone(), (idle / 4).clamp(Duration::from_secs(1), Duration::from_secs(60)));
    let listener = match tokio::net::TcpListener::bind((args.bind, args.port)).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: bind {}:{}: {e}", args.bind, args.port);
            return ExitCode::from(2);
        }
    };
    eprintln!("listening on http://{}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    match axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
