use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use memcue_service::cli::{self, Cli, Command};
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Serve { bind } => serve(cli.config.as_deref(), bind.clone()),
        _ => cli::run(cli, &mut std::io::stdout()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn serve(config: Option<&std::path::Path>, bind: Option<String>) -> Result<(), cli::CliError> {
    let config = cli::load_config(config)?;
    let bind = bind.unwrap_or_else(|| config.server.bind.clone());
    let state = Arc::new(cli::serve_state(&config)?);
    let runtime = tokio::runtime::Runtime::new().map_err(|source| cli::CliError::Io {
        path: "<runtime>".into(),
        source,
    })?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|source| cli::CliError::Io {
                path: bind.clone().into(),
                source,
            })?;
        tracing::info!(addr = %bind, backend = %state.backend_label, "listening");
        axum::serve(listener, memcue_service::router(state.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|source| cli::CliError::Io {
                path: bind.clone().into(),
                source,
            })
    })?;
    state.close_all();
    state.persist_store()?;
    Ok(())
}
