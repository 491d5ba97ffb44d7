use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use denial_core::persona::validate_persona;
use denial_core::storage::{FileStore, QuestionnaireScales};
use denial_server::config::{
    build_engine, build_gateway, load_catalog, load_personas, Backend, FileConfig,
};
use denial_server::simulate::{parse_script, run_simulation};
use denial_server::{router, AppState, ServerOptions};

#[derive(Debug, Parser)]
#[command(
    name = "denial-trainer",
    version,
    about = "Science-denial training chatbot"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ContentArgs {
    /// Directory of persona JSON files (defaults to the bundled personas).
    #[arg(long)]
    personas_dir: Option<PathBuf>,
    /// Technique catalog JSON (defaults to the bundled catalog).
    #[arg(long)]
    catalog: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[command(flatten)]
        content: ContentArgs,
        /// OpenAI-style completions endpoint.
        #[arg(long, conflicts_with = "llm_mock")]
        llm_url: Option<String>,
        /// Use the deterministic offline backend.
        #[arg(long)]
        llm_mock: bool,
        /// Include belief, mode and current technique in API responses.
        #[arg(long)]
        reveal_debug: bool,
        /// Directory with the built web frontend.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// TOML file with [server], [llm] and [dialogue] tables.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Load the catalog and personas and report problems.
    Validate {
        #[command(flatten)]
        content: ContentArgs,
    },
    /// Run a scripted conversation against the offline backend.
    Simulate {
        #[arg(long)]
        persona: String,
        /// One trainee message per line.
        #[arg(long)]
        script: PathBuf,
        /// Exit non-zero unless the session ends in success.
        #[arg(long)]
        expect_success: bool,
        #[command(flatten)]
        content: ContentArgs,
    },
    /// Print a stored session transcript.
    Export {
        #[arg(long)]
        session: String,
        #[arg(long, default_value = "text")]
        format: String,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// Keep belief values and techniques in structured output.
        #[arg(long)]
        full: bool,
        #[command(flatten)]
        content: ContentArgs,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Validate { content } => validate(&content),
        Command::Simulate {
            persona,
            script,
            expect_success,
            content,
        } => {
            let catalog = Arc::new(load_catalog(content.catalog.as_deref())?);
            let personas = load_personas(content.personas_dir.as_deref(), &catalog)?;
            let gateway = build_gateway(Backend::Mock, &Default::default(), catalog.clone())?;
            let engine = build_engine(catalog, personas, gateway, Default::default());
            let source = std::fs::read_to_string(&script)
                .with_context(|| format!("reading script {}", script.display()))?;
            let report = run_simulation(&engine, &persona, &parse_script(&source))?;
            print!("{}", report.render());
            Ok(if expect_success && !report.succeeded() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Export {
            session,
            format,
            data_dir,
            full,
            content,
        } => {
            let catalog = load_catalog(content.catalog.as_deref())?;
            let personas = load_personas(content.personas_dir.as_deref(), &catalog)?;
            let store = FileStore::open(&data_dir)?;
            let stored = store.load_session(&session)?;
            let initial = personas
                .iter()
                .find(|p| p.id == stored.persona_id)
                .map(|p| p.belief_params.initial_belief)
                .unwrap_or(stored.belief);
            print!(
                "{}",
                store.export_transcript(&session, &format, initial, !full)?
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            port,
            data_dir,
            content,
            llm_url,
            llm_mock,
            reveal_debug,
            static_dir,
            config,
        } => {
            let file = match &config {
                Some(path) => FileConfig::from_path(path)?,
                None => FileConfig::default(),
            };
            let mut llm = file.llm.clone().with_env();
            if let Some(url) = llm_url {
                llm.url = Some(url);
            }
            let backend = if llm_mock {
                Backend::Mock
            } else {
                Backend::Http
            };
            let catalog_path = content.catalog.or(file.server.catalog.clone());
            let personas_dir = content.personas_dir.or(file.server.personas_dir.clone());
            let catalog = Arc::new(load_catalog(catalog_path.as_deref())?);
            let personas = load_personas(personas_dir.as_deref(), &catalog)?;
            let gateway = build_gateway(backend, &llm, catalog.clone())?;
            let engine = build_engine(catalog, personas, gateway, file.dialogue);
            let data_dir = data_dir
                .or(file.server.data_dir.clone())
                .unwrap_or_else(|| PathBuf::from("data"));
            let store = FileStore::open(&data_dir)
                .with_context(|| format!("opening data directory {}", data_dir.display()))?;
            let options = ServerOptions {
                reveal_debug: reveal_debug || file.server.reveal_debug,
                cors_origins: file.server.cors_origins.clone(),
                static_dir: static_dir.or(file.server.static_dir.clone()),
            };
            let state = AppState::new(
                engine,
                store,
                QuestionnaireScales::shipped(),
                options.reveal_debug,
            );
            let app = router(state, &options);
            let addr = SocketAddr::from(([0, 0, 0, 0], port.or(file.server.port).unwrap_or(8080)));
            serve(app, addr)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn validate(content: &ContentArgs) -> anyhow::Result<ExitCode> {
    let catalog = load_catalog(content.catalog.as_deref())?;
    println!(
        "catalog: {} categories, {} techniques (version {})",
        catalog.categories().len(),
        catalog.techniques().len(),
        catalog.version().unwrap_or("unversioned")
    );
    let personas = load_personas(content.personas_dir.as_deref(), &catalog)?;
    let mut failures = 0;
    for persona in &personas {
        match validate_persona(persona, &catalog) {
            Ok(()) => println!(
                "persona {}: ok ({} techniques)",
                persona.id,
                persona.assigned_techniques.len()
            ),
            Err(err) => {
                failures += 1;
                println!("persona {}: {err}", persona.id);
            }
        }
    }
    if personas.is_empty() {
        bail!("no personas found");
    }
    if failures > 0 {
        bail!("{failures} persona(s) failed validation");
    }
    println!("all content valid");
    Ok(ExitCode::SUCCESS)
}

fn serve(app: axum::Router, addr: SocketAddr) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                tracing::info!("shutting down");
            })
            .await
            .context("server error")
    })
}
