use std::fs;
use std::io::Read;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ncdsearch_cli::commands::{self, EvalArgs};
use ncdsearch_cli::server::{router, AppState};
use ncdsearch_cli::{load_config, CliError, Overrides};
use ncdsearch_core::evaluation::ExperimentKind;
use ncdsearch_core::{CorpusError, CorpusIndex, EngineConfig};

#[derive(Parser)]
#[command(
    name = "ncdsearch",
    version,
    about = "Compression-distance document search"
)]
struct Cli {
    /// TOML file with engine settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add the text files of a directory to a corpus.
    Ingest {
        /// Directory of documents; `<name>.meta.json` sidecars carry metadata.
        input: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Largest block size in KB.
        #[arg(long)]
        n_max: Option<u32>,
        /// Overlap between consecutive blocks, as a fraction of the block size.
        #[arg(long)]
        overlap: Option<f64>,
    },
    /// Search a corpus.
    Query {
        #[arg(long)]
        corpus: PathBuf,
        /// Query text; use --file to read it from a file, or `-` for stdin.
        text: Option<String>,
        #[arg(long, conflicts_with = "text")]
        file: Option<PathBuf>,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Run a retrieval experiment and write CSV and JSON artifacts.
    Eval {
        /// 1: fragment in corpus, 2: fragment excised, 3: subject affinity.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        experiment: u8,
        #[arg(long)]
        docs: PathBuf,
        /// Held-out labelled documents (experiment 3).
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2048)]
        fragment_length: usize,
        #[arg(long, default_value_t = 20)]
        queries: usize,
        #[arg(long, default_value_t = 5)]
        fragments_per_doc: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        null_seeds: usize,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Serve a corpus over HTTP.
    Serve {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[command(flatten)]
        tuning: Tuning,
    },
}

#[derive(Args)]
struct Tuning {
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of flagged blocks to show.
    #[arg(long)]
    max_blocks: Option<usize>,
    /// Monte Carlo replicates for the outlier threshold.
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    rng_seed: Option<u64>,
}

impl Tuning {
    fn overrides(&self) -> Overrides {
        Overrides {
            alpha: self.alpha,
            max_blocks_shown: self.max_blocks,
            gtable_replicates: self.replicates,
            rng_seed: self.rng_seed,
            ..Overrides::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest {
            input,
            corpus,
            n_max,
            overlap,
        } => {
            let config = Overrides {
                n_max_bins: n_max,
                overlap_fraction: overlap,
                ..Overrides::default()
            }
            .apply(file)?;
            println!("{}", commands::ingest(&input, &corpus, &config)?);
        }
        Command::Query {
            corpus,
            text,
            file: query_file,
            tuning,
            format,
        } => {
            let config = tuning.overrides().apply(file)?;
            let bytes = read_query(text, query_file)?;
            let response = commands::query(&corpus, &bytes, &config)?;
            match format {
                Format::Text => print!("{}", response.render_text()),
                Format::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&response).expect("response serializes")
                ),
            }
        }
        Command::Eval {
            experiment,
            docs,
            external,
            out,
            fragment_length,
            queries,
            fragments_per_doc,
            seed,
            null_seeds,
            tuning,
        } => {
            let config = tuning.overrides().apply(file)?;
            let kind = ExperimentKind::try_from(experiment).map_err(CliError::Usage)?;
            let args = EvalArgs {
                kind,
                docs,
                external,
                out,
                fragment_length,
                queries,
                fragments_per_doc,
                seed,
                null_seeds,
            };
            let report = commands::eval(&args, &config)?;
            println!("{}", commands::describe(&report));
            println!("artifacts written to {}", args.out.display());
        }
        Command::Serve {
            corpus,
            addr,
            tuning,
        } => {
            let config = tuning.overrides().apply(file)?;
            serve(corpus, addr, config)?;
        }
    }
    Ok(())
}

fn read_query(text: Option<String>, file: Option<PathBuf>) -> Result<Vec<u8>, CliError> {
    match (text, file) {
        (Some(t), _) if t == "-" => {
            let mut buf = Vec::new();
            std::io::stdin()
                .read_to_end(&mut buf)
                .map_err(|e| CliError::Data(format!("reading stdin: {e}")))?;
            Ok(buf)
        }
        (Some(t), _) => Ok(t.into_bytes()),
        (None, Some(path)) => fs::read(&path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display()))),
        (None, None) => Err(CliError::Usage(
            "give the query text, `-` for stdin, or --file".into(),
        )),
    }
}

fn serve(dir: PathBuf, addr: SocketAddr, config: EngineConfig) -> Result<(), CliError> {
    let corpus = match CorpusIndex::load(&dir) {
        Ok(c) => Some(c),
        Err(CorpusError::NotFound(_)) => {
            log::warn!("no corpus at {}; serving without one", dir.display());
            None
        }
        Err(e) => return Err(e.into()),
    };
    let gtable = commands::open_gtable(&dir, &config);
    let state = Arc::new(AppState::new(corpus, gtable, Some(dir), config));
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CliError::Data(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
        println!("listening on http://{addr}");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Data(format!("server error: {e}")))
    })
}
