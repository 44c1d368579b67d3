//! `fuzzcfg`: validate models, run configurations, serve sessions.
//!
//! Exit codes: 0 ok, 1 validation violations, 2 parse failure, 3 engine
//! error.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fuzzcfg::io::{parse_model, render_matrix, render_result, OutputFormat, ParseFailureKind, ParsedModel};
use fuzzcfg::pipeline::{ModelIssue, PipelineError, ScoreAggregator};
use fuzzcfg::{run_configuration, AgentId, ConfigurationModel};
use fuzzcfg_service::AppState;

const VALIDATION: u8 = 1;
const PARSE: u8 = 2;
const ENGINE: u8 = 3;

#[derive(Parser)]
#[command(name = "fuzzcfg", version, about = "Fuzzy multi-agent product configuration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration and print the optimal configurations.
    Run(RunArgs),
    /// Check a model document; exits 0 iff it has no errors.
    Validate { model: PathBuf },
    /// Serve the HTTP+JSON session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
        /// Append each session's update log to <DIR>/<session>.jsonl.
        #[arg(long, value_name = "DIR")]
        log_dir: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    model: PathBuf,
    /// Weight of in-group affinity against out-group distance [default: 0.5]
    #[arg(long)]
    alpha: Option<f64>,
    /// Score slack admitted when expanding generalized slots [default: 0.05]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Cluster each community into super-agents first.
    #[arg(long)]
    generalized: bool,
    /// Sweep cap for every consensus loop [default: 100]
    #[arg(long)]
    max_sweeps: Option<usize>,
    /// Configuration score aggregator [default: mean]
    #[arg(long, value_enum)]
    score: Option<Score>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Comma-separated agents visited first in every sweep.
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    seed_order: Option<Vec<String>>,
    /// Also print the block-ordered consensus matrix (table format).
    #[arg(long)]
    matrix: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Score {
    Mean,
    Min,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

impl RunArgs {
    /// Flags override the document's options; absent flags keep them.
    fn apply(&self, m: &mut ConfigurationModel) {
        let o = &mut m.options;
        if let Some(a) = self.alpha {
            o.alpha = a;
        }
        if let Some(e) = self.epsilon {
            o.epsilon = e;
        }
        if self.generalized {
            o.generalized = true;
        }
        if let Some(n) = self.max_sweeps {
            o.max_sweeps = n;
        }
        if let Some(s) = self.score {
            o.score = match s {
                Score::Mean => ScoreAggregator::Mean,
                Score::Min => ScoreAggregator::Min,
            };
        }
        if let Some(ids) = &self.seed_order {
            o.sweep_order = ids.iter().map(|s| AgentId::new(s.trim())).collect();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => run(&args),
        Command::Validate { model } => validate(&model),
        Command::Serve { port, host, log_dir } => serve(SocketAddr::new(host, port), log_dir),
    };
    ExitCode::from(code)
}

fn report(path: &Path, issues: &[ModelIssue]) {
    for issue in issues {
        eprintln!("{}: {issue}", path.display());
    }
}

/// Reads and parses `path`, printing located problems. `Err` carries the
/// exit code.
fn load(path: &Path) -> Result<ParsedModel, u8> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("{}: cannot read: {e}", path.display());
        PARSE
    })?;
    parse_model(&text).map_err(|f| {
        report(path, &f.issues);
        match f.kind {
            ParseFailureKind::Syntax => PARSE,
            ParseFailureKind::Semantic => VALIDATION,
        }
    })
}

fn run(args: &RunArgs) -> u8 {
    if args.matrix && args.format == Format::Json {
        eprintln!("--matrix needs --format table");
        return PARSE;
    }
    let parsed = match load(&args.model) {
        Ok(p) => p,
        Err(code) => return code,
    };
    report(&args.model, &parsed.warnings);
    let mut model = parsed.model;
    args.apply(&mut model);
    let errors = model.errors();
    if !errors.is_empty() {
        report(&args.model, &errors);
        return VALIDATION;
    }
    let result = match run_configuration(&model) {
        Ok(r) => r,
        Err(PipelineError::Invalid(issues)) => {
            report(&args.model, &issues);
            return VALIDATION;
        }
        Err(e) => {
            eprintln!("{}: {e}", args.model.display());
            return ENGINE;
        }
    };
    let format = match args.format {
        Format::Table => OutputFormat::Table,
        Format::Json => OutputFormat::Json,
    };
    print!("{}", render_result(&result, format));
    if args.matrix {
        match render_matrix(&result) {
            Ok(text) => print!("\n{text}"),
            Err(e) => {
                eprintln!("{}: {e}", args.model.display());
                return ENGINE;
            }
        }
    }
    0
}

fn validate(path: &Path) -> u8 {
    // Parsing runs the full model check; what survives it is a warning.
    let parsed = match load(path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    report(path, &parsed.warnings);
    let m = &parsed.model;
    println!(
        "{}: ok ({} requirements, {} functions, {} solutions, {} constraint domains, {} warnings)",
        path.display(),
        m.requirements.len(),
        m.functions.len(),
        m.solutions.len(),
        m.constraints.len(),
        parsed.warnings.len(),
    );
    0
}

fn serve(addr: SocketAddr, log_dir: Option<PathBuf>) -> u8 {
    let state = match log_dir {
        Some(dir) => {
            if let Err(e) = std::fs::create_dir_all(&dir) {
                eprintln!("{}: {e}", dir.display());
                return ENGINE;
            }
            AppState::with_log_dir(dir)
        }
        None => AppState::new(),
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("cannot start runtime: {e}");
            return ENGINE;
        }
    };
    let served = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        // Printed so callers binding port 0 learn the real address.
        println!("listening on http://{}", listener.local_addr()?);
        fuzzcfg_service::serve_on(listener, state).await
    });
    match served {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("serve: {e}");
            ENGINE
        }
    }
}
