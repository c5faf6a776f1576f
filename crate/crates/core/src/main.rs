use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xkg::config::Config;
use xkg::pipeline::{cmd_build, cmd_query, cmd_stats, cmd_validate, PipelineError, QueryOptions, Services, TargetSpec};

#[derive(Debug, Parser)]
#[command(name = "xkg", version, about = "Build and query an executable knowledge graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Curate a corpus around a target paper and build the graph.
    Build {
        #[arg(long)]
        config: PathBuf,
        /// arXiv id, paper title, or a LaTeX source directory or archive.
        #[arg(long)]
        target: String,
        #[arg(long)]
        json: bool,
    },
    /// Retrieve (technique, code) pairs relevant to a text.
    Query {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        no_rerank: bool,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Summarize a stored graph.
    Stats {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Check every graph invariant.
    Validate {
        #[arg(long)]
        kg: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config, PipelineError> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.apply_env();
    cfg.check()?;
    Ok(cfg)
}

fn init_logging(level: &str) {
    let level = level.to_ascii_lowercase();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
}

fn print_json<T: serde::Serialize>(value: &T) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, value);
    let _ = writeln!(out);
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Build { config, target, json } => {
            let cfg = load_config(Some(&config))?;
            init_logging(&cfg.global.log_level);
            let services = Services::from_config(&cfg)?;
            let report = cmd_build(&cfg, &TargetSpec::parse(&target), &services)?;
            if json {
                print_json(&report);
            } else {
                print!("{report}");
            }
        }
        Command::Query {
            kg,
            text,
            top,
            no_rerank,
            json,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            init_logging(&cfg.global.log_level);
            let services = Services::from_config(&cfg)?;
            let opts = QueryOptions {
                top,
                rerank: !no_rerank,
            };
            let hits = cmd_query(&kg, &text, &cfg, &services.gateway, opts)?;
            if json {
                print_json(&hits);
            } else if hits.is_empty() {
                println!("no technique reaches the similarity threshold");
            } else {
                for (i, h) in hits.iter().enumerate() {
                    println!("{}. {} [{}] similarity {:.4}", i + 1, h.name, h.technique_id, h.similarity);
                    println!("   {}", h.definition);
                    if let Some(g) = &h.guidance {
                        println!("   guidance: {g}");
                    }
                    if let Some(c) = &h.code {
                        println!("   code: {} ({})", c.id, if c.executable.is_executable() { "executable" } else { "unchecked" });
                    }
                }
            }
        }
        Command::Stats { kg, json } => {
            init_logging("warn");
            let stats = cmd_stats(&kg)?;
            if json {
                print_json(&stats);
            } else {
                print!("{stats}");
            }
        }
        Command::Validate { kg } => {
            init_logging("warn");
            match cmd_validate(&kg) {
                Ok(stats) => println!("valid: {} papers, {} techniques", stats.papers, stats.techniques),
                Err(PipelineError::Invalid(violations)) => {
                    for v in &violations {
                        println!("{v}");
                    }
                    return Err(PipelineError::Invalid(violations));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
