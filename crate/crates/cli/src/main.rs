use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use oblique_cli::config::OutputFormat;
use oblique_cli::{run_command, validate_command, Overrides};

/// Sketched least squares / CUR bias experiments.
#[derive(Parser)]
#[command(name = "oblique", version, about)]
struct Cli {
    /// Worker threads for Monte-Carlo trials (results do not depend on it).
    #[arg(long, global = true, env = "OBLIQUE_THREADS")]
    threads: Option<usize>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file.
    Run {
        config: PathBuf,
        /// Overrides `output.path`.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Overrides `output.format`.
        #[arg(long)]
        format: Option<Format>,
    },
    /// Check a config and print the resolved settings.
    Validate { config: PathBuf },
    /// Print the version.
    Version,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    let mut ov = Overrides { seed: cli.seed, ..Default::default() };
    let (mut out, mut err) = (std::io::stdout(), std::io::stderr());
    let code = match cli.command {
        Command::Run { config, output, format } => {
            ov.output = output;
            ov.format = format.map(|f| match f {
                Format::Csv => OutputFormat::Csv,
                Format::Json => OutputFormat::Json,
            });
            run_command(&config, &ov, &mut out, &mut err)
        }
        Command::Validate { config } => validate_command(&config, &ov, &mut out, &mut err),
        Command::Version => {
            println!("oblique {}", env!("CARGO_PKG_VERSION"));
            0
        }
    };
    ExitCode::from(code as u8)
}
