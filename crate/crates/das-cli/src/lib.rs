//! Argument parsing and command dispatch for the `das` binary.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 broken input
//! data or files, 3 numeric divergence during optimization.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use das_core::config::Config;
use das_core::pipeline::{self, GenSettings};

#[derive(Parser)]
#[command(
    name = "das",
    version,
    about = "Architecture search, training, and classification for PolSAR patches"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-class coherency scene and its label map
    Gen {
        /// Number of classes in the scene
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        /// Averaging looks per pixel
        #[arg(long, default_value_t = 8)]
        looks: usize,
        /// Edge length of the square single-class regions
        #[arg(long, default_value_t = 32)]
        region_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output coherency image (.pct)
        #[arg(long)]
        out: PathBuf,
        /// Output label map (.plb)
        #[arg(long)]
        labels: PathBuf,
    },
    /// Search for an architecture on a labeled scene
    Search {
        /// Config file; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Output architecture text file
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model of a given architecture from scratch
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Architecture text file to instantiate
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Output model file
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a stored model on a scene's test split
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model file to evaluate
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Classify every pixel of a scene into a label map
    Map {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output label map (.plb)
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the tool version
    Version,
}

fn load_config(path: Option<&PathBuf>) -> das_core::Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn execute(cli: Cli) -> das_core::Result<()> {
    match cli.command {
        Command::Version => {
            println!("das {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
        Command::Gen {
            classes,
            height,
            width,
            looks,
            region_size,
            seed,
            out,
            labels,
        } => {
            let settings = GenSettings {
                classes,
                height,
                width,
                looks,
                region_size,
                seed,
            };
            pipeline::run_gen(&settings, &out, &labels)
        }
        Command::Search {
            config,
            image,
            labels,
            out,
        } => {
            let cfg = load_config(config.as_ref())?;
            let mut progress = std::io::stderr();
            let outcome =
                pipeline::run_search(&cfg, &image, &labels, &out, Some(&mut progress))?;
            println!("arch={}", outcome.best.summary());
            Ok(())
        }
        Command::Train {
            config,
            arch,
            image,
            labels,
            out,
        } => {
            let cfg = load_config(config.as_ref())?;
            let mut progress = std::io::stderr();
            let report =
                pipeline::run_train(&cfg, &arch, &image, &labels, &out, Some(&mut progress))?;
            print!("{}", report.test.report());
            Ok(())
        }
        Command::Eval {
            config,
            model,
            image,
            labels,
        } => {
            let cfg = load_config(config.as_ref())?;
            let metrics = pipeline::run_eval(&cfg, &model, &image, &labels)?;
            print!("{}", metrics.report());
            Ok(())
        }
        Command::Map { model, image, out } => pipeline::run_map(&model, &image, &out),
    }
}

/// Parse `args` (including the program name) and run the selected command.
/// Returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive here as non-error displays
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            e.exit_code()
        }
    }
}
