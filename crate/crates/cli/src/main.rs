//! `placehash`: extract, train, encode, match and evaluate from the shell.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use placehash::eval::ALL;
use placehash::hashlearn::DEFAULT_ITQ_ITERATIONS;
use placehash::seqmatch::DEFAULT_GAMMA;

#[derive(Parser)]
#[command(name = "placehash", version, about = "Binary place codes for cross-season place recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Lsh,
    Ccaitq,
}

#[derive(Subcommand)]
enum Command {
    /// Gist descriptors for every *.pgm in a directory, in filename order.
    Gist {
        dir: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Pooling grid per side: 4 gives 512-D, 8 gives 2048-D.
        #[arg(long, default_value_t = 4)]
        grid: usize,
    },
    /// Learn a hash model from the training ranges of a manifest.
    Train(TrainArgs),
    /// Binarize a feature file with a trained model.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Recall@1 and precision-recall over the test ranges.
    Eval(EvalArgs),
    /// Align the test queries to the test database and print the path.
    Dtw {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        db_codes: PathBuf,
        #[arg(long)]
        query_codes: PathBuf,
        /// Contrast exponent on the cost matrix; 1 leaves costs unchanged.
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic traversal pair with its manifest.
    Synth(SynthArgs),
    /// Describe a features, model or codes file.
    Info { file: PathBuf },
}

#[derive(clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Overrides `db_features` from the manifest.
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// Overrides `query_features` from the manifest.
    #[arg(long)]
    pub query: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Ccaitq)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 64)]
    pub bits: usize,
    /// Ridge as a multiple of the mean per-feature variance.
    #[arg(long, default_value_t = placehash::hashlearn::DEFAULT_REG_FACTOR)]
    pub reg: f64,
    #[arg(long, default_value_t = DEFAULT_ITQ_ITERATIONS)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub db_codes: PathBuf,
    #[arg(long)]
    pub query_codes: PathBuf,
    /// Comma-separated retrieval depths; `all` means the whole test database.
    #[arg(long, value_delimiter = ',', value_parser = parse_depth, default_value = "1,2,5,10,20,50,100,all")]
    pub depths: Vec<usize>,
    /// Also report recall after sequence alignment.
    #[arg(long)]
    pub dtw: bool,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Where to write the precision-recall CSV; stdout when omitted.
    #[arg(long)]
    pub pr: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct SynthArgs {
    #[arg(short, long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub places: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 2.5)]
    pub shift: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 2)]
    pub margin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sinusoidal speed variation of the query traversal, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub warp: f64,
    #[arg(long, default_value_t = 1)]
    pub warp_cycles: usize,
    /// Fraction of test queries replaced by noise, as one contiguous segment.
    #[arg(long, default_value_t = 0.0)]
    pub corrupt: f64,
}

fn parse_depth(s: &str) -> Result<usize, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(ALL);
    }
    match s.parse::<usize>() {
        Ok(0) => Err("depth must be at least 1".into()),
        Ok(d) => Ok(d),
        Err(e) => Err(format!("{s}: {e}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gist { dir, out, grid } => commands::gist(&dir, &out, grid),
        Command::Train(args) => commands::train(&args),
        Command::Encode { model, features, out } => commands::encode(&model, &features, &out),
        Command::Eval(args) => commands::eval(&args),
        Command::Dtw { manifest, db_codes, query_codes, gamma, out } => {
            commands::dtw(&manifest, &db_codes, &query_codes, gamma, out.as_deref())
        }
        Command::Synth(args) => commands::synth(&args),
        Command::Info { file } => commands::info(&file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
