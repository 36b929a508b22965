//! `dpn` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dpn::{PeKind, ProblemKind};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "DPN_THREADS";

#[derive(Parser, Debug)]
#[command(name = "dpn", version, about = "Neural solver for min-max vehicle routing problems")]
#[command(after_help = "Set DPN_THREADS to cap the number of worker threads.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset of uniform random instances (one JSON object per line).
    Gen(GenArgs),
    /// Train a model from scratch or resume an interrupted run.
    Train(TrainArgs),
    /// Continue training from a checkpoint with a fresh optimizer.
    Finetune(FinetuneArgs),
    /// Solve every instance of a dataset with a trained model.
    Solve(SolveArgs),
    /// Compare solutions against the exact oracle or a reference file.
    Eval(EvalArgs),
    /// Convert a TSPLIB EUC_2D file into a one-instance MTSP dataset.
    ParseTsplib(ParseTsplibArgs),
    /// Export (epoch, objective) series from metrics logs for plotting.
    PlotData(PlotDataArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Problem kind: MTSP, MPDP, MDVRP or FMDVRP.
    #[arg(long, value_parser = parse_kind)]
    pub kind: ProblemKind,
    /// Customers per instance.
    #[arg(long)]
    pub n: usize,
    /// Depots per instance (1 for MTSP/MPDP).
    #[arg(long, default_value_t = 1)]
    pub depots: usize,
    /// Agent count, either `M` or an inclusive range `LO-HI` drawn per instance.
    #[arg(long, value_parser = parse_range)]
    pub agents: [usize; 2],
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PeArg {
    Rotation,
    Sinusoidal,
}

impl From<PeArg> for PeKind {
    fn from(p: PeArg) -> Self {
        match p {
            PeArg::Rotation => PeKind::Rotation,
            PeArg::Sinusoidal => PeKind::Sinusoidal,
        }
    }
}

/// Where the training configuration comes from, plus command-line overrides.
#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// JSON training configuration; unknown keys are rejected.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in settings, used with --kind and --n.
    #[arg(long, value_enum, requires_all = ["kind", "n"])]
    pub preset: Option<Preset>,
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<ProblemKind>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Override the number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override instances per epoch.
    #[arg(long)]
    pub epoch_size: Option<usize>,
    /// Drop the navigation part of every encoder layer.
    #[arg(long)]
    pub no_navigation_part: bool,
    /// Positional encoding of the agent embeddings.
    #[arg(long, value_enum)]
    pub pe: Option<PeArg>,
    /// Disable gradient clipping.
    #[arg(long)]
    pub no_clip: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Run directory: receives config.json, checkpoint.bin and metrics.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the checkpoint already in the run directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Checkpoint to start from.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run directory for the fine-tuned model.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Solutions file (one JSON object per line).
    #[arg(long)]
    pub out: PathBuf,
    /// Also decode the 8 symmetric copies of every instance.
    #[arg(long)]
    pub aug8: bool,
    /// Agent permutations decoded per copy.
    #[arg(long, default_value_t = 1)]
    pub per: usize,
    /// Write encoder attention scores of every instance to this file.
    #[arg(long)]
    pub probe: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub solutions: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// `oracle` for the exact solver, otherwise a reference solutions file.
    #[arg(long = "ref", default_value = "oracle")]
    pub reference: String,
    /// Also write the table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ParseTsplibArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub agents: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotDataArgs {
    /// Metrics log of one run; repeat for several runs.
    #[arg(long, required = true)]
    pub metrics: Vec<PathBuf>,
    /// Series labels, in the order of --metrics. Defaults to the run directory name.
    #[arg(long)]
    pub label: Vec<String>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<ProblemKind, String> {
    s.parse().map_err(|e: dpn::Error| e.to_string())
}

fn parse_range(s: &str) -> Result<[usize; 2], String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    match s.split_once('-') {
        Some((a, b)) => {
            let (lo, hi) = (num(a)?, num(b)?);
            if lo > hi {
                return Err(format!("empty range {lo}-{hi}"));
            }
            Ok([lo, hi])
        }
        None => {
            let m = num(s)?;
            Ok([m, m])
        }
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().with_context(|| format!("{THREADS_ENV}={v:?} is not a count"))?;
    if n == 0 {
        bail!("{THREADS_ENV} must be positive");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Train(a) => commands::train(&a),
        Command::Finetune(a) => commands::finetune(&a),
        Command::Solve(a) => commands::solve(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::ParseTsplib(a) => commands::parse_tsplib(&a),
        Command::PlotData(a) => commands::plot_data(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // Usage errors are condensed to their first line.
            let text = e.render().to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
