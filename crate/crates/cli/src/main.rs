mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;

/// Reference-based distinctive captioning pipeline.
///
/// Exit codes: 0 success, 1 usage error, 2 bad input data, 3 runtime failure.
/// Set REFDIC_LOG (e.g. `info`) for progress logging.
#[derive(Debug, Parser)]
#[command(name = "refdic", version)]
struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus: manifest.jsonl and embeddings.rdke.
    Synth(SynthArgs),
    /// Build a reference group for every image.
    BuildGroups(GroupArgs),
    /// Score candidate captions against ground truth.
    Eval(EvalArgs),
    /// Run cross-entropy then self-critical training.
    Train(TrainArgs),
    /// Caption grouped images with a trained checkpoint.
    Generate(GenerateArgs),
    /// Train once per reward setting of a grid and tabulate the scores as CSV.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    images: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON generator settings; omitted fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GroupArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = 500)]
    coarse_size: usize,
    /// First fine rank taken (1-indexed).
    #[arg(long, default_value_t = 3)]
    p: usize,
    /// Number of references per group.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Also store a resampling pool of this many images, counted from rank p.
    #[arg(long)]
    pool_size: Option<usize>,
    /// Draw candidates from every split instead of the target's own.
    #[arg(long)]
    all_splits: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON-lines {"image_id","caption"}; the first caption per image is scored.
    #[arg(long)]
    candidates: PathBuf,
    /// Reference groups for DisCIDEr; without them only BLEU and CIDEr are reported.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// DisCIDEr m.
    #[arg(long, default_value_t = 0.8)]
    m: f64,
    /// DisCIDEr n.
    #[arg(long, default_value_t = 5.0)]
    n: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON training config; omitted fields keep their defaults.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    groups: PathBuf,
    /// Output directory for checkpoints and the metrics log.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    groups: PathBuf,
    /// Beam width; 0 decodes greedily.
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Longest caption in tokens, closing EOS included (at most the model's max_len).
    #[arg(long)]
    max_len: Option<usize>,
    /// Only caption images of this split.
    #[arg(long)]
    split: Option<refdic_core::corpus::Split>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// JSON array of {"alpha_b","alpha_c","beta"[,"lambda"]} rows.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    groups: PathBuf,
    #[arg(long)]
    out: PathBuf,
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
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REFDIC_LOG", "warn")).format_timestamp(None).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a.seed, a.images, &a.out, a.config.as_deref()),
        Command::BuildGroups(a) => commands::build_groups(
            &a.manifest,
            &a.embeddings,
            refdic_core::groups::GroupBuildConfig {
                coarse_size: a.coarse_size,
                p: a.p,
                k: a.k,
                pool_size: a.pool_size,
                same_split: !a.all_splits,
            },
            &a.out,
        ),
        Command::Eval(a) => commands::eval(&a.manifest, &a.candidates, a.groups.as_deref(), a.m, a.n, &a.out),
        Command::Train(a) => commands::train(&a.config, &a.manifest, &a.groups, &a.out),
        Command::Generate(a) => commands::generate(&commands::GenerateOptions {
            checkpoint: a.checkpoint,
            manifest: a.manifest,
            groups: a.groups,
            beam: a.beam,
            max_len: a.max_len,
            split: a.split,
            out: a.out,
        }),
        Command::Ablate(a) => commands::ablate(&a.grid, &a.config, &a.manifest, &a.groups, &a.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
