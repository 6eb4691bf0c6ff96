use clap::{Args, Parser, Subcommand};
use gtfusion::app::{self, Options};
use gtfusion::corpus::write_jsonl;
use gtfusion::synth::PlantedCorpus;
use gtfusion::{Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;

/// Graph-tree fusion document classifier.
#[derive(Parser)]
#[command(name = "gtf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a corpus with a validation split and save a checkpoint.
    Train(Common),
    /// Score a saved model on a labelled corpus.
    Eval(Common),
    /// Write per-document predictions from a saved model.
    Predict(Common),
    /// Grid-search the selection threshold.
    TuneTau(Common),
    /// Stratified k-fold cross-validation.
    Cv(Common),
    /// Selection fractions per document third.
    Chunks(Common),
    /// Compare the full model against each ablation variant.
    Ablate(Common),
    /// Write a synthetic planted-token corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Common {
    /// JSON training configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus in JSON lines.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Comma-separated ablation flags: no_ctt, no_dtt, no_gat, no_bidir.
    #[arg(long)]
    ablate: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 1 gives a fully sequential run.
    #[arg(long)]
    threads: Option<usize>,
    /// Saved checkpoint for eval, predict and chunks.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output corpus file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    docs: usize,
    /// Plant the class tokens only in the first third of each document.
    #[arg(long)]
    first_third: bool,
}

fn threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn options(c: Common) -> Result<Options> {
    threads(c.threads)?;
    Ok(Options {
        config: app::resolve_config(c.config.as_deref(), c.seed, c.tau, c.ablate.as_deref())?,
        corpus: c.corpus,
        out: c.out,
        model: c.model,
    })
}

fn synth(a: SynthArgs) -> Result<String> {
    let base = if a.first_third { PlantedCorpus::first_third() } else { PlantedCorpus::default() };
    let spec = PlantedCorpus { docs: a.docs, ..base };
    let docs = spec.generate(a.seed);
    let file = std::fs::File::create(&a.out)?;
    write_jsonl(std::io::BufWriter::new(file), &docs)?;
    Ok(format!("{} documents written to {}", docs.len(), a.out.display()))
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Train(c) => app::train(&options(c)?),
        Command::Eval(c) => app::eval(&options(c)?),
        Command::Predict(c) => app::predict(&options(c)?),
        Command::TuneTau(c) => app::tune(&options(c)?),
        Command::Cv(c) => app::cv(&options(c)?),
        Command::Chunks(c) => app::chunks(&options(c)?),
        Command::Ablate(c) => app::ablate(&options(c)?),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(report) => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
