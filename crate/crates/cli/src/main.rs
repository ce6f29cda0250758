use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use docembed::driver::{self, PipelineConfig, Stage};

/// Mine weakly supervised training data, train a document encoder and
/// evaluate it. Settings come from defaults, then `--config`, then flags,
/// then `DOCEMBED_<KEY>` environment variables.
#[derive(Debug, Parser)]
#[command(name = "docembed", version)]
struct Cli {
    /// Global random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Log progress at info level.
    #[arg(short, long, global = true)]
    verbose: bool,

    /// Directory holding every intermediate artifact.
    #[arg(long, global = true, value_name = "DIR")]
    work_dir: Option<PathBuf>,

    /// Override any configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_pair)]
    overrides: Vec<(String, String)>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate, filter and deduplicate the raw corpus.
    Ingest,
    /// Compute entity, image and text embeddings for every document.
    EmbedAux,
    /// Build one nearest-neighbor index per embedding space.
    BuildIndex,
    /// Mine, date-filter, denoise and augment training triplets.
    MineTriplets,
    /// Derive topic labels from publisher hub pages.
    MineTopics,
    /// Build the vocabulary and pack tokenized documents.
    Pack,
    /// Train the encoder on triplets and topic labels.
    Train,
    /// Score a trained encoder.
    Eval,
    /// Run the whole pipeline on a generated corpus and write a report.
    SynthE2e,
    /// Write a generated corpus and its side inputs into the work dir,
    /// with a `synth.conf` for running the stages on it.
    SynthData,
    /// Print the resolved configuration.
    ShowConfig,
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn stage(c: &Command) -> Option<Stage> {
    Some(match c {
        Command::Ingest => Stage::Ingest,
        Command::EmbedAux => Stage::EmbedAux,
        Command::BuildIndex => Stage::BuildIndex,
        Command::MineTriplets => Stage::MineTriplets,
        Command::MineTopics => Stage::MineTopics,
        Command::Pack => Stage::Pack,
        Command::Train => Stage::Train,
        Command::Eval => Stage::Eval,
        Command::SynthE2e => Stage::SynthE2e,
        Command::SynthData | Command::ShowConfig => return None,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut flags = Vec::new();
    if let Some(dir) = &cli.work_dir {
        flags.push(("work_dir".to_string(), dir.display().to_string()));
    }
    if let Some(seed) = cli.seed {
        flags.push(("seed".to_string(), seed.to_string()));
    }
    flags.extend(cli.overrides.iter().cloned());

    let result = PipelineConfig::resolve(cli.config.as_deref(), &flags, std::env::vars()).and_then(|cfg| {
        match (&cli.command, stage(&cli.command)) {
            (_, Some(stage)) => driver::run(stage, &cfg),
            (Command::SynthData, None) => driver::stages::write_synth_inputs(&cfg),
            _ => {
                print!("{}", cfg.to_text());
                Ok(())
            }
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
