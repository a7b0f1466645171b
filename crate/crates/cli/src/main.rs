use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use readlm::{analyze, compare, exit_code, preprocess, synthesize, train, Overrides, PipelineConfig};
use readlm_core::Result;

#[derive(Parser)]
#[command(name = "readlm", version, about = "Evaluate language models against human reading data")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "configs/desk.toml")]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Added to every configured seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Select the vocabulary and filter the training corpus.
    Preprocess,
    /// Train every (architecture, seed) run.
    Train,
    /// Generate synthetic reading data from a reference model.
    Synthesize,
    /// Fit baseline and surprisal regressions for every checkpoint.
    Analyze,
    /// Fit GAMs over the analysis results and draw the panels.
    Compare,
    /// All stages in order.
    Run,
}

fn stage(cfg: &PipelineConfig, cmd: Command) -> Result<()> {
    match cmd {
        Command::Preprocess => {
            let s = preprocess::preprocess(cfg)?;
            println!(
                "corpus: {} of {} sentences kept, {} tokens",
                s.kept_sentences, s.raw_sentences, s.kept_tokens
            );
            println!("vocabulary: {} words ({} added from the stimuli)", s.vocabulary_words, s.added_test_words);
            println!("stimuli: {} sentences, {} words", s.stimuli, s.stimulus_tokens);
        }
        Command::Train => {
            for r in train::train_all(cfg)? {
                let state = if r.skipped { "up to date" } else { "trained" };
                println!(
                    "{} seed {}: {state}, {} checkpoints, final loss {:.4}",
                    r.architecture,
                    r.seed,
                    r.manifest.checkpoints.len(),
                    r.manifest.final_loss
                );
            }
        }
        Command::Synthesize => {
            for s in synthesize::synthesize(cfg)? {
                println!("{}: {} events on {} sentences", s.dataset, s.events, s.sentences);
            }
        }
        Command::Analyze => {
            let rows = analyze::analyze(cfg)?;
            let failed = rows.iter().filter(|r| r.failed()).count();
            let flagged = rows.iter().filter(|r| r.flagged_negative).count();
            println!("{} fits, {failed} failed, {flagged} flagged negative", rows.len());
            println!("wrote {}", cfg.layout().fits().display());
        }
        Command::Compare => {
            let r = compare::compare(cfg)?;
            for d in &r.differences {
                println!(
                    "{}: {} - {} significant on {:.0}% of the range",
                    d.dataset,
                    d.level_a,
                    d.level_b,
                    100.0 * d.significant_fraction
                );
            }
            for s in &r.skipped {
                println!("{s}: no overlap in log-probability, difference skipped");
            }
            println!("{} rows excluded, {} files written", r.excluded, r.files.len());
        }
        Command::Run => {
            for c in [Command::Preprocess, Command::Train, Command::Synthesize, Command::Analyze, Command::Compare] {
                if c == Command::Synthesize && cfg.synthesize.is_none() {
                    continue;
                }
                stage(cfg, c)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides { output: cli.out, jobs: cli.jobs, seed_offset: cli.seed_offset };
    let result = PipelineConfig::load(&cli.config, &overrides).and_then(|cfg| stage(&cfg, cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
