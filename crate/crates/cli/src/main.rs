use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use clinex::corpus::ReverseSubConfig;
use clinex::metrics::{ArmMatchConfig, UnigramMode};
use clinex::pipeline::{self, Backend, EvalOptions, PipelineError, RunConfig};
use clinex::resolvers::GapFill;
use clinex::weaksup::SelectionConfig;
use clinex::TaskKind;

#[derive(Parser)]
#[command(name = "clinex", version, about = "Clinical extraction with LLM prompts and resolvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Replay,
    Live,
}

#[derive(Clone, Copy, ValueEnum)]
enum OverlapMode {
    Multiset,
    Set,
}

#[derive(Subcommand)]
enum Command {
    /// Prompt the model for every snippet and resolve the outputs.
    Run {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        template: String,
        /// Template registry (JSON); builtin templates otherwise.
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "replay")]
        backend: BackendKind,
        /// Replay store to read, or with --record the store to append to.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Live run that appends every exchange to --store.
        #[arg(long)]
        record: bool,
        #[arg(long)]
        snippets: PathBuf,
        #[arg(long)]
        inventory: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long)]
        engine: Option<String>,
        #[arg(long)]
        max_tokens: Option<u32>,
        /// Evidence gap fill: a token count or `inf`.
        #[arg(long, default_value = "1")]
        gap_fill: GapFill,
    },
    /// Score predictions against gold annotations.
    Eval {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "multiset")]
        unigram: OverlapMode,
        #[arg(long, default_value_t = 0.5)]
        arm_jaccard: f64,
    },
    /// Filter and select sense pseudolabels, then export a training set.
    Pseudolabel {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        snippets: PathBuf,
        #[arg(long)]
        inventory: PathBuf,
        /// JSON Lines of {id, vector}; TF-IDF of the snippets otherwise.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        min_overlap: usize,
        #[arg(long, default_value_t = 0.75)]
        keep_fraction: f64,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        no_stratify: bool,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Replace expansions with their acronyms to derive labeled examples.
    ReverseSub {
        #[arg(long)]
        snippets: PathBuf,
        #[arg(long)]
        inventory: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        snippets_out: Option<PathBuf>,
        #[arg(long)]
        gold_out: Option<PathBuf>,
    },
    /// Inspect a replay store.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    List { store: PathBuf },
    Verify { store: PathBuf },
}

fn print_json<T: serde::Serialize>(x: &T) {
    println!("{}", serde_json::to_string_pretty(x).expect("serializable"));
}

fn execute(cli: Cli) -> Result<i32, PipelineError> {
    match cli.command {
        Command::Run {
            task,
            template,
            templates,
            backend,
            store,
            record,
            snippets,
            inventory,
            output,
            engine,
            max_tokens,
            gap_fill,
        } => {
            let backend = match (backend, record, store) {
                (BackendKind::Replay, false, Some(store)) => Backend::Replay { store },
                (BackendKind::Replay, false, None) => {
                    return Err(PipelineError::Config("replay backend needs --store".into()))
                }
                (BackendKind::Replay, true, _) => {
                    return Err(PipelineError::Config("--record requires --backend live".into()))
                }
                (BackendKind::Live, true, None) => {
                    return Err(PipelineError::Config("--record needs --store".into()))
                }
                (BackendKind::Live, true, store) => Backend::Live { record: store },
                (BackendKind::Live, false, _) => Backend::Live { record: None },
            };
            let mut config = RunConfig::new(task, &template, backend, &snippets, &output);
            config.templates = templates;
            config.inventory = inventory;
            config.engine = engine;
            config.max_tokens = max_tokens;
            config.gap_fill = gap_fill;
            let summary = pipeline::cmd_run(&config)?;
            eprintln!(
                "{} snippets, {} failed ({} API)",
                summary.total, summary.failed, summary.api_failures
            );
            Ok(summary.exit_code())
        }
        Command::Eval {
            task,
            predictions,
            gold,
            csv,
            unigram,
            arm_jaccard,
        } => {
            let opts = EvalOptions {
                unigram_mode: match unigram {
                    OverlapMode::Multiset => UnigramMode::Multiset,
                    OverlapMode::Set => UnigramMode::Set,
                },
                arms: ArmMatchConfig {
                    jaccard_threshold: arm_jaccard,
                },
            };
            let out = pipeline::cmd_eval(&predictions, &gold, task, &opts)?;
            print_json(&out.report);
            if let Some(p) = csv {
                std::fs::write(&p, out.csv).map_err(|e| PipelineError::Io(format!("{}: {e}", p.display())))?;
            }
            Ok(0)
        }
        Command::Pseudolabel {
            predictions,
            snippets,
            inventory,
            features,
            min_overlap,
            keep_fraction,
            k,
            no_stratify,
            output,
        } => {
            let config = SelectionConfig {
                min_overlap,
                keep_fraction,
                k_neighbors: k,
                stratify_by_group: !no_stratify,
            };
            let s = pipeline::cmd_pseudolabel(
                &predictions,
                &snippets,
                &inventory,
                features.as_deref(),
                &config,
                &output,
            )?;
            print_json(&s);
            Ok(0)
        }
        Command::ReverseSub {
            snippets,
            inventory,
            output,
            seed,
            sample,
            snippets_out,
            gold_out,
        } => {
            let s = pipeline::cmd_reverse_sub(
                &snippets,
                &inventory,
                &output,
                ReverseSubConfig { seed, sample },
                snippets_out.as_deref(),
                gold_out.as_deref(),
            )?;
            print_json(&s);
            Ok(if s.roundtrip_failures == 0 { 0 } else { 1 })
        }
        Command::Cache { action } => match action {
            CacheAction::List { store } => {
                for e in pipeline::cmd_cache_list(&store)? {
                    println!("{}", serde_json::to_string(&e).expect("serializable"));
                }
                Ok(0)
            }
            CacheAction::Verify { store } => {
                let r = pipeline::cmd_cache_verify(&store)?;
                for p in &r.problems {
                    eprintln!("{p}");
                }
                println!("{} lines, {} problems", r.lines, r.problems.len());
                Ok(if r.ok() { 0 } else { 1 })
            }
        },
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
