//! Command-line driver: ingestion checks, runs, sweeps, head training,
//! exports and evaluation. Reports go to stdout as JSON, progress and
//! timings to stderr.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use eega::config::PipelineConfig;
use eega::graph::LabelVocabulary;
use eega::pipeline::{head_to_checkpoint, Pipeline, StageTimings};
use eega::synth::{write_synthetic_corpus, SynthOptions};
use eega::tagging::{format_quintuple_line, load_quintuple_file, quintuple_from_raw, MatchCounts};
use eega::train::{evaluate_head, train_head};
use eega::{Error, Result};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "eega", version, about = "Multimodal entity-relation extraction by graph alignment and word-pair tagging")]
struct Cli {
    /// TOML configuration; command-line flags override its values.
    #[arg(long, global = true, env = "EEGA_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a corpus and summarise it; optionally write co-occurrence statistics.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        /// Write the corpus co-occurrence statistics to this cache file.
        #[arg(long)]
        pmi_out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the full pipeline and print the report.
    Run {
        #[arg(long)]
        corpus: PathBuf,
        /// Write predicted quintuples, one JSON line per record.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train the prediction head on frozen features and save a checkpoint.
    TrainHead {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// Checkpoint path for the best head.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every (alpha, lambda) combination and print one row per run.
    Sweep {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write one record's cost, plan, tag grid and channel matrices as TSV files.
    Export {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        record: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score predicted quintuples against gold ones.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Label inventory; the config's when absent.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with planted quintuples.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        records: usize,
        #[arg(long, default_value_t = 70)]
        tokens: usize,
        #[arg(long, default_value_t = 12)]
        objects: usize,
        #[arg(long, default_value_t = 0.3)]
        relation_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Per-run overrides of configuration values.
#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    pmi_cache: Option<PathBuf>,
    #[arg(long)]
    head: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    sinkhorn_inner: Option<usize>,
    #[arg(long)]
    sinkhorn_outer: Option<usize>,
    #[arg(long)]
    text_dim: Option<usize>,
    #[arg(long)]
    visual_dim: Option<usize>,
    #[arg(long)]
    edge_dim: Option<usize>,
    #[arg(long)]
    channel_dim: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    max_objects: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    encoder_layers: Option<usize>,
    #[arg(long)]
    fusion_hidden_layers: Option<usize>,
    #[arg(long)]
    sd_cap: Option<i64>,
    #[arg(long)]
    co_cap: Option<i64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

impl Overrides {
    fn apply(&self, config: &mut PipelineConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    config.$field = v.clone();
                })*
            };
        }
        set!(
            seed, alpha, lambda, epsilon, sinkhorn_inner, sinkhorn_outer, text_dim, visual_dim, edge_dim, channel_dim,
            max_tokens, max_objects, heads, encoder_layers, fusion_hidden_layers, sd_cap, co_cap, learning_rate,
            lr_decay, patience, max_epochs
        );
        for (slot, value) in [
            (&mut config.labels, &self.labels),
            (&mut config.embeddings, &self.embeddings),
            (&mut config.pmi_cache, &self.pmi_cache),
            (&mut config.head, &self.head),
        ] {
            if value.is_some() {
                slot.clone_from(value);
            }
        }
    }
}

/// Defaults, then the TOML file, then flags.
fn resolve_config(path: Option<&Path>, overrides: &Overrides) -> Result<PipelineConfig> {
    let mut config = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

/// Prints a report line to stdout. A closed pipe is not an error.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn print_timings(t: &StageTimings, wall: std::time::Duration) {
    eprintln!(
        "timings (summed over records): encode {:.3}s, align {:.3}s, channels {:.3}s, tagging {:.3}s; wall {:.3}s",
        t.encode.as_secs_f64(),
        t.align.as_secs_f64(),
        t.channels.as_secs_f64(),
        t.tagging.as_secs_f64(),
        wall.as_secs_f64()
    );
}

fn execute(cli: Cli) -> Result<()> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Ingest {
            corpus,
            pmi_out,
            overrides,
        } => {
            let config = resolve_config(config_path, &overrides)?;
            let (pipeline, records) = Pipeline::load(&config, &corpus)?;
            let vocab = &pipeline.resources.vocab;
            if let Some(path) = pmi_out {
                pipeline.resources.pmi.save(&path)?;
                eprintln!("wrote co-occurrence statistics to {}", path.display());
            }
            let summary = json!({
                "records": records.len(),
                "tokens": records.iter().map(|r| r.sentence.len()).sum::<usize>(),
                "objects": records.iter().map(|r| r.visual.len()).sum::<usize>(),
                "gold_quintuples": records.iter().map(|r| r.gold.len()).sum::<usize>(),
                "entity_types": vocab.entity_types(),
                "relation_types": vocab.relation_types(),
                "tags": pipeline.tag_space().len(),
            });
            emit(&serde_json::to_string_pretty(&summary).expect("summary serialises"));
            eprintln!("{}: {} records valid", corpus.display(), records.len());
        }
        Command::Run {
            corpus,
            predictions,
            overrides,
        } => {
            let config = resolve_config(config_path, &overrides)?;
            let start = Instant::now();
            let (pipeline, records) = Pipeline::load(&config, &corpus)?;
            let (report, timings) = pipeline.run(&records)?;
            if let Some(path) = predictions {
                let vocab = &pipeline.resources.vocab;
                let mut text = String::new();
                for r in &report.records {
                    let quints = r
                        .predicted_quintuples
                        .iter()
                        .map(|raw| quintuple_from_raw(raw, vocab))
                        .collect::<Result<Vec<_>>>()?;
                    text.push_str(&format_quintuple_line(&r.id, &quints, vocab));
                    text.push('\n');
                }
                write_file(&path, &text)?;
            }
            emit(&report.to_json());
            eprintln!(
                "{} records: precision {:.4}, recall {:.4}, f1 {:.4}, mean joint loss {:.4}",
                report.records.len(),
                report.precision,
                report.recall,
                report.f1,
                report.mean(|r| r.joint_loss)
            );
            print_timings(&timings, start.elapsed());
        }
        Command::TrainHead {
            train,
            dev,
            out,
            overrides,
        } => {
            // A trained head is only reproducible with an explicit seed.
            let Some(seed) = overrides.seed else {
                return Err(Error::Config {
                    field: "seed",
                    message: "train-head requires --seed".into(),
                });
            };
            let config = resolve_config(config_path, &overrides)?;
            let start = Instant::now();
            let (pipeline, corpora) = Pipeline::load_many(&config, &[&train, &dev])?;
            let train_examples = pipeline.examples(&corpora[0])?;
            let dev_examples = pipeline.examples(&corpora[1])?;
            eprintln!(
                "features for {} train and {} dev records in {:.3}s",
                train_examples.len(),
                dev_examples.len(),
                start.elapsed().as_secs_f64()
            );
            let outcome = train_head(
                pipeline.model.head.clone(),
                &train_examples,
                &dev_examples,
                &config.train_options(),
            )?;
            head_to_checkpoint(&outcome.head).save(&out)?;
            let (train_acc, train_metrics) = evaluate_head(&outcome.head, &train_examples)?;
            let (dev_acc, dev_metrics) = evaluate_head(&outcome.head, &dev_examples)?;
            let summary = json!({
                "seed": seed,
                "best_epoch": outcome.best_epoch,
                "stopped_early": outcome.stopped_early,
                "train_cell_accuracy": train_acc,
                "dev_cell_accuracy": dev_acc,
                "train": train_metrics,
                "dev": dev_metrics,
                "curve": outcome.curve,
            });
            emit(&serde_json::to_string_pretty(&summary).expect("summary serialises"));
            eprintln!(
                "best epoch {} of {}; dev cell accuracy {:.4}, dev f1 {:.4}; saved {} in {:.3}s",
                outcome.best_epoch,
                outcome.curve.len(),
                dev_acc,
                dev_metrics.f1,
                out.display(),
                start.elapsed().as_secs_f64()
            );
        }
        Command::Sweep {
            corpus,
            alphas,
            lambdas,
            overrides,
        } => {
            let config = resolve_config(config_path, &overrides)?;
            let start = Instant::now();
            let (pipeline, records) = Pipeline::load(&config, &corpus)?;
            let rows = pipeline.sweep(&records, &alphas, &lambdas)?;
            let table: Vec<_> = rows
                .iter()
                .map(|r| {
                    json!({
                        "alpha": r.alpha,
                        "lambda": r.lambda,
                        "precision": r.precision,
                        "recall": r.recall,
                        "f1": r.f1,
                        "mean_loss_graph": r.mean(|x| x.loss_graph),
                        "mean_joint_loss": r.mean(|x| x.joint_loss),
                    })
                })
                .collect();
            emit(&serde_json::to_string_pretty(&table).expect("sweep serialises"));
            for r in &rows {
                eprintln!("alpha {:<6} lambda {:<6} f1 {:.4}", r.alpha, r.lambda, r.f1);
            }
            eprintln!("{} runs in {:.3}s", rows.len(), start.elapsed().as_secs_f64());
        }
        Command::Export {
            corpus,
            record,
            out_dir,
            overrides,
        } => {
            let config = resolve_config(config_path, &overrides)?;
            let (pipeline, records) = Pipeline::load(&config, &corpus)?;
            let written = pipeline.export(&records, &record, &out_dir)?;
            let paths: Vec<_> = written.iter().map(|p| p.display().to_string()).collect();
            emit(&serde_json::to_string_pretty(&paths).expect("paths serialise"));
        }
        Command::Eval { pred, gold, labels } => {
            let config = resolve_config(config_path, &Overrides::default())?;
            let vocab = match labels.or(config.labels) {
                Some(path) => LabelVocabulary::load(&path)?,
                None => LabelVocabulary::default(),
            };
            let predicted = load_quintuple_file(&pred, &vocab)?;
            let gold = load_quintuple_file(&gold, &vocab)?;
            let mut counts = MatchCounts::default();
            for (id, g) in &gold {
                let p = predicted.iter().find(|(pid, _)| pid == id).map_or(&[][..], |(_, q)| q);
                counts.add(MatchCounts::of(p, g));
            }
            for (id, p) in &predicted {
                if !gold.iter().any(|(gid, _)| gid == id) {
                    eprintln!("warning: prediction for {id} has no gold record");
                    counts.add(MatchCounts::of(p, &[]));
                }
            }
            emit(counts.metrics().to_key_values().trim_end());
        }
        Command::Synth {
            out_dir,
            records,
            tokens,
            objects,
            relation_rate,
            seed,
        } => {
            let options = SynthOptions {
                records,
                tokens,
                objects,
                relation_rate,
                seed,
            };
            write_synthetic_corpus(&out_dir, &options)?;
            eprintln!("wrote {records} records to {}", out_dir.join("corpus.jsonl").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
