//! Command-line surface: `gen-data`, `train`, `eval [--dsl]`, `rollout`.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use tagalign_core::datagen::{generate_corpus, read_jsonl, write_jsonl};
use tagalign_core::eval::{attention_rollout, evaluate, render_attention, trace_tg, DEFAULT_DSL_TEMP};
use tagalign_core::model::load_checkpoint;
use tagalign_core::trainer::{train, TrainConfig};

#[derive(Parser)]
#[command(name = "tagalign", version, about = "Tag-anchored video-text retrieval at desk scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic video-text corpus as JSON Lines.
    GenData {
        #[arg(long, default_value_t = 512)]
        num: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Frame feature noise sigma.
        #[arg(long, default_value_t = 0.05)]
        sigma: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a JSONL corpus; writes checkpoint.bin and metrics.csv.
    Train {
        /// JSON file with training-config fields; defaults apply to any
        /// field left out.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Retrieval metrics in both directions for a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Apply dual-softmax score revision before ranking.
        #[arg(long)]
        dsl: bool,
        #[arg(long, default_value_t = DEFAULT_DSL_TEMP)]
        dsl_temp: f64,
        /// Accepted for interface uniformity; evaluation is deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Attention-rollout SVG for one record.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "record-id")]
        record_id: String,
        #[arg(long)]
        out: PathBuf,
        /// Accepted for interface uniformity; the rollout is deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenData { num, seed, sigma, out } => {
            let corpus = generate_corpus(num, seed, sigma);
            write_jsonl(&out, &corpus).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} records to {}", corpus.len(), out.display());
        }
        Cmd::Train { config, data, out, seed } => {
            let mut cfg: TrainConfig = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let corpus =
                read_jsonl(&data).with_context(|| format!("reading {}", data.display()))?;
            let outcome = train(&corpus, &cfg, Some(&out)).map_err(|e| anyhow::anyhow!("{e}"))?;
            for s in &outcome.stats {
                println!(
                    "epoch {}  L_con {:.4}  L_vtm {:.4}  L_mlm {:.4}  val R@1 {:.2}",
                    s.epoch, s.l_con, s.l_vtm, s.l_mlm, s.val_r1
                );
            }
            println!("checkpoint: {}", out.join("checkpoint.bin").display());
        }
        Cmd::Eval { checkpoint, data, dsl, dsl_temp, seed: _ } => {
            let (params, vocab, _) =
                load_checkpoint(&checkpoint).map_err(|e| anyhow::anyhow!("{e}"))?;
            let corpus =
                read_jsonl(&data).with_context(|| format!("reading {}", data.display()))?;
            let dsl_arg = dsl.then_some(dsl_temp);
            let (t2v, v2t) =
                evaluate(&params, &vocab, &corpus, dsl_arg).map_err(|e| anyhow::anyhow!("{e}"))?;
            println!("direction   R@1     R@5     R@10    MdR    MnR");
            println!("{t2v}");
            println!("{v2t}");
            println!(
                "{}",
                serde_json::to_string(&serde_json::json!({"t2v": t2v, "v2t": v2t, "dsl": dsl}))?
            );
        }
        Cmd::Rollout { checkpoint, data, record_id, out, seed: _ } => {
            let (params, vocab, _) =
                load_checkpoint(&checkpoint).map_err(|e| anyhow::anyhow!("{e}"))?;
            let corpus =
                read_jsonl(&data).with_context(|| format!("reading {}", data.display()))?;
            let Some(record) = corpus.iter().find(|r| r.id == record_id) else {
                bail!("no record with id {record_id:?} in {}", data.display());
            };
            let trace = trace_tg(&params, &vocab, record).map_err(|e| anyhow::anyhow!("{e}"))?;
            let rollout = attention_rollout(&trace).map_err(|e| anyhow::anyhow!("{e}"))?;
            render_attention(&rollout, &trace.annotations, record, &out)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
