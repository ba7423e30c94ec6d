//! Training orchestration: seeded train/val split, batched forward of the
//! contrastive + matching + masked-word objectives, reverse pass, global
//! gradient clipping, two-group Adam with linear-warmup/cosine-decay
//! learning rates, temperature clamping and per-epoch checkpoints.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{tokenize, VideoRecord, Vocabulary};
use crate::encoders::{encode_frames, encode_text, ForwardError, TextPath};
use crate::eval::{compute_metrics, score_matrix, Direction, EvalError};
use crate::fusion::{
    batch_similarity, joint_encode, mlm_head, pool_and_residual, tg_encode, vtm_head, TagInput,
};
use crate::model::{
    param_group, save_checkpoint, CheckpointError, ModelConfig, ModelParams, ParamGroup,
    TagTokensMode,
};
use crate::numerics::{Graph, TensorId};
use crate::objectives::{
    apply_mlm_mask, clamp_temp_w, contrastive_loss, mine_hard_negatives, mlm_loss, total_loss,
    vtm_loss, ObjectiveError,
};
use crate::seeding::derive_seed;
use crate::tagging::concat_tags;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate for the unimodal encoder group.
    pub lr_encoders: f64,
    /// Learning rate for the cross-modal group (fusion blocks, projections,
    /// heads, lambda, temperature).
    pub lr_cross: f64,
    pub warmup_frac: f64,
    pub seed: u64,
    /// Weights of (contrastive, matching, masked-word) in the total loss.
    pub loss_weights: [f64; 3],
    /// Logit scale for hard-negative sampling.
    pub mining_scale: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Fraction of the corpus used for training; the rest is held out.
    pub train_frac: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            lr_encoders: 1e-3,
            lr_cross: 1e-3,
            warmup_frac: 0.1,
            seed: 7,
            loss_weights: [1.0, 1.0, 1.0],
            mining_scale: 10.0,
            grad_clip: 1.0,
            train_frac: 0.8,
            model: ModelConfig::default(),
        }
    }
}

#[derive(Debug)]
pub enum TrainError {
    CorpusTooSmall { records: usize },
    VocabSize { expected: usize, got: usize },
    BatchTooSmall { batch: usize },
    NanLoss { step: usize, l_con: f64, l_vtm: f64, l_mlm: f64 },
    Forward(ForwardError),
    Objective(ObjectiveError),
    Eval(EvalError),
    Checkpoint(CheckpointError),
    Io(std::io::Error),
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainError::CorpusTooSmall { records } => {
                write!(f, "training needs at least 4 records, got {records}")
            }
            TrainError::VocabSize { expected, got } => write!(
                f,
                "model config expects vocab of {expected}, corpus vocabulary has {got}"
            ),
            TrainError::BatchTooSmall { batch } => {
                write!(f, "batch size must be at least 2 for mining, got {batch}")
            }
            TrainError::NanLoss { step, l_con, l_vtm, l_mlm } => write!(
                f,
                "non-finite loss at step {step}: L_con={l_con} L_vtm={l_vtm} L_mlm={l_mlm}"
            ),
            TrainError::Forward(e) => write!(f, "{e}"),
            TrainError::Objective(e) => write!(f, "{e}"),
            TrainError::Eval(e) => write!(f, "{e}"),
            TrainError::Checkpoint(e) => write!(f, "{e}"),
            TrainError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ForwardError> for TrainError {
    fn from(e: ForwardError) -> Self {
        TrainError::Forward(e)
    }
}
impl From<ObjectiveError> for TrainError {
    fn from(e: ObjectiveError) -> Self {
        TrainError::Objective(e)
    }
}
impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        TrainError::Eval(e)
    }
}
impl From<CheckpointError> for TrainError {
    fn from(e: CheckpointError) -> Self {
        TrainError::Checkpoint(e)
    }
}
impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e)
    }
}

// ── learning-rate schedule ──────────────────────────────────────────────

/// Linear warmup from 0 to `base_lr`, then cosine decay to 0 at
/// `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64, warmup_frac: f64) -> f64 {
    assert!(step <= total_steps, "step {step} beyond total {total_steps}");
    let warmup = (total_steps as f64 * warmup_frac).round() as usize;
    if warmup > 0 && step <= warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    if total_steps == warmup {
        return base_lr;
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

// ── Adam ────────────────────────────────────────────────────────────────

/// First/second moment buffers per parameter, in canonical visit order.
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub step: usize,
}

impl AdamState {
    pub fn new(params: &ModelParams<f32>) -> Self {
        let mut m = Vec::new();
        params.visit(|_, p| m.push(vec![0.0f32; p.numel()]));
        let v = m.clone();
        AdamState { m, v, step: 0 }
    }
}

/// One bias-corrected Adam update for a single parameter tensor.
pub fn adam_update(
    data: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    step: usize,
    lr: f64,
) {
    assert_eq!(data.len(), grad.len(), "gradient shape mismatch");
    let b1c = 1.0 - ADAM_BETA1.powi(step as i32);
    let b2c = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..data.len() {
        let g = grad[i] as f64;
        let mi = ADAM_BETA1 * m[i] as f64 + (1.0 - ADAM_BETA1) * g;
        let vi = ADAM_BETA2 * v[i] as f64 + (1.0 - ADAM_BETA2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let m_hat = mi / b1c;
        let v_hat = vi / b2c;
        data[i] = (data[i] as f64 - lr * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32;
    }
}

// ── training loop ───────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_con: f64,
    pub l_vtm: f64,
    pub l_mlm: f64,
    pub val_r1: f64,
}

pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub vocab: Vocabulary,
    pub stats: Vec<EpochStats>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

struct Prepped {
    frames: Vec<Vec<f32>>,
    tag_tokens: Vec<usize>,
    cap_tokens: Vec<usize>,
}

/// Seeded shuffle split into (train, validation) index sets.
pub fn split_corpus(n: usize, seed: u64, train_frac: f64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x5917]));
    idx.shuffle(&mut rng);
    let train_n = ((n as f64) * train_frac).round() as usize;
    let train_n = train_n.clamp(1, n.saturating_sub(1));
    let val = idx.split_off(train_n);
    (idx, val)
}

pub fn train(
    corpus: &[VideoRecord],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    if corpus.len() < 4 {
        return Err(TrainError::CorpusTooSmall { records: corpus.len() });
    }
    if cfg.batch_size < 2 {
        return Err(TrainError::BatchTooSmall { batch: cfg.batch_size });
    }
    let vocab = Vocabulary::standard();
    if cfg.model.vocab_size != vocab.len() {
        return Err(TrainError::VocabSize { expected: cfg.model.vocab_size, got: vocab.len() });
    }
    let mcfg = &cfg.model;

    // exhaustive registry walk: every tensor lands in exactly one group
    let init_params: ModelParams<f32> = ModelParams::init(mcfg, cfg.seed);
    let (mut enc_count, mut cross_count) = (0usize, 0usize);
    init_params.visit(|name, _| match param_group(name) {
        ParamGroup::Encoders => enc_count += 1,
        ParamGroup::CrossModal => cross_count += 1,
    });
    assert!(enc_count > 0 && cross_count > 0, "parameter group partition is degenerate");

    let prepped: Vec<Prepped> = corpus
        .iter()
        .map(|r| Prepped {
            frames: r.frames.clone(),
            tag_tokens: tokenize(&concat_tags(&r.tags), &vocab, mcfg.max_tag_len),
            cap_tokens: tokenize(&r.caption, &vocab, mcfg.max_cap_len),
        })
        .collect();

    let (train_idx, val_idx) = split_corpus(corpus.len(), cfg.seed, cfg.train_frac);
    let batches_per_epoch = {
        let n = train_idx.len();
        let full = n / cfg.batch_size;
        let rem = n % cfg.batch_size;
        full + usize::from(rem >= 2)
    };
    let total_steps = cfg.epochs * batches_per_epoch.max(1);

    let mut params = init_params;
    let mut adam = AdamState::new(&params);
    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0usize;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), "epoch,L_con,L_vtm,L_mlm,val_R@1\n")?;
    }

    for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0xE70C, epoch as u64]));
        order.shuffle(&mut rng);

        let mut sums = [0.0f64; 3];
        let mut steps_this_epoch = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let records: Vec<&Prepped> = batch.iter().map(|&i| &prepped[i]).collect();
            let losses = train_step(
                &mut params,
                &mut adam,
                &records,
                cfg,
                &vocab,
                global_step,
                total_steps,
            )?;
            sums[0] += losses[0];
            sums[1] += losses[1];
            sums[2] += losses[2];
            steps_this_epoch += 1;
            global_step += 1;
        }
        let denom = steps_this_epoch.max(1) as f64;

        let val_records: Vec<VideoRecord> =
            val_idx.iter().map(|&i| corpus[i].clone()).collect();
        let val_r1 = if val_records.len() >= 2 {
            let s = score_matrix(&params, &vocab, &val_records)?;
            let truth: Vec<usize> = (0..val_records.len()).collect();
            compute_metrics(&s.transposed(), &truth, Direction::T2V)?.r1
        } else {
            0.0
        };

        let entry = EpochStats {
            epoch,
            l_con: sums[0] / denom,
            l_vtm: sums[1] / denom,
            l_mlm: sums[2] / denom,
            val_r1,
        };
        if let Some(dir) = out_dir {
            let mut f = std::fs::OpenOptions::new()
                .append(true)
                .open(dir.join("metrics.csv"))?;
            writeln!(
                f,
                "{},{:.6},{:.6},{:.6},{:.3}",
                entry.epoch, entry.l_con, entry.l_vtm, entry.l_mlm, entry.val_r1
            )?;
            save_checkpoint(
                &dir.join("checkpoint.bin"),
                &params,
                &vocab,
                serde_json::json!({"epoch": epoch, "val_r1": val_r1}),
            )?;
        }
        stats.push(entry);
    }

    Ok(TrainOutcome { params, vocab, stats, train_indices: train_idx, val_indices: val_idx })
}

/// One optimization step over a batch. Returns (L_con, L_vtm, L_mlm).
fn train_step(
    params: &mut ModelParams<f32>,
    adam: &mut AdamState,
    batch: &[&Prepped],
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    global_step: usize,
    total_steps: usize,
) -> Result<[f64; 3], TrainError> {
    let mcfg = &cfg.model;
    let b = batch.len();
    let use_vtm = cfg.loss_weights[1] != 0.0;
    let use_mlm = cfg.loss_weights[2] != 0.0;

    let mut g: Graph<f32> = Graph::new();
    let bound = params.bind(&mut g, true);

    let mut vs = Vec::with_capacity(b);
    let mut tags = Vec::with_capacity(b);
    let mut caps = Vec::with_capacity(b);
    for p in batch {
        vs.push(encode_frames(&mut g, &bound.visual, mcfg, &p.frames)?);
        tags.push(encode_text(&mut g, &bound.text, mcfg, &p.tag_tokens, TextPath::Tag)?);
        caps.push(encode_text(&mut g, &bound.text, mcfg, &p.cap_tokens, TextPath::Caption)?);
    }

    let mut g_hats = Vec::with_capacity(b);
    for i in 0..b {
        let tag_input = match mcfg.tag_tokens_mode {
            TagTokensMode::Overall => TagInput::Overall(tags[i].overall),
            TagTokensMode::AllTokens => {
                TagInput::AllTokens { seq: tags[i].seq, tokens: &batch[i].tag_tokens }
            }
        };
        let fused = tg_encode(&mut g, &bound.cross, mcfg, vs[i], &tag_input, None)?;
        let pooled = pool_and_residual(&mut g, &bound.cross, fused, vs[i]);
        g_hats.push(pooled.g_hat);
    }
    let cap_overalls: Vec<TensorId> = caps.iter().map(|c| c.overall).collect();
    let s = batch_similarity(&mut g, &bound.proj, &g_hats, &cap_overalls)?;
    let con = contrastive_loss(&mut g, s, bound.temp_w)?;

    let l_vtm = if use_vtm {
        let s_data: Vec<f64> = g.data(s).iter().map(|&v| v as f64).collect();
        let (neg_text, neg_video) = mine_hard_negatives(
            &s_data,
            b,
            cfg.mining_scale,
            derive_seed(&[cfg.seed, 0x319E, global_step as u64]),
        )?;
        let mut reprs = Vec::with_capacity(3 * b);
        for i in 0..b {
            let out = joint_encode(
                &mut g,
                &bound.cross,
                mcfg,
                vs[i],
                tags[i].overall,
                caps[i].seq,
                &batch[i].cap_tokens,
                None,
            )?;
            reprs.push(out.joint_repr);
        }
        for i in 0..b {
            let j = neg_text[i];
            let out = joint_encode(
                &mut g,
                &bound.cross,
                mcfg,
                vs[i],
                tags[i].overall,
                caps[j].seq,
                &batch[j].cap_tokens,
                None,
            )?;
            reprs.push(out.joint_repr);
        }
        for i in 0..b {
            let j = neg_video[i];
            let out = joint_encode(
                &mut g,
                &bound.cross,
                mcfg,
                vs[j],
                tags[j].overall,
                caps[i].seq,
                &batch[i].cap_tokens,
                None,
            )?;
            reprs.push(out.joint_repr);
        }
        let all = g.concat(&reprs, 0);
        let logits = vtm_head(&mut g, &bound.cross, all);
        let mut labels = vec![1usize; b];
        labels.extend(std::iter::repeat(0).take(2 * b));
        vtm_loss(&mut g, logits, &labels)
    } else {
        g.leaf(vec![0.0], vec![1], false)
    };

    let l_mlm = if use_mlm {
        let mut logit_ids = Vec::with_capacity(b);
        let mut label_sets = Vec::with_capacity(b);
        for i in 0..b {
            let masked = apply_mlm_mask(
                &batch[i].cap_tokens,
                vocab,
                derive_seed(&[cfg.seed, 0x3135, global_step as u64, i as u64]),
            )?;
            let enc = encode_text(&mut g, &bound.text, mcfg, &masked.tokens, TextPath::Caption)?;
            let out = joint_encode(
                &mut g,
                &bound.cross,
                mcfg,
                vs[i],
                tags[i].overall,
                enc.seq,
                &masked.tokens,
                None,
            )?;
            let states = g.gather_rows(out.text_positions, &masked.positions);
            logit_ids.push(mlm_head(&mut g, &bound.cross, states));
            label_sets.push(masked.labels);
        }
        mlm_loss(&mut g, &logit_ids, &label_sets)?
    } else {
        g.leaf(vec![0.0], vec![1], false)
    };

    let total = total_loss(&mut g, con.total, l_vtm, l_mlm, cfg.loss_weights);
    let loss_values =
        [g.value(con.total) as f64, g.value(l_vtm) as f64, g.value(l_mlm) as f64];
    if !g.value(total).is_finite() || loss_values.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NanLoss {
            step: global_step,
            l_con: loss_values[0],
            l_vtm: loss_values[1],
            l_mlm: loss_values[2],
        });
    }
    g.backward(total);

    let mut grads: Vec<Vec<f32>> = Vec::with_capacity(bound.flat.len());
    for (_, id) in &bound.flat {
        match g.grad(*id) {
            Some(gr) => grads.push(gr.to_vec()),
            None => grads.push(vec![0.0; g.data(*id).len()]),
        }
    }

    // global-norm clip across every parameter
    let norm: f64 = grads
        .iter()
        .flat_map(|gr| gr.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
        let scale = (cfg.grad_clip / norm) as f32;
        for gr in grads.iter_mut() {
            for v in gr.iter_mut() {
                *v *= scale;
            }
        }
    }

    adam.step += 1;
    let sched_step = (global_step + 1).min(total_steps);
    let lr_enc = lr_schedule(sched_step, total_steps, cfg.lr_encoders, cfg.warmup_frac);
    let lr_cross = lr_schedule(sched_step, total_steps, cfg.lr_cross, cfg.warmup_frac);
    let step = adam.step;
    let mut i = 0usize;
    params.visit_mut(|name, p| {
        let lr = match param_group(name) {
            ParamGroup::Encoders => lr_enc,
            ParamGroup::CrossModal => lr_cross,
        };
        adam_update(&mut p.data, &grads[i], &mut adam.m[i], &mut adam.v[i], step, lr);
        i += 1;
    });
    clamp_temp_w(&mut params.temp_w.data[0]);

    Ok(loss_values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_corpus;

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 4,
            model: ModelConfig {
                dim: 16,
                heads: 2,
                text_layers: 1,
                visual_layers: 1,
                cross_layers: 1,
                num_frames: 4,
                frame_dim: 32,
                max_tag_len: 12,
                max_cap_len: 16,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_starts_at_zero() {
        assert_eq!(lr_schedule(0, 100, 1e-3, 0.1), 0.0);
    }

    #[test]
    fn schedule_hits_base_at_warmup_end() {
        let lr = lr_schedule(10, 100, 1e-3, 0.1);
        assert!((lr - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn schedule_ends_at_zero() {
        let lr = lr_schedule(100, 100, 1e-3, 0.1);
        assert!(lr.abs() < 1e-12);
    }

    #[test]
    fn schedule_warmup_is_linear() {
        for step in 0..=10 {
            let lr = lr_schedule(step, 100, 1.0, 0.1);
            assert!((lr - step as f64 / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_single_step_hand_formula() {
        // theta=1, g=0.5, lr=0.1: m_hat=g, v_hat=g^2, delta ~= -lr
        let mut data = vec![1.0f32];
        let mut m = vec![0.0f32];
        let mut v = vec![0.0f32];
        adam_update(&mut data, &[0.5], &mut m, &mut v, 1, 0.1);
        let expected = 1.0 - 0.1 * 0.5 / (0.5f64.powi(2).sqrt() + ADAM_EPS);
        assert!((data[0] as f64 - expected).abs() < 1e-7, "{} vs {expected}", data[0]);
    }

    #[test]
    fn adam_zero_gradient_no_update() {
        let mut data = vec![0.7f32, -0.3];
        let before = data.clone();
        let mut m = vec![0.0f32; 2];
        let mut v = vec![0.0f32; 2];
        adam_update(&mut data, &[0.0, 0.0], &mut m, &mut v, 1, 0.1);
        assert_eq!(data, before);
    }

    #[test]
    fn split_is_disjoint_and_total() {
        let (train, val) = split_corpus(100, 7, 0.8);
        assert_eq!(train.len(), 80);
        assert_eq!(val.len(), 20);
        let mut all: Vec<usize> = train.iter().chain(val.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn zero_learning_rates_leave_params_unchanged() {
        let corpus = generate_corpus(12, 3, 0.1);
        let mut cfg = tiny_train_cfg();
        cfg.lr_encoders = 0.0;
        cfg.lr_cross = 0.0;
        let outcome = train(&corpus, &cfg, None).unwrap();
        let fresh: ModelParams<f32> = ModelParams::init(&cfg.model, cfg.seed);
        assert_eq!(outcome.params, fresh);
    }

    #[test]
    fn frozen_cross_group_only_encoders_move() {
        let corpus = generate_corpus(12, 3, 0.1);
        let mut cfg = tiny_train_cfg();
        cfg.lr_cross = 0.0;
        let outcome = train(&corpus, &cfg, None).unwrap();
        let fresh: ModelParams<f32> = ModelParams::init(&cfg.model, cfg.seed);
        let mut moved_enc = false;
        let mut fresh_params = Vec::new();
        fresh.visit(|name, p| fresh_params.push((name.to_string(), p.data.clone())));
        let mut i = 0;
        outcome.params.visit(|name, p| {
            let (fname, fdata) = &fresh_params[i];
            assert_eq!(name, fname);
            match param_group(name) {
                ParamGroup::CrossModal => assert_eq!(&p.data, fdata, "{name} moved"),
                ParamGroup::Encoders => {
                    if &p.data != fdata {
                        moved_enc = true;
                    }
                }
            }
            i += 1;
        });
        assert!(moved_enc, "encoder group never moved");
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = generate_corpus(16, 5, 0.1);
        let cfg = tiny_train_cfg();
        let a = train(&corpus, &cfg, None).unwrap();
        let b = train(&corpus, &cfg, None).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.stats.len(), b.stats.len());
        for (x, y) in a.stats.iter().zip(&b.stats) {
            assert_eq!(x.l_con, y.l_con);
            assert_eq!(x.val_r1, y.val_r1);
        }
    }

    #[test]
    fn temperature_clamp_holds_after_steps() {
        let corpus = generate_corpus(12, 3, 0.1);
        let mut cfg = tiny_train_cfg();
        cfg.lr_cross = 10.0; // force big temperature moves
        let outcome = train(&corpus, &cfg, None).unwrap();
        let scale = (outcome.params.temp_w.data[0] as f64).exp();
        assert!((1.0..=100.0 + 1e-3).contains(&scale), "scale {scale}");
    }

    #[test]
    fn metrics_csv_and_checkpoint_written() {
        let dir = std::env::temp_dir().join("tagalign-trainer-test");
        let _ = std::fs::remove_dir_all(&dir);
        let corpus = generate_corpus(12, 3, 0.1);
        let cfg = tiny_train_cfg();
        let _ = train(&corpus, &cfg, Some(&dir)).unwrap();
        let csv = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
        assert!(csv.starts_with("epoch,L_con,L_vtm,L_mlm,val_R@1\n"));
        assert_eq!(csv.lines().count(), 1 + cfg.epochs);
        assert!(dir.join("checkpoint.bin").exists());
        let (loaded, _, extra) = crate::model::load_checkpoint(&dir.join("checkpoint.bin")).unwrap();
        assert_eq!(loaded.cfg, cfg.model);
        assert_eq!(extra["epoch"], cfg.epochs as i64 - 1);
    }

    #[test]
    fn contrastive_only_skips_joint_losses() {
        let corpus = generate_corpus(12, 3, 0.1);
        let mut cfg = tiny_train_cfg();
        cfg.loss_weights = [1.0, 0.0, 0.0];
        let outcome = train(&corpus, &cfg, None).unwrap();
        for s in &outcome.stats {
            assert_eq!(s.l_vtm, 0.0);
            assert_eq!(s.l_mlm, 0.0);
        }
    }

    #[test]
    fn checkpoint_round_trip_reproduces_validation() {
        let dir = std::env::temp_dir().join("tagalign-trainer-roundtrip");
        let _ = std::fs::remove_dir_all(&dir);
        let corpus = generate_corpus(20, 9, 0.1);
        let cfg = tiny_train_cfg();
        let outcome = train(&corpus, &cfg, Some(&dir)).unwrap();
        let (loaded, vocab, _) = crate::model::load_checkpoint(&dir.join("checkpoint.bin")).unwrap();
        assert_eq!(loaded, outcome.params);
        let val: Vec<VideoRecord> =
            outcome.val_indices.iter().map(|&i| corpus[i].clone()).collect();
        let s = score_matrix(&loaded, &vocab, &val).unwrap();
        let truth: Vec<usize> = (0..val.len()).collect();
        let r1 = compute_metrics(&s.transposed(), &truth, Direction::T2V).unwrap().r1;
        assert_eq!(r1, outcome.stats.last().unwrap().val_r1);
    }
}
