//! Unimodal encoders: a transformer over precomputed frame features, and a
//! weight-shared text encoder serving both the tag and caption paths.
//!
//! Text attention is bidirectional with additive key masks over `[PAD]`
//! positions; the overall text representation is the final-layer `[EOS]`
//! state through a path-specific projection, L2-normalized. Visual rows are
//! L2-normalized as well.

use crate::datagen::Vocabulary;
use crate::model::{BoundBlock, BoundText, BoundVisual, ModelConfig};
use crate::numerics::{Graph, Scalar, TensorId};

/// Additive logit for masked attention keys. Large enough that the masked
/// weight underflows to exactly zero after max-subtraction.
pub const ATTN_MASK_NEG: f64 = -1e9;

/// Per-layer head-averaged attention matrices captured during a forward.
pub type AttnTrace = Vec<Vec<f64>>;

#[derive(Debug)]
pub enum ForwardError {
    MissingEos,
    FrameCount { expected: usize, got: usize },
    FrameDim { expected: usize, got: usize },
    TokenOutOfRange { id: usize, vocab: usize },
    SequenceTooLong { len: usize, max: usize },
    ZeroProjection,
}

impl std::fmt::Display for ForwardError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ForwardError::MissingEos => write!(f, "token sequence has no [EOS]"),
            ForwardError::FrameCount { expected, got } => {
                write!(f, "expected {expected} frames, got {got}")
            }
            ForwardError::FrameDim { expected, got } => {
                write!(f, "expected frame dim {expected}, got {got}")
            }
            ForwardError::TokenOutOfRange { id, vocab } => {
                write!(f, "token id {id} outside vocabulary of size {vocab}")
            }
            ForwardError::SequenceTooLong { len, max } => {
                write!(f, "sequence of {len} tokens exceeds maximum {max}")
            }
            ForwardError::ZeroProjection => {
                write!(f, "projected vector has zero norm and cannot be normalized")
            }
        }
    }
}

impl std::error::Error for ForwardError {}

/// Pre-LN transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
/// `key_mask` is an additive `[len]` vector applied to every score row.
/// With `trace` set, pushes the head-averaged attention matrix.
pub fn block_forward<S: Scalar>(
    g: &mut Graph<S>,
    bp: &BoundBlock,
    x: TensorId,
    heads: usize,
    key_mask: Option<TensorId>,
    mut trace: Option<&mut AttnTrace>,
) -> TensorId {
    let (len, d) = (g.shape(x)[0], g.shape(x)[1]);
    let dh = d / heads;

    let a = g.layer_norm(x, bp.ln1_gain, bp.ln1_bias, 1e-5);
    let q = g.matmul(a, bp.wq);
    let q = g.add_row_broadcast(q, bp.bq);
    let k = g.matmul(a, bp.wk);
    let k = g.add_row_broadcast(k, bp.bk);
    let v = g.matmul(a, bp.wv);
    let v = g.add_row_broadcast(v, bp.bv);

    let mut head_outs = Vec::with_capacity(heads);
    let mut head_probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt);
        let scores = g.scale_const(scores, 1.0 / (dh as f64).sqrt());
        let scores = match key_mask {
            Some(mask) => g.add_row_broadcast(scores, mask),
            None => scores,
        };
        let probs = g.softmax(scores, 1);
        head_probs.push(probs);
        head_outs.push(g.matmul(probs, vh));
    }
    if let Some(t) = trace.as_deref_mut() {
        let mut mean = vec![0.0f64; len * len];
        for &p in &head_probs {
            for (m, &v) in mean.iter_mut().zip(g.data(p)) {
                *m += v.to_f64();
            }
        }
        for m in mean.iter_mut() {
            *m /= heads as f64;
        }
        t.push(mean);
    }

    let attn = g.concat(&head_outs, 1);
    let attn = g.matmul(attn, bp.wo);
    let attn = g.add_row_broadcast(attn, bp.bo);
    let x = g.add(x, attn);

    let m = g.layer_norm(x, bp.ln2_gain, bp.ln2_bias, 1e-5);
    let h1 = g.matmul(m, bp.mlp_w1);
    let h1 = g.add_row_broadcast(h1, bp.mlp_b1);
    let h1 = g.gelu(h1);
    let h2 = g.matmul(h1, bp.mlp_w2);
    let h2 = g.add_row_broadcast(h2, bp.mlp_b2);
    g.add(x, h2)
}

/// Encode N frame feature vectors into L2-normalized rows `[N, d]`.
pub fn encode_frames<S: Scalar>(
    g: &mut Graph<S>,
    vp: &BoundVisual,
    cfg: &ModelConfig,
    frames: &[Vec<f32>],
) -> Result<TensorId, ForwardError> {
    if frames.len() != cfg.num_frames {
        return Err(ForwardError::FrameCount { expected: cfg.num_frames, got: frames.len() });
    }
    for f in frames {
        if f.len() != cfg.frame_dim {
            return Err(ForwardError::FrameDim { expected: cfg.frame_dim, got: f.len() });
        }
    }
    let flat: Vec<S> =
        frames.iter().flat_map(|f| f.iter().map(|&v| S::from_f64(v as f64))).collect();
    let x = g.leaf(flat, vec![cfg.num_frames, cfg.frame_dim], false);
    let x = g.matmul(x, vp.in_proj_w);
    let x = g.add_row_broadcast(x, vp.in_proj_b);
    let mut x = g.add(x, vp.pos_emb);
    for bp in &vp.blocks {
        x = block_forward(g, bp, x, cfg.heads, None, None);
    }
    let x = g.layer_norm(x, vp.final_ln_gain, vp.final_ln_bias, 1e-5);
    let x = g.matmul(x, vp.out_proj);
    Ok(g.l2_norm_rows(x))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextPath {
    Tag,
    Caption,
}

#[derive(Debug)]
pub struct TextEncodeOut {
    /// Final-layer states `[len, d]` with `[PAD]` rows zeroed; pre-projection.
    pub seq: TensorId,
    /// Projected, L2-normalized `[EOS]` state `[1, d]`.
    pub overall: TensorId,
    pub eos_pos: usize,
}

/// Shared-block text encoding; `path` picks the final projection only.
pub fn encode_text<S: Scalar>(
    g: &mut Graph<S>,
    tp: &BoundText,
    cfg: &ModelConfig,
    tokens: &[usize],
    path: TextPath,
) -> Result<TextEncodeOut, ForwardError> {
    let len = tokens.len();
    if len > cfg.max_text_len() {
        return Err(ForwardError::SequenceTooLong { len, max: cfg.max_text_len() });
    }
    for &t in tokens {
        if t >= cfg.vocab_size {
            return Err(ForwardError::TokenOutOfRange { id: t, vocab: cfg.vocab_size });
        }
    }
    let eos_pos = tokens
        .iter()
        .position(|&t| t == Vocabulary::EOS)
        .ok_or(ForwardError::MissingEos)?;

    // Padding is positional: everything after the first [EOS]. Masked slots
    // are excluded from attention and zeroed in the returned sequence, so
    // whatever ids sit there cannot reach any output.
    let mask_data: Vec<S> = (0..len)
        .map(|i| if i > eos_pos { S::from_f64(ATTN_MASK_NEG) } else { S::ZERO })
        .collect();
    let key_mask = g.leaf(mask_data, vec![len], false);
    let gate_data: Vec<S> =
        (0..len).map(|i| if i > eos_pos { S::ZERO } else { S::ONE }).collect();
    let pad_gate = g.leaf(gate_data, vec![len], false);

    let emb = g.gather_rows(tp.token_emb, tokens);
    let pos = g.slice_rows(tp.pos_emb, 0, len);
    let mut x = g.add(emb, pos);
    for bp in &tp.blocks {
        x = block_forward(g, bp, x, cfg.heads, Some(key_mask), None);
    }
    let x = g.layer_norm(x, tp.final_ln_gain, tp.final_ln_bias, 1e-5);
    let seq = g.mul_col_broadcast(x, pad_gate);

    let eos_state = g.slice_rows(x, eos_pos, 1);
    let proj = match path {
        TextPath::Tag => tp.tag_proj,
        TextPath::Caption => tp.cap_proj,
    };
    let projected = g.matmul(eos_state, proj);
    if g.data(projected).iter().all(|v| v.to_f64() == 0.0) {
        return Err(ForwardError::ZeroProjection);
    }
    let overall = g.l2_norm_rows(projected);
    Ok(TextEncodeOut { seq, overall, eos_pos })
}
