//! Cross-modal fusion: the tag-guiding encoder over `[frames; tag]`, pooled
//! video representation with learnable residual weight, the projected
//! cosine similarity, and the joint `[vision, tag, text]` encoder with the
//! matching and masked-word heads.
//!
//! One block set serves both the tag-guiding and joint passes; the sharing
//! is by identity of the bound tensors, not by copy.

use crate::datagen::Vocabulary;
use crate::encoders::{block_forward, AttnTrace, ForwardError, ATTN_MASK_NEG};
use crate::model::{BoundCross, BoundProj, ModelConfig};
use crate::numerics::{Graph, Scalar, TensorId};

/// Tag-side input to the tag-guiding encoder: the overall `[EOS]` embedding
/// (default) or the full tag token sequence (long-video variant).
pub enum TagInput<'a> {
    Overall(TensorId),
    AllTokens { seq: TensorId, tokens: &'a [usize] },
}

/// Segment table `[3, d]` in slot order frame/tag/text.
fn segment_table<S: Scalar>(g: &mut Graph<S>, cross: &BoundCross) -> TensorId {
    g.concat(&[cross.seg_frame, cross.seg_tag, cross.seg_text], 0)
}

/// Position of the first padded slot within a token sequence: everything
/// after the first `[EOS]`.
fn eos_position(tokens: &[usize]) -> Result<usize, ForwardError> {
    tokens.iter().position(|&t| t == Vocabulary::EOS).ok_or(ForwardError::MissingEos)
}

/// Fuse frame rows `[N, d]` with the tag anchor through the shared blocks.
/// Returns the fused sequence (`[N+1, d]` in overall mode).
pub fn tg_encode<S: Scalar>(
    g: &mut Graph<S>,
    cross: &BoundCross,
    cfg: &ModelConfig,
    v: TensorId,
    tag: &TagInput,
    mut trace: Option<&mut AttnTrace>,
) -> Result<TensorId, ForwardError> {
    let n = cfg.num_frames;
    let (seq, seg_idx, key_mask) = match tag {
        TagInput::Overall(t_e) => {
            let seq = g.concat(&[v, *t_e], 0);
            let mut seg = vec![0usize; n];
            seg.push(1);
            (seq, seg, None)
        }
        TagInput::AllTokens { seq: tag_seq, tokens } => {
            let eos = eos_position(tokens)?;
            let k = g.shape(*tag_seq)[0];
            let seq = g.concat(&[v, *tag_seq], 0);
            let mut seg = vec![0usize; n];
            seg.extend(std::iter::repeat(1).take(k));
            let mask: Vec<S> = (0..n + k)
                .map(|i| {
                    if i >= n && i - n > eos {
                        S::from_f64(ATTN_MASK_NEG)
                    } else {
                        S::ZERO
                    }
                })
                .collect();
            let mask = g.leaf(mask, vec![n + k], false);
            (seq, seg, Some(mask))
        }
    };
    let slots = seg_idx.len();
    let pos = g.slice_rows(cross.pos_emb, 0, slots);
    let seq = g.add(seq, pos);
    let seg_table = segment_table(g, cross);
    let seg = g.gather_rows(seg_table, &seg_idx);
    let mut x = g.add(seq, seg);
    for bp in &cross.blocks {
        x = block_forward(g, bp, x, cfg.heads, key_mask, trace.as_deref_mut());
    }
    Ok(x)
}

#[derive(Debug)]
pub struct PooledVideo {
    /// Mean over all fused rows.
    pub g_o: TensorId,
    /// lambda * g_o + mean(v); the retrieval-side video representation.
    pub g_hat: TensorId,
}

pub fn pool_and_residual<S: Scalar>(
    g: &mut Graph<S>,
    cross: &BoundCross,
    fused: TensorId,
    v: TensorId,
) -> PooledVideo {
    let g_o = g.mean_axis(fused, 0);
    let mean_v = g.mean_axis(v, 0);
    let weighted = g.mul_scalar_t(g_o, cross.lambda);
    let g_hat = g.add(weighted, mean_v);
    PooledVideo { g_o, g_hat }
}

fn project_normalized<S: Scalar>(
    g: &mut Graph<S>,
    x: TensorId,
    proj: TensorId,
) -> Result<TensorId, ForwardError> {
    let p = g.matmul(x, proj);
    let (rows, cols) = (g.shape(p)[0], g.shape(p)[1]);
    for i in 0..rows {
        let row = &g.data(p)[i * cols..(i + 1) * cols];
        if row.iter().all(|v| v.to_f64() == 0.0) {
            return Err(ForwardError::ZeroProjection);
        }
    }
    Ok(g.l2_norm_rows(p))
}

/// s(V, T) = normalize(phi(g_hat)) . normalize(psi(c_e)), a `[1,1]` tensor
/// in [-1, 1].
pub fn similarity<S: Scalar>(
    g: &mut Graph<S>,
    proj: &BoundProj,
    g_hat: TensorId,
    c_e: TensorId,
) -> Result<TensorId, ForwardError> {
    let a = project_normalized(g, g_hat, proj.video_proj)?;
    let b = project_normalized(g, c_e, proj.text_proj)?;
    let bt = g.transpose(b);
    Ok(g.matmul(a, bt))
}

/// All-pairs similarity matrix `[B_v, B_t]`: rows are videos, columns texts.
pub fn batch_similarity<S: Scalar>(
    g: &mut Graph<S>,
    proj: &BoundProj,
    g_hats: &[TensorId],
    c_es: &[TensorId],
) -> Result<TensorId, ForwardError> {
    let gm = g.concat(g_hats, 0);
    let cm = g.concat(c_es, 0);
    let a = project_normalized(g, gm, proj.video_proj)?;
    let b = project_normalized(g, cm, proj.text_proj)?;
    let bt = g.transpose(b);
    Ok(g.matmul(a, bt))
}

#[derive(Debug)]
pub struct JointOut {
    /// Output at the first slot, the joint video-text representation `[1, d]`.
    pub joint_repr: TensorId,
    /// Outputs at the text slots `[M, d]`, padded rows zeroed.
    pub text_positions: TensorId,
}

/// Joint pass over `[v_1..v_N; tag; text_1..text_M]` through the same
/// shared blocks. `text_seq` must be the text encoder's final-layer states
/// (pre-projection); `text_tokens` supplies the padding structure.
pub fn joint_encode<S: Scalar>(
    g: &mut Graph<S>,
    cross: &BoundCross,
    cfg: &ModelConfig,
    v: TensorId,
    tag_overall: TensorId,
    text_seq: TensorId,
    text_tokens: &[usize],
    mut trace: Option<&mut AttnTrace>,
) -> Result<JointOut, ForwardError> {
    let n = cfg.num_frames;
    let m = g.shape(text_seq)[0];
    if m != text_tokens.len() {
        return Err(ForwardError::SequenceTooLong { len: text_tokens.len(), max: m });
    }
    let eos = eos_position(text_tokens)?;

    let seq = g.concat(&[v, tag_overall, text_seq], 0);
    let slots = n + 1 + m;
    // In all-tokens mode the positional table has extra tag slots; text
    // positions stay at the tail so both passes index consistently.
    let text_pos_start = cfg.cross_slots() - cfg.max_cap_len;
    let head_pos = g.slice_rows(cross.pos_emb, 0, n + 1);
    let text_pos = g.slice_rows(cross.pos_emb, text_pos_start, m);
    let pos = g.concat(&[head_pos, text_pos], 0);
    let seq = g.add(seq, pos);

    let mut seg_idx = vec![0usize; n];
    seg_idx.push(1);
    seg_idx.extend(std::iter::repeat(2).take(m));
    let seg_table = segment_table(g, cross);
    let seg = g.gather_rows(seg_table, &seg_idx);
    let mut x = g.add(seq, seg);

    let mask: Vec<S> = (0..slots)
        .map(|i| {
            if i > n && i - (n + 1) > eos {
                S::from_f64(ATTN_MASK_NEG)
            } else {
                S::ZERO
            }
        })
        .collect();
    let key_mask = g.leaf(mask, vec![slots], false);

    for bp in &cross.blocks {
        x = block_forward(g, bp, x, cfg.heads, Some(key_mask), trace.as_deref_mut());
    }

    let joint_repr = g.slice_rows(x, 0, 1);
    let text_out = g.slice_rows(x, n + 1, m);
    let gate: Vec<S> = (0..m).map(|i| if i > eos { S::ZERO } else { S::ONE }).collect();
    let gate = g.leaf(gate, vec![m], false);
    let text_positions = g.mul_col_broadcast(text_out, gate);
    Ok(JointOut { joint_repr, text_positions })
}

/// Binary match/no-match logits `[O, 2]` from joint representations.
pub fn vtm_head<S: Scalar>(g: &mut Graph<S>, cross: &BoundCross, reprs: TensorId) -> TensorId {
    let logits = g.matmul(reprs, cross.vtm_w);
    g.add_row_broadcast(logits, cross.vtm_b)
}

/// Vocabulary logits `[rows, V]` for masked-word prediction.
pub fn mlm_head<S: Scalar>(g: &mut Graph<S>, cross: &BoundCross, states: TensorId) -> TensorId {
    let logits = g.matmul(states, cross.mlm_w);
    g.add_row_broadcast(logits, cross.mlm_b)
}
