//! Training objectives: symmetric contrastive loss with learnable
//! temperature, video-text matching over mined hard negatives, and masked
//! language modeling with the 15% / 80-10-10 scheme. Natural log throughout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datagen::Vocabulary;
use crate::numerics::{Graph, Scalar, TensorId};

/// Clamp window for the effective contrastive logit scale exp(w).
pub const TEMP_SCALE_MIN: f64 = 1.0;
pub const TEMP_SCALE_MAX: f64 = 100.0;

/// Clamp w so exp(w) stays in [TEMP_SCALE_MIN, TEMP_SCALE_MAX]; applied
/// after every optimizer step.
pub fn clamp_temp_w(w: &mut f32) {
    let lo = TEMP_SCALE_MIN.ln() as f32;
    let hi = TEMP_SCALE_MAX.ln() as f32;
    *w = w.clamp(lo, hi);
}

#[derive(Debug)]
pub enum ObjectiveError {
    NonSquare { rows: usize, cols: usize },
    BatchTooSmall { batch: usize },
    NoMaskableTokens,
    NoMaskedPositions,
}

impl std::fmt::Display for ObjectiveError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ObjectiveError::NonSquare { rows, cols } => {
                write!(f, "similarity matrix must be square during training, got {rows}x{cols}")
            }
            ObjectiveError::BatchTooSmall { batch } => {
                write!(f, "negative mining needs a batch of at least 2, got {batch}")
            }
            ObjectiveError::NoMaskableTokens => {
                write!(f, "caption has no maskable (non-special) tokens")
            }
            ObjectiveError::NoMaskedPositions => {
                write!(f, "masked-language loss over an empty position set")
            }
        }
    }
}

impl std::error::Error for ObjectiveError {}

#[derive(Debug)]
pub struct ContrastiveLosses {
    pub t2v: TensorId,
    pub v2t: TensorId,
    /// (t2v + v2t) / 2.
    pub total: TensorId,
}

/// Symmetric InfoNCE over a square similarity matrix whose rows are videos,
/// columns texts, diagonal the positive pairs. `temp_w` is the learnable
/// temperature parameter; logits are `S * exp(temp_w)`.
///
/// Text-to-video normalizes each column over the candidate videos;
/// video-to-text each row over the candidate texts.
pub fn contrastive_loss<S: Scalar>(
    g: &mut Graph<S>,
    s_matrix: TensorId,
    temp_w: TensorId,
) -> Result<ContrastiveLosses, ObjectiveError> {
    let shape = g.shape(s_matrix);
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(ObjectiveError::NonSquare {
            rows: shape[0],
            cols: if shape.len() > 1 { shape[1] } else { 0 },
        });
    }
    let scale = g.exp(temp_w);
    let scaled = g.mul_scalar_t(s_matrix, scale);

    let lsm_cols = g.log_softmax(scaled, 0);
    let diag_t2v = g.diag(lsm_cols);
    let mean_t2v = g.mean_all(diag_t2v);
    let t2v = g.neg(mean_t2v);

    let lsm_rows = g.log_softmax(scaled, 1);
    let diag_v2t = g.diag(lsm_rows);
    let mean_v2t = g.mean_all(diag_v2t);
    let v2t = g.neg(mean_v2t);

    let sum = g.add(t2v, v2t);
    let total = g.scale_const(sum, 0.5);
    Ok(ContrastiveLosses { t2v, v2t, total })
}

/// In-batch hard negatives: for video i sample a text j != i with
/// probability softmax over row i of `s * mining_scale` (diagonal excluded),
/// and symmetrically a video for each text over the columns.
/// `s` is the detached row-major similarity matrix.
pub fn mine_hard_negatives(
    s: &[f64],
    batch: usize,
    mining_scale: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), ObjectiveError> {
    if batch < 2 {
        return Err(ObjectiveError::BatchTooSmall { batch });
    }
    assert_eq!(s.len(), batch * batch, "similarity matrix shape mismatch");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let sample_excluding = |scores: &[f64], skip: usize, rng: &mut ChaCha8Rng| -> usize {
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in scores.iter().enumerate() {
            if j != skip {
                max = max.max(v * mining_scale);
            }
        }
        let weights: Vec<f64> = scores
            .iter()
            .enumerate()
            .map(|(j, &v)| if j == skip { 0.0 } else { (v * mining_scale - max).exp() })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut u: f64 = rng.gen::<f64>() * total;
        for (j, &w) in weights.iter().enumerate() {
            u -= w;
            if u < 0.0 && j != skip {
                return j;
            }
        }
        // numerical tail: last non-skip index
        (0..batch).rev().find(|&j| j != skip).unwrap()
    };

    let mut neg_text = Vec::with_capacity(batch);
    for i in 0..batch {
        let row: Vec<f64> = s[i * batch..(i + 1) * batch].to_vec();
        neg_text.push(sample_excluding(&row, i, &mut rng));
    }
    let mut neg_video = Vec::with_capacity(batch);
    for j in 0..batch {
        let col: Vec<f64> = (0..batch).map(|i| s[i * batch + j]).collect();
        neg_video.push(sample_excluding(&col, j, &mut rng));
    }
    Ok((neg_text, neg_video))
}

/// Mean binary cross-entropy over (logit pair, label) rows, natural log.
pub fn vtm_loss<S: Scalar>(
    g: &mut Graph<S>,
    logit_pairs: TensorId,
    labels: &[usize],
) -> TensorId {
    let shape = g.shape(logit_pairs);
    assert_eq!(shape[1], 2, "vtm logits must be [O, 2]");
    assert_eq!(shape[0], labels.len(), "one label per logit pair");
    assert!(!labels.is_empty(), "vtm loss needs at least one pair");
    let lsm = g.log_softmax(logit_pairs, 1);
    let picked = g.pick_per_row(lsm, labels);
    let mean = g.mean_all(picked);
    g.neg(mean)
}

/// A caption after mask application.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedCaption {
    pub tokens: Vec<usize>,
    /// Masked positions, ascending.
    pub positions: Vec<usize>,
    /// Original token ids at `positions`.
    pub labels: Vec<usize>,
}

/// Select each non-special token independently with probability 15% and
/// replace it by `[MASK]` (80%), a random word token (10%), or itself (10%).
/// If nothing got selected, one maskable position is forced so the loss is
/// always defined. Special tokens are never masked.
pub fn apply_mlm_mask(
    tokens: &[usize],
    vocab: &Vocabulary,
    seed: u64,
) -> Result<MaskedCaption, ObjectiveError> {
    let maskable: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| !Vocabulary::is_special(t))
        .map(|(i, _)| i)
        .collect();
    if maskable.is_empty() {
        return Err(ObjectiveError::NoMaskableTokens);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected: Vec<usize> =
        maskable.iter().copied().filter(|_| rng.gen::<f64>() < 0.15).collect();
    if selected.is_empty() {
        selected.push(maskable[rng.gen_range(0..maskable.len())]);
    }

    let mut out = tokens.to_vec();
    let mut labels = Vec::with_capacity(selected.len());
    let word_range = vocab.word_id_range();
    for &pos in &selected {
        labels.push(tokens[pos]);
        let r: f64 = rng.gen();
        if r < 0.8 {
            out[pos] = Vocabulary::MASK;
        } else if r < 0.9 {
            out[pos] = rng.gen_range(word_range.clone());
        } // else keep the original token
    }
    Ok(MaskedCaption { tokens: out, positions: selected, labels })
}

/// Mean cross-entropy over all masked positions across the batch, natural
/// log. Each entry pairs per-sample vocabulary logits (rows = that sample's
/// masked positions) with the original ids.
pub fn mlm_loss<S: Scalar>(
    g: &mut Graph<S>,
    per_sample_logits: &[TensorId],
    per_sample_labels: &[Vec<usize>],
) -> Result<TensorId, ObjectiveError> {
    assert_eq!(per_sample_logits.len(), per_sample_labels.len());
    let mut labels = Vec::new();
    let mut parts = Vec::new();
    for (&logits, l) in per_sample_logits.iter().zip(per_sample_labels) {
        assert_eq!(g.shape(logits)[0], l.len(), "one label per masked row");
        if !l.is_empty() {
            parts.push(logits);
            labels.extend_from_slice(l);
        }
    }
    if labels.is_empty() {
        return Err(ObjectiveError::NoMaskedPositions);
    }
    let all = g.concat(&parts, 0);
    let lsm = g.log_softmax(all, 1);
    let picked = g.pick_per_row(lsm, &labels);
    let mean = g.mean_all(picked);
    Ok(g.neg(mean))
}

/// L = w1*L_con + w2*L_vtm + w3*L_mlm.
pub fn total_loss<S: Scalar>(
    g: &mut Graph<S>,
    l_con: TensorId,
    l_vtm: TensorId,
    l_mlm: TensorId,
    weights: [f64; 3],
) -> TensorId {
    let a = g.scale_const(l_con, weights[0]);
    let b = g.scale_const(l_vtm, weights[1]);
    let c = g.scale_const(l_mlm, weights[2]);
    let ab = g.add(a, b);
    g.add(ab, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Vec<f64> {
        (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Scalar-loop contrastive oracle: column softmax for t2v, row for v2t.
    fn contrastive_oracle(s: &[f64], b: usize, scale: f64) -> (f64, f64, f64) {
        let mut t2v = 0.0;
        for i in 0..b {
            let denom: f64 = (0..b).map(|j| (s[j * b + i] * scale).exp()).sum();
            t2v -= ((s[i * b + i] * scale).exp() / denom).ln();
        }
        t2v /= b as f64;
        let mut v2t = 0.0;
        for i in 0..b {
            let denom: f64 = (0..b).map(|j| (s[i * b + j] * scale).exp()).sum();
            v2t -= ((s[i * b + i] * scale).exp() / denom).ln();
        }
        v2t /= b as f64;
        (t2v, v2t, 0.5 * (t2v + v2t))
    }

    fn eval_contrastive(s: &[f64], b: usize, w: f64) -> (f64, f64, f64) {
        let mut g: Graph<f64> = Graph::new();
        let sm = g.leaf(s.to_vec(), vec![b, b], false);
        let tw = g.leaf(vec![w], vec![1], false);
        let losses = contrastive_loss(&mut g, sm, tw).unwrap();
        (g.value(losses.t2v), g.value(losses.v2t), g.value(losses.total))
    }

    #[test]
    fn contrastive_single_pair_is_zero() {
        let (t2v, v2t, total) = eval_contrastive(&[0.73], 1, 10f64.ln());
        assert_eq!(t2v, 0.0);
        assert_eq!(v2t, 0.0);
        assert_eq!(total, 0.0);
    }

    #[test]
    fn contrastive_uniform_matrix_is_ln_b() {
        for &b in &[2usize, 5, 8] {
            let s = vec![0.42; b * b];
            let (_, _, total) = eval_contrastive(&s, b, 3.0f64.ln());
            assert!((total - (b as f64).ln()).abs() < 1e-9, "B={b}: {total}");
        }
    }

    #[test]
    fn contrastive_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let b = rng.gen_range(2..=8);
            let s = rand_matrix(&mut rng, b, b);
            let w = 10f64.ln();
            let (t2v, v2t, total) = eval_contrastive(&s, b, w);
            let (ot2v, ov2t, ototal) = contrastive_oracle(&s, b, w.exp());
            assert!((t2v - ot2v).abs() < 1e-10);
            assert!((v2t - ov2t).abs() < 1e-10);
            assert!((total - ototal).abs() < 1e-10);
        }
    }

    #[test]
    fn contrastive_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = 6;
        let s = rand_matrix(&mut rng, b, b);
        let shifted: Vec<f64> = s.iter().map(|v| v + 0.37).collect();
        let (_, _, a) = eval_contrastive(&s, b, 10f64.ln());
        let (_, _, bb) = eval_contrastive(&shifted, b, 10f64.ln());
        assert!((a - bb).abs() < 1e-6);
    }

    #[test]
    fn contrastive_non_square_is_error() {
        let mut g: Graph<f64> = Graph::new();
        let sm = g.leaf(vec![0.0; 6], vec![2, 3], false);
        let tw = g.leaf(vec![0.0], vec![1], false);
        match contrastive_loss(&mut g, sm, tw) {
            Err(ObjectiveError::NonSquare { rows: 2, cols: 3 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn contrastive_identity_beats_permutations() {
        // argmin at identity: margin-diagonal matrix scores lower than any
        // row permutation of it
        let b = 5;
        let margin = 5.0;
        let mut s = vec![0.0f64; b * b];
        for i in 0..b {
            s[i * b + i] = margin;
        }
        let (_, _, base) = eval_contrastive(&s, b, 10f64.ln());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            // random non-identity permutation of rows
            let mut perm: Vec<usize> = (0..b).collect();
            for i in (1..b).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            if perm.iter().enumerate().all(|(i, &p)| i == p) {
                continue;
            }
            let mut permuted = vec![0.0f64; b * b];
            for i in 0..b {
                permuted[i * b..(i + 1) * b]
                    .copy_from_slice(&s[perm[i] * b..(perm[i] + 1) * b]);
            }
            let (_, _, p) = eval_contrastive(&permuted, b, 10f64.ln());
            assert!(base < p, "identity {base} not below permutation {p}");
        }
    }

    #[test]
    fn contrastive_tends_to_ln_b_as_scale_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let b = 7;
        let s = rand_matrix(&mut rng, b, b);
        // w -> -inf drives the logits flat; the loss approaches ln B
        let (_, _, total) = eval_contrastive(&s, b, -20.0);
        assert!((total - (b as f64).ln()).abs() < 1e-6, "{total}");
    }

    #[test]
    fn losses_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..100 {
            let b = rng.gen_range(2..=8);
            let s = rand_matrix(&mut rng, b, b);
            let (t2v, v2t, total) = eval_contrastive(&s, b, rng.gen_range(-1.0..3.0));
            assert!(t2v >= 0.0 && v2t >= 0.0 && total >= 0.0);

            let o = rng.gen_range(1..6);
            let logits = rand_matrix(&mut rng, o, 2);
            let labels: Vec<usize> = (0..o).map(|_| rng.gen_range(0..2)).collect();
            let mut g: Graph<f64> = Graph::new();
            let lt = g.leaf(logits, vec![o, 2], false);
            let vtm = vtm_loss(&mut g, lt, &labels);
            assert!(g.value(vtm) >= 0.0);

            let v = rng.gen_range(4..20);
            let rows = rng.gen_range(1..4);
            let logits = rand_matrix(&mut rng, rows, v);
            let labels: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..v)).collect();
            let lt = g.leaf(logits, vec![rows, v], false);
            let mlm = mlm_loss(&mut g, &[lt], &[labels]).unwrap();
            assert!(g.value(mlm) >= 0.0);
        }
    }

    #[test]
    fn mining_b2_picks_the_only_candidate() {
        let s = vec![0.9, 0.1, 0.2, 0.8];
        let (nt, nv) = mine_hard_negatives(&s, 2, 10.0, 0).unwrap();
        assert_eq!(nt, vec![1, 0]);
        assert_eq!(nv, vec![1, 0]);
    }

    #[test]
    fn mining_prefers_high_similarity() {
        // row 0: strong negative at index 1
        let b = 4;
        let mut s = vec![-10.0f64; b * b];
        for i in 0..b {
            s[i * b + i] = 1.0;
        }
        s[1] = 10.0; // S[0][1]
        let mut hits = 0;
        for trial in 0..10_000u64 {
            let (nt, _) = mine_hard_negatives(&s, b, 10.0, trial).unwrap();
            if nt[0] == 1 {
                hits += 1;
            }
        }
        assert!(hits > 9_900, "index 1 frequency {hits}/10000");
    }

    #[test]
    fn mining_never_returns_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..2_000u64 {
            let b = rng.gen_range(2..=8);
            let s = rand_matrix(&mut rng, b, b);
            let (nt, nv) = mine_hard_negatives(&s, b, 10.0, trial).unwrap();
            for i in 0..b {
                assert_ne!(nt[i], i);
                assert_ne!(nv[i], i);
            }
        }
    }

    #[test]
    fn mining_batch_of_one_is_error() {
        match mine_hard_negatives(&[1.0], 1, 10.0, 0) {
            Err(ObjectiveError::BatchTooSmall { batch: 1 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn mining_marginals_match_softmax() {
        // empirical frequencies vs analytic softmax within 3-sigma binomial
        let b = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let s = rand_matrix(&mut rng, b, b);
        let scale = 4.0;
        let n = 20_000u64;
        let mut counts = vec![vec![0u64; b]; b];
        for trial in 0..n {
            let (nt, _) = mine_hard_negatives(&s, b, scale, 1_000_000 + trial).unwrap();
            for i in 0..b {
                counts[i][nt[i]] += 1;
            }
        }
        for i in 0..b {
            let row = &s[i * b..(i + 1) * b];
            let denom: f64 =
                (0..b).filter(|&j| j != i).map(|j| (row[j] * scale).exp()).sum();
            for j in 0..b {
                if j == i {
                    assert_eq!(counts[i][j], 0);
                    continue;
                }
                let p = (row[j] * scale).exp() / denom;
                let sigma = (p * (1.0 - p) / n as f64).sqrt();
                let emp = counts[i][j] as f64 / n as f64;
                assert!(
                    (emp - p).abs() <= 3.0 * sigma + 1e-9,
                    "cell ({i},{j}): emp {emp:.4} vs p {p:.4} (sigma {sigma:.5})"
                );
            }
        }
    }

    #[test]
    fn vtm_uniform_logits_is_ln_2() {
        let mut g: Graph<f64> = Graph::new();
        let logits = g.leaf(vec![0.3; 10], vec![5, 2], false);
        let loss = vtm_loss(&mut g, logits, &[1, 0, 1, 1, 0]);
        assert!((g.value(loss) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn vtm_perfect_prediction_tends_to_zero() {
        let mut g: Graph<f64> = Graph::new();
        let logits = g.leaf(vec![20.0, -20.0, -20.0, 20.0], vec![2, 2], false);
        let loss = vtm_loss(&mut g, logits, &[0, 1]);
        assert!(g.value(loss) < 1e-8);
    }

    #[test]
    fn vtm_matches_scalar_bce_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..200 {
            let o = 9;
            let logits = rand_matrix(&mut rng, o, 2);
            let labels: Vec<usize> = (0..o).map(|_| rng.gen_range(0..2)).collect();
            let mut g: Graph<f64> = Graph::new();
            let lt = g.leaf(logits.clone(), vec![o, 2], false);
            let loss = vtm_loss(&mut g, lt, &labels);
            let mut oracle = 0.0;
            for i in 0..o {
                let (a, b) = (logits[i * 2], logits[i * 2 + 1]);
                let denom = a.exp() + b.exp();
                let p = if labels[i] == 0 { a.exp() / denom } else { b.exp() / denom };
                oracle -= p.ln();
            }
            oracle /= o as f64;
            assert!((g.value(loss) - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn mask_is_deterministic_per_seed() {
        let vocab = Vocabulary::standard();
        let tokens = crate::datagen::tokenize("a woman is cooking in the kitchen", &vocab, 12);
        let a = apply_mlm_mask(&tokens, &vocab, 99).unwrap();
        let b = apply_mlm_mask(&tokens, &vocab, 99).unwrap();
        assert_eq!(a, b);
        assert!(!a.positions.is_empty());
    }

    #[test]
    fn mask_statistics() {
        // 15% selection and the 80/10/10 replacement split, measured over
        // long sequences so the force-one-mask rule is negligible
        let vocab = Vocabulary::standard();
        let words_per_seq = 25usize;
        let seqs = 4_500usize;
        let mut tokens = vec![Vocabulary::BOS];
        tokens.extend(
            (0..words_per_seq).map(|i| Vocabulary::FIRST_WORD + (i % 30)),
        );
        tokens.push(Vocabulary::EOS);

        let mut selected = 0usize;
        let mut masked = 0usize;
        let mut randomized = 0usize;
        let mut kept = 0usize;
        for seed in 0..seqs {
            let m = apply_mlm_mask(&tokens, &vocab, seed as u64).unwrap();
            selected += m.positions.len();
            for (&pos, &label) in m.positions.iter().zip(&m.labels) {
                assert!(!Vocabulary::is_special(label));
                let now = m.tokens[pos];
                if now == Vocabulary::MASK {
                    masked += 1;
                } else if now == label {
                    kept += 1;
                } else {
                    randomized += 1;
                }
            }
        }
        let total_maskable = (seqs * words_per_seq) as f64;
        assert!(total_maskable >= 1e5);
        let rate = selected as f64 / total_maskable;
        assert!((rate - 0.15).abs() < 0.01, "selection rate {rate}");
        let sf = selected as f64;
        assert!((masked as f64 / sf - 0.8).abs() < 0.02, "mask fraction {}", masked as f64 / sf);
        assert!(
            (randomized as f64 / sf - 0.1).abs() < 0.02,
            "random fraction {}",
            randomized as f64 / sf
        );
        assert!((kept as f64 / sf - 0.1).abs() < 0.02, "keep fraction {}", kept as f64 / sf);
    }

    #[test]
    fn mask_never_touches_specials() {
        let vocab = Vocabulary::standard();
        let tokens = crate::datagen::tokenize("a man is dancing", &vocab, 10);
        let special_positions: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| Vocabulary::is_special(t))
            .map(|(i, _)| i)
            .collect();
        for seed in 0..10_000u64 {
            let m = apply_mlm_mask(&tokens, &vocab, seed).unwrap();
            for &sp in &special_positions {
                assert!(!m.positions.contains(&sp));
            }
        }
    }

    #[test]
    fn mask_forces_at_least_one() {
        let vocab = Vocabulary::standard();
        // single maskable word: selection may miss it, force rule kicks in
        let tokens = vec![Vocabulary::BOS, Vocabulary::FIRST_WORD + 2, Vocabulary::EOS];
        for seed in 0..500u64 {
            let m = apply_mlm_mask(&tokens, &vocab, seed).unwrap();
            assert_eq!(m.positions, vec![1]);
        }
    }

    #[test]
    fn mask_all_specials_is_error() {
        let vocab = Vocabulary::standard();
        let tokens = vec![Vocabulary::BOS, Vocabulary::EOS, Vocabulary::PAD];
        match apply_mlm_mask(&tokens, &vocab, 0) {
            Err(ObjectiveError::NoMaskableTokens) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn mlm_uniform_logits_is_ln_v() {
        let v = 37;
        let mut g: Graph<f64> = Graph::new();
        let logits = g.leaf(vec![0.1; v], vec![1, v], false);
        let loss = mlm_loss(&mut g, &[logits], &[vec![5]]).unwrap();
        assert!((g.value(loss) - (v as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn mlm_perfect_logits_tend_to_zero() {
        let v = 11;
        let mut g: Graph<f64> = Graph::new();
        let mut data = vec![-30.0; 2 * v];
        data[3] = 30.0;
        data[v + 7] = 30.0;
        let logits = g.leaf(data, vec![2, v], false);
        let loss = mlm_loss(&mut g, &[logits], &[vec![3, 7]]).unwrap();
        assert!(g.value(loss) < 1e-8);
    }

    #[test]
    fn mlm_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(321);
        for _ in 0..200 {
            let v = 23;
            let samples = rng.gen_range(1..4usize);
            let mut logit_ids = Vec::new();
            let mut labels = Vec::new();
            let mut g: Graph<f64> = Graph::new();
            let mut flat_rows: Vec<(Vec<f64>, usize)> = Vec::new();
            for _ in 0..samples {
                let rows = rng.gen_range(1..4usize);
                let data = rand_matrix(&mut rng, rows, v);
                let sample_labels: Vec<usize> =
                    (0..rows).map(|_| rng.gen_range(0..v)).collect();
                for r in 0..rows {
                    flat_rows.push((data[r * v..(r + 1) * v].to_vec(), sample_labels[r]));
                }
                logit_ids.push(g.leaf(data, vec![rows, v], false));
                labels.push(sample_labels);
            }
            let loss = mlm_loss(&mut g, &logit_ids, &labels).unwrap();
            let mut oracle = 0.0;
            for (row, label) in &flat_rows {
                let denom: f64 = row.iter().map(|x| x.exp()).sum();
                oracle -= (row[*label].exp() / denom).ln();
            }
            oracle /= flat_rows.len() as f64;
            assert!((g.value(loss) - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn mlm_empty_positions_is_error() {
        let mut g: Graph<f64> = Graph::new();
        match mlm_loss(&mut g, &[], &[]) {
            Err(ObjectiveError::NoMaskedPositions) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn total_loss_is_weighted_sum() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.leaf(vec![1.5], vec![1], false);
        let b = g.leaf(vec![0.25], vec![1], false);
        let c = g.leaf(vec![2.0], vec![1], false);
        let l = total_loss(&mut g, a, b, c, [1.0, 1.0, 1.0]);
        assert!((g.value(l) - 3.75).abs() < 1e-12);
        let l2 = total_loss(&mut g, a, b, c, [1.0, 0.0, 0.0]);
        assert!((g.value(l2) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn total_loss_gradients_are_component_sums() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(vec![0.4, -0.2], vec![2], true);
        let sq = g.mul(x, x);
        let a = g.sum_all(sq); // grad 2x
        let b = g.mean_all(x); // grad 0.5 each
        let c = g.sum_all(x); // grad 1 each
        let l = total_loss(&mut g, a, b, c, [1.0, 2.0, 3.0]);
        g.backward(l);
        let grad = g.grad(x).unwrap();
        for (i, &xv) in [0.4, -0.2].iter().enumerate() {
            let want = 2.0 * xv + 2.0 * 0.5 + 3.0;
            assert!((grad[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn temperature_clamp_window() {
        let mut w = 10.0f32;
        clamp_temp_w(&mut w);
        assert!((w.exp() - 100.0).abs() < 1e-3);
        let mut w = -3.0f32;
        clamp_temp_w(&mut w);
        assert!(w.exp() >= 1.0 - 1e-6);
        let mut w = 2.0f32;
        clamp_temp_w(&mut w);
        assert_eq!(w, 2.0);
    }
}
