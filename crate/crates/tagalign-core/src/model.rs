//! Model configuration and the full learnable parameter set.
//!
//! Parameters live outside any graph between steps; [`ModelParams::bind`]
//! inserts each tensor as a leaf exactly once per forward pass, so the tag
//! and caption paths (and the two cross-modal uses) share storage by
//! construction. Every parameter has a canonical dotted name used for
//! optimizer grouping and the checkpoint container.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datagen::Vocabulary;
use crate::numerics::container::{read_container, write_container, ContainerError, NamedTensor};
use crate::numerics::{Graph, Scalar, TensorId};
use crate::seeding::derive_seed;

/// Feed the tag encoder's overall `[EOS]` token to the cross-modal encoder
/// (default), or all tag token outputs (long-video variant).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagTokensMode {
    Overall,
    AllTokens,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding width d; must be divisible by `heads`.
    pub dim: usize,
    pub heads: usize,
    pub text_layers: usize,
    pub visual_layers: usize,
    pub cross_layers: usize,
    /// Frames per video N.
    pub num_frames: usize,
    /// Raw frame feature dimension.
    pub frame_dim: usize,
    pub max_tag_len: usize,
    pub max_cap_len: usize,
    pub vocab_size: usize,
    pub tag_tokens_mode: TagTokensMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            heads: 4,
            text_layers: 2,
            visual_layers: 2,
            cross_layers: 2,
            num_frames: 4,
            frame_dim: 32,
            max_tag_len: 32,
            max_cap_len: 32,
            vocab_size: Vocabulary::standard().len(),
            tag_tokens_mode: TagTokensMode::Overall,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Slot count of the cross-modal positional table.
    pub fn cross_slots(&self) -> usize {
        match self.tag_tokens_mode {
            TagTokensMode::Overall => self.num_frames + 1 + self.max_cap_len,
            TagTokensMode::AllTokens => self.num_frames + self.max_tag_len + self.max_cap_len,
        }
    }

    pub fn max_text_len(&self) -> usize {
        self.max_tag_len.max(self.max_cap_len)
    }

    pub fn validate(&self) {
        assert!(self.dim % self.heads == 0, "dim must be divisible by heads");
        assert!(self.num_frames >= 1 && self.frame_dim >= 1);
        assert!(self.max_tag_len >= 3 && self.max_cap_len >= 3);
        assert!(self.vocab_size > Vocabulary::FIRST_WORD, "vocabulary has no word tokens");
    }
}

/// One learnable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub data: Vec<S>,
    pub shape: Vec<usize>,
}

impl<S: Scalar> Param<S> {
    fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param { data: vec![S::ZERO; n], shape }
    }

    fn full(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Param { data: vec![S::from_f64(v); n], shape }
    }

    fn normal(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                S::from_f64(v * std)
            })
            .collect();
        Param { data, shape }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

macro_rules! block_fields {
    () => {
        [
            "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv",
            "attn.bv", "attn.wo", "attn.bo", "ln2.gain", "ln2.bias", "mlp.w1", "mlp.b1",
            "mlp.w2", "mlp.b2",
        ]
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<S> {
    pub ln1_gain: Param<S>,
    pub ln1_bias: Param<S>,
    pub wq: Param<S>,
    pub bq: Param<S>,
    pub wk: Param<S>,
    pub bk: Param<S>,
    pub wv: Param<S>,
    pub bv: Param<S>,
    pub wo: Param<S>,
    pub bo: Param<S>,
    pub ln2_gain: Param<S>,
    pub ln2_bias: Param<S>,
    pub mlp_w1: Param<S>,
    pub mlp_b1: Param<S>,
    pub mlp_w2: Param<S>,
    pub mlp_b2: Param<S>,
}

impl<S: Scalar> BlockParams<S> {
    fn init(rng: &mut ChaCha8Rng, d: usize) -> Self {
        let h = 4 * d;
        BlockParams {
            ln1_gain: Param::full(vec![d], 1.0),
            ln1_bias: Param::zeros(vec![d]),
            wq: Param::normal(rng, vec![d, d], 0.02),
            bq: Param::zeros(vec![d]),
            wk: Param::normal(rng, vec![d, d], 0.02),
            bk: Param::zeros(vec![d]),
            wv: Param::normal(rng, vec![d, d], 0.02),
            bv: Param::zeros(vec![d]),
            wo: Param::normal(rng, vec![d, d], 0.02),
            bo: Param::zeros(vec![d]),
            ln2_gain: Param::full(vec![d], 1.0),
            ln2_bias: Param::zeros(vec![d]),
            mlp_w1: Param::normal(rng, vec![d, h], 0.02),
            mlp_b1: Param::zeros(vec![h]),
            mlp_w2: Param::normal(rng, vec![h, d], 0.02),
            mlp_b2: Param::zeros(vec![d]),
        }
    }

    fn fields(&self) -> [&Param<S>; 16] {
        [
            &self.ln1_gain, &self.ln1_bias, &self.wq, &self.bq, &self.wk, &self.bk, &self.wv,
            &self.bv, &self.wo, &self.bo, &self.ln2_gain, &self.ln2_bias, &self.mlp_w1,
            &self.mlp_b1, &self.mlp_w2, &self.mlp_b2,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Param<S>; 16] {
        [
            &mut self.ln1_gain, &mut self.ln1_bias, &mut self.wq, &mut self.bq, &mut self.wk,
            &mut self.bk, &mut self.wv, &mut self.bv, &mut self.wo, &mut self.bo,
            &mut self.ln2_gain, &mut self.ln2_bias, &mut self.mlp_w1, &mut self.mlp_b1,
            &mut self.mlp_w2, &mut self.mlp_b2,
        ]
    }
}

/// Tag/caption text encoder. The transformer blocks are one parameter set
/// used by both paths; only the final projections differ.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoderParams<S> {
    pub token_emb: Param<S>,
    pub pos_emb: Param<S>,
    pub blocks: Vec<BlockParams<S>>,
    pub final_ln_gain: Param<S>,
    pub final_ln_bias: Param<S>,
    pub tag_proj: Param<S>,
    pub cap_proj: Param<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisualEncoderParams<S> {
    pub in_proj_w: Param<S>,
    pub in_proj_b: Param<S>,
    pub pos_emb: Param<S>,
    pub blocks: Vec<BlockParams<S>>,
    pub final_ln_gain: Param<S>,
    pub final_ln_bias: Param<S>,
    pub out_proj: Param<S>,
}

/// The cross-modal blocks serve both the tag-guiding pass and the joint
/// [vision, tag, text] pass; `lambda` weights the fused pooled output in the
/// residual combination.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossEncoderParams<S> {
    pub pos_emb: Param<S>,
    pub seg_frame: Param<S>,
    pub seg_tag: Param<S>,
    pub seg_text: Param<S>,
    pub blocks: Vec<BlockParams<S>>,
    pub lambda: Param<S>,
    pub vtm_w: Param<S>,
    pub vtm_b: Param<S>,
    pub mlm_w: Param<S>,
    pub mlm_b: Param<S>,
}

/// Retrieval-space projections: phi (video side) and psi (text side).
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams<S> {
    pub video_proj: Param<S>,
    pub text_proj: Param<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub cfg: ModelConfig,
    pub text: TextEncoderParams<S>,
    pub visual: VisualEncoderParams<S>,
    pub cross: CrossEncoderParams<S>,
    pub proj: ProjectionParams<S>,
    /// Contrastive temperature parameter; effective logit scale is exp(w).
    pub temp_w: Param<S>,
}

/// Initial logit scale exp(w); the post-step clamp window is [1, 100].
pub const INITIAL_TEMP_SCALE: f64 = 10.0;

/// Initial residual weight of the fused pooled output in
/// g_hat = lambda * g_o + mean(v). Zero would cut the only contrastive
/// gradient path into the fusion blocks, so the tag anchor could never
/// engage within a short from-scratch training budget.
pub const INITIAL_LAMBDA: f64 = 0.5;

impl<S: Scalar> ModelParams<S> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        cfg.validate();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x0DE1]));
        let d = cfg.dim;
        let proj_std = 1.0 / (d as f64).sqrt();

        let text = TextEncoderParams {
            token_emb: Param::normal(&mut rng, vec![cfg.vocab_size, d], 0.02),
            pos_emb: Param::normal(&mut rng, vec![cfg.max_text_len(), d], 0.01),
            blocks: (0..cfg.text_layers).map(|_| BlockParams::init(&mut rng, d)).collect(),
            final_ln_gain: Param::full(vec![d], 1.0),
            final_ln_bias: Param::zeros(vec![d]),
            tag_proj: Param::normal(&mut rng, vec![d, d], proj_std),
            cap_proj: Param::normal(&mut rng, vec![d, d], proj_std),
        };
        let visual = VisualEncoderParams {
            in_proj_w: Param::normal(&mut rng, vec![cfg.frame_dim, d], 0.02),
            in_proj_b: Param::zeros(vec![d]),
            pos_emb: Param::normal(&mut rng, vec![cfg.num_frames, d], 0.01),
            blocks: (0..cfg.visual_layers).map(|_| BlockParams::init(&mut rng, d)).collect(),
            final_ln_gain: Param::full(vec![d], 1.0),
            final_ln_bias: Param::zeros(vec![d]),
            out_proj: Param::normal(&mut rng, vec![d, d], proj_std),
        };
        let cross = CrossEncoderParams {
            pos_emb: Param::normal(&mut rng, vec![cfg.cross_slots(), d], 0.01),
            seg_frame: Param::normal(&mut rng, vec![1, d], 0.01),
            seg_tag: Param::normal(&mut rng, vec![1, d], 0.01),
            seg_text: Param::normal(&mut rng, vec![1, d], 0.01),
            blocks: (0..cfg.cross_layers).map(|_| BlockParams::init(&mut rng, d)).collect(),
            lambda: Param::full(vec![1], INITIAL_LAMBDA),
            vtm_w: Param::normal(&mut rng, vec![d, 2], proj_std),
            vtm_b: Param::zeros(vec![2]),
            mlm_w: Param::normal(&mut rng, vec![d, cfg.vocab_size], proj_std),
            mlm_b: Param::zeros(vec![cfg.vocab_size]),
        };
        let proj = ProjectionParams {
            video_proj: Param::normal(&mut rng, vec![d, d], proj_std),
            text_proj: Param::normal(&mut rng, vec![d, d], proj_std),
        };
        ModelParams {
            cfg: cfg.clone(),
            text,
            visual,
            cross,
            proj,
            temp_w: Param::full(vec![1], INITIAL_TEMP_SCALE.ln()),
        }
    }

    /// Walk every parameter with its canonical name, in a fixed order.
    pub fn visit(&self, mut f: impl FnMut(&str, &Param<S>)) {
        f("text.token_emb", &self.text.token_emb);
        f("text.pos_emb", &self.text.pos_emb);
        for (i, b) in self.text.blocks.iter().enumerate() {
            for (name, p) in block_fields!().iter().zip(b.fields()) {
                f(&format!("text.block{i}.{name}"), p);
            }
        }
        f("text.final_ln.gain", &self.text.final_ln_gain);
        f("text.final_ln.bias", &self.text.final_ln_bias);
        f("text.tag_proj", &self.text.tag_proj);
        f("text.cap_proj", &self.text.cap_proj);

        f("visual.in_proj.w", &self.visual.in_proj_w);
        f("visual.in_proj.b", &self.visual.in_proj_b);
        f("visual.pos_emb", &self.visual.pos_emb);
        for (i, b) in self.visual.blocks.iter().enumerate() {
            for (name, p) in block_fields!().iter().zip(b.fields()) {
                f(&format!("visual.block{i}.{name}"), p);
            }
        }
        f("visual.final_ln.gain", &self.visual.final_ln_gain);
        f("visual.final_ln.bias", &self.visual.final_ln_bias);
        f("visual.out_proj", &self.visual.out_proj);

        f("cross.pos_emb", &self.cross.pos_emb);
        f("cross.seg.frame", &self.cross.seg_frame);
        f("cross.seg.tag", &self.cross.seg_tag);
        f("cross.seg.text", &self.cross.seg_text);
        for (i, b) in self.cross.blocks.iter().enumerate() {
            for (name, p) in block_fields!().iter().zip(b.fields()) {
                f(&format!("cross.block{i}.{name}"), p);
            }
        }
        f("cross.lambda", &self.cross.lambda);
        f("cross.vtm.w", &self.cross.vtm_w);
        f("cross.vtm.b", &self.cross.vtm_b);
        f("cross.mlm.w", &self.cross.mlm_w);
        f("cross.mlm.b", &self.cross.mlm_b);

        f("proj.video", &self.proj.video_proj);
        f("proj.text", &self.proj.text_proj);
        f("temperature.w", &self.temp_w);
    }

    /// Mutable twin of [`ModelParams::visit`]; must walk the same order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Param<S>)) {
        f("text.token_emb", &mut self.text.token_emb);
        f("text.pos_emb", &mut self.text.pos_emb);
        for (i, b) in self.text.blocks.iter_mut().enumerate() {
            for (name, p) in block_fields!().iter().zip(b.fields_mut()) {
                f(&format!("text.block{i}.{name}"), p);
            }
        }
        f("text.final_ln.gain", &mut self.text.final_ln_gain);
        f("text.final_ln.bias", &mut self.text.final_ln_bias);
        f("text.tag_proj", &mut self.text.tag_proj);
        f("text.cap_proj", &mut self.text.cap_proj);

        f("visual.in_proj.w", &mut self.visual.in_proj_w);
        f("visual.in_proj.b", &mut self.visual.in_proj_b);
        f("visual.pos_emb", &mut self.visual.pos_emb);
        for (i, b) in self.visual.blocks.iter_mut().enumerate() {
            for (name, p) in block_fields!().iter().zip(b.fields_mut()) {
                f(&format!("visual.block{i}.{name}"), p);
            }
        }
        f("visual.final_ln.gain", &mut self.visual.final_ln_gain);
        f("visual.final_ln.bias", &mut self.visual.final_ln_bias);
        f("visual.out_proj", &mut self.visual.out_proj);

        f("cross.pos_emb", &mut self.cross.pos_emb);
        f("cross.seg.frame", &mut self.cross.seg_frame);
        f("cross.seg.tag", &mut self.cross.seg_tag);
        f("cross.seg.text", &mut self.cross.seg_text);
        for (i, b) in self.cross.blocks.iter_mut().enumerate() {
            for (name, p) in block_fields!().iter().zip(b.fields_mut()) {
                f(&format!("cross.block{i}.{name}"), p);
            }
        }
        f("cross.lambda", &mut self.cross.lambda);
        f("cross.vtm.w", &mut self.cross.vtm_w);
        f("cross.vtm.b", &mut self.cross.vtm_b);
        f("cross.mlm.w", &mut self.cross.mlm_w);
        f("cross.mlm.b", &mut self.cross.mlm_b);

        f("proj.video", &mut self.proj.video_proj);
        f("proj.text", &mut self.proj.text_proj);
        f("temperature.w", &mut self.temp_w);
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(|_, p| n += p.numel());
        n
    }

    pub fn convert<T: Scalar>(&self) -> ModelParams<T> {
        let mut out: ModelParams<T> = ModelParams::init(&self.cfg, 0);
        let mut src: Vec<Vec<T>> = Vec::new();
        self.visit(|_, p| src.push(p.data.iter().map(|&v| T::from_f64(v.to_f64())).collect()));
        let mut i = 0;
        out.visit_mut(|_, p| {
            p.data = std::mem::take(&mut src[i]);
            i += 1;
        });
        out
    }

    /// Parameters as (name, f64 data, shape) triples for gradient checking.
    pub fn flatten_gradcheck(&self) -> Vec<(String, Vec<f64>, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(|name, p| {
            out.push((
                name.to_string(),
                p.data.iter().map(|v| v.to_f64()).collect(),
                p.shape.clone(),
            ));
        });
        out
    }

    /// Insert every parameter into `g` as a leaf (once) and return the ids,
    /// both by structural position and as the flat named list the optimizer
    /// walks.
    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> BoundModel {
        let mut flat = Vec::new();
        self.visit(|name, p| {
            let id = g.leaf(p.data.clone(), p.shape.clone(), trainable);
            flat.push((name.to_string(), id));
        });
        BoundModel::from_flat(&self.cfg, flat)
    }
}

pub fn param_names(cfg: &ModelConfig) -> Vec<String> {
    let dummy: ModelParams<f32> = ModelParams::init(cfg, 0);
    let mut names = Vec::new();
    dummy.visit(|n, _| names.push(n.to_string()));
    names
}

impl BoundModel {
    /// Rebuild the structural view from leaf ids in canonical visit order.
    /// Lets gradcheck closures drive the same forward code over externally
    /// created leaves.
    pub fn from_ids(cfg: &ModelConfig, ids: &[TensorId]) -> Self {
        let names = param_names(cfg);
        assert_eq!(names.len(), ids.len(), "id count does not match parameter count");
        let flat: Vec<(String, TensorId)> =
            names.into_iter().zip(ids.iter().copied()).collect();
        BoundModel::from_flat(cfg, flat)
    }

    fn from_flat(cfg: &ModelConfig, flat: Vec<(String, TensorId)>) -> Self {
        let lookup: std::collections::HashMap<&str, TensorId> =
            flat.iter().map(|(n, id)| (n.as_str(), *id)).collect();
        let get = |n: &str| *lookup.get(n).expect("bound param name");
        let bind_block = |prefix: &str, i: usize| -> BoundBlock {
            let p = |field: &str| get(&format!("{prefix}.block{i}.{field}"));
            BoundBlock {
                ln1_gain: p("ln1.gain"),
                ln1_bias: p("ln1.bias"),
                wq: p("attn.wq"),
                bq: p("attn.bq"),
                wk: p("attn.wk"),
                bk: p("attn.bk"),
                wv: p("attn.wv"),
                bv: p("attn.bv"),
                wo: p("attn.wo"),
                bo: p("attn.bo"),
                ln2_gain: p("ln2.gain"),
                ln2_bias: p("ln2.bias"),
                mlp_w1: p("mlp.w1"),
                mlp_b1: p("mlp.b1"),
                mlp_w2: p("mlp.w2"),
                mlp_b2: p("mlp.b2"),
            }
        };
        let text = BoundText {
            token_emb: get("text.token_emb"),
            pos_emb: get("text.pos_emb"),
            blocks: (0..cfg.text_layers).map(|i| bind_block("text", i)).collect(),
            final_ln_gain: get("text.final_ln.gain"),
            final_ln_bias: get("text.final_ln.bias"),
            tag_proj: get("text.tag_proj"),
            cap_proj: get("text.cap_proj"),
        };
        let visual = BoundVisual {
            in_proj_w: get("visual.in_proj.w"),
            in_proj_b: get("visual.in_proj.b"),
            pos_emb: get("visual.pos_emb"),
            blocks: (0..cfg.visual_layers).map(|i| bind_block("visual", i)).collect(),
            final_ln_gain: get("visual.final_ln.gain"),
            final_ln_bias: get("visual.final_ln.bias"),
            out_proj: get("visual.out_proj"),
        };
        let cross = BoundCross {
            pos_emb: get("cross.pos_emb"),
            seg_frame: get("cross.seg.frame"),
            seg_tag: get("cross.seg.tag"),
            seg_text: get("cross.seg.text"),
            blocks: (0..cfg.cross_layers).map(|i| bind_block("cross", i)).collect(),
            lambda: get("cross.lambda"),
            vtm_w: get("cross.vtm.w"),
            vtm_b: get("cross.vtm.b"),
            mlm_w: get("cross.mlm.w"),
            mlm_b: get("cross.mlm.b"),
        };
        let proj = BoundProj { video_proj: get("proj.video"), text_proj: get("proj.text") };
        let temp_w = get("temperature.w");
        BoundModel { cfg: cfg.clone(), flat, text, visual, cross, proj, temp_w }
    }
}

/// Graph-bound parameter ids mirroring [`ModelParams`].
pub struct BoundModel {
    pub cfg: ModelConfig,
    pub flat: Vec<(String, TensorId)>,
    pub text: BoundText,
    pub visual: BoundVisual,
    pub cross: BoundCross,
    pub proj: BoundProj,
    pub temp_w: TensorId,
}

pub struct BoundBlock {
    pub ln1_gain: TensorId,
    pub ln1_bias: TensorId,
    pub wq: TensorId,
    pub bq: TensorId,
    pub wk: TensorId,
    pub bk: TensorId,
    pub wv: TensorId,
    pub bv: TensorId,
    pub wo: TensorId,
    pub bo: TensorId,
    pub ln2_gain: TensorId,
    pub ln2_bias: TensorId,
    pub mlp_w1: TensorId,
    pub mlp_b1: TensorId,
    pub mlp_w2: TensorId,
    pub mlp_b2: TensorId,
}

pub struct BoundText {
    pub token_emb: TensorId,
    pub pos_emb: TensorId,
    pub blocks: Vec<BoundBlock>,
    pub final_ln_gain: TensorId,
    pub final_ln_bias: TensorId,
    pub tag_proj: TensorId,
    pub cap_proj: TensorId,
}

pub struct BoundVisual {
    pub in_proj_w: TensorId,
    pub in_proj_b: TensorId,
    pub pos_emb: TensorId,
    pub blocks: Vec<BoundBlock>,
    pub final_ln_gain: TensorId,
    pub final_ln_bias: TensorId,
    pub out_proj: TensorId,
}

pub struct BoundCross {
    pub pos_emb: TensorId,
    pub seg_frame: TensorId,
    pub seg_tag: TensorId,
    pub seg_text: TensorId,
    pub blocks: Vec<BoundBlock>,
    pub lambda: TensorId,
    pub vtm_w: TensorId,
    pub vtm_b: TensorId,
    pub mlm_w: TensorId,
    pub mlm_b: TensorId,
}

pub struct BoundProj {
    pub video_proj: TensorId,
    pub text_proj: TensorId,
}

// ── optimizer grouping ──────────────────────────────────────────────────

/// The two learning-rate groups: the unimodal encoders, and everything
/// cross-modal (fusion blocks, projections, heads, lambda, temperature).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoders,
    CrossModal,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("text.") || name.starts_with("visual.") {
        ParamGroup::Encoders
    } else {
        ParamGroup::CrossModal
    }
}

// ── checkpoints ─────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum CheckpointError {
    Container(ContainerError),
    MissingTensor(String),
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    BadMeta(String),
}

impl std::fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CheckpointError::Container(e) => write!(f, "{e}"),
            CheckpointError::MissingTensor(n) => write!(f, "checkpoint is missing tensor {n}"),
            CheckpointError::ShapeMismatch { name, expected, found } => write!(
                f,
                "checkpoint tensor {name}: expected shape {expected:?}, found {found:?}"
            ),
            CheckpointError::BadMeta(m) => write!(f, "checkpoint meta error: {m}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<ContainerError> for CheckpointError {
    fn from(e: ContainerError) -> Self {
        CheckpointError::Container(e)
    }
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams<f32>,
    vocab: &Vocabulary,
    extra_meta: serde_json::Value,
) -> Result<(), CheckpointError> {
    let mut tensors = Vec::new();
    params.visit(|name, p| {
        tensors.push(NamedTensor {
            name: name.to_string(),
            shape: p.shape.clone(),
            data: p.data.clone(),
        });
    });
    let meta = serde_json::json!({
        "config": params.cfg,
        "vocab": vocab.tokens(),
        "extra": extra_meta,
    });
    write_container(path, &tensors, &meta)?;
    Ok(())
}

pub fn load_checkpoint(
    path: &Path,
) -> Result<(ModelParams<f32>, Vocabulary, serde_json::Value), CheckpointError> {
    let (tensors, meta) = read_container(path)?;
    let cfg: ModelConfig = serde_json::from_value(
        meta.get("config").cloned().ok_or_else(|| CheckpointError::BadMeta("no config".into()))?,
    )
    .map_err(|e| CheckpointError::BadMeta(e.to_string()))?;
    let vocab_tokens: Vec<String> = serde_json::from_value(
        meta.get("vocab").cloned().ok_or_else(|| CheckpointError::BadMeta("no vocab".into()))?,
    )
    .map_err(|e| CheckpointError::BadMeta(e.to_string()))?;
    let vocab = Vocabulary::from_tokens(vocab_tokens);

    let by_name: std::collections::HashMap<String, NamedTensor> =
        tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let mut params: ModelParams<f32> = ModelParams::init(&cfg, 0);
    let mut err: Option<CheckpointError> = None;
    params.visit_mut(|name, p| {
        if err.is_some() {
            return;
        }
        match by_name.get(name) {
            None => err = Some(CheckpointError::MissingTensor(name.to_string())),
            Some(t) if t.shape != p.shape => {
                err = Some(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    expected: p.shape.clone(),
                    found: t.shape.clone(),
                })
            }
            Some(t) => p.data = t.data.clone(),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let extra = meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);
    Ok((params, vocab, extra))
}
