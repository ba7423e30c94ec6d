//! Procedural synthetic corpus and dataset I/O.
//!
//! Every record draws latent factors (object, person, scene, motion, audio)
//! from small catalogs. Frames are sums of frozen per-factor embeddings plus
//! a motion-dependent temporal drift and Gaussian noise; captions render the
//! factor words through fixed templates; tags come from synthetic experts
//! reading the same factors. Tags therefore determine the caption's factor
//! words whenever the experts run without drops, which is what makes
//! tag-anchored alignment learnable and ablatable on this corpus.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seeding::derive_seed;
use crate::tagging::{run_experts, synthetic_expert, Expert, Modality, TagBundle};

// ── factor catalogs ─────────────────────────────────────────────────────

pub const OBJECT_WORDS: [&str; 12] = [
    "bowl", "bottle", "cup", "ball", "book", "guitar", "knife", "plate", "lamp", "phone",
    "camera", "umbrella",
];
pub const PERSON_WORDS: [&str; 4] = ["man", "woman", "boy", "girl"];
pub const SCENE_WORDS: [&str; 8] =
    ["kitchen", "park", "beach", "office", "stadium", "street", "forest", "garage"];
pub const MOTION_WORDS: [&str; 10] = [
    "cooking", "dancing", "running", "singing", "jumping", "reading", "driving", "swimming",
    "painting", "cleaning",
];
pub const AUDIO_WORDS: [&str; 8] =
    ["music", "laughter", "speech", "applause", "barking", "engine", "wind", "crowd"];

const TEMPLATE_WORDS: [&str; 10] =
    ["a", "is", "in", "the", "with", "near", "while", "holding", "sounds", "play"];

const DISTRACTOR_WORDS: [&str; 50] = [
    "anchor", "basket", "bridge", "candle", "cloud", "corner", "curtain", "desert", "door",
    "engine2", "fabric", "feather", "fence", "flag", "garden", "glass", "hammer", "harbor",
    "hill", "island", "jacket", "kettle", "ladder", "lantern", "marble", "mirror", "mountain",
    "needle", "ocean", "orchard", "pepper", "pillow", "pocket", "ribbon", "river", "rocket",
    "saddle", "shadow", "shelf", "spoon", "stone", "tower", "train", "tunnel", "valley",
    "wagon", "wheel", "window", "winter", "zipper",
];

pub fn factor_catalog(m: Modality) -> &'static [&'static str] {
    match m {
        Modality::Object => &OBJECT_WORDS,
        Modality::Person => &PERSON_WORDS,
        Modality::Scene => &SCENE_WORDS,
        Modality::Motion => &MOTION_WORDS,
        Modality::Audio => &AUDIO_WORDS,
    }
}

pub fn factor_word(m: Modality, id: usize) -> &'static str {
    factor_catalog(m)[id]
}

pub fn distractor_words() -> &'static [&'static str] {
    &DISTRACTOR_WORDS
}

// ── domain types ────────────────────────────────────────────────────────

/// Ground-truth factor indices behind a synthetic record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentFactors {
    pub object_id: usize,
    pub person_id: usize,
    pub scene_id: usize,
    pub motion_id: usize,
    pub audio_id: usize,
}

impl LatentFactors {
    pub fn id(&self, m: Modality) -> usize {
        match m {
            Modality::Object => self.object_id,
            Modality::Person => self.person_id,
            Modality::Scene => self.scene_id,
            Modality::Motion => self.motion_id,
            Modality::Audio => self.audio_id,
        }
    }

    pub fn word(&self, m: Modality) -> &'static str {
        factor_word(m, self.id(m))
    }
}

/// One video: precomputed frame feature vectors, tags, and a caption.
/// `factors` is present only for synthetic data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub frames: Vec<Vec<f32>>,
    pub tags: TagBundle,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<LatentFactors>,
}

// ── vocabulary and tokenization ─────────────────────────────────────────

/// Token <-> id map with fixed special ids. Built deterministically from the
/// factor catalogs, template words and distractor list, so the same corpus
/// seed always sees the same ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const MASK: usize = 3;
    pub const SEP: usize = 4;
    pub const UNK: usize = 5;
    /// First id that maps to an ordinary word token.
    pub const FIRST_WORD: usize = 6;

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    /// The corpus vocabulary: specials, factor catalogs, template words and
    /// distractors, deduplicated in that order.
    pub fn standard() -> Self {
        let mut tokens: Vec<String> =
            ["[PAD]", "[BOS]", "[EOS]", "[MASK]", "[SEP]", "[UNK]"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        let mut seen: HashMap<String, ()> = HashMap::new();
        let mut push = |tokens: &mut Vec<String>, w: &str| {
            if seen.insert(w.to_string(), ()).is_none() {
                tokens.push(w.to_string());
            }
        };
        for m in Modality::ALL {
            for w in factor_catalog(m) {
                push(&mut tokens, w);
            }
        }
        for w in TEMPLATE_WORDS {
            push(&mut tokens, w);
        }
        for w in DISTRACTOR_WORDS {
            push(&mut tokens, w);
        }
        Vocabulary::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: usize) -> bool {
        id < Self::FIRST_WORD
    }

    /// Ids eligible as random MLM replacements (ordinary words only).
    pub fn word_id_range(&self) -> std::ops::Range<usize> {
        Self::FIRST_WORD..self.len()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        Vocabulary::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Vec<String> {
        v.tokens
    }
}

/// Lowercase whitespace tokenization into a fixed-length id sequence:
/// `[BOS] w1 .. wn [EOS] [PAD]...`, truncated to `max_len` keeping `[EOS]`
/// last. Unknown words map to `[UNK]`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    assert!(max_len >= 3, "max_len must be at least 3");
    let mut ids = Vec::with_capacity(max_len);
    ids.push(Vocabulary::BOS);
    for word in text.to_lowercase().split_whitespace() {
        ids.push(vocab.id(word).unwrap_or(Vocabulary::UNK));
    }
    ids.truncate(max_len - 1);
    ids.push(Vocabulary::EOS);
    ids.resize(max_len, Vocabulary::PAD);
    ids
}

/// Inverse of [`tokenize`] up to canonicalization: specials are dropped.
pub fn detokenize(ids: &[usize], vocab: &Vocabulary) -> String {
    let words: Vec<&str> = ids
        .iter()
        .filter(|&&id| !Vocabulary::is_special(id))
        .map(|&id| vocab.token(id))
        .collect();
    words.join(" ")
}

// ── corpus generation ───────────────────────────────────────────────────

const CAPTION_TEMPLATE_COUNT: usize = 4;

fn render_caption(f: &LatentFactors, template: usize) -> String {
    let object = f.word(Modality::Object);
    let person = f.word(Modality::Person);
    let scene = f.word(Modality::Scene);
    let motion = f.word(Modality::Motion);
    let audio = f.word(Modality::Audio);
    match template {
        0 => format!("a {person} is {motion} in the {scene} with a {object}"),
        1 => format!("the {person} is {motion} near a {object} in the {scene}"),
        2 => format!("a {person} with a {object} is {motion} in the {scene}"),
        _ => format!(
            "in the {scene} a {person} is {motion} holding a {object} while {audio} sounds play"
        ),
    }
}

/// Frozen per-factor frame-space embeddings for one corpus seed.
pub struct FactorEmbeddings {
    frame_dim: usize,
    object: Vec<Vec<f32>>,
    person: Vec<Vec<f32>>,
    scene: Vec<Vec<f32>>,
    motion: Vec<Vec<f32>>,
    drift: Vec<Vec<f32>>,
}

const DRIFT_SCALE: f32 = 0.25;

impl FactorEmbeddings {
    pub fn new(seed: u64, frame_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0xFAC7]));
        let mut table = |count: usize| -> Vec<Vec<f32>> {
            (0..count)
                .map(|_| {
                    (0..frame_dim)
                        .map(|_| {
                            let v: f64 = StandardNormal.sample(&mut rng);
                            (v / (frame_dim as f64).sqrt()) as f32
                        })
                        .collect()
                })
                .collect()
        };
        FactorEmbeddings {
            frame_dim,
            object: table(OBJECT_WORDS.len()),
            person: table(PERSON_WORDS.len()),
            scene: table(SCENE_WORDS.len()),
            motion: table(MOTION_WORDS.len()),
            drift: table(MOTION_WORDS.len()),
        }
    }

    /// frame_n = object + person + scene + motion + drift(n) + noise.
    /// The drift direction is tied to the motion factor; audio never enters
    /// the frames, so audio information reaches the video side only through
    /// tags.
    pub fn render_frames(
        &self,
        f: &LatentFactors,
        n_frames: usize,
        noise_sigma: f32,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Vec<f32>> {
        let d = self.frame_dim;
        let base: Vec<f32> = (0..d)
            .map(|j| {
                self.object[f.object_id][j]
                    + self.person[f.person_id][j]
                    + self.scene[f.scene_id][j]
                    + self.motion[f.motion_id][j]
            })
            .collect();
        (0..n_frames)
            .map(|n| {
                let t = if n_frames > 1 { n as f32 / (n_frames - 1) as f32 - 0.5 } else { 0.0 };
                (0..d)
                    .map(|j| {
                        let noise: f64 = StandardNormal.sample(rng);
                        base[j]
                            + t * DRIFT_SCALE * self.drift[f.motion_id][j]
                            + noise_sigma * noise as f32
                    })
                    .collect()
            })
            .collect()
    }
}

/// Full corpus recipe. [`generate_corpus`] uses the defaults for everything
/// beyond (num, seed, noise_sigma).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub num: usize,
    pub seed: u64,
    pub noise_sigma: f32,
    pub frames_per_video: usize,
    pub frame_dim: usize,
    pub tag_drop_prob: f64,
    pub tag_distractor_prob: f64,
    pub conf_threshold: f32,
    pub tag_quota: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            num: 512,
            seed: 7,
            noise_sigma: 0.05,
            frames_per_video: 4,
            frame_dim: 32,
            tag_drop_prob: 0.1,
            tag_distractor_prob: 0.1,
            conf_threshold: 0.5,
            tag_quota: 4,
        }
    }
}

pub fn generate_corpus(num: usize, seed: u64, noise_sigma: f32) -> Vec<VideoRecord> {
    generate_corpus_spec(&CorpusSpec { num, seed, noise_sigma, ..CorpusSpec::default() })
}

pub fn generate_corpus_spec(spec: &CorpusSpec) -> Vec<VideoRecord> {
    assert!(spec.num >= 1, "corpus must contain at least one record");
    let embeddings = FactorEmbeddings::new(spec.seed, spec.frame_dim);
    let experts: Vec<Box<dyn Expert>> = Modality::ALL
        .iter()
        .map(|&m| {
            Box::new(synthetic_expert(
                m,
                spec.tag_drop_prob,
                spec.tag_distractor_prob,
                derive_seed(&[spec.seed, 0xE9, m.index() as u64]),
            )) as Box<dyn Expert>
        })
        .collect();

    (0..spec.num)
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, 0x9EC0, i as u64]));
            let factors = LatentFactors {
                object_id: rng.gen_range(0..OBJECT_WORDS.len()),
                person_id: rng.gen_range(0..PERSON_WORDS.len()),
                scene_id: rng.gen_range(0..SCENE_WORDS.len()),
                motion_id: rng.gen_range(0..MOTION_WORDS.len()),
                audio_id: rng.gen_range(0..AUDIO_WORDS.len()),
            };
            let template = rng.gen_range(0..CAPTION_TEMPLATE_COUNT);
            let frames =
                embeddings.render_frames(&factors, spec.frames_per_video, spec.noise_sigma, &mut rng);
            let mut record = VideoRecord {
                id: format!("vid{i:05}"),
                frames,
                tags: TagBundle::default(),
                caption: render_caption(&factors, template),
                factors: Some(factors),
            };
            record.tags =
                run_experts(&record, &experts, spec.conf_threshold, spec.tag_quota)
                    .expect("synthetic experts are one per modality");
            record
        })
        .collect()
}

// ── dataset I/O ─────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum DataError {
    Io(std::io::Error),
    Parse { line: usize, message: String },
}

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataError::Io(e) => write!(f, "dataset i/o error: {e}"),
            DataError::Parse { line, message } => {
                write!(f, "malformed record at line {line}: {message}")
            }
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e)
    }
}

/// One JSON record per line.
pub fn write_jsonl(path: &Path, corpus: &[VideoRecord]) -> Result<(), DataError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for record in corpus {
        let line = serde_json::to_string(record)
            .map_err(|e| DataError::Parse { line: 0, message: e.to_string() })?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<VideoRecord>, DataError> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut corpus = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: VideoRecord = serde_json::from_str(&line)
            .map_err(|e| DataError::Parse { line: i + 1, message: e.to_string() })?;
        corpus.push(record);
    }
    Ok(corpus)
}
