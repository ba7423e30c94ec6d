//! Multi-modal tag mining: a pluggable per-modality expert interface with
//! confidence filtering, per-modality dedup/quota, and ordered concatenation
//! into the single tag string fed to the tag encoder.
//!
//! Real pretrained taggers are out of scope; [`SyntheticExpert`] reads the
//! synthetic corpus' latent factors instead and can drop true tags or inject
//! distractors with configurable probability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{self, VideoRecord};
use crate::seeding::{derive_seed, fnv1a};

pub const DEFAULT_CONF_THRESHOLD: f32 = 0.5;
pub const DEFAULT_TAG_QUOTA: usize = 4;

/// Tag modalities in their canonical concatenation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Object,
    Person,
    Scene,
    Motion,
    Audio,
}

impl Modality {
    pub const ALL: [Modality; 5] =
        [Modality::Object, Modality::Person, Modality::Scene, Modality::Motion, Modality::Audio];

    pub fn index(self) -> usize {
        match self {
            Modality::Object => 0,
            Modality::Person => 1,
            Modality::Scene => 2,
            Modality::Motion => 3,
            Modality::Audio => 4,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Modality::Object => "object",
            Modality::Person => "person",
            Modality::Scene => "scene",
            Modality::Motion => "motion",
            Modality::Audio => "audio",
        };
        f.write_str(s)
    }
}

/// Per-modality tag lists, already filtered and canonically ordered.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagBundle {
    pub object: Vec<String>,
    pub person: Vec<String>,
    pub scene: Vec<String>,
    pub motion: Vec<String>,
    pub audio: Vec<String>,
}

impl TagBundle {
    pub fn modality(&self, m: Modality) -> &[String] {
        match m {
            Modality::Object => &self.object,
            Modality::Person => &self.person,
            Modality::Scene => &self.scene,
            Modality::Motion => &self.motion,
            Modality::Audio => &self.audio,
        }
    }

    fn modality_mut(&mut self, m: Modality) -> &mut Vec<String> {
        match m {
            Modality::Object => &mut self.object,
            Modality::Person => &mut self.person,
            Modality::Scene => &mut self.scene,
            Modality::Motion => &mut self.motion,
            Modality::Audio => &mut self.audio,
        }
    }

    pub fn is_empty(&self) -> bool {
        Modality::ALL.iter().all(|&m| self.modality(m).is_empty())
    }
}

/// Candidate tags with confidences from one expert.
#[derive(Clone, Debug)]
pub struct ExpertOutput {
    pub modality: Modality,
    pub candidates: Vec<(String, f32)>,
}

/// A per-modality tagger. Pure per record; all randomness is fixed at
/// construction so tagging may run in parallel across records.
pub trait Expert: Send + Sync {
    fn modality(&self) -> Modality;
    fn run(&self, record: &VideoRecord) -> ExpertOutput;
}

#[derive(Debug)]
pub enum TaggingError {
    DuplicateExpert(Modality),
    ConfidenceOutOfRange { modality: Modality, tag: String, confidence: f32 },
}

impl std::fmt::Display for TaggingError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaggingError::DuplicateExpert(m) => {
                write!(f, "more than one expert configured for modality {m}")
            }
            TaggingError::ConfidenceOutOfRange { modality, tag, confidence } => write!(
                f,
                "expert for {modality} emitted confidence {confidence} for tag {tag:?} outside [0,1]"
            ),
        }
    }
}

impl std::error::Error for TaggingError {}

/// Run the configured experts over one record and assemble the tag bundle.
///
/// Candidates below `conf_threshold` are dropped; survivors are deduplicated
/// (keeping the highest confidence), cut to the per-modality `quota` by
/// descending confidence, and finally sorted alphabetically so the bundle is
/// independent of emission order. Modalities with no expert stay empty.
pub fn run_experts(
    record: &VideoRecord,
    experts: &[Box<dyn Expert>],
    conf_threshold: f32,
    quota: usize,
) -> Result<TagBundle, TaggingError> {
    let mut seen = [false; 5];
    let mut bundle = TagBundle::default();
    for expert in experts {
        let m = expert.modality();
        if seen[m.index()] {
            return Err(TaggingError::DuplicateExpert(m));
        }
        seen[m.index()] = true;

        let out = expert.run(record);
        let mut kept: Vec<(String, f32)> = Vec::new();
        for (tag, conf) in out.candidates {
            if !(0.0..=1.0).contains(&conf) {
                return Err(TaggingError::ConfidenceOutOfRange {
                    modality: m,
                    tag,
                    confidence: conf,
                });
            }
            if conf < conf_threshold {
                continue;
            }
            match kept.iter_mut().find(|(t, _)| *t == tag) {
                Some((_, c)) => *c = c.max(conf),
                None => kept.push((tag, conf)),
            }
        }
        kept.sort_by(|(ta, ca), (tb, cb)| {
            cb.partial_cmp(ca).unwrap().then_with(|| ta.cmp(tb))
        });
        kept.truncate(quota);
        let slot = bundle.modality_mut(m);
        slot.extend(kept.into_iter().map(|(t, _)| t));
        slot.sort();
    }
    Ok(bundle)
}

/// Join all tags in canonical modality order with single spaces.
/// Multi-word tags stay intact as consecutive tokens.
pub fn concat_tags(bundle: &TagBundle) -> String {
    let mut parts: Vec<&str> = Vec::new();
    for m in Modality::ALL {
        for tag in bundle.modality(m) {
            parts.push(tag);
        }
    }
    parts.join(" ")
}

/// Deterministic stand-in for a pretrained tagger. Emits the record's true
/// factor word for its modality with confidence ~U(0.6, 1.0), drops it with
/// `drop_prob`, and injects a random distractor word with `distractor_prob`
/// at confidence ~U(0.3, 0.7).
pub struct SyntheticExpert {
    modality: Modality,
    drop_prob: f64,
    distractor_prob: f64,
    seed: u64,
    distractor_pool: Vec<String>,
}

impl SyntheticExpert {
    pub fn new(modality: Modality, drop_prob: f64, distractor_prob: f64, seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&drop_prob), "drop_prob must be in [0,1]");
        assert!((0.0..=1.0).contains(&distractor_prob), "distractor_prob must be in [0,1]");
        SyntheticExpert {
            modality,
            drop_prob,
            distractor_prob,
            seed,
            distractor_pool: datagen::distractor_words()
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

pub fn synthetic_expert(
    modality: Modality,
    drop_prob: f64,
    distractor_prob: f64,
    seed: u64,
) -> SyntheticExpert {
    SyntheticExpert::new(modality, drop_prob, distractor_prob, seed)
}

impl Expert for SyntheticExpert {
    fn modality(&self) -> Modality {
        self.modality
    }

    fn run(&self, record: &VideoRecord) -> ExpertOutput {
        let mut candidates = Vec::new();
        if let Some(factors) = &record.factors {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                self.seed,
                fnv1a(&record.id),
                self.modality.index() as u64,
            ]));
            let drop: f64 = rng.gen();
            let conf: f32 = rng.gen_range(0.6..1.0);
            if drop >= self.drop_prob {
                let word = datagen::factor_word(self.modality, factors.id(self.modality));
                candidates.push((word.to_string(), conf));
            }
            if rng.gen::<f64>() < self.distractor_prob {
                let word = &self.distractor_pool[rng.gen_range(0..self.distractor_pool.len())];
                candidates.push((word.clone(), rng.gen_range(0.3..0.7)));
            }
        }
        ExpertOutput { modality: self.modality, candidates }
    }
}
