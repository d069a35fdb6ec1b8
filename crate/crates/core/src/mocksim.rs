//! Deterministic mock scorer and synthetic corpora.
//!
//! Randomness comes from a counter-based generator: every draw is a pure
//! function of `(seed, record id, dimension, stream)` built from FNV-1a and
//! the SplitMix64 finalizer, with Box-Muller for normals. Nothing depends on
//! iteration order or thread scheduling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::client::{prompt_hash, CompletionRecord};
use crate::corpus::{AffectRecord, AnnotatorRating};
use crate::dimension::{format_score, Dimension, Scores};
use crate::prompting::score_object;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ *b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Slot used for draws that belong to a whole record rather than one dimension.
pub const RECORD_SLOT: u64 = 0xff;

/// Counter-based generator keyed by seed and record id.
#[derive(Debug, Clone, Copy)]
pub struct KeyedRng {
    key: u64,
}

impl KeyedRng {
    pub fn new(seed: u64, id: &str) -> Self {
        Self {
            key: splitmix(splitmix(seed) ^ fnv1a(id.as_bytes())),
        }
    }

    pub fn bits(&self, slot: u64, stream: u64) -> u64 {
        splitmix(splitmix(self.key ^ splitmix(slot)) ^ stream)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&self, slot: u64, stream: u64) -> f64 {
        (self.bits(slot, stream) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller on streams `stream` and `stream + 1`.
    pub fn normal(&self, slot: u64, stream: u64) -> f64 {
        let u1 = 1.0 - self.uniform(slot, stream); // (0, 1]
        let u2 = self.uniform(slot, stream + 1);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

const STREAM_NOISE: u64 = 0;
const STREAM_DROP: u64 = 2;
const STREAM_MALFORM: u64 = 3;
const STREAM_MALFORM_KIND: u64 = 4;
const STREAM_PROSE: u64 = 5;

/// How mock outputs deviate from gold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub seed: u64,
    pub mean_shift: f64,
    pub scale: f64,
    pub noise_sigma: f64,
    /// Per-key omission probability.
    pub drop_probability: f64,
    /// Restricts omission to these dimensions; all when `None`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_dimensions: Option<Vec<Dimension>>,
    /// Per-record probability of prose-wrapped (half) or truncated (half) output.
    pub malform_probability: f64,
}

impl Default for DistortionSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl DistortionSpec {
    pub fn identity() -> Self {
        Self {
            seed: 0,
            mean_shift: 0.0,
            scale: 1.0,
            noise_sigma: 0.0,
            drop_probability: 0.0,
            drop_dimensions: None,
            malform_probability: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = [self.mean_shift, self.scale, self.noise_sigma, self.drop_probability, self.malform_probability]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err("distortion parameters must be finite".into());
        }
        if self.scale <= 0.0 {
            return Err(format!("scale must be > 0, got {}", self.scale));
        }
        if self.noise_sigma < 0.0 {
            return Err(format!("sigma must be >= 0, got {}", self.noise_sigma));
        }
        for (name, p) in [("drop", self.drop_probability), ("malform", self.malform_probability)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} probability must be in [0, 1], got {p}"));
            }
        }
        Ok(())
    }

    fn drops(&self, dim: Dimension) -> bool {
        self.drop_dimensions.as_ref().is_none_or(|ds| ds.contains(&dim))
    }
}

/// `identity`, or comma-separated `key=value` pairs:
/// `seed`, `shift`, `scale`, `sigma`, `drop`, `drop_only` (`+`-joined names), `malform`.
impl FromStr for DistortionSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut spec = DistortionSpec::identity();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part.eq_ignore_ascii_case("identity") {
                continue;
            }
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value in mock spec, got `{part}`"))?;
            let num = || {
                value
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| format!("`{value}` is not a number for `{key}`"))
            };
            match key.trim() {
                "seed" => {
                    spec.seed = value
                        .trim()
                        .parse()
                        .map_err(|_| format!("`{value}` is not an unsigned integer seed"))?
                }
                "shift" => spec.mean_shift = num()?,
                "scale" => spec.scale = num()?,
                "sigma" => spec.noise_sigma = num()?,
                "drop" => spec.drop_probability = num()?,
                "malform" => spec.malform_probability = num()?,
                "drop_only" => {
                    let dims = value
                        .split('+')
                        .map(|d| d.parse::<Dimension>().map_err(|e| e.to_string()))
                        .collect::<Result<Vec<_>, _>>()?;
                    spec.drop_dimensions = Some(dims);
                }
                other => return Err(format!("unknown mock spec key `{other}`")),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for DistortionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seed={},shift={},scale={},sigma={},drop={},malform={}",
            self.seed,
            format_score(self.mean_shift),
            format_score(self.scale),
            format_score(self.noise_sigma),
            format_score(self.drop_probability),
            format_score(self.malform_probability)
        )?;
        if let Some(ds) = &self.drop_dimensions {
            let names: Vec<&str> = ds.iter().map(|d| d.name()).collect();
            write!(f, ",drop_only={}", names.join("+"))?;
        }
        Ok(())
    }
}

const PROSE: [(&str, &str); 3] = [
    ("Sure! Here is the analysis:\n", "\nLet me know if you need anything else."),
    ("```json\n", "\n```"),
    ("Based on the text, my scores are ", ". These reflect the overall tone."),
];

/// The distorted score for one cell, before omission.
pub fn distorted_value(spec: &DistortionSpec, rng: &KeyedRng, dim: Dimension, gold: f64) -> f64 {
    let z = rng.normal(dim.index() as u64, STREAM_NOISE);
    // Rounded so libm differences in ln/cos cannot leak into the output bytes.
    let noise = (z * spec.noise_sigma * 1e6).round() / 1e6;
    dim.clamp(spec.scale * gold + spec.mean_shift + noise).0
}

/// Raw output text the mock "model" emits for one record.
pub fn mock_output(record: &AffectRecord, dimensions: &[Dimension], spec: &DistortionSpec) -> String {
    let rng = KeyedRng::new(spec.seed, &record.id);
    let mut entries = Vec::with_capacity(dimensions.len());
    for &d in dimensions {
        let gold = record.gold.get(&d).copied().unwrap_or(0.0);
        let dropped = spec.drops(d) && rng.uniform(d.index() as u64, STREAM_DROP) < spec.drop_probability;
        if !dropped {
            entries.push((d.name(), distorted_value(spec, &rng, d, gold)));
        }
    }
    let object = score_object(entries);
    if rng.uniform(RECORD_SLOT, STREAM_MALFORM) >= spec.malform_probability {
        return object;
    }
    if rng.uniform(RECORD_SLOT, STREAM_MALFORM_KIND) < 0.5 {
        let k = (rng.bits(RECORD_SLOT, STREAM_PROSE) % PROSE.len() as u64) as usize;
        let (before, after) = PROSE[k];
        format!("{before}{object}{after}")
    } else {
        // Truncated generation: the object never closes.
        format!("{}...", &object[..object.len() - 1])
    }
}

/// Endpoint name used in prompt hashes for mock completions.
pub fn endpoint_name(spec: &DistortionSpec) -> String {
    format!("mock:{spec}")
}

/// One mock completion per record, asking for `dimensions` in order.
pub fn mock_complete(records: &[AffectRecord], dimensions: &[Dimension], spec: &DistortionSpec) -> Vec<CompletionRecord> {
    let name = endpoint_name(spec);
    let dim_names: Vec<&str> = dimensions.iter().map(|d| d.name()).collect();
    let dim_key = dim_names.join(",");
    records
        .iter()
        .map(|r| CompletionRecord {
            record_id: r.id.clone(),
            prompt_hash: prompt_hash(&format!("{}\n{}\n{}", r.id, r.text, dim_key), &name, 0.0),
            raw_output: mock_output(r, dimensions, spec),
            latency_ms: 0,
            attempt_count: 1,
            error: None,
        })
        .collect()
}

/// Synthetic two-annotator corpus with realistic zero rates.
///
/// Each emotion is absent (both annotators 0) for roughly 40% of records;
/// present scores are integer ratings whose mean may land on a half point.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<AffectRecord> {
    (0..n)
        .map(|i| {
            let id = format!("s{i:05}");
            let rng = KeyedRng::new(seed ^ 0x5eed_c0de, &id);
            let mut a1 = Scores::new();
            let mut a2 = Scores::new();
            for d in Dimension::ALL {
                let slot = d.index() as u64;
                let (lo, hi) = d.range();
                let zero_rate = match d {
                    Dimension::Valence => 0.03,
                    Dimension::Arousal => 0.1,
                    _ => 0.4,
                };
                let (r1, r2) = if rng.uniform(slot, 10) < zero_rate {
                    (0.0, 0.0)
                } else {
                    let span = hi - lo;
                    let base = (lo + rng.uniform(slot, 11) * span).round();
                    let offset = (rng.uniform(slot, 12) * 21.0).floor() - 10.0;
                    let r1 = base.clamp(lo, hi);
                    let r2 = (base + offset).clamp(lo, hi);
                    if d.is_emotion() && (r1 == 0.0 || r2 == 0.0) {
                        (r1.max(1.0), r2.max(1.0))
                    } else {
                        (r1, r2)
                    }
                };
                a1.insert(d, r1);
                a2.insert(d, r2);
            }
            AffectRecord::from_ratings(
                id,
                format!("Synthetic phrase number {i}."),
                AnnotatorRating {
                    annotator_id: "a1".into(),
                    scores: a1,
                },
                AnnotatorRating {
                    annotator_id: "a2".into(),
                    scores: a2,
                },
            )
        })
        .collect()
}
