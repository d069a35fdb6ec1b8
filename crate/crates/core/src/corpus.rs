//! Annotated corpus: loading, validation, annotator averaging and splitting.
//!
//! Two on-disk encodings are supported. The canonical one is UTF-8 CSV with a
//! header row:
//!
//! ```text
//! id,text,Anger,Anxiety,Fear,Sadness,Disgust,Optimism,Excitement,Surprise,Valence,Arousal
//! ```
//!
//! The two-annotator variant replaces each score column with a `_a1`/`_a2`
//! pair (`Anger_a1,Anger_a2,...`) and gold is their mean. Files ending in
//! `.jsonl` or `.ndjson` are read as JSON-lines instead, one object per record
//! with either a `scores` map or a two-element `ratings` array.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dimension::{format_score, Dimension, Scores};
use crate::metrics::{DimensionMetrics, MetricReport, PairedSeries};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("row {row}: field `{field}` is malformed: {message}")]
    BadField {
        row: usize,
        field: String,
        message: String,
    },
    #[error("row {row}: {dimension} = {value} is outside [{low}, {high}]")]
    OutOfRange {
        row: usize,
        dimension: Dimension,
        value: f64,
        low: f64,
        high: f64,
    },
    #[error("row {row}: duplicate id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("unknown column or dimension name `{0}`")]
    UnknownDimension(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("record `{0}` has no annotator ratings")]
    MissingRatings(String),
    #[error("split counts {train}+{validation}+{test} do not sum to corpus size {size}")]
    CountMismatch {
        train: usize,
        validation: usize,
        test: usize,
        size: usize,
    },
    #[error("split manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    #[default]
    GoldOnly,
    TwoAnnotator,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gold-only" | "gold" => Ok(CorpusFormat::GoldOnly),
            "two-annotator" => Ok(CorpusFormat::TwoAnnotator),
            other => Err(format!("unknown corpus format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorRating {
    pub annotator_id: String,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffectRecord {
    pub id: String,
    pub text: String,
    pub gold: Scores,
    pub raw_ratings: Option<[AnnotatorRating; 2]>,
}

impl AffectRecord {
    pub fn gold_only(id: impl Into<String>, text: impl Into<String>, gold: Scores) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            gold,
            raw_ratings: None,
        }
    }

    /// Build from two ratings; gold is the exact arithmetic mean.
    pub fn from_ratings(
        id: impl Into<String>,
        text: impl Into<String>,
        first: AnnotatorRating,
        second: AnnotatorRating,
    ) -> Self {
        let gold = Dimension::ALL
            .iter()
            .filter_map(|d| {
                let a = first.scores.get(d)?;
                let b = second.scores.get(d)?;
                Some((*d, (a + b) / 2.0))
            })
            .collect();
        Self {
            id: id.into(),
            text: text.into(),
            gold,
            raw_ratings: Some([first, second]),
        }
    }
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    )
}

/// Load and validate a corpus file. The encoding is picked from the extension.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<AffectRecord>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let records = if is_jsonl(path) {
        read_jsonl(reader, format)?
    } else {
        read_csv(reader, format)?
    };
    log::info!("loaded {} records from {}", records.len(), path.display());
    Ok(records)
}

fn parse_score(row: usize, field: &str, raw: &str) -> Result<f64, CorpusError> {
    let value: f64 = raw.trim().parse().map_err(|_| CorpusError::BadField {
        row,
        field: field.to_string(),
        message: format!("`{raw}` is not a number"),
    })?;
    if !value.is_finite() {
        return Err(CorpusError::BadField {
            row,
            field: field.to_string(),
            message: format!("`{raw}` is not finite"),
        });
    }
    Ok(value)
}

fn check_range(row: usize, dimension: Dimension, value: f64) -> Result<(), CorpusError> {
    if dimension.contains(value) {
        Ok(())
    } else {
        let (low, high) = dimension.range();
        Err(CorpusError::OutOfRange {
            row,
            dimension,
            value,
            low,
            high,
        })
    }
}

#[derive(Clone, Copy)]
enum Column {
    Id,
    Text,
    Gold(Dimension),
    Rating(Dimension, usize),
}

fn classify_column(name: &str, format: CorpusFormat) -> Result<Column, CorpusError> {
    let trimmed = name.trim();
    if trimmed.eq_ignore_ascii_case("id") {
        return Ok(Column::Id);
    }
    if trimmed.eq_ignore_ascii_case("text") {
        return Ok(Column::Text);
    }
    let unknown = || CorpusError::UnknownDimension(trimmed.to_string());
    match format {
        CorpusFormat::GoldOnly => Dimension::from_name(trimmed).map(Column::Gold).ok_or_else(unknown),
        CorpusFormat::TwoAnnotator => {
            let lower = trimmed.to_ascii_lowercase();
            let (base, slot) = if let Some(b) = lower.strip_suffix("_a1") {
                (b, 0)
            } else if let Some(b) = lower.strip_suffix("_a2") {
                (b, 1)
            } else {
                return Err(unknown());
            };
            Dimension::from_name(base)
                .map(|d| Column::Rating(d, slot))
                .ok_or_else(unknown)
        }
    }
}

fn column_name(column: Column) -> String {
    match column {
        Column::Id => "id".into(),
        Column::Text => "text".into(),
        Column::Gold(d) => d.name().into(),
        Column::Rating(d, slot) => format!("{}_a{}", d.name(), slot + 1),
    }
}

fn expected_columns(format: CorpusFormat) -> Vec<Column> {
    let mut cols = vec![Column::Id, Column::Text];
    for d in Dimension::ALL {
        match format {
            CorpusFormat::GoldOnly => cols.push(Column::Gold(d)),
            CorpusFormat::TwoAnnotator => {
                cols.push(Column::Rating(d, 0));
                cols.push(Column::Rating(d, 1));
            }
        }
    }
    cols
}

fn read_csv<R: std::io::Read>(reader: R, format: CorpusFormat) -> Result<Vec<AffectRecord>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| CorpusError::Malformed {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let columns: Vec<Column> = header
        .iter()
        .map(|h| classify_column(h, format))
        .collect::<Result<_, _>>()?;
    let names: Vec<String> = columns.iter().map(|c| column_name(*c)).collect();
    for want in expected_columns(format) {
        let name = column_name(want);
        match names.iter().filter(|n| **n == name).count() {
            0 => return Err(CorpusError::MissingColumn(name)),
            1 => {}
            _ => return Err(CorpusError::Malformed {
                row: 0,
                message: format!("column `{name}` appears more than once"),
            }),
        }
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, result) in rdr.records().enumerate() {
        let row = i + 1;
        let fields = result.map_err(|e| CorpusError::Malformed {
            row,
            message: e.to_string(),
        })?;
        let mut id = String::new();
        let mut text = String::new();
        let mut gold = Scores::new();
        let mut ratings: [Scores; 2] = [Scores::new(), Scores::new()];
        for (col, raw) in columns.iter().zip(fields.iter()) {
            match *col {
                Column::Id => id = raw.to_string(),
                Column::Text => text = raw.to_string(),
                Column::Gold(d) => {
                    let v = parse_score(row, d.name(), raw)?;
                    check_range(row, d, v)?;
                    gold.insert(d, v);
                }
                Column::Rating(d, slot) => {
                    let v = parse_score(row, &column_name(*col), raw)?;
                    check_range(row, d, v)?;
                    ratings[slot].insert(d, v);
                }
            }
        }
        let record = finish_record(row, id, text, gold, ratings, format)?;
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId { row, id: record.id });
        }
        records.push(record);
    }
    Ok(records)
}

fn finish_record(
    row: usize,
    id: String,
    text: String,
    gold: Scores,
    ratings: [Scores; 2],
    format: CorpusFormat,
) -> Result<AffectRecord, CorpusError> {
    if id.trim().is_empty() {
        return Err(CorpusError::BadField {
            row,
            field: "id".into(),
            message: "empty id".into(),
        });
    }
    Ok(match format {
        CorpusFormat::GoldOnly => AffectRecord::gold_only(id, text, gold),
        CorpusFormat::TwoAnnotator => {
            let [a, b] = ratings;
            AffectRecord::from_ratings(
                id,
                text,
                AnnotatorRating {
                    annotator_id: "a1".into(),
                    scores: a,
                },
                AnnotatorRating {
                    annotator_id: "a2".into(),
                    scores: b,
                },
            )
        }
    })
}

fn scores_from_json(row: usize, field: &str, map: &Map<String, Value>) -> Result<Scores, CorpusError> {
    let mut scores = Scores::new();
    for (key, value) in map {
        let d = Dimension::from_name(key).ok_or_else(|| CorpusError::UnknownDimension(key.clone()))?;
        let v = value
            .as_f64()
            .filter(|v| v.is_finite())
            .ok_or_else(|| CorpusError::BadField {
                row,
                field: format!("{field}.{key}"),
                message: format!("`{value}` is not a number"),
            })?;
        check_range(row, d, v)?;
        if scores.insert(d, v).is_some() {
            return Err(CorpusError::BadField {
                row,
                field: format!("{field}.{key}"),
                message: format!("{d} given more than once"),
            });
        }
    }
    if let Some(d) = Dimension::ALL.iter().find(|d| !scores.contains_key(d)) {
        return Err(CorpusError::BadField {
            row,
            field: format!("{field}.{d}"),
            message: "missing".into(),
        });
    }
    Ok(scores)
}

#[derive(Serialize, Deserialize)]
struct JsonRating {
    #[serde(default)]
    annotator_id: Option<String>,
    scores: Map<String, Value>,
}

#[derive(Deserialize)]
struct JsonRecord {
    id: String,
    text: String,
    #[serde(default)]
    scores: Option<Map<String, Value>>,
    #[serde(default)]
    ratings: Option<Vec<JsonRating>>,
}

fn read_jsonl<R: BufRead>(reader: R, format: CorpusFormat) -> Result<Vec<AffectRecord>, CorpusError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut row = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        row += 1;
        let raw: JsonRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            row,
            message: e.to_string(),
        })?;
        let missing = |field: &str| CorpusError::BadField {
            row,
            field: field.into(),
            message: "missing".into(),
        };
        let record = match format {
            CorpusFormat::GoldOnly => {
                let scores = raw.scores.as_ref().ok_or_else(|| missing("scores"))?;
                let gold = scores_from_json(row, "scores", scores)?;
                finish_record(row, raw.id, raw.text, gold, Default::default(), format)?
            }
            CorpusFormat::TwoAnnotator => {
                let ratings = raw.ratings.ok_or_else(|| missing("ratings"))?;
                if ratings.len() != 2 {
                    return Err(CorpusError::BadField {
                        row,
                        field: "ratings".into(),
                        message: format!("expected 2 ratings, found {}", ratings.len()),
                    });
                }
                let mut parsed = Vec::with_capacity(2);
                for (slot, r) in ratings.iter().enumerate() {
                    let scores = scores_from_json(row, &format!("ratings[{slot}].scores"), &r.scores)?;
                    parsed.push(AnnotatorRating {
                        annotator_id: r.annotator_id.clone().unwrap_or_else(|| format!("a{}", slot + 1)),
                        scores,
                    });
                }
                if raw.id.trim().is_empty() {
                    return Err(CorpusError::BadField {
                        row,
                        field: "id".into(),
                        message: "empty id".into(),
                    });
                }
                let second = parsed.pop().expect("two ratings");
                let first = parsed.pop().expect("two ratings");
                AffectRecord::from_ratings(raw.id, raw.text, first, second)
            }
        };
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId { row, id: record.id });
        }
        records.push(record);
    }
    Ok(records)
}

/// Write records in the canonical encoding for `path` (CSV unless `.jsonl`).
pub fn write_corpus(records: &[AffectRecord], path: &Path, format: CorpusFormat) -> Result<(), CorpusError> {
    let file = std::io::BufWriter::new(File::create(path)?);
    if is_jsonl(path) {
        write_corpus_jsonl(records, file, format)
    } else {
        write_corpus_csv(records, file, format)
    }
}

fn ratings_of(record: &AffectRecord) -> Result<&[AnnotatorRating; 2], CorpusError> {
    record
        .raw_ratings
        .as_ref()
        .ok_or_else(|| CorpusError::MissingRatings(record.id.clone()))
}

pub fn write_corpus_csv<W: Write>(records: &[AffectRecord], w: W, format: CorpusFormat) -> Result<(), CorpusError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    let cols = expected_columns(format);
    let to_io = |e: csv::Error| CorpusError::Io(e.into());
    wtr.write_record(cols.iter().map(|c| column_name(*c))).map_err(to_io)?;
    for record in records {
        let mut fields = Vec::with_capacity(cols.len());
        for col in &cols {
            let value = match *col {
                Column::Id => record.id.clone(),
                Column::Text => record.text.clone(),
                Column::Gold(d) => format_score(record.gold[&d]),
                Column::Rating(d, slot) => format_score(ratings_of(record)?[slot].scores[&d]),
            };
            fields.push(value);
        }
        wtr.write_record(&fields).map_err(to_io)?;
    }
    wtr.flush()?;
    Ok(())
}

fn scores_to_json(scores: &Scores) -> Map<String, Value> {
    scores
        .iter()
        .map(|(d, v)| {
            let number: Value = serde_json::from_str(&format_score(*v)).expect("finite score");
            (d.name().to_string(), number)
        })
        .collect()
}

pub fn write_corpus_jsonl<W: Write>(records: &[AffectRecord], mut w: W, format: CorpusFormat) -> Result<(), CorpusError> {
    for record in records {
        let mut obj = Map::new();
        obj.insert("id".into(), Value::String(record.id.clone()));
        obj.insert("text".into(), Value::String(record.text.clone()));
        match format {
            CorpusFormat::GoldOnly => {
                obj.insert("scores".into(), Value::Object(scores_to_json(&record.gold)));
            }
            CorpusFormat::TwoAnnotator => {
                let ratings: Vec<Value> = ratings_of(record)?
                    .iter()
                    .map(|r| {
                        serde_json::json!({
                            "annotator_id": r.annotator_id,
                            "scores": scores_to_json(&r.scores),
                        })
                    })
                    .collect();
                obj.insert("ratings".into(), Value::Array(ratings));
            }
        }
        serde_json::to_writer(&mut w, &obj).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Seed and partition sizes for a train/validation/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSpec {
    /// The 706/176/295 partition of a 1,177-record corpus.
    pub fn standard(seed: u64) -> Self {
        Self {
            seed,
            train: 706,
            validation: 176,
            test: 295,
        }
    }

    /// The same proportions applied to a corpus of `n` records; equals
    /// [`SplitSpec::standard`] for `n = 1177`.
    pub fn scaled(n: usize, seed: u64) -> Self {
        let part = |k: usize| ((n * k) as f64 / 1177.0).round() as usize;
        let train = part(706).min(n);
        let validation = part(176).min(n - train);
        Self {
            seed,
            train,
            validation,
            test: n - train - validation,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<AffectRecord>,
    pub validation: Vec<AffectRecord>,
    pub test: Vec<AffectRecord>,
}

impl Split {
    pub fn part(&self, name: SplitName) -> &[AffectRecord] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    /// `{id, split}` rows in train, validation, test order.
    pub fn manifest(&self) -> Vec<SplitAssignment> {
        [SplitName::Train, SplitName::Validation, SplitName::Test]
            .into_iter()
            .flat_map(|name| {
                self.part(name).iter().map(move |r| SplitAssignment {
                    id: r.id.clone(),
                    split: name,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub id: String,
    pub split: SplitName,
}

/// Uniform integer in `0..bound` by rejection sampling.
fn below(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    let zone = (u64::MAX / bound) * bound;
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % bound;
        }
    }
}

/// Seeded Fisher-Yates permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = below(&mut rng, i as u64 + 1) as usize;
        idx.swap(i, j);
    }
    idx
}

/// Seeded shuffle, then contiguous cuts in train/validation/test order.
pub fn split(records: &[AffectRecord], spec: &SplitSpec) -> Result<Split, CorpusError> {
    if spec.total() != records.len() {
        return Err(CorpusError::CountMismatch {
            train: spec.train,
            validation: spec.validation,
            test: spec.test,
            size: records.len(),
        });
    }
    let order = shuffled_indices(records.len(), spec.seed);
    let take = |range: std::ops::Range<usize>| -> Vec<AffectRecord> {
        order[range].iter().map(|&i| records[i].clone()).collect()
    };
    let a = spec.train;
    let b = a + spec.validation;
    Ok(Split {
        train: take(0..a),
        validation: take(a..b),
        test: take(b..records.len()),
    })
}

/// Rebuild a split from a stored `{id, split}` manifest.
pub fn apply_split_manifest(records: &[AffectRecord], manifest: &[SplitAssignment]) -> Result<Split, CorpusError> {
    let by_id: BTreeMap<&str, &AffectRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut out = Split::default();
    let mut seen = HashSet::new();
    for a in manifest {
        let r = by_id
            .get(a.id.as_str())
            .ok_or_else(|| CorpusError::Manifest(format!("id `{}` not in corpus", a.id)))?;
        if !seen.insert(a.id.as_str()) {
            return Err(CorpusError::Manifest(format!("id `{}` assigned twice", a.id)));
        }
        let part = match a.split {
            SplitName::Train => &mut out.train,
            SplitName::Validation => &mut out.validation,
            SplitName::Test => &mut out.test,
        };
        part.push((*r).clone());
    }
    Ok(out)
}

/// Per-dimension agreement between the two annotators. Annotator 1 takes the
/// prediction slot and annotator 2 the reference slot.
pub fn interannotator_agreement(records: &[AffectRecord]) -> Result<MetricReport, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::Malformed {
            row: 0,
            message: "no records".into(),
        });
    }
    let mut rows = Vec::with_capacity(Dimension::ALL.len());
    for d in Dimension::ALL {
        let mut ids = Vec::with_capacity(records.len());
        let mut x = Vec::with_capacity(records.len());
        let mut y = Vec::with_capacity(records.len());
        for r in records {
            let [a, b] = ratings_of(r)?;
            ids.push(r.id.clone());
            x.push(a.scores[&d]);
            y.push(b.scores[&d]);
        }
        let series = PairedSeries::new(ids, x, y).expect("non-empty aligned series");
        rows.push(DimensionMetrics::from_series(d, &series, 0.0));
    }
    Ok(MetricReport::from_rows(rows, records.len(), 0.0))
}
