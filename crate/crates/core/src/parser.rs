//! Extraction and validation of score objects from raw model output.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::client::CompletionRecord;
use crate::dimension::{Dimension, Scores};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreFlag {
    Parsed,
    Imputed,
    Clamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ParsePolicy {
    #[default]
    Strict,
    ImputeZero,
}

impl std::str::FromStr for ParsePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(ParsePolicy::Strict),
            "impute-zero" | "impute_zero" => Ok(ParsePolicy::ImputeZero),
            other => Err(format!("unknown parse policy `{other}` (expected strict or impute-zero)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("no expected dimensions given")]
    NothingExpected,
    #[error("no JSON object found in output")]
    NoJsonObject,
    #[error("missing key for {0}")]
    MissingKey(Dimension),
    #[error("non-numeric value for {dimension}: {value}")]
    NonNumeric { dimension: Dimension, value: String },
}

/// Scores for the requested dimensions, with per-dimension provenance.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Scores,
    pub flags: BTreeMap<Dimension, ScoreFlag>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unexpected_keys: Vec<String>,
}

impl ScoreVector {
    /// All scores flagged as parsed.
    pub fn from_scores(scores: Scores) -> Self {
        let flags = scores.keys().map(|d| (*d, ScoreFlag::Parsed)).collect();
        Self {
            scores,
            flags,
            unexpected_keys: Vec::new(),
        }
    }

    pub fn get(&self, dimension: Dimension) -> Option<f64> {
        self.scores.get(&dimension).copied()
    }

    pub fn flag(&self, dimension: Dimension) -> Option<ScoreFlag> {
        self.flags.get(&dimension).copied()
    }

    pub fn count(&self, flag: ScoreFlag) -> usize {
        self.flags.values().filter(|f| **f == flag).count()
    }

    fn insert(&mut self, dimension: Dimension, value: f64, flag: ScoreFlag) {
        self.scores.insert(dimension, value);
        self.flags.insert(dimension, flag);
    }
}

/// Byte span of the first balanced `{...}` in `raw` that parses as a JSON object.
///
/// Braces inside string literals are ignored while matching.
pub fn find_json_object(raw: &str) -> Option<(usize, usize, serde_json::Map<String, Value>)> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    while let Some(offset) = raw[start..].find('{') {
        let open = start + offset;
        if let Some(close) = balanced_end(bytes, open) {
            if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&raw[open..=close]) {
                return Some((open, close + 1, map));
            }
        }
        start = open + 1;
    }
    None
}

fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Numbers and numeric strings are accepted; booleans, nulls, containers and
/// non-finite values are not.
fn coerce_number(value: &Value) -> Option<f64> {
    let v = match value {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse::<f64>().ok()?,
        _ => return None,
    };
    v.is_finite().then_some(v)
}

/// Parse the score object out of a raw model output.
pub fn parse_scores(
    raw: &str,
    expected: &[Dimension],
    policy: ParsePolicy,
) -> Result<ScoreVector, ParseError> {
    if expected.is_empty() {
        return Err(ParseError::NothingExpected);
    }
    let (_, _, object) = find_json_object(raw).ok_or(ParseError::NoJsonObject)?;

    let mut found: BTreeMap<Dimension, &Value> = BTreeMap::new();
    let mut out = ScoreVector::default();
    for (key, value) in &object {
        match Dimension::from_name(key) {
            Some(d) if expected.contains(&d) && !found.contains_key(&d) => {
                found.insert(d, value);
            }
            _ => out.unexpected_keys.push(key.clone()),
        }
    }

    for &dim in expected {
        if out.scores.contains_key(&dim) {
            continue;
        }
        let number = match found.get(&dim) {
            Some(value) => match coerce_number(value) {
                Some(v) => Some(v),
                None if policy == ParsePolicy::Strict => {
                    return Err(ParseError::NonNumeric {
                        dimension: dim,
                        value: value.to_string(),
                    })
                }
                None => None,
            },
            None if policy == ParsePolicy::Strict => return Err(ParseError::MissingKey(dim)),
            None => None,
        };
        match number {
            Some(v) => {
                let (v, moved) = dim.clamp(v);
                let flag = if moved { ScoreFlag::Clamped } else { ScoreFlag::Parsed };
                out.insert(dim, v, flag);
            }
            None => out.insert(dim, 0.0, ScoreFlag::Imputed),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub id: String,
    pub reason: String,
}

/// Counts over one parsed run. Failed records are listed by id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseStats {
    pub records: usize,
    pub parsed: usize,
    pub failed: usize,
    /// Score cells imputed as 0.
    pub imputed: usize,
    /// Score cells clamped into range.
    pub clamped: usize,
    /// Records with at least one imputed cell.
    pub records_with_imputation: usize,
    pub imputed_by_dimension: BTreeMap<Dimension, usize>,
    pub clamped_by_dimension: BTreeMap<Dimension, usize>,
    pub failures: Vec<ParseFailure>,
}

/// Parse every completion. Never fails: transport errors and unparseable
/// outputs are recorded in the stats and left out of the result.
pub fn parse_run(
    completions: &[CompletionRecord],
    expected: &[Dimension],
    policy: ParsePolicy,
) -> (Vec<(String, ScoreVector)>, ParseStats) {
    let mut stats = ParseStats {
        records: completions.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(completions.len());
    for c in completions {
        let result = match &c.error {
            Some(e) => Err(format!("completion error: {e}")),
            None => parse_scores(&c.raw_output, expected, policy).map_err(|e| e.to_string()),
        };
        match result {
            Ok(sv) => {
                stats.parsed += 1;
                let mut any_imputed = false;
                for (d, f) in &sv.flags {
                    match f {
                        ScoreFlag::Imputed => {
                            stats.imputed += 1;
                            any_imputed = true;
                            *stats.imputed_by_dimension.entry(*d).or_default() += 1;
                        }
                        ScoreFlag::Clamped => {
                            stats.clamped += 1;
                            *stats.clamped_by_dimension.entry(*d).or_default() += 1;
                        }
                        ScoreFlag::Parsed => {}
                    }
                }
                stats.records_with_imputation += any_imputed as usize;
                out.push((c.record_id.clone(), sv));
            }
            Err(reason) => {
                stats.failed += 1;
                stats.failures.push(ParseFailure {
                    id: c.record_id.clone(),
                    reason,
                });
            }
        }
    }
    (out, stats)
}

/// One line of a predictions manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub scores: Scores,
    pub flags: BTreeMap<Dimension, ScoreFlag>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unexpected_keys: Vec<String>,
}

impl From<(String, ScoreVector)> for PredictionRow {
    fn from((id, sv): (String, ScoreVector)) -> Self {
        Self {
            id,
            scores: sv.scores,
            flags: sv.flags,
            unexpected_keys: sv.unexpected_keys,
        }
    }
}

impl From<PredictionRow> for (String, ScoreVector) {
    fn from(row: PredictionRow) -> Self {
        (
            row.id,
            ScoreVector {
                scores: row.scores,
                flags: row.flags,
                unexpected_keys: row.unexpected_keys,
            },
        )
    }
}

pub fn write_predictions<W: Write>(
    mut w: W,
    predictions: &[(String, ScoreVector)],
) -> std::io::Result<()> {
    for (id, sv) in predictions {
        let row = PredictionRow::from((id.clone(), sv.clone()));
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_predictions<R: BufRead>(r: R) -> Result<Vec<(String, ScoreVector)>, crate::Error> {
    crate::jsonl::read_lines::<PredictionRow, _>(r).map(|rows| rows.into_iter().map(Into::into).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Dimension::*;

    fn completion(id: &str, raw: &str) -> CompletionRecord {
        CompletionRecord {
            record_id: id.to_string(),
            prompt_hash: String::new(),
            raw_output: raw.to_string(),
            latency_ms: 0,
            attempt_count: 1,
            error: None,
        }
    }

    #[test]
    fn prose_wrapped_object() {
        let sv = parse_scores(
            r#"Here you go: {"Anger": 70, "Valence": -40}"#,
            &[Anger, Valence],
            ParsePolicy::Strict,
        )
        .unwrap();
        assert_eq!(sv.get(Anger), Some(70.0));
        assert_eq!(sv.get(Valence), Some(-40.0));
        assert_eq!(sv.count(ScoreFlag::Parsed), 2);
    }

    #[test]
    fn out_of_range_is_clamped() {
        let sv = parse_scores(r#"{"Anger": 120}"#, &[Anger], ParsePolicy::Strict).unwrap();
        assert_eq!(sv.get(Anger), Some(100.0));
        assert_eq!(sv.flag(Anger), Some(ScoreFlag::Clamped));
    }

    #[test]
    fn impute_zero_records_unexpected() {
        let sv = parse_scores(r#"{"Joy": 50}"#, &[Fear], ParsePolicy::ImputeZero).unwrap();
        assert_eq!(sv.get(Fear), Some(0.0));
        assert_eq!(sv.flag(Fear), Some(ScoreFlag::Imputed));
        assert_eq!(sv.unexpected_keys, vec!["Joy".to_string()]);
        assert_eq!(
            parse_scores(r#"{"Joy": 50}"#, &[Fear], ParsePolicy::Strict),
            Err(ParseError::MissingKey(Fear))
        );
    }

    #[test]
    fn no_object_fails_under_both_policies() {
        for policy in [ParsePolicy::Strict, ParsePolicy::ImputeZero] {
            assert_eq!(
                parse_scores("I cannot score this.", &[Anger], policy),
                Err(ParseError::NoJsonObject)
            );
            assert_eq!(
                parse_scores(r#"{"Anger": 5"#, &[Anger], policy),
                Err(ParseError::NoJsonObject)
            );
        }
    }

    #[test]
    fn skips_unparseable_braces_before_object() {
        let raw = r#"Scale {0..100} applies. {"anger": "12.5"}"#;
        let sv = parse_scores(raw, &[Anger], ParsePolicy::Strict).unwrap();
        assert_eq!(sv.get(Anger), Some(12.5));
    }

    #[test]
    fn braces_inside_strings_do_not_confuse_matching() {
        let raw = r#"{"note": "a } brace", "Fear": 3}"#;
        let sv = parse_scores(raw, &[Fear], ParsePolicy::Strict).unwrap();
        assert_eq!(sv.get(Fear), Some(3.0));
        assert_eq!(sv.unexpected_keys, vec!["note".to_string()]);
    }

    #[test]
    fn non_numeric_values() {
        for raw in [r#"{"Anger": true}"#, r#"{"Anger": null}"#, r#"{"Anger": "high"}"#] {
            assert!(matches!(
                parse_scores(raw, &[Anger], ParsePolicy::Strict),
                Err(ParseError::NonNumeric { dimension: Anger, .. })
            ));
            let sv = parse_scores(raw, &[Anger], ParsePolicy::ImputeZero).unwrap();
            assert_eq!(sv.flag(Anger), Some(ScoreFlag::Imputed));
        }
    }

    #[test]
    fn case_variant_duplicates_keep_first() {
        let sv = parse_scores(r#"{"anger": 10, "ANGER": 20}"#, &[Anger], ParsePolicy::Strict).unwrap();
        assert_eq!(sv.get(Anger), Some(10.0));
        assert_eq!(sv.unexpected_keys, vec!["ANGER".to_string()]);
    }

    #[test]
    fn parse_run_counts() {
        let mut completions: Vec<CompletionRecord> = (0..10)
            .map(|i| completion(&format!("r{i}"), r#"{"Fear": 10, "Anger": 5}"#))
            .collect();
        completions[3].raw_output = r#"{"Anger": 5}"#.into();
        completions[7].raw_output = r#"{"Anger": 5}"#.into();
        let (rows, stats) = parse_run(&completions, &[Anger, Fear], ParsePolicy::ImputeZero);
        assert_eq!(rows.len(), 10);
        assert_eq!(stats.failed, 0);
        assert_eq!(stats.imputed, 2);
        assert_eq!(stats.records_with_imputation, 2);
        assert_eq!(stats.imputed_by_dimension.get(&Fear), Some(&2));

        completions[5].raw_output = "sorry".into();
        completions[6].error = Some("HTTP 503".into());
        let (rows, stats) = parse_run(&completions, &[Anger, Fear], ParsePolicy::ImputeZero);
        assert_eq!(rows.len(), 8);
        assert_eq!(stats.failed, 2);
        assert_eq!(stats.parsed, 8);
        let failed: Vec<&str> = stats.failures.iter().map(|f| f.id.as_str()).collect();
        assert_eq!(failed, vec!["r5", "r6"]);
    }

    #[test]
    fn predictions_manifest_round_trip() {
        let sv = parse_scores(r#"{"Anger": 120, "Joy": 1}"#, &[Anger, Fear], ParsePolicy::ImputeZero).unwrap();
        let preds = vec![("x1".to_string(), sv)];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &preds).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "{\"id\":\"x1\",\"scores\":{\"Anger\":100.0,\"Fear\":0.0},\"flags\":{\"Anger\":\"clamped\",\"Fear\":\"imputed\"},\"unexpected_keys\":[\"Joy\"]}\n"
        );
        let back = read_predictions(buf.as_slice()).unwrap();
        assert_eq!(back, preds);
    }

    proptest::proptest! {
        #[test]
        fn impute_zero_is_total_when_an_object_exists(
            prefix in "[^{}]{0,20}",
            keys in proptest::collection::vec(("[A-Za-z]{1,10}", proptest::prelude::any::<i16>()), 0..6),
            suffix in ".{0,20}",
        ) {
            let body: Vec<String> = keys.iter().map(|(k, v)| format!("\"{k}\": {v}")).collect();
            let raw = format!("{prefix}{{{}}}{suffix}", body.join(", "));
            let sv = parse_scores(&raw, &Dimension::ALL, ParsePolicy::ImputeZero).unwrap();
            let dims: Vec<Dimension> = sv.scores.keys().copied().collect();
            proptest::prop_assert_eq!(dims, Dimension::ALL.to_vec());
            for d in Dimension::ALL {
                proptest::prop_assert!(d.contains(sv.get(d).unwrap()));
            }
        }

        #[test]
        fn clamping_is_idempotent(v in -1000.0f64..1000.0) {
            for d in Dimension::ALL {
                let (once, _) = d.clamp(v);
                let (twice, moved) = d.clamp(once);
                proptest::prop_assert_eq!(once, twice);
                proptest::prop_assert!(!moved);
            }
        }
    }
}
