use std::collections::BTreeMap;

use affect_eval::dimension::{parse_dimension_list, Dimension};
use affect_eval::parser::{parse_scores, ParseError, ParsePolicy, ScoreFlag};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct Case {
    pub name: String,
    pub raw: String,
    pub expected: String,
    pub policy: ParsePolicy,
    #[serde(default)]
    pub scores: BTreeMap<Dimension, f64>,
    #[serde(default)]
    pub flags: BTreeMap<Dimension, ScoreFlag>,
    #[serde(default)]
    pub unexpected: Vec<String>,
    pub error: Option<String>,
}

pub fn load() -> Vec<Case> {
    let text = include_str!("../fixtures/parser_cases.jsonl");
    text.lines()
        .map(|l| serde_json::from_str(l).expect("fixture line"))
        .collect()
}

fn error_tag(e: &ParseError) -> String {
    match e {
        ParseError::NothingExpected => "nothing-expected".into(),
        ParseError::NoJsonObject => "no-json".into(),
        ParseError::MissingKey(d) => format!("missing:{d}"),
        ParseError::NonNumeric { dimension, .. } => format!("non-numeric:{dimension}"),
    }
}

/// Run one fixture case; `Err` describes the first mismatch.
pub fn check(case: &Case) -> Result<(), String> {
    let expected = parse_dimension_list(&case.expected).map_err(|e| e.to_string())?;
    let result = parse_scores(&case.raw, &expected, case.policy);
    match (&case.error, result) {
        (Some(want), Err(got)) if *want == error_tag(&got) => Ok(()),
        (Some(want), Err(got)) => Err(format!("expected error {want}, got {}", error_tag(&got))),
        (Some(want), Ok(sv)) => Err(format!("expected error {want}, got {:?}", sv.scores)),
        (None, Err(got)) => Err(format!("unexpected error {}", error_tag(&got))),
        (None, Ok(sv)) => {
            if sv.scores != case.scores {
                return Err(format!("scores {:?} != {:?}", sv.scores, case.scores));
            }
            if sv.flags != case.flags {
                return Err(format!("flags {:?} != {:?}", sv.flags, case.flags));
            }
            if sv.unexpected_keys != case.unexpected {
                return Err(format!("unexpected keys {:?} != {:?}", sv.unexpected_keys, case.unexpected));
            }
            Ok(())
        }
    }
}
