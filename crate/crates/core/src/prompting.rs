//! Scoring prompt and instruction-tuning target rendering.
//!
//! The template below is the canonical unwrapped form of the scoring prompt.
//! `%input_text` and `%emotions_list` are substituted in a single pass, so
//! placeholder-like sequences inside the input text are left untouched.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::AffectRecord;
use crate::dimension::{format_score, Dimension, Scores};

pub const INPUT_PLACEHOLDER: &str = "%input_text";
pub const EMOTIONS_PLACEHOLDER: &str = "%emotions_list";

const INSTRUCTIONS: &str = "Analyze the input text and assign a score from 0 to 100 for each emotion in the list.\n\
A score of 0 indicates the absence of the emotion, while 100 represents the strongest intensity.\n\
Return the result as a JSON object.\n\
\n\
Input:\n\
- Text: %input_text\n\
- Emotions: %emotions_list\n\
\n";

const DIMENSIONS_BLOCK: &str = "In your JSON output, also include:\n\
- A \"Valence\" score from -100 (most negative) to 100 (most positive).\n\
- An \"Arousal\" score from 0 (calm) to 100 (highly activated).\n\
\n";

const OUTPUT_CUE: &str = "Output:";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("input text is empty")]
    EmptyText,
    #[error("emotion list is empty")]
    NoEmotions,
    #[error("{0} listed more than once")]
    DuplicateEmotion(Dimension),
    #[error("{0} is not an emotion and cannot appear in the emotion list")]
    NotAnEmotion(Dimension),
    #[error("gold scores have no value for {0}")]
    MissingGold(Dimension),
}

/// The user-message body. `dimensions_block` is dropped when Valence and
/// Arousal are not requested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub body: String,
    pub dimensions_block: String,
    pub output_cue: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            body: INSTRUCTIONS.to_string(),
            dimensions_block: DIMENSIONS_BLOCK.to_string(),
            output_cue: OUTPUT_CUE.to_string(),
        }
    }
}

impl PromptTemplate {
    /// Substitute both placeholders verbatim.
    pub fn render_raw(&self, text: &str, emotions_list: &str, include_dimensions: bool) -> String {
        let mut out = String::with_capacity(self.body.len() + text.len() + emotions_list.len() + 256);
        let mut rest = self.body.as_str();
        loop {
            let next = [(INPUT_PLACEHOLDER, text), (EMOTIONS_PLACEHOLDER, emotions_list)]
                .into_iter()
                .filter_map(|(ph, value)| rest.find(ph).map(|i| (i, ph, value)))
                .min_by_key(|(i, _, _)| *i);
            match next {
                Some((i, ph, value)) => {
                    out.push_str(&rest[..i]);
                    out.push_str(value);
                    rest = &rest[i + ph.len()..];
                }
                None => {
                    out.push_str(rest);
                    break;
                }
            }
        }
        if include_dimensions {
            out.push_str(&self.dimensions_block);
        }
        out.push_str(&self.output_cue);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringRequest {
    pub text: String,
    pub emotions: Vec<Dimension>,
    pub include_dimensions: bool,
}

impl ScoringRequest {
    pub fn new(text: impl Into<String>, emotions: Vec<Dimension>, include_dimensions: bool) -> Result<Self, PromptError> {
        let req = Self {
            text: text.into(),
            emotions,
            include_dimensions,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.text.trim().is_empty() {
            return Err(PromptError::EmptyText);
        }
        validate_emotions(&self.emotions)
    }

    /// Dimensions the model is asked to return, in key order.
    pub fn expected_dimensions(&self) -> Vec<Dimension> {
        requested_dimensions(&self.emotions, self.include_dimensions)
    }
}

pub fn validate_emotions(emotions: &[Dimension]) -> Result<(), PromptError> {
    if emotions.is_empty() {
        return Err(PromptError::NoEmotions);
    }
    for (i, d) in emotions.iter().enumerate() {
        if !d.is_emotion() {
            return Err(PromptError::NotAnEmotion(*d));
        }
        if emotions[..i].contains(d) {
            return Err(PromptError::DuplicateEmotion(*d));
        }
    }
    Ok(())
}

/// Emotions followed by Valence and Arousal when included.
pub fn requested_dimensions(emotions: &[Dimension], include_dimensions: bool) -> Vec<Dimension> {
    let mut dims = emotions.to_vec();
    if include_dimensions {
        dims.push(Dimension::Valence);
        dims.push(Dimension::Arousal);
    }
    dims
}

/// `["Anger", "Fear"]`
pub fn emotions_list(emotions: &[Dimension]) -> String {
    let names: Vec<String> = emotions.iter().map(|d| format!("\"{}\"", d.name())).collect();
    format!("[{}]", names.join(", "))
}

pub fn render_prompt(req: &ScoringRequest) -> Result<String, PromptError> {
    req.validate()?;
    Ok(PromptTemplate::default().render_raw(&req.text, &emotions_list(&req.emotions), req.include_dimensions))
}

/// A flat JSON object in the given key order, e.g. `{"Anger": 50.5, "Valence": -40}`.
pub fn score_object<'a>(entries: impl IntoIterator<Item = (&'a str, f64)>) -> String {
    let body: Vec<String> = entries
        .into_iter()
        .map(|(k, v)| format!("\"{k}\": {}", format_score(v)))
        .collect();
    format!("{{{}}}", body.join(", "))
}

/// Training completion: emotions in list order, then Valence and Arousal.
pub fn render_target(gold: &Scores, emotions: &[Dimension], include_dimensions: bool) -> Result<String, PromptError> {
    validate_emotions(emotions)?;
    let dims = requested_dimensions(emotions, include_dimensions);
    let mut entries = Vec::with_capacity(dims.len());
    for d in dims {
        let v = gold.get(&d).ok_or(PromptError::MissingGold(d))?;
        entries.push((d.name(), *v));
    }
    Ok(score_object(entries))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub prompt: String,
    pub completion: String,
}

pub fn instruction_pairs(
    records: &[AffectRecord],
    emotions: &[Dimension],
    include_dimensions: bool,
) -> Result<Vec<InstructionPair>, PromptError> {
    records
        .iter()
        .map(|r| {
            let req = ScoringRequest::new(r.text.clone(), emotions.to_vec(), include_dimensions)?;
            Ok(InstructionPair {
                prompt: render_prompt(&req)?,
                completion: render_target(&r.gold, emotions, include_dimensions)?,
            })
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn write_instructions<W: Write>(w: W, pairs: &[InstructionPair]) -> std::io::Result<()> {
    crate::jsonl::write_lines(w, pairs)
}

/// Write `{prompt, completion}` JSON-lines. The file is created even when empty.
pub fn export_instructions(
    records: &[AffectRecord],
    emotions: &[Dimension],
    include_dimensions: bool,
    path: &Path,
) -> Result<usize, ExportError> {
    let pairs = instruction_pairs(records, emotions, include_dimensions)?;
    let w = crate::jsonl::open_output(path)?;
    write_instructions(w, &pairs)?;
    Ok(pairs.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_scores, ParsePolicy, ScoreFlag};
    use proptest::prelude::*;

    #[test]
    fn empty_placeholders_reproduce_template_text() {
        let rendered = PromptTemplate::default().render_raw("", "", true);
        let expected = concat!(
            "Analyze the input text and assign a score from 0 to 100 for each emotion in the list.\n",
            "A score of 0 indicates the absence of the emotion, while 100 represents the strongest intensity.\n",
            "Return the result as a JSON object.\n",
            "\n",
            "Input:\n",
            "- Text: \n",
            "- Emotions: \n",
            "\n",
            "In your JSON output, also include:\n",
            "- A \"Valence\" score from -100 (most negative) to 100 (most positive).\n",
            "- An \"Arousal\" score from 0 (calm) to 100 (highly activated).\n",
            "\n",
            "Output:",
        );
        assert_eq!(rendered, expected);
    }

    #[test]
    fn placeholder_text_in_input_is_not_resubstituted() {
        let req = ScoringRequest::new("say %emotions_list", vec![Dimension::Fear], true).unwrap();
        let p = render_prompt(&req).unwrap();
        assert!(p.contains("- Text: say %emotions_list\n"));
        assert!(p.contains("- Emotions: [\"Fear\"]\n"));
    }

    #[test]
    fn request_validation() {
        assert_eq!(ScoringRequest::new("", vec![Dimension::Anger], true), Err(PromptError::EmptyText));
        assert_eq!(ScoringRequest::new("x", vec![], true), Err(PromptError::NoEmotions));
        assert_eq!(
            ScoringRequest::new("x", vec![Dimension::Valence], true),
            Err(PromptError::NotAnEmotion(Dimension::Valence))
        );
        assert_eq!(
            ScoringRequest::new("x", vec![Dimension::Anger, Dimension::Anger], true),
            Err(PromptError::DuplicateEmotion(Dimension::Anger))
        );
    }

    #[test]
    fn leave_out_list_and_emotion_only_block() {
        let emotions: Vec<Dimension> = Dimension::EMOTIONS.iter().copied().filter(|d| *d != Dimension::Fear).collect();
        let p = render_prompt(&ScoringRequest::new("hi", emotions, false).unwrap()).unwrap();
        assert!(!p.contains("\"Fear\""));
        assert!(!p.contains("Valence"));
        assert!(p.ends_with("- Emotions: [\"Anger\", \"Anxiety\", \"Sadness\", \"Disgust\", \"Optimism\", \"Excitement\", \"Surprise\"]\n\nOutput:"));
    }

    #[test]
    fn targets() {
        let zeros: Scores = Dimension::ALL.iter().map(|d| (*d, 0.0)).collect();
        assert_eq!(
            render_target(&zeros, &Dimension::EMOTIONS, true).unwrap(),
            "{\"Anger\": 0, \"Anxiety\": 0, \"Fear\": 0, \"Sadness\": 0, \"Disgust\": 0, \"Optimism\": 0, \"Excitement\": 0, \"Surprise\": 0, \"Valence\": 0, \"Arousal\": 0}"
        );
        let mut half = zeros.clone();
        half.insert(Dimension::Anger, 50.5);
        assert!(render_target(&half, &[Dimension::Anger], false).unwrap().contains("50.5"));
        let eo = render_target(&zeros, &Dimension::EMOTIONS, false).unwrap();
        let v: serde_json::Value = serde_json::from_str(&eo).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 8);
        let mut partial = zeros.clone();
        partial.remove(&Dimension::Arousal);
        assert_eq!(
            render_target(&partial, &Dimension::EMOTIONS, true),
            Err(PromptError::MissingGold(Dimension::Arousal))
        );
    }

    #[test]
    fn export_counts_and_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        assert_eq!(export_instructions(&[], &Dimension::EMOTIONS, true, &path).unwrap(), 0);
        assert_eq!(std::fs::read(&path).unwrap(), b"");

        let gold: Scores = Dimension::ALL.iter().map(|d| (*d, 10.0)).collect();
        let records: Vec<AffectRecord> = (0..3).map(|i| AffectRecord::gold_only(format!("r{i}"), "text", gold.clone())).collect();
        let path = dir.path().join("three.jsonl");
        assert_eq!(export_instructions(&records, &Dimension::EMOTIONS, true, &path).unwrap(), 3);
        let body = std::fs::read_to_string(&path).unwrap();
        assert_eq!(body.lines().count(), 3);
        assert!(body.ends_with('\n'));
        let first: InstructionPair = serde_json::from_str(body.lines().next().unwrap()).unwrap();
        assert!(first.prompt.starts_with("Analyze the input text"));
    }

    fn arb_scores() -> impl Strategy<Value = Scores> {
        let cell = |lo: i32| (lo * 2..=200i32).prop_map(|h| h as f64 / 2.0);
        (prop::collection::vec(cell(0), 9), cell(-100)).prop_map(|(rest, valence)| {
            let mut s = Scores::new();
            let mut it = rest.into_iter();
            for d in Dimension::ALL {
                let v = if d == Dimension::Valence { valence } else { it.next().unwrap() };
                s.insert(d, v);
            }
            s
        })
    }

    proptest! {
        #[test]
        fn target_round_trips_through_parser(gold in arb_scores(), include in any::<bool>()) {
            let target = render_target(&gold, &Dimension::EMOTIONS, include).unwrap();
            let dims = requested_dimensions(&Dimension::EMOTIONS, include);
            let sv = parse_scores(&target, &dims, ParsePolicy::Strict).unwrap();
            for d in &dims {
                prop_assert_eq!(sv.get(*d), gold.get(d).copied());
                prop_assert_eq!(sv.flag(*d), Some(ScoreFlag::Parsed));
            }
            prop_assert!(sv.unexpected_keys.is_empty());
        }

        #[test]
        fn prompt_is_injective_in_text(a in "\\PC{1,40}", b in "\\PC{1,40}") {
            prop_assume!(a != b && !a.trim().is_empty() && !b.trim().is_empty());
            let pa = render_prompt(&ScoringRequest::new(a, Dimension::EMOTIONS.to_vec(), true).unwrap()).unwrap();
            let pb = render_prompt(&ScoringRequest::new(b, Dimension::EMOTIONS.to_vec(), true).unwrap()).unwrap();
            prop_assert_ne!(pa, pb);
        }
    }
}
