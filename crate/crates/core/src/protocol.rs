//! Experiment protocols: baseline, full supervision, leave-one-emotion-out
//! and emotion-only transfer.
//!
//! A [`ProtocolRun`] fixes which dimensions are supervised, which feed model
//! selection and which are evaluated. Construction rejects contradictory
//! settings, so a leave-one-out run whose selection set contains the held-out
//! emotion cannot exist.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::{
    complete_batch, BatchStats, ClientError, CompletionCache, CompletionRecord, EndpointConfig, EndpointKind,
    HttpTransport, Transport,
};
use crate::corpus::{split, write_corpus_jsonl, AffectRecord, CorpusError, CorpusFormat, SplitSpec};
use crate::dimension::Dimension;
use crate::metrics::{evaluate, MetricReport, MetricsError};
use crate::mocksim::mock_complete;
use crate::parser::{parse_run, ParsePolicy, ParseStats, ScoreVector};
use crate::prompting::{instruction_pairs, render_prompt, requested_dimensions, InstructionPair, PromptError, ScoringRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    Baseline,
    Full,
    LeaveOneOut,
    EmotionOnly,
}

impl std::str::FromStr for ProtocolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(ProtocolKind::Baseline),
            "full" => Ok(ProtocolKind::Full),
            "leave-one-out" | "loo" => Ok(ProtocolKind::LeaveOneOut),
            "emotion-only" | "eo" => Ok(ProtocolKind::EmotionOnly),
            other => Err(format!(
                "unknown protocol `{other}` (baseline, full, leave-one-out, emotion-only)"
            )),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("invalid protocol configuration: {0}")]
    Config(String),
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("no candidate could be scored on the validation split")]
    NoScorableCandidate,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("endpoint failed for every record: {0}")]
    Endpoint(String),
    #[error("evaluation failed: {0}")]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEndpoint {
    pub name: String,
    #[serde(flatten)]
    pub config: EndpointConfig,
}

impl NamedEndpoint {
    pub fn new(name: impl Into<String>, config: EndpointConfig) -> Self {
        Self {
            name: name.into(),
            config,
        }
    }
}

/// The declarative part of a run, as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSettings {
    pub kind: ProtocolKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out: Option<Dimension>,
    #[serde(default)]
    pub policy: ParsePolicy,
    #[serde(default)]
    pub epsilon: f64,
    /// Defaults to the supervised dimensions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_dimensions: Option<Vec<Dimension>>,
}

impl ProtocolSettings {
    pub fn new(kind: ProtocolKind) -> Self {
        Self {
            kind,
            held_out: None,
            policy: ParsePolicy::Strict,
            epsilon: 0.0,
            selection_dimensions: None,
        }
    }
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolRun {
    kind: ProtocolKind,
    held_out: Option<Dimension>,
    policy: ParsePolicy,
    epsilon: f64,
    selection_dimensions: Vec<Dimension>,
    split: SplitSpec,
    endpoints: Vec<NamedEndpoint>,
}

fn supervised_for(kind: ProtocolKind, held_out: Option<Dimension>) -> Vec<Dimension> {
    match kind {
        ProtocolKind::Baseline | ProtocolKind::Full => Dimension::ALL.to_vec(),
        ProtocolKind::LeaveOneOut => Dimension::ALL.iter().copied().filter(|d| Some(*d) != held_out).collect(),
        ProtocolKind::EmotionOnly => Dimension::EMOTIONS.to_vec(),
    }
}

impl ProtocolRun {
    pub fn new(settings: ProtocolSettings, split: SplitSpec, endpoints: Vec<NamedEndpoint>) -> Result<Self, ProtocolError> {
        let bad = |m: String| Err(ProtocolError::Config(m));
        match (settings.kind, settings.held_out) {
            (ProtocolKind::LeaveOneOut, None) => return bad("leave-one-out needs a held-out emotion".into()),
            (ProtocolKind::LeaveOneOut, Some(d)) if !d.is_emotion() => {
                return bad(format!("held-out dimension {d} is not an emotion"))
            }
            (ProtocolKind::LeaveOneOut, Some(_)) => {}
            (kind, Some(d)) => return bad(format!("held_out = {d} given for {kind:?}, which holds nothing out")),
            (_, None) => {}
        }
        if !(settings.epsilon >= 0.0 && settings.epsilon.is_finite()) {
            return bad(format!("epsilon must be >= 0, got {}", settings.epsilon));
        }
        if endpoints.is_empty() {
            return bad("at least one endpoint is required".into());
        }
        let mut names = std::collections::HashSet::new();
        for e in &endpoints {
            if !names.insert(e.name.as_str()) {
                return bad(format!("endpoint name `{}` used twice", e.name));
            }
            e.config.validate()?;
        }

        let supervised = supervised_for(settings.kind, settings.held_out);
        let selection = match settings.selection_dimensions {
            None => supervised.clone(),
            Some(dims) => {
                if dims.is_empty() {
                    return bad("selection dimensions must not be empty".into());
                }
                if let Some(h) = settings.held_out.filter(|h| dims.contains(h)) {
                    return bad(format!("held-out {h} cannot be used for model selection"));
                }
                if let Some(d) = dims.iter().find(|d| !supervised.contains(d)) {
                    return bad(format!("{d} is not supervised under {:?} and cannot drive selection", settings.kind));
                }
                let mut unique = Vec::new();
                for d in dims {
                    if !unique.contains(&d) {
                        unique.push(d);
                    }
                }
                unique
            }
        };
        Ok(Self {
            kind: settings.kind,
            held_out: settings.held_out,
            policy: settings.policy,
            epsilon: settings.epsilon,
            selection_dimensions: selection,
            split,
            endpoints,
        })
    }

    pub fn kind(&self) -> ProtocolKind {
        self.kind
    }

    pub fn held_out(&self) -> Option<Dimension> {
        self.held_out
    }

    pub fn policy(&self) -> ParsePolicy {
        self.policy
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn split_spec(&self) -> &SplitSpec {
        &self.split
    }

    pub fn endpoints(&self) -> &[NamedEndpoint] {
        &self.endpoints
    }

    pub fn settings(&self) -> ProtocolSettings {
        ProtocolSettings {
            kind: self.kind,
            held_out: self.held_out,
            policy: self.policy,
            epsilon: self.epsilon,
            selection_dimensions: Some(self.selection_dimensions.clone()),
        }
    }

    /// Dimensions whose gold values appear in training targets.
    pub fn supervised_dimensions(&self) -> Vec<Dimension> {
        supervised_for(self.kind, self.held_out)
    }

    /// Dimensions averaged for checkpoint selection.
    pub fn selection_dimensions(&self) -> &[Dimension] {
        &self.selection_dimensions
    }

    /// Emotion list and Valence/Arousal flag for training and validation prompts.
    pub fn training_prompt(&self) -> (Vec<Dimension>, bool) {
        let emotions = Dimension::EMOTIONS
            .iter()
            .copied()
            .filter(|d| Some(*d) != self.held_out)
            .collect();
        (emotions, self.kind != ProtocolKind::EmotionOnly)
    }

    /// Test prompts always request every dimension, so held-out and
    /// unsupervised dimensions are probed zero-shot.
    pub fn test_prompt(&self) -> (Vec<Dimension>, bool) {
        (Dimension::EMOTIONS.to_vec(), true)
    }

    pub fn evaluation_dimensions(&self) -> Vec<Dimension> {
        Dimension::ALL.to_vec()
    }

    /// SHA-256 of the resolved, secret-free configuration.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("serializable"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the canonical gold-only JSON-lines encoding.
pub fn corpus_digest(records: &[AffectRecord]) -> String {
    let mut buf = Vec::new();
    write_corpus_jsonl(records, &mut buf, CorpusFormat::GoldOnly).expect("in-memory write");
    sha256_hex(&buf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub name: String,
    pub predictions: Vec<(String, ScoreVector)>,
}

/// Named prediction sets over the validation split, e.g. one per epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn push(&mut self, name: impl Into<String>, predictions: Vec<(String, ScoreVector)>) {
        self.candidates.push(Candidate {
            name: name.into(),
            predictions,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub name: String,
    /// `None` when the candidate could not be evaluated.
    pub macro_ccc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: String,
    pub dimensions: Vec<Dimension>,
    pub scores: Vec<CandidateScore>,
}

/// Pick the candidate with the highest macro-average CCC over `dimensions`.
/// Ties go to the earliest candidate.
pub fn select_checkpoint(
    candidates: &CandidateSet,
    gold_validation: &[AffectRecord],
    dimensions: &[Dimension],
    epsilon: f64,
) -> Result<Selection, ProtocolError> {
    if candidates.candidates.is_empty() {
        return Err(ProtocolError::NoCandidates);
    }
    let mut best: Option<(usize, f64)> = None;
    let mut scores = Vec::with_capacity(candidates.candidates.len());
    for (i, c) in candidates.candidates.iter().enumerate() {
        match evaluate(&c.predictions, gold_validation, dimensions, epsilon) {
            Ok(report) => {
                let m = report.macro_ccc.expect("ccc always defined");
                if best.is_none_or(|(_, b)| m > b) {
                    best = Some((i, m));
                }
                scores.push(CandidateScore {
                    name: c.name.clone(),
                    macro_ccc: Some(m),
                    error: None,
                });
            }
            Err(e) => scores.push(CandidateScore {
                name: c.name.clone(),
                macro_ccc: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let (winner, _) = best.ok_or(ProtocolError::NoScorableCandidate)?;
    Ok(Selection {
        selected: candidates.candidates[winner].name.clone(),
        dimensions: dimensions.to_vec(),
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub emotions: Vec<Dimension>,
    pub include_dimensions: bool,
    /// Keys present in every training completion.
    pub target_dimensions: Vec<Dimension>,
    pub records: usize,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub dimensions: Vec<Dimension>,
    /// Dimensions requested in validation prompts.
    pub prompt_dimensions: Vec<Dimension>,
    pub scores: Vec<CandidateScore>,
    pub selected: String,
    pub completion_stats: BatchStats,
    pub parse_stats: Vec<(String, ParseStats)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub endpoint: String,
    pub prompt_dimensions: Vec<Dimension>,
    pub dimensions: Vec<Dimension>,
    pub records: usize,
    pub completion_stats: BatchStats,
    pub parse_stats: ParseStats,
}

/// Everything needed to reproduce and audit one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub protocol: ProtocolSettings,
    pub endpoints: Vec<NamedEndpoint>,
    pub seed: u64,
    pub split: SplitSpec,
    pub config_digest: String,
    pub corpus_digest: String,
    pub supervised_dimensions: Vec<Dimension>,
    pub training: TrainingSummary,
    pub selection: SelectionSummary,
    pub evaluation: EvaluationSummary,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricReport,
    pub manifest: RunManifest,
    pub training_export: Vec<InstructionPair>,
    pub test_completions: Vec<CompletionRecord>,
    pub test_predictions: Vec<(String, ScoreVector)>,
}

/// Completions for `records` from one endpoint, mock or HTTP.
pub fn collect_completions(
    endpoint: &EndpointConfig,
    records: &[AffectRecord],
    emotions: &[Dimension],
    include_dimensions: bool,
    cache: &dyn CompletionCache,
    transport: Option<&dyn Transport>,
) -> Result<(Vec<CompletionRecord>, BatchStats), ProtocolError> {
    match endpoint.kind()? {
        EndpointKind::Mock(spec) => {
            let dims = requested_dimensions(emotions, include_dimensions);
            let out = mock_complete(records, &dims, &spec);
            let stats = BatchStats {
                requests: out.len(),
                ..Default::default()
            };
            Ok((out, stats))
        }
        EndpointKind::Http => {
            let prompts = records
                .iter()
                .map(|r| {
                    let req = ScoringRequest::new(r.text.clone(), emotions.to_vec(), include_dimensions)?;
                    Ok((r.id.clone(), render_prompt(&req)?))
                })
                .collect::<Result<Vec<_>, PromptError>>()?;
            let owned;
            let transport = match transport {
                Some(t) => t,
                None => {
                    owned = HttpTransport::new(endpoint);
                    &owned
                }
            };
            let (out, stats) = complete_batch(&prompts, endpoint, cache, transport)?;
            if let Some(first) = out.first().and_then(|c| c.error.clone()) {
                if out.iter().all(|c| c.error.is_some()) {
                    return Err(ProtocolError::Endpoint(first));
                }
            }
            Ok((out, stats))
        }
    }
}

/// Execute a protocol against a loaded corpus with the default HTTP transport.
pub fn run(protocol: &ProtocolRun, corpus: &[AffectRecord], cache: &dyn CompletionCache) -> Result<RunOutput, ProtocolError> {
    run_with_transport(protocol, corpus, cache, None)
}

pub fn run_with_transport(
    protocol: &ProtocolRun,
    corpus: &[AffectRecord],
    cache: &dyn CompletionCache,
    transport: Option<&dyn Transport>,
) -> Result<RunOutput, ProtocolError> {
    let parts = split(corpus, protocol.split_spec())?;
    let (train_emotions, train_dims) = protocol.training_prompt();

    let training_export = instruction_pairs(&parts.train, &train_emotions, train_dims)?;
    let mut buf = Vec::new();
    crate::jsonl::write_lines(&mut buf, &training_export).expect("in-memory write");
    let training = TrainingSummary {
        emotions: train_emotions.clone(),
        include_dimensions: train_dims,
        target_dimensions: requested_dimensions(&train_emotions, train_dims),
        records: training_export.len(),
        digest: sha256_hex(&buf),
    };

    // Checkpoint selection over the validation split, restricted to the
    // selection dimensions. Skipped when there is nothing to choose between.
    let validation_prompt_dims = requested_dimensions(&train_emotions, train_dims);
    let mut selection_stats = BatchStats::default();
    let mut validation_parse = Vec::new();
    let selection = if protocol.endpoints().len() > 1 && !parts.validation.is_empty() {
        let mut candidates = CandidateSet::default();
        for e in protocol.endpoints() {
            let (completions, stats) =
                collect_completions(&e.config, &parts.validation, &train_emotions, train_dims, cache, transport)?;
            selection_stats.merge(&stats);
            let (preds, pstats) = parse_run(&completions, &validation_prompt_dims, protocol.policy());
            validation_parse.push((e.name.clone(), pstats));
            candidates.push(e.name.clone(), preds);
        }
        select_checkpoint(&candidates, &parts.validation, protocol.selection_dimensions(), protocol.epsilon())?
    } else {
        Selection {
            selected: protocol.endpoints()[0].name.clone(),
            dimensions: protocol.selection_dimensions().to_vec(),
            scores: vec![CandidateScore {
                name: protocol.endpoints()[0].name.clone(),
                macro_ccc: None,
                error: None,
            }],
        }
    };

    let chosen = protocol
        .endpoints()
        .iter()
        .find(|e| e.name == selection.selected)
        .expect("selected endpoint exists");
    let (test_emotions, test_dims) = protocol.test_prompt();
    let test_prompt_dims = requested_dimensions(&test_emotions, test_dims);
    let (test_completions, test_stats) =
        collect_completions(&chosen.config, &parts.test, &test_emotions, test_dims, cache, transport)?;
    let (test_predictions, parse_stats) = parse_run(&test_completions, &test_prompt_dims, protocol.policy());
    if parse_stats.failed > 0 {
        log::warn!(
            "{} of {} test outputs could not be parsed and are excluded",
            parse_stats.failed,
            parse_stats.records
        );
    }
    let eval_dims = protocol.evaluation_dimensions();
    let report = evaluate(&test_predictions, &parts.test, &eval_dims, protocol.epsilon())?;

    let manifest = RunManifest {
        protocol: protocol.settings(),
        endpoints: protocol.endpoints().to_vec(),
        seed: protocol.split_spec().seed,
        split: *protocol.split_spec(),
        config_digest: protocol.digest(),
        corpus_digest: corpus_digest(corpus),
        supervised_dimensions: protocol.supervised_dimensions(),
        training,
        selection: SelectionSummary {
            dimensions: selection.dimensions,
            prompt_dimensions: validation_prompt_dims,
            scores: selection.scores,
            selected: selection.selected,
            completion_stats: selection_stats,
            parse_stats: validation_parse,
        },
        evaluation: EvaluationSummary {
            endpoint: chosen.name.clone(),
            prompt_dimensions: test_prompt_dims,
            dimensions: eval_dims,
            records: parts.test.len(),
            completion_stats: test_stats,
            parse_stats,
        },
        report: report.clone(),
    };
    Ok(RunOutput {
        report,
        manifest,
        training_export,
        test_completions,
        test_predictions,
    })
}

/// Index predictions by id.
pub fn predictions_by_id(predictions: &[(String, ScoreVector)]) -> HashMap<&str, &ScoreVector> {
    predictions.iter().map(|(id, sv)| (id.as_str(), sv)).collect()
}
