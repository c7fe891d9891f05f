//! JSON request, response and persistence types.

use std::collections::BTreeMap;

use dialcart_core::acquisition::{StrategyConfig, StrategyKind};
use dialcart_core::cartography::{BucketDistribution, DataMapPoint};
use dialcart_core::classifier::{Checkpoint, FeatureHasher, ModelParams, TrainConfig};
use dialcart_core::corpus::{LabelScheme, Role, SentenceId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateProject {
    /// Line-delimited corpus, one utterance per line.
    pub corpus: String,
    /// Scheme document; the built-in default scheme when absent.
    #[serde(default)]
    pub scheme: Option<serde_json::Value>,
    pub strategy: String,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub candidate_cap: Option<usize>,
    #[serde(default)]
    pub ensemble_size: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub hasher: Option<FeatureHasher>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectCreated {
    pub project_id: String,
    pub total: usize,
    pub heldout: usize,
}

/// Immutable project settings, written once at creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectMeta {
    pub project_id: String,
    pub created_at: u64,
    pub strategy: StrategyConfig,
    pub seed: u64,
    pub train: TrainConfig,
    pub hasher: FeatureHasher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextUtterance {
    pub seq: u32,
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub sentence_id: SentenceId,
    pub text: String,
    pub role: Role,
    /// Up to two preceding utterances of the same session, oldest first.
    pub context: Vec<ContextUtterance>,
    /// Scheme tags the speaker's role may carry.
    pub allowed_tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTicket {
    pub ticket_id: String,
    pub annotator: String,
    pub strategy_used: StrategyKind,
    pub generation: u64,
    pub seed: u64,
    pub issued_at: u64,
    /// Set when the ticket holds every remaining unlabeled sentence.
    #[serde(rename = "final")]
    pub final_batch: bool,
    pub items: Vec<BatchItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub sentence_id: SentenceId,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitLabels {
    pub ticket_id: String,
    pub annotator: String,
    pub labels: Vec<LabelEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelsAccepted {
    /// Labels in the request; a replayed submission returns the same count
    /// without appending.
    pub accepted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrainStarted {
    /// Generation the job will produce.
    pub generation: u64,
    pub state: ProjectState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectState {
    Idle,
    Training,
}

/// One line of the append-only project log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Ticket {
        ticket_id: String,
        annotator: String,
        sentence_ids: Vec<SentenceId>,
        strategy: StrategyKind,
        generation: u64,
        seed: u64,
        final_batch: bool,
        at: u64,
    },
    Labels {
        ticket_id: String,
        annotator: String,
        labels: Vec<LabelEntry>,
        at: u64,
    },
    Model {
        generation: u64,
        labeled_count: usize,
        at: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_label_f1: BTreeMap<String, f64>,
}

/// A trained generation: the model, its snapshot ensemble and the
/// cartography of the labeled set it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u64,
    pub labeled_count: usize,
    pub checkpoint: Checkpoint,
    /// Trailing epoch snapshots, oldest first.
    pub ensemble: Vec<ModelParams>,
    pub data_map: Vec<DataMapPoint>,
    pub bucket_distribution: BucketDistribution,
    pub metrics: Option<HeldOutMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub generation: u64,
    pub labeled_count: usize,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectStatus {
    pub project_id: String,
    pub state: ProjectState,
    pub strategy: StrategyKind,
    pub generation: u64,
    pub total: usize,
    pub labeled: usize,
    pub pool: usize,
    pub heldout: usize,
    pub annotators: Vec<String>,
    pub per_tag_counts: BTreeMap<String, u64>,
    pub metrics: Option<HeldOutMetrics>,
    pub history: Vec<GenerationSummary>,
    pub data_map: Vec<DataMapPoint>,
    /// Agreement over sentences labeled by at least two annotators.
    pub kappa: Option<f64>,
    pub overlap: usize,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub sentence_id: SentenceId,
    /// `(annotator, tag)` in log order.
    pub labels: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectExport {
    pub meta: ProjectMeta,
    pub scheme: LabelScheme,
    pub corpus: String,
    pub log: Vec<LogEvent>,
    pub data_map_csv: Option<String>,
    pub model: Option<GenerationRecord>,
    pub disagreements: Vec<Disagreement>,
}
