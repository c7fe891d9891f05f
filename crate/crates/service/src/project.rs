//! Event-sourced project state. Every mutation is first appended to
//! `log.jsonl` and then applied through the same code path used when
//! replaying the log at startup.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use dialcart_core::acquisition::{self, StrategyConfig, StrategyKind};
use dialcart_core::cartography::{build_data_map, per_label_bucket_distribution};
use dialcart_core::classifier::{
    argmax, Checkpoint, Classifier, Example, FeatureHasher, FeatureVector, LinearSoftmax, TrainConfig,
};
use dialcart_core::corpus::{cohens_kappa, export_string, ingest_str, Corpus, CorpusError, LabelScheme, Sentence, SentenceId};
use dialcart_core::experiment::{build_candidates, mix_seed, Dataset};
use dialcart_core::metrics;
use dialcart_core::reporting::{config_hash, data_map_rows, Table};
use serde_json::json;

use crate::error::ServiceError;
use crate::wire::*;

pub const CONTEXT_DEPTH: usize = 2;

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn corpus_error(e: CorpusError) -> ServiceError {
    let (code, detail) = match &e {
        CorpusError::UnknownTag { line, tag } => ("unknown_tag", json!({ "line": line, "tag": tag })),
        CorpusError::RoleMismatch { line, tag, role } => ("role_mismatch", json!({ "line": line, "tag": tag, "role": role })),
        CorpusError::Malformed { line, message } => ("malformed_corpus", json!({ "line": line, "message": message })),
        CorpusError::InvalidScheme(m) => ("invalid_scheme", json!({ "message": m })),
        _ => ("invalid_corpus", serde_json::Value::Null),
    };
    ServiceError::invalid(code, e.to_string(), detail)
}

/// Parse and validate a creation request without touching disk.
pub fn prepare(req: &CreateProject) -> Result<(LabelScheme, Corpus, StrategyConfig, TrainConfig, FeatureHasher, u64), ServiceError> {
    let scheme = match &req.scheme {
        None => LabelScheme::default_scheme(),
        Some(v) => serde_json::from_value::<LabelScheme>(v.clone())
            .map_err(|e| ServiceError::invalid("invalid_scheme", e.to_string(), json!({ "message": e.to_string() })))?,
    };
    let corpus = ingest_str(&req.corpus, &scheme).map_err(corpus_error)?;
    let kind: StrategyKind = req
        .strategy
        .parse()
        .map_err(|_| ServiceError::invalid("unknown_strategy", format!("unknown strategy {:?}", req.strategy), json!({ "strategy": req.strategy })))?;
    let mut strategy = StrategyConfig::new(kind, req.batch_size.unwrap_or(50));
    strategy.candidate_cap = req.candidate_cap;
    if let Some(k) = req.ensemble_size {
        strategy.ensemble_size = k;
    }
    strategy
        .validate()
        .map_err(|e| ServiceError::invalid("invalid_strategy", e.to_string(), serde_json::Value::Null))?;
    let train = req.train.clone().unwrap_or_default();
    let hasher = req.hasher.unwrap_or_default();
    if corpus.sentences().iter().all(|s| s.gold.is_some()) {
        return Err(ServiceError::invalid("empty_pool", "corpus has no unlabeled sentences", serde_json::Value::Null));
    }
    Ok((scheme, corpus, strategy, train, hasher, req.seed.unwrap_or(0)))
}

struct TicketInfo {
    annotator: String,
    ids: BTreeSet<usize>,
}

pub struct Project {
    pub meta: ProjectMeta,
    pub scheme: LabelScheme,
    corpus: Corpus,
    pool: Vec<Sentence>,
    index: HashMap<SentenceId, usize>,
    features: Vec<FeatureVector>,
    heldout: Dataset,
    log: Vec<LogEvent>,
    tickets: HashMap<String, TicketInfo>,
    /// `(annotator, pool index)` to tag.
    by_annotator: HashMap<(String, usize), String>,
    /// Every label per pool index, in log order.
    labels: BTreeMap<usize, Vec<(String, String)>>,
    generation: Option<Arc<GenerationRecord>>,
    history: Vec<GenerationSummary>,
    training: bool,
    last_error: Option<String>,
    dir: PathBuf,
}

/// Offline-reproducible batch proposal: random until a model exists, the
/// configured strategy afterwards.
pub fn propose(
    features: &[FeatureVector],
    unlabeled: &[usize],
    model: Option<&GenerationRecord>,
    strategy: &StrategyConfig,
    take: usize,
    seed: u64,
) -> Result<(Vec<usize>, StrategyKind), ServiceError> {
    let internal = |e: acquisition::AcquisitionError| ServiceError::Internal(e.to_string());
    let model = match model {
        Some(m) if strategy.kind != StrategyKind::Random => m,
        _ => return Ok((acquisition::random_select(unlabeled, take, seed).map_err(internal)?, StrategyKind::Random)),
    };
    let ck = &model.checkpoint;
    let classifier = LinearSoftmax { n_classes: ck.tags.len(), dim: ck.hasher.dim, scheme_version: ck.scheme_version.clone() };
    let ensemble = strategy.needs_ensemble().then_some(model.ensemble.as_slice());
    let candidates = build_candidates(&classifier, &ck.params, ensemble, features, unlabeled)
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    let config = StrategyConfig {
        batch_size: take,
        candidate_cap: Some(strategy.candidate_cap.unwrap_or(10 * take).max(take)),
        seed,
        ..strategy.clone()
    };
    Ok((acquisition::select(&candidates, &config).map_err(internal)?, strategy.kind))
}

/// Everything a background retrain needs, detached from the project lock.
pub struct TrainJob {
    generation: u64,
    tags: Vec<String>,
    ids: Vec<String>,
    examples: Vec<Example>,
    heldout: Dataset,
    config: TrainConfig,
    hasher: FeatureHasher,
    scheme_version: String,
    ensemble_size: usize,
}

impl TrainJob {
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn run(self) -> Result<GenerationRecord, ServiceError> {
        let classifier =
            LinearSoftmax { n_classes: self.tags.len(), dim: self.hasher.dim, scheme_version: self.scheme_version.clone() };
        let keep = self.ensemble_size.min(self.config.epochs);
        let config = TrainConfig { keep_snapshots: Some(keep), ..self.config.clone() };
        let run = classifier
            .train(&self.examples, &config)
            .map_err(|e| ServiceError::invalid("training_failed", e.to_string(), serde_json::Value::Null))?;
        let ensemble = run.epoch_snapshots(keep).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let data_map = build_data_map(&run.dynamics, &self.ids).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let label_of: HashMap<String, String> =
            self.ids.iter().zip(&self.examples).map(|(id, ex)| (id.clone(), self.tags[ex.label].clone())).collect();
        let bucket_distribution =
            per_label_bucket_distribution(&data_map, &label_of).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let metrics = if self.heldout.is_empty() {
            None
        } else {
            let preds: Vec<usize> = self
                .heldout
                .features
                .iter()
                .map(|x| run.params.predict_proba(x).map(|p| argmax(&p)))
                .collect::<Result<_, _>>()
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
            let n = self.tags.len();
            let err = |e: metrics::MetricError| ServiceError::Internal(e.to_string());
            let per_label = metrics::per_label_f1(&preds, &self.heldout.labels, n).map_err(err)?;
            Some(HeldOutMetrics {
                n: preds.len(),
                accuracy: metrics::accuracy(&preds, &self.heldout.labels).map_err(err)?,
                macro_f1: metrics::macro_f1(&preds, &self.heldout.labels, n).map_err(err)?,
                per_label_f1: self.tags.iter().cloned().zip(per_label).collect(),
            })
        };
        Ok(GenerationRecord {
            generation: self.generation,
            labeled_count: self.examples.len(),
            checkpoint: Checkpoint::new(run.params, self.hasher, self.tags),
            ensemble,
            data_map,
            bucket_distribution,
            metrics,
        })
    }
}

fn append_line(path: &Path, event: &LogEvent) -> Result<(), ServiceError> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(event)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.sync_data()?;
    Ok(())
}

fn generation_path(dir: &Path, generation: u64) -> PathBuf {
    dir.join("models").join(format!("gen-{generation:06}.json"))
}

impl Project {
    /// Persist a new project under `root/<id>`.
    pub fn create(root: &Path, project_id: String, req: &CreateProject) -> Result<Project, ServiceError> {
        let (scheme, corpus, strategy, train, hasher, seed) = prepare(req)?;
        let meta = ProjectMeta { project_id, created_at: now_ms(), strategy, seed, train, hasher };
        let dir = root.join(&meta.project_id);
        std::fs::create_dir_all(dir.join("models"))?;
        std::fs::write(dir.join("scheme.json"), scheme.to_json_string())?;
        std::fs::write(dir.join("corpus.jsonl"), export_string(&corpus))?;
        std::fs::write(dir.join("log.jsonl"), "")?;
        // meta last: its presence marks a complete project directory
        std::fs::write(dir.join("project.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(Self::assemble(meta, scheme, corpus, dir))
    }

    /// Rebuild from disk by replaying the log.
    pub fn open(dir: &Path) -> Result<Project, ServiceError> {
        let meta: ProjectMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("project.json"))?)?;
        let scheme = LabelScheme::load(dir.join("scheme.json")).map_err(|e| ServiceError::Storage(e.to_string()))?;
        let corpus = ingest_str(&std::fs::read_to_string(dir.join("corpus.jsonl"))?, &scheme)
            .map_err(|e| ServiceError::Storage(e.to_string()))?;
        let mut project = Self::assemble(meta, scheme, corpus, dir.to_owned());
        let log = std::fs::read_to_string(dir.join("log.jsonl"))?;
        for line in log.lines().filter(|l| !l.trim().is_empty()) {
            let event: LogEvent = serde_json::from_str(line)?;
            let record = match &event {
                LogEvent::Model { generation, .. } => {
                    let text = std::fs::read_to_string(generation_path(dir, *generation))?;
                    Some(serde_json::from_str(&text)?)
                }
                _ => None,
            };
            project.apply(event, record);
        }
        Ok(project)
    }

    fn assemble(meta: ProjectMeta, scheme: LabelScheme, corpus: Corpus, dir: PathBuf) -> Project {
        let (pool, gold): (Vec<Sentence>, Vec<Sentence>) = corpus.sentences().into_iter().partition(|s| s.gold.is_none());
        let index = pool.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        let features = pool.iter().map(|s| meta.hasher.featurize(&s.text)).collect();
        let heldout = Dataset::from_sentences(&gold, &scheme, &meta.hasher).expect("corpus labels were validated");
        Project {
            meta,
            scheme,
            corpus,
            pool,
            index,
            features,
            heldout,
            log: Vec::new(),
            tickets: HashMap::new(),
            by_annotator: HashMap::new(),
            labels: BTreeMap::new(),
            generation: None,
            history: Vec::new(),
            training: false,
            last_error: None,
            dir,
        }
    }

    fn apply(&mut self, event: LogEvent, record: Option<GenerationRecord>) {
        match &event {
            LogEvent::Ticket { ticket_id, annotator, sentence_ids, .. } => {
                let ids = sentence_ids.iter().filter_map(|id| self.index.get(id).copied()).collect();
                self.tickets.insert(ticket_id.clone(), TicketInfo { annotator: annotator.clone(), ids });
            }
            LogEvent::Labels { annotator, labels, .. } => {
                for l in labels {
                    let i = self.index[&l.sentence_id];
                    self.by_annotator.insert((annotator.clone(), i), l.tag.clone());
                    self.labels.entry(i).or_default().push((annotator.clone(), l.tag.clone()));
                }
            }
            LogEvent::Model { generation, labeled_count, .. } => {
                let record = record.expect("model events carry their record");
                self.history.push(GenerationSummary {
                    generation: *generation,
                    labeled_count: *labeled_count,
                    accuracy: record.metrics.as_ref().map(|m| m.accuracy),
                    macro_f1: record.metrics.as_ref().map(|m| m.macro_f1),
                });
                self.generation = Some(Arc::new(record));
            }
        }
        self.log.push(event);
    }

    fn commit(&mut self, event: LogEvent, record: Option<GenerationRecord>) -> Result<(), ServiceError> {
        append_line(&self.dir.join("log.jsonl"), &event)?;
        self.apply(event, record);
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.meta.project_id
    }

    pub fn generation(&self) -> u64 {
        self.generation.as_ref().map_or(0, |g| g.generation)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    fn tickets_issued(&self) -> u64 {
        self.tickets.len() as u64
    }

    fn unlabeled(&self) -> Vec<usize> {
        (0..self.pool.len()).filter(|i| !self.labels.contains_key(i)).collect()
    }

    pub fn next_batch(&mut self, size: Option<usize>, annotator: &str) -> Result<BatchTicket, ServiceError> {
        if self.training {
            return Err(ServiceError::Busy);
        }
        if annotator.trim().is_empty() {
            return Err(ServiceError::invalid("missing_annotator", "annotator is required", serde_json::Value::Null));
        }
        let size = size.unwrap_or(self.meta.strategy.batch_size);
        if size == 0 {
            return Err(ServiceError::invalid("invalid_size", "batch size must be positive", json!({ "size": size })));
        }
        let unlabeled = self.unlabeled();
        if unlabeled.is_empty() {
            return Err(ServiceError::PoolExhausted);
        }
        let take = size.min(unlabeled.len());
        let seed = mix_seed(self.meta.seed, self.tickets_issued());
        let (picked, used) = propose(&self.features, &unlabeled, self.generation.as_deref(), &self.meta.strategy, take, seed)?;
        let ticket_id = format!("t{:06}-{}", self.tickets_issued() + 1, &config_hash(&(self.id(), seed, now_ms()))[..12]);
        let event = LogEvent::Ticket {
            ticket_id: ticket_id.clone(),
            annotator: annotator.to_owned(),
            sentence_ids: picked.iter().map(|&i| self.pool[i].id.clone()).collect(),
            strategy: used,
            generation: self.generation(),
            seed,
            final_batch: take == unlabeled.len(),
            at: now_ms(),
        };
        self.commit(event.clone(), None)?;
        let LogEvent::Ticket { at, final_batch, generation, .. } = event else { unreachable!() };
        Ok(BatchTicket {
            ticket_id,
            annotator: annotator.to_owned(),
            strategy_used: used,
            generation,
            seed,
            issued_at: at,
            final_batch,
            items: picked.iter().map(|&i| self.batch_item(i)).collect(),
        })
    }

    fn batch_item(&self, i: usize) -> BatchItem {
        let s = &self.pool[i];
        let context = self
            .corpus
            .context(&s.id.session_id, s.id.utterance_seq, CONTEXT_DEPTH)
            .into_iter()
            .map(|u| ContextUtterance { seq: u.seq, role: u.role, text: u.text.clone() })
            .collect();
        let allowed_tags = self.scheme.tags.iter().filter(|t| t.role.admits(s.role)).map(|t| t.name.clone()).collect();
        BatchItem { sentence_id: s.id.clone(), text: s.text.clone(), role: s.role, context, allowed_tags }
    }

    pub fn submit_labels(&mut self, req: SubmitLabels) -> Result<LabelsAccepted, ServiceError> {
        let ticket = self.tickets.get(&req.ticket_id).ok_or_else(|| ServiceError::TicketNotFound(req.ticket_id.clone()))?;
        if ticket.annotator != req.annotator {
            return Err(ServiceError::invalid(
                "annotator_mismatch",
                "ticket was issued to a different annotator",
                json!({ "ticket_annotator": ticket.annotator, "annotator": req.annotator }),
            ));
        }
        if req.labels.is_empty() {
            return Err(ServiceError::invalid("empty_submission", "no labels submitted", serde_json::Value::Null));
        }
        let mut problems: Vec<(&'static str, serde_json::Value)> = Vec::new();
        let mut conflicts = Vec::new();
        let mut seen = BTreeSet::new();
        let mut fresh = Vec::new();
        for (k, l) in req.labels.iter().enumerate() {
            let item = json!({ "index": k, "sentence_id": l.sentence_id, "tag": l.tag });
            let Some(&i) = self.index.get(&l.sentence_id).filter(|i| ticket.ids.contains(i)) else {
                problems.push(("not_in_ticket", item));
                continue;
            };
            if !seen.insert(i) {
                problems.push(("duplicate_in_request", item));
            } else if self.scheme.index_of(&l.tag).is_none() {
                problems.push(("unknown_tag", item));
            } else if !self.scheme.allows(&l.tag, self.pool[i].role) {
                problems.push(("role_mismatch", item));
            } else {
                match self.by_annotator.get(&(req.annotator.clone(), i)) {
                    Some(prev) if prev == &l.tag => {}
                    Some(_) => conflicts.push(item),
                    None => fresh.push(l.clone()),
                }
            }
        }
        if let Some(&(code, _)) = problems.first() {
            let items: Vec<serde_json::Value> = problems
                .into_iter()
                .map(|(code, mut item)| {
                    item["code"] = code.into();
                    item
                })
                .collect();
            let message = format!("{} invalid label(s); nothing was recorded", items.len());
            return Err(ServiceError::invalid(code, message, json!({ "items": items })));
        }
        if !conflicts.is_empty() {
            return Err(ServiceError::conflict("already_labeled", "annotator already gave a different tag", json!({ "items": conflicts })));
        }
        let accepted = req.labels.len();
        if fresh.is_empty() {
            return Ok(LabelsAccepted { accepted });
        }
        self.commit(LogEvent::Labels { ticket_id: req.ticket_id, annotator: req.annotator, labels: fresh, at: now_ms() }, None)?;
        Ok(LabelsAccepted { accepted })
    }

    /// Training set: the first logged tag of every labeled sentence, in pool
    /// order.
    fn training_examples(&self) -> (Vec<String>, Vec<Example>) {
        self.labels
            .iter()
            .map(|(&i, entries)| {
                let label = self.scheme.index_of(&entries[0].1).expect("logged tags are in the scheme");
                (self.pool[i].id.to_string(), Example { features: self.features[i].clone(), label })
            })
            .unzip()
    }

    pub fn start_retrain(&mut self) -> Result<TrainJob, ServiceError> {
        if self.training {
            return Err(ServiceError::Busy);
        }
        let (ids, examples) = self.training_examples();
        let distinct: BTreeSet<usize> = examples.iter().map(|e| e.label).collect();
        if distinct.len() < 2 {
            return Err(ServiceError::invalid(
                "insufficient_labels",
                "retraining needs labels for at least two distinct tags",
                json!({ "labeled": examples.len(), "distinct_tags": distinct.len() }),
            ));
        }
        self.training = true;
        let generation = self.generation() + 1;
        Ok(TrainJob {
            generation,
            tags: self.scheme.names().map(str::to_owned).collect(),
            ids,
            examples,
            heldout: self.heldout.clone(),
            config: TrainConfig { seed: mix_seed(self.meta.seed, 1 << 32 | generation), ..self.meta.train.clone() },
            hasher: self.meta.hasher,
            scheme_version: self.scheme.version.clone(),
            ensemble_size: self.meta.strategy.ensemble_size,
        })
    }

    pub fn finish_retrain(&mut self, result: Result<GenerationRecord, ServiceError>) -> Result<u64, ServiceError> {
        self.training = false;
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                self.last_error = Some(e.to_string());
                return Err(e);
            }
        };
        let path = generation_path(&self.dir, record.generation);
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string(&record)?)?;
        std::fs::rename(&tmp, &path)?;
        let generation = record.generation;
        let event = LogEvent::Model { generation, labeled_count: record.labeled_count, at: now_ms() };
        self.commit(event, Some(record))?;
        self.last_error = None;
        Ok(generation)
    }

    fn kappa(&self) -> (Option<f64>, usize) {
        let (a, b): (Vec<&str>, Vec<&str>) = self
            .labels
            .values()
            .filter_map(|entries| {
                let first = &entries[0];
                let second = entries.iter().find(|e| e.0 != first.0)?;
                Some((first.1.as_str(), second.1.as_str()))
            })
            .unzip();
        if a.is_empty() {
            return (None, 0);
        }
        (cohens_kappa(&a, &b).ok(), a.len())
    }

    pub fn status(&self) -> ProjectStatus {
        let mut per_tag_counts: BTreeMap<String, u64> = self.scheme.names().map(|n| (n.to_owned(), 0)).collect();
        for entries in self.labels.values() {
            *per_tag_counts.get_mut(&entries[0].1).expect("tag in scheme") += 1;
        }
        let annotators: BTreeSet<String> = self.by_annotator.keys().map(|(a, _)| a.clone()).collect();
        let (kappa, overlap) = self.kappa();
        let labeled = self.labels.len();
        ProjectStatus {
            project_id: self.meta.project_id.clone(),
            state: if self.training { ProjectState::Training } else { ProjectState::Idle },
            strategy: self.meta.strategy.kind,
            generation: self.generation(),
            total: self.pool.len(),
            labeled,
            pool: self.pool.len() - labeled,
            heldout: self.heldout.len(),
            annotators: annotators.into_iter().collect(),
            per_tag_counts,
            metrics: self.generation.as_ref().and_then(|g| g.metrics.clone()),
            history: self.history.clone(),
            data_map: self.generation.as_ref().map(|g| g.data_map.clone()).unwrap_or_default(),
            kappa,
            overlap,
            last_error: self.last_error.clone(),
        }
    }

    pub fn export(&self) -> Result<ProjectExport, ServiceError> {
        let data_map_csv = match &self.generation {
            Some(g) => {
                let labels: HashMap<String, String> = self
                    .labels
                    .iter()
                    .map(|(&i, entries)| (self.pool[i].id.to_string(), entries[0].1.clone()))
                    .collect();
                let roles = self.labels.keys().map(|&i| (self.pool[i].id.to_string(), self.pool[i].role)).collect();
                let table = Table::new(config_hash(&self.meta), data_map_rows(&g.data_map, &labels, &roles));
                Some(table.to_csv().map_err(|e| ServiceError::Internal(e.to_string()))?)
            }
            None => None,
        };
        let disagreements = self
            .labels
            .iter()
            .filter(|(_, e)| e.iter().any(|x| x.1 != e[0].1))
            .map(|(&i, e)| Disagreement { sentence_id: self.pool[i].id.clone(), labels: e.clone() })
            .collect();
        Ok(ProjectExport {
            meta: self.meta.clone(),
            scheme: self.scheme.clone(),
            corpus: export_string(&self.corpus),
            log: self.log.clone(),
            data_map_csv,
            model: self.generation.as_deref().cloned(),
            disagreements,
        })
    }
}

/// Reconstruct the next proposal from an export alone, without the
/// service: the same pool, labeled set, model and ticket seed.
pub fn offline_next_batch(export: &ProjectExport, size: Option<usize>) -> Result<(Vec<SentenceId>, StrategyKind), ServiceError> {
    let corpus = ingest_str(&export.corpus, &export.scheme).map_err(corpus_error)?;
    let pool: Vec<Sentence> = corpus.sentences().into_iter().filter(|s| s.gold.is_none()).collect();
    let features: Vec<FeatureVector> = pool.iter().map(|s| export.meta.hasher.featurize(&s.text)).collect();
    let mut labeled = BTreeSet::new();
    let mut tickets = 0u64;
    for e in &export.log {
        match e {
            LogEvent::Ticket { .. } => tickets += 1,
            LogEvent::Labels { labels, .. } => labeled.extend(labels.iter().map(|l| l.sentence_id.clone())),
            LogEvent::Model { .. } => {}
        }
    }
    let unlabeled: Vec<usize> = (0..pool.len()).filter(|&i| !labeled.contains(&pool[i].id)).collect();
    if unlabeled.is_empty() {
        return Err(ServiceError::PoolExhausted);
    }
    let take = size.unwrap_or(export.meta.strategy.batch_size).min(unlabeled.len());
    let seed = mix_seed(export.meta.seed, tickets);
    let (picked, kind) = propose(&features, &unlabeled, export.model.as_ref(), &export.meta.strategy, take, seed)?;
    Ok((picked.into_iter().map(|i| pool[i].id.clone()).collect(), kind))
}
