use std::collections::{BTreeSet, HashMap};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use dialcart_core::acquisition::{coremse_select, StrategyConfig};
use dialcart_core::classifier::LinearSoftmax;
use dialcart_core::corpus::{export_string, ingest_str, Corpus, SentenceId};
use dialcart_core::experiment::build_candidates;
use dialcart_core::synth::{self, Profile, SynthConfig};
use dialcart_service::wire::{BatchTicket, CreateProject, LabelEntry, LogEvent, ProjectExport, ProjectState, ProjectStatus, SubmitLabels};
use dialcart_service::{offline_next_batch, router, AppState, ErrorBody, Project, ServiceError};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    corpus: String,
    scheme: Value,
    gold: HashMap<SentenceId, String>,
}

/// Uniform synthetic corpus; the last two sessions keep their gold labels
/// and become the held-out set, the rest are stripped.
fn fixture(sentences: usize) -> Fixture {
    let s = synth::generate(&SynthConfig {
        profile: Profile::Uniform { classes: 3 },
        sentences,
        sessions: 12,
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap();
    let gold = s.corpus.sentences().into_iter().map(|x| (x.id, x.gold.unwrap())).collect();
    let keep = s.corpus.sessions.len() - 2;
    let mut corpus = Corpus { sessions: s.corpus.sessions.clone() };
    for session in &mut corpus.sessions[..keep] {
        for u in &mut session.utterances {
            u.labels = None;
        }
    }
    Fixture {
        corpus: export_string(&corpus),
        scheme: serde_json::from_str(&s.scheme.to_json_string()).unwrap(),
        gold,
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router, f: &Fixture, strategy: &str, batch: usize) -> String {
    let body = json!({ "corpus": f.corpus, "scheme": f.scheme, "strategy": strategy, "batch_size": batch, "seed": 3,
                       "train": { "epochs": 10 } });
    let (status, v) = call(app, "POST", "/projects", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v["project_id"].as_str().unwrap().to_owned()
}

async fn batch(app: &Router, id: &str, size: usize, annotator: &str) -> BatchTicket {
    let (status, v) = call(app, "GET", &format!("/projects/{id}/batch?size={size}&annotator={annotator}"), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

fn gold_labels(f: &Fixture, ticket: &BatchTicket) -> Value {
    let labels: Vec<Value> = ticket
        .items
        .iter()
        .map(|it| json!({ "sentence_id": it.sentence_id, "tag": f.gold[&it.sentence_id] }))
        .collect();
    json!({ "ticket_id": ticket.ticket_id, "annotator": ticket.annotator, "labels": labels })
}

async fn submit(app: &Router, id: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", &format!("/projects/{id}/labels"), Some(body)).await
}

async fn status(app: &Router, id: &str) -> ProjectStatus {
    let (code, v) = call(app, "GET", &format!("/projects/{id}/status"), None).await;
    assert_eq!(code, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

async fn export(app: &Router, id: &str) -> ProjectExport {
    let (code, v) = call(app, "GET", &format!("/projects/{id}/export"), None).await;
    assert_eq!(code, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

fn error(v: Value) -> ErrorBody {
    serde_json::from_value(v).unwrap()
}

fn app(dir: &std::path::Path) -> Router {
    router(AppState::open(dir).unwrap())
}

fn log_len(dir: &std::path::Path, id: &str) -> usize {
    std::fs::read_to_string(dir.join(id).join("log.jsonl")).unwrap().lines().count()
}

#[tokio::test]
async fn create_reports_sizes_and_rejects_bad_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let f = fixture(240);
    let a = create(&app, &f, "random", 50).await;
    let b = create(&app, &f, "random", 50).await;
    assert_ne!(a, b, "duplicate create is a new project");

    let st = status(&app, &a).await;
    assert_eq!((st.labeled, st.generation), (0, 0));
    assert_eq!(st.labeled + st.pool, st.total);
    assert!(st.heldout > 0);
    assert!(st.kappa.is_none() && st.metrics.is_none());

    let bad = json!({ "version": "x", "tags": [{ "name": "Only", "role": "both" }] });
    let (code, v) = call(&app, "POST", "/projects", Some(json!({ "corpus": f.corpus, "scheme": bad, "strategy": "random" }))).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    let e = error(v);
    assert_eq!(e.code, "unknown_tag");
    assert!(e.detail["line"].as_u64().is_some());

    let (code, v) = call(&app, "POST", "/projects", Some(json!({ "corpus": f.corpus, "scheme": f.scheme, "strategy": "greedy" }))).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error(v).code, "unknown_strategy");

    let (code, v) = call(&app, "GET", "/projects/nope/status", None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert_eq!(error(v).code, "project_not_found");
}

#[tokio::test]
async fn cold_start_batches_are_random_disjoint_and_carry_context() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let f = fixture(300);
    let id = create(&app, &f, "coremse", 50).await;

    let first = batch(&app, &id, 50, "ann").await;
    assert_eq!(first.items.len(), 50);
    assert_eq!(first.strategy_used.as_str(), "random");
    assert_eq!(first.generation, 0);
    assert!(!first.final_batch);
    for it in &first.items {
        assert!(it.context.len() <= 2);
        assert!(it.context.iter().all(|c| c.seq < it.sentence_id.utterance_seq));
        assert!(!it.allowed_tags.is_empty());
    }
    let (code, v) = submit(&app, &id, gold_labels(&f, &first)).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(v["accepted"], 50);

    let second = batch(&app, &id, 10, "ann").await;
    let a: BTreeSet<_> = first.items.iter().map(|i| &i.sentence_id).collect();
    assert!(second.items.iter().all(|i| !a.contains(&i.sentence_id)));

    let st = status(&app, &id).await;
    assert_eq!(st.labeled, 50);
    assert_eq!(st.labeled + st.pool, st.total);
    assert_eq!(st.per_tag_counts.values().sum::<u64>(), 50);

    let (code, v) = call(&app, "GET", &format!("/projects/{id}/batch?size=0&annotator=ann"), None).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    let (code, _) = call(&app, "GET", &format!("/projects/{id}/batch?size=5"), None).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn submissions_are_idempotent_and_atomic() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let f = fixture(240);
    let id = create(&app, &f, "entropy", 20).await;
    let t = batch(&app, &id, 10, "ann").await;
    let good = gold_labels(&f, &t);

    let mut bad = good.clone();
    bad["labels"][3]["tag"] = json!("No Such Tag");
    let before = log_len(dir.path(), &id);
    let (code, v) = submit(&app, &id, bad).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    let e = error(v);
    assert_eq!(e.code, "unknown_tag");
    assert_eq!(e.detail["items"].as_array().unwrap().len(), 1);
    assert_eq!(log_len(dir.path(), &id), before);
    assert_eq!(status(&app, &id).await.labeled, 0);

    let mut foreign = good.clone();
    foreign["labels"][0]["sentence_id"] = json!("zz:0:0");
    let (code, v) = submit(&app, &id, foreign).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error(v).code, "not_in_ticket");

    let mut other = good.clone();
    other["annotator"] = json!("someone-else");
    let (code, v) = submit(&app, &id, other).await;
    assert_eq!((code, error(v).code.as_str()), (StatusCode::UNPROCESSABLE_ENTITY, "annotator_mismatch"));

    let (code, v) = submit(&app, &id, json!({ "ticket_id": "t-missing", "annotator": "ann", "labels": [] })).await;
    assert_eq!((code, error(v).code.as_str()), (StatusCode::NOT_FOUND, "ticket_not_found"));

    let (code, first) = submit(&app, &id, good.clone()).await;
    assert_eq!(code, StatusCode::OK);
    let after = log_len(dir.path(), &id);
    assert_eq!(after, before + 1);
    let (code, replay) = submit(&app, &id, good.clone()).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(first, replay);
    assert_eq!(log_len(dir.path(), &id), after);

    let mut changed = good.clone();
    let current = changed["labels"][0]["tag"].as_str().unwrap().to_owned();
    let alt = f.scheme["tags"].as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).find(|n| *n != current).unwrap();
    changed["labels"][0]["tag"] = json!(alt);
    let (code, v) = submit(&app, &id, changed).await;
    assert_eq!((code, error(v).code.as_str()), (StatusCode::CONFLICT, "already_labeled"));
    assert_eq!(log_len(dir.path(), &id), after);
}

#[tokio::test]
async fn retrain_rules_and_generations() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let f = fixture(300);
    let id = create(&app, &f, "least_confidence", 20).await;

    let (code, v) = call(&app, "POST", &format!("/projects/{id}/retrain"), None).await;
    assert_eq!((code, error(v).code.as_str()), (StatusCode::UNPROCESSABLE_ENTITY, "insufficient_labels"));

    // two labels of two different tags suffice
    let t = batch(&app, &id, 30, "ann").await;
    let mut picked: Vec<&dialcart_service::wire::BatchItem> = Vec::new();
    for it in &t.items {
        if picked.iter().all(|p| f.gold[&p.sentence_id] != f.gold[&it.sentence_id]) {
            picked.push(it);
        }
    }
    let labels: Vec<Value> = picked[..2].iter().map(|it| json!({ "sentence_id": it.sentence_id, "tag": f.gold[&it.sentence_id] })).collect();
    let (code, _) = submit(&app, &id, json!({ "ticket_id": t.ticket_id, "annotator": "ann", "labels": labels })).await;
    assert_eq!(code, StatusCode::OK);

    let (code, v) = call(&app, "POST", &format!("/projects/{id}/retrain"), None).await;
    assert_eq!(code, StatusCode::ACCEPTED, "{v}");
    assert_eq!(v["generation"], 1);
    let (code, v) = call(&app, "POST", &format!("/projects/{id}/retrain"), None).await;
    if code != StatusCode::ACCEPTED {
        assert_eq!((code, error(v).code.as_str()), (StatusCode::CONFLICT, "busy"));
    }
    let mut last = 0;
    for _ in 0..500 {
        let st = status(&app, &id).await;
        if st.state == ProjectState::Idle && st.generation >= 1 {
            last = st.generation;
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    assert!(last >= 1);

    let (code, v) = submit(&app, &id, gold_labels(&f, &t)).await;
    assert_eq!((code, v["accepted"].as_u64()), (StatusCode::OK, Some(30)));
    let (code, v) = call(&app, "POST", &format!("/projects/{id}/retrain?wait=true"), None).await;
    assert_eq!(code, StatusCode::OK, "{v}");
    assert_eq!(v["generation"].as_u64(), Some(last + 1));

    let st = status(&app, &id).await;
    assert_eq!(st.generation, last + 1);
    assert_eq!(st.data_map.len(), 30);
    let m = st.metrics.unwrap();
    assert_eq!(m.n, st.heldout);
    assert!((0.0..=1.0).contains(&m.accuracy));
    let gens: Vec<u64> = st.history.iter().map(|h| h.generation).collect();
    assert!(gens.windows(2).all(|w| w[0] < w[1]));

    let ex = export(&app, &id).await;
    let csv = ex.data_map_csv.unwrap();
    assert!(csv.starts_with("# config_hash: "));
    assert_eq!(csv.lines().count(), 2 + 30);
}

#[test]
fn training_state_blocks_batches_and_second_retrain() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(240);
    let req: CreateProject =
        serde_json::from_value(json!({ "corpus": f.corpus, "scheme": f.scheme, "strategy": "entropy" })).unwrap();
    let mut p = Project::create(dir.path(), "p1".into(), &req).unwrap();
    let t = p.next_batch(Some(20), "ann").unwrap();
    let labels = t.items.iter().map(|it| LabelEntry { sentence_id: it.sentence_id.clone(), tag: f.gold[&it.sentence_id].clone() });
    p.submit_labels(SubmitLabels { ticket_id: t.ticket_id.clone(), annotator: "ann".into(), labels: labels.collect() }).unwrap();

    let job = p.start_retrain().unwrap();
    assert!(p.is_training());
    assert!(matches!(p.next_batch(None, "ann"), Err(ServiceError::Busy)));
    assert!(matches!(p.start_retrain(), Err(ServiceError::Busy)));
    assert_eq!(ServiceError::Busy.status(), StatusCode::CONFLICT);
    // reads continue against the previous generation
    assert_eq!(p.status().generation, 0);
    assert_eq!(p.status().state, ProjectState::Training);

    assert_eq!(p.finish_retrain(job.run()).unwrap(), 1);
    assert_eq!(p.status().state, ProjectState::Idle);
    assert_eq!(p.next_batch(None, "ann").unwrap().strategy_used.as_str(), "entropy");
}

#[tokio::test]
async fn kappa_appears_only_with_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let f = fixture(240);
    let id = create(&app, &f, "random", 20).await;
    let a = batch(&app, &id, 10, "alice").await;
    // outstanding tickets do not lock sentences
    let b = batch(&app, &id, 10, "bob").await;
    submit(&app, &id, gold_labels(&f, &a)).await;
    let st = status(&app, &id).await;
    assert!(st.kappa.is_none());
    assert_eq!(st.overlap, 0);

    submit(&app, &id, gold_labels(&f, &b)).await;
    let ids_a: BTreeSet<_> = a.items.iter().map(|i| i.sentence_id.clone()).collect();
    let shared = b.items.iter().filter(|i| ids_a.contains(&i.sentence_id)).count();
    let st = status(&app, &id).await;
    assert_eq!(st.overlap, shared);
    assert_eq!(st.kappa.is_some(), shared > 0);
    assert_eq!(st.annotators, vec!["alice".to_owned(), "bob".to_owned()]);
    let ex = export(&app, &id).await;
    assert!(ex.disagreements.is_empty(), "both annotators used gold tags");
}

#[tokio::test]
async fn restart_replays_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(300);
    let (id, before, exported) = {
        let app = app(dir.path());
        let id = create(&app, &f, "coremse", 20).await;
        let t = batch(&app, &id, 40, "ann").await;
        submit(&app, &id, gold_labels(&f, &t)).await;
        let (code, _) = call(&app, "POST", &format!("/projects/{id}/retrain?wait=true"), None).await;
        assert_eq!(code, StatusCode::OK);
        let t = batch(&app, &id, 10, "ann").await;
        submit(&app, &id, gold_labels(&f, &t)).await;
        batch(&app, &id, 5, "other").await;
        (id.clone(), status(&app, &id).await, export(&app, &id).await)
    };
    let app = app(dir.path());
    assert_eq!(status(&app, &id).await, before);
    assert_eq!(export(&app, &id).await, exported);
    assert_eq!(before.labeled, 50);
    // new projects after a restart get fresh ids
    let other = create(&app, &f, "random", 10).await;
    assert_ne!(other, id);
}

#[tokio::test]
async fn live_coremse_batch_matches_offline_selection() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let f = fixture(400);
    let id = create(&app, &f, "coremse", 25).await;
    let t = batch(&app, &id, 60, "ann").await;
    submit(&app, &id, gold_labels(&f, &t)).await;
    let (code, _) = call(&app, "POST", &format!("/projects/{id}/retrain?wait=true"), None).await;
    assert_eq!(code, StatusCode::OK);

    let ex = export(&app, &id).await;
    let (offline, kind) = offline_next_batch(&ex, None).unwrap();
    assert_eq!(kind.as_str(), "coremse");

    // independent composition straight from the acquisition module
    let corpus = ingest_str(&ex.corpus, &ex.scheme).unwrap();
    let pool: Vec<_> = corpus.sentences().into_iter().filter(|s| s.gold.is_none()).collect();
    let labeled: BTreeSet<SentenceId> = ex
        .log
        .iter()
        .flat_map(|e| match e {
            LogEvent::Labels { labels, .. } => labels.iter().map(|l| l.sentence_id.clone()).collect(),
            _ => Vec::new(),
        })
        .collect();
    let tickets = ex.log.iter().filter(|e| matches!(e, LogEvent::Ticket { .. })).count() as u64;
    let unlabeled: Vec<usize> = (0..pool.len()).filter(|&i| !labeled.contains(&pool[i].id)).collect();
    let features: Vec<_> = pool.iter().map(|s| ex.meta.hasher.featurize(&s.text)).collect();
    let model = ex.model.as_ref().unwrap();
    let ck = &model.checkpoint;
    let clf = LinearSoftmax { n_classes: ck.tags.len(), dim: ck.hasher.dim, scheme_version: ck.scheme_version.clone() };
    let candidates = build_candidates(&clf, &ck.params, Some(&model.ensemble), &features, &unlabeled).unwrap();
    let config = StrategyConfig {
        batch_size: 25,
        candidate_cap: Some(250),
        seed: dialcart_core::experiment::mix_seed(ex.meta.seed, tickets),
        ..ex.meta.strategy.clone()
    };
    let direct: Vec<SentenceId> = coremse_select(&candidates, &config).unwrap().into_iter().map(|i| pool[i].id.clone()).collect();
    assert_eq!(offline, direct);

    let live = batch(&app, &id, 25, "ann").await;
    assert_eq!(live.strategy_used.as_str(), "coremse");
    assert_eq!(live.generation, 1);
    let live_ids: Vec<SentenceId> = live.items.iter().map(|i| i.sentence_id.clone()).collect();
    assert_eq!(live_ids, offline);
}

#[tokio::test]
async fn oversized_request_returns_remaining_pool_as_final() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let f = fixture(120);
    let id = create(&app, &f, "random", 50).await;
    let pool = status(&app, &id).await.pool;
    let first = batch(&app, &id, pool - 5, "ann").await;
    submit(&app, &id, gold_labels(&f, &first)).await;
    let last = batch(&app, &id, 50, "ann").await;
    assert_eq!(last.items.len(), 5);
    assert!(last.final_batch);
    submit(&app, &id, gold_labels(&f, &last)).await;
    let st = status(&app, &id).await;
    assert_eq!((st.labeled, st.pool), (pool, 0));
    let (code, v) = call(&app, "GET", &format!("/projects/{id}/batch?annotator=ann"), None).await;
    assert_eq!((code, error(v).code.as_str()), (StatusCode::CONFLICT, "pool_exhausted"));
}
