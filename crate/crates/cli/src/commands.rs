use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use dialcart_core::acquisition::{StrategyConfig, StrategyKind};
use dialcart_core::cartography::{build_data_map, per_label_bucket_distribution};
use dialcart_core::classifier::{argmax, Checkpoint, Classifier, FeatureHasher, LinearSoftmax, TrainConfig};
use dialcart_core::corpus::{
    cohens_kappa, export_string, ingest_corpus, label_frequency, split_sessions, Corpus, LabelScheme, Role, Sentence,
};
use dialcart_core::experiment::{aggregate_over_seeds, run_experiment, Dataset, ExperimentConfig, SimulationRun};
use dialcart_core::metrics;
use dialcart_core::reporting::{cartography_artifacts, config_hash, experiment_artifacts, write_bundle};
use dialcart_core::synth::{self, Profile, SynthConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{prepare_out, required, resolve, set};
use crate::Common;

fn load_scheme(path: Option<&Path>) -> Result<LabelScheme> {
    match path {
        Some(p) => LabelScheme::load(p).with_context(|| format!("loading scheme {}", p.display())),
        None => Ok(LabelScheme::default_scheme()),
    }
}

fn load_corpus(path: &Path, scheme: &LabelScheme) -> Result<Corpus> {
    ingest_corpus(path, scheme).with_context(|| format!("ingesting corpus {}", path.display()))
}

fn labeled(corpus: &Corpus, role: Option<Role>) -> Vec<Sentence> {
    corpus
        .sentences()
        .into_iter()
        .filter(|s| s.gold.is_some() && role.is_none_or(|r| s.role == r))
        .collect()
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn classifier_for(scheme: &LabelScheme, hasher: &FeatureHasher) -> LinearSoftmax {
    LinearSoftmax { n_classes: scheme.len(), dim: hasher.dim, scheme_version: scheme.version.clone() }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

// ---- ingest ------------------------------------------------------------

#[derive(Args)]
pub struct IngestArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct IngestConfig {
    corpus: Option<PathBuf>,
    scheme: Option<PathBuf>,
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let cfg: IngestConfig = resolve(a.common.config.as_deref(), |c: &mut IngestConfig| {
        set!(c, corpus <- a.corpus.map(Some), scheme <- a.scheme.map(Some));
    })?;
    let scheme = load_scheme(cfg.scheme.as_deref())?;
    let corpus = load_corpus(&required(&cfg.corpus, "corpus")?, &scheme)?;
    prepare_out(&a.common.out, &cfg)?;
    let sentences = corpus.sentences();
    let n_labeled = sentences.iter().filter(|s| s.gold.is_some()).count();
    let frequency = if n_labeled > 0 { label_frequency(&corpus)? } else { Vec::new() };
    let summary = json!({
        "sessions": corpus.sessions.len(),
        "utterances": corpus.utterance_count(),
        "sentences": sentences.len(),
        "labeled": n_labeled,
        "label_frequency": frequency,
    });
    std::fs::write(a.common.out.join("corpus.jsonl"), export_string(&corpus))?;
    std::fs::write(a.common.out.join("scheme.json"), scheme.to_json_string())?;
    write_json(a.common.out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

// ---- split -------------------------------------------------------------

#[derive(Args)]
pub struct SplitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<PathBuf>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct SplitConfig {
    corpus: Option<PathBuf>,
    scheme: Option<PathBuf>,
    test_fraction: f64,
    seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { corpus: None, scheme: None, test_fraction: 0.2, seed: 0 }
    }
}

pub fn split(a: SplitArgs) -> Result<()> {
    let cfg: SplitConfig = resolve(a.common.config.as_deref(), |c: &mut SplitConfig| {
        set!(c, corpus <- a.corpus.map(Some), scheme <- a.scheme.map(Some), test_fraction <- a.test_fraction, seed <- a.seed);
    })?;
    let scheme = load_scheme(cfg.scheme.as_deref())?;
    let corpus = load_corpus(&required(&cfg.corpus, "corpus")?, &scheme)?;
    let spec = split_sessions(&corpus, cfg.test_fraction, cfg.seed)?;
    prepare_out(&a.common.out, &cfg)?;
    write_json(a.common.out.join("split.json"), &spec)?;
    std::fs::write(a.common.out.join("train.jsonl"), export_string(&corpus.subset(&spec.train_sessions)))?;
    std::fs::write(a.common.out.join("test.jsonl"), export_string(&corpus.subset(&spec.test_sessions)))?;
    println!("train sessions: {}, test sessions: {}", spec.train_sessions.len(), spec.test_sessions.len());
    Ok(())
}

// ---- train -------------------------------------------------------------

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<PathBuf>,
    /// Labeled corpus to evaluate on after training.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainCmdConfig {
    corpus: Option<PathBuf>,
    scheme: Option<PathBuf>,
    test: Option<PathBuf>,
    train: TrainConfig,
    hasher: FeatureHasher,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg: TrainCmdConfig = resolve(a.common.config.as_deref(), |c: &mut TrainCmdConfig| {
        set!(c, corpus <- a.corpus.map(Some), scheme <- a.scheme.map(Some), test <- a.test.map(Some));
        set!(c.train, epochs <- a.epochs, seed <- a.seed);
    })?;
    let scheme = load_scheme(cfg.scheme.as_deref())?;
    let corpus = load_corpus(&required(&cfg.corpus, "corpus")?, &scheme)?;
    let data = Dataset::from_sentences(&labeled(&corpus, None), &scheme, &cfg.hasher)?;
    if data.is_empty() {
        bail!("corpus has no labeled sentences");
    }
    prepare_out(&a.common.out, &cfg)?;
    let model = classifier_for(&scheme, &cfg.hasher);
    let run = model.train(&data.examples(), &cfg.train)?;
    let mut summary = json!({ "examples": data.len(), "epoch_loss": run.epoch_loss });
    if let Some(test) = &cfg.test {
        let test = Dataset::from_sentences(&labeled(&load_corpus(test, &scheme)?, None), &scheme, &cfg.hasher)?;
        let preds: Vec<usize> =
            test.features.iter().map(|x| run.params.predict_proba(x).map(|p| argmax(&p))).collect::<Result<_, _>>()?;
        summary["test"] = json!({
            "n": test.len(),
            "accuracy": metrics::accuracy(&preds, &test.labels)?,
            "macro_f1": metrics::macro_f1(&preds, &test.labels, scheme.len())?,
        });
    }
    let tags = scheme.names().map(str::to_owned).collect();
    Checkpoint::new(run.params, cfg.hasher, tags).save(a.common.out.join("model.json"))?;
    write_json(a.common.out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary["test"])?);
    Ok(())
}

// ---- cartography -------------------------------------------------------

#[derive(Args)]
pub struct CartographyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict the map to one speaker role.
    #[arg(long)]
    role: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct CartographyConfig {
    corpus: Option<PathBuf>,
    scheme: Option<PathBuf>,
    role: Option<Role>,
    train: TrainConfig,
    hasher: FeatureHasher,
}

pub fn cartography(a: CartographyArgs) -> Result<()> {
    let role = a.role.as_deref().map(str::parse::<Role>).transpose().map_err(anyhow::Error::msg)?;
    let cfg: CartographyConfig = resolve(a.common.config.as_deref(), |c: &mut CartographyConfig| {
        set!(c, corpus <- a.corpus.map(Some), scheme <- a.scheme.map(Some), role <- role.map(Some));
        set!(c.train, epochs <- a.epochs, seed <- a.seed);
    })?;
    let scheme = load_scheme(cfg.scheme.as_deref())?;
    let corpus = load_corpus(&required(&cfg.corpus, "corpus")?, &scheme)?;
    let sentences = labeled(&corpus, cfg.role);
    if sentences.is_empty() {
        bail!("no labeled sentences to map");
    }
    let data = Dataset::from_sentences(&sentences, &scheme, &cfg.hasher)?;
    prepare_out(&a.common.out, &cfg)?;
    let run = classifier_for(&scheme, &cfg.hasher).train(&data.examples(), &cfg.train)?;
    let points = build_data_map(&run.dynamics, &data.ids)?;
    let labels: HashMap<String, String> =
        sentences.iter().map(|s| (s.id.to_string(), s.gold.clone().unwrap_or_default())).collect();
    let roles: HashMap<String, Role> = sentences.iter().map(|s| (s.id.to_string(), s.role)).collect();
    let dist = per_label_bucket_distribution(&points, &labels)?;
    let hash = config_hash(&cfg);
    let artifacts = cartography_artifacts(&points, &labels, &roles, &dist, &hash)?;
    write_bundle(&a.common.out, &artifacts, &hash, json!({ "command": "cartography", "points": points.len() }))?;
    let mut buckets = [0usize; 4];
    for p in &points {
        buckets[p.bucket.index()] += 1;
    }
    println!("points: {}, easy/medium/hard/impossible: {buckets:?}", points.len());
    Ok(())
}

// ---- simulate ----------------------------------------------------------

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Labeled corpus used as the pool (and the test set unless --test).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<PathBuf>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Strategy names, comma separated, or `all`.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<String>,
    /// Run seeds 0..N.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    initial: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    candidate_cap: Option<usize>,
    #[arg(long)]
    ensemble_size: Option<usize>,
    /// Parallel (strategy, seed) jobs. Does not affect results.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct SimulateConfig {
    corpus: Option<PathBuf>,
    test: Option<PathBuf>,
    scheme: Option<PathBuf>,
    test_fraction: f64,
    split_seed: u64,
    experiment: ExperimentConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { corpus: None, test: None, scheme: None, test_fraction: 0.2, split_seed: 0, experiment: ExperimentConfig::default() }
    }
}

/// Raw results kept next to the tables so `report` can rebuild them.
#[derive(Debug, Serialize, Deserialize)]
struct RunsFile {
    config_hash: String,
    runs: Vec<Vec<SimulationRun>>,
}

fn parse_strategies(names: &[String]) -> Result<Option<Vec<StrategyKind>>> {
    if names.is_empty() {
        return Ok(None);
    }
    if names.iter().any(|n| n == "all") {
        return Ok(Some(StrategyKind::ALL.to_vec()));
    }
    names.iter().map(|n| n.parse::<StrategyKind>().map_err(anyhow::Error::from)).collect::<Result<_>>().map(Some)
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let kinds = parse_strategies(&a.strategy)?;
    let cfg: SimulateConfig = resolve(a.common.config.as_deref(), |c: &mut SimulateConfig| {
        set!(c, corpus <- a.corpus.map(Some), test <- a.test.map(Some), scheme <- a.scheme.map(Some),
             test_fraction <- a.test_fraction, split_seed <- a.split_seed);
        let e = &mut c.experiment;
        set!(e, batch_size <- a.batch, initial_labeled <- a.initial, rounds <- a.rounds.map(Some),
             seeds <- a.seeds.map(|n| (0..n).collect()));
        set!(e.train, epochs <- a.epochs);
        if let Some(kinds) = kinds {
            e.strategies = kinds.into_iter().map(|k| StrategyConfig::new(k, e.batch_size)).collect();
        }
        for s in &mut e.strategies {
            s.batch_size = e.batch_size;
            set!(s, candidate_cap <- a.candidate_cap.map(Some), ensemble_size <- a.ensemble_size);
        }
    })?;
    let exp = &cfg.experiment;
    if exp.strategies.is_empty() || exp.seeds.is_empty() {
        bail!("need at least one strategy and one seed");
    }
    for s in &exp.strategies {
        s.validate().with_context(|| format!("strategy {}", s.kind))?;
    }
    let scheme = load_scheme(cfg.scheme.as_deref())?;
    let corpus = load_corpus(&required(&cfg.corpus, "corpus")?, &scheme)?;
    let (pool, test) = match &cfg.test {
        Some(t) => (labeled(&corpus, None), labeled(&load_corpus(t, &scheme)?, None)),
        None => {
            let spec = split_sessions(&corpus, cfg.test_fraction, cfg.split_seed)?;
            (labeled(&corpus.subset(&spec.train_sessions), None), labeled(&corpus.subset(&spec.test_sessions), None))
        }
    };
    let pool = Dataset::from_sentences(&pool, &scheme, &exp.hasher)?;
    let test = Dataset::from_sentences(&test, &scheme, &exp.hasher)?;
    exp.validate(pool.len())?;
    prepare_out(&a.common.out, &cfg)?;

    let tags: Vec<String> = scheme.names().map(str::to_owned).collect();
    let model = classifier_for(&scheme, &exp.hasher);
    let runs = run_experiment(&model, &pool, &test, exp, &tags, a.jobs.unwrap_or_else(default_jobs))?;
    let hash = config_hash(&cfg);
    let summary = emit_experiment(&a.common.out, &runs, &hash)?;
    write_json(a.common.out.join("runs.json"), &RunsFile { config_hash: hash, runs })?;
    println!("pool: {}, test: {}", pool.len(), test.len());
    for (strategy, s) in &summary {
        let f = |k: &str| s[k].as_f64().unwrap_or(f64::NAN);
        println!("{strategy}: final macro-F1 {:.4}, normalized AUC {:.4}", f("final_macro_f1"), f("auc_macro_f1"));
    }
    Ok(())
}

fn emit_experiment(out: &Path, runs: &[Vec<SimulationRun>], hash: &str) -> Result<BTreeMap<String, serde_json::Value>> {
    let curves = runs.iter().map(|r| aggregate_over_seeds(r)).collect::<Result<Vec<_>, _>>()?;
    let summary: BTreeMap<String, serde_json::Value> = curves
        .iter()
        .map(|c| {
            let last = c.points.last().map_or(0.0, |p| p.macro_f1.mean);
            (c.strategy.to_string(), json!({ "auc_macro_f1": c.normalized_auc(), "final_macro_f1": last }))
        })
        .collect();
    let artifacts = experiment_artifacts(runs, &curves, hash)?;
    write_bundle(out, &artifacts, hash, json!({ "command": "simulate", "summary": summary }))?;
    Ok(summary)
}

// ---- report ------------------------------------------------------------

#[derive(Args)]
pub struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory of a previous `simulate` run.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct ReportConfig {
    input: Option<PathBuf>,
}

pub fn report(a: ReportArgs) -> Result<()> {
    let cfg: ReportConfig = resolve(a.common.config.as_deref(), |c: &mut ReportConfig| {
        set!(c, input <- a.input.map(Some));
    })?;
    let input = required(&cfg.input, "input")?;
    let path = input.join("runs.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let file: RunsFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    prepare_out(&a.common.out, &cfg)?;
    emit_experiment(&a.common.out, &file.runs, &file.config_hash)?;
    println!("rebuilt report for {} strategies", file.runs.len());
    Ok(())
}

// ---- serve -------------------------------------------------------------

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: std::net::SocketAddr,
    #[arg(long, env = dialcart_service::DATA_DIR_ENV, default_value = "dialcart-data")]
    data_dir: PathBuf,
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let state = dialcart_service::AppState::open(&a.data_dir)
        .with_context(|| format!("opening data directory {}", a.data_dir.display()))?;
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("listening on http://{} (data in {})", a.addr, a.data_dir.display());
    rt.block_on(dialcart_service::serve(state, a.addr))?;
    Ok(())
}

// ---- kappa -------------------------------------------------------------

#[derive(Args)]
pub struct KappaArgs {
    #[command(flatten)]
    common: Common,
    /// First annotator's labeled corpus.
    #[arg(long)]
    a: Option<PathBuf>,
    /// Second annotator's labeled corpus.
    #[arg(long)]
    b: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct KappaConfig {
    a: Option<PathBuf>,
    b: Option<PathBuf>,
    scheme: Option<PathBuf>,
}

pub fn kappa(a: KappaArgs) -> Result<()> {
    let cfg: KappaConfig = resolve(a.common.config.as_deref(), |c: &mut KappaConfig| {
        set!(c, a <- a.a.map(Some), b <- a.b.map(Some), scheme <- a.scheme.map(Some));
    })?;
    let scheme = load_scheme(cfg.scheme.as_deref())?;
    let first = load_corpus(&required(&cfg.a, "a")?, &scheme)?;
    let second = load_corpus(&required(&cfg.b, "b")?, &scheme)?;
    let other: HashMap<_, _> = labeled(&second, None).into_iter().map(|s| (s.id, s.gold)).collect();
    let (xs, ys): (Vec<String>, Vec<String>) = labeled(&first, None)
        .into_iter()
        .filter_map(|s| Some((s.gold?, other.get(&s.id)?.clone()?)))
        .unzip();
    if xs.is_empty() {
        bail!("the two corpora share no labeled sentences");
    }
    let k = cohens_kappa(&xs, &ys)?;
    let agree = xs.iter().zip(&ys).filter(|(x, y)| x == y).count();
    prepare_out(&a.common.out, &cfg)?;
    let result = json!({ "kappa": k, "n": xs.len(), "observed_agreement": agree as f64 / xs.len() as f64 });
    write_json(a.common.out.join("kappa.json"), &result)?;
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

// ---- synth -------------------------------------------------------------

#[derive(Clone, Copy, ValueEnum)]
enum Imbalance {
    /// The seven student tags at their reported frequencies plus a majority class.
    Table1,
    Uniform,
}

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    sentences: Option<usize>,
    #[arg(long, value_enum)]
    imbalance: Option<Imbalance>,
    /// Class count for the uniform profile.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    signal: Option<f64>,
    /// Fraction of gold labels flipped to another class.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let classes = a.classes;
    let cfg: SynthConfig = resolve(a.common.config.as_deref(), |c: &mut SynthConfig| {
        set!(c, sessions <- a.sessions, sentences <- a.sentences, signal <- a.signal, label_noise <- a.noise, seed <- a.seed);
        match (a.imbalance, c.profile) {
            (Some(Imbalance::Table1), _) => c.profile = Profile::Skewed,
            (Some(Imbalance::Uniform), _) => c.profile = Profile::Uniform { classes: classes.unwrap_or(4) },
            (None, Profile::Uniform { .. }) if classes.is_some() => {
                c.profile = Profile::Uniform { classes: classes.unwrap_or(4) }
            }
            _ => {}
        }
    })?;
    let s = synth::generate(&cfg)?;
    prepare_out(&a.common.out, &cfg)?;
    std::fs::write(a.common.out.join("corpus.jsonl"), export_string(&s.corpus))?;
    std::fs::write(a.common.out.join("scheme.json"), s.scheme.to_json_string())?;
    let flipped: BTreeMap<String, &String> = s.flipped.iter().map(|(id, t)| (id.to_string(), t)).collect();
    write_json(a.common.out.join("flipped.json"), &flipped)?;
    println!("sessions: {}, sentences: {}, flipped: {}", s.corpus.sessions.len(), s.corpus.sentences().len(), flipped.len());
    Ok(())
}

// ---- select ------------------------------------------------------------

#[derive(Args)]
pub struct SelectArgs {
    #[command(flatten)]
    common: Common,
    /// JSON body of `GET /projects/{id}/export`.
    #[arg(long)]
    export: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct SelectConfig {
    export: Option<PathBuf>,
    size: Option<usize>,
}

pub fn select(a: SelectArgs) -> Result<()> {
    let cfg: SelectConfig = resolve(a.common.config.as_deref(), |c: &mut SelectConfig| {
        set!(c, export <- a.export.map(Some), size <- a.size.map(Some));
    })?;
    let path = required(&cfg.export, "export")?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let export: dialcart_service::wire::ProjectExport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let (ids, kind) = dialcart_service::offline_next_batch(&export, cfg.size)?;
    prepare_out(&a.common.out, &cfg)?;
    let batch = json!({ "strategy": kind, "sentence_ids": ids });
    write_json(a.common.out.join("batch.json"), &batch)?;
    println!("{}", serde_json::to_string(&batch)?);
    Ok(())
}
