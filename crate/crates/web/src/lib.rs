//! Browser demo: a data-map explorer, strategy learning curves on a small
//! skewed corpus, and an acquisition score calculator. Each export takes
//! plain arguments and returns a JSON string for the page to parse.

use dialcart_core::acquisition::{coremse_uncertainty, entropy_score, least_confidence_score, StrategyConfig, StrategyKind};
use dialcart_core::cartography::{build_data_map, Bucket};
use dialcart_core::classifier::{Classifier, FeatureHasher, LinearSoftmax, TrainConfig};
use dialcart_core::corpus::split_sessions;
use dialcart_core::experiment::{aggregate_over_seeds, run_experiment, Dataset, ExperimentConfig};
use dialcart_core::reporting::{data_map_svg, learning_curve_svg, Metric};
use dialcart_core::synth::{self, Profile, SynthConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct MapPoint {
    pub id: String,
    pub tag: String,
    pub confidence: f64,
    pub variability: f64,
    pub correctness: f64,
    pub bucket: Bucket,
    pub flipped: bool,
}

#[derive(Debug, Serialize)]
pub struct MapView {
    pub svg: String,
    pub points: Vec<MapPoint>,
    /// Counts per bucket, easy to impossible.
    pub buckets: [usize; 4],
    pub flipped: usize,
    /// Flipped points in the lower half of the confidence ranking.
    pub flipped_low: usize,
}

/// Train on a uniform synthetic corpus with `noise` of its labels flipped
/// and map every sentence.
pub fn explore_data_map(noise: f64, sentences: usize, epochs: usize, seed: u64) -> Result<MapView, String> {
    let s = synth::generate(&SynthConfig {
        profile: Profile::Uniform { classes: 4 },
        sentences,
        sessions: (sentences / 40).max(2),
        label_noise: noise,
        seed,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let hasher = FeatureHasher::default();
    let sentences = s.corpus.sentences();
    let data = Dataset::from_sentences(&sentences, &s.scheme, &hasher).map_err(|e| e.to_string())?;
    let model = LinearSoftmax { n_classes: s.scheme.len(), dim: hasher.dim, scheme_version: s.scheme.version.clone() };
    let run = model
        .train(&data.examples(), &TrainConfig { epochs, seed, ..TrainConfig::default() })
        .map_err(|e| e.to_string())?;
    let map = build_data_map(&run.dynamics, &data.ids).map_err(|e| e.to_string())?;
    let svg = data_map_svg(&map, &format!("Data map, {:.0}% labels flipped", noise * 100.0)).map_err(|e| e.to_string())?;

    let mut by_conf: Vec<usize> = (0..map.len()).collect();
    by_conf.sort_by(|&a, &b| map[a].confidence.total_cmp(&map[b].confidence).then(a.cmp(&b)));
    let low: std::collections::HashSet<usize> = by_conf[..map.len() / 2].iter().copied().collect();

    let mut buckets = [0; 4];
    let mut flipped_low = 0;
    let points: Vec<MapPoint> = map
        .into_iter()
        .zip(&sentences)
        .enumerate()
        .map(|(i, (p, s_))| {
            buckets[p.bucket.index()] += 1;
            let flipped = s.flipped.contains_key(&s_.id);
            if flipped && low.contains(&i) {
                flipped_low += 1;
            }
            MapPoint {
                id: p.id,
                tag: s_.gold.clone().unwrap_or_default(),
                confidence: p.confidence,
                variability: p.variability,
                correctness: p.correctness,
                bucket: p.bucket,
                flipped,
            }
        })
        .collect();
    Ok(MapView { svg, points, buckets, flipped: s.flipped.len(), flipped_low })
}

#[derive(Debug, Serialize)]
pub struct CurveView {
    pub strategy: StrategyKind,
    pub auc: f64,
    pub labeled: Vec<usize>,
    pub macro_f1: Vec<f64>,
    pub macro_f1_std: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct CurvesView {
    pub svg: String,
    pub curves: Vec<CurveView>,
    pub pool: usize,
    pub test: usize,
}

/// Simulated acquisition on a skewed synthetic corpus, small enough to run
/// in a page.
pub fn compare_strategies(strategies: &str, seeds: u64, rounds: usize, batch: usize) -> Result<CurvesView, String> {
    let kinds: Vec<StrategyKind> = strategies
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: dialcart_core::acquisition::AcquisitionError| e.to_string()))
        .collect::<Result<_, _>>()?;
    if kinds.is_empty() {
        return Err("pick at least one strategy".into());
    }
    let s = synth::generate(&SynthConfig { sentences: 900, sessions: 24, ..SynthConfig::default() }).map_err(|e| e.to_string())?;
    let split = split_sessions(&s.corpus, 0.25, 0).map_err(|e| e.to_string())?;
    let hasher = FeatureHasher::default();
    let dataset = |ids| Dataset::from_sentences(&s.corpus.subset(ids).sentences(), &s.scheme, &hasher).map_err(|e| e.to_string());
    let pool = dataset(&split.train_sessions)?;
    let test = dataset(&split.test_sessions)?;
    let config = ExperimentConfig {
        initial_labeled: batch,
        batch_size: batch,
        rounds: Some(rounds),
        strategies: kinds.iter().map(|&k| StrategyConfig::new(k, batch)).collect(),
        seeds: (0..seeds.max(1)).collect(),
        train: TrainConfig { epochs: 10, ..TrainConfig::default() },
        hasher,
    };
    config.validate(pool.len()).map_err(|e| e.to_string())?;
    let tags: Vec<String> = s.scheme.names().map(str::to_owned).collect();
    let model = LinearSoftmax { n_classes: tags.len(), dim: hasher.dim, scheme_version: s.scheme.version.clone() };
    let runs = run_experiment(&model, &pool, &test, &config, &tags, 1).map_err(|e| e.to_string())?;
    let curves = runs.iter().map(|r| aggregate_over_seeds(r)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    let svg = learning_curve_svg(&curves, Metric::MacroF1).map_err(|e| e.to_string())?;
    let curves = curves
        .iter()
        .map(|c| CurveView {
            strategy: c.strategy,
            auc: c.normalized_auc(),
            labeled: c.points.iter().map(|p| p.labeled_count).collect(),
            macro_f1: c.points.iter().map(|p| p.macro_f1.mean).collect(),
            macro_f1_std: c.points.iter().map(|p| p.macro_f1.std).collect(),
        })
        .collect();
    Ok(CurvesView { svg, curves, pool: pool.len(), test: test.len() })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Scores {
    pub mean: Vec<f64>,
    pub entropy: f64,
    pub least_confidence: f64,
    /// Ensemble variance; zero for a single distribution.
    pub coremse: f64,
}

/// Scores for one instance given one or more predictive distributions.
pub fn score_distributions(ensemble: &[Vec<f64>]) -> Result<Scores, String> {
    let first = ensemble.first().ok_or("no distributions")?;
    if ensemble.iter().any(|d| d.len() != first.len()) {
        return Err("distributions differ in length".into());
    }
    let coremse = coremse_uncertainty(ensemble).map_err(|e| e.to_string())?;
    let k = ensemble.len() as f64;
    let mean: Vec<f64> = (0..first.len()).map(|c| ensemble.iter().map(|d| d[c]).sum::<f64>() / k).collect();
    Ok(Scores {
        entropy: entropy_score(&mean).map_err(|e| e.to_string())?,
        least_confidence: least_confidence_score(&mean).map_err(|e| e.to_string())?,
        coremse,
        mean,
    })
}

/// Parse `0.7 0.2 0.1; 0.5 0.3 0.2`: one distribution per `;` or line.
pub fn parse_distributions(text: &str) -> Result<Vec<Vec<f64>>, String> {
    text.split([';', '\n'])
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
                .collect()
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = dataMap)]
pub fn data_map(noise: f64, sentences: usize, epochs: usize, seed: u64) -> Result<String, JsError> {
    to_js(explore_data_map(noise, sentences, epochs, seed))
}

#[wasm_bindgen(js_name = learningCurves)]
pub fn learning_curves(strategies: &str, seeds: u64, rounds: usize, batch: usize) -> Result<String, JsError> {
    to_js(compare_strategies(strategies, seeds, rounds, batch))
}

#[wasm_bindgen(js_name = acquisitionScores)]
pub fn acquisition_scores(text: &str) -> Result<String, JsError> {
    to_js(parse_distributions(text).and_then(|d| score_distributions(&d)))
}

