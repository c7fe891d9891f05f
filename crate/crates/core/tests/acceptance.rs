//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeSet, HashSet};
use std::time::{Duration, Instant};

use dialcart_core::acquisition::{self, Candidate, InstanceId, StrategyConfig, StrategyKind};
use dialcart_core::cartography::{self, Bucket};
use dialcart_core::classifier::{
    cross_entropy, cross_entropy_gradient, Classifier, Example, FeatureHasher, FeatureVector, LinearSoftmax,
    ModelParams, TrainConfig, TrainingDynamics,
};
use dialcart_core::corpus::{cohens_kappa, split_sessions, Corpus};
use dialcart_core::experiment::{
    aggregate_over_seeds, cumulative_sampling_frequency, run_experiment, Dataset, ExperimentConfig,
};
use dialcart_core::metrics::{macro_f1, per_label_f1};
use dialcart_core::synth::{self, Profile, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    let criteria: Vec<(&str, Duration, fn() -> Outcome)> = vec![
        ("cartography oracle equivalence", Duration::from_secs(10), cartography_oracle),
        ("strategy correctness on small pools", Duration::from_secs(10), strategy_oracles),
        ("active-learning loop invariants", Duration::from_secs(120), loop_invariants),
        ("gradient check", Duration::from_secs(5), gradient_check),
        ("noise detection", Duration::from_secs(60), noise_detection),
        ("directional active-learning benefit", Duration::from_secs(600), directional_benefit),
        ("metric unit checks", Duration::from_secs(1), metric_units),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let took = start.elapsed();
        let pass = result.pass && took <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.2}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// ---- cartography -------------------------------------------------------

fn naive_stats(probs: &[f64], flags: &[bool]) -> (f64, f64, f64, Bucket) {
    let e = probs.len();
    let mut sum = 0.0;
    for i in (0..e).rev() {
        sum += probs[i];
    }
    let mean = sum / e as f64;
    let mut sq = 0.0;
    for i in (0..e).rev() {
        let d = probs[i] - mean;
        sq += d * d;
    }
    let mut hits = 0;
    for &f in flags {
        if f {
            hits += 1;
        }
    }
    let cor = hits as f64 / flags.len() as f64;
    // Compare hit counts against thresholds in integer arithmetic.
    let n = flags.len();
    let bucket = if 4 * hits >= 3 * n {
        Bucket::Easy
    } else if 2 * hits >= n {
        Bucket::Medium
    } else if 4 * hits >= n {
        Bucket::Hard
    } else {
        Bucket::Impossible
    };
    (mean, (sq / e as f64).sqrt(), cor, bucket)
}

fn cartography_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut bucket_mismatch = 0;
    let mut boundary_hits = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=200);
        let e = rng.gen_range(1..=30);
        let mut gold = Vec::with_capacity(n);
        let mut correct = Vec::with_capacity(n);
        for _ in 0..n {
            let skew: f64 = rng.gen();
            gold.push((0..e).map(|_| rng.gen::<f64>().powf(skew * 3.0)).collect::<Vec<f64>>());
            let rate: f64 = rng.gen();
            correct.push((0..e).map(|_| rng.gen_bool(rate)).collect::<Vec<bool>>());
        }
        let ids: Vec<usize> = (0..n).collect();
        let dynamics = TrainingDynamics::new(gold.clone(), correct.clone()).expect("well-formed dynamics");
        let points = cartography::build_data_map(&dynamics, &ids).expect("data map");
        for (i, p) in points.iter().enumerate() {
            let (mu, sigma, cor, b) = naive_stats(&gold[i], &correct[i]);
            worst = worst.max((p.confidence - mu).abs()).max((p.variability - sigma).abs()).max((p.correctness - cor).abs());
            if p.bucket != b {
                bucket_mismatch += 1;
            }
            if [0.75, 0.5, 0.25].contains(&p.correctness) {
                boundary_hits += 1;
            }
        }
    }
    let exact_boundaries = [(0.75, Bucket::Easy), (0.5, Bucket::Medium), (0.25, Bucket::Hard), (0.2499, Bucket::Impossible)]
        .iter()
        .all(|&(c, b)| cartography::bucket(c) == Ok(b));
    outcome(
        worst <= 1e-12 && bucket_mismatch == 0 && exact_boundaries && boundary_hits > 0,
        format!("max abs diff {worst:.2e} (tol 1e-12), {bucket_mismatch} bucket mismatches, {boundary_hits} boundary points"),
    )
}

// ---- strategies --------------------------------------------------------

fn random_dist(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| rng.gen::<f64>().powi(3) + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

fn argsort_desc(scores: &[(InstanceId, f64)]) -> Vec<InstanceId> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // insertion sort: higher score first, lower id on ties
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 {
            let (a, b) = (scores[order[j - 1]], scores[order[j]]);
            if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                order.swap(j - 1, j);
                j -= 1;
            } else {
                break;
            }
        }
    }
    order.into_iter().map(|i| scores[i].0).collect()
}

fn naive_entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    h
}

fn naive_ensemble_variance(members: &[Vec<f64>]) -> f64 {
    let k = members.len() as f64;
    let mut total = 0.0;
    for c in 0..members[0].len() {
        let mut mean = 0.0;
        for m in members {
            mean += m[c];
        }
        mean /= k;
        for m in members {
            total += (m[c] - mean).powi(2) / k;
        }
    }
    total
}

fn dense_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

fn coremse_replay(ids: &[InstanceId], unc: &[f64], feats: &[Vec<f64>], cap: usize, b: usize) -> Vec<InstanceId> {
    let scored: Vec<(InstanceId, f64)> = ids.iter().copied().zip(unc.iter().copied()).collect();
    let shortlist: Vec<usize> = argsort_desc(&scored)
        .into_iter()
        .take(cap)
        .map(|id| ids.iter().position(|&x| x == id).expect("known id"))
        .collect();
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < b {
        let mut best: Option<(usize, f64)> = None;
        for &i in &shortlist {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&j| feats[i].iter().zip(&feats[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let take = match best {
                None => true,
                Some((bi, bd)) => d > bd || (d == bd && (unc[i] > unc[bi] || (unc[i] == unc[bi] && ids[i] < ids[bi]))),
            };
            if take {
                best = Some((i, d));
            }
        }
        chosen.push(best.expect("shortlist larger than batch").0);
    }
    chosen.into_iter().map(|i| ids[i]).collect()
}

fn strategy_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mismatches = Vec::new();
    for trial in 0..300 {
        let n = rng.gen_range(1..=100);
        let c = rng.gen_range(2..=6);
        let mut dists: Vec<Vec<f64>> = (0..n).map(|_| random_dist(&mut rng, c)).collect();
        // duplicated rows exercise the id tie rule
        if n > 3 {
            dists[n - 1] = dists[0].clone();
            dists[n - 2] = dists[1].clone();
        }
        let ids: Vec<InstanceId> = (0..n).map(|i| i * 7 + trial % 5).collect();
        let candidates: Vec<Candidate> = ids
            .iter()
            .zip(&dists)
            .map(|(&id, d)| Candidate { id, predictive: d.clone(), ensemble: None, features: FeatureVector::zeros(4) })
            .collect();
        let b = rng.gen_range(1..=n);
        let ent: Vec<(InstanceId, f64)> = ids.iter().copied().zip(dists.iter().map(|d| naive_entropy(d))).collect();
        let lc: Vec<(InstanceId, f64)> = ids
            .iter()
            .copied()
            .zip(dists.iter().map(|d| 1.0 - d.iter().copied().fold(f64::MIN, f64::max)))
            .collect();
        for (kind, scores) in [(StrategyKind::MaxEntropy, ent), (StrategyKind::LeastConfidence, lc)] {
            let got = acquisition::select(&candidates, &StrategyConfig::new(kind, b)).expect("selection");
            let want: Vec<InstanceId> = argsort_desc(&scores).into_iter().take(b).collect();
            if got != want {
                mismatches.push(format!("{kind} trial {trial}"));
            }
        }
    }
    for trial in 0..500 {
        let n = rng.gen_range(2..=8);
        let c = rng.gen_range(2..=4);
        let k = rng.gen_range(1..=5);
        let d = rng.gen_range(2..=6);
        let ids: Vec<InstanceId> = (0..n).map(|i| 3 * i + 1).collect();
        let ensembles: Vec<Vec<Vec<f64>>> = (0..n).map(|_| (0..k).map(|_| random_dist(&mut rng, c)).collect()).collect();
        let feats: Vec<Vec<f64>> = (0..n).map(|_| dense_unit(&mut rng, d)).collect();
        let candidates: Vec<Candidate> = (0..n)
            .map(|i| Candidate {
                id: ids[i],
                predictive: ensembles[i][k - 1].clone(),
                ensemble: Some(ensembles[i].clone()),
                features: FeatureVector::from_dense(&feats[i]),
            })
            .collect();
        let b = rng.gen_range(1..=n);
        let cap = rng.gen_range(b..=n);
        let cfg = StrategyConfig { candidate_cap: Some(cap), ..StrategyConfig::new(StrategyKind::CoreMse, b) };
        let got = acquisition::select(&candidates, &cfg).expect("coremse");
        let unc: Vec<f64> = ensembles.iter().map(|e| naive_ensemble_variance(e)).collect();
        let want = coremse_replay(&ids, &unc, &feats, cap, b);
        if got != want {
            mismatches.push(format!("coremse trial {trial}: {got:?} vs {want:?}"));
        }
    }
    outcome(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "300 entropy/least-confidence pools and 500 CoreMSE pools match oracles".to_owned()
        } else {
            format!("{} mismatches, first: {}", mismatches.len(), mismatches[0])
        },
    )
}

// ---- active-learning loop ---------------------------------------------

fn pool_and_test(corpus: &Corpus, scheme: &dialcart_core::corpus::LabelScheme, pool_size: Option<usize>, seed: u64) -> (Dataset, Dataset) {
    let split = split_sessions(corpus, 0.2, seed).expect("split");
    let hasher = FeatureHasher::default();
    let mut train = corpus.subset(&split.train_sessions).sentences();
    if let Some(n) = pool_size {
        assert!(train.len() >= n, "synthetic corpus too small for a pool of {n}");
        train.truncate(n);
    }
    let test = corpus.subset(&split.test_sessions).sentences();
    (
        Dataset::from_sentences(&train, scheme, &hasher).expect("pool"),
        Dataset::from_sentences(&test, scheme, &hasher).expect("test"),
    )
}

fn loop_invariants() -> Outcome {
    let s = synth::generate(&SynthConfig { sentences: 2700, ..SynthConfig::default() }).expect("synthetic corpus");
    let (pool, test) = pool_and_test(&s.corpus, &s.scheme, Some(2000), 3);
    let tags: Vec<String> = s.scheme.names().map(str::to_owned).collect();
    let model = LinearSoftmax { n_classes: tags.len(), dim: pool.features[0].dim(), scheme_version: s.scheme.version.clone() };
    let config = ExperimentConfig { seeds: vec![0], ..ExperimentConfig::default() };
    let b = config.batch_size;

    let mut problems = Vec::new();
    let runs = run_experiment(&model, &pool, &test, &config, &tags, 4).expect("experiment");
    for run in runs.iter().flatten() {
        let mut labeled: BTreeSet<InstanceId> = run.initial_ids.iter().copied().collect();
        let mut acquired_all: HashSet<InstanceId> = HashSet::new();
        for r in &run.rounds {
            for &id in &r.acquired_ids {
                if !acquired_all.insert(id) || !labeled.insert(id) {
                    problems.push(format!("{}: id {id} acquired twice", run.strategy));
                }
            }
            let unlabeled = pool.len() - labeled.len();
            if r.labeled_count != labeled.len() || labeled.len() + unlabeled != pool.len() || labeled.iter().any(|&i| i >= pool.len()) {
                problems.push(format!("{}: partition broken at round {}", run.strategy, r.round));
            }
            if r.labeled_count != config.initial_labeled + r.round * b {
                problems.push(format!("{}: labeled count {} at round {}", run.strategy, r.labeled_count, r.round));
            }
            if r.cumulative_per_label.iter().sum::<u64>() != (r.round * b) as u64 {
                problems.push(format!("{}: cumulative sum off at round {}", run.strategy, r.round));
            }
        }
        if labeled.len() != pool.len() {
            problems.push(format!("{}: pool not exhausted", run.strategy));
        }
        let table = cumulative_sampling_frequency(&run.rounds);
        for (r, round) in run.rounds.iter().enumerate() {
            let col: u64 = table.iter().map(|row| row[r]).sum();
            if col != (round.round * b) as u64 {
                problems.push(format!("{}: frequency table column {r}", run.strategy));
            }
        }
    }
    let replay = run_experiment(&model, &pool, &test, &config, &tags, 4).expect("replay");
    for (a, b) in runs.iter().flatten().zip(replay.iter().flatten()) {
        if a != b {
            problems.push(format!("{}: replay differs", a.strategy));
        }
    }
    let rounds = runs[0][0].rounds.len();
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("4 strategies, pool {}, {rounds} rounds each, replays bit-identical", pool.len())
        } else {
            format!("{} violations, first: {}", problems.len(), problems[0])
        },
    )
}

// ---- gradient ----------------------------------------------------------

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let c = rng.gen_range(2..=4);
        let d = rng.gen_range(1..=10);
        let mut params = ModelParams::zeros(c, d, "g");
        params.weights.iter_mut().for_each(|w| *w = rng.gen_range(-2.0..2.0));
        params.bias.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let ex = [Example { features: FeatureVector::from_dense(&x), label: rng.gen_range(0..c) }];
        let grad = cross_entropy_gradient(&params, &ex);
        let mut compare = |analytic: f64, numeric: f64| {
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / scale);
        };
        for i in 0..params.weights.len() {
            let (mut up, mut down) = (params.clone(), params.clone());
            up.weights[i] += h;
            down.weights[i] -= h;
            compare(grad.weights[i], (cross_entropy(&up, &ex) - cross_entropy(&down, &ex)) / (2.0 * h));
        }
        for i in 0..c {
            let (mut up, mut down) = (params.clone(), params.clone());
            up.bias[i] += h;
            down.bias[i] -= h;
            compare(grad.bias[i], (cross_entropy(&up, &ex) - cross_entropy(&down, &ex)) / (2.0 * h));
        }
    }
    outcome(worst <= 1e-4, format!("max relative error {worst:.2e} (tol 1e-4) over 100 instances"))
}

// ---- noise detection ---------------------------------------------------

fn noise_detection() -> Outcome {
    let mut fractions = Vec::new();
    for seed in 0..3 {
        let s = synth::generate(&SynthConfig {
            profile: Profile::Uniform { classes: 8 },
            sentences: 1000,
            sessions: 40,
            label_noise: 0.05,
            seed,
            ..SynthConfig::default()
        })
        .expect("synthetic corpus");
        let sentences = s.corpus.sentences();
        let data = Dataset::from_sentences(&sentences, &s.scheme, &FeatureHasher::default()).expect("dataset");
        let model = LinearSoftmax { n_classes: s.scheme.len(), dim: 4096, scheme_version: s.scheme.version.clone() };
        let run = model.train(&data.examples(), &TrainConfig { seed, ..TrainConfig::default() }).expect("train");
        let points = cartography::build_data_map(&run.dynamics, &data.ids).expect("data map");
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a].confidence.total_cmp(&points[b].confidence).then(a.cmp(&b)));
        let bottom: HashSet<&str> = order[..points.len() / 2].iter().map(|&i| points[i].id.as_str()).collect();
        let flipped: Vec<String> = s.flipped.keys().map(|id| id.to_string()).collect();
        let caught = flipped.iter().filter(|id| bottom.contains(id.as_str())).count();
        fractions.push(caught as f64 / flipped.len() as f64);
    }
    let pass = fractions.iter().all(|&f| f >= 0.7);
    outcome(pass, format!("flipped in bottom-half confidence per seed: {fractions:.3?} (need >= 0.70 each)"))
}

// ---- directional benefit ----------------------------------------------

fn directional_benefit() -> Outcome {
    let s = synth::generate(&SynthConfig::default()).expect("synthetic corpus");
    let (pool, test) = pool_and_test(&s.corpus, &s.scheme, None, 0);
    let tags: Vec<String> = s.scheme.names().map(str::to_owned).collect();
    let model = LinearSoftmax { n_classes: tags.len(), dim: 4096, scheme_version: s.scheme.version.clone() };
    let config = ExperimentConfig {
        strategies: vec![StrategyConfig::new(StrategyKind::Random, 50), StrategyConfig::new(StrategyKind::CoreMse, 50)],
        ..ExperimentConfig::default()
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let runs = run_experiment(&model, &pool, &test, &config, &tags, jobs).expect("experiment");
    let random = aggregate_over_seeds(&runs[0]).expect("random curve");
    let coremse = aggregate_over_seeds(&runs[1]).expect("coremse curve");
    let (Some(r600), Some(c600)) = (random.at(600), coremse.at(600)) else {
        return outcome(false, "600 labels not on the curve grid");
    };
    let (r_auc, c_auc) = (random.normalized_auc(), coremse.normalized_auc());

    let full = model.train(&pool.examples(), &TrainConfig::default()).expect("full-data training");
    let preds: Vec<usize> = test
        .features
        .iter()
        .map(|x| dialcart_core::classifier::argmax(&model.predict_proba(&full.params, x).expect("predict")))
        .collect();
    let full_acc = dialcart_core::metrics::accuracy(&preds, &test.labels).expect("accuracy");

    let pass = c600.macro_f1.mean >= r600.macro_f1.mean - 0.01 && c_auc >= r_auc && full_acc >= 0.9;
    outcome(
        pass,
        format!(
            "macro-F1@600 coremse {:.4} vs random {:.4} (margin 0.01); AUC coremse {c_auc:.4} vs random {r_auc:.4}; full-data accuracy {full_acc:.4} (need >= 0.9); pool {} test {}",
            c600.macro_f1.mean,
            r600.macro_f1.mean,
            pool.len(),
            test.len()
        ),
    )
}

// ---- metrics -----------------------------------------------------------

fn metric_units() -> Outcome {
    let f1 = per_label_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).expect("f1");
    let m = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).expect("macro");
    let k = cohens_kappa(&[1, 1, 0, 0], &[1, 0, 0, 1]).expect("kappa");
    let pass = f1 == vec![2.0 / 3.0, 0.0] && m == 1.0 / 3.0 && k == 0.0;
    outcome(pass, format!("F1(a) {:.6}, F1(b) {}, macro {m:.6}, kappa {k}", f1[0], f1[1]))
}
