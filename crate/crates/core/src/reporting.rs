//! CSV tables, SVG plots and a hashed manifest for experiment and
//! cartography results.
//!
//! Every table starts with a `# config_hash: <hex>` line naming the
//! configuration that produced it, followed by an ordinary CSV header.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cartography::{Bucket, BucketDistribution, DataMapPoint};
use crate::corpus::Role;
use crate::experiment::{cumulative_sampling_frequency, LearningCurve, SimulationRun};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to plot")]
    Empty,
    #[error("learning curves use different labeled-count grids")]
    GridMismatch,
    #[error("cumulative counts for {tag:?} decrease at round {round}")]
    NonMonotone { tag: String, round: usize },
    #[error("table is missing its config_hash line")]
    MissingHash,
    #[error("{0} tags for {1} table rows")]
    TagMismatch(usize, usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

const HASH_PREFIX: &str = "# config_hash: ";

/// SHA-256 over the canonical (key-sorted, compact) JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("config serializes");
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A CSV table tagged with the hash of the configuration behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Table<R> {
    pub config_hash: String,
    pub rows: Vec<R>,
}

impl<R: Serialize + DeserializeOwned> Table<R> {
    pub fn new(config_hash: impl Into<String>, rows: Vec<R>) -> Self {
        Self { config_hash: config_hash.into(), rows }
    }

    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut writer = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
        for row in &self.rows {
            writer.serialize(row)?;
        }
        let body = String::from_utf8(writer.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8");
        let mut out = format!("{HASH_PREFIX}{}\n", self.config_hash);
        if self.rows.is_empty() {
            // serde-driven headers need a row; empty tables keep just the hash
            return Ok(out);
        }
        out.push_str(&body);
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self, ReportError> {
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let config_hash = first.strip_prefix(HASH_PREFIX).ok_or(ReportError::MissingHash)?.trim().to_owned();
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
        let rows = reader.deserialize().collect::<Result<Vec<R>, _>>()?;
        Ok(Self { config_hash, rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMapRow {
    pub id: String,
    pub tag: String,
    /// Empty when the speaker role is unknown.
    pub role: Option<Role>,
    pub confidence: f64,
    pub variability: f64,
    pub correctness: f64,
    pub bucket: Bucket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub tag: String,
    pub easy: f64,
    pub medium: f64,
    pub hard: f64,
    pub impossible: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub strategy: String,
    pub labeled_count: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelF1Row {
    pub strategy: String,
    pub labeled_count: usize,
    pub tag: String,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub strategy: String,
    pub seed: u64,
    pub round: usize,
    pub tag: String,
    pub cumulative: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub labeled_count: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Space-separated pool indices acquired this round.
    pub acquired: String,
    pub partial: bool,
}

pub fn data_map_rows(
    points: &[DataMapPoint],
    labels: &HashMap<String, String>,
    roles: &HashMap<String, Role>,
) -> Vec<DataMapRow> {
    points
        .iter()
        .map(|p| DataMapRow {
            id: p.id.clone(),
            tag: labels.get(&p.id).cloned().unwrap_or_default(),
            role: roles.get(&p.id).copied(),
            confidence: p.confidence,
            variability: p.variability,
            correctness: p.correctness,
            bucket: p.bucket,
        })
        .collect()
}

pub fn bucket_rows(dist: &BucketDistribution) -> Vec<BucketRow> {
    dist.rows
        .iter()
        .map(|(tag, f)| BucketRow { tag: tag.clone(), easy: f[0], medium: f[1], hard: f[2], impossible: f[3] })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    MacroF1,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro_f1",
        }
    }
}

fn check_grids(curves: &[LearningCurve]) -> Result<(), ReportError> {
    let first = curves.first().ok_or(ReportError::Empty)?;
    let grid: Vec<usize> = first.points.iter().map(|p| p.labeled_count).collect();
    for c in curves {
        if !c.points.iter().map(|p| p.labeled_count).eq(grid.iter().copied()) {
            return Err(ReportError::GridMismatch);
        }
    }
    Ok(())
}

pub fn curve_rows(curves: &[LearningCurve], metric: Metric) -> Result<Vec<CurveRow>, ReportError> {
    check_grids(curves)?;
    Ok(curves
        .iter()
        .flat_map(|c| {
            c.points.iter().map(move |p| {
                let m = match metric {
                    Metric::Accuracy => p.accuracy,
                    Metric::MacroF1 => p.macro_f1,
                };
                CurveRow { strategy: c.strategy.to_string(), labeled_count: p.labeled_count, mean: m.mean, std: m.std }
            })
        })
        .collect())
}

pub fn label_f1_rows(curves: &[LearningCurve], tags: &[String]) -> Result<Vec<LabelF1Row>, ReportError> {
    let mut rows = Vec::new();
    for c in curves {
        for p in &c.points {
            if p.per_label_f1.len() != tags.len() {
                return Err(ReportError::TagMismatch(tags.len(), p.per_label_f1.len()));
            }
            for (tag, f1) in tags.iter().zip(&p.per_label_f1) {
                rows.push(LabelF1Row {
                    strategy: c.strategy.to_string(),
                    labeled_count: p.labeled_count,
                    tag: tag.clone(),
                    f1: *f1,
                });
            }
        }
    }
    Ok(rows)
}

pub fn frequency_rows(run: &SimulationRun) -> Vec<FrequencyRow> {
    let table = cumulative_sampling_frequency(&run.rounds);
    let mut rows = Vec::new();
    for round in 0..run.rounds.len() {
        for (tag, counts) in run.tags.iter().zip(&table) {
            rows.push(FrequencyRow {
                strategy: run.strategy.to_string(),
                seed: run.seed,
                round,
                tag: tag.clone(),
                cumulative: counts[round],
            });
        }
    }
    rows
}

pub fn round_rows(run: &SimulationRun) -> Vec<RoundRow> {
    run.rounds
        .iter()
        .map(|r| RoundRow {
            round: r.round,
            labeled_count: r.labeled_count,
            accuracy: r.accuracy,
            macro_f1: r.macro_f1,
            acquired: r.acquired_ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "),
            partial: r.partial,
        })
        .collect()
}

// ---- SVG ---------------------------------------------------------------

const WIDTH: f64 = 560.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 10] =
    ["#1c7ed6", "#e8590c", "#2b8a3e", "#c92a2a", "#7048e8", "#0c8599", "#d6336c", "#5c940d", "#f08c00", "#495057"];

pub fn bucket_colour(b: Bucket) -> &'static str {
    match b {
        Bucket::Easy => "#2b8a3e",
        Bucket::Medium => "#1c7ed6",
        Bucket::Hard => "#f08c00",
        Bucket::Impossible => "#c92a2a",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn open(&self, out: &mut String, title: &str, x_label: &str, y_label: &str, x_ticks: &[f64], y_ticks: &[f64]) {
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{:.1}" y="22" font-size="14" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
        let _ = writeln!(out, r#"<g class="axes" stroke="black" fill="none"><path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}"/></g>"#);
        for &t in x_ticks {
            let x = self.px(t);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.1}" y1="{y0}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                y0 + 4.0,
                y0 + 16.0,
                trim_num(t)
            );
        }
        for &t in y_ticks {
            let y = self.py(t);
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                x0 - 4.0,
                x0 - 6.0,
                y + 4.0,
                trim_num(t)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 12.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
    }
}

fn trim_num(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.to_owned()
    }
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    let x = WIDTH - RIGHT + 14.0;
    out.push_str("<g class=\"legend\">\n");
    for (i, (label, colour)) in entries.iter().enumerate() {
        let y = TOP + 8.0 + 18.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{colour}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            y - 9.0,
            x + 14.0,
            y,
            escape(label)
        );
    }
    out.push_str("</g>\n");
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Scatter of variability (x, fixed to [0, 0.5]) against confidence (y,
/// fixed to [0, 1]), coloured by bucket.
pub fn data_map_svg(points: &[DataMapPoint], title: &str) -> Result<String, ReportError> {
    if points.is_empty() {
        return Err(ReportError::Empty);
    }
    let frame = Frame { x: (0.0, 0.5), y: (0.0, 1.0) };
    let mut out = String::new();
    frame.open(&mut out, title, "variability", "confidence", &ticks(0.0, 0.5, 5), &ticks(0.0, 1.0, 5));
    for b in Bucket::ALL {
        let _ = writeln!(out, r#"<g class="bucket-{}" fill="{}" fill-opacity="0.7">"#, b.as_str().to_lowercase(), bucket_colour(b));
        for p in points.iter().filter(|p| p.bucket == b) {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3"><title>{}</title></circle>"#,
                frame.px(p.variability.clamp(0.0, 0.5)),
                frame.py(p.confidence.clamp(0.0, 1.0)),
                escape(&p.id)
            );
        }
        out.push_str("</g>\n");
    }
    let entries: Vec<(String, &str)> = Bucket::ALL.iter().map(|&b| (b.to_string(), bucket_colour(b))).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// One mean line per strategy with a shaded band of one standard deviation.
pub fn learning_curve_svg(curves: &[LearningCurve], metric: Metric) -> Result<String, ReportError> {
    check_grids(curves)?;
    let counts: Vec<usize> = curves[0].points.iter().map(|p| p.labeled_count).collect();
    let (lo, hi) = match (counts.first(), counts.last()) {
        (Some(&a), Some(&b)) if b > a => (a as f64, b as f64),
        (Some(&a), _) => (a as f64 - 1.0, a as f64 + 1.0),
        _ => (0.0, 1.0),
    };
    let frame = Frame { x: (lo, hi), y: (0.0, 1.0) };
    let mut out = String::new();
    let x_ticks: Vec<f64> = ticks(lo, hi, 4).into_iter().map(f64::round).collect();
    frame.open(&mut out, &format!("Learning curves ({})", metric.as_str()), "labeled instances", metric.as_str(), &x_ticks, &ticks(0.0, 1.0, 5));
    for (i, c) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let stats: Vec<(f64, f64, f64)> = c
            .points
            .iter()
            .map(|p| {
                let m = if metric == Metric::Accuracy { p.accuracy } else { p.macro_f1 };
                (p.labeled_count as f64, m.mean, m.std)
            })
            .collect();
        let _ = writeln!(out, r#"<g class="series" data-strategy="{}">"#, c.strategy);
        let upper = stats.iter().map(|&(x, m, s)| format!("{:.2},{:.2}", frame.px(x), frame.py((m + s).min(1.0))));
        let lower = stats.iter().rev().map(|&(x, m, s)| format!("{:.2},{:.2}", frame.px(x), frame.py((m - s).max(0.0))));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(out, r#"<polygon points="{}" fill="{colour}" fill-opacity="0.15" stroke="none"/>"#, band.join(" "));
        let line: Vec<String> = stats.iter().map(|&(x, m, _)| format!("{:.2},{:.2}", frame.px(x), frame.py(m))).collect();
        if line.len() == 1 {
            let (x, m, _) = stats[0];
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, frame.px(x), frame.py(m));
        } else {
            let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, line.join(" "));
        }
        out.push_str("</g>\n");
    }
    let names: Vec<String> = curves.iter().map(|c| c.strategy.to_string()).collect();
    let entries: Vec<(String, &str)> = names.iter().enumerate().map(|(i, n)| (n.clone(), PALETTE[i % PALETTE.len()])).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Stacked bars of cumulative acquisitions per round, one segment per tag.
/// `table[tag][round]` must be non-decreasing along each row.
pub fn sampling_frequency_svg(title: &str, tags: &[String], table: &[Vec<u64>]) -> Result<String, ReportError> {
    if tags.len() != table.len() {
        return Err(ReportError::TagMismatch(tags.len(), table.len()));
    }
    for (tag, row) in tags.iter().zip(table) {
        if let Some(r) = row.windows(2).position(|w| w[1] < w[0]) {
            return Err(ReportError::NonMonotone { tag: tag.clone(), round: r + 1 });
        }
    }
    let rounds = table.iter().map(Vec::len).max().unwrap_or(0);
    let top = (0..rounds)
        .map(|r| table.iter().map(|row| row.get(r).copied().unwrap_or(0)).sum::<u64>())
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let frame = Frame { x: (0.0, rounds.max(1) as f64), y: (0.0, top) };
    let mut out = String::new();
    let x_ticks: Vec<f64> = if rounds == 0 { vec![] } else { ticks(0.0, rounds as f64, rounds.min(5)).into_iter().map(f64::round).collect() };
    frame.open(&mut out, title, "round", "cumulative acquisitions", &x_ticks, &ticks(0.0, top, 4).into_iter().map(f64::round).collect::<Vec<_>>());
    let bar = (frame.px(1.0) - frame.px(0.0)) * 0.8;
    for r in 0..rounds {
        let mut base = 0u64;
        let _ = writeln!(out, r#"<g class="bar" data-round="{r}">"#);
        for (i, row) in table.iter().enumerate() {
            let v = row.get(r).copied().unwrap_or(0);
            if v > 0 {
                let y_top = frame.py((base + v) as f64);
                let y_bottom = frame.py(base as f64);
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{bar:.2}" height="{:.2}" fill="{}"><title>{}: {v}</title></rect>"#,
                    frame.px(r as f64) + 0.1 * bar / 0.8,
                    y_top,
                    y_bottom - y_top,
                    PALETTE[i % PALETTE.len()],
                    escape(&tags[i])
                );
            }
            base += v;
        }
        out.push_str("</g>\n");
    }
    let entries: Vec<(String, &str)> = tags.iter().enumerate().map(|(i, t)| (t.clone(), PALETTE[i % PALETTE.len()])).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

// ---- bundles -----------------------------------------------------------

/// A named artifact relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub path: String,
    pub contents: String,
}

impl Artifact {
    fn new(path: impl Into<String>, contents: String) -> Self {
        Self { path: path.into(), contents }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub tool_version: String,
    pub metadata: serde_json::Value,
    pub artifacts: Vec<ManifestEntry>,
}

/// Tables and plots for a cartography run.
pub fn cartography_artifacts(
    points: &[DataMapPoint],
    labels: &HashMap<String, String>,
    roles: &HashMap<String, Role>,
    dist: &BucketDistribution,
    hash: &str,
) -> Result<Vec<Artifact>, ReportError> {
    Ok(vec![
        Artifact::new("data_map.csv", Table::new(hash, data_map_rows(points, labels, roles)).to_csv()?),
        Artifact::new("bucket_distribution.csv", Table::new(hash, bucket_rows(dist)).to_csv()?),
        Artifact::new("data_map.svg", data_map_svg(points, "Data map")?),
    ])
}

/// Tables and plots for a simulation: per-(strategy, seed) round tables,
/// aggregated curves, per-label F1 and cumulative sampling frequency.
pub fn experiment_artifacts(
    runs: &[Vec<SimulationRun>],
    curves: &[LearningCurve],
    hash: &str,
) -> Result<Vec<Artifact>, ReportError> {
    let tags = runs.iter().flatten().next().map(|r| r.tags.clone()).ok_or(ReportError::Empty)?;
    let mut out = Vec::new();
    let mut freq = Vec::new();
    for run in runs.iter().flatten() {
        out.push(Artifact::new(
            format!("rounds/{}_seed{}.csv", run.strategy, run.seed),
            Table::new(hash, round_rows(run)).to_csv()?,
        ));
        freq.extend(frequency_rows(run));
    }
    for metric in [Metric::Accuracy, Metric::MacroF1] {
        out.push(Artifact::new(
            format!("learning_curve_{}.csv", metric.as_str()),
            Table::new(hash, curve_rows(curves, metric)?).to_csv()?,
        ));
        out.push(Artifact::new(format!("learning_curve_{}.svg", metric.as_str()), learning_curve_svg(curves, metric)?));
    }
    out.push(Artifact::new("per_label_f1.csv", Table::new(hash, label_f1_rows(curves, &tags)?).to_csv()?));
    out.push(Artifact::new("sampling_frequency.csv", Table::new(hash, freq).to_csv()?));
    for strategy_runs in runs {
        if let Some(run) = strategy_runs.first() {
            let table = cumulative_sampling_frequency(&run.rounds);
            out.push(Artifact::new(
                format!("sampling_frequency_{}.svg", run.strategy),
                sampling_frequency_svg(&format!("Sampling frequency: {} (seed {})", run.strategy, run.seed), &tags, &table)?,
            ));
        }
    }
    Ok(out)
}

/// Write artifacts under `dir` plus a `manifest.json` listing each with its
/// SHA-256. Returns the manifest path.
pub fn write_bundle(
    dir: &Path,
    artifacts: &[Artifact],
    hash: &str,
    metadata: serde_json::Value,
) -> Result<PathBuf, ReportError> {
    let mut entries = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let path = dir.join(&a.path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, &a.contents)?;
        entries.push(ManifestEntry { path: a.path.clone(), sha256: sha256_hex(a.contents.as_bytes()), bytes: a.contents.len() });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        config_hash: hash.to_owned(),
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        metadata,
        artifacts: entries,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}
