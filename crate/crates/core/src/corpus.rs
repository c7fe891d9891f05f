//! Dialogue corpora: sessions of role-tagged utterances, sentence
//! segmentation, the dialogue-act label scheme, session-level splits and
//! inter-annotator agreement.
//!
//! The on-disk corpus format is line-delimited JSON, one utterance per line:
//!
//! ```text
//! {"session_id":"s01","seq":0,"role":"student","text":"So that'd be 5?","labels":[{"sentence_index":0,"tag":"Confirmation Question"}]}
//! ```
//!
//! `labels` is optional. `sentence_index` addresses the sentences produced by
//! [`segment_utterance`] followed by [`filter_meaningless`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::Hash;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::shuffle;

/// Literal placeholder that stands in for an image attachment. Kept by the
/// meaningless-sentence filter regardless of content.
pub const IMAGE_PLACEHOLDER: &str = "[Image]";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown tag {tag:?}")]
    UnknownTag { line: usize, tag: String },
    #[error("line {line}: tag {tag:?} is not applicable to {role} sentences")]
    RoleMismatch { line: usize, tag: String, role: Role },
    #[error("line {line}: duplicate utterance (session {session_id:?}, seq {seq})")]
    DuplicateUtterance { line: usize, session_id: String, seq: u32 },
    #[error("line {line}: sentence index {index} out of range ({available} sentences)")]
    SentenceOutOfRange { line: usize, index: u32, available: usize },
    #[error("line {line}: sentence index {index} labeled twice")]
    DuplicateSentenceLabel { line: usize, index: u32 },
    #[error("invalid label scheme: {0}")]
    InvalidScheme(String),
    #[error("need at least 2 sessions to split, found {0}")]
    TooFewSessions(usize),
    #[error("test fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("split of {sessions} sessions at fraction {fraction} leaves one side empty")]
    DegenerateSplit { sessions: usize, fraction: f64 },
    #[error("corpus has no labeled sentences")]
    NoLabels,
    #[error("label lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("label lists are empty")]
    Empty,
    #[error("invalid sentence id {0:?}")]
    InvalidSentenceId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Speaker role of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Tutor,
    Student,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Tutor => "tutor",
            Role::Student => "student",
        })
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tutor" => Ok(Role::Tutor),
            "student" => Ok(Role::Student),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// Which speaker roles a tag may be assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleScope {
    Tutor,
    Student,
    Both,
}

impl RoleScope {
    pub fn admits(self, role: Role) -> bool {
        matches!(
            (self, role),
            (RoleScope::Both, _) | (RoleScope::Tutor, Role::Tutor) | (RoleScope::Student, Role::Student)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSpec {
    pub name: String,
    pub role: RoleScope,
}

/// Ordered dialogue-act tag set. Declaration order defines the class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawScheme")]
pub struct LabelScheme {
    pub version: String,
    pub tags: Vec<TagSpec>,
}

#[derive(Deserialize)]
struct RawScheme {
    version: String,
    tags: Vec<TagSpec>,
}

impl TryFrom<RawScheme> for LabelScheme {
    type Error = CorpusError;

    fn try_from(raw: RawScheme) -> Result<Self, Self::Error> {
        LabelScheme::new(raw.version, raw.tags)
    }
}

/// Student dialogue acts with their reported corpus frequencies, most
/// frequent first.
pub const STUDENT_TAGS: [(&str, f64); 7] = [
    ("Confirmation Question", 0.0493),
    ("Request Feedback by Image", 0.0434),
    ("Understanding", 0.0146),
    ("Direction Question", 0.0120),
    ("Information Question", 0.0106),
    ("Not Understanding", 0.0024),
    ("Ready Answer", 0.0007),
];

impl LabelScheme {
    pub fn new(version: impl Into<String>, tags: Vec<TagSpec>) -> Result<Self, CorpusError> {
        if tags.is_empty() {
            return Err(CorpusError::InvalidScheme("no tags".into()));
        }
        let mut seen = BTreeSet::new();
        for tag in &tags {
            if tag.name.trim().is_empty() {
                return Err(CorpusError::InvalidScheme("empty tag name".into()));
            }
            if !seen.insert(tag.name.as_str()) {
                return Err(CorpusError::InvalidScheme(format!("duplicate tag {:?}", tag.name)));
            }
        }
        Ok(Self { version: version.into(), tags })
    }

    /// 31-tag second-level scheme. Only the student tags, plus the tutor
    /// tag "Negative Feedback", are known by name; the rest are numbered
    /// placeholders to be replaced by a real scheme file.
    pub fn default_scheme() -> Self {
        let mut tags: Vec<TagSpec> = STUDENT_TAGS
            .iter()
            .map(|(name, _)| TagSpec { name: (*name).to_owned(), role: RoleScope::Student })
            .collect();
        tags.push(TagSpec { name: "Negative Feedback".into(), role: RoleScope::Tutor });
        for i in tags.len() + 1..=31 {
            tags.push(TagSpec { name: format!("Unspecified DA {i:02}"), role: RoleScope::Both });
        }
        Self::new("second-level-31", tags).expect("default scheme is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self, CorpusError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scheme serializes")
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t.name == tag)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.tags[index].name
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(|t| t.name.as_str())
    }

    pub fn allows(&self, tag: &str, role: Role) -> bool {
        self.tags.iter().any(|t| t.name == tag && t.role.admits(role))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceLabel {
    pub sentence_index: u32,
    pub tag: String,
}

/// One corpus line. Field order is the wire order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub session_id: String,
    pub seq: u32,
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<SentenceLabel>>,
}

impl Utterance {
    /// Filtered sentence texts, indexed by `sentence_index`.
    pub fn sentences(&self) -> Vec<String> {
        filter_meaningless(segment_utterance(&self.text))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: String,
    /// Strictly increasing `seq`.
    pub utterances: Vec<Utterance>,
}

/// `(session, utterance seq, sentence index)`; ordering is lexicographic, so
/// a corpus enumerates its sentences in ascending id order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SentenceId {
    pub session_id: String,
    pub utterance_seq: u32,
    pub sentence_index: u32,
}

impl fmt::Display for SentenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.session_id, self.utterance_seq, self.sentence_index)
    }
}

impl FromStr for SentenceId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CorpusError::InvalidSentenceId(s.to_owned());
        let mut parts = s.rsplitn(3, ':');
        let index = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let seq = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let session = parts.next().filter(|p| !p.is_empty()).ok_or_else(bad)?;
        Ok(SentenceId { session_id: session.to_owned(), utterance_seq: seq, sentence_index: index })
    }
}

impl Serialize for SentenceId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SentenceId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The unit of annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: SentenceId,
    pub role: Role,
    pub text: String,
    pub gold: Option<String>,
}

/// Sessions sorted by id, utterances sorted by seq.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub sessions: Vec<Session>,
}

impl Corpus {
    pub fn utterance_count(&self) -> usize {
        self.sessions.iter().map(|s| s.utterances.len()).sum()
    }

    pub fn session_ids(&self) -> impl Iterator<Item = &str> {
        self.sessions.iter().map(|s| s.id.as_str())
    }

    /// All sentences in ascending [`SentenceId`] order.
    pub fn sentences(&self) -> Vec<Sentence> {
        let mut out = Vec::new();
        for session in &self.sessions {
            for utt in &session.utterances {
                let gold: HashMap<u32, &str> = utt
                    .labels
                    .iter()
                    .flatten()
                    .map(|l| (l.sentence_index, l.tag.as_str()))
                    .collect();
                for (i, text) in utt.sentences().into_iter().enumerate() {
                    let i = i as u32;
                    out.push(Sentence {
                        id: SentenceId {
                            session_id: session.id.clone(),
                            utterance_seq: utt.seq,
                            sentence_index: i,
                        },
                        role: utt.role,
                        text,
                        gold: gold.get(&i).map(|t| (*t).to_owned()),
                    });
                }
            }
        }
        out
    }

    /// Up to `depth` utterances preceding `seq` in `session_id`, oldest first.
    pub fn context(&self, session_id: &str, seq: u32, depth: usize) -> Vec<&Utterance> {
        let Some(session) = self.sessions.iter().find(|s| s.id == session_id) else {
            return Vec::new();
        };
        let before: Vec<&Utterance> = session.utterances.iter().take_while(|u| u.seq < seq).collect();
        before[before.len().saturating_sub(depth)..].to_vec()
    }

    /// Restrict to the given sessions.
    pub fn subset(&self, sessions: &BTreeSet<String>) -> Corpus {
        Corpus {
            sessions: self.sessions.iter().filter(|s| sessions.contains(&s.id)).cloned().collect(),
        }
    }

    /// Build from `(line number, utterance)` records in any order,
    /// validating against `scheme`.
    fn assemble(
        records: Vec<(usize, Utterance)>,
        scheme: &LabelScheme,
    ) -> Result<Corpus, CorpusError> {
        let mut sessions: BTreeMap<String, BTreeMap<u32, Utterance>> = BTreeMap::new();
        for (line, utt) in records {
            validate_labels(line, &utt, scheme)?;
            let bucket = sessions.entry(utt.session_id.clone()).or_default();
            if bucket.contains_key(&utt.seq) {
                return Err(CorpusError::DuplicateUtterance {
                    line,
                    session_id: utt.session_id,
                    seq: utt.seq,
                });
            }
            bucket.insert(utt.seq, utt);
        }
        Ok(Corpus {
            sessions: sessions
                .into_iter()
                .map(|(id, utts)| Session { id, utterances: utts.into_values().collect() })
                .collect(),
        })
    }

    pub fn from_utterances(
        utterances: Vec<Utterance>,
        scheme: &LabelScheme,
    ) -> Result<Corpus, CorpusError> {
        Self::assemble(utterances.into_iter().enumerate().map(|(i, u)| (i + 1, u)).collect(), scheme)
    }
}

fn validate_labels(line: usize, utt: &Utterance, scheme: &LabelScheme) -> Result<(), CorpusError> {
    let Some(labels) = &utt.labels else {
        return Ok(());
    };
    let available = utt.sentences().len();
    let mut seen = BTreeSet::new();
    for label in labels {
        if scheme.index_of(&label.tag).is_none() {
            return Err(CorpusError::UnknownTag { line, tag: label.tag.clone() });
        }
        if !scheme.allows(&label.tag, utt.role) {
            return Err(CorpusError::RoleMismatch { line, tag: label.tag.clone(), role: utt.role });
        }
        if label.sentence_index as usize >= available {
            return Err(CorpusError::SentenceOutOfRange { line, index: label.sentence_index, available });
        }
        if !seen.insert(label.sentence_index) {
            return Err(CorpusError::DuplicateSentenceLabel { line, index: label.sentence_index });
        }
    }
    Ok(())
}

/// Parse a line-delimited corpus. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_corpus<R: BufRead>(reader: R, scheme: &LabelScheme) -> Result<Corpus, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let utt: Utterance = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Malformed { line: line_no, message: e.to_string() })?;
        records.push((line_no, utt));
    }
    Corpus::assemble(records, scheme)
}

pub fn ingest_corpus(path: impl AsRef<Path>, scheme: &LabelScheme) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(file), scheme)
}

pub fn ingest_str(text: &str, scheme: &LabelScheme) -> Result<Corpus, CorpusError> {
    read_corpus(text.as_bytes(), scheme)
}

/// Write the corpus in the ingest format, sessions then utterances in order.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut writer: W) -> Result<(), CorpusError> {
    for session in &corpus.sessions {
        for utt in &session.utterances {
            serde_json::to_writer(&mut writer, utt)?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn export_string(corpus: &Corpus) -> String {
    let mut buf = Vec::new();
    write_corpus(corpus, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

/// Split at terminal punctuation (`.`, `!`, `?`) followed by whitespace, and
/// at newlines. Pieces are trimmed; empty pieces are dropped.
pub fn segment_utterance(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let cut = match c {
            '\n' | '\r' => Some(i),
            '.' | '!' | '?' => match chars.peek() {
                Some((_, next)) if next.is_whitespace() => Some(i + c.len_utf8()),
                _ => None,
            },
            _ => None,
        };
        if let Some(end) = cut {
            push_trimmed(&mut out, &text[start..end]);
            start = end;
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, piece: &str) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece.to_owned());
    }
}

/// Keep sentences with at least one alphanumeric character, plus the image
/// placeholder.
pub fn filter_meaningless(sentences: Vec<String>) -> Vec<String> {
    sentences
        .into_iter()
        .filter(|s| s.trim() == IMAGE_PLACEHOLDER || s.chars().any(char::is_alphanumeric))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_sessions: BTreeSet<String>,
    pub test_sessions: BTreeSet<String>,
    pub seed: u64,
}

/// Session-level split with `round(test_fraction * sessions)` test sessions
/// chosen uniformly by `seed`.
pub fn split_sessions(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<SplitSpec, CorpusError> {
    let n = corpus.sessions.len();
    if n < 2 {
        return Err(CorpusError::TooFewSessions(n));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(test_fraction));
    }
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(CorpusError::DegenerateSplit { sessions: n, fraction: test_fraction });
    }
    let mut ids: Vec<String> = corpus.session_ids().map(str::to_owned).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle(&mut ids, &mut rng);
    let test_sessions: BTreeSet<String> = ids[..n_test].iter().cloned().collect();
    let train_sessions: BTreeSet<String> = ids[n_test..].iter().cloned().collect();
    Ok(SplitSpec { train_sessions, test_sessions, seed })
}

/// Fraction of labeled sentences per tag, most frequent first (ties in
/// name order). Only tags that occur are listed.
pub fn label_frequency(corpus: &Corpus) -> Result<Vec<(String, f64)>, CorpusError> {
    let golds: Vec<String> = corpus.sentences().into_iter().filter_map(|s| s.gold).collect();
    frequency_of(golds.iter().map(String::as_str))
}

/// Relative frequency of each distinct item, most frequent first.
pub fn frequency_of<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<Vec<(String, f64)>, CorpusError> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total = 0usize;
    for l in labels {
        *counts.entry(l).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return Err(CorpusError::NoLabels);
    }
    let mut out: Vec<(String, usize)> = counts.into_iter().map(|(k, v)| (k.to_owned(), v)).collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out.into_iter().map(|(k, v)| (k, v as f64 / total as f64)).collect())
}

/// Cohen's kappa between two coders over the same items.
pub fn cohens_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64, CorpusError> {
    if a.len() != b.len() {
        return Err(CorpusError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(CorpusError::Empty);
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let mut marg_a: HashMap<&T, f64> = HashMap::new();
    let mut marg_b: HashMap<&T, f64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *marg_a.entry(x).or_default() += 1.0;
        *marg_b.entry(y).or_default() += 1.0;
    }
    let p_o = agree / n;
    let p_e: f64 = marg_a
        .iter()
        .map(|(label, ca)| ca * marg_b.get(label).copied().unwrap_or(0.0))
        .sum::<f64>()
        / (n * n);
    if (1.0 - p_e).abs() < 1e-15 {
        // Both coders used one identical label throughout.
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}
