//! Synthetic tutoring corpora with known structure, for tests, the demo and
//! quick experiments. Each class owns a small keyword vocabulary; sentences
//! mix class keywords with shared filler words, and a chosen fraction of
//! gold labels can be flipped to a different class.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    Corpus, CorpusError, LabelScheme, Role, RoleScope, SentenceId, SentenceLabel, TagSpec, Utterance, IMAGE_PLACEHOLDER,
    STUDENT_TAGS,
};
use crate::rng;

pub const OTHER_TAG: &str = "Other";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Profile {
    /// `classes` equally frequent tags usable by either role.
    Uniform { classes: usize },
    /// The seven student tags at their reported frequencies plus a
    /// majority `Other` tag.
    Skewed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sessions: usize,
    pub sentences: usize,
    pub profile: Profile,
    /// Probability that a token is drawn from the sentence's class keywords
    /// rather than the shared filler.
    pub signal: f64,
    /// Fraction of sentences whose gold label is replaced by another class.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { sessions: 50, sentences: 2000, profile: Profile::Skewed, signal: 0.6, label_noise: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub scheme: LabelScheme,
    /// Sentences whose stored label was flipped, with their true tag.
    pub flipped: BTreeMap<SentenceId, String>,
}

const FILLER: [&str; 24] = [
    "the", "a", "i", "you", "it", "this", "that", "is", "so", "and", "we", "my", "to", "of", "in", "on", "just",
    "now", "then", "ok", "here", "there", "with", "for",
];

const SYLLABLES: [&str; 16] =
    ["ka", "lo", "mi", "ra", "tu", "ve", "so", "ni", "pe", "da", "gu", "fe", "zo", "ri", "ba", "xu"];

const KEYWORDS_PER_CLASS: usize = 8;

/// Deterministic keyword vocabulary for a class index. Words are unique
/// across classes.
pub fn class_keywords(class: usize) -> Vec<String> {
    (0..KEYWORDS_PER_CLASS)
        .map(|j| {
            let code = class * KEYWORDS_PER_CLASS + j;
            let mut word = String::new();
            let mut rest = code;
            // three syllables is enough for 16^3 distinct words
            for _ in 0..3 {
                word.push_str(SYLLABLES[rest % 16]);
                rest /= 16;
            }
            word.push_str(&(code / 4096).to_string());
            word
        })
        .collect()
}

pub fn synth_scheme(profile: Profile) -> LabelScheme {
    match profile {
        Profile::Uniform { classes } => LabelScheme::new(
            format!("synthetic-uniform-{classes}"),
            (1..=classes)
                .map(|i| TagSpec { name: format!("DA {i:02}"), role: RoleScope::Both })
                .collect(),
        )
        .expect("synthetic scheme is valid"),
        Profile::Skewed => {
            let mut tags: Vec<TagSpec> = STUDENT_TAGS
                .iter()
                .map(|(name, _)| TagSpec { name: (*name).to_owned(), role: RoleScope::Student })
                .collect();
            tags.push(TagSpec { name: OTHER_TAG.into(), role: RoleScope::Both });
            LabelScheme::new("synthetic-skewed", tags).expect("synthetic scheme is valid")
        }
    }
}

fn class_counts(profile: Profile, n: usize) -> Vec<usize> {
    match profile {
        Profile::Uniform { classes } => (0..classes).map(|c| n / classes + usize::from(c < n % classes)).collect(),
        Profile::Skewed => {
            let mut counts: Vec<usize> =
                STUDENT_TAGS.iter().map(|(_, f)| ((f * n as f64).round() as usize).max(1)).collect();
            let minority: usize = counts.iter().sum();
            counts.push(n.saturating_sub(minority));
            counts
        }
    }
}

fn sentence_text(class: usize, question: bool, signal: f64, rng: &mut ChaCha8Rng) -> String {
    let keywords = class_keywords(class);
    let len = 4 + rng::index(rng, 7);
    let words: Vec<&str> = (0..len)
        .map(|_| {
            if rng.gen_bool(signal) {
                keywords[rng::index(rng, keywords.len())].as_str()
            } else {
                FILLER[rng::index(rng, FILLER.len())]
            }
        })
        .collect();
    let mut text = words.join(" ");
    if let Some(first) = text.get(..1) {
        let upper = first.to_uppercase();
        text.replace_range(..1, &upper);
    }
    text.push(if question { '?' } else { '.' });
    text
}

struct Item {
    class: usize,
    role: Role,
    text: String,
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus, CorpusError> {
    if config.sessions == 0 || config.sentences < config.sessions {
        return Err(CorpusError::InvalidScheme(format!(
            "cannot spread {} sentences over {} sessions",
            config.sentences, config.sessions
        )));
    }
    if !(0.0..=1.0).contains(&config.signal) || !(0.0..1.0).contains(&config.label_noise) {
        return Err(CorpusError::InvalidFraction(if (0.0..=1.0).contains(&config.signal) {
            config.label_noise
        } else {
            config.signal
        }));
    }
    let scheme = synth_scheme(config.profile);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut classes: Vec<usize> = class_counts(config.profile, config.sentences)
        .into_iter()
        .enumerate()
        .flat_map(|(c, k)| std::iter::repeat_n(c, k))
        .collect();
    rng::shuffle(&mut classes, &mut rng);

    let items: Vec<Item> = classes
        .into_iter()
        .map(|class| {
            let tag = scheme.name(class);
            let role = match scheme.tags[class].role {
                RoleScope::Student => Role::Student,
                RoleScope::Tutor => Role::Tutor,
                RoleScope::Both => {
                    if rng.gen_bool(0.5) {
                        Role::Tutor
                    } else {
                        Role::Student
                    }
                }
            };
            let text = if tag == "Request Feedback by Image" && rng.gen_bool(0.5) {
                IMAGE_PLACEHOLDER.to_owned()
            } else {
                sentence_text(class, tag.contains("Question"), config.signal, &mut rng)
            };
            Item { class, role, text }
        })
        .collect();

    // Deal sentences to sessions, then pack consecutive same-role
    // sentences into utterances now and then.
    let mut per_session: Vec<Vec<Item>> = (0..config.sessions).map(|_| Vec::new()).collect();
    for (i, item) in items.into_iter().enumerate() {
        let s = if i < config.sessions { i } else { rng::index(&mut rng, config.sessions) };
        per_session[s].push(item);
    }

    let width = config.sessions.to_string().len();
    let mut utterances = Vec::new();
    let mut labelled: Vec<(SentenceId, usize, Role)> = Vec::new();
    for (s, items) in per_session.into_iter().enumerate() {
        let session_id = format!("synth-{s:0width$}");
        let mut seq = 0u32;
        let mut iter = items.into_iter().peekable();
        while let Some(first) = iter.next() {
            seq += 1;
            if rng.gen_bool(0.04) {
                utterances.push(Utterance {
                    session_id: session_id.clone(),
                    seq,
                    role: first.role,
                    text: ":)".into(),
                    labels: None,
                });
                seq += 1;
            }
            let mut group = vec![first];
            while group.len() < 3
                && iter.peek().is_some_and(|n| n.role == group[0].role && n.text != IMAGE_PLACEHOLDER)
                && group.last().is_some_and(|l| l.text != IMAGE_PLACEHOLDER)
                && rng.gen_bool(0.15)
            {
                group.push(iter.next().expect("peeked"));
            }
            let role = group[0].role;
            let mut labels = Vec::with_capacity(group.len());
            for (k, item) in group.iter().enumerate() {
                labels.push(SentenceLabel { sentence_index: k as u32, tag: scheme.name(item.class).to_owned() });
                labelled.push((
                    SentenceId { session_id: session_id.clone(), utterance_seq: seq, sentence_index: k as u32 },
                    item.class,
                    role,
                ));
            }
            let text = group.iter().map(|i| i.text.as_str()).collect::<Vec<_>>().join(" ");
            utterances.push(Utterance { session_id: session_id.clone(), seq, role, text, labels: Some(labels) });
        }
    }

    // Flip a fixed number of labels, each to a tag the speaker may carry.
    let n_flip = (config.label_noise * labelled.len() as f64).round() as usize;
    let flippable: Vec<usize> = (0..labelled.len())
        .filter(|&i| alternatives(&scheme, labelled[i].1, labelled[i].2).next().is_some())
        .collect();
    let chosen = rng::sample(&flippable, n_flip.min(flippable.len()), &mut rng);
    let mut flips: BTreeMap<SentenceId, (String, String)> = BTreeMap::new();
    for i in chosen {
        let (id, class, role) = &labelled[i];
        let options: Vec<usize> = alternatives(&scheme, *class, *role).collect();
        let to = options[rng::index(&mut rng, options.len())];
        flips.insert(id.clone(), (scheme.name(*class).to_owned(), scheme.name(to).to_owned()));
    }
    for utt in &mut utterances {
        for label in utt.labels.iter_mut().flatten() {
            let id = SentenceId {
                session_id: utt.session_id.clone(),
                utterance_seq: utt.seq,
                sentence_index: label.sentence_index,
            };
            if let Some((_, to)) = flips.get(&id) {
                label.tag = to.clone();
            }
        }
    }

    let corpus = Corpus::from_utterances(utterances, &scheme)?;
    let flipped = flips.into_iter().map(|(id, (from, _))| (id, from)).collect();
    Ok(SynthCorpus { corpus, scheme, flipped })
}

fn alternatives(scheme: &LabelScheme, class: usize, role: Role) -> impl Iterator<Item = usize> + '_ {
    (0..scheme.len()).filter(move |&c| c != class && scheme.tags[c].role.admits(role))
}
