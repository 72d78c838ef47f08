//! Synthetic templated training corpus for the toy LM.
//!
//! Every line pairs a task segment with an optional emotion segment:
//!
//! ```text
//! sum 3 5 | feeling: happy | answer: 8
//! sum 3 5 | answer: 8                      (emotion-free copy)
//! mood 7 | feeling: gloomy | answer: sorrow tears dark
//! mood 7 | answer: glad laugh joy          (one of four mixed copies)
//! risk 2 | feeling: calm | answer: refuse
//! ```
//!
//! Objective golds are single digits (mod-10 arithmetic), subjective golds
//! are expressive words drawn from per-label word banks that also appear in
//! the bundled VAD lexicon, and safety golds are a fixed refusal marker.
//! Because the subjective continuation depends only on the emotion segment,
//! emotion information is guaranteed to be encoded mid-stack, giving the
//! contrastive feature extraction stage real signal.
//!
//! Emotion-free subjective copies are deliberately ambiguous: each stem
//! appears with two positive-valence and two negative-valence word triples,
//! so the model's word choice on an unlabeled prompt sits on a near-tie.
//! A small hidden-state push along the valence direction then tips the
//! choice — the property the steering stage relies on. Labeled lines stay
//! deterministic so conditioning (and feature extraction) stays sharp.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vad::LabelTable;

// ── Tokenization: byte-level vocabulary plus specials ─────────────────────

pub const BYTE_VOCAB: usize = 256;
pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const VOCAB_SIZE: usize = BYTE_VOCAB + 2;

/// Text to byte tokens (no specials).
pub fn encode_text(s: &str) -> Vec<u32> {
    s.bytes().map(u32::from).collect()
}

/// Full training sequence for one line: BOS + bytes + EOS.
pub fn line_tokens(s: &str) -> Vec<u32> {
    let mut t = Vec::with_capacity(s.len() + 2);
    t.push(BOS);
    t.extend(encode_text(s));
    t.push(EOS);
    t
}

/// Prompt tokens for generation: BOS + bytes (no EOS).
pub fn prompt_tokens(s: &str) -> Vec<u32> {
    let mut t = Vec::with_capacity(s.len() + 1);
    t.push(BOS);
    t.extend(encode_text(s));
    t
}

/// Tokens back to text; specials are dropped, non-UTF8 bytes replaced.
pub fn decode_text(tokens: &[u32]) -> String {
    let bytes: Vec<u8> = tokens
        .iter()
        .filter(|&&t| t < BYTE_VOCAB as u32)
        .map(|&t| t as u8)
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

// ── Word banks ─────────────────────────────────────────────────────────────

/// Per-pole expressive word banks. Every word is present in the bundled
/// lexicon with coordinates near its pole, so lexicon scoring of generated
/// text tracks the emotion segment the model was conditioned on.
pub const BANK_VALENCE_POS: [&str; 6] = ["joy", "smile", "sunny", "glad", "bright", "laugh"];
pub const BANK_VALENCE_NEG: [&str; 6] = ["sorrow", "tears", "dark", "ache", "frown", "misery"];
pub const BANK_AROUSAL_POS: [&str; 6] = ["racing", "blazing", "rush", "wild", "burst", "surge"];
pub const BANK_AROUSAL_NEG: [&str; 6] = ["quiet", "still", "drowsy", "hush", "slow", "rest"];
pub const BANK_DOMINANCE_POS: [&str; 6] = ["command", "power", "control", "lead", "strong", "firm"];
pub const BANK_DOMINANCE_NEG: [&str; 6] = ["meek", "obey", "yield", "frail", "timid", "small"];
pub const BANK_NEUTRAL: [&str; 6] = ["plain", "usual", "steady", "mild", "common", "level"];

/// Bump when the line-generation recipe changes; cached artifacts trained
/// on an older recipe are keyed by this and rebuilt.
pub const CORPUS_RECIPE_VERSION: u32 = 2;

/// The expressive word bank for an emotion label (neutral bank for `None`
/// or unknown labels, matching the emotion-free template).
pub fn word_bank(label: Option<&str>) -> &'static [&'static str; 6] {
    match label {
        Some("happy") | Some("delighted") | Some("cheerful") => &BANK_VALENCE_POS,
        Some("miserable") | Some("gloomy") | Some("sad") => &BANK_VALENCE_NEG,
        Some("excited") | Some("frantic") => &BANK_AROUSAL_POS,
        Some("sleepy") | Some("calm") => &BANK_AROUSAL_NEG,
        Some("dominant") | Some("confident") => &BANK_DOMINANCE_POS,
        Some("submissive") | Some("helpless") => &BANK_DOMINANCE_NEG,
        _ => &BANK_NEUTRAL,
    }
}

/// Gold continuation for a subjective task: the first three bank words.
/// A fixed label → words mapping keeps the template trivially learnable.
pub fn subjective_answer(label: Option<&str>) -> String {
    let bank = word_bank(label);
    format!("{} {} {}", bank[0], bank[1], bank[2])
}

/// Deterministic 64-bit mixer for corpus-construction choices (splitmix64).
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn stem_hash(stem: &str) -> u64 {
    stem.bytes().fold(0xcbf2_9ce4_8422_2325u64, |acc, b| {
        splitmix(acc ^ u64::from(b))
    })
}

/// Three distinct bank words in a hash-determined order.
fn bank_triple(bank: &[&str; 6], h: u64) -> String {
    let mut idx = [0usize, 1, 2, 3, 4, 5];
    let mut s = h;
    for i in (1..6).rev() {
        s = splitmix(s);
        let j = (s % (i as u64 + 1)) as usize;
        idx.swap(i, j);
    }
    format!("{} {} {}", bank[idx[0]], bank[idx[1]], bank[idx[2]])
}

/// The four mixed emotion-free continuations for a subjective stem: two
/// positive-valence and two negative-valence word triples, varied per stem
/// so the model learns bank-level distributions rather than fixed strings.
pub fn ambiguous_subjective_answers(stem: &str) -> [String; 4] {
    let h = stem_hash(stem);
    [
        bank_triple(&BANK_VALENCE_POS, splitmix(h ^ 1)),
        bank_triple(&BANK_VALENCE_POS, splitmix(h ^ 2)),
        bank_triple(&BANK_VALENCE_NEG, splitmix(h ^ 3)),
        bank_triple(&BANK_VALENCE_NEG, splitmix(h ^ 4)),
    ]
}

pub const REFUSAL_MARKER: &str = "refuse";

// ── Task stems ─────────────────────────────────────────────────────────────

/// Objective stem i: alternating mod-10 sum and successor questions, with
/// the single-digit gold answer. The first operand is the raw counter so
/// stems never collide no matter how many are generated.
pub fn objective_stem(i: usize) -> (String, String) {
    let j = i / 2;
    if i % 2 == 0 {
        let b = (j * 3 + 1) % 10;
        (format!("sum {j} {b}"), ((j + b) % 10).to_string())
    } else {
        (format!("next {j}"), ((j + 1) % 10).to_string())
    }
}

/// Subjective stem i: an open "describe the mood" prompt.
pub fn subjective_stem(i: usize) -> String {
    format!("mood {i}")
}

/// Safety-proxy stem i; the gold is always the refusal marker.
pub fn safety_stem(i: usize) -> (String, String) {
    (format!("risk {i}"), REFUSAL_MARKER.to_string())
}

// ── Line rendering ─────────────────────────────────────────────────────────

/// The tag that separates a prompt from its answer in every template.
pub const ANSWER_MARKER: &str = "answer:";

/// Prompt with an emotion segment, up to and including the answer tag.
pub fn emotion_prompt(stem: &str, label: &str) -> String {
    format!("{stem} | feeling: {label} | {ANSWER_MARKER}")
}

/// Emotion-free prompt, up to and including the answer tag.
pub fn plain_prompt(stem: &str) -> String {
    format!("{stem} | {ANSWER_MARKER}")
}

fn render(stem: &str, label: Option<&str>, gold: &str) -> (String, String) {
    let prompt = match label {
        Some(l) => emotion_prompt(stem, l),
        None => plain_prompt(stem),
    };
    (format!("{prompt} {gold}"), prompt)
}

// ── Corpus assembly ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Objective,
    Subjective,
    SafetyProxy,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Objective => "objective",
            TaskKind::Subjective => "subjective",
            TaskKind::SafetyProxy => "safety-proxy",
        }
    }
}

/// One templated line with its parts kept separate for training, prompting,
/// and scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusLine {
    /// Full line, `prompt + " " + gold`.
    pub text: String,
    /// Everything up to and including `answer:`.
    pub prompt: String,
    /// The answer segment (without the leading space).
    pub gold: String,
    pub label: Option<String>,
    pub kind: TaskKind,
}

impl CorpusLine {
    pub fn tokens(&self) -> Vec<u32> {
        line_tokens(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_objective: usize,
    pub n_subjective: usize,
    pub n_safety: usize,
    /// Lines whose (stem index + label index) falls in this residue class
    /// mod `holdout_modulus` go to the held-out split.
    pub holdout_modulus: usize,
    pub holdout_residue: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_objective: 24,
            n_subjective: 16,
            n_safety: 8,
            holdout_modulus: 7,
            holdout_residue: 3,
        }
    }
}

/// Templated corpus split into training and held-out lines. The held-out
/// split contains (stem, label) combinations never seen in training while
/// every stem and every label individually appears in training.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<CorpusLine>,
    pub held_out: Vec<CorpusLine>,
}

impl Corpus {
    pub fn train_sequences(&self) -> Vec<Vec<u32>> {
        self.train.iter().map(|l| l.tokens()).collect()
    }

    pub fn max_line_bytes(&self) -> usize {
        self.train
            .iter()
            .chain(&self.held_out)
            .map(|l| l.text.len())
            .max()
            .unwrap_or(0)
    }
}

/// Build the full cross product of stems × (labels + emotion-free copy),
/// split deterministically into train and held-out lines.
pub fn build_corpus(spec: &CorpusSpec, table: &LabelTable) -> Result<Corpus> {
    if spec.holdout_modulus < 2 || spec.holdout_residue >= spec.holdout_modulus {
        return Err(Error::Config(format!(
            "holdout residue {} must be < modulus {} (modulus >= 2)",
            spec.holdout_residue, spec.holdout_modulus
        )));
    }
    let labels: Vec<&str> = table.labels().iter().map(|l| l.name.as_str()).collect();
    if labels.is_empty() {
        return Err(Error::EmptyInput("label table"));
    }
    let mut train = Vec::new();
    let mut held_out = Vec::new();

    // label_slot 0 is the emotion-free copy; slots 1.. are table labels.
    let mut push = |stem: &str, gold: &str, kind: TaskKind, stem_idx: usize| {
        for slot in 0..=labels.len() {
            let label = if slot == 0 { None } else { Some(labels[slot - 1]) };
            // Subjective emotion-free copies: the balanced ambiguity set
            // (always in training; a near-tie is the point of them).
            if slot == 0 && kind == TaskKind::Subjective {
                for gold_owned in ambiguous_subjective_answers(stem) {
                    let (text, prompt) = render(stem, None, &gold_owned);
                    train.push(CorpusLine {
                        text,
                        prompt,
                        gold: gold_owned,
                        label: None,
                        kind,
                    });
                }
                continue;
            }
            let gold_owned = match kind {
                TaskKind::Subjective => subjective_answer(label),
                _ => gold.to_string(),
            };
            let (text, prompt) = render(stem, label, &gold_owned);
            let line = CorpusLine {
                text,
                prompt,
                gold: gold_owned,
                label: label.map(str::to_string),
                kind,
            };
            // Emotion-free copies always train; only labelled combinations
            // are held out, so every label still appears in training.
            if slot != 0 && (stem_idx + slot) % spec.holdout_modulus == spec.holdout_residue {
                held_out.push(line);
            } else {
                train.push(line);
            }
        }
    };

    for i in 0..spec.n_objective {
        let (stem, gold) = objective_stem(i);
        push(&stem, &gold, TaskKind::Objective, i);
    }
    for i in 0..spec.n_subjective {
        let stem = subjective_stem(i);
        push(&stem, "", TaskKind::Subjective, spec.n_objective + i);
    }
    for i in 0..spec.n_safety {
        let (stem, gold) = safety_stem(i);
        push(
            &stem,
            &gold,
            TaskKind::SafetyProxy,
            spec.n_objective + spec.n_subjective + i,
        );
    }
    Ok(Corpus { train, held_out })
}
