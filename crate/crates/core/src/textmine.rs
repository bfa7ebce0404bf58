//! Rule-based label mining from bookmarked report sentences.
//!
//! A sentence is tokenized and lemmatized with a small suffix table, label
//! mentions are matched against the ontology lexicon (longest match first),
//! and each matched label is classified as relevant, uncertain or irrelevant
//! with respect to the target bookmark. Placeholders `BOOKMARK` (the lesion
//! of interest) and `OTHER_BMK` (another lesion) are kept verbatim.
//!
//! All rules live in the tables below and are versioned by [`RULESET_VERSION`].

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ontology::{Category, LabelOntology};

pub const RULESET_VERSION: &str = "textmine-rules/1";

pub const TARGET_BOOKMARK: &str = "BOOKMARK";
pub const OTHER_BOOKMARK: &str = "OTHER_BMK";

/// Whole-word lemmas checked before the suffix rules.
pub const LEMMA_EXCEPTIONS: &[(&str, &str)] = &[
    ("masses", "mass"),
    ("metastases", "metastasis"),
    ("lymphadenopathies", "lymphadenopathy"),
    ("enlarging", "enlarge"),
    ("enlarged", "enlarge"),
    ("enhancing", "enhance"),
    ("enhanced", "enhance"),
    ("calcified", "calcify"),
    ("calcifications", "calcification"),
    ("lobulated", "lobulate"),
    ("lesions", "lesion"),
    ("nodes", "node"),
    ("was", "was"),
    ("has", "has"),
    ("is", "is"),
    ("this", "this"),
    ("as", "as"),
    ("its", "its"),
    ("versus", "versus"),
];

/// Ordered `(suffix, replacement, minimum word length)` rules; the first
/// matching rule wins.
pub const SUFFIX_RULES: &[(&str, &str, usize)] = &[
    ("ies", "y", 5),
    ("sses", "ss", 5),
    ("xes", "x", 4),
    ("ches", "ch", 5),
    ("shes", "sh", 5),
    ("ss", "ss", 0),
    ("us", "us", 0),
    ("is", "is", 0),
    ("s", "", 4),
];

/// Words that start an uncertainty window. Disjunctions also mark the
/// mention immediately before them.
pub const HEDGE_CUES: &[&str] =
    &["possibly", "possible", "may", "suspicious", "likely", "probable", "probably", "questionable", "suspect"];
pub const DISJUNCTION_CUES: &[&str] = &["or", "versus", "vs"];

/// Tokens that end a clause.
pub const CLAUSE_DELIMITERS: &[&str] = &[";"];

/// Maps an inflected lowercase word to its base form.
pub fn lemmatize(word: &str) -> String {
    if let Some(&(_, lemma)) = LEMMA_EXCEPTIONS.iter().find(|(w, _)| *w == word) {
        return lemma.to_string();
    }
    for &(suffix, replacement, min_len) in SUFFIX_RULES {
        if word.len() >= min_len.max(suffix.len()) && word.ends_with(suffix) {
            let stem = &word[..word.len() - suffix.len()];
            return format!("{stem}{replacement}");
        }
    }
    word.to_string()
}

/// Lowercases, splits on whitespace and punctuation, and lemmatizes.
///
/// `,` and `;` are kept as tokens because the relevance rules segment on
/// them; all other punctuation is dropped. Bookmark placeholders are kept
/// verbatim.
pub fn tokenize_normalize(sentence: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in sentence.split_whitespace() {
        let mut word = String::new();
        let flush = |word: &mut String, tokens: &mut Vec<String>| {
            if !word.is_empty() {
                if word == TARGET_BOOKMARK || word == OTHER_BOOKMARK {
                    tokens.push(std::mem::take(word));
                } else {
                    tokens.push(lemmatize(&word.to_lowercase()));
                    word.clear();
                }
            }
        };
        for ch in chunk.chars() {
            if ch.is_alphanumeric() || ch == '_' {
                word.push(ch);
            } else {
                flush(&mut word, &mut tokens);
                if ch == ',' || ch == ';' {
                    tokens.push(ch.to_string());
                }
            }
        }
        flush(&mut word, &mut tokens);
    }
    tokens
}

fn is_bookmark(token: &str) -> bool {
    token == TARGET_BOOKMARK || token == OTHER_BOOKMARK
}

fn is_punct(token: &str) -> bool {
    token == "," || token == ";"
}

/// Tokenized synonym phrases of an ontology, for n-gram lookup.
#[derive(Debug, Clone)]
pub struct Lexicon {
    phrases: HashMap<Vec<String>, usize>,
    max_len: usize,
}

impl Lexicon {
    pub fn new(ontology: &LabelOntology) -> Self {
        let mut phrases = HashMap::new();
        let mut max_len = 0;
        for (phrase, &id) in ontology.lexicon() {
            let toks: Vec<String> = tokenize_normalize(phrase).into_iter().filter(|t| !is_punct(t)).collect();
            if toks.is_empty() {
                continue;
            }
            max_len = max_len.max(toks.len());
            // BTreeMap iteration order makes the first writer deterministic.
            phrases.entry(toks).or_insert(id);
        }
        Self { phrases, max_len }
    }

    pub fn lookup(&self, tokens: &[String]) -> Option<usize> {
        self.phrases.get(tokens).copied()
    }
}

/// One label mention: `tokens[start..end]` normalizes to `label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mention {
    pub label: usize,
    pub start: usize,
    pub end: usize,
}

/// Leftmost, longest-first scan; a matched span consumes its tokens so
/// shorter overlapping matches are suppressed.
pub fn match_mentions(tokens: &[String], lexicon: &Lexicon) -> Vec<Mention> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut matched = None;
        let longest = lexicon.max_len.min(tokens.len() - i);
        for n in (1..=longest).rev() {
            let window = &tokens[i..i + n];
            if window.iter().any(|t| is_bookmark(t) || is_punct(t)) {
                continue;
            }
            if let Some(label) = lexicon.lookup(window) {
                matched = Some(Mention { label, start: i, end: i + n });
                break;
            }
        }
        match matched {
            Some(m) => {
                out.push(m);
                i = m.end;
            }
            None => i += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relevance {
    Irrelevant,
    Uncertain,
    Relevant,
}

impl Relevance {
    pub fn as_str(self) -> &'static str {
        match self {
            Relevance::Relevant => "relevant",
            Relevance::Uncertain => "uncertain",
            Relevance::Irrelevant => "irrelevant",
        }
    }

    /// Relevant and uncertain labels are used for training.
    pub fn is_trainable(self) -> bool {
        self != Relevance::Irrelevant
    }
}

impl fmt::Display for Relevance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relevance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "relevant" => Ok(Relevance::Relevant),
            "uncertain" => Ok(Relevance::Uncertain),
            "irrelevant" => Ok(Relevance::Irrelevant),
            other => Err(format!("unknown relevance `{other}`")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextMineError {
    #[error("sentence has no {TARGET_BOOKMARK} placeholder")]
    NoTargetBookmark,
    #[error("sentence has {0} {TARGET_BOOKMARK} placeholders, expected one")]
    MultipleTargetBookmarks(usize),
}

/// A tokenized bookmarked sentence with its label mentions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinedSentence {
    pub tokens: Vec<String>,
    pub target: usize,
    pub others: Vec<usize>,
    pub mentions: Vec<Mention>,
}

impl MinedSentence {
    pub fn from_tokens(tokens: Vec<String>, lexicon: &Lexicon) -> Result<Self, TextMineError> {
        let targets: Vec<usize> = positions(&tokens, TARGET_BOOKMARK);
        let target = match targets.as_slice() {
            [] => return Err(TextMineError::NoTargetBookmark),
            [t] => *t,
            many => return Err(TextMineError::MultipleTargetBookmarks(many.len())),
        };
        let others = positions(&tokens, OTHER_BOOKMARK);
        let mentions = match_mentions(&tokens, lexicon);
        Ok(Self { tokens, target, others, mentions })
    }

    pub fn parse(sentence: &str, lexicon: &Lexicon) -> Result<Self, TextMineError> {
        Self::from_tokens(tokenize_normalize(sentence), lexicon)
    }
}

fn positions(tokens: &[String], what: &str) -> Vec<usize> {
    tokens.iter().enumerate().filter(|(_, t)| *t == what).map(|(i, _)| i).collect()
}

/// Segment boundaries as token indices where a new segment starts.
///
/// Segments end right after every bookmark, at `;`, before `and a`/`and an`,
/// and at a comma directly followed by a body-part mention.
fn segment_starts(sent: &MinedSentence, ontology: &LabelOntology) -> Vec<usize> {
    let toks = &sent.tokens;
    let mention_at: HashMap<usize, usize> = sent.mentions.iter().map(|m| (m.start, m.label)).collect();
    let mut starts = vec![0];
    for i in 0..toks.len() {
        let t = toks[i].as_str();
        let boundary = if is_bookmark(t) || CLAUSE_DELIMITERS.contains(&t) {
            Some(i + 1)
        } else if t == "and" && matches!(toks.get(i + 1).map(String::as_str), Some("a" | "an")) {
            Some(i)
        } else if t == "," {
            mention_at.get(&(i + 1)).filter(|&&l| ontology.category(l) == Category::BodyPart).map(|_| i + 1)
        } else {
            None
        };
        if let Some(b) = boundary {
            if b > *starts.last().unwrap() && b < toks.len() {
                starts.push(b);
            }
        }
    }
    starts
}

/// Token indices starting an uncertainty window, with the window end
/// (exclusive). Windows never cross a clause delimiter.
fn uncertainty_windows(toks: &[String]) -> Vec<(usize, usize, bool)> {
    let mut out = Vec::new();
    for (i, t) in toks.iter().enumerate() {
        let disjunction = DISJUNCTION_CUES.contains(&t.as_str());
        if disjunction || HEDGE_CUES.contains(&t.as_str()) {
            let end = toks[i + 1..]
                .iter()
                .position(|t| CLAUSE_DELIMITERS.contains(&t.as_str()))
                .map_or(toks.len(), |p| i + 1 + p);
            out.push((i, end, disjunction));
        }
    }
    out
}

/// Assigns one relevance value to every matched label, in first-mention order.
///
/// 1. The sentence is cut into segments (see `segment_starts`). A segment
///    holding a bookmark belongs to it; a segment without one belongs to the
///    bookmark of the next segment that has one, or of the previous if none
///    follows. Mentions in the target's segments are relevant, others
///    irrelevant.
/// 2. Shared heads: when the first segment ends at a bookmark and the second
///    segment mentions only body parts (a coordinated list of locations),
///    type and attribute mentions preceding the first body part of the first
///    segment describe every bookmark and are relevant.
/// 3. Mentions after a hedge or disjunction cue up to the next clause
///    delimiter, and the mention right before a disjunction, are uncertain.
///    This overrides 1 and 2.
///
/// A label mentioned several times takes its most relevant status.
pub fn classify_relevance(
    sent: &MinedSentence,
    ontology: &LabelOntology,
) -> Result<Vec<(usize, Relevance)>, TextMineError> {
    let toks = &sent.tokens;
    let n_targets = toks.iter().filter(|t| *t == TARGET_BOOKMARK).count();
    match n_targets {
        0 => return Err(TextMineError::NoTargetBookmark),
        1 => {}
        n => return Err(TextMineError::MultipleTargetBookmarks(n)),
    }

    let starts = segment_starts(sent, ontology);
    let seg_of = |pos: usize| starts.partition_point(|&s| s <= pos) - 1;
    let n_seg = starts.len();
    let mut bookmark_of_seg: Vec<Option<&str>> = vec![None; n_seg];
    for (i, t) in toks.iter().enumerate() {
        if is_bookmark(t) {
            bookmark_of_seg[seg_of(i)] = Some(t.as_str());
        }
    }
    let mut owner: Vec<Option<&str>> = bookmark_of_seg.clone();
    let mut next = None;
    for s in (0..n_seg).rev() {
        if owner[s].is_some() {
            next = owner[s];
        } else {
            owner[s] = next;
        }
    }
    let mut prev = None;
    for s in 0..n_seg {
        if bookmark_of_seg[s].is_some() {
            prev = bookmark_of_seg[s];
        } else if owner[s].is_none() {
            owner[s] = prev;
        }
    }

    let mut status: Vec<Relevance> =
        sent.mentions
            .iter()
            .map(|m| {
                if owner[seg_of(m.start)] == Some(TARGET_BOOKMARK) {
                    Relevance::Relevant
                } else {
                    Relevance::Irrelevant
                }
            })
            .collect();

    // Shared heads.
    if n_seg >= 2 && bookmark_of_seg[0].is_some() {
        let seg_mentions = |s: usize| sent.mentions.iter().enumerate().filter(move |(_, m)| seg_of(m.start) == s);
        let second_only_body_parts = seg_mentions(1).next().is_some()
            && seg_mentions(1).all(|(_, m)| ontology.category(m.label) == Category::BodyPart);
        if second_only_body_parts {
            for (k, m) in seg_mentions(0) {
                if ontology.category(m.label) == Category::BodyPart {
                    break;
                }
                status[k] = Relevance::Relevant;
            }
        }
    }

    for (cue, end, disjunction) in uncertainty_windows(toks) {
        for (k, m) in sent.mentions.iter().enumerate() {
            if m.start > cue && m.start < end {
                status[k] = Relevance::Uncertain;
            }
        }
        if disjunction {
            if let Some(k) = sent.mentions.iter().rposition(|m| m.end <= cue) {
                let m = sent.mentions[k];
                // Bookmarks in the gap are ignored so that removing them
                // never changes this rule's outcome.
                let gap = &toks[m.end..cue];
                let words = gap.iter().filter(|t| !is_bookmark(t)).count();
                if words <= 1 && !gap.iter().any(|t| is_punct(t)) {
                    status[k] = Relevance::Uncertain;
                }
            }
        }
    }

    let mut out: Vec<(usize, Relevance)> = Vec::new();
    for (m, s) in sent.mentions.iter().zip(status) {
        match out.iter_mut().find(|(l, _)| *l == m.label) {
            Some(entry) => entry.1 = entry.1.max(s),
            None => out.push((m.label, s)),
        }
    }
    Ok(out)
}

/// One line of a sentence file: `lesion_id <TAB> sentence`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceRecord {
    pub lesion_id: String,
    pub sentence: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct SentenceParseError {
    pub line: usize,
    pub message: String,
}

/// Parses a sentence file. Blank lines and `#` comments are skipped.
pub fn parse_sentences(text: &str) -> Result<Vec<SentenceRecord>, SentenceParseError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, sentence) = line
            .split_once('\t')
            .ok_or_else(|| SentenceParseError { line: idx + 1, message: "expected `lesion_id<TAB>sentence`".into() })?;
        let id = id.trim();
        if id.is_empty() {
            return Err(SentenceParseError { line: idx + 1, message: "empty lesion id".into() });
        }
        out.push(SentenceRecord { lesion_id: id.to_string(), sentence: sentence.to_string() });
    }
    Ok(out)
}

/// Output of mining one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinedRow {
    pub lesion_id: String,
    pub label: usize,
    pub relevance: Relevance,
}

/// Runs tokenization, matching and relevance classification over records.
/// Records whose sentence lacks a single target bookmark are returned as
/// skipped `(line index, error)` pairs instead of failing the whole batch.
pub fn mine_records(
    records: &[SentenceRecord],
    ontology: &LabelOntology,
) -> (Vec<MinedRow>, Vec<(usize, TextMineError)>) {
    let lexicon = Lexicon::new(ontology);
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let result = MinedSentence::parse(&rec.sentence, &lexicon).and_then(|s| classify_relevance(&s, ontology));
        match result {
            Ok(labels) => rows.extend(labels.into_iter().map(|(label, relevance)| MinedRow {
                lesion_id: rec.lesion_id.clone(),
                label,
                relevance,
            })),
            Err(e) => skipped.push((i, e)),
        }
    }
    (rows, skipped)
}
