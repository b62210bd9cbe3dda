//! The public group map: sensitivity spans × task importance → four groups.
//!
//! | label | sensitive | important |
//! |-------|-----------|-----------|
//! | 1     | yes       | yes       |
//! | 2     | yes       | no        |
//! | 3     | no        | yes       |
//! | 4     | no        | no        |
//!
//! Every member of a sensitive span shares one label; the span counts as
//! important when any member token is.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};
use crate::scalar::{self, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum GroupLabel {
    SensitiveImportant = 1,
    SensitiveUnimportant = 2,
    PublicImportant = 3,
    PublicUnimportant = 4,
}

impl GroupLabel {
    pub const ALL: [GroupLabel; 4] = [
        GroupLabel::SensitiveImportant,
        GroupLabel::SensitiveUnimportant,
        GroupLabel::PublicImportant,
        GroupLabel::PublicUnimportant,
    ];

    pub fn from_flags(sensitive: bool, important: bool) -> Self {
        match (sensitive, important) {
            (true, true) => GroupLabel::SensitiveImportant,
            (true, false) => GroupLabel::SensitiveUnimportant,
            (false, true) => GroupLabel::PublicImportant,
            (false, false) => GroupLabel::PublicUnimportant,
        }
    }

    /// 1-based label value.
    pub fn value(self) -> u8 {
        self as u8
    }

    /// 0-based position in budget vectors and count arrays.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn is_sensitive(self) -> bool {
        matches!(self, GroupLabel::SensitiveImportant | GroupLabel::SensitiveUnimportant)
    }

    pub fn is_important(self) -> bool {
        matches!(self, GroupLabel::SensitiveImportant | GroupLabel::PublicImportant)
    }
}

impl TryFrom<u8> for GroupLabel {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(GroupLabel::SensitiveImportant),
            2 => Ok(GroupLabel::SensitiveUnimportant),
            3 => Ok(GroupLabel::PublicImportant),
            4 => Ok(GroupLabel::PublicUnimportant),
            other => Err(Error::InvalidParameter(format!("group label must be 1..=4, got {other}"))),
        }
    }
}

impl From<GroupLabel> for u8 {
    fn from(g: GroupLabel) -> u8 {
        g.value()
    }
}

/// Half-open token range `[start, end)` flagged as sensitive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub category: String,
}

impl Span {
    pub fn new(start: usize, end: usize, category: impl Into<String>) -> Self {
        Self {
            start,
            end,
            category: category.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Sorts candidate spans longest first (ties: earlier start, then input
/// order) and keeps each one that does not overlap an already kept span.
/// Out-of-range or empty spans are dropped. Output is ordered by start.
pub fn resolve_overlaps(mut candidates: Vec<Span>, n: usize) -> Vec<Span> {
    candidates.retain(|s| s.start < s.end && s.end <= n);
    // Stable sort keeps caller priority among equal (length, start).
    candidates.sort_by(|a, b| b.len().cmp(&a.len()).then(a.start.cmp(&b.start)));
    let mut kept: Vec<Span> = Vec::new();
    for span in candidates {
        if kept.iter().all(|k| !k.overlaps(&span)) {
            kept.push(span);
        }
    }
    kept.sort_by_key(|s| s.start);
    kept
}

/// Finds privacy-sensitive spans in a token sequence. Implementations must be
/// deterministic and return spans within `0..tokens.len()`.
pub trait SensitivityOracle: Send + Sync {
    fn detect(&self, tokens: &[String]) -> Vec<Span>;
}

/// Spans supplied with the input, e.g. from an external NER system.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedSpans(pub Vec<Span>);

impl SensitivityOracle for PrecomputedSpans {
    fn detect(&self, tokens: &[String]) -> Vec<Span> {
        resolve_overlaps(self.0.clone(), tokens.len())
    }
}

/// Word lists keyed by category (`person`, `location`, `organization`, ...).
/// Entries are matched case-insensitively on whole tokens; multi-word entries
/// are space separated.
#[derive(Debug, Clone, Default)]
pub struct Gazetteers {
    // first token (lowercased) -> entries starting with it, as (tokens, category)
    by_first: HashMap<String, Vec<(Vec<String>, String)>>,
    max_len: usize,
}

impl Gazetteers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, category: &str, entry: &str) {
        let words: Vec<String> = entry.split_whitespace().map(str::to_lowercase).collect();
        if words.is_empty() {
            return;
        }
        self.max_len = self.max_len.max(words.len());
        let bucket = self.by_first.entry(words[0].clone()).or_default();
        if !bucket.iter().any(|(w, _)| *w == words) {
            bucket.push((words, category.to_string()));
        }
    }

    pub fn with_entries<'a>(mut self, category: &str, entries: impl IntoIterator<Item = &'a str>) -> Self {
        for e in entries {
            self.insert(category, e);
        }
        self
    }

    /// Adds every non-blank line of a UTF-8 file under `category`.
    pub fn load_file(&mut self, category: &str, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for line in text.lines() {
            self.insert(category, line.trim());
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.by_first.is_empty()
    }

    /// Longest entry starting at `tokens[start]`, as `(length, category)`.
    fn longest_match(&self, tokens: &[String], start: usize) -> Option<(usize, &str)> {
        let bucket = self.by_first.get(&tokens[start].to_lowercase())?;
        let mut best: Option<(usize, &str)> = None;
        for (words, category) in bucket {
            let len = words.len();
            if start + len > tokens.len() || best.is_some_and(|(b, _)| b >= len) {
                continue;
            }
            let hit = words
                .iter()
                .zip(&tokens[start..start + len])
                .all(|(w, t)| *w == t.to_lowercase());
            if hit {
                best = Some((len, category.as_str()));
            }
        }
        best
    }
}

fn numeric_id_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d+(?:[-/]\d+)+$|\d{4,}").expect("valid regex"))
}

fn is_sentence_end(token: &str) -> bool {
    matches!(token, "." | "!" | "?") || token.ends_with(['.', '!', '?'])
}

fn is_capitalized_word(token: &str) -> bool {
    let mut chars = token.chars();
    match chars.next() {
        Some(c) if c.is_uppercase() => {}
        _ => return false,
    }
    // The pronoun "I" is capitalized everywhere.
    token != "I" && token.chars().all(|c| c.is_alphabetic() || c == '\'' || c == '-' || c == '.')
}

/// Rule-based detector: numeric identifiers, gazetteer hits and runs of
/// capitalized tokens that do not start a sentence.
#[derive(Debug, Clone, Default)]
pub struct RuleBasedDetector {
    pub gazetteers: Gazetteers,
}

impl RuleBasedDetector {
    pub fn new(gazetteers: Gazetteers) -> Self {
        Self { gazetteers }
    }
}

impl SensitivityOracle for RuleBasedDetector {
    fn detect(&self, tokens: &[String]) -> Vec<Span> {
        detect_sensitive_spans_rulebased(tokens, &self.gazetteers)
    }
}

/// Candidate order within equal length and start: gazetteer, numeric id,
/// capitalized run.
pub fn detect_sensitive_spans_rulebased(tokens: &[String], gazetteers: &Gazetteers) -> Vec<Span> {
    let n = tokens.len();
    let mut gazetteer_hits = Vec::new();
    let mut gazetteer_covered = vec![false; n];
    for start in 0..n {
        if let Some((len, category)) = gazetteers.longest_match(tokens, start) {
            gazetteer_hits.push(Span::new(start, start + len, category));
            gazetteer_covered[start..start + len].iter_mut().for_each(|c| *c = true);
        }
    }

    let numeric: Vec<Span> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| numeric_id_regex().is_match(t))
        .map(|(i, _)| Span::new(i, i + 1, "numeric_id"))
        .collect();

    let mut capitalized = Vec::new();
    let mut i = 0;
    while i < n {
        let sentence_initial = i == 0 || is_sentence_end(&tokens[i - 1]);
        let eligible = |j: usize| is_capitalized_word(&tokens[j]);
        if eligible(i) && (!sentence_initial || gazetteer_covered[i]) {
            let start = i;
            while i < n && eligible(i) {
                i += 1;
            }
            capitalized.push(Span::new(start, i, "person"));
        } else {
            i += 1;
        }
    }

    let mut candidates = gazetteer_hits;
    candidates.extend(numeric);
    candidates.extend(capitalized);
    resolve_overlaps(candidates, n)
}

/// Importance threshold and the task/query direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceConfig<T: Real> {
    pub tau: f64,
    query: Vec<T>,
}

pub const DEFAULT_TAU: f64 = 0.5;

impl<T: Real> ImportanceConfig<T> {
    /// Normalizes `query`; `tau` must be finite and within `[0, 1]`.
    pub fn new(tau: f64, query: &[T]) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidParameter(format!("tau must be in [0, 1], got {tau}")));
        }
        let query = scalar::normalized(query).ok_or(Error::ZeroNormInput)?;
        Ok(Self { tau, query })
    }

    /// Query direction as the normalized mean of the unit embeddings of the
    /// in-vocabulary query tokens. `None` when no token is in vocabulary.
    pub fn from_query_tokens(tau: f64, query_tokens: &[&str], store: &EmbeddingStore<T>) -> Result<Option<Self>> {
        let mut sum = vec![T::zero(); store.dim()];
        let mut hits = 0usize;
        for tok in query_tokens {
            if let Ok(entry) = store.lookup(tok) {
                sum.iter_mut().zip(entry.unit).for_each(|(s, &u)| *s = *s + u);
                hits += 1;
            }
        }
        if hits == 0 {
            return Ok(None);
        }
        match Self::new(tau, &sum) {
            Ok(cfg) => Ok(Some(cfg)),
            // Query tokens that cancel out exactly carry no direction.
            Err(Error::ZeroNormInput) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn query(&self) -> &[T] {
        &self.query
    }
}

/// Cosine score against the query and the `score ≥ τ` flag.
pub fn importance_score<T: Real>(token_unit: &[T], cfg: &ImportanceConfig<T>) -> Result<(f64, bool)> {
    if token_unit.len() != cfg.query.len() {
        return Err(Error::DimensionMismatch {
            expected: cfg.query.len(),
            found: token_unit.len(),
        });
    }
    let score = scalar::dot(token_unit, &cfg.query).to_f64_lossy().clamp(-1.0, 1.0);
    Ok((score, score >= cfg.tau))
}

/// Labels from per-token flags. `spans` must be resolved (non-overlapping).
pub fn labels_from_flags(n: usize, spans: &[Span], important: &[bool]) -> Vec<GroupLabel> {
    assert_eq!(important.len(), n);
    let mut sensitive = vec![false; n];
    let mut important = important.to_vec();
    for span in spans.iter().filter(|s| s.start < s.end && s.end <= n) {
        let any = important[span.start..span.end].iter().any(|&b| b);
        for i in span.start..span.end {
            sensitive[i] = true;
            important[i] = any;
        }
    }
    sensitive
        .into_iter()
        .zip(important)
        .map(|(s, i)| GroupLabel::from_flags(s, i))
        .collect()
}

/// Assigns each token its group. Tokens missing from the store are scored as
/// not important; with no query configured no token is important.
pub fn assign_groups<T: Real>(
    tokens: &[String],
    store: &EmbeddingStore<T>,
    oracle: &dyn SensitivityOracle,
    cfg: Option<&ImportanceConfig<T>>,
) -> Vec<GroupLabel> {
    let spans = resolve_overlaps(oracle.detect(tokens), tokens.len());
    let important: Vec<bool> = tokens
        .iter()
        .map(|t| match (cfg, store.lookup(t)) {
            (Some(cfg), Ok(entry)) => importance_score(entry.unit, cfg).map(|(_, imp)| imp).unwrap_or(false),
            _ => false,
        })
        .collect();
    labels_from_flags(tokens.len(), &spans, &important)
}
