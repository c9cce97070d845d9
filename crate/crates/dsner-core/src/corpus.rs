//! Sentence/span data model and CoNLL-style column IO.
//!
//! Positions are token indices throughout; a labeled span covers the closed
//! token range `[start, end]`. Gold annotations within a sentence must not
//! overlap. Distant and predicted annotations may overlap at storage level;
//! consumers that need a flat layer resolve overlaps themselves.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a sentence within its corpus. Doubles as the deterministic
/// first-order tie-break key for span ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentenceId(pub u32);

impl fmt::Display for SentenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where an annotation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gold,
    Distant,
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: SentenceId,
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A typed span annotation over the closed token range `[start, end]`.
/// The label is always an entity type, never the O label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
    pub provenance: Provenance,
}

impl LabeledSpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>, provenance: Provenance) -> Self {
        LabeledSpan {
            start,
            end,
            label: label.into(),
            provenance,
        }
    }

    /// Span width as used by the width feature: `end - start` (0 for a
    /// single-token span).
    pub fn width(&self) -> usize {
        self.end - self.start
    }

    pub fn overlaps(&self, other: &LabeledSpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// The ordered entity-type label set. The O (non-entity) label is not a
/// member of the explicit list; it is addressable at index `len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTypeSet {
    labels: Vec<String>,
}

pub const O_LABEL: &str = "O";

impl EntityTypeSet {
    /// Builds the set from arbitrary label occurrences: sorted, deduplicated.
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        labels.sort();
        labels.dedup();
        labels.retain(|l| l != O_LABEL);
        EntityTypeSet { labels }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of classifier labels: entity types plus O.
    pub fn num_labels(&self) -> usize {
        self.labels.len() + 1
    }

    pub fn o_index(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        if label == O_LABEL {
            return Some(self.o_index());
        }
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn label_at(&self, index: usize) -> &str {
        if index == self.o_index() {
            O_LABEL
        } else {
            &self.labels[index]
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("sentence must contain at least one token")]
    EmptySentence,
    #[error("sentence {0} contains an empty token string")]
    EmptyToken(SentenceId),
    #[error("unknown sentence id {0}")]
    UnknownSentence(SentenceId),
    #[error("span [{start}, {end}] out of bounds for sentence {id} of length {len}")]
    SpanOutOfBounds {
        id: SentenceId,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("span start {start} exceeds end {end} in sentence {id}")]
    InvertedSpan {
        id: SentenceId,
        start: usize,
        end: usize,
    },
    #[error("gold spans overlap in sentence {0}")]
    GoldOverlap(SentenceId),
    #[error("label must not be the O label")]
    OLabelSpan,
    #[error("line {line}: malformed tag `{tag}` (expected O, B-X or I-X)")]
    BadTag { line: usize, tag: String },
    #[error("line {line}: expected at least token and tag columns")]
    MissingColumns { line: usize },
    #[error("sentence {id}: overlapping spans cannot be BIO-serialized")]
    OverlapAtWrite { id: SentenceId },
    #[error("conflicting annotations for span [{start}, {end}]: `{a}` vs `{b}`")]
    ConflictingAnnotation {
        start: usize,
        end: usize,
        a: String,
        b: String,
    },
}

/// Sentences plus per-sentence span annotations keyed by provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub split: Split,
    sentences: Vec<Sentence>,
    annotations: Vec<Vec<LabeledSpan>>,
}

impl Corpus {
    pub fn new(split: Split) -> Self {
        Corpus {
            split,
            sentences: Vec::new(),
            annotations: Vec::new(),
        }
    }

    pub fn push_sentence(&mut self, tokens: Vec<String>) -> Result<SentenceId, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::EmptySentence);
        }
        let id = SentenceId(self.sentences.len() as u32);
        if tokens.iter().any(|t| t.is_empty()) {
            return Err(CorpusError::EmptyToken(id));
        }
        self.sentences.push(Sentence { id, tokens });
        self.annotations.push(Vec::new());
        Ok(id)
    }

    pub fn add_annotation(&mut self, id: SentenceId, span: LabeledSpan) -> Result<(), CorpusError> {
        let sentence = self
            .sentences
            .get(id.0 as usize)
            .ok_or(CorpusError::UnknownSentence(id))?;
        if span.start > span.end {
            return Err(CorpusError::InvertedSpan {
                id,
                start: span.start,
                end: span.end,
            });
        }
        if span.end >= sentence.len() {
            return Err(CorpusError::SpanOutOfBounds {
                id,
                start: span.start,
                end: span.end,
                len: sentence.len(),
            });
        }
        if span.label == O_LABEL {
            return Err(CorpusError::OLabelSpan);
        }
        if span.provenance == Provenance::Gold {
            let clash = self.annotations[id.0 as usize]
                .iter()
                .any(|s| s.provenance == Provenance::Gold && s.overlaps(&span));
            if clash {
                return Err(CorpusError::GoldOverlap(id));
            }
        }
        self.annotations[id.0 as usize].push(span);
        Ok(())
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn sentence(&self, id: SentenceId) -> Option<&Sentence> {
        self.sentences.get(id.0 as usize)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// All annotations of one sentence, every provenance.
    pub fn annotations(&self, id: SentenceId) -> &[LabeledSpan] {
        &self.annotations[id.0 as usize]
    }

    pub fn spans_of(&self, id: SentenceId, provenance: Provenance) -> Vec<&LabeledSpan> {
        self.annotations[id.0 as usize]
            .iter()
            .filter(|s| s.provenance == provenance)
            .collect()
    }

    /// Iterates `(sentence id, span)` over the whole corpus for one layer.
    pub fn layer(&self, provenance: Provenance) -> impl Iterator<Item = (SentenceId, &LabeledSpan)> {
        self.sentences.iter().flat_map(move |s| {
            self.annotations[s.id.0 as usize]
                .iter()
                .filter(move |sp| sp.provenance == provenance)
                .map(move |sp| (s.id, sp))
        })
    }

    /// Sorted unique entity labels, optionally restricted to one layer.
    pub fn entity_labels(&self, provenance: Option<Provenance>) -> Vec<String> {
        let mut labels: Vec<String> = self
            .annotations
            .iter()
            .flatten()
            .filter(|s| provenance.map_or(true, |p| s.provenance == p))
            .map(|s| s.label.clone())
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }

    pub fn total_annotations(&self, provenance: Option<Provenance>) -> usize {
        self.annotations
            .iter()
            .flatten()
            .filter(|s| provenance.map_or(true, |p| s.provenance == p))
            .count()
    }

    /// Serializes one annotation layer to CoNLL columns (`token TAG`), blank
    /// line between sentences. Overlapping spans in the selected layer cannot
    /// be represented and are rejected.
    pub fn write_conll(&self, provenance: Provenance) -> Result<String, CorpusError> {
        let mut out = String::new();
        for (k, sentence) in self.sentences.iter().enumerate() {
            if k > 0 {
                out.push('\n');
            }
            let mut tags = vec![String::from(O_LABEL); sentence.len()];
            let mut spans = self.spans_of(sentence.id, provenance);
            spans.sort_by_key(|s| (s.start, s.end));
            let mut covered_until: Option<usize> = None;
            for span in spans {
                if let Some(limit) = covered_until {
                    if span.start <= limit {
                        return Err(CorpusError::OverlapAtWrite { id: sentence.id });
                    }
                }
                covered_until = Some(span.end);
                tags[span.start] = format!("B-{}", span.label);
                for tag in tags.iter_mut().take(span.end + 1).skip(span.start + 1) {
                    *tag = format!("I-{}", span.label);
                }
            }
            for (token, tag) in sentence.tokens.iter().zip(&tags) {
                out.push_str(token);
                out.push(' ');
                out.push_str(tag);
                out.push('\n');
            }
        }
        Ok(out)
    }
}

/// Result of [`parse_conll`]: the corpus plus a tally of repaired dangling
/// I-X tags (an I-X with no matching open span is treated as B-X).
#[derive(Debug)]
pub struct ParsedConll {
    pub corpus: Corpus,
    pub repaired_tags: usize,
}

enum BioTag {
    Outside,
    Begin(String),
    Inside(String),
}

fn parse_tag(raw: &str, line: usize) -> Result<BioTag, CorpusError> {
    if raw == O_LABEL {
        return Ok(BioTag::Outside);
    }
    if let Some(label) = raw.strip_prefix("B-") {
        if !label.is_empty() {
            return Ok(BioTag::Begin(label.to_string()));
        }
    }
    if let Some(label) = raw.strip_prefix("I-") {
        if !label.is_empty() {
            return Ok(BioTag::Inside(label.to_string()));
        }
    }
    Err(CorpusError::BadTag {
        line,
        tag: raw.to_string(),
    })
}

/// Parses token-per-line CoNLL text: whitespace-separated columns, first
/// column the token, last column a BIO tag, blank line between sentences.
/// Spans are the maximal BIO segments and land in the given layer.
pub fn parse_conll(text: &str, provenance: Provenance) -> Result<ParsedConll, CorpusError> {
    let mut corpus = Corpus::new(Split::Train);
    let mut repaired = 0usize;

    let mut tokens: Vec<String> = Vec::new();
    // (start, label) of the currently open span, plus finished spans.
    let mut open: Option<(usize, String)> = None;
    let mut spans: Vec<(usize, usize, String)> = Vec::new();

    let flush = |corpus: &mut Corpus,
                     tokens: &mut Vec<String>,
                     open: &mut Option<(usize, String)>,
                     spans: &mut Vec<(usize, usize, String)>|
     -> Result<(), CorpusError> {
        if tokens.is_empty() {
            return Ok(());
        }
        let n = tokens.len();
        if let Some((start, label)) = open.take() {
            spans.push((start, n - 1, label));
        }
        let id = corpus.push_sentence(std::mem::take(tokens))?;
        for (start, end, label) in spans.drain(..) {
            corpus.add_annotation(id, LabeledSpan::new(start, end, label, provenance))?;
        }
        Ok(())
    };

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            flush(&mut corpus, &mut tokens, &mut open, &mut spans)?;
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(CorpusError::MissingColumns { line: line_no });
        }
        let pos = tokens.len();
        let tag = parse_tag(cols[cols.len() - 1], line_no)?;
        tokens.push(cols[0].to_string());
        match tag {
            BioTag::Outside => {
                if let Some((start, label)) = open.take() {
                    spans.push((start, pos - 1, label));
                }
            }
            BioTag::Begin(label) => {
                if let Some((start, prev)) = open.take() {
                    spans.push((start, pos - 1, prev));
                }
                open = Some((pos, label));
            }
            BioTag::Inside(label) => match &open {
                Some((_, prev)) if *prev == label => {}
                _ => {
                    // Dangling I-X: repair to B-X so noisy files stay loadable.
                    if let Some((start, prev)) = open.take() {
                        spans.push((start, pos - 1, prev));
                    }
                    open = Some((pos, label));
                    repaired += 1;
                }
            },
        }
    }
    flush(&mut corpus, &mut tokens, &mut open, &mut spans)?;

    Ok(ParsedConll {
        corpus,
        repaired_tags: repaired,
    })
}

/// All `(i, j)` pairs with `0 <= j - i <= min(max_width, n - 1)` and `j < n`,
/// in lexicographic order.
pub fn enumerate_spans(n: usize, max_width: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..n {
        let hi = (i + max_width).min(n - 1);
        for j in i..=hi {
            out.push((i, j));
        }
    }
    out
}

/// Number of spans [`enumerate_spans`] yields, in closed form.
pub fn enumerated_span_count(n: usize, max_width: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let w_max = max_width.min(n - 1);
    (0..=w_max).map(|w| n - w).sum()
}

/// Partition of an enumerated span universe into annotated positives and
/// O-labeled negatives.
#[derive(Debug, Clone)]
pub struct SpanPartition {
    /// Enumerated spans exactly matching an annotation, with its label.
    pub positives: Vec<((usize, usize), String)>,
    /// Everything else in the universe.
    pub negatives: Vec<(usize, usize)>,
    /// Annotations wider than the enumeration limit, dropped from positives.
    pub truncated: usize,
}

/// Splits `universe` against `annotations`: positives are exact `(i, j)`
/// matches carrying their type, negatives the remainder. Annotations wider
/// than the widest enumerated span are dropped and tallied.
pub fn split_pos_neg(
    universe: &[(usize, usize)],
    annotations: &[LabeledSpan],
    max_width: usize,
) -> Result<SpanPartition, CorpusError> {
    let mut by_pos: BTreeMap<(usize, usize), &str> = BTreeMap::new();
    let mut truncated = 0usize;
    for span in annotations {
        if span.width() > max_width {
            truncated += 1;
            continue;
        }
        match by_pos.get(&(span.start, span.end)) {
            Some(existing) if *existing != span.label => {
                return Err(CorpusError::ConflictingAnnotation {
                    start: span.start,
                    end: span.end,
                    a: existing.to_string(),
                    b: span.label.clone(),
                });
            }
            _ => {
                by_pos.insert((span.start, span.end), &span.label);
            }
        }
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for &(i, j) in universe {
        match by_pos.get(&(i, j)) {
            Some(label) => positives.push(((i, j), label.to_string())),
            None => negatives.push((i, j)),
        }
    }
    Ok(SpanPartition {
        positives,
        negatives,
        truncated,
    })
}
