//! Distant supervision by gazetteer string matching.
//!
//! A dictionary maps token-sequence surface forms to entity types. Matching
//! scans each sentence left to right and takes the longest entry starting at
//! the current position, then resumes after it, so the emitted layer never
//! overlaps itself. Gold annotations are untouched; distant spans live in
//! their own provenance layer.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Corpus, LabeledSpan, Provenance};
use crate::evaluation::{score_layers, EvalError, Metrics};

/// Annotation-quality report: same shape as model metrics (micro, per-type,
/// counts), measured distant-vs-gold.
pub type AnnotationReport = Metrics;

#[derive(Debug, Error)]
pub enum DictError {
    #[error("line {line}: empty surface form")]
    EmptySurface { line: usize },
    #[error("line {line}: duplicate surface form `{surface}`")]
    Duplicate { line: usize, surface: String },
    #[error("line {line}: expected `surface form<TAB>TYPE`")]
    BadLine { line: usize },
    #[error("deletion rate must lie in [0, 1], got {0}")]
    BadRate(f64),
}

/// Surface-form gazetteer: one entity type per normalized token sequence.
#[derive(Debug, Clone)]
pub struct Dictionary {
    entries: HashMap<Vec<String>, String>,
    max_len: usize,
    case_sensitive: bool,
}

impl Dictionary {
    pub fn new(case_sensitive: bool) -> Self {
        Dictionary {
            entries: HashMap::new(),
            max_len: 0,
            case_sensitive,
        }
    }

    fn normalize(&self, token: &str) -> String {
        if self.case_sensitive {
            token.to_string()
        } else {
            token.to_lowercase()
        }
    }

    /// Inserts one surface form; duplicates are rejected (`line` feeds the
    /// error message, pass 0 for programmatic inserts).
    pub fn insert(
        &mut self,
        surface: &[&str],
        label: &str,
        line: usize,
    ) -> Result<(), DictError> {
        if surface.is_empty() || surface.iter().any(|t| t.is_empty()) {
            return Err(DictError::EmptySurface { line });
        }
        let key: Vec<String> = surface.iter().map(|t| self.normalize(t)).collect();
        if self.entries.contains_key(&key) {
            return Err(DictError::Duplicate {
                line,
                surface: surface.join(" "),
            });
        }
        self.max_len = self.max_len.max(key.len());
        self.entries.insert(key, label.to_string());
        Ok(())
    }

    /// Loads the TSV format: `surface form<TAB>TYPE` per line, `#`-prefixed
    /// comment lines and blank lines ignored.
    pub fn from_tsv(text: &str, case_sensitive: bool) -> Result<Self, DictError> {
        let mut dict = Dictionary::new(case_sensitive);
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (surface, label) = line
                .split_once('\t')
                .ok_or(DictError::BadLine { line: line_no })?;
            let tokens: Vec<&str> = surface.split_whitespace().collect();
            let label = label.trim();
            if label.is_empty() {
                return Err(DictError::BadLine { line: line_no });
            }
            dict.insert(&tokens, label, line_no)?;
        }
        Ok(dict)
    }

    /// Deterministic TSV dump, entries sorted by surface form.
    pub fn to_tsv(&self) -> String {
        let sorted: BTreeMap<&Vec<String>, &String> = self.entries.iter().collect();
        let mut out = String::new();
        for (surface, label) in sorted {
            out.push_str(&surface.join(" "));
            out.push('\t');
            out.push_str(label);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, tokens: &[String]) -> Option<&str> {
        self.entries.get(tokens).map(String::as_str)
    }

    pub fn case_sensitive(&self) -> bool {
        self.case_sensitive
    }
}

/// Annotates every sentence by longest-match-first, left-to-right gazetteer
/// scanning; returns a copy of the corpus with the distant layer added.
pub fn annotate(corpus: &Corpus, dictionary: &Dictionary) -> Corpus {
    let mut out = corpus.clone();
    if dictionary.is_empty() {
        return out;
    }
    for sentence in corpus.sentences() {
        let normalized: Vec<String> = sentence
            .tokens
            .iter()
            .map(|t| dictionary.normalize(t))
            .collect();
        let n = normalized.len();
        let mut pos = 0;
        while pos < n {
            let longest = dictionary.max_len.min(n - pos);
            let mut matched = None;
            for len in (1..=longest).rev() {
                if let Some(label) = dictionary.lookup(&normalized[pos..pos + len]) {
                    matched = Some((len, label.to_string()));
                    break;
                }
            }
            match matched {
                Some((len, label)) => {
                    out.add_annotation(
                        sentence.id,
                        LabeledSpan::new(pos, pos + len - 1, label, Provenance::Distant),
                    )
                    .expect("matched span in bounds");
                    pos += len;
                }
                None => pos += 1,
            }
        }
    }
    out
}

/// Exact-match quality of the distant layer against the gold layer.
pub fn evaluate_annotation(distant: &Corpus, gold: &Corpus) -> Result<AnnotationReport, EvalError> {
    score_layers(
        distant,
        Some(Provenance::Distant),
        gold,
        Some(Provenance::Gold),
    )
}

/// A dictionary sampled from gold surface forms, with the sampling tallies.
#[derive(Debug)]
pub struct GoldDictionary {
    pub dictionary: Dictionary,
    /// Unambiguous gold surface forms available for sampling.
    pub candidate_forms: usize,
    /// Forms actually kept: `round((1 - delete_rate) * candidates)`.
    pub kept_forms: usize,
    /// Forms dropped because they carry conflicting gold types.
    pub ambiguous_forms: usize,
}

/// Builds a dictionary from a seeded uniform sample of `(1 - delete_rate)`
/// of the corpus's unique gold surface forms. Ambiguous forms (same tokens,
/// different gold types) are excluded before sampling.
pub fn dictionary_from_gold(
    corpus: &Corpus,
    delete_rate: f64,
    seed: u64,
) -> Result<GoldDictionary, DictError> {
    if !(0.0..=1.0).contains(&delete_rate) {
        return Err(DictError::BadRate(delete_rate));
    }
    let mut forms: BTreeMap<Vec<String>, BTreeSet<String>> = BTreeMap::new();
    for (sid, span) in corpus.layer(Provenance::Gold) {
        let sentence = corpus.sentence(sid).expect("layer yields valid ids");
        let surface: Vec<String> = sentence.tokens[span.start..=span.end].to_vec();
        forms.entry(surface).or_default().insert(span.label.clone());
    }
    let unambiguous: Vec<(&Vec<String>, &String)> = forms
        .iter()
        .filter(|(_, types)| types.len() == 1)
        .map(|(surface, types)| (surface, types.iter().next().unwrap()))
        .collect();
    let ambiguous = forms.len() - unambiguous.len();

    let keep = ((1.0 - delete_rate) * unambiguous.len() as f64).round() as usize;
    let keep = keep.min(unambiguous.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> =
        rand::seq::index::sample(&mut rng, unambiguous.len(), keep).into_vec();
    chosen.sort_unstable();

    let mut dictionary = Dictionary::new(true);
    for idx in chosen {
        let (surface, label) = unambiguous[idx];
        let tokens: Vec<&str> = surface.iter().map(String::as_str).collect();
        dictionary.insert(&tokens, label, 0)?;
    }
    Ok(GoldDictionary {
        dictionary,
        candidate_forms: unambiguous.len(),
        kept_forms: keep,
        ambiguous_forms: ambiguous,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SentenceId, Split};

    fn sentence_corpus(sentences: &[&[&str]]) -> Corpus {
        let mut corpus = Corpus::new(Split::Train);
        for tokens in sentences {
            corpus
                .push_sentence(tokens.iter().map(|t| t.to_string()).collect())
                .unwrap();
        }
        corpus
    }

    #[test]
    fn longest_match_wins() {
        let corpus = sentence_corpus(&[&["Barack", "Obama", "visited", "Boston"]]);
        let mut dict = Dictionary::new(true);
        dict.insert(&["Barack", "Obama"], "PER", 0).unwrap();
        dict.insert(&["Boston"], "LOC", 0).unwrap();
        dict.insert(&["Obama"], "PER", 0).unwrap();
        let annotated = annotate(&corpus, &dict);
        let spans: Vec<_> = annotated
            .spans_of(SentenceId(0), Provenance::Distant)
            .into_iter()
            .map(|s| (s.start, s.end, s.label.clone()))
            .collect();
        assert_eq!(
            spans,
            vec![(0, 1, "PER".to_string()), (3, 3, "LOC".to_string())]
        );
    }

    #[test]
    fn empty_dictionary_annotates_nothing() {
        let corpus = sentence_corpus(&[&["a", "b"]]);
        let dict = Dictionary::new(true);
        let annotated = annotate(&corpus, &dict);
        assert_eq!(annotated.total_annotations(Some(Provenance::Distant)), 0);
    }

    #[test]
    fn annotation_is_deterministic_and_keeps_gold() {
        let mut corpus = sentence_corpus(&[&["Ada", "Lovelace", "in", "Paris"]]);
        corpus
            .add_annotation(
                SentenceId(0),
                LabeledSpan::new(0, 1, "PER", Provenance::Gold),
            )
            .unwrap();
        let mut dict = Dictionary::new(true);
        dict.insert(&["Paris"], "LOC", 0).unwrap();
        let a = annotate(&corpus, &dict);
        let b = annotate(&corpus, &dict);
        assert_eq!(a, b);
        assert_eq!(a.total_annotations(Some(Provenance::Gold)), 1);
        assert_eq!(a.total_annotations(Some(Provenance::Distant)), 1);
    }

    #[test]
    fn case_insensitive_matching() {
        let corpus = sentence_corpus(&[&["BOSTON", "boston", "Boston"]]);
        let mut dict = Dictionary::new(false);
        dict.insert(&["Boston"], "LOC", 0).unwrap();
        let annotated = annotate(&corpus, &dict);
        assert_eq!(annotated.total_annotations(Some(Provenance::Distant)), 3);

        let sensitive = {
            let mut d = Dictionary::new(true);
            d.insert(&["Boston"], "LOC", 0).unwrap();
            annotate(&corpus, &d)
        };
        assert_eq!(sensitive.total_annotations(Some(Provenance::Distant)), 1);
    }

    #[test]
    fn tsv_parsing_and_errors() {
        let dict = Dictionary::from_tsv(
            "# comment\nBarack Obama\tPER\n\nBoston\tLOC\n",
            true,
        )
        .unwrap();
        assert_eq!(dict.len(), 2);
        assert_eq!(dict.lookup(&["Boston".to_string()]), Some("LOC"));
        assert_eq!(dict.to_tsv(), "Barack Obama\tPER\nBoston\tLOC\n");

        assert!(matches!(
            Dictionary::from_tsv("Boston LOC\n", true),
            Err(DictError::BadLine { line: 1 })
        ));
        assert!(matches!(
            Dictionary::from_tsv("\tLOC\n", true),
            Err(DictError::EmptySurface { line: 1 })
        ));
        assert!(matches!(
            Dictionary::from_tsv("Boston\tLOC\nBoston\tORG\n", true),
            Err(DictError::Duplicate { line: 2, .. })
        ));
    }

    #[test]
    fn subset_dictionary_has_perfect_precision_and_oracle_recall() {
        // 30 sentences; forms are textually disjoint, so every distant span
        // must equal a gold span.
        let mut corpus = Corpus::new(Split::Train);
        let forms: [(&[&str], &str); 5] = [
            (&["Ada", "Lovelace"], "PER"),
            (&["Grace", "Hopper"], "PER"),
            (&["Boston"], "LOC"),
            (&["Oslo"], "LOC"),
            (&["Acme", "Corp"], "ORG"),
        ];
        for k in 0..30usize {
            let (surface, label) = forms[k % forms.len()];
            let mut tokens: Vec<String> = vec!["about".into()];
            tokens.extend(surface.iter().map(|t| t.to_string()));
            tokens.push("today".into());
            let id = corpus.push_sentence(tokens).unwrap();
            corpus
                .add_annotation(
                    id,
                    LabeledSpan::new(1, surface.len(), label, Provenance::Gold),
                )
                .unwrap();
        }
        // Dictionary covers 3 of the 5 forms.
        let mut dict = Dictionary::new(true);
        dict.insert(&["Ada", "Lovelace"], "PER", 0).unwrap();
        dict.insert(&["Boston"], "LOC", 0).unwrap();
        dict.insert(&["Acme", "Corp"], "ORG", 0).unwrap();
        let annotated = annotate(&corpus, &dict);
        let report = evaluate_annotation(&annotated, &corpus).unwrap();
        assert_eq!(report.micro.precision, 1.0);
        // Counting oracle: fraction of gold mentions whose surface is covered.
        let covered = corpus
            .layer(Provenance::Gold)
            .filter(|(sid, span)| {
                let sentence = corpus.sentence(*sid).unwrap();
                dict.lookup(&sentence.tokens[span.start..=span.end]).is_some()
            })
            .count();
        let total = corpus.total_annotations(Some(Provenance::Gold));
        assert!((report.micro.recall - covered as f64 / total as f64).abs() < 1e-12);
        for prf in report.per_type.values() {
            assert!(prf.precision == 1.0 || prf.f1 == 0.0);
        }
    }

    #[test]
    fn recall_monotone_in_dictionary_coverage() {
        let mut corpus = sentence_corpus(&[
            &["Ada", "spoke"],
            &["Oslo", "calling"],
            &["Acme", "hired", "Ada"],
        ]);
        for (sid, start, end, label) in
            [(0u32, 0, 0, "PER"), (1, 0, 0, "LOC"), (2, 0, 0, "ORG"), (2, 2, 2, "PER")]
        {
            corpus
                .add_annotation(
                    SentenceId(sid),
                    LabeledSpan::new(start, end, label, Provenance::Gold),
                )
                .unwrap();
        }
        let entries: [(&[&str], &str); 3] = [(&["Ada"], "PER"), (&["Oslo"], "LOC"), (&["Acme"], "ORG")];
        let mut previous = 0.0;
        let mut dict = Dictionary::new(true);
        for (surface, label) in entries {
            dict.insert(surface, label, 0).unwrap();
            let annotated = annotate(&corpus, &dict);
            let report = evaluate_annotation(&annotated, &corpus).unwrap();
            assert!(report.micro.recall >= previous);
            previous = report.micro.recall;
        }
        assert_eq!(previous, 1.0);
    }

    #[test]
    fn identity_and_empty_reports() {
        let mut corpus = sentence_corpus(&[&["Ada", "here"]]);
        corpus
            .add_annotation(
                SentenceId(0),
                LabeledSpan::new(0, 0, "PER", Provenance::Gold),
            )
            .unwrap();
        let mut dict = Dictionary::new(true);
        dict.insert(&["Ada"], "PER", 0).unwrap();
        let annotated = annotate(&corpus, &dict);
        let report = evaluate_annotation(&annotated, &corpus).unwrap();
        assert_eq!(report.micro.precision, 1.0);
        assert_eq!(report.micro.recall, 1.0);
        assert_eq!(report.per_type["PER"].f1, 1.0);

        let bare = annotate(&corpus, &Dictionary::new(true));
        let empty_report = evaluate_annotation(&bare, &corpus).unwrap();
        assert_eq!(empty_report.micro.precision, 0.0);
        assert_eq!(empty_report.micro.recall, 0.0);
        assert_eq!(empty_report.micro.f1, 0.0);
    }

    #[test]
    fn report_serializes_with_fixed_key_order() {
        let corpus = sentence_corpus(&[&["x"]]);
        let report = evaluate_annotation(&corpus, &corpus).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let micro = json.find("\"micro\"").unwrap();
        let per_type = json.find("\"per_type\"").unwrap();
        let counts = json.find("\"counts\"").unwrap();
        assert!(micro < per_type && per_type < counts);
    }

    #[test]
    fn gold_dictionary_sampling_is_seeded_and_skips_ambiguous() {
        let mut corpus = sentence_corpus(&[
            &["Ada", "x"],
            &["Oslo", "x"],
            &["Acme", "x"],
            &["Hugo", "x"],
            &["Ada", "y"],
        ]);
        for (sid, label) in [(0u32, "PER"), (1, "LOC"), (2, "ORG"), (3, "PER"), (4, "ORG")] {
            corpus
                .add_annotation(
                    SentenceId(sid),
                    LabeledSpan::new(0, 0, label, Provenance::Gold),
                )
                .unwrap();
        }
        // "Ada" is PER in one sentence and ORG in another: ambiguous, dropped.
        let sampled = dictionary_from_gold(&corpus, 0.0, 7).unwrap();
        assert_eq!(sampled.ambiguous_forms, 1);
        assert_eq!(sampled.candidate_forms, 3);
        assert_eq!(sampled.kept_forms, 3);
        assert!(sampled.dictionary.lookup(&["Ada".to_string()]).is_none());

        let a = dictionary_from_gold(&corpus, 0.4, 9).unwrap();
        let b = dictionary_from_gold(&corpus, 0.4, 9).unwrap();
        assert_eq!(a.dictionary.to_tsv(), b.dictionary.to_tsv());
        assert_eq!(a.kept_forms, 2); // round(0.6 * 3)

        assert!(matches!(
            dictionary_from_gold(&corpus, 1.5, 0),
            Err(DictError::BadRate(_))
        ));
    }
}
