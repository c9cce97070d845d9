//! Inference over enumerated spans and exact-match span-level scoring.
//!
//! A predicted span counts as correct only when `(sentence, start, end,
//! type)` all match a reference span. Metrics are micro-aggregated over
//! pooled counts; per-type rows use the same counting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{enumerate_spans, Corpus, LabeledSpan, Provenance, Sentence, Split};
use crate::encoder::SpanClassifier;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TypeCounts {
    pub tp: usize,
    pub predicted: usize,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub overall: TypeCounts,
    pub per_type: BTreeMap<String, TypeCounts>,
}

/// Micro and per-type precision/recall/F1 with the underlying tallies.
/// Serializes with fixed key order: micro, per_type, counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub micro: Prf,
    pub per_type: BTreeMap<String, Prf>,
    pub counts: MetricCounts,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpora do not cover the same sentences")]
    SentenceMismatch,
}

fn span_set(
    corpus: &Corpus,
    id: crate::corpus::SentenceId,
    provenance: Option<Provenance>,
) -> BTreeSet<(usize, usize, String)> {
    corpus
        .annotations(id)
        .iter()
        .filter(|s| provenance.map_or(true, |p| s.provenance == p))
        .map(|s| (s.start, s.end, s.label.clone()))
        .collect()
}

/// Exact-match scoring of one annotation layer against another across two
/// sentence-aligned corpora. `None` selects every annotation regardless of
/// provenance.
pub fn score_layers(
    predicted: &Corpus,
    predicted_layer: Option<Provenance>,
    reference: &Corpus,
    reference_layer: Option<Provenance>,
) -> Result<Metrics, EvalError> {
    if predicted.len() != reference.len() {
        return Err(EvalError::SentenceMismatch);
    }
    for (a, b) in predicted.sentences().iter().zip(reference.sentences()) {
        if a.id != b.id || a.len() != b.len() {
            return Err(EvalError::SentenceMismatch);
        }
    }

    let mut per_type: BTreeMap<String, TypeCounts> = BTreeMap::new();
    for sentence in reference.sentences() {
        let pred = span_set(predicted, sentence.id, predicted_layer);
        let gold = span_set(reference, sentence.id, reference_layer);
        for (_, _, label) in &pred {
            per_type.entry(label.clone()).or_default().predicted += 1;
        }
        for (_, _, label) in &gold {
            per_type.entry(label.clone()).or_default().gold += 1;
        }
        for triple in pred.intersection(&gold) {
            per_type.entry(triple.2.clone()).or_default().tp += 1;
        }
    }

    let mut overall = TypeCounts::default();
    for counts in per_type.values() {
        overall.tp += counts.tp;
        overall.predicted += counts.predicted;
        overall.gold += counts.gold;
    }
    let metrics_per_type = per_type
        .iter()
        .map(|(label, c)| (label.clone(), Prf::from_counts(c.tp, c.predicted, c.gold)))
        .collect();
    Ok(Metrics {
        micro: Prf::from_counts(overall.tp, overall.predicted, overall.gold),
        per_type: metrics_per_type,
        counts: MetricCounts {
            overall,
            per_type,
        },
    })
}

/// Exact-match micro/per-type metrics of the predicted layer against the
/// reference corpus's gold layer.
pub fn micro_f1(predicted: &Corpus, gold: &Corpus) -> Result<Metrics, EvalError> {
    score_layers(
        predicted,
        Some(Provenance::Predicted),
        gold,
        Some(Provenance::Gold),
    )
}

#[derive(Debug, Clone, Copy)]
pub struct PredictOptions {
    /// Greedy overlap resolution by predicted probability; disable for raw
    /// candidate inspection.
    pub resolve_overlaps: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            resolve_overlaps: true,
        }
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    start: usize,
    end: usize,
    label: String,
    prob: f64,
}

/// Greedy by probability descending, ties by (start, end); a candidate is
/// kept iff it overlaps no already-kept span.
fn resolve_overlaps(mut candidates: Vec<Candidate>) -> Vec<Candidate> {
    candidates.sort_by(|a, b| {
        b.prob
            .total_cmp(&a.prob)
            .then_with(|| (a.start, a.end).cmp(&(b.start, b.end)))
    });
    let mut kept: Vec<Candidate> = Vec::new();
    for c in candidates {
        let clash = kept.iter().any(|k| c.start <= k.end && k.start <= c.end);
        if !clash {
            kept.push(c);
        }
    }
    kept.sort_by_key(|c| (c.start, c.end));
    kept
}

/// Argmax type for every enumerated span; non-O argmaxes become candidate
/// predictions, overlap-resolved greedily unless disabled.
pub fn predict_sentence(
    model: &SpanClassifier,
    sentence: &Sentence,
    options: PredictOptions,
) -> Vec<LabeledSpan> {
    let trace = model.encode_eval(&sentence.tokens);
    let o_index = model.types.o_index();
    let mut candidates = Vec::new();
    for (i, j) in enumerate_spans(sentence.len(), model.config.max_span_width) {
        let rep = model
            .span_vec(&trace, i, j)
            .expect("enumerated span within width limit");
        let probs = model.probabilities(&rep);
        let (argmax, prob) = probs
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.total_cmp(b))
            .expect("non-empty label space");
        if argmax != o_index {
            candidates.push(Candidate {
                start: i,
                end: j,
                label: model.types.label_at(argmax).to_string(),
                prob: *prob,
            });
        }
    }
    let chosen = if options.resolve_overlaps {
        resolve_overlaps(candidates)
    } else {
        candidates
    };
    chosen
        .into_iter()
        .map(|c| LabeledSpan::new(c.start, c.end, c.label, Provenance::Predicted))
        .collect()
}

/// Runs prediction over every sentence and returns a corpus holding only the
/// predicted layer over the same sentences.
pub fn predict_corpus(model: &SpanClassifier, corpus: &Corpus, options: PredictOptions) -> Corpus {
    let mut out = Corpus::new(Split::Test);
    for sentence in corpus.sentences() {
        let id = out
            .push_sentence(sentence.tokens.clone())
            .expect("source sentences are valid");
        for span in predict_sentence(model, sentence, options) {
            out.add_annotation(id, span).expect("predicted span in bounds");
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanRecord {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SentenceErrors {
    pub sentence: u32,
    pub false_positives: Vec<SpanRecord>,
    pub false_negatives: Vec<SpanRecord>,
}

/// Per-sentence false positives/negatives, for sentences that have any.
pub fn error_listing(predicted: &Corpus, gold: &Corpus) -> Result<Vec<SentenceErrors>, EvalError> {
    if predicted.len() != gold.len() {
        return Err(EvalError::SentenceMismatch);
    }
    let mut out = Vec::new();
    for sentence in gold.sentences() {
        let pred = span_set(predicted, sentence.id, Some(Provenance::Predicted));
        let gold_set = span_set(gold, sentence.id, Some(Provenance::Gold));
        let fps: Vec<SpanRecord> = pred
            .difference(&gold_set)
            .map(|(s, e, l)| SpanRecord {
                start: *s,
                end: *e,
                label: l.clone(),
            })
            .collect();
        let fns: Vec<SpanRecord> = gold_set
            .difference(&pred)
            .map(|(s, e, l)| SpanRecord {
                start: *s,
                end: *e,
                label: l.clone(),
            })
            .collect();
        if !fps.is_empty() || !fns.is_empty() {
            out.push(SentenceErrors {
                sentence: sentence.id.0,
                false_positives: fps,
                false_negatives: fns,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentenceId;

    fn corpus_with(spans: &[(usize, &[(usize, usize, &str)])], provenance: Provenance) -> Corpus {
        // Builds 4 ten-token sentences and attaches the given spans.
        let mut corpus = Corpus::new(Split::Test);
        for k in 0..4usize {
            let tokens = (0..10).map(|t| format!("w{k}_{t}")).collect();
            corpus.push_sentence(tokens).unwrap();
        }
        for &(sid, sentence_spans) in spans {
            for &(start, end, label) in sentence_spans {
                corpus
                    .add_annotation(
                        SentenceId(sid as u32),
                        LabeledSpan::new(start, end, label, provenance),
                    )
                    .unwrap();
            }
        }
        corpus
    }

    #[test]
    fn worked_example() {
        let gold = corpus_with(&[(0, &[(0, 1, "PER")])], Provenance::Gold);
        let predicted = corpus_with(
            &[(0, &[(0, 1, "PER"), (2, 2, "LOC")])],
            Provenance::Predicted,
        );
        let metrics = micro_f1(&predicted, &gold).unwrap();
        assert!((metrics.micro.precision - 0.5).abs() < 1e-12);
        assert!((metrics.micro.recall - 1.0).abs() < 1e-12);
        assert!((metrics.micro.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(metrics.counts.overall.tp, 1);
        assert_eq!(metrics.counts.overall.predicted, 2);
        assert_eq!(metrics.counts.overall.gold, 1);
    }

    #[test]
    fn identity_gives_perfect_metrics() {
        let spans: &[(usize, &[(usize, usize, &str)])] = &[
            (0, &[(0, 1, "PER"), (4, 6, "ORG")]),
            (2, &[(3, 3, "LOC")]),
        ];
        let gold = corpus_with(spans, Provenance::Gold);
        let predicted = corpus_with(spans, Provenance::Predicted);
        let metrics = micro_f1(&predicted, &gold).unwrap();
        assert_eq!(metrics.micro.precision, 1.0);
        assert_eq!(metrics.micro.recall, 1.0);
        assert_eq!(metrics.micro.f1, 1.0);
        for prf in metrics.per_type.values() {
            assert_eq!(prf.f1, 1.0);
        }
    }

    #[test]
    fn empty_predictions_degenerate() {
        let gold = corpus_with(&[(0, &[(0, 1, "PER")])], Provenance::Gold);
        let predicted = corpus_with(&[], Provenance::Predicted);
        let metrics = micro_f1(&predicted, &gold).unwrap();
        assert_eq!(metrics.micro.precision, 0.0);
        assert_eq!(metrics.micro.recall, 0.0);
        assert_eq!(metrics.micro.f1, 0.0);
    }

    #[test]
    fn sentence_mismatch_is_an_error() {
        let gold = corpus_with(&[], Provenance::Gold);
        let mut predicted = Corpus::new(Split::Test);
        predicted.push_sentence(vec!["one".into()]).unwrap();
        assert!(matches!(
            micro_f1(&predicted, &gold),
            Err(EvalError::SentenceMismatch)
        ));
    }

    #[test]
    fn metrics_match_brute_force_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(123);
        let labels = ["PER", "LOC", "ORG"];
        for _ in 0..200 {
            let mut gold = Corpus::new(Split::Test);
            let mut predicted = Corpus::new(Split::Test);
            let sentences = rng.gen_range(1..4usize);
            let mut gold_triples: Vec<(u32, usize, usize, String)> = Vec::new();
            let mut pred_triples: Vec<(u32, usize, usize, String)> = Vec::new();
            for s in 0..sentences {
                let tokens: Vec<String> = (0..8).map(|t| format!("s{s}_{t}")).collect();
                gold.push_sentence(tokens.clone()).unwrap();
                predicted.push_sentence(tokens).unwrap();
                let mut pos = 0;
                while pos < 8 && gold_triples.len() < 10 {
                    if rng.gen_bool(0.4) {
                        let end = (pos + rng.gen_range(0..2usize)).min(7);
                        let label = labels[rng.gen_range(0..3)];
                        gold.add_annotation(
                            SentenceId(s as u32),
                            LabeledSpan::new(pos, end, label, Provenance::Gold),
                        )
                        .unwrap();
                        gold_triples.push((s as u32, pos, end, label.to_string()));
                        pos = end + 2;
                    } else {
                        pos += 1;
                    }
                }
                for _ in 0..rng.gen_range(0..4usize) {
                    let start = rng.gen_range(0..8usize);
                    let end = (start + rng.gen_range(0..2usize)).min(7);
                    let label = labels[rng.gen_range(0..3)];
                    let triple = (s as u32, start, end, label.to_string());
                    if pred_triples.contains(&triple) {
                        continue;
                    }
                    predicted
                        .add_annotation(
                            SentenceId(s as u32),
                            LabeledSpan::new(start, end, label, Provenance::Predicted),
                        )
                        .unwrap();
                    pred_triples.push(triple);
                }
            }
            let metrics = micro_f1(&predicted, &gold).unwrap();
            // Brute-force counting oracle.
            let tp = pred_triples
                .iter()
                .filter(|t| gold_triples.contains(t))
                .count();
            let p = if pred_triples.is_empty() {
                0.0
            } else {
                tp as f64 / pred_triples.len() as f64
            };
            let r = if gold_triples.is_empty() {
                0.0
            } else {
                tp as f64 / gold_triples.len() as f64
            };
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            assert!((metrics.micro.precision - p).abs() < 1e-12);
            assert!((metrics.micro.recall - r).abs() < 1e-12);
            assert!((metrics.micro.f1 - f1).abs() < 1e-12);
            // Bounds and the mean sandwich.
            let m = &metrics.micro;
            for v in [m.precision, m.recall, m.f1] {
                assert!((0.0..=1.0).contains(&v));
            }
            assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
            assert!(m.f1 >= m.precision.min(m.recall) - 1e-12 || m.f1 == 0.0);
        }
    }

    #[test]
    fn symmetric_under_sentence_reordering() {
        let gold_spans: &[(usize, &[(usize, usize, &str)])] =
            &[(0, &[(0, 1, "PER")]), (1, &[(2, 3, "LOC")]), (3, &[(5, 5, "ORG")])];
        let pred_spans: &[(usize, &[(usize, usize, &str)])] =
            &[(0, &[(0, 1, "PER")]), (2, &[(4, 4, "LOC")]), (3, &[(5, 5, "PER")])];
        let gold = corpus_with(gold_spans, Provenance::Gold);
        let predicted = corpus_with(pred_spans, Provenance::Predicted);
        let base = micro_f1(&predicted, &gold).unwrap();

        // Reorder: move each sentence k to slot (3 - k) in both corpora.
        fn remap<'a>(
            spans: &[(usize, &'a [(usize, usize, &'a str)])],
        ) -> Vec<(usize, &'a [(usize, usize, &'a str)])> {
            spans.iter().map(|&(sid, s)| (3 - sid, s)).collect()
        }
        let gold_r = corpus_with(&remap(gold_spans), Provenance::Gold);
        let pred_r = corpus_with(&remap(pred_spans), Provenance::Predicted);
        let reordered = micro_f1(&pred_r, &gold_r).unwrap();
        assert_eq!(base.micro, reordered.micro);
        assert_eq!(base.per_type, reordered.per_type);
    }

    #[test]
    fn wrong_prediction_never_raises_precision_or_f1() {
        let gold = corpus_with(&[(0, &[(0, 1, "PER"), (4, 5, "LOC")])], Provenance::Gold);
        let predicted = corpus_with(&[(0, &[(0, 1, "PER")])], Provenance::Predicted);
        let base = micro_f1(&predicted, &gold).unwrap();
        let worse = corpus_with(
            &[(0, &[(0, 1, "PER"), (7, 7, "ORG")])],
            Provenance::Predicted,
        );
        let with_fp = micro_f1(&worse, &gold).unwrap();
        assert!(with_fp.micro.precision <= base.micro.precision);
        assert!(with_fp.micro.f1 <= base.micro.f1);
        assert_eq!(with_fp.micro.recall, base.micro.recall);
    }

    #[test]
    fn greedy_overlap_resolution_keeps_highest_probability() {
        let candidates = vec![
            Candidate {
                start: 0,
                end: 2,
                label: "PER".into(),
                prob: 0.6,
            },
            Candidate {
                start: 1,
                end: 3,
                label: "LOC".into(),
                prob: 0.9,
            },
        ];
        let kept = resolve_overlaps(candidates);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].label, "LOC");
        assert!((kept[0].prob - 0.9).abs() < 1e-12);
    }

    #[test]
    fn greedy_tie_breaks_by_position_and_keeps_disjoint() {
        let candidates = vec![
            Candidate {
                start: 4,
                end: 5,
                label: "A".into(),
                prob: 0.7,
            },
            Candidate {
                start: 0,
                end: 1,
                label: "B".into(),
                prob: 0.7,
            },
            Candidate {
                start: 1,
                end: 2,
                label: "C".into(),
                prob: 0.7,
            },
        ];
        let kept = resolve_overlaps(candidates);
        // (0,1) wins the tie against (1,2); (4,5) is disjoint.
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].label, "B");
        assert_eq!(kept[1].label, "A");
    }

    #[test]
    fn predict_respects_o_dominant_classifier() {
        use crate::corpus::EntityTypeSet;
        use crate::encoder::{EncoderConfig, Precision, SpanClassifier, Vocab};
        let types = EntityTypeSet::from_labels(["PER", "LOC"]);
        let vocab = Vocab::build(["a", "b", "c"]);
        let mut config = EncoderConfig::new(vocab.len(), types.num_labels());
        config.d_e = 4;
        config.d_h = 4;
        config.d_w = 2;
        config.hidden = 5;
        config.dropout = 0.0;
        config.max_span_width = 2;
        config.precision = Precision::F64;
        let mut model = SpanClassifier::new(config, vocab, types).unwrap();
        // Force the O logit sky-high.
        let o = model.types.o_index();
        model.params.cls_b2.data[o] = 50.0;

        let mut corpus = Corpus::new(Split::Test);
        corpus
            .push_sentence(vec!["a".into(), "b".into(), "c".into()])
            .unwrap();
        let spans = predict_sentence(
            &model,
            &corpus.sentences()[0],
            PredictOptions::default(),
        );
        assert!(spans.is_empty());

        // Single-token sentence: at most one surviving prediction even with
        // an entity-dominant classifier.
        let per_index = model.types.index_of("PER").unwrap();
        model.params.cls_b2.data[o] = -50.0;
        model.params.cls_b2.data[per_index] = 50.0;
        let mut single = Corpus::new(Split::Test);
        single.push_sentence(vec!["a".into()]).unwrap();
        let spans = predict_sentence(&model, &single.sentences()[0], PredictOptions::default());
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].start, spans[0].end), (0, 0));

        // Overlap filter off: every enumerated span is a candidate.
        let raw = predict_sentence(
            &model,
            &corpus.sentences()[0],
            PredictOptions {
                resolve_overlaps: false,
            },
        );
        assert_eq!(raw.len(), 6);
    }
}
