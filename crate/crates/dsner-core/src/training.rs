//! The training objective over positives plus selected negatives, the
//! optimization loop, and per-epoch diagnostics with dev-set model selection.
//!
//! The loss is the plain sum of span cross-entropies over the batch:
//! `-sum log P(t* | s_pos) - sum log P(O | s_neg_selected)`. Negatives enter
//! only through the configured selection strategy, computed per batch on
//! eval-mode (dropout-off) representations; the loss pass then re-runs the
//! network in train mode.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{enumerate_spans, split_pos_neg, Corpus, CorpusError, EntityTypeSet, Provenance};
use crate::encoder::{
    classify, classify_backward, encode, encode_backward, init_parameters, span_vec, EncodeTrace,
    EncoderConfig, EncoderError, ParameterStore, SpanClassifier, SpanKey, SpanRep, Vocab,
};
use crate::evaluation::{micro_f1, predict_corpus, score_layers, EvalError, PredictOptions};
use crate::sampling::{select_with, selection_record_json, SamplingConfig, SamplingError, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Momentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum { .. } => "momentum",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

/// First-order optimizer over the parameter store's gradient buffers.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    steps: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, store: &ParameterStore) -> Self {
        let sizes: Vec<usize> = store.tensors().iter().map(|(_, t)| t.len()).collect();
        Optimizer {
            kind,
            learning_rate,
            steps: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Applies one update from the accumulated gradients. Gradient buffers
    /// are left untouched; the caller zeroes them at the start of each step.
    pub fn step(&mut self, store: &mut ParameterStore) {
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (_, tensor) in store.tensors_mut() {
                    for (p, g) in tensor.data.iter_mut().zip(&tensor.grad) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Momentum { momentum } => {
                for (k, (_, tensor)) in store.tensors_mut().into_iter().enumerate() {
                    let vel = &mut self.m[k];
                    for ((p, g), v) in tensor.data.iter_mut().zip(&tensor.grad).zip(vel.iter_mut()) {
                        *v = momentum * *v + g;
                        *p -= lr * *v;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (k, (_, tensor)) in store.tensors_mut().into_iter().enumerate() {
                    let m = &mut self.m[k];
                    let v = &mut self.v[k];
                    for (i, (p, g)) in tensor.data.iter_mut().zip(&tensor.grad).enumerate() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Sentences per batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub sampling: SamplingConfig,
    /// Governs parameter init, epoch shuffling and dropout; negative
    /// selection uses `sampling.seed`.
    pub seed: u64,
    /// Collect one JSON selection record per batch into the train state.
    pub dump_selection: bool,
}

impl TrainConfig {
    pub fn new(sampling: SamplingConfig) -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam(),
            sampling,
            seed: 42,
            dump_selection: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be > 0".into()));
        }
        self.sampling.validate()?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("training corpus has no entity annotations")]
    NoEntityTypes,
    #[error("annotation label `{0}` missing from the entity type set")]
    UnknownLabel(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
}

/// One row of the per-epoch diagnostics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_p: f64,
    pub train_r: f64,
    pub dev_p: f64,
    pub dev_r: f64,
    pub dev_f1: f64,
    pub loss: f64,
    pub zero_pos_batches: usize,
}

/// Outcome of a training run: the model carries the best-epoch parameters.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: SpanClassifier,
    /// 1-based epoch whose dev micro-F1 was best (ties go to the earlier one).
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub global_steps: usize,
    pub history: Vec<EpochRow>,
    /// Gold spans wider than the span limit, dropped from the positive set.
    pub truncated_spans: usize,
    /// JSON-lines selection records, one per batch, when enabled.
    pub selection_log: Vec<String>,
}

impl TrainState {
    /// The divergence-curve table: (epoch, train P, train R, dev P, dev R).
    pub fn epoch_diagnostics(&self) -> &[EpochRow] {
        &self.history
    }
}

/// Diagnostics table in CSV form.
pub fn diagnostics_csv(history: &[EpochRow]) -> String {
    let mut out = String::from("epoch,train_p,train_r,dev_p,dev_r,dev_f1,loss,zero_pos_batches\n");
    for row in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.epoch,
            row.train_p,
            row.train_r,
            row.dev_p,
            row.dev_r,
            row.dev_f1,
            row.loss,
            row.zero_pos_batches
        ));
    }
    out
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_SAMPLING: u64 = 3;

/// Independent generator per (seed, stream, index); parallel batch order can
/// never perturb downstream draws.
fn derived_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ index);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// One span sample of a batch: sentence index within the batch, span
/// positions, and the target label index (O for negatives).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanSample {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

/// Objective value over already-built span representations, eval mode:
/// `-sum log P(t* | rep_pos) - sum log P(O | rep_neg)` (a sum, not a mean).
pub fn compute_loss(
    config: &EncoderConfig,
    params: &ParameterStore,
    positives: &[(Vec<f64>, usize)],
    negatives: &[Vec<f64>],
    o_index: usize,
) -> f64 {
    let mut loss = 0.0;
    for (rep, target) in positives {
        loss += classify(config, params, rep, None).nll(*target);
    }
    for rep in negatives {
        loss += classify(config, params, rep, None).nll(o_index);
    }
    loss
}

/// Full-pipeline batch loss (encode, span reps, classify), eval mode, no
/// gradient accumulation. This is the function finite-difference checks
/// probe.
pub fn batch_loss(
    config: &EncoderConfig,
    params: &ParameterStore,
    sentence_ids: &[Vec<usize>],
    samples: &[SpanSample],
) -> f64 {
    let traces: Vec<EncodeTrace> = sentence_ids
        .iter()
        .map(|ids| encode(config, params, ids, None))
        .collect();
    let mut loss = 0.0;
    for sample in samples {
        let rep = span_vec(config, params, &traces[sample.sentence], sample.start, sample.end)
            .expect("sample span within width limit");
        loss += classify(config, params, &rep, None).nll(sample.label);
    }
    loss
}

/// Forward plus analytic backward over one batch, accumulating gradients
/// into the parameter store. Dropout is active when an RNG is supplied and
/// the configured rate is positive; without dropout this computes exactly
/// [`batch_loss`].
pub fn batch_backward(
    config: &EncoderConfig,
    params: &mut ParameterStore,
    sentence_ids: &[Vec<usize>],
    samples: &[SpanSample],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> f64 {
    let traces: Vec<EncodeTrace> = sentence_ids
        .iter()
        .map(|ids| encode(config, params, ids, dropout_rng.as_deref_mut()))
        .collect();
    let d_h = config.d_h;
    let mut d_hidden: Vec<Vec<f64>> = sentence_ids
        .iter()
        .map(|ids| vec![0.0; ids.len() * d_h])
        .collect();

    let mut loss = 0.0;
    for sample in samples {
        let trace = &traces[sample.sentence];
        let rep = span_vec(config, params, trace, sample.start, sample.end)
            .expect("sample span within width limit");
        let ctrace = classify(config, params, &rep, dropout_rng.as_deref_mut());
        loss += ctrace.nll(sample.label);
        // Softmax cross-entropy: d logits = p - onehot(target).
        let mut d_logits = ctrace.probs.clone();
        d_logits[sample.label] -= 1.0;
        let d_rep = classify_backward(params, &rep, &ctrace, &d_logits);
        let width = sample.end - sample.start;
        params.width_embed.grad_row_add(width, &d_rep[2 * d_h..]);
        let acc = &mut d_hidden[sample.sentence];
        for (k, v) in d_rep[..d_h].iter().enumerate() {
            acc[sample.start * d_h + k] += v;
        }
        for (k, v) in d_rep[d_h..2 * d_h].iter().enumerate() {
            acc[sample.end * d_h + k] += v;
        }
    }
    for (trace, d_hd) in traces.iter().zip(&d_hidden) {
        encode_backward(config, params, trace, d_hd);
    }
    loss
}

struct BatchPrep {
    sentence_ids: Vec<Vec<usize>>,
    positives: Vec<SpanRep>,
    positive_labels: Vec<usize>,
    negatives: Vec<SpanRep>,
    negative_samples: Vec<SpanSample>,
    truncated: usize,
}

/// Eval-mode representations and the positive/negative partition for one
/// batch of sentences.
fn prepare_batch(
    model: &SpanClassifier,
    corpus: &Corpus,
    batch: &[usize],
) -> Result<BatchPrep, TrainError> {
    let config = &model.config;
    let mut prep = BatchPrep {
        sentence_ids: Vec::with_capacity(batch.len()),
        positives: Vec::new(),
        positive_labels: Vec::new(),
        negatives: Vec::new(),
        negative_samples: Vec::new(),
        truncated: 0,
    };
    for (pos_in_batch, &sentence_idx) in batch.iter().enumerate() {
        let sentence = &corpus.sentences()[sentence_idx];
        let ids = model.token_ids(&sentence.tokens);
        let trace = encode(config, &model.params, &ids, None);
        let universe = enumerate_spans(sentence.len(), config.max_span_width);
        let partition = split_pos_neg(&universe, corpus.annotations(sentence.id), config.max_span_width)?;
        prep.truncated += partition.truncated;
        for ((i, j), label) in &partition.positives {
            let index = model
                .types
                .index_of(label)
                .ok_or_else(|| TrainError::UnknownLabel(label.clone()))?;
            let rep = span_vec(config, &model.params, &trace, *i, *j)?;
            prep.positives.push(SpanRep {
                key: SpanKey {
                    sentence: sentence.id,
                    start: *i,
                    end: *j,
                },
                vec: rep,
            });
            prep.positive_labels.push(index);
            // Sample entries are built later; remember batch-local position
            // through the parallel arrays.
        }
        for &(i, j) in &partition.negatives {
            let rep = span_vec(config, &model.params, &trace, i, j)?;
            prep.negatives.push(SpanRep {
                key: SpanKey {
                    sentence: sentence.id,
                    start: i,
                    end: j,
                },
                vec: rep,
            });
            prep.negative_samples.push(SpanSample {
                sentence: pos_in_batch,
                start: i,
                end: j,
                label: 0, // overwritten with the O index at assembly
            });
        }
        prep.sentence_ids.push(ids);
    }
    Ok(prep)
}

/// Trains a span classifier on `train_corpus` (its annotations, whatever the
/// provenance) with dev-set model selection against `dev_corpus`'s gold
/// layer. `encoder_config.vocab_size`, `num_labels` and `seed` are derived
/// from the data and `config.seed`.
pub fn train(
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
    mut encoder_config: EncoderConfig,
    config: &TrainConfig,
) -> Result<TrainState, TrainError> {
    config.validate()?;

    let vocab = Vocab::build(
        train_corpus
            .sentences()
            .iter()
            .flat_map(|s| s.tokens.iter().map(String::as_str)),
    );
    let mut labels = train_corpus.entity_labels(None);
    labels.extend(dev_corpus.entity_labels(Some(Provenance::Gold)));
    let types = EntityTypeSet::from_labels(labels);
    if types.is_empty() {
        return Err(TrainError::NoEntityTypes);
    }

    encoder_config.vocab_size = vocab.len();
    encoder_config.num_labels = types.num_labels();
    encoder_config.seed = config.seed;
    encoder_config.validate()?;
    let params = init_parameters(&encoder_config)?;
    let mut model = SpanClassifier {
        config: encoder_config,
        vocab,
        types,
        params,
    };
    let o_index = model.types.o_index();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &model.params);

    let mut state_history: Vec<EpochRow> = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ParameterStore)> = None;
    let mut truncated_spans = 0usize;
    let mut selection_log: Vec<String> = Vec::new();
    let mut batch_counter = 0usize;

    let sentence_count = train_corpus.len();
    let mut order: Vec<usize> = (0..sentence_count).collect();

    for epoch in 1..=config.epochs {
        let mut shuffle_rng = derived_rng(config.seed, STREAM_SHUFFLE, epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut zero_pos_batches = 0usize;

        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let batch_stream_index = ((epoch as u64) << 32) | batch_idx as u64;
            let prep = prepare_batch(&model, train_corpus, batch)?;
            if epoch == 1 {
                truncated_spans += prep.truncated;
            }
            if prep.positives.is_empty() && !prep.negatives.is_empty() {
                zero_pos_batches += 1;
            }

            // Weighted selection wants the model's current O confidence.
            let o_probs: Option<Vec<f64>> = match config.sampling.strategy {
                Strategy::Weighted => Some(
                    prep.negatives
                        .iter()
                        .map(|rep| model.probabilities(&rep.vec)[o_index])
                        .collect(),
                ),
                _ => None,
            };
            let mut sampling_rng =
                derived_rng(config.sampling.seed, STREAM_SAMPLING, batch_stream_index);
            let selection = select_with(
                config.sampling.strategy,
                config.sampling.rate,
                &prep.negatives,
                &prep.positives,
                o_probs.as_deref(),
                &mut sampling_rng,
            )?;
            if config.dump_selection {
                selection_log.push(selection_record_json(
                    batch_counter,
                    prep.negatives.len(),
                    &selection,
                ));
            }

            // Assemble samples: positives first, then the selected negatives,
            // both in deterministic span order.
            let sid_to_batch = |key: &SpanKey| {
                batch
                    .iter()
                    .position(|&idx| train_corpus.sentences()[idx].id == key.sentence)
                    .expect("selected span belongs to the batch")
            };
            let mut samples: Vec<SpanSample> = Vec::with_capacity(
                prep.positives.len() + selection.selected.len(),
            );
            for (rep, &label) in prep.positives.iter().zip(&prep.positive_labels) {
                samples.push(SpanSample {
                    sentence: sid_to_batch(&rep.key),
                    start: rep.key.start,
                    end: rep.key.end,
                    label,
                });
            }
            for &neg_idx in &selection.selected {
                let mut sample = prep.negative_samples[neg_idx];
                sample.label = o_index;
                samples.push(sample);
            }

            model.params.zero_grad();
            let mut dropout_rng = derived_rng(config.seed, STREAM_DROPOUT, batch_stream_index);
            let loss = batch_backward(
                &model.config,
                &mut model.params,
                &prep.sentence_ids,
                &samples,
                Some(&mut dropout_rng),
            );
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            optimizer.step(&mut model.params);
            epoch_loss += loss;
            batch_counter += 1;
        }

        // Per-epoch diagnostics: exact-match metrics on the training
        // annotations and the gold dev set.
        let train_pred = predict_corpus(&model, train_corpus, PredictOptions::default());
        let train_metrics = score_layers(
            &train_pred,
            Some(Provenance::Predicted),
            train_corpus,
            None,
        )?;
        let dev_pred = predict_corpus(&model, dev_corpus, PredictOptions::default());
        let dev_metrics = micro_f1(&dev_pred, dev_corpus)?;
        let row = EpochRow {
            epoch,
            train_p: train_metrics.micro.precision,
            train_r: train_metrics.micro.recall,
            dev_p: dev_metrics.micro.precision,
            dev_r: dev_metrics.micro.recall,
            dev_f1: dev_metrics.micro.f1,
            loss: epoch_loss,
            zero_pos_batches,
        };
        let improved = best
            .as_ref()
            .map_or(true, |(_, best_f1, _)| row.dev_f1 > *best_f1);
        if improved {
            best = Some((epoch, row.dev_f1, model.params.clone()));
        }
        state_history.push(row);
    }

    let (best_epoch, best_dev_f1, best_params) = best.expect("at least one epoch ran");
    model.params = best_params;
    Ok(TrainState {
        model,
        best_epoch,
        best_dev_f1,
        global_steps: optimizer.steps(),
        history: state_history,
        truncated_spans,
        selection_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledSpan, SentenceId, Split};
    use crate::encoder::Precision;

    fn tiny_encoder_config() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 12,
            d_e: 5,
            d_h: 6,
            d_w: 3,
            context_window: 1,
            max_span_width: 3,
            hidden: 7,
            dropout: 0.0,
            num_labels: 4,
            seed: 3,
            precision: Precision::F64,
        }
    }

    fn toy_corpus(sentences: usize) -> Corpus {
        let mut corpus = Corpus::new(Split::Train);
        let words = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"];
        for k in 0..sentences {
            let tokens: Vec<String> = (0..5)
                .map(|t| words[(k + t) % words.len()].to_string())
                .collect();
            let id = corpus.push_sentence(tokens).unwrap();
            corpus
                .add_annotation(
                    id,
                    LabeledSpan::new(k % 3, k % 3, ["PER", "LOC", "ORG"][k % 3], Provenance::Gold),
                )
                .unwrap();
        }
        corpus
    }

    #[test]
    fn compute_loss_zero_samples_is_zero() {
        let config = tiny_encoder_config();
        let params = init_parameters(&config).unwrap();
        assert_eq!(compute_loss(&config, &params, &[], &[], 3), 0.0);
    }

    #[test]
    fn compute_loss_uniform_classifier_is_ln_k() {
        let config = tiny_encoder_config();
        let mut params = init_parameters(&config).unwrap();
        params.cls_w2.data.iter_mut().for_each(|v| *v = 0.0);
        params.cls_b2.data.iter_mut().for_each(|v| *v = 0.0);
        let rep = vec![0.4; config.span_rep_width()];
        let loss = compute_loss(&config, &params, &[(rep, 1)], &[], 3);
        assert!((loss - (config.num_labels as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn compute_loss_matches_hand_arithmetic() {
        // Classifier reduced to logits == cls_b2: W1 = 0 so z1 = tanh(b1) and
        // W2 = 0 leaves logits = b2 regardless of the representation.
        let mut config = tiny_encoder_config();
        config.num_labels = 3;
        let mut params = init_parameters(&config).unwrap();
        params.cls_w1.data.iter_mut().for_each(|v| *v = 0.0);
        params.cls_w2.data.iter_mut().for_each(|v| *v = 0.0);
        params.cls_b2.data.copy_from_slice(&[0.2, -0.4, 1.1]);
        let rep = vec![0.0; config.span_rep_width()];
        let positives = vec![(rep.clone(), 0), (rep.clone(), 1)];
        let negatives = vec![rep];
        let loss = compute_loss(&config, &params, &positives, &negatives, 2);
        // Hand-computed: z = ln(e^0.2 + e^-0.4 + e^1.1)
        let z = (0.2f64.exp() + (-0.4f64).exp() + 1.1f64.exp()).ln();
        let expected = (z - 0.2) + (z + 0.4) + (z - 1.1);
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn backward_without_samples_leaves_gradients_zero() {
        let config = tiny_encoder_config();
        let mut params = init_parameters(&config).unwrap();
        params.zero_grad();
        let loss = batch_backward(&config, &mut params, &[vec![1, 2, 3]], &[], None);
        assert_eq!(loss, 0.0);
        for (_, t) in params.tensors() {
            assert!(t.grad.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn logit_gradient_is_probability_minus_onehot() {
        let config = tiny_encoder_config();
        let mut params = init_parameters(&config).unwrap();
        params.zero_grad();
        let ids = vec![vec![1, 2, 3, 4]];
        let samples = vec![
            SpanSample { sentence: 0, start: 0, end: 1, label: 2 },
            SpanSample { sentence: 0, start: 2, end: 2, label: 3 },
        ];
        batch_backward(&config, &mut params, &ids, &samples, None);
        // Oracle: recompute probabilities eval-mode and sum p - onehot.
        let trace = encode(&config, &params, &ids[0], None);
        let mut expected = vec![0.0; config.num_labels];
        for sample in &samples {
            let rep = span_vec(&config, &params, &trace, sample.start, sample.end).unwrap();
            let probs = classify(&config, &params, &rep, None).probs;
            for (e, p) in expected.iter_mut().zip(&probs) {
                *e += p;
            }
            expected[sample.label] -= 1.0;
        }
        for (g, e) in params.cls_b2.grad.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let config = tiny_encoder_config();
        for seed in 0..2u64 {
            let mut config = config.clone();
            config.seed = seed;
            let mut params = init_parameters(&config).unwrap();
            let sentence_ids = vec![vec![1, 2, 3, 4, 5, 6], vec![7, 8, 9, 10]];
            let samples = vec![
                SpanSample { sentence: 0, start: 0, end: 2, label: 0 },
                SpanSample { sentence: 0, start: 3, end: 3, label: 3 },
                SpanSample { sentence: 1, start: 0, end: 1, label: 1 },
                SpanSample { sentence: 1, start: 2, end: 3, label: 3 },
            ];
            params.zero_grad();
            batch_backward(&config, &mut params, &sentence_ids, &samples, None);
            let analytic: Vec<Vec<f64>> = params
                .tensors()
                .iter()
                .map(|(_, t)| t.grad.clone())
                .collect();
            let eps = 1e-5;
            let shapes: Vec<(&'static str, usize)> = params
                .tensors()
                .iter()
                .map(|(name, t)| (*name, t.len()))
                .collect();
            for (k, &(name, len)) in shapes.iter().enumerate() {
                for i in 0..len {
                    let original = params.tensors()[k].1.data[i];
                    params.tensors_mut()[k].1.data[i] = original + eps;
                    let up = batch_loss(&config, &params, &sentence_ids, &samples);
                    params.tensors_mut()[k].1.data[i] = original - eps;
                    let down = batch_loss(&config, &params, &sentence_ids, &samples);
                    params.tensors_mut()[k].1.data[i] = original;
                    let numeric = (up - down) / (2.0 * eps);
                    let ga = analytic[k][i];
                    let denom = ga.abs().max(numeric.abs()).max(1e-6);
                    let rel = (ga - numeric).abs() / denom;
                    assert!(
                        rel < 1e-4,
                        "tensor {name} entry {i}: analytic {ga} vs numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn optimizer_zero_learning_rate_is_identity() {
        let config = tiny_encoder_config();
        let mut params = init_parameters(&config).unwrap();
        params.zero_grad();
        let before = params.clone();
        // Nonzero gradients, zero step size.
        for (_, t) in params.tensors_mut() {
            t.grad.iter_mut().for_each(|g| *g = 1.5);
        }
        for kind in [
            OptimizerKind::Sgd,
            OptimizerKind::Momentum { momentum: 0.9 },
            OptimizerKind::adam(),
        ] {
            let mut p = params.clone();
            let mut optimizer = Optimizer::new(kind, 0.0, &p);
            optimizer.step(&mut p);
            for ((_, a), (_, b)) in p.tensors().iter().zip(before.tensors().iter()) {
                assert_eq!(a.data, b.data);
            }
        }
    }

    #[test]
    fn one_epoch_step_count_is_ceil_of_batches() {
        let corpus = toy_corpus(2);
        let sampling = SamplingConfig::new(Strategy::All, 1.0, 0);
        for (batch_size, expected) in [(1usize, 2usize), (2, 1), (8, 1)] {
            let mut config = TrainConfig::new(sampling.clone());
            config.epochs = 1;
            config.batch_size = batch_size;
            let state = train(&corpus, &corpus, tiny_encoder_config(), &config).unwrap();
            assert_eq!(state.global_steps, expected);
            assert_eq!(state.history.len(), 1);
        }
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let corpus = toy_corpus(6);
        let dev = toy_corpus(3);
        let sampling = SamplingConfig::new(Strategy::TopNeg, 0.2, 9);
        let mut config = TrainConfig::new(sampling);
        config.epochs = 3;
        config.batch_size = 2;
        config.seed = 17;
        let mut enc = tiny_encoder_config();
        enc.dropout = 0.3; // exercise the dropout RNG path
        let a = train(&corpus, &dev, enc.clone(), &config).unwrap();
        let b = train(&corpus, &dev, enc, &config).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.best_epoch, b.best_epoch);
        assert_eq!(a.best_dev_f1, b.best_dev_f1);
    }

    #[test]
    fn strategy_all_covers_every_negative() {
        let corpus = toy_corpus(4);
        let sampling = SamplingConfig::new(Strategy::All, 1.0, 0);
        let mut config = TrainConfig::new(sampling);
        config.epochs = 1;
        config.batch_size = 4;
        config.dump_selection = true;
        let state = train(&corpus, &corpus, tiny_encoder_config(), &config).unwrap();
        assert_eq!(state.selection_log.len(), 1);
        let record: serde_json::Value = serde_json::from_str(&state.selection_log[0]).unwrap();
        assert_eq!(record["N"], record["k_selected"]);
    }

    #[test]
    fn divergence_guard_reports_batch() {
        let corpus = toy_corpus(4);
        let sampling = SamplingConfig::new(Strategy::All, 1.0, 0);
        let mut config = TrainConfig::new(sampling);
        config.epochs = 3;
        config.batch_size = 2;
        config.optimizer = OptimizerKind::Sgd;
        config.learning_rate = 1e300; // parameters overflow, loss goes non-finite
        let err = train(&corpus, &corpus, tiny_encoder_config(), &config).unwrap_err();
        assert!(matches!(err, TrainError::Diverged { .. }), "got {err:?}");
    }

    #[test]
    fn diagnostics_csv_layout() {
        let rows = vec![EpochRow {
            epoch: 1,
            train_p: 0.5,
            train_r: 0.25,
            dev_p: 1.0,
            dev_r: 0.75,
            dev_f1: 0.8571,
            loss: 12.25,
            zero_pos_batches: 2,
        }];
        let csv = diagnostics_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,train_p,train_r,dev_p,dev_r,dev_f1,loss,zero_pos_batches"
        );
        assert_eq!(lines.next().unwrap(), "1,0.5,0.25,1,0.75,0.8571,12.25,2");
    }

    #[test]
    fn best_epoch_prefers_earlier_on_ties() {
        // Train on a trivially learnable corpus: once dev F1 saturates at its
        // maximum, the recorded best epoch must be the first one attaining it.
        let corpus = toy_corpus(8);
        let sampling = SamplingConfig::new(Strategy::All, 1.0, 0);
        let mut config = TrainConfig::new(sampling);
        config.epochs = 6;
        config.batch_size = 4;
        config.learning_rate = 5e-3;
        let state = train(&corpus, &corpus, tiny_encoder_config(), &config).unwrap();
        let best_f1 = state.best_dev_f1;
        let first_attaining = state
            .history
            .iter()
            .find(|row| row.dev_f1 >= best_f1)
            .unwrap()
            .epoch;
        assert_eq!(state.best_epoch, first_attaining);
    }
}
