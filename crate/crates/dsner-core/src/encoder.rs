//! The trainable span scorer: a windowed token-mixing encoder over learned
//! embeddings, a width-feature table, and a two-layer classifier head.
//!
//! A span `(i, j)` is represented as `[h_i ; h_j ; f(j - i)]` where `h` are
//! the contextual token vectors and `f` the learned width embedding; the
//! classifier maps that vector to a distribution over entity types plus O.
//! The architecture is deliberately small so every gradient is hand-derived
//! and checkable by finite differences; a heavier encoder can be substituted
//! behind the same span-representation interface.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentenceId;
use crate::nn::{softmax, tanh_inplace, Tensor};

pub const UNK_TOKEN: &str = "<unk>";

/// Float width used when parameters are written to disk. All in-memory
/// computation is `f64`; `F32` narrows checkpoints at a precision cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Token vocabulary size including the reserved UNK entry at id 0.
    pub vocab_size: usize,
    /// Token embedding width.
    pub d_e: usize,
    /// Contextual vector width.
    pub d_h: usize,
    /// Span-width embedding width.
    pub d_w: usize,
    /// Half-width of the token mixing window; each `h_t` sees tokens
    /// `t - context_window ..= t + context_window`, zero-padded at edges.
    pub context_window: usize,
    /// Maximum span width `j - i`; spans cover up to `max_span_width + 1` tokens.
    pub max_span_width: usize,
    /// Classifier hidden layer size.
    pub hidden: usize,
    /// Dropout rate, applied with inverted scaling at train time only.
    pub dropout: f64,
    /// Entity types plus one for O.
    pub num_labels: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl EncoderConfig {
    /// Defaults: `d_e` 32, `d_h` 64, `d_w` 16, window 1, max width 8,
    /// hidden 150, dropout 0.2.
    pub fn new(vocab_size: usize, num_labels: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d_e: 32,
            d_h: 64,
            d_w: 16,
            context_window: 1,
            max_span_width: 8,
            hidden: 150,
            dropout: 0.2,
            num_labels,
            seed: 42,
            precision: Precision::F64,
        }
    }

    pub fn span_rep_width(&self) -> usize {
        2 * self.d_h + self.d_w
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.vocab_size == 0 {
            return Err(EncoderError::ZeroVocab);
        }
        if self.num_labels < 2 {
            return Err(EncoderError::TooFewLabels);
        }
        for (name, v) in [
            ("d_e", self.d_e),
            ("d_h", self.d_h),
            ("d_w", self.d_w),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(EncoderError::ZeroDim(name));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EncoderError::BadDropout(self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("vocab_size must be >= 1")]
    ZeroVocab,
    #[error("num_labels must be >= 2 (at least one entity type plus O)")]
    TooFewLabels,
    #[error("{0} must be >= 1")]
    ZeroDim(&'static str),
    #[error("dropout must lie in [0, 1), got {0}")]
    BadDropout(f64),
    #[error("span width {width} exceeds maximum {max}")]
    WidthTooLarge { width: usize, max: usize },
}

/// Token-string to id mapping; id 0 is the reserved UNK entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// Builds from token occurrences in first-seen order.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(tokens: I) -> Self {
        let mut vocab = Vocab {
            index: HashMap::new(),
            tokens: vec![UNK_TOKEN.to_string()],
        };
        for token in tokens {
            if !vocab.index.contains_key(token) {
                vocab.index.insert(token.to_string(), vocab.tokens.len());
                vocab.tokens.push(token.to_string());
            }
        }
        vocab
    }

    /// Reconstructs a vocab from an id-ordered token list (checkpoint load).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { index, tokens }
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Named model tensors, each paired with a same-shape gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    /// `[vocab_size, d_e]`
    pub token_embed: Tensor,
    /// `[d_h, (2 * context_window + 1) * d_e]`
    pub mix_w: Tensor,
    /// `[1, d_h]`
    pub mix_b: Tensor,
    /// `[max_span_width + 1, d_w]`
    pub width_embed: Tensor,
    /// `[hidden, 2 * d_h + d_w]`
    pub cls_w1: Tensor,
    /// `[1, hidden]`
    pub cls_b1: Tensor,
    /// `[num_labels, hidden]`
    pub cls_w2: Tensor,
    /// `[1, num_labels]`
    pub cls_b2: Tensor,
}

pub const TENSOR_NAMES: [&str; 8] = [
    "token_embed",
    "mix_w",
    "mix_b",
    "width_embed",
    "cls_w1",
    "cls_b1",
    "cls_w2",
    "cls_b2",
];

impl ParameterStore {
    pub fn tensors(&self) -> [(&'static str, &Tensor); 8] {
        [
            ("token_embed", &self.token_embed),
            ("mix_w", &self.mix_w),
            ("mix_b", &self.mix_b),
            ("width_embed", &self.width_embed),
            ("cls_w1", &self.cls_w1),
            ("cls_b1", &self.cls_b1),
            ("cls_w2", &self.cls_w2),
            ("cls_b2", &self.cls_b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 8] {
        let ParameterStore {
            token_embed,
            mix_w,
            mix_b,
            width_embed,
            cls_w1,
            cls_b1,
            cls_w2,
            cls_b2,
        } = self;
        [
            ("token_embed", token_embed),
            ("mix_w", mix_w),
            ("mix_b", mix_b),
            ("width_embed", width_embed),
            ("cls_w1", cls_w1),
            ("cls_b1", cls_b1),
            ("cls_w2", cls_w2),
            ("cls_b2", cls_b2),
        ]
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.zero_grad();
        }
    }
}

/// Seeded initialization: weight and embedding tensors are Xavier-uniform,
/// biases zero. Tensors are drawn in declaration order from one stream, so
/// equal configs give bit-identical stores.
pub fn init_parameters(config: &EncoderConfig) -> Result<ParameterStore, EncoderError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let window_cols = (2 * config.context_window + 1) * config.d_e;
    Ok(ParameterStore {
        token_embed: Tensor::xavier(config.vocab_size, config.d_e, &mut rng),
        mix_w: Tensor::xavier(config.d_h, window_cols, &mut rng),
        mix_b: Tensor::zeros(1, config.d_h),
        width_embed: Tensor::xavier(config.max_span_width + 1, config.d_w, &mut rng),
        cls_w1: Tensor::xavier(config.hidden, config.span_rep_width(), &mut rng),
        cls_b1: Tensor::zeros(1, config.hidden),
        cls_w2: Tensor::xavier(config.num_labels, config.hidden, &mut rng),
        cls_b2: Tensor::zeros(1, config.num_labels),
    })
}

fn sample_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep_scale = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() >= rate { keep_scale } else { 0.0 })
        .collect()
}

/// Forward record of one encoded sentence: contextual vectors before and
/// after dropout (identical in eval mode), flat `n x d_h` row-major.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub ids: Vec<usize>,
    pub h: Vec<f64>,
    pub h_dropped: Vec<f64>,
    mask: Option<Vec<f64>>,
    d_h: usize,
}

impl EncodeTrace {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn h_row(&self, t: usize) -> &[f64] {
        &self.h_dropped[t * self.d_h..(t + 1) * self.d_h]
    }
}

/// `h_t = tanh(W . concat(e_{t-w} .. e_{t+w}) + b)` with zero padding past
/// the sentence edges. Dropout is applied to `h_t` only when an RNG is
/// passed and the configured rate is positive.
pub fn encode(
    config: &EncoderConfig,
    params: &ParameterStore,
    ids: &[usize],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> EncodeTrace {
    let n = ids.len();
    let w = config.context_window;
    let d_e = config.d_e;
    let d_h = config.d_h;
    let window_cols = (2 * w + 1) * d_e;

    let mut h = vec![0.0; n * d_h];
    let mut x = vec![0.0; window_cols];
    for t in 0..n {
        x.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..=2 * w {
            let pos = t as isize + o as isize - w as isize;
            if pos >= 0 && (pos as usize) < n {
                let e = params.token_embed.row(ids[pos as usize]);
                x[o * d_e..(o + 1) * d_e].copy_from_slice(e);
            }
        }
        let row = &mut h[t * d_h..(t + 1) * d_h];
        params.mix_w.matvec(&x, row);
        for (v, b) in row.iter_mut().zip(params.mix_b.row(0)) {
            *v += b;
        }
        tanh_inplace(row);
    }

    let (h_dropped, mask) = match dropout_rng.as_deref_mut() {
        Some(rng) if config.dropout > 0.0 => {
            let mask = sample_mask(rng, n * d_h, config.dropout);
            let hd = h.iter().zip(&mask).map(|(v, m)| v * m).collect();
            (hd, Some(mask))
        }
        _ => (h.clone(), None),
    };

    EncodeTrace {
        ids: ids.to_vec(),
        h,
        h_dropped,
        mask,
        d_h,
    }
}

/// Span representation `[h_i ; h_j ; f(j - i)]` built from an encoded
/// sentence; the width row is indexed by the exact width `j - i`.
pub fn span_vec(
    config: &EncoderConfig,
    params: &ParameterStore,
    trace: &EncodeTrace,
    i: usize,
    j: usize,
) -> Result<Vec<f64>, EncoderError> {
    let width = j - i;
    if width > config.max_span_width {
        return Err(EncoderError::WidthTooLarge {
            width,
            max: config.max_span_width,
        });
    }
    let mut rep = Vec::with_capacity(config.span_rep_width());
    rep.extend_from_slice(trace.h_row(i));
    rep.extend_from_slice(trace.h_row(j));
    rep.extend_from_slice(params.width_embed.row(width));
    Ok(rep)
}

/// Forward record of one classified span representation.
#[derive(Debug, Clone)]
pub struct ClassifyTrace {
    pub z1: Vec<f64>,
    pub z1_dropped: Vec<f64>,
    mask: Option<Vec<f64>>,
    pub logits: Vec<f64>,
    pub log_partition: f64,
    pub probs: Vec<f64>,
}

impl ClassifyTrace {
    /// Exact `-log P(target)` via the log partition (underflow-safe).
    pub fn nll(&self, target: usize) -> f64 {
        self.log_partition - self.logits[target]
    }
}

/// Two affine layers with tanh between, dropout between layers at train
/// time, softmax output.
pub fn classify(
    config: &EncoderConfig,
    params: &ParameterStore,
    rep: &[f64],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> ClassifyTrace {
    let mut z1 = vec![0.0; config.hidden];
    params.cls_w1.matvec(rep, &mut z1);
    for (v, b) in z1.iter_mut().zip(params.cls_b1.row(0)) {
        *v += b;
    }
    tanh_inplace(&mut z1);

    let (z1_dropped, mask) = match dropout_rng.as_deref_mut() {
        Some(rng) if config.dropout > 0.0 => {
            let mask = sample_mask(rng, config.hidden, config.dropout);
            let zd = z1.iter().zip(&mask).map(|(v, m)| v * m).collect();
            (zd, Some(mask))
        }
        _ => (z1.clone(), None),
    };

    let mut logits = vec![0.0; config.num_labels];
    params.cls_w2.matvec(&z1_dropped, &mut logits);
    for (v, b) in logits.iter_mut().zip(params.cls_b2.row(0)) {
        *v += b;
    }
    let (probs, log_partition) = softmax(&logits);
    ClassifyTrace {
        z1,
        z1_dropped,
        mask,
        logits,
        log_partition,
        probs,
    }
}

/// Backpropagates `d_logits` through the classifier head, accumulating into
/// the gradient buffers, and returns the gradient w.r.t. the input span
/// representation.
pub fn classify_backward(
    params: &mut ParameterStore,
    rep: &[f64],
    trace: &ClassifyTrace,
    d_logits: &[f64],
) -> Vec<f64> {
    params.cls_w2.grad_outer_add(d_logits, &trace.z1_dropped);
    params.cls_b2.grad_row_add(0, d_logits);

    let mut d_z1 = vec![0.0; trace.z1.len()];
    params.cls_w2.matvec_t_add(d_logits, &mut d_z1);
    if let Some(mask) = &trace.mask {
        for (d, m) in d_z1.iter_mut().zip(mask) {
            *d *= m;
        }
    }
    for (d, z) in d_z1.iter_mut().zip(&trace.z1) {
        *d *= 1.0 - z * z;
    }

    params.cls_w1.grad_outer_add(&d_z1, rep);
    params.cls_b1.grad_row_add(0, &d_z1);
    let mut d_rep = vec![0.0; rep.len()];
    params.cls_w1.matvec_t_add(&d_z1, &mut d_rep);
    d_rep
}

/// Backpropagates accumulated `d h_dropped` (flat `n x d_h`) through the
/// dropout mask, the tanh mixing layer, and into the embedding table.
pub fn encode_backward(
    config: &EncoderConfig,
    params: &mut ParameterStore,
    trace: &EncodeTrace,
    d_h_dropped: &[f64],
) {
    let n = trace.ids.len();
    let w = config.context_window;
    let d_e = config.d_e;
    let d_h = config.d_h;
    let window_cols = (2 * w + 1) * d_e;
    debug_assert_eq!(d_h_dropped.len(), n * d_h);

    let mut x = vec![0.0; window_cols];
    let mut d_x = vec![0.0; window_cols];
    let mut d_a = vec![0.0; d_h];
    for t in 0..n {
        let d_row = &d_h_dropped[t * d_h..(t + 1) * d_h];
        let h_row = &trace.h[t * d_h..(t + 1) * d_h];
        for k in 0..d_h {
            let mut d = d_row[k];
            if let Some(mask) = &trace.mask {
                d *= mask[t * d_h + k];
            }
            d_a[k] = d * (1.0 - h_row[k] * h_row[k]);
        }
        if d_a.iter().all(|&d| d == 0.0) {
            continue;
        }
        // Rebuild the window input rather than storing it in the trace.
        x.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..=2 * w {
            let pos = t as isize + o as isize - w as isize;
            if pos >= 0 && (pos as usize) < n {
                let e = params.token_embed.row(trace.ids[pos as usize]);
                x[o * d_e..(o + 1) * d_e].copy_from_slice(e);
            }
        }
        params.mix_w.grad_outer_add(&d_a, &x);
        params.mix_b.grad_row_add(0, &d_a);
        d_x.iter_mut().for_each(|v| *v = 0.0);
        params.mix_w.matvec_t_add(&d_a, &mut d_x);
        for o in 0..=2 * w {
            let pos = t as isize + o as isize - w as isize;
            if pos >= 0 && (pos as usize) < n {
                params
                    .token_embed
                    .grad_row_add(trace.ids[pos as usize], &x_segment(&d_x, o, d_e));
            }
        }
    }
}

fn x_segment(v: &[f64], o: usize, d_e: usize) -> Vec<f64> {
    v[o * d_e..(o + 1) * d_e].to_vec()
}

/// Identifies a span within a batch: the deterministic ordering key for
/// rank ties is `(sentence, start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpanKey {
    pub sentence: SentenceId,
    pub start: usize,
    pub end: usize,
}

/// A span representation vector together with its source span.
#[derive(Debug, Clone)]
pub struct SpanRep {
    pub key: SpanKey,
    pub vec: Vec<f64>,
}

/// Config, vocabulary, entity-type set and parameters bundled as one model.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanClassifier {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub types: crate::corpus::EntityTypeSet,
    pub params: ParameterStore,
}

impl SpanClassifier {
    pub fn new(
        config: EncoderConfig,
        vocab: Vocab,
        types: crate::corpus::EntityTypeSet,
    ) -> Result<Self, EncoderError> {
        let params = init_parameters(&config)?;
        Ok(SpanClassifier {
            config,
            vocab,
            types,
            params,
        })
    }

    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    /// Eval-mode encoding: no dropout, pure function of the parameters.
    pub fn encode_eval(&self, tokens: &[String]) -> EncodeTrace {
        encode(&self.config, &self.params, &self.token_ids(tokens), None)
    }

    pub fn span_vec(&self, trace: &EncodeTrace, i: usize, j: usize) -> Result<Vec<f64>, EncoderError> {
        span_vec(&self.config, &self.params, trace, i, j)
    }

    /// Eval-mode class distribution for one span representation.
    pub fn probabilities(&self, rep: &[f64]) -> Vec<f64> {
        classify(&self.config, &self.params, rep, None).probs
    }
}
