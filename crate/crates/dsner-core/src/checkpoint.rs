//! Self-describing binary model checkpoints plus a JSON metadata sidecar.
//!
//! Layout (all integers little-endian): magic `DSNER1`, format version,
//! the encoder config, the entity-type labels, the id-ordered vocabulary,
//! then each named tensor with its shape and row-major data. Parameter data
//! is written at the configured precision; loading always widens to `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::EntityTypeSet;
use crate::encoder::{
    EncoderConfig, EncoderError, ParameterStore, Precision, SpanClassifier, Vocab, TENSOR_NAMES,
};
use crate::nn::Tensor;

const MAGIC: &[u8; 6] = b"DSNER1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a model checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint is truncated or corrupt")]
    Truncated,
    #[error("invalid utf-8 in checkpoint string")]
    BadString,
    #[error("tensor `{name}`: expected shape {expected_rows}x{expected_cols}, found {rows}x{cols}")]
    ShapeMismatch {
        name: String,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("unexpected tensor `{0}`")]
    UnexpectedTensor(String),
    #[error("checkpoint config inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("metadata sidecar: {0}")]
    Meta(#[from] serde_json::Error),
}

/// Expected name and shape of every tensor under a config, in file order.
pub fn tensor_shapes(config: &EncoderConfig) -> [(&'static str, usize, usize); 8] {
    let window_cols = (2 * config.context_window + 1) * config.d_e;
    [
        ("token_embed", config.vocab_size, config.d_e),
        ("mix_w", config.d_h, window_cols),
        ("mix_b", 1, config.d_h),
        ("width_embed", config.max_span_width + 1, config.d_w),
        ("cls_w1", config.hidden, config.span_rep_width()),
        ("cls_b1", 1, config.hidden),
        ("cls_w2", config.num_labels, config.hidden),
        ("cls_b2", 1, config.num_labels),
    ]
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_string(out: &mut Vec<u8>, s: &str) {
    push_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

/// Serializes the model to bytes.
pub fn to_bytes(model: &SpanClassifier) -> Vec<u8> {
    let config = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, VERSION);

    push_u32(&mut out, config.vocab_size as u32);
    push_u32(&mut out, config.d_e as u32);
    push_u32(&mut out, config.d_h as u32);
    push_u32(&mut out, config.d_w as u32);
    push_u32(&mut out, config.context_window as u32);
    push_u32(&mut out, config.max_span_width as u32);
    push_u32(&mut out, config.hidden as u32);
    push_u32(&mut out, config.num_labels as u32);
    push_f64(&mut out, config.dropout);
    push_u64(&mut out, config.seed);
    out.push(match config.precision {
        Precision::F64 => 0,
        Precision::F32 => 1,
    });

    let labels = model.types.labels();
    push_u32(&mut out, labels.len() as u32);
    for label in labels {
        push_string(&mut out, label);
    }
    let tokens = model.vocab.tokens();
    push_u32(&mut out, tokens.len() as u32);
    for token in tokens {
        push_string(&mut out, token);
    }

    let tensors = model.params.tensors();
    push_u32(&mut out, tensors.len() as u32);
    for (name, tensor) in tensors {
        push_string(&mut out, name);
        out.push(2); // ndim
        push_u32(&mut out, tensor.rows() as u32);
        push_u32(&mut out, tensor.cols() as u32);
        match config.precision {
            Precision::F64 => {
                for &v in &tensor.data {
                    push_f64(&mut out, v);
                }
            }
            Precision::F32 => {
                for &v in &tensor.data {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated);
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CheckpointError::BadString)
    }
}

/// Deserializes a model from bytes, validating shapes against the config.
pub fn from_bytes(bytes: &[u8]) -> Result<SpanClassifier, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(6)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }

    let config = EncoderConfig {
        vocab_size: r.u32()? as usize,
        d_e: r.u32()? as usize,
        d_h: r.u32()? as usize,
        d_w: r.u32()? as usize,
        context_window: r.u32()? as usize,
        max_span_width: r.u32()? as usize,
        hidden: r.u32()? as usize,
        num_labels: r.u32()? as usize,
        dropout: r.f64()?,
        seed: r.u64()?,
        precision: match r.u8()? {
            0 => Precision::F64,
            1 => Precision::F32,
            other => {
                return Err(CheckpointError::Inconsistent(format!(
                    "unknown precision tag {other}"
                )))
            }
        },
    };
    config.validate()?;

    let label_count = r.u32()? as usize;
    let mut labels = Vec::with_capacity(label_count);
    for _ in 0..label_count {
        labels.push(r.string()?);
    }
    let types = EntityTypeSet::from_labels(labels.clone());
    if types.len() != label_count {
        return Err(CheckpointError::Inconsistent(
            "duplicate or O labels in checkpoint label set".into(),
        ));
    }
    if types.num_labels() != config.num_labels {
        return Err(CheckpointError::Inconsistent(format!(
            "num_labels {} does not match {} labels plus O",
            config.num_labels, label_count
        )));
    }

    let token_count = r.u32()? as usize;
    if token_count != config.vocab_size {
        return Err(CheckpointError::Inconsistent(format!(
            "vocab_size {} does not match stored token count {}",
            config.vocab_size, token_count
        )));
    }
    let mut tokens = Vec::with_capacity(token_count);
    for _ in 0..token_count {
        tokens.push(r.string()?);
    }
    let vocab = Vocab::from_tokens(tokens);

    let tensor_count = r.u32()? as usize;
    if tensor_count != TENSOR_NAMES.len() {
        return Err(CheckpointError::Inconsistent(format!(
            "expected {} tensors, found {}",
            TENSOR_NAMES.len(),
            tensor_count
        )));
    }
    let expected = tensor_shapes(&config);
    let mut loaded: Vec<Tensor> = Vec::with_capacity(tensor_count);
    for (name, expected_rows, expected_cols) in expected {
        let found_name = r.string()?;
        if found_name != name {
            return Err(CheckpointError::UnexpectedTensor(found_name));
        }
        let ndim = r.u8()?;
        if ndim != 2 {
            return Err(CheckpointError::Inconsistent(format!(
                "tensor `{name}` has {ndim} dimensions"
            )));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows != expected_rows || cols != expected_cols {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected_rows,
                expected_cols,
                rows,
                cols,
            });
        }
        let mut tensor = Tensor::zeros(rows, cols);
        match config.precision {
            Precision::F64 => {
                for v in tensor.data.iter_mut() {
                    *v = r.f64()?;
                }
            }
            Precision::F32 => {
                for v in tensor.data.iter_mut() {
                    *v = r.f32()? as f64;
                }
            }
        }
        loaded.push(tensor);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Truncated);
    }

    let mut drain = loaded.into_iter();
    let params = ParameterStore {
        token_embed: drain.next().unwrap(),
        mix_w: drain.next().unwrap(),
        mix_b: drain.next().unwrap(),
        width_embed: drain.next().unwrap(),
        cls_w1: drain.next().unwrap(),
        cls_b1: drain.next().unwrap(),
        cls_w2: drain.next().unwrap(),
        cls_b2: drain.next().unwrap(),
    };
    Ok(SpanClassifier {
        config,
        vocab,
        types,
        params,
    })
}

pub fn save(model: &SpanClassifier, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SpanClassifier, CheckpointError> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes)
}

/// Training metadata written next to the checkpoint as `<file>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub epochs: usize,
    pub global_steps: usize,
    pub strategy: String,
    pub rate: f64,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: String,
    pub truncated_spans: usize,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".json");
    checkpoint.with_file_name(name)
}

pub fn save_meta(meta: &CheckpointMeta, checkpoint: &Path) -> Result<(), CheckpointError> {
    let json = serde_json::to_string_pretty(meta)?;
    fs::write(sidecar_path(checkpoint), json)?;
    Ok(())
}

pub fn load_meta(checkpoint: &Path) -> Result<CheckpointMeta, CheckpointError> {
    let text = fs::read_to_string(sidecar_path(checkpoint))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_parameters;

    fn sample_model(precision: Precision) -> SpanClassifier {
        let types = EntityTypeSet::from_labels(["PER", "LOC"]);
        let vocab = Vocab::build(["alpha", "beta", "gamma"]);
        let config = EncoderConfig {
            vocab_size: vocab.len(),
            d_e: 3,
            d_h: 4,
            d_w: 2,
            context_window: 1,
            max_span_width: 2,
            hidden: 5,
            dropout: 0.1,
            num_labels: types.num_labels(),
            seed: 99,
            precision,
        };
        let params = init_parameters(&config).unwrap();
        SpanClassifier {
            config,
            vocab,
            types,
            params,
        }
    }

    #[test]
    fn round_trip_is_bit_exact_in_f64() {
        let model = sample_model(Precision::F64);
        let bytes = to_bytes(&model);
        let loaded = from_bytes(&bytes).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.vocab, model.vocab);
        assert_eq!(loaded.types, model.types);
        for ((_, a), (_, b)) in loaded.params.tensors().iter().zip(model.params.tensors().iter()) {
            assert_eq!(a.data, b.data);
        }
        // Two serializations of the same model are identical bytes.
        assert_eq!(bytes, to_bytes(&loaded));
    }

    #[test]
    fn f32_round_trip_is_lossy_but_close() {
        let model = sample_model(Precision::F32);
        let loaded = from_bytes(&to_bytes(&model)).unwrap();
        for ((_, a), (_, b)) in loaded.params.tensors().iter().zip(model.params.tensors().iter()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let model = sample_model(Precision::F64);
        let bytes = to_bytes(&model);

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(from_bytes(&bad_magic), Err(CheckpointError::BadMagic)));

        let mut bad_version = bytes.clone();
        bad_version[6] = 9;
        assert!(matches!(
            from_bytes(&bad_version),
            Err(CheckpointError::BadVersion(9))
        ));

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            from_bytes(truncated),
            Err(CheckpointError::Truncated)
        ));

        let mut extended = bytes.clone();
        extended.push(0);
        assert!(matches!(
            from_bytes(&extended),
            Err(CheckpointError::Truncated)
        ));
    }

    #[test]
    fn shapes_match_initialized_tensors() {
        let model = sample_model(Precision::F64);
        for ((name, tensor), (expected_name, rows, cols)) in model
            .params
            .tensors()
            .iter()
            .zip(tensor_shapes(&model.config))
        {
            assert_eq!(*name, expected_name);
            assert_eq!(tensor.rows(), rows);
            assert_eq!(tensor.cols(), cols);
        }
    }

    #[test]
    fn meta_sidecar_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let checkpoint = dir.path().join("model.dsner");
        let meta = CheckpointMeta {
            best_epoch: 7,
            best_dev_f1: 0.8125,
            epochs: 30,
            global_steps: 390,
            strategy: "topneg".into(),
            rate: 0.05,
            seed: 42,
            learning_rate: 1e-3,
            batch_size: 16,
            optimizer: "adam".into(),
            truncated_spans: 0,
        };
        save_meta(&meta, &checkpoint).unwrap();
        assert_eq!(sidecar_path(&checkpoint), dir.path().join("model.dsner.json"));
        let loaded = load_meta(&checkpoint).unwrap();
        assert_eq!(loaded, meta);
    }
}
