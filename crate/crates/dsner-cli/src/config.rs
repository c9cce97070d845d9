//! Hyperparameter resolution: command-line flag > config-file entry >
//! built-in default, with the effective configuration echoed to the output
//! directory for provenance.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use clap::ValueEnum;
use dsner_core::encoder::{EncoderConfig, Precision};
use dsner_core::sampling::{SamplingConfig, Strategy};
use dsner_core::training::{OptimizerKind, TrainConfig};

use crate::{CliError, KnobArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    All,
    Uniform,
    Weighted,
    Topneg,
    Bottomneg,
}

impl StrategyArg {
    pub fn to_strategy(self) -> Strategy {
        match self {
            StrategyArg::All => Strategy::All,
            StrategyArg::Uniform => Strategy::Uniform,
            StrategyArg::Weighted => Strategy::Weighted,
            StrategyArg::Topneg => Strategy::TopNeg,
            StrategyArg::Bottomneg => Strategy::BottomNeg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Momentum,
    Adam,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

fn parse_kv_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::input(format!(
                "{}:{}: expected key=value, got `{line}`",
                path.display(),
                idx + 1
            ))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn file_value<T: std::str::FromStr>(
    file: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError> {
    match file.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|_| CliError::input(format!("config key `{key}`: cannot parse `{raw}`"))),
    }
}

macro_rules! resolve {
    ($flag:expr, $file:expr, $key:literal, $default:expr) => {
        match $flag {
            Some(v) => v,
            None => file_value($file, $key)?.unwrap_or($default),
        }
    };
}

/// Applies the precedence rules and returns the effective configuration.
/// `vocab_size`/`num_labels` stay 0 here; training derives them from data.
pub fn resolve(knobs: &KnobArgs) -> Result<Resolved, CliError> {
    let file = match &knobs.config {
        Some(path) => parse_kv_file(path)?,
        None => BTreeMap::new(),
    };

    let strategy = match knobs.strategy {
        Some(arg) => arg.to_strategy(),
        None => match file.get("strategy") {
            Some(raw) => raw
                .parse::<Strategy>()
                .map_err(|e| CliError::input(e.to_string()))?,
            None => Strategy::TopNeg,
        },
    };
    let rate = resolve!(knobs.rate, &file, "rate", 0.05);
    let seed = resolve!(knobs.seed, &file, "seed", 42);

    let optimizer = {
        let arg = match knobs.optimizer {
            Some(arg) => Some(arg),
            None => match file.get("optimizer").map(String::as_str) {
                Some("sgd") => Some(OptimizerArg::Sgd),
                Some("momentum") => Some(OptimizerArg::Momentum),
                Some("adam") | None => None,
                Some(other) => {
                    return Err(CliError::input(format!(
                        "config key `optimizer`: unknown value `{other}` (sgd, momentum, adam)"
                    )))
                }
            },
        };
        let momentum = resolve!(knobs.momentum, &file, "momentum", 0.9);
        match arg {
            Some(OptimizerArg::Sgd) => OptimizerKind::Sgd,
            Some(OptimizerArg::Momentum) => OptimizerKind::Momentum { momentum },
            Some(OptimizerArg::Adam) | None => OptimizerKind::adam(),
        }
    };

    let mut encoder = EncoderConfig::new(0, 0);
    encoder.d_e = resolve!(knobs.d_e, &file, "d_e", 32);
    encoder.d_h = resolve!(knobs.d_h, &file, "d_h", 64);
    encoder.d_w = resolve!(knobs.d_w, &file, "d_w", 16);
    encoder.context_window = resolve!(knobs.context_window, &file, "context_window", 1);
    encoder.max_span_width = resolve!(knobs.max_span_width, &file, "max_span_width", 8);
    encoder.hidden = resolve!(knobs.hidden, &file, "hidden", 150);
    encoder.dropout = resolve!(knobs.dropout, &file, "dropout", 0.2);
    encoder.seed = seed;
    encoder.precision = Precision::F64;

    let mut train = TrainConfig::new(SamplingConfig::new(strategy, rate, seed));
    train.epochs = resolve!(knobs.epochs, &file, "epochs", 30);
    train.batch_size = resolve!(knobs.batch_size, &file, "batch_size", 16);
    train.learning_rate = resolve!(knobs.lr, &file, "lr", 1e-3);
    train.optimizer = optimizer;
    train.seed = seed;

    Ok(Resolved { encoder, train })
}

/// Effective configuration as sorted key=value lines.
pub fn echo_lines(resolved: &Resolved) -> String {
    let mut map: BTreeMap<&str, String> = BTreeMap::new();
    map.insert("strategy", resolved.train.sampling.strategy.name().into());
    map.insert("rate", resolved.train.sampling.rate.to_string());
    map.insert("epochs", resolved.train.epochs.to_string());
    map.insert("batch_size", resolved.train.batch_size.to_string());
    map.insert("lr", resolved.train.learning_rate.to_string());
    map.insert(
        "optimizer",
        match resolved.train.optimizer {
            OptimizerKind::Sgd => "sgd".into(),
            OptimizerKind::Momentum { momentum } => format!("momentum({momentum})"),
            OptimizerKind::Adam { .. } => "adam".into(),
        },
    );
    map.insert("dropout", resolved.encoder.dropout.to_string());
    map.insert("d_e", resolved.encoder.d_e.to_string());
    map.insert("d_h", resolved.encoder.d_h.to_string());
    map.insert("d_w", resolved.encoder.d_w.to_string());
    map.insert("context_window", resolved.encoder.context_window.to_string());
    map.insert("max_span_width", resolved.encoder.max_span_width.to_string());
    map.insert("hidden", resolved.encoder.hidden.to_string());
    map.insert("seed", resolved.train.seed.to_string());
    let mut out = String::new();
    for (key, value) in map {
        out.push_str(key);
        out.push('=');
        out.push_str(&value);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let resolved = resolve(&KnobArgs::default()).unwrap();
        assert_eq!(resolved.train.sampling.strategy, Strategy::TopNeg);
        assert_eq!(resolved.train.sampling.rate, 0.05);
        assert_eq!(resolved.encoder.max_span_width, 8);
        assert_eq!(resolved.encoder.hidden, 150);
        assert_eq!(resolved.encoder.dropout, 0.2);
        assert_eq!(resolved.train.epochs, 30);
        assert_eq!(resolved.train.batch_size, 16);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nrate=0.1\nepochs=7\nstrategy=uniform\n").unwrap();
        let knobs = KnobArgs {
            config: Some(path),
            rate: Some(0.2),
            ..KnobArgs::default()
        };
        let resolved = resolve(&knobs).unwrap();
        assert_eq!(resolved.train.sampling.rate, 0.2); // flag wins
        assert_eq!(resolved.train.epochs, 7); // file wins
        assert_eq!(resolved.train.sampling.strategy, Strategy::Uniform);
        assert_eq!(resolved.train.batch_size, 16); // default
    }

    #[test]
    fn bad_file_values_are_input_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        std::fs::write(&path, "epochs=many\n").unwrap();
        let knobs = KnobArgs {
            config: Some(path),
            ..KnobArgs::default()
        };
        let err = resolve(&knobs).unwrap_err();
        assert_eq!(err.code, 2);
    }
}
