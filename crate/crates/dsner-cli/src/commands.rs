//! The five subcommands. All artifacts land under the command's `--out`
//! directory; stdout carries the human-readable summary.

use std::fs;
use std::path::Path;

use serde::Serialize;

use dsner_core::annotator::{annotate as gazetteer_annotate, dictionary_from_gold, evaluate_annotation, Dictionary};
use dsner_core::checkpoint::{self, CheckpointMeta};
use dsner_core::corpus::{parse_conll, Corpus, Provenance, Split};
use dsner_core::evaluation::{error_listing, micro_f1, predict_corpus, PredictOptions};
use dsner_core::synth::{generate, SynthConfig};
use dsner_core::training::{diagnostics_csv, train as train_model, TrainState};

use crate::config::{echo_lines, resolve, Resolved};
use crate::{AblateArgs, AnnotateArgs, CliError, EvalArgs, SynthArgs, TrainArgs};

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn ensure_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))
}

fn load_corpus(path: &Path, provenance: Provenance, split: Split) -> Result<Corpus, CliError> {
    let text = read_text(path)?;
    let parsed =
        parse_conll(&text, provenance).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    if parsed.repaired_tags > 0 {
        eprintln!(
            "warning: {}: repaired {} dangling I- tags",
            path.display(),
            parsed.repaired_tags
        );
    }
    let mut corpus = parsed.corpus;
    corpus.split = split;
    Ok(corpus)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable report")
}

pub fn annotate_cmd_impl(args: &AnnotateArgs) -> Result<String, CliError> {
    ensure_out(&args.out)?;
    let gold = load_corpus(&args.corpus, Provenance::Gold, Split::Train)?;

    let dictionary: Dictionary = match (&args.dict, args.delete_rate) {
        (Some(path), None) => {
            let text = read_text(path)?;
            Dictionary::from_tsv(&text, !args.case_insensitive)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        }
        (None, Some(rate)) => {
            let sampled = dictionary_from_gold(&gold, rate, args.seed)
                .map_err(|e| CliError::input(e.to_string()))?;
            println!(
                "dictionary: kept {}/{} unambiguous gold surface forms ({} ambiguous dropped)",
                sampled.kept_forms, sampled.candidate_forms, sampled.ambiguous_forms
            );
            write_text(&args.out.join("dictionary.tsv"), &sampled.dictionary.to_tsv())?;
            sampled.dictionary
        }
        (None, None) => {
            return Err(CliError::input(
                "either --dict or --delete-rate must be given",
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    let annotated = gazetteer_annotate(&gold, &dictionary);
    let report = evaluate_annotation(&annotated, &gold).map_err(|e| CliError::input(e.to_string()))?;

    let distant_conll = annotated
        .write_conll(Provenance::Distant)
        .map_err(|e| CliError::input(e.to_string()))?;
    write_text(&args.out.join("distant.conll"), &distant_conll)?;
    let report_json = to_json(&report);
    write_text(&args.out.join("annotation_report.json"), &report_json)?;
    let mut echo = String::new();
    echo.push_str(&format!("case_sensitive={}\n", !args.case_insensitive));
    if let Some(rate) = args.delete_rate {
        echo.push_str(&format!("delete_rate={rate}\nseed={}\n", args.seed));
    }
    write_text(&args.out.join("config.txt"), &echo)?;

    Ok(format!(
        "distant annotation: micro P={:.4} R={:.4} F1={:.4} ({} spans over {} sentences)",
        report.micro.precision,
        report.micro.recall,
        report.micro.f1,
        annotated.total_annotations(Some(Provenance::Distant)),
        annotated.len()
    ))
}

pub fn annotate(args: AnnotateArgs) -> Result<(), CliError> {
    let summary = annotate_cmd_impl(&args)?;
    println!("{summary}");
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

fn run_one_seed(
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
    resolved: &Resolved,
    seed: u64,
    dump_selection: bool,
) -> Result<TrainState, CliError> {
    let mut config = resolved.train.clone();
    config.seed = seed;
    config.sampling.seed = seed;
    config.dump_selection = dump_selection;
    Ok(train_model(
        train_corpus,
        dev_corpus,
        resolved.encoder.clone(),
        &config,
    )?)
}

fn write_run_artifacts(
    dir: &Path,
    state: &TrainState,
    resolved: &Resolved,
    seed: u64,
    dump_selection: bool,
) -> Result<(), CliError> {
    ensure_out(dir)?;
    let checkpoint_path = dir.join("checkpoint.dsner");
    checkpoint::save(&state.model, &checkpoint_path)?;
    let meta = CheckpointMeta {
        best_epoch: state.best_epoch,
        best_dev_f1: state.best_dev_f1,
        epochs: state.history.len(),
        global_steps: state.global_steps,
        strategy: resolved.train.sampling.strategy.name().to_string(),
        rate: resolved.train.sampling.rate,
        seed,
        learning_rate: resolved.train.learning_rate,
        batch_size: resolved.train.batch_size,
        optimizer: resolved.train.optimizer.name().to_string(),
        truncated_spans: state.truncated_spans,
    };
    checkpoint::save_meta(&meta, &checkpoint_path)?;
    write_text(&dir.join("diagnostics.csv"), &diagnostics_csv(&state.history))?;
    write_text(&dir.join("config.txt"), &echo_lines(resolved))?;
    if dump_selection {
        let mut lines = state.selection_log.join("\n");
        lines.push('\n');
        write_text(&dir.join("selection.jsonl"), &lines)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SeedSummary {
    seed: u64,
    best_epoch: usize,
    dev_precision: f64,
    dev_recall: f64,
    dev_f1: f64,
}

#[derive(Serialize)]
struct MultiSeedSummary {
    runs: Vec<SeedSummary>,
    dev_f1_mean: f64,
    dev_f1_std: f64,
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    if args.seeds == 0 {
        return Err(CliError::input("--seeds must be >= 1"));
    }
    let resolved = resolve(&args.knobs)?;
    ensure_out(&args.out)?;
    let train_corpus = load_corpus(&args.train, Provenance::Gold, Split::Train)?;
    let dev_corpus = load_corpus(&args.dev, Provenance::Gold, Split::Dev)?;

    let base_seed = resolved.train.seed;
    let mut runs = Vec::new();
    for k in 0..args.seeds {
        let seed = base_seed + k as u64;
        let state = run_one_seed(
            &train_corpus,
            &dev_corpus,
            &resolved,
            seed,
            args.dump_selection,
        )?;
        let dir = if args.seeds == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("seed_{seed}"))
        };
        write_run_artifacts(&dir, &state, &resolved, seed, args.dump_selection)?;
        let best = &state.history[state.best_epoch - 1];
        println!(
            "seed {seed}: best epoch {} dev P={:.4} R={:.4} F1={:.4} ({} zero-positive batches in epoch 1)",
            state.best_epoch, best.dev_p, best.dev_r, best.dev_f1, state.history[0].zero_pos_batches
        );
        runs.push(SeedSummary {
            seed,
            best_epoch: state.best_epoch,
            dev_precision: best.dev_p,
            dev_recall: best.dev_r,
            dev_f1: state.best_dev_f1,
        });
    }
    let f1s: Vec<f64> = runs.iter().map(|r| r.dev_f1).collect();
    let summary = MultiSeedSummary {
        dev_f1_mean: mean(&f1s),
        dev_f1_std: sample_std(&f1s),
        runs,
    };
    if args.seeds > 1 {
        write_text(&args.out.join("summary.json"), &to_json(&summary))?;
        println!(
            "dev F1 over {} seeds: mean={:.4} std={:.4}",
            args.seeds, summary.dev_f1_mean, summary.dev_f1_std
        );
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let model = checkpoint::load(&args.checkpoint)?;
    let corpus = load_corpus(&args.corpus, Provenance::Gold, Split::Test)?;
    let options = PredictOptions {
        resolve_overlaps: !args.keep_overlaps,
    };
    let predicted = predict_corpus(&model, &corpus, options);
    let metrics = micro_f1(&predicted, &corpus).map_err(|e| CliError::input(e.to_string()))?;
    let metrics_json = to_json(&metrics);
    println!("{metrics_json}");

    let errors = if args.errors {
        Some(error_listing(&predicted, &corpus).map_err(|e| CliError::input(e.to_string()))?)
    } else {
        None
    };
    if let Some(out) = &args.out {
        ensure_out(out)?;
        write_text(&out.join("metrics.json"), &metrics_json)?;
        if let Some(errors) = &errors {
            let mut lines = String::new();
            for entry in errors {
                lines.push_str(&serde_json::to_string(entry).expect("serializable"));
                lines.push('\n');
            }
            write_text(&out.join("errors.jsonl"), &lines)?;
        }
    } else if let Some(errors) = &errors {
        for entry in errors {
            println!("{}", serde_json::to_string(entry).expect("serializable"));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    sampling: String,
    rate: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    f1_std: f64,
}

pub fn ablate(args: AblateArgs) -> Result<(), CliError> {
    if args.top.is_empty() && args.bottom.is_empty() {
        return Err(CliError::input("give at least one of --top or --bottom"));
    }
    if args.seeds == 0 {
        return Err(CliError::input("--seeds must be >= 1"));
    }
    for pct in args.top.iter().chain(&args.bottom) {
        if !(*pct > 0.0 && *pct <= 100.0) {
            return Err(CliError::input(format!(
                "percentage {pct} outside (0, 100]"
            )));
        }
    }
    let resolved = resolve(&args.knobs)?;
    ensure_out(&args.out)?;
    let train_corpus = load_corpus(&args.train, Provenance::Gold, Split::Train)?;
    let dev_corpus = load_corpus(&args.dev, Provenance::Gold, Split::Dev)?;

    use dsner_core::sampling::Strategy;
    let mut cells: Vec<(Strategy, f64, String)> = Vec::new();
    for &pct in &args.top {
        cells.push((Strategy::TopNeg, pct / 100.0, format!("top {pct}%")));
    }
    for &pct in &args.bottom {
        cells.push((Strategy::BottomNeg, pct / 100.0, format!("bottom {pct}%")));
    }

    let base_seed = resolved.train.seed;
    let mut rows = Vec::new();
    println!("{:<14} {:>9} {:>9} {:>9} {:>9}", "sampling", "P", "R", "F1", "F1 std");
    for (strategy, rate, label) in cells {
        let mut cell = resolved.clone();
        cell.train.sampling.strategy = strategy;
        cell.train.sampling.rate = rate;
        let mut ps = Vec::new();
        let mut rs = Vec::new();
        let mut f1s = Vec::new();
        for k in 0..args.seeds {
            let state = run_one_seed(&train_corpus, &dev_corpus, &cell, base_seed + k as u64, false)?;
            let best = &state.history[state.best_epoch - 1];
            ps.push(best.dev_p);
            rs.push(best.dev_r);
            f1s.push(best.dev_f1);
        }
        let row = AblationRow {
            sampling: label,
            rate,
            precision: mean(&ps),
            recall: mean(&rs),
            f1: mean(&f1s),
            f1_std: sample_std(&f1s),
        };
        println!(
            "{:<14} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            row.sampling, row.precision, row.recall, row.f1, row.f1_std
        );
        rows.push(row);
    }

    let mut csv = String::from("sampling,rate,precision,recall,f1,f1_std\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.sampling, row.rate, row.precision, row.recall, row.f1, row.f1_std
        ));
    }
    write_text(&args.out.join("ablation.csv"), &csv)?;
    write_text(&args.out.join("config.txt"), &echo_lines(&resolved))?;
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    ensure_out(&args.out)?;
    let mut emit = |name: &str, sentences: usize, seed: u64, split: Split| -> Result<(), CliError> {
        if sentences == 0 {
            return Ok(());
        }
        let mut config = SynthConfig::new(sentences, seed);
        config.split = split;
        let corpus = generate(&config);
        let text = corpus
            .write_conll(Provenance::Gold)
            .map_err(|e| CliError::input(e.to_string()))?;
        write_text(&args.out.join(name), &text)?;
        println!(
            "{name}: {} sentences, {} gold spans",
            corpus.len(),
            corpus.total_annotations(None)
        );
        Ok(())
    };
    emit("train.conll", args.train_sentences, args.seed, Split::Train)?;
    emit("dev.conll", args.dev_sentences, args.seed + 1, Split::Dev)?;
    emit("test.conll", args.test_sentences, args.seed + 2, Split::Test)?;
    Ok(())
}
