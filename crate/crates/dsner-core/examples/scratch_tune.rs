//! Scratch harness for tuning the fixture hyperparameters. Not shipped.

use std::time::Instant;

use dsner_core::annotator::{annotate, dictionary_from_gold, evaluate_annotation};
use dsner_core::corpus::{Corpus, Provenance, Split};
use dsner_core::encoder::{EncoderConfig, Precision};
use dsner_core::sampling::{SamplingConfig, Strategy};
use dsner_core::synth::{generate, SynthConfig};
use dsner_core::training::{train, OptimizerKind, TrainConfig};

fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn env_f64(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn encoder_config() -> EncoderConfig {
    EncoderConfig {
        vocab_size: 0,
        d_e: env_usize("DE", 24),
        d_h: env_usize("DH", 32),
        d_w: env_usize("DW", 8),
        context_window: env_usize("WINDOW", 1),
        max_span_width: 8,
        hidden: env_usize("HIDDEN", 64),
        dropout: env_f64("DROPOUT", 0.1),
        num_labels: 0,
        seed: 0,
        precision: Precision::F64,
    }
}

fn run(
    label: &str,
    train_corpus: &Corpus,
    dev: &Corpus,
    strategy: Strategy,
    rate: f64,
    seed: u64,
    epochs: usize,
    lr: f64,
) -> (f64, f64, f64, f64, f64) {
    run_with_model(label, train_corpus, dev, strategy, rate, seed, epochs, lr).0
}

fn run_with_model(
    label: &str,
    train_corpus: &Corpus,
    dev: &Corpus,
    strategy: Strategy,
    rate: f64,
    seed: u64,
    epochs: usize,
    lr: f64,
) -> ((f64, f64, f64, f64, f64), dsner_core::SpanClassifier) {
    let sampling = SamplingConfig::new(strategy, rate, seed);
    let mut config = TrainConfig::new(sampling);
    config.epochs = epochs;
    config.seed = seed;
    config.learning_rate = lr;
    config.batch_size = env_usize("BATCH", 16);
    config.optimizer = OptimizerKind::adam();
    let start = Instant::now();
    let state = train(train_corpus, dev, encoder_config(), &config).unwrap();
    if std::env::var("TRACE").is_ok() {
        for row in &state.history {
            println!(
                "    ep{:02} train P/R {:.3}/{:.3} dev P/R/F1 {:.3}/{:.3}/{:.3} loss {:.1} zp {}",
                row.epoch, row.train_p, row.train_r, row.dev_p, row.dev_r, row.dev_f1,
                row.loss, row.zero_pos_batches
            );
        }
    }
    let best = &state.history[state.best_epoch - 1];
    let last = state.history.last().unwrap();
    println!(
        "{label} seed={seed}: best_epoch={} dev P/R/F1 = {:.3}/{:.3}/{:.3}  (train P/R {:.3}/{:.3}) last dev F1 {:.3}  [{:?}]",
        state.best_epoch, best.dev_p, best.dev_r, state.best_dev_f1,
        best.train_p, best.train_r, last.dev_f1,
        start.elapsed()
    );
    (
        (best.dev_p, best.dev_r, state.best_dev_f1, best.train_p, best.train_r),
        state.model,
    )
}

fn main() {
    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(30);
    let lr: f64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2e-3);
    println!("epochs={epochs} lr={lr}");

    let mut clean_train = generate(&SynthConfig::new(200, 1001));
    clean_train.split = Split::Train;
    let mut dev = generate(&SynthConfig::new(50, 2002));
    dev.split = Split::Dev;

    // Clean regime, all negatives.
    let (_, clean_r, clean_f1, train_p, train_r) = run(
        "clean/all   ",
        &clean_train,
        &dev,
        Strategy::All,
        1.0,
        7,
        epochs,
        lr,
    );
    let _ = (train_p, train_r);

    // Distant supervision via 40%-deleted dictionary.
    let gd = dictionary_from_gold(&clean_train, 0.4, 77).unwrap();
    println!(
        "dictionary: kept {}/{} forms ({} ambiguous)",
        gd.kept_forms, gd.candidate_forms, gd.ambiguous_forms
    );
    let annotated = annotate(&clean_train, &gd.dictionary);
    let report = evaluate_annotation(&annotated, &clean_train).unwrap();
    println!(
        "distant annotation: micro P={:.3} R={:.3} F1={:.3}",
        report.micro.precision, report.micro.recall, report.micro.f1
    );
    // Training corpus with only the distant layer.
    let mut ds_train = Corpus::new(Split::Train);
    for s in annotated.sentences() {
        let id = ds_train.push_sentence(s.tokens.clone()).unwrap();
        for span in annotated.spans_of(s.id, Provenance::Distant) {
            let mut sp = span.clone();
            sp.provenance = Provenance::Distant;
            ds_train.add_annotation(id, sp).unwrap();
        }
    }

    let mut all_r = Vec::new();
    let mut all_p = Vec::new();
    let mut all_f1 = Vec::new();
    let mut top_r = Vec::new();
    let mut top_f1 = Vec::new();
    let mut bot_f1 = Vec::new();
    for seed in [11u64, 12, 13] {
        let ((p, r, f1, _, _), model) = run_with_model("ds/all      ", &ds_train, &dev, Strategy::All, 1.0, seed, epochs, lr);
        fn_rank_report(&model, &ds_train, &clean_train, 32);
        all_p.push(p);
        all_r.push(r);
        all_f1.push(f1);
        let ((_, r, f1, _, _), model) = run_with_model("ds/top5%    ", &ds_train, &dev, Strategy::TopNeg, 0.05, seed, epochs, lr);
        fn_rank_report(&model, &ds_train, &clean_train, 32);
        if seed == 11 {
            dev_error_dump(&model, &dev, 6);
        }
        top_r.push(r);
        top_f1.push(f1);
        let (_, _, f1, _, _) = run("ds/bottom95%", &ds_train, &dev, Strategy::BottomNeg, 0.95, seed, epochs, lr);
        bot_f1.push(f1);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("--- summary ---");
    println!("clean dev R {:.3} F1 {:.3}", clean_r, clean_f1);
    println!(
        "ds/all   dev P {:.3} R {:.3} F1 {:.3} (recall gap vs clean: {:.1} pts)",
        mean(&all_p),
        mean(&all_r),
        mean(&all_f1),
        100.0 * (clean_r - mean(&all_r))
    );
    println!(
        "ds/top5  dev R {:.3} F1 {:.3} (recall gain vs all: {:.1} pts)",
        mean(&top_r),
        mean(&top_f1),
        100.0 * (mean(&top_r) - mean(&all_r))
    );
    println!("ds/bot95 dev F1 {:.3} (top5 - bot95 = {:.3})", mean(&bot_f1), mean(&top_f1) - mean(&bot_f1));
}

// ---- rank diagnostics (appended scratch) ----
#[allow(dead_code)]
fn fn_rank_report(
    model: &dsner_core::SpanClassifier,
    ds_train: &Corpus,
    gold: &Corpus,
    batch_sentences: usize,
) {
    use dsner_core::corpus::enumerate_spans;
    use dsner_core::encoder::{encode, span_vec, SpanKey, SpanRep};
    use dsner_core::sampling::phi_scores;
    use std::collections::BTreeSet;

    let mut positives: Vec<SpanRep> = Vec::new();
    let mut negatives: Vec<SpanRep> = Vec::new();
    let mut fn_keys: BTreeSet<(u32, usize, usize)> = BTreeSet::new();
    for s in ds_train.sentences().iter().take(batch_sentences) {
        let ids = model.token_ids(&s.tokens);
        let trace = encode(&model.config, &model.params, &ids, None);
        let distant: BTreeSet<(usize, usize)> = ds_train
            .annotations(s.id)
            .iter()
            .map(|sp| (sp.start, sp.end))
            .collect();
        let gold_spans: BTreeSet<(usize, usize)> = gold
            .annotations(s.id)
            .iter()
            .map(|sp| (sp.start, sp.end))
            .collect();
        for (i, j) in enumerate_spans(s.len(), model.config.max_span_width) {
            let rep = span_vec(&model.config, &model.params, &trace, i, j).unwrap();
            let key = SpanKey { sentence: s.id, start: i, end: j };
            if distant.contains(&(i, j)) {
                positives.push(SpanRep { key, vec: rep });
            } else {
                if gold_spans.contains(&(i, j)) {
                    fn_keys.insert((s.id.0, i, j));
                }
                negatives.push(SpanRep { key, vec: rep });
            }
        }
    }
    let scores = phi_scores(&negatives, &positives).unwrap();
    let mut order: Vec<usize> = (0..negatives.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let n = negatives.len();
    let k = dsner_core::sampling::rate_count(n, 0.05);
    let mut fn_ranks: Vec<f64> = Vec::new();
    let mut fn_in_topk = 0;
    for (rank, &idx) in order.iter().enumerate() {
        let key = &negatives[idx].key;
        if fn_keys.contains(&(key.sentence.0, key.start, key.end)) {
            fn_ranks.push(rank as f64 / n as f64);
            if rank < k {
                fn_in_topk += 1;
            }
        }
    }
    fn_ranks.sort_by(|a, b| a.total_cmp(b));
    let median = fn_ranks.get(fn_ranks.len() / 2).copied().unwrap_or(f64::NAN);
    // Composition of the top-k slice.
    let shared = ["Keller", "Larsen", "Moreno", "Novak", "Okafor", "Petrov", "Quinn", "Rossi"];
    let mut top_fn = 0;
    let mut top_overlap_pos = 0;
    let mut top_overlap_fn = 0;
    let mut top_pair_decoy = 0;
    let mut top_other = 0;
    for &idx in order.iter().take(k) {
        let key = &negatives[idx].key;
        let s = ds_train.sentence(key.sentence).unwrap();
        let is_fn = fn_keys.contains(&(key.sentence.0, key.start, key.end));
        let overlaps_pos = ds_train.annotations(key.sentence).iter().any(|sp| {
            sp.start <= key.end && key.start <= sp.end
        });
        let overlaps_fn = fn_keys.iter().any(|&(sid, i, j)| {
            sid == key.sentence.0 && i <= key.end && key.start <= j
        });
        let all_shared = s.tokens[key.start..=key.end]
            .iter()
            .all(|t| shared.contains(&t.as_str()));
        if is_fn {
            top_fn += 1;
        } else if all_shared && key.end > key.start {
            top_pair_decoy += 1;
        } else if overlaps_pos {
            top_overlap_pos += 1;
        } else if overlaps_fn {
            top_overlap_fn += 1;
        } else {
            top_other += 1;
        }
    }
    println!(
        "  FN ranks: count={} median_pct={:.3} in_top5%={}/{} (k={}, N={}) | top-k mix: fn={} pairdecoy={} ov_pos={} ov_fn={} other={}",
        fn_ranks.len(), median, fn_in_topk, fn_ranks.len(), k, n,
        top_fn, top_pair_decoy, top_overlap_pos, top_overlap_fn, top_other
    );
    if std::env::var("TOPDUMP").is_ok() {
        println!("  -- top 40 spans --");
        for (rank, &idx) in order.iter().take(40).enumerate() {
            let key = &negatives[idx].key;
            let s = ds_train.sentence(key.sentence).unwrap();
            let text = s.tokens[key.start..=key.end].join(" ");
            let is_fn = fn_keys.contains(&(key.sentence.0, key.start, key.end));
            println!("    #{rank:3} phi={:.4} {}{text}", scores[idx], if is_fn { "FN! " } else { "" });
        }
        println!("  -- FN spans and ranks --");
        let mut shown = 0;
        for (rank, &idx) in order.iter().enumerate() {
            let key = &negatives[idx].key;
            if fn_keys.contains(&(key.sentence.0, key.start, key.end)) {
                let s = ds_train.sentence(key.sentence).unwrap();
                println!(
                    "    rank {rank} (pct {:.3}) phi={:.4} {}",
                    rank as f64 / n as f64,
                    scores[idx],
                    s.tokens[key.start..=key.end].join(" ")
                );
                shown += 1;
                if shown >= 12 { break; }
            }
        }
    }
}

#[allow(dead_code)]
fn dev_error_dump(model: &dsner_core::SpanClassifier, dev: &Corpus, limit: usize) {
    use dsner_core::evaluation::{predict_sentence, PredictOptions};
    let mut shown = 0;
    for s in dev.sentences() {
        if shown >= limit {
            break;
        }
        let gold: Vec<_> = dev
            .annotations(s.id)
            .iter()
            .map(|sp| (sp.start, sp.end, sp.label.clone()))
            .collect();
        let pred: Vec<_> = predict_sentence(model, s, PredictOptions::default())
            .into_iter()
            .map(|sp| (sp.start, sp.end, sp.label.clone()))
            .collect();
        if gold == pred {
            continue;
        }
        shown += 1;
        println!("  sent {}: {}", s.id, s.tokens.join(" "));
        println!("    gold: {gold:?}");
        println!("    pred: {pred:?}");
        // Probabilities for each gold span and each wrong prediction.
        let trace = model.encode_eval(&s.tokens);
        for (i, j, label) in &gold {
            let rep = model.span_vec(&trace, *i, *j).unwrap();
            let probs = model.probabilities(&rep);
            let o = model.types.o_index();
            let li = model.types.index_of(label).unwrap();
            println!(
                "    gold ({i},{j},{label}): p_label={:.3} p_O={:.3} argmax={}",
                probs[li],
                probs[o],
                model.types.label_at(
                    probs
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .unwrap()
                        .0
                )
            );
        }
    }
}
