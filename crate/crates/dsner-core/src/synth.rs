//! Seeded synthetic gold corpora for experiments and the test fixtures.
//!
//! Sentences are template-filled with entity surface forms drawn from fixed
//! per-type pools. Form design:
//!
//! - Every form couples shared family-name tokens (used by all three types)
//!   with a type-marking token: given names for persons, corporate suffixes
//!   for organizations, geographic suffixes for locations. Types stay
//!   perfectly learnable from the marker while representations of different
//!   types remain correlated, and an unseen form's tokens are anchored by
//!   mentions of other forms.
//! - No form's token sequence ever occurs in a sentence except as a gold
//!   mention (no shorter form hides inside a longer one), so a gazetteer
//!   built from any subset of the forms annotates with perfect precision.
//! - Templates interleave entities of different types and vary the words
//!   adjacent to each slot, and a fraction of the entity slots instead hold
//!   a run of marker and family-name tokens ("Alice Keller Corp"): entity-
//!   shaped phrases that are never entities, occupying the very frames
//!   entities appear in, the way real text mixes capitalized non-entity
//!   phrases among true mentions.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, LabeledSpan, Provenance, Split};

/// Shared family names: they appear inside forms of all three types, so a
/// mention of any type anchors them.
const SHARED: [&str; 8] = [
    "Keller", "Larsen", "Moreno", "Novak", "Okafor", "Petrov", "Quinn", "Rossi",
];
/// Person type markers (always the first token of a person form).
const PER_FIRST: [&str; 8] = [
    "Alice", "Bruno", "Carla", "Dmitri", "Elena", "Farid", "Greta", "Hiro",
];
/// Organization type markers (always the last token); short forms use the
/// first pair, three-token forms the second, so no form hides in another.
const ORG_SUFFIX_SHORT: [&str; 2] = ["Corp", "Labs"];
const ORG_SUFFIX_LONG: [&str; 2] = ["Group", "Bank"];
/// Location type markers (always the last token), split the same way.
const LOC_SUFFIX_SHORT: [&str; 2] = ["Harbor", "Valley"];
const LOC_SUFFIX_LONG: [&str; 2] = ["Springs", "Heights"];

/// Slot in a sentence template. Entity slots fill with a gold mention most
/// of the time and with a run phrase otherwise, in the very same frame.
#[derive(Clone, Copy)]
enum Piece {
    Word(&'static str),
    Per,
    Loc,
    Org,
}

use Piece::{Loc, Org, Per, Word};

/// Fraction of entity slots that hold a run phrase instead of a mention.
const RUN_RATE: f64 = 0.3;

macro_rules! words {
    ($($w:literal)+) => { &[$(Word($w)),+] };
}

const TEMPLATES: [&[Piece]; 16] = [
    &[Word("analysts"), Word("at"), Org, Word("said"), Per, Word(".")],
    &[Per, Word("met"), Per, Word("near"), Loc, Word(".")],
    &[Org, Word("says"), Per, Word("left"), Loc, Word(".")],
    &[Word("reports"), Word("from"), Loc, Word("mention"), Org, Word(".")],
    &[Org, Word("opened"), Word("offices"), Word("at"), Loc, Word(".")],
    &[Word("a"), Word("spokesman"), Word("for"), Org, Word("thanked"), Per, Word(".")],
    &[Per, Word("argued"), Word("that"), Org, Word("overstated"), Word("growth"), Word(".")],
    &[Word("residents"), Word("of"), Loc, Word("welcomed"), Per, Word(".")],
    &[Word("the"), Word("board"), Word("of"), Org, Word("promoted"), Per, Word(".")],
    &[Per, Word("traveled"), Word("from"), Loc, Word("to"), Loc, Word(".")],
    &[Word("critics"), Word("said"), Org, Word("ignored"), Per, Word(".")],
    &[Word("during"), Word("the"), Word("review"), Per, Word("praised"), Loc, Word(".")],
    &[Org, Word("and"), Org, Word("announced"), Word("an"), Word("accord"), Word(".")],
    words!("the" "market" "closed" "higher" "today" "."),
    words!("trading" "volume" "stayed" "flat" "this" "week" "."),
    &[Word("officials"), Word("toured"), Loc, Word("with"), Per, Word("on"), Word("monday"), Word(".")],
];

fn per_forms() -> Vec<Vec<&'static str>> {
    let mut forms = Vec::with_capacity(16);
    for i in 0..4 {
        forms.push(vec![PER_FIRST[i], SHARED[i]]);
        forms.push(vec![PER_FIRST[i], SHARED[(i + 3) % 8]]);
    }
    for i in 4..8 {
        forms.push(vec![PER_FIRST[i], SHARED[i], SHARED[(i + 1) % 8]]);
        forms.push(vec![PER_FIRST[i], SHARED[(i + 5) % 8], SHARED[(i + 2) % 8]]);
    }
    forms
}

fn org_forms() -> Vec<Vec<&'static str>> {
    let mut forms = Vec::with_capacity(16);
    for i in 0..8 {
        forms.push(vec![SHARED[i], ORG_SUFFIX_SHORT[i % 2]]);
        forms.push(vec![SHARED[i], SHARED[(i + 2) % 8], ORG_SUFFIX_LONG[i % 2]]);
    }
    forms
}

fn loc_forms() -> Vec<Vec<&'static str>> {
    let mut forms = Vec::with_capacity(16);
    for i in 0..8 {
        forms.push(vec![SHARED[i], LOC_SUFFIX_SHORT[(i + 1) % 2]]);
        forms.push(vec![
            SHARED[i],
            SHARED[(i + 5) % 8],
            LOC_SUFFIX_LONG[(i + 1) % 2],
        ]);
    }
    forms
}

/// Tokens eligible for run phrases: the shared family names plus the type
/// markers of every type.
fn run_inventory() -> Vec<&'static str> {
    let mut inv: Vec<&'static str> = Vec::new();
    inv.extend(SHARED);
    inv.extend(PER_FIRST);
    inv.extend(ORG_SUFFIX_SHORT);
    inv.extend(ORG_SUFFIX_LONG);
    inv.extend(LOC_SUFFIX_SHORT);
    inv.extend(LOC_SUFFIX_LONG);
    inv
}

/// Samples a run of `n` distinct inventory tokens containing no complete
/// entity form as a contiguous subsequence (so gazetteer matching can never
/// fire inside a run).
fn sample_run(
    rng: &mut ChaCha8Rng,
    n: usize,
    inventory: &[&'static str],
    forms: &BTreeSet<Vec<&'static str>>,
) -> Vec<&'static str> {
    'outer: loop {
        let picks: Vec<&'static str> = rand::seq::index::sample(rng, inventory.len(), n)
            .into_iter()
            .map(|i| inventory[i])
            .collect();
        for w in 2..=3.min(n) {
            for start in 0..=n - w {
                if forms.contains(&picks[start..start + w].to_vec()) {
                    continue 'outer;
                }
            }
        }
        return picks;
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub sentences: usize,
    pub seed: u64,
    pub split: Split,
}

impl SynthConfig {
    pub fn new(sentences: usize, seed: u64) -> Self {
        SynthConfig {
            sentences,
            seed,
            split: Split::Train,
        }
    }
}

/// Generates a gold-annotated corpus; the same seed gives the same corpus.
pub fn generate(config: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pools = [per_forms(), loc_forms(), org_forms()];
    let labels = ["PER", "LOC", "ORG"];
    let form_set: BTreeSet<Vec<&'static str>> = pools.iter().flatten().cloned().collect();
    let inventory = run_inventory();

    let mut corpus = Corpus::new(config.split);
    for _ in 0..config.sentences {
        let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
        let mut tokens: Vec<String> = Vec::new();
        let mut spans: Vec<(usize, usize, &str)> = Vec::new();
        for piece in template {
            match piece {
                Word(w) => tokens.push(w.to_string()),
                Per | Loc | Org => {
                    if rng.gen_bool(RUN_RATE) {
                        // Entity-shaped run phrase in the entity's own frame.
                        let len = if rng.gen_bool(0.6) { 2 } else { 3 };
                        for token in sample_run(&mut rng, len, &inventory, &form_set) {
                            tokens.push(token.to_string());
                        }
                    } else {
                        let type_idx = match piece {
                            Per => 0,
                            Loc => 1,
                            _ => 2,
                        };
                        let pool = &pools[type_idx];
                        let form = &pool[rng.gen_range(0..pool.len())];
                        let start = tokens.len();
                        tokens.extend(form.iter().map(|t| t.to_string()));
                        spans.push((start, tokens.len() - 1, labels[type_idx]));
                    }
                }
            }
        }
        let id = corpus.push_sentence(tokens).expect("templates are non-empty");
        for (start, end, label) in spans {
            corpus
                .add_annotation(id, LabeledSpan::new(start, end, label, Provenance::Gold))
                .expect("template spans are in bounds and non-overlapping");
        }
    }
    corpus
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded_and_sized() {
        let a = generate(&SynthConfig::new(40, 5));
        let b = generate(&SynthConfig::new(40, 5));
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
        let c = generate(&SynthConfig::new(40, 6));
        assert_ne!(a, c);
    }

    #[test]
    fn vocabulary_stays_small_and_types_fixed() {
        let corpus = generate(&SynthConfig::new(500, 1));
        let vocab: BTreeSet<&str> = corpus
            .sentences()
            .iter()
            .flat_map(|s| s.tokens.iter().map(String::as_str))
            .collect();
        assert!(vocab.len() <= 300, "vocab {}", vocab.len());
        assert_eq!(corpus.entity_labels(None), vec!["LOC", "ORG", "PER"]);
    }

    #[test]
    fn forms_are_type_unique_and_subsequence_free() {
        let mut seen: BTreeSet<Vec<&str>> = BTreeSet::new();
        let pools = [per_forms(), loc_forms(), org_forms()];
        for pool in &pools {
            assert_eq!(pool.len(), 16);
            for form in pool {
                assert!((2..=3).contains(&form.len()));
                assert!(seen.insert(form.clone()), "duplicate form {form:?}");
            }
        }
        // No form occurs as a contiguous subsequence of a different form.
        let all: Vec<Vec<&str>> = pools.iter().flatten().cloned().collect();
        for a in &all {
            for b in &all {
                if a == b || a.len() >= b.len() {
                    continue;
                }
                for start in 0..=b.len() - a.len() {
                    assert_ne!(
                        &b[start..start + a.len()],
                        a.as_slice(),
                        "form {a:?} hides inside {b:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn forms_never_occur_outside_gold_mentions() {
        // The textual-disjointness guarantee behind perfect gazetteer
        // precision: scan every sentence for every form; each hit must be a
        // gold mention.
        let corpus = generate(&SynthConfig::new(200, 3));
        let mut all_forms: Vec<(Vec<&str>, &str)> = Vec::new();
        for form in per_forms() {
            all_forms.push((form, "PER"));
        }
        for form in loc_forms() {
            all_forms.push((form, "LOC"));
        }
        for form in org_forms() {
            all_forms.push((form, "ORG"));
        }
        for sentence in corpus.sentences() {
            let gold: BTreeSet<(usize, usize, String)> = corpus
                .annotations(sentence.id)
                .iter()
                .map(|s| (s.start, s.end, s.label.clone()))
                .collect();
            for (form, label) in &all_forms {
                let w = form.len();
                if sentence.len() < w {
                    continue;
                }
                for start in 0..=sentence.len() - w {
                    let window: Vec<&str> = sentence.tokens[start..start + w]
                        .iter()
                        .map(String::as_str)
                        .collect();
                    if window == *form {
                        assert!(
                            gold.contains(&(start, start + w - 1, label.to_string())),
                            "form {form:?} at {start} in sentence {} is not gold",
                            sentence.id
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn most_sentences_carry_entities() {
        let corpus = generate(&SynthConfig::new(300, 9));
        let with_entities = corpus
            .sentences()
            .iter()
            .filter(|s| !corpus.annotations(s.id).is_empty())
            .count();
        assert!(with_entities as f64 / 300.0 > 0.7);
        // Mentions average at least one per sentence.
        assert!(corpus.total_annotations(None) >= 300);
    }
}
