//! Template-generated corpora with controllable chunk structure.
//!
//! Labels follow the three-class sentiment convention: 0 negative,
//! 1 neutral, 2 positive.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthMode {
    /// Class set by the clause's verb: downward, reporting or upward.
    Separable,
    /// Two clauses `A; B` with upward or downward verbs. Up-then-down is
    /// positive, down-then-up negative, equal directions neutral.
    OrderSensitive,
}

impl std::str::FromStr for SynthMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "separable" => Ok(SynthMode::Separable),
            "order-sensitive" => Ok(SynthMode::OrderSensitive),
            _ => Err(crate::Error::Config(format!("unknown synthetic mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub mode: SynthMode,
    pub n: usize,
    pub seed: u64,
}

const SUBJECTS: &[&str] = &[
    "The company",
    "The group",
    "The firm",
    "Its unit",
    "The bank",
    "The insurer",
    "The retailer",
    "Our division",
];
const METRICS: &[&str] = &[
    "net sales",
    "operating profit",
    "revenue",
    "earnings",
    "margins",
    "orders",
    "gross margin",
    "income",
];
const UP: &[&str] = &["increased", "raised", "improved", "boosted", "grew", "gained"];
const UP_INTRANS: &[&str] = &["rose", "climbed", "jumped", "surged", "grew", "improved"];
const DOWN: &[&str] = &["decreased", "cut", "missed", "worsened", "weakened", "lost"];
const DOWN_INTRANS: &[&str] = &["fell", "declined", "dropped", "slumped", "plunged", "sank"];
const REPORT: &[&str] = &["announced", "reported", "published", "disclosed", "signed", "stated"];
const REPORT_OBJECTS: &[&str] = &["the agreement", "the results", "the contract", "the plan", "the deal", "the figures"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty list")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn separable(rng: &mut ChaCha8Rng, label: usize) -> String {
    let clause = match (label, rng.gen_range(0..2)) {
        (1, _) => format!("{} {} {}", pick(rng, SUBJECTS), pick(rng, REPORT), pick(rng, REPORT_OBJECTS)),
        (2, 0) => format!("{} {} {}", pick(rng, SUBJECTS), pick(rng, UP), pick(rng, METRICS)),
        (2, _) => format!("{} {}", capitalize(pick(rng, METRICS)), pick(rng, UP_INTRANS)),
        (_, 0) => format!("{} {} {}", pick(rng, SUBJECTS), pick(rng, DOWN), pick(rng, METRICS)),
        (_, _) => format!("{} {}", capitalize(pick(rng, METRICS)), pick(rng, DOWN_INTRANS)),
    };
    format!("{clause}.")
}

fn order_sensitive(rng: &mut ChaCha8Rng, label: usize) -> String {
    let (first_up, second_up) = match label {
        2 => (true, false),
        0 => (false, true),
        _ => {
            let up = rng.gen_bool(0.5);
            (up, up)
        }
    };
    let clause = |rng: &mut ChaCha8Rng, up: bool| {
        let m = pick(rng, METRICS);
        let v = pick(rng, if up { UP_INTRANS } else { DOWN_INTRANS });
        format!("{m} {v}")
    };
    let a = clause(rng, first_up);
    let b = clause(rng, second_up);
    format!("{}; {b}.", capitalize(&a))
}

/// Balanced corpus of `n` sentences, labels cycling 0, 1, 2 before a
/// seeded shuffle.
pub fn make_synthetic_corpus(spec: &SynthSpec) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sentences: Vec<(String, usize)> = (0..spec.n)
        .map(|i| {
            let label = i % 3;
            let text = match spec.mode {
                SynthMode::Separable => separable(&mut rng, label),
                SynthMode::OrderSensitive => order_sensitive(&mut rng, label),
            };
            (text, label)
        })
        .collect();
    sentences.shuffle(&mut rng);
    let mode = match spec.mode {
        SynthMode::Separable => "separable",
        SynthMode::OrderSensitive => "order-sensitive",
    };
    Corpus {
        sentences,
        provenance: format!("synthetic:{mode}:n={}:seed={}", spec.n, spec.seed),
    }
}

/// Swaps the two clauses of an order-sensitive sentence.
pub fn swap_clauses(text: &str) -> Option<String> {
    let body = text.trim_end_matches('.');
    let (a, b) = body.split_once("; ")?;
    let lower = |s: &str| {
        let mut c = s.chars();
        c.next()
            .map(|f| f.to_lowercase().chain(c).collect::<String>())
            .unwrap_or_default()
    };
    Some(format!("{}; {}.", capitalize(b), lower(a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pregroup::{type_chunk, Lexicon};
    use crate::textprep::{preprocess, RuleBundle, MAX_CHUNK_LEN};

    #[test]
    fn balanced_counts() {
        let c = make_synthetic_corpus(&SynthSpec {
            mode: SynthMode::Separable,
            n: 300,
            seed: 1,
        });
        assert_eq!(c.class_counts(), [100, 100, 100]);
    }

    #[test]
    fn swapping_clauses_flips_label() {
        let c = make_synthetic_corpus(&SynthSpec {
            mode: SynthMode::OrderSensitive,
            n: 60,
            seed: 2,
        });
        let bundle = RuleBundle::default_bundle();
        for (text, y) in &c.sentences {
            let swapped = swap_clauses(text).unwrap();
            let labels = |t: &str| -> Vec<String> {
                preprocess(t, &bundle).unwrap().1.iter().map(|ch| ch.labels().join(" ")).collect()
            };
            let (a, b) = (labels(text), labels(&swapped));
            assert_eq!(a.len(), 2, "{text}");
            assert_eq!(a[0], b[1]);
            assert_eq!(a[1], b[0]);
            let flipped = 2 - y;
            let direction = |l: &str| l.contains("UP");
            let label_of = |v: &[String]| match (direction(&v[0]), direction(&v[1])) {
                (true, false) => 2,
                (false, true) => 0,
                _ => 1,
            };
            assert_eq!(label_of(&a), *y);
            assert_eq!(label_of(&b), flipped);
        }
    }

    #[test]
    fn generated_sentences_chunk_and_type_cleanly() {
        let bundle = RuleBundle::default_bundle();
        let lx = Lexicon::default_lexicon();
        for mode in [SynthMode::Separable, SynthMode::OrderSensitive] {
            let c = make_synthetic_corpus(&SynthSpec { mode, n: 150, seed: 3 });
            for (text, _) in &c.sentences {
                let (toks, chunks) = preprocess(text, &bundle).unwrap();
                assert_eq!(bundle.rewrite(&toks).unwrap(), toks, "idempotence: {text}");
                let flat: Vec<_> = chunks.iter().flat_map(|ch| ch.tokens.clone()).collect();
                assert_eq!(flat, toks, "partition: {text}");
                for ch in &chunks {
                    assert!(ch.tokens.len() <= MAX_CHUNK_LEN);
                    let tc = type_chunk(ch, &lx);
                    assert!(tc.valid, "{text}: `{}` -> {}", ch.text(), tc.reduced);
                }
            }
        }
    }
}
