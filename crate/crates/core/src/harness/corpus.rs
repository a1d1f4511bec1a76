//! TSV corpora and stratified splitting.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub sentences: Vec<(String, usize)>,
    pub provenance: String,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for (_, y) in &self.sentences {
            c[*y] += 1;
        }
        c
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (text, y) in &self.sentences {
            let _ = writeln!(s, "{text}\t{y}");
        }
        s
    }
}

/// Parses `sentence<TAB>label` lines; blank lines are skipped.
pub fn parse_corpus(text: &str, provenance: &str) -> Result<Corpus> {
    let path = std::path::PathBuf::from(provenance);
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: path.clone(),
            line: i + 1,
            reason,
        };
        let (sent, label) = line
            .rsplit_once('\t')
            .ok_or_else(|| err("expected `sentence<TAB>label`".into()))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| err(format!("label `{}` is not an integer", label.trim())))?;
        if label >= NUM_CLASSES {
            return Err(err(format!("label {label} out of range 0..{NUM_CLASSES}")));
        }
        if sent.trim().is_empty() {
            return Err(err("empty sentence".into()));
        }
        sentences.push((sent.trim().to_string(), label));
    }
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus(path));
    }
    Ok(Corpus {
        sentences,
        provenance: provenance.to_string(),
    })
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [0.64, 0.16, 0.20],
            seed: 0,
            stratified: true,
        }
    }
}

pub const MIN_PER_CLASS: usize = 5;

/// Largest-remainder apportionment of `n` by `ratios`; ties go to the
/// earlier split.
pub fn apportion(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let raw = ratios.map(|r| r * n as f64);
    let mut out = raw.map(|v| v.floor() as usize);
    let mut left = n - out.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[k] += 1;
        left -= 1;
    }
    out
}

/// Per-class shuffled split; each split keeps corpus order.
pub fn stratified_split(c: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus, Corpus)> {
    let sum: f64 = spec.ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || spec.ratios.iter().any(|r| *r < 0.0) {
        return Err(Error::Config(format!("split ratios {:?} must sum to 1", spec.ratios)));
    }
    let counts = c.class_counts();
    if spec.stratified {
        for (class, &count) in counts.iter().enumerate() {
            if count < MIN_PER_CLASS {
                return Err(Error::TooFewPerClass {
                    class,
                    count,
                    needed: MIN_PER_CLASS,
                });
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut assign = vec![0usize; c.len()];
    let groups: Vec<Vec<usize>> = if spec.stratified {
        (0..NUM_CLASSES)
            .map(|k| (0..c.len()).filter(|&i| c.sentences[i].1 == k).collect())
            .collect()
    } else {
        vec![(0..c.len()).collect()]
    };
    for mut idx in groups {
        idx.shuffle(&mut rng);
        let sizes = apportion(idx.len(), &spec.ratios);
        for (pos, &i) in idx.iter().enumerate() {
            assign[i] = if pos < sizes[0] {
                0
            } else if pos < sizes[0] + sizes[1] {
                1
            } else {
                2
            };
        }
    }
    let part = |k: usize, name: &str| Corpus {
        sentences: (0..c.len())
            .filter(|&i| assign[i] == k)
            .map(|i| c.sentences[i].clone())
            .collect(),
        provenance: format!("{}#{name}", c.provenance),
    };
    Ok((part(0, "train"), part(1, "dev"), part(2, "test")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(counts: [usize; 3]) -> Corpus {
        let mut s = Vec::new();
        for (k, &n) in counts.iter().enumerate() {
            for i in 0..n {
                s.push((format!("sentence {k} {i}"), k));
            }
        }
        Corpus {
            sentences: s,
            provenance: "mem".into(),
        }
    }

    #[test]
    fn parse_cases() {
        let c = parse_corpus("a\t0\nb\t1\n\nc\t2\n", "x").unwrap();
        assert_eq!(c.len(), 3);
        match parse_corpus("a\t0\nb\t4\n", "x") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_corpus("no tab\n", "x"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_corpus("\n\n", "x"), Err(Error::EmptyCorpus(_))));
    }

    #[test]
    fn table_one_class_zero_counts() {
        assert_eq!(apportion(303, &[0.64, 0.16, 0.2]), [194, 48, 61]);
        assert_eq!(apportion(570, &[0.64, 0.16, 0.2]), [365, 91, 114]);
    }

    #[test]
    fn split_is_disjoint_cover_and_seed_dependent() {
        let c = corpus([30, 50, 20]);
        let spec = SplitSpec::default();
        let (a, b, t) = stratified_split(&c, &spec).unwrap();
        assert_eq!(a.len() + b.len() + t.len(), c.len());
        let mut all: Vec<_> = a.sentences.iter().chain(&b.sentences).chain(&t.sentences).cloned().collect();
        all.sort();
        let mut orig = c.sentences.clone();
        orig.sort();
        assert_eq!(all, orig);
        let (a2, _, _) = stratified_split(&c, &SplitSpec { seed: 99, ..spec }).unwrap();
        assert_ne!(a.sentences, a2.sentences);
        assert_eq!(a.class_counts(), a2.class_counts());
        let (a3, _, _) = stratified_split(&c, &spec).unwrap();
        assert_eq!(a, a3);
    }

    #[test]
    fn too_few_per_class() {
        let c = corpus([10, 0, 0]);
        assert!(matches!(
            stratified_split(&c, &SplitSpec::default()),
            Err(Error::TooFewPerClass { class: 1, .. })
        ));
    }
}
