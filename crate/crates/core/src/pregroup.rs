//! Pregroup types, cup reduction and chunk typing.
//!
//! Types are sequences of atoms over the bases `n` and `s`, each optionally
//! carrying a single left or right adjoint. Adjacent pairs `x · x^r` and
//! `x^l · x` contract to the unit.
//!
//! Reduction is not confluent in general: `n^l n n^r` reduces to either
//! `n^r` or `n^l`. [`reduce`] therefore computes a canonical normal form. It
//! keeps a lone `s` whenever some elimination order reaches one, and
//! otherwise performs the maximum number of contractions, preferring to
//! cancel the leftmost atom first.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::{Chunk, Level, Token};

pub const DEFAULT_LEXICON: &str = include_str!("../data/lexicon-v1.jsonl");

/// Label of the token appended by [`synthesize_s`].
pub const SYNTHETIC_S: &str = "<S>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Base {
    N,
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Adjoint {
    Left,
    None,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub base: Base,
    pub adjoint: Adjoint,
}

impl Atom {
    pub const N: Atom = Atom::plain(Base::N);
    pub const S: Atom = Atom::plain(Base::S);

    pub const fn plain(base: Base) -> Self {
        Atom {
            base,
            adjoint: Adjoint::None,
        }
    }

    pub const fn left(base: Base) -> Self {
        Atom {
            base,
            adjoint: Adjoint::Left,
        }
    }

    pub const fn right(base: Base) -> Self {
        Atom {
            base,
            adjoint: Adjoint::Right,
        }
    }

    /// `self · other` contracts to the unit.
    pub fn cups_with(self, other: Atom) -> bool {
        self.base == other.base
            && matches!(
                (self.adjoint, other.adjoint),
                (Adjoint::None, Adjoint::Right) | (Adjoint::Left, Adjoint::None)
            )
    }

    pub fn is_plain_s(self) -> bool {
        self == Atom::S
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = match self.base {
            Base::N => "n",
            Base::S => "s",
        };
        match self.adjoint {
            Adjoint::None => f.write_str(b),
            Adjoint::Left => write!(f, "{b}^l"),
            Adjoint::Right => write!(f, "{b}^r"),
        }
    }
}

impl FromStr for Atom {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (b, adj) = match s.split_once('^') {
            None => (s, Adjoint::None),
            Some((b, "l")) => (b, Adjoint::Left),
            Some((b, "r")) => (b, Adjoint::Right),
            Some(_) => return Err(Error::BadType(s.to_string())),
        };
        let base = match b {
            "n" => Base::N,
            "s" => Base::S,
            _ => return Err(Error::BadType(s.to_string())),
        };
        Ok(Atom { base, adjoint: adj })
    }
}

/// An ordered product of atoms; the empty product is the unit `I`.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct PregroupType(pub Vec<Atom>);

impl PregroupType {
    pub fn unit() -> Self {
        PregroupType(Vec::new())
    }

    pub fn sentence() -> Self {
        PregroupType(vec![Atom::S])
    }

    pub fn is_unit(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_sentence(&self) -> bool {
        self.0 == [Atom::S]
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat<'a>(types: impl IntoIterator<Item = &'a PregroupType>) -> PregroupType {
        PregroupType(types.into_iter().flat_map(|t| t.0.iter().copied()).collect())
    }
}

impl fmt::Display for PregroupType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("I");
        }
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl FromStr for PregroupType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "I" || s.is_empty() {
            return Ok(PregroupType::unit());
        }
        s.split_whitespace()
            .map(Atom::from_str)
            .collect::<Result<Vec<_>>>()
            .map(PregroupType)
    }
}

impl From<PregroupType> for String {
    fn from(t: PregroupType) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for PregroupType {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Outcome of reducing an atom sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reduction {
    pub normal_form: PregroupType,
    /// Contracted pairs as positions in the input sequence, left < right.
    pub cups: Vec<(usize, usize)>,
    /// Input positions of the surviving atoms, in order.
    pub kept: Vec<usize>,
}

/// `full[i][j]`: the half-open range `i..j` contracts to the unit.
fn cancel_table(atoms: &[Atom]) -> Vec<Vec<bool>> {
    let n = atoms.len();
    let mut full = vec![vec![false; n + 1]; n + 1];
    for (i, row) in full.iter_mut().enumerate() {
        row[i] = true;
    }
    for len in (2..=n).step_by(2) {
        for i in 0..=n - len {
            let j = i + len;
            full[i][j] = (i + 1..j)
                .step_by(2)
                .any(|k| atoms[i].cups_with(atoms[k]) && full[i + 1][k] && full[k + 1][j]);
        }
    }
    full
}

/// Records the cups of a range known to contract fully.
fn collect_full(atoms: &[Atom], full: &[Vec<bool>], i: usize, j: usize, cups: &mut Vec<(usize, usize)>) {
    if i >= j {
        return;
    }
    let k = (i + 1..j)
        .step_by(2)
        .find(|&k| atoms[i].cups_with(atoms[k]) && full[i + 1][k] && full[k + 1][j])
        .expect("range contracts");
    cups.push((i, k));
    collect_full(atoms, full, i + 1, k, cups);
    collect_full(atoms, full, k + 1, j, cups);
}

/// Canonical cup reduction; see the module docs for the choice of normal
/// form.
pub fn reduce(atoms: &[Atom]) -> Reduction {
    let n = atoms.len();
    let full = cancel_table(atoms);

    if let Some(p) = (0..n).find(|&p| atoms[p].is_plain_s() && full[0][p] && full[p + 1][n]) {
        let mut cups = Vec::new();
        collect_full(atoms, &full, 0, p, &mut cups);
        collect_full(atoms, &full, p + 1, n, &mut cups);
        cups.sort_unstable();
        return Reduction {
            normal_form: PregroupType::sentence(),
            cups,
            kept: vec![p],
        };
    }

    // best[i]: maximum contracted pairs within i..n.
    let mut best = vec![0usize; n + 1];
    let mut choice: Vec<Option<usize>> = vec![None; n + 1];
    for i in (0..n).rev() {
        let mut matched: Option<(usize, usize)> = None;
        for k in (i + 1..n).step_by(2) {
            if atoms[i].cups_with(atoms[k]) && full[i + 1][k] {
                let v = 1 + (k - i - 1) / 2 + best[k + 1];
                if matched.is_none_or(|(_, b)| v > b) {
                    matched = Some((k, v));
                }
            }
        }
        match matched {
            Some((k, v)) if v >= best[i + 1] => {
                best[i] = v;
                choice[i] = Some(k);
            }
            _ => best[i] = best[i + 1],
        }
    }

    let mut cups = Vec::new();
    let mut kept = Vec::new();
    let mut i = 0;
    while i < n {
        match choice[i] {
            Some(k) => {
                cups.push((i, k));
                collect_full(atoms, &full, i + 1, k, &mut cups);
                i = k + 1;
            }
            None => {
                kept.push(i);
                i += 1;
            }
        }
    }
    cups.sort_unstable();
    Reduction {
        normal_form: PregroupType(kept.iter().map(|&k| atoms[k]).collect()),
        cups,
        kept,
    }
}

/// Label → candidate types, tried in file order.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<PregroupType>>,
    pub source: String,
}

#[derive(Deserialize)]
struct LexiconLine {
    label: String,
    #[serde(rename = "type")]
    ty: String,
}

impl Lexicon {
    /// JSON Lines `{label, type}`; repeated labels add further candidates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<PregroupType>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let raw: LexiconLine = serde_json::from_str(line).map_err(|e| Error::BadRule {
                line: i + 1,
                reason: e.to_string(),
            })?;
            let ty: PregroupType = raw.ty.parse()?;
            entries.entry(raw.label).or_default().push(ty);
        }
        Ok(Lexicon {
            entries,
            source: text.to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn default_lexicon() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn insert(&mut self, label: &str, ty: PregroupType) {
        self.entries.entry(label.to_string()).or_default().push(ty);
    }

    /// Lexicon candidates, or the part-of-speech defaults for unknown labels.
    pub fn candidates(&self, token: &Token) -> Vec<PregroupType> {
        if let Some(c) = self.entries.get(&token.label) {
            return c.clone();
        }
        default_types(token)
    }
}

fn t(s: &str) -> PregroupType {
    s.parse().expect("static type")
}

/// Part-of-speech guess for labels missing from the lexicon. The first
/// candidate is the primary reading: `n` for noun-like words, `n^r s n^l`
/// for verb-like words and `n n^l` for modifiers.
pub fn default_types(token: &Token) -> Vec<PregroupType> {
    let w = token.label.as_str();
    let tagged = token.level_applied != Level::None;
    if !tagged && w.len() > 3 && w.ends_with("ed") {
        return vec![t("n^r s n^l"), t("n^r s")];
    }
    const MODIFIER_SUFFIXES: &[&str] = &[
        "ly", "al", "ive", "ous", "ful", "able", "ible", "ic", "ary", "less", "est",
    ];
    if !tagged && w.len() > 3 && MODIFIER_SUFFIXES.iter().any(|s| w.ends_with(s)) {
        return vec![t("n n^l"), t("n"), t("s^r s")];
    }
    vec![t("n"), t("n n^l")]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedChunk {
    pub chunk: Chunk,
    pub types: Vec<PregroupType>,
    pub reduced: PregroupType,
    pub valid: bool,
    /// Contracted atom pairs, indices into the concatenated word types.
    pub cups: Vec<(usize, usize)>,
    /// Concatenated-atom index of the surviving sentence wire.
    pub out_atom: Option<usize>,
    /// Words before the synthetic sentence token contract to a scalar.
    #[serde(default)]
    pub synthetic: bool,
}

impl TypedChunk {
    pub fn from_types(chunk: Chunk, types: Vec<PregroupType>) -> Self {
        let atoms = PregroupType::concat(&types);
        let red = reduce(atoms.atoms());
        let valid = red.normal_form.is_sentence();
        TypedChunk {
            chunk,
            types,
            out_atom: valid.then(|| red.kept[0]),
            reduced: red.normal_form,
            valid,
            cups: red.cups,
            synthetic: false,
        }
    }

    /// `reduced` type signature of the word types, e.g. `n · n^r s`.
    pub fn signature(&self) -> String {
        self.types
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" · ")
    }
}

const MAX_TYPINGS: usize = 4096;

/// Types every token of `chunk`. All combinations of lexicon candidates are
/// tried in order and the first one reducing to `s` wins; when none does,
/// each token takes its first candidate.
pub fn assign_types(chunk: &Chunk, lexicon: &Lexicon) -> TypedChunk {
    let cands: Vec<Vec<PregroupType>> = chunk.tokens.iter().map(|t| lexicon.candidates(t)).collect();
    let total = cands
        .iter()
        .try_fold(1usize, |acc, c| acc.checked_mul(c.len().max(1)))
        .unwrap_or(usize::MAX);

    if total <= MAX_TYPINGS {
        let mut idx = vec![0usize; cands.len()];
        loop {
            let types: Vec<PregroupType> =
                idx.iter().zip(&cands).map(|(&i, c)| c[i].clone()).collect();
            let atoms = PregroupType::concat(&types);
            let red = reduce(atoms.atoms());
            if red.normal_form.is_sentence() {
                return TypedChunk::from_types(chunk.clone(), types);
            }
            // Odometer, last token fastest.
            let mut pos = idx.len();
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < cands[pos].len() {
                    break;
                }
                idx[pos] = 0;
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX || idx.is_empty() {
                break;
            }
        }
    }
    let types = cands.iter().map(|c| c[0].clone()).collect();
    TypedChunk::from_types(chunk.clone(), types)
}

/// Gives an I-typed chunk a sentence wire by appending a synthetic `s` token.
/// The original words contract to a scalar and drop out of the circuit.
pub fn synthesize_s(tc: &TypedChunk) -> Result<TypedChunk> {
    if !tc.reduced.is_unit() {
        return Err(Error::InvalidInput(format!(
            "synthesize_s needs a chunk reducing to I, got `{}`",
            tc.reduced
        )));
    }
    let mut out = tc.clone();
    let end = tc.chunk.words().1;
    out.chunk.tokens.push(Token {
        surface: String::new(),
        label: SYNTHETIC_S.to_string(),
        level_applied: Level::None,
        break_after: false,
        words: (end, end),
    });
    out.types.push(PregroupType::sentence());
    out.out_atom = Some(PregroupType::concat(&tc.types).len());
    out.reduced = PregroupType::sentence();
    out.valid = true;
    out.synthetic = true;
    Ok(out)
}

/// Types a chunk and repairs I-typed ones; the result may still be invalid.
pub fn type_chunk(chunk: &Chunk, lexicon: &Lexicon) -> TypedChunk {
    let tc = assign_types(chunk, lexicon);
    if tc.reduced.is_unit() {
        synthesize_s(&tc).expect("unit-typed chunk")
    } else {
        tc
    }
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::*;
    use std::collections::BTreeSet;

    /// Every irreducible form reachable by deleting adjacent cup pairs in
    /// any order.
    pub fn all_normal_forms(atoms: &[Atom]) -> BTreeSet<Vec<Atom>> {
        let mut seen = BTreeSet::new();
        let mut out = BTreeSet::new();
        walk(atoms.to_vec(), &mut seen, &mut out);
        out
    }

    fn walk(seq: Vec<Atom>, seen: &mut BTreeSet<Vec<Atom>>, out: &mut BTreeSet<Vec<Atom>>) {
        if !seen.insert(seq.clone()) {
            return;
        }
        let mut reducible = false;
        for i in 0..seq.len().saturating_sub(1) {
            if seq[i].cups_with(seq[i + 1]) {
                reducible = true;
                let mut next = seq.clone();
                next.drain(i..i + 2);
                walk(next, seen, out);
            }
        }
        if !reducible {
            out.insert(seq);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::{tokenize, Chunk};
    use proptest::prelude::*;

    fn ty(s: &str) -> PregroupType {
        s.parse().unwrap()
    }

    fn chunk(words: &str) -> Chunk {
        let tokens = tokenize(words);
        let n = tokens.len();
        Chunk {
            tokens,
            span: (0, n),
            boundary_rule: None,
        }
    }

    fn lexicon() -> Lexicon {
        let mut lx = Lexicon::default();
        lx.insert("company", ty("n"));
        lx.insert("profits", ty("n"));
        lx.insert("increased", ty("n^r s n^l"));
        lx
    }

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["n", "n^r s n^l", "s^l", "I"] {
            assert_eq!(ty(s).to_string(), s);
        }
        assert!("n^x".parse::<PregroupType>().is_err());
        assert!("q".parse::<PregroupType>().is_err());
        assert!("n^l^l".parse::<PregroupType>().is_err());
    }

    #[test]
    fn transitive_sentence_reduces_to_s() {
        let atoms = PregroupType::concat(&[ty("n"), ty("n^r s n^l"), ty("n")]);
        let r = reduce(atoms.atoms());
        assert_eq!(r.normal_form, ty("s"));
        assert_eq!(r.cups, vec![(0, 1), (3, 4)]);
        assert_eq!(r.kept, vec![2]);
    }

    #[test]
    fn single_cup_gives_unit_and_s_is_fixed() {
        assert!(reduce(ty("n n^r").atoms()).normal_form.is_unit());
        assert_eq!(reduce(ty("s").atoms()).normal_form, ty("s"));
    }

    #[test]
    fn non_confluent_sequence_gets_leftmost_normal_form() {
        let atoms = ty("n^l n n^r");
        let forms = oracle::all_normal_forms(atoms.atoms());
        assert_eq!(forms.len(), 2, "two distinct normal forms exist");
        assert_eq!(reduce(atoms.atoms()).normal_form, ty("n^r"));
    }

    #[test]
    fn s_is_preferred_when_reachable() {
        // n n^l n n^r s: greedy (n, n^r) first would strand `n n^l s`.
        let r = reduce(ty("n n^l n n^r s").atoms());
        assert_eq!(r.normal_form, ty("s"));
    }

    #[test]
    fn fig1_chunk_types_and_validity() {
        let tc = assign_types(&chunk("company increased profits"), &lexicon());
        assert_eq!(tc.types, vec![ty("n"), ty("n^r s n^l"), ty("n")]);
        assert_eq!(tc.reduced, ty("s"));
        assert!(tc.valid);
        assert_eq!(tc.out_atom, Some(2));
    }

    #[test]
    fn bare_noun_chunk_is_invalid() {
        let tc = assign_types(&chunk("company"), &lexicon());
        assert_eq!(tc.reduced, ty("n"));
        assert!(!tc.valid);
    }

    #[test]
    fn verb_object_chunk_is_invalid() {
        let tc = assign_types(&chunk("increased profits"), &Lexicon::default_lexicon());
        assert_eq!(tc.reduced, ty("n^r s"));
        assert!(!tc.valid);
        let forms = oracle::all_normal_forms(PregroupType::concat(&tc.types).atoms());
        assert!(forms.contains(&ty("n^r s").0));
    }

    #[test]
    fn alternative_candidates_are_searched() {
        // Intransitive reading of the verb is the second candidate.
        let mut lx = lexicon();
        lx.insert("rose", ty("n^r s n^l"));
        lx.insert("rose", ty("n^r s"));
        let tc = assign_types(&chunk("profits rose"), &lx);
        assert!(tc.valid);
        assert_eq!(tc.types[1], ty("n^r s"));
    }

    #[test]
    fn synthesize_s_repairs_unit_chunks_only() {
        let mut lx = Lexicon::default();
        lx.insert("x", ty("n"));
        lx.insert("y", ty("n^r"));
        let tc = assign_types(&chunk("x y"), &lx);
        assert!(tc.reduced.is_unit() && !tc.valid);
        let fixed = synthesize_s(&tc).unwrap();
        assert!(fixed.valid && fixed.synthetic);
        assert_eq!(fixed.chunk.tokens.last().unwrap().label, SYNTHETIC_S);
        assert_eq!(fixed.out_atom, Some(2));

        let s_chunk = assign_types(&chunk("company increased profits"), &lexicon());
        assert!(matches!(synthesize_s(&s_chunk), Err(Error::InvalidInput(_))));
        let n_chunk = assign_types(&chunk("company"), &lexicon());
        assert!(matches!(synthesize_s(&n_chunk), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn default_lexicon_types_finance_clauses() {
        let b = crate::textprep::RuleBundle::default_bundle();
        let lx = Lexicon::default_lexicon();
        for text in [
            "The company increased profits",
            "Net sales rose 5 %",
            "profits are expected to rise",
            "However, operating profit fell",
            "The company announced the agreement",
        ] {
            let (_, chunks) = crate::textprep::preprocess(text, &b).unwrap();
            assert_eq!(chunks.len(), 1, "{text}");
            let tc = assign_types(&chunks[0], &lx);
            assert!(tc.valid, "{text}: {}", tc.signature());
        }
    }

    fn arb_atom() -> impl Strategy<Value = Atom> {
        (0..2u8, 0..3u8).prop_map(|(b, a)| Atom {
            base: if b == 0 { Base::N } else { Base::S },
            adjoint: [Adjoint::Left, Adjoint::None, Adjoint::Right][a as usize],
        })
    }

    proptest! {
        #[test]
        fn reduce_is_reachable_minimal_and_finds_s(atoms in prop::collection::vec(arb_atom(), 0..=8)) {
            let r = reduce(&atoms);
            let forms = oracle::all_normal_forms(&atoms);
            prop_assert!(forms.contains(&r.normal_form.0));
            let min = forms.iter().map(Vec::len).min().unwrap();
            prop_assert_eq!(r.normal_form.len(), min);
            if forms.contains(&vec![Atom::S]) {
                prop_assert!(r.normal_form.is_sentence());
            }
            prop_assert!(r.normal_form.len() <= atoms.len());
            prop_assert_eq!(r.cups.len() * 2 + r.kept.len(), atoms.len());
            for &(i, j) in &r.cups {
                prop_assert!(atoms[i].cups_with(atoms[j]));
            }
        }
    }
}
