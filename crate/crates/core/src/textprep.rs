//! Sentence normalization and chunking.
//!
//! Raw text is split into word tokens, rewritten by a three-level rule bundle
//! (lexical, then phrase, then syntax) and cut into order-preserving chunks of
//! at most [`MAX_CHUNK_LEN`] tokens.
//!
//! Rules match against a token's current label, so phrase rules may refer to
//! tags produced at the lexical level (`COPULA`, `UP`, ...). A rule only sees
//! tokens rewritten at a strictly lower level, which makes a full pass
//! idempotent.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_CHUNK_LEN: usize = 5;

/// Bundled rule set, one JSON object per line.
pub const DEFAULT_RULES: &str = include_str!("../data/rules-v1.jsonl");
/// Sentences every bundle must rewrite without same-level collisions.
pub const COLLISION_CORPUS: &str = include_str!("../data/collision-corpus.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    None,
    Lexical,
    Phrase,
    Syntax,
}

impl Level {
    pub const REWRITE_ORDER: [Level; 3] = [Level::Lexical, Level::Phrase, Level::Syntax];
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Level::None => "none",
            Level::Lexical => "lexical",
            Level::Phrase => "phrase",
            Level::Syntax => "syntax",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub label: String,
    pub level_applied: Level,
    /// Punctuation followed this token in the raw text.
    #[serde(default)]
    pub break_after: bool,
    /// Half-open range of raw word positions covered by this token.
    pub words: (usize, usize),
}

impl Token {
    pub fn new(surface: &str, word: usize) -> Self {
        Token {
            surface: surface.to_string(),
            label: normalize(surface),
            level_applied: Level::None,
            break_after: false,
            words: (word, word + 1),
        }
    }

    pub fn normalized(&self) -> String {
        normalize(&self.surface)
    }

    fn is_capitalized(&self) -> bool {
        self.level_applied == Level::None
            && self.surface.chars().next().is_some_and(char::is_uppercase)
    }
}

pub fn normalize(surface: &str) -> String {
    surface.to_lowercase()
}

const ABBREVIATIONS: &[&str] = &[
    "inc", "ltd", "corp", "co", "plc", "oyj", "mr", "mrs", "ms", "dr", "jr", "vs", "e.g", "i.e",
    "u.s", "no", "st",
];

const CORPORATE_SUFFIXES: &[&str] = &[
    "inc", "inc.", "ltd", "ltd.", "corp", "corp.", "co.", "plc", "oyj", "abp", "ab", "ag", "sa",
    "group", "llc",
];

fn is_url(s: &str) -> bool {
    let l = s.to_ascii_lowercase();
    l.starts_with("http://") || l.starts_with("https://") || l.starts_with("www.")
}

fn is_number(s: &str) -> bool {
    let s = s.strip_prefix(['+', '-']).unwrap_or(s);
    !s.is_empty()
        && s.chars().next().is_some_and(|c| c.is_ascii_digit())
        && s.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',')
}

fn is_symbol_run(s: &str) -> bool {
    s.chars().count() >= 2 && !s.chars().any(char::is_alphanumeric)
}

/// Splits raw text into word tokens. Sentence punctuation is dropped and
/// recorded as `break_after` on the preceding token; URLs and symbol runs
/// stay single tokens; `%` and leading currency signs become their own
/// tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out: Vec<Token> = Vec::new();
    let mut word = 0usize;
    let mut push = |out: &mut Vec<Token>, s: &str| {
        out.push(Token::new(s, word));
        word += 1;
    };
    let mark_break = |out: &mut Vec<Token>| {
        if let Some(last) = out.last_mut() {
            last.break_after = true;
        }
    };

    for piece in text.split_whitespace() {
        if is_url(piece) {
            let core = piece.trim_end_matches(['.', ',', ';', ':', '!', '?', ')']);
            push(&mut out, core);
            if core.len() != piece.len() {
                mark_break(&mut out);
            }
            continue;
        }
        if is_symbol_run(piece) && !piece.chars().all(|c| ".,;:!?".contains(c)) {
            if matches!(piece, "--" | "---") {
                mark_break(&mut out);
            } else {
                push(&mut out, piece);
            }
            continue;
        }

        let mut core = piece;
        // Leading quotes, brackets and currency signs.
        let mut currency = None;
        while let Some(c) = core.chars().next() {
            if "\"'([{`".contains(c) {
                core = &core[c.len_utf8()..];
            } else if "$€£".contains(c) {
                currency = Some(&core[..c.len_utf8()]);
                core = &core[c.len_utf8()..];
            } else {
                break;
            }
        }
        if let Some(sym) = currency {
            push(&mut out, sym);
        }

        // Trailing punctuation.
        let mut brk = false;
        let mut percent = false;
        while let Some(c) = core.chars().last() {
            let head = &core[..core.len() - c.len_utf8()];
            if c == '.' && ABBREVIATIONS.contains(&head.to_lowercase().as_str()) {
                break;
            }
            if ".,;:!?".contains(c) {
                brk = true;
                core = head;
            } else if "\"')]}`".contains(c) {
                core = head;
            } else if c == '%' {
                percent = true;
                core = head;
            } else {
                break;
            }
        }

        if core.is_empty() {
            if percent {
                push(&mut out, "%");
            }
            if brk || matches!(piece, "-" | "–" | "—") {
                mark_break(&mut out);
            }
            continue;
        }
        if matches!(core, "-" | "–" | "—") {
            mark_break(&mut out);
            continue;
        }
        push(&mut out, core);
        if percent {
            push(&mut out, "%");
        }
        if brk {
            mark_break(&mut out);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    /// Any of the listed labels, compared exactly.
    Labels(Vec<String>),
    Number,
    Url,
    Symbols,
}

impl Matcher {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "#num" => Ok(Matcher::Number),
            "#url" => Ok(Matcher::Url),
            "#sym" => Ok(Matcher::Symbols),
            _ if s.starts_with('#') => Err(format!("unknown token class `{s}`")),
            _ => {
                let alts: Vec<String> = s.split('|').map(str::to_string).collect();
                if alts.iter().any(String::is_empty) {
                    return Err(format!("empty alternative in `{s}`"));
                }
                Ok(Matcher::Labels(alts))
            }
        }
    }

    fn matches(&self, tok: &Token) -> bool {
        match self {
            Matcher::Labels(alts) => alts.contains(&tok.label),
            Matcher::Number => tok.level_applied == Level::None && is_number(&tok.surface),
            Matcher::Url => tok.level_applied == Level::None && is_url(&tok.surface),
            Matcher::Symbols => tok.level_applied == Level::None && is_symbol_run(&tok.surface),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteRule {
    pub id: String,
    pub level: Level,
    pub pattern: Vec<Matcher>,
    /// One tag (the matched span merges into a single token) or one tag per
    /// pattern element.
    pub replacement: Vec<String>,
}

#[derive(Deserialize)]
struct RawRule {
    id: String,
    level: Level,
    pattern: Vec<String>,
    replacement: Vec<String>,
}

impl RewriteRule {
    fn from_raw(raw: RawRule) -> std::result::Result<Self, String> {
        if raw.level == Level::None {
            return Err("level must be lexical, phrase or syntax".into());
        }
        if raw.pattern.is_empty() {
            return Err("empty pattern".into());
        }
        if raw.replacement.len() != 1 && raw.replacement.len() != raw.pattern.len() {
            return Err(format!(
                "replacement has {} tags for a {}-element pattern",
                raw.replacement.len(),
                raw.pattern.len()
            ));
        }
        let pattern = raw
            .pattern
            .iter()
            .map(|p| Matcher::parse(p))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(RewriteRule {
            id: raw.id,
            level: raw.level,
            pattern,
            replacement: raw.replacement,
        })
    }

    /// Length of the match starting at `at`, if any.
    fn match_at(&self, tokens: &[Token], at: usize) -> Option<usize> {
        let n = self.pattern.len();
        if at + n > tokens.len() {
            return None;
        }
        let ok = self
            .pattern
            .iter()
            .zip(&tokens[at..at + n])
            .all(|(m, t)| t.level_applied < self.level && m.matches(t));
        ok.then_some(n)
    }
}

#[derive(Debug, Clone)]
pub struct RuleBundle {
    pub rules: Vec<RewriteRule>,
    /// Raw text the bundle was parsed from; hashed into run reports.
    pub source: String,
}

impl RuleBundle {
    /// Parses a JSON Lines bundle and runs the collision check against the
    /// bundled corpus. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let raw: RawRule = serde_json::from_str(line).map_err(|e| Error::BadRule {
                line: i + 1,
                reason: e.to_string(),
            })?;
            let rule = RewriteRule::from_raw(raw).map_err(|reason| Error::BadRule {
                line: i + 1,
                reason,
            })?;
            if rules.iter().any(|r: &RewriteRule| r.id == rule.id) {
                return Err(Error::BadRule {
                    line: i + 1,
                    reason: format!("duplicate rule id `{}`", rule.id),
                });
            }
            rules.push(rule);
        }
        let bundle = RuleBundle {
            rules,
            source: text.to_string(),
        };
        bundle.check_collisions(COLLISION_CORPUS)?;
        Ok(bundle)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn default_bundle() -> Self {
        Self::parse(DEFAULT_RULES).expect("bundled rules are valid")
    }

    /// Rewrites every sentence of `corpus` (one per line), failing on the
    /// first same-level collision.
    pub fn check_collisions(&self, corpus: &str) -> Result<()> {
        for line in corpus.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            apply_rewrites(&tokenize(line), &self.rules)?;
        }
        Ok(())
    }

    pub fn rewrite(&self, tokens: &[Token]) -> Result<Vec<Token>> {
        apply_rewrites(tokens, &self.rules)
    }
}

/// One pass per level in lexical → phrase → syntax order. Within a level the
/// scan is left to right and takes the longest match at each position; two
/// rules matching the same longest span is an error in the bundle.
pub fn apply_rewrites(tokens: &[Token], rules: &[RewriteRule]) -> Result<Vec<Token>> {
    let mut current = tokens.to_vec();
    for level in Level::REWRITE_ORDER {
        let level_rules: Vec<&RewriteRule> = rules.iter().filter(|r| r.level == level).collect();
        if level_rules.is_empty() {
            continue;
        }
        let mut next = Vec::with_capacity(current.len());
        let mut i = 0;
        while i < current.len() {
            let mut best: Option<(&RewriteRule, usize)> = None;
            for rule in &level_rules {
                let Some(len) = rule.match_at(&current, i) else {
                    continue;
                };
                match best {
                    Some((prev, plen)) if plen == len => {
                        return Err(Error::OverlappingRules {
                            first: prev.id.clone(),
                            second: rule.id.clone(),
                            level: level.to_string(),
                            start: i,
                            end: i + len,
                        });
                    }
                    Some((_, plen)) if plen > len => {}
                    _ => best = Some((rule, len)),
                }
            }
            match best {
                None => {
                    next.push(current[i].clone());
                    i += 1;
                }
                Some((rule, len)) => {
                    let span = &current[i..i + len];
                    if rule.replacement.len() == 1 {
                        next.push(Token {
                            surface: span
                                .iter()
                                .map(|t| t.surface.as_str())
                                .collect::<Vec<_>>()
                                .join(" "),
                            label: rule.replacement[0].clone(),
                            level_applied: level,
                            break_after: span[len - 1].break_after,
                            words: (span[0].words.0, span[len - 1].words.1),
                        });
                    } else {
                        for (t, tag) in span.iter().zip(&rule.replacement) {
                            next.push(Token {
                                label: tag.clone(),
                                level_applied: level,
                                ..t.clone()
                            });
                        }
                    }
                    i += len;
                }
            }
        }
        current = next;
    }
    Ok(current)
}

/// The seven chunk-boundary rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryRule {
    FixedExpression,
    CompoundPreposition,
    ProperNoun,
    UrlSymbol,
    AsParticiple,
    ToVerb,
    DiscourseMarker,
}

impl BoundaryRule {
    pub fn id(self) -> &'static str {
        match self {
            BoundaryRule::FixedExpression => "fixed-expression",
            BoundaryRule::CompoundPreposition => "compound-preposition",
            BoundaryRule::ProperNoun => "proper-noun",
            BoundaryRule::UrlSymbol => "url-symbol",
            BoundaryRule::AsParticiple => "as-participle",
            BoundaryRule::ToVerb => "to-verb",
            BoundaryRule::DiscourseMarker => "discourse-marker",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub tokens: Vec<Token>,
    /// Half-open token range within the rewritten stream.
    pub span: (usize, usize),
    pub boundary_rule: Option<BoundaryRule>,
}

impl Chunk {
    pub fn labels(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.label.as_str()).collect()
    }

    /// Raw word range covered by the chunk.
    pub fn words(&self) -> (usize, usize) {
        (
            self.tokens.first().map_or(0, |t| t.words.0),
            self.tokens.last().map_or(0, |t| t.words.1),
        )
    }

    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

const CLAUSE_STARTERS: &[&str] = &[
    "but", "while", "whereas", "although", "though", "because", "REL", "CONJ",
];

const FIXED_PARTICIPLES: &[&str] = &[
    "expected", "set", "likely", "scheduled", "poised", "announced", "planned", "able", "about",
    "going", "supposed", "estimated", "forecast", "anticipated",
];

fn is_participle_like(t: &Token) -> bool {
    let w = t.normalized();
    FIXED_PARTICIPLES.contains(&w.as_str()) || w.ends_with("ed") || w.ends_with("en")
}

fn is_adverb_like(t: &Token) -> bool {
    t.level_applied == Level::None && t.normalized().ends_with("ly")
}

fn is_verb_like(t: &Token) -> bool {
    matches!(t.label.as_str(), "UP" | "DOWN" | "VERB_REPORT" | "COPULA")
        || (t.level_applied == Level::None
            && t.surface.chars().all(char::is_alphabetic)
            && !matches!(t.label.as_str(), "the" | "a" | "an" | "its" | "their" | "this"))
}

/// Splits a rewritten token stream into chunks.
///
/// Candidate boundaries sit after punctuation and before clause-introducing
/// words; the seven boundary rules glue token pairs that must share a chunk.
/// Segments longer than [`MAX_CHUNK_LEN`] are packed greedily left to right
/// from their glued units, and a unit that is itself too long is cut every
/// five tokens.
pub fn chunk_sentence(tokens: &[Token]) -> Result<Vec<Chunk>> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::EmptySentence);
    }
    // glue[i] / cut[i] refer to the gap between token i and i + 1.
    let mut glue: Vec<Option<BoundaryRule>> = vec![None; n.saturating_sub(1)];
    let mut cut = vec![false; n.saturating_sub(1)];
    let set_glue = |glue: &mut Vec<Option<BoundaryRule>>, i: usize, r: BoundaryRule| {
        if i + 1 < n && glue[i].is_none() {
            glue[i] = Some(r);
        }
    };

    for i in 0..n.saturating_sub(1) {
        cut[i] = tokens[i].break_after || CLAUSE_STARTERS.contains(&tokens[i + 1].label.as_str());
    }

    // 1. Passive constructions and fixed expressions.
    for i in 0..n {
        let t = &tokens[i];
        if t.label.starts_with("AUX_") {
            set_glue(&mut glue, i, BoundaryRule::FixedExpression);
        } else if t.label == "COPULA"
            && i + 2 < n
            && is_participle_like(&tokens[i + 1])
            && tokens[i + 2].normalized() == "to"
        {
            set_glue(&mut glue, i, BoundaryRule::FixedExpression);
            set_glue(&mut glue, i + 1, BoundaryRule::FixedExpression);
        }
    }
    // 2. Compound prepositions stay with their object.
    for i in 0..n {
        if tokens[i].label.starts_with("PREP_") {
            set_glue(&mut glue, i, BoundaryRule::CompoundPreposition);
        }
    }
    // 3. Proper-noun runs and corporate suffixes.
    for i in 0..n.saturating_sub(1) {
        let next = &tokens[i + 1];
        let suffix = CORPORATE_SUFFIXES.contains(&next.normalized().as_str());
        if tokens[i].is_capitalized() && (next.is_capitalized() || suffix) {
            set_glue(&mut glue, i, BoundaryRule::ProperNoun);
        }
    }
    // 5. `as` + participle (+ adverb) attaches to the following clause.
    for i in 0..n {
        if tokens[i].normalized() != "as" || i + 1 >= n {
            continue;
        }
        let mut end = i;
        if is_adverb_like(&tokens[i + 1]) {
            end = i + 1;
            if i + 2 < n && is_participle_like(&tokens[i + 2]) {
                end = i + 2;
            }
        } else if is_participle_like(&tokens[i + 1]) {
            end = i + 1;
            if i + 2 < n && is_adverb_like(&tokens[i + 2]) {
                end = i + 2;
            }
        }
        if end > i {
            for j in i..=end {
                set_glue(&mut glue, j, BoundaryRule::AsParticiple);
            }
        }
    }
    // 6. `to` + verb attaches to the governing word on the left.
    for i in 0..n {
        if tokens[i].label == "to" && i + 1 < n && is_verb_like(&tokens[i + 1]) {
            set_glue(&mut glue, i, BoundaryRule::ToVerb);
            if i > 0 {
                set_glue(&mut glue, i - 1, BoundaryRule::ToVerb);
            }
        }
    }
    // 7. A sentence-initial discourse marker merges into the following clause.
    if tokens[0].label == "DISC" {
        set_glue(&mut glue, 0, BoundaryRule::DiscourseMarker);
    }

    // Clause segments: split where a cut is not overridden by glue.
    let mut segments: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 0..n.saturating_sub(1) {
        if cut[i] && glue[i].is_none() {
            segments.push((start, i + 1));
            start = i + 1;
        }
    }
    segments.push((start, n));

    let mut spans: Vec<(usize, usize)> = Vec::new();
    for (s, e) in segments {
        if e - s <= MAX_CHUNK_LEN {
            spans.push((s, e));
            continue;
        }
        // Glued units within the segment.
        let mut units: Vec<(usize, usize)> = Vec::new();
        let mut us = s;
        for i in s..e - 1 {
            if glue[i].is_none() {
                units.push((us, i + 1));
                us = i + 1;
            }
        }
        units.push((us, e));

        let mut cur: Option<(usize, usize)> = None;
        for (a, b) in units {
            if b - a > MAX_CHUNK_LEN {
                if let Some(c) = cur.take() {
                    spans.push(c);
                }
                let mut k = a;
                while b - k > MAX_CHUNK_LEN {
                    spans.push((k, k + MAX_CHUNK_LEN));
                    k += MAX_CHUNK_LEN;
                }
                cur = Some((k, b));
                continue;
            }
            cur = match cur {
                Some((cs, ce)) if b - cs <= MAX_CHUNK_LEN => Some((cs, b.max(ce))),
                Some(c) => {
                    spans.push(c);
                    Some((a, b))
                }
                None => Some((a, b)),
            };
        }
        if let Some(c) = cur {
            spans.push(c);
        }
    }

    Ok(spans
        .into_iter()
        .map(|(s, e)| {
            let inner = glue[s..e.saturating_sub(1).max(s)].iter().flatten().copied();
            let url = tokens[s..e]
                .iter()
                .any(|t| matches!(t.label.as_str(), "URL" | "SYM"))
                .then_some(BoundaryRule::UrlSymbol);
            Chunk {
                tokens: tokens[s..e].to_vec(),
                span: (s, e),
                boundary_rule: inner.chain(url).min(),
            }
        })
        .collect())
}

/// Tokenize, rewrite and chunk one sentence.
pub fn preprocess(text: &str, bundle: &RuleBundle) -> Result<(Vec<Token>, Vec<Chunk>)> {
    let tokens = bundle.rewrite(&tokenize(text))?;
    let chunks = chunk_sentence(&tokens)?;
    Ok((tokens, chunks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> RuleBundle {
        RuleBundle::default_bundle()
    }

    fn labels(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.label.as_str()).collect()
    }

    #[test]
    fn tokenizer_splits_punctuation_and_percent() {
        let t = tokenize("However, net sales rose 5.2% to EUR 10 mn.");
        let s: Vec<&str> = t.iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(
            s,
            ["However", "net", "sales", "rose", "5.2", "%", "to", "EUR", "10", "mn"]
        );
        assert!(t[0].break_after);
        assert!(t[9].break_after);
        assert!(!t[3].break_after);
    }

    #[test]
    fn tokenizer_keeps_urls_and_abbreviations() {
        let t = tokenize("See https://example.com/a?b=1, says Company A Inc. today");
        assert_eq!(t[1].surface, "https://example.com/a?b=1");
        assert!(t[1].break_after);
        assert_eq!(t[5].surface, "Inc.");
        assert!(!t[5].break_after);
    }

    #[test]
    fn compound_preposition_becomes_one_tag() {
        let out = bundle().rewrite(&tokenize("due to")).unwrap();
        assert_eq!(labels(&out), ["PREP_CAUSE"]);
        assert_eq!(out[0].surface, "due to");
        assert_eq!(out[0].words, (0, 2));
        assert_eq!(out[0].level_applied, Level::Phrase);
    }

    #[test]
    fn movement_verbs_get_direction_tags() {
        let out = bundle().rewrite(&tokenize("cuts raises misses")).unwrap();
        assert_eq!(labels(&out), ["DOWN", "UP", "DOWN"]);
    }

    #[test]
    fn empty_rule_set_is_identity() {
        let toks = tokenize("The company increased profits");
        assert_eq!(apply_rewrites(&toks, &[]).unwrap(), toks);
    }

    #[test]
    fn longest_match_wins_within_level() {
        let out = bundle().rewrite(&tokenize("in addition to sales in Finland")).unwrap();
        assert_eq!(labels(&out), ["PREP_ADD", "FIN_IND", "LOC_IN", "finland"]);
    }

    #[test]
    fn same_level_tie_is_reported() {
        let text = r#"{"id":"a","level":"lexical","pattern":["profit"],"replacement":["X"]}
{"id":"b","level":"lexical","pattern":["profit"],"replacement":["Y"]}"#;
        let err = RuleBundle::parse(text).unwrap_err();
        assert!(matches!(err, Error::OverlappingRules { .. }), "{err}");
    }

    #[test]
    fn malformed_rule_lines_are_rejected() {
        let bad = r#"{"id":"a","level":"lexical","pattern":["x","y"],"replacement":["A","B","C"]}"#;
        assert!(matches!(RuleBundle::parse(bad), Err(Error::BadRule { line: 1, .. })));
        let bad = r#"{"id":"a","level":"none","pattern":["x"],"replacement":["A"]}"#;
        assert!(matches!(RuleBundle::parse(bad), Err(Error::BadRule { .. })));
    }

    #[test]
    fn rewriting_is_idempotent_on_collision_corpus() {
        let b = bundle();
        for line in COLLISION_CORPUS.lines().filter(|l| !l.trim().is_empty()) {
            let once = b.rewrite(&tokenize(line)).unwrap();
            let twice = b.rewrite(&once).unwrap();
            assert_eq!(once, twice, "{line}");
        }
    }

    #[test]
    fn unmatched_tokens_keep_surface_label() {
        let out = bundle().rewrite(&tokenize("Zorblax widgets")).unwrap();
        assert_eq!(labels(&out), ["zorblax", "widgets"]);
        assert!(out.iter().all(|t| t.level_applied == Level::None));
    }

    #[test]
    fn discourse_marker_merges_into_clause() {
        let (_, chunks) = preprocess("However, profits rose", &bundle()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].labels(), ["DISC", "FIN_IND", "UP"]);
        assert_eq!(chunks[0].boundary_rule, Some(BoundaryRule::DiscourseMarker));
    }

    #[test]
    fn fixed_expression_stays_in_one_chunk() {
        let b = bundle();
        let (_, chunks) = preprocess("is expected to", &b).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text(), "is expected to");

        // Same expression without the merging rule: glued by the chunker.
        let toks = tokenize("Operating profit is expected to improve , analysts said");
        let mut toks = apply_rewrites(&toks, &[]).unwrap();
        toks[2].label = "COPULA".into();
        toks[2].level_applied = Level::Lexical;
        let chunks = chunk_sentence(&toks).unwrap();
        let fixed = chunks.iter().find(|c| c.text().contains("expected")).unwrap();
        assert!(fixed.text().contains("is expected to improve"));
        assert_eq!(fixed.boundary_rule, Some(BoundaryRule::FixedExpression));
    }

    #[test]
    fn seven_token_run_splits_five_two() {
        let toks = tokenize("alpha beta gamma delta epsilon zeta eta");
        let chunks = chunk_sentence(&toks).unwrap();
        let sizes: Vec<usize> = chunks.iter().map(|c| c.tokens.len()).collect();
        assert_eq!(sizes, [5, 2]);
    }

    #[test]
    fn proper_noun_run_is_not_split() {
        let toks = tokenize("yesterday the board of Company A Inc. approved it");
        let chunks = chunk_sentence(&toks).unwrap();
        let with_name = chunks.iter().find(|c| c.text().contains("Company")).unwrap();
        assert!(with_name.text().contains("Company A Inc."));
    }

    #[test]
    fn as_participle_attaches_to_main_clause() {
        let (_, chunks) = preprocess("As expected, profits rose", &bundle()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].boundary_rule, Some(BoundaryRule::AsParticiple));
    }

    #[test]
    fn to_verb_attaches_left() {
        let toks = tokenize("group plans, to expand capacity");
        let chunks = chunk_sentence(&toks).unwrap();
        assert_eq!(chunks.len(), 1, "{chunks:?}");
        assert_eq!(chunks[0].boundary_rule, Some(BoundaryRule::ToVerb));
    }

    #[test]
    fn urls_are_single_tokens() {
        let (toks, chunks) = preprocess("Read more at www.example.com/report", &bundle()).unwrap();
        assert_eq!(toks.last().unwrap().label, "URL");
        assert_eq!(chunks.last().unwrap().boundary_rule, Some(BoundaryRule::UrlSymbol));
    }

    #[test]
    fn empty_sentence_is_an_error() {
        assert!(matches!(chunk_sentence(&[]), Err(Error::EmptySentence)));
    }

    #[test]
    fn clause_breaks_split_chunks() {
        let (_, chunks) = preprocess("Profits rose, while costs fell.", &bundle()).unwrap();
        let texts: Vec<String> = chunks.iter().map(Chunk::text).collect();
        assert_eq!(texts, ["Profits rose", "while costs fell"]);
    }
}
