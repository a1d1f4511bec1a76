//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! out_dir = "runs"
//!
//! [corpus]
//! synth = "separable"   # or: path = "data/fpb.tsv"
//! n = 300
//!
//! [baseline]
//! lr = 0.05
//! ```
//!
//! Every section and key is optional. The top-level `seed` is copied into
//! the split, the synthetic generator, the parameter store and both
//! trainers.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::corpus::{load_corpus, Corpus, SplitSpec};
use super::synth::{make_synthetic_corpus, SynthMode, SynthSpec};
use crate::baseline::BaselineConfig;
use crate::error::{Error, Result};
use crate::pregroup::Lexicon;
use crate::qsim::DEFAULT_DEPTH;
use crate::seq_model::SeqConfig;
use crate::textprep::RuleBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// TSV corpus; takes precedence over `synth`.
    pub path: Option<PathBuf>,
    pub synth: Option<SynthMode>,
    pub n: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            path: None,
            synth: Some(SynthMode::Separable),
            n: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitSpec::default();
        SplitConfig {
            ratios: s.ratios,
            stratified: s.stratified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub baseline: bool,
    pub seq: bool,
    pub explain: bool,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            baseline: true,
            seq: true,
            explain: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub depth: usize,
    pub out_dir: PathBuf,
    /// Rule bundle path; the bundled rules when absent.
    pub rules: Option<PathBuf>,
    /// Lexicon path; the bundled lexicon when absent.
    pub lexicon: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub split: SplitConfig,
    pub stages: StageConfig,
    pub baseline: BaselineConfig,
    pub seq: SeqConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            depth: DEFAULT_DEPTH,
            out_dir: PathBuf::from("runs"),
            rules: None,
            lexicon: None,
            corpus: CorpusConfig::default(),
            split: SplitConfig::default(),
            stages: StageConfig::default(),
            baseline: BaselineConfig::default(),
            seq: SeqConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut cfg.rules, &mut cfg.lexicon, &mut cfg.corpus.path].into_iter().flatten() {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.baseline.seed = seed;
        self.seq.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be positive".into()));
        }
        if self.corpus.path.is_none() && self.corpus.synth.is_none() {
            return Err(Error::Config("[corpus] needs `path` or `synth`".into()));
        }
        if self.corpus.path.is_none() && self.corpus.n == 0 {
            return Err(Error::Config("[corpus] n must be positive".into()));
        }
        if self.baseline.k == 0 || self.baseline.tau <= 0.0 {
            return Err(Error::Config("[baseline] needs k ≥ 1 and tau > 0".into()));
        }
        if self.seq.n_heads == 0 || !self.seq.d_model.is_multiple_of(self.seq.n_heads) {
            return Err(Error::Config("[seq] d_model must be a multiple of n_heads".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            ratios: self.split.ratios,
            seed: self.seed,
            stratified: self.split.stratified,
        }
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        match (&self.corpus.path, self.corpus.synth) {
            (Some(p), _) => load_corpus(p),
            (None, Some(mode)) => Ok(make_synthetic_corpus(&SynthSpec {
                mode,
                n: self.corpus.n,
                seed: self.seed,
            })),
            (None, None) => Err(Error::Config("no corpus configured".into())),
        }
    }

    pub fn load_rules(&self) -> Result<RuleBundle> {
        match &self.rules {
            Some(p) => RuleBundle::load(p),
            None => Ok(RuleBundle::default_bundle()),
        }
    }

    pub fn load_lexicon(&self) -> Result<Lexicon> {
        match &self.lexicon {
            Some(p) => Lexicon::load(p),
            None => Ok(Lexicon::default_lexicon()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c.depth, DEFAULT_DEPTH);
        assert_eq!(c.corpus.synth, Some(SynthMode::Separable));
    }

    #[test]
    fn seed_propagates_and_roundtrips() {
        let c = ExperimentConfig::parse("seed = 9\n[baseline]\nlr = 0.02\n[seq]\nd_model = 16\n").unwrap();
        assert_eq!(c.baseline.seed, 9);
        assert_eq!(c.seq.seed, 9);
        assert_eq!(c.baseline.lr, 0.02);
        let back = ExperimentConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back.to_toml(), c.to_toml());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(ExperimentConfig::parse("depth = 0"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentConfig::parse("[seq]\nd_model = 10\nn_heads = 4"),
            Err(Error::Config(_))
        ));
    }
}
