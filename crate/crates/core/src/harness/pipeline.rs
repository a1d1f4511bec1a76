//! Corpus → circuits → classifiers → explanations, with run-directory
//! persistence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::corpus::{stratified_split, Corpus};
use crate::baseline::{
    calibrate_thresholds, chunk_blochs, document, predict, train_baseline, EpochRecord, Example,
    PrototypeBank, ScoringMode, ThresholdSet,
};
use crate::error::{Error, Result, StageExt};
use crate::explain::{
    axis_ablation, channel_attribution, chunk_attribution, confidence_metrics, group_stats,
    intervention_suite, top_share, Axis, ConfidenceRecord, FaithfulnessReport, OperatorKind,
};
use crate::metrics::{accuracy, macro_f1};
use crate::pregroup::{type_chunk, Lexicon, TypedChunk};
use crate::qsim::{build_chunk_circuit, contract_to_bloch, refresh_angles, BlochVector, ParamStore, GATE_CONVENTION, MAX_WIRES};
use crate::seq_model::{
    encode_and_classify, readout_direction, train_seq, SeqExample, SeqInput, SeqParams, TypeVocab,
};
use crate::textprep::{preprocess, RuleBundle};
use crate::NUM_CLASSES;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Sentence count of the full-agreement financial news corpus before and
/// after preprocessing drops unparsable lines.
const REAL_CORPUS_RAW: usize = 2264;
const REAL_CORPUS_KEPT: usize = 2263;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedSentence {
    pub text: String,
    pub label: usize,
    pub chunks: Vec<TypedChunk>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepStats {
    pub sentences: usize,
    pub dropped: usize,
    pub chunks: usize,
    pub valid_chunks: usize,
    pub synthetic_chunks: usize,
    pub invalid_chunks: usize,
    pub too_wide_chunks: usize,
}

/// Preprocesses and types every sentence. Sentences the rewriter rejects
/// are dropped and counted.
pub fn prepare(corpus: &Corpus, bundle: &RuleBundle, lexicon: &Lexicon, stats: &mut PrepStats) -> Vec<PreparedSentence> {
    let mut out = Vec::new();
    for (text, label) in &corpus.sentences {
        stats.sentences += 1;
        let Ok((_, chunks)) = preprocess(text, bundle) else {
            stats.dropped += 1;
            continue;
        };
        let typed: Vec<TypedChunk> = chunks.iter().map(|c| type_chunk(c, lexicon)).collect();
        for tc in &typed {
            stats.chunks += 1;
            if !tc.valid {
                stats.invalid_chunks += 1;
            } else if tc.synthetic {
                stats.synthetic_chunks += 1;
            }
            if tc.valid {
                stats.valid_chunks += 1;
            }
        }
        out.push(PreparedSentence {
            text: text.clone(),
            label: *label,
            chunks: typed,
        });
    }
    out
}

/// A sentence with compiled circuits for its usable chunks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compiled {
    pub text: String,
    pub example: Example,
    /// Word-type signature of each compiled chunk.
    pub signatures: Vec<String>,
    pub chunk_texts: Vec<String>,
}

/// Compiles valid chunks, skipping those wider than the simulator allows.
pub fn compile(sentences: &[PreparedSentence], store: &mut ParamStore, stats: &mut PrepStats) -> Vec<Compiled> {
    sentences
        .iter()
        .map(|s| {
            let mut circuits = Vec::new();
            let mut signatures = Vec::new();
            let mut chunk_texts = Vec::new();
            for tc in s.chunks.iter().filter(|tc| tc.valid) {
                let width: usize = tc.types.iter().map(|t| t.len()).sum();
                if width > MAX_WIRES {
                    stats.too_wide_chunks += 1;
                    continue;
                }
                let Ok(c) = build_chunk_circuit(tc, store) else {
                    continue;
                };
                circuits.push(c);
                signatures.push(tc.signature());
                chunk_texts.push(tc.chunk.text());
            }
            Compiled {
                text: s.text.clone(),
                example: Example {
                    circuits,
                    label: s.label,
                },
                signatures,
                chunk_texts,
            }
        })
        .collect()
}

/// Chunk Bloch sequence under `store`; chunks that fail to contract are
/// masked. Sequences are cut at `max_len`.
pub fn seq_input(c: &Compiled, store: &ParamStore, vocab: &TypeVocab, max_len: usize) -> SeqInput {
    let mut blochs = Vec::new();
    let mut types = Vec::new();
    let mut mask = Vec::new();
    for (circ, sig) in c.example.circuits.iter().zip(&c.signatures).take(max_len) {
        let mut circ = circ.clone();
        refresh_angles(&mut circ, store);
        match contract_to_bloch(&circ) {
            Ok((b, _)) => {
                blochs.push(b);
                mask.push(true);
            }
            Err(_) => {
                blochs.push(BlochVector::ZERO);
                mask.push(false);
            }
        }
        types.push(vocab.id(sig));
    }
    SeqInput { blochs, types, mask }
}

pub fn seq_examples(cs: &[Compiled], store: &ParamStore, vocab: &TypeVocab, max_len: usize) -> Vec<SeqExample> {
    cs.iter()
        .map(|c| SeqExample {
            input: seq_input(c, store, vocab, max_len),
            label: c.example.label,
        })
        .collect()
}

/// Hex SHA-256 over the config (minus its output directory), the rule
/// bundle and the lexicon.
pub fn content_hash(cfg: &ExperimentConfig, rules: &RuleBundle, lexicon: &Lexicon) -> String {
    let mut c = cfg.clone();
    c.out_dir = PathBuf::new();
    let mut h = Sha256::new();
    h.update(c.to_toml().as_bytes());
    h.update([0u8]);
    h.update(rules.source.as_bytes());
    h.update([0u8]);
    h.update(lexicon.source.as_bytes());
    hex::encode(h.finalize())
}

/// Everything up to and including circuit compilation.
pub struct Workspace {
    pub cfg: ExperimentConfig,
    pub rules: RuleBundle,
    pub lexicon: Lexicon,
    pub content_hash: String,
    pub provenance: String,
    pub stats: PrepStats,
    pub train: Vec<Compiled>,
    pub dev: Vec<Compiled>,
    pub test: Vec<Compiled>,
    /// Store holding every slot of every split at its initial value.
    pub store: ParamStore,
    pub warnings: Vec<String>,
}

impl Workspace {
    pub fn split(&self, name: &str) -> Result<&[Compiled]> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            _ => Err(Error::InvalidInput(format!("unknown split `{name}`"))),
        }
    }
}

pub fn prepare_workspace(cfg: &ExperimentConfig) -> Result<Workspace> {
    cfg.validate().stage("config")?;
    let corpus = cfg.load_corpus().stage("load corpus")?;
    let rules = cfg.load_rules().stage("load rules")?;
    let lexicon = cfg.load_lexicon().stage("load lexicon")?;
    let content_hash = content_hash(cfg, &rules, &lexicon);
    let (tr, dv, te) = stratified_split(&corpus, &cfg.split_spec()).stage("split")?;
    let mut stats = PrepStats::default();
    let p_tr = prepare(&tr, &rules, &lexicon, &mut stats);
    let p_dv = prepare(&dv, &rules, &lexicon, &mut stats);
    let p_te = prepare(&te, &rules, &lexicon, &mut stats);
    let mut warnings = Vec::new();
    let kept = stats.sentences - stats.dropped;
    if cfg.corpus.path.is_some() && corpus.len() == REAL_CORPUS_RAW && kept != REAL_CORPUS_KEPT {
        warnings.push(format!("{kept} sentences survived preprocessing, expected {REAL_CORPUS_KEPT}"));
    }
    let mut store = ParamStore::new(cfg.seed, cfg.depth);
    let train = compile(&p_tr, &mut store, &mut stats);
    let dev = compile(&p_dv, &mut store, &mut stats);
    let test = compile(&p_te, &mut store, &mut stats);
    if train.iter().all(|c| c.example.circuits.is_empty()) {
        return Err(Error::NoValidChunks).stage("compile");
    }
    Ok(Workspace {
        cfg: cfg.clone(),
        rules,
        lexicon,
        content_hash,
        provenance: corpus.provenance,
        stats,
        train,
        dev,
        test,
        store,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqState {
    pub vocab: Vec<String>,
    pub params: SeqParams,
}

/// Saved model. The store carries word angles and, once the baseline has
/// trained, its prototypes. A sequence checkpoint also carries the store
/// its Bloch inputs were read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: String,
    pub gate_convention: String,
    pub seed: u64,
    pub content_hash: String,
    pub store: ParamStore,
    pub tau: f64,
    pub scoring: ScoringMode,
    pub thresholds: ThresholdSet,
    pub best_epoch: usize,
    pub best_dev_macro_f1: f64,
    pub seq: Option<SeqState>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", c.version)));
        }
        if c.gate_convention != GATE_CONVENTION {
            return Err(Error::Checkpoint(format!("gate convention `{}` differs from `{GATE_CONVENTION}`", c.gate_convention)));
        }
        c.store.reindex();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn bank(&self) -> Result<PrototypeBank> {
        if self.store.prototypes.len() != NUM_CLASSES || self.store.prototypes.iter().any(|p| p.is_empty()) {
            return Err(Error::Checkpoint("store has no prototypes".into()));
        }
        Ok(PrototypeBank {
            protos: self.store.prototypes.clone(),
            tau: self.tau,
        })
    }

    pub fn vocab(&self) -> Option<TypeVocab> {
        self.seq.as_ref().map(|s| TypeVocab::from_names(s.vocab.clone()))
    }

    /// Class probabilities per sentence; `None` when a sentence has no
    /// usable chunk.
    pub fn probs(&self, cs: &[Compiled]) -> Result<Vec<Option<[f64; NUM_CLASSES]>>> {
        match &self.seq {
            None => {
                let bank = self.bank()?;
                Ok(cs
                    .iter()
                    .map(|c| {
                        document(&c.example, &self.store)
                            .ok()
                            .map(|d| crate::baseline::class_scores(&d, &bank, self.scoring))
                    })
                    .collect())
            }
            Some(s) => {
                let vocab = TypeVocab::from_names(s.vocab.clone());
                Ok(cs
                    .iter()
                    .map(|c| {
                        let x = seq_input(c, &self.store, &vocab, s.params.max_len);
                        encode_and_classify(&s.params, &x).ok().map(|o| o.probs)
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub calibrated_accuracy: f64,
    pub calibrated_macro_f1: f64,
}

/// Sentences without a prediction count as errors.
pub fn predictions(probs: &[Option<[f64; NUM_CLASSES]>], labels: &[usize], t: &ThresholdSet) -> Vec<usize> {
    probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| p.map_or((y + 1) % NUM_CLASSES, |p| predict(&p, t)))
        .collect()
}

pub fn split_metrics(probs: &[Option<[f64; NUM_CLASSES]>], labels: &[usize], t: &ThresholdSet) -> SplitMetrics {
    let arg = predictions(probs, labels, &[0.0; NUM_CLASSES]);
    let cal = predictions(probs, labels, t);
    SplitMetrics {
        n: labels.len(),
        accuracy: accuracy(labels, &arg),
        macro_f1: macro_f1(labels, &arg),
        calibrated_accuracy: accuracy(labels, &cal),
        calibrated_macro_f1: macro_f1(labels, &cal),
    }
}

/// Fits thresholds on the sentences that have a prediction.
pub fn calibrate(probs: &[Option<[f64; NUM_CLASSES]>], labels: &[usize], grid: crate::baseline::GridMode) -> (ThresholdSet, f64) {
    let (p, y): (Vec<_>, Vec<_>) = probs
        .iter()
        .zip(labels)
        .filter_map(|(p, &y)| p.map(|p| (p, y)))
        .unzip();
    if p.is_empty() {
        return ([0.0; NUM_CLASSES], 0.0);
    }
    calibrate_thresholds(&p, &y, grid)
}

fn labels(cs: &[Compiled]) -> Vec<usize> {
    cs.iter().map(|c| c.example.label).collect()
}

fn examples(cs: &[Compiled]) -> Vec<Example> {
    cs.iter().map(|c| c.example.clone()).collect()
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub dev: SplitMetrics,
    pub test: SplitMetrics,
}

fn finish(ws: &Workspace, mut checkpoint: Checkpoint, history: Vec<EpochRecord>) -> Result<StageOutcome> {
    let dev_probs = checkpoint.probs(&ws.dev)?;
    let (t, _) = calibrate(&dev_probs, &labels(&ws.dev), ws.cfg.baseline.grid);
    checkpoint.thresholds = t;
    let test_probs = checkpoint.probs(&ws.test)?;
    Ok(StageOutcome {
        dev: split_metrics(&dev_probs, &labels(&ws.dev), &t),
        test: split_metrics(&test_probs, &labels(&ws.test), &t),
        checkpoint,
        history,
    })
}

pub fn baseline_stage(ws: &Workspace) -> Result<StageOutcome> {
    let cfg = &ws.cfg.baseline;
    let trained = train_baseline(ws.store.clone(), &examples(&ws.train), &examples(&ws.dev), cfg).stage("train-baseline")?;
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        kind: "baseline".into(),
        gate_convention: GATE_CONVENTION.into(),
        seed: ws.cfg.seed,
        content_hash: ws.content_hash.clone(),
        store: trained.store,
        tau: cfg.tau,
        scoring: cfg.scoring,
        thresholds: [0.0; NUM_CLASSES],
        best_epoch: trained.best_epoch,
        best_dev_macro_f1: trained.best_dev_f1,
        seq: None,
    };
    finish(ws, ck, trained.history).stage("calibrate-baseline")
}

/// Trains the sequence model on chunk Bloch vectors read from `store`,
/// typically the trained baseline store.
pub fn seq_stage(ws: &Workspace, store: &ParamStore) -> Result<StageOutcome> {
    let cfg = &ws.cfg.seq;
    let vocab = TypeVocab::build(ws.train.iter().flat_map(|c| c.signatures.iter().map(String::as_str)));
    let train: Vec<SeqExample> = seq_examples(&ws.train, store, &vocab, cfg.max_len)
        .into_iter()
        .filter(|e| e.input.mask.iter().any(|&m| m))
        .collect();
    let dev = seq_examples(&ws.dev, store, &vocab, cfg.max_len);
    let trained = train_seq(&train, &dev, vocab.len(), cfg).stage("train-seq")?;
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        kind: "seq".into(),
        gate_convention: GATE_CONVENTION.into(),
        seed: ws.cfg.seed,
        content_hash: ws.content_hash.clone(),
        store: store.clone(),
        tau: ws.cfg.baseline.tau,
        scoring: ws.cfg.baseline.scoring,
        thresholds: [0.0; NUM_CLASSES],
        best_epoch: trained.best_epoch,
        best_dev_macro_f1: trained.best_dev_f1,
        seq: Some(SeqState {
            vocab: vocab.names.clone(),
            params: trained.params,
        }),
    };
    finish(ws, ck, trained.history).stage("calibrate-seq")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineExplanation {
    pub probs: [f64; NUM_CLASSES],
    pub pred: usize,
    pub confidence: ConfidenceRecord,
    /// Comprehensiveness per axis, x, y, z.
    pub comp: [f64; 3],
    pub suff_gap: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkExplanation {
    pub position: usize,
    pub text: String,
    pub signature: String,
    pub alpha: f64,
    pub attribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqExplanation {
    pub probs: [f64; NUM_CLASSES],
    pub pred: usize,
    pub confidence: ConfidenceRecord,
    pub u: BlochVector,
    pub top20_share: Option<f64>,
    /// Bloch, type and gate channel shares.
    pub channel_shares: Option<[f64; 3]>,
    pub chunks: Vec<ChunkExplanation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub index: usize,
    pub text: String,
    pub label: usize,
    pub baseline: Option<BaselineExplanation>,
    pub seq: Option<SeqExplanation>,
}

pub fn explain_baseline(ck: &Checkpoint, c: &Compiled) -> Result<Option<BaselineExplanation>> {
    let bank = ck.bank()?;
    let Ok(doc) = document(&c.example, &ck.store) else {
        return Ok(None);
    };
    let probs = crate::baseline::class_scores(&doc, &bank, ck.scoring);
    let b = doc.bloch();
    let abl = Axis::ALL.map(|a| axis_ablation(b, &bank, a));
    Ok(Some(BaselineExplanation {
        probs,
        pred: predict(&probs, &ck.thresholds),
        confidence: confidence_metrics(&probs),
        comp: abl.map(|a| a.comp),
        suff_gap: abl.map(|a| a.suff_gap),
    }))
}

pub fn explain_seq(ck: &Checkpoint, c: &Compiled) -> Result<Option<SeqExplanation>> {
    let s = ck
        .seq
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("not a sequence-model checkpoint".into()))?;
    let vocab = TypeVocab::from_names(s.vocab.clone());
    let x = seq_input(c, &ck.store, &vocab, s.params.max_len);
    let Ok(out) = encode_and_classify(&s.params, &x) else {
        return Ok(None);
    };
    let u = readout_direction(&s.params, &out.probs);
    let attr = chunk_attribution(&out.trace, &x, u);
    let a: Vec<f64> = attr.chunks.iter().map(|ch| ch.a).collect();
    let channels = channel_attribution(&s.params, &x)?;
    Ok(Some(SeqExplanation {
        probs: out.probs,
        pred: predict(&out.probs, &ck.thresholds),
        confidence: confidence_metrics(&out.probs),
        u,
        top20_share: top_share(&a, 0.2),
        channel_shares: channels.shares(),
        chunks: attr
            .chunks
            .iter()
            .map(|ch| ChunkExplanation {
                position: ch.position,
                text: c.chunk_texts[ch.position].clone(),
                signature: c.signatures[ch.position].clone(),
                alpha: ch.alpha,
                attribution: ch.a,
            })
            .collect(),
    }))
}

pub fn explain_all(baseline: Option<&Checkpoint>, seq: Option<&Checkpoint>, cs: &[Compiled]) -> Result<Vec<Explanation>> {
    cs.iter()
        .enumerate()
        .map(|(i, c)| {
            Ok(Explanation {
                index: i,
                text: c.text.clone(),
                label: c.example.label,
                baseline: baseline.map(|b| explain_baseline(b, c)).transpose()?.flatten(),
                seq: seq.map(|s| explain_seq(s, c)).transpose()?.flatten(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub mean_c: Option<f64>,
    pub mean_i: Option<f64>,
    pub d: Option<f64>,
    pub r: Option<f64>,
}

/// Correct-versus-incorrect statistics of every per-sentence diagnostic.
pub fn summarize(ex: &[Explanation]) -> Vec<SummaryRow> {
    let mut series: Vec<(String, Vec<(f64, bool)>)> = Vec::new();
    let mut push = |name: &str, v: f64, ok: bool| {
        match series.iter_mut().find(|s| s.0 == name) {
            Some(s) => s.1.push((v, ok)),
            None => series.push((name.to_string(), vec![(v, ok)])),
        }
    };
    for e in ex {
        if let Some(b) = &e.baseline {
            let ok = b.pred == e.label;
            push("baseline_p_max", b.confidence.p_max, ok);
            push("baseline_prob_margin", b.confidence.prob_margin, ok);
            push("baseline_entropy_norm", b.confidence.entropy_norm, ok);
            for (k, axis) in ["x", "y", "z"].iter().enumerate() {
                push(&format!("baseline_comp_{axis}"), b.comp[k], ok);
                push(&format!("baseline_suff_gap_{axis}"), b.suff_gap[k], ok);
            }
        }
        if let Some(s) = &e.seq {
            let ok = s.pred == e.label;
            push("seq_p_max", s.confidence.p_max, ok);
            push("seq_prob_margin", s.confidence.prob_margin, ok);
            push("seq_entropy_norm", s.confidence.entropy_norm, ok);
            if let Some(t) = s.top20_share {
                push("seq_top20_share", t, ok);
            }
            if let Some(sh) = s.channel_shares {
                push("seq_share_bloch", sh[0], ok);
                push("seq_share_ccg", sh[1], ok);
                push("seq_share_gate", sh[2], ok);
            }
        }
    }
    series
        .into_iter()
        .map(|(metric, pts)| {
            let (v, ok): (Vec<f64>, Vec<bool>) = pts.into_iter().unzip();
            match group_stats(&v, &ok) {
                Ok(g) => SummaryRow {
                    metric,
                    mean_c: Some(g.mean_c),
                    mean_i: Some(g.mean_i),
                    d: g.d,
                    r: g.r,
                },
                Err(_) => SummaryRow {
                    metric,
                    mean_c: None,
                    mean_i: None,
                    d: None,
                    r: None,
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRow {
    pub operator: OperatorKind,
    pub report: FaithfulnessReport,
}

pub fn interventions(seq: &Checkpoint, cs: &[Compiled], kinds: &[OperatorKind], deltas: Option<&[f64]>) -> Result<Vec<InterventionRow>> {
    let s = seq
        .seq
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("not a sequence-model checkpoint".into()))?;
    let vocab = TypeVocab::from_names(s.vocab.clone());
    let inputs: Vec<SeqInput> = cs
        .iter()
        .map(|c| seq_input(c, &seq.store, &vocab, s.params.max_len))
        .filter(|x| x.mask.iter().any(|&m| m))
        .collect();
    kinds
        .iter()
        .map(|&k| {
            let d = deltas.map_or_else(|| k.default_deltas(), <[f64]>::to_vec);
            let (report, _) = intervention_suite(&s.params, &inputs, k, &d)?;
            Ok(InterventionRow { operator: k, report })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn history_csv(h: &[EpochRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "dev_macro_f1", "lr"]).expect("in-memory write");
    for r in h {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.dev_macro_f1.to_string(), r.lr.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "mean_C", "mean_I", "d", "r"]).expect("in-memory write");
    for r in rows {
        w.write_record([r.metric.clone(), opt(r.mean_c), opt(r.mean_i), opt(r.d), opt(r.r)])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn interventions_csv(rows: &[InterventionRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["operator", "dc", "pr", "mvr", "n_cases"]).expect("in-memory write");
    for r in rows {
        let name = serde_json::to_value(r.operator).expect("enum").as_str().unwrap_or_default().to_string();
        w.write_record([name, r.report.dc.to_string(), opt(r.report.pr), opt(r.report.mvr), r.report.n_cases.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("serialises") + "\n")
        .collect()
}

/// Creates `<out_dir>/run-<hash8>-<n>` with the first unused `n`.
pub fn create_run_dir(out_dir: &Path, hash: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    for n in 1.. {
        let p = out_dir.join(format!("run-{}-{n}", &hash[..8.min(hash.len())]));
        match std::fs::create_dir(&p) {
            Ok(()) => return Ok(p),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("run directory numbering exhausted")
}

/// Writes a file that must not exist yet.
pub fn write_new(path: &Path, contents: &str) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().write(true).create_new(true).open(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub best_epoch: usize,
    pub best_dev_macro_f1: f64,
    pub thresholds: ThresholdSet,
    pub dev: SplitMetrics,
    pub test: SplitMetrics,
}

impl From<&StageOutcome> for ModelReport {
    fn from(o: &StageOutcome) -> Self {
        ModelReport {
            best_epoch: o.checkpoint.best_epoch,
            best_dev_macro_f1: o.checkpoint.best_dev_macro_f1,
            thresholds: o.checkpoint.thresholds,
            dev: o.dev,
            test: o.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub content_hash: String,
    pub gate_convention: String,
    pub seed: u64,
    pub provenance: String,
    pub split_sizes: [usize; 3],
    pub prep: PrepStats,
    pub baseline: Option<ModelReport>,
    pub seq: Option<ModelReport>,
    pub interventions: Vec<InterventionRow>,
    pub warnings: Vec<String>,
}

pub struct RunOutput {
    pub dir: PathBuf,
    pub report: RunReport,
}

/// Starts a run directory with the config echo and input copies.
pub fn open_run(ws: &Workspace) -> Result<PathBuf> {
    let dir = create_run_dir(&ws.cfg.out_dir, &ws.content_hash)?;
    write_new(&dir.join("config.toml"), &ws.cfg.to_toml())?;
    write_new(&dir.join("rules.jsonl"), &ws.rules.source)?;
    write_new(&dir.join("lexicon.jsonl"), &ws.lexicon.source)?;
    Ok(dir)
}

pub fn write_outcome(dir: &Path, name: &str, o: &StageOutcome) -> Result<()> {
    write_new(&dir.join(format!("metrics_{name}.csv")), &history_csv(&o.history))?;
    write_new(&dir.join(format!("checkpoint_{name}.json")), &o.checkpoint.to_json())
}

pub fn base_report(ws: &Workspace) -> RunReport {
    RunReport {
        content_hash: ws.content_hash.clone(),
        gate_convention: GATE_CONVENTION.into(),
        seed: ws.cfg.seed,
        provenance: ws.provenance.clone(),
        split_sizes: [ws.train.len(), ws.dev.len(), ws.test.len()],
        prep: ws.stats,
        baseline: None,
        seq: None,
        interventions: Vec::new(),
        warnings: ws.warnings.clone(),
    }
}

/// Runs every enabled stage and writes the run directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let ws = prepare_workspace(cfg)?;
    let dir = open_run(&ws).stage("run directory")?;
    let mut report = base_report(&ws);

    let base = if cfg.stages.baseline {
        let o = baseline_stage(&ws)?;
        write_outcome(&dir, "baseline", &o).stage("write")?;
        report.baseline = Some((&o).into());
        Some(o)
    } else {
        None
    };
    let seq = if cfg.stages.seq {
        let store = base.as_ref().map_or(&ws.store, |b| &b.checkpoint.store);
        let o = seq_stage(&ws, store)?;
        write_outcome(&dir, "seq", &o).stage("write")?;
        report.seq = Some((&o).into());
        Some(o)
    } else {
        None
    };
    if cfg.stages.explain && (base.is_some() || seq.is_some()) {
        let ex = explain_all(
            base.as_ref().map(|o| &o.checkpoint),
            seq.as_ref().map(|o| &o.checkpoint),
            &ws.test,
        )
        .stage("explain")?;
        write_new(&dir.join("explanations.jsonl"), &jsonl(&ex)).stage("write")?;
        let attention: Vec<serde_json::Value> = ex
            .iter()
            .filter_map(|e| {
                e.seq.as_ref().map(|s| {
                    serde_json::json!({
                        "index": e.index,
                        "chunks": s.chunks.iter().map(|c| &c.text).collect::<Vec<_>>(),
                        "alpha": s.chunks.iter().map(|c| c.alpha).collect::<Vec<_>>(),
                    })
                })
            })
            .collect();
        write_new(&dir.join("attention.jsonl"), &jsonl(&attention)).stage("write")?;
        write_new(&dir.join("summary.csv"), &summary_csv(&summarize(&ex))).stage("write")?;
        if let Some(s) = &seq {
            report.interventions = interventions(&s.checkpoint, &ws.test, &OperatorKind::ALL, None).stage("intervene")?;
            write_new(&dir.join("interventions.csv"), &interventions_csv(&report.interventions)).stage("write")?;
        }
    }
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write_new(&dir.join("report.json"), &json).stage("write")?;
    Ok(RunOutput { dir, report })
}

/// Per-chunk Bloch vectors of a compiled sentence.
pub fn sentence_blochs(c: &Compiled, store: &ParamStore) -> Vec<BlochVector> {
    chunk_blochs(&c.example, store)
}
