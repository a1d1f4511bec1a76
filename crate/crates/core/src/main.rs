use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use chunkcirc::explain::OperatorKind;
use chunkcirc::harness::pipeline::{
    self, base_report, baseline_stage, calibrate, explain_all, interventions, interventions_csv, jsonl,
    open_run, prepare, prepare_workspace, seq_stage, split_metrics, summarize, summary_csv, write_new, write_outcome,
    Checkpoint, Compiled, PrepStats,
};
use chunkcirc::harness::{load_corpus, make_synthetic_corpus, Corpus, ExperimentConfig, SynthMode, SynthSpec};
use chunkcirc::pregroup::Lexicon;
use chunkcirc::qsim::{ParamStore, DEFAULT_DEPTH};
use chunkcirc::textprep::RuleBundle;
use chunkcirc::{Error, Result};

#[derive(Parser)]
#[command(name = "chunkcirc", version, about = "Chunked circuit sentiment classification")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Rewrite, chunk and type sentences; prints JSON Lines.
    Preprocess(PreprocessArgs),
    /// Train the density-pooling classifier.
    TrainBaseline,
    /// Train the sequence model (and the baseline first unless given).
    TrainSeq {
        /// Baseline checkpoint whose store supplies the chunk Bloch vectors.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Fit decision thresholds on the dev split.
    Calibrate(ModelArgs),
    /// Score a checkpoint on a split.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Per-sentence explanations as JSON Lines.
    Explain {
        /// Sequence-model checkpoint.
        #[arg(long)]
        seq: Option<PathBuf>,
        /// Baseline checkpoint.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Intervention faithfulness of a sequence-model checkpoint.
    Intervene {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        operator: Vec<OperatorArg>,
        /// Comma-separated strengths, increasing.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        deltas: Option<Vec<f64>>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Generate a synthetic TSV corpus.
    Synth {
        #[arg(long, value_enum, default_value = "separable")]
        mode: ModeArg,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Full pipeline into a fresh run directory.
    Run,
}

#[derive(Args)]
struct PreprocessArgs {
    /// TSV corpus; otherwise the config corpus.
    #[arg(long)]
    input: Option<PathBuf>,
    /// A single sentence.
    #[arg(long, conflicts_with = "input")]
    text: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Separable,
    OrderSensitive,
}

#[derive(Clone, Copy, ValueEnum)]
enum OperatorArg {
    PolarityFlip,
    NumericScale,
    SpanPermute,
    GateZero,
    AttentionMask,
    UPerturb,
}

impl From<OperatorArg> for OperatorKind {
    fn from(o: OperatorArg) -> Self {
        match o {
            OperatorArg::PolarityFlip => OperatorKind::PolarityFlip,
            OperatorArg::NumericScale => OperatorKind::NumericScale,
            OperatorArg::SpanPermute => OperatorKind::SpanPermute,
            OperatorArg::GateZero => OperatorKind::GateZero,
            OperatorArg::AttentionMask => OperatorKind::AttentionMask,
            OperatorArg::UPerturb => OperatorKind::UPerturb,
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(o) = &cli.out_dir {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(Into::into),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn split<'a>(ws: &'a pipeline::Workspace, name: &str) -> Result<&'a [Compiled]> {
    ws.split(name)
}

fn check_hash(ck: &Checkpoint, ws: &pipeline::Workspace) {
    if ck.content_hash != ws.content_hash {
        eprintln!("warning: checkpoint was trained under a different config, rule bundle or lexicon");
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.cmd {
        Cmd::Synth { mode, n, output } => {
            let mode = match mode {
                ModeArg::Separable => SynthMode::Separable,
                ModeArg::OrderSensitive => SynthMode::OrderSensitive,
            };
            let c = make_synthetic_corpus(&SynthSpec { mode, n: *n, seed: cfg.seed });
            emit(output.as_deref(), &c.to_tsv())
        }
        Cmd::Preprocess(a) => {
            let corpus = match (&a.text, &a.input) {
                (Some(t), _) => Corpus {
                    sentences: vec![(t.clone(), 1)],
                    provenance: "cli".into(),
                },
                (None, Some(p)) => load_corpus(p)?,
                (None, None) => cfg.load_corpus()?,
            };
            let rules: RuleBundle = cfg.load_rules()?;
            let lexicon: Lexicon = cfg.load_lexicon()?;
            let mut stats = PrepStats::default();
            let prepared = prepare(&corpus, &rules, &lexicon, &mut stats);
            let mut store = ParamStore::new(cfg.seed, DEFAULT_DEPTH);
            pipeline::compile(&prepared, &mut store, &mut stats);
            eprintln!("{}", serde_json::to_string(&stats)?);
            let rows: Vec<serde_json::Value> = prepared
                .iter()
                .map(|s| {
                    serde_json::json!({
                        "text": s.text,
                        "label": s.label,
                        "chunks": s.chunks.iter().map(|tc| serde_json::json!({
                            "text": tc.chunk.text(),
                            "labels": tc.chunk.labels(),
                            "signature": tc.signature(),
                            "reduced": tc.reduced.to_string(),
                            "valid": tc.valid,
                            "synthetic": tc.synthetic,
                        })).collect::<Vec<_>>(),
                    })
                })
                .collect();
            emit(a.output.as_deref(), &jsonl(&rows))
        }
        Cmd::TrainBaseline => {
            let ws = prepare_workspace(&cfg)?;
            let dir = open_run(&ws)?;
            let o = baseline_stage(&ws)?;
            write_outcome(&dir, "baseline", &o)?;
            let mut report = base_report(&ws);
            report.baseline = Some((&o).into());
            write_new(&dir.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
            println!("{}", dir.display());
            Ok(())
        }
        Cmd::TrainSeq { baseline } => {
            let ws = prepare_workspace(&cfg)?;
            let dir = open_run(&ws)?;
            let mut report = base_report(&ws);
            let store = match baseline {
                Some(p) => {
                    let ck = Checkpoint::load(p)?;
                    check_hash(&ck, &ws);
                    ck.store
                }
                None => {
                    let o = baseline_stage(&ws)?;
                    write_outcome(&dir, "baseline", &o)?;
                    report.baseline = Some((&o).into());
                    o.checkpoint.store
                }
            };
            let o = seq_stage(&ws, &store)?;
            write_outcome(&dir, "seq", &o)?;
            report.seq = Some((&o).into());
            write_new(&dir.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
            println!("{}", dir.display());
            Ok(())
        }
        Cmd::Calibrate(m) => {
            let ws = prepare_workspace(&cfg)?;
            let ck = Checkpoint::load(&m.checkpoint)?;
            check_hash(&ck, &ws);
            let labels: Vec<usize> = ws.dev.iter().map(|c| c.example.label).collect();
            let probs = ck.probs(&ws.dev)?;
            let (t, _) = calibrate(&probs, &labels, cfg.baseline.grid);
            let m = split_metrics(&probs, &labels, &t);
            println!("{}", serde_json::json!({ "thresholds": t, "dev": m }));
            Ok(())
        }
        Cmd::Eval { model, split: name } => {
            let ws = prepare_workspace(&cfg)?;
            let ck = Checkpoint::load(&model.checkpoint)?;
            check_hash(&ck, &ws);
            let cs = split(&ws, name)?;
            let labels: Vec<usize> = cs.iter().map(|c| c.example.label).collect();
            let m = split_metrics(&ck.probs(cs)?, &labels, &ck.thresholds);
            println!("{}", serde_json::json!({ "split": name, "kind": ck.kind, "metrics": m }));
            Ok(())
        }
        Cmd::Explain {
            seq,
            baseline,
            split: name,
            output,
        } => {
            if seq.is_none() && baseline.is_none() {
                return Err(Error::InvalidInput("pass --seq and/or --baseline".into()));
            }
            let ws = prepare_workspace(&cfg)?;
            let s = seq.as_deref().map(Checkpoint::load).transpose()?;
            let b = baseline.as_deref().map(Checkpoint::load).transpose()?;
            for ck in s.iter().chain(&b) {
                check_hash(ck, &ws);
            }
            let ex = explain_all(b.as_ref(), s.as_ref(), split(&ws, name)?)?;
            eprint!("{}", summary_csv(&summarize(&ex)));
            emit(output.as_deref(), &jsonl(&ex))
        }
        Cmd::Intervene {
            checkpoint,
            operator,
            deltas,
            split: name,
        } => {
            let ws = prepare_workspace(&cfg)?;
            let ck = Checkpoint::load(checkpoint)?;
            check_hash(&ck, &ws);
            let kinds: Vec<OperatorKind> = if operator.is_empty() {
                OperatorKind::ALL.to_vec()
            } else {
                operator.iter().map(|&o| o.into()).collect()
            };
            let rows = interventions(&ck, split(&ws, name)?, &kinds, deltas.as_deref())?;
            print!("{}", interventions_csv(&rows));
            Ok(())
        }
        Cmd::Run => {
            let out = pipeline::run_experiment(&cfg)?;
            println!("{}", out.dir.display());
            for (name, m) in [("baseline", &out.report.baseline), ("seq", &out.report.seq)] {
                if let Some(m) = m {
                    eprintln!(
                        "{name}: test acc {:.4} macro-F1 {:.4} (calibrated {:.4})",
                        m.test.accuracy, m.test.macro_f1, m.test.calibrated_macro_f1
                    );
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_bad_input() { 2 } else { 1 })
        }
    }
}
