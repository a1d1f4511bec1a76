//! Confidence, axis-ablation, attribution and intervention metrics.

use serde::{Deserialize, Serialize};

use crate::baseline::{class_probs, PrototypeBank, ScoringMode};
use crate::error::{Error, Result};
use crate::metrics::{mean, pearson};
use crate::qsim::BlochVector;
use crate::seq_model::{encode_with_overrides, AttentionTrace, PosOverride, SeqInput, SeqParams};
use crate::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub p_max: f64,
    pub prob_margin: f64,
    pub entropy_norm: f64,
}

pub fn confidence_metrics(p: &[f64; NUM_CLASSES]) -> ConfidenceRecord {
    let mut s = *p;
    s.sort_by(|a, b| b.total_cmp(a));
    let h: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    ConfidenceRecord {
        p_max: s[0],
        prob_margin: s[0] - s[1],
        entropy_norm: (h / (NUM_CLASSES as f64).ln()).clamp(0.0, 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    fn index(self) -> usize {
        self as usize
    }
}

/// Component-wise Bloch mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisMask(pub [bool; 3]);

impl AxisMask {
    pub const FULL: AxisMask = AxisMask([true; 3]);

    pub fn all() -> [AxisMask; 8] {
        std::array::from_fn(|i| AxisMask([i & 4 != 0, i & 2 != 0, i & 1 != 0]))
    }

    pub fn remove(a: Axis) -> Self {
        let mut m = [true; 3];
        m[a.index()] = false;
        AxisMask(m)
    }

    pub fn keep(a: Axis) -> Self {
        let mut m = [false; 3];
        m[a.index()] = true;
        AxisMask(m)
    }

    pub fn apply(self, r: BlochVector) -> BlochVector {
        let a = r.to_array();
        BlochVector::from_array(std::array::from_fn(|i| if self.0[i] { a[i] } else { 0.0 }))
    }
}

/// Class probabilities with the doc and every prototype masked, HS scoring.
pub fn masked_probs(doc: BlochVector, bank: &PrototypeBank, mask: AxisMask) -> [f64; NUM_CLASSES] {
    let masked = PrototypeBank {
        protos: bank
            .protos
            .iter()
            .map(|row| row.iter().map(|&q| mask.apply(q)).collect())
            .collect(),
        tau: bank.tau,
    };
    class_probs(mask.apply(doc), &masked, ScoringMode::Hs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAblation {
    pub comp: f64,
    pub suff_gap: f64,
}

/// Confidence lost when axis `a` is removed (`comp`) or kept alone
/// (`suff_gap`).
pub fn axis_ablation(doc: BlochVector, bank: &PrototypeBank, a: Axis) -> AxisAblation {
    let p_max = |p: [f64; NUM_CLASSES]| p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let full = p_max(masked_probs(doc, bank, AxisMask::FULL));
    let rm = p_max(masked_probs(doc, bank, AxisMask::remove(a)));
    let keep = p_max(masked_probs(doc, bank, AxisMask::keep(a)));
    AxisAblation {
        comp: (full - rm).max(0.0),
        suff_gap: (full - keep).max(0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkAttribution {
    pub position: usize,
    pub alpha: f64,
    pub bloch: BlochVector,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub chunks: Vec<ChunkAttribution>,
    pub u: BlochVector,
    pub score: f64,
    /// `None` when the total attribution mass vanishes.
    pub top20_share: Option<f64>,
}

/// `a_t = ᾱ_t ⟨r_t, u⟩` for every unmasked chunk.
pub fn chunk_attribution(trace: &AttentionTrace, input: &SeqInput, u: BlochVector) -> AttributionRecord {
    let chunks: Vec<ChunkAttribution> = trace
        .positions
        .iter()
        .zip(&trace.alpha)
        .map(|(&t, &alpha)| {
            let r = input.blochs[t];
            ChunkAttribution {
                position: t,
                alpha,
                bloch: r,
                a: alpha * r.dot(u),
            }
        })
        .collect();
    let a: Vec<f64> = chunks.iter().map(|c| c.a).collect();
    AttributionRecord {
        score: a.iter().sum(),
        top20_share: top_share(&a, 0.2),
        chunks,
        u,
    }
}

/// Share of `Σ|a|` carried by the top `⌈frac·T⌉` entries.
pub fn top_share(a: &[f64], frac: f64) -> Option<f64> {
    let total: f64 = a.iter().map(|v| v.abs()).sum();
    if total < 1e-12 {
        return None;
    }
    let mut mags: Vec<f64> = a.iter().map(|v| v.abs()).collect();
    mags.sort_by(|x, y| y.total_cmp(x));
    let k = ((frac * a.len() as f64).ceil() as usize).max(1);
    Some(mags[..k].iter().sum::<f64>() / total)
}

/// Indices of the top `⌈frac·T⌉` chunks by `|a_t|`, ascending.
pub fn top_set(a: &[f64], frac: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..a.len()).collect();
    idx.sort_by(|&i, &j| a[j].abs().total_cmp(&a[i].abs()).then(i.cmp(&j)));
    let k = ((frac * a.len() as f64).ceil() as usize).clamp(1, a.len().max(1));
    let mut s: Vec<usize> = idx.into_iter().take(k).collect();
    s.sort_unstable();
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelMasses {
    pub bloch: f64,
    pub ccg: f64,
    pub gate: f64,
}

impl ChannelMasses {
    pub fn shares(&self) -> Option<[f64; 3]> {
        let t = self.bloch + self.ccg + self.gate;
        (t > 0.0).then(|| [self.bloch / t, self.ccg / t, self.gate / t])
    }
}

fn argmax(v: &[f64; NUM_CLASSES]) -> usize {
    (0..NUM_CLASSES).fold(0, |b, k| if v[k] > v[b] { k } else { b })
}

/// Occlusion masses on the predicted-class logit: Bloch vector zeroed,
/// type embedding swapped for UNK with the gate held, gate forced to 0.
pub fn channel_attribution(p: &SeqParams, input: &SeqInput) -> Result<ChannelMasses> {
    let base = encode_with_overrides(p, input, &[])?;
    let c = argmax(&base.logits);
    let f0 = base.logits[c];
    let n = input.blochs.len();
    let mut m = ChannelMasses::default();
    for t in input.positions() {
        let mut zeroed = input.clone();
        zeroed.blochs[t] = BlochVector::ZERO;
        m.bloch += (encode_with_overrides(p, &zeroed, &[])?.logits[c] - f0).abs();

        let ty = input.types[t].min(p.n_types - 1);
        let mut ov = vec![PosOverride::default(); n];
        ov[t] = PosOverride {
            gate: Some(p.gate_value(ty)),
            type_id: Some(0),
            ..Default::default()
        };
        m.ccg += (encode_with_overrides(p, input, &ov)?.logits[c] - f0).abs();

        let mut ov = vec![PosOverride::default(); n];
        ov[t].gate = Some(0.0);
        m.gate += (encode_with_overrides(p, input, &ov)?.logits[c] - f0).abs();
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    PolarityFlip,
    NumericScale,
    SpanPermute,
    GateZero,
    AttentionMask,
    UPerturb,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 6] = [
        OperatorKind::PolarityFlip,
        OperatorKind::NumericScale,
        OperatorKind::SpanPermute,
        OperatorKind::GateZero,
        OperatorKind::AttentionMask,
        OperatorKind::UPerturb,
    ];

    /// Default strength grid for the operator.
    pub fn default_deltas(self) -> Vec<f64> {
        match self {
            OperatorKind::GateZero | OperatorKind::AttentionMask => vec![0.25, 0.5, 0.75, 1.0],
            OperatorKind::SpanPermute => vec![-2.0, -1.0, 1.0, 2.0],
            _ => vec![-1.0, -0.5, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub set: Vec<usize>,
    pub deltas: Vec<f64>,
    pub kind: OperatorKind,
}

impl InterventionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.set.is_empty() {
            return Err(Error::InvalidInput("intervention set is empty".into()));
        }
        if self.deltas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("deltas must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// `I_{S,δ}` on a chunk sequence: the edited input and per-position
/// overrides.
pub fn apply_operator(
    kind: OperatorKind,
    p: &SeqParams,
    input: &SeqInput,
    set: &[usize],
    delta: f64,
    u: BlochVector,
) -> (SeqInput, Vec<PosOverride>) {
    let mut x = input.clone();
    let mut ov = vec![PosOverride::default(); input.blochs.len()];
    match kind {
        OperatorKind::NumericScale => {
            for &t in set {
                x.blochs[t] = x.blochs[t].scale(1.0 + delta).project_to_ball();
            }
        }
        OperatorKind::PolarityFlip => {
            for &t in set {
                let r = x.blochs[t];
                x.blochs[t] = r.sub(u.scale(delta * r.dot(u))).project_to_ball();
            }
        }
        OperatorKind::UPerturb => {
            for &t in set {
                x.blochs[t] = x.blochs[t].add(u.scale(delta)).project_to_ball();
            }
        }
        OperatorKind::SpanPermute => {
            let k = set.len() as i64;
            if k > 1 {
                let shift = (delta.round() as i64).rem_euclid(k) as usize;
                for (i, &t) in set.iter().enumerate() {
                    let src = set[(i + k as usize - shift) % k as usize];
                    x.blochs[t] = input.blochs[src];
                    x.types[t] = input.types[src];
                }
            }
        }
        OperatorKind::GateZero => {
            for &t in set {
                let ty = input.types[t].min(p.n_types - 1);
                ov[t].gate = Some(p.gate_value(ty) * (1.0 - delta));
            }
        }
        OperatorKind::AttentionMask => {
            for &t in set {
                ov[t].key_bias = -10.0 * delta;
            }
        }
    }
    (x, ov)
}

/// One `(x, S)` pair: the summed attribution over `S` and the output change
/// at each strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionCase {
    pub attribution_sum: f64,
    pub deltas: Vec<f64>,
    pub responses: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub dc: f64,
    /// `None` when either side has zero variance.
    pub pr: Option<f64>,
    /// `None` with fewer than two strengths.
    pub mvr: Option<f64>,
    pub n_cases: usize,
}

/// Three-way sign; zero is its own symbol.
fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// DC, PR and MVR over a set of intervention cases. Monotonicity is judged
/// in the direction of `sign(Σ a)`: a violation is a step where
/// `sign·Δ_{k+1} < sign·Δ_k`.
pub fn faithfulness(cases: &[InterventionCase]) -> FaithfulnessReport {
    let mut agree = Vec::new();
    let mut pred = Vec::new();
    let mut resp = Vec::new();
    let mut mvr_terms = Vec::new();
    for c in cases {
        for (&d, &r) in c.deltas.iter().zip(&c.responses) {
            let expect = c.attribution_sum * d;
            agree.push(if sign(expect) == sign(r) { 1.0 } else { 0.0 });
            pred.push(expect);
            resp.push(r);
        }
        if c.responses.len() >= 2 {
            let s = sign(c.attribution_sum) as f64;
            let viol = c
                .responses
                .windows(2)
                .filter(|w| s * w[1] < s * w[0])
                .count();
            mvr_terms.push(viol as f64 / (c.responses.len() - 1) as f64);
        }
    }
    FaithfulnessReport {
        dc: if agree.is_empty() { f64::NAN } else { mean(&agree) },
        pr: pearson(&pred, &resp),
        mvr: (!mvr_terms.is_empty()).then(|| mean(&mvr_terms)),
        n_cases: cases.len(),
    }
}

/// Runs one operator over a dataset with the seq model's own attributions.
/// `S` is the top 20% of chunks by `|a_t|`; the scorer is the logit of the
/// unperturbed prediction.
pub fn intervention_suite(
    p: &SeqParams,
    inputs: &[SeqInput],
    kind: OperatorKind,
    deltas: &[f64],
) -> Result<(FaithfulnessReport, Vec<InterventionCase>)> {
    let mut cases = Vec::new();
    for x in inputs {
        let base = match encode_with_overrides(p, x, &[]) {
            Ok(b) => b,
            Err(Error::AllMasked) => continue,
            Err(e) => return Err(e),
        };
        let c = argmax(&base.logits);
        let u = crate::seq_model::readout_direction(p, &base.probs);
        let attr = chunk_attribution(&base.trace, x, u);
        let a: Vec<f64> = attr.chunks.iter().map(|ch| ch.a).collect();
        let local = top_set(&a, 0.2);
        let set: Vec<usize> = local.iter().map(|&i| attr.chunks[i].position).collect();
        let spec = InterventionSpec {
            set,
            deltas: deltas.to_vec(),
            kind,
        };
        spec.validate()?;
        let mut responses = Vec::new();
        for &d in deltas {
            let (xi, ov) = apply_operator(kind, p, x, &spec.set, d, u);
            responses.push(encode_with_overrides(p, &xi, &ov)?.logits[c] - base.logits[c]);
        }
        cases.push(InterventionCase {
            attribution_sum: local.iter().map(|&i| a[i]).sum(),
            deltas: deltas.to_vec(),
            responses,
        });
    }
    Ok((faithfulness(&cases), cases))
}

/// `‖f(D) − f(D')‖` for two forms with identical label streams.
pub fn rewrite_discrepancy(labels_a: &[String], out_a: &[f64], labels_b: &[String], out_b: &[f64]) -> Result<f64> {
    if labels_a != labels_b {
        return Err(Error::NonEquivalentPair);
    }
    Ok(out_a
        .iter()
        .zip(out_b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mean_c: f64,
    pub mean_i: f64,
    /// Cohen's d with pooled SD, correct minus incorrect.
    pub d: Option<f64>,
    /// Point-biserial correlation against the correctness indicator.
    pub r: Option<f64>,
}

pub fn group_stats(values: &[f64], correct: &[bool]) -> Result<GroupStats> {
    let c: Vec<f64> = values.iter().zip(correct).filter(|p| *p.1).map(|p| *p.0).collect();
    let i: Vec<f64> = values.iter().zip(correct).filter(|p| !*p.1).map(|p| *p.0).collect();
    if c.is_empty() || i.is_empty() {
        return Err(Error::InvalidInput("group_stats needs both groups".into()));
    }
    let (mc, mi) = (mean(&c), mean(&i));
    let ss = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    let dof = (c.len() + i.len()) as f64 - 2.0;
    let pooled = if dof > 0.0 {
        ((ss(&c, mc) + ss(&i, mi)) / dof).sqrt()
    } else {
        0.0
    };
    let d = (pooled > 1e-300).then(|| (mc - mi) / pooled);
    let ind: Vec<f64> = correct.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Ok(GroupStats {
        mean_c: mc,
        mean_i: mi,
        d,
        r: pearson(values, &ind),
    })
}
