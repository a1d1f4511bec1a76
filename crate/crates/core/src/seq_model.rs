//! Single-block Transformer encoder over chunk Bloch-vector sequences.
//!
//! Per position: `u = W_r r + b_r`, `e = E[c]`, `g = σ(γ_c)`,
//! `h = W_c [u; g·e] + b_c`, `x = h + P[t]`. One pre-norm encoder block
//! (multi-head self-attention and a ReLU feed-forward, each wrapped as
//! `x + dropout(f(LN(x)))`), a final LayerNorm, masked mean pooling and a
//! linear 3-way head. Gradients are hand-derived; everything is `f64`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baseline::{class_weights, predict, softmax, EpochRecord};
use crate::error::{Error, Result};
use crate::metrics::macro_f1;
use crate::optim::{Adam, AdamState, ReduceLrOnPlateau};
use crate::qsim::BlochVector;
use crate::NUM_CLASSES;

pub const UNK_TYPE: &str = "<UNK>";
const LN_EPS: f64 = 1e-5;

/// Chunk type strings seen in training, id 0 reserved for unknown types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeVocab {
    pub names: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl TypeVocab {
    pub fn build<'a>(types: impl IntoIterator<Item = &'a str>) -> Self {
        let mut names = vec![UNK_TYPE.to_string()];
        let mut seen: std::collections::BTreeSet<&str> = Default::default();
        for t in types {
            if seen.insert(t) {
                names.push(t.to_string());
            }
        }
        names[1..].sort();
        Self::from_names(names)
    }

    pub fn from_names(names: Vec<String>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        TypeVocab { names, index }
    }

    pub fn id(&self, name: &str) -> usize {
        self.index.get(name).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqInput {
    pub blochs: Vec<BlochVector>,
    pub types: Vec<usize>,
    /// `true` marks a real chunk, `false` padding.
    pub mask: Vec<bool>,
}

impl SeqInput {
    pub fn new(blochs: Vec<BlochVector>, types: Vec<usize>) -> Self {
        let mask = vec![true; blochs.len()];
        SeqInput { blochs, types, mask }
    }

    pub fn positions(&self) -> Vec<usize> {
        (0..self.blochs.len()).filter(|&t| self.mask[t]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqExample {
    pub input: SeqInput,
    pub label: usize,
}

/// Per-position edits used by occlusion and interventions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PosOverride {
    /// Replaces `σ(γ_c)`.
    pub gate: Option<f64>,
    /// Replaces the type id used for the embedding row only.
    pub type_id: Option<usize>,
    /// Added to the attention logits of every query against this key.
    pub key_bias: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SeqConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub d_type: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub burn_in: usize,
    pub early_stop_patience: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_threshold: f64,
    pub plateau_cooldown: usize,
    pub min_lr: f64,
    pub seed: u64,
}

impl Default for SeqConfig {
    fn default() -> Self {
        SeqConfig {
            d_model: 128,
            n_heads: 4,
            d_ff: 256,
            d_type: 16,
            max_len: 64,
            dropout: 0.2,
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            max_epochs: 30,
            burn_in: 2,
            early_stop_patience: 6,
            plateau_factor: 0.6,
            plateau_patience: 2,
            plateau_threshold: 1e-4,
            plateau_cooldown: 0,
            min_lr: 0.0,
            seed: 0,
        }
    }
}

/// All weights, row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqParams {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub d_type: usize,
    pub max_len: usize,
    pub n_types: usize,
    pub w_r: Vec<f64>,
    pub b_r: Vec<f64>,
    pub e_type: Vec<f64>,
    pub gate: Vec<f64>,
    pub w_c: Vec<f64>,
    pub b_c: Vec<f64>,
    pub pos: Vec<f64>,
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    pub w_q: Vec<f64>,
    pub b_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub b_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub b_v: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_o: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w_1: Vec<f64>,
    pub b_1: Vec<f64>,
    pub w_2: Vec<f64>,
    pub b_2: Vec<f64>,
    pub lnf_g: Vec<f64>,
    pub lnf_b: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

macro_rules! for_tensors {
    ($s:expr, $f:ident) => {
        vec![
            ("w_r", $f!($s.w_r), vec![$s.d_model, 3]),
            ("b_r", $f!($s.b_r), vec![$s.d_model]),
            ("e_type", $f!($s.e_type), vec![$s.n_types, $s.d_type]),
            ("gate", $f!($s.gate), vec![$s.n_types]),
            ("w_c", $f!($s.w_c), vec![$s.d_model, $s.d_model + $s.d_type]),
            ("b_c", $f!($s.b_c), vec![$s.d_model]),
            ("pos", $f!($s.pos), vec![$s.max_len, $s.d_model]),
            ("ln1_g", $f!($s.ln1_g), vec![$s.d_model]),
            ("ln1_b", $f!($s.ln1_b), vec![$s.d_model]),
            ("w_q", $f!($s.w_q), vec![$s.d_model, $s.d_model]),
            ("b_q", $f!($s.b_q), vec![$s.d_model]),
            ("w_k", $f!($s.w_k), vec![$s.d_model, $s.d_model]),
            ("b_k", $f!($s.b_k), vec![$s.d_model]),
            ("w_v", $f!($s.w_v), vec![$s.d_model, $s.d_model]),
            ("b_v", $f!($s.b_v), vec![$s.d_model]),
            ("w_o", $f!($s.w_o), vec![$s.d_model, $s.d_model]),
            ("b_o", $f!($s.b_o), vec![$s.d_model]),
            ("ln2_g", $f!($s.ln2_g), vec![$s.d_model]),
            ("ln2_b", $f!($s.ln2_b), vec![$s.d_model]),
            ("w_1", $f!($s.w_1), vec![$s.d_ff, $s.d_model]),
            ("b_1", $f!($s.b_1), vec![$s.d_ff]),
            ("w_2", $f!($s.w_2), vec![$s.d_model, $s.d_ff]),
            ("b_2", $f!($s.b_2), vec![$s.d_model]),
            ("lnf_g", $f!($s.lnf_g), vec![$s.d_model]),
            ("lnf_b", $f!($s.lnf_b), vec![$s.d_model]),
            ("w_out", $f!($s.w_out), vec![NUM_CLASSES, $s.d_model]),
            ("b_out", $f!($s.b_out), vec![NUM_CLASSES]),
        ]
    };
}

macro_rules! by_ref {
    ($e:expr) => {
        &$e[..]
    };
}

macro_rules! by_mut {
    ($e:expr) => {
        &mut $e[..]
    };
}

impl SeqParams {
    pub fn init(cfg: &SeqConfig, n_types: usize, seed: u64) -> Result<Self> {
        if cfg.n_heads == 0 || !cfg.d_model.is_multiple_of(cfg.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                cfg.d_model, cfg.n_heads
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, dt, f) = (cfg.d_model, cfg.d_type, cfg.d_ff);
        let mut lin = |out: usize, inp: usize| -> (Vec<f64>, Vec<f64>) {
            let bound = 1.0 / (inp as f64).sqrt();
            let w = (0..out * inp).map(|_| rng.gen_range(-bound..bound)).collect();
            let b = (0..out).map(|_| rng.gen_range(-bound..bound)).collect();
            (w, b)
        };
        let (w_r, b_r) = lin(d, 3);
        let (w_c, b_c) = lin(d, d + dt);
        let (w_q, b_q) = lin(d, d);
        let (w_k, b_k) = lin(d, d);
        let (w_v, b_v) = lin(d, d);
        let (w_o, b_o) = lin(d, d);
        let (w_1, b_1) = lin(f, d);
        let (w_2, b_2) = lin(d, f);
        let (w_out, b_out) = lin(NUM_CLASSES, d);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let small = Normal::new(0.0, 0.02).expect("valid normal");
        let e_type = (0..n_types * dt).map(|_| unit.sample(&mut rng)).collect();
        let pos = (0..cfg.max_len * d).map(|_| small.sample(&mut rng)).collect();
        Ok(SeqParams {
            d_model: d,
            n_heads: cfg.n_heads,
            d_ff: f,
            d_type: dt,
            max_len: cfg.max_len,
            n_types,
            w_r,
            b_r,
            e_type,
            gate: vec![0.0; n_types],
            w_c,
            b_c,
            pos,
            ln1_g: vec![1.0; d],
            ln1_b: vec![0.0; d],
            w_q,
            b_q,
            w_k,
            b_k,
            w_v,
            b_v,
            w_o,
            b_o,
            ln2_g: vec![1.0; d],
            ln2_b: vec![0.0; d],
            w_1,
            b_1,
            w_2,
            b_2,
            lnf_g: vec![1.0; d],
            lnf_b: vec![0.0; d],
            w_out,
            b_out,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t, _) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64], Vec<usize>)> {
        for_tensors!(self, by_ref)
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64], Vec<usize>)> {
        for_tensors!(self, by_mut)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t, _)| t.iter().all(|v| v.is_finite()))
    }

    pub fn gate_value(&self, type_id: usize) -> f64 {
        sigmoid(self.gate[type_id])
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y = W x + b` for `W` of shape `[out][in]`.
fn linear(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let inp = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| bo + w[o * inp..(o + 1) * inp].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// Accumulates `dW`, `db` and returns `dx`.
fn linear_back(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let inp = x.len();
    let mut dx = vec![0.0; inp];
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[o] += g;
        let row = &w[o * inp..(o + 1) * inp];
        let drow = &mut dw[o * inp..(o + 1) * inp];
        for i in 0..inp {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    dx
}

struct LnCache {
    xhat: Vec<f64>,
    inv_std: f64,
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> (Vec<f64>, LnCache) {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mu) * inv_std).collect();
    let y = xhat.iter().zip(g).zip(b).map(|((h, g), b)| h * g + b).collect();
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_back(c: &LnCache, g: &[f64], dy: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let n = dy.len() as f64;
    let dxhat: Vec<f64> = dy.iter().zip(g).map(|(d, g)| d * g).collect();
    for i in 0..dy.len() {
        dg[i] += dy[i] * c.xhat[i];
        db[i] += dy[i];
    }
    let m1 = dxhat.iter().sum::<f64>() / n;
    let m2 = dxhat.iter().zip(&c.xhat).map(|(a, b)| a * b).sum::<f64>() / n;
    dxhat
        .iter()
        .zip(&c.xhat)
        .map(|(d, h)| c.inv_std * (d - m1 - h * m2))
        .collect()
}

fn dropout_mask(rng: Option<&mut ChaCha8Rng>, n: usize, p: f64) -> Option<Vec<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some((0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect())
}

fn apply_mask(v: &mut [f64], m: &Option<Vec<f64>>) {
    if let Some(m) = m {
        for (a, k) in v.iter_mut().zip(m) {
            *a *= k;
        }
    }
}

/// Head- and query-averaged attention per chunk, encoder outputs and the
/// pooled sentence vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    /// Original sequence positions of the unmasked chunks.
    pub positions: Vec<usize>,
    pub alpha: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqOutput {
    pub logits: [f64; NUM_CLASSES],
    pub probs: [f64; NUM_CLASSES],
    pub trace: AttentionTrace,
}

struct PosCache {
    r: [f64; 3],
    type_row: usize,
    gate_type: usize,
    g: f64,
    gate_fixed: bool,
    cat: Vec<f64>,
    ln1: LnCache,
    a: Vec<f64>,
    ln2: LnCache,
    b: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    lnf: LnCache,
}

struct Cache {
    pos: Vec<PosCache>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// `attn[h][i][j]`
    attn: Vec<Vec<Vec<f64>>>,
    concat: Vec<Vec<f64>>,
    drop1: Vec<Option<Vec<f64>>>,
    drop2: Vec<Option<Vec<f64>>>,
    pooled: Vec<f64>,
}

fn forward_cached(
    p: &SeqParams,
    input: &SeqInput,
    overrides: &[PosOverride],
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(SeqOutput, Cache)> {
    let positions = input.positions();
    if positions.is_empty() {
        return Err(Error::AllMasked);
    }
    if input.blochs.len() > p.max_len {
        return Err(Error::InvalidInput(format!(
            "sequence of {} chunks exceeds max_len {}",
            input.blochs.len(),
            p.max_len
        )));
    }
    let (d, dt, nh) = (p.d_model, p.d_type, p.n_heads);
    let dh = d / nh;
    let scale = 1.0 / (dh as f64).sqrt();
    let n = positions.len();
    let ov = |t: usize| overrides.get(t).copied().unwrap_or_default();

    let mut pcs = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    for &t in &positions {
        let o = ov(t);
        let r = input.blochs[t].to_array();
        let c = input.types[t].min(p.n_types - 1);
        let type_row = o.type_id.map_or(c, |i| i.min(p.n_types - 1));
        let (g, gate_fixed) = match o.gate {
            Some(v) => (v, true),
            None => (sigmoid(p.gate[c]), false),
        };
        let u = linear(&p.w_r, &p.b_r, &r);
        let mut cat = u;
        cat.extend(p.e_type[type_row * dt..(type_row + 1) * dt].iter().map(|e| g * e));
        let mut x = linear(&p.w_c, &p.b_c, &cat);
        for (xi, pi) in x.iter_mut().zip(&p.pos[t * d..(t + 1) * d]) {
            *xi += pi;
        }
        let (a, ln1) = layer_norm(&x, &p.ln1_g, &p.ln1_b);
        xs.push(x);
        pcs.push(PosCache {
            r,
            type_row,
            gate_type: c,
            g,
            gate_fixed,
            cat,
            ln1,
            a,
            ln2: LnCache { xhat: vec![], inv_std: 0.0 },
            b: vec![],
            ff_pre: vec![],
            ff_act: vec![],
            lnf: LnCache { xhat: vec![], inv_std: 0.0 },
        });
    }

    let q: Vec<Vec<f64>> = pcs.iter().map(|c| linear(&p.w_q, &p.b_q, &c.a)).collect();
    let k: Vec<Vec<f64>> = pcs.iter().map(|c| linear(&p.w_k, &p.b_k, &c.a)).collect();
    let v: Vec<Vec<f64>> = pcs.iter().map(|c| linear(&p.w_v, &p.b_v, &c.a)).collect();
    let key_bias: Vec<f64> = positions.iter().map(|&t| ov(t).key_bias).collect();

    let mut attn = vec![vec![vec![0.0; n]; n]; nh];
    let mut concat = vec![vec![0.0; d]; n];
    for h in 0..nh {
        let sl = h * dh..(h + 1) * dh;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| {
                    q[i][sl.clone()].iter().zip(&k[j][sl.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale
                        + key_bias[j]
                })
                .collect();
            let a = softmax(&scores);
            for j in 0..n {
                for (o, vv) in concat[i][sl.clone()].iter_mut().zip(&v[j][sl.clone()]) {
                    *o += a[j] * vv;
                }
            }
            attn[h][i] = a;
        }
    }

    let mut drop1 = Vec::with_capacity(n);
    let mut drop2 = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    for i in 0..n {
        let mut att_out = linear(&p.w_o, &p.b_o, &concat[i]);
        let m1 = dropout_mask(rng.as_deref_mut(), d, dropout);
        apply_mask(&mut att_out, &m1);
        let x2: Vec<f64> = xs[i].iter().zip(&att_out).map(|(a, b)| a + b).collect();
        let (b, ln2) = layer_norm(&x2, &p.ln2_g, &p.ln2_b);
        let ff_pre = linear(&p.w_1, &p.b_1, &b);
        let ff_act: Vec<f64> = ff_pre.iter().map(|v| v.max(0.0)).collect();
        let mut ff_out = linear(&p.w_2, &p.b_2, &ff_act);
        let m2 = dropout_mask(rng.as_deref_mut(), d, dropout);
        apply_mask(&mut ff_out, &m2);
        let x3: Vec<f64> = x2.iter().zip(&ff_out).map(|(a, b)| a + b).collect();
        let (z, lnf) = layer_norm(&x3, &p.lnf_g, &p.lnf_b);
        let pc = &mut pcs[i];
        pc.ln2 = ln2;
        pc.b = b;
        pc.ff_pre = ff_pre;
        pc.ff_act = ff_act;
        pc.lnf = lnf;
        drop1.push(m1);
        drop2.push(m2);
        zs.push(z);
    }
    let mut pooled = vec![0.0; d];
    for z in &zs {
        for (a, b) in pooled.iter_mut().zip(z) {
            *a += b / n as f64;
        }
    }
    let lg = linear(&p.w_out, &p.b_out, &pooled);
    let logits = [lg[0], lg[1], lg[2]];
    let pr = softmax(&lg);
    let alpha: Vec<f64> = (0..n)
        .map(|j| {
            let mut s = 0.0;
            for head in &attn {
                for row in head {
                    s += row[j];
                }
            }
            s / (nh * n) as f64
        })
        .collect();
    let out = SeqOutput {
        logits,
        probs: [pr[0], pr[1], pr[2]],
        trace: AttentionTrace {
            positions,
            alpha,
            z: zs,
            pooled: pooled.clone(),
        },
    };
    Ok((
        out,
        Cache {
            pos: pcs,
            q,
            k,
            v,
            attn,
            concat,
            drop1,
            drop2,
            pooled,
        },
    ))
}

fn backward(p: &SeqParams, c: &Cache, dlogits: &[f64], gr: &mut SeqParams, positions: &[usize]) {
    let (d, dt, nh) = (p.d_model, p.d_type, p.n_heads);
    let dh = d / nh;
    let scale = 1.0 / (dh as f64).sqrt();
    let n = c.pos.len();

    let dpooled = linear_back(&p.w_out, &c.pooled, dlogits, &mut gr.w_out, &mut gr.b_out);
    let dz: Vec<f64> = dpooled.iter().map(|v| v / n as f64).collect();

    let mut dx = vec![vec![0.0; d]; n];
    let mut dconcat = vec![vec![0.0; d]; n];
    for i in 0..n {
        let pc = &c.pos[i];
        let dx3 = layer_norm_back(&pc.lnf, &p.lnf_g, &dz, &mut gr.lnf_g, &mut gr.lnf_b);
        let mut dff_out = dx3.clone();
        apply_mask(&mut dff_out, &c.drop2[i]);
        let dact = linear_back(&p.w_2, &pc.ff_act, &dff_out, &mut gr.w_2, &mut gr.b_2);
        let dpre: Vec<f64> = dact
            .iter()
            .zip(&pc.ff_pre)
            .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
            .collect();
        let db = linear_back(&p.w_1, &pc.b, &dpre, &mut gr.w_1, &mut gr.b_1);
        let dln2 = layer_norm_back(&pc.ln2, &p.ln2_g, &db, &mut gr.ln2_g, &mut gr.ln2_b);
        let dx2: Vec<f64> = dx3.iter().zip(&dln2).map(|(a, b)| a + b).collect();
        let mut datt = dx2.clone();
        apply_mask(&mut datt, &c.drop1[i]);
        dconcat[i] = linear_back(&p.w_o, &c.concat[i], &datt, &mut gr.w_o, &mut gr.b_o);
        dx[i] = dx2;
    }

    let mut dq = vec![vec![0.0; d]; n];
    let mut dk = vec![vec![0.0; d]; n];
    let mut dv = vec![vec![0.0; d]; n];
    for h in 0..nh {
        let sl = h * dh..(h + 1) * dh;
        for i in 0..n {
            let a = &c.attn[h][i];
            let do_i = &dconcat[i][sl.clone()];
            let da: Vec<f64> = (0..n)
                .map(|j| do_i.iter().zip(&c.v[j][sl.clone()]).map(|(x, y)| x * y).sum())
                .collect();
            let dot: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
            for j in 0..n {
                for (dvv, g) in dv[j][sl.clone()].iter_mut().zip(do_i) {
                    *dvv += a[j] * g;
                }
                let ds = a[j] * (da[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for t in sl.clone() {
                    dq[i][t] += ds * c.k[j][t];
                    dk[j][t] += ds * c.q[i][t];
                }
            }
        }
    }

    for i in 0..n {
        let pc = &c.pos[i];
        let mut da = linear_back(&p.w_q, &pc.a, &dq[i], &mut gr.w_q, &mut gr.b_q);
        for (x, y) in da
            .iter_mut()
            .zip(linear_back(&p.w_k, &pc.a, &dk[i], &mut gr.w_k, &mut gr.b_k))
        {
            *x += y;
        }
        for (x, y) in da
            .iter_mut()
            .zip(linear_back(&p.w_v, &pc.a, &dv[i], &mut gr.w_v, &mut gr.b_v))
        {
            *x += y;
        }
        let dln1 = layer_norm_back(&pc.ln1, &p.ln1_g, &da, &mut gr.ln1_g, &mut gr.ln1_b);
        let dxi: Vec<f64> = dx[i].iter().zip(&dln1).map(|(a, b)| a + b).collect();
        let t = positions[i];
        for (gp, g) in gr.pos[t * d..(t + 1) * d].iter_mut().zip(&dxi) {
            *gp += g;
        }
        let dcat = linear_back(&p.w_c, &pc.cat, &dxi, &mut gr.w_c, &mut gr.b_c);
        let row = pc.type_row;
        let e = &p.e_type[row * dt..(row + 1) * dt];
        let mut dg = 0.0;
        for j in 0..dt {
            let g = dcat[d + j];
            gr.e_type[row * dt + j] += pc.g * g;
            dg += g * e[j];
        }
        if !pc.gate_fixed {
            gr.gate[pc.gate_type] += dg * pc.g * (1.0 - pc.g);
        }
        linear_back(&p.w_r, &pc.r, &dcat[..d], &mut gr.w_r, &mut gr.b_r);
    }
}

/// Eval-mode forward pass.
pub fn encode_and_classify(p: &SeqParams, input: &SeqInput) -> Result<SeqOutput> {
    encode_with_overrides(p, input, &[])
}

pub fn encode_with_overrides(p: &SeqParams, input: &SeqInput, overrides: &[PosOverride]) -> Result<SeqOutput> {
    forward_cached(p, input, overrides, 0.0, None).map(|(o, _)| o)
}

/// `x_t` for one chunk, as fed to the encoder block.
pub fn embed_chunk(p: &SeqParams, r: BlochVector, type_id: usize, t: usize, gate: Option<f64>) -> Result<Vec<f64>> {
    if t >= p.max_len {
        return Err(Error::InvalidInput(format!("position {t} beyond max_len {}", p.max_len)));
    }
    let c = type_id.min(p.n_types - 1);
    let g = gate.unwrap_or_else(|| p.gate_value(c));
    let mut cat = linear(&p.w_r, &p.b_r, &r.to_array());
    cat.extend(p.e_type[c * p.d_type..(c + 1) * p.d_type].iter().map(|e| g * e));
    let mut x = linear(&p.w_c, &p.b_c, &cat);
    for (xi, pi) in x.iter_mut().zip(&p.pos[t * p.d_model..(t + 1) * p.d_model]) {
        *xi += pi;
    }
    Ok(x)
}

/// Weighted cross-entropy over `batch` and its gradient. `rng` enables
/// dropout.
pub fn loss_and_grad(
    p: &SeqParams,
    batch: &[&SeqExample],
    weights: &[f64; NUM_CLASSES],
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, SeqParams)> {
    let mut grad = p.zeros_like();
    let wsum: f64 = batch.iter().map(|e| weights[e.label]).sum();
    let mut loss = 0.0;
    for ex in batch {
        let (out, cache) = forward_cached(p, &ex.input, &[], dropout, rng.as_deref_mut())?;
        let w = weights[ex.label] / wsum;
        loss -= w * out.probs[ex.label].max(1e-300).ln();
        let dlogits: Vec<f64> = (0..NUM_CLASSES)
            .map(|c| w * (out.probs[c] - if c == ex.label { 1.0 } else { 0.0 }))
            .collect();
        backward(p, &cache, &dlogits, &mut grad, &out.trace.positions);
    }
    if !grad.all_finite() || !loss.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    Ok((loss, grad))
}

/// Unit Bloch-space direction pushing the predicted class over the
/// runner-up through the linear input path; `(0,0,1)` when degenerate.
pub fn readout_direction(p: &SeqParams, probs: &[f64; NUM_CLASSES]) -> BlochVector {
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let (top, second) = (order[0], order[1]);
    let d = p.d_model;
    let dc = d + p.d_type;
    let diff: Vec<f64> = (0..d)
        .map(|j| p.w_out[top * d + j] - p.w_out[second * d + j])
        .collect();
    // (W_c,u)ᵀ diff
    let mut via_u = vec![0.0; d];
    for (o, &g) in diff.iter().enumerate() {
        for (i, v) in via_u.iter_mut().enumerate() {
            *v += p.w_c[o * dc + i] * g;
        }
    }
    let mut r = [0.0; 3];
    for (o, &g) in via_u.iter().enumerate() {
        for (k, rk) in r.iter_mut().enumerate() {
            *rk += p.w_r[o * 3 + k] * g;
        }
    }
    let v = BlochVector::from_array(r);
    let n = v.norm();
    if n < 1e-12 || !n.is_finite() {
        BlochVector::NORTH
    } else {
        v.scale(1.0 / n)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedSeq {
    pub params: SeqParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

pub fn predict_probs(p: &SeqParams, examples: &[SeqExample]) -> Vec<Option<[f64; NUM_CLASSES]>> {
    examples
        .iter()
        .map(|e| encode_and_classify(p, &e.input).ok().map(|o| o.probs))
        .collect()
}

fn dev_macro_f1(p: &SeqParams, dev: &[SeqExample]) -> f64 {
    let labels: Vec<usize> = dev.iter().map(|e| e.label).collect();
    let preds: Vec<usize> = predict_probs(p, dev)
        .iter()
        .zip(&labels)
        .map(|(pr, &y)| pr.map_or((y + 1) % NUM_CLASSES, |pr| predict(&pr, &[0.0; NUM_CLASSES])))
        .collect();
    macro_f1(&labels, &preds)
}

pub fn train_seq(train: &[SeqExample], dev: &[SeqExample], n_types: usize, cfg: &SeqConfig) -> Result<TrainedSeq> {
    let mut counts = [0usize; NUM_CLASSES];
    for e in train {
        counts[e.label] += 1;
    }
    let weights = class_weights(&counts)?;
    let mut params = SeqParams::init(cfg, n_types, cfg.seed)?;
    let mut states: Vec<AdamState> = params.tensors().iter().map(|(_, t, _)| AdamState::new(t.len())).collect();
    let mut sched = ReduceLrOnPlateau::new(
        cfg.plateau_factor,
        cfg.plateau_patience,
        cfg.plateau_threshold,
        cfg.plateau_cooldown,
        cfg.min_lr,
    );
    let mut lr = cfg.lr;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut history = Vec::new();
    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&SeqExample> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = loss_and_grad(&params, &batch, &weights, cfg.dropout, Some(&mut rng))?;
            loss_sum += loss;
            batches += 1;
            let opt = Adam::adamw(lr, cfg.weight_decay);
            for (((_, t, _), (_, g, _)), st) in params
                .tensors_mut()
                .into_iter()
                .zip(grad.tensors())
                .zip(states.iter_mut())
            {
                opt.step(t, g, st);
            }
        }
        let f1 = dev_macro_f1(&params, dev);
        history.push(EpochRecord {
            epoch,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            dev_macro_f1: f1,
            lr,
        });
        if f1 > best.2 {
            best = (params.clone(), epoch, f1);
            since_best = 0;
        } else {
            since_best += 1;
        }
        lr = sched.step(f1, lr);
        if epoch > cfg.burn_in && since_best >= cfg.early_stop_patience {
            break;
        }
    }
    Ok(TrainedSeq {
        params: best.0,
        history,
        best_epoch: best.1,
        best_dev_f1: best.2,
    })
}
