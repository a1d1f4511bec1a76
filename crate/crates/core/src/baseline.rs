//! Mean-pooled density classifier with log-sum-exp prototype scoring.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::macro_f1;
use crate::optim::{Adam, AdamState, ReduceLrOnPlateau};
use crate::qsim::{
    contract_to_bloch, lift_density, loss_gradient, refresh_angles, BlochVector, ChunkCircuit,
    DensityMatrix2, ParamStore,
};
use crate::NUM_CLASSES;

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_K: usize = 3;
const COSINE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentState {
    pub rho_doc: DensityMatrix2,
    pub m: usize,
    pub chunk_blochs: Vec<BlochVector>,
}

impl DocumentState {
    pub fn bloch(&self) -> BlochVector {
        self.rho_doc.bloch()
    }
}

pub fn mean_bloch(blochs: &[BlochVector]) -> BlochVector {
    let sum = blochs.iter().fold(BlochVector::ZERO, |a, &b| a.add(b));
    sum.scale(1.0 / blochs.len() as f64)
}

/// Uniform mixture of the chunk densities.
pub fn pool_document(blochs: &[BlochVector]) -> Result<DocumentState> {
    if blochs.is_empty() {
        return Err(Error::NoValidChunks);
    }
    let rho_doc = lift_density(mean_bloch(blochs).project_to_ball())?;
    Ok(DocumentState {
        rho_doc,
        m: blochs.len(),
        chunk_blochs: blochs.to_vec(),
    })
}

/// `tr(ρσ) / sqrt(tr ρ² · tr σ²)`.
pub fn hs_similarity(rho: &DensityMatrix2, sigma: &DensityMatrix2) -> f64 {
    let mut num = Complex64::new(0.0, 0.0);
    for i in 0..2 {
        for j in 0..2 {
            num += rho.m[i][j] * sigma.m[j][i];
        }
    }
    num.re / (rho.purity() * sigma.purity()).sqrt()
}

/// Closed form of [`hs_similarity`] on Bloch vectors.
pub fn hs_bloch(b: BlochVector, q: BlochVector) -> f64 {
    (1.0 + b.dot(q)) / ((1.0 + b.dot(b)) * (1.0 + q.dot(q))).sqrt()
}

/// Gradients of [`hs_bloch`] with respect to `b` and `q`.
fn hs_bloch_grad(b: BlochVector, q: BlochVector) -> (BlochVector, BlochVector) {
    let a = 1.0 + b.dot(q);
    let p = 1.0 + b.dot(b);
    let qq = 1.0 + q.dot(q);
    let root = (p * qq).sqrt();
    (
        q.sub(b.scale(a / p)).scale(1.0 / root),
        b.sub(q.scale(a / qq)).scale(1.0 / root),
    )
}

pub fn cosine(a: BlochVector, b: BlochVector) -> f64 {
    let d = a.norm() * b.norm();
    if d == 0.0 {
        0.0
    } else {
        a.dot(b) / d
    }
}

/// `m + τ log Σ exp((s_j − m)/τ) − τ log K`.
pub fn lse_aggregate(s: &[f64], tau: f64) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = s.iter().map(|v| ((v - m) / tau).exp()).sum();
    (m + tau * (sum / s.len() as f64).ln()).min(m)
}

/// `∂S/∂s_j`, the softmax of `s/τ`.
fn lse_weights(s: &[f64], tau: f64) -> Vec<f64> {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| ((v - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringMode {
    /// Normalised Hilbert–Schmidt similarity of density matrices.
    Hs,
    /// Cosine of Bloch directions, falling back to HS for a vanishing doc.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    /// `protos[c][j]`
    pub protos: Vec<Vec<BlochVector>>,
    pub tau: f64,
}

impl PrototypeBank {
    pub fn k(&self) -> usize {
        self.protos.first().map_or(0, Vec::len)
    }

    pub fn project(&mut self) {
        for p in self.protos.iter_mut().flatten() {
            *p = p.project_to_ball();
        }
    }
}

/// Per-class aggregated similarities `S_c`.
pub fn class_logits(doc: BlochVector, bank: &PrototypeBank, mode: ScoringMode) -> [f64; NUM_CLASSES] {
    let use_cos = mode == ScoringMode::Cosine && doc.norm() > COSINE_FLOOR;
    let mut out = [0.0; NUM_CLASSES];
    for (c, protos) in bank.protos.iter().enumerate().take(NUM_CLASSES) {
        let s: Vec<f64> = protos
            .iter()
            .map(|&q| if use_cos { cosine(doc, q) } else { hs_bloch(doc, q) })
            .collect();
        out[c] = lse_aggregate(&s, bank.tau);
    }
    out
}

pub fn class_probs(doc: BlochVector, bank: &PrototypeBank, mode: ScoringMode) -> [f64; NUM_CLASSES] {
    let p = softmax(&class_logits(doc, bank, mode));
    [p[0], p[1], p[2]]
}

pub fn class_scores(doc: &DocumentState, bank: &PrototypeBank, mode: ScoringMode) -> [f64; NUM_CLASSES] {
    class_probs(doc.bloch(), bank, mode)
}

/// Farthest-first selection of `k` prototypes per class from the chunk
/// densities of that class's training documents.
pub fn init_prototypes(per_class: &[Vec<BlochVector>], k: usize, tau: f64) -> Result<PrototypeBank> {
    let mut protos = Vec::new();
    for (class, cands) in per_class.iter().enumerate() {
        if cands.len() < k {
            return Err(Error::InsufficientChunks {
                class,
                found: cands.len(),
                needed: k,
            });
        }
        protos.push(farthest_first(cands, k));
    }
    Ok(PrototypeBank { protos, tau })
}

fn farthest_first(cands: &[BlochVector], k: usize) -> Vec<BlochVector> {
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut seed = 0;
    for (i, b) in cands.iter().enumerate() {
        if b.norm() > cands[seed].norm() {
            seed = i;
        }
    }
    chosen.push(seed);
    let mut min_d: Vec<f64> = cands.iter().map(|&b| 1.0 - hs_bloch(b, cands[seed])).collect();
    while chosen.len() < k {
        let mut best: Option<usize> = None;
        for i in 0..cands.len() {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|b| min_d[i] > min_d[b]) {
                best = Some(i);
            }
        }
        let pick = best.expect("enough candidates");
        chosen.push(pick);
        for (i, d) in min_d.iter_mut().enumerate() {
            *d = d.min(1.0 - hs_bloch(cands[i], cands[pick]));
        }
    }
    chosen.into_iter().map(|i| cands[i]).collect()
}

pub type ThresholdSet = [f64; NUM_CLASSES];

/// Argmax over classes clearing their threshold, else global argmax.
pub fn predict(p: &[f64; NUM_CLASSES], tau: &ThresholdSet) -> usize {
    let argmax = |admit: &dyn Fn(usize) -> bool| {
        (0..NUM_CLASSES)
            .filter(|&k| admit(k))
            .fold(None, |best: Option<usize>, k| match best {
                Some(b) if p[b] >= p[k] => Some(b),
                _ => Some(k),
            })
    };
    argmax(&|k| p[k] >= tau[k]).unwrap_or_else(|| argmax(&|_| true).unwrap())
}

pub fn predict_all(probs: &[[f64; NUM_CLASSES]], tau: &ThresholdSet) -> Vec<usize> {
    probs.iter().map(|p| predict(p, tau)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    /// Three coordinate-wise passes starting from all-zero thresholds.
    #[default]
    Coordinate,
    /// Every point of the 101³ grid.
    Full,
}

pub const GRID_STEPS: usize = 100;

fn grid_value(i: usize) -> f64 {
    i as f64 / GRID_STEPS as f64
}

/// Thresholds on the 0.01 grid maximising dev macro-F1.
pub fn calibrate_thresholds(probs: &[[f64; NUM_CLASSES]], labels: &[usize], mode: GridMode) -> (ThresholdSet, f64) {
    let score = |t: &ThresholdSet| macro_f1(labels, &predict_all(probs, t));
    let mut best_t = [0.0; NUM_CLASSES];
    let mut best = score(&best_t);
    match mode {
        GridMode::Coordinate => {
            for _ in 0..3 {
                for k in 0..NUM_CLASSES {
                    for i in 0..=GRID_STEPS {
                        let mut t = best_t;
                        t[k] = grid_value(i);
                        let f = score(&t);
                        if f > best {
                            best = f;
                            best_t = t;
                        }
                    }
                }
            }
        }
        GridMode::Full => {
            for a in 0..=GRID_STEPS {
                for b in 0..=GRID_STEPS {
                    for c in 0..=GRID_STEPS {
                        let t = [grid_value(a), grid_value(b), grid_value(c)];
                        let f = score(&t);
                        if f > best {
                            best = f;
                            best_t = t;
                        }
                    }
                }
            }
        }
    }
    (best_t, best)
}

/// Inverse-frequency weights scaled to sum to the number of classes.
pub fn class_weights(counts: &[usize; NUM_CLASSES]) -> Result<[f64; NUM_CLASSES]> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::DegenerateSplit(c));
    }
    let inv: Vec<f64> = counts.iter().map(|&n| 1.0 / n as f64).collect();
    let z: f64 = inv.iter().sum();
    Ok([0, 1, 2].map(|c| inv[c] * NUM_CLASSES as f64 / z))
}

/// A sentence as a set of compiled chunk circuits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub circuits: Vec<ChunkCircuit>,
    pub label: usize,
}

/// Chunk Bloch vectors under the current store; chunks that fail to
/// contract are dropped.
pub fn chunk_blochs(ex: &Example, store: &ParamStore) -> Vec<BlochVector> {
    ex.circuits
        .iter()
        .filter_map(|c| {
            let mut c = c.clone();
            refresh_angles(&mut c, store);
            contract_to_bloch(&c).ok().map(|(b, _)| b)
        })
        .collect()
}

pub fn document(ex: &Example, store: &ParamStore) -> Result<DocumentState> {
    pool_document(&chunk_blochs(ex, store))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub burn_in: usize,
    pub early_stop_patience: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_threshold: f64,
    pub plateau_cooldown: usize,
    pub min_lr: f64,
    pub tau: f64,
    pub k: usize,
    pub scoring: ScoringMode,
    pub grid: GridMode,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            lr: 5e-4,
            batch_size: 9,
            max_epochs: 20,
            burn_in: 2,
            early_stop_patience: 3,
            plateau_factor: 0.5,
            plateau_patience: 2,
            plateau_threshold: 2e-3,
            plateau_cooldown: 1,
            min_lr: 1e-5,
            tau: DEFAULT_TAU,
            k: DEFAULT_K,
            scoring: ScoringMode::Cosine,
            grid: GridMode::Coordinate,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_f1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedBaseline {
    pub store: ParamStore,
    pub bank: PrototypeBank,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

/// Weighted cross-entropy of a batch of documents and its gradient with
/// respect to every chunk Bloch vector and prototype.
struct BatchLoss<'a> {
    docs: &'a [(usize, usize, usize)],
    bank: &'a PrototypeBank,
    weights: &'a [f64; NUM_CLASSES],
}

impl BatchLoss<'_> {
    fn eval(&self, blochs: &[Option<BlochVector>], proto_grad: &mut [Vec<BlochVector>]) -> (f64, Vec<[f64; 3]>) {
        let mut grads = vec![[0.0; 3]; blochs.len()];
        let mut loss = 0.0;
        let mut wsum = 0.0;
        let mut per_doc = Vec::new();
        for &(start, end, y) in self.docs {
            let valid: Vec<(usize, BlochVector)> = (start..end)
                .filter_map(|i| blochs[i].map(|b| (i, b)))
                .collect();
            if valid.is_empty() {
                continue;
            }
            wsum += self.weights[y];
            per_doc.push((valid, y));
        }
        if wsum == 0.0 {
            return (0.0, grads);
        }
        let tau = self.bank.tau;
        for (valid, y) in per_doc {
            let b = mean_bloch(&valid.iter().map(|v| v.1).collect::<Vec<_>>());
            let mut sims = Vec::new();
            let mut logits = [0.0; NUM_CLASSES];
            for c in 0..NUM_CLASSES {
                let s: Vec<f64> = self.bank.protos[c].iter().map(|&q| hs_bloch(b, q)).collect();
                logits[c] = lse_aggregate(&s, tau);
                sims.push(s);
            }
            let p = softmax(&logits);
            let w = self.weights[y] / wsum;
            loss += -w * p[y].max(1e-300).ln();
            let mut db = BlochVector::ZERO;
            for c in 0..NUM_CLASSES {
                let dlogit = w * (p[c] - if c == y { 1.0 } else { 0.0 });
                let lw = lse_weights(&sims[c], tau);
                for (j, &q) in self.bank.protos[c].iter().enumerate() {
                    let (gb, gq) = hs_bloch_grad(b, q);
                    db = db.add(gb.scale(dlogit * lw[j]));
                    proto_grad[c][j] = proto_grad[c][j].add(gq.scale(dlogit * lw[j]));
                }
            }
            let share = db.scale(1.0 / valid.len() as f64).to_array();
            for (i, _) in valid {
                grads[i] = share;
            }
        }
        (loss, grads)
    }
}

pub fn eval_probs(examples: &[Example], store: &ParamStore, bank: &PrototypeBank, mode: ScoringMode) -> Vec<Option<[f64; NUM_CLASSES]>> {
    examples
        .iter()
        .map(|ex| document(ex, store).ok().map(|d| class_scores(&d, bank, mode)))
        .collect()
}

/// Macro-F1 of argmax predictions; documents without valid chunks count as
/// a wrong prediction.
pub fn eval_macro_f1(examples: &[Example], store: &ParamStore, bank: &PrototypeBank, mode: ScoringMode, tau: &ThresholdSet) -> f64 {
    let probs = eval_probs(examples, store, bank, mode);
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let preds: Vec<usize> = probs
        .iter()
        .zip(&labels)
        .map(|(p, &y)| p.map_or((y + 1) % NUM_CLASSES, |p| predict(&p, tau)))
        .collect();
    macro_f1(&labels, &preds)
}

/// Trains word angles and prototypes. `store` must already hold every slot
/// the examples reference.
pub fn train_baseline(
    mut store: ParamStore,
    train: &[Example],
    dev: &[Example],
    cfg: &BaselineConfig,
) -> Result<TrainedBaseline> {
    let mut counts = [0usize; NUM_CLASSES];
    for ex in train {
        counts[ex.label] += 1;
    }
    let weights = class_weights(&counts)?;

    let mut per_class: Vec<Vec<BlochVector>> = vec![Vec::new(); NUM_CLASSES];
    for ex in train {
        per_class[ex.label].extend(chunk_blochs(ex, &store));
    }
    let mut bank = init_prototypes(&per_class, cfg.k, cfg.tau)?;

    let mut word_state: Vec<Option<AdamState>> = vec![None; store.len()];
    let mut proto_state = AdamState::new(NUM_CLASSES * cfg.k * 3);
    let mut sched = ReduceLrOnPlateau::new(
        cfg.plateau_factor,
        cfg.plateau_patience,
        cfg.plateau_threshold,
        cfg.plateau_cooldown,
        cfg.min_lr,
    );
    let mut lr = cfg.lr;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let zero_t = [0.0; NUM_CLASSES];
    let mut best = (store.clone(), bank.clone(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut circuits = Vec::new();
            let mut docs = Vec::new();
            for &i in batch {
                let start = circuits.len();
                circuits.extend(train[i].circuits.iter().cloned());
                docs.push((start, circuits.len(), train[i].label));
            }
            let proto_grad = std::cell::RefCell::new(vec![vec![BlochVector::ZERO; cfg.k]; NUM_CLASSES]);
            let loss = BatchLoss {
                docs: &docs,
                bank: &bank,
                weights: &weights,
            };
            let (value, grad) = loss_gradient(&store, &circuits, &|b| {
                let mut pg = proto_grad.borrow_mut();
                for row in pg.iter_mut() {
                    row.fill(BlochVector::ZERO);
                }
                loss.eval(b, &mut pg)
            })?;
            loss_sum += value;
            batches += 1;

            let opt = Adam::new(lr);
            for (&slot, g) in &grad.slots {
                let st = word_state[slot].get_or_insert_with(|| AdamState::new(g.len()));
                opt.step(&mut store.angles[slot], g, st);
            }
            let pg = proto_grad.into_inner();
            let mut flat: Vec<f64> = bank.protos.iter().flatten().flat_map(|b| b.to_array()).collect();
            let gflat: Vec<f64> = pg.iter().flatten().flat_map(|b| b.to_array()).collect();
            if gflat.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient);
            }
            opt.step(&mut flat, &gflat, &mut proto_state);
            for (i, p) in bank.protos.iter_mut().flatten().enumerate() {
                *p = BlochVector::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
            }
            bank.project();
        }
        let dev_f1 = eval_macro_f1(dev, &store, &bank, cfg.scoring, &zero_t);
        history.push(EpochRecord {
            epoch,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            dev_macro_f1: dev_f1,
            lr,
        });
        if dev_f1 > best.3 {
            best = (store.clone(), bank.clone(), epoch, dev_f1);
            since_best = 0;
        } else {
            since_best += 1;
        }
        lr = sched.step(dev_f1, lr);
        if epoch > cfg.burn_in && since_best >= cfg.early_stop_patience {
            break;
        }
    }
    let (mut store, bank, best_epoch, best_dev_f1) = best;
    store.prototypes = bank.protos.clone();
    Ok(TrainedBaseline {
        store,
        bank,
        history,
        best_epoch,
        best_dev_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn pooling_cases() {
        let d = pool_document(&[BlochVector::new(0.1, 0.2, 0.3)]).unwrap();
        assert_eq!(d.rho_doc, lift_density(BlochVector::new(0.1, 0.2, 0.3)).unwrap());
        let d = pool_document(&[BlochVector::NORTH, BlochVector::new(0.0, 0.0, -1.0)]).unwrap();
        assert!(close(d.rho_doc.m[0][0].re, 0.5, 1e-15) && close(d.rho_doc.m[1][1].re, 0.5, 1e-15));
        assert!(matches!(pool_document(&[]), Err(Error::NoValidChunks)));
    }

    #[test]
    fn pooling_matches_matrix_mean() {
        let bs = [
            BlochVector::new(0.3, -0.2, 0.5),
            BlochVector::new(-0.7, 0.1, 0.0),
            BlochVector::new(0.0, 0.6, -0.6),
        ];
        let d = pool_document(&bs).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mean: Complex64 = bs.iter().map(|&b| lift_density(b).unwrap().m[i][j]).sum::<Complex64>() / 3.0;
                assert!((d.rho_doc.m[i][j] - mean).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn hs_cases() {
        let up = lift_density(BlochVector::NORTH).unwrap();
        let down = lift_density(BlochVector::new(0.0, 0.0, -1.0)).unwrap();
        let mixed = lift_density(BlochVector::ZERO).unwrap();
        assert!(close(hs_similarity(&up, &up), 1.0, 1e-12));
        assert!(close(hs_similarity(&up, &down), 0.0, 1e-12));
        // tr = 1/2, sqrt(1/2 · 1) = 1/√2
        assert!(close(hs_similarity(&mixed, &up), std::f64::consts::FRAC_1_SQRT_2, 1e-12));
    }

    #[test]
    fn lse_cases() {
        assert_eq!(lse_aggregate(&[0.7, 0.7, 0.7], 0.1), 0.7);
        let s = [0.2f64, 0.5, 0.8];
        let direct = 0.1 * s.iter().map(|v| (v / 0.1).exp()).sum::<f64>().ln() - 0.1 * 3f64.ln();
        assert!(close(lse_aggregate(&s, 0.1), direct, 1e-12));
        assert!(close(lse_aggregate(&s, 1e-6), 0.8, 1e-5));
    }

    #[test]
    fn farthest_first_cases() {
        let c = [
            BlochVector::new(0.0, 0.0, 0.9),
            BlochVector::NORTH,
            BlochVector::new(1.0, 0.0, 0.0),
            BlochVector::new(-1.0, 0.0, 0.0),
        ];
        let bank = init_prototypes(&[c.to_vec(), c.to_vec(), c.to_vec()], 3, 0.1).unwrap();
        assert_eq!(bank.protos[0][0], BlochVector::NORTH);
        assert_ne!(bank.protos[0][1], c[0]);
        let dup = vec![BlochVector::new(0.5, 0.0, 0.0); 4];
        let bank = init_prototypes(&[dup.clone(), dup.clone(), dup], 3, 0.1).unwrap();
        assert_eq!(bank.protos[0].len(), 3);
        let err = init_prototypes(&[c.to_vec(), vec![BlochVector::ZERO; 2], c.to_vec()], 3, 0.1);
        assert!(matches!(err, Err(Error::InsufficientChunks { class: 1, found: 2, needed: 3 })));
    }

    #[test]
    fn scoring_cases() {
        let q = vec![BlochVector::new(0.2, 0.3, 0.1); 3];
        let bank = PrototypeBank {
            protos: vec![q.clone(), q.clone(), q],
            tau: 0.1,
        };
        let p = class_probs(BlochVector::new(0.5, -0.1, 0.2), &bank, ScoringMode::Hs);
        for v in p {
            assert!(close(v, 1.0 / 3.0, 1e-12));
        }
        let sm = softmax(&[1.0, 0.0, 0.0]);
        let e = std::f64::consts::E;
        assert!(close(sm[0], e / (e + 2.0), 1e-12));
        let doc = BlochVector::new(0.3, 0.0, 0.4);
        assert!(close(cosine(doc, BlochVector::new(0.6, 0.0, 0.8)), 1.0, 1e-12));
        assert!(close(cosine(BlochVector::NORTH, BlochVector::new(1.0, 0.0, 0.0)), 0.0, 1e-12));
    }

    #[test]
    fn dominant_prototype_wins_at_small_tau() {
        let target = BlochVector::new(0.0, 0.8, 0.0);
        let bank = PrototypeBank {
            protos: vec![
                vec![BlochVector::NORTH; 3],
                vec![target, BlochVector::new(0.0, 0.0, -1.0), BlochVector::new(-1.0, 0.0, 0.0)],
                vec![BlochVector::new(1.0, 0.0, 0.0); 3],
            ],
            tau: 1e-4,
        };
        let p = class_probs(target, &bank, ScoringMode::Hs);
        assert_eq!(predict(&p, &[0.0; 3]), 1);
    }

    #[test]
    fn class_weights_from_table_counts() {
        let w = class_weights(&[194, 889, 365]).unwrap();
        let inv = [1.0 / 194.0, 1.0 / 889.0, 1.0 / 365.0];
        let z: f64 = inv.iter().sum();
        for c in 0..3 {
            assert!(close(w[c], 3.0 * inv[c] / z, 1e-12));
        }
        assert!(matches!(class_weights(&[3, 0, 1]), Err(Error::DegenerateSplit(1))));
    }

    #[test]
    fn thresholds() {
        let p = [[0.2, 0.5, 0.3], [0.4, 0.35, 0.25]];
        assert_eq!(predict_all(&p, &[0.0; 3]), vec![1, 0]);
        assert_eq!(predict(&[0.2, 0.5, 0.3], &[0.320, 0.372, 0.300]), 1);
        assert_eq!(predict(&[0.2, 0.35, 0.31], &[0.320, 0.372, 0.300]), 2);
        assert_eq!(predict(&[0.34, 0.33, 0.33], &[0.9, 0.9, 0.9]), 0);
    }

    #[test]
    fn calibration_helps_underconfident_class() {
        // Class 0 never wins the argmax but carries a telling 0.3+ score.
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            let y = i % 3;
            labels.push(y);
            probs.push(match y {
                0 => [0.34, 0.36, 0.30],
                1 => [0.20, 0.60, 0.20],
                _ => [0.20, 0.25, 0.55],
            });
        }
        let base = macro_f1(&labels, &predict_all(&probs, &[0.0; 3]));
        let (t, f) = calibrate_thresholds(&probs, &labels, GridMode::Coordinate);
        assert!(f >= base);
        assert!(f > 0.99, "{t:?} {f}");
        let (_, full) = calibrate_thresholds(&probs, &labels, GridMode::Full);
        assert!(close(full, f, 1e-12));
    }

    #[test]
    fn hs_gradient_matches_finite_differences() {
        let b = BlochVector::new(0.3, -0.4, 0.2);
        let q = BlochVector::new(-0.1, 0.5, 0.6);
        let (gb, gq) = hs_bloch_grad(b, q);
        let h = 1e-6;
        for k in 0..3 {
            let mut e = [0.0; 3];
            e[k] = h;
            let e = BlochVector::from_array(e);
            let fd_b = (hs_bloch(b.add(e), q) - hs_bloch(b.sub(e), q)) / (2.0 * h);
            let fd_q = (hs_bloch(b, q.add(e)) - hs_bloch(b, q.sub(e))) / (2.0 * h);
            assert!(close(fd_b, gb.to_array()[k], 1e-8));
            assert!(close(fd_q, gq.to_array()[k], 1e-8));
        }
    }

    fn ball() -> impl Strategy<Value = BlochVector> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| BlochVector::new(x, y, z).project_to_ball())
    }

    proptest! {
        #[test]
        fn hs_in_unit_interval(a in ball(), b in ball()) {
            let s = hs_similarity(&lift_density(a).unwrap(), &lift_density(b).unwrap());
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&s));
            prop_assert!((s - hs_bloch(a, b)).abs() < 1e-12);
        }

        #[test]
        fn lse_bounds(s in prop::collection::vec(-1.0..1.0f64, 3), tau in 1e-3..2.0f64) {
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let v = lse_aggregate(&s, tau);
            prop_assert!(v <= m + 1e-12);
            prop_assert!(v >= m - tau * 3f64.ln() - 1e-12);
        }

        #[test]
        fn pooling_is_bloch_mean_and_order_free(bs in prop::collection::vec(ball(), 1..6)) {
            let d = pool_document(&bs).unwrap();
            let mean = mean_bloch(&bs);
            prop_assert!(d.bloch().sub(mean).norm() < 1e-12);
            let mut rev = bs.clone();
            rev.reverse();
            prop_assert!(pool_document(&rev).unwrap().bloch().sub(d.bloch()).norm() < 1e-12);
        }
    }
}
