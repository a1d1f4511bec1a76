//! Chunk circuits, exact contraction to a Bloch vector, and the trainable
//! parameter store.
//!
//! Conventions (`GATE_CONVENTION`):
//!
//! * one qubit per pregroup atom, wires numbered left to right, wire 0 is
//!   the most significant bit of a basis index;
//! * `RX(θ) = exp(-iθX/2)`, `RY(θ) = exp(-iθY/2)`,
//!   `RZ(θ) = diag(e^{-iθ/2}, e^{iθ/2})`, `H = (X+Z)/√2`;
//! * `CRZ(θ) = |0⟩⟨0| ⊗ I + |1⟩⟨1| ⊗ RZ(θ)` (control first);
//! * a cup is the unnormalised effect `⟨00| + ⟨11|`.
//!
//! A single-atom word of depth `D` gets `RX, RZ, RX, RZ, …` on its wire. A
//! word with `k > 1` atoms gets `D` layers of `H` on every wire followed by a
//! ring of `k` CRZ gates `(i → i+1 mod k)`. Either way the word owns
//! `D × atoms` angles.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pregroup::{Atom, PregroupType, TypedChunk};

pub const GATE_CONVENTION: &str = "chunkcirc-iqp-v1:be;rx=exp(-iXt/2);rz=diag(e-it/2,eit/2);crz=c-rz;cup=00+11";
pub const MAX_WIRES: usize = 12;
pub const DEFAULT_DEPTH: usize = 4;
const ZERO_NORM: f64 = 1e-12;

type C = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlochVector {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
}

impl BlochVector {
    pub const ZERO: BlochVector = BlochVector::new(0.0, 0.0, 0.0);
    pub const NORTH: BlochVector = BlochVector::new(0.0, 0.0, 1.0);

    pub const fn new(rx: f64, ry: f64, rz: f64) -> Self {
        BlochVector { rx, ry, rz }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        BlochVector::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.rx, self.ry, self.rz]
    }

    pub fn dot(self, o: BlochVector) -> f64 {
        self.rx * o.rx + self.ry * o.ry + self.rz * o.rz
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(self, k: f64) -> Self {
        BlochVector::new(self.rx * k, self.ry * k, self.rz * k)
    }

    pub fn add(self, o: BlochVector) -> Self {
        BlochVector::new(self.rx + o.rx, self.ry + o.ry, self.rz + o.rz)
    }

    pub fn sub(self, o: BlochVector) -> Self {
        self.add(o.scale(-1.0))
    }

    /// Radial projection into the closed unit ball.
    pub fn project_to_ball(self) -> Self {
        let n = self.norm();
        if n > 1.0 {
            self.scale(1.0 / n)
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix2 {
    pub m: [[C; 2]; 2],
}

impl DensityMatrix2 {
    pub fn trace(&self) -> C {
        self.m[0][0] + self.m[1][1]
    }

    pub fn hermitian_defect(&self) -> f64 {
        let mut d = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((self.m[i][j] - self.m[j][i].conj()).norm());
            }
        }
        d
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let a = self.m[0][0].re;
        let d = self.m[1][1].re;
        let b = self.m[0][1];
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        [mean - rad, mean + rad]
    }

    pub fn purity(&self) -> f64 {
        let mut p = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                p += (self.m[i][j] * self.m[j][i]).re;
            }
        }
        p
    }

    pub fn bloch(&self) -> BlochVector {
        BlochVector::new(
            2.0 * self.m[0][1].re,
            -2.0 * self.m[0][1].im,
            (self.m[0][0] - self.m[1][1]).re,
        )
    }
}

/// `ρ(r) = ½(I + r·σ)`.
pub fn lift_density(r: BlochVector) -> Result<DensityMatrix2> {
    let n = r.norm();
    if n > 1.0 + 1e-9 || !n.is_finite() {
        return Err(Error::BlochOutOfBall(n));
    }
    Ok(DensityMatrix2 {
        m: [
            [C::new(0.5 * (1.0 + r.rz), 0.0), C::new(0.5 * r.rx, -0.5 * r.ry)],
            [C::new(0.5 * r.rx, 0.5 * r.ry), C::new(0.5 * (1.0 - r.rz), 0.0)],
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateKind {
    RX,
    RY,
    RZ,
    H,
    CRZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamRef {
    pub slot: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub kind: GateKind,
    /// Target wire; for CRZ the control is `wires[0]`, target `wires[1]`.
    pub wires: [usize; 2],
    pub angle: f64,
    pub param: Option<ParamRef>,
}

impl Gate {
    pub fn single(kind: GateKind, wire: usize, angle: f64) -> Self {
        Gate {
            kind,
            wires: [wire, wire],
            angle,
            param: None,
        }
    }

    pub fn crz(control: usize, target: usize, angle: f64) -> Self {
        Gate {
            kind: GateKind::CRZ,
            wires: [control, target],
            angle,
            param: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkCircuit {
    pub wires: Vec<(usize, Atom)>,
    pub gates: Vec<Gate>,
    pub cups: Vec<(usize, usize)>,
    pub out_wire: usize,
}

impl ChunkCircuit {
    pub fn n_wires(&self) -> usize {
        self.wires.len()
    }
}

/// Trainable angles keyed by `(label, type)` plus class prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub seed: u64,
    pub depth: usize,
    pub keys: Vec<(String, String)>,
    pub angles: Vec<Vec<f64>>,
    /// `prototypes[c][j]`, empty until the classifier initialises them.
    #[serde(default)]
    pub prototypes: Vec<Vec<BlochVector>>,
    #[serde(skip)]
    index: BTreeMap<(String, String), usize>,
}

impl ParamStore {
    pub fn new(seed: u64, depth: usize) -> Self {
        ParamStore {
            seed,
            depth,
            keys: Vec::new(),
            angles: Vec::new(),
            prototypes: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    /// Rebuilds the lookup table after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self
            .keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn slot(&self, label: &str, ty: &PregroupType) -> Option<usize> {
        self.index.get(&(label.to_string(), ty.to_string())).copied()
    }

    /// Returns the slot for `(label, ty)`, creating it on first sight. The
    /// initial angles depend only on the store seed and the key.
    pub fn register(&mut self, label: &str, ty: &PregroupType) -> usize {
        let key = (label.to_string(), ty.to_string());
        if let Some(&s) = self.index.get(&key) {
            return s;
        }
        let n = self.depth * ty.len().max(1);
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(key.0.as_bytes());
        h.update([0u8]);
        h.update(key.1.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let angles = (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let slot = self.keys.len();
        self.keys.push(key.clone());
        self.angles.push(angles);
        self.index.insert(key, slot);
        slot
    }

    pub fn register_chunk(&mut self, tc: &TypedChunk) {
        for (tok, ty) in circuit_words(tc) {
            self.register(&tok, ty);
        }
    }

    pub fn get(&self, r: ParamRef) -> f64 {
        self.angles[r.slot][r.index]
    }

    pub fn all_finite(&self) -> bool {
        self.angles.iter().flatten().all(|a| a.is_finite())
            && self
                .prototypes
                .iter()
                .flatten()
                .all(|b| b.to_array().iter().all(|v| v.is_finite()))
    }
}

/// The words that own wires: everything for ordinary chunks, only the
/// synthetic token for repaired ones.
fn circuit_words(tc: &TypedChunk) -> Vec<(String, &PregroupType)> {
    let mut pairs = tc.chunk.tokens.iter().zip(&tc.types);
    if tc.synthetic {
        pairs
            .next_back()
            .map(|(t, ty)| (t.label.clone(), ty))
            .into_iter()
            .collect()
    } else {
        pairs.map(|(t, ty)| (t.label.clone(), ty)).collect()
    }
}

/// Compiles a valid chunk, registering unseen `(label, type)` pairs.
pub fn build_chunk_circuit(tc: &TypedChunk, store: &mut ParamStore) -> Result<ChunkCircuit> {
    if !tc.valid {
        return Err(Error::InvalidInput(format!(
            "chunk `{}` reduces to `{}`",
            tc.chunk.text(),
            tc.reduced
        )));
    }
    let depth = store.depth;
    let mut wires = Vec::new();
    let mut gates = Vec::new();
    for (label, ty) in circuit_words(tc) {
        let slot = store.register(&label, ty);
        let w0 = wires.len();
        for &a in ty.atoms() {
            wires.push((wires.len(), a));
        }
        let k = ty.len();
        let pref = |index| Some(ParamRef { slot, index });
        if k == 1 {
            for l in 0..depth {
                let kind = if l % 2 == 0 { GateKind::RX } else { GateKind::RZ };
                let mut g = Gate::single(kind, w0, store.angles[slot][l]);
                g.param = pref(l);
                gates.push(g);
            }
        } else {
            for l in 0..depth {
                for i in 0..k {
                    gates.push(Gate::single(GateKind::H, w0 + i, 0.0));
                }
                for i in 0..k {
                    let idx = l * k + i;
                    let mut g = Gate::crz(w0 + i, w0 + (i + 1) % k, store.angles[slot][idx]);
                    g.param = pref(idx);
                    gates.push(g);
                }
            }
        }
    }
    let (cups, out_wire) = if tc.synthetic {
        (Vec::new(), 0)
    } else {
        (tc.cups.clone(), tc.out_atom.expect("valid chunk has an output atom"))
    };
    Ok(ChunkCircuit {
        wires,
        gates,
        cups,
        out_wire,
    })
}

/// Re-reads every parameterised angle from the store.
pub fn refresh_angles(c: &mut ChunkCircuit, store: &ParamStore) {
    for g in &mut c.gates {
        if let Some(p) = g.param {
            g.angle = store.get(p);
        }
    }
}

#[inline]
fn bit(n: usize, w: usize) -> usize {
    1 << (n - 1 - w)
}

fn single_matrix(kind: GateKind, theta: f64) -> [[C; 2]; 2] {
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let z = C::new(0.0, 0.0);
    match kind {
        GateKind::RX => [[C::new(c, 0.0), C::new(0.0, -s)], [C::new(0.0, -s), C::new(c, 0.0)]],
        GateKind::RY => [[C::new(c, 0.0), C::new(-s, 0.0)], [C::new(s, 0.0), C::new(c, 0.0)]],
        GateKind::RZ => [[C::new(c, -s), z], [z, C::new(c, s)]],
        GateKind::H => {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            [[C::new(h, 0.0), C::new(h, 0.0)], [C::new(h, 0.0), C::new(-h, 0.0)]]
        }
        GateKind::CRZ => unreachable!("two-qubit gate"),
    }
}

fn apply_single(psi: &mut [C], n: usize, w: usize, m: &[[C; 2]; 2]) {
    let b = bit(n, w);
    for i in 0..psi.len() {
        if i & b == 0 {
            let (a0, a1) = (psi[i], psi[i | b]);
            psi[i] = m[0][0] * a0 + m[0][1] * a1;
            psi[i | b] = m[1][0] * a0 + m[1][1] * a1;
        }
    }
}

fn apply_crz(psi: &mut [C], n: usize, ctl: usize, tgt: usize, theta: f64) {
    let (bc, bt) = (bit(n, ctl), bit(n, tgt));
    let ph0 = C::from_polar(1.0, -theta / 2.0);
    let ph1 = C::from_polar(1.0, theta / 2.0);
    for (i, a) in psi.iter_mut().enumerate() {
        if i & bc != 0 {
            *a *= if i & bt == 0 { ph0 } else { ph1 };
        }
    }
}

fn apply_gate(psi: &mut [C], n: usize, g: &Gate, inverse: bool) {
    let th = if inverse { -g.angle } else { g.angle };
    match g.kind {
        GateKind::CRZ => apply_crz(psi, n, g.wires[0], g.wires[1], th),
        GateKind::H => apply_single(psi, n, g.wires[0], &single_matrix(GateKind::H, 0.0)),
        k => apply_single(psi, n, g.wires[0], &single_matrix(k, th)),
    }
}

/// `Im⟨μ|G ψ⟩` for the generator `G` of a rotation gate.
fn generator_overlap(mu: &[C], psi: &[C], n: usize, g: &Gate) -> f64 {
    let mut acc = C::new(0.0, 0.0);
    match g.kind {
        GateKind::RX | GateKind::RY | GateKind::RZ => {
            let b = bit(n, g.wires[0]);
            for i in 0..psi.len() {
                let one = i & b != 0;
                let gpsi = match g.kind {
                    GateKind::RX => psi[i ^ b],
                    GateKind::RY => {
                        // Y|0⟩ = i|1⟩, Y|1⟩ = -i|0⟩
                        if one {
                            C::new(0.0, 1.0) * psi[i ^ b]
                        } else {
                            C::new(0.0, -1.0) * psi[i ^ b]
                        }
                    }
                    _ => {
                        if one {
                            -psi[i]
                        } else {
                            psi[i]
                        }
                    }
                };
                acc += mu[i].conj() * gpsi;
            }
        }
        GateKind::CRZ => {
            let (bc, bt) = (bit(n, g.wires[0]), bit(n, g.wires[1]));
            for i in 0..psi.len() {
                if i & bc != 0 {
                    let s = if i & bt == 0 { 1.0 } else { -1.0 };
                    acc += mu[i].conj() * psi[i] * s;
                }
            }
        }
        GateKind::H => {}
    }
    acc.im
}

/// Wires left after the cups, and the post-selection map.
struct CupMap {
    rest: Vec<usize>,
    cup_bits: Vec<(usize, usize)>,
    n: usize,
}

impl CupMap {
    fn new(c: &ChunkCircuit) -> Result<Self> {
        let n = c.n_wires();
        let mut used = vec![false; n];
        for &(a, b) in &c.cups {
            if a >= n || b >= n || a == b || used[a] || used[b] {
                return Err(Error::InvalidInput(format!("bad cup ({a}, {b})")));
            }
            used[a] = true;
            used[b] = true;
        }
        if c.out_wire >= n || used[c.out_wire] {
            return Err(Error::InvalidInput("output wire is capped".into()));
        }
        let mut rest: Vec<usize> = (0..n).filter(|&w| !used[w]).collect();
        // Output wire first so it is the most significant remaining bit.
        rest.retain(|&w| w != c.out_wire);
        rest.insert(0, c.out_wire);
        Ok(CupMap {
            rest,
            cup_bits: c.cups.iter().map(|&(a, b)| (bit(n, a), bit(n, b))).collect(),
            n,
        })
    }

    fn full_index(&self, r: usize, cups_on: usize) -> usize {
        let m = self.rest.len();
        let mut idx = 0;
        for (k, &w) in self.rest.iter().enumerate() {
            if r & (1 << (m - 1 - k)) != 0 {
                idx |= bit(self.n, w);
            }
        }
        for (k, &(ba, bb)) in self.cup_bits.iter().enumerate() {
            if cups_on & (1 << k) != 0 {
                idx |= ba | bb;
            }
        }
        idx
    }

    /// `B ψ`.
    fn project(&self, psi: &[C]) -> Vec<C> {
        let m = self.rest.len();
        (0..1usize << m)
            .map(|r| {
                (0..1usize << self.cup_bits.len())
                    .map(|k| psi[self.full_index(r, k)])
                    .sum()
            })
            .collect()
    }

    /// `B† χ`.
    fn lift(&self, chi: &[C]) -> Vec<C> {
        let mut out = vec![C::new(0.0, 0.0); 1 << self.n];
        for (r, &v) in chi.iter().enumerate() {
            for k in 0..1usize << self.cup_bits.len() {
                out[self.full_index(r, k)] += v;
            }
        }
        out
    }
}

fn run(c: &ChunkCircuit) -> Result<Vec<C>> {
    let n = c.n_wires();
    if n > MAX_WIRES {
        return Err(Error::TooManyWires(n));
    }
    let mut psi = vec![C::new(0.0, 0.0); 1 << n];
    psi[0] = C::new(1.0, 0.0);
    for g in &c.gates {
        apply_gate(&mut psi, n, g, false);
    }
    Ok(psi)
}

/// Unnormalised output-wire density from the post-selected state, with the
/// output wire as the top bit of `phi`.
fn out_density(phi: &[C]) -> [[C; 2]; 2] {
    let half = phi.len() / 2;
    let mut rho = [[C::new(0.0, 0.0); 2]; 2];
    for r in 0..half {
        let (a, b) = (phi[r], phi[half + r]);
        rho[0][0] += a * a.conj();
        rho[0][1] += a * b.conj();
        rho[1][0] += b * a.conj();
        rho[1][1] += b * b.conj();
    }
    rho
}

/// Exact readout of the output wire. Returns the Bloch vector and the norm
/// of the post-selected state.
pub fn contract_to_bloch(c: &ChunkCircuit) -> Result<(BlochVector, f64)> {
    let map = CupMap::new(c)?;
    let psi = run(c)?;
    let phi = map.project(&psi);
    let norm2: f64 = phi.iter().map(|a| a.norm_sqr()).sum();
    let norm = norm2.sqrt();
    if norm < ZERO_NORM {
        return Err(Error::ZeroNorm(norm));
    }
    let rho = DensityMatrix2 {
        m: out_density(&phi).map(|row| row.map(|v| v / norm2)),
    };
    Ok((rho.bloch(), norm))
}

/// Bloch readout and `∂(g·r)/∂angle` for every parameterised gate, for an
/// upstream gradient `g` on the Bloch vector.
pub fn bloch_vjp(c: &ChunkCircuit, upstream: [f64; 3]) -> Result<(BlochVector, Vec<(ParamRef, f64)>)> {
    let map = CupMap::new(c)?;
    let n = c.n_wires();
    let mut psi = run(c)?;
    let phi = map.project(&psi);
    let norm2: f64 = phi.iter().map(|a| a.norm_sqr()).sum();
    if norm2.sqrt() < ZERO_NORM {
        return Err(Error::ZeroNorm(norm2.sqrt()));
    }
    let rho = DensityMatrix2 {
        m: out_density(&phi).map(|row| row.map(|v| v / norm2)),
    };
    let r = rho.bloch();
    let [gx, gy, gz] = upstream;
    let gr = gx * r.rx + gy * r.ry + gz * r.rz;
    // χ = (Σ g_a σ_a ⊗ I − (g·r)) φ / N
    let m = [
        [C::new(gz - gr, 0.0), C::new(gx, -gy)],
        [C::new(gx, gy), C::new(-gz - gr, 0.0)],
    ];
    let half = phi.len() / 2;
    let mut chi = vec![C::new(0.0, 0.0); phi.len()];
    for k in 0..half {
        let (a, b) = (phi[k], phi[half + k]);
        chi[k] = (m[0][0] * a + m[0][1] * b) / norm2;
        chi[half + k] = (m[1][0] * a + m[1][1] * b) / norm2;
    }
    let mut mu = map.lift(&chi);
    let mut grads = Vec::new();
    for g in c.gates.iter().rev() {
        if let Some(p) = g.param {
            let d = generator_overlap(&mu, &psi, n, g);
            if !d.is_finite() {
                return Err(Error::NonFiniteGradient);
            }
            grads.push((p, d));
        }
        apply_gate(&mut psi, n, g, true);
        apply_gate(&mut mu, n, g, true);
    }
    grads.reverse();
    Ok((r, grads))
}

/// Sparse gradient over store slots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamGrad {
    pub slots: BTreeMap<usize, Vec<f64>>,
}

impl ParamGrad {
    pub fn add(&mut self, store: &ParamStore, p: ParamRef, v: f64) {
        let e = self
            .slots
            .entry(p.slot)
            .or_insert_with(|| vec![0.0; store.angles[p.slot].len()]);
        e[p.index] += v;
    }

    pub fn get(&self, p: ParamRef) -> f64 {
        self.slots.get(&p.slot).map_or(0.0, |v| v[p.index])
    }

    pub fn is_finite(&self) -> bool {
        self.slots.values().flatten().all(|v| v.is_finite())
    }
}

/// Loss value and its gradient with respect to each chunk's Bloch vector.
/// Chunks that fail to contract are passed as `None` and must get a zero
/// gradient.
pub type BlochLoss<'a> = dyn Fn(&[Option<BlochVector>]) -> (f64, Vec<[f64; 3]>) + 'a;

/// Reverse-mode gradient of `loss_fn` over the store angles reached by
/// `circuits`. Angles are read from `store`.
pub fn loss_gradient(
    store: &ParamStore,
    circuits: &[ChunkCircuit],
    loss_fn: &BlochLoss<'_>,
) -> Result<(f64, ParamGrad)> {
    let mut fresh = circuits.to_vec();
    let blochs: Vec<Option<BlochVector>> = fresh
        .iter_mut()
        .map(|c| {
            refresh_angles(c, store);
            contract_to_bloch(c).ok().map(|(b, _)| b)
        })
        .collect();
    let (loss, upstream) = loss_fn(&blochs);
    if !loss.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    let mut grad = ParamGrad::default();
    for ((c, b), g) in fresh.iter().zip(&blochs).zip(&upstream) {
        if b.is_none() || g.iter().all(|v| *v == 0.0) {
            continue;
        }
        let (_, parts) = bloch_vjp(c, *g)?;
        for (p, d) in parts {
            grad.add(store, p, d);
        }
    }
    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    Ok((loss, grad))
}
