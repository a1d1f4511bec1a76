//! Browser bindings: sentence analysis, single-qubit rotations and the
//! log-sum-exp aggregator.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use chunkcirc::baseline::{lse_aggregate, pool_document};
use chunkcirc::pregroup::{type_chunk, Lexicon, PregroupType};
use chunkcirc::qsim::{build_chunk_circuit, contract_to_bloch, ChunkCircuit, Gate, GateKind, ParamStore, DEFAULT_DEPTH, MAX_WIRES};
use chunkcirc::textprep::{preprocess, RuleBundle};

/// Chunks, pregroup types and freshly initialised Bloch vectors for `text`.
pub fn analyze(text: &str, seed: u64) -> chunkcirc::Result<Value> {
    let (_, chunks) = preprocess(text, &RuleBundle::default_bundle())?;
    let lexicon = Lexicon::default_lexicon();
    let mut store = ParamStore::new(seed, DEFAULT_DEPTH);
    let mut blochs = Vec::new();
    let mut rows = Vec::new();
    for c in &chunks {
        let tc = type_chunk(c, &lexicon);
        let mut row = json!({
            "text": c.text(),
            "labels": c.labels(),
            "signature": tc.signature(),
            "reduced": tc.reduced.to_string(),
            "valid": tc.valid,
            "synthetic": tc.synthetic,
        });
        let wires: usize = tc.types.iter().map(PregroupType::len).sum();
        if tc.valid && wires <= MAX_WIRES {
            let circ = build_chunk_circuit(&tc, &mut store)?;
            let (b, _) = contract_to_bloch(&circ)?;
            row["wires"] = json!(circ.n_wires());
            row["gates"] = json!(circ.gates.len());
            row["bloch"] = json!(b.to_array());
            blochs.push(b);
        }
        rows.push(row);
    }
    let doc = match pool_document(&blochs) {
        Ok(d) => json!({ "bloch": d.bloch().to_array(), "purity": d.rho_doc.purity() }),
        Err(_) => Value::Null,
    };
    Ok(json!({ "chunks": rows, "document": doc }))
}

/// Bloch vector of `RZ(theta_z) RX(theta_x) |0>`.
pub fn rotate(theta_x: f64, theta_z: f64) -> chunkcirc::Result<[f64; 3]> {
    let s = PregroupType::sentence().atoms()[0];
    let circ = ChunkCircuit {
        wires: vec![(0, s)],
        gates: vec![Gate::single(GateKind::RX, 0, theta_x), Gate::single(GateKind::RZ, 0, theta_z)],
        cups: vec![],
        out_wire: 0,
    };
    Ok(contract_to_bloch(&circ)?.0.to_array())
}

/// Mean-normalised log-sum-exp of `scores` at each temperature in `taus`.
pub fn lse_curve(scores: &[f64], taus: &[f64]) -> Vec<f64> {
    taus.iter().map(|&t| lse_aggregate(scores, t)).collect()
}

#[wasm_bindgen(js_name = analyze)]
pub fn analyze_js(text: &str, seed: u32) -> Result<String, JsError> {
    analyze(text, seed as u64)
        .map(|v| v.to_string())
        .map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = rotate)]
pub fn rotate_js(theta_x: f64, theta_z: f64) -> Result<Vec<f64>, JsError> {
    rotate(theta_x, theta_z)
        .map(|b| b.to_vec())
        .map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = lseCurve)]
pub fn lse_curve_js(scores: &[f64], taus: &[f64]) -> Vec<f64> {
    lse_curve(scores, taus)
}
