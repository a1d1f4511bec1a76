use std::f64::consts::{FRAC_PI_2, PI};

use chunkcirc_wasm::{analyze, lse_curve, rotate};

fn close(a: [f64; 3], b: [f64; 3]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
}

#[test]
fn rotations_land_on_known_points() {
    assert!(close(rotate(0.0, 0.0).unwrap(), [0.0, 0.0, 1.0]));
    assert!(close(rotate(PI, 0.0).unwrap(), [0.0, 0.0, -1.0]));
    assert!(close(rotate(FRAC_PI_2, 0.0).unwrap(), [0.0, -1.0, 0.0]));
    assert!(close(rotate(FRAC_PI_2, FRAC_PI_2).unwrap(), [1.0, 0.0, 0.0]));
}

#[test]
fn analysis_reports_chunks_and_document() {
    let v = analyze("Net sales increased by 12 % in the third quarter.", 0).unwrap();
    let chunks = v["chunks"].as_array().unwrap();
    assert!(!chunks.is_empty());
    for c in chunks.iter().filter(|c| c["bloch"].is_array()) {
        let n: f64 = c["bloch"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap().powi(2)).sum();
        assert!(n <= 1.0 + 1e-9);
    }
    assert!(v["document"]["purity"].as_f64().unwrap() <= 1.0 + 1e-9);
    assert!(analyze("", 0).is_err());
}

#[test]
fn lse_curve_sits_below_max() {
    let s = [0.2, -0.4, 0.7];
    for (t, v) in [0.01, 0.1, 1.0].iter().zip(lse_curve(&s, &[0.01, 0.1, 1.0])) {
        assert!(v <= 0.7 + 1e-12 && v >= 0.7 - t * 3f64.ln() - 1e-12);
    }
}
