//! Classification and correlation metrics.

use crate::NUM_CLASSES;

/// `m[true][pred]` counts.
pub fn confusion(y_true: &[usize], y_pred: &[usize]) -> [[usize; NUM_CLASSES]; NUM_CLASSES] {
    let mut m = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        m[t][p] += 1;
    }
    m
}

/// Per-class F1; a class with no support and no predictions scores 0.
pub fn per_class_f1(y_true: &[usize], y_pred: &[usize]) -> [f64; NUM_CLASSES] {
    let m = confusion(y_true, y_pred);
    let mut out = [0.0; NUM_CLASSES];
    for (c, f) in out.iter_mut().enumerate() {
        let tp = m[c][c] as f64;
        let fp: f64 = (0..NUM_CLASSES).filter(|&r| r != c).map(|r| m[r][c] as f64).sum();
        let fn_: f64 = (0..NUM_CLASSES).filter(|&p| p != c).map(|p| m[c][p] as f64).sum();
        let denom = 2.0 * tp + fp + fn_;
        *f = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    out
}

pub fn macro_f1(y_true: &[usize], y_pred: &[usize]) -> f64 {
    per_class_f1(y_true, y_pred).iter().sum::<f64>() / NUM_CLASSES as f64
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
    if y_true.is_empty() {
        return 0.0;
    }
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    hits as f64 / y_true.len() as f64
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Pearson correlation; `None` when either side has zero variance or fewer
/// than two points.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let (mx, my) = (mean(&xs[..n]), mean(&ys[..n]));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (xs[i] - mx, ys[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 1e-300 || syy <= 1e-300 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_by_hand() {
        let t = [0, 0, 1, 1, 2, 2];
        let p = [0, 1, 1, 1, 2, 0];
        // class 0: tp1 fp1 fn1 -> 0.5; class 1: tp2 fp1 fn0 -> 0.8; class 2: tp1 fp0 fn1 -> 2/3
        let f = per_class_f1(&t, &p);
        assert!((f[0] - 0.5).abs() < 1e-12);
        assert!((f[1] - 0.8).abs() < 1e-12);
        assert!((f[2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((macro_f1(&t, &p) - (0.5 + 0.8 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_scores_zero() {
        let f = per_class_f1(&[0, 1], &[0, 1]);
        assert_eq!(f, [1.0, 1.0, 0.0]);
    }

    #[test]
    fn pearson_edge_cases() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_none());
        assert!(pearson(&[1.0], &[1.0]).is_none());
    }
}
