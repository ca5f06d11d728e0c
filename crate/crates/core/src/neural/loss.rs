//! Softmax and binary cross-entropy.

/// Probabilities below this floor are clamped before taking logs, bounding
/// the loss at −ln(1e−12) ≈ 27.631.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax: subtracts the max logit before
/// exponentiating, so adding a constant to every logit changes nothing
/// and huge logits cannot overflow.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of an empty logit vector");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Binary cross-entropy of the probability assigned to the true class:
/// −ln(clamp(p, 1e−12, 1)).
pub fn bce_loss(p_true: f64) -> f64 {
    -p_true.clamp(PROB_FLOOR, 1.0).ln()
}

/// Gradient of `bce_loss(softmax(logits)[true_class])` with respect to the
/// logits. Inside the clamp region the loss is constant, so the gradient
/// is zero there.
pub fn softmax_bce_grad(probs: &[f64], true_class: usize) -> Vec<f64> {
    if probs[true_class] <= PROB_FLOOR {
        return vec![0.0; probs.len()];
    }
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if j == true_class { p - 1.0 } else { p })
        .collect()
}
