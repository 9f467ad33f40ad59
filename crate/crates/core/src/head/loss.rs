//! Class-weighted focal loss with label smoothing.
//!
//! With smoothed targets `q_c = (1 - eps) * [c == target] + eps / K` the loss
//! is `sum_c q_c * alpha_c * (1 - p_c)^gamma * (-ln p_c)`. At `eps = 0` this
//! is the usual `-alpha_t (1 - p_t)^gamma ln p_t`; at `gamma = 0, alpha = 1`
//! it is smoothed cross-entropy.

/// Probabilities below this are clamped inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn smoothed_target(c: usize, target: usize, k: usize, eps: f64) -> f64 {
    let one_hot = if c == target { 1.0 } else { 0.0 };
    (1.0 - eps) * one_hot + eps / k as f64
}

pub fn focal_loss(p: &[f64], target: usize, alpha: &[f64], gamma: f64, eps: f64) -> f64 {
    let k = p.len();
    (0..k)
        .map(|c| {
            let q = smoothed_target(c, target, k, eps);
            if q == 0.0 {
                return 0.0;
            }
            let pc = p[c];
            q * alpha[c] * (1.0 - pc).max(0.0).powf(gamma) * -(pc.max(PROB_FLOOR).ln())
        })
        .sum()
}

pub fn focal_loss_from_logits(logits: &[f64], target: usize, alpha: &[f64], gamma: f64, eps: f64) -> f64 {
    focal_loss(&softmax(logits), target, alpha, gamma, eps)
}

/// `p_c * d(term_c)/d(p_c)` for one class term, written so it stays finite
/// at `p_c = 0` and `p_c = 1`.
fn scaled_partial(pc: f64, gamma: f64) -> f64 {
    let one_minus = (1.0 - pc).max(0.0);
    let floored = pc < PROB_FLOOR;
    let log_p = pc.max(PROB_FLOOR).ln();
    // d/dp [(1-p)^g] * (-ln p) * p = g (1-p)^(g-1) p ln p
    let focus = if gamma == 0.0 || one_minus == 0.0 || pc == 0.0 {
        0.0
    } else {
        gamma * one_minus.powf(gamma - 1.0) * pc * log_p
    };
    // (1-p)^g * d/dp[-ln p] * p = -(1-p)^g, zero where the floor is active.
    let log_term = if floored { 0.0 } else { -one_minus.powf(gamma) };
    focus + log_term
}

/// Gradient of `focal_loss(softmax(logits))` with respect to the logits.
pub fn focal_loss_grad(logits: &[f64], target: usize, alpha: &[f64], gamma: f64, eps: f64) -> Vec<f64> {
    let p = softmax(logits);
    let k = p.len();
    // h_c = p_c * dL/dp_c; then dL/dz_j = h_j - p_j * sum_c h_c.
    let h: Vec<f64> = (0..k)
        .map(|c| smoothed_target(c, target, k, eps) * alpha[c] * scaled_partial(p[c], gamma))
        .collect();
    let total: f64 = h.iter().sum();
    (0..k).map(|j| h[j] - p[j] * total).collect()
}
