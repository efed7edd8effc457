use crate::nn::NetworkModel;

/// Probabilities are clamped to `[P_MIN, 1 - P_MIN]` before taking logs.
pub const P_MIN: f64 = 1e-7;

/// Alpha-balanced focal loss with focusing exponent 2.
///
/// Returns `(loss, dloss/dp)`. The gradient is zero where the clamp is active.
pub fn focal_loss(p: f64, occupied: bool, alpha: f64) -> (f64, f64) {
    let clamped = p.clamp(P_MIN, 1.0 - P_MIN);
    let (p_hat, alpha_hat, sign) = if occupied { (clamped, alpha, 1.0) } else { (1.0 - clamped, 1.0 - alpha, -1.0) };
    let one_minus = 1.0 - p_hat;
    let log_p = p_hat.ln();
    let loss = -alpha_hat * one_minus * one_minus * log_p;
    let d_phat = alpha_hat * (2.0 * one_minus * log_p - one_minus * one_minus / p_hat);
    let grad = if p == clamped { sign * d_phat } else { 0.0 };
    (loss, grad)
}

/// Squared Euclidean distance between predicted and target colors in `[0,1]^3`,
/// with its gradient with respect to the prediction.
pub fn attribute_loss(predicted: [f64; 3], target: [f64; 3]) -> (f64, [f64; 3]) {
    let d = [predicted[0] - target[0], predicted[1] - target[1], predicted[2] - target[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2], [2.0 * d[0], 2.0 * d[1], 2.0 * d[2]])
}

/// `(lambda / num_points) * ||params||_1`.
pub fn l1_penalty(model: &NetworkModel, lambda: f64, num_points: usize) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda / num_points as f64 * model.l1_norm()
}

/// Mean per-sample distortion plus the sparsity penalty.
pub fn total_loss(sample_losses: &[f64], model: &NetworkModel, lambda: f64, num_points: usize) -> f64 {
    assert!(num_points > 0, "point count must be positive");
    let mean = if sample_losses.is_empty() {
        0.0
    } else {
        sample_losses.iter().sum::<f64>() / sample_losses.len() as f64
    };
    mean + l1_penalty(model, lambda, num_points)
}
