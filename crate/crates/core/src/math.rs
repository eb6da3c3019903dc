//! Small numerical helpers used throughout the crate.

/// log Σ exp(xᵢ) with the usual max shift. Returns -inf for an empty slice
/// or when every entry is -inf.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m; // empty, all -inf, or a stray +inf/NaN dominates
    }
    let sum: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + sum.ln()
}

/// log (1/n) Σ exp(xᵢ).
pub fn logmeanexp(xs: &[f64]) -> f64 {
    logsumexp(xs) - (xs.len() as f64).ln()
}

/// Normalise log weights in place so that logsumexp(w) = 0.
/// Returns the pre-normalisation logsumexp, or None when all weights
/// are -inf (degenerate population).
pub fn normalise_log_weights(log_w: &mut [f64]) -> Option<f64> {
    let lse = logsumexp(log_w);
    if !lse.is_finite() {
        return None;
    }
    for w in log_w.iter_mut() {
        *w -= lse;
    }
    Some(lse)
}
