//! Softmax and the symmetrized divergence used both as training loss and
//! anomaly score. Natural-log convention throughout, so the divergence is
//! bounded by ln 2.

use super::NnError;
use crate::scalar::Scalar;

/// Probabilities below this are clamped before entering a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax (max subtraction). Outputs are strictly
/// positive and sum to 1 within 1e-12.
pub fn softmax<S: Scalar>(logits: &[S]) -> Result<Vec<S>, NnError> {
    if logits.is_empty() {
        return Err(NnError::EmptyInput);
    }
    let max = logits.iter().cloned().fold(S::neg_infinity(), S::max);
    let mut out: Vec<S> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum = out.iter().fold(S::zero(), |acc, &v| acc + v);
    let floor = S::min_positive_value();
    for v in &mut out {
        *v = (*v / sum).max(floor);
    }
    Ok(out)
}

/// Jensen-Shannon divergence between two distributions over the same
/// support: the mean of each side's KL divergence to the midpoint.
/// Symmetric by construction (term-by-term), zero iff p == y, at most ln 2.
pub fn jsd<S: Scalar>(p: &[S], y: &[S]) -> Result<S, NnError> {
    if p.len() != y.len() {
        return Err(NnError::LengthMismatch {
            left: p.len(),
            right: y.len(),
        });
    }
    if p.is_empty() {
        return Err(NnError::EmptyInput);
    }
    let floor = S::of(PROB_FLOOR);
    let half = S::of(0.5);
    let mut acc = S::zero();
    for (&pi, &yi) in p.iter().zip(y) {
        let m = half * (pi + yi);
        let lm = m.max(floor).ln();
        let lp = pi.max(floor).ln();
        let ly = yi.max(floor).ln();
        acc = acc + half * (pi * (lp - lm) + yi * (ly - lm));
    }
    Ok(acc)
}

/// Gradient of jsd(softmax(logits), y_prob) with respect to the logits.
/// y_prob is already a probability vector and is treated as constant.
pub fn jsd_softmax_grad<S: Scalar>(logits: &[S], y_prob: &[S]) -> Result<Vec<S>, NnError> {
    let p = softmax(logits)?;
    jsd_grad_from_probs(&p, y_prob)
}

/// Same gradient, starting from the already-softmaxed prediction. Callers
/// in the training loop reuse their softmax output through this entry.
pub(crate) fn jsd_grad_from_probs<S: Scalar>(p: &[S], y: &[S]) -> Result<Vec<S>, NnError> {
    if p.len() != y.len() {
        return Err(NnError::LengthMismatch {
            left: p.len(),
            right: y.len(),
        });
    }
    let floor = S::of(PROB_FLOOR);
    let half = S::of(0.5);
    // dJ/dp_i = (1/2) ln(p_i / m_i); chain through the softmax Jacobian.
    let g: Vec<S> = p
        .iter()
        .zip(y)
        .map(|(&pi, &yi)| {
            let m = half * (pi + yi);
            half * (pi.max(floor).ln() - m.max(floor).ln())
        })
        .collect();
    let dot = g
        .iter()
        .zip(p)
        .fold(S::zero(), |acc, (&gi, &pi)| acc + gi * pi);
    Ok(p
        .iter()
        .zip(&g)
        .map(|(&pi, &gi)| pi * (gi - dot))
        .collect())
}
