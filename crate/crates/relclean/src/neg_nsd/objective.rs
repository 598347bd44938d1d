//! Confidence-adjusted probabilities and the weighted cross-entropy objective
//! with the confidence penalty.

use crate::error::{Error, Result};

/// Lower clamp applied to every log argument.
pub const LOG_FLOOR: f64 = 1e-12;

const SUM_TOLERANCE: f64 = 1e-6;

/// `c * p + (1 - c) * y`, elementwise.
pub fn adjust_probs(p: &[f64], y: &[f64], c: f64) -> Result<Vec<f64>> {
    if p.len() != y.len() {
        return Err(Error::Precondition(format!(
            "probability vector has {} entries, target has {}",
            p.len(),
            y.len()
        )));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::Precondition(format!("confidence {c} outside [0,1]")));
    }
    Ok(adjust_unchecked(p, y, c))
}

fn adjust_unchecked(p: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    p.iter().zip(y).map(|(&pj, &yj)| c * pj + (1.0 - c) * yj).collect()
}

/// Mean over the batch of `-Σ_j w_j y_j log p'_j - λ log c`.
pub fn loss(
    probs: &[Vec<f64>],
    targets: &[Vec<f64>],
    confidences: &[f64],
    class_weights: &[f64],
    lambda: f64,
) -> Result<f64> {
    let n = probs.len();
    if targets.len() != n || confidences.len() != n {
        return Err(Error::Precondition(format!(
            "batch sizes differ: {} probability rows, {} targets, {} confidences",
            n,
            targets.len(),
            confidences.len()
        )));
    }
    if n == 0 {
        return Err(Error::Precondition("empty batch".into()));
    }
    if lambda < 0.0 {
        return Err(Error::Precondition(format!("lambda {lambda} is negative")));
    }
    let mut total = 0.0;
    for ((p, y), &c) in probs.iter().zip(targets).zip(confidences) {
        if p.len() != class_weights.len() || y.len() != class_weights.len() {
            return Err(Error::Precondition(format!(
                "row length {} / {} does not match {} class weights",
                p.len(),
                y.len(),
                class_weights.len()
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Precondition(format!("probabilities sum to {sum}")));
        }
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::Precondition(format!("confidence {c} outside [0,1]")));
        }
        total += sample_loss(p, y, c, class_weights, lambda);
    }
    Ok(total / n as f64)
}

pub(crate) fn sample_loss(p: &[f64], y: &[f64], c: f64, w: &[f64], lambda: f64) -> f64 {
    let mut ce = 0.0;
    for j in 0..p.len() {
        if y[j] != 0.0 {
            let adjusted = c * p[j] + (1.0 - c) * y[j];
            ce -= w[j] * adjusted.max(LOG_FLOOR).ln() * y[j];
        }
    }
    let penalty = if lambda == 0.0 {
        0.0
    } else {
        -lambda * c.max(LOG_FLOOR).ln()
    };
    ce + penalty
}

/// Per-sample loss together with its partial derivatives with respect to the
/// probability vector and the confidence.
pub(crate) fn sample_loss_grad(
    p: &[f64],
    y: &[f64],
    c: f64,
    w: &[f64],
    lambda: f64,
    d_p: &mut [f64],
) -> (f64, f64) {
    let mut value = 0.0;
    let mut d_c = 0.0;
    for j in 0..p.len() {
        d_p[j] = 0.0;
        if y[j] == 0.0 {
            continue;
        }
        let adjusted = c * p[j] + (1.0 - c) * y[j];
        if adjusted > LOG_FLOOR {
            value -= w[j] * adjusted.ln() * y[j];
            let g = -w[j] * y[j] / adjusted;
            d_p[j] = g * c;
            d_c += g * (p[j] - y[j]);
        } else {
            value -= w[j] * LOG_FLOOR.ln() * y[j];
        }
    }
    if lambda != 0.0 {
        if c > LOG_FLOOR {
            value -= lambda * c.ln();
            d_c -= lambda / c;
        } else {
            value -= lambda * LOG_FLOOR.ln();
        }
    }
    (value, d_c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjust_identities() {
        let p = [0.7, 0.3];
        let y = [0.0, 1.0];
        assert_eq!(adjust_probs(&p, &y, 1.0).unwrap(), vec![0.7, 0.3]);
        assert_eq!(adjust_probs(&p, &y, 0.0).unwrap(), vec![0.0, 1.0]);
        let half = adjust_probs(&p, &y, 0.5).unwrap();
        assert!((half[0] - 0.35).abs() < 1e-15);
        assert!((half[1] - 0.65).abs() < 1e-15);
    }

    #[test]
    fn adjust_rejects_bad_inputs() {
        assert!(adjust_probs(&[1.0], &[0.0, 1.0], 0.5).is_err());
        assert!(adjust_probs(&[1.0], &[1.0], 1.5).is_err());
        assert!(adjust_probs(&[1.0], &[1.0], -0.1).is_err());
    }

    #[test]
    fn loss_matches_hand_evaluation() {
        // -ln(0.65) - 0.1 ln(0.5), evaluated independently:
        // ln(0.65) = -0.4307829160924542
        let expected = 0.4307829160924542 + 0.1 * std::f64::consts::LN_2;
        let got = loss(&[vec![0.7, 0.3]], &[vec![0.0, 1.0]], &[0.5], &[1.0, 1.0], 0.1).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got - 0.5001).abs() < 1e-4);
    }

    #[test]
    fn loss_vanishes_at_perfect_confident_prediction() {
        let got = loss(&[vec![0.0, 1.0]], &[vec![0.0, 1.0]], &[1.0], &[1.0, 1.0], 0.1).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn loss_without_penalty_at_zero_confidence() {
        for p in [[0.9, 0.1], [0.2, 0.8], [0.5, 0.5]] {
            let got = loss(&[p.to_vec()], &[vec![1.0, 0.0]], &[0.0], &[3.0, 1.0], 0.0).unwrap();
            assert_eq!(got, 0.0);
        }
    }

    #[test]
    fn loss_is_finite_under_clamping() {
        let got = loss(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]], &[1.0], &[1.0, 1.0], 0.0).unwrap();
        assert!((got - 12.0 * std::f64::consts::LN_10).abs() < 1e-9);
    }

    #[test]
    fn loss_is_batch_mean() {
        let a = loss(&[vec![0.7, 0.3]], &[vec![0.0, 1.0]], &[0.5], &[1.0, 2.0], 0.1).unwrap();
        let b = loss(&[vec![0.4, 0.6]], &[vec![1.0, 0.0]], &[0.9], &[1.0, 2.0], 0.1).unwrap();
        let both = loss(
            &[vec![0.7, 0.3], vec![0.4, 0.6]],
            &[vec![0.0, 1.0], vec![1.0, 0.0]],
            &[0.5, 0.9],
            &[1.0, 2.0],
            0.1,
        )
        .unwrap();
        assert!((both - (a + b) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn grad_matches_finite_difference_in_p_and_c() {
        let p = [0.2, 0.5, 0.3];
        let y = [0.0, 1.0, 0.0];
        let w = [0.5, 2.0, 1.0];
        let c = 0.6;
        let mut d_p = [0.0; 3];
        let (_, d_c) = sample_loss_grad(&p, &y, c, &w, 0.3, &mut d_p);
        let h = 1e-6;
        let fd_c = (sample_loss(&p, &y, c + h, &w, 0.3) - sample_loss(&p, &y, c - h, &w, 0.3))
            / (2.0 * h);
        assert!((fd_c - d_c).abs() < 1e-6);
        for j in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[j] += h;
            lo[j] -= h;
            let fd = (sample_loss(&hi, &y, c, &w, 0.3) - sample_loss(&lo, &y, c, &w, 0.3)) / (2.0 * h);
            assert!((fd - d_p[j]).abs() < 1e-6, "j={j}");
        }
    }
}
