use crate::error::{Error, Result};
use crate::linalg::sigmoid;

pub const PROB_CLAMP: f64 = 1e-12;

/// Soft predictions `σ(logit)`.
pub fn predict_from_logits(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&l| sigmoid(l)).collect()
}

/// Hard prediction; the boundary logit 0 is positive.
#[inline]
pub fn hard(logit: f64) -> bool {
    logit >= 0.0
}

/// Binary cross-entropy contribution of one node, probability clamped to
/// `[1e-12, 1 − 1e-12]`.
#[inline]
pub fn bce_term(prob: f64, label: u8) -> f64 {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean binary cross-entropy over `nodes`.
pub fn ce_loss(predictions: &[f64], labels: &[Option<u8>], nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::EmptyGroup("cross-entropy node set is empty".into()));
    }
    let mut total = 0.0;
    for &i in nodes {
        let y = labels[i].ok_or(Error::Unlabeled(i))?;
        total += bce_term(predictions[i], y);
    }
    Ok(total / nodes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_logits_predict_half() {
        assert!(predict_from_logits(&[0.0; 4]).iter().all(|&p| p == 0.5));
        assert!(hard(0.0));
        assert!(!hard(-1e-300));
    }

    #[test]
    fn confident_predictions_have_tiny_loss() {
        let l = ce_loss(&[1.0, 0.0], &[Some(1), Some(0)], &[0, 1]).unwrap();
        assert!(l <= 1e-11);
    }

    #[test]
    fn half_everywhere_is_log_two() {
        let l = ce_loss(&[0.5; 3], &[Some(1), Some(0), Some(1)], &[0, 1, 2]).unwrap();
        assert_eq!(l, std::f64::consts::LN_2);
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 30;
        let preds: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
        let labels: Vec<Option<u8>> = (0..n).map(|_| Some(rng.gen_range(0..2))).collect();
        let nodes: Vec<usize> = (0..n).step_by(2).collect();
        let mut reference = 0.0;
        for &i in &nodes {
            let y = f64::from(labels[i].unwrap());
            reference -= y * preds[i].ln() + (1.0 - y) * (1.0 - preds[i]).ln();
        }
        reference /= nodes.len() as f64;
        assert!((ce_loss(&preds, &labels, &nodes).unwrap() - reference).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(ce_loss(&[0.5], &[Some(1)], &[]), Err(Error::EmptyGroup(_))));
        assert!(matches!(ce_loss(&[0.5], &[None], &[0]), Err(Error::Unlabeled(0))));
    }
}
