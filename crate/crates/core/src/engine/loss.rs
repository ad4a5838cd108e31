//! Classification loss.

use super::tape::cross_entropy_with_probs;
use super::EngineError;

/// `-log softmax(logits)[label]`, evaluated with log-sum-exp so large
/// logits do not overflow.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64, EngineError> {
    if label >= logits.len() {
        return Err(EngineError::LabelOutOfRange {
            label,
            num_classes: logits.len(),
        });
    }
    Ok(cross_entropy_with_probs(logits, label).0)
}

/// Mean per-sample cross-entropy of a batch.
pub fn mean_cross_entropy(batch: &[(Vec<f64>, usize)]) -> Result<f64, EngineError> {
    let mut total = 0.0;
    for (logits, label) in batch {
        total += cross_entropy(logits, *label)?;
    }
    Ok(total / batch.len() as f64)
}

/// Softmax probabilities of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    super::tape::softmax_in_place(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln_k() {
        for label in 0..4 {
            let l = cross_entropy(&[0.0; 4], label).unwrap();
            assert!((l - 4f64.ln()).abs() < 1e-15);
            assert!((l - 1.386_294).abs() < 1e-6);
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let l = cross_entropy(&[1000.0, 0.0, 0.0, 0.0], 0).unwrap();
        assert!(l.is_finite());
        assert!(l.abs() < 1e-12);
        let wrong = cross_entropy(&[1000.0, 0.0, 0.0, 0.0], 1).unwrap();
        assert!((wrong - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            cross_entropy(&[0.0, 1.0], 2),
            Err(EngineError::LabelOutOfRange { label: 2, num_classes: 2 })
        ));
    }

    #[test]
    fn matches_naive_softmax_then_log() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-20.0..20.0)).collect();
            let label = rng.random_range(0..4);
            let exps: Vec<f64> = logits.iter().map(|z| z.exp()).collect();
            let naive = -(exps[label] / exps.iter().sum::<f64>()).ln();
            let stable = cross_entropy(&logits, label).unwrap();
            assert!((naive - stable).abs() < 1e-9, "{naive} vs {stable}");
        }
    }

    #[test]
    fn batch_loss_is_mean_of_samples() {
        let batch = vec![
            (vec![0.3, -1.0, 2.0, 0.0], 2),
            (vec![1.0, 1.0, 1.0, 1.0], 0),
            (vec![-4.0, 2.0, 0.5, 0.1], 3),
        ];
        let manual: f64 = batch
            .iter()
            .map(|(l, y)| cross_entropy(l, *y).unwrap())
            .sum::<f64>()
            / 3.0;
        assert_eq!(mean_cross_entropy(&batch).unwrap(), manual);
    }
}
