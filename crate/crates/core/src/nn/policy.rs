use rand::Rng;

use crate::scalar::{softmax, Real};

/// Draws an action index from `softmax(logits)`.
pub fn sample_action<T: Real, R: Rng + ?Sized>(logits: &[T], rng: &mut R) -> usize {
    let probs = softmax(logits);
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cumulative += p.as_f64();
        if u < cumulative {
            return i;
        }
    }
    // u landed in the rounding gap above the cumulative sum
    probs.iter().rposition(|p| *p > T::zero()).unwrap_or(probs.len() - 1)
}
