use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar used by the network, the optimizer and the loss stack.
pub trait Real: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static {
    /// Lossy conversion from `f64`, used for hyperparameters and constants.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Numerically stable log-softmax of one row of logits.
pub fn log_softmax<T: Real>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let norm = logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln() + max;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - norm;
    }
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    log_softmax(logits, &mut out);
    out.iter_mut().for_each(|v| *v = v.exp());
    out
}
