use std::ops::Range;

use rand::Rng;

use crate::error::{config_err, Result};
use crate::scalar::Real;

/// Dimensions of the policy-value network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetworkShape {
    pub obs_dim: usize,
    pub hidden: usize,
    pub actions: usize,
}

impl NetworkShape {
    pub fn new(obs_dim: usize, hidden: usize, actions: usize) -> Result<Self> {
        if obs_dim == 0 || hidden == 0 || actions < 2 {
            return Err(config_err(format!(
                "network shape needs obs_dim >= 1, hidden >= 1, actions >= 2 (got {obs_dim}, {hidden}, {actions})"
            )));
        }
        Ok(Self {
            obs_dim,
            hidden,
            actions,
        })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(*self)
    }
}

/// Offsets of every tensor inside the flat parameter vector.
///
/// Matrices are row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub enc_w: Range<usize>,
    pub enc_b: Range<usize>,
    pub gate_w: Range<usize>,
    pub gate_u: Range<usize>,
    pub gate_b: Range<usize>,
    pub cand_w: Range<usize>,
    pub cand_u: Range<usize>,
    pub cand_b: Range<usize>,
    pub pi_w: Range<usize>,
    pub pi_b: Range<usize>,
    pub v_w: Range<usize>,
    pub v_b: Range<usize>,
    pub len: usize,
}

impl Layout {
    fn new(shape: NetworkShape) -> Self {
        let (d, h, a) = (shape.obs_dim, shape.hidden, shape.actions);
        let mut next = 0;
        let mut take = |n: usize| {
            let r = next..next + n;
            next += n;
            r
        };
        let enc_w = take(h * d);
        let enc_b = take(h);
        let gate_w = take(h * h);
        let gate_u = take(h * h);
        let gate_b = take(h);
        let cand_w = take(h * h);
        let cand_u = take(h * h);
        let cand_b = take(h);
        let pi_w = take(a * h);
        let pi_b = take(a);
        let v_w = take(h);
        let v_b = take(1);
        Self {
            enc_w,
            enc_b,
            gate_w,
            gate_u,
            gate_b,
            cand_w,
            cand_u,
            cand_b,
            pi_w,
            pi_b,
            v_w,
            v_b,
            len: next,
        }
    }

    /// Ranges of the weights that read the previous hidden state.
    pub fn recurrent(&self) -> [Range<usize>; 2] {
        [self.gate_u.clone(), self.cand_u.clone()]
    }
}

/// Weights of the recurrent policy-value network, stored as one flat vector.
///
/// Gradients use the same type, so the optimizer and finite-difference checks
/// can treat both as plain vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    shape: NetworkShape,
    layout: Layout,
    data: Vec<T>,
}

impl<T: Real> NetworkParams<T> {
    pub fn zeros(shape: NetworkShape) -> Self {
        let layout = shape.layout();
        let data = vec![T::zero(); layout.len];
        Self { shape, layout, data }
    }

    /// Uniform fan-in scaled initialization. The policy head starts small so the
    /// initial policy is close to uniform, and the value head starts at zero.
    pub fn init<R: Rng + ?Sized>(shape: NetworkShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let l = p.layout.clone();
        let h = shape.hidden as f64;
        let mut fill = |data: &mut [T], range: Range<usize>, scale: f64| {
            for v in &mut data[range] {
                *v = T::lit(rng.random_range(-scale..scale));
            }
        };
        fill(&mut p.data, l.enc_w, 1.0 / (shape.obs_dim as f64).sqrt());
        fill(&mut p.data, l.gate_w, 1.0 / h.sqrt());
        fill(&mut p.data, l.gate_u, 1.0 / h.sqrt());
        fill(&mut p.data, l.cand_w, 1.0 / h.sqrt());
        fill(&mut p.data, l.cand_u, 1.0 / h.sqrt());
        fill(&mut p.data, l.pi_w, 0.1 / h.sqrt());
        p
    }

    pub fn from_vec(shape: NetworkShape, data: Vec<T>) -> Result<Self> {
        let layout = shape.layout();
        if data.len() != layout.len {
            return Err(config_err(format!(
                "parameter vector has {} entries, shape needs {}",
                data.len(),
                layout.len
            )));
        }
        Ok(Self { shape, layout, data })
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn tensor(&self, range: &Range<usize>) -> &[T] {
        &self.data[range.clone()]
    }

    pub(crate) fn tensor_mut(&mut self, range: &Range<usize>) -> &mut [T] {
        &mut self.data[range.clone()]
    }

    pub fn scale(&mut self, factor: T) {
        self.data.iter_mut().for_each(|v| *v = *v * factor);
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

/// Per-timestep recurrent activation.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState<T>(pub Vec<T>);

impl<T: Real> HiddenState<T> {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn reset(&mut self) {
        self.0.iter_mut().for_each(|v| *v = T::zero());
    }
}
