//! Forward pass and exact reverse-mode gradients for the recurrent
//! policy-value network.
//!
//! Per timestep, with `h` the previous hidden state (zeroed on episode reset):
//!
//! ```text
//! e  = tanh(W_e x + b_e)
//! g  = sigmoid(W_g e + U_g h + b_g)
//! h' = tanh(W_c e + U_c (g * h) + b_c)
//! logits = W_pi h' + b_pi
//! value  = w_v . h' + b_v
//! ```

use crate::error::{config_err, Result};
use crate::nn::params::{HiddenState, NetworkParams};
use crate::scalar::{log_softmax, sigmoid, Real};

/// `out = W x + b` for a row-major `W` of shape `out.len() x x.len()`.
fn affine<T: Real>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = b[i];
        for (&wij, &xj) in row.iter().zip(x) {
            acc = acc + wij * xj;
        }
        *o = acc;
    }
}

/// `out += W x`.
fn matvec_acc<T: Real>(w: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = *o;
        for (&wij, &xj) in row.iter().zip(x) {
            acc = acc + wij * xj;
        }
        *o = acc;
    }
}

/// `out += W^T y` for a row-major `W` of shape `y.len() x out.len()`.
fn matvec_t_acc<T: Real>(w: &[T], y: &[T], out: &mut [T]) {
    let cols = out.len();
    for (i, &yi) in y.iter().enumerate() {
        if yi == T::zero() {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o = *o + wij * yi;
        }
    }
}

/// `grad += y x^T`.
fn outer_acc<T: Real>(grad: &mut [T], y: &[T], x: &[T]) {
    let cols = x.len();
    for (i, &yi) in y.iter().enumerate() {
        if yi == T::zero() {
            continue;
        }
        let row = &mut grad[i * cols..(i + 1) * cols];
        for (g, &xj) in row.iter_mut().zip(x) {
            *g = *g + yi * xj;
        }
    }
}

fn add_acc<T: Real>(grad: &mut [T], y: &[T]) {
    for (g, &v) in grad.iter_mut().zip(y) {
        *g = *g + v;
    }
}

/// Outputs and cached activations of a forward pass over a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    steps: usize,
    actions: usize,
    hidden: usize,
    obs_dim: usize,
    /// Row-major `steps x actions`.
    pub logits: Vec<T>,
    /// Row-major `steps x actions`.
    pub log_probs: Vec<T>,
    pub values: Vec<T>,
    pub final_hidden: HiddenState<T>,
    resets: Vec<bool>,
    obs: Vec<T>,
    h_prev: Vec<T>,
    enc: Vec<T>,
    gate: Vec<T>,
    hid: Vec<T>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn logits_at(&self, t: usize) -> &[T] {
        &self.logits[t * self.actions..(t + 1) * self.actions]
    }

    pub fn log_probs_at(&self, t: usize) -> &[T] {
        &self.log_probs[t * self.actions..(t + 1) * self.actions]
    }

    pub fn hidden_at(&self, t: usize) -> &[T] {
        &self.hid[t * self.hidden..(t + 1) * self.hidden]
    }
}

/// Upstream gradients of a scalar loss with respect to the trace outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads<T> {
    /// Row-major `steps x actions`.
    pub logits: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Real> OutputGrads<T> {
    pub fn zeros(steps: usize, actions: usize) -> Self {
        Self {
            logits: vec![T::zero(); steps * actions],
            values: vec![T::zero(); steps],
        }
    }

    pub fn logits_at_mut(&mut self, t: usize, actions: usize) -> &mut [T] {
        &mut self.logits[t * actions..(t + 1) * actions]
    }

    pub fn scale(&mut self, factor: T) {
        self.logits.iter_mut().for_each(|v| *v = *v * factor);
        self.values.iter_mut().for_each(|v| *v = *v * factor);
    }
}

struct StepBuffers<T> {
    enc: Vec<T>,
    gate: Vec<T>,
    gated: Vec<T>,
    pre: Vec<T>,
}

impl<T: Real> StepBuffers<T> {
    fn new(hidden: usize) -> Self {
        Self {
            enc: vec![T::zero(); hidden],
            gate: vec![T::zero(); hidden],
            gated: vec![T::zero(); hidden],
            pre: vec![T::zero(); hidden],
        }
    }
}

impl<T: Real> NetworkParams<T> {
    fn check_obs(&self, obs: &[T], step: usize) -> Result<()> {
        if obs.len() != self.shape().obs_dim {
            return Err(config_err(format!(
                "observation at step {step} has dimension {}, network expects {}",
                obs.len(),
                self.shape().obs_dim
            )));
        }
        Ok(())
    }

    /// One cell update; writes the new hidden state into `h_out`.
    fn cell(&self, x: &[T], h_prev: &[T], buf: &mut StepBuffers<T>, h_out: &mut [T]) {
        let l = self.layout();
        affine(self.tensor(&l.enc_w), self.tensor(&l.enc_b), x, &mut buf.enc);
        buf.enc.iter_mut().for_each(|v| *v = v.tanh());

        affine(self.tensor(&l.gate_w), self.tensor(&l.gate_b), &buf.enc, &mut buf.gate);
        matvec_acc(self.tensor(&l.gate_u), h_prev, &mut buf.gate);
        buf.gate.iter_mut().for_each(|v| *v = sigmoid(*v));

        for ((gh, &g), &h) in buf.gated.iter_mut().zip(&buf.gate).zip(h_prev) {
            *gh = g * h;
        }
        affine(self.tensor(&l.cand_w), self.tensor(&l.cand_b), &buf.enc, &mut buf.pre);
        matvec_acc(self.tensor(&l.cand_u), &buf.gated, &mut buf.pre);
        for (o, &p) in h_out.iter_mut().zip(&buf.pre) {
            *o = p.tanh();
        }
    }

    fn heads(&self, h: &[T], logits: &mut [T]) -> T {
        let l = self.layout();
        affine(self.tensor(&l.pi_w), self.tensor(&l.pi_b), h, logits);
        let mut value = [T::zero()];
        affine(self.tensor(&l.v_w), self.tensor(&l.v_b), h, &mut value);
        value[0]
    }

    /// Single acting step: advances `hidden` in place, writes logits, returns the value.
    ///
    /// Performs the same arithmetic as [`NetworkParams::forward`], so recorded
    /// behavior outputs can be reproduced bit-exactly from the acting weights.
    pub fn step(&self, obs: &[T], hidden: &mut HiddenState<T>, logits: &mut [T]) -> Result<T> {
        self.check_obs(obs, 0)?;
        let s = self.shape();
        if hidden.dim() != s.hidden || logits.len() != s.actions {
            return Err(config_err("hidden or logits buffer has the wrong dimension"));
        }
        let mut buf = StepBuffers::new(s.hidden);
        let mut next = vec![T::zero(); s.hidden];
        self.cell(obs, &hidden.0, &mut buf, &mut next);
        hidden.0 = next;
        Ok(self.heads(&hidden.0, logits))
    }

    /// Runs the network over a sequence. `resets[t]` zeroes the hidden state
    /// before step `t` (an episode starts there).
    pub fn forward<O: AsRef<[T]>>(
        &self,
        observations: &[O],
        resets: &[bool],
        initial_hidden: &HiddenState<T>,
    ) -> Result<ForwardTrace<T>> {
        let s = self.shape();
        let steps = observations.len();
        if steps == 0 {
            return Err(config_err("forward needs at least one observation"));
        }
        if resets.len() != steps {
            return Err(config_err(format!(
                "{} reset flags for {steps} observations",
                resets.len()
            )));
        }
        if initial_hidden.dim() != s.hidden {
            return Err(config_err(format!(
                "initial hidden state has dimension {}, network expects {}",
                initial_hidden.dim(),
                s.hidden
            )));
        }
        let (a, h, d) = (s.actions, s.hidden, s.obs_dim);
        let mut trace = ForwardTrace {
            steps,
            actions: a,
            hidden: h,
            obs_dim: d,
            logits: vec![T::zero(); steps * a],
            log_probs: vec![T::zero(); steps * a],
            values: vec![T::zero(); steps],
            final_hidden: initial_hidden.clone(),
            resets: resets.to_vec(),
            obs: Vec::with_capacity(steps * d),
            h_prev: vec![T::zero(); steps * h],
            enc: vec![T::zero(); steps * h],
            gate: vec![T::zero(); steps * h],
            hid: vec![T::zero(); steps * h],
        };
        let mut buf = StepBuffers::new(h);
        let mut current = initial_hidden.0.clone();
        for (t, o) in observations.iter().enumerate() {
            let x = o.as_ref();
            self.check_obs(x, t)?;
            trace.obs.extend_from_slice(x);
            if resets[t] {
                current.iter_mut().for_each(|v| *v = T::zero());
            }
            trace.h_prev[t * h..(t + 1) * h].copy_from_slice(&current);
            let hs = t * h..(t + 1) * h;
            self.cell(x, &current, &mut buf, &mut trace.hid[hs.clone()]);
            trace.enc[hs.clone()].copy_from_slice(&buf.enc);
            trace.gate[hs.clone()].copy_from_slice(&buf.gate);
            current.copy_from_slice(&trace.hid[hs.clone()]);
            let ls = t * a..(t + 1) * a;
            trace.values[t] = self.heads(&current, &mut trace.logits[ls.clone()]);
            log_softmax(&trace.logits[ls.clone()], &mut trace.log_probs[ls]);
        }
        trace.final_hidden = HiddenState(current);
        Ok(trace)
    }

    /// Backpropagates output gradients through time. The initial hidden state
    /// is treated as a constant.
    pub fn backward(&self, trace: &ForwardTrace<T>, grads: &OutputGrads<T>) -> Result<NetworkParams<T>> {
        let s = self.shape();
        if trace.actions != s.actions || trace.hidden != s.hidden || trace.obs_dim != s.obs_dim {
            return Err(config_err("trace was produced by a network of a different shape"));
        }
        let (steps, a, h, d) = (trace.steps, s.actions, s.hidden, s.obs_dim);
        if grads.logits.len() != steps * a || grads.values.len() != steps {
            return Err(config_err(format!(
                "output gradients sized for {} steps, trace has {steps}",
                grads.values.len()
            )));
        }
        let l = self.layout().clone();
        let mut out = NetworkParams::zeros(s);
        let mut dh_future = vec![T::zero(); h];
        let mut dh = vec![T::zero(); h];
        let mut da_c = vec![T::zero(); h];
        let mut dgh = vec![T::zero(); h];
        let mut da_g = vec![T::zero(); h];
        let mut de = vec![T::zero(); h];
        let mut gated = vec![T::zero(); h];
        let mut dh_prev = vec![T::zero(); h];

        for t in (0..steps).rev() {
            let hs = t * h..(t + 1) * h;
            let h_t = &trace.hid[hs.clone()];
            let h_prev = &trace.h_prev[hs.clone()];
            let e_t = &trace.enc[hs.clone()];
            let g_t = &trace.gate[hs];
            let x_t = &trace.obs[t * d..(t + 1) * d];
            let dlogits = &grads.logits[t * a..(t + 1) * a];
            let dvalue = grads.values[t];

            // heads
            dh.copy_from_slice(&dh_future);
            matvec_t_acc(self.tensor(&l.pi_w), dlogits, &mut dh);
            for (o, &w) in dh.iter_mut().zip(self.tensor(&l.v_w)) {
                *o = *o + w * dvalue;
            }
            outer_acc(out.tensor_mut(&l.pi_w), dlogits, h_t);
            add_acc(out.tensor_mut(&l.pi_b), dlogits);
            outer_acc(out.tensor_mut(&l.v_w), &[dvalue], h_t);
            out.tensor_mut(&l.v_b)[0] = out.tensor(&l.v_b)[0] + dvalue;

            // candidate
            for ((o, &g), &hv) in da_c.iter_mut().zip(&dh).zip(h_t) {
                *o = g * (T::one() - hv * hv);
            }
            for ((o, &g), &hp) in gated.iter_mut().zip(g_t).zip(h_prev) {
                *o = g * hp;
            }
            outer_acc(out.tensor_mut(&l.cand_w), &da_c, e_t);
            outer_acc(out.tensor_mut(&l.cand_u), &da_c, &gated);
            add_acc(out.tensor_mut(&l.cand_b), &da_c);
            de.iter_mut().for_each(|v| *v = T::zero());
            matvec_t_acc(self.tensor(&l.cand_w), &da_c, &mut de);
            dgh.iter_mut().for_each(|v| *v = T::zero());
            matvec_t_acc(self.tensor(&l.cand_u), &da_c, &mut dgh);

            // gate
            for i in 0..h {
                dh_prev[i] = dgh[i] * g_t[i];
                let dg = dgh[i] * h_prev[i];
                da_g[i] = dg * g_t[i] * (T::one() - g_t[i]);
            }
            outer_acc(out.tensor_mut(&l.gate_w), &da_g, e_t);
            outer_acc(out.tensor_mut(&l.gate_u), &da_g, h_prev);
            add_acc(out.tensor_mut(&l.gate_b), &da_g);
            matvec_t_acc(self.tensor(&l.gate_w), &da_g, &mut de);
            matvec_t_acc(self.tensor(&l.gate_u), &da_g, &mut dh_prev);

            // encoder
            for (o, &ev) in de.iter_mut().zip(e_t) {
                *o = *o * (T::one() - ev * ev);
            }
            outer_acc(out.tensor_mut(&l.enc_w), &de, x_t);
            add_acc(out.tensor_mut(&l.enc_b), &de);

            if trace.resets[t] {
                dh_future.iter_mut().for_each(|v| *v = T::zero());
            } else {
                dh_future.copy_from_slice(&dh_prev);
            }
        }
        Ok(out)
    }
}
