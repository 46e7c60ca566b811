//! Parameterized layers built from [`Graph`] operations.

use rand::Rng;

use super::graph::{batch_moments, NormStats};
use super::{Graph, NnError, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            w: store.add_uniform(format!("{name}.weight"), &[outputs, inputs], inputs, rng),
            b: store.add_uniform(format!("{name}.bias"), &[outputs], inputs, rng),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(x, w, Some(b))
    }

    /// `relu(linear(x))`.
    pub fn forward_relu(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let y = self.forward(g, x)?;
        g.relu(y)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            w: store.add_uniform(
                format!("{name}.weight"),
                &[out_channels, in_channels, kernel, kernel],
                fan_in,
                rng,
            ),
            b: store.add_uniform(format!("{name}.bias"), &[out_channels], fan_in, rng),
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// GRU cell parameters; each gate has input, recurrent, and bias terms.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut w = |gate: &str, store: &mut ParamStore| {
            (
                store.add_uniform(format!("{name}.w_{gate}"), &[hidden, input], hidden, rng),
                store.add_uniform(format!("{name}.u_{gate}"), &[hidden, hidden], hidden, rng),
                store.add_uniform(format!("{name}.b_{gate}"), &[hidden], hidden, rng),
            )
        };
        let (w_z, u_z, b_z) = w("z", store);
        let (w_r, u_r, b_r) = w("r", store);
        let (w_h, u_h, b_h) = w("h", store);
        Self {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            input,
            hidden,
        }
    }

    fn gate(&self, g: &mut Graph, x: Var, h: Var, w: ParamId, u: ParamId, b: ParamId) -> Result<Var, NnError> {
        let (w, u, b) = (g.param(w), g.param(u), g.param(b));
        let xi = g.linear(x, w, Some(b))?;
        let hh = g.linear(h, u, None)?;
        g.add(xi, hh)
    }

    /// One step: `h' = (1 - z)⊙h + z⊙h̃`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var, NnError> {
        let (xs, hs) = (g.value(x).shape(), g.value(h).shape());
        if xs.len() != 2 || hs.len() != 2 || xs[0] != hs[0] || xs[1] != self.input || hs[1] != self.hidden {
            return Err(NnError::ShapeMismatch(format!(
                "gru step: x {xs:?}, h {hs:?} for input {} hidden {}",
                self.input, self.hidden
            )));
        }
        let za = self.gate(g, x, h, self.w_z, self.u_z, self.b_z)?;
        let z = g.sigmoid(za)?;
        let ra = self.gate(g, x, h, self.w_r, self.u_r, self.b_r)?;
        let r = g.sigmoid(ra)?;
        let rh = g.mul(r, h)?;
        let ca = self.gate(g, x, rh, self.w_h, self.u_h, self.b_h)?;
        let cand = g.tanh(ca)?;
        let keep = g.one_minus(z)?;
        let old = g.mul(keep, h)?;
        let new = g.mul(z, cand)?;
        g.add(old, new)
    }
}

/// Stacked bidirectional GRU; each step's output is `[forward ⊕ backward]`.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub layers: Vec<(GruCell, GruCell)>,
    pub hidden: usize,
}

impl BiGru {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                (
                    GruCell::new(store, &format!("{name}.l{l}.fwd"), inp, hidden, rng),
                    GruCell::new(store, &format!("{name}.l{l}.bwd"), inp, hidden, rng),
                )
            })
            .collect();
        Self { layers, hidden }
    }

    /// Runs every layer over `seq` (each `[B, I]`) from zero initial states.
    pub fn forward(&self, g: &mut Graph, seq: &[Var]) -> Result<Vec<Var>, NnError> {
        if seq.is_empty() {
            return Err(NnError::EmptySequence);
        }
        let batch = g.value(seq[0]).rows();
        let mut current = seq.to_vec();
        for (fwd, bwd) in &self.layers {
            let n = current.len();
            let mut fwd_states = Vec::with_capacity(n);
            let mut h = g.input(Tensor::zeros(&[batch, self.hidden]));
            for &x in &current {
                h = fwd.step(g, x, h)?;
                fwd_states.push(h);
            }
            let mut bwd_states = vec![h; n];
            let mut h = g.input(Tensor::zeros(&[batch, self.hidden]));
            for t in (0..n).rev() {
                h = bwd.step(g, current[t], h)?;
                bwd_states[t] = h;
            }
            current = fwd_states
                .into_iter()
                .zip(bwd_states)
                .map(|(f, b)| g.concat(&[f, b]))
                .collect::<Result<_, _>>()?;
        }
        Ok(current)
    }
}

/// Batch normalization with running statistics for evaluation.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running: NormStats,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[features], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[features])),
            running: NormStats {
                mean: vec![0.0; features],
                var: vec![1.0; features],
            },
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    /// Batch statistics in training mode, running statistics otherwise.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        let stats = if g.is_training() { None } else { Some(&self.running) };
        g.batch_norm(x, gamma, beta, self.eps, stats)
    }

    /// Folds one batch into the running statistics (unbiased variance).
    pub fn update_running(&mut self, batch: &Tensor) {
        let (mean, var) = batch_moments(batch);
        let n = batch.rows() as f64;
        let correction = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for c in 0..mean.len() {
            self.running.mean[c] = (1.0 - self.momentum) * self.running.mean[c] + self.momentum * mean[c];
            self.running.var[c] = (1.0 - self.momentum) * self.running.var[c] + self.momentum * var[c] * correction;
        }
    }
}
