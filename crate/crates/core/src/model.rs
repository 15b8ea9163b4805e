//! Fully connected ReLU regressor with analytic mean-squared-error gradients.
//!
//! Parameters are stored flat, layer by layer: the weight matrix of each
//! layer (row-major, `out × in`) followed by its bias vector when biases are
//! enabled. The last layer is linear with a single output.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{ParamVector, RngStream};

/// One `(window, label)` training pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_true")]
    pub bias: bool,
}

fn default_true() -> bool {
    true
}

impl MlpSpec {
    /// Two hidden ReLU layers of width 64 and 32.
    pub fn two_hidden(input_dim: usize) -> Self {
        Self { input_dim, hidden_dims: vec![64, 32], bias: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!("layer widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w_off: usize,
    b_off: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct MlpModel {
    spec: MlpSpec,
    layers: Vec<Layer>,
    n_params: usize,
}

impl MlpModel {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut widths = vec![spec.input_dim];
        widths.extend(&spec.hidden_dims);
        widths.push(1);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut off = 0;
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w_off = off;
            off += fan_in * fan_out;
            let b_off = spec.bias.then(|| {
                let b = off;
                off += fan_out;
                b
            });
            layers.push(Layer { fan_in, fan_out, w_off, b_off });
        }
        Ok(Self { spec, layers, n_params: off })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.n_params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, rng: &mut RngStream) -> ParamVector {
        let mut p = vec![0.0; self.n_params];
        for layer in &self.layers {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut p[layer.w_off..layer.w_off + layer.fan_in * layer.fan_out] {
                *w = rng.uniform_range(-limit, limit);
            }
        }
        ParamVector::new(p)
    }

    /// Weight matrix of the final linear layer as `(rows, cols, row-major data)`.
    pub fn final_layer_weights<'a>(&self, params: &'a ParamVector) -> Result<(usize, usize, &'a [f64])> {
        self.check_params(params)?;
        let last = self.layers.last().expect("at least one layer");
        let data = &params.as_slice()[last.w_off..last.w_off + last.fan_in * last.fan_out];
        Ok((last.fan_out, last.fan_in, data))
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        check_len(self.n_params, params.len())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_len(self.spec.input_dim, x.len())
    }

    pub fn forward(&self, params: &ParamVector, x: &[f64]) -> Result<f64> {
        self.check_params(params)?;
        self.check_input(x)?;
        let mut buf = Buffers::new(self);
        Ok(self.forward_cached(params.as_slice(), x, &mut buf))
    }

    /// Forward pass keeping pre-activations for backprop. Returns the output.
    fn forward_cached(&self, p: &[f64], x: &[f64], buf: &mut Buffers) -> f64 {
        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let (prev, rest) = buf.acts.split_at_mut(l + 1);
            let input: &[f64] = if l == 0 { x } else { &prev[l] };
            let z = &mut buf.pre[l];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &p[layer.w_off + o * layer.fan_in..layer.w_off + (o + 1) * layer.fan_in];
                let mut acc = layer.b_off.map_or(0.0, |b| p[b + o]);
                for (w, a) in row.iter().zip(input) {
                    acc += w * a;
                }
                *zo = acc;
            }
            let out = &mut rest[0];
            if l + 1 < n_layers {
                for (a, &zz) in out.iter_mut().zip(z.iter()) {
                    *a = zz.max(0.0);
                }
            } else {
                out.copy_from_slice(z);
            }
        }
        buf.acts[n_layers][0]
    }

    /// Mean squared error over `batch` and its exact gradient.
    pub fn loss_and_grad(&self, params: &ParamVector, batch: &[Sample]) -> Result<(f64, ParamVector)> {
        self.loss_and_grad_iter(params, batch.iter())
    }

    /// As [`MlpModel::loss_and_grad`] over `data[i]` for `i` in `indices`.
    pub fn loss_and_grad_subset(&self, params: &ParamVector, data: &[Sample], indices: &[usize]) -> Result<(f64, ParamVector)> {
        self.loss_and_grad_iter(params, indices.iter().map(|&i| &data[i]))
    }

    fn loss_and_grad_iter<'a>(
        &self,
        params: &ParamVector,
        batch: impl ExactSizeIterator<Item = &'a Sample>,
    ) -> Result<(f64, ParamVector)> {
        self.check_params(params)?;
        if batch.len() == 0 {
            return Err(Error::Empty("batch"));
        }
        let p = params.as_slice();
        let mut grad = vec![0.0; self.n_params];
        let mut buf = Buffers::new(self);
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for s in batch {
            self.check_input(&s.x)?;
            let y_hat = self.forward_cached(p, &s.x, &mut buf);
            let err = y_hat - s.y;
            loss += err * err;
            self.backward(p, &s.x, 2.0 * err / n, &mut buf, &mut grad);
        }
        let grad = ParamVector::new(grad);
        grad.ensure_finite("loss_and_grad")?;
        Ok((loss / n, grad))
    }

    fn backward(&self, p: &[f64], x: &[f64], d_out: f64, buf: &mut Buffers, grad: &mut [f64]) {
        let n_layers = self.layers.len();
        buf.delta[n_layers - 1][0] = d_out;
        for l in (0..n_layers).rev() {
            let layer = self.layers[l];
            let input: &[f64] = if l == 0 { x } else { &buf.acts[l] };
            let (lower, upper) = buf.delta.split_at_mut(l);
            let delta = &upper[0];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[layer.w_off + o * layer.fan_in..layer.w_off + (o + 1) * layer.fan_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                if let Some(b) = layer.b_off {
                    grad[b + o] += d;
                }
            }
            if l == 0 {
                break;
            }
            let prev_delta = &mut lower[l - 1];
            let prev_pre = &buf.pre[l - 1];
            for (i, pd) in prev_delta.iter_mut().enumerate() {
                if prev_pre[i] <= 0.0 {
                    *pd = 0.0;
                    continue;
                }
                let mut acc = 0.0;
                for (o, &d) in delta.iter().enumerate() {
                    acc += p[layer.w_off + o * layer.fan_in + i] * d;
                }
                *pd = acc;
            }
        }
    }

    /// Forward-only mean squared error.
    pub fn probe_loss(&self, params: &ParamVector, batch: &[Sample]) -> Result<f64> {
        self.check_params(params)?;
        if batch.is_empty() {
            return Err(Error::Empty("probe batch"));
        }
        let mut buf = Buffers::new(self);
        let mut loss = 0.0;
        for s in batch {
            self.check_input(&s.x)?;
            let err = self.forward_cached(params.as_slice(), &s.x, &mut buf) - s.y;
            loss += err * err;
        }
        Ok(loss / batch.len() as f64)
    }

    pub fn predict(&self, params: &ParamVector, xs: &[Sample]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        let mut buf = Buffers::new(self);
        xs.iter()
            .map(|s| {
                self.check_input(&s.x)?;
                Ok(self.forward_cached(params.as_slice(), &s.x, &mut buf))
            })
            .collect()
    }
}

struct Buffers {
    pre: Vec<Vec<f64>>,
    /// `acts[0]` is unused (the input is borrowed); `acts[l + 1]` is the output of layer `l`.
    acts: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Buffers {
    fn new(model: &MlpModel) -> Self {
        let pre: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.fan_out]).collect();
        let mut acts = vec![Vec::new()];
        acts.extend(pre.iter().cloned());
        Self { delta: pre.clone(), pre, acts }
    }
}
