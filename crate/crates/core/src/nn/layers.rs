//! The fixed layer vocabulary: dense, batch normalization, ReLU and maxout.
//!
//! Every layer caches what its backward pass needs during `forward`.
//! Gradient slots are overwritten (not accumulated) by each backward call.

use rand::Rng;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// A trainable array paired with its gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// `[in × out]`
    pub weight: Param,
    /// `[out]`
    pub bias: Param,
    input: Option<Tensor>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::new(Tensor::zeros(&[inputs, outputs])),
            bias: Param::new(Tensor::zeros(&[outputs])),
            input: None,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        let mut layer = Self::zeros(inputs, outputs);
        layer.weight.value = Tensor::from_vec(&[inputs, outputs], data).expect("extents match");
        layer
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        let (b, i, o) = (x.rows(), self.inputs(), self.outputs());
        let mut out = Tensor::zeros(&[b, o]);
        let bias = self.bias.value.data();
        for r in 0..b {
            out.row_mut(r).copy_from_slice(bias);
        }
        gemm(
            b,
            i,
            o,
            1.0,
            x.data(),
            false,
            self.weight.value.data(),
            false,
            1.0,
            out.data_mut(),
        );
        out
    }

    fn backward(&mut self, grad: &Tensor, params: bool, index: usize) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or(Error::BackwardBeforeForward(index))?;
        let (b, i, o) = (x.rows(), self.inputs(), self.outputs());
        if params {
            gemm(
                i,
                b,
                o,
                1.0,
                x.data(),
                true,
                grad.data(),
                false,
                0.0,
                self.weight.grad.data_mut(),
            );
            let db = self.bias.grad.data_mut();
            db.fill(0.0);
            for r in 0..b {
                for (acc, g) in db.iter_mut().zip(grad.row(r)) {
                    *acc += g;
                }
            }
        }
        let mut dx = Tensor::zeros(&[b, i]);
        gemm(
            b,
            o,
            i,
            1.0,
            grad.data(),
            false,
            self.weight.value.data(),
            true,
            0.0,
            dx.data_mut(),
        );
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub epsilon: f64,
    /// Weight kept by the running statistics at each update:
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub momentum: f64,
    pub mode: Mode,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNormLayer {
    pub fn new(width: usize, epsilon: f64, momentum: f64) -> Self {
        Self {
            gamma: Param::new(Tensor::filled(&[width], 1.0)),
            beta: Param::new(Tensor::zeros(&[width])),
            running_mean: Tensor::zeros(&[width]),
            running_var: Tensor::filled(&[width], 1.0),
            epsilon,
            momentum,
            mode: Mode::Training,
            cache: None,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.value.len()
    }

    fn normalize_with(&self, x: &Tensor, mean: &[f64], inv_std: &[f64]) -> (Tensor, Tensor) {
        let w = self.width();
        let mut normalized = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        let (gamma, beta) = (self.gamma.value.data(), self.beta.value.data());
        for r in 0..x.rows() {
            let xr = x.row(r);
            let nr = normalized.row_mut(r);
            for j in 0..w {
                nr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let or = out.row_mut(r);
            for j in 0..w {
                or[j] = gamma[j] * nr[j] + beta[j];
            }
        }
        (normalized, out)
    }

    fn inference_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let inv_std = self
            .running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        (self.running_mean.data().to_vec(), inv_std)
    }

    fn forward(&mut self, x: &Tensor) -> Tensor {
        let (mean, inv_std) = match self.mode {
            Mode::Inference => self.inference_stats(),
            Mode::Training => {
                let (b, w) = (x.rows(), self.width());
                let mut mean = vec![0.0; w];
                for r in 0..b {
                    for (m, v) in mean.iter_mut().zip(x.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= b as f64);
                let mut var = vec![0.0; w];
                for r in 0..b {
                    for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= b as f64);
                let keep = self.momentum;
                for (rm, m) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                    *rm = keep * *rm + (1.0 - keep) * m;
                }
                for (rv, v) in self.running_var.data_mut().iter_mut().zip(&var) {
                    *rv = keep * *rv + (1.0 - keep) * v;
                }
                let inv_std = var
                    .iter()
                    .map(|v| 1.0 / (v + self.epsilon).sqrt())
                    .collect();
                (mean, inv_std)
            }
        };
        let (normalized, out) = self.normalize_with(x, &mean, &inv_std);
        self.cache = Some(BnCache {
            normalized,
            inv_std,
            mode: self.mode,
        });
        out
    }

    fn apply_inference(&self, x: &Tensor) -> Tensor {
        let (mean, inv_std) = self.inference_stats();
        self.normalize_with(x, &mean, &inv_std).1
    }

    fn backward(&mut self, grad: &Tensor, params: bool, index: usize) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::BackwardBeforeForward(index))?;
        let (b, w) = (grad.rows(), self.width());
        let gamma = self.gamma.value.data();
        let mut sum_g = vec![0.0; w];
        let mut sum_g_xhat = vec![0.0; w];
        for r in 0..b {
            let (gr, nr) = (grad.row(r), cache.normalized.row(r));
            for j in 0..w {
                sum_g[j] += gr[j];
                sum_g_xhat[j] += gr[j] * nr[j];
            }
        }
        let mut dx = Tensor::zeros(grad.shape());
        match cache.mode {
            Mode::Inference => {
                for r in 0..b {
                    let gr = grad.row(r);
                    let dr = dx.row_mut(r);
                    for j in 0..w {
                        dr[j] = gr[j] * gamma[j] * cache.inv_std[j];
                    }
                }
            }
            Mode::Training => {
                let n = b as f64;
                for r in 0..b {
                    let (gr, nr) = (grad.row(r), cache.normalized.row(r));
                    let dr = dx.row_mut(r);
                    for j in 0..w {
                        dr[j] = gamma[j] * cache.inv_std[j] / n
                            * (n * gr[j] - sum_g[j] - nr[j] * sum_g_xhat[j]);
                    }
                }
            }
        }
        if params {
            self.gamma.grad.data_mut().copy_from_slice(&sum_g_xhat);
            self.beta.grad.data_mut().copy_from_slice(&sum_g);
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReluLayer {
    mask: Option<Vec<bool>>,
}

impl ReluLayer {
    fn forward(&mut self, mut x: Tensor) -> Tensor {
        let mut mask = Vec::with_capacity(x.len());
        for v in x.data_mut() {
            mask.push(*v > 0.0);
            *v = v.max(0.0);
        }
        self.mask = Some(mask);
        x
    }

    fn apply(x: &Tensor) -> Tensor {
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        Tensor::from_vec(x.shape(), data).expect("same extents")
    }

    fn backward(&self, mut grad: Tensor, index: usize) -> Result<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or(Error::BackwardBeforeForward(index))?;
        for (g, &on) in grad.data_mut().iter_mut().zip(mask) {
            if !on {
                *g = 0.0;
            }
        }
        Ok(grad)
    }
}

/// Max over consecutive groups of `pool_size` inputs.
#[derive(Debug, Clone)]
pub struct MaxoutLayer {
    pub pool_size: usize,
    argmax: Option<(Vec<usize>, usize)>,
}

impl MaxoutLayer {
    pub fn new(pool_size: usize) -> Self {
        assert!(pool_size > 0, "maxout pool size must be positive");
        Self {
            pool_size,
            argmax: None,
        }
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        if !x.cols().is_multiple_of(self.pool_size) {
            return Err(Error::Config(format!(
                "maxout input width {} not divisible by pool size {}",
                x.cols(),
                self.pool_size
            )));
        }
        Ok(x.cols() / self.pool_size)
    }

    fn apply(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let out_w = self.check(x)?;
        let p = self.pool_size;
        let mut out = Tensor::zeros(&[x.rows(), out_w]);
        let mut argmax = Vec::with_capacity(x.rows() * out_w);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let or = out.row_mut(r);
            for (j, o) in or.iter_mut().enumerate() {
                let pool = &xr[j * p..(j + 1) * p];
                let mut best = 0;
                for q in 1..p {
                    if pool[q] > pool[best] {
                        best = q;
                    }
                }
                *o = pool[best];
                argmax.push(j * p + best);
            }
        }
        Ok((out, argmax))
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (out, argmax) = self.apply(x)?;
        self.argmax = Some((argmax, x.cols()));
        Ok(out)
    }

    fn backward(&self, grad: &Tensor, index: usize) -> Result<Tensor> {
        let (argmax, in_w) = self
            .argmax
            .as_ref()
            .ok_or(Error::BackwardBeforeForward(index))?;
        let out_w = in_w / self.pool_size;
        let mut dx = Tensor::zeros(&[grad.rows(), *in_w]);
        for r in 0..grad.rows() {
            let gr = grad.row(r);
            let dr = dx.row_mut(r);
            for j in 0..out_w {
                dr[argmax[r * out_w + j]] = gr[j];
            }
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    BatchNorm(BatchNormLayer),
    Relu(ReluLayer),
    Maxout(MaxoutLayer),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu(_) => "relu",
            Layer::Maxout(_) => "maxout",
        }
    }

    /// Output width for a given input width, or `None` if incompatible.
    pub fn output_width(&self, input: usize) -> Option<usize> {
        match self {
            Layer::Dense(d) => (d.inputs() == input).then(|| d.outputs()),
            Layer::BatchNorm(bn) => (bn.width() == input).then_some(input),
            Layer::Relu(_) => Some(input),
            Layer::Maxout(m) => input
                .is_multiple_of(m.pool_size)
                .then(|| input / m.pool_size),
        }
    }

    pub(crate) fn forward(&mut self, x: Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => {
                let out = d.apply(&x);
                d.input = Some(x);
                Ok(out)
            }
            Layer::BatchNorm(bn) => Ok(bn.forward(&x)),
            Layer::Relu(r) => Ok(r.forward(x)),
            Layer::Maxout(m) => m.forward(&x),
        }
    }

    /// Stateless evaluation; batch normalization uses running statistics.
    pub(crate) fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => Ok(d.apply(x)),
            Layer::BatchNorm(bn) => Ok(bn.apply_inference(x)),
            Layer::Relu(_) => Ok(ReluLayer::apply(x)),
            Layer::Maxout(m) => Ok(m.apply(x)?.0),
        }
    }

    pub(crate) fn backward(&mut self, grad: Tensor, params: bool, index: usize) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.backward(&grad, params, index),
            Layer::BatchNorm(bn) => bn.backward(&grad, params, index),
            Layer::Relu(r) => r.backward(grad, index),
            Layer::Maxout(m) => m.backward(&grad, index),
        }
    }

    /// Trainable parameters with their short names, in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        match self {
            Layer::Dense(d) => vec![("weight", &d.weight), ("bias", &d.bias)],
            Layer::BatchNorm(bn) => vec![("gamma", &bn.gamma), ("beta", &bn.beta)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param)> {
        match self {
            Layer::Dense(d) => vec![("weight", &mut d.weight), ("bias", &mut d.bias)],
            Layer::BatchNorm(bn) => vec![("gamma", &mut bn.gamma), ("beta", &mut bn.beta)],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state (running statistics).
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::BatchNorm(bn) => vec![
                ("running_mean", &bn.running_mean),
                ("running_var", &bn.running_var),
            ],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Layer::BatchNorm(bn) => vec![
                ("running_mean", &mut bn.running_mean),
                ("running_var", &mut bn.running_var),
            ],
            _ => Vec::new(),
        }
    }
}
