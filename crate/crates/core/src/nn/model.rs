use super::layers::{Layer, Mode, Param};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// An ordered stack of layers with a fixed input width.
#[derive(Debug, Clone)]
pub struct MlpModel {
    input_width: usize,
    layers: Vec<Layer>,
}

impl MlpModel {
    /// Validates that consecutive widths line up.
    pub fn new(input_width: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut width = input_width;
        for (i, layer) in layers.iter().enumerate() {
            width = layer.output_width(width).ok_or_else(|| {
                Error::Config(format!(
                    "layer {i} ({}) cannot accept input width {width}",
                    layer.kind()
                ))
            })?;
        }
        Ok(Self {
            input_width,
            layers,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.layers.iter().fold(self.input_width, |w, l| {
            l.output_width(w).expect("validated")
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for layer in &mut self.layers {
            if let Layer::BatchNorm(bn) = layer {
                bn.mode = mode;
            }
        }
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != 2 || batch.cols() != self.input_width {
            return Err(Error::shape(
                "MlpModel input",
                &[batch.rows(), self.input_width],
                batch.shape(),
            ));
        }
        batch.ensure_finite("model input")
    }

    /// Training-path forward pass; caches intermediates for `backward`.
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &mut self.layers {
            x = layer.forward(x)?;
        }
        Ok(x)
    }

    /// Stateless evaluation with batch normalization in inference mode.
    /// Rows are processed independently of each other.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = layer.apply(&x)?;
        }
        Ok(x)
    }

    /// Fills every parameter gradient slot and returns the gradient with
    /// respect to the model input.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<Tensor> {
        self.backward_impl(loss_grad, true)
    }

    /// Gradient with respect to the input only; parameter slots are left
    /// untouched.
    pub fn backward_input(&mut self, loss_grad: &Tensor) -> Result<Tensor> {
        self.backward_impl(loss_grad, false)
    }

    fn backward_impl(&mut self, loss_grad: &Tensor, params: bool) -> Result<Tensor> {
        if loss_grad.cols() != self.output_width() {
            return Err(Error::shape(
                "MlpModel loss gradient",
                &[loss_grad.rows(), self.output_width()],
                loss_grad.shape(),
            ));
        }
        let mut g = loss_grad.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer.backward(g, params, i)?;
        }
        Ok(g)
    }

    /// Named parameters, `"<layer index>.<kind>.<name>"`, in registry order.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let kind = l.kind();
                l.params()
                    .into_iter()
                    .map(move |(n, p)| (format!("{i}.{kind}.{n}"), p))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut().into_iter().map(|(_, p)| p))
            .collect()
    }

    pub fn named_buffers(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let kind = l.kind();
                l.buffers()
                    .into_iter()
                    .map(move |(n, t)| (format!("{i}.{kind}.{n}"), t))
            })
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.buffers_mut().into_iter().map(|(_, t)| t))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// All parameter values concatenated in registry order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.named_params()
            .iter()
            .flat_map(|(_, p)| p.value.data().iter().copied())
            .collect()
    }
}
