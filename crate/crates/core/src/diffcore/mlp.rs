use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ParamBlocks;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.activation_tanh(),
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y = φ(x)`.
    #[inline]
    pub fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

/// Affine layer `x ↦ W x + b` with `W` stored as `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Feedforward network with `n` hidden layers and an optional linear bypass:
///
/// ```text
/// ξ⁰ = x,   ξⁱ⁺¹ = φᵢ(Aⁱ ξⁱ + bⁱ),   y = Aⁿ ξⁿ + A_lin ξ⁰ + bⁿ
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    layers: Vec<Dense<T>>,
    activations: Vec<Activation>,
    bypass: Option<Array2<T>>,
}

/// Layer inputs `ξ⁰ … ξⁿ` recorded by a batched forward pass.
#[derive(Clone, Debug)]
pub struct GradTape<T> {
    layer_inputs: Vec<Array2<T>>,
}

impl<T> GradTape<T> {
    pub fn batch_size(&self) -> usize {
        self.layer_inputs[0].nrows()
    }
}

impl<T: Real> MlpParams<T> {
    /// Builds a network from explicit layers, checking that consecutive
    /// widths agree.
    pub fn from_parts(
        layers: Vec<Dense<T>>,
        activations: Vec<Activation>,
        bypass: Option<Array2<T>>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs an output layer".into()));
        }
        if activations.len() + 1 != layers.len() {
            return Err(Error::dim(
                "activation list",
                layers.len() - 1,
                activations.len(),
            ));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::dim(
                    format!("bias of layer {i}"),
                    layer.output_dim(),
                    layer.bias.len(),
                ));
            }
            if i > 0 && layer.input_dim() != layers[i - 1].output_dim() {
                return Err(Error::dim(
                    format!("input of layer {i}"),
                    layers[i - 1].output_dim(),
                    layer.input_dim(),
                ));
            }
        }
        let input = layers[0].input_dim();
        let output = layers[layers.len() - 1].output_dim();
        if let Some(lin) = &bypass {
            if lin.dim() != (output, input) {
                return Err(Error::Config(format!(
                    "bypass must be {output}x{input}, got {}x{}",
                    lin.nrows(),
                    lin.ncols()
                )));
            }
        }
        let layers = layers
            .into_iter()
            .map(|l| Dense {
                weight: l.weight.as_standard_layout().into_owned(),
                bias: l.bias,
            })
            .collect();
        let bypass = bypass.map(|b| b.as_standard_layout().into_owned());
        Ok(MlpParams {
            layers,
            activations,
            bypass,
        })
    }

    /// All-zero network with the given hidden widths.
    pub fn zeros(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        bypass: bool,
    ) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        MlpParams {
            layers,
            activations: vec![activation; hidden.len()],
            bypass: bypass.then(|| Array2::zeros((output, input))),
        }
    }

    /// Weights uniform in `±sqrt(1/fan_in)`, zero biases, zero bypass.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        bypass: bool,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(input, hidden, output, activation, bypass);
        for layer in &mut net.layers {
            let bound = (1.0 / layer.input_dim() as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| T::lit(rng.random_range(-bound..bound)));
        }
        net
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            activations: self.activations.clone(),
            bypass: self.bypass.as_ref().map(|b| Array2::zeros(b.raw_dim())),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.output_dim())
            .collect()
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn bypass(&self) -> Option<&Array2<T>> {
        self.bypass.as_ref()
    }

    pub fn bypass_mut(&mut self) -> Option<&mut Array2<T>> {
        self.bypass.as_mut()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim())
            && self.bypass.as_ref().map(|b| b.dim()) == other.bypass.as_ref().map(|b| b.dim())
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: ArrayView1<T>) -> Result<(Array1<T>, GradTape<T>)> {
        let batch = input.insert_axis(Axis(0));
        let (out, tape) = self.forward_batch(batch)?;
        Ok((out.index_axis_move(Axis(0), 0), tape))
    }

    /// Single-sample backward pass; returns `(grad_params, grad_input)`.
    pub fn backward(
        &self,
        tape: &GradTape<T>,
        grad_output: ArrayView1<T>,
    ) -> Result<(Self, Array1<T>)> {
        let mut grads = self.zeros_like();
        let gi = self.backward_into(tape, grad_output.insert_axis(Axis(0)), &mut grads)?;
        Ok((grads, gi.index_axis_move(Axis(0), 0)))
    }

    /// Forward pass without recording a tape.
    pub fn predict_batch(&self, input: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(input.ncols())?;
        let mut x = input.to_owned();
        let n = self.layers.len() - 1;
        for (layer, act) in self.layers[..n].iter().zip(&self.activations) {
            x = affine(layer, x.view(), *act);
        }
        Ok(self.output_layer(input, x.view()))
    }

    /// Batched forward pass; rows of `input` are independent samples.
    pub fn forward_batch(&self, input: ArrayView2<T>) -> Result<(Array2<T>, GradTape<T>)> {
        self.check_input(input.ncols())?;
        let n = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(n + 1);
        layer_inputs.push(input.to_owned());
        for (layer, act) in self.layers[..n].iter().zip(&self.activations) {
            let next = affine(layer, layer_inputs.last().unwrap().view(), *act);
            layer_inputs.push(next);
        }
        let out = self.output_layer(input, layer_inputs[n].view());
        Ok((out, GradTape { layer_inputs }))
    }

    fn output_layer(&self, input: ArrayView2<T>, last: ArrayView2<T>) -> Array2<T> {
        let layer = &self.layers[self.layers.len() - 1];
        let mut out = Array2::from_shape_fn((last.nrows(), layer.output_dim()), |(_, j)| {
            layer.bias[j]
        });
        general_mat_mul(T::one(), &last, &layer.weight.t(), T::one(), &mut out);
        if let Some(lin) = &self.bypass {
            general_mat_mul(T::one(), &input, &lin.t(), T::one(), &mut out);
        }
        out
    }

    fn check_input(&self, actual: usize) -> Result<()> {
        if actual != self.input_dim() {
            return Err(Error::dim("input of layer 0", self.input_dim(), actual));
        }
        Ok(())
    }

    fn check_tape(&self, tape: &GradTape<T>) -> Result<()> {
        if tape.layer_inputs.len() != self.layers.len() {
            return Err(Error::StaleTape(format!(
                "tape has {} layers, network has {}",
                tape.layer_inputs.len(),
                self.layers.len()
            )));
        }
        for (i, (x, layer)) in tape.layer_inputs.iter().zip(&self.layers).enumerate() {
            if x.ncols() != layer.input_dim() {
                return Err(Error::StaleTape(format!(
                    "layer {i} input width {} on tape, {} in network",
                    x.ncols(),
                    layer.input_dim()
                )));
            }
        }
        Ok(())
    }

    /// Batched backward pass of `Σ_rows ⟨grad_output, output⟩`.
    ///
    /// Parameter gradients are *added* to `grads`; the input gradient is
    /// returned.
    pub fn backward_into(
        &self,
        tape: &GradTape<T>,
        grad_output: ArrayView2<T>,
        grads: &mut Self,
    ) -> Result<Array2<T>> {
        self.check_tape(tape)?;
        if !self.same_shape(grads) {
            return Err(Error::StaleTape("gradient buffer shape differs from network".into()));
        }
        if grad_output.dim() != (tape.batch_size(), self.output_dim()) {
            return Err(Error::dim(
                "grad_output width",
                self.output_dim(),
                grad_output.ncols(),
            ));
        }
        let n = self.layers.len() - 1;
        let input = &tape.layer_inputs[0];

        // Output layer and bypass.
        {
            let g = &mut grads.layers[n];
            general_mat_mul(
                T::one(),
                &grad_output.t(),
                &tape.layer_inputs[n],
                T::one(),
                &mut g.weight,
            );
            g.bias += &grad_output.sum_axis(Axis(0));
        }
        let mut grad_input = Array2::zeros(input.raw_dim());
        if let (Some(lin), Some(glin)) = (&self.bypass, grads.bypass.as_mut()) {
            general_mat_mul(T::one(), &grad_output.t(), input, T::one(), glin);
            general_mat_mul(T::one(), &grad_output, lin, T::zero(), &mut grad_input);
        }

        let mut delta_src = grad_output.dot(&self.layers[n].weight);
        for i in (0..n).rev() {
            let out = &tape.layer_inputs[i + 1];
            let act = self.activations[i];
            ndarray::Zip::from(&mut delta_src)
                .and(out)
                .for_each(|d, &y| *d *= act.derivative_from_output(y));
            let g = &mut grads.layers[i];
            general_mat_mul(
                T::one(),
                &delta_src.t(),
                &tape.layer_inputs[i],
                T::one(),
                &mut g.weight,
            );
            g.bias += &delta_src.sum_axis(Axis(0));
            if i == 0 {
                general_mat_mul(T::one(), &delta_src, &self.layers[0].weight, T::one(), &mut grad_input);
            } else {
                delta_src = delta_src.dot(&self.layers[i].weight);
            }
        }
        if n == 0 {
            general_mat_mul(T::one(), &grad_output, &self.layers[0].weight, T::one(), &mut grad_input);
        }
        Ok(grad_input)
    }

    /// `self += scale * other`.
    pub fn scaled_add(&mut self, scale: T, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
        if let (Some(a), Some(b)) = (self.bypass.as_mut(), other.bypass.as_ref()) {
            a.scaled_add(scale, b);
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weight.fill(T::zero());
            l.bias.fill(T::zero());
        }
        if let Some(b) = self.bypass.as_mut() {
            b.fill(T::zero());
        }
    }
}

fn affine<T: Real>(layer: &Dense<T>, x: ArrayView2<T>, act: Activation) -> Array2<T> {
    let mut out = Array2::from_shape_fn((x.nrows(), layer.output_dim()), |(_, j)| layer.bias[j]);
    general_mat_mul(T::one(), &x, &layer.weight.t(), T::one(), &mut out);
    match act {
        Activation::Identity => {}
        Activation::Tanh => T::tanh_slice(out.as_slice_mut().expect("standard layout")),
        _ => out.mapv_inplace(|v| act.apply(v)),
    }
    out
}

impl<T: Real> ParamBlocks<T> for MlpParams<T> {
    fn blocks(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 1);
        for (i, l) in self.layers.iter().enumerate() {
            out.push((
                format!("layer{i}.weight"),
                l.weight.as_slice().expect("standard layout"),
            ));
            out.push((
                format!("layer{i}.bias"),
                l.bias.as_slice().expect("standard layout"),
            ));
        }
        if let Some(b) = &self.bypass {
            out.push(("bypass".to_string(), b.as_slice().expect("standard layout")));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        if let Some(b) = &mut self.bypass {
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}
