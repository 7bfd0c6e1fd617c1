//! The meta-state-space model: a deterministic meta-state recursion
//! `z₊ = f(z, u)` and a mixture density output head `p(y | z, u)`.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, MlpParams, ParamBlocks};
use crate::error::{Error, Result};
use crate::mixture::{clamp_log_sigma, softmax, GaussianMixture};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MssDims {
    pub n_z: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_normals: usize,
}

impl MssDims {
    pub fn validate(&self) -> Result<()> {
        if self.n_z == 0 || self.n_normals == 0 || self.n_u == 0 || self.n_y == 0 {
            return Err(Error::Config(format!(
                "all model dimensions must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Width of the network input `ξ = [z; u]`.
    pub fn xi_dim(&self) -> usize {
        self.n_z + self.n_u
    }
}

/// Hidden-layer layout shared by the transition net and the three heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetLayout {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub bypass: bool,
}

impl NetLayout {
    pub fn uniform(n_layers: usize, n_hidden: usize) -> Self {
        NetLayout {
            hidden: vec![n_hidden; n_layers],
            activation: Activation::Tanh,
            bypass: true,
        }
    }
}

/// Per-channel affine normalization `x_norm = (x - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization<T> {
    pub u_mean: Vec<T>,
    pub u_scale: Vec<T>,
    pub y_mean: Vec<T>,
    pub y_scale: Vec<T>,
}

impl<T: Real> Normalization<T> {
    pub fn identity(n_u: usize, n_y: usize) -> Self {
        Normalization {
            u_mean: vec![T::zero(); n_u],
            u_scale: vec![T::one(); n_u],
            y_mean: vec![T::zero(); n_y],
            y_scale: vec![T::one(); n_y],
        }
    }

    /// Column means and standard deviations; constant columns get scale 1.
    pub fn from_data(u: ArrayView2<f64>, y: ArrayView2<f64>) -> Self {
        fn stats<T: Real>(x: ArrayView2<f64>) -> (Vec<T>, Vec<T>) {
            let n = x.nrows().max(1) as f64;
            x.columns()
                .into_iter()
                .map(|c| {
                    let m = c.sum() / n;
                    let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                    let sd = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
                    (T::lit(m), T::lit(sd))
                })
                .unzip()
        }
        let (u_mean, u_scale) = stats(u);
        let (y_mean, y_scale) = stats(y);
        Normalization {
            u_mean,
            u_scale,
            y_mean,
            y_scale,
        }
    }

    pub fn validate(&self, n_u: usize, n_y: usize) -> Result<()> {
        if self.u_mean.len() != n_u || self.u_scale.len() != n_u {
            return Err(Error::dim("input normalization", n_u, self.u_mean.len()));
        }
        if self.y_mean.len() != n_y || self.y_scale.len() != n_y {
            return Err(Error::dim("output normalization", n_y, self.y_mean.len()));
        }
        let all = self.u_mean.iter().chain(&self.y_mean);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Config("normalization means must be finite".into()));
        }
        if self
            .u_scale
            .iter()
            .chain(&self.y_scale)
            .any(|&s| !(s > T::zero()) || !s.is_finite())
        {
            return Err(Error::Config("normalization scales must be > 0".into()));
        }
        Ok(())
    }

    pub fn normalize_u(&self, u: ArrayView1<T>) -> Array1<T> {
        Array1::from_shape_fn(u.len(), |i| (u[i] - self.u_mean[i]) / self.u_scale[i])
    }

    pub fn normalize_inputs(&self, u: ArrayView2<f64>) -> Array2<T> {
        Array2::from_shape_fn(u.dim(), |(t, i)| {
            (T::lit(u[[t, i]]) - self.u_mean[i]) / self.u_scale[i]
        })
    }

    pub fn normalize_outputs(&self, y: ArrayView2<f64>) -> Array2<T> {
        Array2::from_shape_fn(y.dim(), |(t, i)| {
            (T::lit(y[[t, i]]) - self.y_mean[i]) / self.y_scale[i]
        })
    }

    /// `Σ ln(y_scale)`: the log-density shift between normalized and raw
    /// output units.
    pub fn log_output_scale(&self) -> T {
        self.y_scale.iter().map(|s| s.ln()).sum()
    }
}

/// The four networks of a meta-state-space model.
///
/// Also used as the gradient container during training.
#[derive(Clone, Debug, PartialEq)]
pub struct MssNets<T> {
    /// `f_θ : [z; u] → z₊`
    pub transition: MlpParams<T>,
    /// Mixture logits `w̃`, `n_normals` outputs.
    pub weight_head: MlpParams<T>,
    /// Component means, `n_normals · n_y` outputs.
    pub mean_head: MlpParams<T>,
    /// Log standard deviations `σ̃`, `n_normals · n_y` outputs.
    pub sigma_head: MlpParams<T>,
}

impl<T: Real> MssNets<T> {
    pub fn nets(&self) -> [&MlpParams<T>; 4] {
        [
            &self.transition,
            &self.weight_head,
            &self.mean_head,
            &self.sigma_head,
        ]
    }

    pub fn nets_mut(&mut self) -> [&mut MlpParams<T>; 4] {
        [
            &mut self.transition,
            &mut self.weight_head,
            &mut self.mean_head,
            &mut self.sigma_head,
        ]
    }

    pub fn zeros_like(&self) -> Self {
        MssNets {
            transition: self.transition.zeros_like(),
            weight_head: self.weight_head.zeros_like(),
            mean_head: self.mean_head.zeros_like(),
            sigma_head: self.sigma_head.zeros_like(),
        }
    }

    pub fn scaled_add(&mut self, scale: T, other: &Self) {
        for (a, b) in self.nets_mut().into_iter().zip(other.nets()) {
            a.scaled_add(scale, b);
        }
    }

    pub fn fill_zero(&mut self) {
        for n in self.nets_mut() {
            n.fill_zero();
        }
    }
}

const NET_NAMES: [&str; 4] = ["transition", "weight_head", "mean_head", "sigma_head"];

impl<T: Real> ParamBlocks<T> for MssNets<T> {
    fn blocks(&self) -> Vec<(String, &[T])> {
        self.nets()
            .into_iter()
            .zip(NET_NAMES)
            .flat_map(|(net, prefix)| {
                net.blocks()
                    .into_iter()
                    .map(move |(name, b)| (format!("{prefix}.{name}"), b))
            })
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.nets_mut()
            .into_iter()
            .flat_map(|n| n.blocks_mut())
            .collect()
    }
}

/// Raw head outputs for a batch of `ξ` rows, in normalized output units.
pub(crate) struct HeadOutputs<T> {
    pub logits: Array2<T>,
    pub means: Array2<T>,
    pub log_sigmas: Array2<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MssModel<T> {
    dims: MssDims,
    nets: MssNets<T>,
    norm: Normalization<T>,
}

impl<T: Real> MssModel<T> {
    pub fn from_parts(dims: MssDims, nets: MssNets<T>, norm: Normalization<T>) -> Result<Self> {
        dims.validate()?;
        norm.validate(dims.n_u, dims.n_y)?;
        let xi = dims.xi_dim();
        let expect = [
            (dims.n_z, "transition"),
            (dims.n_normals, "weight_head"),
            (dims.n_normals * dims.n_y, "mean_head"),
            (dims.n_normals * dims.n_y, "sigma_head"),
        ];
        for (net, (out, name)) in nets.nets().into_iter().zip(expect) {
            if net.input_dim() != xi {
                return Err(Error::dim(format!("{name} input"), xi, net.input_dim()));
            }
            if net.output_dim() != out {
                return Err(Error::dim(format!("{name} output"), out, net.output_dim()));
            }
        }
        Ok(MssModel { dims, nets, norm })
    }

    /// Randomly initialized model (see [`MlpParams::init`]).
    pub fn init<R: Rng + ?Sized>(
        dims: MssDims,
        layout: &NetLayout,
        norm: Normalization<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let xi = dims.xi_dim();
        let (h, a, b) = (&layout.hidden, layout.activation, layout.bypass);
        let nets = MssNets {
            transition: MlpParams::init(xi, h, dims.n_z, a, b, rng),
            weight_head: MlpParams::init(xi, h, dims.n_normals, a, b, rng),
            mean_head: MlpParams::init(xi, h, dims.n_normals * dims.n_y, a, b, rng),
            sigma_head: MlpParams::init(xi, h, dims.n_normals * dims.n_y, a, b, rng),
        };
        Self::from_parts(dims, nets, norm)
    }

    /// Model with every parameter zero.
    pub fn zeros(dims: MssDims, layout: &NetLayout, norm: Normalization<T>) -> Result<Self> {
        let xi = dims.xi_dim();
        let (h, a, b) = (&layout.hidden, layout.activation, layout.bypass);
        let nets = MssNets {
            transition: MlpParams::zeros(xi, h, dims.n_z, a, b),
            weight_head: MlpParams::zeros(xi, h, dims.n_normals, a, b),
            mean_head: MlpParams::zeros(xi, h, dims.n_normals * dims.n_y, a, b),
            sigma_head: MlpParams::zeros(xi, h, dims.n_normals * dims.n_y, a, b),
        };
        Self::from_parts(dims, nets, norm)
    }

    pub fn dims(&self) -> MssDims {
        self.dims
    }

    pub fn nets(&self) -> &MssNets<T> {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut MssNets<T> {
        &mut self.nets
    }

    pub fn normalization(&self) -> &Normalization<T> {
        &self.norm
    }

    fn xi(&self, z: ArrayView1<T>, u: ArrayView1<T>) -> Result<Array1<T>> {
        if z.len() != self.dims.n_z {
            return Err(Error::dim("meta-state", self.dims.n_z, z.len()));
        }
        if u.len() != self.dims.n_u {
            return Err(Error::dim("input", self.dims.n_u, u.len()));
        }
        if z.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model input".into()));
        }
        let un = self.norm.normalize_u(u);
        Ok(concatenate![Axis(0), z, un])
    }

    /// `z₊ = f_θ(z, u_norm)`; `u` is in raw units.
    pub fn transition(&self, z: ArrayView1<T>, u: ArrayView1<T>) -> Result<Array1<T>> {
        let xi = self.xi(z, u)?;
        let next = self
            .nets
            .transition
            .predict_batch(xi.view().insert_axis(Axis(0)))?
            .index_axis_move(Axis(0), 0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("meta-state".into()));
        }
        Ok(next)
    }

    /// Output distribution `p(y | z, u)` in raw output units.
    pub fn output_distribution(
        &self,
        z: ArrayView1<T>,
        u: ArrayView1<T>,
    ) -> Result<GaussianMixture<T>> {
        let xi = self.xi(z, u)?;
        let heads = self.heads_batch(xi.view().insert_axis(Axis(0)))?;
        Ok(self.mixture_from_heads(&heads, 0))
    }

    pub(crate) fn heads_batch(&self, xi: ArrayView2<T>) -> Result<HeadOutputs<T>> {
        Ok(HeadOutputs {
            logits: self.nets.weight_head.predict_batch(xi)?,
            means: self.nets.mean_head.predict_batch(xi)?,
            log_sigmas: self.nets.sigma_head.predict_batch(xi)?,
        })
    }

    pub(crate) fn mixture_from_heads(&self, heads: &HeadOutputs<T>, row: usize) -> GaussianMixture<T> {
        let k = self.dims.n_normals;
        let ny = self.dims.n_y;
        let logits = heads.logits.row(row);
        let weights = softmax(logits.as_slice().expect("standard layout"));
        let means = Array2::from_shape_fn((k, ny), |(i, d)| {
            heads.means[[row, i * ny + d]] * self.norm.y_scale[d] + self.norm.y_mean[d]
        });
        let sigmas = Array2::from_shape_fn((k, ny), |(i, d)| {
            let (s, _) = clamp_log_sigma(heads.log_sigmas[[row, i * ny + d]]);
            s.exp() * self.norm.y_scale[d]
        });
        GaussianMixture::from_parts_unchecked(weights, means, sigmas)
    }

    /// Runs the meta-state recursion; returns `len(u) + 1` states (rows)
    /// starting with `z1`.
    pub fn simulate_meta(&self, z1: ArrayView1<T>, inputs: ArrayView2<T>) -> Result<Array2<T>> {
        if inputs.nrows() == 0 {
            return Err(Error::Config("input sequence is empty".into()));
        }
        let mut states = Array2::zeros((inputs.nrows() + 1, self.dims.n_z));
        states.row_mut(0).assign(&z1);
        for t in 0..inputs.nrows() {
            let next = self
                .transition(states.row(t), inputs.row(t))
                .map_err(|e| e.at_time(t))?;
            states.row_mut(t + 1).assign(&next);
        }
        Ok(states)
    }

    /// Output distributions along `inputs` starting from `z = 0`:
    /// entry `t` is `p(y_t | z_t, u_t)`.
    pub fn predict_distributions(&self, inputs: ArrayView2<T>) -> Result<Vec<GaussianMixture<T>>> {
        let z0 = Array1::zeros(self.dims.n_z);
        let states = self.simulate_meta(z0.view(), inputs)?;
        let n = inputs.nrows();
        let mut xi = Array2::zeros((n, self.dims.xi_dim()));
        for t in 0..n {
            xi.slice_mut(s![t, ..self.dims.n_z]).assign(&states.row(t));
            xi.slice_mut(s![t, self.dims.n_z..])
                .assign(&self.norm.normalize_u(inputs.row(t)));
        }
        let heads = self.heads_batch(xi.view())?;
        Ok((0..n).map(|t| self.mixture_from_heads(&heads, t)).collect())
    }
}
