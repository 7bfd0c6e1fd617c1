//! Gaussian mixtures with diagonal covariance and their stable log-density.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Standard deviation floor and ceiling in normalized output units.
pub const SIGMA_MIN: f64 = 1e-4;
pub const SIGMA_MAX: f64 = 1e4;

/// `ln(2π) / 2`
pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `max + ln Σ exp(x - max)`; `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() || m == T::infinity() {
        return m;
    }
    let s: T = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Max-shifted softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&x| (x - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[inline]
pub(crate) fn clamp_log_sigma<T: Real>(raw: T) -> (T, bool) {
    let lo = T::lit(SIGMA_MIN.ln());
    let hi = T::lit(SIGMA_MAX.ln());
    if raw < lo {
        (lo, false)
    } else if raw > hi {
        (hi, false)
    } else {
        (raw, true)
    }
}

/// Gradient buffers for one row of head outputs.
pub(crate) struct HeadGrads<'a, T> {
    pub logits: &'a mut [T],
    pub means: &'a mut [T],
    pub log_sigmas: &'a mut [T],
}

/// Reusable buffers for [`head_nll`].
#[derive(Default)]
pub(crate) struct HeadScratch<T> {
    weights: Vec<T>,
    log_terms: Vec<T>,
    inv_sigmas: Vec<T>,
    z: Vec<T>,
}

/// Negative log-density of `y` under the mixture given by raw head outputs
/// (normalized units), optionally writing its gradient w.r.t. those outputs.
///
/// `means` and `raw_log_sigmas` are component-major (`i * n_y + d`).
pub(crate) fn head_nll<T: Real>(
    logits: &[T],
    means: &[T],
    raw_log_sigmas: &[T],
    y: &[T],
    scratch: &mut HeadScratch<T>,
    grads: Option<HeadGrads<'_, T>>,
) -> T {
    let k = logits.len();
    let ny = y.len();
    let half_ln_2pi = T::lit(HALF_LN_2PI);
    let half = T::lit(0.5);
    let HeadScratch {
        weights,
        log_terms,
        inv_sigmas,
        z,
    } = scratch;

    // Unnormalized softmax of the logits.
    let m_w = logits.iter().copied().fold(T::neg_infinity(), T::max);
    weights.clear();
    weights.extend(logits.iter().map(|&l| (l - m_w).exp()));
    let sum_w: T = weights.iter().copied().sum();
    let lse_w = m_w + sum_w.ln();

    log_terms.clear();
    inv_sigmas.clear();
    z.clear();
    for i in 0..k {
        let mut r = logits[i] - lse_w;
        for d in 0..ny {
            let j = i * ny + d;
            let (s, _) = clamp_log_sigma(raw_log_sigmas[j]);
            let inv = (-s).exp();
            let zj = (y[d] - means[j]) * inv;
            r -= half_ln_2pi + s + half * zj * zj;
            inv_sigmas.push(inv);
            z.push(zj);
        }
        log_terms.push(r);
    }
    let m_r = log_terms.iter().copied().fold(T::neg_infinity(), T::max);
    if !m_r.is_finite() {
        return -m_r;
    }
    // Reuse the buffer for exp(r_i - m_r).
    log_terms.iter_mut().for_each(|r| *r = (*r - m_r).exp());
    let sum_r: T = log_terms.iter().copied().sum();
    let lse_r = m_r + sum_r.ln();
    if let Some(g) = grads {
        let (inv_w, inv_r) = (T::one() / sum_w, T::one() / sum_r);
        for i in 0..k {
            let gamma = log_terms[i] * inv_r;
            g.logits[i] = weights[i] * inv_w - gamma;
            for d in 0..ny {
                let j = i * ny + d;
                let (zj, inv) = (z[j], inv_sigmas[j]);
                g.means[j] = -gamma * zj * inv;
                g.log_sigmas[j] = if clamp_log_sigma(raw_log_sigmas[j]).1 {
                    gamma * (T::one() - zj * zj)
                } else {
                    T::zero()
                };
            }
        }
    }
    -lse_r
}

/// One evaluated output distribution `Σ wᵢ N(y | μᵢ, diag(σᵢ²))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture<T> {
    weights: Vec<T>,
    /// `(n_normals, n_y)`
    means: Array2<T>,
    /// `(n_normals, n_y)`
    sigmas: Array2<T>,
}

impl<T: Real> GaussianMixture<T> {
    pub fn new(weights: Vec<T>, means: Array2<T>, sigmas: Array2<T>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if means.nrows() != k || sigmas.dim() != means.dim() {
            return Err(Error::dim("mixture components", k, means.nrows()));
        }
        if weights.iter().any(|&w| !(w >= T::zero()) || !w.is_finite()) {
            return Err(Error::Config("mixture weights must be finite and >= 0".into()));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(64.0)) {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        if sigmas.iter().any(|&s| !(s > T::zero()) || !s.is_finite()) {
            return Err(Error::Config("mixture sigmas must be finite and > 0".into()));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("mixture mean".into()));
        }
        Ok(GaussianMixture {
            weights,
            means,
            sigmas,
        })
    }

    /// Single-output mixture from flat component lists.
    pub fn univariate(weights: Vec<T>, means: Vec<T>, sigmas: Vec<T>) -> Result<Self> {
        let k = means.len();
        let means = Array2::from_shape_vec((k, 1), means)
            .map_err(|e| Error::Config(e.to_string()))?;
        let sigmas = Array2::from_shape_vec((sigmas.len(), 1), sigmas)
            .map_err(|e| Error::Config(e.to_string()))?;
        Self::new(weights, means, sigmas)
    }

    pub(crate) fn from_parts_unchecked(weights: Vec<T>, means: Array2<T>, sigmas: Array2<T>) -> Self {
        GaussianMixture {
            weights,
            means,
            sigmas,
        }
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn output_dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &Array2<T> {
        &self.means
    }

    pub fn sigmas(&self) -> &Array2<T> {
        &self.sigmas
    }

    /// `log wᵢ + log N(y | μᵢ, σᵢ)` for each component.
    pub fn component_log_terms(&self, y: &[T]) -> Vec<T> {
        let half = T::lit(0.5);
        let c = T::lit(HALF_LN_2PI);
        (0..self.n_components())
            .map(|i| {
                let mut r = self.weights[i].ln();
                for (d, &yd) in y.iter().enumerate() {
                    let s = self.sigmas[[i, d]];
                    let z = (yd - self.means[[i, d]]) / s;
                    r -= c + s.ln() + half * z * z;
                }
                r
            })
            .collect()
    }

    /// Stable log-density: `max_k r_k + ln Σᵢ exp(rᵢ - max_k r_k)`.
    pub fn log_prob(&self, y: &[T]) -> Result<T> {
        if y.len() != self.output_dim() {
            return Err(Error::dim("mixture output", self.output_dim(), y.len()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("log_prob argument".into()));
        }
        Ok(log_sum_exp(&self.component_log_terms(y)))
    }

    /// Direct density summation; underflows far from every component.
    pub fn density(&self, y: &[T]) -> T {
        self.component_densities(y).into_iter().sum()
    }

    /// Weighted component densities `wᵢ N(y | μᵢ, σᵢ)`.
    pub fn component_densities(&self, y: &[T]) -> Vec<T> {
        let half = T::lit(0.5);
        let norm = T::lit((2.0 * std::f64::consts::PI).sqrt());
        (0..self.n_components())
            .map(|i| {
                let mut p = self.weights[i];
                for (d, &yd) in y.iter().enumerate() {
                    let s = self.sigmas[[i, d]];
                    let z = (yd - self.means[[i, d]]) / s;
                    p = p * (-half * z * z).exp() / (norm * s);
                }
                p
            })
            .collect()
    }

    /// Mixture mean per output channel: `Σ wᵢ μᵢ`.
    pub fn mean(&self) -> Vec<T> {
        (0..self.output_dim())
            .map(|d| {
                (0..self.n_components())
                    .map(|i| self.weights[i] * self.means[[i, d]])
                    .sum()
            })
            .collect()
    }

    /// Mixture variance per channel: `Σ wᵢ(σᵢ² + μᵢ²) − (Σ wᵢ μᵢ)²`.
    pub fn variance(&self) -> Vec<T> {
        let mean = self.mean();
        (0..self.output_dim())
            .map(|d| {
                let second: T = (0..self.n_components())
                    .map(|i| {
                        let s = self.sigmas[[i, d]];
                        let m = self.means[[i, d]];
                        self.weights[i] * (s * s + m * m)
                    })
                    .sum();
                second - mean[d] * mean[d]
            })
            .collect()
    }
}
