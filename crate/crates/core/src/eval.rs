//! Model quality on a test ensemble: mean log-likelihood, Gaussian baselines,
//! the entropy upper limit and histogram/density comparison tables.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{GaussianMixture, HALF_LN_2PI};
use crate::model::MssModel;
use crate::scalar::Real;
use crate::simulator::{fmt_f64, TestEnsemble};

/// Floor applied to baseline standard deviations (output units).
pub const BASELINE_SIGMA_FLOOR: f64 = 1e-4;

/// Floor applied to Vasicek spacings before taking logs.
pub const SPACING_FLOOR: f64 = 1e-300;

/// Moments of the ensemble used by the three Gaussian baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    /// Grand mean over all times and trajectories.
    pub mu_y: f64,
    /// Grand standard deviation around `mu_y`.
    pub sigma_y: f64,
    /// Cross-trajectory mean at each time.
    pub mu_t: Vec<f64>,
    /// Pooled standard deviation around `mu_t`.
    pub sigma_s: f64,
    /// Cross-trajectory standard deviation at each time.
    pub sigma_t: Vec<f64>,
}

pub fn compute_baselines(ens: &TestEnsemble) -> BaselineStats {
    let (n, s) = (ens.n_times() as f64, ens.n_trajectories() as f64);
    let mu_t: Vec<f64> = ens.y.rows().into_iter().map(|r| r.sum() / s).collect();
    let mu_y = ens.y.iter().sum::<f64>() / (n * s);
    let sigma_y = (ens.y.iter().map(|v| (v - mu_y).powi(2)).sum::<f64>() / (n * s)).sqrt();
    let var_t: Vec<f64> = ens
        .y
        .rows()
        .into_iter()
        .zip(&mu_t)
        .map(|(r, m)| r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / s)
        .collect();
    let sigma_s = (var_t.iter().sum::<f64>() / n).sqrt();
    BaselineStats {
        mu_y,
        sigma_y,
        mu_t,
        sigma_s,
        sigma_t: var_t.into_iter().map(f64::sqrt).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineScores {
    /// Gaussian with static mean and static std.
    pub static_gaussian: f64,
    /// Gaussian with per-time mean and pooled static std.
    pub dynamic_mean: f64,
    /// Gaussian with per-time mean and per-time std.
    pub dynamic_both: f64,
    /// Set when some std fell below [`BASELINE_SIGMA_FLOOR`].
    pub sigma_floor_applied: bool,
}

/// Mean Gaussian log-density of the ensemble under each baseline.
pub fn baseline_scores(stats: &BaselineStats, ens: &TestEnsemble) -> Result<BaselineScores> {
    if stats.mu_t.len() != ens.n_times() || stats.sigma_t.len() != ens.n_times() {
        return Err(Error::dim("baseline statistics", ens.n_times(), stats.mu_t.len()));
    }
    let mut floored = false;
    let mut floor = |s: f64| {
        if s < BASELINE_SIGMA_FLOOR {
            floored = true;
            BASELINE_SIGMA_FLOOR
        } else {
            s
        }
    };
    let sigma_y = floor(stats.sigma_y);
    let sigma_s = floor(stats.sigma_s);
    let sigma_t: Vec<f64> = stats.sigma_t.iter().map(|&s| floor(s)).collect();
    let count = (ens.n_times() * ens.n_trajectories()) as f64;
    let log_n = |y: f64, m: f64, s: f64| {
        let z = (y - m) / s;
        -HALF_LN_2PI - s.ln() - 0.5 * z * z
    };
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for (t, row) in ens.y.rows().into_iter().enumerate() {
        let (mut ra, mut rb, mut rc) = (0.0, 0.0, 0.0);
        for &y in row {
            ra += log_n(y, stats.mu_y, sigma_y);
            rb += log_n(y, stats.mu_t[t], sigma_s);
            rc += log_n(y, stats.mu_t[t], sigma_t[t]);
        }
        a += ra;
        b += rb;
        c += rc;
    }
    Ok(BaselineScores {
        static_gaussian: a / count,
        dynamic_mean: b / count,
        dynamic_both: c / count,
        sigma_floor_applied: floored,
    })
}

/// Default spacing window `⌊√n⌋`.
pub fn default_window(n: usize) -> usize {
    ((n as f64).sqrt().floor() as usize).max(1)
}

/// Vasicek's spacing estimate of differential entropy,
/// `(1/n) Σᵢ ln( n/(2m) · (y₍ᵢ₊ₘ₎ − y₍ᵢ₋ₘ₎) )` over the sorted sample with
/// indices clamped to `[1, n]`.
pub fn vasicek_entropy(samples: &[f64], m: usize) -> Result<f64> {
    let n = samples.len();
    if m == 0 || n < 2 * m + 2 {
        return Err(Error::Entropy(format!(
            "need at least 2m+2 = {} samples for window m = {m}, got {n}",
            2 * m + 2
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("entropy sample".into()));
    }
    let mut y = samples.to_vec();
    y.sort_by(f64::total_cmp);
    if y[0] == y[n - 1] {
        return Err(Error::Entropy("all samples identical; entropy is -inf".into()));
    }
    let scale = n as f64 / (2.0 * m as f64);
    let mut zero = 0usize;
    let mut total = 0.0;
    for i in 0..n {
        let hi = y[(i + m).min(n - 1)];
        let lo = y[i.saturating_sub(m)];
        let gap = hi - lo;
        if gap == 0.0 {
            zero += 1;
        }
        total += (scale * gap.max(SPACING_FLOOR)).ln();
    }
    if 2 * zero > n {
        return Err(Error::Entropy(format!("{zero} of {n} spacings are zero")));
    }
    Ok(total / n as f64)
}

/// Negative mean per-time entropy of the ensemble output: an upper bound on
/// the mean log-likelihood any model can reach.
pub fn upper_limit(ens: &TestEnsemble, m: Option<usize>) -> Result<f64> {
    let m = m.unwrap_or_else(|| default_window(ens.n_trajectories()));
    let entropies: Vec<f64> = (0..ens.n_times())
        .into_par_iter()
        .map(|t| {
            let row: Vec<f64> = ens.y.row(t).to_vec();
            vasicek_entropy(&row, m).map_err(|e| e.at_time(t))
        })
        .collect::<Result<_>>()?;
    Ok(-entropies.iter().sum::<f64>() / ens.n_times() as f64)
}

fn check_model<T: Real>(model: &MssModel<T>, ens: &TestEnsemble) -> Result<()> {
    let d = model.dims();
    if d.n_y != 1 {
        return Err(Error::dim("model outputs (ensemble is scalar)", 1, d.n_y));
    }
    if d.n_u != ens.u.ncols() {
        return Err(Error::dim("model inputs", ens.u.ncols(), d.n_u));
    }
    Ok(())
}

/// Output distributions along the ensemble's shared input, meta-state
/// started at zero on the first retained sample.
pub fn ensemble_predictions<T: Real>(
    model: &MssModel<T>,
    ens: &TestEnsemble,
) -> Result<Vec<GaussianMixture<T>>> {
    check_model(model, ens)?;
    model.predict_distributions(ens.u.mapv(T::lit).view())
}

/// Mean log-likelihood over all trajectories and times `burn_in..N`.
pub fn ensemble_mean_log_likelihood<T: Real>(
    model: &MssModel<T>,
    ens: &TestEnsemble,
    burn_in: usize,
) -> Result<f64> {
    if burn_in >= ens.n_times() {
        return Err(Error::Config(format!(
            "burn-in {burn_in} leaves no samples of {}",
            ens.n_times()
        )));
    }
    let dists = ensemble_predictions(model, ens)?;
    let per_time: Vec<f64> = (burn_in..ens.n_times())
        .into_par_iter()
        .map(|t| {
            // Per-component constants in f64.
            let mix = &dists[t];
            let comps: Vec<(f64, f64, f64)> = (0..mix.n_components())
                .filter(|&i| mix.weights()[i] > T::zero())
                .map(|i| {
                    let s = mix.sigmas()[[i, 0]].as_f64();
                    (
                        mix.weights()[i].as_f64().ln() - s.ln() - HALF_LN_2PI,
                        mix.means()[[i, 0]].as_f64(),
                        1.0 / s,
                    )
                })
                .collect();
            let mut r = vec![0.0; comps.len()];
            let mut sum = 0.0;
            for (i, &y) in ens.y.row(t).iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                for (slot, &(c, mu, inv)) in r.iter_mut().zip(&comps) {
                    let z = (y - mu) * inv;
                    *slot = c - 0.5 * z * z;
                    best = best.max(*slot);
                }
                let lp = best + r.iter().map(|&v| (v - best).exp()).sum::<f64>().ln();
                if !lp.is_finite() {
                    return Err(Error::NonFinite(format!("log-likelihood at t={t}, trajectory {i}")));
                }
                sum += lp;
            }
            Ok(sum)
        })
        .collect::<Result<_>>()?;
    let count = ((ens.n_times() - burn_in) * ens.n_trajectories()) as f64;
    Ok(per_time.iter().sum::<f64>() / count)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub gaussian_static: f64,
    pub gaussian_dynamic_mean: f64,
    pub gaussian_dynamic_both: f64,
    pub model: Option<f64>,
    pub upper_limit: f64,
    pub vasicek_window: usize,
    pub s: usize,
    pub n: usize,
    pub burn_in: usize,
    pub sigma_floor_applied: bool,
}

impl EvalReport {
    /// The rows of the comparison table, in order.
    pub fn rows(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("Gaussian(mu_y, sigma_y)", Some(self.gaussian_static)),
            ("Gaussian(mu_y_t, sigma_y_s)", Some(self.gaussian_dynamic_mean)),
            ("Gaussian(mu_y_t, sigma_y_t)", Some(self.gaussian_dynamic_both)),
            ("Meta-state-space model", self.model),
            ("Upper limit", Some(self.upper_limit)),
        ]
    }
}

/// Baselines, upper limit and (when a model is given) its score.
pub fn evaluate<T: Real>(
    model: Option<&MssModel<T>>,
    ens: &TestEnsemble,
    burn_in: usize,
    window: Option<usize>,
) -> Result<EvalReport> {
    let stats = compute_baselines(ens);
    let scores = baseline_scores(&stats, ens)?;
    let m = window.unwrap_or_else(|| default_window(ens.n_trajectories()));
    let upper = upper_limit(ens, Some(m))?;
    let model_score = model
        .map(|m| ensemble_mean_log_likelihood(m, ens, burn_in))
        .transpose()?;
    Ok(EvalReport {
        gaussian_static: scores.static_gaussian,
        gaussian_dynamic_mean: scores.dynamic_mean,
        gaussian_dynamic_both: scores.dynamic_both,
        model: model_score,
        upper_limit: upper,
        vasicek_window: m,
        s: ens.n_trajectories(),
        n: ens.n_times(),
        burn_in,
        sigma_floor_applied: scores.sigma_floor_applied,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bins {
    /// Freedman–Diaconis width `2·IQR·n^{-1/3}`.
    Auto,
    Count(usize),
}

impl std::str::FromStr for Bins {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Bins::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Bins::Count(n)),
            _ => Err(format!("bins must be `auto` or a positive count, got `{s}`")),
        }
    }
}

/// Histogram of one ensemble cross-section next to the model's density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramTable {
    pub t: usize,
    pub edges: Vec<f64>,
    /// Density-normalized counts, one per bin.
    pub density: Vec<f64>,
    pub grid: Vec<f64>,
    pub model_density: Vec<f64>,
    /// Weighted component densities, `components[i][j]` at `grid[j]`.
    pub components: Vec<Vec<f64>>,
}

impl HistogramTable {
    pub fn write_histogram_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "bin_left,bin_right,density")?;
        for (i, d) in self.density.iter().enumerate() {
            writeln!(
                w,
                "{},{},{}",
                fmt_f64(self.edges[i]),
                fmt_f64(self.edges[i + 1]),
                fmt_f64(*d)
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_curve_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(w, "y,model")?;
        for i in 1..=self.components.len() {
            write!(w, ",component_{i}")?;
        }
        writeln!(w)?;
        for (j, y) in self.grid.iter().enumerate() {
            write!(w, "{},{}", fmt_f64(*y), fmt_f64(self.model_density[j]))?;
            for c in &self.components {
                write!(w, ",{}", fmt_f64(c[j]))?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Density histogram with bin edges spanning `[min, max]` of the sample.
pub fn density_histogram(samples: &[f64], bins: Bins) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut y = samples.to_vec();
    y.sort_by(f64::total_cmp);
    let (lo, hi) = (y[0], y[y.len() - 1]);
    if !(hi > lo) {
        return Err(Error::Config("empty bin range: all samples are equal".into()));
    }
    let n_bins = match bins {
        Bins::Count(n) => n,
        Bins::Auto => {
            let iqr = quantile(&y, 0.75) - quantile(&y, 0.25);
            let width = 2.0 * iqr / (y.len() as f64).cbrt();
            if width > 0.0 {
                (((hi - lo) / width).ceil() as usize).clamp(1, 10_000)
            } else {
                // Degenerate IQR: fall back to Sturges.
                ((y.len() as f64).log2().ceil() as usize + 1).max(1)
            }
        }
    };
    if n_bins == 0 {
        return Err(Error::Config("empty bin range: zero bins".into()));
    }
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins)
        .map(|i| if i == n_bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0usize; n_bins];
    for &v in &y {
        let idx = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    let total = y.len() as f64;
    let density = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 / (total * (edges[i + 1] - edges[i])))
        .collect();
    Ok((edges, density))
}

/// Evaluation grid covering the sample and every component to ±12σ, with a
/// step of at most a tenth of the narrowest σ.
fn density_grid<T: Real>(mix: &GaussianMixture<T>, lo: f64, hi: f64) -> Vec<f64> {
    let mut a = lo;
    let mut b = hi;
    let mut min_sigma = f64::INFINITY;
    for i in 0..mix.n_components() {
        let mu = mix.means()[[i, 0]].as_f64();
        let s = mix.sigmas()[[i, 0]].as_f64();
        a = a.min(mu - 12.0 * s);
        b = b.max(mu + 12.0 * s);
        min_sigma = min_sigma.min(s);
    }
    const MAX_POINTS: usize = 400_001;
    let points = (((b - a) / (min_sigma / 10.0)).ceil() as usize + 1).clamp(1001, MAX_POINTS);
    let step = (b - a) / (points - 1) as f64;
    (0..points).map(|j| a + step * j as f64).collect()
}

/// Histogram/density tables at the requested retained time indices.
pub fn histogram_compare<T: Real>(
    model: &MssModel<T>,
    ens: &TestEnsemble,
    times: &[usize],
    bins: Bins,
) -> Result<Vec<HistogramTable>> {
    if let Some(&bad) = times.iter().find(|&&t| t >= ens.n_times()) {
        return Err(Error::Config(format!(
            "time {bad} outside retained range 0..{}",
            ens.n_times()
        )));
    }
    let dists = ensemble_predictions(model, ens)?;
    times
        .iter()
        .map(|&t| {
            let sample = ens.y.row(t).to_vec();
            let (edges, density) = density_histogram(&sample, bins)?;
            let mix = &dists[t];
            let grid = density_grid(mix, edges[0], edges[edges.len() - 1]);
            let components: Vec<Vec<f64>> = (0..mix.n_components())
                .map(|i| {
                    let w = mix.weights()[i].as_f64();
                    let mu = mix.means()[[i, 0]].as_f64();
                    let s = mix.sigmas()[[i, 0]].as_f64();
                    grid.iter()
                        .map(|&y| {
                            let z = (y - mu) / s;
                            w * (-0.5 * z * z - HALF_LN_2PI).exp() / s
                        })
                        .collect()
                })
                .collect();
            let model_density = (0..grid.len())
                .map(|j| components.iter().map(|c| c[j]).sum())
                .collect();
            Ok(HistogramTable {
                t,
                edges,
                density,
                grid,
                model_density,
                components,
            })
        })
        .collect()
}

/// Trapezoidal integral of `values` sampled on `grid`.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1]))
        .sum()
}
