//! Multiple-shooting maximum-likelihood training.
//!
//! The training record is cut into every overlapping section of length `T`.
//! Each section is simulated from a zero meta-state, and the negative
//! log-likelihood of steps `k_burn..T` (0-based `k`) is averaged over sections
//! and steps. Gradients flow back through the unrolled recursion.

use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, AdamConfig, AdamState, GradTape, ParamBlocks};
use crate::error::{Error, Result};
use crate::mixture::{head_nll, HeadGrads, HeadScratch};
use crate::model::{MssDims, MssModel, MssNets, NetLayout, Normalization};
use crate::rng::{derive_seed, tag, SimRng};
use crate::scalar::Real;
use crate::simulator::Dataset;

/// How per-chunk gradients are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReductionMode {
    /// Chunks are summed in start order; bit-reproducible for any thread
    /// count.
    #[default]
    Ordered,
    /// Rayon tree reduction; faster with many threads, order may vary.
    Unordered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_z: usize,
    pub n_normals: usize,
    pub n_layers: usize,
    pub n_hidden: usize,
    pub activation: Activation,
    /// Section length `T`.
    pub section_len: usize,
    /// Leading steps of each section excluded from the loss.
    pub burn_in: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub reduction: ReductionMode,
    /// Sections per work unit; fixed so results do not depend on threads.
    pub chunk_size: usize,
    /// Optional wall-clock cap checked after each epoch. Runs that hit it
    /// are not reproducible.
    pub max_wall_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_z: 3,
            n_normals: 30,
            n_layers: 2,
            n_hidden: 64,
            activation: Activation::Tanh,
            section_len: 30,
            burn_in: 10,
            batch_size: 2048,
            learning_rate: 1e-3,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            reduction: ReductionMode::Ordered,
            chunk_size: 512,
            max_wall_secs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_z == 0 || self.n_normals == 0 {
            return bad("n_z and n_normals must be >= 1");
        }
        if self.n_hidden == 0 && self.n_layers > 0 {
            return bad("n_hidden must be >= 1");
        }
        if self.section_len == 0 || self.burn_in >= self.section_len {
            return bad("need 0 <= burn_in < section_len");
        }
        if self.batch_size == 0 || self.chunk_size == 0 {
            return bad("batch_size and chunk_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        Ok(())
    }

    pub fn layout(&self) -> NetLayout {
        NetLayout {
            hidden: vec![self.n_hidden; self.n_layers],
            activation: self.activation,
            bypass: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-step negative log-likelihood over the epoch's batches.
    pub train_loss: f64,
    /// Mean per-step log-likelihood on the validation sections.
    pub val_log_likelihood: f64,
    pub skipped_batches: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_log_likelihood: Option<f64>,
    pub stopped_early: bool,
    pub n_train_sections: usize,
    pub n_val_sections: usize,
}

impl TrainReport {
    /// Report without timing fields, for reproducibility comparisons.
    pub fn without_timing(&self) -> TrainReport {
        let mut r = self.clone();
        for e in &mut r.epochs {
            e.seconds = 0.0;
        }
        r
    }
}

/// 0-based section start indices `0 ..= N - T`.
pub fn section_starts(n: usize, section_len: usize) -> Result<Vec<usize>> {
    if section_len == 0 || section_len > n {
        return Err(Error::Config(format!(
            "section length {section_len} must be in 1..={n}"
        )));
    }
    Ok((0..=n - section_len).collect())
}

/// A dataset normalized with a model's statistics.
#[derive(Clone, Debug)]
pub struct SectionData<T> {
    u: Array2<T>,
    y: Array2<T>,
    log_scale: T,
}

impl<T: Real> SectionData<T> {
    pub fn new(norm: &Normalization<T>, data: &Dataset) -> Result<Self> {
        if data.n_u() != norm.u_mean.len() || data.n_y() != norm.y_mean.len() {
            return Err(Error::dim("dataset channels", norm.u_mean.len(), data.n_u()));
        }
        Ok(SectionData {
            u: norm.normalize_inputs(data.u.view()),
            y: norm.normalize_outputs(data.y.view()),
            log_scale: norm.log_output_scale(),
        })
    }

    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.nrows() == 0
    }
}

/// Sum of per-step NLLs (normalized units) over one chunk of sections;
/// gradients are added to `grads` when given.
fn chunk_nll<T: Real>(
    model: &MssModel<T>,
    data: &SectionData<T>,
    starts: &[usize],
    section_len: usize,
    burn_in: usize,
    mut grads: Option<&mut MssNets<T>>,
) -> Result<T> {
    let dims = model.dims();
    let nets = model.nets();
    let (b, nz, ny) = (starts.len(), dims.n_z, dims.n_y);
    let want_grad = grads.is_some();
    let mut z = Array2::<T>::zeros((b, nz));
    let mut xi = Array2::<T>::zeros((b, dims.xi_dim()));
    let mut y = Array2::<T>::zeros((b, ny));
    let mut tapes: Vec<GradTape<T>> = Vec::with_capacity(section_len);
    let mut direct: Vec<Option<Array2<T>>> = vec![None; section_len];
    let mut scratch = HeadScratch::default();
    let mut total = T::zero();

    for k in 0..section_len {
        xi.slice_mut(s![.., ..nz]).assign(&z);
        for (r, &st) in starts.iter().enumerate() {
            xi.slice_mut(s![r, nz..]).assign(&data.u.row(st + k));
            y.row_mut(r).assign(&data.y.row(st + k));
        }
        if k >= burn_in {
            if want_grad {
                let (logits, t_w) = nets.weight_head.forward_batch(xi.view())?;
                let (means, t_m) = nets.mean_head.forward_batch(xi.view())?;
                let (lsig, t_s) = nets.sigma_head.forward_batch(xi.view())?;
                let mut gl = Array2::zeros(logits.raw_dim());
                let mut gm = Array2::zeros(means.raw_dim());
                let mut gs = Array2::zeros(lsig.raw_dim());
                for r in 0..b {
                    let nll = head_nll(
                        logits.row(r).as_slice().unwrap(),
                        means.row(r).as_slice().unwrap(),
                        lsig.row(r).as_slice().unwrap(),
                        y.row(r).as_slice().unwrap(),
                        &mut scratch,
                        Some(HeadGrads {
                            logits: gl.row_mut(r).into_slice().unwrap(),
                            means: gm.row_mut(r).into_slice().unwrap(),
                            log_sigmas: gs.row_mut(r).into_slice().unwrap(),
                        }),
                    );
                    if !nll.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            start: starts[r],
                            step: k,
                        });
                    }
                    total += nll;
                }
                let g = grads.as_deref_mut().unwrap();
                let mut dxi = nets.weight_head.backward_into(&t_w, gl.view(), &mut g.weight_head)?;
                dxi += &nets.mean_head.backward_into(&t_m, gm.view(), &mut g.mean_head)?;
                dxi += &nets.sigma_head.backward_into(&t_s, gs.view(), &mut g.sigma_head)?;
                direct[k] = Some(dxi);
            } else {
                let heads = model.heads_batch(xi.view())?;
                for r in 0..b {
                    let nll = head_nll(
                        heads.logits.row(r).as_slice().unwrap(),
                        heads.means.row(r).as_slice().unwrap(),
                        heads.log_sigmas.row(r).as_slice().unwrap(),
                        y.row(r).as_slice().unwrap(),
                        &mut scratch,
                        None,
                    );
                    if !nll.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            start: starts[r],
                            step: k,
                        });
                    }
                    total += nll;
                }
            }
        }
        if k + 1 < section_len {
            if want_grad {
                let (next, tape) = nets.transition.forward_batch(xi.view())?;
                tapes.push(tape);
                z = next;
            } else {
                z = nets.transition.predict_batch(xi.view())?;
            }
        }
    }

    if let Some(g) = grads {
        // Reverse sweep: dL/dz_k = direct head term + transition adjoint.
        let mut dz_next: Option<Array2<T>> = None;
        for k in (0..section_len).rev() {
            let mut dxi = direct[k].take();
            if let Some(dz) = dz_next.take() {
                let from_next = nets.transition.backward_into(&tapes[k], dz.view(), &mut g.transition)?;
                dxi = Some(match dxi {
                    Some(mut d) => {
                        d += &from_next;
                        d
                    }
                    None => from_next,
                });
            }
            if k == 0 {
                break;
            }
            dz_next = dxi.map(|d| d.slice(s![.., ..nz]).to_owned());
        }
    }
    Ok(total)
}

fn check_starts(n: usize, starts: &[usize], section_len: usize, burn_in: usize) -> Result<()> {
    if section_len == 0 || burn_in >= section_len {
        return Err(Error::Config("need 0 <= burn_in < section_len".into()));
    }
    if starts.is_empty() {
        return Err(Error::Config("no sections given".into()));
    }
    if let Some(&bad) = starts.iter().find(|&&t| t + section_len > n) {
        return Err(Error::Config(format!(
            "section starting at {bad} runs past the end of the data (N={n})"
        )));
    }
    Ok(())
}

/// Mean per-step NLL (raw output units) of the given sections and its
/// gradient w.r.t. every model parameter.
pub fn section_nll<T: Real>(
    model: &MssModel<T>,
    data: &SectionData<T>,
    starts: &[usize],
    section_len: usize,
    burn_in: usize,
) -> Result<(T, MssNets<T>)> {
    section_nll_chunked(
        model,
        data,
        starts,
        section_len,
        burn_in,
        starts.len().max(1),
        ReductionMode::Ordered,
    )
}

/// [`section_nll`] evaluated in chunks of `chunk_size` sections, possibly
/// in parallel.
pub fn section_nll_chunked<T: Real>(
    model: &MssModel<T>,
    data: &SectionData<T>,
    starts: &[usize],
    section_len: usize,
    burn_in: usize,
    chunk_size: usize,
    reduction: ReductionMode,
) -> Result<(T, MssNets<T>)> {
    check_starts(data.len(), starts, section_len, burn_in)?;
    let eval = |chunk: &[usize]| -> Result<(T, MssNets<T>)> {
        let mut g = model.nets().zeros_like();
        let total = chunk_nll(model, data, chunk, section_len, burn_in, Some(&mut g))?;
        Ok((total, g))
    };
    let (total, mut grads) = match reduction {
        ReductionMode::Ordered => {
            let parts: Vec<(T, MssNets<T>)> = starts
                .par_chunks(chunk_size)
                .map(eval)
                .collect::<Result<_>>()?;
            let mut it = parts.into_iter();
            let (mut total, mut grads) = it.next().expect("at least one chunk");
            for (t, g) in it {
                total += t;
                grads.scaled_add(T::one(), &g);
            }
            (total, grads)
        }
        ReductionMode::Unordered => starts
            .par_chunks(chunk_size)
            .map(eval)
            .try_reduce_with(|(ta, mut ga), (tb, gb)| {
                ga.scaled_add(T::one(), &gb);
                Ok((ta + tb, ga))
            })
            .expect("at least one chunk")?,
    };
    let count = T::lit((starts.len() * (section_len - burn_in)) as f64);
    let inv = T::one() / count;
    for block in grads.blocks_mut() {
        block.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((total * inv + data.log_scale, grads))
}

/// Mean per-step NLL (raw output units) without gradients.
pub fn section_nll_value<T: Real>(
    model: &MssModel<T>,
    data: &SectionData<T>,
    starts: &[usize],
    section_len: usize,
    burn_in: usize,
    chunk_size: usize,
) -> Result<T> {
    check_starts(data.len(), starts, section_len, burn_in)?;
    let parts: Vec<T> = starts
        .par_chunks(chunk_size.max(1))
        .map(|c| chunk_nll(model, data, c, section_len, burn_in, None))
        .collect::<Result<_>>()?;
    let total = parts.into_iter().fold(T::zero(), |a, b| a + b);
    let count = T::lit((starts.len() * (section_len - burn_in)) as f64);
    Ok(total / count + data.log_scale)
}

/// Mean per-step log-likelihood over every section of `data`.
pub fn validation_log_likelihood<T: Real>(
    model: &MssModel<T>,
    data: &SectionData<T>,
    section_len: usize,
    burn_in: usize,
    chunk_size: usize,
) -> Result<T> {
    let starts = section_starts(data.len(), section_len)?;
    Ok(-section_nll_value(model, data, &starts, section_len, burn_in, chunk_size)?)
}

/// Mean NLL of a single zero-initialized simulation over the whole record
/// (raw output units).
pub fn full_simulation_nll<T: Real>(model: &MssModel<T>, data: &Dataset) -> Result<T> {
    let u = data.u.mapv(T::lit);
    let dists = model.predict_distributions(u.view())?;
    let mut total = T::zero();
    for (t, mix) in dists.iter().enumerate() {
        let y: Vec<T> = data.y.row(t).iter().map(|&v| T::lit(v)).collect();
        total -= mix.log_prob(&y).map_err(|e| e.at_time(t))?;
    }
    Ok(total / T::lit(data.len() as f64))
}

fn check_datasets(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation data must be nonempty".into()));
    }
    if train.n_u() != val.n_u() || train.n_y() != val.n_y() {
        return Err(Error::Config(
            "training and validation data have different channel counts".into(),
        ));
    }
    for (name, d) in [("training", train), ("validation", val)] {
        if d.len() < cfg.section_len {
            return Err(Error::Config(format!(
                "{name} data has {} samples, shorter than section length {}",
                d.len(),
                cfg.section_len
            )));
        }
    }
    Ok(())
}

/// Trains a model; see [`fit_with_progress`].
pub fn fit<T: Real>(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(MssModel<T>, TrainReport)> {
    fit_with_progress(train, val, cfg, |_| {})
}

/// Trains a model with Adam on the multiple-shooting loss, keeping the
/// parameters of the epoch with the best validation log-likelihood.
///
/// `on_epoch` is called after every completed epoch.
pub fn fit_with_progress<T: Real>(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(MssModel<T>, TrainReport)> {
    cfg.validate()?;
    check_datasets(train, val, cfg)?;
    let dims = MssDims {
        n_z: cfg.n_z,
        n_u: train.n_u(),
        n_y: train.n_y(),
        n_normals: cfg.n_normals,
    };
    let norm = Normalization::from_data(train.u.view(), train.y.view());
    let mut init_rng = SimRng::new(derive_seed(cfg.seed, tag::INIT), 0);
    let mut model = MssModel::<T>::init(dims, &cfg.layout(), norm, &mut init_rng)?;
    let train_data = SectionData::new(model.normalization(), train)?;
    let val_data = SectionData::new(model.normalization(), val)?;
    let mut starts = section_starts(train.len(), cfg.section_len)?;
    let mut report = TrainReport {
        config: cfg.clone(),
        epochs: Vec::new(),
        best_epoch: None,
        best_val_log_likelihood: None,
        stopped_early: false,
        n_train_sections: starts.len(),
        n_val_sections: val.len() + 1 - cfg.section_len,
    };
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(cfg.learning_rate), model.nets());
    let mut best_nets: Option<MssNets<T>> = None;
    let started = Instant::now();

    for epoch in 0..cfg.max_epochs {
        let epoch_start = Instant::now();
        let mut shuffle_rng = SimRng::new(derive_seed(cfg.seed, tag::SHUFFLE), epoch as u64);
        starts.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut counted, mut skipped) = (0.0, 0usize, 0usize);
        for batch in starts.chunks(cfg.batch_size) {
            let step = section_nll_chunked(
                &model,
                &train_data,
                batch,
                cfg.section_len,
                cfg.burn_in,
                cfg.chunk_size,
                cfg.reduction,
            )
            .and_then(|(loss, grads)| {
                adam.step(model.nets_mut(), &grads)?;
                Ok(loss)
            });
            match step {
                Ok(loss) => {
                    loss_sum += loss.as_f64() * batch.len() as f64;
                    counted += batch.len();
                }
                Err(e) if e.is_numerical() => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if counted == 0 {
            return Err(Error::TrainingDiverged { epoch });
        }
        let val_ll = match validation_log_likelihood(
            &model,
            &val_data,
            cfg.section_len,
            cfg.burn_in,
            cfg.chunk_size,
        ) {
            Ok(v) => v.as_f64(),
            Err(e) if e.is_numerical() => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / counted as f64,
            val_log_likelihood: val_ll,
            skipped_batches: skipped,
            seconds: epoch_start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        report.epochs.push(record);
        if report.best_val_log_likelihood.is_none_or(|b| val_ll > b) {
            report.best_val_log_likelihood = Some(val_ll);
            report.best_epoch = Some(epoch);
            best_nets = Some(model.nets().clone());
        }
        if let Some(best) = report.best_epoch {
            if epoch - best >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
        if cfg
            .max_wall_secs
            .is_some_and(|cap| started.elapsed().as_secs_f64() >= cap)
        {
            break;
        }
    }
    if let Some(best) = best_nets {
        *model.nets_mut() = best;
    }
    Ok((model, report))
}
