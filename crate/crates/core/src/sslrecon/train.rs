//! Dataset preparation, self-supervised training and full-data inference.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::loss::ssl_loss_grad;
use super::model::{unrolled_backward, unrolled_forward, unrolled_forward_tape, SubsetOperator, UnrolledModel};
use super::split::split_masks;
use super::{SensitivitySource, SslConfig};
use crate::coiltools::estimate_sens_lowres;
use crate::config::ReconConfig;
use crate::datamodel::{Image, KSpaceDataset};
use crate::diffkit::{adam_step, AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::nufft::GridPlan;
use crate::phantom::CoilMaps;
use crate::phasecorr::correct_blades;
use crate::rng::stream_rng;
use crate::trajectory::density_comp_masked;
use crate::C64;

/// One dataset ready for training or inference. Samples are divided by
/// `scale`, a power of two near the 99th percentile of the full-data
/// initial image, so the networks see unit-range inputs and rescaling is
/// exact.
#[derive(Clone, Debug)]
pub struct SslInput {
    pub ds: KSpaceDataset,
    pub plan: GridPlan,
    pub maps: CoilMaps,
    /// Normalized samples per coil over the full trajectory.
    pub y: Vec<Vec<C64>>,
    /// Density weights of all acquired samples.
    pub full_weights: Vec<f64>,
    pub scale: f64,
    pub dc_iterations: usize,
}

impl SslInput {
    pub fn full_operator(&self) -> Result<SubsetOperator<'_>> {
        SubsetOperator::new(&self.plan, &self.maps, self.full_weights.clone())
    }

    /// Operator restricted to the samples where `mask` is set.
    pub fn subset_operator(&self, mask: &[bool]) -> Result<SubsetOperator<'_>> {
        let w = density_comp_masked(&self.plan, mask, self.dc_iterations)?;
        SubsetOperator::new(&self.plan, &self.maps, w.weights)
    }
}

fn percentile(mut values: Vec<f64>, q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let i = ((values.len() - 1) as f64 * q).round() as usize;
    values[i]
}

/// Phase correction (if enabled), gridding plan, low-resolution coil maps
/// and intensity normalization.
pub fn prepare_input(ds: &KSpaceDataset, cfg: &ReconConfig) -> Result<SslInput> {
    cfg.validate()?;
    if cfg.ssl.sensitivity == SensitivitySource::ClassicalPlusRefine {
        return Err(Error::Config("sensitivity refinement is not available; use `classical`".into()));
    }
    let ds = if cfg.phase_correction {
        correct_blades(ds)?.dataset
    } else {
        ds.clone()
    };
    let traj = ds.trajectory()?;
    let plan = GridPlan::with_config(traj.coords(), traj.matrix(), &cfg.nufft)?;
    let half_width = 0.5 * ds.lines() as f64 / traj.matrix() as f64;
    let maps = estimate_sens_lowres(&ds, &plan, cfg.sens_radius.unwrap_or(0.5 * half_width))?;
    let full_weights = density_comp_masked(&plan, &ds.mask_flat(), cfg.dc_iterations)?.weights;
    let mut y = ds.coil_vectors();
    let x0 = SubsetOperator::new(&plan, &maps, full_weights.clone())?.adjoint_data(&y)?;
    let p99 = percentile(x0.iter().map(|v| v.norm()).collect(), 0.99);
    let scale = if p99 > 0.0 && p99.is_finite() {
        p99.log2().round().exp2()
    } else {
        1.0
    };
    y.iter_mut().flatten().for_each(|v| *v /= scale);
    Ok(SslInput {
        ds,
        plan,
        maps,
        y,
        full_weights,
        scale,
        dc_iterations: cfg.dc_iterations,
    })
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub sample: usize,
    pub ratio: f64,
    pub loss: f64,
    pub wall_time_s: f64,
}

pub fn write_records(records: &[TrainRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loss on Λ₂ of the reconstruction from Λ₁ and its parameter gradient.
pub fn train_step(model: &UnrolledModel, input: &SslInput, ratio: f64, seed: u64, alpha: f64) -> Result<(f64, Vec<f64>)> {
    let masks = split_masks(input.ds.mask(), ratio, seed)?;
    let op1 = input.subset_operator(&masks.lambda1_flat())?;
    let op2 = input.subset_operator(&masks.lambda2_flat())?;
    let (x_hat, tape) = unrolled_forward_tape(model, &op1, &input.y)?;
    let (loss, xbar) = ssl_loss_grad(&x_hat, &op2, &input.y, alpha)?;
    let mut grads = model.params.zeros_like();
    unrolled_backward(model, &op1, &tape, &xbar, &mut grads)?;
    Ok((loss, grads))
}

/// Epoch loop over `inputs` in order, one ADAM step per sample with a
/// freshly drawn split ratio and split seed. Stops early once the
/// epoch-mean loss has not improved for `patience` epochs (0 disables).
pub fn train(inputs: &[SslInput], cfg: &SslConfig) -> Result<(UnrolledModel, Vec<TrainRecord>)> {
    train_from(UnrolledModel::new(cfg)?, inputs, cfg)
}

pub fn train_from(mut model: UnrolledModel, inputs: &[SslInput], cfg: &SslConfig) -> Result<(UnrolledModel, Vec<TrainRecord>)> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptySelection("no training datasets".into()));
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(model.params.len());
    let mut records = Vec::new();
    let start = Instant::now();
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for (sample, input) in inputs.iter().enumerate() {
            let mut rng = stream_rng(cfg.seed, &[0x7472_6e, epoch as u64, sample as u64]);
            let ratio = cfg.ratio_low + (cfg.ratio_high - cfg.ratio_low) * rng.random::<f64>();
            let seed = rng.next_u64();
            let abort = |reason: String| Error::TrainingAborted { epoch, sample, reason };
            let (loss, grads) = train_step(&model, input, ratio, seed, cfg.loss_alpha).map_err(|e| abort(e.to_string()))?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(abort(format!("non-finite loss {loss} at split ratio {ratio:.3}")));
            }
            adam_step(&mut model.params.data, &grads, &mut state, &adam).map_err(|e| abort(e.to_string()))?;
            total += loss;
            records.push(TrainRecord {
                epoch,
                sample,
                ratio,
                loss,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }
        let mean = total / inputs.len() as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        if mean < best {
            best = mean;
            best_epoch = epoch;
        } else if cfg.patience > 0 && epoch - best_epoch >= cfg.patience {
            log::info!("stopping after epoch {epoch}: no improvement for {} epochs", cfg.patience);
            break;
        }
    }
    Ok((model, records))
}

/// Reconstruction from every acquired sample (no split), in the original
/// intensity units.
pub fn infer(model: &UnrolledModel, input: &SslInput) -> Result<Image> {
    let op = input.full_operator()?;
    let x = unrolled_forward(model, &op, &input.y)?;
    Ok(x.mapv(|v| v * input.scale))
}

/// Mean epoch loss per epoch, in epoch order.
pub fn epoch_means(records: &[TrainRecord]) -> Vec<f64> {
    let epochs = records.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
    let mut sum = vec![0.0; epochs];
    let mut count = vec![0usize; epochs];
    for r in records {
        sum[r.epoch] += r.loss;
        count[r.epoch] += 1;
    }
    sum.iter().zip(&count).map(|(s, &c)| s / c.max(1) as f64).collect()
}
