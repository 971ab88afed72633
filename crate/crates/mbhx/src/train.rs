//! SGD-with-momentum training, SAD/MSE evaluation, and the 4-model
//! encoder-sharing x perceptual-loss ablation harness.
//!
//! The update rule, applied per parameter tensor:
//! `v ← momentum · v − lr · (g + weight_decay · θ); θ ← θ + v`.
//!
//! Metrics: SAD is the sum of absolute differences over every pixel (and
//! channel), accumulated over the whole split; MSE is the mean of squared
//! differences over all elements of the split. Report tables print SAD
//! scaled by 10^-3 and MSE by 10^3, matching the columns
//! `SAD(x10^3)` / `MSE(x10^-3)`.

use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::io::Manifest;
use crate::losses::{total_loss, FeatureExtractor, LossTerms, LossWeights};
use crate::network::{forward, init_weights, ModelConfig, NetworkWeights};
use crate::synth::{load_dataset_split, LoadedSample, Split};
use crate::tensor::Tensor;

/// Training hyperparameters; defaults are the published recipe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Periodic checkpoint interval, in epochs.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3.5e-3,
            momentum: 0.9,
            weight_decay: 4e-5,
            epochs: 80,
            batch_size: 4,
            seed: 0,
            checkpoint_every: 80,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// One momentum step over parallel parameter/gradient/velocity lists;
/// returns the updated parameters and velocities. A NaN anywhere in the
/// gradients aborts the step before any state changes.
pub fn sgd_step(
    params: &[Tensor],
    grads: &[Tensor],
    velocity: &[Tensor],
    config: &TrainConfig,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Contract(format!(
            "sgd_step length mismatch: {} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(velocity) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::Contract(format!(
                "sgd_step shape mismatch: param {:?}, grad {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        if g.has_nan() {
            return Err(Error::Numeric(
                "NaN gradient; step aborted with parameters unchanged".into(),
            ));
        }
    }

    let mut new_params = Vec::with_capacity(params.len());
    let mut new_velocity = Vec::with_capacity(params.len());
    for ((p, g), v) in params.iter().zip(grads).zip(velocity) {
        let mut vel = Vec::with_capacity(p.numel());
        let mut out = Vec::with_capacity(p.numel());
        for ((&pv, &gv), &vv) in p.data().iter().zip(g.data()).zip(v.data()) {
            let nv = config.momentum * vv - config.learning_rate * (gv + config.weight_decay * pv);
            vel.push(nv);
            out.push(pv + nv);
        }
        new_velocity.push(Tensor::from_op(p.shape().to_vec(), vel));
        new_params.push(Tensor::from_op(p.shape().to_vec(), out));
    }
    Ok((new_params, new_velocity))
}

/// One line of the training log (serialized as JSON lines).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(rename = "L_o")]
    pub overall: f64,
    #[serde(rename = "L_alpha")]
    pub alpha: f64,
    #[serde(rename = "L_f")]
    pub foreground: f64,
    pub l_ab_a: f64,
    pub l_c_a: f64,
    pub l_p_a: f64,
    pub l_ab_f: f64,
    pub l_p_f: f64,
    #[serde(rename = "val_alpha_SAD")]
    pub val_alpha_sad: f64,
    #[serde(rename = "val_alpha_MSE")]
    pub val_alpha_mse: f64,
}

pub struct TrainOutcome {
    pub final_weights: NetworkWeights,
    pub best_weights: NetworkWeights,
    /// 1-based epoch with the lowest validation alpha SAD.
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

fn mix64(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Batch {
    image: Tensor,
    alpha: Tensor,
    foreground: Tensor,
    background: Tensor,
    len: usize,
}

fn stack_batch(samples: &[LoadedSample], indices: &[usize]) -> Result<Batch> {
    let collect = |f: fn(&LoadedSample) -> &Tensor| -> Result<Tensor> {
        let parts: Vec<Tensor> = indices
            .iter()
            .map(|&i| f(&samples[i]).unstack(0))
            .collect::<Result<_>>()?;
        Tensor::stack(&parts)
    };
    Ok(Batch {
        image: collect(|s| &s.image)?,
        alpha: collect(|s| &s.alpha)?,
        foreground: collect(|s| &s.foreground)?,
        background: collect(|s| &s.background)?,
        len: indices.len(),
    })
}

/// Sum of absolute differences over all elements.
pub fn sad(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Contract(format!(
            "SAD shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum())
}

/// Sum of squared differences over all elements (callers divide by the
/// element count they are averaging over).
fn sq_sum(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn validation_alpha_metrics(weights: &NetworkWeights, samples: &[LoadedSample]) -> Result<(f64, f64)> {
    let mut sad_total = 0.0;
    let mut sq_total = 0.0;
    let mut elements = 0usize;
    for chunk in samples.chunks(8) {
        let indices: Vec<usize> = (0..chunk.len()).collect();
        let batch = stack_batch(chunk, &indices)?;
        let (pred_alpha, _) = forward(weights, &batch.image)?;
        sad_total += sad(&pred_alpha, &batch.alpha)?;
        sq_total += sq_sum(&pred_alpha, &batch.alpha);
        elements += batch.alpha.numel();
    }
    Ok((sad_total, sq_total / elements as f64))
}

/// Train on the `train` split of `dataset_dir`, monitoring the `val`
/// split (falling back to `train` when the dataset has no validation
/// split). Fully deterministic in `train_config.seed`.
///
/// With `artifacts` set, writes `epoch_NNN.ckpt` every
/// `checkpoint_every` epochs plus `best.ckpt`, `final.ckpt`, and
/// `log.jsonl` into that directory.
pub fn train(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    dataset_dir: &Path,
    artifacts: Option<&Path>,
) -> Result<TrainOutcome> {
    model_config.validate()?;
    train_config.validate()?;
    let manifest = Manifest::load(&dataset_dir.join("manifest.json"))?;
    if manifest.extent != model_config.input_extent {
        return Err(Error::Config(format!(
            "model expects {}x{} inputs but dataset is {}x{}",
            model_config.input_extent.0,
            model_config.input_extent.1,
            manifest.extent.0,
            manifest.extent.1
        )));
    }
    let train_samples = load_dataset_split(dataset_dir, Split::Train)?;
    let val_samples = if manifest.split("val").is_some() {
        load_dataset_split(dataset_dir, Split::Val)?
    } else {
        log::warn!("dataset has no val split; monitoring on the training split");
        train_samples.clone()
    };

    let extractor = FeatureExtractor::from_seed(mix64(train_config.seed, 0xFEA7));
    let loss_weights = LossWeights::default();
    let mut weights = init_weights(model_config, train_config.seed)?;
    let mut velocity: Vec<Tensor> = weights
        .params()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape()))
        .collect();

    if let Some(dir) = artifacts {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let train_config_json = serde_json::to_value(train_config)?;

    let mut log = Vec::with_capacity(train_config.epochs);
    let mut best: Option<(f64, NetworkWeights, usize)> = None;

    for epoch in 1..=train_config.epochs {
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(train_config.seed, epoch as u64));
        order.shuffle(&mut rng);

        let mut sums = LossTerms::default();
        let mut overall_sum = 0.0;
        let mut alpha_sum = 0.0;
        let mut fg_sum = 0.0;
        let mut seen = 0usize;

        for indices in order.chunks(train_config.batch_size) {
            let batch = stack_batch(&train_samples, indices)?;
            let graph = Graph::new();
            let bound = weights.bind(&graph, true);
            let image = graph.constant(batch.image);
            let (pred_alpha, pred_fg) = bound.forward(&image)?;
            let breakdown = total_loss(
                &graph,
                &loss_weights,
                model_config,
                &extractor,
                &pred_alpha,
                &pred_fg,
                &graph.constant(batch.alpha),
                &graph.constant(batch.foreground),
                &graph.constant(batch.background),
            )?;
            breakdown.overall.backward()?;

            let n = batch.len as f64;
            overall_sum += breakdown.overall_value * n;
            alpha_sum += breakdown.alpha_value * n;
            fg_sum += breakdown.fg_value * n;
            sums.l_ab_alpha += breakdown.terms.l_ab_alpha * n;
            sums.l_c_alpha += breakdown.terms.l_c_alpha * n;
            sums.l_p_alpha += breakdown.terms.l_p_alpha * n;
            sums.l_ab_fg += breakdown.terms.l_ab_fg * n;
            sums.l_p_fg += breakdown.terms.l_p_fg * n;
            seen += batch.len;

            let params: Vec<Tensor> = weights.params().iter().map(|(_, t)| t.clone()).collect();
            let grads = bound.grads();
            let (new_params, new_velocity) = sgd_step(&params, &grads, &velocity, train_config)?;
            velocity = new_velocity;
            let named: Vec<(String, Tensor)> = weights
                .param_names()
                .into_iter()
                .zip(new_params)
                .collect();
            weights.set_all(named)?;
        }

        let (val_sad, val_mse) = validation_alpha_metrics(&weights, &val_samples)?;
        let denom = seen as f64;
        log.push(EpochRecord {
            epoch,
            overall: overall_sum / denom,
            alpha: alpha_sum / denom,
            foreground: fg_sum / denom,
            l_ab_a: sums.l_ab_alpha / denom,
            l_c_a: sums.l_c_alpha / denom,
            l_p_a: sums.l_p_alpha / denom,
            l_ab_f: sums.l_ab_fg / denom,
            l_p_f: sums.l_p_fg / denom,
            val_alpha_sad: val_sad,
            val_alpha_mse: val_mse,
        });

        if best.as_ref().is_none_or(|(b, _, _)| val_sad < *b) {
            best = Some((val_sad, weights.clone(), epoch));
        }
        if let Some(dir) = artifacts {
            if epoch % train_config.checkpoint_every == 0 {
                weights.save(
                    &dir.join(format!("epoch_{epoch:03}.ckpt")),
                    &train_config_json,
                    epoch as u32,
                )?;
            }
        }
    }

    let (_, best_weights, best_epoch) = best.expect("at least one epoch ran");
    if let Some(dir) = artifacts {
        weights.save(&dir.join("final.ckpt"), &train_config_json, train_config.epochs as u32)?;
        best_weights.save(&dir.join("best.ckpt"), &train_config_json, best_epoch as u32)?;
        write_log(&dir.join("log.jsonl"), &log)?;
    }
    Ok(TrainOutcome {
        final_weights: weights,
        best_weights,
        best_epoch,
        log,
    })
}

pub fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut out = String::new();
    for record in log {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Raw SAD/MSE for both predictions over one split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    #[serde(rename = "alpha_SAD")]
    pub alpha_sad: f64,
    #[serde(rename = "alpha_MSE")]
    pub alpha_mse: f64,
    #[serde(rename = "fg_SAD")]
    pub fg_sad: f64,
    #[serde(rename = "fg_MSE")]
    pub fg_mse: f64,
}

pub(crate) struct MetricsAccumulator {
    alpha_sad: f64,
    alpha_sq: f64,
    alpha_elements: usize,
    fg_sad: f64,
    fg_sq: f64,
    fg_elements: usize,
}

impl MetricsAccumulator {
    pub(crate) fn new() -> Self {
        MetricsAccumulator {
            alpha_sad: 0.0,
            alpha_sq: 0.0,
            alpha_elements: 0,
            fg_sad: 0.0,
            fg_sq: 0.0,
            fg_elements: 0,
        }
    }

    pub(crate) fn add(
        &mut self,
        pred_alpha: &Tensor,
        gt_alpha: &Tensor,
        pred_fg: &Tensor,
        gt_fg: &Tensor,
    ) -> Result<()> {
        self.alpha_sad += sad(pred_alpha, gt_alpha)?;
        self.alpha_sq += sq_sum(pred_alpha, gt_alpha);
        self.alpha_elements += gt_alpha.numel();
        self.fg_sad += sad(pred_fg, gt_fg)?;
        self.fg_sq += sq_sum(pred_fg, gt_fg);
        self.fg_elements += gt_fg.numel();
        Ok(())
    }

    pub(crate) fn finish(self) -> EvalMetrics {
        EvalMetrics {
            alpha_sad: self.alpha_sad,
            alpha_mse: self.alpha_sq / self.alpha_elements.max(1) as f64,
            fg_sad: self.fg_sad,
            fg_mse: self.fg_sq / self.fg_elements.max(1) as f64,
        }
    }
}

/// Run the model over one split and accumulate SAD/MSE.
pub fn evaluate(weights: &NetworkWeights, dataset_dir: &Path, split: Split) -> Result<EvalMetrics> {
    let manifest = Manifest::load(&dataset_dir.join("manifest.json"))?;
    if manifest.extent != weights.config().input_extent {
        return Err(Error::Config(format!(
            "checkpoint expects {}x{} inputs but dataset is {}x{}",
            weights.config().input_extent.0,
            weights.config().input_extent.1,
            manifest.extent.0,
            manifest.extent.1
        )));
    }
    let samples = load_dataset_split(dataset_dir, split)?;
    let mut acc = MetricsAccumulator::new();
    for chunk in samples.chunks(8) {
        let indices: Vec<usize> = (0..chunk.len()).collect();
        let batch = stack_batch(chunk, &indices)?;
        let (pred_alpha, pred_fg) = forward(weights, &batch.image)?;
        acc.add(&pred_alpha, &batch.alpha, &pred_fg, &batch.foreground)?;
    }
    Ok(acc.finish())
}

/// One report row: ablation axes plus raw metric values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model_id: u8,
    #[serde(rename = "SE")]
    pub share_encoder: bool,
    #[serde(rename = "PL")]
    pub use_perceptual: bool,
    #[serde(flatten)]
    pub metrics: EvalMetrics,
}

/// The ablation report: one row per trained model.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    /// Aligned-text rendering with the evaluation table's layout: one
    /// section per prediction task, SAD scaled by 10^-3, MSE by 10^3.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let yes_no = |b: bool| if b { "yes" } else { "no" };
        for (title, pick) in [
            ("Alpha prediction", 0usize),
            ("Foreground prediction", 1usize),
        ] {
            let _ = writeln!(out, "{title}");
            let _ = writeln!(
                out,
                "{:<10} {:<4} {:<4} {:>12} {:>12}",
                "Methods", "SE", "PL", "SAD(x10^3)", "MSE(x10^-3)"
            );
            for row in &self.rows {
                let (sad_value, mse_value) = if pick == 0 {
                    (row.metrics.alpha_sad, row.metrics.alpha_mse)
                } else {
                    (row.metrics.fg_sad, row.metrics.fg_mse)
                };
                let _ = writeln!(
                    out,
                    "{:<10} {:<4} {:<4} {:>12.3} {:>12.3}",
                    format!("Model {}", row.model_id),
                    yes_no(row.share_encoder),
                    yes_no(row.use_perceptual),
                    sad_value / 1e3,
                    mse_value * 1e3,
                );
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        Ok(json)
    }

    pub fn from_json(json: &str) -> Result<MetricsReport> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Train and evaluate all four SE x PL models from identical seeds.
/// `template` fixes sizing; each row overrides the two ablation flags.
/// With `artifacts` set, per-model training artifacts land in
/// `model_N/` subdirectories.
pub fn run_ablation(
    template: &ModelConfig,
    train_config: &TrainConfig,
    dataset_dir: &Path,
    artifacts: Option<&Path>,
) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for model_id in 1..=4u8 {
        let grid = ModelConfig::for_model(model_id)?;
        let config = ModelConfig {
            share_encoder: grid.share_encoder,
            use_perceptual: grid.use_perceptual,
            ..*template
        };
        let model_artifacts = artifacts.map(|d| d.join(format!("model_{model_id}")));
        let outcome = train(&config, train_config, dataset_dir, model_artifacts.as_deref())?;
        let metrics = evaluate(&outcome.final_weights, dataset_dir, Split::Test)?;
        report.rows.push(MetricsRow {
            model_id,
            share_encoder: config.share_encoder,
            use_perceptual: config.use_perceptual,
            metrics,
        });
    }
    Ok(report)
}
