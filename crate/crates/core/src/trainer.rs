//! Adam training loop with batch gradient averaging, global-norm clipping,
//! per-epoch checkpoints and best-dev selection.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::metrics::{hint_f1, HintScores};
use crate::model::{LossValues, Model, ModelSpec};
use crate::nn::{checkpoint, Gradients, ParamStore, Tape};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const REPORT_FILE: &str = "train_report.json";
pub const CONFIG_FILE: &str = "config.json";
pub const BEST_LABEL: &str = "best";

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>, lr: f64) -> Self {
        let shapes: Vec<_> = store.iter().map(|(_, p)| p.value.shape()).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Parameters without a gradient are left alone.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = S::of(self.lr / c1);
        let (b1s, b2s) = (S::of(b1), S::of(b2));
        let (one_b1, one_b2) = (S::of(1.0 - b1), S::of(1.0 - b2));
        let inv_c2 = S::of(1.0 / c2);
        let eps = S::of(self.eps);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let k = id.index();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let p = store.value_mut(id).data_mut();
            for (((pi, mi), vi), &gi) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *mi = b1s * *mi + one_b1 * gi;
                *vi = b2s * *vi + one_b2 * gi * gi;
                *pi = *pi - step * *mi / ((*vi * inv_c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Sample-mean losses over the epoch's training steps.
    pub train: LossValues,
    pub dev: Option<LossValues>,
    pub dev_hint: Option<HintScores>,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: Vec<EpochReport>,
    /// Batch-mean losses of every optimizer step.
    pub steps: Vec<LossValues>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where checkpoints, the config snapshot and the report go.
    pub run_dir: Option<PathBuf>,
    /// Skip the dev pass (no best-dev selection; the last epoch is kept).
    pub skip_dev: bool,
}

/// Mean of the per-sample loss components.
fn mean_losses(vals: &[LossValues]) -> LossValues {
    let n = vals.len().max(1) as f64;
    let mut m = LossValues::default();
    for v in vals {
        m.total += v.total;
        m.ques += v.ques;
        m.vh += v.vh;
        m.pos += v.pos;
        m.ans += v.ans;
    }
    m.total /= n;
    m.ques /= n;
    m.vh /= n;
    m.pos /= n;
    m.ans /= n;
    m
}

/// Optimizer state bound to one model.
#[derive(Clone, Debug)]
pub struct Trainer<S> {
    pub adam: Adam<S>,
    pub clip_norm: f64,
    /// Dropout masks.
    rng: ChaCha8Rng,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(model: &Model<S>) -> Self {
        Trainer {
            adam: Adam::new(&model.store, model.config().learning_rate),
            clip_norm: model.config().clip_norm,
            rng: ChaCha8Rng::seed_from_u64(model.config().seed ^ 0xD20F_0000),
        }
    }

    /// Forward/backward on every sample, averages gradients, clips and steps.
    /// Nothing is applied when any loss or gradient is non-finite.
    pub fn step(&mut self, model: &mut Model<S>, batch: &[&Sample]) -> Result<LossValues> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let mut grads = Gradients::empty(model.store.len());
        let mut vals = Vec::with_capacity(batch.len());
        for s in batch {
            let mut tape = Tape::new(&model.store);
            let lv = model.training_losses(&mut tape, s, &mut self.rng)?;
            let v = LossValues::read(&tape, &lv);
            if let Some(name) = v.non_finite() {
                return Err(Error::NonFinite(format!("{name} on sample {}", s.id)));
            }
            grads.accumulate(&tape.backward(lv.total));
            vals.push(v);
        }
        grads.scale(S::of(1.0 / batch.len() as f64));
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }
        let norm = grads.global_norm().as_f64();
        if self.clip_norm > 0.0 && norm > self.clip_norm {
            grads.scale(S::of(self.clip_norm / norm));
        }
        self.adam.step(&mut model.store, &grads);
        Ok(mean_losses(&vals))
    }
}

/// Teacher-forced losses averaged over `samples` and hint scores of the
/// predicted masks (when the model has a hint head).
pub fn evaluate_losses<S: Scalar>(model: &Model<S>, samples: &[Sample]) -> Result<(LossValues, Option<HintScores>)> {
    let mut vals = Vec::with_capacity(samples.len());
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for s in samples {
        let mut tape = Tape::new(&model.store);
        let (lv, enc) = model.losses_detailed(&mut tape, s)?;
        vals.push(LossValues::read(&tape, &lv));
        if let Some((_, m)) = model.predicted_mask(&tape, &enc) {
            pred.push(m);
            gold.push(s.hint_mask());
        }
    }
    let hints = if pred.is_empty() { None } else { Some(hint_f1(&pred, &gold)?) };
    Ok((mean_losses(&vals), hints))
}

/// Seeded sample order for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    idx.shuffle(&mut rng);
    idx
}

fn checkpoint_meta(spec: &ModelSpec, epoch: usize) -> Result<serde_json::Value> {
    Ok(serde_json::json!({ "spec": serde_json::to_value(spec)?, "epoch": epoch }))
}

/// Trains in place for `cfg.epochs` epochs and leaves the best-dev parameters
/// in `model`. A non-finite loss aborts with an error naming the component;
/// checkpoints written before the failure stay on disk.
pub fn train<S: Scalar>(
    model: &mut Model<S>,
    train_set: &[Sample],
    dev_set: &[Sample],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let cfg = model.config().clone();
    if let Some(dir) = &opts.run_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), serde_json::to_vec_pretty(&cfg)?)?;
    }
    let start = Instant::now();
    let mut trainer = Trainer::new(model);
    let mut report = TrainReport {
        seed: cfg.seed,
        ..Default::default()
    };
    let mut best: Option<(f64, usize, ParamStore<S>)> = None;
    let mut since_best = 0;
    let batch = cfg.batch_size.max(1);
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let order = epoch_order(train_set.len(), cfg.seed, epoch);
        let mut vals = Vec::new();
        for chunk in order.chunks(batch) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let v = trainer.step(model, &samples)?;
            report.steps.push(v);
            vals.extend(std::iter::repeat_n(v, samples.len()));
        }
        let train_loss = mean_losses(&vals);
        let (dev, dev_hint) = if opts.skip_dev || dev_set.is_empty() {
            (None, None)
        } else {
            let (d, h) = evaluate_losses(model, dev_set)?;
            (Some(d), h)
        };
        let score = dev.map_or(train_loss.total, |d| d.total);
        log::info!(
            "epoch {epoch}: train L={:.4} L_ques={:.4}{}",
            train_loss.total,
            train_loss.ques,
            dev.map_or(String::new(), |d| format!(" dev L={:.4}", d.total))
        );
        report.epochs.push(EpochReport {
            epoch,
            train: train_loss,
            dev,
            dev_hint,
            wall_secs: t0.elapsed().as_secs_f64(),
        });
        if let Some(dir) = &opts.run_dir {
            let meta = checkpoint_meta(&model.spec, epoch)?;
            checkpoint::save(&checkpoint::checkpoint_dir(dir, &format!("epoch-{epoch:03}")), &model.store, meta)?;
        }
        // Without dev data every epoch counts as an improvement, so the last one is kept.
        let improved = dev.is_none() || best.as_ref().is_none_or(|(b, _, _)| score < *b);
        if improved {
            best = Some((score, epoch, model.store.clone()));
            since_best = 0;
            if let Some(dir) = &opts.run_dir {
                let meta = checkpoint_meta(&model.spec, epoch)?;
                checkpoint::save(&checkpoint::checkpoint_dir(dir, BEST_LABEL), &model.store, meta)?;
            }
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                log::info!("no dev improvement for {since_best} epochs, stopping");
                break;
            }
        }
    }
    if let Some((_, epoch, store)) = best {
        report.best_epoch = epoch;
        model.store = store;
    }
    report.wall_secs = start.elapsed().as_secs_f64();
    if let Some(dir) = &opts.run_dir {
        fs::write(dir.join(REPORT_FILE), serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(report)
}

impl<S: Scalar> Model<S> {
    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(dir, &self.store, checkpoint_meta(&self.spec, 0)?)
    }

    /// Rebuilds the architecture from the stored spec and restores the weights.
    pub fn load(dir: &Path) -> Result<Self> {
        let (store, meta) = checkpoint::load::<S>(dir)?;
        let spec: ModelSpec = serde_json::from_value(
            meta.get("spec")
                .cloned()
                .ok_or_else(|| Error::Data(format!("checkpoint {} has no model spec", dir.display())))?,
        )?;
        let mut model = Model::new(spec)?;
        checkpoint::restore_into(&mut model.store, &store)?;
        Ok(model)
    }
}

/// Convenience wrapper for callers that only have a config and data.
pub fn train_new<S: Scalar>(
    spec: ModelSpec,
    train_set: &[Sample],
    dev_set: &[Sample],
    opts: &TrainOptions,
) -> Result<(Model<S>, TrainReport)> {
    let mut model = Model::new(spec)?;
    let report = train(&mut model, train_set, dev_set, opts)?;
    Ok((model, report))
}
