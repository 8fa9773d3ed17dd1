//! Supervised training on paired noisy/clean sequences: random window
//! sampling, Adam with exponential learning-rate decay, and per-epoch
//! evaluation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Normalization, Pair, SequenceNorm};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_reports, evaluate, MetricsReport};
use crate::model::{second_difference, Checkpoint, LossKind, SmoothNet, SmoothNetConfig, TrainMeta};
use crate::nn::{adam_step, lr_at_epoch, AdamState, LrSchedule};
use crate::numerics::{Matrix, RngState};
use crate::windowing::smooth_with_checkpoint;

fn default_epochs() -> usize {
    70
}
fn default_batch() -> usize {
    128
}
fn default_eval_every() -> usize {
    1
}
fn default_clip() -> Option<f64> {
    Some(1.0)
}
fn default_max_steps() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: SmoothNetConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Windows per step; every window carries all channels.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub lr: LrSchedule,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: LossKind,
    /// Evaluate on the test split every this many epochs; 0 disables it.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Global gradient-norm bound; `null` turns clipping off.
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps_per_epoch: usize,
    #[serde(default)]
    pub normalization: Normalization,
}

impl TrainConfig {
    pub fn new(model: SmoothNetConfig) -> Self {
        Self {
            model,
            epochs: default_epochs(),
            batch_size: default_batch(),
            lr: LrSchedule::default(),
            seed: 0,
            loss: LossKind::default(),
            eval_every: default_eval_every(),
            grad_clip: default_clip(),
            max_steps_per_epoch: default_max_steps(),
            normalization: Normalization::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.lr.validate()?;
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.max_steps_per_epoch == 0 {
            return Err(Error::config("max_steps_per_epoch must be at least 1"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// One training batch: noisy and clean windows side by side as columns, and
/// the clean second differences.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub noisy: Matrix,
    pub clean: Matrix,
    pub accel: Matrix,
}

/// Draws windows uniformly over every `(sequence, start)` position.
pub struct WindowSampler {
    window_t: usize,
    channels: usize,
    noisy: Vec<Matrix>,
    clean: Vec<Matrix>,
    /// Cumulative position counts; `offsets[i]` is the first flat index of
    /// sequence `i`.
    offsets: Vec<usize>,
}

impl WindowSampler {
    /// Sequences shorter than the window are skipped with a warning.
    pub fn new(pairs: &[Pair], window_t: usize, normalization: Normalization) -> Result<Self> {
        let mut s = Self {
            window_t,
            channels: 0,
            noisy: Vec::new(),
            clean: Vec::new(),
            offsets: vec![0],
        };
        for (i, pair) in pairs.iter().enumerate() {
            let l = pair.noisy.len();
            if pair.clean.frames().shape() != pair.noisy.frames().shape() {
                return Err(Error::shape(format!("pair {i}: noisy and clean shapes differ")));
            }
            if l < window_t {
                log::warn!("training sequence {i} has {l} frames, shorter than window {window_t}; skipped");
                continue;
            }
            if s.channels == 0 {
                s.channels = pair.noisy.channels();
            } else if s.channels != pair.noisy.channels() {
                return Err(Error::shape(format!(
                    "pair {i} has {} channels, earlier pairs have {}",
                    pair.noisy.channels(),
                    s.channels
                )));
            }
            let (noisy, clean) = match normalization {
                Normalization::None => (pair.noisy.frames().clone(), pair.clean.frames().clone()),
                Normalization::Sequence => {
                    // Targets use the statistics of the input, as at inference.
                    let norm = SequenceNorm::fit(&pair.noisy);
                    (
                        norm.apply(&pair.noisy)?.frames().clone(),
                        norm.apply(&pair.clean)?.frames().clone(),
                    )
                }
            };
            s.noisy.push(noisy);
            s.clean.push(clean);
            let last = *s.offsets.last().expect("non-empty");
            s.offsets.push(last + l - window_t + 1);
        }
        Ok(s)
    }

    pub fn positions(&self) -> usize {
        *self.offsets.last().expect("non-empty")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(sequence, start)` for a flat position index.
    pub fn locate(&self, flat: usize) -> (usize, usize) {
        let seq = self.offsets.partition_point(|&o| o <= flat) - 1;
        (seq, flat - self.offsets[seq])
    }

    pub fn sample_starts(&self, rng: &mut RngState, n: usize) -> Result<Vec<(usize, usize)>> {
        let total = self.positions();
        if total == 0 {
            return Err(Error::config("no training sequence is as long as the window"));
        }
        Ok((0..n).map(|_| self.locate(rng.index(total))).collect())
    }

    pub fn batch(&self, starts: &[(usize, usize)]) -> Result<TrainBatch> {
        let (t, c) = (self.window_t, self.channels);
        let cols = starts.len() * c;
        let mut noisy = Matrix::zeros(t, cols);
        let mut clean = Matrix::zeros(t, cols);
        for i in 0..t {
            let (nr, cr) = (noisy.row_mut(i), clean.row_mut(i));
            for (w, &(seq, start)) in starts.iter().enumerate() {
                nr[w * c..(w + 1) * c].copy_from_slice(self.noisy[seq].row(start + i));
            }
            for (w, &(seq, start)) in starts.iter().enumerate() {
                cr[w * c..(w + 1) * c].copy_from_slice(self.clean[seq].row(start + i));
            }
        }
        let accel = second_difference(&clean)?;
        Ok(TrainBatch { noisy, clean, accel })
    }

    pub fn sample(&self, rng: &mut RngState, n: usize) -> Result<TrainBatch> {
        let starts = self.sample_starts(rng, n)?;
        self.batch(&starts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    /// Loss on a fixed probe batch after the epoch.
    pub probe_loss: f64,
    pub mpjpe: Option<f64>,
    pub accel: Option<f64>,
    pub lr: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// `epoch,loss,mpjpe,accel,lr`; missing evaluations are left blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,mpjpe,accel,lr\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch,
                r.loss,
                opt(r.mpjpe),
                opt(r.accel),
                r.lr
            ));
        }
        out
    }

    pub fn total_wall_time_s(&self) -> f64 {
        self.epochs.iter().map(|r| r.wall_time_s).sum()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Steps per epoch: every window position once on average, capped.
pub fn steps_per_epoch(positions: usize, batch_size: usize, cap: usize) -> usize {
    positions.div_ceil(batch_size).clamp(1, cap)
}

const PROBE_WINDOWS: usize = 8;

pub fn train(config: &TrainConfig, train_set: &[Pair], test_set: &[Pair]) -> Result<TrainOutcome> {
    train_with_progress(config, train_set, test_set, |_| {})
}

/// Like [`train`], calling `progress` after every epoch.
pub fn train_with_progress(
    config: &TrainConfig,
    train_set: &[Pair],
    test_set: &[Pair],
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let sampler = WindowSampler::new(train_set, config.model.window_t, config.normalization)?;
    if sampler.positions() == 0 {
        return Err(Error::config("no training sequence is as long as the window"));
    }
    let mut init_rng = RngState::derived(config.seed, 1);
    let mut rng = RngState::derived(config.seed, 2);
    let mut probe_rng = RngState::derived(config.seed, 3);
    let probe = sampler.sample(&mut probe_rng, PROBE_WINDOWS)?;

    let mut model = SmoothNet::new(config.model.clone(), &mut init_rng)?;
    let mut params = model.weights.flatten();
    let mut adam = AdamState::new(params.len());
    let steps = steps_per_epoch(sampler.positions(), config.batch_size, config.max_steps_per_epoch);
    let meta = |epochs: usize, final_loss: Option<f64>| TrainMeta {
        epochs,
        seed: config.seed,
        final_loss,
        normalization: config.normalization,
    };
    let mut last_good = Checkpoint::new(model.clone(), meta(0, None));
    let mut log = TrainLog::default();
    log::info!(
        "training {} parameters, {} positions, {steps} steps/epoch",
        params.len(),
        sampler.positions()
    );

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = lr_at_epoch(&config.lr, epoch);
        let mut loss_sum = 0.0;
        for step in 0..steps {
            let batch = sampler.sample(&mut rng, config.batch_size)?;
            let diverged = |message: String, last_good: &Checkpoint| Error::Diverged {
                epoch,
                step,
                message,
                last_good: Box::new(last_good.clone()),
            };
            let (loss, grads) = model.loss_and_grads(&batch.noisy, &batch.clean, &batch.accel, config.loss)?;
            if !loss.total.is_finite() {
                return Err(diverged(format!("loss is {}", loss.total), &last_good));
            }
            let mut g = grads.flatten();
            if let Some(clip) = config.grad_clip {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > clip {
                    let f = clip / norm;
                    g.iter_mut().for_each(|v| *v *= f);
                }
            }
            if let Err(e) = adam_step(&mut params, &g, &mut adam, lr) {
                return Err(diverged(e.to_string(), &last_good));
            }
            model.weights.load_flat(&params)?;
            loss_sum += loss.total;
        }
        let epoch_loss = loss_sum / steps as f64;
        let (probe_loss, _) = model.loss_and_grads(&probe.noisy, &probe.clean, &probe.accel, config.loss)?;
        if !model.weights.is_finite() || !probe_loss.total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: steps,
                message: "weights became non-finite".into(),
                last_good: Box::new(last_good),
            });
        }
        last_good = Checkpoint::new(model.clone(), meta(epoch + 1, Some(epoch_loss)));

        let due = config.eval_every > 0 && ((epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs);
        let (mpjpe, accel) = if due && !test_set.is_empty() {
            let r = evaluate_checkpoint(&last_good, test_set)?;
            (Some(r.mpjpe), Some(r.accel))
        } else {
            (None, None)
        };
        let record = EpochRecord {
            epoch,
            loss: epoch_loss,
            probe_loss: probe_loss.total,
            mpjpe,
            accel,
            lr,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {epoch_loss:.6} lr {lr:.6} ({:.1}s)",
            record.wall_time_s
        );
        progress(&record);
        log.epochs.push(record);
    }
    Ok(TrainOutcome {
        checkpoint: last_good,
        log,
    })
}

/// Smooths every noisy test sequence with step 1 and averages the
/// per-sequence reports against the clean sequences.
pub fn evaluate_checkpoint(ck: &Checkpoint, test_set: &[Pair]) -> Result<MetricsReport> {
    let reports = test_set
        .iter()
        .map(|p| {
            let out = smooth_with_checkpoint(ck, &p.noisy, 1)?;
            evaluate(&out, &p.clean)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_reports(&reports)
}

/// Metrics of the unsmoothed noisy input, for comparison.
pub fn evaluate_input(test_set: &[Pair]) -> Result<MetricsReport> {
    let reports = test_set
        .iter()
        .map(|p| evaluate(&p.noisy, &p.clean))
        .collect::<Result<Vec<_>>>()?;
    aggregate_reports(&reports)
}
