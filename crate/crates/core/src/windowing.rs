//! Sliding-window inference: cut a sequence into `T`-frame windows, refine
//! every window, and average the overlapping predictions back together.

use serde::{Deserialize, Serialize};

use crate::data::{Normalization, PoseSequence, SequenceNorm};
use crate::error::{Error, Result};
use crate::filters::reflect_index;
use crate::model::{Checkpoint, SmoothNet};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub length_l: usize,
    pub window_t: usize,
    pub step_s: usize,
    pub starts: Vec<usize>,
}

impl WindowPlan {
    /// Number of windows covering each frame.
    pub fn coverage(&self) -> Vec<usize> {
        let mut c = vec![0; self.length_l];
        for &s in &self.starts {
            c[s..s + self.window_t].iter_mut().for_each(|v| *v += 1);
        }
        c
    }
}

/// Starts at `0, s, 2s, …`, plus a final window at `L − T` when the stride
/// would otherwise leave trailing frames uncovered.
pub fn plan_windows(length_l: usize, window_t: usize, step_s: usize) -> Result<WindowPlan> {
    if window_t == 0 {
        return Err(Error::config("window must be at least 1 frame"));
    }
    if step_s == 0 || step_s > window_t {
        return Err(Error::config(format!(
            "step {step_s} must lie in [1, window {window_t}]"
        )));
    }
    if length_l < window_t {
        return Err(Error::TooShort(format!(
            "sequence of {length_l} frames is shorter than the {window_t}-frame window"
        )));
    }
    let mut starts: Vec<usize> = (0..=length_l - window_t).step_by(step_s).collect();
    if starts.last().is_none_or(|&s| s + window_t < length_l) {
        starts.push(length_l - window_t);
    }
    Ok(WindowPlan {
        length_l,
        window_t,
        step_s,
        starts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeWeighting {
    /// Plain mean of all predictions covering a frame.
    #[default]
    Uniform,
    /// Predictions near a window's center count more.
    Triangular,
}

fn position_weights(window_t: usize, weighting: MergeWeighting) -> Vec<f64> {
    match weighting {
        MergeWeighting::Uniform => vec![1.0; window_t],
        MergeWeighting::Triangular => (0..window_t)
            .map(|i| (i + 1).min(window_t - i) as f64)
            .collect(),
    }
}

/// Overlap-average of per-window predictions, each `T × C`.
pub fn merge_overlap_average(windows: &[Matrix], plan: &WindowPlan) -> Result<Matrix> {
    merge_overlap(windows, plan, MergeWeighting::Uniform)
}

pub fn merge_overlap(windows: &[Matrix], plan: &WindowPlan, weighting: MergeWeighting) -> Result<Matrix> {
    if windows.len() != plan.starts.len() {
        return Err(Error::shape(format!(
            "{} windows for a plan of {}",
            windows.len(),
            plan.starts.len()
        )));
    }
    let c = windows.first().map_or(0, Matrix::cols);
    let mut merger = Merger::new(plan.length_l, c, plan.window_t, weighting);
    for (w, &start) in windows.iter().zip(&plan.starts) {
        if w.shape() != (plan.window_t, c) {
            return Err(Error::shape(format!(
                "window is {:?}, expected {:?}",
                w.shape(),
                (plan.window_t, c)
            )));
        }
        merger.add(start, w.as_slice(), 0, c);
    }
    Ok(merger.finish())
}

struct Merger {
    acc: Matrix,
    weight: Vec<f64>,
    pos_weight: Vec<f64>,
}

impl Merger {
    fn new(l: usize, c: usize, t: usize, weighting: MergeWeighting) -> Self {
        Self {
            acc: Matrix::zeros(l, c),
            weight: vec![0.0; l],
            pos_weight: position_weights(t, weighting),
        }
    }

    /// Adds one window's prediction, read from a row-major buffer with row
    /// stride `stride` starting at column `offset`.
    fn add(&mut self, start: usize, buf: &[f64], offset: usize, stride: usize) {
        let c = self.acc.cols();
        for (i, &pw) in self.pos_weight.iter().enumerate() {
            let src = &buf[i * stride + offset..i * stride + offset + c];
            for (a, v) in self.acc.row_mut(start + i).iter_mut().zip(src) {
                *a += pw * v;
            }
            self.weight[start + i] += pw;
        }
    }

    fn finish(mut self) -> Matrix {
        for (t, w) in self.weight.iter().enumerate() {
            if *w > 0.0 {
                self.acc.row_mut(t).iter_mut().for_each(|v| *v /= w);
            }
        }
        self.acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothOptions {
    pub step_s: usize,
    pub weighting: MergeWeighting,
    pub normalization: Normalization,
    /// Windows stacked into one forward pass.
    pub batch_windows: usize,
}

impl Default for SmoothOptions {
    fn default() -> Self {
        Self {
            step_s: 1,
            weighting: MergeWeighting::Uniform,
            normalization: Normalization::None,
            batch_windows: 128,
        }
    }
}

/// Refines a whole sequence with the default options and step `step_s`.
pub fn smooth_sequence(model: &SmoothNet, seq: &PoseSequence, step_s: usize) -> Result<PoseSequence> {
    smooth_sequence_with(
        model,
        seq,
        &SmoothOptions {
            step_s,
            ..SmoothOptions::default()
        },
    )
}

/// Like [`smooth_sequence`], repeating the normalization the checkpoint was
/// trained with.
pub fn smooth_with_checkpoint(ck: &Checkpoint, seq: &PoseSequence, step_s: usize) -> Result<PoseSequence> {
    smooth_sequence_with(
        &ck.model,
        seq,
        &SmoothOptions {
            step_s,
            normalization: ck.train_meta.normalization,
            ..SmoothOptions::default()
        },
    )
}

/// Sequences shorter than the window are reflect-padded to it and cropped
/// afterwards.
pub fn smooth_sequence_with(model: &SmoothNet, seq: &PoseSequence, opts: &SmoothOptions) -> Result<PoseSequence> {
    let (l, c) = seq.frames().shape();
    if l < 3 {
        return Err(Error::TooShort(format!("need at least 3 frames, got {l}")));
    }
    let t = model.window();
    let norm = match opts.normalization {
        Normalization::None => None,
        Normalization::Sequence => Some(SequenceNorm::fit(seq)),
    };
    let input = match &norm {
        Some(n) => n.apply(seq)?,
        None => seq.clone(),
    };
    let x = input.frames();
    let (frames, left) = if l < t {
        let left = (t - l) / 2;
        let mut padded = Matrix::zeros(t, c);
        for i in 0..t {
            let src = reflect_index(i as isize - left as isize, l);
            padded.row_mut(i).copy_from_slice(x.row(src));
        }
        (padded, left)
    } else {
        (x.clone(), 0)
    };
    let lp = frames.rows();
    let plan = plan_windows(lp, t, opts.step_s)?;
    let mut merger = Merger::new(lp, c, t, opts.weighting);
    for chunk in plan.starts.chunks(opts.batch_windows.max(1)) {
        let cols = chunk.len() * c;
        let mut batch = Matrix::zeros(t, cols);
        for i in 0..t {
            let row = batch.row_mut(i);
            for (w, &start) in chunk.iter().enumerate() {
                row[w * c..(w + 1) * c].copy_from_slice(frames.row(start + i));
            }
        }
        let out = model.forward(&batch)?;
        for (w, &start) in chunk.iter().enumerate() {
            merger.add(start, out.as_slice(), w * c, cols);
        }
    }
    let merged = merger.finish();
    let cropped = if left > 0 || lp != l {
        merged.row_range(left, left + l)
    } else {
        merged
    };
    let out = seq.with_frames(cropped)?;
    match norm {
        Some(n) => n.invert(&out),
        None => Ok(out),
    }
}
