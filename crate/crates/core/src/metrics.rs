//! Position, aligned-position and acceleration errors, plus worst-frame
//! summaries.

use serde::{Deserialize, Serialize};

use crate::data::PoseSequence;
use crate::error::{Error, Result};
use crate::numerics::{det_small, svd_small, Matrix};

pub const WORST_FRACTION: f64 = 0.01;

fn check_compatible(pred: &PoseSequence, gt: &PoseSequence) -> Result<()> {
    let (a, b) = (pred.meta(), gt.meta());
    if pred.frames().shape() != gt.frames().shape() || a.num_joints != b.num_joints || a.dims != b.dims {
        return Err(Error::shape(format!(
            "prediction is {}x{} ({} joints x {} dims), ground truth is {}x{} ({} joints x {} dims)",
            pred.len(),
            pred.channels(),
            a.num_joints,
            a.dims,
            gt.len(),
            gt.channels(),
            b.num_joints,
            b.dims
        )));
    }
    Ok(())
}

/// Mean over joints of the Euclidean norm of per-joint differences between
/// two flat frames, grouping `dims` consecutive channels into a joint.
fn joint_error(a: &[f64], b: &[f64], dims: usize) -> f64 {
    let joints = a.len() / dims;
    a.chunks_exact(dims)
        .zip(b.chunks_exact(dims))
        .map(|(p, g)| p.iter().zip(g).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .sum::<f64>()
        / joints as f64
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean per-joint position error and its per-frame series.
pub fn mpjpe(pred: &PoseSequence, gt: &PoseSequence) -> Result<(f64, Vec<f64>)> {
    check_compatible(pred, gt)?;
    let dims = pred.meta().dims;
    let per_frame: Vec<f64> = (0..pred.len())
        .map(|t| joint_error(pred.frame(t), gt.frame(t), dims))
        .collect();
    Ok((mean(&per_frame), per_frame))
}

/// Mean per-joint acceleration error over frames `1..L-1`.
pub fn accel_error(pred: &PoseSequence, gt: &PoseSequence) -> Result<(f64, Vec<f64>)> {
    check_compatible(pred, gt)?;
    let l = pred.len();
    if l < 3 {
        return Err(Error::shape(format!("acceleration needs at least 3 frames, got {l}")));
    }
    let dims = pred.meta().dims;
    let c = pred.channels();
    let mut dp = vec![0.0; c];
    let mut dg = vec![0.0; c];
    let per_frame: Vec<f64> = (1..l - 1)
        .map(|t| {
            let (p0, p1, p2) = (pred.frame(t - 1), pred.frame(t), pred.frame(t + 1));
            let (g0, g1, g2) = (gt.frame(t - 1), gt.frame(t), gt.frame(t + 1));
            for j in 0..c {
                dp[j] = p2[j] - 2.0 * p1[j] + p0[j];
                dg[j] = g2[j] - 2.0 * g1[j] + g0[j];
            }
            joint_error(&dp, &dg, dims)
        })
        .collect();
    Ok((mean(&per_frame), per_frame))
}

/// Best similarity transform `s·R·x + t` mapping one point set onto another.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix,
    pub translation: Vec<f64>,
}

impl Similarity {
    /// Applies the transform to the rows of an `N × D` point set.
    pub fn apply(&self, points: &Matrix) -> Matrix {
        let d = points.cols();
        let mut out = Matrix::zeros(points.rows(), d);
        for i in 0..points.rows() {
            let p = points.row(i);
            for r in 0..d {
                let rp: f64 = (0..d).map(|k| self.rotation.get(r, k) * p[k]).sum();
                out.set(i, r, self.scale * rp + self.translation[r]);
            }
        }
        out
    }
}

/// Least-squares similarity (scale, proper rotation, translation) taking
/// `pred` onto `gt`; both are `N × D` with `D ∈ {2, 3}`.
pub fn procrustes(pred: &Matrix, gt: &Matrix) -> Result<Similarity> {
    let (n, d) = pred.shape();
    if gt.shape() != (n, d) {
        return Err(Error::shape(format!(
            "point sets differ: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    if !(d == 2 || d == 3) {
        return Err(Error::Layout(format!("alignment needs 2 or 3 dims, got {d}")));
    }
    if n < d {
        return Err(Error::Layout(format!("alignment needs at least {d} joints, got {n}")));
    }
    let centroid = |m: &Matrix| -> Vec<f64> {
        (0..d).map(|k| (0..n).map(|i| m.get(i, k)).sum::<f64>() / n as f64).collect()
    };
    let (mu1, mu2) = (centroid(pred), centroid(gt));
    let mut var1 = 0.0;
    let mut mag = 0.0;
    let mut k = Matrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            let x1 = pred.get(i, a) - mu1[a];
            var1 += x1 * x1;
            mag += pred.get(i, a).powi(2);
            for b in 0..d {
                let x2 = gt.get(i, b) - mu2[b];
                // k = Σ x2 x1ᵀ
                k.set(b, a, k.get(b, a) + x2 * x1);
            }
        }
    }
    if !(var1 > 1e-24 * (1.0 + mag)) {
        return Err(Error::Alignment("all predicted joints coincide".into()));
    }
    let svd = svd_small(&k)?;
    let uvt = svd.u.matmul(&svd.vt)?;
    let mut z = vec![1.0; d];
    if det_small(&uvt) < 0.0 {
        z[d - 1] = -1.0;
    }
    let mut rotation = Matrix::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            let v: f64 = (0..d).map(|j| svd.u.get(r, j) * z[j] * svd.vt.get(j, c)).sum();
            rotation.set(r, c, v);
        }
    }
    let trace: f64 = (0..d).map(|j| svd.singular[j] * z[j]).sum();
    let scale = trace / var1;
    let translation = (0..d)
        .map(|r| mu2[r] - scale * (0..d).map(|c| rotation.get(r, c) * mu1[c]).sum::<f64>())
        .collect();
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

/// `pred` moved onto `gt` by the best similarity transform.
pub fn procrustes_align(pred: &Matrix, gt: &Matrix) -> Result<Matrix> {
    Ok(procrustes(pred, gt)?.apply(pred))
}

fn frame_points(frame: &[f64], dims: usize) -> Matrix {
    Matrix::from_vec(frame.len() / dims, dims, frame.to_vec()).expect("frame divisible by dims")
}

/// Per-frame aligned errors; `None` marks frames skipped as degenerate.
pub fn pa_mpjpe_per_frame(pred: &PoseSequence, gt: &PoseSequence) -> Result<Vec<Option<f64>>> {
    check_compatible(pred, gt)?;
    let dims = pred.meta().dims;
    let mut out = Vec::with_capacity(pred.len());
    for t in 0..pred.len() {
        let p = frame_points(pred.frame(t), dims);
        let g = frame_points(gt.frame(t), dims);
        match procrustes_align(&p, &g) {
            Ok(aligned) => out.push(Some(joint_error(aligned.as_slice(), g.as_slice(), dims))),
            Err(Error::Alignment(msg)) => {
                log::warn!("frame {t} skipped in aligned error: {msg}");
                out.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Position error after per-frame similarity alignment. Degenerate frames are
/// skipped; the call fails only when every frame is.
pub fn pa_mpjpe(pred: &PoseSequence, gt: &PoseSequence) -> Result<f64> {
    let per = pa_mpjpe_per_frame(pred, gt)?;
    let kept: Vec<f64> = per.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::Alignment("every frame is degenerate".into()));
    }
    Ok(mean(&kept))
}

fn worst_count(len: usize, fraction: f64) -> usize {
    // The small slack keeps e.g. 0.07·100 from rounding up to 8.
    ((fraction * len as f64 - 1e-9).ceil() as usize).clamp(1, len)
}

/// Indices of the `⌈fraction·len⌉` largest values, ties broken by position.
pub fn worst_indices(per_frame: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if per_frame.is_empty() {
        return Err(Error::config("worst-frame selection needs a non-empty series"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let mut idx: Vec<usize> = (0..per_frame.len()).collect();
    idx.sort_by(|&a, &b| per_frame[b].total_cmp(&per_frame[a]).then(a.cmp(&b)));
    idx.truncate(worst_count(per_frame.len(), fraction));
    Ok(idx)
}

/// Mean of the worst `fraction` of `per_frame`, and the mean of `companion`
/// at those frames. Frames whose companion is undefined are dropped from the
/// companion mean; if all selected frames are undefined, each takes the value
/// of its nearest defined frame.
pub fn worst_percent(
    per_frame: &[f64],
    fraction: f64,
    companion: Option<&[Option<f64>]>,
) -> Result<(f64, Option<f64>)> {
    let idx = worst_indices(per_frame, fraction)?;
    let main = idx.iter().map(|&i| per_frame[i]).sum::<f64>() / idx.len() as f64;
    let Some(comp) = companion else {
        return Ok((main, None));
    };
    if comp.len() != per_frame.len() {
        return Err(Error::shape(format!(
            "companion has {} entries, series has {}",
            comp.len(),
            per_frame.len()
        )));
    }
    let defined: Vec<f64> = idx.iter().filter_map(|&i| comp[i]).collect();
    if !defined.is_empty() {
        return Ok((main, Some(mean(&defined))));
    }
    let nearest = |i: usize| -> Option<f64> {
        (1..comp.len()).find_map(|d| {
            let left = i.checked_sub(d).and_then(|j| comp[j]);
            left.or_else(|| comp.get(i + d).copied().flatten())
        })
    };
    let fallback: Vec<f64> = idx.iter().filter_map(|&i| nearest(i)).collect();
    Ok((main, (!fallback.is_empty()).then(|| mean(&fallback))))
}

/// How the acceleration part of the worst-frame summary picks its frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelWorstMode {
    /// Acceleration at the frames with the worst position error.
    #[default]
    Corresponding,
    /// Worst acceleration frames, selected on their own.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub worst_fraction: f64,
    pub accel_worst_mode: AccelWorstMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            worst_fraction: WORST_FRACTION,
            accel_worst_mode: AccelWorstMode::Corresponding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mpjpe: f64,
    /// Absent when joints are not 2D or 3D points.
    pub pa_mpjpe: Option<f64>,
    pub accel: f64,
    pub mpjpe_worst1: f64,
    pub accel_worst1: f64,
    pub per_frame_mpjpe: Vec<f64>,
    pub per_frame_accel: Vec<f64>,
    #[serde(default)]
    pub pa_skipped_frames: usize,
}

impl MetricsReport {
    /// Multiplies every error by `factor`, e.g. 1000 for meters to mm.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|x| x * factor).collect();
        Self {
            mpjpe: self.mpjpe * factor,
            pa_mpjpe: self.pa_mpjpe.map(|v| v * factor),
            accel: self.accel * factor,
            mpjpe_worst1: self.mpjpe_worst1 * factor,
            accel_worst1: self.accel_worst1 * factor,
            per_frame_mpjpe: s(&self.per_frame_mpjpe),
            per_frame_accel: s(&self.per_frame_accel),
            pa_skipped_frames: self.pa_skipped_frames,
        }
    }
}

pub fn evaluate(pred: &PoseSequence, gt: &PoseSequence) -> Result<MetricsReport> {
    evaluate_with(pred, gt, &EvalOptions::default())
}

pub fn evaluate_with(pred: &PoseSequence, gt: &PoseSequence, opts: &EvalOptions) -> Result<MetricsReport> {
    evaluate_many(&[(pred, gt)], opts)
}

/// Metrics pooled over the frames of several sequence pairs, so longer
/// sequences weigh more.
pub fn evaluate_many(pairs: &[(&PoseSequence, &PoseSequence)], opts: &EvalOptions) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::config("nothing to evaluate"));
    }
    let mut per_frame_mpjpe = Vec::new();
    let mut per_frame_accel = Vec::new();
    // Acceleration indexed by frame; undefined at each sequence's two ends.
    let mut accel_by_frame: Vec<Option<f64>> = Vec::new();
    let mut pa_values = Vec::new();
    let mut pa_skipped = 0;
    let with_pa = matches!(pairs[0].0.meta().dims, 2 | 3)
        && pairs[0].0.meta().num_joints >= pairs[0].0.meta().dims;
    for (pred, gt) in pairs {
        let (_, m) = mpjpe(pred, gt)?;
        let (_, a) = accel_error(pred, gt)?;
        accel_by_frame.push(None);
        accel_by_frame.extend(a.iter().map(|v| Some(*v)));
        accel_by_frame.push(None);
        per_frame_mpjpe.extend(m);
        per_frame_accel.extend(a);
        if with_pa {
            for v in pa_mpjpe_per_frame(pred, gt)? {
                match v {
                    Some(v) => pa_values.push(v),
                    None => pa_skipped += 1,
                }
            }
        }
    }
    let pa_mpjpe = if with_pa {
        if pa_values.is_empty() {
            return Err(Error::Alignment("every frame is degenerate".into()));
        }
        Some(mean(&pa_values))
    } else {
        None
    };
    let (mpjpe_worst1, accel_worst1) = match opts.accel_worst_mode {
        AccelWorstMode::Corresponding => {
            let (m, a) = worst_percent(&per_frame_mpjpe, opts.worst_fraction, Some(&accel_by_frame))?;
            (m, a.unwrap_or(0.0))
        }
        AccelWorstMode::Independent => {
            let (m, _) = worst_percent(&per_frame_mpjpe, opts.worst_fraction, None)?;
            let (a, _) = worst_percent(&per_frame_accel, opts.worst_fraction, None)?;
            (m, a)
        }
    };
    Ok(MetricsReport {
        mpjpe: mean(&per_frame_mpjpe),
        pa_mpjpe,
        accel: mean(&per_frame_accel),
        mpjpe_worst1,
        accel_worst1,
        per_frame_mpjpe,
        per_frame_accel,
        pa_skipped_frames: pa_skipped,
    })
}

/// Unweighted mean over per-sequence reports; per-frame series are
/// concatenated.
pub fn aggregate_reports(reports: &[MetricsReport]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::config("no reports to aggregate"));
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let pa_mpjpe = if reports.iter().all(|r| r.pa_mpjpe.is_some()) {
        Some(reports.iter().filter_map(|r| r.pa_mpjpe).sum::<f64>() / n)
    } else {
        None
    };
    Ok(MetricsReport {
        mpjpe: avg(|r| r.mpjpe),
        pa_mpjpe,
        accel: avg(|r| r.accel),
        mpjpe_worst1: avg(|r| r.mpjpe_worst1),
        accel_worst1: avg(|r| r.accel_worst1),
        per_frame_mpjpe: reports.iter().flat_map(|r| r.per_frame_mpjpe.iter().copied()).collect(),
        per_frame_accel: reports.iter().flat_map(|r| r.per_frame_accel.iter().copied()).collect(),
        pa_skipped_frames: reports.iter().map(|r| r.pa_skipped_frames).sum(),
    })
}
