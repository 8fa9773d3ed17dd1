//! Classical low-pass baselines, applied independently per channel.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PoseSequence;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const DEFAULT_D_CUTOFF: f64 = 1.0;

fn default_d_cutoff() -> f64 {
    DEFAULT_D_CUTOFF
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterSpec {
    Gaussian {
        window: usize,
        sigma: f64,
    },
    Savgol {
        window: usize,
        polyorder: usize,
    },
    OneEuro {
        min_cutoff: f64,
        beta: f64,
        #[serde(default = "default_d_cutoff")]
        d_cutoff: f64,
        /// Falls back to the sequence frame rate when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fps: Option<f64>,
    },
    MovingAvg {
        window: usize,
    },
}

impl FilterSpec {
    pub fn gaussian(window: usize, sigma: f64) -> Self {
        FilterSpec::Gaussian { window, sigma }
    }

    pub fn savgol(window: usize, polyorder: usize) -> Self {
        FilterSpec::Savgol { window, polyorder }
    }

    pub fn one_euro(min_cutoff: f64, beta: f64) -> Self {
        FilterSpec::OneEuro {
            min_cutoff,
            beta,
            d_cutoff: DEFAULT_D_CUTOFF,
            fps: None,
        }
    }

    pub fn moving_avg(window: usize) -> Self {
        FilterSpec::MovingAvg { window }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            FilterSpec::Gaussian { .. } => "gaussian",
            FilterSpec::Savgol { .. } => "savgol",
            FilterSpec::OneEuro { .. } => "one_euro",
            FilterSpec::MovingAvg { .. } => "moving_avg",
        }
    }

    /// Short human-readable label, e.g. `gaussian(w=129,sigma=4)`.
    pub fn label(&self) -> String {
        match self {
            FilterSpec::Gaussian { window, sigma } => format!("gaussian(w={window},sigma={sigma})"),
            FilterSpec::Savgol { window, polyorder } => format!("savgol(w={window},p={polyorder})"),
            FilterSpec::OneEuro {
                min_cutoff, beta, ..
            } => format!("one_euro(min_cutoff={min_cutoff},beta={beta})"),
            FilterSpec::MovingAvg { window } => format!("moving_avg(w={window})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FilterSpec::Gaussian { window, sigma } => {
                check_window(window)?;
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::config(format!("sigma must be positive, got {sigma}")));
                }
            }
            FilterSpec::Savgol { window, polyorder } => {
                check_window(window)?;
                if polyorder >= window {
                    return Err(Error::config(format!(
                        "polyorder {polyorder} must be below window {window}"
                    )));
                }
            }
            FilterSpec::OneEuro {
                min_cutoff,
                beta,
                d_cutoff,
                fps,
            } => {
                if !(min_cutoff > 0.0 && min_cutoff.is_finite()) {
                    return Err(Error::config(format!("min_cutoff must be positive, got {min_cutoff}")));
                }
                if !(beta >= 0.0 && beta.is_finite()) {
                    return Err(Error::config(format!("beta must be non-negative, got {beta}")));
                }
                if !(d_cutoff > 0.0 && d_cutoff.is_finite()) {
                    return Err(Error::config(format!("d_cutoff must be positive, got {d_cutoff}")));
                }
                if let Some(f) = fps {
                    if !(f > 0.0 && f.is_finite()) {
                        return Err(Error::config(format!("fps must be positive, got {f}")));
                    }
                }
            }
            FilterSpec::MovingAvg { window } => check_window(window)?,
        }
        Ok(())
    }
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::config(format!("window must be odd and positive, got {window}")));
    }
    Ok(())
}

/// Samples of `exp(-t²/2σ²)` at `t = -r..=r`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64, window: usize) -> Result<Vec<f64>> {
    FilterSpec::gaussian(window, sigma).validate()?;
    let r = (window / 2) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

/// Index into `0..n` after whole-sample mirroring at both ends, repeated as
/// often as needed.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Centered convolution with an odd-length kernel and reflect padding.
pub fn convolve_reflect(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = x.len();
    let r = (kernel.len() / 2) as isize;
    (0..n as isize)
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * x[reflect_index(t + j as isize - r, n)])
                .sum()
        })
        .collect()
}

pub fn apply_gaussian(x: &[f64], window: usize, sigma: f64) -> Result<Vec<f64>> {
    let k = gaussian_kernel(sigma, window)?;
    Ok(convolve_reflect(x, &k))
}

pub fn apply_moving_average(x: &[f64], window: usize) -> Result<Vec<f64>> {
    check_window(window)?;
    let k = vec![1.0 / window as f64; window];
    Ok(convolve_reflect(x, &k))
}

/// Weights `w` such that `Σ w_j x_j` evaluates, at offset `pos` from the
/// window center, the least-squares polynomial of degree `polyorder` fitted to
/// the `window` samples.
fn savgol_weights_at(window: usize, polyorder: usize, pos: f64) -> Result<Vec<f64>> {
    let r = (window / 2) as f64;
    let scale = if r > 0.0 { r } else { 1.0 };
    let p = polyorder + 1;
    let powers = |s: f64| -> Vec<f64> {
        let mut v = Vec::with_capacity(p);
        let mut acc = 1.0;
        for _ in 0..p {
            v.push(acc);
            acc *= s;
        }
        v
    };
    let rows: Vec<Vec<f64>> = (0..window)
        .map(|j| powers((j as f64 - r) / scale))
        .collect();
    // Normal matrix AᵀA on offsets scaled into [-1, 1].
    let mut m = vec![vec![0.0; p + 1]; p];
    for row in &rows {
        for a in 0..p {
            for b in 0..p {
                m[a][b] += row[a] * row[b];
            }
        }
    }
    for (a, e) in powers(pos / scale).into_iter().enumerate() {
        m[a][p] = e;
    }
    let z = gauss_jordan(m)?;
    Ok(rows
        .iter()
        .map(|row| row.iter().zip(&z).map(|(a, b)| a * b).sum())
        .collect())
}

/// Solves the augmented system `[M | b]` with partial pivoting.
fn gauss_jordan(mut m: Vec<Vec<f64>>) -> Result<Vec<f64>> {
    let n = m.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap_or(col);
        if m[piv][col].abs() < 1e-300 {
            return Err(Error::Singular("savgol normal matrix".into()));
        }
        m.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = m[row][col] / m[col][col];
                if f != 0.0 {
                    for k in col..=n {
                        m[row][k] -= f * m[col][k];
                    }
                }
            }
        }
    }
    Ok((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

pub fn savgol_coeffs(window: usize, polyorder: usize) -> Result<Vec<f64>> {
    FilterSpec::savgol(window, polyorder).validate()?;
    savgol_weights_at(window, polyorder, 0.0)
}

/// Interior frames by convolution; the first and last `r` frames evaluate the
/// polynomial fitted to the first and last full window.
pub fn apply_savgol(x: &[f64], window: usize, polyorder: usize) -> Result<Vec<f64>> {
    let coeffs = savgol_coeffs(window, polyorder)?;
    let n = x.len();
    if n < window {
        return Err(Error::config(format!(
            "savgol window {window} exceeds sequence length {n}"
        )));
    }
    let r = window / 2;
    let mut out = vec![0.0; n];
    for t in r..n - r {
        out[t] = coeffs.iter().zip(&x[t - r..=t + r]).map(|(c, v)| c * v).sum();
    }
    for j in 0..r {
        let w = savgol_weights_at(window, polyorder, j as f64 - r as f64)?;
        out[j] = w.iter().zip(&x[..window]).map(|(c, v)| c * v).sum();
        out[n - 1 - j] = w.iter().rev().zip(&x[n - window..]).map(|(c, v)| c * v).sum();
    }
    Ok(out)
}

fn smoothing_factor(cutoff: f64, fps: f64) -> f64 {
    1.0 / (1.0 + fps / (2.0 * PI * cutoff))
}

/// Causal adaptive low-pass. The derivative is taken against the previous
/// output and pre-filtered at `d_cutoff`.
pub fn apply_one_euro(x: &[f64], min_cutoff: f64, beta: f64, d_cutoff: f64, fps: f64) -> Result<Vec<f64>> {
    FilterSpec::OneEuro {
        min_cutoff,
        beta,
        d_cutoff,
        fps: Some(fps),
    }
    .validate()?;
    let mut out = Vec::with_capacity(x.len());
    let Some(&first) = x.first() else {
        return Ok(out);
    };
    out.push(first);
    let a_d = smoothing_factor(d_cutoff, fps);
    let mut prev = first;
    let mut dx_hat = 0.0;
    for &v in &x[1..] {
        let dx = (v - prev) * fps;
        dx_hat = a_d * dx + (1.0 - a_d) * dx_hat;
        let fc = min_cutoff + beta * dx_hat.abs();
        let a = smoothing_factor(fc, fps);
        prev += a * (v - prev);
        out.push(prev);
    }
    Ok(out)
}

/// Filters one channel series.
pub fn filter_series(x: &[f64], spec: &FilterSpec, fps: f64) -> Result<Vec<f64>> {
    spec.validate()?;
    match *spec {
        FilterSpec::Gaussian { window, sigma } => apply_gaussian(x, window, sigma),
        FilterSpec::Savgol { window, polyorder } => apply_savgol(x, window, polyorder),
        FilterSpec::OneEuro {
            min_cutoff,
            beta,
            d_cutoff,
            fps: spec_fps,
        } => apply_one_euro(x, min_cutoff, beta, d_cutoff, spec_fps.unwrap_or(fps)),
        FilterSpec::MovingAvg { window } => apply_moving_average(x, window),
    }
}

/// Applies `spec` to every channel; metadata is preserved.
pub fn apply_filter(seq: &PoseSequence, spec: &FilterSpec) -> Result<PoseSequence> {
    spec.validate()?;
    let (l, c) = seq.frames().shape();
    let fps = seq.fps();
    let filtered: Vec<Vec<f64>> = (0..c)
        .into_par_iter()
        .map(|ch| filter_series(&seq.channel(ch), spec, fps))
        .collect::<Result<_>>()?;
    let mut out = Matrix::zeros(l, c);
    for (ch, col) in filtered.iter().enumerate() {
        for (t, v) in col.iter().enumerate() {
            out.set(t, ch, *v);
        }
    }
    seq.with_frames(out)
}
