//! Pose sequences, their JSON/CSV file formats, coordinate normalization, and
//! the seeded generators for clean motion and corrupted copies of it.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Matrix, RngState};

pub const SEQUENCE_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Xy,
    Xyz,
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Pixel,
    Meter,
    Mm,
    #[default]
    Unitless,
}

/// Everything about a sequence except its values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceMeta {
    pub fps: f64,
    pub num_joints: usize,
    pub dims: usize,
    pub layout: Layout,
    pub units: Units,
}

impl SequenceMeta {
    /// One joint per channel, no spatial grouping.
    pub fn generic(channels: usize, fps: f64) -> Self {
        Self {
            fps,
            num_joints: channels,
            dims: 1,
            layout: Layout::Generic,
            units: Units::Unitless,
        }
    }

    pub fn xyz(num_joints: usize, fps: f64, units: Units) -> Self {
        Self {
            fps,
            num_joints,
            dims: 3,
            layout: Layout::Xyz,
            units,
        }
    }

    pub fn xy(num_joints: usize, fps: f64, units: Units) -> Self {
        Self {
            fps,
            num_joints,
            dims: 2,
            layout: Layout::Xy,
            units,
        }
    }

    pub fn channels(&self) -> usize {
        self.num_joints * self.dims
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Validation(format!("fps must be positive, got {}", self.fps)));
        }
        if self.num_joints == 0 || self.dims == 0 {
            return Err(Error::Validation("num_joints and dims must be at least 1".into()));
        }
        let want = match self.layout {
            Layout::Xy => Some(2),
            Layout::Xyz => Some(3),
            Layout::Generic => None,
        };
        if let Some(d) = want {
            if self.dims != d {
                return Err(Error::Layout(format!(
                    "{:?} layout needs dims = {d}, got {}",
                    self.layout, self.dims
                )));
            }
        }
        Ok(())
    }
}

/// `L × C` per-frame channel values plus layout metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    meta: SequenceMeta,
    frames: Matrix,
}

impl PoseSequence {
    pub fn new(meta: SequenceMeta, frames: Matrix) -> Result<Self> {
        meta.validate()?;
        if frames.cols() != meta.channels() {
            return Err(Error::Layout(format!(
                "{} channels per frame, layout implies {} joints x {} dims",
                frames.cols(),
                meta.num_joints,
                meta.dims
            )));
        }
        if let Some(i) = frames.as_slice().iter().position(|v| !v.is_finite()) {
            let c = frames.cols().max(1);
            return Err(Error::Validation(format!(
                "non-finite value at frame {}, channel {}",
                i / c,
                i % c
            )));
        }
        Ok(Self { meta, frames })
    }

    pub fn generic(frames: Matrix, fps: f64) -> Result<Self> {
        let meta = SequenceMeta::generic(frames.cols(), fps);
        Self::new(meta, frames)
    }

    pub fn meta(&self) -> &SequenceMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.cols()
    }

    pub fn fps(&self) -> f64 {
        self.meta.fps
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.frames.col(c)
    }

    /// Same metadata, new values.
    pub fn with_frames(&self, frames: Matrix) -> Result<Self> {
        Self::new(self.meta, frames)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = SequenceDoc {
            format_version: SEQUENCE_FORMAT_VERSION,
            fps: self.meta.fps,
            num_joints: self.meta.num_joints,
            dims: self.meta.dims,
            layout: self.meta.layout,
            units: self.meta.units,
            frames: (0..self.len()).map(|t| self.frame(t).to_vec()).collect(),
        };
        serde_json::to_string(&doc).map_err(|e| Error::Parse {
            context: "sequence".into(),
            message: e.to_string(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SequenceDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
            context: "sequence".into(),
            message: e.to_string(),
        })?;
        if doc.format_version != SEQUENCE_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported sequence format_version {}",
                doc.format_version
            )));
        }
        let meta = SequenceMeta {
            fps: doc.fps,
            num_joints: doc.num_joints,
            dims: doc.dims,
            layout: doc.layout,
            units: doc.units,
        };
        let c = meta.channels();
        let mut data = Vec::with_capacity(doc.frames.len() * c);
        for (t, f) in doc.frames.iter().enumerate() {
            if f.len() != c {
                return Err(Error::Parse {
                    context: "sequence".into(),
                    message: format!("frame {t} has {} values, expected {c}", f.len()),
                });
            }
            data.extend_from_slice(f);
        }
        Self::new(meta, Matrix::from_vec(doc.frames.len(), c, data)?)
    }
}

#[derive(Serialize, Deserialize)]
struct SequenceDoc {
    format_version: u32,
    fps: f64,
    num_joints: usize,
    dims: usize,
    layout: Layout,
    units: Units,
    frames: Vec<Vec<f64>>,
}

pub fn save_sequence(path: impl AsRef<Path>, seq: &PoseSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, seq.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<PoseSequence> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PoseSequence::from_json(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            context: path.display().to_string(),
            message,
        },
        other => other,
    })
}

/// Writes `frame,c0,c1,…` followed by one row per frame. Values use the
/// shortest decimal form that round-trips exactly.
pub fn save_csv(path: impl AsRef<Path>, seq: &PoseSequence) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["frame".to_string()];
    header.extend((0..seq.channels()).map(|c| format!("c{c}")));
    w.write_record(&header).map_err(csv_err)?;
    for t in 0..seq.len() {
        let mut rec = vec![t.to_string()];
        rec.extend(seq.frame(t).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV written by [`save_csv`]; the metadata is supplied by the caller.
pub fn load_csv(path: impl AsRef<Path>, meta: SequenceMeta) -> Result<PoseSequence> {
    let path = path.as_ref();
    let ctx = path.display().to_string();
    let parse_err = |message: String| Error::Parse {
        context: ctx.clone(),
        message,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_err(e.to_string()))?;
    let header = r.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let c = meta.channels();
    let expected: Vec<String> = std::iter::once("frame".to_string())
        .chain((0..c).map(|i| format!("c{i}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(format!(
            "header must be frame,c0..c{}, found {}",
            c.saturating_sub(1),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let frame: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("row {i}: bad frame index '{}'", &rec[0])))?;
        if frame != i {
            return Err(parse_err(format!("row {i}: frame index {frame} out of order")));
        }
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("row {i}, c{j}: bad number '{field}'")))?;
            data.push(v);
        }
        rows += 1;
    }
    PoseSequence::new(meta, Matrix::from_vec(rows, c, data)?)
}

/// Maps pixel coordinates into `[-1, 1]` by the frame width and height.
pub fn normalize_2d(seq: &PoseSequence, width: f64, height: f64) -> Result<PoseSequence> {
    let meta = seq.meta();
    if meta.layout != Layout::Xy || meta.units != Units::Pixel {
        return Err(Error::Layout(format!(
            "normalize_2d needs xy pixel coordinates, got {:?} in {:?}",
            meta.layout, meta.units
        )));
    }
    check_extent(width, height)?;
    let mut frames = seq.frames().clone();
    map_xy(&mut frames, |x| 2.0 * x / width - 1.0, |y| 2.0 * y / height - 1.0);
    let mut meta = *meta;
    meta.units = Units::Unitless;
    PoseSequence::new(meta, frames)
}

/// Inverse of [`normalize_2d`].
pub fn denormalize_2d(seq: &PoseSequence, width: f64, height: f64) -> Result<PoseSequence> {
    let meta = seq.meta();
    if meta.layout != Layout::Xy {
        return Err(Error::Layout(format!(
            "denormalize_2d needs xy coordinates, got {:?}",
            meta.layout
        )));
    }
    check_extent(width, height)?;
    let mut frames = seq.frames().clone();
    map_xy(&mut frames, |x| (x + 1.0) * width / 2.0, |y| (y + 1.0) * height / 2.0);
    let mut meta = *meta;
    meta.units = Units::Pixel;
    PoseSequence::new(meta, frames)
}

fn check_extent(width: f64, height: f64) -> Result<()> {
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::config(format!(
            "image extent must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

fn map_xy(frames: &mut Matrix, fx: impl Fn(f64) -> f64, fy: impl Fn(f64) -> f64) {
    for t in 0..frames.rows() {
        for (i, v) in frames.row_mut(t).iter_mut().enumerate() {
            *v = if i % 2 == 0 { fx(*v) } else { fy(*v) };
        }
    }
}

/// Subtracts the root joint from every joint, frame by frame.
pub fn root_relative_3d(seq: &PoseSequence, root_joint: usize) -> Result<PoseSequence> {
    let meta = seq.meta();
    if meta.layout != Layout::Xyz {
        return Err(Error::Layout(format!(
            "root_relative_3d needs xyz coordinates, got {:?}",
            meta.layout
        )));
    }
    if root_joint >= meta.num_joints {
        return Err(Error::config(format!(
            "root joint {root_joint} out of range for {} joints",
            meta.num_joints
        )));
    }
    let mut frames = seq.frames().clone();
    for t in 0..frames.rows() {
        let row = frames.row_mut(t);
        let root = [row[3 * root_joint], row[3 * root_joint + 1], row[3 * root_joint + 2]];
        for joint in row.chunks_exact_mut(3) {
            for d in 0..3 {
                joint[d] -= root[d];
            }
        }
    }
    seq.with_frames(frames)
}

/// Input normalization applied around the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// Per-sequence, per-channel standardization, undone on the output.
    Sequence,
}

/// Per-channel standardization with statistics of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl SequenceNorm {
    pub fn fit(seq: &PoseSequence) -> Self {
        let (l, c) = seq.frames().shape();
        let n = l.max(1) as f64;
        let mut mean = vec![0.0; c];
        for t in 0..l {
            for (m, v) in mean.iter_mut().zip(seq.frame(t)) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; c];
        for t in 0..l {
            for ((s, v), m) in var.iter_mut().zip(seq.frame(t)).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, seq: &PoseSequence) -> Result<PoseSequence> {
        self.map(seq, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, seq: &PoseSequence) -> Result<PoseSequence> {
        self.map(seq, |v, m, s| v * s + m)
    }

    fn map(&self, seq: &PoseSequence, f: impl Fn(f64, f64, f64) -> f64) -> Result<PoseSequence> {
        if seq.channels() != self.mean.len() {
            return Err(Error::shape(format!(
                "normalizer fitted on {} channels, sequence has {}",
                self.mean.len(),
                seq.channels()
            )));
        }
        let mut frames = seq.frames().clone();
        for t in 0..frames.rows() {
            for (j, v) in frames.row_mut(t).iter_mut().enumerate() {
                *v = f(*v, self.mean[j], self.std[j]);
            }
        }
        seq.with_frames(frames)
    }
}

/// Parameters of the sinusoid-superposition motion generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSpec {
    pub length_l: usize,
    pub channels: usize,
    pub num_sinusoids: usize,
    /// Hz; must stay below Nyquist.
    pub max_freq: f64,
    pub max_amp: f64,
    pub fps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_layout")]
    pub layout: Layout,
    #[serde(default)]
    pub units: Units,
}

fn default_layout() -> Layout {
    Layout::Generic
}

impl MotionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_sinusoids == 0 {
            return Err(Error::config("num_sinusoids must be at least 1"));
        }
        if self.channels == 0 {
            return Err(Error::config("channels must be at least 1"));
        }
        if !(self.fps > 0.0) {
            return Err(Error::config("fps must be positive"));
        }
        if !(self.max_freq >= 0.0 && self.max_freq < self.fps / 2.0) {
            return Err(Error::config(format!(
                "max_freq {} must lie in [0, fps/2 = {})",
                self.max_freq,
                self.fps / 2.0
            )));
        }
        if !(self.max_amp >= 0.0 && self.max_amp.is_finite()) {
            return Err(Error::config("max_amp must be non-negative"));
        }
        self.meta().validate()?;
        Ok(())
    }

    fn meta(&self) -> SequenceMeta {
        let dims = match self.layout {
            Layout::Xy => 2,
            Layout::Xyz => 3,
            Layout::Generic => 1,
        };
        SequenceMeta {
            fps: self.fps,
            num_joints: self.channels / dims,
            dims,
            layout: self.layout,
            units: self.units,
        }
    }
}

/// Clean motion: each channel is an independent sum of sinusoids with
/// amplitude, frequency and phase drawn uniformly within the spec's bounds.
pub fn synth_motion(spec: &MotionSpec) -> Result<PoseSequence> {
    spec.validate()?;
    let meta = spec.meta();
    if meta.channels() != spec.channels {
        return Err(Error::Layout(format!(
            "{} channels cannot be grouped into {}-dimensional joints",
            spec.channels, meta.dims
        )));
    }
    let mut rng = RngState::new(spec.seed);
    let mut frames = Matrix::zeros(spec.length_l, spec.channels);
    for c in 0..spec.channels {
        for _ in 0..spec.num_sinusoids {
            let amp = rng.uniform(0.0, spec.max_amp);
            let freq = rng.uniform(0.0, spec.max_freq);
            let phase = rng.uniform(0.0, 2.0 * PI);
            let omega = 2.0 * PI * freq / spec.fps;
            for t in 0..spec.length_l {
                let v = frames.get(t, c) + amp * (omega * t as f64 + phase).sin();
                frames.set(t, c, v);
            }
        }
    }
    PoseSequence::new(meta, frames)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// Every (frame, channel) entry independently receives `N(0, σ²)` with
    /// probability `p`. `sigma` is a standard deviation.
    GaussianImpulsive { p: f64, sigma: f64 },
    /// One random frame per channel receives a `N(0, σ²)` spike.
    Sudden { sigma: f64 },
    /// One random span of `span` frames per channel is shifted by `bias` and
    /// jittered with `N(0, σ²)` per frame.
    LongTerm { span: usize, sigma: f64, bias: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian_impulsive(p: f64, sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::GaussianImpulsive { p, sigma },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigma = match self.kind {
            NoiseKind::GaussianImpulsive { p, sigma } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::config(format!("p must lie in [0, 1], got {p}")));
                }
                sigma
            }
            NoiseKind::Sudden { sigma } => sigma,
            NoiseKind::LongTerm { span, sigma, bias } => {
                if span == 0 {
                    return Err(Error::config("span must be at least 1"));
                }
                if !bias.is_finite() {
                    return Err(Error::config("bias must be finite"));
                }
                sigma
            }
        };
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be non-negative, got {sigma}")));
        }
        Ok(())
    }
}

/// Corrupted copy of `seq`; length and metadata are unchanged.
pub fn inject_noise(seq: &PoseSequence, spec: &NoiseSpec) -> Result<PoseSequence> {
    spec.validate()?;
    let (l, c) = seq.frames().shape();
    let mut rng = RngState::new(spec.seed);
    let mut frames = seq.frames().clone();
    match spec.kind {
        NoiseKind::GaussianImpulsive { p, sigma } => {
            for v in frames.as_mut_slice() {
                if rng.bernoulli(p) {
                    *v += sigma * rng.standard_normal();
                }
            }
        }
        NoiseKind::Sudden { sigma } => {
            if l > 0 {
                for ch in 0..c {
                    let t = rng.index(l);
                    let v = frames.get(t, ch) + sigma * rng.standard_normal();
                    frames.set(t, ch, v);
                }
            }
        }
        NoiseKind::LongTerm { span, sigma, bias } => {
            if span > l {
                return Err(Error::config(format!(
                    "span {span} exceeds sequence length {l}"
                )));
            }
            for ch in 0..c {
                let start = rng.index(l - span + 1);
                for t in start..start + span {
                    let v = frames.get(t, ch) + bias + sigma * rng.standard_normal();
                    frames.set(t, ch, v);
                }
            }
        }
    }
    seq.with_frames(frames)
}

/// A corrupted sequence and the clean sequence it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub noisy: PoseSequence,
    pub clean: PoseSequence,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<Pair>,
    pub test: Vec<Pair>,
}

/// Seed of the `index`-th sequence generated from a base seed.
pub fn sequence_seed(base: u64, index: usize) -> u64 {
    derive_seed(base, index as u64)
}

/// `count` independent pairs; the first `round(count·split)` go to training.
pub fn make_dataset(motion: &MotionSpec, noise: &NoiseSpec, count: usize, split: f64) -> Result<Dataset> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::config(format!("split must lie in (0, 1), got {split}")));
    }
    motion.validate()?;
    noise.validate()?;
    let n_train = ((count as f64) * split).round() as usize;
    let mut ds = Dataset::default();
    for i in 0..count {
        let mut m = motion.clone();
        m.seed = sequence_seed(motion.seed, i);
        let mut nz = noise.clone();
        nz.seed = sequence_seed(noise.seed, i);
        let clean = synth_motion(&m)?;
        let noisy = inject_noise(&clean, &nz)?;
        let pair = Pair { noisy, clean };
        if i < n_train {
            ds.train.push(pair);
        } else {
            ds.test.push(pair);
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub noisy: PathBuf,
    pub clean: PathBuf,
    pub split: Split,
}

/// Index of paired sequence files. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub pairs: Vec<ManifestEntry>,
    pub seed: u64,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported manifest format_version {}",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse {
            context: "manifest".into(),
            message: e.to_string(),
        })
    }

    /// Loads every listed pair.
    pub fn load_dataset(&self, base_dir: &Path) -> Result<Dataset> {
        let mut ds = Dataset::default();
        for entry in &self.pairs {
            let noisy = load_sequence(base_dir.join(&entry.noisy))?;
            let clean = load_sequence(base_dir.join(&entry.clean))?;
            if noisy.frames().shape() != clean.frames().shape() {
                return Err(Error::shape(format!(
                    "pair {} / {} differ in shape",
                    entry.noisy.display(),
                    entry.clean.display()
                )));
            }
            let pair = Pair { noisy, clean };
            match entry.split {
                Split::Train => ds.train.push(pair),
                Split::Test => ds.test.push(pair),
            }
        }
        Ok(ds)
    }
}

/// Convenience: loads a manifest and its pairs.
pub fn load_manifest_dataset(path: impl AsRef<Path>) -> Result<(Manifest, Dataset)> {
    let path = path.as_ref();
    let m = Manifest::load(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let ds = m.load_dataset(base)?;
    Ok((m, ds))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_seq(seed: u64, l: usize, joints: usize) -> PoseSequence {
        let mut rng = RngState::new(seed);
        let data = (0..l * joints * 3).map(|_| rng.uniform(-2.0, 2.0)).collect();
        PoseSequence::new(
            SequenceMeta::xyz(joints, 30.0, Units::Meter),
            Matrix::from_vec(l, joints * 3, data).unwrap(),
        )
        .unwrap()
    }

    fn motion(seed: u64) -> MotionSpec {
        MotionSpec {
            length_l: 120,
            channels: 6,
            num_sinusoids: 3,
            max_freq: 2.0,
            max_amp: 0.5,
            fps: 30.0,
            seed,
            layout: Layout::Xyz,
            units: Units::Meter,
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let seq = random_seq(1, 1000, 17);
        let back = PoseSequence::from_json(&seq.to_json().unwrap()).unwrap();
        assert_eq!(back, seq);
        assert_eq!(back.frames().max_abs_diff(seq.frames()), 0.0);
    }

    #[test]
    fn json_missing_frames_names_the_key() {
        let text = r#"{"format_version":1,"fps":30,"num_joints":1,"dims":3,"layout":"xyz","units":"meter"}"#;
        let err = PoseSequence::from_json(text).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(err.to_string().contains("frames"), "{err}");
    }

    #[test]
    fn json_rejects_ragged_and_mismatched_layouts() {
        let text = r#"{"format_version":1,"fps":30,"num_joints":1,"dims":3,"layout":"xyz","units":"meter","frames":[[1,2,3],[1,2]]}"#;
        assert!(PoseSequence::from_json(text).is_err());
        let text = r#"{"format_version":1,"fps":30,"num_joints":1,"dims":2,"layout":"xyz","units":"meter","frames":[[1,2]]}"#;
        assert!(matches!(PoseSequence::from_json(text), Err(Error::Layout(_))));
    }

    #[test]
    fn non_finite_values_rejected() {
        let mut m = Matrix::zeros(2, 3);
        m.set(1, 2, f64::INFINITY);
        let err = PoseSequence::new(SequenceMeta::xyz(1, 30.0, Units::Mm), m).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn csv_round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let seq = random_seq(2, 50, 4);
        let p = dir.path().join("s.csv");
        save_csv(&p, &seq).unwrap();
        let back = load_csv(&p, *seq.meta()).unwrap();
        assert_eq!(back, seq);

        let jp = dir.path().join("s.json");
        save_sequence(&jp, &seq).unwrap();
        assert_eq!(load_sequence(&jp).unwrap().frames(), back.frames());

        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "frame,x0,c1,c2\n0,1,2,3\n").unwrap();
        assert!(load_csv(&bad, SequenceMeta::xyz(1, 30.0, Units::Meter)).is_err());

        let ragged = dir.path().join("ragged.csv");
        fs::write(&ragged, "frame,c0,c1,c2\n0,1,2,3\n1,1,2\n").unwrap();
        assert!(matches!(
            load_csv(&ragged, SequenceMeta::xyz(1, 30.0, Units::Meter)),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn normalize_2d_corners_and_inverse() {
        let (w, h) = (640.0, 480.0);
        let frames = Matrix::from_rows(&[[0.0, 0.0, w, h, w / 2.0, h / 2.0]]).unwrap();
        let seq = PoseSequence::new(SequenceMeta::xy(3, 30.0, Units::Pixel), frames).unwrap();
        let n = normalize_2d(&seq, w, h).unwrap();
        assert_eq!(n.frame(0), &[-1.0, -1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(n.meta().units, Units::Unitless);
        let back = denormalize_2d(&n, w, h).unwrap();
        assert!(back.frames().max_abs_diff(seq.frames()) < 1e-12);
        assert!(normalize_2d(&random_seq(0, 3, 2), w, h).is_err());
    }

    #[test]
    fn root_relative_properties() {
        let seq = random_seq(3, 20, 5);
        let r = root_relative_3d(&seq, 2).unwrap();
        for t in 0..20 {
            assert_eq!(&r.frame(t)[6..9], &[0.0, 0.0, 0.0]);
            let dist = |f: &[f64], a: usize, b: usize| {
                (0..3).map(|d| (f[3 * a + d] - f[3 * b + d]).powi(2)).sum::<f64>().sqrt()
            };
            assert!((dist(seq.frame(t), 0, 4) - dist(r.frame(t), 0, 4)).abs() < 1e-12);
        }
        assert_eq!(root_relative_3d(&r, 2).unwrap(), r);
        assert!(root_relative_3d(&seq, 5).is_err());
    }

    #[test]
    fn sequence_norm_inverts() {
        let seq = random_seq(4, 30, 2);
        let norm = SequenceNorm::fit(&seq);
        let z = norm.apply(&seq).unwrap();
        let zn = SequenceNorm::fit(&z);
        assert!(zn.mean.iter().all(|m| m.abs() < 1e-12));
        assert!(zn.std.iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert!(norm.invert(&z).unwrap().frames().max_abs_diff(seq.frames()) < 1e-12);
    }

    #[test]
    fn synth_motion_properties() {
        let mut spec = motion(5);
        spec.num_sinusoids = 1;
        spec.max_freq = 0.0;
        let s = synth_motion(&spec).unwrap();
        for c in 0..6 {
            let ch = s.channel(c);
            assert!(ch.iter().all(|v| (v - ch[0]).abs() < 1e-15));
        }

        let spec = motion(6);
        let s = synth_motion(&spec).unwrap();
        let bound = spec.num_sinusoids as f64 * spec.max_amp;
        assert!(s.frames().max_abs() <= bound);
        let w = 2.0 * PI * spec.max_freq / spec.fps;
        let acc_bound = bound * w * w;
        for c in 0..6 {
            let ch = s.channel(c);
            for t in 1..ch.len() - 1 {
                assert!((ch[t + 1] - 2.0 * ch[t] + ch[t - 1]).abs() <= acc_bound + 1e-12);
            }
        }
        assert_eq!(synth_motion(&spec).unwrap(), s);

        let mut bad = motion(0);
        bad.max_freq = 15.0;
        assert!(synth_motion(&bad).is_err());
        let mut bad = motion(0);
        bad.channels = 7;
        assert!(synth_motion(&bad).is_err());
    }

    #[test]
    fn noise_identity_cases() {
        let clean = synth_motion(&motion(7)).unwrap();
        let p0 = NoiseSpec::gaussian_impulsive(0.0, 0.3, 1);
        assert_eq!(inject_noise(&clean, &p0).unwrap(), clean);
        for kind in [
            NoiseKind::GaussianImpulsive { p: 0.7, sigma: 0.0 },
            NoiseKind::Sudden { sigma: 0.0 },
            NoiseKind::LongTerm { span: 10, sigma: 0.0, bias: 0.0 },
        ] {
            let spec = NoiseSpec { kind, seed: 3 };
            assert_eq!(inject_noise(&clean, &spec).unwrap(), clean);
        }
    }

    #[test]
    fn noise_perturbed_fraction() {
        let frames = Matrix::zeros(1000, 100);
        let seq = PoseSequence::generic(frames, 30.0).unwrap();
        let noisy = inject_noise(&seq, &NoiseSpec::gaussian_impulsive(0.5, 1.0, 99)).unwrap();
        let changed = noisy.frames().as_slice().iter().filter(|v| **v != 0.0).count();
        let frac = changed as f64 / 100_000.0;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn sudden_and_long_term_shapes() {
        let seq = PoseSequence::generic(Matrix::zeros(50, 4), 30.0).unwrap();
        let s = inject_noise(&seq, &NoiseSpec { kind: NoiseKind::Sudden { sigma: 1.0 }, seed: 1 }).unwrap();
        for c in 0..4 {
            assert_eq!(s.channel(c).iter().filter(|v| **v != 0.0).count(), 1);
        }
        let spec = NoiseSpec {
            kind: NoiseKind::LongTerm { span: 8, sigma: 0.0, bias: 0.5 },
            seed: 2,
        };
        let lt = inject_noise(&seq, &spec).unwrap();
        for c in 0..4 {
            let ch = lt.channel(c);
            let hit: Vec<usize> = (0..50).filter(|&t| ch[t] != 0.0).collect();
            assert_eq!(hit.len(), 8);
            assert_eq!(hit[7] - hit[0], 7);
            assert!(hit.iter().all(|&t| ch[t] == 0.5));
        }
        assert_eq!(lt.meta(), seq.meta());
        let too_long = NoiseSpec {
            kind: NoiseKind::LongTerm { span: 51, sigma: 0.1, bias: 0.0 },
            seed: 0,
        };
        assert!(inject_noise(&seq, &too_long).is_err());
    }

    #[test]
    fn dataset_split_and_determinism() {
        let noise = NoiseSpec::gaussian_impulsive(0.5, 0.01, 11);
        let ds = make_dataset(&motion(1), &noise, 10, 0.8).unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (8, 2));
        assert_eq!(make_dataset(&motion(1), &noise, 10, 0.8).unwrap(), ds);
        assert_ne!(ds.train[0].clean, ds.train[1].clean);
        assert!(make_dataset(&motion(1), &noise, 10, 1.0).is_err());
    }

    #[test]
    fn noise_spec_json_shape() {
        let spec: NoiseSpec =
            serde_json::from_str(r#"{"kind":"gaussian_impulsive","p":0.5,"sigma":0.01,"seed":4}"#).unwrap();
        assert_eq!(spec, NoiseSpec::gaussian_impulsive(0.5, 0.01, 4));
        let spec: NoiseSpec = serde_json::from_str(r#"{"kind":"long_term","span":5,"sigma":0.1,"bias":0.2}"#).unwrap();
        assert_eq!(spec.seed, 0);
    }
}
