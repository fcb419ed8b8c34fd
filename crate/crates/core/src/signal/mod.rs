//! Recording ingestion and preprocessing:
//! bandpass → notch → resample → 10 s segments → per-channel standardization → patches.

pub mod filter;
pub mod format;
pub mod resample;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use filter::{bandpass, notch};
pub use format::{ingest_recording_file, read_recording, write_recording, write_recording_file};
pub use resample::resample;

/// Model input rate.
pub const TARGET_RATE: f64 = 200.0;
pub const SEGMENT_SECONDS: usize = 10;
pub const SEGMENT_LEN: usize = 2000;
pub const PATCHES_PER_SEGMENT: usize = 10;
pub const PATCH_LEN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Abnormal,
    Disease,
    Control,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Abnormal => 1,
            Label::Disease => 2,
            Label::Control => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::Normal),
            1 => Some(Label::Abnormal),
            2 => Some(Label::Disease),
            3 => Some(Label::Control),
            _ => None,
        }
    }

    /// Positive class of the binary task: abnormal (stage 1) or disease (stage 2).
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Abnormal | Label::Disease)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
            Label::Disease => "disease",
            Label::Control => "control",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "normal" => Some(Label::Normal),
            "abnormal" => Some(Label::Abnormal),
            "disease" => Some(Label::Disease),
            "control" => Some(Label::Control),
            _ => None,
        }
    }
}

/// Continuous multichannel recording.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub sample_rate: f64,
    /// `[C × N]`
    pub samples: Tensor,
    pub label: Option<Label>,
    pub subject: String,
}

impl RawRecording {
    pub fn new(sample_rate: f64, samples: Tensor, label: Option<Label>, subject: impl Into<String>) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if samples.rank() != 2 {
            return Err(Error::shape(
                "recording",
                format!("samples must be [C x N], got {:?}", samples.shape()),
            ));
        }
        Ok(RawRecording {
            sample_rate,
            samples,
            label,
            subject: subject.into(),
        })
    }

    pub fn channels(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.samples.row(c)
    }

    /// Applies `f` to every channel, replacing the samples.
    pub(crate) fn map_channels(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Tensor> {
        let mut data = Vec::new();
        let mut len = None;
        for c in 0..self.channels() {
            let y = f(self.channel(c));
            len.get_or_insert(y.len());
            data.extend(y);
        }
        Tensor::new(vec![self.channels(), len.unwrap_or(0)], data)
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, keep: &[usize]) -> Result<RawRecording> {
        let mut data = Vec::with_capacity(keep.len() * self.len());
        for &c in keep {
            if c >= self.channels() {
                return Err(Error::InvalidArgument(format!(
                    "channel {c} out of range ({} channels)",
                    self.channels()
                )));
            }
            data.extend_from_slice(self.channel(c));
        }
        Ok(RawRecording {
            samples: Tensor::new(vec![keep.len(), self.len()], data)?,
            ..self.clone()
        })
    }
}

/// A 10 s window at 200 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// `[C × 2000]`
    pub samples: Tensor,
    pub label: Option<Label>,
    pub offset_seconds: f64,
}

/// `[C × A × T]` patches with `A = 10`, `T = 200`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    x: Tensor,
}

impl PatchBatch {
    pub fn new(x: Tensor) -> Result<Self> {
        if x.rank() != 3 || x.shape()[2] != PATCH_LEN {
            return Err(Error::shape(
                "patch_batch",
                format!("expected [C x A x {PATCH_LEN}], got {:?}", x.shape()),
            ));
        }
        Ok(PatchBatch { x })
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.x.shape();
        [s[0], s[1], s[2]]
    }

    pub fn channels(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn patch(&self, channel: usize, index: usize) -> &[f64] {
        let [_, a, t] = self.dims();
        let start = (channel * a + index) * t;
        &self.x.data()[start..start + t]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.x
    }

    /// Restores the `[C × A·T]` segment layout.
    pub fn flatten(&self) -> Tensor {
        let [c, a, t] = self.dims();
        self.x.clone().reshape(&[c, a * t]).expect("same element count")
    }
}

/// Non-overlapping 10 s windows; the trailing remainder is dropped.
pub fn segment_windows(rec: &RawRecording) -> Result<Vec<Segment>> {
    if (rec.sample_rate - TARGET_RATE).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "segmentation expects {TARGET_RATE} Hz input, got {} Hz",
            rec.sample_rate
        )));
    }
    let n = rec.len();
    let count = n / SEGMENT_LEN;
    let mut out = Vec::with_capacity(count);
    for s in 0..count {
        let mut data = Vec::with_capacity(rec.channels() * SEGMENT_LEN);
        for c in 0..rec.channels() {
            data.extend_from_slice(&rec.channel(c)[s * SEGMENT_LEN..(s + 1) * SEGMENT_LEN]);
        }
        out.push(Segment {
            samples: Tensor::new(vec![rec.channels(), SEGMENT_LEN], data)?,
            label: rec.label,
            offset_seconds: (s * SEGMENT_SECONDS) as f64,
        });
    }
    Ok(out)
}

/// Per-channel zero mean, unit variance. Flat channels are only centered.
pub fn standardize(seg: &Segment) -> Segment {
    let mut out = seg.clone();
    for c in 0..out.samples.rows() {
        let row = out.samples.row_mut(c);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
        row.iter_mut().for_each(|v| *v = (*v - mean) * scale);
    }
    out
}

/// `[C × 2000]` → `[C × 10 × 200]`, preserving temporal order.
pub fn patchify(seg: &Segment) -> Result<PatchBatch> {
    let s = seg.samples.shape();
    if s.len() != 2 || s[1] != SEGMENT_LEN {
        return Err(Error::shape(
            "patchify",
            format!("segment must be [C x {SEGMENT_LEN}], got {s:?}"),
        ));
    }
    PatchBatch::new(seg.samples.clone().reshape(&[s[0], PATCHES_PER_SEGMENT, PATCH_LEN])?)
}

/// Filter and resampling settings for [`preprocess`].
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub band_low: f64,
    pub band_high: f64,
    pub notch_freq: f64,
    pub notch_q: f64,
    pub target_rate: f64,
    /// Channels to keep; `None` keeps all.
    pub channels: Option<Vec<usize>>,
    pub standardize: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            band_low: 0.1,
            band_high: 75.0,
            notch_freq: 50.0,
            notch_q: 30.0,
            target_rate: TARGET_RATE,
            channels: None,
            standardize: true,
        }
    }
}

/// The filtered, resampled recording before segmentation.
pub fn condition(rec: &RawRecording, cfg: &PipelineConfig) -> Result<RawRecording> {
    let rec = match &cfg.channels {
        Some(keep) => rec.select_channels(keep)?,
        None => rec.clone(),
    };
    let rec = bandpass(&rec, cfg.band_low, cfg.band_high)?;
    let rec = notch(&rec, cfg.notch_freq, cfg.notch_q)?;
    resample(&rec, cfg.target_rate)
}

/// Runs the full chain and returns `(patches, label)` per segment.
pub fn preprocess(rec: &RawRecording, cfg: &PipelineConfig) -> Result<Vec<(PatchBatch, Option<Label>)>> {
    let conditioned = condition(rec, cfg)?;
    segment_windows(&conditioned)?
        .iter()
        .map(|seg| {
            let seg = if cfg.standardize { standardize(seg) } else { seg.clone() };
            Ok((patchify(&seg)?, seg.label))
        })
        .collect()
}
