//! Seeded EEG-like recordings with injectable spike and rhythm anomalies.
//!
//! Background is aperiodic `1/f^β` noise by spectral synthesis plus a 10 Hz
//! alpha rhythm of equal power; `β = 1` unless a range is configured.
//! Spikes are temporally salient; the 18–25 Hz rhythm is spectrally salient
//! and leaves the amplitude distribution near-Gaussian.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, FormatError, Result};
use crate::numerics::{derive_seed, Tensor};
use crate::signal::{write_recording_file, Label, RawRecording};

pub const SPIKE_WIDTH_S: f64 = 0.070;
pub const ALPHA_HZ: f64 = 10.0;

/// Which binary task a corpus serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// normal vs abnormal (spikes)
    Abnormal,
    /// control vs disease (rhythm)
    Disease,
}

impl Task {
    pub fn labels(self) -> (Label, Label) {
        match self {
            Task::Abnormal => (Label::Normal, Label::Abnormal),
            Task::Disease => (Label::Control, Label::Disease),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub task: Task,
    pub channels: usize,
    pub duration_s: f64,
    pub rate: f64,
    pub negatives: usize,
    pub positives: usize,
    pub spike_rate: f64,
    pub spike_amplitude: f64,
    pub rhythm_band: (f64, f64),
    pub rhythm_gain: f64,
    /// Range of the per-recording aperiodic exponent `β` (power ∝ `f^-β`).
    pub exponent_range: (f64, f64),
    pub recordings_per_subject: usize,
    pub seed: u64,
}

impl CorpusSpec {
    /// 500 + 500 recordings of 20 s → 2000 ten-second segments.
    pub fn stage1(seed: u64) -> Self {
        CorpusSpec {
            task: Task::Abnormal,
            channels: 2,
            duration_s: 20.0,
            rate: 256.0,
            negatives: 500,
            positives: 500,
            spike_rate: 0.5,
            spike_amplitude: 8.0,
            rhythm_band: (18.0, 25.0),
            rhythm_gain: 4.0,
            exponent_range: (1.0, 1.0),
            recordings_per_subject: 1,
            seed,
        }
    }

    /// 50 + 50 recordings → 200 segments.
    pub fn stage2(seed: u64) -> Self {
        CorpusSpec {
            task: Task::Disease,
            negatives: 50,
            positives: 50,
            ..Self::stage1(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.negatives == 0 || self.positives == 0 {
            return bad("corpus needs at least one recording per class".into());
        }
        if self.channels == 0 || self.recordings_per_subject == 0 {
            return bad("channels and recordings per subject must be positive".into());
        }
        if !(self.rate > 0.0) || self.duration_s * self.rate < 2000.0 {
            return bad(format!(
                "{} s at {} Hz is shorter than 2000 samples",
                self.duration_s, self.rate
            ));
        }
        let (lo, hi) = self.rhythm_band;
        if !(lo > 0.0 && lo < hi && hi < self.rate / 2.0) {
            return bad(format!("rhythm band [{lo}, {hi}] must lie in (0, Nyquist)"));
        }
        if self.rhythm_gain < 1.0 || !(self.spike_rate > 0.0) || self.spike_amplitude < 0.0 {
            return bad("rhythm gain must be >= 1, spike rate > 0 and amplitude >= 0".into());
        }
        let (a, b) = self.exponent_range;
        if !(a > 0.0 && a <= b) {
            return bad(format!("exponent range [{a}, {b}] is invalid"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.negatives + self.positives
    }
}

fn round_f32(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

/// Real signal of length `n` whose one-sided spectrum has modulus `amp(f)`
/// and uniformly random phases. DC and Nyquist are zero.
fn spectral_synthesis(n: usize, rate: f64, rng: &mut ChaCha8Rng, amp: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    for k in 1..n.div_ceil(2) {
        let phase = rng.random_range(0.0..2.0 * PI);
        let a = amp(k as f64 * rate / n as f64);
        let c = Complex::from_polar(a, phase);
        spec[k] = c;
        spec[n - k] = c.conj();
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    spec.iter().map(|c| c.re).collect()
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
}

fn normalize(x: &mut [f64]) {
    let s = std_dev(x);
    if s > 0.0 {
        x.iter_mut().for_each(|v| *v /= s);
    }
}

/// Background with a fixed aperiodic exponent `beta`.
pub fn gen_background_with_exponent(
    channels: usize,
    duration_s: f64,
    rate: f64,
    beta: f64,
    seed: u64,
) -> Result<RawRecording> {
    let n = (duration_s * rate).round() as usize;
    if n < 2000 || channels == 0 {
        return Err(Error::InvalidArgument(format!(
            "background needs >= 2000 samples and >= 1 channel, got {n} x {channels}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(channels * n);
    for _ in 0..channels {
        let mut x = spectral_synthesis(n, rate, &mut rng, |f| f.powf(-beta / 2.0));
        normalize(&mut x);
        // Unit-variance noise plus a unit-power sinusoid: 0 dB SNR.
        let phase = rng.random_range(0.0..2.0 * PI);
        for (i, v) in x.iter_mut().enumerate() {
            *v += 2f64.sqrt() * (2.0 * PI * ALPHA_HZ * i as f64 / rate + phase).sin();
        }
        round_f32(&mut x);
        data.extend(x);
    }
    RawRecording::new(rate, Tensor::new(vec![channels, n], data)?, None, "")
}

/// Background with `β = 1`.
pub fn gen_background(channels: usize, duration_s: f64, rate: f64, seed: u64) -> Result<RawRecording> {
    gen_background_with_exponent(channels, duration_s, rate, 1.0, seed)
}

/// Poisson event times (seconds) over the recording.
pub fn spike_times(duration_s: f64, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = duration_s.max(0.0);
    let mean = rate * span;
    let count = if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(&mut rng) as usize
    } else {
        0
    };
    let mut t: Vec<f64> = (0..count).map(|_| rng.random_range(0.0..span)).collect();
    t.sort_by(f64::total_cmp);
    t
}

/// Biphasic template: a Gaussian derivative whose two phase peaks lie
/// `SPIKE_WIDTH_S` apart, sampled over ±4σ and scaled to peak magnitude 1.
pub fn spike_template(rate: f64) -> Vec<f64> {
    let sigma = SPIKE_WIDTH_S / 2.0 * rate;
    let half = (4.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-half..=half)
        .map(|i| {
            let tau = i as f64 / sigma;
            tau * (-tau * tau / 2.0).exp()
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    raw.into_iter().map(|v| v / peak).collect()
}

/// Adds spikes scaled by each target channel's standard deviation.
pub fn inject_spikes(rec: &RawRecording, rate: f64, amplitude: f64, seed: u64) -> Result<RawRecording> {
    if !(rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "spike rate must be positive, got {rate}"
        )));
    }
    let mut out = rec.clone();
    out.label = Some(Label::Abnormal);
    if amplitude == 0.0 {
        return Ok(out);
    }
    let fs = rec.sample_rate;
    let template = spike_template(fs);
    let stds: Vec<f64> = (0..rec.channels()).map(|c| std_dev(rec.channel(c))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    for t in spike_times(rec.len() as f64 / fs, rate, seed) {
        let c = rng.random_range(0..rec.channels());
        let centre = (t * fs).round() as isize;
        let half = (template.len() / 2) as isize;
        let row = out.samples.row_mut(c);
        for (j, w) in template.iter().enumerate() {
            let idx = centre - half + j as isize;
            if idx >= 0 && (idx as usize) < row.len() {
                row[idx as usize] += amplitude * stds[c] * w;
            }
        }
    }
    round_f32(out.samples.data_mut());
    Ok(out)
}

/// Periodogram power of `x` summed over `[lo, hi]` Hz.
pub fn band_power(x: &[f64], rate: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    (0..=n / 2)
        .filter(|&k| {
            let f = k as f64 * rate / n as f64;
            f >= lo && f <= hi
        })
        .map(|k| buf[k].norm_sqr() / n as f64)
        .sum()
}

/// Adds band-limited noise so that band power grows by `gain`.
pub fn inject_rhythm(rec: &RawRecording, band: (f64, f64), gain: f64, seed: u64) -> Result<RawRecording> {
    let (lo, hi) = band;
    let fs = rec.sample_rate;
    if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "rhythm band [{lo}, {hi}] must lie in (0, Nyquist)"
        )));
    }
    if gain < 1.0 {
        return Err(Error::InvalidArgument(format!("rhythm gain must be >= 1, got {gain}")));
    }
    let mut out = rec.clone();
    out.label = Some(Label::Disease);
    if gain == 1.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..rec.channels() {
        let x = rec.channel(c);
        let noise = spectral_synthesis(x.len(), fs, &mut rng, |f| if f >= lo && f <= hi { 1.0 } else { 0.0 });
        let target = (gain - 1.0) * band_power(x, fs, lo, hi);
        let scale = (target / band_power(&noise, fs, lo, hi)).sqrt();
        for (v, nz) in out.samples.row_mut(c).iter_mut().zip(&noise) {
            *v += scale * nz;
        }
    }
    round_f32(out.samples.data_mut());
    Ok(out)
}

/// Recording `index` of the corpus: negatives first, then positives.
pub fn generate_recording(spec: &CorpusSpec, index: usize) -> Result<RawRecording> {
    let seed = derive_seed(spec.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = spec.exponent_range;
    let beta = if a == b { a } else { rng.random_range(a..b) };
    let bg = gen_background_with_exponent(spec.channels, spec.duration_s, spec.rate, beta, derive_seed(seed, 1))?;
    let (neg, _) = spec.task.labels();
    let mut rec = if index < spec.negatives {
        RawRecording { label: Some(neg), ..bg }
    } else {
        match spec.task {
            Task::Abnormal => inject_spikes(&bg, spec.spike_rate, spec.spike_amplitude, derive_seed(seed, 2))?,
            Task::Disease => inject_rhythm(&bg, spec.rhythm_band, spec.rhythm_gain, derive_seed(seed, 3))?,
        }
    };
    rec.subject = subject_id(spec, index);
    Ok(rec)
}

fn subject_id(spec: &CorpusSpec, index: usize) -> String {
    let (class, within) = if index < spec.negatives {
        ("n", index)
    } else {
        ("p", index - spec.negatives)
    };
    let task = match spec.task {
        Task::Abnormal => "a",
        Task::Disease => "d",
    };
    format!("{task}{class}{:05}", within / spec.recordings_per_subject)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub path: String,
    pub label: Label,
    pub subject: String,
    pub split: Split,
}

/// Tab-separated `path label subject split` rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";

impl Manifest {
    pub fn to_tsv(&self) -> String {
        self.rows
            .iter()
            .map(|r| format!("{}\t{}\t{}\t{}\n", r.path, r.label.as_str(), r.subject, r.split))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() != 4 {
                    return Err(FormatError::Malformed(format!("manifest line {}: expected 4 fields", i + 1)).into());
                }
                let label = Label::parse(f[1])
                    .ok_or_else(|| FormatError::Malformed(format!("manifest line {}: label {:?}", i + 1, f[1])))?;
                Ok(ManifestRow {
                    path: f[0].to_string(),
                    label,
                    subject: f[2].to_string(),
                    split: f[3].parse()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Manifest { rows })
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }
}

/// Subject-disjoint 60/20/20 split, stratified by class.
pub fn assign_splits(subjects_by_class: &[Vec<String>], seed: u64) -> Vec<(String, Split)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for subjects in subjects_by_class {
        let mut s = subjects.clone();
        s.shuffle(&mut rng);
        let n = s.len();
        let n_train = (0.6 * n as f64).round() as usize;
        let n_val = ((0.2 * n as f64).round() as usize).min(n - n_train);
        for (i, id) in s.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            out.push((id, split));
        }
    }
    out
}

/// Writes every recording plus `manifest.tsv` under `dir`.
pub fn build_corpus(spec: &CorpusSpec, dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dedup = |range: std::ops::Range<usize>| {
        let mut ids: Vec<String> = range.map(|i| subject_id(spec, i)).collect();
        ids.dedup();
        ids
    };
    let classes = [dedup(0..spec.negatives), dedup(spec.negatives..spec.total())];
    let splits: std::collections::HashMap<String, Split> = assign_splits(&classes, derive_seed(spec.seed, u64::MAX))
        .into_iter()
        .collect();
    let mut rows = Vec::with_capacity(spec.total());
    for i in 0..spec.total() {
        let rec = generate_recording(spec, i)?;
        let name = format!("rec{i:05}.ndxr");
        write_recording_file(&dir.join(&name), &rec)?;
        rows.push(ManifestRow {
            path: name,
            label: rec.label.expect("generated recordings are labeled"),
            split: splits[&rec.subject],
            subject: rec.subject,
        });
    }
    let manifest = Manifest { rows };
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
