//! Kaiser-windowed sinc interpolation.

use std::collections::HashMap;

use super::RawRecording;
use crate::error::{Error, Result};

pub const RESAMPLE_TAPS: usize = 64;
pub const KAISER_BETA: f64 = 8.6;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Resamples one channel from `src` to `dst` Hz.
pub fn resample_channel(x: &[f64], src: f64, dst: f64) -> Vec<f64> {
    if src == dst {
        return x.to_vec();
    }
    let ratio = dst / src;
    let cutoff = ratio.min(1.0);
    let half = (RESAMPLE_TAPS / 2) as f64;
    let out_len = ((x.len() as f64) * ratio + 1e-9).floor() as usize;
    let i0_beta = bessel_i0(KAISER_BETA);
    let lead = RESAMPLE_TAPS as isize / 2 - 1;
    // Taps depend only on the fractional offset, which repeats for rational ratios.
    let mut kernels: HashMap<u64, ([f64; RESAMPLE_TAPS], f64)> = HashMap::new();
    (0..out_len)
        .map(|m| {
            let pos = m as f64 / ratio;
            let floor = pos.floor();
            let frac = pos - floor;
            let base = floor as isize - lead;
            let (weights, total) = kernels.entry(frac.to_bits()).or_insert_with(|| {
                let mut w = [0.0; RESAMPLE_TAPS];
                let mut total = 0.0;
                for (j, wj) in w.iter_mut().enumerate() {
                    let tau = frac + (lead - j as isize) as f64;
                    let r = (tau / half).clamp(-1.0, 1.0);
                    let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                    *wj = cutoff * sinc(cutoff * tau) * window;
                    total += *wj;
                }
                (w, total)
            });
            let mut acc = 0.0;
            for (j, w) in weights.iter().enumerate() {
                let idx = base + j as isize;
                if idx >= 0 && (idx as usize) < x.len() {
                    acc += w * x[idx as usize];
                }
            }
            acc / *total
        })
        .collect()
}

/// Resamples every channel; output length is `floor(N · target / source)`.
pub fn resample(rec: &RawRecording, target: f64) -> Result<RawRecording> {
    if !(target > 0.0) || !(rec.sample_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "resampling needs positive rates, got {} -> {target} Hz",
            rec.sample_rate
        )));
    }
    if rec.sample_rate < 100.0 {
        return Err(Error::InvalidArgument(format!(
            "source rate {} Hz is below 100 Hz",
            rec.sample_rate
        )));
    }
    let src = rec.sample_rate;
    Ok(RawRecording {
        sample_rate: target,
        samples: rec.map_channels(|x| resample_channel(x, src, target))?,
        ..rec.clone()
    })
}
