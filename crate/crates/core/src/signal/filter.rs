//! Zero-phase IIR filtering with second-order sections.

use std::f64::consts::PI;

use super::RawRecording;
use crate::error::{Error, Result};

/// Normalized biquad, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form II states for a constant input `u` at steady state.
    fn steady_state(&self, u: f64) -> [f64; 2] {
        let y = self.dc_gain() * u;
        let z2 = self.b[2] * u - self.a[1] * y;
        let z1 = self.b[1] * u - self.a[0] * y + z2;
        [z1, z2]
    }
}

/// Cascade of sections applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos(pub Vec<Biquad>);

fn butterworth_qs(order: usize) -> Vec<f64> {
    (1..=order / 2)
        .map(|k| {
            let theta = PI * (2 * k - 1) as f64 / (2 * order) as f64;
            1.0 / (2.0 * theta.cos())
        })
        .collect()
}

impl Sos {
    /// Even-order Butterworth lowpass via the bilinear transform with prewarping.
    pub fn butter_lowpass(order: usize, cutoff: f64, rate: f64) -> Sos {
        let k = (PI * cutoff / rate).tan();
        Sos(butterworth_qs(order)
            .into_iter()
            .map(|q| {
                let norm = 1.0 / (1.0 + k / q + k * k);
                let b0 = k * k * norm;
                Biquad {
                    b: [b0, 2.0 * b0, b0],
                    a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
                }
            })
            .collect())
    }

    pub fn butter_highpass(order: usize, cutoff: f64, rate: f64) -> Sos {
        let k = (PI * cutoff / rate).tan();
        Sos(butterworth_qs(order)
            .into_iter()
            .map(|q| {
                let norm = 1.0 / (1.0 + k / q + k * k);
                Biquad {
                    b: [norm, -2.0 * norm, norm],
                    a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
                }
            })
            .collect())
    }

    /// Second-order notch with quality factor `q`.
    pub fn notch(freq: f64, q: f64, rate: f64) -> Sos {
        let w0 = 2.0 * PI * freq / rate;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        let c = -2.0 * w0.cos();
        Sos(vec![Biquad {
            b: [1.0 / a0, c / a0, 1.0 / a0],
            a: [c / a0, (1.0 - alpha) / a0],
        }])
    }

    pub fn then(mut self, other: Sos) -> Sos {
        self.0.extend(other.0);
        self
    }

    fn initial_states(&self, x0: f64) -> Vec<[f64; 2]> {
        let mut u = x0;
        self.0
            .iter()
            .map(|s| {
                let z = s.steady_state(u);
                u *= s.dc_gain();
                z
            })
            .collect()
    }

    fn run(&self, x: &mut [f64], mut states: Vec<[f64; 2]>) {
        for (s, z) in self.0.iter().zip(states.iter_mut()) {
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + z[0];
                z[0] = s.b[1] * input - s.a[0] * y + z[1];
                z[1] = s.b[2] * input - s.a[1] * y;
                *v = y;
            }
        }
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.run(&mut y, vec![[0.0; 2]; self.0.len()]);
        y
    }

    /// Forward-backward filtering with odd extension and steady-state
    /// initial conditions at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * (2 * self.0.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let zi = self.initial_states(ext[0]);
        self.run(&mut ext, zi);
        ext.reverse();
        let zi = self.initial_states(ext[0]);
        self.run(&mut ext, zi);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

fn nyquist_check(what: &str, freq: f64, rate: f64) -> Result<()> {
    if !(freq > 0.0) || freq >= rate / 2.0 {
        return Err(Error::InvalidArgument(format!(
            "{what} frequency {freq} Hz must lie in (0, Nyquist = {} Hz)",
            rate / 2.0
        )));
    }
    Ok(())
}

/// 4th-order Butterworth bandpass (highpass + lowpass cascade), zero phase.
pub fn bandpass(rec: &RawRecording, low: f64, high: f64) -> Result<RawRecording> {
    nyquist_check("bandpass upper", high, rec.sample_rate)?;
    nyquist_check("bandpass lower", low, rec.sample_rate)?;
    if low >= high {
        return Err(Error::InvalidArgument(format!(
            "bandpass edges out of order: {low} >= {high}"
        )));
    }
    let sos = Sos::butter_highpass(4, low, rec.sample_rate).then(Sos::butter_lowpass(4, high, rec.sample_rate));
    Ok(RawRecording {
        samples: rec.map_channels(|x| sos.filtfilt(x))?,
        ..rec.clone()
    })
}

/// Second-order notch, zero phase.
pub fn notch(rec: &RawRecording, freq: f64, q: f64) -> Result<RawRecording> {
    nyquist_check("notch", freq, rec.sample_rate)?;
    if !(q > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "notch quality factor must be positive, got {q}"
        )));
    }
    let sos = Sos::notch(freq, q, rec.sample_rate);
    Ok(RawRecording {
        samples: rec.map_channels(|x| sos.filtfilt(x))?,
        ..rec.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn tone(freq: f64, rate: f64, seconds: f64) -> RawRecording {
        let n = (rate * seconds) as usize;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect();
        RawRecording::new(rate, Tensor::new(vec![1, n], x).unwrap(), None, "t").unwrap()
    }

    /// RMS over the middle 80 % of the signal.
    fn interior_rms(x: &[f64]) -> f64 {
        let lo = x.len() / 10;
        let hi = x.len() - lo;
        (x[lo..hi].iter().map(|v| v * v).sum::<f64>() / (hi - lo) as f64).sqrt()
    }

    fn gain_db(before: &RawRecording, after: &RawRecording) -> f64 {
        20.0 * (interior_rms(after.channel(0)) / interior_rms(before.channel(0))).log10()
    }

    #[test]
    fn bandpass_passes_alpha_band() {
        let x = tone(10.0, 250.0, 20.0);
        let y = bandpass(&x, 0.1, 75.0).unwrap();
        assert!(gain_db(&x, &y).abs() <= 3.0);
    }

    #[test]
    fn bandpass_removes_slow_drift() {
        let x = tone(0.01, 250.0, 400.0);
        let y = bandpass(&x, 0.1, 75.0).unwrap();
        assert!(gain_db(&x, &y) <= -20.0, "{}", gain_db(&x, &y));
    }

    #[test]
    fn zero_in_zero_out() {
        let rec = RawRecording::new(256.0, Tensor::zeros(&[2, 3000]), None, "z").unwrap();
        assert!(bandpass(&rec, 0.1, 75.0)
            .unwrap()
            .samples
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(notch(&rec, 50.0, 30.0)
            .unwrap()
            .samples
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn notch_rejects_mains_only() {
        let hum = tone(50.0, 250.0, 20.0);
        assert!(gain_db(&hum, &notch(&hum, 50.0, 30.0).unwrap()) <= -20.0);
        let alpha = tone(10.0, 250.0, 20.0);
        assert!(gain_db(&alpha, &notch(&alpha, 50.0, 30.0).unwrap()) >= -1.0);
    }

    #[test]
    fn frequencies_above_nyquist_are_rejected() {
        let rec = tone(5.0, 100.0, 10.0);
        assert!(bandpass(&rec, 0.1, 75.0).is_err());
        assert!(notch(&rec, 50.0, 30.0).is_err());
    }

    #[test]
    fn forward_backward_keeps_pulse_symmetric() {
        let rate = 256.0;
        let n = 60 * 256 + 1;
        let c = n / 2;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = (i as f64 - c as f64) / rate;
                (-t * t / (2.0 * 0.02f64.powi(2))).exp()
            })
            .collect();
        let rec = RawRecording::new(rate, Tensor::new(vec![1, n], x).unwrap(), None, "p").unwrap();
        let y = bandpass(&rec, 0.1, 75.0).unwrap();
        let y = y.channel(0);
        for k in 1..2000 {
            assert!((y[c - k] - y[c + k]).abs() <= 1e-6, "offset {k}");
        }
    }
}
