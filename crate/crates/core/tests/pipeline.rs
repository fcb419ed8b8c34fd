//! File → filters → resample → segments → patches.

use ndx_core::numerics::Tensor;
use ndx_core::signal::{
    condition, ingest_recording_file, patchify, preprocess, segment_windows, write_recording_file, Label,
    PipelineConfig, RawRecording,
};
use ndx_core::synth::gen_background;
use std::f64::consts::PI;

fn tones(channels: usize, rate: f64, seconds: f64, freqs: &[f64]) -> RawRecording {
    let n = (rate * seconds) as usize;
    let data = (0..channels)
        .flat_map(|c| {
            (0..n).map(move |i| {
                let t = i as f64 / rate;
                freqs.iter().map(|f| (2.0 * PI * f * t + c as f64).sin()).sum::<f64>()
            })
        })
        .collect();
    RawRecording::new(
        rate,
        Tensor::new(vec![channels, n], data).unwrap(),
        Some(Label::Normal),
        "s",
    )
    .unwrap()
}

/// Amplitude of the `freq` component of `x` sampled at `rate`.
fn tone_amplitude(x: &[f64], rate: f64, freq: f64) -> f64 {
    let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (i, v)| {
        let w = 2.0 * PI * freq * i as f64 / rate;
        (re + v * w.cos(), im - v * w.sin())
    });
    2.0 * re.hypot(im) / x.len() as f64
}

#[test]
fn file_at_256_hz_becomes_patches() {
    let dir = tempfile::tempdir().unwrap();
    for c in [1, 4, 23] {
        let rec = gen_background(c, 25.0, 256.0, c as u64).unwrap();
        let path = dir.path().join(format!("r{c}.ndxr"));
        write_recording_file(&path, &rec).unwrap();
        let back = ingest_recording_file(&path).unwrap();
        let out = preprocess(&back, &PipelineConfig::default()).unwrap();
        // 25 s at 200 Hz holds two full 10 s windows.
        assert_eq!(out.len(), 2);
        for (p, label) in &out {
            assert_eq!(p.dims(), [c, 10, 200]);
            assert!(p.tensor().all_finite());
            assert_eq!(*label, None);
        }
    }
}

#[test]
fn mains_is_removed_and_alpha_kept() {
    let rec = tones(2, 250.0, 30.0, &[10.0]);
    let mains = tones(2, 250.0, 30.0, &[50.0]);
    let cfg = PipelineConfig {
        standardize: false,
        ..PipelineConfig::default()
    };
    let a = condition(&rec, &cfg).unwrap();
    let m = condition(&mains, &cfg).unwrap();
    assert_eq!(a.sample_rate, 200.0);
    // 28 s interior of an integer number of cycles for both tones.
    let keep = 200..a.len() - 200;
    let ratio_alpha = tone_amplitude(&a.channel(0)[keep.clone()], 200.0, 10.0);
    let ratio_mains = tone_amplitude(&m.channel(0)[keep], 200.0, 50.0);
    assert!(20.0 * ratio_alpha.log10() > -3.0, "alpha {ratio_alpha}");
    assert!(20.0 * ratio_mains.log10() < -20.0, "mains {ratio_mains}");
}

#[test]
fn selected_channels_and_standardized_segments() {
    let rec = gen_background(6, 20.0, 200.0, 9).unwrap();
    let cfg = PipelineConfig {
        channels: Some(vec![5, 0]),
        ..PipelineConfig::default()
    };
    let out = preprocess(&rec, &cfg).unwrap();
    assert_eq!(out.len(), 2);
    for (p, _) in &out {
        assert_eq!(p.dims(), [2, 10, 200]);
        let flat = p.flatten();
        for c in 0..2 {
            let row = flat.row(c);
            let mean = row.iter().sum::<f64>() / 2000.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2000.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
        }
    }
    assert!(preprocess(
        &rec,
        &PipelineConfig {
            channels: Some(vec![6]),
            ..cfg
        }
    )
    .is_err());
}

#[test]
fn patches_are_contiguous_windows() {
    let rec = tones(3, 200.0, 10.0, &[3.0, 7.0]);
    let seg = &segment_windows(&rec).unwrap()[0];
    let p = patchify(seg).unwrap();
    assert_eq!(p.flatten(), seg.samples);
    assert_eq!(p.patch(2, 9), &seg.samples.row(2)[1800..2000]);
}
