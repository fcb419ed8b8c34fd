//! Radix-2 FFT and the zero-padded amplitude spectrum used by the
//! frequency branch.

use super::Tensor;

/// Smallest power of two that is `>= n` (and at least 2).
pub fn padded_len(n: usize) -> usize {
    n.max(2).next_power_of_two()
}

/// In-place iterative Cooley-Tukey transform (unnormalized, `e^{-2πikn/N}`).
///
/// Panics if the length is not a power of two or the buffers differ in length.
pub fn fft_radix2(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    assert_eq!(n, im.len());
    assert!(n.is_power_of_two(), "radix-2 FFT needs a power-of-two length, got {n}");
    if n < 2 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let step = -2.0 * std::f64::consts::PI / size as f64;
        for k in 0..half {
            let (s, c) = (step * k as f64).sin_cos();
            for start in (0..n).step_by(size) {
                let a = start + k;
                let b = a + half;
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        size *= 2;
    }
}

/// `|X[k]|` for `k = 0..=N/2` where `X` is the DFT of `x` zero-padded to the
/// next power of two.
pub fn rfft_amplitude_raw(x: &[f64]) -> Vec<f64> {
    let n = padded_len(x.len());
    let mut re = vec![0.0; n];
    re[..x.len()].copy_from_slice(x);
    let mut im = vec![0.0; n];
    fft_radix2(&mut re, &mut im);
    (0..=n / 2).map(|k| re[k].hypot(im[k])).collect()
}

pub fn rfft_amplitude(x: &Tensor) -> Tensor {
    Tensor::from_vec(rfft_amplitude_raw(x.data()))
}
