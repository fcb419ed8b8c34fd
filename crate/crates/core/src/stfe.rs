//! Selective temporal-frequency embedding (STFE).
//!
//! Each 200-sample patch of one channel becomes a `d`-dimensional token:
//!
//! ```text
//! z_time = pool(GN(GELU(Conv15/8)) → GN(GELU(Conv3/2)) → GN(GELU(Conv3/2)))   (d/2)
//! z_freq = pool(4 conv blocks over the 129-bin amplitude spectrum)            (d/2)
//! token  = W·[z_time ⓒ λ_f·z_freq] + b                                       (d)
//! ```
//!
//! When `λ_f == 0` the frequency branch is not evaluated at all, so the
//! output cannot depend on its parameters and their gradients stay zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::fft::rfft_amplitude_raw;
use crate::numerics::ops::{
    conv1d_backward_raw, conv1d_raw, gelu_grad_scalar, gelu_scalar, group_norm_backward_raw, group_norm_raw,
    linear_backward_raw, linear_raw, ConvShape, NormCache, GROUP_NORM_EPS,
};
use crate::numerics::{join, ParamTensor, Parameterized, Tensor};
use crate::signal::{PatchBatch, PATCHES_PER_SEGMENT, PATCH_LEN};

pub const TEMPORAL_KERNELS: [usize; 3] = [15, 3, 3];
pub const TEMPORAL_STRIDES: [usize; 3] = [8, 2, 2];
pub const FREQUENCY_KERNELS: [usize; 4] = [3, 15, 3, 3];
pub const FREQUENCY_STRIDES: [usize; 4] = [1, 4, 2, 2];
/// Amplitude bins of a 200-sample patch zero-padded to 256.
pub const FREQUENCY_BINS: usize = 129;

/// Conv → GELU → GroupNorm.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub kernel: ParamTensor,
    pub bias: ParamTensor,
    pub gamma: ParamTensor,
    pub beta: ParamTensor,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Vec<f64>,
    in_len: usize,
    pre_act: Vec<f64>,
    act: Vec<f64>,
    norm: NormCache,
    out_len: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Group count used by every block: 4, reduced for narrow layers so that
/// every group spans at least two channels. A one-channel group has zero
/// temporal mean, which would make the pooled branch output constant.
pub fn groups_for(channels: usize) -> usize {
    let mut g = gcd(4, channels).max(1);
    while g > 1 && channels / g < 2 {
        g /= 2;
    }
    g
}

impl ConvBlock {
    fn init(cin: usize, cout: usize, k: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((cin * k) as f64).sqrt();
        let kernel: Vec<f64> = (0..cout * cin * k).map(|_| rng.random_range(-bound..bound)).collect();
        let bias: Vec<f64> = (0..cout).map(|_| rng.random_range(-bound..bound)).collect();
        ConvBlock {
            kernel: ParamTensor::new(Tensor::new(vec![cout, cin, k], kernel).expect("shape")),
            bias: ParamTensor::new(Tensor::from_vec(bias)),
            gamma: ParamTensor::new(Tensor::filled(&[cout], 1.0)),
            beta: ParamTensor::zeros(&[cout]),
            stride,
            padding: k / 2,
            groups: groups_for(cout),
        }
    }

    fn shape(&self) -> ConvShape {
        let s = self.kernel.value.shape();
        ConvShape {
            in_channels: s[1],
            out_channels: s[0],
            kernel: s[2],
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.value.shape()[0]
    }

    fn forward(&self, input: Vec<f64>, in_len: usize) -> (Vec<f64>, BlockCache) {
        let g = self.shape();
        let out_len = g.out_len(in_len).expect("block geometry validated at construction");
        let mut pre_act = vec![0.0; g.out_channels * out_len];
        conv1d_raw(
            &input,
            in_len,
            self.kernel.value.data(),
            self.bias.value.data(),
            g,
            out_len,
            &mut pre_act,
        );
        let act: Vec<f64> = pre_act.iter().map(|&v| gelu_scalar(v)).collect();
        let mut out = vec![0.0; act.len()];
        let norm = group_norm_raw(
            &act,
            g.out_channels,
            out_len,
            self.groups,
            self.gamma.value.data(),
            self.beta.value.data(),
            GROUP_NORM_EPS,
            &mut out,
        );
        (
            out,
            BlockCache {
                input,
                in_len,
                pre_act,
                act,
                norm,
                out_len,
            },
        )
    }

    fn backward(&mut self, cache: &BlockCache, grad_out: &[f64], want_input: bool) -> Option<Vec<f64>> {
        let g = self.shape();
        let mut d_act = vec![0.0; cache.act.len()];
        group_norm_backward_raw(
            &cache.norm,
            g.out_channels,
            cache.out_len,
            self.groups,
            self.gamma.value.data(),
            grad_out,
            self.gamma.grad.data_mut(),
            self.beta.grad.data_mut(),
            Some(&mut d_act),
        );
        for (d, &x) in d_act.iter_mut().zip(&cache.pre_act) {
            *d *= gelu_grad_scalar(x);
        }
        let mut d_in = want_input.then(|| vec![0.0; cache.input.len()]);
        conv1d_backward_raw(
            &cache.input,
            cache.in_len,
            self.kernel.value.data(),
            g,
            cache.out_len,
            &d_act,
            self.kernel.grad.data_mut(),
            self.bias.grad.data_mut(),
            d_in.as_deref_mut(),
        );
        d_in
    }
}

impl Parameterized for ConvBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &ParamTensor)) {
        f(&join(prefix, "kernel"), &self.kernel);
        f(&join(prefix, "bias"), &self.bias);
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ParamTensor)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Sequential stack of conv blocks followed by mean pooling over positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub blocks: Vec<ConvBlock>,
}

#[derive(Debug, Clone)]
struct BranchCache {
    blocks: Vec<BlockCache>,
}

impl Branch {
    fn new(kernels: &[usize], strides: &[usize], widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut cin = 1;
        let blocks = kernels
            .iter()
            .zip(strides)
            .zip(widths)
            .map(|((&k, &s), &w)| {
                let b = ConvBlock::init(cin, w, k, s, rng);
                cin = w;
                b
            })
            .collect();
        Branch { blocks }
    }

    fn forward(&self, signal: &[f64]) -> (Vec<f64>, BranchCache) {
        let mut x = signal.to_vec();
        let mut len = signal.len();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(x, len);
            len = c.out_len;
            caches.push(c);
            x = y;
        }
        let channels = self.blocks.last().map_or(1, |b| b.out_channels());
        let pooled = (0..channels)
            .map(|c| x[c * len..(c + 1) * len].iter().sum::<f64>() / len as f64)
            .collect();
        (pooled, BranchCache { blocks: caches })
    }

    fn backward(&mut self, cache: &BranchCache, grad_pooled: &[f64]) {
        let last = cache.blocks.last().expect("non-empty branch");
        let len = last.out_len;
        let mut grad: Vec<f64> = grad_pooled
            .iter()
            .flat_map(|&g| std::iter::repeat(g / len as f64).take(len))
            .collect();
        for (i, (block, bc)) in self.blocks.iter_mut().zip(&cache.blocks).enumerate().rev() {
            match block.backward(bc, &grad, i > 0) {
                Some(g) => grad = g,
                None => break,
            }
        }
    }

    /// Output length after each block for an input of length `len`.
    pub fn lengths(&self, len: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut l = len;
        for b in &self.blocks {
            l = b.shape().out_len(l).expect("valid geometry");
            out.push(l);
        }
        out
    }
}

impl Parameterized for Branch {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &ParamTensor)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ParamTensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// All STFE weights plus the fusion gate.
#[derive(Debug, Clone, PartialEq)]
pub struct Stfe {
    pub d: usize,
    pub temporal: Branch,
    pub frequency: Branch,
    pub fusion_w: ParamTensor,
    pub fusion_b: ParamTensor,
    pub cls: ParamTensor,
    lambda_f: f64,
}

/// Embedded segment: row 0 is the cls token, then one row per (channel, patch).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub provenance: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
struct TokenCache {
    temporal: BranchCache,
    frequency: Option<BranchCache>,
    fused_input: Vec<f64>,
}

/// Per-token intermediates for a whole segment.
#[derive(Debug, Clone)]
pub struct StfeCache {
    tokens: Vec<TokenCache>,
}

impl Stfe {
    pub fn new(d: usize, seed: u64) -> Result<Self> {
        if d < 4 || d % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "embedding width {d} must be a positive multiple of 4"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (q, h) = (d / 4, d / 2);
        let temporal = Branch::new(&TEMPORAL_KERNELS, &TEMPORAL_STRIDES, &[q, h, h], &mut rng);
        let frequency = Branch::new(&FREQUENCY_KERNELS, &FREQUENCY_STRIDES, &[q, h, h, h], &mut rng);
        let bound = 1.0 / (d as f64).sqrt();
        let w: Vec<f64> = (0..d * d).map(|_| rng.random_range(-bound..bound)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-bound..bound)).collect();
        let normal = Normal::new(0.0, 0.02).expect("std");
        let cls: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
        Ok(Stfe {
            d,
            temporal,
            frequency,
            fusion_w: ParamTensor::new(Tensor::new(vec![d, d], w)?),
            fusion_b: ParamTensor::new(Tensor::from_vec(b)),
            cls: ParamTensor::new(Tensor::from_vec(cls)),
            lambda_f: 0.0,
        })
    }

    pub fn lambda_f(&self) -> f64 {
        self.lambda_f
    }

    pub fn set_lambda_f(&mut self, lambda_f: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&lambda_f) {
            return Err(Error::InvalidArgument(format!(
                "gate lambda_f must lie in [0, 1], got {lambda_f}"
            )));
        }
        self.lambda_f = lambda_f;
        Ok(())
    }

    fn check_patch(patch: &[f64]) -> Result<()> {
        if patch.len() != PATCH_LEN {
            return Err(Error::shape(
                "stfe",
                format!("patch length is {}, expected {PATCH_LEN} samples", patch.len()),
            ));
        }
        Ok(())
    }

    /// Temporal branch output (`d/2`).
    pub fn temporal_embed(&self, patch: &Tensor) -> Result<Tensor> {
        Self::check_patch(patch.data())?;
        Ok(Tensor::from_vec(self.temporal.forward(patch.data()).0))
    }

    /// Frequency branch output (`d/2`), evaluated regardless of the gate.
    pub fn frequency_embed(&self, patch: &Tensor) -> Result<Tensor> {
        Self::check_patch(patch.data())?;
        let spectrum = rfft_amplitude_raw(patch.data());
        Ok(Tensor::from_vec(self.frequency.forward(&spectrum).0))
    }

    fn embed_patch(&self, patch: &[f64], out: &mut [f64]) -> TokenCache {
        let (z_time, temporal) = self.temporal.forward(patch);
        let h = self.d / 2;
        let mut fused_input = vec![0.0; self.d];
        fused_input[..h].copy_from_slice(&z_time);
        let frequency = if self.lambda_f != 0.0 {
            let spectrum = rfft_amplitude_raw(patch);
            let (z_freq, fc) = self.frequency.forward(&spectrum);
            for (dst, v) in fused_input[h..].iter_mut().zip(&z_freq) {
                *dst = self.lambda_f * v;
            }
            Some(fc)
        } else {
            None
        };
        linear_raw(
            &fused_input,
            self.d,
            self.fusion_w.value.data(),
            self.fusion_b.value.data(),
            self.d,
            out,
        );
        TokenCache {
            temporal,
            frequency,
            fused_input,
        }
    }

    pub fn embed_segment(&self, patches: &PatchBatch) -> Result<TokenSequence> {
        Ok(self.embed_segment_cached(patches)?.0)
    }

    pub fn embed_segment_cached(&self, patches: &PatchBatch) -> Result<(TokenSequence, StfeCache)> {
        let [c, a, t] = patches.dims();
        if c == 0 || a != PATCHES_PER_SEGMENT || t != PATCH_LEN {
            return Err(Error::shape(
                "embed_segment",
                format!("patches must be [C x {PATCHES_PER_SEGMENT} x {PATCH_LEN}] with C >= 1, got [{c} x {a} x {t}]"),
            ));
        }
        self.embed_patches(patches)
    }

    /// Embeds any `[C × A × 200]` batch (A is not restricted; used by tiny test configs).
    pub fn embed_patches(&self, patches: &PatchBatch) -> Result<(TokenSequence, StfeCache)> {
        let [c, a, t] = patches.dims();
        if t != PATCH_LEN {
            return Err(Error::shape(
                "embed_patches",
                format!("patch length is {t}, expected {PATCH_LEN}"),
            ));
        }
        let d = self.d;
        let m = c * a;
        let mut tokens = vec![0.0; (m + 1) * d];
        tokens[..d].copy_from_slice(self.cls.value.data());
        let mut caches = Vec::with_capacity(m);
        let mut provenance = Vec::with_capacity(m + 1);
        provenance.push((usize::MAX, usize::MAX));
        for ch in 0..c {
            for p in 0..a {
                let row = 1 + ch * a + p;
                caches.push(self.embed_patch(patches.patch(ch, p), &mut tokens[row * d..(row + 1) * d]));
                provenance.push((ch, p));
            }
        }
        Ok((
            TokenSequence {
                tokens: Tensor::new(vec![m + 1, d], tokens)?,
                provenance,
            },
            StfeCache { tokens: caches },
        ))
    }

    /// Accumulates gradients given `dL/dtokens` (`[(1+M)×d]`).
    pub fn backward(&mut self, cache: &StfeCache, grad_tokens: &Tensor) {
        let d = self.d;
        let h = d / 2;
        let g = grad_tokens.data();
        for (cv, gv) in self.cls.grad.data_mut().iter_mut().zip(&g[..d]) {
            *cv += gv;
        }
        for (i, tc) in cache.tokens.iter().enumerate() {
            let dz = &g[(i + 1) * d..(i + 2) * d];
            let mut d_in = vec![0.0; d];
            linear_backward_raw(
                &tc.fused_input,
                d,
                self.fusion_w.value.data(),
                d,
                dz,
                Some(self.fusion_w.grad.data_mut()),
                Some(self.fusion_b.grad.data_mut()),
                Some(&mut d_in),
            );
            self.temporal.backward(&tc.temporal, &d_in[..h]);
            if let Some(fc) = &tc.frequency {
                let d_freq: Vec<f64> = d_in[h..].iter().map(|v| v * self.lambda_f).collect();
                self.frequency.backward(fc, &d_freq);
            }
        }
    }

    /// Sets the trainable flag on the frequency branch only.
    pub fn set_frequency_trainable(&mut self, trainable: bool) {
        self.frequency.visit_params_mut("", &mut |_, p| p.trainable = trainable);
    }
}

/// `W·[z_time ⓒ λ_f·z_freq] + b`.
pub fn selective_fuse(z_time: &Tensor, z_freq: &Tensor, lambda_f: f64, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&lambda_f) {
        return Err(Error::InvalidArgument(format!(
            "gate lambda_f must lie in [0, 1], got {lambda_f}"
        )));
    }
    if z_time.len() != z_freq.len() {
        return Err(Error::shape(
            "selective_fuse",
            format!(
                "temporal features have {} entries, frequency features {}",
                z_time.len(),
                z_freq.len()
            ),
        ));
    }
    let mut joined = z_time.data().to_vec();
    if lambda_f == 0.0 {
        joined.extend(std::iter::repeat(0.0).take(z_freq.len()));
    } else {
        joined.extend(z_freq.data().iter().map(|v| lambda_f * v));
    }
    crate::numerics::linear(&Tensor::from_vec(joined), w, bias)
}

impl Parameterized for Stfe {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &ParamTensor)) {
        self.temporal.visit_params(&join(prefix, "temporal"), f);
        self.frequency.visit_params(&join(prefix, "frequency"), f);
        f(&join(prefix, "fusion.W"), &self.fusion_w);
        f(&join(prefix, "fusion.b"), &self.fusion_b);
        f(&join(prefix, "cls"), &self.cls);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ParamTensor)) {
        self.temporal.visit_params_mut(&join(prefix, "temporal"), f);
        self.frequency.visit_params_mut(&join(prefix, "frequency"), f);
        f(&join(prefix, "fusion.W"), &mut self.fusion_w);
        f(&join(prefix, "fusion.b"), &mut self.fusion_b);
        f(&join(prefix, "cls"), &mut self.cls);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{conv1d, gelu, group_norm, mean_pool, rfft_amplitude};

    fn random_patch(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec((0..PATCH_LEN).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    fn random_batch(c: usize, seed: u64) -> PatchBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..c * PATCHES_PER_SEGMENT * PATCH_LEN)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        PatchBatch::new(Tensor::new(vec![c, PATCHES_PER_SEGMENT, PATCH_LEN], data).unwrap()).unwrap()
    }

    /// Recomputes a branch with the public tensor ops.
    fn branch_oracle(branch: &Branch, signal: &Tensor) -> Tensor {
        let mut x = signal.clone().reshape(&[1, signal.len()]).unwrap();
        for b in &branch.blocks {
            let y = conv1d(&x, &b.kernel.value, &b.bias.value, b.stride, b.padding).unwrap();
            x = group_norm(&gelu(&y), b.groups, &b.gamma.value, &b.beta.value, GROUP_NORM_EPS).unwrap();
        }
        mean_pool(&x)
    }

    #[test]
    fn branch_geometry() {
        let s = Stfe::new(64, 0).unwrap();
        assert_eq!(s.temporal.lengths(PATCH_LEN), vec![25, 13, 7]);
        assert_eq!(s.frequency.lengths(FREQUENCY_BINS), vec![129, 33, 17, 9]);
        let ks: Vec<usize> = s.temporal.blocks.iter().map(|b| b.kernel.value.shape()[2]).collect();
        assert_eq!(ks, TEMPORAL_KERNELS);
        let ks: Vec<usize> = s.frequency.blocks.iter().map(|b| b.kernel.value.shape()[2]).collect();
        assert_eq!(ks, FREQUENCY_KERNELS);
        assert!(s
            .temporal
            .blocks
            .iter()
            .chain(&s.frequency.blocks)
            .all(|b| b.groups == 4));
        assert_eq!([2, 4, 6, 16].map(groups_for), [1, 2, 2, 4]);
    }

    #[test]
    fn zero_patch_gives_zero_features() {
        let mut s = Stfe::new(64, 1).unwrap();
        s.visit_params_mut("", &mut |name, p| {
            if name.ends_with(".bias") || name.ends_with(".beta") {
                p.value.fill(0.0);
            }
        });
        let zero = Tensor::zeros(&[PATCH_LEN]);
        let t = s.temporal_embed(&zero).unwrap();
        assert_eq!(t.len(), 32);
        assert!(t.data().iter().all(|&v| v == 0.0));
        assert!(s.frequency_embed(&zero).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn branches_match_composed_ops() {
        let s = Stfe::new(64, 2).unwrap();
        let patch = random_patch(3);
        let t = s.temporal_embed(&patch).unwrap();
        assert!(t.max_abs_diff(&branch_oracle(&s.temporal, &patch)) <= 1e-12);
        let f = s.frequency_embed(&patch).unwrap();
        let spectrum = rfft_amplitude(&patch);
        assert!(f.max_abs_diff(&branch_oracle(&s.frequency, &spectrum)) <= 1e-12);
    }

    #[test]
    fn frequency_features_ignore_circular_shift() {
        // with T equal to the padded length the amplitude spectrum is shift-invariant
        let s = Stfe::new(16, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut shifted = x.clone();
        shifted.rotate_right(37);
        let a = s.frequency.forward(&rfft_amplitude_raw(&x)).0;
        let b = s.frequency.forward(&rfft_amplitude_raw(&shifted)).0;
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-9);
        }
    }

    #[test]
    fn rejects_wrong_patch_length() {
        let s = Stfe::new(16, 0).unwrap();
        assert!(s.temporal_embed(&Tensor::zeros(&[199])).is_err());
        assert!(s.frequency_embed(&Tensor::zeros(&[256])).is_err());
    }

    #[test]
    fn gate_off_ignores_frequency_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let zt = Tensor::from_vec((0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
        let zf = Tensor::from_vec((0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
        let w = Tensor::new(vec![16, 16], (0..256).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let b = Tensor::from_vec((0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
        let base = selective_fuse(&zt, &zf, 0.0, &w, &b).unwrap();
        let other = selective_fuse(&zt, &zf.map(|v| v * 1e6 - 3.0), 0.0, &w, &b).unwrap();
        assert_eq!(base, other);
        let mut padded = zt.data().to_vec();
        padded.extend([0.0; 8]);
        assert_eq!(
            base,
            crate::numerics::linear(&Tensor::from_vec(padded), &w, &b).unwrap()
        );
    }

    #[test]
    fn gate_on_identity_concatenates() {
        let zt = Tensor::from_vec(vec![1.0, 2.0]);
        let zf = Tensor::from_vec(vec![3.0, -4.0]);
        let y = selective_fuse(&zt, &zf, 1.0, &Tensor::identity(4), &Tensor::zeros(&[4])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, -4.0]);
        let half = selective_fuse(&zt, &zf, 0.5, &Tensor::identity(4), &Tensor::zeros(&[4])).unwrap();
        assert_eq!(half.data(), &[1.0, 2.0, 1.5, -2.0]);
        assert!(selective_fuse(&zt, &zf, 1.5, &Tensor::identity(4), &Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn segment_token_layout() {
        let mut s = Stfe::new(16, 7).unwrap();
        s.set_lambda_f(1.0).unwrap();
        let batch = random_batch(2, 8);
        let seq = s.embed_segment(&batch).unwrap();
        assert_eq!(seq.tokens.shape(), &[21, 16]);
        assert_eq!(seq.tokens.row(0), s.cls.value.data());
        for ch in 0..2 {
            for p in 0..PATCHES_PER_SEGMENT {
                let patch = Tensor::from_vec(batch.patch(ch, p).to_vec());
                let expected = selective_fuse(
                    &s.temporal_embed(&patch).unwrap(),
                    &s.frequency_embed(&patch).unwrap(),
                    1.0,
                    &s.fusion_w.value,
                    &s.fusion_b.value,
                )
                .unwrap();
                let row = 1 + ch * PATCHES_PER_SEGMENT + p;
                assert!(Tensor::from_vec(seq.tokens.row(row).to_vec()).max_abs_diff(&expected) <= 1e-12);
                assert_eq!(seq.provenance[row], (ch, p));
            }
        }
    }

    #[test]
    fn channel_permutation_permutes_rows() {
        let mut s = Stfe::new(16, 9).unwrap();
        s.set_lambda_f(1.0).unwrap();
        let batch = random_batch(3, 10);
        let seq = s.embed_segment(&batch).unwrap();
        let perm = [2usize, 0, 1];
        let mut data = Vec::new();
        for &c in &perm {
            for p in 0..PATCHES_PER_SEGMENT {
                data.extend_from_slice(batch.patch(c, p));
            }
        }
        let permuted = PatchBatch::new(Tensor::new(vec![3, PATCHES_PER_SEGMENT, PATCH_LEN], data).unwrap()).unwrap();
        let seq2 = s.embed_segment(&permuted).unwrap();
        assert_eq!(seq2.tokens.row(0), seq.tokens.row(0));
        for (new_c, &old_c) in perm.iter().enumerate() {
            for p in 0..PATCHES_PER_SEGMENT {
                assert_eq!(
                    seq2.tokens.row(1 + new_c * PATCHES_PER_SEGMENT + p),
                    seq.tokens.row(1 + old_c * PATCHES_PER_SEGMENT + p)
                );
            }
        }
    }

    #[test]
    fn shape_contract_across_channel_counts() {
        let s = Stfe::new(16, 11).unwrap();
        for c in [1usize, 5, 23] {
            let seq = s.embed_segment(&random_batch(c, c as u64)).unwrap();
            assert_eq!(seq.tokens.shape(), &[c * PATCHES_PER_SEGMENT + 1, 16]);
        }
    }

    #[test]
    fn gate_bounds() {
        let mut s = Stfe::new(16, 0).unwrap();
        assert!(s.set_lambda_f(-0.1).is_err());
        assert!(s.set_lambda_f(1.01).is_err());
        assert_eq!(s.lambda_f(), 0.0);
    }
}
