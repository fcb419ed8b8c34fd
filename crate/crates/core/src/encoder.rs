//! Compact pre-norm transformer encoder with LoRA injection points.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::lora::{init_adapter, AdaptedLinear, LinearCache};
use crate::numerics::ops::{
    gelu_grad_scalar, gelu_scalar, layer_norm_backward_raw, layer_norm_raw, softmax_in_place, NormCache,
};
use crate::numerics::{derive_seed, join, ParamTensor, Parameterized, Tensor};

/// Weight init std for every dense matrix, the positional table and the cls token.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub d: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub max_tokens: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            d: 64,
            heads: 4,
            ffn_mult: 4,
            max_tokens: 1 + 23 * 10,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "width {} must be a positive multiple of the head count {}",
                self.d, self.heads
            )));
        }
        if self.ffn_mult == 0 || self.max_tokens == 0 {
            return Err(Error::InvalidArgument(
                "ffn multiplier and max tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

/// Matrices that can carry adapters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Wq,
    Wk,
    Wv,
    Wo,
    Ffn1,
    Ffn2,
}

impl Target {
    pub const ALL: [Target; 6] = [
        Target::Wq,
        Target::Wk,
        Target::Wv,
        Target::Wo,
        Target::Ffn1,
        Target::Ffn2,
    ];
    pub const DEFAULT: [Target; 2] = [Target::Wq, Target::Wv];

    pub fn name(self) -> &'static str {
        match self {
            Target::Wq => "wq",
            Target::Wk => "wk",
            Target::Wv => "wv",
            Target::Wo => "wo",
            Target::Ffn1 => "ffn1",
            Target::Ffn2 => "ffn2",
        }
    }

    pub fn parse(s: &str) -> Result<Target> {
        Target::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown adapter target {s:?}")))
    }
}

/// `gamma`/`beta` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamTensor,
    pub beta: ParamTensor,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: ParamTensor::new(Tensor::filled(&[d], 1.0)),
            beta: ParamTensor::zeros(&[d]),
        }
    }

    pub(crate) fn forward_raw(&self, x: &[f64], out: &mut [f64]) -> NormCache {
        layer_norm_raw(
            x,
            self.gamma.len(),
            self.gamma.value.data(),
            self.beta.value.data(),
            out,
        )
    }

    pub(crate) fn backward_raw(&mut self, cache: &NormCache, grad_out: &[f64], grad_in: &mut [f64]) {
        let d = self.gamma.len();
        layer_norm_backward_raw(
            cache,
            d,
            self.gamma.value.data(),
            grad_out,
            self.gamma.grad.data_mut(),
            self.beta.grad.data_mut(),
            grad_in,
        );
    }
}

impl Parameterized for LayerNorm {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &ParamTensor)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ParamTensor)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Dense layer with `N(0, std²)` weights and zero bias.
pub(crate) fn dense(d: usize, k: usize, std: f64, rng: &mut ChaCha8Rng) -> AdaptedLinear {
    let normal = Normal::new(0.0, std).expect("std");
    let w = (0..d * k).map(|_| normal.sample(rng)).collect();
    AdaptedLinear::new(Tensor::new(vec![d, k], w).expect("shape"), Tensor::zeros(&[d])).expect("shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub wq: AdaptedLinear,
    pub wk: AdaptedLinear,
    pub wv: AdaptedLinear,
    pub wo: AdaptedLinear,
    pub ln2: LayerNorm,
    pub ffn1: AdaptedLinear,
    pub ffn2: AdaptedLinear,
}

impl EncoderLayer {
    fn new(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let (d, f) = (cfg.d, cfg.d * cfg.ffn_mult);
        EncoderLayer {
            ln1: LayerNorm::new(d),
            wq: dense(d, d, INIT_STD, rng),
            wk: dense(d, d, INIT_STD, rng),
            wv: dense(d, d, INIT_STD, rng),
            wo: dense(d, d, INIT_STD, rng),
            ln2: LayerNorm::new(d),
            ffn1: dense(f, d, INIT_STD, rng),
            ffn2: dense(d, f, INIT_STD, rng),
        }
    }

    pub fn target(&self, t: Target) -> &AdaptedLinear {
        match t {
            Target::Wq => &self.wq,
            Target::Wk => &self.wk,
            Target::Wv => &self.wv,
            Target::Wo => &self.wo,
            Target::Ffn1 => &self.ffn1,
            Target::Ffn2 => &self.ffn2,
        }
    }

    pub fn target_mut(&mut self, t: Target) -> &mut AdaptedLinear {
        match t {
            Target::Wq => &mut self.wq,
            Target::Wk => &mut self.wk,
            Target::Wv => &mut self.wv,
            Target::Wo => &mut self.wo,
            Target::Ffn1 => &mut self.ffn1,
            Target::Ffn2 => &mut self.ffn2,
        }
    }
}

impl Parameterized for EncoderLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &ParamTensor)) {
        self.wq.visit_params(&join(prefix, "wq"), f);
        self.wk.visit_params(&join(prefix, "wk"), f);
        self.wv.visit_params(&join(prefix, "wv"), f);
        self.wo.visit_params(&join(prefix, "wo"), f);
        self.ffn1.visit_params(&join(prefix, "ffn1"), f);
        self.ffn2.visit_params(&join(prefix, "ffn2"), f);
        self.ln1.visit_params(&join(prefix, "ln1"), f);
        self.ln2.visit_params(&join(prefix, "ln2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ParamTensor)) {
        self.wq.visit_params_mut(&join(prefix, "wq"), f);
        self.wk.visit_params_mut(&join(prefix, "wk"), f);
        self.wv.visit_params_mut(&join(prefix, "wv"), f);
        self.wo.visit_params_mut(&join(prefix, "wo"), f);
        self.ffn1.visit_params_mut(&join(prefix, "ffn1"), f);
        self.ffn2.visit_params_mut(&join(prefix, "ffn2"), f);
        self.ln1.visit_params_mut(&join(prefix, "ln1"), f);
        self.ln2.visit_params_mut(&join(prefix, "ln2"), f);
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    n: usize,
    ln1: NormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    cq: LinearCache,
    ck: LinearCache,
    cv: LinearCache,
    /// `[heads × n × n]`
    probs: Vec<f64>,
    o: Vec<f64>,
    co: LinearCache,
    ln2: NormCache,
    b: Vec<f64>,
    f1: Vec<f64>,
    c1: LinearCache,
    g: Vec<f64>,
    c2: LinearCache,
}

/// Intermediates of one [`Encoder::forward_cached`] call.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    layers: Vec<LayerCache>,
}

impl EncoderCache {
    /// Attention probabilities of layer `l`, head `h`, as an `[n × n]` tensor.
    pub fn attention(&self, l: usize, h: usize) -> Tensor {
        let c = &self.layers[l];
        let nn = c.n * c.n;
        Tensor::new(vec![c.n, c.n], c.probs[h * nn..(h + 1) * nn].to_vec()).expect("shape")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub layers: Vec<EncoderLayer>,
    /// `[max_tokens × d]`
    pub pos: ParamTensor,
    pub final_ln: LayerNorm,
}

impl Encoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..config.layers)
            .map(|_| EncoderLayer::new(&config, &mut rng))
            .collect();
        let normal = Normal::new(0.0, INIT_STD).expect("std");
        let pos = (0..config.max_tokens * config.d)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Ok(Encoder {
            pos: ParamTensor::new(Tensor::new(vec![config.max_tokens, config.d], pos)?),
            final_ln: LayerNorm::new(config.d),
            layers,
            config,
        })
    }

    /// Attaches one fresh adapter to each listed matrix of every layer.
    pub fn attach_lora(&mut self, targets: &[Target], rank: usize, alpha: f64, seed: u64) -> Result<()> {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for &t in targets {
                let m = layer.target_mut(t);
                let stream = (l * Target::ALL.len() + t as usize) as u64;
                let adapter = init_adapter(m.out_dim(), m.in_dim(), rank, alpha, derive_seed(seed, stream))?;
                m.attach(adapter)?;
            }
        }
        Ok(())
    }

    /// Every adapted matrix with its checkpoint name.
    pub fn matrices(&self) -> Vec<(String, &AdaptedLinear)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for t in Target::ALL {
                out.push((format!("enc.layer{l}.{}", t.name()), layer.target(t)));
            }
        }
        out
    }

    pub fn matrices_mut(&mut self) -> Vec<(String, &mut AdaptedLinear)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let EncoderLayer {
                wq,
                wk,
                wv,
                wo,
                ffn1,
                ffn2,
                ..
            } = layer;
            for (t, m) in Target::ALL.into_iter().zip([wq, wk, wv, wo, ffn1, ffn2]) {
                out.push((format!("enc.layer{l}.{}", t.name()), m));
            }
        }
        out
    }

    fn check_tokens(&self, tokens: &Tensor) -> Result<usize> {
        let d = self.config.d;
        if tokens.rank() != 2 || tokens.shape()[1] != d {
            return Err(Error::shape(
                "encoder",
                format!("tokens must be [n x {d}], got {:?}", tokens.shape()),
            ));
        }
        let n = tokens.shape()[0];
        if n == 0 || n > self.config.max_tokens {
            return Err(Error::InvalidArgument(format!(
                "{n} tokens exceed the positional table ({} rows)",
                self.config.max_tokens
            )));
        }
        Ok(n)
    }

    /// Hidden states `[(1+M) × d]` before the final norm.
    pub fn forward(&self, tokens: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(tokens)?.0)
    }

    pub fn forward_cached(&self, tokens: &Tensor) -> Result<(Tensor, EncoderCache)> {
        let n = self.check_tokens(tokens)?;
        let d = self.config.d;
        let mut h: Vec<f64> = tokens.data().to_vec();
        for (hv, pv) in h.iter_mut().zip(self.pos.value.data()) {
            *hv += pv;
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = self.layer_forward(layer, h, n);
            caches.push(cache);
            h = out;
        }
        Ok((Tensor::new(vec![n, d], h)?, EncoderCache { layers: caches }))
    }

    fn layer_forward(&self, layer: &EncoderLayer, input: Vec<f64>, n: usize) -> (Vec<f64>, LayerCache) {
        let d = self.config.d;
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let f = d * self.config.ffn_mult;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut a = vec![0.0; n * d];
        let ln1 = layer.ln1.forward_raw(&input, &mut a);
        let (mut q, mut k, mut v) = (vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]);
        let cq = layer.wq.forward_raw(&a, &mut q);
        let ck = layer.wk.forward_raw(&a, &mut k);
        let cv = layer.wv.forward_raw(&a, &mut v);

        let mut probs = vec![0.0; heads * n * n];
        let mut o = vec![0.0; n * d];
        for hd in 0..heads {
            let off = hd * dh;
            let p = &mut probs[hd * n * n..(hd + 1) * n * n];
            for i in 0..n {
                let qi = &q[i * d + off..i * d + off + dh];
                let row = &mut p[i * n..(i + 1) * n];
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k[j * d + off..j * d + off + dh];
                    *s = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                }
                softmax_in_place(row);
                let oi = &mut o[i * d + off..i * d + off + dh];
                for (j, &pij) in row.iter().enumerate() {
                    let vj = &v[j * d + off..j * d + off + dh];
                    for (ov, vv) in oi.iter_mut().zip(vj) {
                        *ov += pij * vv;
                    }
                }
            }
        }

        let mut h1 = vec![0.0; n * d];
        let co = layer.wo.forward_raw(&o, &mut h1);
        for (hv, iv) in h1.iter_mut().zip(&input) {
            *hv += iv;
        }
        let mut b = vec![0.0; n * d];
        let ln2 = layer.ln2.forward_raw(&h1, &mut b);
        let mut f1 = vec![0.0; n * f];
        let c1 = layer.ffn1.forward_raw(&b, &mut f1);
        let g: Vec<f64> = f1.iter().map(|&x| gelu_scalar(x)).collect();
        let mut out = vec![0.0; n * d];
        let c2 = layer.ffn2.forward_raw(&g, &mut out);
        for (ov, hv) in out.iter_mut().zip(&h1) {
            *ov += hv;
        }
        let cache = LayerCache {
            n,
            ln1,
            a,
            q,
            k,
            v,
            cq,
            ck,
            cv,
            probs,
            o,
            co,
            ln2,
            b,
            f1,
            c1,
            g,
            c2,
        };
        (out, cache)
    }

    /// Accumulates gradients for `dL/dhidden` and returns `dL/dtokens`.
    pub fn backward(&mut self, cache: &EncoderCache, grad_hidden: &Tensor) -> Tensor {
        let d = self.config.d;
        let mut grad = grad_hidden.data().to_vec();
        let n = grad.len() / d;
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            // Feed-forward block.
            let mut dh1 = grad.clone();
            let mut dg = vec![0.0; c.g.len()];
            layer.ffn2.backward_raw(&c.g, &c.c2, &grad, Some(&mut dg));
            for (gv, &x) in dg.iter_mut().zip(&c.f1) {
                *gv *= gelu_grad_scalar(x);
            }
            let mut db = vec![0.0; n * d];
            layer.ffn1.backward_raw(&c.b, &c.c1, &dg, Some(&mut db));
            layer.ln2.backward_raw(&c.ln2, &db, &mut dh1);

            // Attention block.
            let mut d_o = vec![0.0; n * d];
            layer.wo.backward_raw(&c.o, &c.co, &dh1, Some(&mut d_o));
            let (mut dq, mut dk, mut dv) = (vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]);
            let mut ds = vec![0.0; n];
            for hd in 0..heads {
                let off = hd * dh;
                let p = &c.probs[hd * n * n..(hd + 1) * n * n];
                for i in 0..n {
                    let doi = &d_o[i * d + off..i * d + off + dh];
                    let prow = &p[i * n..(i + 1) * n];
                    let mut dot = 0.0;
                    for j in 0..n {
                        let vj = &c.v[j * d + off..j * d + off + dh];
                        let dp: f64 = doi.iter().zip(vj).map(|(x, y)| x * y).sum();
                        ds[j] = dp;
                        dot += dp * prow[j];
                        let dvj = &mut dv[j * d + off..j * d + off + dh];
                        for (g, ov) in dvj.iter_mut().zip(doi) {
                            *g += prow[j] * ov;
                        }
                    }
                    for j in 0..n {
                        let s = scale * prow[j] * (ds[j] - dot);
                        if s == 0.0 {
                            continue;
                        }
                        let kj = &c.k[j * d + off..j * d + off + dh];
                        let qi = &c.q[i * d + off..i * d + off + dh];
                        let dqi = &mut dq[i * d + off..i * d + off + dh];
                        for (g, kv) in dqi.iter_mut().zip(kj) {
                            *g += s * kv;
                        }
                        let dkj = &mut dk[j * d + off..j * d + off + dh];
                        for (g, qv) in dkj.iter_mut().zip(qi) {
                            *g += s * qv;
                        }
                    }
                }
            }
            let mut da = vec![0.0; n * d];
            layer.wq.backward_raw(&c.a, &c.cq, &dq, Some(&mut da));
            layer.wk.backward_raw(&c.a, &c.ck, &dk, Some(&mut da));
            layer.wv.backward_raw(&c.a, &c.cv, &dv, Some(&mut da));
            let mut dinput = dh1;
            layer.ln1.backward_raw(&c.ln1, &da, &mut dinput);
            grad = dinput;
        }
        if self.pos.trainable {
            for (g, v) in self.pos.grad.data_mut().iter_mut().zip(&grad) {
                *g += v;
            }
        }
        Tensor::new(vec![n, d], grad).expect("shape")
    }
}

impl Parameterized for Encoder {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &ParamTensor)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit_params(&join(prefix, &format!("layer{i}")), f);
        }
        f(&join(prefix, "pos"), &self.pos);
        self.final_ln.visit_params(&join(prefix, "final_ln"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ParamTensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params_mut(&join(prefix, &format!("layer{i}")), f);
        }
        f(&join(prefix, "pos"), &mut self.pos);
        self.final_ln.visit_params_mut(&join(prefix, "final_ln"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tokens(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn config(layers: usize) -> EncoderConfig {
        EncoderConfig {
            layers,
            d: 16,
            heads: 4,
            ffn_mult: 2,
            max_tokens: 12,
        }
    }

    #[test]
    fn empty_stack_adds_positions() {
        let enc = Encoder::new(config(0), 3).unwrap();
        let x = random_tokens(5, 16, 1);
        let y = enc.forward(&x).unwrap();
        for i in 0..5 {
            for j in 0..16 {
                assert_eq!(y.row(i)[j], x.row(i)[j] + enc.pos.value.row(i)[j]);
            }
        }
    }

    #[test]
    fn single_token_attention_is_the_value_path() {
        let mut enc = Encoder::new(config(1), 4).unwrap();
        enc.pos.value.fill(0.0);
        let x = random_tokens(1, 16, 2);
        let y = enc.forward(&x).unwrap();

        let l = &enc.layers[0];
        let ln = |p: &LayerNorm, v: &[f64]| {
            let mut o = vec![0.0; v.len()];
            p.forward_raw(v, &mut o);
            Tensor::new(vec![1, v.len()], o).unwrap()
        };
        let a = ln(&l.ln1, x.data());
        let v = l.wv.forward(&a).unwrap();
        let mut h1 = l.wo.forward(&v).unwrap();
        h1.add_assign(&x);
        let b = ln(&l.ln2, h1.data());
        let g = l.ffn1.forward(&b).unwrap().map(gelu_scalar);
        let mut expected = l.ffn2.forward(&g).unwrap();
        expected.add_assign(&h1);
        assert!(y.max_abs_diff(&expected) <= 1e-12);
    }

    #[test]
    fn attention_rows_are_distributions() {
        let enc = Encoder::new(config(2), 5).unwrap();
        let (_, cache) = enc.forward_cached(&random_tokens(9, 16, 3)).unwrap();
        for l in 0..2 {
            for h in 0..4 {
                let p = cache.attention(l, h);
                for r in 0..9 {
                    assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn token_overflow_is_rejected() {
        let enc = Encoder::new(config(1), 5).unwrap();
        assert!(enc.forward(&random_tokens(13, 16, 3)).is_err());
        assert!(enc.forward(&random_tokens(3, 8, 3)).is_err());
    }

    #[test]
    fn attach_leaves_forward_unchanged() {
        let mut enc = Encoder::new(config(2), 6).unwrap();
        let x = random_tokens(7, 16, 4);
        let before = enc.forward(&x).unwrap();
        enc.attach_lora(&Target::DEFAULT, 4, 8.0, 11).unwrap();
        assert_eq!(enc.forward(&x).unwrap(), before);
        assert_eq!(enc.layers[1].wq.adapters.len(), 1);
        assert!(enc.layers[1].wk.adapters.is_empty());
        assert!(Target::parse("wz").is_err());
        assert_eq!(Target::parse("FFN1").unwrap(), Target::Ffn1);
    }

    #[test]
    fn adapter_on_default_width_has_1024_trainable() {
        let mut enc = Encoder::new(EncoderConfig::default(), 0).unwrap();
        enc.attach_lora(&[Target::Wq], 8, 32.0, 0).unwrap();
        let wq = &enc.layers[0].wq;
        let n: usize = wq.adapters.iter().map(|a| a.a.len() + a.b.len()).sum();
        assert_eq!(n, 1024);
        assert_eq!(wq.adapters[0].scaling(), 4.0);
    }

    #[test]
    fn stacked_adapters_add() {
        let mut enc = Encoder::new(config(1), 7).unwrap();
        enc.attach_lora(&[Target::Wv], 2, 4.0, 1).unwrap();
        enc.attach_lora(&[Target::Wv], 3, 6.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for a in &mut enc.layers[0].wv.adapters {
            a.b.value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let wv = &enc.layers[0].wv;
        let mut dense = wv.base.value.clone();
        dense.add_assign(&wv.adapters[0].dense_delta());
        dense.add_assign(&wv.adapters[1].dense_delta());
        assert!(wv.effective_weight().max_abs_diff(&dense) <= 1e-12);
        let x = random_tokens(4, 16, 5);
        let direct = crate::numerics::linear(&x, &dense, &wv.bias.value).unwrap();
        assert!(wv.forward(&x).unwrap().max_abs_diff(&direct) <= 1e-12);
    }

    #[test]
    fn positions_break_permutation_symmetry() {
        let mut enc = Encoder::new(config(2), 8).unwrap();
        let x = random_tokens(6, 16, 6);
        let mut perm = x.clone();
        for (dst, src) in [1usize, 2, 3, 4, 5].iter().zip([5usize, 3, 1, 4, 2]) {
            perm.row_mut(*dst).copy_from_slice(x.row(src));
        }
        let cls = |e: &Encoder, t: &Tensor| e.forward(t).unwrap().row(0).to_vec();
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff(&cls(&enc, &x), &cls(&enc, &perm)) > 1e-9);
        enc.pos.value.fill(0.0);
        assert!(diff(&cls(&enc, &x), &cls(&enc, &perm)) <= 1e-9);
    }

    #[test]
    fn parameter_names_follow_layout() {
        let enc = Encoder::new(config(1), 0).unwrap();
        let names = enc.param_names();
        for n in [
            "layer0.wq.weight",
            "layer0.ffn2.bias",
            "layer0.ln1.gamma",
            "pos",
            "final_ln.beta",
        ] {
            assert!(names.iter().any(|x| x == n), "{n}");
        }
    }
}
