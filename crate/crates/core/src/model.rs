//! Full classifier: STFE tokens → encoder → final norm on the cls row → 2-way head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{dense, Encoder, EncoderCache, EncoderConfig, Target, INIT_STD};
use crate::error::{Error, Result};
use crate::lora::{AdaptedLinear, LinearCache};
use crate::numerics::ops::NormCache;
use crate::numerics::{derive_seed, join, ParamTensor, Parameterized, Tensor};
use crate::signal::PatchBatch;
use crate::stfe::{Stfe, StfeCache};

pub const NUM_CLASSES: usize = 2;
/// Head weights start at `INIT_STD · HEAD_INIT_SCALE`.
pub const HEAD_INIT_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<Target>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            rank: 8,
            alpha: 32.0,
            targets: Target::DEFAULT.to_vec(),
        }
    }
}

impl ModelConfig {
    /// Gradient-check size: 1 layer, d 8, 2 heads, rank 2.
    pub fn tiny() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                layers: 1,
                d: 8,
                heads: 2,
                ffn_mult: 4,
                max_tokens: 1 + 23 * 10,
            },
            rank: 2,
            alpha: 4.0,
            targets: Target::DEFAULT.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub stfe: Stfe,
    pub encoder: Encoder,
    pub head: AdaptedLinear,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ModelCache {
    stfe: Option<StfeCache>,
    encoder: EncoderCache,
    n_tokens: usize,
    cls_ln: NormCache,
    cls_norm: Vec<f64>,
    head: LinearCache,
}

impl ModelCache {
    pub fn encoder(&self) -> &EncoderCache {
        &self.encoder
    }
}

fn new_head(d: usize, seed: u64) -> AdaptedLinear {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dense(NUM_CLASSES, d, INIT_STD * HEAD_INIT_SCALE, &mut rng)
}

impl Model {
    /// Random model without adapters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let d = config.encoder.d;
        let stfe = Stfe::new(d, derive_seed(seed, 1))?;
        let encoder = Encoder::new(config.encoder.clone(), derive_seed(seed, 2))?;
        Ok(Model {
            head: new_head(d, derive_seed(seed, 3)),
            stfe,
            encoder,
            config,
        })
    }

    pub fn d(&self) -> usize {
        self.config.encoder.d
    }

    pub fn attach_lora(&mut self, seed: u64) -> Result<()> {
        let targets = self.config.targets.clone();
        self.encoder
            .attach_lora(&targets, self.config.rank, self.config.alpha, seed)
    }

    pub fn reinit_head(&mut self, seed: u64) {
        self.head = new_head(self.d(), seed);
    }

    /// Class logits for one `[C × A × 200]` segment.
    pub fn logits(&self, patches: &PatchBatch) -> Result<[f64; 2]> {
        Ok(self.forward(patches)?.0)
    }

    pub fn forward(&self, patches: &PatchBatch) -> Result<([f64; 2], ModelCache)> {
        let (seq, stfe_cache) = self.stfe.embed_patches(patches)?;
        let (logits, mut cache) = self.forward_tokens(&seq.tokens)?;
        cache.stfe = Some(stfe_cache);
        Ok((logits, cache))
    }

    /// Classifies precomputed STFE tokens.
    pub fn forward_tokens(&self, tokens: &Tensor) -> Result<([f64; 2], ModelCache)> {
        let (hidden, encoder) = self.encoder.forward_cached(tokens)?;
        let d = self.d();
        let mut cls_norm = vec![0.0; d];
        let cls_ln = self.encoder.final_ln.forward_raw(hidden.row(0), &mut cls_norm);
        let mut logits = [0.0; 2];
        let head = self.head.forward_raw(&cls_norm, &mut logits);
        Ok((
            logits,
            ModelCache {
                stfe: None,
                encoder,
                n_tokens: tokens.shape()[0],
                cls_ln,
                cls_norm,
                head,
            },
        ))
    }

    fn stfe_trainable(&self) -> bool {
        let mut any = false;
        self.stfe.visit_params("", &mut |_, p| any |= p.trainable);
        any
    }

    /// Accumulates parameter gradients for `dL/dlogits`. The STFE backward
    /// is skipped when every STFE parameter is frozen.
    pub fn backward(&mut self, cache: &ModelCache, grad_logits: [f64; 2]) -> Result<()> {
        let d = self.d();
        let mut d_cls = vec![0.0; d];
        self.head
            .backward_raw(&cache.cls_norm, &cache.head, &grad_logits, Some(&mut d_cls));
        let mut grad_hidden = Tensor::zeros(&[cache.n_tokens, d]);
        self.encoder
            .final_ln
            .backward_raw(&cache.cls_ln, &d_cls, grad_hidden.row_mut(0));
        let grad_tokens = self.encoder.backward(&cache.encoder, &grad_hidden);
        if self.stfe_trainable() {
            let sc = cache.stfe.as_ref().ok_or_else(|| {
                Error::Training("STFE is trainable but the forward pass started from cached tokens".into())
            })?;
            self.stfe.backward(sc, &grad_tokens);
        }
        Ok(())
    }

    /// Every adapted matrix including the head, with checkpoint names.
    pub fn matrices(&self) -> Vec<(String, &AdaptedLinear)> {
        let mut m = self.encoder.matrices();
        m.push(("head".to_string(), &self.head));
        m
    }

    pub fn matrices_mut(&mut self) -> Vec<(String, &mut AdaptedLinear)> {
        let mut m = self.encoder.matrices_mut();
        m.push(("head".to_string(), &mut self.head));
        m
    }
}

/// `(loss, dL/dlogits)` for two-class cross-entropy.
pub fn cross_entropy(logits: [f64; 2], label: usize) -> (f64, [f64; 2]) {
    let m = logits[0].max(logits[1]);
    let z = (logits[0] - m).exp() + (logits[1] - m).exp();
    let lse = m + z.ln();
    let p = [(logits[0] - lse).exp(), (logits[1] - lse).exp()];
    let mut grad = p;
    grad[label] -= 1.0;
    (lse - logits[label], grad)
}

/// Softmax probability of class 1.
pub fn positive_probability(logits: [f64; 2]) -> f64 {
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}

impl Parameterized for Model {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &ParamTensor)) {
        self.stfe.visit_params(&join(prefix, "stfe"), f);
        self.encoder.visit_params(&join(prefix, "enc"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ParamTensor)) {
        self.stfe.visit_params_mut(&join(prefix, "stfe"), f);
        self.encoder.visit_params_mut(&join(prefix, "enc"), f);
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }
}

/// Final norm applied to one hidden row.
pub fn final_norm(encoder: &Encoder, row: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    let _: NormCache = encoder.final_ln.forward_raw(row, &mut out);
    out
}
