//! Low-rank adapters on frozen linear maps.
//!
//! An [`AdaptedLinear`] computes
//!
//! ```text
//! h = W₀·x + b + Σ_i (α_i / r_i) · B_i·(A_i·x)
//! ```
//!
//! Merging an adapter folds its dense delta into `W₀` and drops it from the
//! live list, leaving the function unchanged. Further adapters can then be
//! stacked on the merged base.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::ops::{linear_backward_raw, linear_raw};
use crate::numerics::{join, ParamTensor, Parameterized, Tensor};

pub const ADAPTER_INIT_STD: f64 = 0.02;

/// Low-rank delta `scaling · B·A_lo` with `B: [d×r]`, `A_lo: [r×k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub b: ParamTensor,
    pub a: ParamTensor,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraAdapter {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn out_dim(&self) -> usize {
        self.b.value.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.a.value.shape()[1]
    }

    /// Dense `scaling · B·A_lo`, shape `[d×k]`.
    pub fn dense_delta(&self) -> Tensor {
        let mut delta = self.b.value.matmul(&self.a.value).expect("adapter factors agree");
        let s = self.scaling();
        delta.data_mut().iter_mut().for_each(|v| *v *= s);
        delta
    }
}

/// Fresh adapter with `B = 0` and `A_lo ~ N(0, 0.02²)`.
pub fn init_adapter(d: usize, k: usize, rank: usize, alpha: f64, seed: u64) -> Result<LoraAdapter> {
    if rank == 0 || rank > d.min(k) {
        return Err(Error::InvalidArgument(format!(
            "adapter rank {rank} must be in 1..={} for a {d}x{k} matrix",
            d.min(k)
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "adapter alpha must be positive, got {alpha}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, ADAPTER_INIT_STD).expect("valid std");
    let a: Vec<f64> = (0..rank * k).map(|_| normal.sample(&mut rng)).collect();
    Ok(LoraAdapter {
        b: ParamTensor::zeros(&[d, rank]),
        a: ParamTensor::new(Tensor::new(vec![rank, k], a)?),
        rank,
        alpha,
    })
}

/// One entry of a layer's merge history.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeRecord {
    pub stage: String,
    pub rank: usize,
    pub alpha: f64,
}

/// A linear map `[..×k] → [..×d]` with a stack of live adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedLinear {
    pub base: ParamTensor,
    pub bias: ParamTensor,
    pub adapters: Vec<LoraAdapter>,
    pub merge_log: Vec<MergeRecord>,
}

/// Forward intermediates needed by [`AdaptedLinear::backward`].
#[derive(Debug, Clone, Default)]
pub struct LinearCache {
    /// `A_i·x` per adapter, `[n×r_i]`.
    projected: Vec<Vec<f64>>,
}

impl AdaptedLinear {
    pub fn new(base: Tensor, bias: Tensor) -> Result<Self> {
        if base.rank() != 2 || bias.len() != base.shape()[0] {
            return Err(Error::shape(
                "adapted_linear",
                format!("base {:?} with bias of length {}", base.shape(), bias.len()),
            ));
        }
        Ok(AdaptedLinear {
            base: ParamTensor::new(base),
            bias: ParamTensor::new(bias),
            adapters: Vec::new(),
            merge_log: Vec::new(),
        })
    }

    pub fn out_dim(&self) -> usize {
        self.base.value.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.base.value.shape()[1]
    }

    /// Adds an adapter on top of the current stack.
    pub fn attach(&mut self, adapter: LoraAdapter) -> Result<()> {
        if adapter.out_dim() != self.out_dim() || adapter.in_dim() != self.in_dim() {
            return Err(Error::shape(
                "attach_adapter",
                format!(
                    "adapter is {}x{}, layer is {}x{}",
                    adapter.out_dim(),
                    adapter.in_dim(),
                    self.out_dim(),
                    self.in_dim()
                ),
            ));
        }
        self.adapters.push(adapter);
        Ok(())
    }

    /// Folds adapter `which` into the base and records it in the merge log.
    pub fn merge_adapter(&mut self, which: usize, stage: &str) -> Result<()> {
        if which >= self.adapters.len() {
            return Err(Error::InvalidArgument(format!(
                "adapter index {which} out of range ({} live adapters)",
                self.adapters.len()
            )));
        }
        let adapter = self.adapters.remove(which);
        let delta = adapter.dense_delta();
        self.base.value.add_assign(&delta);
        self.merge_log.push(MergeRecord {
            stage: stage.to_string(),
            rank: adapter.rank,
            alpha: adapter.alpha,
        });
        Ok(())
    }

    pub fn merge_all(&mut self, stage: &str) -> Result<()> {
        while !self.adapters.is_empty() {
            self.merge_adapter(0, stage)?;
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (y, _) = self.forward_cached(x)?;
        Ok(y)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, LinearCache)> {
        let (d, k) = (self.out_dim(), self.in_dim());
        if x.last_dim() != k {
            return Err(Error::shape(
                "lora_forward",
                format!("trailing dimension of input is {}, layer expects {k}", x.last_dim()),
            ));
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("non-scalar input") = d;
        let mut out = vec![0.0; x.rows() * d];
        let cache = self.forward_raw(x.data(), &mut out);
        Ok((Tensor::new(shape, out)?, cache))
    }

    pub(crate) fn forward_raw(&self, x: &[f64], out: &mut [f64]) -> LinearCache {
        let (d, k) = (self.out_dim(), self.in_dim());
        linear_raw(x, k, self.base.value.data(), self.bias.value.data(), d, out);
        let n = x.len() / k;
        let mut projected = Vec::with_capacity(self.adapters.len());
        for adapter in &self.adapters {
            let r = adapter.rank;
            let mut u = vec![0.0; n * r];
            linear_raw(x, k, adapter.a.value.data(), &vec![0.0; r], r, &mut u);
            let s = adapter.scaling();
            let bm = adapter.b.value.data();
            for row in 0..n {
                let ur = &u[row * r..(row + 1) * r];
                for o in 0..d {
                    let br = &bm[o * r..(o + 1) * r];
                    let mut acc = 0.0;
                    for (bv, uv) in br.iter().zip(ur) {
                        acc += bv * uv;
                    }
                    out[row * d + o] += s * acc;
                }
            }
            projected.push(u);
        }
        LinearCache { projected }
    }

    /// Accumulates parameter gradients; adds `dL/dx` into `grad_x` when given.
    pub(crate) fn backward_raw(
        &mut self,
        x: &[f64],
        cache: &LinearCache,
        grad_out: &[f64],
        mut grad_x: Option<&mut [f64]>,
    ) {
        let (d, k) = (self.out_dim(), self.in_dim());
        let n = x.len() / k;
        let base_trainable = self.base.trainable;
        let bias_trainable = self.bias.trainable;
        linear_backward_raw(
            x,
            k,
            self.base.value.data(),
            d,
            grad_out,
            base_trainable.then(|| self.base.grad.data_mut()),
            bias_trainable.then(|| self.bias.grad.data_mut()),
            grad_x.as_deref_mut(),
        );
        for (adapter, u) in self.adapters.iter_mut().zip(&cache.projected) {
            let r = adapter.rank;
            let s = adapter.scaling();
            // du = s · dy · B   [n×r]
            let mut du = vec![0.0; n * r];
            let bm = adapter.b.value.data();
            for row in 0..n {
                for o in 0..d {
                    let g = s * grad_out[row * d + o];
                    if g == 0.0 {
                        continue;
                    }
                    let br = &bm[o * r..(o + 1) * r];
                    for (dv, bv) in du[row * r..(row + 1) * r].iter_mut().zip(br) {
                        *dv += g * bv;
                    }
                }
            }
            if adapter.b.trainable {
                let gb = adapter.b.grad.data_mut();
                for row in 0..n {
                    let ur = &u[row * r..(row + 1) * r];
                    for o in 0..d {
                        let g = s * grad_out[row * d + o];
                        for (gv, uv) in gb[o * r..(o + 1) * r].iter_mut().zip(ur) {
                            *gv += g * uv;
                        }
                    }
                }
            }
            linear_backward_raw(
                x,
                k,
                adapter.a.value.data(),
                r,
                &du,
                adapter.a.trainable.then(|| adapter.a.grad.data_mut()),
                None,
                grad_x.as_deref_mut(),
            );
        }
    }

    /// Backward pass for a tensor input; returns `dL/dx`.
    pub fn backward(&mut self, x: &Tensor, cache: &LinearCache, grad_out: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(x.shape());
        self.backward_raw(x.data(), cache, grad_out.data(), Some(dx.data_mut()));
        dx
    }

    /// Freezes the base matrix and bias, leaving adapters trainable.
    pub fn freeze_base(&mut self) {
        self.base.trainable = false;
        self.bias.trainable = false;
    }

    /// `base + Σ dense deltas` (for tests and inspection).
    pub fn effective_weight(&self) -> Tensor {
        let mut w = self.base.value.clone();
        for a in &self.adapters {
            w.add_assign(&a.dense_delta());
        }
        w
    }
}

impl Parameterized for AdaptedLinear {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &ParamTensor)) {
        f(&join(prefix, "weight"), &self.base);
        f(&join(prefix, "bias"), &self.bias);
        for (i, a) in self.adapters.iter().enumerate() {
            f(&join(prefix, &format!("lora{i}.B")), &a.b);
            f(&join(prefix, &format!("lora{i}.A")), &a.a);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ParamTensor)) {
        f(&join(prefix, "weight"), &mut self.base);
        f(&join(prefix, "bias"), &mut self.bias);
        for (i, a) in self.adapters.iter_mut().enumerate() {
            f(&join(prefix, &format!("lora{i}.B")), &mut a.b);
            f(&join(prefix, &format!("lora{i}.A")), &mut a.a);
        }
    }
}

/// `(trainable scalars, total scalars)` over every parameter of `model`.
pub fn count_trainable(model: &dyn Parameterized) -> (usize, usize) {
    let mut trainable = 0;
    let mut total = 0;
    model.visit_params("", &mut |_, p| {
        total += p.len();
        if p.trainable {
            trainable += p.len();
        }
    });
    (trainable, total)
}
