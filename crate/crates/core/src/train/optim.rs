//! AdamW with linear warm-up, cosine decay and layer-wise learning-rate decay.

use std::collections::HashMap;

use crate::numerics::{ParamTensor, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    state: HashMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            state: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter; `lr(name)` gives its rate.
    pub fn step(&mut self, model: &mut dyn Parameterized, lr: &dyn Fn(&str) -> f64) {
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let state = &mut self.state;
        model.visit_params_mut("", &mut |name, p| {
            if !p.trainable {
                return;
            }
            let mom = state.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
            });
            update(p, mom, lr(name), c, bc1, bc2);
        });
    }
}

fn update(p: &mut ParamTensor, mom: &mut Moments, lr: f64, c: AdamWConfig, bc1: f64, bc2: f64) {
    let grads = p.grad.data();
    let values = p.value.data_mut();
    for i in 0..values.len() {
        let g = grads[i];
        mom.m[i] = c.beta1 * mom.m[i] + (1.0 - c.beta1) * g;
        mom.v[i] = c.beta2 * mom.v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = mom.m[i] / bc1;
        let v_hat = mom.v[i] / bc2;
        let w = values[i];
        values[i] = w - lr * c.weight_decay * w - lr * m_hat / (v_hat.sqrt() + c.eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub layer_decay: f64,
    pub num_layers: usize,
}

impl Schedule {
    pub fn lr(&self, step: usize, layer: usize) -> f64 {
        lr_at_step(
            step,
            self.total_steps,
            self.base_lr,
            self.warmup_frac,
            layer,
            self.layer_decay,
            self.num_layers,
        )
    }
}

/// Warm-up to `base` over `warmup_frac · total` steps, cosine decay to 0,
/// scaled by `decay^(num_layers − layer)`.
pub fn lr_at_step(
    step: usize,
    total: usize,
    base: f64,
    warmup_frac: f64,
    layer: usize,
    decay: f64,
    num_layers: usize,
) -> f64 {
    let mult = decay.powi(num_layers.saturating_sub(layer) as i32);
    if total == 0 {
        return 0.0;
    }
    let step = step.min(total) as f64;
    let total = total as f64;
    let warm = warmup_frac * total;
    let lr = if step < warm {
        base * step / warm
    } else if total > warm {
        let progress = (step - warm) / (total - warm);
        0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
    } else {
        base
    };
    lr * mult
}

/// Depth of a parameter for layer decay: embeddings at 0, encoder layer `i`
/// at `i`, final norm and head at `num_layers`.
pub fn layer_index(name: &str, num_layers: usize) -> usize {
    if let Some(rest) = name.strip_prefix("enc.layer") {
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        return digits.parse().unwrap_or(0);
    }
    if name.starts_with("head") || name.starts_with("enc.final_ln") {
        num_layers
    } else {
        0
    }
}
