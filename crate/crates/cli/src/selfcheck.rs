//! Built-in conformance suites.

use ndx_core::lora::{init_adapter, AdaptedLinear};
use ndx_core::model::{cross_entropy, Model, ModelConfig};
use ndx_core::numerics::{check_param_gradients, Parameterized, Tensor};
use ndx_core::signal::PatchBatch;
use ndx_core::train::metrics::{pr_auc_definition, roc_auc_pairwise};
use ndx_core::train::{pr_auc, roc_auc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;

/// Operation groups a gradient fault can be planted in.
pub const OPS: [&str; 9] = [
    "conv1d",
    "group_norm",
    "fusion",
    "embedding",
    "layer_norm",
    "attention",
    "feed_forward",
    "lora",
    "head",
];

/// The operation whose backward pass produces the gradient of `param`.
pub fn op_of(param: &str) -> &'static str {
    if param.contains(".lora") {
        "lora"
    } else if param.starts_with("head") {
        "head"
    } else if param.starts_with("stfe.fusion") {
        "fusion"
    } else if param == "stfe.cls" || param == "enc.pos" {
        "embedding"
    } else if param.starts_with("stfe.") {
        if param.ends_with(".gamma") || param.ends_with(".beta") {
            "group_norm"
        } else {
            "conv1d"
        }
    } else if param.contains(".ln") || param.contains("final_ln") {
        "layer_norm"
    } else if param.contains(".ffn") {
        "feed_forward"
    } else {
        "attention"
    }
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{}",
            self.name,
            if self.passed { "pass" } else { "FAIL" },
            self.detail
        )
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .expect("shape")
}

/// Tiny model with non-zero adapters everywhere, including the head.
pub fn tiny_model(lambda_f: f64) -> Model {
    let mut m = Model::new(ModelConfig::tiny(), 5).expect("tiny config");
    m.attach_lora(6).expect("adapters");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (_, lin) in m.matrices_mut() {
        for a in &mut lin.adapters {
            a.b.value = random(a.b.value.shape(), &mut rng, 0.3);
        }
    }
    m.head
        .attach(init_adapter(2, 8, 1, 2.0, 3).expect("head adapter"))
        .expect("attach");
    m.head.base.value = random(&[2, 8], &mut rng, 0.5);
    m.stfe.set_lambda_f(lambda_f).expect("gate");
    m
}

/// Finite differences over every trainable parameter of the tiny model
/// (1 layer, d 8, 2 heads, one channel, two patches). `fault` doubles the
/// analytic gradient of one operation group.
pub fn gradients(fault: Option<&str>) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = PatchBatch::new(random(&[1, 2, 200], &mut rng, 1.0)).expect("patches");
    let model = tiny_model(1.0);
    let label = 1;
    let reports = check_param_gradients(
        &model,
        |m: &mut Model| {
            m.zero_grad();
            let (logits, cache) = m.forward(&x)?;
            m.backward(&cache, cross_entropy(logits, label).1)?;
            if let Some(op) = fault {
                m.visit_params_mut("", &mut |n, p| {
                    if op_of(n) == op {
                        p.grad.data_mut().iter_mut().for_each(|g| *g *= 2.0);
                    }
                });
            }
            Ok(())
        },
        |m: &Model| Ok(cross_entropy(m.logits(&x)?, label).0),
        GRAD_EPS,
    );
    let reports = match reports {
        Ok(r) => r,
        Err(e) => {
            return SuiteResult {
                name: "gradients",
                passed: false,
                detail: e.to_string(),
            }
        }
    };
    let total = reports.len();
    let worst = reports
        .iter()
        .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
        .map(|(n, r)| (n.clone(), r.max_rel_error));
    let failing: Vec<&String> = reports
        .iter()
        .filter(|(_, r)| !(r.max_rel_error <= GRAD_TOLERANCE))
        .map(|(n, _)| n)
        .collect();
    let (wname, werr) = worst.unwrap_or_default();
    if failing.is_empty() {
        SuiteResult {
            name: "gradients",
            passed: true,
            detail: format!("{total} parameters, worst relative error {werr:.2e} ({wname})"),
        }
    } else {
        let mut ops: Vec<&str> = failing.iter().map(|n| op_of(n)).collect();
        ops.dedup();
        SuiteResult {
            name: "gradients",
            passed: false,
            detail: format!(
                "op {} wrong: {} of {total} parameters exceed {GRAD_TOLERANCE:e}, worst {werr:.2e} at {wname}",
                ops.join(","),
                failing.len()
            ),
        }
    }
}

/// Pre- and post-merge outputs of random adapted layers agree to 1e-12.
pub fn merge_invariance(layers: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..layers {
        let d = rng.random_range(1..=64);
        let k = rng.random_range(1..=64);
        let r = rng.random_range(1..=8usize.min(d).min(k));
        let mut layer = AdaptedLinear::new(random(&[d, k], &mut rng, 1.0), random(&[d], &mut rng, 1.0)).expect("layer");
        let mut a = init_adapter(d, k, r, rng.random_range(1.0..64.0), i as u64).expect("adapter");
        a.b.value = random(&[d, r], &mut rng, 1.0);
        layer.attach(a).expect("attach");
        let x = random(&[10, k], &mut rng, 1.0);
        let before = layer.forward(&x).expect("forward");
        layer.merge_all("check").expect("merge");
        let after = layer.forward(&x).expect("forward");
        worst = worst.max(before.max_abs_diff(&after));
    }
    SuiteResult {
        name: "merge_invariance",
        passed: worst <= 1e-12,
        detail: format!("{layers} layers x 10 inputs, max deviation {worst:.2e}"),
    }
}

/// With the gate at 0, frequency weights cannot reach the logits or receive gradient.
pub fn gate_off(segments: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base = Model::new(ModelConfig::default(), 3).expect("default model");
    let mut scrambled = base.clone();
    scrambled.stfe.frequency.visit_params_mut("", &mut |_, p| {
        p.value = random(p.value.shape(), &mut rng, 2.0);
    });
    let mut mismatch = 0;
    let mut nonzero = 0;
    for _ in 0..segments {
        let x = PatchBatch::new(random(&[2, 10, 200], &mut rng, 1.0)).expect("patches");
        let a = base.logits(&x).expect("forward");
        let (b, cache) = scrambled.forward(&x).expect("forward");
        if a[0].to_bits() != b[0].to_bits() || a[1].to_bits() != b[1].to_bits() {
            mismatch += 1;
        }
        scrambled.zero_grad();
        scrambled.backward(&cache, cross_entropy(b, 1).1).expect("backward");
        scrambled.stfe.frequency.visit_params("", &mut |_, p| {
            nonzero += p.grad.data().iter().filter(|&&g| g != 0.0).count();
        });
    }
    SuiteResult {
        name: "gate_off",
        passed: mismatch == 0 && nonzero == 0,
        detail: format!("{segments} segments, {mismatch} logit mismatches, {nonzero} non-zero frequency gradients"),
    }
}

/// ROC-AUC and PR-AUC agree bitwise with their definitions on random tied instances.
pub fn metric_oracles(instances: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    for _ in 0..instances {
        let n = rng.random_range(1..=500);
        let levels = rng.random_range(1..50u32);
        let prevalence = rng.random_range(0.05..0.95);
        let s: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(prevalence)).collect();
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan());
        if !same(roc_auc(&s, &y), roc_auc_pairwise(&s, &y)) || !same(pr_auc(&s, &y), pr_auc_definition(&s, &y)) {
            bad += 1;
        }
    }
    let worked = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]);
    SuiteResult {
        name: "metric_oracles",
        passed: bad == 0 && worked == 0.75,
        detail: format!("{instances} instances, {bad} mismatches, worked example {worked}"),
    }
}

/// Every suite in order.
pub fn run_all(fault: Option<&str>) -> Vec<SuiteResult> {
    vec![
        gradients(fault),
        merge_invariance(100),
        gate_off(20),
        metric_oracles(1000),
    ]
}
