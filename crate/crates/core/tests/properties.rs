//! Randomized invariants of the numeric core.

use ndx_core::lora::{init_adapter, AdaptedLinear};
use ndx_core::model::{Model, ModelConfig};
use ndx_core::numerics::fft::{fft_radix2, rfft_amplitude_raw};
use ndx_core::numerics::{conv1d, group_norm, Parameterized, Tensor};
use ndx_core::signal::PatchBatch;
use ndx_core::stfe::Stfe;
use ndx_core::train::metrics::{pr_auc_definition, roc_auc_pairwise};
use ndx_core::train::{pr_auc, roc_auc};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn instance(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> (Vec<f64>, Vec<bool>) {
    let scores = (0..n)
        .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
        .collect();
    let labels = (0..n).map(|_| rng.random_bool(0.4)).collect();
    (scores, labels)
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_preserves_outputs(seed in any::<u64>(), d in 1usize..=64, k in 1usize..=64, r in 1usize..=8) {
        prop_assume!(r <= d.min(k));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = AdaptedLinear::new(random(&[d, k], &mut rng), random(&[d], &mut rng)).unwrap();
        let mut a = init_adapter(d, k, r, 2.0 * r as f64, seed ^ 1).unwrap();
        a.b.value = random(&[d, r], &mut rng);
        layer.attach(a).unwrap();
        let x = random(&[10, k], &mut rng);
        let before = layer.forward(&x).unwrap();
        layer.merge_all("stage1").unwrap();
        let after = layer.forward(&x).unwrap();
        prop_assert!(before.max_abs_diff(&after) <= 1e-12);
        prop_assert_eq!(layer.merge_log.len(), 1);
    }

    #[test]
    fn conv_is_linear_in_input(seed in any::<u64>(), len in 8usize..64, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[2, len], &mut rng);
        let y = random(&[2, len], &mut rng);
        let k = random(&[3, 2, 5], &mut rng);
        let zero = Tensor::zeros(&[3]);
        let mut mix = x.clone();
        mix.data_mut().iter_mut().zip(y.data()).for_each(|(m, &v)| *m = a * *m + b * v);
        let lhs = conv1d(&mix, &k, &zero, 2, 2).unwrap();
        let cx = conv1d(&x, &k, &zero, 2, 2).unwrap();
        let cy = conv1d(&y, &k, &zero, 2, 2).unwrap();
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a * p + b * q)).abs() <= 1e-12);
        }
    }

    #[test]
    fn parseval(seed in any::<u64>(), bits in 1u32..10) {
        let n = 1usize << bits;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut re = x.clone();
        let mut im = vec![0.0; n];
        fft_radix2(&mut re, &mut im);
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = re.iter().zip(&im).map(|(r, i)| r * r + i * i).sum::<f64>() / n as f64;
        prop_assert!((time - freq).abs() <= 1e-9 * time.max(1.0));
    }

    #[test]
    fn amplitude_spectrum_ignores_sign(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert_eq!(rfft_amplitude_raw(&x), rfft_amplitude_raw(&neg));
    }

    #[test]
    fn group_norm_ignores_per_group_shift(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[8, 13], &mut rng);
        let gamma = random(&[8], &mut rng);
        let beta = random(&[8], &mut rng);
        let mut shifted = x.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v += shift);
        let a = group_norm(&x, 4, &gamma, &beta, 1e-5).unwrap();
        let b = group_norm(&shifted, 4, &gamma, &beta, 1e-5).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-9);
    }

    #[test]
    fn roc_and_pr_match_brute_force(seed in any::<u64>(), n in 1usize..=500, levels in 1u32..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, y) = instance(&mut rng, n, levels);
        prop_assert!(same(roc_auc(&s, &y), roc_auc_pairwise(&s, &y)));
        prop_assert!(same(pr_auc(&s, &y), pr_auc_definition(&s, &y)));
    }

    #[test]
    fn token_shape_follows_channels(c in 1usize..=23, seed in any::<u64>()) {
        let stfe = Stfe::new(8, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = PatchBatch::new(random(&[c, 10, 200], &mut rng)).unwrap();
        let seq = stfe.embed_segment(&p).unwrap();
        prop_assert_eq!(seq.tokens.shape(), &[1 + 10 * c, 8][..]);
        prop_assert_eq!(seq.provenance[1 + 10 * c - 1], (c - 1, 9));
    }
}

/// Logits move continuously with the gate, including the skip at exactly 0.
#[test]
fn gate_is_continuous() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut m = Model::new(ModelConfig::tiny(), 3).unwrap();
    m.head.base.value = random(&[2, 8], &mut rng);
    let p = PatchBatch::new(random(&[2, 2, 200], &mut rng)).unwrap();
    let at = |m: &mut Model, l: f64| {
        m.stfe.set_lambda_f(l).unwrap();
        m.logits(&p).unwrap()
    };
    for l in [0.0, 0.25, 0.5, 0.999] {
        let a = at(&mut m, l);
        let b = at(&mut m, l + 1e-7);
        assert!((a[0] - b[0]).abs() < 1e-5 && (a[1] - b[1]).abs() < 1e-5, "jump at {l}");
        assert!(a != b, "gate has no effect at {l}");
    }
}

#[test]
fn same_seed_same_model() {
    let a = Model::new(ModelConfig::default(), 11).unwrap();
    let b = Model::new(ModelConfig::default(), 11).unwrap();
    assert_eq!(a, b);
    let c = Model::new(ModelConfig::default(), 12).unwrap();
    let mut differs = false;
    let names_a = a.param_names();
    assert_eq!(names_a, c.param_names());
    a.visit_params("", &mut |n, p| {
        c.visit_params("", &mut |m, q| {
            if n == m && p.value != q.value {
                differs = true;
            }
        })
    });
    assert!(differs);
}
