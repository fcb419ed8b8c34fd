//! The synthetic tasks are learnable and their anomaly types are dissociated.

use ndx_core::signal::{PipelineConfig, TARGET_RATE};
use ndx_core::synth::{band_power, build_corpus, CorpusSpec};
use ndx_core::train::{roc_auc, Corpus, Dataset};

/// Mean 18–25 Hz periodogram power across channels of each filtered, unstandardized segment.
fn band_feature(ds: &Dataset) -> Vec<f64> {
    ds.samples
        .iter()
        .map(|s| {
            let flat = s.patches.flatten();
            let c = flat.rows();
            (0..c)
                .map(|ch| band_power(flat.row(ch), TARGET_RATE, 18.0, 25.0))
                .sum::<f64>()
                / c as f64
        })
        .collect()
}

fn load(spec: &CorpusSpec) -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    build_corpus(spec, dir.path()).unwrap();
    Corpus::load(
        dir.path(),
        &PipelineConfig {
            standardize: false,
            ..PipelineConfig::default()
        },
    )
    .unwrap()
}

#[test]
fn rhythm_is_separable_by_band_power() {
    let corpus = load(&CorpusSpec::stage2(0));
    assert_eq!(corpus.train.len() + corpus.val.len() + corpus.test.len(), 200);
    let auc = roc_auc(&band_feature(&corpus.test), &corpus.test.labels());
    println!("band-power ROC-AUC, rhythm vs control: {auc:.4}");
    assert!(auc >= 0.95, "{auc}");
}

#[test]
fn spikes_are_not_separable_by_band_power() {
    let spec = CorpusSpec {
        negatives: 100,
        positives: 100,
        ..CorpusSpec::stage1(0)
    };
    let corpus = load(&spec);
    let mut all = corpus.train.clone();
    all.samples.extend(corpus.val.samples.iter().cloned());
    all.samples.extend(corpus.test.samples.iter().cloned());
    let auc = roc_auc(&band_feature(&all), &all.labels());
    println!("band-power ROC-AUC, spikes vs normal: {auc:.4}");
    // Near chance in either direction, not merely below 0.7.
    assert!((0.3..=0.7).contains(&auc), "{auc}");
}
