//! Stage-1 and Stage-2 runners.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{Corpus, Dataset};
use super::metrics::Metrics;
use super::optim::{layer_index, AdamW, AdamWConfig, Schedule};
use crate::error::{Error, Result};
use crate::model::{cross_entropy, positive_probability, Model, ModelConfig};
use crate::numerics::{derive_seed, Parameterized, Tensor};

/// Merge-log stage label written when Stage-1 adapters are folded in.
pub const STAGE1_MERGE: &str = "stage1";

/// What Stage 2 does with the Stage-1 adapters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Merge, then attach fresh adapters.
    Addition,
    /// Keep training the Stage-1 adapters.
    Reuse,
    /// Merge, then train every parameter.
    FullParameter,
    /// No Stage 1: fresh adapters on a fresh model.
    None,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Addition => "addition",
            Policy::Reuse => "reuse",
            Policy::FullParameter => "full_parameter",
            Policy::None => "none",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Policy> {
        match s {
            "addition" => Ok(Policy::Addition),
            "reuse" => Ok(Policy::Reuse),
            "full_parameter" => Ok(Policy::FullParameter),
            "none" => Ok(Policy::None),
            _ => Err(Error::InvalidArgument(format!(
                "unknown adapter policy {s:?} (expected addition, reuse, full_parameter or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub stage: u8,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda_f: f64,
    pub policy: Policy,
    pub train_stfe: bool,
    pub warmup_frac: f64,
    pub layer_decay: f64,
    pub adamw: AdamWConfig,
    /// Pick the epoch with the best validation ROC-AUC instead of the last.
    pub select_best: bool,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl StageConfig {
    pub fn stage1(seed: u64) -> Self {
        StageConfig {
            stage: 1,
            epochs: 1,
            lr: 5e-4,
            batch_size: 64,
            lambda_f: 0.0,
            policy: Policy::Addition,
            train_stfe: false,
            warmup_frac: 0.1,
            layer_decay: 0.65,
            adamw: AdamWConfig::default(),
            select_best: false,
            max_steps: None,
            seed,
        }
    }

    pub fn stage2(seed: u64) -> Self {
        StageConfig {
            stage: 2,
            epochs: 20,
            lr: 1e-4,
            lambda_f: 1.0,
            train_stfe: true,
            select_best: true,
            ..StageConfig::stage1(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.stage != 1 && self.stage != 2 {
            return bad(format!("stage must be 1 or 2, got {}", self.stage));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda_f) {
            return bad(format!("lambda_f must lie in [0, 1], got {}", self.lambda_f));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return bad(format!("warm-up fraction must lie in [0, 1], got {}", self.warmup_frac));
        }
        if !(self.layer_decay > 0.0) {
            return bad(format!("layer decay must be positive, got {}", self.layer_decay));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: u8,
    pub epochs: Vec<EpochLog>,
    /// Index into `epochs` of the reported model; `None` when nothing was trained.
    pub selected: Option<usize>,
    pub val: Metrics,
    pub test: Metrics,
}

impl StageReport {
    /// `name\tvalue` lines for the reported model.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for (split, m) in [("val", &self.val), ("test", &self.test)] {
            for line in m.report().lines() {
                out.push_str(&format!("{split}_{line}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub model: Model,
    pub report: StageReport,
}

/// Segments either as raw patches or as precomputed STFE tokens.
enum Inputs<'a> {
    Patches(&'a Dataset),
    Tokens(Vec<Tensor>, &'a Dataset),
}

impl<'a> Inputs<'a> {
    fn new(model: &Model, data: &'a Dataset, cache: bool) -> Result<Inputs<'a>> {
        if !cache {
            return Ok(Inputs::Patches(data));
        }
        let tokens = data
            .samples
            .iter()
            .map(|s| Ok(model.stfe.embed_segment(&s.patches)?.tokens))
            .collect::<Result<Vec<_>>>()?;
        Ok(Inputs::Tokens(tokens, data))
    }

    fn data(&self) -> &Dataset {
        match self {
            Inputs::Patches(d) | Inputs::Tokens(_, d) => d,
        }
    }

    fn logits(&self, model: &Model, i: usize) -> Result<([f64; 2], crate::model::ModelCache)> {
        match self {
            Inputs::Patches(d) => model.forward(&d.samples[i].patches),
            Inputs::Tokens(t, _) => model.forward_tokens(&t[i]),
        }
    }

    fn metrics(&self, model: &Model) -> Result<Metrics> {
        let data = self.data();
        let mut scores = Vec::with_capacity(data.len());
        for i in 0..data.len() {
            scores.push(positive_probability(self.logits(model, i)?.0));
        }
        Ok(Metrics::compute(&scores, &data.labels()))
    }
}

/// Accuracy, ROC-AUC and PR-AUC of `model` on `data`.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty split".into()));
    }
    Inputs::Patches(data).metrics(model)
}

/// Softmax probability of the positive class for each segment.
pub fn scores(model: &Model, data: &Dataset) -> Result<Vec<f64>> {
    data.samples
        .iter()
        .map(|s| Ok(positive_probability(model.logits(&s.patches)?)))
        .collect()
}

fn check_corpus(corpus: &Corpus) -> Result<()> {
    if !corpus.train.has_both_classes() {
        return Err(Error::Training("training split must contain both classes".into()));
    }
    if corpus.val.is_empty() || corpus.test.is_empty() {
        return Err(Error::Training("validation and test splits must be non-empty".into()));
    }
    Ok(())
}

/// Sets the gate and the STFE trainable flags (frequency branch stays frozen when gated off).
fn configure_stfe(model: &mut Model, cfg: &StageConfig) -> Result<()> {
    model.stfe.set_lambda_f(cfg.lambda_f)?;
    model.stfe.set_trainable(cfg.train_stfe);
    if cfg.lambda_f == 0.0 {
        model.stfe.set_frequency_trainable(false);
    }
    Ok(())
}

fn trainable_adapters(model: &mut Model) {
    for (_, m) in model.matrices_mut() {
        for a in &mut m.adapters {
            a.a.trainable = true;
            a.b.trainable = true;
        }
    }
}

/// Stage 1: frozen STFE and encoder, fresh adapters and the head are trained.
pub fn run_stage1(mut model: Model, corpus: &Corpus, cfg: &StageConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    if cfg.stage != 1 {
        return Err(Error::InvalidArgument(format!(
            "run_stage1 needs a stage-1 config, got stage {}",
            cfg.stage
        )));
    }
    check_corpus(corpus)?;
    model.set_trainable(false);
    model.attach_lora(derive_seed(cfg.seed, 11))?;
    trainable_adapters(&mut model);
    model.head.base.trainable = true;
    model.head.bias.trainable = true;
    configure_stfe(&mut model, cfg)?;
    train(model, corpus, cfg)
}

/// Rejects Stage-1 models that Stage 2 cannot continue from.
pub fn check_stage1_model(model: &Model, policy: Policy) -> Result<()> {
    for (name, m) in model.matrices() {
        if !m.merge_log.is_empty() {
            return Err(Error::Training(format!(
                "{name} already has merged adapters; a stage-1 model has none"
            )));
        }
    }
    if matches!(policy, Policy::Addition | Policy::Reuse) {
        for (l, layer) in model.encoder.layers.iter().enumerate() {
            for &t in &model.config.targets {
                if layer.target(t).adapters.len() != 1 {
                    return Err(Error::Training(format!(
                        "enc.layer{l}.{} has {} live adapters, policy {policy} expects exactly one",
                        t.name(),
                        layer.target(t).adapters.len()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Stage 2 under `cfg.policy`. `stage1` must be given for addition, reuse and
/// full_parameter with Stage 1, and absent for `none`. `full_parameter`
/// without a Stage-1 model trains a fresh model end to end.
pub fn run_stage2(
    stage1: Option<Model>,
    model_config: &ModelConfig,
    corpus: &Corpus,
    cfg: &StageConfig,
) -> Result<StageOutcome> {
    cfg.validate()?;
    if cfg.stage != 2 {
        return Err(Error::InvalidArgument(format!(
            "run_stage2 needs a stage-2 config, got stage {}",
            cfg.stage
        )));
    }
    check_corpus(corpus)?;
    if let Some(m) = &stage1 {
        check_stage1_model(m, cfg.policy)?;
    }
    let adapter_seed = derive_seed(cfg.seed, 12);
    let mut model = match (cfg.policy, stage1) {
        (Policy::Addition, Some(mut m)) => {
            for (_, lin) in m.matrices_mut() {
                lin.merge_all(STAGE1_MERGE)?;
            }
            m.set_trainable(false);
            m.attach_lora(adapter_seed)?;
            m
        }
        (Policy::Reuse, Some(mut m)) => {
            m.set_trainable(false);
            m
        }
        (Policy::FullParameter, Some(mut m)) => {
            for (_, lin) in m.matrices_mut() {
                lin.merge_all(STAGE1_MERGE)?;
            }
            m
        }
        (Policy::FullParameter, None) => Model::new(model_config.clone(), cfg.seed)?,
        (Policy::None, None) => {
            let mut m = Model::new(model_config.clone(), cfg.seed)?;
            m.set_trainable(false);
            m.attach_lora(adapter_seed)?;
            m
        }
        (p @ (Policy::Addition | Policy::Reuse), None) => {
            return Err(Error::Training(format!("policy {p} needs a stage-1 model")));
        }
        (Policy::None, Some(_)) => {
            return Err(Error::Training(
                "policy none trains without stage 1 but a stage-1 model was given".into(),
            ));
        }
    };
    trainable_adapters(&mut model);
    model.reinit_head(derive_seed(cfg.seed, 13));
    if cfg.policy == Policy::FullParameter {
        model.set_trainable(true);
        configure_stfe(
            &mut model,
            &StageConfig {
                train_stfe: true,
                ..cfg.clone()
            },
        )?;
    } else {
        configure_stfe(&mut model, cfg)?;
    }
    train(model, corpus, cfg)
}

fn stfe_trainable(model: &Model) -> bool {
    let mut any = false;
    model.stfe.visit_params("", &mut |_, p| any |= p.trainable);
    any
}

fn train(mut model: Model, corpus: &Corpus, cfg: &StageConfig) -> Result<StageOutcome> {
    let cache = !stfe_trainable(&model);
    let train = Inputs::new(&model, &corpus.train, cache)?;
    let val = Inputs::new(&model, &corpus.val, cache)?;
    let labels = corpus.train.labels();
    let n = corpus.train.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let mut total = cfg.epochs * per_epoch;
    if let Some(cap) = cfg.max_steps {
        total = total.min(cap);
    }
    let num_layers = model.config.encoder.layers;
    let schedule = Schedule {
        base_lr: cfg.lr,
        total_steps: total + 1,
        warmup_frac: cfg.warmup_frac,
        layer_decay: cfg.layer_decay,
        num_layers,
    };
    let mut opt = AdamW::new(cfg.adamw);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 14));
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;
    let mut steps = 0;
    'outer: for epoch in 0..cfg.epochs {
        if steps >= total {
            break;
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for batch in order.chunks(cfg.batch_size) {
            if steps >= total {
                break;
            }
            model.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (logits, mc) = train.logits(&model, i)?;
                let (loss, g) = cross_entropy(logits, labels[i] as usize);
                loss_sum += loss;
                seen += 1;
                model.backward(&mc, [g[0] * scale, g[1] * scale])?;
            }
            steps += 1;
            let step = steps;
            opt.step(&mut model, &|name| schedule.lr(step, layer_index(name, num_layers)));
            if !loss_sum.is_finite() {
                return Err(Error::Training(format!("loss diverged at step {steps}")));
            }
        }
        let m = val.metrics(&model)?;
        epochs.push(EpochLog {
            epoch,
            steps,
            train_loss: loss_sum / seen.max(1) as f64,
            val: m,
        });
        if cfg.select_best {
            let better = match &best {
                None => true,
                Some((_, b, _)) => m.roc_auc > *b || (b.is_nan() && !m.roc_auc.is_nan()),
            };
            if better {
                best = Some((epochs.len() - 1, m.roc_auc, model.clone()));
            }
        }
        if steps >= total {
            break 'outer;
        }
    }
    let selected = match best {
        Some((i, _, m)) => {
            model = m;
            Some(i)
        }
        None => epochs.len().checked_sub(1),
    };
    let val_metrics = match selected {
        Some(i) => epochs[i].val,
        None => val.metrics(&model)?,
    };
    let test = Inputs::new(&model, &corpus.test, cache)?.metrics(&model)?;
    Ok(StageOutcome {
        model,
        report: StageReport {
            stage: cfg.stage,
            epochs,
            selected,
            val: val_metrics,
            test,
        },
    })
}
