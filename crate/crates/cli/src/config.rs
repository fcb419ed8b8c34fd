//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndx_core::encoder::{EncoderConfig, Target};
use ndx_core::model::ModelConfig;
use ndx_core::signal::PipelineConfig;
use ndx_core::synth::CorpusSpec;
use ndx_core::train::{Policy, StageConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("{key}: cannot parse {value:?}: {reason}")]
    Value { key: String, value: String, reason: String },
}

/// Every key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "paths.out",
        "out",
        "output directory for corpora, checkpoints and reports",
    ),
    ("corpus.seed", "0", "corpus generation seed"),
    ("corpus.channels", "2", "channels per synthetic recording"),
    ("corpus.duration_s", "20", "recording length in seconds"),
    ("corpus.rate", "256", "synthetic sampling rate in Hz"),
    (
        "corpus.stage1_negatives",
        "500",
        "normal recordings in the stage-1 corpus",
    ),
    (
        "corpus.stage1_positives",
        "500",
        "abnormal (spike) recordings in the stage-1 corpus",
    ),
    (
        "corpus.stage2_negatives",
        "50",
        "control recordings in the stage-2 corpus",
    ),
    (
        "corpus.stage2_positives",
        "50",
        "disease (rhythm) recordings in the stage-2 corpus",
    ),
    ("corpus.spike_rate", "0.5", "spike events per second"),
    (
        "corpus.spike_amplitude",
        "8",
        "spike amplitude in background standard deviations",
    ),
    ("corpus.rhythm_low", "18", "rhythm band lower edge in Hz"),
    ("corpus.rhythm_high", "25", "rhythm band upper edge in Hz"),
    ("corpus.rhythm_gain", "4", "band power gain of the rhythm anomaly"),
    ("pipeline.band_low", "0.1", "bandpass lower edge in Hz"),
    ("pipeline.band_high", "75", "bandpass upper edge in Hz"),
    ("pipeline.notch", "50", "notch frequency in Hz"),
    ("pipeline.notch_q", "30", "notch quality factor"),
    ("stfe.d", "64", "embedding width"),
    ("enc.layers", "2", "encoder layers"),
    ("enc.heads", "4", "attention heads"),
    ("enc.ffn_mult", "4", "feed-forward expansion factor"),
    ("lora.rank", "8", "adapter rank"),
    ("lora.alpha", "32", "adapter alpha"),
    ("lora.targets", "wq,wv", "adapted matrices (wq, wk, wv, wo, ffn1, ffn2)"),
    ("train.seed", "0", "model initialization and shuffling seed"),
    ("stage1.epochs", "1", "stage-1 epochs"),
    ("stage1.lr", "0.0005", "stage-1 peak learning rate"),
    ("stage1.batch", "64", "stage-1 batch size"),
    ("stage1.lambda_f", "0", "stage-1 frequency gate"),
    ("stage1.warmup", "0.1", "stage-1 warm-up fraction"),
    ("stage1.layer_decay", "0.65", "stage-1 layer-wise learning-rate decay"),
    ("stage1.weight_decay", "0.01", "stage-1 AdamW weight decay"),
    ("stage2.epochs", "20", "stage-2 epochs"),
    ("stage2.lr", "0.0001", "stage-2 peak learning rate"),
    ("stage2.batch", "64", "stage-2 batch size"),
    ("stage2.lambda_f", "1", "stage-2 frequency gate"),
    (
        "stage2.policy",
        "addition",
        "adapter policy: addition, reuse, full_parameter or none",
    ),
    ("stage2.train_stfe", "true", "train the embedding in stage 2"),
    ("stage2.warmup", "0.1", "stage-2 warm-up fraction"),
    ("stage2.layer_decay", "0.65", "stage-2 layer-wise learning-rate decay"),
    ("stage2.weight_decay", "0.01", "stage-2 AdamW weight decay"),
    ("ablation.seeds", "0,1,2,3,4", "seeds of the ablation matrix"),
    ("ablation.rows", "1,2,3,4,5,6,7,8,9,10", "ablation rows to run"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn value_err(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

impl RunConfig {
    /// Defaults overridden by `text`. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(ConfigError::UnknownKey(key.to_string())),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(key);
        v.parse().map_err(|e| value_err(key, v, e))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(key);
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| value_err(key, v, e)))
            .collect()
    }

    /// Parses every typed view once so bad values fail before any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.corpus(1)?;
        self.corpus(2)?;
        self.pipeline()?;
        self.model()?;
        self.stage(1)?;
        self.stage(2)?;
        self.ablation_seeds()?;
        self.ablation_rows()?;
        Ok(())
    }

    /// Sets both seeds.
    pub fn set_seed(&mut self, seed: u64) {
        self.values.insert("corpus.seed".into(), seed.to_string());
        self.values.insert("train.seed".into(), seed.to_string());
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("paths.out"))
    }

    pub fn corpus(&self, stage: u8) -> Result<CorpusSpec, ConfigError> {
        let seed: u64 = self.num("corpus.seed")?;
        let base = if stage == 1 {
            CorpusSpec::stage1(seed)
        } else {
            CorpusSpec::stage2(seed)
        };
        let prefix = if stage == 1 { "corpus.stage1" } else { "corpus.stage2" };
        let spec = CorpusSpec {
            channels: self.num("corpus.channels")?,
            duration_s: self.num("corpus.duration_s")?,
            rate: self.num("corpus.rate")?,
            negatives: self.num(&format!("{prefix}_negatives"))?,
            positives: self.num(&format!("{prefix}_positives"))?,
            spike_rate: self.num("corpus.spike_rate")?,
            spike_amplitude: self.num("corpus.spike_amplitude")?,
            rhythm_band: (self.num("corpus.rhythm_low")?, self.num("corpus.rhythm_high")?),
            rhythm_gain: self.num("corpus.rhythm_gain")?,
            ..base
        };
        spec.validate().map_err(|e| value_err(&format!("{prefix}_*"), "", e))?;
        Ok(spec)
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, ConfigError> {
        Ok(PipelineConfig {
            band_low: self.num("pipeline.band_low")?,
            band_high: self.num("pipeline.band_high")?,
            notch_freq: self.num("pipeline.notch")?,
            notch_q: self.num("pipeline.notch_q")?,
            ..PipelineConfig::default()
        })
    }

    pub fn model(&self) -> Result<ModelConfig, ConfigError> {
        let targets = self
            .get("lora.targets")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| Target::parse(s).map_err(|e| value_err("lora.targets", s, e)))
            .collect::<Result<Vec<_>, _>>()?;
        let m = ModelConfig {
            encoder: EncoderConfig {
                layers: self.num("enc.layers")?,
                d: self.num("stfe.d")?,
                heads: self.num("enc.heads")?,
                ffn_mult: self.num("enc.ffn_mult")?,
                ..EncoderConfig::default()
            },
            rank: self.num("lora.rank")?,
            alpha: self.num("lora.alpha")?,
            targets,
        };
        m.encoder.validate().map_err(|e| value_err("enc.*", "", e))?;
        Ok(m)
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.num("train.seed")
    }

    pub fn stage(&self, stage: u8) -> Result<StageConfig, ConfigError> {
        let seed = self.seed()?;
        let (p, base) = if stage == 1 {
            ("stage1", StageConfig::stage1(seed))
        } else {
            ("stage2", StageConfig::stage2(seed))
        };
        let key = |k: &str| format!("{p}.{k}");
        let mut cfg = StageConfig {
            epochs: self.num(&key("epochs"))?,
            lr: self.num(&key("lr"))?,
            batch_size: self.num(&key("batch"))?,
            lambda_f: self.num(&key("lambda_f"))?,
            warmup_frac: self.num(&key("warmup"))?,
            layer_decay: self.num(&key("layer_decay"))?,
            ..base
        };
        cfg.adamw.weight_decay = self.num(&key("weight_decay"))?;
        if stage == 2 {
            let v = self.get("stage2.policy");
            cfg.policy = v.parse::<Policy>().map_err(|e| value_err("stage2.policy", v, e))?;
            cfg.train_stfe = self.num("stage2.train_stfe")?;
        }
        cfg.validate().map_err(|e| value_err(p, "", e))?;
        Ok(cfg)
    }

    pub fn ablation_seeds(&self) -> Result<Vec<u64>, ConfigError> {
        self.list("ablation.seeds")
    }

    pub fn ablation_rows(&self) -> Result<Vec<usize>, ConfigError> {
        let rows: Vec<usize> = self.list("ablation.rows")?;
        if let Some(bad) = rows.iter().find(|r| !(1..=10).contains(*r)) {
            return Err(value_err(
                "ablation.rows",
                self.get("ablation.rows"),
                format!("row {bad} is not in 1..=10"),
            ));
        }
        Ok(rows)
    }

    /// `(key, value)` pairs recorded in checkpoints. The output location is
    /// left out so identical runs in different directories match bytewise.
    pub fn echo(&self) -> Vec<(String, String)> {
        self.values
            .iter()
            .filter(|(k, _)| k.as_str() != "paths.out")
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Documented defaults as a config file.
    pub fn describe() -> String {
        let mut out = String::new();
        for (k, v, doc) in KEYS {
            out.push_str(&format!("# {doc}\n{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_library() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.stage(1).unwrap(), StageConfig::stage1(0));
        assert_eq!(c.stage(2).unwrap(), StageConfig::stage2(0));
        assert_eq!(c.model().unwrap(), ModelConfig::default());
        assert_eq!(c.corpus(1).unwrap(), CorpusSpec::stage1(0));
        assert_eq!(c.corpus(2).unwrap(), CorpusSpec::stage2(0));
        assert_eq!(c.pipeline().unwrap(), PipelineConfig::default());
    }

    #[test]
    fn described_defaults_parse_back() {
        assert_eq!(RunConfig::parse(&RunConfig::describe()).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(
            RunConfig::parse("stage1.lrr = 1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            RunConfig::parse("stage1.lr = fast"),
            Err(ConfigError::Value { .. })
        ));
        assert!(matches!(
            RunConfig::parse("stage2.policy = merge"),
            Err(ConfigError::Value { .. })
        ));
        assert!(matches!(
            RunConfig::parse("just words"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        let c = RunConfig::parse("# comment\n\nstage2.epochs = 3  # trailing\n").unwrap();
        assert_eq!(c.stage(2).unwrap().epochs, 3);
    }
}
