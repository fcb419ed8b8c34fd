//! The ten-row embedding × curriculum × adapter-policy matrix.

use std::fmt;

use super::data::Corpus;
use super::metrics::Metrics;
use super::stage::{run_stage1, run_stage2, Policy, StageConfig, StageReport};
use crate::error::Result;
use crate::model::{Model, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Embedding {
    /// Gate off in Stage 1, on in Stage 2.
    Stfe,
    /// Gate on in both stages.
    TeFe,
    /// Gate off in both stages.
    Te,
}

impl Embedding {
    pub fn as_str(self) -> &'static str {
        match self {
            Embedding::Stfe => "STFE",
            Embedding::TeFe => "TE+FE",
            Embedding::Te => "TE",
        }
    }

    /// `(stage-1 gate, stage-2 gate)`.
    pub fn gates(self) -> (f64, f64) {
        match self {
            Embedding::Stfe => (0.0, 1.0),
            Embedding::TeFe => (1.0, 1.0),
            Embedding::Te => (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationRow {
    pub number: usize,
    pub embedding: Embedding,
    pub stage1: bool,
    pub policy: Policy,
}

impl AblationRow {
    /// Stage-2 column label.
    pub fn policy_label(&self) -> &'static str {
        match self.policy {
            Policy::Addition | Policy::None => "addition",
            Policy::Reuse => "reuse",
            Policy::FullParameter => "full_parameter",
        }
    }
}

impl fmt::Display for AblationRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s1 = if self.stage1 { "stage1" } else { "no_stage1" };
        write!(f, "{} / {s1} / {}", self.embedding.as_str(), self.policy_label())
    }
}

const fn row(number: usize, embedding: Embedding, stage1: bool, policy: Policy) -> AblationRow {
    AblationRow {
        number,
        embedding,
        stage1,
        policy,
    }
}

/// Rows in table order. Without Stage 1, "addition" means fresh adapters on a
/// fresh model (`Policy::None`).
pub const ROWS: [AblationRow; 10] = [
    row(1, Embedding::Stfe, true, Policy::Addition),
    row(2, Embedding::Stfe, true, Policy::Reuse),
    row(3, Embedding::TeFe, true, Policy::Addition),
    row(4, Embedding::TeFe, true, Policy::Reuse),
    row(5, Embedding::TeFe, false, Policy::None),
    row(6, Embedding::TeFe, false, Policy::FullParameter),
    row(7, Embedding::Te, true, Policy::Addition),
    row(8, Embedding::Te, true, Policy::Reuse),
    row(9, Embedding::Te, false, Policy::None),
    row(10, Embedding::Te, false, Policy::FullParameter),
];

pub fn row_by_number(n: usize) -> Option<AblationRow> {
    ROWS.iter().copied().find(|r| r.number == n)
}

/// Base settings shared by every row; gates and policies are overridden per row.
#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
}

/// Stage-1 models keyed by gate, reused across rows of one seed.
#[derive(Default)]
pub struct Stage1Cache {
    models: Vec<(u64, Model)>,
}

impl Stage1Cache {
    fn get(&mut self, lambda: f64, corpus: &Corpus, cfg: &AblationConfig) -> Result<Model> {
        if let Some((_, m)) = self.models.iter().find(|(k, _)| *k == lambda.to_bits()) {
            return Ok(m.clone());
        }
        let s1 = StageConfig {
            lambda_f: lambda,
            ..cfg.stage1.clone()
        };
        let model = Model::new(cfg.model.clone(), s1.seed)?;
        let out = run_stage1(model, corpus, &s1)?;
        self.models.push((lambda.to_bits(), out.model.clone()));
        Ok(out.model)
    }
}

/// One row for one seed. `cfg` carries the seed in its stage configs.
pub fn run_row(
    row: AblationRow,
    stage1_corpus: &Corpus,
    stage2_corpus: &Corpus,
    cfg: &AblationConfig,
    cache: &mut Stage1Cache,
) -> Result<StageReport> {
    let (g1, g2) = row.embedding.gates();
    let stage1 = if row.stage1 {
        Some(cache.get(g1, stage1_corpus, cfg)?)
    } else {
        None
    };
    let s2 = StageConfig {
        lambda_f: g2,
        policy: row.policy,
        ..cfg.stage2.clone()
    };
    Ok(run_stage2(stage1, &cfg.model, stage2_corpus, &s2)?.report)
}

#[derive(Debug, Clone)]
pub struct RowResult {
    pub row: AblationRow,
    pub per_seed: Vec<Metrics>,
}

impl RowResult {
    pub fn mean(&self) -> Metrics {
        let n = self.per_seed.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| self.per_seed.iter().map(f).sum::<f64>() / n;
        Metrics {
            accuracy: avg(|m| m.accuracy),
            roc_auc: avg(|m| m.roc_auc),
            pr_auc: avg(|m| m.pr_auc),
        }
    }
}

/// Runs `rows` for every seed. `corpora(seed)` yields the Stage-1 and Stage-2
/// corpora; `configure(seed)` the base settings. Results are in row order.
pub fn run_ablation(
    rows: &[AblationRow],
    seeds: &[u64],
    corpora: &mut dyn FnMut(u64) -> Result<(Corpus, Corpus)>,
    configure: &dyn Fn(u64) -> AblationConfig,
) -> Result<Vec<RowResult>> {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| r.number);
    sorted.dedup_by_key(|r| r.number);
    let mut results: Vec<RowResult> = sorted
        .iter()
        .map(|&row| RowResult {
            row,
            per_seed: Vec::new(),
        })
        .collect();
    for &seed in seeds {
        let (c1, c2) = corpora(seed)?;
        let cfg = configure(seed);
        let mut cache = Stage1Cache::default();
        for r in &mut results {
            r.per_seed.push(run_row(r.row, &c1, &c2, &cfg, &mut cache)?.test);
        }
    }
    Ok(results)
}

/// Tab-separated table of mean test metrics, one line per row.
pub fn format_table(results: &[RowResult]) -> String {
    let mut out = String::from("row\tembedding\tstage1\tstage2\taccuracy\troc_auc\tpr_auc\n");
    for r in results {
        let m = r.mean();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\n",
            r.row.number,
            r.row.embedding.as_str(),
            if r.row.stage1 { "yes" } else { "no" },
            r.row.policy_label(),
            m.accuracy,
            m.roc_auc,
            m.pr_auc
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_structure() {
        assert_eq!(ROWS.len(), 10);
        for (i, r) in ROWS.iter().enumerate() {
            assert_eq!(r.number, i + 1);
            assert_eq!(r.stage1, !matches!(r.policy, Policy::None | Policy::FullParameter));
        }
        assert_eq!(ROWS[0].to_string(), "STFE / stage1 / addition");
        assert_eq!(ROWS[4].to_string(), "TE+FE / no_stage1 / addition");
        assert_eq!(Embedding::Te.gates(), (0.0, 0.0));
        assert_eq!(Embedding::TeFe.gates(), (1.0, 1.0));
        assert_eq!(Embedding::Stfe.gates(), (0.0, 1.0));
    }
}
