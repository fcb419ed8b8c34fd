//! Subcommand implementations. Every file written goes under `paths.out`.

use std::fs;
use std::path::{Path, PathBuf};

use ndx_core::model::Model;
use ndx_core::synth::{build_corpus, Split};
use ndx_core::train::ablation::{format_table, row_by_number, run_ablation, AblationConfig, RowResult};
use ndx_core::train::{evaluate, run_stage1, run_stage2, Checkpoint, Corpus, Policy, StageOutcome};

use crate::config::{ConfigError, RunConfig};
use crate::selfcheck;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] ndx_core::Error),
}

impl CliError {
    /// 1 check failure, 2 usage error, 3 I/O error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Core(ndx_core::Error::Io { .. }) => 3,
            CliError::Check(_) | CliError::Core(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub const STAGE1_CKPT: &str = "stage1.ndxc";
pub const STAGE2_CKPT: &str = "stage2.ndxc";
pub const ABLATION_REPORT: &str = "ablation.tsv";

pub fn corpus_dir(out: &Path, stage: u8) -> PathBuf {
    out.join("corpus").join(format!("stage{stage}"))
}

pub fn metrics_path(out: &Path, stage: u8) -> PathBuf {
    out.join(format!("stage{stage}_metrics.tsv"))
}

fn write(path: &Path, data: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| ndx_core::Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, data).map_err(|e| {
        ndx_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn counts(dir: &Path, manifest: &ndx_core::synth::Manifest) -> String {
    let n = |s: Split| manifest.split(s).count();
    format!(
        "{} recordings (train {}, val {}, test {}) in {}",
        manifest.rows.len(),
        n(Split::Train),
        n(Split::Val),
        n(Split::Test),
        dir.display()
    )
}

pub fn synth(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.out_dir();
    for stage in [1, 2] {
        let dir = corpus_dir(&out, stage);
        let manifest = build_corpus(&cfg.corpus(stage)?, &dir)?;
        println!("stage{stage}: {}", counts(&dir, &manifest));
    }
    Ok(())
}

fn load_corpus(cfg: &RunConfig, stage: u8) -> CliResult<Corpus> {
    Ok(Corpus::load(&corpus_dir(&cfg.out_dir(), stage), &cfg.pipeline()?)?)
}

/// `name\tvalue` lines describing a finished stage.
pub fn stage_report(outcome: &StageOutcome) -> String {
    let r = &outcome.report;
    let mut s = format!("stage\t{}\nlambda_f\t{}\n", r.stage, outcome.model.stfe.lambda_f());
    if let Some(i) = r.selected {
        s.push_str(&format!("selected_epoch\t{}\n", r.epochs[i].epoch + 1));
    }
    s.push_str(&r.report());
    s
}

pub fn train(cfg: &RunConfig, stage: u8, policy: Option<&str>, from: Option<&Path>) -> CliResult<()> {
    let out = cfg.out_dir();
    let seed = cfg.seed()?;
    let (outcome, policy) = match stage {
        1 => {
            if policy.is_some() || from.is_some() {
                return Err(CliError::Usage("--policy and --from only apply to --stage 2".into()));
            }
            let corpus = load_corpus(cfg, 1)?;
            let s1 = cfg.stage(1)?;
            let model = Model::new(cfg.model()?, seed)?;
            (run_stage1(model, &corpus, &s1)?, s1.policy)
        }
        2 => {
            let mut s2 = cfg.stage(2)?;
            if let Some(p) = policy {
                s2.policy = p.parse::<Policy>().map_err(|e| CliError::Usage(e.to_string()))?;
            }
            let needs_stage1 = matches!(s2.policy, Policy::Addition | Policy::Reuse);
            match (needs_stage1, from, s2.policy) {
                (true, None, p) => {
                    return Err(CliError::Usage(format!("policy {p} needs --from <stage-1 checkpoint>")))
                }
                (_, Some(_), Policy::None) => {
                    return Err(CliError::Usage(
                        "policy none trains without stage 1; drop --from".into(),
                    ))
                }
                _ => {}
            }
            let stage1 = match from {
                Some(path) => {
                    let ck = Checkpoint::load(path)?;
                    let st = ck.stage()?;
                    if st != 1 {
                        return Err(CliError::Check(format!(
                            "{} is a stage-{st} checkpoint",
                            path.display()
                        )));
                    }
                    Some(ck.restore()?)
                }
                None => None,
            };
            let corpus = load_corpus(cfg, 2)?;
            (run_stage2(stage1, &cfg.model()?, &corpus, &s2)?, s2.policy)
        }
        s => return Err(CliError::Usage(format!("--stage must be 1 or 2, got {s}"))),
    };
    let ckpt = Checkpoint::capture(&outcome.model, stage, policy, seed, &cfg.echo());
    let name = if stage == 1 { STAGE1_CKPT } else { STAGE2_CKPT };
    write(&out.join(name), &ckpt.to_bytes()?)?;
    let report = stage_report(&outcome);
    write(&metrics_path(&out, stage), report.as_bytes())?;
    print!("{report}");
    Ok(())
}

pub fn eval(cfg: &RunConfig, ckpt: &Path, split: &str) -> CliResult<()> {
    let split: Split = split
        .parse()
        .map_err(|e: ndx_core::Error| CliError::Usage(e.to_string()))?;
    let ck = Checkpoint::load(ckpt)?;
    let model = ck.restore()?;
    let corpus = load_corpus(cfg, ck.stage()?)?;
    let data = corpus.split(split);
    let metrics = evaluate(&model, data)?;
    if !metrics.is_defined() {
        eprintln!("warning: {split} split has a single class; roc_auc and pr_auc are undefined");
    }
    print!("{}", metrics.report());
    Ok(())
}

/// Per-seed test metrics of every configured row. Corpora for seed `s`
/// are generated under `out/ablation/seed<s>`.
pub fn ablation_results(cfg: &RunConfig) -> CliResult<Vec<RowResult>> {
    let out = cfg.out_dir();
    let rows = cfg
        .ablation_rows()?
        .into_iter()
        .map(|n| row_by_number(n).expect("validated row number"))
        .collect::<Vec<_>>();
    let seeds = cfg.ablation_seeds()?;
    if seeds.is_empty() || rows.is_empty() {
        return Err(CliError::Usage("ablation needs at least one seed and one row".into()));
    }
    let pipeline = cfg.pipeline()?;
    let mut corpora = |seed: u64| -> ndx_core::Result<(Corpus, Corpus)> {
        let mut c = cfg.clone();
        c.set_seed(seed);
        let base = out.join("ablation").join(format!("seed{seed}"));
        let mut loaded = Vec::new();
        for stage in [1, 2] {
            let dir = base.join(format!("stage{stage}"));
            let spec = c
                .corpus(stage)
                .map_err(|e| ndx_core::Error::InvalidArgument(e.to_string()))?;
            build_corpus(&spec, &dir)?;
            loaded.push(Corpus::load(&dir, &pipeline)?);
        }
        let c2 = loaded.pop().expect("two corpora");
        Ok((loaded.pop().expect("two corpora"), c2))
    };
    let model = cfg.model()?;
    let (s1, s2) = (cfg.stage(1)?, cfg.stage(2)?);
    let configure = |seed: u64| AblationConfig {
        model: model.clone(),
        stage1: ndx_core::train::StageConfig { seed, ..s1.clone() },
        stage2: ndx_core::train::StageConfig { seed, ..s2.clone() },
    };
    Ok(run_ablation(&rows, &seeds, &mut corpora, &configure)?)
}

pub fn ablation(cfg: &RunConfig) -> CliResult<()> {
    let results = ablation_results(cfg)?;
    let out = cfg.out_dir();
    let table = format_table(&results);
    write(&out.join(ABLATION_REPORT), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

pub fn selfcheck(fault: Option<&str>) -> CliResult<()> {
    if let Some(op) = fault {
        if !selfcheck::OPS.contains(&op) {
            return Err(CliError::Usage(format!(
                "unknown op {op:?}; one of {}",
                selfcheck::OPS.join(", ")
            )));
        }
    }
    let results = selfcheck::run_all(fault);
    for r in &results {
        println!("{}", r.line());
    }
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} ({})", r.name, r.detail))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failed.join("; ")))
    }
}
