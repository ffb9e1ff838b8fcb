//! Subcommand implementations and the file plumbing they share.

mod analyze;
mod data;
mod learn;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use wsphen_core::datamodel::{load_cohort, split_cohort};
use wsphen_core::embeddings::load_embedding_table;
use wsphen_core::preprocess::{build_input, InputMode};
use wsphen_core::{Cohort, CohortSplit, ConceptId, EmbeddingTable, Error, ModelInput, Result, Rng};

use crate::config::{RunConfig, RESOLVED_CONFIG};
use crate::{Command, StageError, StageExt};

pub const COHORT: &str = "cohort.jsonl";
pub const TABLE: &str = "embeddings.tsv";
pub const TRUTH: &str = "truth.jsonl";
pub const COHORT_SILVER: &str = "cohort.silver.jsonl";
pub const COHORT_CALIBRATED: &str = "cohort.calibrated.jsonl";
pub const COHORT_REFINED: &str = "cohort.refined.jsonl";
pub const CALIBRATION: &str = "calibration.json";
pub const SPLIT: &str = "split.json";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const METRICS: &str = "metrics.jsonl";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const EMBEDDINGS: &str = "embeddings.csv";
pub const CLUSTERS: &str = "clusters.csv";
pub const COORDS: &str = "coords.csv";
pub const CLUSTER_SUMMARY: &str = "cluster.json";
pub const KM: &str = "km.csv";
pub const SURVIVAL: &str = "survival.json";

pub(crate) struct Ctx {
    pub cfg: RunConfig,
}

impl Ctx {
    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.run.out_dir.join(name)
    }

    /// An explicitly configured input path, or `default` in the run directory.
    pub fn input(&self, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out(default))
    }

    pub fn anchor(&self) -> Result<ConceptId> {
        ConceptId::new(self.cfg.synth.anchor.clone())
    }

    pub fn require_seed(&self, command: &str) -> Result<()> {
        if self.cfg.run.seed.is_none() {
            return Err(Error::Config(format!("`{command}` requires --seed (or run.seed in the config file)")));
        }
        Ok(())
    }

    pub fn table(&self) -> Result<EmbeddingTable> {
        let path = self.input(&self.cfg.run.table, TABLE);
        load_embedding_table(&path)
    }

    pub fn cohort(&self, table: &EmbeddingTable, default: &str) -> Result<Cohort> {
        let path = self.input(&self.cfg.run.cohort, default);
        let (cohort, _) = load_cohort(&path, table, &self.anchor()?)?;
        Ok(cohort)
    }

    /// The configured split file, else a fresh split from the split seed,
    /// else the run directory's split file.
    pub fn split(&self, cohort: &Cohort) -> Result<CohortSplit> {
        let split = if let Some(path) = &self.cfg.run.split {
            read_json(path)?
        } else if self.cfg.split.seed.is_some() {
            split_cohort(cohort, self.cfg.split.fractions(), self.cfg.split_seed()?)?
        } else if self.out(SPLIT).exists() {
            read_json(&self.out(SPLIT))?
        } else {
            return Err(Error::Config(
                "no split: pass --seed, set split.seed, or set run.split to a split file".into(),
            ));
        };
        check_split(&split, cohort)?;
        Ok(split)
    }
}

fn check_split(split: &CohortSplit, cohort: &Cohort) -> Result<()> {
    let gold = split.gold_train.iter().chain(&split.folds[0]).chain(&split.folds[1]);
    for &i in gold {
        match cohort.patients.get(i) {
            Some(p) if p.is_gold() => {}
            Some(p) => return Err(Error::Validation(format!("split lists silver patient {} as gold", p.patient_id))),
            None => return Err(Error::Validation(format!("split index {i} is outside the cohort"))),
        }
    }
    for &i in &split.silver {
        match cohort.patients.get(i) {
            Some(p) if !p.is_gold() => {}
            _ => return Err(Error::Validation(format!("split silver index {i} is not a silver patient"))),
        }
    }
    Ok(())
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}

/// Eval-mode inputs (full history, no randomness) for `indices`.
pub(crate) fn eval_inputs(
    cohort: &Cohort,
    indices: &[usize],
    table: &EmbeddingTable,
    k_star: usize,
) -> Result<Vec<ModelInput>> {
    let mut unused = Rng::seed_from_u64(0);
    indices
        .iter()
        .map(|&i| {
            build_input(
                &cohort.patients[i],
                table,
                &cohort.anchor,
                k_star,
                InputMode::Eval,
                Default::default(),
                &mut unused,
            )
        })
        .collect()
}

pub(crate) fn execute(command: Command, cfg: RunConfig) -> std::result::Result<(), StageError> {
    let ctx = Ctx { cfg };
    let dir = &ctx.cfg.run.out_dir;
    fs::create_dir_all(dir)
        .map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })
        .stage("setup")?;
    write_text(&ctx.out(RESOLVED_CONFIG), &ctx.cfg.to_toml().stage("setup")?).stage("setup")?;
    match command {
        Command::Synth => data::synth(&ctx),
        Command::InitSilver => data::init_silver(&ctx),
        Command::Calibrate => data::calibrate(&ctx),
        Command::Train => learn::train(&ctx),
        Command::Eval => learn::eval(&ctx),
        Command::Embed => learn::embed(&ctx),
        Command::Cluster => analyze::cluster(&ctx),
        Command::Survival => analyze::survival(&ctx),
    }
}
