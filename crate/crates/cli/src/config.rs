//! Run configuration: a TOML file with one section per stage, overridden by
//! `--section.key value` (or `--key value` when the key is unambiguous).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wsphen_core::analysis::KMeansConfig;
use wsphen_core::datamodel::{SplitFractions, SyntheticSpec};
use wsphen_core::numerics::derive_seed;
use wsphen_core::{Error, ModelConfig, Result, TrainConfig};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Root seed; every stage seed not set explicitly is derived from it.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub cohort: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub clusters: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: None,
            out_dir: PathBuf::from("run"),
            cohort: None,
            table: None,
            checkpoint: None,
            split: None,
            embeddings: None,
            clusters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SilverSection {
    /// Anchor occurrences needed for an initial silver label of 1.
    pub threshold: u64,
}

impl Default for SilverSection {
    fn default() -> Self {
        SilverSection { threshold: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub fold1: f64,
    pub fold2: f64,
    pub seed: Option<u64>,
}

impl Default for SplitSection {
    fn default() -> Self {
        let f = SplitFractions::default();
        SplitSection {
            train: f.train,
            fold1: f.fold1,
            fold2: f.fold2,
            seed: None,
        }
    }
}

impl SplitSection {
    pub fn fractions(&self) -> SplitFractions {
        SplitFractions {
            train: self.train,
            fold1: self.fold1,
            fold2: self.fold2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTarget {
    /// The gold fold not used for checkpoint selection.
    Heldout,
    Validation,
    Train,
    /// Both gold folds.
    Test,
}

impl EvalTarget {
    pub fn name(self) -> &'static str {
        match self {
            EvalTarget::Heldout => "heldout",
            EvalTarget::Validation => "validation",
            EvalTarget::Train => "train",
            EvalTarget::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Gold fold (1 or 2) used for checkpoint selection during training.
    pub validation_fold: usize,
    pub target: EvalTarget,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            validation_fold: 1,
            target: EvalTarget::Heldout,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    All,
    /// Patients whose predicted probability is at least 0.5.
    PredictedPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub k: usize,
    pub seed: u64,
    pub n_init: usize,
    pub max_iter: usize,
    pub min_size: Option<usize>,
    pub var_threshold: f64,
    pub population: Population,
}

impl Default for ClusterSection {
    fn default() -> Self {
        let km = KMeansConfig::default();
        ClusterSection {
            k: km.k,
            seed: km.seed,
            n_init: km.n_init,
            max_iter: km.max_iter,
            min_size: km.min_size,
            var_threshold: 0.99,
            population: Population::PredictedPositive,
        }
    }
}

impl ClusterSection {
    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.k,
            seed: self.seed,
            n_init: self.n_init,
            max_iter: self.max_iter,
            min_size: self.min_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub synth: SyntheticSpec,
    pub silver: SilverSection,
    pub split: SplitSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub cluster: ClusterSection,
}

/// Stage seeds that were given explicitly, before derivation fills the rest.
struct ExplicitSeeds {
    synth: bool,
    split: bool,
    model: bool,
    train: bool,
    cluster: bool,
}

/// Stage seed for `label`, masked to 63 bits so it survives TOML's signed
/// integers in the resolved-config echo.
pub fn stage_seed(root: u64, label: &str) -> u64 {
    derive_seed(root, label) & (i64::MAX as u64)
}

fn has_key(table: &toml::Table, section: &str, key: &str) -> bool {
    table
        .get(section)
        .and_then(|s| s.as_table())
        .is_some_and(|s| s.contains_key(key))
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn section_keys() -> Result<toml::Table> {
    toml::Table::try_from(RunConfig::default())
        .map_err(|e| Error::Config(format!("default config does not serialize: {e}")))
}

/// Resolves `key` (either `section.key` or a bare key) to a section.
fn locate(key: &str, defaults: &toml::Table) -> Result<(String, String)> {
    if let Some((section, field)) = key.split_once('.') {
        return Ok((section.to_string(), field.to_string()));
    }
    // Option fields are absent from the serialized defaults.
    let optional: &[(&str, &str)] = &[
        ("run", "seed"),
        ("run", "cohort"),
        ("run", "table"),
        ("run", "checkpoint"),
        ("run", "split"),
        ("run", "embeddings"),
        ("run", "clusters"),
        ("split", "seed"),
        ("train", "oversample_r"),
        ("cluster", "min_size"),
    ];
    let mut hits: Vec<String> = defaults
        .iter()
        .filter(|(_, v)| v.as_table().is_some_and(|t| t.contains_key(key)))
        .map(|(s, _)| s.clone())
        .collect();
    hits.extend(optional.iter().filter(|(_, k)| *k == key).map(|(s, _)| s.to_string()));
    hits.sort();
    hits.dedup();
    if key == "seed" {
        return Ok(("run".into(), "seed".into()));
    }
    match hits.as_slice() {
        [one] => Ok((one.clone(), key.to_string())),
        [] => Err(Error::Config(format!("unknown config key --{key}"))),
        many => Err(Error::Config(format!(
            "--{key} is ambiguous; use one of {}",
            many.iter().map(|s| format!("--{s}.{key}")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

impl RunConfig {
    /// File (if any), then overrides in order, then seed derivation and
    /// validation.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        let defaults = section_keys()?;
        for (key, raw) in overrides {
            let (section, field) = locate(key, &defaults)?;
            let entry = table
                .entry(section.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let sect = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("[{section}] is not a table")))?;
            sect.insert(field, parse_value(raw));
        }
        let explicit = ExplicitSeeds {
            synth: has_key(&table, "synth", "seed"),
            split: has_key(&table, "split", "seed"),
            model: has_key(&table, "model", "seed"),
            train: has_key(&table, "train", "seed"),
            cluster: has_key(&table, "cluster", "seed"),
        };
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if let Some(root) = cfg.run.seed {
            if !explicit.synth {
                cfg.synth.seed = stage_seed(root, "synth");
            }
            if !explicit.split {
                cfg.split.seed = Some(stage_seed(root, "split"));
            }
            if !explicit.model {
                cfg.model.seed = stage_seed(root, "model");
            }
            if !explicit.train {
                cfg.train.seed = stage_seed(root, "train");
            }
            if !explicit.cluster {
                cfg.cluster.seed = stage_seed(root, "cluster");
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.silver.threshold == 0 {
            return Err(Error::Config("silver.threshold must be at least 1".into()));
        }
        if !(1..=2).contains(&self.eval.validation_fold) {
            return Err(Error::Config(format!(
                "eval.validation_fold must be 1 or 2, got {}",
                self.eval.validation_fold
            )));
        }
        if !(self.cluster.var_threshold > 0.0 && self.cluster.var_threshold <= 1.0) {
            return Err(Error::Config("cluster.var_threshold must lie in (0, 1]".into()));
        }
        if self.cluster.k == 0 || self.cluster.n_init == 0 {
            return Err(Error::Config("cluster.k and cluster.n_init must be at least 1".into()));
        }
        let f = self.split.fractions();
        if [f.train, f.fold1, f.fold2].iter().any(|v| !(0.0..=1.0).contains(v))
            || ((f.train + f.fold1 + f.fold2) - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split fractions must lie in [0, 1] and sum to 1, got {} + {} + {}",
                f.train, f.fold1, f.fold2
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config does not serialize: {e}")))
    }

    pub fn split_seed(&self) -> Result<u64> {
        self.split.seed.ok_or_else(|| {
            Error::Config("no split seed: pass --seed, set split.seed, or point run.split at a split file".into())
        })
    }
}
