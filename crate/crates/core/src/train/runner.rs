use serde::{Deserialize, Serialize};

use super::{adam_step, count_baseline, AdamState, TrainConfig};
use crate::analysis::{auc, cross_validate, CvReport, FoldScores};
use crate::datamodel::{Cohort, CohortSplit};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::{batch_loss, init_params, predict, Checkpoint, ModelConfig, ModelParams};
use crate::numerics::Rng;
use crate::preprocess::{
    build_input, default_oversample_factor, oversample_gold, InputMode, ModelInput,
};

/// One line of the metrics trail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub round: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    /// Set on a round's last epoch when silver labels were refined after it.
    pub refined: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub checkpoint: Checkpoint,
    pub best_val_auc: f64,
    pub best_round: usize,
    pub best_epoch: usize,
    pub trail: Vec<EpochRecord>,
    /// The input cohort with silver labels as left by the last refinement.
    pub cohort: Cohort,
}

fn eval_inputs(cohort: &Cohort, indices: &[usize], table: &EmbeddingTable, k_star: usize) -> Result<Vec<ModelInput>> {
    // Eval mode never draws from the stream.
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

fn probabilities(inputs: &[ModelInput], params: &ModelParams, cfg: &ModelConfig) -> Result<Vec<f64>> {
    Ok(predict(inputs, params, cfg)?.into_iter().map(|o| o.probability).collect())
}

fn gold_labels(cohort: &Cohort, indices: &[usize]) -> Vec<bool> {
    indices.iter().map(|&i| cohort.patients[i].label.value >= 0.5).collect()
}

fn check_inputs(cohort: &Cohort, table: &EmbeddingTable, mcfg: &ModelConfig, tcfg: &TrainConfig) -> Result<()> {
    mcfg.validate()?;
    tcfg.validate()?;
    if mcfg.d_input != table.dim() {
        return Err(Error::Config(format!(
            "model d_input {} does not match embedding dimension {}",
            mcfg.d_input,
            table.dim()
        )));
    }
    if !table.contains(&cohort.anchor) {
        return Err(Error::Config(format!(
            "anchor {} has no embedding vector",
            cohort.anchor.as_str()
        )));
    }
    Ok(())
}

/// Trains on gold-train replicas plus every silver patient, selecting
/// checkpoints by AUC on gold fold `validation_fold` (1-based). Each round
/// restores its best checkpoint and, with refinement on, replaces every
/// silver label by that checkpoint's probability.
pub fn train_loop(
    cohort: &Cohort,
    table: &EmbeddingTable,
    split: &CohortSplit,
    validation_fold: usize,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_inputs(cohort, table, mcfg, tcfg)?;
    if !(1..=2).contains(&validation_fold) {
        return Err(Error::Config(format!("validation fold must be 1 or 2, got {validation_fold}")));
    }
    let val_idx = split.fold(validation_fold);
    let val_labels = gold_labels(cohort, val_idx);
    if !val_labels.contains(&true) || !val_labels.contains(&false) {
        return Err(Error::Config(format!(
            "validation fold {validation_fold} is single-class; AUC is undefined"
        )));
    }
    if split.gold_train.is_empty() && split.silver.is_empty() {
        return Err(Error::Config("nothing to train on".into()));
    }
    let checksum = cohort.gold_checksum();
    let mut working = cohort.clone();

    let val_inputs = eval_inputs(cohort, val_idx, table, mcfg.k_star)?;
    let silver_inputs = eval_inputs(cohort, &split.silver, table, mcfg.k_star)?;
    let r = tcfg
        .oversample_r
        .unwrap_or_else(|| default_oversample_factor(split.silver.len(), split.gold_train.len()));
    let instances = oversample_gold(&cohort.patients, &split.gold_train, r)?;
    log::info!(
        "training: {} gold-train x{r}, {} silver, validating on fold {validation_fold} ({} patients)",
        split.gold_train.len(),
        split.silver.len(),
        val_idx.len()
    );

    let root = Rng::seed_from_u64(tcfg.seed);
    let adam = tcfg.adam();
    let mut params = init_params(mcfg)?;
    let mut trail = Vec::new();
    let mut best: Option<(f64, usize, usize, ModelParams)> = None;

    for round in 0..tcfg.outer_rounds {
        let mut state = AdamState::new(params.leaves());
        let mut round_best: Option<(f64, usize, ModelParams)> = None;
        for epoch in 0..tcfg.epochs_per_round {
            let erng = root.fork_index("epoch", (round * tcfg.epochs_per_round + epoch) as u64);
            let gold_inputs: Vec<ModelInput> = instances
                .iter()
                .enumerate()
                .map(|(k, inst)| {
                    build_input(
                        &cohort.patients[inst.patient],
                        table,
                        &cohort.anchor,
                        mcfg.k_star,
                        InputMode::TrainGold,
                        tcfg.truncation,
                        &mut erng.fork_index("truncate", k as u64),
                    )
                })
                .collect::<Result<_>>()?;
            let mut pool: Vec<(&ModelInput, f64)> = gold_inputs
                .iter()
                .map(|x| (x, x.label.value))
                .chain(
                    silver_inputs
                        .iter()
                        .zip(&split.silver)
                        .map(|(x, &i)| (x, working.patients[i].label.value)),
                )
                .collect();
            erng.fork("shuffle").shuffle(&mut pool);
            let mut dropout = erng.fork("dropout");
            let mut loss_sum = 0.0;
            for batch in pool.chunks(tcfg.batch_size) {
                let (loss, grads) = batch_loss(&params, mcfg, batch, Some(&mut dropout))?;
                if !loss.is_finite() {
                    return Err(Error::NonConvergence(format!(
                        "non-finite training loss in round {round}, epoch {epoch}"
                    )));
                }
                loss_sum += loss * batch.len() as f64;
                let mut leaves = params.leaves_mut();
                adam_step(&mut leaves, &grads.leaves(), &mut state, &adam)?;
            }
            let train_loss = loss_sum / pool.len() as f64;
            let val_auc = auc(&probabilities(&val_inputs, &params, mcfg)?, &val_labels)?;
            log::debug!("round {round} epoch {epoch}: loss {train_loss:.5}, val AUC {val_auc:.4}");
            if round_best.as_ref().is_none_or(|b| val_auc > b.0) {
                round_best = Some((val_auc, epoch, params.clone()));
            }
            trail.push(EpochRecord {
                round,
                epoch,
                train_loss,
                val_auc,
                refined: false,
            });
        }

        let (round_auc, round_epoch, round_params) = round_best.expect("at least one epoch");
        params = round_params;
        if best.as_ref().is_none_or(|b| round_auc > b.0) {
            best = Some((round_auc, round, round_epoch, params.clone()));
        }
        if tcfg.refinement_enabled && !split.silver.is_empty() {
            let refined = probabilities(&silver_inputs, &params, mcfg)?;
            working.set_silver_labels(&split.silver, &refined)?;
            trail.last_mut().expect("round has epochs").refined = true;
        }
    }

    if working.gold_checksum() != checksum {
        return Err(Error::Contract("gold labels changed during training".into()));
    }
    let (best_val_auc, best_round, best_epoch, best_params) = best.expect("at least one round");
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(mcfg, &best_params),
        params: best_params,
        best_val_auc,
        best_round,
        best_epoch,
        trail,
        cohort: working,
    })
}

#[derive(Debug, Clone)]
pub struct CvRun {
    pub report: CvReport,
    pub baseline: CvReport,
    /// `outcomes[f]` validated on fold `f + 1` and was tested on the other.
    pub outcomes: Vec<TrainOutcome>,
}

/// Two trainings, one per validation fold; each is scored on the fold it
/// did not select on. The count baseline is scored on the same folds.
pub fn cross_validate_training(
    cohort: &Cohort,
    table: &EmbeddingTable,
    split: &CohortSplit,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<CvRun> {
    let counts = count_baseline(cohort);
    let mut model_folds = Vec::new();
    let mut baseline_folds = Vec::new();
    let mut outcomes = Vec::new();
    for v in 1..=2 {
        let outcome = train_loop(cohort, table, split, v, mcfg, tcfg)?;
        let test = split.other_fold(v);
        let labels = gold_labels(cohort, test);
        let inputs = eval_inputs(cohort, test, table, mcfg.k_star)?;
        model_folds.push(FoldScores {
            scores: probabilities(&inputs, &outcome.params, mcfg)?,
            labels: labels.clone(),
        });
        baseline_folds.push(FoldScores {
            scores: test.iter().map(|&i| counts[i]).collect(),
            labels,
        });
        outcomes.push(outcome);
    }
    Ok(CvRun {
        report: cross_validate(&model_folds)?,
        baseline: cross_validate(&baseline_folds)?,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{generate_synthetic_cohort, split_cohort, SplitFractions, SyntheticSpec};

    fn small() -> (Cohort, EmbeddingTable, CohortSplit, ModelConfig, TrainConfig) {
        let synth = generate_synthetic_cohort(&SyntheticSpec {
            n_gold: 60,
            n_silver: 80,
            seed: 3,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let split = split_cohort(
            &synth.cohort,
            SplitFractions {
                train: 0.5,
                fold1: 0.25,
                fold2: 0.25,
            },
            3,
        )
        .unwrap();
        let mcfg = ModelConfig {
            d_model: 8,
            n_layers: 1,
            d_ff: 16,
            dropout: 0.0,
            k_star: 12,
            ..ModelConfig::default()
        };
        let tcfg = TrainConfig {
            outer_rounds: 2,
            epochs_per_round: 2,
            batch_size: 16,
            learning_rate: 1e-2,
            oversample_r: Some(2),
            seed: 1,
            ..TrainConfig::default()
        };
        (synth.cohort, synth.table, split, mcfg, tcfg)
    }

    #[test]
    fn gold_labels_untouched_and_silver_in_range() {
        let (cohort, table, split, mcfg, tcfg) = small();
        let out = train_loop(&cohort, &table, &split, 1, &mcfg, &tcfg).unwrap();
        assert_eq!(out.cohort.gold_checksum(), cohort.gold_checksum());
        for &i in &split.silver {
            let v = out.cohort.patients[i].label.value;
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(out.trail.len(), 4);
        assert!(out.trail[1].refined && out.trail[3].refined && !out.trail[0].refined);
        let max = out.trail.iter().map(|r| r.val_auc).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best_val_auc, max);
    }

    #[test]
    fn deterministic_without_dropout() {
        let (cohort, table, split, mcfg, tcfg) = small();
        let a = train_loop(&cohort, &table, &split, 2, &mcfg, &tcfg).unwrap();
        let b = train_loop(&cohort, &table, &split, 2, &mcfg, &tcfg).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.trail, b.trail);
        assert_eq!(a.cohort, b.cohort);
    }

    #[test]
    fn refinement_off_keeps_silver() {
        let (cohort, table, split, mcfg, tcfg) = small();
        let tcfg = TrainConfig {
            outer_rounds: 1,
            refinement_enabled: false,
            ..tcfg
        };
        let out = train_loop(&cohort, &table, &split, 1, &mcfg, &tcfg).unwrap();
        assert_eq!(out.cohort, cohort);
        assert!(out.trail.iter().all(|r| !r.refined));
    }

    #[test]
    fn single_class_validation_fold_rejected() {
        let (cohort, table, mut split, mcfg, tcfg) = small();
        split.folds[0].retain(|&i| cohort.patients[i].label.value == 1.0);
        let err = train_loop(&cohort, &table, &split, 1, &mcfg, &tcfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let (cohort, table, split, mcfg, tcfg) = small();
        let bad = ModelConfig { d_input: 7, ..mcfg };
        assert!(matches!(
            train_loop(&cohort, &table, &split, 1, &bad, &tcfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cv_run_reports_mean_of_folds() {
        let (cohort, table, split, mcfg, tcfg) = small();
        let tcfg = TrainConfig { outer_rounds: 1, epochs_per_round: 1, ..tcfg };
        let run = cross_validate_training(&cohort, &table, &split, &mcfg, &tcfg).unwrap();
        assert_eq!(run.report.per_fold.len(), 2);
        let mean = (run.report.per_fold[0].auc + run.report.per_fold[1].auc) / 2.0;
        assert_eq!(run.report.auc, mean);
    }
}
