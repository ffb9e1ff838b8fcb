use std::fmt::Write as _;

use serde::Serialize;
use wsphen_core::analysis::{cross_validate, CvReport, FoldScores};
use wsphen_core::datamodel::{save_cohort, write_jsonl};
use wsphen_core::model::{predict, Checkpoint};
use wsphen_core::train::{count_baseline, train_loop};
use wsphen_core::{ModelConfig, ModelParams};

use super::*;
use crate::config::EvalTarget;

#[derive(Serialize)]
struct TrainSummary {
    validation_fold: usize,
    best_val_auc: f64,
    best_round: usize,
    best_epoch: usize,
    n_gold_train: usize,
    n_silver: usize,
    refinement_enabled: bool,
    gold_checksum: u64,
}

pub(super) fn train(ctx: &Ctx) -> std::result::Result<(), StageError> {
    ctx.require_seed("train").stage("train")?;
    let table = ctx.table().stage("load")?;
    let cohort = ctx.cohort(&table, COHORT_CALIBRATED).stage("load")?;
    let split = ctx.split(&cohort).stage("split")?;
    let fold = ctx.cfg.eval.validation_fold;
    let outcome = train_loop(&cohort, &table, &split, fold, &ctx.cfg.model, &ctx.cfg.train).stage("train")?;
    outcome.checkpoint.save(&ctx.out(CHECKPOINT)).stage("train")?;
    write_jsonl(&ctx.out(METRICS), &outcome.trail).stage("train")?;
    save_cohort(&outcome.cohort, &ctx.out(COHORT_REFINED)).stage("train")?;
    write_json(&ctx.out(SPLIT), &split).stage("train")?;
    let summary = TrainSummary {
        validation_fold: fold,
        best_val_auc: outcome.best_val_auc,
        best_round: outcome.best_round,
        best_epoch: outcome.best_epoch,
        n_gold_train: split.gold_train.len(),
        n_silver: split.silver.len(),
        refinement_enabled: ctx.cfg.train.refinement_enabled,
        gold_checksum: outcome.cohort.gold_checksum(),
    };
    write_json(&ctx.out(TRAIN_SUMMARY), &summary).stage("train")?;
    log::info!(
        "best validation AUC {:.4} at round {} epoch {}",
        outcome.best_val_auc,
        outcome.best_round,
        outcome.best_epoch
    );
    Ok(())
}

fn load_checkpoint(ctx: &Ctx) -> Result<(ModelConfig, ModelParams)> {
    let path = ctx.input(&ctx.cfg.run.checkpoint, CHECKPOINT);
    if !path.exists() {
        return Err(Error::Config(format!(
            "checkpoint not found at {} (run `wsphen train` or set run.checkpoint)",
            path.display()
        )));
    }
    let ckpt = Checkpoint::load(&path)?;
    let params = ckpt.params()?;
    Ok((ckpt.config, params))
}

fn probabilities(
    cohort: &Cohort,
    indices: &[usize],
    table: &EmbeddingTable,
    mcfg: &ModelConfig,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let inputs = eval_inputs(cohort, indices, table, mcfg.k_star)?;
    Ok(predict(&inputs, params, mcfg)?.into_iter().map(|o| o.probability).collect())
}

#[derive(Serialize)]
struct EvalReport<'a> {
    target: &'static str,
    validation_fold: usize,
    #[serde(flatten)]
    report: &'a CvReport,
}

pub(super) fn eval(ctx: &Ctx) -> std::result::Result<(), StageError> {
    let (mcfg, params) = load_checkpoint(ctx).stage("eval")?;
    let table = ctx.table().stage("load")?;
    let cohort = ctx.cohort(&table, COHORT_CALIBRATED).stage("load")?;
    let split = ctx.split(&cohort).stage("split")?;
    let v = ctx.cfg.eval.validation_fold;
    let target = ctx.cfg.eval.target;
    let groups: Vec<&[usize]> = match target {
        EvalTarget::Heldout => vec![split.other_fold(v)],
        EvalTarget::Validation => vec![split.fold(v)],
        EvalTarget::Train => vec![&split.gold_train],
        EvalTarget::Test => vec![split.fold(1), split.fold(2)],
    };
    let counts = count_baseline(&cohort);
    let mut model = Vec::new();
    let mut baseline = Vec::new();
    for idx in groups {
        let labels: Vec<bool> = idx.iter().map(|&i| cohort.patients[i].label.value >= 0.5).collect();
        model.push(FoldScores {
            scores: probabilities(&cohort, idx, &table, &mcfg, &params).stage("eval")?,
            labels: labels.clone(),
        });
        baseline.push(FoldScores {
            scores: idx.iter().map(|&i| counts[i]).collect(),
            labels,
        });
    }
    let model = cross_validate(&model).stage("eval")?;
    let baseline = cross_validate(&baseline).stage("eval")?;
    let name = target.name();
    for (prefix, report) in [("eval", &model), ("baseline", &baseline)] {
        let doc = EvalReport {
            target: name,
            validation_fold: v,
            report,
        };
        write_json(&ctx.out(&format!("{prefix}_{name}.json")), &doc).stage("eval")?;
    }
    log::info!("{name}: model AUC {:.4}, count baseline AUC {:.4}", model.auc, baseline.auc);
    Ok(())
}

pub(super) fn embed(ctx: &Ctx) -> std::result::Result<(), StageError> {
    let (mcfg, params) = load_checkpoint(ctx).stage("embed")?;
    let table = ctx.table().stage("load")?;
    let cohort = ctx.cohort(&table, COHORT_CALIBRATED).stage("load")?;
    let all: Vec<usize> = (0..cohort.len()).collect();
    let inputs = eval_inputs(&cohort, &all, &table, mcfg.k_star).stage("embed")?;
    let outputs = predict(&inputs, &params, &mcfg).stage("embed")?;
    let mut text = String::from("patient_id,probability");
    for j in 0..mcfg.d_model {
        let _ = write!(text, ",e{j}");
    }
    text.push('\n');
    for (p, o) in cohort.patients.iter().zip(&outputs) {
        let _ = write!(text, "{},{}", p.patient_id, o.probability);
        for v in &o.embedding {
            let _ = write!(text, ",{v}");
        }
        text.push('\n');
    }
    write_text(&ctx.out(EMBEDDINGS), &text).stage("embed")
}
