use serde::Serialize;
use wsphen_core::datamodel::{
    generate_synthetic_cohort, init_silver_by_count, save_cohort, write_ground_truth,
};
use wsphen_core::embeddings::save_embedding_table;
use wsphen_core::train::{calibrate_silver, count_scores, LogisticFit};

use super::*;

pub(super) fn synth(ctx: &Ctx) -> std::result::Result<(), StageError> {
    ctx.require_seed("synth").stage("synth")?;
    let synth = generate_synthetic_cohort(&ctx.cfg.synth).stage("synth")?;
    save_cohort(&synth.cohort, &ctx.out(COHORT)).stage("synth")?;
    save_embedding_table(&synth.table, &ctx.out(TABLE)).stage("synth")?;
    write_ground_truth(&ctx.out(TRUTH), &synth.truth).stage("synth")?;
    log::info!(
        "wrote {} patients and {} concept vectors to {}",
        synth.cohort.len(),
        synth.table.len(),
        ctx.cfg.run.out_dir.display()
    );
    Ok(())
}

pub(super) fn init_silver(ctx: &Ctx) -> std::result::Result<(), StageError> {
    let table = ctx.table().stage("load")?;
    let mut cohort = ctx.cohort(&table, COHORT).stage("load")?;
    init_silver_by_count(&mut cohort, ctx.cfg.silver.threshold).stage("init-silver")?;
    save_cohort(&cohort, &ctx.out(COHORT_SILVER)).stage("init-silver")
}

#[derive(Serialize)]
struct CalibrationReport {
    fit: LogisticFit,
    score: &'static str,
    n_gold_train: usize,
    n_silver: usize,
    mean_silver_probability: f64,
}

pub(super) fn calibrate(ctx: &Ctx) -> std::result::Result<(), StageError> {
    let table = ctx.table().stage("load")?;
    let mut cohort = ctx.cohort(&table, COHORT_SILVER).stage("load")?;
    let split = ctx.split(&cohort).stage("split")?;
    let checksum = cohort.gold_checksum();
    let cal = calibrate_silver(&cohort, &count_scores(&cohort), &split.gold_train).stage("calibrate")?;
    cal.apply(&mut cohort).stage("calibrate")?;
    debug_assert_eq!(cohort.gold_checksum(), checksum);
    let n = cal.probabilities.len().max(1) as f64;
    let report = CalibrationReport {
        fit: cal.fit,
        score: "ln(1 + anchor count)",
        n_gold_train: split.gold_train.len(),
        n_silver: cal.silver_indices.len(),
        mean_silver_probability: cal.probabilities.iter().sum::<f64>() / n,
    };
    save_cohort(&cohort, &ctx.out(COHORT_CALIBRATED)).stage("calibrate")?;
    write_json(&ctx.out(CALIBRATION), &report).stage("calibrate")?;
    write_json(&ctx.out(SPLIT), &split).stage("calibrate")
}
