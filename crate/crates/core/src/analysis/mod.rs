//! Evaluation metrics and embedding analyses.

mod kmeans;
mod metrics;
mod pca;
mod survival;

pub use kmeans::{adjusted_rand_index, kmeans, ClusterModel, KMeansConfig};
pub use metrics::{
    auc, cross_validate, ppv_at_sensitivity, CvReport, FoldMetrics, FoldScores, OperatingPoint,
    PPV_SENSITIVITY,
};
pub use pca::{pca_reduce, Pca};
pub use survival::{
    cox_hr_binary, kaplan_meier, logrank_test, CoxFit, CoxOutcome, KaplanMeier, KmStep, LogRank,
    SurvivalRecord,
};
