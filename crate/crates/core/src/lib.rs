//! Bias-mitigation pipeline for synthetic tabular data: K% removal and
//! cluster-scored augmentation on the training set, a Gaussian copula (or an
//! external generator) for synthesis, a logistic-regression classifier, and
//! single-attribute plus intersectional fairness metrics.

pub mod augment;
pub mod classifier;
pub mod fairness;
pub mod kremoval;
pub mod pipeline;
pub mod synthesis;
pub mod table;
