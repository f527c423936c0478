//! Pipeline for comparing two hospital-acquired-infection (HAI) risk models
//! that run side by side on the same ICU stays.
//!
//! The crate covers the full batch path:
//!
//! - [`ehr`]: the event-stream data model and dataset validation
//! - [`synthgen`]: a seeded synthetic ICU population with planted infections
//! - [`labeling`]: clinical-action (VAP) and ICD-plus-evidence (IRI) labels
//! - [`featurize`]: one-shot sampling, windowed extraction, reference-range imputation
//! - [`cohort`]: cohort intersection, LOS matching, missingness balancing, splits
//! - [`learner`]: exact-greedy gradient-boosted trees with AUC-driven grid search
//! - [`evaluate`]: ROC/AUC, averaged ROC, dual-label confusion, TreeSHAP, reports
//! - [`experiment`]: the {IRI, VAP} x {imputation, balancing} harness
//!
//! Every stochastic step takes an explicit seed; identical inputs produce
//! byte-identical outputs regardless of thread count.

pub mod cohort;
pub mod config;
pub mod ehr;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod featurize;
pub mod io;
pub mod labeling;
pub mod learner;
pub mod rng;
pub mod stats;
pub mod synthgen;
pub mod time;

pub use error::{Error, Result};
