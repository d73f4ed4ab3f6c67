//! Toolkit for measuring and modeling the data value of pre-training.
//!
//! Given loss records from training runs that differ in curriculum
//! (trained from scratch vs. pre-trained then fine-tuned), model size, and
//! dataset size, this crate answers: how much extra from-scratch data would
//! a same-size model have needed to match the fine-tuned loss? That quantity
//! — effective data transferred — follows a power law in fine-tuning dataset
//! size and parameter count, and the crate fits its coefficients, classifies
//! data regimes, and makes forward predictions from them.
//!
//! The main pipeline:
//!
//! 1. [`run_store`] — ingest and validate JSON-lines run records, build
//!    cleaned loss curves.
//! 2. [`effective_data`] — interpolate from-scratch baselines to read off
//!    effective data per fine-tuned run.
//! 3. [`transfer_law`] — fit `d_transferred = k * d_finetune^alpha * n^beta`
//!    by the fit-of-fits procedure, with a direct regression cross-check.
//! 4. [`regime`] — estimate data needs per model size and classify rows into
//!    low/medium/high data regimes; report negative transfer.
//! 5. [`predictor`] — loss predictions, few-shot estimates, data-vs-model
//!    trade-offs.
//! 6. [`frontier`] — compute-efficiency views: pareto frontiers, converged
//!    compute, best-epoch summaries.
//!
//! [`synth`] generates run sets from known ground-truth laws so every stage
//! can be checked against an analytic oracle, and [`pipeline`] chains the
//! stages into one call.
//!
//! With the default `parallel` feature, grid generation, per-row extraction,
//! and per-group fits run on rayon; disabling the feature falls back to
//! sequential loops with identical results.

pub mod curve_fit;
pub mod effective_data;
pub mod error;
mod exec;
pub mod frontier;
pub mod pipeline;
pub mod plotdata;
pub mod predictor;
pub mod regime;
pub mod run_store;
pub mod synth;
pub mod transfer_law;

pub use error::{Error, Result};
