//! Cerebral autoregulation index (ARI) estimation from arterial blood
//! pressure and cerebral blood flow velocity.
//!
//! The crate provides the building blocks of a hybrid estimation pipeline:
//!
//! - [`signal`]: sampled-signal containers, CSV ingestion, baselines, and
//!   pressure normalization;
//! - [`aaslid_tiecks`]: the discrete second-order autoregulation simulator
//!   and the ten canonical ARI template responses;
//! - [`fir_simpson`]: the seven-tap FIR pressure-to-velocity relation with
//!   least-squares identification;
//! - [`graybox`]: a serial gray-box velocity estimator whose trainable
//!   subnetwork predicts per-window filter coefficients consumed by a fixed
//!   phenomenological inner product, trained indirectly at the velocity
//!   output;
//! - [`ari_classifier`]: template matching by squared error or correlation
//!   and normo/hyper state comparison;
//! - [`pipeline`]: the end-to-end flow and cohort evaluation;
//! - [`datagen`]: seeded synthetic subjects and cohorts with known ground
//!   truth.

pub mod aaslid_tiecks;
pub mod ari_classifier;
pub mod datagen;
pub mod fir_simpson;
pub mod graybox;
pub mod pipeline;
pub mod signal;
