//! Report generation from paired ultrasound images, guided by topics
//! distilled without supervision from the report text.
//!
//! The crate is organised along the pipeline:
//!
//! * [`corpus`] ingests, normalises, tokenises and splits records, and can
//!   synthesise planted-template fixtures.
//! * [`embedding`], [`reduction`] and [`clustering`] form the knowledge
//!   distiller that turns report text into topic pseudo-labels.
//! * [`autodiff`] is a small reverse-mode engine; [`model`] builds the
//!   shared-weight visual extractor and the transformer generator on it.
//! * [`training`] runs the combined-loss optimisation loop.
//! * [`metrics`] scores generated reports.

pub mod autodiff;
pub mod clustering;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod reduction;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
