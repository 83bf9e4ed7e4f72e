//! Transferable targeted adversarial examples with the "everywhere" block
//! scheme: baseline iterative attacks (IFGSM with momentum, diverse inputs and
//! translation-invariant smoothing), the block-wise local/global joint
//! attack, GradCAM attention coverage and data-free targeted universal
//! perturbations, plus a desk-scale model zoo and evaluation harness.

pub mod attack;
pub mod attention;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod imagekit;
pub mod losses;
pub mod models;
pub mod rng;

pub use error::{Error, Result};
