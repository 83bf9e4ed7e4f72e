//! Attack engine: IFGSM with MI/DI/TI, the everywhere block scheme and
//! data-free targeted universal perturbations.

mod config;
mod di;
mod engine;
mod ti;
mod uap;

pub use config::{parse_kv, AttackConfig};
pub use di::{di_transform, DiTransform};
pub use engine::{
    everywhere_attack, everywhere_batch_gradient, image_objective, tmdi_attack, AttackOutcome,
};
pub use ti::{gaussian_kernel, mi_accumulate, ti_smooth, MomentumState};
pub use uap::{apply_uap, dtuap_craft};
