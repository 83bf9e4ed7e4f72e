//! Evaluation harness: transfer matrices, data-free UAPs, ablations,
//! coverage studies and perturbation audits.

mod audit;
mod report;
mod targets;

pub use audit::{audit_manifest, audit_pair, AuditFinding, AuditReport};
pub use report::*;
pub use targets::{select_target, TargetMode};

use rayon::prelude::*;

use crate::attack::{apply_uap, dtuap_craft, everywhere_attack, AttackConfig, AttackOutcome};
use crate::attention::{coverage_table, CoverageRow, CraftedSet};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::imagekit::{Image, NormalizationSpec, Perturbation};
use crate::losses::{LossKind, TargetSpec};
use crate::models::{argmax, Model, ModelZoo, ZooEntry};
use crate::rng::RngState;

const TARGET_STREAM: u64 = 0x7a;
const ATTACK_STREAM: u64 = 0x7b;

pub const VARIANT_BASELINE: &str = "baseline";
pub const VARIANT_EVERYWHERE: &str = "everywhere";

/// A clean, correctly classified image with its attack target.
#[derive(Debug, Clone)]
pub struct EvalItem {
    /// Position in the source dataset.
    pub index: usize,
    pub image: Image,
    pub original: usize,
    pub target: usize,
}

/// Runs `f` on a pool with `jobs` threads (0 = rayon default).
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Takes dataset images in order, keeps those the surrogate classifies
/// correctly, and assigns each a target. Stops after `count` items.
pub fn prepare_items(
    surrogate: &Model,
    data: &Dataset,
    norm: &NormalizationSpec,
    mode: TargetMode,
    count: usize,
    seed: u64,
) -> Result<Vec<EvalItem>> {
    let mut items = Vec::with_capacity(count);
    for (index, (raw, &label)) in data.images.iter().zip(&data.labels).enumerate() {
        if items.len() == count {
            break;
        }
        let image = crate::imagekit::normalize(raw, norm)?;
        let logits = surrogate.forward(image.data())?;
        if argmax(&logits) != label {
            continue;
        }
        let target = select_target(mode, &logits, label, RngState(seed).fork(TARGET_STREAM, index as u64))?;
        items.push(EvalItem {
            index,
            image,
            original: label,
            target,
        });
    }
    if items.len() < count {
        log::warn!(
            "only {} of {count} requested images are correctly classified by {}",
            items.len(),
            surrogate.arch
        );
    }
    Ok(items)
}

/// Per-image seed derived from the run seed and the dataset index.
pub fn item_seed(seed: u64, index: usize) -> u64 {
    RngState(seed).fork(ATTACK_STREAM, index as u64).0
}

/// Attacks every item on the surrogate, in parallel, in item order.
pub fn craft_items(surrogate: &Model, items: &[EvalItem], cfg: &AttackConfig) -> Result<Vec<AttackOutcome>> {
    cfg.validate()?;
    items
        .par_iter()
        .map(|it| {
            let spec = TargetSpec::new(it.target, it.original, cfg.n_high, surrogate.classes)?;
            let mut c = cfg.clone();
            c.seed = item_seed(cfg.seed, it.index);
            everywhere_attack(surrogate, &it.image, &spec, &c)
        })
        .collect()
}

/// Number of adversarial examples each model classifies as their target.
fn count_hits(model: &Model, advs: &[AttackOutcome], items: &[EvalItem]) -> Result<usize> {
    let hits: Vec<bool> = advs
        .par_iter()
        .zip(items)
        .map(|(a, it)| Ok(model.predict(a.adversarial.data())? == it.target))
        .collect::<Result<_>>()?;
    Ok(hits.into_iter().filter(|&h| h).count())
}

fn rate(successes: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        successes as f64 / total as f64
    }
}

/// The variants compared in every experiment: the baseline (N = 0) and,
/// if the config samples blocks, the everywhere attack.
fn variants(cfg: &AttackConfig) -> Vec<(&'static str, AttackConfig)> {
    let mut v = vec![(VARIANT_BASELINE, cfg.baseline())];
    if cfg.samples > 0 {
        v.push((VARIANT_EVERYWHERE, cfg.clone()));
    }
    v
}

/// What a transfer evaluation sweeps over.
#[derive(Debug, Clone)]
pub struct TransferOptions {
    pub losses: Vec<LossKind>,
    pub modes: Vec<TargetMode>,
    pub images: usize,
}

/// One finished transfer cell: the examples crafted for a (surrogate, mode,
/// loss, variant) combination and the report as it stands.
pub struct TransferCell<'a> {
    pub report: &'a TransferReport,
    pub surrogate: &'a str,
    pub mode: TargetMode,
    pub variant: &'a str,
    pub cfg: &'a AttackConfig,
    pub items: &'a [EvalItem],
    pub outcomes: &'a [AttackOutcome],
}

/// Crafts targeted examples on every surrogate and reports how often each
/// zoo model predicts the target. Victim rows include the surrogate itself
/// (white-box); the `AVG` row averages over the other models.
///
/// `on_cell` runs after each cell, for persisting partial results or the
/// crafted examples.
pub fn run_transfer_eval(
    zoo: &ModelZoo,
    data: &Dataset,
    cfg: &AttackConfig,
    opts: &TransferOptions,
    on_cell: &mut dyn FnMut(TransferCell<'_>) -> Result<()>,
) -> Result<TransferReport> {
    cfg.validate()?;
    let mut report = TransferReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        rows: Vec::new(),
    };
    for sur in zoo.surrogates() {
        for &mode in &opts.modes {
            let items = prepare_items(&sur.model, data, &zoo.norm, mode, opts.images, cfg.seed)?;
            for &loss in &opts.losses {
                for (variant, vcfg) in variants(cfg) {
                    let mut c = vcfg;
                    c.loss.kind = loss;
                    let advs = craft_items(&sur.model, &items, &c)?;
                    report.rows.extend(transfer_rows(zoo, sur, &items, &advs, &c, variant, mode)?);
                    log::info!("transfer {} {mode} {loss} {variant} done", sur.name);
                    on_cell(TransferCell {
                        report: &report,
                        surrogate: &sur.name,
                        mode,
                        variant,
                        cfg: &c,
                        items: &items,
                        outcomes: &advs,
                    })?;
                }
            }
        }
    }
    Ok(report)
}

fn transfer_rows(
    zoo: &ModelZoo,
    sur: &ZooEntry,
    items: &[EvalItem],
    advs: &[AttackOutcome],
    cfg: &AttackConfig,
    variant: &str,
    mode: TargetMode,
) -> Result<Vec<TransferRow>> {
    let total = items.len();
    let make = |victim: &str, successes: usize, total: usize| TransferRow {
        surrogate: sur.name.clone(),
        victim: victim.to_string(),
        attack: variant.to_string(),
        loss: cfg.loss.kind.to_string(),
        mode: mode.to_string(),
        n_blocks: cfg.samples,
        m_partitions: cfg.partitions,
        epsilon: cfg.epsilon,
        successes,
        total,
        rate: rate(successes, total),
    };
    let mut rows = Vec::new();
    let (mut avg_s, mut avg_t) = (0, 0);
    for v in &zoo.entries {
        let s = count_hits(&v.model, advs, items)?;
        if v.name != sur.name {
            avg_s += s;
            avg_t += total;
        }
        rows.push(make(&v.name, s, total));
    }
    rows.push(make(AVG_VICTIM, avg_s, avg_t));
    Ok(rows)
}

/// Crafts a data-free UAP per (surrogate, target, variant) and measures how
/// often the surrogate predicts the target on the first `images` dataset
/// images with the UAP added.
pub fn run_uap_eval(
    zoo: &ModelZoo,
    data: &Dataset,
    targets: &[usize],
    cfg: &AttackConfig,
    images: usize,
    on_uap: &mut dyn FnMut(&UapRow, &Perturbation) -> Result<()>,
) -> Result<UapReport> {
    cfg.validate()?;
    let n = images.min(data.len());
    let clean: Vec<Image> = data.images[..n]
        .iter()
        .map(|raw| crate::imagekit::normalize(raw, &zoo.norm))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for sur in zoo.surrogates() {
        for &t in targets {
            if t >= sur.model.classes {
                return Err(Error::Config(format!("UAP target {t} outside {} classes", sur.model.classes)));
            }
        }
        for (variant, vcfg) in variants(cfg) {
            let cells: Vec<(UapRow, Perturbation)> = targets
                .par_iter()
                .map(|&t| {
                    let uap = dtuap_craft(&sur.model, t, &zoo.norm, &vcfg)?;
                    let advs = apply_uap(&uap, &clean)?;
                    let mut successes = 0;
                    for a in &advs {
                        if sur.model.predict(a.data())? == t {
                            successes += 1;
                        }
                    }
                    let row = UapRow {
                        surrogate: sur.name.clone(),
                        target: t,
                        attack: variant.to_string(),
                        loss: vcfg.loss.kind.to_string(),
                        n_blocks: vcfg.samples,
                        m_partitions: vcfg.partitions,
                        epsilon: vcfg.epsilon,
                        successes,
                        total: n,
                        rate: rate(successes, n),
                    };
                    Ok((row, uap))
                })
                .collect::<Result<_>>()?;
            for (row, uap) in cells {
                on_uap(&row, &uap)?;
                rows.push(row);
            }
        }
    }
    Ok(UapReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        rows,
    })
}

/// Which scheme parameter an ablation varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationParam {
    Partitions,
    Samples,
}

impl AblationParam {
    pub fn key(self) -> &'static str {
        match self {
            AblationParam::Partitions => "partitions",
            AblationParam::Samples => "samples",
        }
    }
}

/// Varies M or N with everything else fixed and records the mean transfer
/// rate over victims for each surrogate. Invalid settings (for example
/// N > M²) are skipped and listed in the report.
pub fn ablation_sweep(
    zoo: &ModelZoo,
    data: &Dataset,
    cfg: &AttackConfig,
    param: AblationParam,
    values: &[usize],
    mode: TargetMode,
    images: usize,
) -> Result<AblationReport> {
    let mut report = AblationReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        points: Vec::new(),
        skipped: Vec::new(),
    };
    let (_, h, w) = data.dim();
    for sur in zoo.surrogates() {
        let items = prepare_items(&sur.model, data, &zoo.norm, mode, images, cfg.seed)?;
        for &value in values {
            let mut c = cfg.clone();
            match param {
                AblationParam::Partitions => c.partitions = value,
                AblationParam::Samples => c.samples = value,
            }
            if let Err(e) = c.validate().and_then(|_| check_grid(&c, h, w)) {
                log::warn!("ablation {}={value} skipped: {e}", param.key());
                report.skipped.push(format!("{}={value}: {e}", param.key()));
                continue;
            }
            let advs = craft_items(&sur.model, &items, &c)?;
            let rows = transfer_rows(zoo, sur, &items, &advs, &c, param.key(), mode)?;
            let avg = rows.last().expect("avg row").rate;
            report.points.push(AblationPoint {
                surrogate: sur.name.clone(),
                param: param.key().to_string(),
                value,
                rate: avg,
            });
        }
    }
    report.skipped.dedup();
    Ok(report)
}

fn check_grid(cfg: &AttackConfig, h: usize, w: usize) -> Result<()> {
    if cfg.samples > 0 && (cfg.partitions > h || cfg.partitions > w) {
        return Err(Error::Config(format!(
            "partitions {} exceed the {h}x{w} image",
            cfg.partitions
        )));
    }
    Ok(())
}

/// Crafts examples on `surrogate` with the baseline and everywhere variants
/// and tabulates attention coverage against every zoo model, the surrogate
/// included (its coverage against itself is 1 by construction).
pub fn run_coverage_study(
    zoo: &ModelZoo,
    surrogate: &str,
    data: &Dataset,
    cfg: &AttackConfig,
    images: usize,
    threshold: f64,
) -> Result<Vec<CoverageRow>> {
    let sur = zoo
        .get(surrogate)
        .ok_or_else(|| Error::Config(format!("unknown surrogate {surrogate:?}")))?;
    let items = prepare_items(&sur.model, data, &zoo.norm, TargetMode::Random, images, cfg.seed)?;
    let mut crafted = Vec::new();
    for (variant, c) in variants(cfg) {
        let advs = craft_items(&sur.model, &items, &c)?;
        crafted.push(CraftedSet {
            variant: variant.to_string(),
            examples: advs
                .into_iter()
                .zip(&items)
                .map(|(a, it)| (a.adversarial, it.target))
                .collect(),
        });
    }
    let victims: Vec<(String, &Model)> = zoo
        .entries
        .iter()
        .map(|e| (e.name.clone(), &e.model))
        .collect();
    victims
        .par_iter()
        .map(|v| coverage_table(&sur.model, std::slice::from_ref(v), &crafted, threshold))
        .collect::<Result<Vec<_>>>()
        .map(|t| t.into_iter().flatten().collect())
}
