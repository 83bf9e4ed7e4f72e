//! Targeted attack objectives. CE, Logit and Margin are scalar losses to be
//! minimized; SupHigh is an ascent direction built from two gradients.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{softmax, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "CE")]
    Ce,
    Logit,
    Margin,
    SupHigh,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "CE",
            LossKind::Logit => "Logit",
            LossKind::Margin => "Margin",
            LossKind::SupHigh => "SupHigh",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CE" => Ok(LossKind::Ce),
            "Logit" => Ok(LossKind::Logit),
            "Margin" => Ok(LossKind::Margin),
            "SupHigh" => Ok(LossKind::SupHigh),
            other => Err(Error::invalid(format!(
                "unknown loss {other:?} (expected CE, Logit, Margin or SupHigh)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub kind: LossKind,
    /// Margin temperature.
    pub tau: f64,
    /// SupHigh weight on the original-class logit.
    pub beta1: f64,
    /// SupHigh weight on the projected high-confidence suppression term.
    pub beta2: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            kind: LossKind::Ce,
            tau: 5.0,
            beta1: 1.0,
            beta2: 1.0,
        }
    }
}

impl LossParams {
    pub fn with_kind(kind: LossKind) -> Self {
        LossParams {
            kind,
            ..LossParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid("temperature must be > 0"));
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0) {
            return Err(Error::invalid("SupHigh weights must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub target: usize,
    pub original: usize,
    /// Number of extra high-confidence classes SupHigh suppresses.
    pub n_high: usize,
}

impl TargetSpec {
    pub fn new(target: usize, original: usize, n_high: usize, classes: usize) -> Result<Self> {
        if target >= classes || original >= classes {
            return Err(Error::invalid(format!(
                "target {target} / original {original} outside {classes} classes"
            )));
        }
        if target == original {
            return Err(Error::invalid("target class equals original class"));
        }
        Ok(TargetSpec {
            target,
            original,
            n_high,
        })
    }
}

fn check_target(logits: &Array1<f64>, target: usize) -> Result<()> {
    if target >= logits.len() {
        return Err(Error::invalid(format!(
            "target {target} outside {} logits",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    Ok(())
}

fn log_sum_exp(v: &Array1<f64>) -> f64 {
    let m = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + v.mapv(|x| (x - m).exp()).sum().ln()
}

/// `-log softmax(logits)[target]`.
pub fn ce_targeted(logits: &Array1<f64>, target: usize) -> Result<f64> {
    check_target(logits, target)?;
    Ok(log_sum_exp(logits) - logits[target])
}

/// `-logits[target]`.
pub fn logit_loss(logits: &Array1<f64>, target: usize) -> Result<f64> {
    check_target(logits, target)?;
    Ok(-logits[target])
}

/// Cross-entropy on temperature-scaled logits.
pub fn margin_loss(logits: &Array1<f64>, target: usize, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid("temperature must be > 0"));
    }
    ce_targeted(&(logits / tau), target)
}

/// Loss value and `∂loss/∂logits` for the scalar losses.
pub fn loss_and_grad(
    logits: &Array1<f64>,
    target: usize,
    params: &LossParams,
) -> Result<(f64, Array1<f64>)> {
    check_target(logits, target)?;
    match params.kind {
        LossKind::Ce => {
            let mut g = softmax(logits);
            g[target] -= 1.0;
            Ok((ce_targeted(logits, target)?, g))
        }
        LossKind::Margin => {
            let tau = params.tau;
            let loss = margin_loss(logits, target, tau)?;
            let mut g = softmax(&(logits / tau));
            g[target] -= 1.0;
            Ok((loss, g / tau))
        }
        LossKind::Logit => {
            let mut g = Array1::zeros(logits.len());
            g[target] = -1.0;
            Ok((-logits[target], g))
        }
        LossKind::SupHigh => Err(Error::invalid(
            "SupHigh is a composite direction, not a scalar loss",
        )),
    }
}

/// Result of a Gram–Schmidt rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub value: Array3<f64>,
    /// `a` was all-zero, so `b` was returned unchanged.
    pub degenerate: bool,
}

/// `b - a·⟨a,b⟩/⟨a,a⟩`: the component of `b` orthogonal to `a`.
pub fn perp_project(b: &Array3<f64>, a: &Array3<f64>) -> Result<Projection> {
    if a.dim() != b.dim() {
        return Err(crate::imagekit::shape_err(a.dim(), b.dim()));
    }
    let aa: f64 = a.iter().map(|v| v * v).sum();
    if aa == 0.0 {
        return Ok(Projection {
            value: b.clone(),
            degenerate: true,
        });
    }
    let ab: f64 = Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + x * y);
    let k = ab / aa;
    let mut value = b.clone();
    Zip::from(&mut value).and(a).for_each(|v, &x| *v -= k * x);
    Ok(Projection {
        value,
        degenerate: false,
    })
}

/// The `n_high` most confident classes excluding target and original.
pub fn high_confidence_classes(logits: &Array1<f64>, spec: &TargetSpec) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len())
        .filter(|&i| i != spec.target && i != spec.original)
        .collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(spec.n_high);
    idx
}

/// SupHigh ascent direction w.r.t. the model input:
/// `g1 - β₂·perp(g2, g1)` with `g1 = ∇(l_t - β₁ l_o)` and
/// `g2 = ∇Σ l_high`. High-confidence classes are picked from the current
/// logits.
pub fn suphigh_direction(
    model: &Model,
    x: &Array3<f64>,
    spec: &TargetSpec,
    beta1: f64,
    beta2: f64,
) -> Result<(Array3<f64>, Array1<f64>)> {
    let trace = model.trace(x)?;
    let k = model.classes;
    let mut d1 = Array1::zeros(k);
    d1[spec.target] += 1.0;
    d1[spec.original] -= beta1;
    let g1 = model.backprop(&trace, &d1);
    let high = high_confidence_classes(&trace.logits, spec);
    if high.is_empty() || beta2 == 0.0 {
        return Ok((g1, trace.logits));
    }
    let mut d2 = Array1::zeros(k);
    for &h in &high {
        d2[h] = 1.0;
    }
    let g2 = model.backprop(&trace, &d2);
    let proj = perp_project(&g2, &g1)?;
    if proj.degenerate {
        log::warn!("SupHigh: target/original gradient vanished; suppression term used as-is");
    }
    Ok((g1 - &(proj.value * beta2), trace.logits))
}
