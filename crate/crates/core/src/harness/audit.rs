//! Checks that saved adversarial images respect the perturbation budget.

use std::fs;
use std::path::Path;

use ndarray::{Array3, Zip};
use serde::Serialize;

use super::RunManifest;
use crate::error::{Error, Result};
use crate::imagekit::io::read_png;
use crate::imagekit::shape_err;

/// Slack for float noise in raw 0..255 units.
const BUDGET_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditFinding {
    pub file: String,
    /// Largest |adv − clean| in raw 0..255 units.
    pub linf: f64,
    pub min: f64,
    pub max: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub epsilon: f64,
    pub findings: Vec<AuditFinding>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.findings.iter().all(|f| f.ok)
    }

    pub fn violations(&self) -> impl Iterator<Item = &AuditFinding> {
        self.findings.iter().filter(|f| !f.ok)
    }
}

/// Compares a clean and an adversarial image, both in raw 0..255 units.
pub fn audit_pair(file: &str, clean: &Array3<f64>, adv: &Array3<f64>, epsilon: f64) -> Result<AuditFinding> {
    if clean.dim() != adv.dim() {
        return Err(shape_err(adv.dim(), clean.dim()));
    }
    let mut linf = 0.0f64;
    Zip::from(clean).and(adv).for_each(|&c, &a| linf = linf.max((a - c).abs()));
    let min = adv.iter().copied().fold(f64::INFINITY, f64::min);
    let max = adv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ok = linf <= epsilon + BUDGET_SLACK && min >= 0.0 && max <= 255.0 && linf.is_finite();
    Ok(AuditFinding {
        file: file.to_string(),
        linf,
        min,
        max,
        ok,
    })
}

/// Audits every image listed in an attack-run manifest. Paths in the
/// manifest are resolved relative to its directory.
pub fn audit_manifest(path: &Path) -> Result<AuditReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let findings = manifest
        .images
        .iter()
        .map(|e| {
            let clean = read_png(&base.join(&e.source))?;
            let adv = read_png(&base.join(&e.output))?;
            audit_pair(&e.output, &clean, &adv, manifest.epsilon)
        })
        .collect::<Result<_>>()?;
    Ok(AuditReport {
        epsilon: manifest.epsilon,
        findings,
    })
}
