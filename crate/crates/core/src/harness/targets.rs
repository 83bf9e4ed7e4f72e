use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

/// How attack targets are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Uniform over every class except the original.
    Random,
    /// The class with the lowest clean surrogate logit.
    LeastLikely,
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetMode::Random => "random",
            TargetMode::LeastLikely => "least_likely",
        })
    }
}

impl FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(TargetMode::Random),
            "least_likely" => Ok(TargetMode::LeastLikely),
            other => Err(Error::Config(format!("unknown target mode {other:?}"))),
        }
    }
}

pub fn select_target(
    mode: TargetMode,
    clean_logits: &Array1<f64>,
    original: usize,
    rng: RngState,
) -> Result<usize> {
    let k = clean_logits.len();
    if k < 2 {
        return Err(Error::invalid("target selection needs at least 2 classes"));
    }
    if original >= k {
        return Err(Error::invalid(format!("original class {original} outside {k}")));
    }
    match mode {
        TargetMode::Random => {
            let t = rng.generator().gen_range(0..k - 1);
            Ok(if t >= original { t + 1 } else { t })
        }
        TargetMode::LeastLikely => Ok(clean_logits
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .expect("non-empty logits")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let two = Array1::from(vec![0.0, 0.0]);
        for s in 0..20 {
            assert_eq!(select_target(TargetMode::Random, &two, 0, RngState(s)).unwrap(), 1);
        }
        let l = Array1::from(vec![5.0, 1.0, -3.0]);
        assert_eq!(select_target(TargetMode::LeastLikely, &l, 0, RngState(0)).unwrap(), 2);
        let seq = |s| {
            (0..30)
                .map(|i| select_target(TargetMode::Random, &Array1::zeros(10), 3, RngState(s).fork(0, i)).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(4), seq(4));
        assert!(seq(4).iter().all(|&t| t != 3 && t < 10));
        assert!(select_target(TargetMode::Random, &Array1::zeros(1), 0, RngState(0)).is_err());
    }

    #[test]
    fn random_targets_cover_all_other_classes() {
        let mut seen = [false; 5];
        for i in 0..200 {
            seen[select_target(TargetMode::Random, &Array1::zeros(5), 2, RngState(1).fork(0, i)).unwrap()] = true;
        }
        assert_eq!(seen, [true, true, false, true, true]);
    }
}
