//! Two-step thresholded classification.
//!
//! STAY is chosen when its probability strictly exceeds the threshold;
//! otherwise the larger of UP and DOWN wins, with an exact tie going to DOWN.

use serde::{Deserialize, Serialize};

use crate::domain::{Direction, Medication};
use crate::error::{Error, Result};
use crate::nn::ClassProbabilities;

/// Default ESA threshold.
pub const DEFAULT_ESA_THRESHOLD: f64 = 0.475;
/// Default iron threshold.
pub const DEFAULT_IS_THRESHOLD: f64 = 0.470;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub t: f64,
    pub medication: Medication,
}

impl Threshold {
    pub fn new(t: f64, medication: Medication) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(format!("threshold {t} outside [0, 1]")));
        }
        Ok(Threshold { t, medication })
    }

    pub fn default_for(medication: Medication) -> Self {
        let t = match medication {
            Medication::Esa => DEFAULT_ESA_THRESHOLD,
            Medication::Iron => DEFAULT_IS_THRESHOLD,
        };
        Threshold { t, medication }
    }
}

pub fn classify_esa(probs: &ClassProbabilities, threshold: f64) -> Direction {
    if probs.p_stay > threshold {
        return Direction::Stay;
    }
    let p_down = probs.p_down.unwrap_or(0.0);
    if probs.p_up > p_down {
        Direction::Up
    } else {
        Direction::Down
    }
}

pub fn classify_is(probs: &ClassProbabilities, threshold: f64) -> Direction {
    if probs.p_stay > threshold {
        Direction::Stay
    } else {
        Direction::Up
    }
}

pub fn classify(medication: Medication, probs: &ClassProbabilities, threshold: f64) -> Direction {
    match medication {
        Medication::Esa => classify_esa(probs, threshold),
        Medication::Iron => classify_is(probs, threshold),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn esa(up: f64, stay: f64, down: f64) -> ClassProbabilities {
        ClassProbabilities { p_up: up, p_stay: stay, p_down: Some(down) }
    }

    fn iron(up: f64, stay: f64) -> ClassProbabilities {
        ClassProbabilities { p_up: up, p_stay: stay, p_down: None }
    }

    #[test]
    fn esa_examples() {
        assert_eq!(classify_esa(&esa(0.10, 0.60, 0.30), 0.475), Direction::Stay);
        assert_eq!(classify_esa(&esa(0.40, 0.35, 0.25), 0.475), Direction::Up);
        assert_eq!(classify_esa(&esa(0.30, 0.40, 0.30), 0.475), Direction::Down);
    }

    #[test]
    fn iron_examples() {
        assert_eq!(classify_is(&iron(0.40, 0.60), 0.470), Direction::Stay);
        assert_eq!(classify_is(&iron(0.60, 0.40), 0.470), Direction::Up);
        assert_eq!(classify_is(&iron(0.0, 1.0), 1.0), Direction::Up);
    }

    #[test]
    fn boundary_is_strict() {
        assert_eq!(classify_esa(&esa(0.2, 0.5, 0.3), 0.5), Direction::Down);
        assert_eq!(classify_is(&iron(0.5, 0.5), 0.5), Direction::Up);
    }

    #[test]
    fn threshold_range() {
        assert!(Threshold::new(1.01, Medication::Esa).is_err());
        assert_eq!(Threshold::default_for(Medication::Iron).t, 0.470);
    }

    fn triple() -> impl Strategy<Value = ClassProbabilities> {
        (0.001f64..1.0, 0.001f64..1.0, 0.001f64..1.0).prop_map(|(a, b, c)| {
            let s = a + b + c;
            esa(a / s, b / s, c / s)
        })
    }

    proptest! {
        #[test]
        fn stay_iff_threshold_below_p_stay(p in triple(), t in 0.0f64..=1.0) {
            prop_assert_eq!(classify_esa(&p, t) == Direction::Stay, t < p.p_stay);
        }

        #[test]
        fn non_stay_pick_dominates(p in triple()) {
            let d = classify_esa(&p, 1.0);
            prop_assert!(d != Direction::Stay);
            let other = if d == Direction::Up { Direction::Down } else { Direction::Up };
            prop_assert!(p.get(d) >= p.get(other));
        }
    }
}
