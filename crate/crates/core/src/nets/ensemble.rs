use serde::{Deserialize, Serialize};

use super::network::{AuxFeatures, Network};
use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::imgproc::RoiPatch;
use crate::types::Label;

/// Mean-of-probabilities ensemble of independently trained networks.
#[derive(Clone, Debug)]
pub struct EnsembleModel<T> {
    members: Vec<Network<T>>,
}

impl<T: Real> EnsembleModel<T> {
    pub fn new(members: Vec<Network<T>>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidInput("an ensemble needs at least one member".into()))?;
        let side = first.spec().input_side;
        if let Some(m) = members.iter().find(|m| m.spec().input_side != side) {
            return Err(Error::InvalidInput(format!(
                "ensemble members disagree on input side: {side} vs {}",
                m.spec().input_side
            )));
        }
        Ok(EnsembleModel { members })
    }

    pub fn members(&self) -> &[Network<T>] {
        &self.members
    }

    pub fn input_side(&self) -> usize {
        self.members[0].spec().input_side
    }

    pub fn predict(&self, patch: &RoiPatch, aux: &AuxFeatures) -> Result<f64> {
        let probs = self
            .members
            .iter()
            .map(|m| m.forward_member(patch, aux))
            .collect::<Result<Vec<_>>>()?;
        mean_probability(&probs)
    }
}

/// Arithmetic mean of member probabilities.
///
/// Values are summed in ascending order so the result does not depend on
/// member order.
pub fn mean_probability(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::InvalidInput("no member probabilities to average".into()));
    }
    let mut sorted = probs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted.iter().sum::<f64>() / sorted.len() as f64)
}

/// Decision threshold, either on the probability scale or on the `(-1, 1)`
/// score scale used by some reports (`p = (s + 1) / 2`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Probability(f64),
    Score(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Probability(0.5)
    }
}

impl Threshold {
    /// Probability-scale threshold, validated to lie in `(0, 1)`.
    pub fn probability(self) -> Result<f64> {
        let (t, ok) = match self {
            Threshold::Probability(p) => (p, p > 0.0 && p < 1.0),
            Threshold::Score(s) => ((s + 1.0) / 2.0, s > -1.0 && s < 1.0),
        };
        if ok {
            Ok(t)
        } else {
            Err(Error::InvalidInput(format!("threshold {self:?} out of range")))
        }
    }
}

/// `ActiveInflammation` iff `probability >= threshold`.
pub fn classify(probability: f64, threshold: Threshold) -> Result<Label> {
    let t = threshold.probability()?;
    Ok(if probability >= t {
        Label::ActiveInflammation
    } else {
        Label::Healthy
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_two_members() {
        assert!((mean_probability(&[0.6, 0.8]).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(mean_probability(&[0.37]).unwrap(), 0.37);
    }

    #[test]
    fn mean_ignores_member_order() {
        let p = [0.1, 0.7, 0.3333, 0.9];
        let base = mean_probability(&p).unwrap();
        let mut q = p;
        q.reverse();
        assert_eq!(mean_probability(&q).unwrap(), base);
        q.swap(0, 2);
        assert_eq!(mean_probability(&q).unwrap(), base);
    }

    #[test]
    fn score_threshold_maps_to_probability() {
        assert!((Threshold::Score(0.6).probability().unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn tie_goes_to_positive() {
        assert_eq!(
            classify(0.5, Threshold::default()).unwrap(),
            Label::ActiveInflammation
        );
        assert_eq!(
            classify(0.4999, Threshold::default()).unwrap(),
            Label::Healthy
        );
    }

    #[test]
    fn tiny_threshold_makes_everything_positive() {
        let t = Threshold::Probability(f64::EPSILON);
        for p in [0.0001, 0.2, 0.999] {
            assert_eq!(classify(p, t).unwrap(), Label::ActiveInflammation);
        }
    }

    #[test]
    fn out_of_range_thresholds_are_rejected() {
        for t in [
            Threshold::Probability(0.0),
            Threshold::Probability(1.0),
            Threshold::Score(-1.0),
            Threshold::Score(1.5),
        ] {
            assert!(matches!(classify(0.5, t), Err(Error::InvalidInput(_))));
        }
    }
}
