//! Episode rewards: a final property reward spread back with a discount,
//! plus a penalty on every step that needed a valency resample.

use crate::chem::{score, Scorer};
use crate::error::{Error, Result};
use crate::graph::{Alphabet, LabeledGraph};
use crate::sampler::Episode;

/// Map from a raw scorer value to the property reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PropertyTransform {
    Identity,
    /// `exp(x / 3 − 4)`, for penalized logP.
    ExpLogp,
    /// `s · x`; QED uses `s = 2`.
    Scaled(f64),
}

impl PropertyTransform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::ExpLogp => (x / 3.0 - 4.0).exp(),
            Self::Scaled(s) => s * x,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardSpec {
    pub transform: PropertyTransform,
    /// Discount applied per step back from the end.
    pub gamma: f64,
    /// Subtracted once from each step that hit a valency violation.
    pub valency_penalty: f64,
    /// Ask the scorer for steric-strain and filter penalties.
    pub use_penalties: bool,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self { transform: PropertyTransform::Identity, gamma: 0.9, valency_penalty: 1.0, use_penalties: false }
    }
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Invalid(format!("discount {} outside (0, 1]", self.gamma)));
        }
        Ok(())
    }

    /// `R_p − R_ss − R_f`, with `R_p` taken relative to `baseline` when given.
    pub fn final_reward(&self, g: &LabeledGraph, alphabet: &Alphabet, scorer: &mut Scorer, baseline: Option<f64>) -> Result<f64> {
        let property = self.transform.apply(score(g, alphabet, scorer)?) - baseline.unwrap_or(0.0);
        if !self.use_penalties {
            return Ok(property);
        }
        let strain = scorer.steric_strain(g, alphabet)?;
        let filtered = scorer.filter_penalty(g, alphabet)?;
        Ok(property - strain - filtered)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReward {
    pub reward: f64,
    /// Sum of this and every later step's reward.
    pub advantage: f64,
}

/// Step `t` of `T` gets `γ^(T−t)·R`, minus the penalty if it violated
/// valency; advantages are suffix sums.
pub fn assign_rewards(violations: &[bool], final_reward: f64, spec: &RewardSpec) -> Vec<StepReward> {
    let steps = violations.len();
    let mut out: Vec<StepReward> = violations
        .iter()
        .enumerate()
        .map(|(t, &bad)| {
            let share = spec.gamma.powi((steps - 1 - t) as i32) * final_reward;
            let reward = if bad { share - spec.valency_penalty } else { share };
            StepReward { reward, advantage: 0.0 }
        })
        .collect();
    let mut acc = 0.0;
    for step in out.iter_mut().rev() {
        acc += step.reward;
        step.advantage = acc;
    }
    out
}

/// Rewards of a sampled episode; a step violated valency when any draw had
/// to be rejected.
pub fn episode_rewards(episode: &Episode, final_reward: f64, spec: &RewardSpec) -> Vec<StepReward> {
    let violations: Vec<bool> = episode.steps.iter().map(|s| s.resamples > 0).collect();
    assign_rewards(&violations, final_reward, spec)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;

    #[test]
    fn discounted_shares() {
        let r = assign_rewards(&[false; 3], 1.0, &RewardSpec::default());
        let rewards: Vec<f64> = r.iter().map(|s| s.reward).collect();
        assert_relative_eq!(rewards[0], 0.81, epsilon = 1e-15);
        assert_relative_eq!(rewards[1], 0.9, epsilon = 1e-15);
        assert_eq!(rewards[2], 1.0);
    }

    #[test]
    fn violation_penalty_and_suffix_sums() {
        let r = assign_rewards(&[false, true, false], 0.0, &RewardSpec::default());
        assert_eq!(r.iter().map(|s| s.reward).collect::<Vec<_>>(), vec![0.0, -1.0, 0.0]);
        assert_eq!(r.iter().map(|s| s.advantage).collect::<Vec<_>>(), vec![-1.0, -1.0, 0.0]);
    }

    #[test]
    fn property_transforms() {
        assert_eq!(PropertyTransform::ExpLogp.apply(12.0), 1.0);
        assert_eq!(PropertyTransform::Scaled(2.0).apply(0.4), 0.8);
        assert_eq!(PropertyTransform::Identity.apply(-3.0), -3.0);
    }

    #[test]
    fn improvement_reward_is_relative_to_the_input() {
        let a = crate::chem::qm9();
        let out = crate::chem::parse_smiles("CCC", &a).unwrap();
        let input = crate::chem::parse_smiles("CC", &a).unwrap();
        let mut atoms = Scorer::Atoms;
        let base = score(&input, &a, &mut atoms).unwrap();
        assert_eq!(RewardSpec::default().final_reward(&out, &a, &mut atoms, Some(base)).unwrap(), 1.0);
    }

    #[test]
    fn discount_must_be_in_range() {
        assert!(RewardSpec { gamma: 0.0, ..RewardSpec::default() }.validate().is_err());
        assert!(RewardSpec { gamma: 1.0, ..RewardSpec::default() }.validate().is_ok());
    }
}
