//! Training curricula. Two gradual protocols are provided: growing the
//! vocabulary one class at a time at full trial length, and growing the
//! trial length over a delay ladder at full vocabulary. A single-stage
//! schedule covers training without a curriculum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taskgen::{admissible_pairs, MIN_DELAY};

/// When a stage hands over to the next one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvanceRule {
    /// Advance once the stage's evaluation accuracy has been at or above
    /// `threshold` for `window` consecutive evaluations.
    AccuracyThreshold { threshold: f64, window: usize },
    /// Advance after a fixed number of optimizer steps in the stage.
    FixedSteps(u64),
    /// Never advance; the stage runs until the step budget is spent.
    Never,
}

impl AdvanceRule {
    /// Decide advancement from the stage's evaluation history (oldest first)
    /// and the number of optimizer steps spent in the stage so far.
    pub fn should_advance(&self, accuracy_history: &[f64], steps_in_stage: u64) -> bool {
        match *self {
            AdvanceRule::AccuracyThreshold { threshold, window } => {
                window > 0
                    && accuracy_history.len() >= window
                    && accuracy_history[accuracy_history.len() - window..]
                        .iter()
                        .all(|&a| a >= threshold)
            }
            AdvanceRule::FixedSteps(k) => steps_in_stage >= k,
            AdvanceRule::Never => false,
        }
    }
}

/// One curriculum stage: which classes are trained, how long trials are,
/// and when to move on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub vocabulary: Vec<usize>,
    pub t_max: usize,
    pub advance: AdvanceRule,
}

/// The curriculum protocols the trainer knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Vocabulary curriculum: start from two classes, add one per stage.
    Vocabulary,
    /// Delay curriculum: full vocabulary, trial length grows over a ladder.
    Delay,
    /// No curriculum: one stage with everything.
    None,
}

/// A validated sequence of stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub protocol: Protocol,
    pub stages: Vec<Stage>,
}

impl CurriculumSchedule {
    fn validate(self) -> Result<Self> {
        if self.stages.is_empty() {
            return Err(Error::Schedule("schedule has no stages".into()));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.vocabulary.is_empty() {
                return Err(Error::Schedule(format!("stage {i} has an empty vocabulary")));
            }
            let mut seen = stage.vocabulary.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != stage.vocabulary.len() {
                return Err(Error::Schedule(format!("stage {i} repeats a class")));
            }
            if admissible_pairs(stage.t_max) == 0 {
                return Err(Error::Schedule(format!(
                    "stage {i} trial length {} admits no stimulus/trigger placement (minimum {})",
                    stage.t_max,
                    MIN_DELAY + 1
                )));
            }
            if let AdvanceRule::AccuracyThreshold { threshold, window } = stage.advance {
                if !(0.0..=1.0).contains(&threshold) || window == 0 {
                    return Err(Error::Schedule(format!(
                        "stage {i} has an invalid advance rule (threshold {threshold}, window {window})"
                    )));
                }
            }
        }
        Ok(self)
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, idx: usize) -> &Stage {
        &self.stages[idx]
    }

    pub fn final_stage(&self) -> &Stage {
        self.stages.last().expect("validated schedules are nonempty")
    }

    /// Longest trial length over all stages.
    pub fn max_t_max(&self) -> usize {
        self.stages.iter().map(|s| s.t_max).max().unwrap_or(0)
    }

    /// The class that joins the task when entering `stage_idx`, if entering
    /// it grows the vocabulary by exactly one class.
    pub fn introduced_class(&self, stage_idx: usize) -> Option<usize> {
        if stage_idx == 0 || stage_idx >= self.stages.len() {
            return None;
        }
        let prev = &self.stages[stage_idx - 1].vocabulary;
        let cur = &self.stages[stage_idx].vocabulary;
        let fresh: Vec<usize> = cur.iter().copied().filter(|c| !prev.contains(c)).collect();
        match fresh[..] {
            [c] if cur.len() == prev.len() + 1 => Some(c),
            _ => None,
        }
    }
}

/// Vocabulary curriculum over `class_order`: the first stage trains the
/// first two classes, and each later stage appends the next class, all at
/// trial length `t_max` with the same advance rule (the last stage never
/// advances).
pub fn vocu_schedule(class_order: &[usize], t_max: usize, advance: AdvanceRule) -> Result<CurriculumSchedule> {
    if class_order.len() < 2 {
        return Err(Error::Schedule(format!(
            "vocabulary curriculum needs at least two classes, got {}",
            class_order.len()
        )));
    }
    let stages = (2..=class_order.len())
        .map(|n| Stage {
            vocabulary: class_order[..n].to_vec(),
            t_max,
            advance: if n == class_order.len() { AdvanceRule::Never } else { advance },
        })
        .collect();
    CurriculumSchedule { protocol: Protocol::Vocabulary, stages }.validate()
}

/// Delay curriculum: full vocabulary `0..n_classes` at every stage, trial
/// length climbing the strictly increasing `delays` ladder.
pub fn decu_schedule(n_classes: usize, delays: &[usize], advance: AdvanceRule) -> Result<CurriculumSchedule> {
    if n_classes == 0 {
        return Err(Error::Schedule("delay curriculum needs at least one class".into()));
    }
    if delays.is_empty() {
        return Err(Error::Schedule("delay ladder is empty".into()));
    }
    if delays.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Schedule(format!("delay ladder must be strictly increasing, got {delays:?}")));
    }
    let vocabulary: Vec<usize> = (0..n_classes).collect();
    let stages = delays
        .iter()
        .enumerate()
        .map(|(i, &t_max)| Stage {
            vocabulary: vocabulary.clone(),
            t_max,
            advance: if i + 1 == delays.len() { AdvanceRule::Never } else { advance },
        })
        .collect();
    CurriculumSchedule { protocol: Protocol::Delay, stages }.validate()
}

/// One stage, full vocabulary, no advancement: training without a
/// curriculum.
pub fn single_stage_schedule(n_classes: usize, t_max: usize) -> Result<CurriculumSchedule> {
    if n_classes == 0 {
        return Err(Error::Schedule("schedule needs at least one class".into()));
    }
    let stages = vec![Stage { vocabulary: (0..n_classes).collect(), t_max, advance: AdvanceRule::Never }];
    CurriculumSchedule { protocol: Protocol::None, stages }.validate()
}

/// Default delay ladder for a target trial length of 20.
pub const DEFAULT_DELAY_LADDER: [usize; 5] = [6, 9, 12, 16, 20];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_schedule_grows_one_class_per_stage() {
        let order: Vec<usize> = (0..10).collect();
        let s = vocu_schedule(&order, 20, AdvanceRule::AccuracyThreshold { threshold: 0.9, window: 3 }).unwrap();
        assert_eq!(s.n_stages(), 9);
        assert_eq!(s.stage(0).vocabulary, vec![0, 1]);
        assert_eq!(s.final_stage().vocabulary.len(), 10);
        assert!(s.stages.iter().all(|st| st.t_max == 20));
        for i in 1..9 {
            assert_eq!(s.introduced_class(i), Some(i + 1));
        }
        assert_eq!(s.introduced_class(0), None);
        assert_eq!(s.final_stage().advance, AdvanceRule::Never);
    }

    #[test]
    fn vocabulary_schedule_respects_custom_order() {
        let s = vocu_schedule(&[4, 2, 7], 10, AdvanceRule::FixedSteps(50)).unwrap();
        assert_eq!(s.stage(0).vocabulary, vec![4, 2]);
        assert_eq!(s.introduced_class(1), Some(7));
    }

    #[test]
    fn delay_schedule_walks_the_ladder() {
        let s = decu_schedule(10, &DEFAULT_DELAY_LADDER, AdvanceRule::AccuracyThreshold { threshold: 0.9, window: 3 })
            .unwrap();
        assert_eq!(s.n_stages(), 5);
        assert!(s.stages.iter().all(|st| st.vocabulary.len() == 10));
        let lengths: Vec<usize> = s.stages.iter().map(|st| st.t_max).collect();
        assert_eq!(lengths, vec![6, 9, 12, 16, 20]);
        assert_eq!(s.introduced_class(2), None, "delay stages introduce no class");
        assert_eq!(s.max_t_max(), 20);
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        assert!(vocu_schedule(&[0], 20, AdvanceRule::Never).is_err());
        assert!(decu_schedule(3, &[], AdvanceRule::Never).is_err());
        assert!(decu_schedule(3, &[6, 6, 9], AdvanceRule::Never).is_err());
        assert!(decu_schedule(3, &[9, 6], AdvanceRule::Never).is_err());
        assert!(decu_schedule(3, &[5, 9], AdvanceRule::Never).is_err(), "length 5 has no placement");
        assert!(vocu_schedule(&[0, 1, 1], 20, AdvanceRule::Never).is_err(), "duplicate class");
        assert!(
            vocu_schedule(&[0, 1, 2], 20, AdvanceRule::AccuracyThreshold { threshold: 1.5, window: 3 }).is_err()
        );
    }

    #[test]
    fn threshold_rule_needs_a_full_window_of_passing_evals() {
        let rule = AdvanceRule::AccuracyThreshold { threshold: 0.9, window: 3 };
        assert!(!rule.should_advance(&[0.95, 0.96], 10_000));
        assert!(!rule.should_advance(&[0.95, 0.85, 0.96, 0.97], 10_000));
        assert!(rule.should_advance(&[0.5, 0.92, 0.95, 0.91], 1));
        assert!(AdvanceRule::FixedSteps(100).should_advance(&[], 100));
        assert!(!AdvanceRule::FixedSteps(100).should_advance(&[1.0; 10], 99));
        assert!(!AdvanceRule::Never.should_advance(&[1.0; 100], u64::MAX));
    }

    #[test]
    fn single_stage_has_everything_at_once() {
        let s = single_stage_schedule(2, 15).unwrap();
        assert_eq!(s.protocol, Protocol::None);
        assert_eq!(s.n_stages(), 1);
        assert_eq!(s.stage(0).vocabulary, vec![0, 1]);
    }
}
