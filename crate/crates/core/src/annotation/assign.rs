//! Annotator groups and task slices.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_GROUP_SIZE: usize = 3;
pub const DEFAULT_SLICE_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssignError {
    #[error("{annotators} annotator(s) cannot form a group of {group_size}")]
    TooFewAnnotators { annotators: usize, group_size: usize },
    #[error("{annotators} annotators do not divide into groups of {group_size}")]
    Indivisible { annotators: usize, group_size: usize },
    #[error("annotator {0} is listed twice")]
    DuplicateAnnotator(String),
    #[error("group size must be at least 1")]
    ZeroGroupSize,
    #[error("slice fraction {0} must be in (0, 1]")]
    Fraction(f64),
}

/// A contiguous run of task indices `start..end` handled by one group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceAssignment {
    pub start: usize,
    pub end: usize,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub groups: Vec<Vec<String>>,
    pub slices: Vec<SliceAssignment>,
    pub seed: u64,
}

impl Assignment {
    pub fn group_of_task(&self, task_index: usize) -> Option<usize> {
        self.slices
            .iter()
            .find(|s| (s.start..s.end).contains(&task_index))
            .map(|s| s.group)
    }

    pub fn annotators_for(&self, task_index: usize) -> &[String] {
        self.group_of_task(task_index)
            .map(|g| self.groups[g].as_slice())
            .unwrap_or_default()
    }

    /// Task indices assigned to `annotator`, ascending.
    pub fn tasks_for(&self, annotator: &str) -> Vec<usize> {
        let Some(g) = self.groups.iter().position(|grp| grp.iter().any(|a| a == annotator)) else {
            return Vec::new();
        };
        self.slices
            .iter()
            .filter(|s| s.group == g)
            .flat_map(|s| s.start..s.end)
            .collect()
    }
}

/// Shuffles annotators into groups of `group_size`, cuts the `task_count`
/// tasks into contiguous slices of `round(slice_fraction · task_count)`
/// (at least one) and hands slice `i` to group `i mod groups`.
pub fn assign_groups(
    task_count: usize,
    annotators: &[String],
    group_size: usize,
    slice_fraction: f64,
    seed: u64,
) -> Result<Assignment, AssignError> {
    if group_size == 0 {
        return Err(AssignError::ZeroGroupSize);
    }
    if !(slice_fraction > 0.0 && slice_fraction <= 1.0) {
        return Err(AssignError::Fraction(slice_fraction));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = annotators.iter().find(|a| !seen.insert(a.as_str())) {
        return Err(AssignError::DuplicateAnnotator(dup.clone()));
    }
    if annotators.len() < group_size {
        return Err(AssignError::TooFewAnnotators {
            annotators: annotators.len(),
            group_size,
        });
    }
    if !annotators.len().is_multiple_of(group_size) {
        return Err(AssignError::Indivisible {
            annotators: annotators.len(),
            group_size,
        });
    }
    let mut shuffled = annotators.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let groups: Vec<Vec<String>> = shuffled.chunks(group_size).map(<[String]>::to_vec).collect();

    let slice_len = ((slice_fraction * task_count as f64).round() as usize).max(1);
    let slices = (0..task_count)
        .step_by(slice_len)
        .enumerate()
        .map(|(i, start)| SliceAssignment {
            start,
            end: (start + slice_len).min(task_count),
            group: i % groups.len(),
        })
        .collect();
    Ok(Assignment { groups, slices, seed })
}
