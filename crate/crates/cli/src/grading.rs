//! Trajectory grading shared by the `grade` command and the HTTP service, so
//! both emit the same bytes.

use std::collections::HashMap;

use gdv_core::cases::{CaseKey, CaseRecord};
use gdv_core::orchestration::Trajectory;
use gdv_core::reward::{grade_trajectory, RewardConfig, RewardScheme};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GradeError {
    #[error("malformed trajectory: {0}")]
    Malformed(String),
    #[error("unknown case {0}")]
    UnknownCase(CaseKey),
}

/// Immutable corpus lookup plus the grading settings.
#[derive(Debug, Clone)]
pub struct Grader {
    cases: HashMap<CaseKey, CaseRecord>,
    pub scheme: RewardScheme,
    pub reward: RewardConfig<f64>,
}

impl Grader {
    pub fn new(cases: Vec<CaseRecord>, scheme: RewardScheme, reward: RewardConfig<f64>) -> Self {
        Grader { cases: cases.into_iter().map(|c| (c.key(), c)).collect(), scheme, reward }
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn parse(text: &str) -> Result<Trajectory, GradeError> {
        serde_json::from_str(text).map_err(|e| GradeError::Malformed(e.to_string()))
    }

    pub fn grade(&self, traj: &Trajectory) -> Result<String, GradeError> {
        let case = self.cases.get(traj.case_key()).ok_or_else(|| GradeError::UnknownCase(traj.case_key().clone()))?;
        let breakdown = grade_trajectory(traj, case, self.scheme, &self.reward).expect("looked up by the same key");
        Ok(serde_json::to_string(&breakdown).expect("breakdown serialises"))
    }

    /// One trajectory JSON document in, one breakdown JSON document out.
    pub fn grade_json(&self, text: &str) -> Result<String, GradeError> {
        self.grade(&Self::parse(text)?)
    }
}
