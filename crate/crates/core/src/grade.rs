use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// School grade band of a knowledge entry, Kindergarten through Grade 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GradeLevel {
    Kindergarten,
    Grade1,
    Grade2,
    Grade3,
    Grade4,
    Grade5,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown grade label `{0}`")]
pub struct UnknownGrade(pub String);

impl GradeLevel {
    pub const ALL: [GradeLevel; 6] = [
        GradeLevel::Kindergarten,
        GradeLevel::Grade1,
        GradeLevel::Grade2,
        GradeLevel::Grade3,
        GradeLevel::Grade4,
        GradeLevel::Grade5,
    ];

    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn from_rank(rank: u8) -> Option<Self> {
        Self::ALL.get(rank as usize).copied()
    }

    /// Label used in knowledge-base files and on the command line.
    pub fn label(self) -> &'static str {
        match self {
            GradeLevel::Kindergarten => "Kindergarten",
            GradeLevel::Grade1 => "Grade1",
            GradeLevel::Grade2 => "Grade2",
            GradeLevel::Grade3 => "Grade3",
            GradeLevel::Grade4 => "Grade4",
            GradeLevel::Grade5 => "Grade5",
        }
    }

    /// Human-facing name, as shown to the language model.
    pub fn display_name(self) -> &'static str {
        match self {
            GradeLevel::Kindergarten => "Kindergarten",
            GradeLevel::Grade1 => "First Grade",
            GradeLevel::Grade2 => "Second Grade",
            GradeLevel::Grade3 => "Third Grade",
            GradeLevel::Grade4 => "Fourth Grade",
            GradeLevel::Grade5 => "Fifth Grade",
        }
    }
}

impl fmt::Display for GradeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for GradeLevel {
    type Err = UnknownGrade;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|g| g.label().eq_ignore_ascii_case(trimmed) || g.display_name().eq_ignore_ascii_case(trimmed))
            .or_else(|| match trimmed.to_ascii_lowercase().as_str() {
                "k" => Some(GradeLevel::Kindergarten),
                _ => None,
            })
            .ok_or_else(|| UnknownGrade(s.to_string()))
    }
}
