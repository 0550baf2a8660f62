use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// AASM sleep stage. Discriminants are the fixed row/column order used
/// everywhere (confusion matrices, probability tensors).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SleepStage {
    W,
    N1,
    N2,
    N3,
    R,
}

/// Number of sleep stages (classes).
pub const NUM_STAGES: usize = 5;

impl SleepStage {
    pub const ALL: [SleepStage; NUM_STAGES] = [
        SleepStage::W,
        SleepStage::N1,
        SleepStage::N2,
        SleepStage::N3,
        SleepStage::R,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<SleepStage> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SleepStage::W => "W",
            SleepStage::N1 => "N1",
            SleepStage::N2 => "N2",
            SleepStage::N3 => "N3",
            SleepStage::R => "R",
        }
    }

    /// Whether the stage counts as scored sleep (everything but wake).
    pub fn is_sleep(self) -> bool {
        self != SleepStage::W
    }
}

impl fmt::Display for SleepStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown sleep stage {0:?}")]
pub struct UnknownStage(pub String);

impl FromStr for SleepStage {
    type Err = UnknownStage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "W" => Ok(SleepStage::W),
            "N1" => Ok(SleepStage::N1),
            "N2" => Ok(SleepStage::N2),
            "N3" => Ok(SleepStage::N3),
            "R" => Ok(SleepStage::R),
            other => Err(UnknownStage(other.to_string())),
        }
    }
}

/// What a hypnogram annotation says about the epochs it covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoredLabel {
    Stage(SleepStage),
    /// Scored, but not one of the five stages (movement time, unknown).
    Excluded,
}

/// Map a hypnogram annotation text to a scoring label.
///
/// R&K stages 3 and 4 both become N3. Returns `None` for annotations that
/// are not sleep scoring at all (lights markers, events).
pub fn scoring_label(text: &str) -> Option<ScoredLabel> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("movement time") {
        return Some(ScoredLabel::Excluded);
    }
    let rest = t
        .strip_prefix("Sleep stage ")
        .or_else(|| t.strip_prefix("sleep stage "))?;
    let stage = match rest.trim() {
        "W" => SleepStage::W,
        "1" | "N1" => SleepStage::N1,
        "2" | "N2" => SleepStage::N2,
        "3" | "4" | "N3" | "N4" => SleepStage::N3,
        "R" | "REM" => SleepStage::R,
        _ => return Some(ScoredLabel::Excluded),
    };
    Some(ScoredLabel::Stage(stage))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk_stages_merge_into_n3() {
        assert_eq!(scoring_label("Sleep stage 3"), Some(ScoredLabel::Stage(SleepStage::N3)));
        assert_eq!(scoring_label("Sleep stage 4"), Some(ScoredLabel::Stage(SleepStage::N3)));
    }

    #[test]
    fn movement_and_unknown_are_excluded() {
        assert_eq!(scoring_label("Movement time"), Some(ScoredLabel::Excluded));
        assert_eq!(scoring_label("Sleep stage ?"), Some(ScoredLabel::Excluded));
        assert_eq!(scoring_label("Lights off"), None);
    }

    #[test]
    fn string_round_trip() {
        for s in SleepStage::ALL {
            assert_eq!(s.as_str().parse::<SleepStage>().unwrap(), s);
            assert_eq!(SleepStage::from_index(s.index()), Some(s));
        }
        assert!("N4".parse::<SleepStage>().is_err());
    }
}
