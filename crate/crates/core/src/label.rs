use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary class of a recording. `Df` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "REAL")]
    Real,
    #[serde(rename = "DF")]
    Df,
}

impl Label {
    /// `-1` for real, `+1` for synthetic.
    pub fn sign(self) -> f64 {
        match self {
            Label::Real => -1.0,
            Label::Df => 1.0,
        }
    }

    /// Positive scores map to `Df`; zero maps to `Real`.
    pub fn from_score(score: f64) -> Self {
        if score > 0.0 {
            Label::Df
        } else {
            Label::Real
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "REAL",
            Label::Df => "DF",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "REAL" => Ok(Label::Real),
            "DF" => Ok(Label::Df),
            other => Err(Error::invalid(format!("unknown label `{other}`"))),
        }
    }
}

/// Errors unless both classes occur in `labels`.
pub(crate) fn require_both_classes(labels: &[Label], what: &str) -> Result<()> {
    let df = labels.contains(&Label::Df);
    let real = labels.contains(&Label::Real);
    if df && real {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must contain both REAL and DF rows")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_threshold() {
        assert_eq!(Label::from_score(2.3), Label::Df);
        assert_eq!(Label::from_score(0.0), Label::Real);
        assert_eq!(Label::from_score(-0.1), Label::Real);
    }

    #[test]
    fn parse_round_trip() {
        for l in [Label::Real, Label::Df] {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
        }
        assert!("real".parse::<Label>().is_err());
    }
}
