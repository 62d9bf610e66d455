use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Whether a text touches a facet at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relevance {
    Related,
    Unrelated,
}

impl Relevance {
    pub const ALL: [Relevance; 2] = [Relevance::Related, Relevance::Unrelated];

    /// Class index used by the relevance heads.
    pub fn class(self) -> usize {
        match self {
            Relevance::Related => 0,
            Relevance::Unrelated => 1,
        }
    }

    pub fn from_class(c: usize) -> Self {
        Self::ALL[c]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relevance::Related => "Related",
            Relevance::Unrelated => "Unrelated",
        }
    }
}

/// Ideological leaning within one facet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ideology {
    Left,
    Center,
    Right,
}

impl Ideology {
    pub const ALL: [Ideology; 3] = [Ideology::Left, Ideology::Center, Ideology::Right];

    pub fn class(self) -> usize {
        match self {
            Ideology::Left => 0,
            Ideology::Center => 1,
            Ideology::Right => 2,
        }
    }

    pub fn from_class(c: usize) -> Self {
        Self::ALL[c]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ideology::Left => "Left",
            Ideology::Center => "Center",
            Ideology::Right => "Right",
        }
    }

    /// One-letter tag used in embedding record keys.
    pub fn short(self) -> &'static str {
        match self {
            Ideology::Left => "L",
            Ideology::Center => "C",
            Ideology::Right => "R",
        }
    }
}

impl fmt::Display for Relevance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Ideology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// Label strings are case-sensitive.
impl FromStr for Relevance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "Related" => Ok(Relevance::Related),
            "Unrelated" => Ok(Relevance::Unrelated),
            other => Err(Error::Data(format!("unknown relevance label {other:?}"))),
        }
    }
}

impl FromStr for Ideology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "Left" => Ok(Ideology::Left),
            "Center" => Ok(Ideology::Center),
            "Right" => Ok(Ideology::Right),
            other => Err(Error::Data(format!("unknown ideology label {other:?}"))),
        }
    }
}

/// Which of the two subtasks a model is trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subtask {
    Relevance,
    Ideology,
}

impl Subtask {
    pub fn num_classes(self) -> usize {
        match self {
            Subtask::Relevance => 2,
            Subtask::Ideology => 3,
        }
    }
}

impl FromStr for Subtask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "relevance" => Ok(Subtask::Relevance),
            "ideology" => Ok(Subtask::Ideology),
            other => Err(Error::Config(format!("unknown subtask {other:?}"))),
        }
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subtask::Relevance => "relevance",
            Subtask::Ideology => "ideology",
        })
    }
}
