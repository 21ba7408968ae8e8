use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Stroke category. Each category is fitted and tested on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Driving,
    Approaching,
    Putting,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Driving, Category::Approaching, Category::Putting];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Driving => "driving",
            Category::Approaching => "approaching",
            Category::Putting => "putting",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownCategory(pub String);

impl fmt::Display for UnknownCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unknown stroke category `{}` (expected drive, approach or putt)",
            self.0
        )
    }
}

impl std::error::Error for UnknownCategory {}

impl FromStr for Category {
    type Err = UnknownCategory;

    /// Case-insensitive; accepts the short and long forms.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "drive" | "driving" => Ok(Category::Driving),
            "approach" | "approaching" => Ok(Category::Approaching),
            "putt" | "putting" => Ok(Category::Putting),
            _ => Err(UnknownCategory(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tokens_case_insensitively() {
        assert_eq!("DRIVE".parse::<Category>().unwrap(), Category::Driving);
        assert_eq!("Approaching".parse::<Category>().unwrap(), Category::Approaching);
        assert_eq!(" putt ".parse::<Category>().unwrap(), Category::Putting);
        assert!("chipping".parse::<Category>().is_err());
    }

    #[test]
    fn display_round_trips() {
        for c in Category::ALL {
            assert_eq!(c.to_string().parse::<Category>().unwrap(), c);
        }
    }
}
