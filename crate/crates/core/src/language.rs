//! The six official UN languages used for prompting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Arabic,
    Chinese,
    English,
    French,
    Russian,
    Spanish,
}

impl Language {
    pub const ALL: [Language; 6] = [
        Language::Arabic,
        Language::Chinese,
        Language::English,
        Language::French,
        Language::Russian,
        Language::Spanish,
    ];

    /// Two-letter ISO 639-1 code, upper case as used in model rosters.
    pub fn code(self) -> &'static str {
        match self {
            Language::Arabic => "AR",
            Language::Chinese => "ZH",
            Language::English => "EN",
            Language::French => "FR",
            Language::Russian => "RU",
            Language::Spanish => "ES",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Language::Arabic => "arabic",
            Language::Chinese => "chinese",
            Language::English => "english",
            Language::French => "french",
            Language::Russian => "russian",
            Language::Spanish => "spanish",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown language `{0}`")]
pub struct UnknownLanguage(pub String);

impl FromStr for Language {
    type Err = UnknownLanguage;

    /// Accepts ISO codes (`en`, `ZH`) and English names (`French`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Language::ALL
            .into_iter()
            .find(|l| l.code().eq_ignore_ascii_case(&lower) || l.name() == lower)
            .ok_or_else(|| UnknownLanguage(s.to_string()))
    }
}
