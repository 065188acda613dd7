use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// English plus the nine translation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    De,
    Fr,
    Es,
    Zh,
    Pt,
    It,
    Ru,
    Ko,
    Nl,
}

impl Language {
    pub const ALL: [Language; 10] = [
        Language::En,
        Language::De,
        Language::Fr,
        Language::Es,
        Language::Zh,
        Language::Pt,
        Language::It,
        Language::Ru,
        Language::Ko,
        Language::Nl,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::De => "de",
            Language::Fr => "fr",
            Language::Es => "es",
            Language::Zh => "zh",
            Language::Pt => "pt",
            Language::It => "it",
            Language::Ru => "ru",
            Language::Ko => "ko",
            Language::Nl => "nl",
        }
    }

    /// English name, as substituted into prompts.
    pub fn name(self) -> &'static str {
        match self {
            Language::En => "English",
            Language::De => "German",
            Language::Fr => "French",
            Language::Es => "Spanish",
            Language::Zh => "Chinese",
            Language::Pt => "Portuguese",
            Language::It => "Italian",
            Language::Ru => "Russian",
            Language::Ko => "Korean",
            Language::Nl => "Dutch",
        }
    }

    pub fn from_name(name: &str) -> Option<Language> {
        Self::ALL.into_iter().find(|l| l.name() == name)
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = Error;

    /// Accepts a two-letter code or an English language name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.code() == s)
            .or_else(|| Self::from_name(s))
            .ok_or_else(|| Error::domain("language", format!("unsupported language `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_and_names_round_trip() {
        for l in Language::ALL {
            assert_eq!(l.code().parse::<Language>().unwrap(), l);
            assert_eq!(l.name().parse::<Language>().unwrap(), l);
        }
        assert!("xx".parse::<Language>().is_err());
        assert!("EN".parse::<Language>().is_err());
    }
}
