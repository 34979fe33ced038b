//! Model roster: which models exist, where they live, which languages they speak.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::language::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bloc {
    #[serde(rename = "Arabic Countries")]
    ArabicCountries,
    China,
    Russia,
    Western,
}

impl Bloc {
    /// Geopolitical bloc of the country an LLM was created in.
    pub fn from_country(country: &str) -> Option<Bloc> {
        match country.trim().to_lowercase().as_str() {
            "china" | "prc" => Some(Bloc::China),
            "russia" => Some(Bloc::Russia),
            "uae" | "united arab emirates" | "saudi arabia" | "qatar" | "egypt" => {
                Some(Bloc::ArabicCountries)
            }
            "us" | "usa" | "united states" | "france" | "germany" | "israel" | "uk"
            | "united kingdom" | "canada" => Some(Bloc::Western),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Bloc::ArabicCountries => "Arabic Countries",
            Bloc::China => "China",
            Bloc::Russia => "Russia",
            Bloc::Western => "Western",
        }
    }
}

impl fmt::Display for Bloc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    /// `POST {base_url}/chat/completions` with bearer auth.
    Openai,
    /// `POST {base_url}/messages` with `x-api-key`.
    Anthropic,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub kind: EndpointKind,
    #[serde(default)]
    pub base_url: String,
    /// Model name sent on the wire.
    #[serde(default)]
    pub model: String,
    /// Name of the environment variable holding the credential.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Display name of the API provider, kept as run metadata.
    #[serde(default)]
    pub provider: Option<String>,
    #[serde(default)]
    pub max_in_flight: Option<usize>,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
}

impl Endpoint {
    /// Models behind the same base URL share parallelism limits.
    pub fn provider_key(&self) -> String {
        format!("{:?}:{}", self.kind, self.base_url)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub variant: String,
    pub organization: String,
    pub country: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bloc: Option<Bloc>,
    pub supported_languages: BTreeSet<Language>,
    pub endpoint: Endpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collection_dates: Option<String>,
}

impl ModelSpec {
    pub fn bloc(&self) -> Option<Bloc> {
        self.bloc.or_else(|| Bloc::from_country(&self.country))
    }

    pub fn supports(&self, language: Language) -> bool {
        self.supported_languages.contains(&language)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Roster {
    #[serde(rename = "model", default)]
    pub models: Vec<ModelSpec>,
}

impl Roster {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let roster: Roster = toml::from_str(text).map_err(|e| e.to_string())?;
        roster.validate()?;
        Ok(roster)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut ids = BTreeSet::new();
        for m in &self.models {
            if !ids.insert(m.model_id.as_str()) {
                return Err(format!("duplicate model id `{}`", m.model_id));
            }
            if m.supported_languages.is_empty() {
                return Err(format!("model `{}` supports no languages", m.model_id));
            }
            if m.bloc().is_none() {
                return Err(format!(
                    "model `{}`: cannot derive bloc from country `{}`",
                    m.model_id, m.country
                ));
            }
        }
        Ok(())
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.model_id == model_id)
    }

    /// Models that support `language`, by id.
    pub fn supporting(&self, language: Language) -> BTreeSet<String> {
        self.models
            .iter()
            .filter(|m| m.supports(language))
            .map(|m| m.model_id.clone())
            .collect()
    }

    /// All `(model, language)` pairs the roster can answer, optionally
    /// restricted to a subset of models and languages.
    pub fn respondent_pairs(
        &self,
        models: Option<&BTreeSet<String>>,
        languages: Option<&BTreeSet<Language>>,
    ) -> Vec<(String, Language)> {
        let mut out = Vec::new();
        for m in &self.models {
            if models.is_some_and(|s| !s.contains(&m.model_id)) {
                continue;
            }
            for &l in &m.supported_languages {
                if languages.is_some_and(|s| !s.contains(&l)) {
                    continue;
                }
                out.push((m.model_id.clone(), l));
            }
        }
        out
    }

    /// A copy with every endpoint replaced by the mock endpoint.
    pub fn mocked(&self) -> Roster {
        let mut r = self.clone();
        for m in &mut r.models {
            m.endpoint.kind = EndpointKind::Mock;
        }
        r
    }
}

/// The packaged 19-model roster, with public API endpoints.
pub const REFERENCE_ROSTER: &str = include_str!("../../data/roster.toml");
