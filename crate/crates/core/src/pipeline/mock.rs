//! Deterministic stand-in for every model in `--mock` runs, plus a small
//! fixture corpus to drive it end to end.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filtering::write_file;
use crate::language::Language;
use crate::providers::{ChatRequest, Provider, ProviderError, ProviderOutput};
use crate::tagging::TAGGING_PREAMBLE;
use crate::validation::{scale_for, DESCRIPTION_SYSTEM};

fn h(parts: &[&str]) -> u64 {
    let mut s = Sha256::new();
    for p in parts {
        s.update(p.as_bytes());
        s.update([0u8]);
    }
    u64::from_le_bytes(s.finalize()[..8].try_into().unwrap())
}

/// Uniform in [-1, 1) from a hash.
fn unit(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// One model's simulated behaviour. Replies depend only on the seed, the
/// model id and the request.
pub struct SimulatedProvider {
    seed: String,
    model_id: String,
}

impl SimulatedProvider {
    pub fn new(seed: u64, model_id: &str) -> Self {
        SimulatedProvider { seed: seed.to_string(), model_id: model_id.to_string() }
    }
}

impl Provider for SimulatedProvider {
    fn call(&self, request: &ChatRequest) -> std::result::Result<ProviderOutput, ProviderError> {
        Ok(simulated_reply(&self.seed, &self.model_id, request).into())
    }
}

fn scale_language(text: &str) -> Option<(Language, Vec<String>)> {
    let lower = text.to_lowercase();
    Language::ALL
        .into_iter()
        .map(|l| (l, scale_for(l)))
        .filter(|(_, s)| !s.is_empty() && s.iter().all(|x| lower.contains(&x.to_lowercase())))
        .max_by_key(|(_, s)| s.iter().map(|x| x.len()).sum::<usize>())
}

pub fn simulated_reply(seed: &str, model_id: &str, req: &ChatRequest) -> String {
    let user = req.last_user_text();
    let system = req.system_text().unwrap_or("");
    let hv = h(&[seed, model_id, user]);
    if system == DESCRIPTION_SYSTEM {
        return if hv % 40 == 1 {
            "refusal"
        } else if hv.is_multiple_of(12) {
            "no"
        } else {
            "yes"
        }
        .to_string();
    }
    if system.contains("extracting the label") {
        let input = user
            .split_once("### Input:")
            .map(|(_, rest)| rest.split("### Response:").next().unwrap_or(rest))
            .unwrap_or("")
            .to_lowercase();
        let best = Language::ALL
            .into_iter()
            .flat_map(scale_for)
            .filter(|l| input.contains(&l.to_lowercase()))
            .max_by_key(|l| l.chars().count());
        return best.unwrap_or_else(|| "unknown".to_string());
    }
    if let Some(summary) = user.strip_prefix(TAGGING_PREAMBLE) {
        let summary = summary.rsplit("Summary:\n\n").next().unwrap_or("");
        let codes: Vec<&str> = summary_codes(user);
        let cats: serde_json::Map<String, serde_json::Value> = codes
            .into_iter()
            .map(|c| (c.to_string(), serde_json::json!({ "result": h(&[seed, summary, c]).is_multiple_of(7) })))
            .collect();
        return serde_json::json!({ "categories": cats }).to_string();
    }
    if let Some((lang, scale)) = scale_language(user) {
        // stage 2: the stage-1 profile carries the topic identity
        let profile = user.split("Profile: ").nth(1).map(|s| &s[..s.len().min(16)]).unwrap_or(user);
        let topic = unit(h(&[seed, "topic", profile]));
        let model = unit(h(&[seed, "model", model_id])) * 0.5;
        let language = unit(h(&[seed, "lang", lang.code()])) * 0.3;
        let noise = unit(hv) * 0.35;
        let z = (topic + model + language + noise).clamp(-1.0, 0.999);
        let idx = ((z + 1.0) / 2.0 * scale.len() as f64) as usize;
        let label = &scale[idx.min(scale.len() - 1)];
        return match h(&[seed, "style", model_id, user]) % 10 {
            0..=6 => label.clone(),
            7 | 8 => format!("I would say: {label}."),
            _ => "Hard to say.".to_string(),
        };
    }
    // stage 1: a profile that is the same for every model
    format!("Profile: {:016x}. A public figure with a long career.", h(&[seed, "profile", user]))
}

/// Tag codes listed in a tagging prompt.
fn summary_codes(prompt: &str) -> Vec<&str> {
    prompt
        .lines()
        .filter_map(|l| l.trim().strip_suffix(": {"))
        .filter_map(|k| k.strip_prefix('"').and_then(|k| k.strip_suffix('"')))
        .filter(|k| *k != "categories")
        .collect()
}

const MOCK_MODELS: [(&str, &str); 5] =
    [("mock-us", "USA"), ("mock-cn", "China"), ("mock-ru", "Russia"), ("mock-ae", "UAE"), ("mock-fr", "France")];

/// Topics in the fixture that pass every selection criterion.
pub const FIXTURE_TOPICS: usize = 50;

const OCCUPATIONS: [&str; 5] = ["diplomat", "politician", "social activist", "writer", "military personnel"];

/// Writes a roster, corpus, groups file and `config.toml` under `dir`.
/// Returns the config path.
pub fn write_mock_fixture(dir: &Path) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut roster = String::new();
    for (id, country) in MOCK_MODELS {
        roster.push_str(&format!(
            "[[model]]\nmodel_id = \"{id}\"\nvariant = \"{id}\"\norganization = \"Mock\"\ncountry = \"{country}\"\n\
             supported_languages = [\"arabic\", \"chinese\", \"english\", \"french\", \"russian\", \"spanish\"]\n\
             [model.endpoint]\nkind = \"mock\"\n\n"
        ));
    }
    roster.push_str(
        "[[model]]\nmodel_id = \"judge\"\nvariant = \"judge\"\norganization = \"Mock\"\ncountry = \"USA\"\n\
         supported_languages = [\"english\"]\n[model.endpoint]\nkind = \"mock\"\n",
    );
    write_file(&dir.join("roster.toml"), roster.as_bytes())?;

    let mut pantheon = String::from(
        "id\tname\tbirthyear\tdeathyear\toccupation\tl\tnon_en_page_views\tcoefficient_of_variation\n",
    );
    let mut summaries: Vec<String> = vec![String::new(); Language::ALL.len()];
    let mut add = |id: &str, name: &str, langs: &[Language]| {
        for (i, l) in Language::ALL.into_iter().enumerate() {
            if langs.contains(&l) {
                let line = serde_json::json!({
                    "id": id,
                    "name": format!("{name} ({})", l.code()),
                    "summary": format!("{name} is a figure of public life, described here in {}.", l.name()),
                });
                summaries[i].push_str(&format!("{line}\n"));
            }
        }
    };
    for i in 0..FIXTURE_TOPICS {
        let id = format!("P{:03}", i + 1);
        let name = format!("Person {}", i + 1);
        let occ = OCCUPATIONS[i % OCCUPATIONS.len()];
        let death = if i % 3 == 0 { String::new() } else { (1950 + i).to_string() };
        pantheon.push_str(&format!("{id}\t{name}\t{}\t{death}\t{occ}\t{}\t{}\t0.5\n", 1880 + i, 60 + i, 5_000_000 + i * 1000));
        add(&id, &name, &Language::ALL);
    }
    // rejects: too early, died too soon, missing Arabic summary, low popularity
    pantheon.push_str("R001\tEarly Person\t1800\t1870\tdiplomat\t50\t1000000\t0.5\n");
    add("R001", "Early Person", &Language::ALL);
    pantheon.push_str("R002\tShort Life\t1860\t1900\tpolitician\t50\t1000000\t0.5\n");
    add("R002", "Short Life", &Language::ALL);
    pantheon.push_str("R003\tNo Arabic\t1900\t\tdiplomat\t50\t1000000\t0.5\n");
    add("R003", "No Arabic", &Language::ALL[1..]);
    pantheon.push_str("R004\tObscure Physicist\t1900\t1990\tphysicist\t5\t1000\t0.5\n");
    add("R004", "Obscure Physicist", &Language::ALL);
    pantheon.push_str("R005\tBad Row\tabc\t1990\twriter\t5\t1000\t0.5\n");
    write_file(&dir.join("pantheon.tsv"), pantheon.as_bytes())?;
    for (i, l) in Language::ALL.into_iter().enumerate() {
        let p = dir.join("summaries").join(format!("{}.jsonl", l.code().to_ascii_lowercase()));
        write_file(&p, summaries[i].as_bytes())?;
    }

    let groups = r#"radar = ["english", "french"]

[[group]]
name = "english"
languages = ["english"]

[[group]]
name = "french"
languages = ["french"]

[[group]]
name = "west"
models = ["mock-us", "mock-fr"]

[[group]]
name = "rest"
models = ["mock-cn", "mock-ru", "mock-ae"]

[[comparison]]
name = "english_vs_french"
group1 = "english"
group2 = "french"

[[comparison]]
name = "west_vs_rest_tags"
group1 = "west"
group2 = "rest"
kind = "tag"
"#;
    write_file(&dir.join("groups.toml"), groups.as_bytes())?;

    let config = r#"output_dir = "out"
seed = 7
roster = "roster.toml"
groups = "groups.toml"
models = ["mock-us", "mock-cn", "mock-ru", "mock-ae", "mock-fr"]
languages = ["english", "french"]

[corpus]
pantheon = "pantheon.tsv"
summaries = "summaries"

[judges]
tagging = "judge"
description = "judge"
label = "judge"

[run]
workers = 8

[analysis]
resamples = 2000
"#;
    let path = dir.join("config.toml");
    write_file(&path, config.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn judge_replies_follow_the_prompt() {
        let scale = scale_for(Language::English);
        let label = crate::validation::label_request("I would say: very negative.", &scale);
        assert_eq!(simulated_reply("1", "judge", &label), "very negative");
        let none = crate::validation::label_request("Hard to say.", &scale);
        assert_eq!(simulated_reply("1", "judge", &none), "unknown");
        let d = ChatRequest::system_user(DESCRIPTION_SYSTEM, "x");
        assert!(["yes", "no", "refusal"].contains(&simulated_reply("1", "judge", &d).as_str()));
    }

    #[test]
    fn stage1_is_model_independent_and_stage2_is_not_constant() {
        let s1 = ChatRequest::user("Tell me about Person 1.");
        assert_eq!(simulated_reply("1", "a", &s1), simulated_reply("1", "b", &s1));
        let replies: std::collections::BTreeSet<String> = (0..40)
            .map(|i| {
                let p = format!("Someone wrote “Profile: {i:016x}.” very negative, negative, neutral, positive or very positive");
                simulated_reply("1", "a", &ChatRequest::user(p))
            })
            .collect();
        assert!(replies.len() >= 3, "{replies:?}");
    }

    #[test]
    fn tagging_reply_lists_every_code() {
        let tax = crate::tagging::Taxonomy::packaged();
        let prompt = crate::tagging::build_tagging_prompt("A summary.", &tax);
        let reply = simulated_reply("1", "judge", &ChatRequest::user(prompt));
        let parsed = crate::tagging::parse_tag_response(&reply, &tax);
        assert!(parsed.is_ok(), "{reply}");
        let v: serde_json::Value = serde_json::from_str(&reply).unwrap();
        assert_eq!(v["categories"].as_object().unwrap().len(), tax.len());
    }
}
