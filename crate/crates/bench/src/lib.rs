//! Synthetic inputs shared by the benchmarks.

use std::collections::BTreeMap;

use ideolens::analysis::TagScoreTable;
use ideolens::elicitation::Respondent;
use ideolens::filtering::{ResponseRow, ScoreMatrix, SCORE_VALUES};
use ideolens::tagging::TagAssignment;
use ideolens::validation::{Label, Verdict};
use ideolens::Language;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn respondents(models: usize) -> Vec<Respondent> {
    (0..models)
        .flat_map(|m| Language::ALL.map(|l| Respondent::new(&format!("model{m:02}"), l)))
        .collect()
}

pub fn scores(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| SCORE_VALUES[rng.random_range(0..5)]).collect()
}

/// Respondents × topics with roughly `density` of cells filled.
pub fn score_matrix(respondents: &[Respondent], topics: usize, density: f64, rng: &mut ChaCha8Rng) -> ScoreMatrix {
    let mut entries = BTreeMap::new();
    for r in respondents {
        for t in 0..topics {
            if rng.random_bool(density) {
                entries.insert((r.clone(), format!("Q{t:05}")), SCORE_VALUES[rng.random_range(0..5)]);
            }
        }
    }
    ScoreMatrix { entries, report: Default::default() }
}

pub fn assignments(topics: usize, tags: usize, rng: &mut ChaCha8Rng) -> Vec<TagAssignment> {
    (0..topics)
        .map(|t| TagAssignment {
            topic_id: format!("Q{t:05}"),
            tags: (0..tags).filter(|_| rng.random_bool(0.08)).map(|k| format!("tag{k:02}")).collect(),
            judge_model: "judge".into(),
            raw_response: String::new(),
        })
        .collect()
}

pub fn tag_table(respondents: &[Respondent], tags: usize, rng: &mut ChaCha8Rng) -> TagScoreTable {
    let mut t = TagScoreTable::default();
    for r in respondents {
        for k in 0..tags {
            t.values.insert((r.clone(), format!("tag{k:02}")), rng.random_range(0.0..1.0));
            t.counts.insert((r.clone(), format!("tag{k:02}")), 1);
        }
    }
    t
}

pub fn response_rows(respondents: &[Respondent], topics: usize, rng: &mut ChaCha8Rng) -> Vec<ResponseRow> {
    let mut rows = Vec::new();
    for r in respondents {
        for t in 0..topics {
            let verdict = if rng.random_bool(0.86) { Verdict::Yes } else { Verdict::No };
            let label = if rng.random_bool(0.996) { Label::from_index(rng.random_range(0..5)) } else { Label::Unknown };
            rows.push(ResponseRow {
                respondent: r.clone(),
                topic_id: format!("Q{t:05}"),
                verdict: Some(verdict),
                label: Some(label),
            });
        }
    }
    rows
}
