//! Two-group comparisons per topic and per tag.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::stats::{bootstrap_mean_diff, item_rng, mann_whitney, mean, variance, welch};
use crate::elicitation::Respondent;
use crate::error::{Error, Result};
use crate::filtering::ScoreMatrix;
use crate::tagging::TagAssignment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestRow {
    pub item: String,
    pub mean_diff: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

impl ForestRow {
    fn swapped(self) -> Self {
        ForestRow {
            item: self.item,
            mean_diff: -self.mean_diff,
            ci_lo: -self.ci_hi,
            ci_hi: -self.ci_lo,
            p_value: self.p_value,
            n1: self.n2,
            n2: self.n1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestResult {
    /// Selected rows, most positive first.
    pub rows: Vec<ForestRow>,
    /// Mean difference over every tested item.
    pub overall_mean: f64,
    pub tested: usize,
    /// Items left out of testing, with the reason.
    pub excluded: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub top_k: usize,
    pub resamples: usize,
    pub seed: u64,
}

impl ForestConfig {
    pub fn persons(seed: u64) -> Self {
        ForestConfig { top_k: 20, resamples: 10_000, seed }
    }

    pub fn tags(seed: u64) -> Self {
        ForestConfig { top_k: 10, resamples: 10_000, seed }
    }
}

fn check_groups(g1: &BTreeSet<Respondent>, g2: &BTreeSet<Respondent>) -> Result<()> {
    if g1.is_empty() || g2.is_empty() {
        return Err(Error::Config("forest comparison needs two nonempty groups".into()));
    }
    if let Some(r) = g1.intersection(g2).next() {
        return Err(Error::Config(format!("forest groups overlap on {r}")));
    }
    Ok(())
}

/// Scores of each group per topic, for topics scored at least once by both.
fn paired_scores(
    matrix: &ScoreMatrix,
    g1: &BTreeSet<Respondent>,
    g2: &BTreeSet<Respondent>,
) -> BTreeMap<String, (Vec<f64>, Vec<f64>)> {
    let mut by_topic: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((r, t), &s) in &matrix.entries {
        if g1.contains(r) {
            by_topic.entry(t.clone()).or_default().0.push(s);
        } else if g2.contains(r) {
            by_topic.entry(t.clone()).or_default().1.push(s);
        }
    }
    by_topic.retain(|_, (a, b)| !a.is_empty() && !b.is_empty());
    by_topic
}

/// Top `k` positive and top `k` negative rows, larger |diff| first, then
/// item id. Returned most positive first.
fn select(rows: Vec<ForestRow>, k: usize) -> Vec<ForestRow> {
    let rank = |a: &ForestRow, b: &ForestRow| b.mean_diff.abs().total_cmp(&a.mean_diff.abs()).then(a.item.cmp(&b.item));
    let (mut pos, mut neg): (Vec<_>, Vec<_>) = rows.into_iter().filter(|r| r.mean_diff != 0.0).partition(|r| r.mean_diff > 0.0);
    pos.sort_by(rank);
    neg.sort_by(rank);
    pos.truncate(k);
    neg.truncate(k);
    neg.reverse();
    pos.into_iter().chain(neg).collect()
}

/// Runs `f` with the groups in a fixed order and flips the rows back, so
/// swapping the groups negates every difference exactly.
fn canonical(
    g1: &BTreeSet<Respondent>,
    g2: &BTreeSet<Respondent>,
    f: impl FnOnce(&BTreeSet<Respondent>, &BTreeSet<Respondent>) -> Result<ForestResult>,
) -> Result<ForestResult> {
    if g1 <= g2 {
        return f(g1, g2);
    }
    let res = f(g2, g1)?;
    Ok(ForestResult {
        rows: res.rows.into_iter().rev().map(ForestRow::swapped).collect(),
        overall_mean: -res.overall_mean,
        tested: res.tested,
        excluded: res.excluded,
    })
}

/// Per-topic comparison: Mann-Whitney p and a bootstrap interval.
pub fn person_forest(
    matrix: &ScoreMatrix,
    group1: &BTreeSet<Respondent>,
    group2: &BTreeSet<Respondent>,
    cfg: &ForestConfig,
) -> Result<ForestResult> {
    check_groups(group1, group2)?;
    canonical(group1, group2, |g1, g2| {
        let topics = paired_scores(matrix, g1, g2);
        let mut rows = Vec::with_capacity(topics.len());
        for (t, (a, b)) in &topics {
            rows.push(ForestRow {
                item: t.clone(),
                mean_diff: mean(a) - mean(b),
                ci_lo: 0.0,
                ci_hi: 0.0,
                p_value: mann_whitney(a, b).p_value,
                n1: a.len(),
                n2: b.len(),
            });
        }
        let tested = rows.len();
        let overall_mean = if tested == 0 { 0.0 } else { rows.iter().map(|r| r.mean_diff).sum::<f64>() / tested as f64 };
        let mut rows = select(rows, cfg.top_k);
        for row in &mut rows {
            let (a, b) = &topics[&row.item];
            let (lo, hi) = bootstrap_mean_diff(a, b, cfg.resamples, &mut item_rng(cfg.seed, &row.item));
            row.ci_lo = lo;
            row.ci_hi = hi;
        }
        Ok(ForestResult { rows, overall_mean, tested, excluded: vec![] })
    })
}

/// Per-tag comparison of per-topic group differences inside vs outside the
/// tag, with Welch's t-test and a normal interval.
pub fn tag_forest(
    matrix: &ScoreMatrix,
    assignments: &[TagAssignment],
    group1: &BTreeSet<Respondent>,
    group2: &BTreeSet<Respondent>,
    cfg: &ForestConfig,
) -> Result<ForestResult> {
    check_groups(group1, group2)?;
    canonical(group1, group2, |g1, g2| {
        let diffs: BTreeMap<String, f64> = paired_scores(matrix, g1, g2)
            .into_iter()
            .map(|(t, (a, b))| (t, mean(&a) - mean(&b)))
            .collect();
        let mut by_tag: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for a in assignments {
            if diffs.contains_key(&a.topic_id) {
                for tag in &a.tags {
                    by_tag.entry(tag.as_str()).or_default().insert(a.topic_id.as_str());
                }
            }
        }
        let mut rows = Vec::new();
        let mut excluded = Vec::new();
        for (tag, topics) in by_tag {
            let (inside, outside): (Vec<(&String, &f64)>, Vec<_>) =
                diffs.iter().partition(|(t, _)| topics.contains(t.as_str()));
            let inside: Vec<f64> = inside.into_iter().map(|(_, d)| *d).collect();
            let outside: Vec<f64> = outside.into_iter().map(|(_, d)| *d).collect();
            if inside.len() < 2 || outside.len() < 2 {
                excluded.push((
                    tag.to_string(),
                    format!("{} topics inside, {} outside", inside.len(), outside.len()),
                ));
                continue;
            }
            let m = mean(&inside);
            let se = (variance(&inside) / inside.len() as f64).sqrt();
            rows.push(ForestRow {
                item: tag.to_string(),
                mean_diff: m,
                ci_lo: m - 1.96 * se,
                ci_hi: m + 1.96 * se,
                p_value: welch(&inside, &outside).p_value,
                n1: inside.len(),
                n2: outside.len(),
            });
        }
        let tested = rows.len();
        let overall_mean = if diffs.is_empty() { 0.0 } else { diffs.values().sum::<f64>() / diffs.len() as f64 };
        Ok(ForestResult { rows: select(rows, cfg.top_k), overall_mean, tested, excluded })
    })
}
