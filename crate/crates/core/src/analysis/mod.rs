//! Statistics behind the figures: tag aggregation, PCA biplot, radar
//! aggregation and two-group forest comparisons.

pub mod forest;
pub mod radar;
pub mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::elicitation::Respondent;
use crate::error::{Error, Result};
use crate::filtering::ScoreMatrix;
use crate::language::Language;
use crate::providers::{Bloc, Roster};
use crate::tagging::TagAssignment;

pub use forest::{person_forest, tag_forest, ForestConfig, ForestResult, ForestRow};
pub use radar::{order_tags_smooth, radar_aggregate, smoothness, RadarResult};

/// How per-tag scores are combined over topics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    /// Bare sums, kept for auditing against the unnormalized formula.
    Sum,
}

/// Mean score of each respondent over the topics bearing each tag.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TagScoreTable {
    pub values: BTreeMap<(Respondent, String), f64>,
    pub counts: BTreeMap<(Respondent, String), usize>,
}

impl TagScoreTable {
    pub fn respondents(&self) -> Vec<Respondent> {
        self.values.keys().map(|(r, _)| r.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn tags(&self) -> Vec<String> {
        self.values.keys().map(|(_, t)| t.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn get(&self, r: &Respondent, tag: &str) -> Option<f64> {
        self.values.get(&(r.clone(), tag.to_string())).copied()
    }
}

pub fn mean_tag_scores(matrix: &ScoreMatrix, assignments: &[TagAssignment]) -> Result<TagScoreTable> {
    aggregate_tag_scores(matrix, assignments, Aggregation::Mean)
}

pub fn aggregate_tag_scores(
    matrix: &ScoreMatrix,
    assignments: &[TagAssignment],
    how: Aggregation,
) -> Result<TagScoreTable> {
    if matrix.is_empty() {
        return Err(Error::Analysis("score matrix is empty".into()));
    }
    let tags: BTreeMap<&str, &BTreeSet<String>> =
        assignments.iter().map(|a| (a.topic_id.as_str(), &a.tags)).collect();
    let missing: Vec<String> = matrix.topics().into_iter().filter(|t| !tags.contains_key(t.as_str())).collect();
    if !missing.is_empty() {
        return Err(Error::Analysis(format!(
            "{} scored topics have no tag assignment (first: {}); run tag first",
            missing.len(),
            missing[0]
        )));
    }
    let mut sums: BTreeMap<(Respondent, String), (f64, usize)> = BTreeMap::new();
    for ((r, topic), score) in &matrix.entries {
        for tag in tags[topic.as_str()].iter() {
            let e = sums.entry((r.clone(), tag.clone())).or_insert((0.0, 0));
            e.0 += score;
            e.1 += 1;
        }
    }
    let mut table = TagScoreTable::default();
    for (k, (sum, n)) in sums {
        let v = match how {
            Aggregation::Mean => sum / n as f64,
            Aggregation::Sum => sum,
        };
        table.values.insert(k.clone(), v);
        table.counts.insert(k, n);
    }
    Ok(table)
}

/// Respondent × tag matrix with missing cells imputed by the tag's mean over
/// respondents. Tags without any value are left out.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTable {
    pub rows: Vec<Respondent>,
    pub cols: Vec<String>,
    pub data: DMatrix<f64>,
    pub imputed: usize,
}

pub fn densify(table: &TagScoreTable) -> DenseTable {
    let rows = table.respondents();
    let cols = table.tags();
    let mut data = DMatrix::zeros(rows.len(), cols.len());
    let mut imputed = 0;
    for (j, tag) in cols.iter().enumerate() {
        let present: Vec<f64> = rows.iter().filter_map(|r| table.get(r, tag)).collect();
        let fill = stats::mean(&present);
        for (i, r) in rows.iter().enumerate() {
            data[(i, j)] = table.get(r, tag).unwrap_or_else(|| {
                imputed += 1;
                fill
            });
        }
    }
    DenseTable { rows, cols, data, imputed }
}

/// Subtracts each column mean, then each row mean.
pub fn double_center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    for mut row in out.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiplotResult {
    pub respondent_points: BTreeMap<Respondent, [f64; 2]>,
    pub tag_loadings: BTreeMap<String, [f64; 2]>,
    pub explained_variance: [f64; 2],
    /// Tags ranked by the norm of their loading pair.
    pub top_tags: Vec<String>,
}

pub const BIPLOT_TOP_TAGS: usize = 30;

/// First two principal components of an already centered matrix.
pub fn pca_biplot(rows: &[Respondent], cols: &[String], centered: &DMatrix<f64>) -> Result<BiplotResult> {
    let (n, p) = centered.shape();
    if n < 2 || p < 2 || rows.len() != n || cols.len() != p {
        return Err(Error::Analysis(format!("PCA needs at least a 2 × 2 matrix, got {n} × {p}")));
    }
    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let mut loadings = [vec![0.0; p], vec![0.0; p]];
    let mut explained = [0.0; 2];
    for (c, &k) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = v_t.row(k).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let s = svd.singular_values[k];
        explained[c] = if total > 0.0 { s * s / total } else { 0.0 };
        loadings[c] = v;
    }
    let mut respondent_points = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let row = centered.row(i);
        let pc = |c: usize| row.iter().zip(&loadings[c]).map(|(a, b)| a * b).sum::<f64>();
        respondent_points.insert(r.clone(), [pc(0), pc(1)]);
    }
    let tag_loadings: BTreeMap<String, [f64; 2]> = cols
        .iter()
        .enumerate()
        .map(|(j, t)| (t.clone(), [loadings[0][j], loadings[1][j]]))
        .collect();
    let mut ranked: Vec<(&String, f64)> = tag_loadings.iter().map(|(t, l)| (t, l[0].hypot(l[1]))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    let top_tags = ranked.into_iter().take(BIPLOT_TOP_TAGS).map(|(t, _)| t.clone()).collect();
    Ok(BiplotResult {
        respondent_points,
        tag_loadings,
        explained_variance: explained,
        top_tags,
    })
}

/// Full biplot pipeline from a tag table.
pub fn biplot(table: &TagScoreTable) -> Result<BiplotResult> {
    let dense = densify(table);
    pca_biplot(&dense.rows, &dense.cols, &double_center(&dense.data))
}

/// Mean point of each class of respondents.
pub fn average_points<K: Ord>(
    points: &BTreeMap<Respondent, [f64; 2]>,
    key: impl Fn(&Respondent) -> K,
) -> BTreeMap<K, [f64; 2]> {
    let mut acc: BTreeMap<K, ([f64; 2], usize)> = BTreeMap::new();
    for (r, p) in points {
        let e = acc.entry(key(r)).or_insert(([0.0; 2], 0));
        e.0[0] += p[0];
        e.0[1] += p[1];
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, [s[0] / n as f64, s[1] / n as f64]))
        .collect()
}

pub fn model_averages(b: &BiplotResult) -> BTreeMap<String, [f64; 2]> {
    average_points(&b.respondent_points, |r| r.model_id.clone())
}

pub fn language_averages(b: &BiplotResult) -> BTreeMap<Language, [f64; 2]> {
    average_points(&b.respondent_points, |r| r.language)
}

/// A named set of respondents. Each nonempty selector field must match;
/// within a field any listed value matches.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupDef {
    pub name: String,
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default)]
    pub languages: Vec<Language>,
    #[serde(default)]
    pub countries: Vec<String>,
    #[serde(default)]
    pub blocs: Vec<Bloc>,
}

impl GroupDef {
    pub fn matches(&self, r: &Respondent, roster: &Roster) -> bool {
        let spec = roster.get(&r.model_id);
        (self.models.is_empty() || self.models.contains(&r.model_id))
            && (self.languages.is_empty() || self.languages.contains(&r.language))
            && (self.countries.is_empty()
                || spec.is_some_and(|m| self.countries.iter().any(|c| c.eq_ignore_ascii_case(&m.country))))
            && (self.blocs.is_empty() || spec.and_then(|m| m.bloc()).is_some_and(|b| self.blocs.contains(&b)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub name: String,
    pub members: BTreeSet<Respondent>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupFile {
    #[serde(rename = "group", default)]
    pub groups: Vec<GroupDef>,
    #[serde(rename = "comparison", default)]
    pub comparisons: Vec<Comparison>,
    /// Groups drawn on the radar chart; all groups when empty.
    #[serde(default)]
    pub radar: Vec<String>,
}

/// A two-group forest comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub name: String,
    pub group1: String,
    pub group2: String,
    #[serde(default = "default_kind")]
    pub kind: ComparisonKind,
}

fn default_kind() -> ComparisonKind {
    ComparisonKind::Person
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonKind {
    Person,
    Tag,
}

impl GroupFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: GroupFile = toml::from_str(text).map_err(|e| Error::Config(format!("group file: {e}")))?;
        let names: BTreeSet<&str> = f.groups.iter().map(|g| g.name.as_str()).collect();
        if names.len() != f.groups.len() {
            return Err(Error::Config("group file: duplicate group name".into()));
        }
        for g in &f.radar {
            if !names.contains(g.as_str()) {
                return Err(Error::Config(format!("radar: unknown group `{g}`")));
            }
        }
        for c in &f.comparisons {
            for g in [&c.group1, &c.group2] {
                if !names.contains(g.as_str()) {
                    return Err(Error::Config(format!("comparison `{}`: unknown group `{g}`", c.name)));
                }
            }
        }
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Resolves every group against the respondents present.
    pub fn resolve(&self, respondents: &[Respondent], roster: &Roster) -> Result<Vec<Group>> {
        self.groups
            .iter()
            .map(|g| {
                let members: BTreeSet<Respondent> =
                    respondents.iter().filter(|r| g.matches(r, roster)).cloned().collect();
                if members.is_empty() {
                    return Err(Error::Config(format!("group `{}` matches no respondent", g.name)));
                }
                Ok(Group { name: g.name.clone(), members })
            })
            .collect()
    }
}
