//! Topic selection: Pantheon ingestion, the four selection criteria, AHPI
//! scoring and the occupation tiers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::language::Language;

/// Popularity inputs for the Adjusted Historical Popularity Index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopularityMetrics {
    /// Number of Wikipedia language editions with an article (L).
    pub language_editions: f64,
    /// Non-English Wikipedia page views.
    pub non_english_views: f64,
    /// Coefficient of variation (stddev / mean) of the page-view series.
    pub view_cv: f64,
}

impl PopularityMetrics {
    /// Population coefficient of variation of a page-view series.
    pub fn coefficient_of_variation(series: &[f64]) -> Option<f64> {
        if series.is_empty() {
            return None;
        }
        let n = series.len() as f64;
        let mean = series.iter().sum::<f64>() / n;
        if mean <= 0.0 {
            return None;
        }
        let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(var.sqrt() / mean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("AHPI undefined: {field} = {value} is not strictly positive")]
pub struct UndefinedAhpi {
    pub field: &'static str,
    pub value: f64,
}

/// `ln(L) + ln(v_NE) - ln(CV)`.
pub fn compute_ahpi(m: &PopularityMetrics) -> Result<f64, UndefinedAhpi> {
    for (field, value) in [
        ("language_editions", m.language_editions),
        ("non_english_views", m.non_english_views),
        ("view_cv", m.view_cv),
    ] {
        if !value.is_finite() || value <= 0.0 {
            return Err(UndefinedAhpi { field, value });
        }
    }
    if m.language_editions < 1.0 {
        return Err(UndefinedAhpi {
            field: "language_editions",
            value: m.language_editions,
        });
    }
    Ok(m.language_editions.ln() + m.non_english_views.ln() - m.view_cv.ln())
}

/// One row of the Pantheon person table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PantheonRecord {
    pub id: String,
    pub name: String,
    pub birth_year: i32,
    pub death_year: Option<i32>,
    pub occupation: String,
    pub metrics: PopularityMetrics,
}

/// Column names to look for, in order of preference.
#[derive(Debug, Clone)]
pub struct PantheonFormat {
    pub delimiter: u8,
    pub id: Vec<String>,
    pub name: Vec<String>,
    pub birth_year: Vec<String>,
    pub death_year: Vec<String>,
    pub occupation: Vec<String>,
    pub language_editions: Vec<String>,
    pub non_english_views: Vec<String>,
    /// Direct coefficient-of-variation column.
    pub view_cv: Vec<String>,
    /// Fallback: CV = stddev column / mean column.
    pub view_stddev: Vec<String>,
    pub view_mean: Vec<String>,
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for PantheonFormat {
    /// Tab-separated, accepting both the 2020 release headers and the
    /// original Pantheon 1.0 headers.
    fn default() -> Self {
        Self {
            delimiter: b'\t',
            id: names(&["id", "wd_id", "en_curid"]),
            name: names(&["name"]),
            birth_year: names(&["birthyear", "birth_year"]),
            death_year: names(&["deathyear", "death_year"]),
            occupation: names(&["occupation"]),
            language_editions: names(&["l", "numlangs"]),
            non_english_views: names(&["non_en_page_views", "pageviewsnonenglish"]),
            view_cv: names(&["coefficient_of_variation", "cv"]),
            view_stddev: names(&["stddevpageviews"]),
            view_mean: names(&["averageviews"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowReject {
    /// 1-based line number in the source file (header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct PantheonLoad {
    pub records: Vec<PantheonRecord>,
    pub rejects: Vec<RowReject>,
}

enum CvSource {
    Direct(usize),
    Ratio { stddev: usize, mean: usize },
}

fn find_column(headers: &csv::StringRecord, candidates: &[String]) -> Option<usize> {
    candidates.iter().find_map(|c| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(c))
    })
}

fn parse_year(raw: &str) -> Option<i32> {
    let v: f64 = raw.trim().parse().ok()?;
    v.is_finite().then_some(v.round() as i32)
}

fn is_missing(raw: &str) -> bool {
    matches!(raw.trim(), "" | "NA" | "NaN" | "nan" | "null" | "None")
}

/// Loads a Pantheon snapshot. Malformed rows land in `rejects`.
pub fn load_pantheon(path: &Path, format: &PantheonFormat) -> Result<PantheonLoad> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();

    let require = |cands: &[String]| {
        find_column(&headers, cands).ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: cands.join("|"),
        })
    };
    let id_col = require(&format.id)?;
    let name_col = require(&format.name)?;
    let birth_col = require(&format.birth_year)?;
    let death_col = require(&format.death_year)?;
    let occ_col = require(&format.occupation)?;
    let l_col = require(&format.language_editions)?;
    let views_col = require(&format.non_english_views)?;
    let cv = match find_column(&headers, &format.view_cv) {
        Some(c) => CvSource::Direct(c),
        None => CvSource::Ratio {
            stddev: require(&format.view_stddev)?,
            mean: require(&format.view_mean)?,
        },
    };

    let mut load = PantheonLoad::default();
    for (i, row) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                load.rejects.push(RowReject {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match parse_row(&row, id_col, name_col, birth_col, death_col, occ_col, l_col, views_col, &cv) {
            Ok(rec) => load.records.push(rec),
            Err(reason) => load.rejects.push(RowReject { line, reason }),
        }
    }
    Ok(load)
}

#[allow(clippy::too_many_arguments)]
fn parse_row(
    row: &csv::StringRecord,
    id_col: usize,
    name_col: usize,
    birth_col: usize,
    death_col: usize,
    occ_col: usize,
    l_col: usize,
    views_col: usize,
    cv: &CvSource,
) -> std::result::Result<PantheonRecord, String> {
    let field = |c: usize, what: &str| {
        row.get(c)
            .map(str::trim)
            .ok_or_else(|| format!("missing field {what}"))
    };
    let number = |c: usize, what: &str| -> std::result::Result<f64, String> {
        let raw = field(c, what)?;
        raw.parse::<f64>()
            .map_err(|_| format!("unparseable {what}: `{raw}`"))
    };

    let id = field(id_col, "id")?;
    if id.is_empty() {
        return Err("empty id".into());
    }
    let birth_raw = field(birth_col, "birth year")?;
    if is_missing(birth_raw) {
        return Err("missing birth year".into());
    }
    let birth_year =
        parse_year(birth_raw).ok_or_else(|| format!("unparseable birth year: `{birth_raw}`"))?;
    let death_raw = row.get(death_col).unwrap_or("");
    let death_year = if is_missing(death_raw) {
        None
    } else {
        Some(parse_year(death_raw).ok_or_else(|| format!("unparseable death year: `{death_raw}`"))?)
    };
    let view_cv = match *cv {
        CvSource::Direct(c) => number(c, "coefficient of variation")?,
        CvSource::Ratio { stddev, mean } => {
            let sd = number(stddev, "page view stddev")?;
            let m = number(mean, "page view mean")?;
            if m == 0.0 {
                0.0
            } else {
                sd / m
            }
        }
    };
    Ok(PantheonRecord {
        id: id.to_string(),
        name: field(name_col, "name")?.to_string(),
        birth_year,
        death_year,
        occupation: field(occ_col, "occupation")?.to_string(),
        metrics: PopularityMetrics {
            language_editions: number(l_col, "language editions")?,
            non_english_views: number(views_col, "non-English page views")?,
            view_cv,
        },
    })
}

/// A localized name and Wikipedia summary for one person.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizedEntry {
    pub name: String,
    pub summary: String,
}

pub trait SummaryStore {
    fn lookup(&self, id: &str, language: Language) -> Result<Option<LocalizedEntry>>;
}

/// In-memory summaries, mostly for fixtures.
#[derive(Debug, Default, Clone)]
pub struct MemorySummaryStore {
    entries: HashMap<(String, Language), LocalizedEntry>,
}

impl MemorySummaryStore {
    pub fn insert(&mut self, id: &str, language: Language, name: &str, summary: &str) {
        self.entries.insert(
            (id.to_string(), language),
            LocalizedEntry {
                name: name.to_string(),
                summary: summary.to_string(),
            },
        );
    }
}

impl SummaryStore for MemorySummaryStore {
    fn lookup(&self, id: &str, language: Language) -> Result<Option<LocalizedEntry>> {
        Ok(self.entries.get(&(id.to_string(), language)).cloned())
    }
}

#[derive(Deserialize)]
struct SummaryLine {
    id: String,
    name: String,
    summary: String,
}

/// Summaries stored as `<dir>/<code>.jsonl` (e.g. `en.jsonl`), one
/// `{"id", "name", "summary"}` object per line. Files are loaded eagerly.
#[derive(Debug, Default)]
pub struct DirSummaryStore {
    inner: MemorySummaryStore,
    missing_files: BTreeSet<Language>,
}

impl DirSummaryStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let mut store = DirSummaryStore::default();
        for lang in Language::ALL {
            let path = dir.join(format!("{}.jsonl", lang.code().to_ascii_lowercase()));
            if !path.exists() {
                tracing::warn!(path = %path.display(), "summary file missing");
                store.missing_files.insert(lang);
                continue;
            }
            for line in crate::jsonl::read_all::<SummaryLine>(&path)? {
                store.inner.insert(&line.id, lang, &line.name, &line.summary);
            }
        }
        Ok(store)
    }
}

impl SummaryStore for DirSummaryStore {
    fn lookup(&self, id: &str, language: Language) -> Result<Option<LocalizedEntry>> {
        self.inner.lookup(id, language)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub id: String,
    pub names: BTreeMap<Language, String>,
    pub birth_year: i32,
    pub death_year: Option<i32>,
    pub occupation: String,
    pub tier: u8,
    pub summaries: BTreeMap<Language, String>,
    pub metrics: PopularityMetrics,
    pub ahpi: Option<f64>,
}

impl Topic {
    pub fn name(&self, language: Language) -> Option<&str> {
        self.names.get(&language).map(String::as_str)
    }

    pub fn summary(&self, language: Language) -> Option<&str> {
        self.summaries.get(&language).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Criterion {
    /// At least two name parts.
    FullName = 1,
    /// Born after 1850.
    BornAfter1850 = 2,
    /// Died after 1920 or alive.
    DiedAfter1920 = 3,
    /// Summary in all six languages.
    AllSummaries = 4,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReject {
    pub id: String,
    pub criterion: Criterion,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct Selection {
    pub candidates: Vec<Topic>,
    pub rejects: Vec<SelectionReject>,
}

pub const MIN_BIRTH_YEAR_EXCLUSIVE: i32 = 1850;
pub const MIN_DEATH_YEAR_EXCLUSIVE: i32 = 1920;

fn first_failing(record: &PantheonRecord) -> Option<(Criterion, String)> {
    if record.name.split_whitespace().count() < 2 {
        return Some((Criterion::FullName, format!("name `{}`", record.name)));
    }
    if record.birth_year <= MIN_BIRTH_YEAR_EXCLUSIVE {
        return Some((Criterion::BornAfter1850, format!("born {}", record.birth_year)));
    }
    if let Some(d) = record.death_year {
        if d <= MIN_DEATH_YEAR_EXCLUSIVE {
            return Some((Criterion::DiedAfter1920, format!("died {d}")));
        }
    }
    None
}

/// Applies criteria 1-4 in order; each rejection names the first failing one.
pub fn apply_selection_criteria(
    records: &[PantheonRecord],
    summaries: &dyn SummaryStore,
) -> Selection {
    let tiers = TierPolicy::default();
    let mut sel = Selection::default();
    for record in records {
        if let Some((criterion, detail)) = first_failing(record) {
            sel.rejects.push(SelectionReject {
                id: record.id.clone(),
                criterion,
                detail,
            });
            continue;
        }
        let mut names = BTreeMap::new();
        let mut texts = BTreeMap::new();
        let mut missing = Vec::new();
        for lang in Language::ALL {
            match summaries.lookup(&record.id, lang) {
                Ok(Some(entry)) if !entry.summary.trim().is_empty() && !entry.name.trim().is_empty() => {
                    names.insert(lang, entry.name);
                    texts.insert(lang, entry.summary);
                }
                Ok(_) => missing.push(lang.code()),
                Err(e) => {
                    tracing::warn!(id = %record.id, %lang, error = %e, "summary lookup failed");
                    missing.push(lang.code());
                }
            }
        }
        if !missing.is_empty() {
            sel.rejects.push(SelectionReject {
                id: record.id.clone(),
                criterion: Criterion::AllSummaries,
                detail: format!("missing {}", missing.join(",")),
            });
            continue;
        }
        let ahpi = match compute_ahpi(&record.metrics) {
            Ok(v) => Some(v),
            Err(e) => {
                tracing::info!(id = %record.id, error = %e, "AHPI undefined");
                None
            }
        };
        sel.candidates.push(Topic {
            id: record.id.clone(),
            names,
            birth_year: record.birth_year,
            death_year: record.death_year,
            occupation: record.occupation.clone(),
            tier: tiers.tier_of(&record.occupation),
            summaries: texts,
            metrics: record.metrics,
            ahpi,
        });
    }
    sel
}

/// Occupation tiers and their AHPI thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierPolicy {
    /// Lower-cased occupations for tiers 1-3; anything else is tier 4.
    pub tier_occupations: BTreeMap<u8, BTreeSet<String>>,
    /// `None` means the tier is included unconditionally.
    pub thresholds: BTreeMap<u8, Option<f64>>,
}

pub const TIER1_OCCUPATIONS: &[&str] = &["social activist", "political scientist", "diplomat"];
pub const TIER2_OCCUPATIONS: &[&str] = &["politician", "military personnel"];
pub const TIER3_OCCUPATIONS: &[&str] = &[
    "philosopher",
    "judge",
    "businessperson",
    "extremist",
    "religious figure",
    "writer",
    "inventor",
    "journalist",
    "economist",
    "physicist",
    "linguist",
    "computer scientist",
    "historian",
    "lawyer",
    "sociologist",
    "comedian",
    "biologist",
    "nobleman",
    "mafioso",
    "psychologist",
];

impl Default for TierPolicy {
    fn default() -> Self {
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        Self {
            tier_occupations: BTreeMap::from([
                (1, set(TIER1_OCCUPATIONS)),
                (2, set(TIER2_OCCUPATIONS)),
                (3, set(TIER3_OCCUPATIONS)),
            ]),
            thresholds: BTreeMap::from([(1, None), (2, Some(13.0)), (3, Some(15.0)), (4, Some(16.0))]),
        }
    }
}

impl TierPolicy {
    pub fn tier_of(&self, occupation: &str) -> u8 {
        let occ = occupation.trim().to_lowercase();
        self.tier_occupations
            .iter()
            .find(|(_, occs)| occs.contains(&occ))
            .map(|(t, _)| *t)
            .unwrap_or(4)
    }

    pub fn threshold(&self, tier: u8) -> Option<f64> {
        self.thresholds.get(&tier).copied().flatten()
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for tier in 2..=4u8 {
            if let Some(t) = self.threshold(tier) {
                if t < prev {
                    return Err(Error::Config(format!(
                        "tier {tier} threshold {t} is below tier {} threshold {prev}",
                        tier - 1
                    )));
                }
                prev = t;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exclusion {
    pub id: String,
    pub tier: u8,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct TopicSelection {
    pub topics: Vec<Topic>,
    pub excluded: Vec<Exclusion>,
}

impl TopicSelection {
    pub fn tier_counts(&self) -> BTreeMap<u8, usize> {
        let mut counts = BTreeMap::new();
        for t in &self.topics {
            *counts.entry(t.tier).or_insert(0) += 1;
        }
        counts
    }
}

/// Keeps unthresholded tiers wholesale and thresholded tiers on strict
/// `AHPI > threshold`. Output is sorted by `(tier, -AHPI, id)`.
pub fn select_topics(candidates: Vec<Topic>, policy: &TierPolicy) -> TopicSelection {
    let mut out = TopicSelection::default();
    for mut topic in candidates {
        topic.tier = policy.tier_of(&topic.occupation);
        if !policy.tier_occupations.values().any(|o| o.contains(&topic.occupation.trim().to_lowercase())) {
            tracing::debug!(id = %topic.id, occupation = %topic.occupation, "occupation not tiered, using tier 4");
        }
        match (policy.threshold(topic.tier), topic.ahpi) {
            (None, _) => out.topics.push(topic),
            (Some(t), Some(a)) if a > t => out.topics.push(topic),
            (Some(t), Some(a)) => out.excluded.push(Exclusion {
                id: topic.id,
                tier: topic.tier,
                reason: format!("AHPI {a:.4} not above {t}"),
            }),
            (Some(_), None) => out.excluded.push(Exclusion {
                id: topic.id,
                tier: topic.tier,
                reason: "AHPI undefined".into(),
            }),
        }
    }
    out.topics.sort_by(|a, b| {
        a.tier
            .cmp(&b.tier)
            .then_with(|| {
                // descending AHPI, undefined last
                match (a.ahpi, b.ahpi) {
                    (Some(x), Some(y)) => y.total_cmp(&x),
                    (Some(_), None) => std::cmp::Ordering::Less,
                    (None, Some(_)) => std::cmp::Ordering::Greater,
                    (None, None) => std::cmp::Ordering::Equal,
                }
            })
            .then_with(|| a.id.cmp(&b.id))
    });
    out
}

pub fn write_topics(path: &Path, topics: &[Topic]) -> Result<()> {
    crate::jsonl::write_all(path, topics)
}

pub fn read_topics(path: &Path) -> Result<Vec<Topic>> {
    if !path.exists() {
        return Err(Error::StageOrder(format!(
            "topic list {} not found; run select-topics first",
            path.display()
        )));
    }
    crate::jsonl::read_all(path)
}

/// Tab-separated rejects report: `stage  id_or_line  reason`.
pub fn write_rejects_report(
    path: &Path,
    rows: &[RowReject],
    criteria: &[SelectionReject],
    tiers: &[Exclusion],
) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::from("stage\tkey\treason\n");
    for r in rows {
        body.push_str(&format!("load\tline:{}\t{}\n", r.line, r.reason));
    }
    for r in criteria {
        body.push_str(&format!(
            "criterion{}\t{}\t{}\n",
            r.criterion as u8, r.id, r.detail
        ));
    }
    for r in tiers {
        body.push_str(&format!("tier{}\t{}\t{}\n", r.tier, r.id, r.reason));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Number of data lines in a tabular file, header excluded.
pub fn count_rows(path: &Path) -> Result<usize> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(f).lines().skip(1).count())
}

/// Input location for `select-topics`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusInputs {
    pub pantheon: PathBuf,
    pub summaries: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn metrics(l: f64, v: f64, cv: f64) -> PopularityMetrics {
        PopularityMetrics {
            language_editions: l,
            non_english_views: v,
            view_cv: cv,
        }
    }

    #[test]
    fn ahpi_reference_values() {
        assert_eq!(compute_ahpi(&metrics(1.0, 1.0, 1.0)).unwrap(), 0.0);
        // frozen from an independent evaluation of the formula
        assert!((compute_ahpi(&metrics(100.0, 1e6, 0.5)).unwrap() - 19.11382792451231).abs() < 1e-4);
        assert!((compute_ahpi(&metrics(10.0, 10.0, 10.0)).unwrap() - std::f64::consts::LN_10).abs() < 1e-9);
    }

    #[test]
    fn ahpi_rejects_nonpositive() {
        assert!(compute_ahpi(&metrics(0.0, 1.0, 1.0)).is_err());
        assert!(compute_ahpi(&metrics(1.0, -1.0, 1.0)).is_err());
        let e = compute_ahpi(&metrics(1.0, 1.0, 0.0)).unwrap_err();
        assert_eq!(e.field, "view_cv");
        assert!(compute_ahpi(&metrics(1.0, f64::NAN, 1.0)).is_err());
    }

    #[test]
    fn cv_of_series() {
        assert_eq!(PopularityMetrics::coefficient_of_variation(&[5.0, 5.0]), Some(0.0));
        let cv = PopularityMetrics::coefficient_of_variation(&[1.0, 3.0]).unwrap();
        assert!((cv - 0.5).abs() < 1e-12);
        assert_eq!(PopularityMetrics::coefficient_of_variation(&[]), None);
    }

    proptest! {
        #[test]
        fn ahpi_monotone(l in 1.0f64..1e4, v in 1e-3f64..1e9, cv in 1e-3f64..1e3, f in 1.01f64..10.0) {
            let base = compute_ahpi(&metrics(l, v, cv)).unwrap();
            prop_assert!(compute_ahpi(&metrics(l * f, v, cv)).unwrap() > base);
            prop_assert!(compute_ahpi(&metrics(l, v * f, cv)).unwrap() > base);
            prop_assert!(compute_ahpi(&metrics(l, v, cv * f)).unwrap() < base);
        }
    }

    fn record(id: &str, name: &str, birth: i32, death: Option<i32>, occ: &str) -> PantheonRecord {
        PantheonRecord {
            id: id.into(),
            name: name.into(),
            birth_year: birth,
            death_year: death,
            occupation: occ.into(),
            metrics: metrics(50.0, 1e6, 0.5),
        }
    }

    fn full_store(ids: &[&str]) -> MemorySummaryStore {
        let mut s = MemorySummaryStore::default();
        for id in ids {
            for l in Language::ALL {
                s.insert(id, l, &format!("{id}-{}", l.code()), "summary");
            }
        }
        s
    }

    #[test]
    fn criteria_threshold_cases() {
        let records = vec![
            record("a", "Ada Lovelace", 1840, None, "writer"),
            record("b", "Old Soldier", 1870, Some(1918), "military personnel"),
            record("c", "Mononym", 1900, None, "politician"),
            record("d", "Five Langs", 1900, None, "politician"),
            record("e", "Kept Person", 1851, Some(1921), "politician"),
            record("f", "Edge Case", 1850, None, "politician"),
        ];
        let mut store = full_store(&["a", "b", "c", "e", "f"]);
        for l in Language::ALL.into_iter().filter(|l| *l != Language::Russian) {
            store.insert("d", l, "Five Langs", "summary");
        }
        let sel = apply_selection_criteria(&records, &store);
        let by_id: BTreeMap<_, _> = sel.rejects.iter().map(|r| (r.id.as_str(), r.criterion)).collect();
        assert_eq!(by_id["a"], Criterion::BornAfter1850);
        assert_eq!(by_id["b"], Criterion::DiedAfter1920);
        assert_eq!(by_id["c"], Criterion::FullName);
        assert_eq!(by_id["d"], Criterion::AllSummaries);
        assert_eq!(by_id["f"], Criterion::BornAfter1850);
        assert_eq!(sel.candidates.len(), 1);
        let kept = &sel.candidates[0];
        assert_eq!(kept.id, "e");
        assert_eq!(kept.names.len(), 6);
        assert_eq!(kept.summaries.len(), 6);
        assert_eq!(kept.tier, 2);
    }

    #[test]
    fn summary_lookup_failure_is_criterion_four() {
        struct Failing;
        impl SummaryStore for Failing {
            fn lookup(&self, _: &str, _: Language) -> Result<Option<LocalizedEntry>> {
                Err(Error::Config("boom".into()))
            }
        }
        let sel = apply_selection_criteria(&[record("x", "Some One", 1900, None, "diplomat")], &Failing);
        assert_eq!(sel.rejects[0].criterion, Criterion::AllSummaries);
    }

    fn topic(id: &str, occ: &str, ahpi: Option<f64>) -> Topic {
        Topic {
            id: id.into(),
            names: BTreeMap::new(),
            birth_year: 1900,
            death_year: None,
            occupation: occ.into(),
            tier: 0,
            summaries: BTreeMap::new(),
            metrics: metrics(1.0, 1.0, 1.0),
            ahpi,
        }
    }

    #[test]
    fn tier_thresholds_are_strict() {
        let sel = select_topics(
            vec![
                topic("p1", "politician", Some(13.0)),
                topic("p2", "politician", Some(13.0001)),
                topic("a1", "Social Activist", None),
                topic("w1", "writer", Some(15.5)),
                topic("s1", "soccer player", Some(15.9)),
                topic("s2", "soccer player", Some(16.5)),
                topic("s3", "soccer player", None),
            ],
            &TierPolicy::default(),
        );
        let ids: Vec<_> = sel.topics.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["a1", "p2", "w1", "s2"]);
        assert_eq!(sel.tier_counts(), BTreeMap::from([(1, 1), (2, 1), (3, 1), (4, 1)]));
        assert_eq!(sel.excluded.len(), 3);
    }

    #[test]
    fn selection_sorted_by_tier_then_ahpi_then_id() {
        let sel = select_topics(
            vec![
                topic("b", "politician", Some(14.0)),
                topic("a", "politician", Some(14.0)),
                topic("c", "politician", Some(20.0)),
                topic("z", "diplomat", Some(1.0)),
            ],
            &TierPolicy::default(),
        );
        let ids: Vec<_> = sel.topics.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["z", "c", "a", "b"]);
    }

    #[test]
    fn policy_validation() {
        let mut p = TierPolicy::default();
        assert!(p.validate().is_ok());
        p.thresholds.insert(3, Some(12.0));
        assert!(p.validate().is_err());
    }

    #[test]
    fn loads_tsv_with_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.tsv");
        let mut body = String::from("id\tname\toccupation\tbirthyear\tdeathyear\tl\tnon_en_page_views\tcoefficient_of_variation\n");
        for i in 0..9 {
            body.push_str(&format!("{i}\tPerson Number{i}\tPOLITICIAN\t19{i}0\t\t{}\t1000.5\t0.8\n", 10 + i));
        }
        body.push_str("9\tNo Birth\tPOLITICIAN\t\t\t10\t1000\t0.8\n");
        std::fs::write(&path, body).unwrap();
        let load = load_pantheon(&path, &PantheonFormat::default()).unwrap();
        assert_eq!(load.records.len(), 9);
        assert_eq!(load.rejects.len(), 1);
        assert_eq!(load.rejects[0].line, 11);
        assert_eq!(load.records[3].birth_year, 1930);
        assert_eq!(load.records[3].death_year, None);
    }

    #[test]
    fn missing_column_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.tsv");
        std::fs::write(&path, "id\tname\n1\tA B\n").unwrap();
        assert!(matches!(
            load_pantheon(&path, &PantheonFormat::default()),
            Err(Error::MissingColumn { .. })
        ));
    }

    #[test]
    fn cv_from_stddev_and_mean_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.tsv");
        std::fs::write(
            &path,
            "en_curid\tname\toccupation\tbirthyear\tdeathyear\tnumlangs\tPageViewsNonEnglish\tStdDevPageViews\tAverageViews\n\
             7\tJane Doe\tWRITER\t1950\t2001\t20\t5000\t30\t60\n",
        )
        .unwrap();
        let load = load_pantheon(&path, &PantheonFormat::default()).unwrap();
        assert_eq!(load.records[0].metrics.view_cv, 0.5);
        assert_eq!(load.records[0].death_year, Some(2001));
    }
}
