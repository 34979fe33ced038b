//! Three-step response filter and the respondent × topic score matrix.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::elicitation::{ElicitationRecord, Respondent};
use crate::error::{Error, Result};
use crate::language::Language;
use crate::providers::Roster;
use crate::validation::{normalize_label, scale_for, Label, ValidationRecord, Verdict};

/// One response as seen by the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    #[serde(flatten)]
    pub respondent: Respondent,
    pub topic_id: String,
    pub verdict: Option<Verdict>,
    pub label: Option<Label>,
}

/// Pairs every elicitation record with its validation, if any.
pub fn join_records(elicitations: &[ElicitationRecord], validations: &[ValidationRecord]) -> Vec<ResponseRow> {
    let by_key: HashMap<_, _> = validations.iter().map(|v| (v.key(), v)).collect();
    elicitations
        .iter()
        .map(|e| {
            let v = by_key.get(&e.key());
            ResponseRow {
                respondent: e.respondent.clone(),
                topic_id: e.topic_id.clone(),
                verdict: v.map(|v| v.verdict.value),
                label: v.and_then(|v| v.label.as_ref()).map(|l| l.value),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStep {
    Stage1,
    Stage2,
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    #[serde(flatten)]
    pub respondent: Respondent,
    pub topic_id: String,
    pub step: FilterStep,
    pub reason: String,
}

fn removal(row: &ResponseRow, step: FilterStep, reason: String) -> Removal {
    Removal {
        respondent: row.respondent.clone(),
        topic_id: row.topic_id.clone(),
        step,
        reason,
    }
}

/// Keeps rows whose Stage-1 verdict is `yes`. A row without a verdict means
/// validation has not run, which is an ordering error.
pub fn filter_stage1(rows: Vec<ResponseRow>) -> Result<(Vec<ResponseRow>, Vec<Removal>)> {
    let mut kept = Vec::with_capacity(rows.len());
    let mut removed = Vec::new();
    for row in rows {
        match row.verdict {
            None => {
                return Err(Error::StageOrder(format!(
                    "{} / {} has no Stage-1 verdict; run validate first",
                    row.respondent, row.topic_id
                )))
            }
            Some(Verdict::Yes) => kept.push(row),
            Some(v) => {
                let reason = format!("verdict {v:?}").to_lowercase();
                removed.push(removal(&row, FilterStep::Stage1, reason));
            }
        }
    }
    Ok((kept, removed))
}

/// Keeps rows with a scale label.
pub fn filter_stage2(rows: Vec<ResponseRow>) -> Result<(Vec<ResponseRow>, Vec<Removal>)> {
    let mut kept = Vec::with_capacity(rows.len());
    let mut removed = Vec::new();
    for row in rows {
        match row.label {
            Some(Label::Unknown) => removed.push(removal(&row, FilterStep::Stage2, "label unknown".into())),
            Some(_) => kept.push(row),
            // a Stage-1 survivor always has Stage-2 text unless Stage 2 failed
            None => removed.push(removal(&row, FilterStep::Stage2, "no stage-2 label".into())),
        }
    }
    Ok((kept, removed))
}

/// Number of models supporting each language.
pub type Support = BTreeMap<Language, usize>;

pub fn support_from_roster(roster: &Roster) -> Support {
    Language::ALL
        .into_iter()
        .map(|l| (l, roster.supporting(l).len()))
        .filter(|(_, n)| *n > 0)
        .collect()
}

/// Support inferred from the respondents present in the data.
pub fn support_from_rows(rows: &[ResponseRow]) -> Support {
    let mut models: BTreeMap<Language, BTreeSet<&str>> = BTreeMap::new();
    for r in rows {
        models
            .entry(r.respondent.language)
            .or_default()
            .insert(r.respondent.model_id.as_str());
    }
    models.into_iter().map(|(l, m)| (l, m.len())).collect()
}

/// Drops every response for a (topic, language) prompt when fewer than half
/// of the supporting models still answer it: `2 × valid < supported`.
pub fn filter_coverage(
    rows: Vec<ResponseRow>,
    support: &Support,
) -> (Vec<ResponseRow>, Vec<Removal>, BTreeSet<(String, Language)>) {
    let mut valid: HashMap<(String, Language), BTreeSet<String>> = HashMap::new();
    for r in &rows {
        valid
            .entry((r.topic_id.clone(), r.respondent.language))
            .or_default()
            .insert(r.respondent.model_id.clone());
    }
    let supported = |l: &Language| support.get(l).copied().unwrap_or(0);
    let dropped: BTreeSet<(String, Language)> = valid
        .iter()
        .filter(|((_, lang), models)| 2 * models.len() < supported(lang))
        .map(|(k, _)| k.clone())
        .collect();
    let mut kept = Vec::with_capacity(rows.len());
    let mut removed = Vec::new();
    for r in rows {
        let key = (r.topic_id.clone(), r.respondent.language);
        if dropped.contains(&key) {
            let reason = format!("{} of {} models valid", valid[&key].len(), supported(&key.1));
            removed.push(removal(&r, FilterStep::Coverage, reason));
        } else {
            kept.push(r);
        }
    }
    (kept, removed, dropped)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub raw: usize,
    pub removed_stage1: usize,
    pub removed_stage2: usize,
    pub removed_coverage: usize,
    pub kept: usize,
    /// Distinct (topic, language) prompts among the raw responses.
    pub prompts: usize,
    pub prompts_dropped: usize,
    pub respondents: usize,
    pub topics: usize,
}

impl FilterReport {
    /// Share of raw responses removed by step 1.
    pub fn stage1_fraction(&self) -> f64 {
        ratio(self.removed_stage1, self.raw)
    }

    /// Share of step-1 survivors removed by step 2.
    pub fn stage2_fraction(&self) -> f64 {
        ratio(self.removed_stage2, self.raw - self.removed_stage1)
    }

    pub fn coverage_prompt_fraction(&self) -> f64 {
        ratio(self.prompts_dropped, self.prompts)
    }

    /// Share of step-2 survivors removed by step 3.
    pub fn coverage_response_fraction(&self) -> f64 {
        ratio(self.removed_coverage, self.raw - self.removed_stage1 - self.removed_stage2)
    }

    pub fn is_consistent(&self) -> bool {
        self.raw == self.kept + self.removed_stage1 + self.removed_stage2 + self.removed_coverage
    }

    pub fn to_text(&self) -> String {
        format!(
            "raw responses\t{}\nremoved step 1 (stage-1 verdict)\t{}\t{:.2}%\nremoved step 2 (unknown label)\t{}\t{:.2}%\nremoved step 3 (coverage)\t{}\t{:.2}% of responses\nprompts dropped\t{} of {}\t{:.2}% of prompts\nkept responses\t{}\nrespondents\t{}\ntopics\t{}\n",
            self.raw,
            self.removed_stage1,
            100.0 * self.stage1_fraction(),
            self.removed_stage2,
            100.0 * self.stage2_fraction(),
            self.removed_coverage,
            100.0 * self.coverage_response_fraction(),
            self.prompts_dropped,
            self.prompts,
            100.0 * self.coverage_prompt_fraction(),
            self.kept,
            self.respondents,
            self.topics,
        )
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub rows: Vec<ResponseRow>,
    pub removals: Vec<Removal>,
    pub report: FilterReport,
}

pub fn run_filters(rows: Vec<ResponseRow>, support: &Support) -> Result<Filtered> {
    let raw = rows.len();
    let prompts: BTreeSet<(&str, Language)> =
        rows.iter().map(|r| (r.topic_id.as_str(), r.respondent.language)).collect();
    let prompts = prompts.len();
    let (rows, mut removals) = filter_stage1(rows)?;
    let removed_stage1 = removals.len();
    let (rows, r2) = filter_stage2(rows)?;
    let removed_stage2 = r2.len();
    removals.extend(r2);
    let (rows, r3, dropped) = filter_coverage(rows, support);
    let removed_coverage = r3.len();
    removals.extend(r3);
    let report = FilterReport {
        raw,
        removed_stage1,
        removed_stage2,
        removed_coverage,
        kept: rows.len(),
        prompts,
        prompts_dropped: dropped.len(),
        respondents: rows.iter().map(|r| &r.respondent).collect::<BTreeSet<_>>().len(),
        topics: rows.iter().map(|r| &r.topic_id).collect::<BTreeSet<_>>().len(),
    };
    debug_assert!(report.is_consistent());
    Ok(Filtered { rows, removals, report })
}

/// Sparse respondent × topic matrix of scores in {0, 0.25, 0.5, 0.75, 1}.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreMatrix {
    pub entries: BTreeMap<(Respondent, String), f64>,
    pub report: FilterReport,
}

pub const SCORE_VALUES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

pub fn build_score_matrix(filtered: &Filtered) -> Result<ScoreMatrix> {
    let mut entries = BTreeMap::new();
    for r in &filtered.rows {
        let score = r.label.and_then(Label::score).ok_or_else(|| {
            Error::StageOrder(format!(
                "{} / {} reached the score matrix without a scale label",
                r.respondent, r.topic_id
            ))
        })?;
        entries.insert((r.respondent.clone(), r.topic_id.clone()), score);
    }
    Ok(ScoreMatrix {
        entries,
        report: filtered.report.clone(),
    })
}

impl ScoreMatrix {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn respondents(&self) -> Vec<Respondent> {
        self.entries.keys().map(|(r, _)| r.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn topics(&self) -> Vec<String> {
        self.entries.keys().map(|(_, t)| t.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn get(&self, respondent: &Respondent, topic_id: &str) -> Option<f64> {
        self.entries.get(&(respondent.clone(), topic_id.to_string())).copied()
    }

    /// Entries whose model does not support the respondent language.
    pub fn unsupported_entries(&self, roster: &Roster) -> Vec<Respondent> {
        self.respondents()
            .into_iter()
            .filter(|r| !roster.get(&r.model_id).is_some_and(|m| m.supports(r.language)))
            .collect()
    }

    /// Flat table `model, language, topic_id, score`, preceded by `#` comment lines.
    pub fn write_tsv(&self, path: &Path, comments: &[String]) -> Result<()> {
        let mut out = String::new();
        for c in comments {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str("model\tlanguage\ttopic_id\tscore\n");
        for ((r, t), s) in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.model_id, r.language.code(), t, s));
        }
        write_file(path, out.as_bytes())
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::StageOrder(format!(
                "{} not found; run the filter stage first",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = BTreeMap::new();
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        lines.next();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Config(format!("{}: malformed row {}", path.display(), i + 2));
            if f.len() != 4 {
                return Err(bad());
            }
            let lang: Language = f[1].parse().map_err(|_| bad())?;
            let score: f64 = f[3].parse().map_err(|_| bad())?;
            if !SCORE_VALUES.contains(&score) {
                return Err(bad());
            }
            entries.insert((Respondent::new(f[0], lang), f[2].to_string()), score);
        }
        Ok(Self {
            entries,
            report: FilterReport::default(),
        })
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_removals(path: &Path, removals: &[Removal]) -> Result<()> {
    let mut out = String::from("model\tlanguage\ttopic_id\tstep\treason\n");
    for r in removals {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:?}\t{}\n",
            r.respondent.model_id,
            r.respondent.language.code(),
            r.topic_id,
            r.step,
            r.reason
        ));
    }
    write_file(path, out.as_bytes())
}

const MODEL_COLS: &[&str] = &["model", "model_id", "model_name", "llm"];
const LANGUAGE_COLS: &[&str] = &["language", "lang", "prompt_language"];
const TOPIC_COLS: &[&str] = &["topic_id", "topic", "person", "person_id", "wikidata_id", "name"];
const VERDICT_COLS: &[&str] = &[
    "stage1_verdict",
    "stage_1_validation",
    "stage1_valid",
    "stage_1_valid",
    "description_valid",
    "valid",
];
const LABEL_COLS: &[&str] = &[
    "label",
    "stage2_label",
    "stage_2_label",
    "extracted_label",
    "response_label",
    "stage_2_validation",
];

fn find_col(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

fn parse_verdict(s: &str) -> Option<Verdict> {
    match s.trim().to_lowercase().as_str() {
        "true" | "1" => Some(Verdict::Yes),
        "false" | "0" => Some(Verdict::No),
        other => Verdict::parse(other),
    }
}

/// English label names, or labels in the row's own language.
fn parse_label(s: &str, language: Language) -> Option<Label> {
    Label::parse(s).or_else(|| normalize_label(s, &scale_for(language)).map(Label::from_index))
}

/// Loads a released response table (CSV or TSV, by extension) into filter
/// rows. Column names are matched case-insensitively against common aliases.
pub fn load_response_table(path: &Path) -> Result<Vec<ResponseRow>> {
    let delimiter = if path.extension().is_some_and(|e| e == "tsv") { b'\t' } else { b',' };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let need = |names: &[&str], col: &str| {
        find_col(&headers, names).ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: col.to_string(),
        })
    };
    let (mi, li, ti, vi, bi) = (
        need(MODEL_COLS, "model")?,
        need(LANGUAGE_COLS, "language")?,
        need(TOPIC_COLS, "topic_id")?,
        need(VERDICT_COLS, "stage1_verdict")?,
        need(LABEL_COLS, "label")?,
    );
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let get = |c: usize| rec.get(c).unwrap_or("").trim();
        let language: Language = get(li).parse().map_err(|_| {
            Error::Config(format!("{}: row {}: unknown language `{}`", path.display(), i + 2, get(li)))
        })?;
        let label = get(bi);
        rows.push(ResponseRow {
            respondent: Respondent::new(get(mi), language),
            topic_id: get(ti).to_string(),
            verdict: parse_verdict(get(vi)),
            label: if label.is_empty() { None } else { Some(parse_label(label, language).unwrap_or(Label::Unknown)) },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(model: &str, lang: Language, topic: &str, v: Verdict, l: Option<Label>) -> ResponseRow {
        ResponseRow {
            respondent: Respondent::new(model, lang),
            topic_id: topic.into(),
            verdict: Some(v),
            label: l,
        }
    }

    #[test]
    fn stage1_keeps_only_yes() {
        let rows = vec![
            row("a", Language::English, "t", Verdict::Yes, Some(Label::Neutral)),
            row("b", Language::English, "t", Verdict::No, Some(Label::Neutral)),
            row("c", Language::English, "t", Verdict::Refusal, None),
        ];
        let (kept, removed) = filter_stage1(rows).unwrap();
        assert_eq!((kept.len(), removed.len()), (1, 2));
        assert!(removed.iter().all(|r| r.step == FilterStep::Stage1));
    }

    #[test]
    fn missing_verdict_is_an_ordering_error() {
        let mut r = row("a", Language::English, "t", Verdict::Yes, None);
        r.verdict = None;
        assert!(matches!(filter_stage1(vec![r]), Err(Error::StageOrder(_))));
    }

    #[test]
    fn stage2_drops_unknown() {
        let rows = vec![
            row("a", Language::English, "t", Verdict::Yes, Some(Label::Neutral)),
            row("b", Language::English, "t", Verdict::Yes, Some(Label::Unknown)),
        ];
        let (kept, removed) = filter_stage2(rows).unwrap();
        assert_eq!((kept.len(), removed.len()), (1, 1));
    }

    fn prompt(valid: usize) -> Vec<ResponseRow> {
        (0..valid)
            .map(|i| row(&format!("m{i}"), Language::English, "t", Verdict::Yes, Some(Label::Positive)))
            .collect()
    }

    #[test]
    fn coverage_uses_strict_half() {
        let five = Support::from([(Language::English, 5)]);
        let (kept, removed, dropped) = filter_coverage(prompt(2), &five);
        assert_eq!((kept.len(), removed.len(), dropped.len()), (0, 2, 1));
        let four = Support::from([(Language::English, 4)]);
        let (kept, _, dropped) = filter_coverage(prompt(2), &four);
        assert_eq!((kept.len(), dropped.len()), (2, 0));
        let (kept, _, _) = filter_coverage(prompt(3), &five);
        assert_eq!(kept.len(), 3);
    }

    #[test]
    fn likert_mapping() {
        let rows: Vec<ResponseRow> = Label::SCALE
            .iter()
            .enumerate()
            .map(|(i, l)| row("a", Language::English, &format!("t{i}"), Verdict::Yes, Some(*l)))
            .collect();
        let f = run_filters(rows, &Support::from([(Language::English, 1)])).unwrap();
        let m = build_score_matrix(&f).unwrap();
        let r = Respondent::new("a", Language::English);
        assert_eq!(m.get(&r, "t0"), Some(0.0));
        assert_eq!(m.get(&r, "t2"), Some(0.5));
        let vals: Vec<f64> = (0..5).map(|i| m.get(&r, &format!("t{i}")).unwrap()).collect();
        for w in vals.windows(2) {
            assert_eq!(w[1] - w[0], 0.25);
        }
    }

    #[test]
    fn unknown_label_at_matrix_is_fatal() {
        let f = Filtered {
            rows: vec![row("a", Language::English, "t", Verdict::Yes, Some(Label::Unknown))],
            removals: vec![],
            report: FilterReport::default(),
        };
        assert!(build_score_matrix(&f).is_err());
    }

    fn arb_rows() -> impl Strategy<Value = Vec<ResponseRow>> {
        let verdict = prop_oneof![Just(Verdict::Yes), Just(Verdict::Yes), Just(Verdict::No), Just(Verdict::Refusal)];
        let label = proptest::option::of(0usize..6).prop_map(|o| o.map(|i| if i == 5 { Label::Unknown } else { Label::from_index(i) }));
        proptest::collection::btree_map((0usize..5, 0usize..2, 0usize..6), (verdict, label), 0..60).prop_map(|m| {
            m.into_iter()
                .map(|((mi, li, ti), (v, l))| {
                    let lang = [Language::English, Language::French][li];
                    row(&format!("m{mi}"), lang, &format!("t{ti}"), v, l)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn counters_add_up_and_order_does_not_matter(rows in arb_rows(), seed in any::<u64>()) {
            let support = Support::from([(Language::English, 5), (Language::French, 3)]);
            let a = run_filters(rows.clone(), &support).unwrap();
            prop_assert!(a.report.is_consistent());
            prop_assert_eq!(a.removals.len(), a.report.raw - a.report.kept);
            let mut shuffled = rows.clone();
            let n = shuffled.len().max(1);
            shuffled.rotate_left((seed as usize) % n);
            shuffled.reverse();
            let b = run_filters(shuffled, &support).unwrap();
            let ka: BTreeSet<_> = a.rows.iter().map(|r| (r.respondent.clone(), r.topic_id.clone())).collect();
            let kb: BTreeSet<_> = b.rows.iter().map(|r| (r.respondent.clone(), r.topic_id.clone())).collect();
            prop_assert_eq!(ka, kb);
            prop_assert_eq!(&a.report, &b.report);
            let m = build_score_matrix(&a).unwrap();
            prop_assert!(m.entries.values().all(|s| SCORE_VALUES.contains(s)));
        }
    }

    #[test]
    fn tsv_round_trip_and_table_loader() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            row("a", Language::English, "t1", Verdict::Yes, Some(Label::Positive)),
            row("a", Language::Russian, "t1", Verdict::Yes, Some(Label::VeryNegative)),
        ];
        let f = run_filters(rows, &Support::from([(Language::English, 1), (Language::Russian, 1)])).unwrap();
        let m = build_score_matrix(&f).unwrap();
        let p = dir.path().join("m/scores.tsv");
        m.write_tsv(&p, &["manifest: abc".into()]).unwrap();
        let back = ScoreMatrix::read_tsv(&p).unwrap();
        assert_eq!(back.entries, m.entries);

        let csv = dir.path().join("released.csv");
        std::fs::write(
            &csv,
            "Model,Language,Person,stage_1_valid,extracted_label\nJais,AR,Q1,yes,إيجابي جداً\nJais,EN,Q1,refusal,\nGPT-4o,en,Q1,True,very positive\nGPT-4o,fr,Q2,no,Unknown\n",
        )
        .unwrap();
        let rows = load_response_table(&csv).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].label, Some(Label::VeryPositive));
        assert_eq!(rows[1].verdict, Some(Verdict::Refusal));
        assert_eq!(rows[2].verdict, Some(Verdict::Yes));
        assert_eq!(rows[3].label, Some(Label::Unknown));
        assert_eq!(support_from_rows(&rows)[&Language::English], 2);

        std::fs::write(&csv, "model,language\n").unwrap();
        assert!(matches!(load_response_table(&csv), Err(Error::MissingColumn { .. })));
    }
}
