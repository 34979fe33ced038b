//! Tabular result files, the run manifest and figure rendering.

pub mod svg;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{BiplotResult, ForestResult, ForestRow, RadarResult};
use crate::elicitation::Respondent;
use crate::error::{Error, Result};
use crate::filtering::write_file;

pub use svg::{render_biplot, render_forest, render_radar};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance of one run. `digest` covers everything except the counters
/// and timestamps, so identical runs share it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Input name to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub digest: String,
    #[serde(default)]
    pub counters: BTreeMap<String, serde_json::Value>,
    pub created_at: u64,
    pub updated_at: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(config: serde_json::Value, seed: u64, inputs: BTreeMap<String, String>) -> Self {
        let body = serde_json::json!({
            "tool_version": TOOL_VERSION,
            "config": config,
            "seed": seed,
            "inputs": inputs,
        });
        let digest = sha256_hex(body.to_string().as_bytes());
        let t = now();
        RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            config,
            seed,
            inputs,
            digest,
            counters: BTreeMap::new(),
            created_at: t,
            updated_at: t,
        }
    }

    pub fn short_digest(&self) -> &str {
        &self.digest[..16]
    }

    pub fn load(path: &Path) -> Result<Option<Self>> {
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json("manifest", e))?;
        write_file(path, (text + "\n").as_bytes())
    }

    /// Records a stage's counters, keeping earlier stages and the creation
    /// time of a matching previous manifest.
    pub fn record_stage(mut self, path: &Path, stage: &str, counters: serde_json::Value) -> Result<Self> {
        if let Some(prev) = Self::load(path)? {
            if prev.digest == self.digest {
                self.created_at = prev.created_at;
                self.counters = prev.counters;
            }
        }
        self.counters.insert(stage.to_string(), counters);
        self.updated_at = now();
        self.save(path)?;
        Ok(self)
    }
}

/// Tab-separated table with a `# run <digest>` line and optional extra
/// `# key<TAB>value` lines before the header.
pub fn write_table(path: &Path, digest: &str, meta: &[(String, String)], header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = format!("# run\t{digest}\n");
    for (k, v) in meta {
        out.push_str(&format!("# {k}\t{v}\n"));
    }
    out.push_str(&header.join("\t"));
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub meta: BTreeMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::StageOrder(format!("{} not found; run analyze first", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut t = Table::default();
        for line in text.lines() {
            if let Some(m) = line.strip_prefix("# ") {
                let (k, v) = m.split_once('\t').unwrap_or((m, ""));
                t.meta.insert(k.to_string(), v.to_string());
            } else if t.header.is_empty() {
                t.header = line.split('\t').map(str::to_string).collect();
            } else {
                t.rows.push(line.split('\t').map(str::to_string).collect());
            }
        }
        Ok(t)
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("result table lacks column `{name}`")))
    }

    fn num(v: &str) -> Result<f64> {
        v.parse().map_err(|_| Error::Config(format!("bad number `{v}` in result table")))
    }
}

fn n(v: f64) -> String {
    format!("{v}")
}

pub fn write_biplot(dir: &Path, b: &BiplotResult, labels: &BTreeMap<String, String>, digest: &str) -> Result<()> {
    let points: Vec<Vec<String>> = b
        .respondent_points
        .iter()
        .map(|(r, p)| vec![r.model_id.clone(), r.language.code().to_string(), n(p[0]), n(p[1])])
        .collect();
    write_table(&dir.join("biplot_points.tsv"), digest, &[], &["model", "language", "pc1", "pc2"], &points)?;
    let rank: BTreeMap<&String, usize> = b.top_tags.iter().enumerate().map(|(i, t)| (t, i + 1)).collect();
    let loadings: Vec<Vec<String>> = b
        .tag_loadings
        .iter()
        .map(|(t, l)| {
            vec![
                t.clone(),
                labels.get(t).cloned().unwrap_or_default(),
                n(l[0]),
                n(l[1]),
                n(l[0].hypot(l[1])),
                rank.get(t).map(|r| r.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    write_table(
        &dir.join("biplot_loadings.tsv"),
        digest,
        &[],
        &["tag", "label", "l1", "l2", "norm", "top_rank"],
        &loadings,
    )?;
    let meta = vec![
        ("explained_pc1".to_string(), n(b.explained_variance[0])),
        ("explained_pc2".to_string(), n(b.explained_variance[1])),
    ];
    write_table(&dir.join("biplot_variance.tsv"), digest, &meta, &["component", "explained"], &[
        vec!["1".into(), n(b.explained_variance[0])],
        vec!["2".into(), n(b.explained_variance[1])],
    ])
}

pub fn read_biplot(dir: &Path) -> Result<BiplotResult> {
    let pts = Table::read(&dir.join("biplot_points.tsv"))?;
    let (m, l, x, y) = (pts.col("model")?, pts.col("language")?, pts.col("pc1")?, pts.col("pc2")?);
    let mut respondent_points = BTreeMap::new();
    for r in &pts.rows {
        let lang = r[l].parse().map_err(|_| Error::Config(format!("bad language `{}`", r[l])))?;
        respondent_points.insert(Respondent::new(&r[m], lang), [Table::num(&r[x])?, Table::num(&r[y])?]);
    }
    let ld = Table::read(&dir.join("biplot_loadings.tsv"))?;
    let (t, l1, l2, rk) = (ld.col("tag")?, ld.col("l1")?, ld.col("l2")?, ld.col("top_rank")?);
    let mut tag_loadings = BTreeMap::new();
    let mut ranked = Vec::new();
    for r in &ld.rows {
        tag_loadings.insert(r[t].clone(), [Table::num(&r[l1])?, Table::num(&r[l2])?]);
        if let Ok(k) = r[rk].parse::<usize>() {
            ranked.push((k, r[t].clone()));
        }
    }
    ranked.sort();
    let var = Table::read(&dir.join("biplot_variance.tsv"))?;
    let e = var.col("explained")?;
    let explained_variance = [Table::num(&var.rows[0][e])?, Table::num(&var.rows[1][e])?];
    Ok(BiplotResult {
        respondent_points,
        tag_loadings,
        explained_variance,
        top_tags: ranked.into_iter().map(|(_, t)| t).collect(),
    })
}

pub fn write_radar(path: &Path, r: &RadarResult, labels: &BTreeMap<String, String>, digest: &str) -> Result<()> {
    let mut rows = Vec::new();
    for g in &r.groups {
        for (i, t) in r.tag_order.iter().enumerate() {
            rows.push(vec![g.clone(), t.clone(), labels.get(t).cloned().unwrap_or_default(), i.to_string(), n(r.value(g, t))]);
        }
    }
    let meta = vec![("dropped_tags".to_string(), r.dropped_tags.join(","))];
    write_table(path, digest, &meta, &["group", "tag", "label", "order", "value"], &rows)
}

pub fn read_radar(path: &Path) -> Result<RadarResult> {
    let t = Table::read(path)?;
    let (g, tag, o, v) = (t.col("group")?, t.col("tag")?, t.col("order")?, t.col("value")?);
    let mut groups: Vec<String> = Vec::new();
    let mut order: BTreeMap<usize, String> = BTreeMap::new();
    let mut values = BTreeMap::new();
    for r in &t.rows {
        if !groups.contains(&r[g]) {
            groups.push(r[g].clone());
        }
        let i: usize = r[o].parse().map_err(|_| Error::Config("bad order in radar table".into()))?;
        order.insert(i, r[tag].clone());
        values.insert((r[g].clone(), r[tag].clone()), Table::num(&r[v])?);
    }
    let dropped_tags = t
        .meta
        .get("dropped_tags")
        .map(|s| s.split(',').filter(|x| !x.is_empty()).map(str::to_string).collect())
        .unwrap_or_default();
    Ok(RadarResult { groups, values, tag_order: order.into_values().collect(), dropped_tags })
}

pub fn write_forest(path: &Path, f: &ForestResult, labels: &BTreeMap<String, String>, digest: &str, extra: &[(String, String)]) -> Result<()> {
    let rows: Vec<Vec<String>> = f
        .rows
        .iter()
        .map(|r| {
            vec![
                r.item.clone(),
                labels.get(&r.item).cloned().unwrap_or_default(),
                n(r.mean_diff),
                n(r.ci_lo),
                n(r.ci_hi),
                n(r.p_value),
                r.n1.to_string(),
                r.n2.to_string(),
            ]
        })
        .collect();
    let mut meta = extra.to_vec();
    meta.push(("overall_mean".into(), n(f.overall_mean)));
    meta.push(("tested".into(), f.tested.to_string()));
    meta.push((
        "excluded".into(),
        f.excluded.iter().map(|(i, why)| format!("{i}: {why}")).collect::<Vec<_>>().join("; "),
    ));
    write_table(path, digest, &meta, &["item", "label", "mean_diff", "ci_lo", "ci_hi", "p_value", "n1", "n2"], &rows)
}

pub fn read_forest(path: &Path) -> Result<ForestResult> {
    let t = Table::read(path)?;
    let c = |name| t.col(name);
    let (item, md, lo, hi, p, n1, n2) = (c("item")?, c("mean_diff")?, c("ci_lo")?, c("ci_hi")?, c("p_value")?, c("n1")?, c("n2")?);
    let count = |v: &str| v.parse::<usize>().map_err(|_| Error::Config(format!("bad count `{v}`")));
    let rows = t
        .rows
        .iter()
        .map(|r| {
            Ok(ForestRow {
                item: r[item].clone(),
                mean_diff: Table::num(&r[md])?,
                ci_lo: Table::num(&r[lo])?,
                ci_hi: Table::num(&r[hi])?,
                p_value: Table::num(&r[p])?,
                n1: count(&r[n1])?,
                n2: count(&r[n2])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let overall_mean = t.meta.get("overall_mean").map(|v| Table::num(v)).transpose()?.unwrap_or(0.0);
    let tested = t.meta.get("tested").map(|v| count(v)).transpose()?.unwrap_or(0);
    let excluded = t
        .meta
        .get("excluded")
        .map(|s| {
            s.split("; ")
                .filter(|x| !x.is_empty())
                .map(|x| {
                    let (a, b) = x.split_once(": ").unwrap_or((x, ""));
                    (a.to_string(), b.to_string())
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(ForestResult { rows, overall_mean, tested, excluded })
}

/// Labels stored alongside items in a result table.
pub fn table_labels(path: &Path) -> Result<BTreeMap<String, String>> {
    let t = Table::read(path)?;
    let key = t.col(if t.header.iter().any(|h| h == "item") { "item" } else { "tag" })?;
    let label = t.col("label")?;
    Ok(t.rows
        .iter()
        .filter(|r| !r[label].is_empty())
        .map(|r| (r[key].clone(), r[label].clone()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::language::Language;

    #[test]
    fn manifest_digest_ignores_time_and_counters() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        let inputs = BTreeMap::from([("roster".to_string(), sha256_hex(b"x"))]);
        let a = RunManifest::new(serde_json::json!({"k": 1}), 7, inputs.clone());
        let a = a.record_stage(&p, "filter", serde_json::json!({"kept": 3})).unwrap();
        let b = RunManifest::new(serde_json::json!({"k": 1}), 7, inputs.clone())
            .record_stage(&p, "analyze", serde_json::json!({}))
            .unwrap();
        assert_eq!(a.digest, b.digest);
        assert_eq!(b.counters.len(), 2);
        let c = RunManifest::new(serde_json::json!({"k": 2}), 7, inputs);
        assert_ne!(a.digest, c.digest);
    }

    #[test]
    fn tables_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut points = BTreeMap::new();
        points.insert(Respondent::new("m", Language::French), [0.1 + 0.2, -1.0 / 3.0]);
        let b = BiplotResult {
            respondent_points: points,
            tag_loadings: BTreeMap::from([("501".to_string(), [0.6, 0.8]), ("502".to_string(), [0.0, -1e-17])]),
            explained_variance: [0.75, 0.25],
            top_tags: vec!["501".into(), "502".into()],
        };
        write_biplot(dir.path(), &b, &BTreeMap::new(), "d").unwrap();
        assert_eq!(read_biplot(dir.path()).unwrap(), b);

        let f = ForestResult {
            rows: vec![ForestRow { item: "Q1".into(), mean_diff: 0.25, ci_lo: 0.1, ci_hi: 0.4, p_value: 0.03, n1: 2, n2: 5 }],
            overall_mean: -0.01,
            tested: 9,
            excluded: vec![("999".into(), "1 topics inside, 8 outside".into())],
        };
        let p = dir.path().join("forest.tsv");
        write_forest(&p, &f, &BTreeMap::from([("Q1".to_string(), "Edward Snowden".to_string())]), "d", &[]).unwrap();
        assert_eq!(read_forest(&p).unwrap(), f);
        assert_eq!(table_labels(&p).unwrap()["Q1"], "Edward Snowden");
    }
}
