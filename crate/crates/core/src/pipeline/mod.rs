//! Stage orchestration over one output directory. Every stage reads the
//! previous stage's files, so each can be rerun on its own.

pub mod mock;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    biplot, mean_tag_scores, person_forest, radar_aggregate, tag_forest, ComparisonKind, ForestConfig, Group,
    GroupDef, GroupFile,
};
use crate::corpus::{self, DirSummaryStore, PantheonFormat, TierPolicy, Topic};
use crate::elicitation::{self, CampaignConfig, ElicitationStore, Respondent, TemplateSet};
use crate::error::{Error, Result};
use crate::filtering::{self, ScoreMatrix};
use crate::language::Language;
use crate::providers::{Client, ExchangeStore, RetryPolicy, Roster};
use crate::report::{self, file_digest, sha256_hex, RunManifest};
use crate::tagging::{self, TagStore, TaggingConfig, Taxonomy};
use crate::validation::{self, ValidationConfig, ValidationStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Model roster; the packaged reference roster when absent.
    #[serde(default)]
    pub roster: Option<PathBuf>,
    /// Directory of `<code>.toml` prompt templates; packaged when absent.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    #[serde(default)]
    pub groups: Option<PathBuf>,
    /// Restricts the campaign to these models.
    #[serde(default)]
    pub models: Option<BTreeSet<String>>,
    #[serde(default)]
    pub languages: Option<BTreeSet<Language>>,
    pub corpus: CorpusConfig,
    pub judges: JudgeConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(default)]
    pub pantheon: Option<PathBuf>,
    #[serde(default)]
    pub summaries: Option<PathBuf>,
    /// A ready topic list, used instead of selecting from Pantheon.
    #[serde(default)]
    pub topics: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeConfig {
    pub tagging: String,
    pub description: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_tag_workers")]
    pub tag_workers: usize,
    #[serde(default)]
    pub retry_failed: bool,
}

fn default_workers() -> usize {
    16
}

fn default_tag_workers() -> usize {
    4
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { workers: default_workers(), tag_workers: default_tag_workers(), retry_failed: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default = "default_person_k")]
    pub person_top_k: usize,
    #[serde(default = "default_tag_k")]
    pub tag_top_k: usize,
}

fn default_resamples() -> usize {
    10_000
}

fn default_person_k() -> usize {
    20
}

fn default_tag_k() -> usize {
    10
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { resamples: default_resamples(), person_top_k: default_person_k(), tag_top_k: default_tag_k() }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<(Self, Self)> {
        if !path.exists() {
            return Err(Error::Config(format!("config file {} not found", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((raw.clone(), raw.resolved(base)))
    }

    fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [&mut self.roster, &mut self.templates, &mut self.taxonomy, &mut self.groups]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for p in [&mut self.corpus.pantheon, &mut self.corpus.summaries, &mut self.corpus.topics]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        self
    }
}

/// Files under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn topics(&self) -> PathBuf {
        self.root.join("topics.jsonl")
    }
    pub fn topic_rejects(&self) -> PathBuf {
        self.root.join("topic_rejects.tsv")
    }
    pub fn tags(&self) -> PathBuf {
        self.root.join("tags.jsonl")
    }
    pub fn exchanges(&self) -> PathBuf {
        self.root.join("exchanges.jsonl")
    }
    pub fn elicitations(&self) -> PathBuf {
        self.root.join("elicitations.jsonl")
    }
    pub fn validations(&self) -> PathBuf {
        self.root.join("validations.jsonl")
    }
    pub fn scores(&self) -> PathBuf {
        self.root.join("filter").join("scores.tsv")
    }
    pub fn removals(&self) -> PathBuf {
        self.root.join("filter").join("removals.tsv")
    }
    pub fn filter_report(&self) -> PathBuf {
        self.root.join("filter").join("report.txt")
    }
    pub fn analysis(&self) -> PathBuf {
        self.root.join("analysis")
    }
    pub fn figures(&self) -> PathBuf {
        self.root.join("figures")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

/// What a stage did, for the CLI and the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub provider_calls: u64,
    pub counters: serde_json::Value,
}

pub struct Pipeline {
    pub config: Config,
    raw_config: Config,
    pub roster: Roster,
    pub templates: TemplateSet,
    pub taxonomy: Taxonomy,
    pub layout: Layout,
    pub mock: bool,
}

impl Pipeline {
    pub fn from_file(path: &Path, mock: bool) -> Result<Self> {
        let (raw, config) = Config::load(path)?;
        Self::new(raw, config, mock)
    }

    /// `raw` is the config as written (recorded in the manifest), `config`
    /// the same with paths resolved.
    pub fn new(raw: Config, config: Config, mock: bool) -> Result<Self> {
        let roster = match &config.roster {
            Some(p) => Roster::load(p)?,
            None => Roster::parse(crate::providers::roster::REFERENCE_ROSTER).map_err(Error::Config)?,
        };
        let templates = match &config.templates {
            Some(d) => TemplateSet::load_dir(d)?,
            None => TemplateSet::packaged(),
        };
        let taxonomy = match &config.taxonomy {
            Some(p) => tagging::load_taxonomy(p)?,
            None => Taxonomy::packaged(),
        };
        if let Some(models) = &config.models {
            if let Some(m) = models.iter().find(|m| roster.get(m).is_none()) {
                return Err(Error::Config(format!("model `{m}` is not in the roster")));
            }
        }
        let layout = Layout { root: config.output_dir.clone() };
        Ok(Pipeline { config, raw_config: raw, roster, templates, taxonomy, layout, mock })
    }

    fn respondents(&self) -> Vec<Respondent> {
        elicitation::respondents(&self.roster, self.config.models.as_ref(), self.config.languages.as_ref())
    }

    fn client(&self) -> Result<Client> {
        let judges = [&self.config.judges.tagging, &self.config.judges.description, &self.config.judges.label];
        if self.mock {
            let mut client = Client::new(RetryPolicy::immediate(1));
            let ids: BTreeSet<&String> =
                self.roster.models.iter().map(|m| &m.model_id).chain(judges).collect();
            for id in ids {
                client.register(id.clone(), Arc::new(mock::SimulatedProvider::new(self.config.seed, id)), 64);
            }
            return Ok(client);
        }
        for j in judges {
            if self.roster.get(j).is_none() {
                return Err(Error::Config(format!("judge model `{j}` is not in the roster")));
            }
        }
        Ok(Client::from_roster(&self.roster, RetryPolicy::default())?)
    }

    fn manifest(&self) -> Result<RunManifest> {
        let mut inputs = BTreeMap::new();
        let roster_text = match &self.config.roster {
            Some(p) => std::fs::read(p).map_err(|e| Error::io(p, e))?,
            None => crate::providers::roster::REFERENCE_ROSTER.as_bytes().to_vec(),
        };
        inputs.insert("roster".to_string(), sha256_hex(&roster_text));
        inputs.insert("templates".to_string(), self.templates.version());
        let tax = serde_json::to_vec(self.taxonomy.tags()).map_err(|e| Error::json("taxonomy", e))?;
        inputs.insert("taxonomy".to_string(), sha256_hex(&tax));
        if let Some(p) = &self.config.groups {
            inputs.insert("groups".to_string(), file_digest(p)?);
        }
        if let Some(p) = &self.config.corpus.pantheon {
            if p.exists() {
                inputs.insert("pantheon".to_string(), file_digest(p)?);
            }
        }
        if let Some(d) = &self.config.corpus.summaries {
            for l in Language::ALL {
                let p = d.join(format!("{}.jsonl", l.code().to_ascii_lowercase()));
                if p.exists() {
                    inputs.insert(format!("summaries_{}", l.code().to_ascii_lowercase()), file_digest(&p)?);
                }
            }
        }
        if let Some(p) = &self.config.corpus.topics {
            if p.exists() {
                inputs.insert("topics".to_string(), file_digest(p)?);
            }
        }
        let config = serde_json::to_value(&self.raw_config).map_err(|e| Error::json("config", e))?;
        Ok(RunManifest::new(config, self.config.seed, inputs))
    }

    fn finish(&self, stage: &str, provider_calls: u64, counters: serde_json::Value) -> Result<StageReport> {
        let mut c = counters;
        if let Some(obj) = c.as_object_mut() {
            obj.insert("provider_calls".into(), provider_calls.into());
        }
        self.manifest()?.record_stage(&self.layout.manifest(), stage, c.clone())?;
        Ok(StageReport { stage: stage.to_string(), provider_calls, counters: c })
    }

    fn topics(&self) -> Result<Vec<Topic>> {
        corpus::read_topics(&self.layout.topics())
    }

    pub fn select_topics(&self) -> Result<StageReport> {
        std::fs::create_dir_all(&self.layout.root).map_err(|e| Error::io(&self.layout.root, e))?;
        if let Some(list) = &self.config.corpus.topics {
            let topics = corpus::read_topics(list)?;
            corpus::write_topics(&self.layout.topics(), &topics)?;
            return self.finish("select-topics", 0, serde_json::json!({ "selected": topics.len(), "source": "topic list" }));
        }
        let (Some(pantheon), Some(summaries)) = (&self.config.corpus.pantheon, &self.config.corpus.summaries) else {
            return Err(Error::Config("corpus needs either `topics` or both `pantheon` and `summaries`".into()));
        };
        let load = corpus::load_pantheon(pantheon, &PantheonFormat::default())?;
        let store = DirSummaryStore::open(summaries)?;
        let sel = corpus::apply_selection_criteria(&load.records, &store);
        let chosen = corpus::select_topics(sel.candidates, &TierPolicy::default());
        corpus::write_topics(&self.layout.topics(), &chosen.topics)?;
        corpus::write_rejects_report(&self.layout.topic_rejects(), &load.rejects, &sel.rejects, &chosen.excluded)?;
        let tiers: BTreeMap<String, usize> =
            chosen.tier_counts().into_iter().map(|(t, n)| (format!("tier{t}"), n)).collect();
        self.finish(
            "select-topics",
            0,
            serde_json::json!({
                "records": load.records.len(),
                "malformed_rows": load.rejects.len(),
                "criterion_rejects": sel.rejects.len(),
                "tier_excluded": chosen.excluded.len(),
                "selected": chosen.topics.len(),
                "tiers": tiers,
            }),
        )
    }

    pub fn tag(&self) -> Result<StageReport> {
        let topics = self.topics()?;
        let client = self.client()?;
        let store = TagStore::open(&self.layout.tags())?;
        let mut cfg = TaggingConfig::new(&self.config.judges.tagging);
        cfg.concurrency = self.config.run.tag_workers;
        let s = tagging::tag_topics(&topics, &self.taxonomy, &client, &store, &cfg)?;
        self.finish(
            "tag",
            client.call_count(),
            serde_json::json!({ "already_done": s.already_done, "assigned": s.assigned, "failed": s.failed }),
        )
    }

    pub fn elicit(&self) -> Result<StageReport> {
        let topics = self.topics()?;
        let client = self.client()?;
        let exchanges = ExchangeStore::open(&self.layout.exchanges())?;
        let store = ElicitationStore::open(&self.layout.elicitations())?;
        let cfg = CampaignConfig { workers: self.config.run.workers, retry_failed: self.config.run.retry_failed };
        let s = elicitation::run_campaign(&self.respondents(), &topics, &self.templates, &client, &exchanges, &store, &cfg)?;
        let t = s.total();
        self.finish(
            "elicit",
            client.call_count(),
            serde_json::json!({
                "respondents": s.per_respondent.len(),
                "attempted": s.attempted,
                "complete": t.complete,
                "stage1_failed": t.stage1_failed,
                "stage2_failed": t.stage2_failed,
                "reused": t.reused,
            }),
        )
    }

    pub fn validate(&self) -> Result<StageReport> {
        let records = elicitation::read_elicitations(&self.layout.elicitations())?;
        let topics = self.topics()?;
        let client = self.client()?;
        let exchanges = ExchangeStore::open(&self.layout.exchanges())?;
        let store = ValidationStore::open(&self.layout.validations())?;
        let cfg = ValidationConfig {
            description_judge: self.config.judges.description.clone(),
            label_judge: self.config.judges.label.clone(),
            workers: self.config.run.workers,
        };
        let s = validation::run_validation(&records, &topics, &self.templates, &client, &exchanges, &store, &cfg)?;
        self.finish(
            "validate",
            client.call_count(),
            serde_json::to_value(&s).map_err(|e| Error::json("validation summary", e))?,
        )
    }

    /// Models supporting each language among those in the campaign.
    fn support(&self) -> filtering::Support {
        let mut roster = self.roster.clone();
        if let Some(models) = &self.config.models {
            roster.models.retain(|m| models.contains(&m.model_id));
        }
        let mut support = filtering::support_from_roster(&roster);
        if let Some(langs) = &self.config.languages {
            support.retain(|l, _| langs.contains(l));
        }
        support
    }

    pub fn filter(&self) -> Result<StageReport> {
        let elicitations = elicitation::read_elicitations(&self.layout.elicitations())?;
        let validations = validation::read_validations(&self.layout.validations())?;
        let rows = filtering::join_records(&elicitations, &validations);
        let filtered = filtering::run_filters(rows, &self.support())?;
        let matrix = filtering::build_score_matrix(&filtered)?;
        let digest = self.manifest()?.short_digest().to_string();
        matrix.write_tsv(&self.layout.scores(), &[format!("run\t{digest}")])?;
        filtering::write_removals(&self.layout.removals(), &filtered.removals)?;
        let text = format!("# run\t{digest}\n{}", filtered.report.to_text());
        filtering::write_file(&self.layout.filter_report(), text.as_bytes())?;
        self.finish(
            "filter",
            0,
            serde_json::to_value(&filtered.report).map_err(|e| Error::json("filter report", e))?,
        )
    }

    fn groups(&self, respondents: &[Respondent]) -> Result<(GroupFile, Vec<Group>)> {
        let file = match &self.config.groups {
            Some(p) => GroupFile::load(p)?,
            None => {
                let langs: BTreeSet<Language> = respondents.iter().map(|r| r.language).collect();
                GroupFile {
                    groups: langs
                        .into_iter()
                        .map(|l| GroupDef { name: l.name().to_string(), languages: vec![l], ..Default::default() })
                        .collect(),
                    ..Default::default()
                }
            }
        };
        let groups = file.resolve(respondents, &self.roster)?;
        Ok((file, groups))
    }

    fn tag_labels(&self) -> BTreeMap<String, String> {
        self.taxonomy.tags().iter().map(|t| (t.code.clone(), t.label())).collect()
    }

    pub fn analyze(&self) -> Result<StageReport> {
        let matrix = ScoreMatrix::read_tsv(&self.layout.scores())?;
        let assignments = tagging::read_assignments(&self.layout.tags())?;
        let topics = self.topics()?;
        let digest = self.manifest()?.short_digest().to_string();
        let dir = self.layout.analysis();
        let tag_labels = self.tag_labels();
        let topic_labels: BTreeMap<String, String> = topics
            .iter()
            .map(|t| (t.id.clone(), t.name(Language::English).unwrap_or(&t.id).to_string()))
            .collect();

        let table = mean_tag_scores(&matrix, &assignments)?;
        let rows: Vec<Vec<String>> = table
            .values
            .iter()
            .map(|((r, t), v)| {
                vec![r.model_id.clone(), r.language.code().to_string(), t.clone(), format!("{v}"), table.counts[&(r.clone(), t.clone())].to_string()]
            })
            .collect();
        report::write_table(&dir.join("tag_scores.tsv"), &digest, &[], &["model", "language", "tag", "mean_score", "topics"], &rows)?;

        let b = biplot(&table)?;
        report::write_biplot(&dir, &b, &tag_labels, &digest)?;

        let respondents = matrix.respondents();
        let (file, groups) = self.groups(&respondents)?;
        let radar_groups: Vec<Group> = if file.radar.is_empty() {
            groups.clone()
        } else {
            file.radar.iter().filter_map(|n| groups.iter().find(|g| &g.name == n).cloned()).collect()
        };
        let radar = radar_aggregate(&table, &radar_groups)?;
        report::write_radar(&dir.join("radar.tsv"), &radar, &tag_labels, &digest)?;

        let by_name: BTreeMap<&str, &Group> = groups.iter().map(|g| (g.name.as_str(), g)).collect();
        let mut forests = serde_json::Map::new();
        for c in &file.comparisons {
            let (g1, g2) = (&by_name[c.group1.as_str()].members, &by_name[c.group2.as_str()].members);
            let a = &self.config.analysis;
            let meta = vec![
                ("kind".to_string(), format!("{:?}", c.kind).to_lowercase()),
                ("group1".to_string(), c.group1.clone()),
                ("group2".to_string(), c.group2.clone()),
                ("seed".to_string(), self.config.seed.to_string()),
            ];
            let (res, labels) = match c.kind {
                ComparisonKind::Person => {
                    let cfg = ForestConfig { top_k: a.person_top_k, resamples: a.resamples, seed: self.config.seed };
                    (person_forest(&matrix, g1, g2, &cfg)?, &topic_labels)
                }
                ComparisonKind::Tag => {
                    let cfg = ForestConfig { top_k: a.tag_top_k, resamples: a.resamples, seed: self.config.seed };
                    (tag_forest(&matrix, &assignments, g1, g2, &cfg)?, &tag_labels)
                }
            };
            report::write_forest(&dir.join(format!("forest_{}.tsv", c.name)), &res, labels, &digest, &meta)?;
            forests.insert(c.name.clone(), serde_json::json!({ "tested": res.tested, "rows": res.rows.len() }));
        }
        self.finish(
            "analyze",
            0,
            serde_json::json!({
                "respondents": respondents.len(),
                "tags": b.tag_loadings.len(),
                "explained_pc1": b.explained_variance[0],
                "explained_pc2": b.explained_variance[1],
                "radar_groups": radar.groups.len(),
                "forests": forests,
            }),
        )
    }

    pub fn report(&self) -> Result<StageReport> {
        let dir = self.layout.analysis();
        let figs = self.layout.figures();
        let digest = self.manifest()?.short_digest().to_string();
        let meta = format!("run {digest}");
        let b = report::read_biplot(&dir)?;
        let labels = report::table_labels(&dir.join("biplot_loadings.tsv"))?;
        write_text(&figs.join("biplot.svg"), &report::render_biplot(&b, &labels, &meta))?;
        let radar_path = dir.join("radar.tsv");
        let r = report::read_radar(&radar_path)?;
        write_text(&figs.join("radar.svg"), &report::render_radar(&r, &report::table_labels(&radar_path)?, &meta))?;
        let mut n = 2;
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|s| s.to_str()).is_some_and(|s| s.starts_with("forest_") && s.ends_with(".tsv")))
            .collect();
        entries.sort();
        for p in entries {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("forest").to_string();
            let t = report::Table::read(&p)?;
            let title = format!(
                "{} vs {}",
                t.meta.get("group1").map(String::as_str).unwrap_or("group 1"),
                t.meta.get("group2").map(String::as_str).unwrap_or("group 2")
            );
            let f = report::read_forest(&p)?;
            write_text(&figs.join(format!("{stem}.svg")), &report::render_forest(&f, &report::table_labels(&p)?, &title, &meta))?;
            n += 1;
        }
        self.finish("report", 0, serde_json::json!({ "figures": n }))
    }

    pub fn run_all(&self) -> Result<Vec<StageReport>> {
        Ok(vec![
            self.select_topics()?,
            self.tag()?,
            self.elicit()?,
            self.validate()?,
            self.filter()?,
            self.analyze()?,
            self.report()?,
        ])
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    filtering::write_file(path, text.as_bytes())
}
