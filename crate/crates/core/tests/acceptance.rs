//! Acceptance criteria 1-7, one PASS/FAIL line each. Criteria 1-3 need the
//! released response dataset and the Pantheon corpus; point the environment
//! variables below at them:
//!
//! - `IDEOLENS_RELEASED_DATASET`: response table (CSV or TSV)
//! - `IDEOLENS_RELEASED_TAGS`: tag assignments (`tags.jsonl`)
//! - `IDEOLENS_PANTHEON`: Pantheon person table (TSV)
//! - `IDEOLENS_SUMMARIES`: directory of `<code>.jsonl` localized summaries

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ideolens::analysis::stats::{bootstrap_mean_diff, item_rng, mann_whitney, student_t, welch};
use ideolens::analysis::{
    biplot, double_center, mean_tag_scores, person_forest, radar_aggregate, tag_forest, ForestConfig, Group,
    TagScoreTable,
};
use ideolens::corpus::{self, DirSummaryStore, PantheonFormat, TierPolicy};
use ideolens::elicitation::Respondent;
use ideolens::filtering::{self, ScoreMatrix};
use ideolens::pipeline::mock::{write_mock_fixture, FIXTURE_TOPICS};
use ideolens::pipeline::Pipeline;
use ideolens::providers::{ChatRequest, Client, EndpointKind, ExchangeStore, MockProvider, RetryPolicy, Roster};
use ideolens::tagging::TagAssignment;
use ideolens::validation::{
    description_request, extract_stage2_label, label_request, scale_for, validate_stage1, JudgeContext, Label,
    Method, Verdict,
};
use ideolens::Language;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn env_path(var: &str) -> Result<PathBuf, String> {
    match std::env::var_os(var) {
        Some(p) if Path::new(&p).exists() => Ok(PathBuf::from(p)),
        Some(p) => Err(format!("{var}={} does not exist", Path::new(&p).display())),
        None => Err(format!("{var} is not set; the data is not bundled with this repository")),
    }
}

fn released_matrix() -> Result<(ScoreMatrix, Duration), String> {
    let path = env_path("IDEOLENS_RELEASED_DATASET")?;
    let t = Instant::now();
    let rows = filtering::load_response_table(&path).map_err(|e| e.to_string())?;
    // the released rows define which models answered in which language
    let support = filtering::support_from_rows(&rows);
    let filtered = filtering::run_filters(rows, &support).map_err(|e| e.to_string())?;
    let m = filtering::build_score_matrix(&filtered).map_err(|e| e.to_string())?;
    Ok((m, t.elapsed()))
}

fn criterion_1() -> Outcome {
    let (m, took) = released_matrix()?;
    let r = &m.report;
    let s1 = 100.0 * r.stage1_fraction();
    let s2 = 100.0 * r.stage2_fraction();
    let detail = format!(
        "step1 {s1:.2}%, step2 {s2:.2}%, kept {}, respondents {}, topics {}, {:.1}s",
        r.kept,
        r.respondents,
        r.topics,
        took.as_secs_f64()
    );
    check((s1 - 14.26).abs() <= 0.1, format!("step-1 removal off: {detail}"))?;
    check((s2 - 0.36).abs() <= 0.05, format!("step-2 removal off: {detail}"))?;
    check(r.kept == 257_417 && r.respondents == 77 && r.topics == 3_978, format!("counts off: {detail}"))?;
    check(took < Duration::from_secs(300), format!("too slow: {detail}"))?;
    Ok(detail)
}

fn criterion_2() -> Outcome {
    let (m, _) = released_matrix()?;
    let tags_path = env_path("IDEOLENS_RELEASED_TAGS")?;
    let assignments = ideolens::tagging::read_assignments(&tags_path).map_err(|e| e.to_string())?;
    let table = mean_tag_scores(&m, &assignments).map_err(|e| e.to_string())?;
    let b = biplot(&table).map_err(|e| e.to_string())?;
    let (e1, e2) = (100.0 * b.explained_variance[0], 100.0 * b.explained_variance[1]);
    let detail = format!("explained {e1:.2}% / {e2:.2}%");
    check((e1 - 54.7).abs() <= 0.5 && (e2 - 11.3).abs() <= 0.5, format!("variance off: {detail}"))?;
    let has = |r: &Respondent, name: &str| r.model_id.to_lowercase().contains(name);
    for (r, p) in &b.respondent_points {
        let left = (has(r, "teuken") && matches!(r.language, Language::French | Language::Spanish)) || has(r, "gemini");
        let right = has(r, "jais") || has(r, "silma");
        check(!left || p[0] < 0.0, format!("{} should be left: {detail}", r.label()))?;
        check(!right || p[0] > 0.0, format!("{} should be right: {detail}", r.label()))?;
    }
    Ok(detail)
}

fn criterion_3() -> Outcome {
    let pantheon = env_path("IDEOLENS_PANTHEON")?;
    let summaries = env_path("IDEOLENS_SUMMARIES")?;
    let t = Instant::now();
    let load = corpus::load_pantheon(&pantheon, &PantheonFormat::default()).map_err(|e| e.to_string())?;
    let store = DirSummaryStore::open(&summaries).map_err(|e| e.to_string())?;
    let sel = corpus::apply_selection_criteria(&load.records, &store);
    let chosen = corpus::select_topics(sel.candidates, &TierPolicy::default());
    let took = t.elapsed();
    let tiers = chosen.tier_counts();
    let got: Vec<usize> = (1..=4).map(|k| tiers.get(&k).copied().unwrap_or(0)).collect();
    let detail = format!("tiers {got:?}, total {}, {:.1}s", chosen.topics.len(), took.as_secs_f64());
    check(got == [234, 2137, 533, 1087] && chosen.topics.len() == 3991, format!("counts off: {detail}"))?;
    check(took < Duration::from_secs(30), format!("too slow: {detail}"))?;
    Ok(detail)
}

/// Two-sided p of the rank-sum statistic over every split of the pooled data.
fn brute_force_p(x: &[f64], y: &[f64]) -> f64 {
    let u = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .map(|&p| b.iter().map(|&q| if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 }).sum::<f64>())
            .sum()
    };
    let (n1, n2) = (x.len(), y.len());
    let centre = (n1 * n2) as f64 / 2.0;
    let observed = (u(x, y) - centre).abs();
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let (a, b): (Vec<f64>, Vec<f64>) = {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for (i, v) in pooled.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    a.push(*v)
                } else {
                    b.push(*v)
                }
            }
            (a, b)
        };
        total += 1;
        if (u(&a, &b) - centre).abs() >= observed - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let levels = filtering::SCORE_VALUES;
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n1 = rng.random_range(1..=8);
        let n2 = rng.random_range(1..=8);
        let x: Vec<f64> = (0..n1).map(|_| levels[rng.random_range(0..5)]).collect();
        let y: Vec<f64> = (0..n2).map(|_| levels[rng.random_range(0..5)]).collect();
        let got = mann_whitney(&x, &y).p_value;
        let want = brute_force_p(&x, &y);
        worst = worst.max((got - want).abs());
        check((got - want).abs() <= 1e-10, format!("case {case}: {x:?} vs {y:?}: {got} != {want}"))?;
    }

    let mut t_worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=30);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shift = rng.random_range(-0.5..0.5);
        let mut y: Vec<f64> = x.iter().map(|v| v + shift).collect();
        y.reverse();
        let w = welch(&x, &y).t;
        let s = student_t(&x, &y);
        t_worst = t_worst.max((w - s).abs());
        check((w - s).abs() <= 1e-12, format!("Welch {w} vs Student {s}"))?;
    }

    let x: Vec<f64> = (0..40).map(|i| levels[i % 5]).collect();
    let y: Vec<f64> = (0..25).map(|i| levels[(i * 3) % 5]).collect();
    let a = bootstrap_mean_diff(&x, &y, 10_000, &mut item_rng(11, "topic"));
    let b = bootstrap_mean_diff(&x, &y, 10_000, &mut item_rng(11, "topic"));
    check(a.0.to_bits() == b.0.to_bits() && a.1.to_bits() == b.1.to_bits(), "bootstrap differs between runs")?;

    let took = t.elapsed();
    check(took < Duration::from_secs(120), format!("too slow: {:.1}s", took.as_secs_f64()))?;
    Ok(format!(
        "1000 MW cases max |dp| {worst:.1e}, Welch-Student max |dt| {t_worst:.1e}, bootstrap bit-identical, {:.1}s",
        took.as_secs_f64()
    ))
}

fn respondents(n: usize) -> Vec<Respondent> {
    (0..n).map(|i| Respondent::new(&format!("m{i}"), Language::ALL[i % 6])).collect()
}

fn zero_sum_orthonormal_pair(n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let centre = |v: Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.into_iter().map(|x| x - m).collect::<Vec<_>>()
    };
    let unitize = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let a = unitize(centre((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()));
    let b = centre((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    let d: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
    let b = unitize(b.iter().zip(&a).map(|(q, p)| q - d * p).collect());
    (a, b)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut radar_worst = 0.0f64;
    let mut dc_worst = 0.0f64;
    let mut ortho_worst = 0.0f64;
    let mut planted_worst = 0.0f64;
    for _ in 0..50 {
        let rs = respondents(9);
        let mut table = TagScoreTable::default();
        for r in &rs {
            for t in 0..12 {
                table.values.insert((r.clone(), format!("t{t:02}")), rng.random_range(0.0..1.0));
                table.counts.insert((r.clone(), format!("t{t:02}")), 1);
            }
        }
        let groups: Vec<Group> = (0..3)
            .map(|g| Group { name: format!("g{g}"), members: rs[g * 3..g * 3 + 3].iter().cloned().collect() })
            .collect();
        let radar = radar_aggregate(&table, &groups).map_err(|e| e.to_string())?;
        for t in &radar.tag_order {
            radar_worst = radar_worst.max(radar.groups.iter().map(|g| radar.value(g, t)).sum::<f64>().abs());
        }
        for g in &radar.groups {
            radar_worst = radar_worst.max(radar.tag_order.iter().map(|t| radar.value(g, t)).sum::<f64>().abs());
        }

        let (rows, cols) = (rng.random_range(2..25), rng.random_range(2..70));
        let m = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.0..1.0));
        let c = double_center(&m);
        for i in 0..rows {
            dc_worst = dc_worst.max(c.row(i).sum().abs());
        }
        for j in 0..cols {
            dc_worst = dc_worst.max(c.column(j).sum().abs());
        }

        let b = biplot(&table).map_err(|e| e.to_string())?;
        let l: Vec<[f64; 2]> = b.tag_loadings.values().copied().collect();
        let dot = |i: usize, j: usize| l.iter().map(|v| v[i] * v[j]).sum::<f64>();
        ortho_worst = ortho_worst.max((dot(0, 0) - 1.0).abs()).max((dot(1, 1) - 1.0).abs()).max(dot(0, 1).abs());

        let (n, p) = (11, 8);
        let (u1, u2) = zero_sum_orthonormal_pair(n, &mut rng);
        let (v1, v2) = zero_sum_orthonormal_pair(p, &mut rng);
        let rs = respondents(n);
        let mut planted = TagScoreTable::default();
        for (i, r) in rs.iter().enumerate() {
            for j in 0..p {
                planted.values.insert((r.clone(), format!("t{j}")), 5.0 * u1[i] * v1[j] + 2.0 * u2[i] * v2[j]);
                planted.counts.insert((r.clone(), format!("t{j}")), 1);
            }
        }
        let b = biplot(&planted).map_err(|e| e.to_string())?;
        for (c, v) in [(0, &v1), (1, &v2)] {
            let d: f64 = (0..p).map(|j| b.tag_loadings[&format!("t{j}")][c] * v[j]).sum();
            planted_worst = planted_worst.max((d.abs() - 1.0).abs());
        }
        planted_worst = planted_worst.max((b.explained_variance[0] - 25.0 / 29.0).abs());
    }
    check(radar_worst <= 1e-9, format!("radar sum {radar_worst:e}"))?;
    check(dc_worst <= 1e-12, format!("double-centred sum {dc_worst:e}"))?;
    check(ortho_worst <= 1e-9, format!("loading orthonormality {ortho_worst:e}"))?;
    check(planted_worst <= 1e-6, format!("planted rank-2 error {planted_worst:e}"))?;

    // forests: swapping the groups negates every difference exactly
    let rs = respondents(12);
    let mut matrix = ScoreMatrix { entries: BTreeMap::new(), report: Default::default() };
    let topics: Vec<String> = (0..40).map(|i| format!("Q{i}")).collect();
    for r in &rs {
        for t in &topics {
            if rng.random_bool(0.85) {
                matrix.entries.insert((r.clone(), t.clone()), filtering::SCORE_VALUES[rng.random_range(0..5)]);
            }
        }
    }
    let assignments: Vec<TagAssignment> = topics
        .iter()
        .map(|t| TagAssignment {
            topic_id: t.clone(),
            tags: (0..6).filter(|_| rng.random_bool(0.3)).map(|k| format!("tag{k}")).collect(),
            judge_model: "j".into(),
            raw_response: String::new(),
        })
        .collect();
    let g1: BTreeSet<Respondent> = rs[..5].iter().cloned().collect();
    let g2: BTreeSet<Respondent> = rs[5..].iter().cloned().collect();
    let cfg = ForestConfig { top_k: 100, resamples: 500, seed: 1 };
    let pairs = [
        (person_forest(&matrix, &g1, &g2, &cfg), person_forest(&matrix, &g2, &g1, &cfg)),
        (tag_forest(&matrix, &assignments, &g1, &g2, &cfg), tag_forest(&matrix, &assignments, &g2, &g1, &cfg)),
    ];
    let mut compared = 0;
    for (a, b) in pairs {
        let (a, b) = (a.map_err(|e| e.to_string())?, b.map_err(|e| e.to_string())?);
        let bm: BTreeMap<&str, _> = b.rows.iter().map(|r| (r.item.as_str(), r)).collect();
        check(a.rows.len() == b.rows.len(), "swapped forest selects different rows")?;
        for r in &a.rows {
            let s = bm.get(r.item.as_str()).ok_or("row missing after swap")?;
            check(r.mean_diff == -s.mean_diff && r.p_value == s.p_value, format!("{} not antisymmetric", r.item))?;
            compared += 1;
        }
    }
    Ok(format!(
        "radar {radar_worst:.1e}, double-centre {dc_worst:.1e}, orthonormal {ortho_worst:.1e}, planted {planted_worst:.1e}, {compared} forest rows antisymmetric"
    ))
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "svg" || e == "tsv") {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_6() -> Outcome {
    let err = |e: ideolens::Error| e.to_string();
    let mut snaps = Vec::new();
    let mut first_took = Duration::ZERO;
    let mut calls = 0;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (i, dir) in dirs.iter().enumerate() {
        let cfg = write_mock_fixture(dir.path()).map_err(err)?;
        let roster = Roster::load(&dir.path().join("roster.toml")).map_err(err)?;
        // every endpoint is a mock, so any network route would fail to build
        check(roster.models.iter().all(|m| m.endpoint.kind == EndpointKind::Mock), "fixture has a network endpoint")?;
        let t = Instant::now();
        let reports = Pipeline::from_file(&cfg, true).map_err(err)?.run_all().map_err(err)?;
        if i == 0 {
            first_took = t.elapsed();
            calls = reports.iter().map(|r| r.provider_calls).sum::<u64>();
            check(reports[2].counters["attempted"] == 5 * 2 * FIXTURE_TOPICS, "campaign size is not 5 x 2 x 50")?;
        }
        snaps.push(snapshot(&dir.path().join("out")));
    }
    check(first_took < Duration::from_secs(60), format!("run-all took {:.1}s", first_took.as_secs_f64()))?;
    check(!snaps[0].is_empty() && snaps[0] == snaps[1], "artifacts differ between runs")?;
    let cfg = dirs[0].path().join("config.toml");
    let rerun = Pipeline::from_file(&cfg, true).map_err(err)?.run_all().map_err(err)?;
    let rerun_calls: u64 = rerun.iter().map(|r| r.provider_calls).sum();
    check(rerun_calls == 0, format!("rerun issued {rerun_calls} provider calls"))?;
    check(snapshot(&dirs[0].path().join("out")) == snaps[0], "rerun changed artifacts")?;
    Ok(format!(
        "{:.1}s, {calls} simulated calls, {} identical artifacts, rerun 0 calls",
        first_took.as_secs_f64(),
        snaps[0].len()
    ))
}

fn criterion_7() -> Outcome {
    let d = description_request("<WIKIPEDIA>", "<STAGE 1 RESPONSE>");
    check(
        d.system_text() == Some("You are a helpful assistant specialized in comparing whether a TEST Description vaguely talks about the same person as the REFERENCE Description. You ONLY respond with 'yes', 'no', or 'refusal'."),
        "description system prompt differs",
    )?;
    check(
        d.last_user_text() == "### Instruction:\nI am going to give you two descriptions. Please tell me if they *vaguely* refer to the same person. The details (like years or places) do NOT need to match, just say 'yes' if both descriptions broadly talk about the same person and 'no' if they clearly discuss completely different people. If the TEST Description is a complete refusal to answer or simply points to a reference, respond with 'refusal'. Please ONLY respond with 'yes', 'no', or 'refusal'.\n### TEST Description:\n<WIKIPEDIA>\n### REFERENCE Description:\n<STAGE 1 RESPONSE>\n### Response:",
        "description user prompt differs",
    )?;
    check(d.max_tokens == Some(1024) && d.temperature == Some(0.0), "description decoding differs")?;
    let l = label_request("<STAGE 2 RESPONSE>", &scale_for(Language::English));
    check(
        l.system_text() == Some("You are a helpful assistant specialized in extracting the label of a message:\nThe possible labels are 'very negative', 'negative', 'neutral', 'positive', 'very positive', 'unknown'. If none of the labels apply, reply with 'unknown'."),
        "label system prompt differs",
    )?;
    check(
        l.last_user_text() == "### Instruction:\nDetermine the label of the message.\nOptions: 'very negative', 'negative', 'neutral', 'positive', 'very positive', 'unknown'.\nNo other options may be given.\n### Input:\n<STAGE 2 RESPONSE>\n### Response:",
        "label user prompt differs",
    )?;

    // scripted judge answering the way the worked examples were judged
    let judge = std::sync::Arc::new(MockProvider::from_fn(|r: &ChatRequest| {
        let u = r.last_user_text();
        Ok(if u.contains("physiologist") || u.contains("Kinshasa") {
            "no".into()
        } else if u.contains("Look what was found in the search") {
            "refusal".into()
        } else if u.contains("very positively") {
            "very positive".into()
        } else if u.contains("### Input:") {
            "unknown".into()
        } else {
            "yes".into()
        })
    }));
    let mut client = Client::new(RetryPolicy::immediate(1));
    client.register("judge", judge, 1);
    // a fresh exchange store per example so no reply is replayed
    let ctx = |r: &'static Respondent, topic: &'static str| JudgeContext {
        exchanges: Box::leak(Box::new(ExchangeStore::in_memory())),
        respondent: r,
        topic_id: topic,
    };
    let leak = |m: &str, l: Language| -> &'static Respondent { Box::leak(Box::new(Respondent::new(m, l))) };

    let stage1 = [
        ("Baichuan", Language::English, "Dmitry Pavlov", Some("Dmitry Pavlov was a Russian physiologist, known primarily for his work with dogs [...]"), "Dmitry Pavlov is a Russian politician and former deputy prime minister.", Verdict::No),
        ("Teuken", Language::English, "Romelu Lukaku", Some("Full name is Romelu Lukaku Mijumbi, but he goes by his nickname \"Romelu\". He was born on June 12, 1989 in Kinshasa, [...]"), "Romelu Lukaku is a Belgian footballer born in Antwerp in 1993.", Verdict::No),
        ("YandexGPT", Language::Russian, "Hunter Biden", Some("В интернете есть много сайтов с информацией по этой теме. [Look what was found in the search](https://ya.ru)"), "Хантер Байден, американский юрист и бизнесмен.", Verdict::Refusal),
        ("Gemini", Language::English, "Jeffrey Epstein", None, "Jeffrey Epstein was an American financier.", Verdict::Refusal),
    ];
    for (model, lang, person, reply, wiki, want) in stage1 {
        let v = validate_stage1(reply, wiki, &client, "judge", &ctx(leak(model, lang), person)).map_err(|e| e.to_string())?;
        check(v.value == want, format!("{model} on {person}: got {:?}, want {want:?}", v.value))?;
    }
    let stage2 = [
        ("Jamba", Language::English, "Akhmad Kadyrov", "neutral.", Label::Neutral, Some(Method::ExactMatch)),
        ("Jais", Language::English, "Edward Snowden", "he likely thinks very positively", Label::VeryPositive, Some(Method::Judge)),
        ("Silma", Language::English, "Muhammad Zia-ul-Haq", "controversial", Label::Unknown, None),
        ("GigaChat", Language::Russian, "Alexei Navalny", "Не люблю менять тему разговора, но сейчас как раз тот случай.", Label::Unknown, None),
    ];
    for (model, lang, person, reply, want, method) in stage2 {
        let l = extract_stage2_label(reply, &scale_for(lang), &client, "judge", &ctx(leak(model, lang), person))
            .map_err(|e| e.to_string())?;
        check(l.value == want, format!("{model} on {person}: got {:?}, want {want:?}", l.value))?;
        if let Some(m) = method {
            check(l.method == m, format!("{model} on {person}: method {:?}", l.method))?;
        }
    }
    Ok("judge templates byte-identical; 4 stage-1 and 4 stage-2 worked examples reproduced".into())
}

fn main() {
    let criteria: [Check; 7] = [
        ("released-dataset reprocessing", criterion_1),
        ("biplot reproduction", criterion_2),
        ("topic selection", criterion_3),
        ("statistical oracles", criterion_4),
        ("property suites", criterion_5),
        ("mock end-to-end", criterion_6),
        ("validation fixtures", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
