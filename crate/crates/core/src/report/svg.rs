//! Deterministic SVG figures. Output depends only on the inputs: no
//! timestamps, fixed number formatting, fonts referenced by name.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use sha2::{Digest, Sha256};

use crate::analysis::{language_averages, model_averages, BiplotResult, ForestResult, RadarResult};

const FONT: &str = "DejaVu Sans, Arial, sans-serif";

const PALETTE: [&str; 12] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22",
    "#7f7f7f", "#393b79", "#637939",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Diamond,
    Cross,
    Star,
}

const SHAPES: [Shape; 6] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Diamond, Shape::Cross, Shape::Star];

fn hash_index(name: &str, n: usize) -> usize {
    let d = Sha256::digest(name.as_bytes());
    (u64::from_le_bytes(d[..8].try_into().unwrap()) % n as u64) as usize
}

/// Assigns each name a slot by hash, probing forward on collision. Names are
/// visited in sorted order, so a given set always maps the same way.
pub fn stable_slots(names: &BTreeSet<String>, n: usize) -> BTreeMap<String, usize> {
    let mut taken = vec![false; n];
    let mut out = BTreeMap::new();
    for name in names {
        let mut i = hash_index(name, n);
        if out.len() < n {
            while taken[i] {
                i = (i + 1) % n;
            }
            taken[i] = true;
        }
        out.insert(name.clone(), i);
    }
    out
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn f(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn open(width: u32, height: u32, title: &str, meta: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"{FONT}\">\n<title>{}</title>\n<metadata>{}</metadata>\n<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n",
        escape(title),
        escape(meta)
    )
}

fn marker(out: &mut String, shape: Shape, x: f64, y: f64, r: f64, style: &str) {
    let _ = match shape {
        Shape::Circle => writeln!(out, "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" {style}/>", f(x), f(y), f(r)),
        Shape::Square => writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" {style}/>",
            f(x - r),
            f(y - r),
            f(2.0 * r),
            f(2.0 * r)
        ),
        Shape::Triangle => writeln!(
            out,
            "<polygon points=\"{},{} {},{} {},{}\" {style}/>",
            f(x),
            f(y - r),
            f(x + r),
            f(y + r),
            f(x - r),
            f(y + r)
        ),
        Shape::Diamond => writeln!(
            out,
            "<polygon points=\"{},{} {},{} {},{} {},{}\" {style}/>",
            f(x),
            f(y - r),
            f(x + r),
            f(y),
            f(x),
            f(y + r),
            f(x - r),
            f(y)
        ),
        Shape::Cross => writeln!(
            out,
            "<path d=\"M{} {}L{} {}M{} {}L{} {}\" stroke-width=\"2\" {style}/>",
            f(x - r),
            f(y - r),
            f(x + r),
            f(y + r),
            f(x - r),
            f(y + r),
            f(x + r),
            f(y - r)
        ),
        Shape::Star => {
            let pts: Vec<String> = (0..10)
                .map(|k| {
                    let a = std::f64::consts::PI * k as f64 / 5.0 - std::f64::consts::FRAC_PI_2;
                    let rr = if k % 2 == 0 { r * 1.2 } else { r * 0.5 };
                    format!("{},{}", f(x + rr * a.cos()), f(y + rr * a.sin()))
                })
                .collect();
            writeln!(out, "<polygon points=\"{}\" {style}/>", pts.join(" "))
        }
    };
}

/// PCA biplot: translucent respondent markers (colour by language, shape by
/// model), opaque model averages, language circles and the top tag arrows at
/// unit length with stroke width proportional to the loading norm.
pub fn render_biplot(b: &BiplotResult, labels: &BTreeMap<String, String>, meta: &str) -> String {
    let (w, h) = (1100.0, 800.0);
    let (cx, cy, half) = (550.0, 400.0, 340.0);
    let mut out = open(w as u32, h as u32, "PCA biplot", meta);

    let extent = b
        .respondent_points
        .values()
        .flat_map(|p| [p[0].abs(), p[1].abs()])
        .fold(0.0f64, f64::max);
    let extent = if extent > 0.0 { extent } else { 1.0 };
    // arrows are unit vectors drawn at 85 % of the frame
    let arrow_len = 0.85 * half;
    let sx = |x: f64| cx + x / extent * half;
    let sy = |y: f64| cy - y / extent * half;

    let _ = writeln!(
        out,
        "<line class=\"axis\" x1=\"{}\" y1=\"{cy}\" x2=\"{}\" y2=\"{cy}\" stroke=\"#999\"/>\n<line class=\"axis\" x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\" stroke=\"#999\"/>",
        cx - half,
        cx + half,
        cy - half,
        cy + half
    );
    let _ = writeln!(
        out,
        "<text class=\"axis-label\" x=\"{cx}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">PC1 ({:.1}% of variance)</text>",
        cy + half + 35.0,
        100.0 * b.explained_variance[0]
    );
    let _ = writeln!(
        out,
        "<text class=\"axis-label\" x=\"{}\" y=\"{cy}\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 {} {cy})\">PC2 ({:.1}% of variance)</text>",
        30.0,
        30.0,
        100.0 * b.explained_variance[1]
    );

    let langs: BTreeSet<String> = b.respondent_points.keys().map(|r| r.language.name().to_string()).collect();
    let models: BTreeSet<String> = b.respondent_points.keys().map(|r| r.model_id.clone()).collect();
    let colors = stable_slots(&langs, PALETTE.len());
    let shapes = stable_slots(&models, SHAPES.len());

    let max_norm = b
        .top_tags
        .iter()
        .map(|t| b.tag_loadings[t][0].hypot(b.tag_loadings[t][1]))
        .fold(0.0f64, f64::max);
    for t in &b.top_tags {
        let l = b.tag_loadings[t];
        let norm = l[0].hypot(l[1]);
        if norm == 0.0 {
            continue;
        }
        let (ux, uy) = (l[0] / norm, l[1] / norm);
        let width = 0.5 + 3.0 * norm / max_norm;
        let (x2, y2) = (cx + ux * arrow_len, cy - uy * arrow_len);
        let _ = writeln!(
            out,
            "<line class=\"arrow\" x1=\"{cx}\" y1=\"{cy}\" x2=\"{}\" y2=\"{}\" stroke=\"#444\" stroke-opacity=\"0.6\" stroke-width=\"{}\"/>",
            f(x2),
            f(y2),
            f(width)
        );
        let label = labels.get(t).map(String::as_str).unwrap_or(t);
        let anchor = if ux >= 0.0 { "start" } else { "end" };
        let _ = writeln!(
            out,
            "<text class=\"arrow-label\" x=\"{}\" y=\"{}\" text-anchor=\"{anchor}\" font-size=\"10\" fill=\"#333\">{}</text>",
            f(x2 + 4.0 * ux),
            f(y2 - 4.0 * uy),
            escape(label)
        );
    }

    for (r, p) in &b.respondent_points {
        let color = PALETTE[colors[r.language.name()]];
        let shape = SHAPES[shapes[&r.model_id]];
        let style = format!("class=\"respondent\" fill=\"{color}\" stroke=\"{color}\" fill-opacity=\"0.35\" stroke-opacity=\"0.35\"");
        marker(&mut out, shape, sx(p[0]), sy(p[1]), 5.0, &style);
    }
    for (lang, p) in language_averages(b) {
        let color = PALETTE[colors[lang.name()]];
        let _ = writeln!(
            out,
            "<circle class=\"language-average\" cx=\"{}\" cy=\"{}\" r=\"14\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            f(sx(p[0])),
            f(sy(p[1]))
        );
    }
    for (model, p) in model_averages(b) {
        let shape = SHAPES[shapes[&model]];
        marker(&mut out, shape, sx(p[0]), sy(p[1]), 7.0, "class=\"model-average\" fill=\"black\" stroke=\"black\"");
    }

    let mut y = 40.0;
    let lx = w - 120.0;
    let _ = writeln!(out, "<text x=\"{lx}\" y=\"{}\" font-size=\"12\" font-weight=\"bold\">Language</text>", f(y - 15.0));
    for lang in &langs {
        let color = PALETTE[colors[lang]];
        let _ = writeln!(
            out,
            "<circle class=\"legend\" cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"{color}\"/>\n<text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>",
            f(lx + 5.0),
            f(y),
            f(lx + 15.0),
            f(y + 4.0),
            escape(lang)
        );
        y += 18.0;
    }
    y += 20.0;
    let _ = writeln!(out, "<text x=\"{lx}\" y=\"{}\" font-size=\"12\" font-weight=\"bold\">Model</text>", f(y - 15.0));
    for m in &models {
        marker(&mut out, SHAPES[shapes[m]], lx + 5.0, y, 5.0, "class=\"legend\" fill=\"black\" stroke=\"black\"");
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>", f(lx + 15.0), f(y + 4.0), escape(m));
        y += 18.0;
    }
    out.push_str("</svg>\n");
    out
}

/// Radar chart: one closed curve per group along `tag_order`, with a dotted
/// ring marking zero.
pub fn render_radar(r: &RadarResult, labels: &BTreeMap<String, String>, meta: &str) -> String {
    let (cx, cy, outer) = (450.0, 430.0, 300.0);
    let mut out = open(900, 900, "Radar", meta);
    let vmax = r.values.values().map(|v| v.abs()).fold(0.0f64, f64::max);
    let vmax = if vmax > 0.0 { vmax } else { 1.0 };
    let radius = |v: f64| outer / 2.0 + v / vmax * outer / 2.0;
    let n = r.tag_order.len();
    let angle = |i: usize| 2.0 * std::f64::consts::PI * i as f64 / n as f64 - std::f64::consts::FRAC_PI_2;

    let _ = writeln!(out, "<circle class=\"outer-ring\" cx=\"{cx}\" cy=\"{cy}\" r=\"{outer}\" fill=\"none\" stroke=\"#ccc\"/>");
    let _ = writeln!(
        out,
        "<circle class=\"zero-ring\" cx=\"{cx}\" cy=\"{cy}\" r=\"{}\" fill=\"none\" stroke=\"#555\" stroke-dasharray=\"2 4\"/>",
        f(outer / 2.0)
    );
    for (i, t) in r.tag_order.iter().enumerate() {
        let a = angle(i);
        let (x, y) = (cx + outer * a.cos(), cy + outer * a.sin());
        let _ = writeln!(out, "<line class=\"spoke\" x1=\"{cx}\" y1=\"{cy}\" x2=\"{}\" y2=\"{}\" stroke=\"#eee\"/>", f(x), f(y));
        let label = labels.get(t).map(String::as_str).unwrap_or(t);
        let anchor = if a.cos() > 0.1 {
            "start"
        } else if a.cos() < -0.1 {
            "end"
        } else {
            "middle"
        };
        let _ = writeln!(
            out,
            "<text class=\"tag-label\" x=\"{}\" y=\"{}\" text-anchor=\"{anchor}\" font-size=\"10\">{}</text>",
            f(cx + (outer + 10.0) * a.cos()),
            f(cy + (outer + 10.0) * a.sin() + 3.0),
            escape(label)
        );
    }

    let names: BTreeSet<String> = r.groups.iter().cloned().collect();
    let colors = stable_slots(&names, PALETTE.len());
    for (g, curve) in r.groups.iter().zip(r.curves()) {
        let mut pts: Vec<String> = curve
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (a, rad) = (angle(i), radius(*v));
                format!("{},{}", f(cx + rad * a.cos()), f(cy + rad * a.sin()))
            })
            .collect();
        if let Some(first) = pts.first().cloned() {
            pts.push(first);
        }
        let _ = writeln!(
            out,
            "<polyline class=\"curve\" data-group=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
            escape(g),
            pts.join(" "),
            PALETTE[colors[g]]
        );
    }
    let mut y = 800.0;
    for g in &r.groups {
        let _ = writeln!(
            out,
            "<line class=\"legend\" x1=\"40\" y1=\"{}\" x2=\"70\" y2=\"{}\" stroke=\"{}\" stroke-width=\"3\"/>\n<text x=\"78\" y=\"{}\" font-size=\"12\">{}</text>",
            f(y),
            f(y),
            PALETTE[colors[g]],
            f(y + 4.0),
            escape(g)
        );
        y += 18.0;
    }
    out.push_str("</svg>\n");
    out
}

/// Forest plot: point and whisker per row, a zero line and a red line at
/// the overall mean difference.
pub fn render_forest(res: &ForestResult, labels: &BTreeMap<String, String>, title: &str, meta: &str) -> String {
    let row_h = 22.0;
    let top = 60.0;
    let (left, plot_w) = (320.0, 420.0);
    let height = top + row_h * res.rows.len().max(1) as f64 + 70.0;
    let mut out = open(900, height as u32, title, meta);
    let _ = writeln!(out, "<text x=\"450\" y=\"30\" text-anchor=\"middle\" font-size=\"16\">{}</text>", escape(title));

    let mut lo = res.rows.iter().map(|r| r.ci_lo).fold(0.0f64, f64::min).min(res.overall_mean);
    let mut hi = res.rows.iter().map(|r| r.ci_hi).fold(0.0f64, f64::max).max(res.overall_mean);
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let sx = |v: f64| left + (v - lo) / (hi - lo) * plot_w;
    let bottom = top + row_h * res.rows.len().max(1) as f64;

    let _ = writeln!(
        out,
        "<line class=\"zero\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999\"/>",
        f(sx(0.0)),
        f(top - 10.0),
        f(sx(0.0)),
        f(bottom)
    );
    let _ = writeln!(
        out,
        "<line class=\"reference\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"red\" stroke-width=\"1.5\"/>",
        f(sx(res.overall_mean)),
        f(top - 10.0),
        f(sx(res.overall_mean)),
        f(bottom)
    );
    for (i, row) in res.rows.iter().enumerate() {
        let y = top + row_h * (i as f64 + 0.5);
        let label = labels.get(&row.item).map(String::as_str).unwrap_or(&row.item);
        let _ = writeln!(
            out,
            "<text class=\"row-label\" x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"11\">{}</text>",
            f(left - 10.0),
            f(y + 4.0),
            escape(label)
        );
        let _ = writeln!(
            out,
            "<line class=\"whisker\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
            f(sx(row.ci_lo)),
            f(y),
            f(sx(row.ci_hi)),
            f(y)
        );
        let _ = writeln!(
            out,
            "<circle class=\"point\" cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{}\"/>",
            f(sx(row.mean_diff)),
            f(y),
            if row.mean_diff >= 0.0 { "#1f77b4" } else { "#d62728" }
        );
        let _ = writeln!(
            out,
            "<text class=\"p-value\" x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"#555\">p={:.3}</text>",
            f(left + plot_w + 15.0),
            f(y + 4.0),
            row.p_value
        );
    }
    for v in [lo + pad, 0.0, hi - pad] {
        let _ = writeln!(
            out,
            "<text class=\"tick\" x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
            f(sx(v)),
            f(bottom + 18.0),
            f(v)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">mean difference (group 1 minus group 2)</text>",
        f(left + plot_w / 2.0),
        f(bottom + 40.0)
    );
    out.push_str("</svg>\n");
    out
}
