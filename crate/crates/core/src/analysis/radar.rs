//! Group-level tag profiles and the circular tag ordering for radar charts.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{double_center, Group, TagScoreTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RadarResult {
    pub groups: Vec<String>,
    /// Doubly centered group means, keyed by (group, tag).
    pub values: BTreeMap<(String, String), f64>,
    pub tag_order: Vec<String>,
    /// Tags without a contributing respondent in some group.
    pub dropped_tags: Vec<String>,
}

impl RadarResult {
    pub fn value(&self, group: &str, tag: &str) -> f64 {
        self.values[&(group.to_string(), tag.to_string())]
    }

    /// One row per group, columns in `tag_order`.
    pub fn curves(&self) -> Vec<Vec<f64>> {
        self.groups
            .iter()
            .map(|g| self.tag_order.iter().map(|t| self.value(g, t)).collect())
            .collect()
    }
}

pub fn radar_aggregate(table: &TagScoreTable, groups: &[Group]) -> Result<RadarResult> {
    if groups.is_empty() {
        return Err(Error::Config("radar needs at least one group".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.members.is_empty()) {
        return Err(Error::Config(format!("group `{}` is empty", g.name)));
    }
    for (i, a) in groups.iter().enumerate() {
        for b in &groups[i + 1..] {
            if let Some(r) = a.members.intersection(&b.members).next() {
                return Err(Error::Config(format!("radar groups `{}` and `{}` share {r}", a.name, b.name)));
            }
        }
    }
    let mut tags = Vec::new();
    let mut dropped_tags = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for tag in table.tags() {
        let means: Option<Vec<f64>> = groups
            .iter()
            .map(|g| {
                let vals: Vec<f64> = g.members.iter().filter_map(|r| table.get(r, &tag)).collect();
                (!vals.is_empty()).then(|| super::stats::mean(&vals))
            })
            .collect();
        match means {
            Some(m) => {
                tags.push(tag);
                columns.push(m);
            }
            None => dropped_tags.push(tag),
        }
    }
    if tags.is_empty() {
        return Err(Error::Analysis("no tag is covered by every group".into()));
    }
    let m = DMatrix::from_fn(groups.len(), tags.len(), |i, j| columns[j][i]);
    let centered = double_center(&m);
    let mut values = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        for (j, t) in tags.iter().enumerate() {
            values.insert((g.name.clone(), t.clone()), centered[(i, j)]);
        }
    }
    let rows: Vec<Vec<f64>> = (0..groups.len()).map(|i| centered.row(i).iter().copied().collect()).collect();
    let tag_order = order_tags_smooth(&tags, &rows);
    Ok(RadarResult {
        groups: groups.iter().map(|g| g.name.clone()).collect(),
        values,
        tag_order,
        dropped_tags,
    })
}

/// Sum over groups of squared differences between circularly adjacent tags.
pub fn smoothness(order: &[usize], values: &[Vec<f64>]) -> f64 {
    let n = order.len();
    (0..n).map(|i| dist(values, order[i], order[(i + 1) % n])).sum()
}

fn dist(values: &[Vec<f64>], a: usize, b: usize) -> f64 {
    values.iter().map(|g| (g[a] - g[b]) * (g[a] - g[b])).sum()
}

/// Circular tag order with small [`smoothness`]: nearest-neighbour tours from
/// every start and the sorted order, best one improved by 2-opt. `values` is
/// groups × tags, aligned with `tags`.
pub fn order_tags_smooth(tags: &[String], values: &[Vec<f64>]) -> Vec<String> {
    // work on tags in sorted order so the result ignores input order
    let mut idx: Vec<usize> = (0..tags.len()).collect();
    idx.sort_by(|&a, &b| tags[a].cmp(&tags[b]));
    let vals: Vec<Vec<f64>> = values.iter().map(|g| idx.iter().map(|&i| g[i]).collect()).collect();
    let n = idx.len();
    if n < 3 {
        return idx.iter().map(|&i| tags[i].clone()).collect();
    }
    let d: Vec<Vec<f64>> = (0..n).map(|a| (0..n).map(|b| dist(&vals, a, b)).collect()).collect();
    let len = |t: &[usize]| (0..n).map(|i| d[t[i]][t[(i + 1) % n]]).sum::<f64>();

    let mut best: Vec<usize> = (0..n).collect();
    let mut best_len = len(&best);
    for start in 0..n {
        let mut tour = vec![start];
        let mut used = vec![false; n];
        used[start] = true;
        while tour.len() < n {
            let last = *tour.last().unwrap();
            let next = (0..n)
                .filter(|&j| !used[j])
                .min_by(|&a, &b| d[last][a].total_cmp(&d[last][b]).then(a.cmp(&b)))
                .unwrap();
            used[next] = true;
            tour.push(next);
        }
        let l = len(&tour);
        if l < best_len {
            best = tour;
            best_len = l;
        }
    }

    let mut improved = true;
    while improved {
        improved = false;
        for i in 0..n - 1 {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b, c, e) = (best[i], best[i + 1], best[j], best[(j + 1) % n]);
                if d[a][c] + d[b][e] < d[a][b] + d[c][e] - 1e-12 {
                    best[i + 1..=j].reverse();
                    improved = true;
                }
            }
        }
    }

    // fixed rotation and direction
    let zero = best.iter().position(|&t| t == 0).unwrap();
    best.rotate_left(zero);
    if best[1] > best[n - 1] {
        best[1..].reverse();
    }
    best.into_iter().map(|i| tags[idx[i]].clone()).collect()
}
