//! Job-title keyword dictionary, keyword vectors, demand categories and
//! per-region demand time series.

mod keywords;
mod kmeans;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use keywords::{build_keyword_dictionary, vectorize, DictionaryParams, KeywordDictionary, TitleVector, Tokenizer, WhitespaceTokenizer};
pub use kmeans::{distinct_count, kmeans_fit, ClusterModel, KMeansParams};

use crate::error::{Error, Result};
use crate::geo::Registry;
use crate::ingest::JobPostingRecord;
use crate::quarter::{quarter_of, QuarterId};

pub const UNCLASSIFIED: &str = "unclassified";

/// Category of a posting: its nearest-centroid cluster label, or
/// [`UNCLASSIFIED`] when no dictionary keyword occurs in the title.
pub fn assign_category<'m>(
    title: &str,
    model: &'m ClusterModel,
    dict: &KeywordDictionary,
    tokenizer: &dyn Tokenizer,
) -> &'m str {
    let v = vectorize(0, title, dict, tokenizer);
    if v.is_vectorizable() {
        model.label(model.predict(&v))
    } else {
        UNCLASSIFIED
    }
}

/// The `n` heaviest keywords of each centroid, for labelling clusters by hand.
pub fn top_keywords<'d>(model: &ClusterModel, dict: &'d KeywordDictionary, n: usize) -> Vec<Vec<&'d str>> {
    model
        .centroids
        .iter()
        .map(|c| {
            let mut dims: Vec<usize> = (0..c.len()).filter(|&d| c[d] > 0.0).collect();
            dims.sort_by(|&a, &b| c[b].total_cmp(&c[a]).then(a.cmp(&b)));
            dims.into_iter().take(n).map(|d| dict.keywords()[d].as_str()).collect()
        })
        .collect()
}

/// Labels each cluster with the category whose anchor keywords carry the most
/// centroid mass. Clusters touching no anchor keep their current label.
pub fn label_by_anchors(model: &mut ClusterModel, dict: &KeywordDictionary, anchors: &BTreeMap<String, Vec<String>>) {
    for (j, c) in model.centroids.iter().enumerate() {
        let best = anchors
            .iter()
            .map(|(cat, kws)| {
                let mass: f64 = kws.iter().filter_map(|k| dict.dim_of(k)).map(|d| c[d]).sum();
                (cat, mass)
            })
            .filter(|(_, m)| *m > 0.0)
            .fold(None::<(&String, f64)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        if let Some((cat, _)) = best {
            model.labels[j] = cat.clone();
        }
    }
}

/// Reads `category<TAB>kw1 kw2 ...` lines.
pub fn read_anchors(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (cat, kws) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, n + 1, "expected category<TAB>keywords"))?;
        out.insert(cat.trim().to_string(), kws.split_whitespace().map(String::from).collect());
    }
    Ok(out)
}

/// Reads a label file: `cluster_id<TAB>label[<TAB>top keywords]`, as written by
/// [`write_label_template`] and edited by hand.
pub fn read_labels(path: impl AsRef<Path>) -> Result<BTreeMap<usize, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') || line.starts_with("cluster_id\t") {
            continue;
        }
        let mut f = line.split('\t');
        let id = f
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse(path, n + 1, "bad cluster id"))?;
        let label = f
            .next()
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::parse(path, n + 1, "missing label"))?;
        out.insert(id, label.to_string());
    }
    Ok(out)
}

pub fn write_label_template(out: &mut impl Write, model: &ClusterModel, dict: &KeywordDictionary) -> std::io::Result<()> {
    writeln!(out, "cluster_id\tlabel\ttop_keywords")?;
    for (j, kws) in top_keywords(model, dict, 10).into_iter().enumerate() {
        writeln!(out, "{j}\t{}\t{}", model.labels[j], kws.join(" "))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Tier,
    City,
    /// Province.
    Region,
}

impl std::str::FromStr for Grouping {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tier" => Ok(Grouping::Tier),
            "city" => Ok(Grouping::City),
            "region" => Ok(Grouping::Region),
            other => Err(Error::InvalidParameter {
                name: "grouping",
                reason: format!("expected tier, city or region, got `{other}`"),
            }),
        }
    }
}

/// Posting counts per `(quarter, group, category)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DemandSeries {
    pub cells: BTreeMap<(QuarterId, String, String), u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SeriesDiagnostics {
    pub unknown_city: u64,
    pub bad_timestamp: u64,
}

impl DemandSeries {
    pub fn total(&self, quarter: QuarterId) -> u64 {
        self.cells.iter().filter(|((q, _, _), _)| *q == quarter).map(|(_, c)| c).sum()
    }

    pub fn quarters(&self) -> BTreeSet<QuarterId> {
        self.cells.keys().map(|(q, _, _)| *q).collect()
    }

    pub fn groups(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|(_, g, _)| g.as_str()).collect()
    }

    pub fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "quarter,group,category,count")?;
        for ((q, g, c), n) in &self.cells {
            writeln!(out, "{q},{g},{c},{n}")?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cells = BTreeMap::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(Error::parse(path, n + 1, "expected quarter,group,category,count"));
            }
            let q = f[0].parse().map_err(|e: Error| Error::parse(path, n + 1, e.to_string()))?;
            let c = f[3].parse().map_err(|_| Error::parse(path, n + 1, "bad count"))?;
            cells.insert((q, f[1].to_string(), f[2].to_string()), c);
        }
        Ok(Self { cells })
    }
}

/// Group key of a posting's working city, or `None` if the city is unknown.
pub fn group_of(registry: &Registry, city: &str, grouping: Grouping) -> Option<String> {
    let place = registry.get(city)?;
    match grouping {
        Grouping::City => registry.prefecture_of(city).map(String::from),
        Grouping::Tier => registry.tier_of(city).map(|t| t.to_string()),
        Grouping::Region => Some(place.province_id.clone()),
    }
}

/// Counts postings per `(quarter, group, category)` given one category per posting.
pub fn demand_series(
    postings: &[JobPostingRecord],
    categories: &[&str],
    registry: &Registry,
    grouping: Grouping,
) -> (DemandSeries, SeriesDiagnostics) {
    assert_eq!(postings.len(), categories.len(), "one category per posting");
    let mut series = DemandSeries::default();
    let mut diag = SeriesDiagnostics::default();
    for (p, &cat) in postings.iter().zip(categories) {
        let Some(group) = group_of(registry, &p.working_city, grouping) else {
            diag.unknown_city += 1;
            continue;
        };
        let Ok(q) = quarter_of(p.publish_timestamp) else {
            diag.bad_timestamp += 1;
            continue;
        };
        *series.cells.entry((q, group, cat.to_string())).or_default() += 1;
    }
    if diag.unknown_city > 0 {
        tracing::warn!(skipped = diag.unknown_city, "postings with unknown working city");
    }
    (series, diag)
}

/// Categorises every posting in parallel, preserving input order.
pub fn categorize_all<'m>(
    postings: &[JobPostingRecord],
    model: &'m ClusterModel,
    dict: &KeywordDictionary,
    tokenizer: &dyn Tokenizer,
) -> Vec<&'m str> {
    postings
        .par_iter()
        .map(|p| assign_category(&p.title, model, dict, tokenizer))
        .collect()
}

/// Share of each category within one `(quarter, group)` cell row.
pub fn category_share(series: &DemandSeries, quarter: QuarterId, group: &str) -> Result<BTreeMap<String, f64>> {
    let row: Vec<(&str, u64)> = series
        .cells
        .iter()
        .filter(|((q, g, _), _)| *q == quarter && g == group)
        .map(|((_, _, c), &n)| (c.as_str(), n))
        .collect();
    let total: u64 = row.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::EmptyGroup {
            quarter: quarter.to_string(),
            group: group.to_string(),
        });
    }
    Ok(row
        .into_iter()
        .map(|(c, n)| (c.to_string(), n as f64 / total as f64))
        .collect())
}
