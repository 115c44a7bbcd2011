//! Query-log and posting parsing, job-query filtering, deduplication and
//! extraction of cross-city flow intentions.
//!
//! Query logs are tab-separated: `timestamp  lat  lon  query_text  clicked_title`
//! (the title may be empty or absent). Postings are tab-separated:
//! `publish_timestamp  working_city  title  description`.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::ops::{Add, AddAssign};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{LatLon, Registry};
use crate::matcher::{resolve_destination, PlaceDictionary};
use crate::quarter::{cst_day, quarter_of, QuarterId};

/// Default filter keywords: "recruitment" and "job hunting".
pub const DEFAULT_JOB_KEYWORDS: [&str; 2] = ["招聘", "求职"];

const PAR_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub timestamp: i64,
    pub location: LatLon,
    pub query_text: String,
    pub clicked_title: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobPostingRecord {
    pub publish_timestamp: i64,
    pub working_city: String,
    pub title: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowIntentRecord {
    pub origin: String,
    pub destination: String,
    pub quarter: QuarterId,
}

/// Ingest counters. Merging is associative and commutative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub lines_read: u64,
    pub malformed: u64,
    pub job_queries: u64,
    pub duplicates: u64,
    pub dropped_no_origin: u64,
    pub dropped_no_destination: u64,
    pub dropped_same_city: u64,
    pub emitted: u64,
}

impl AddAssign for IngestStats {
    fn add_assign(&mut self, o: Self) {
        self.lines_read += o.lines_read;
        self.malformed += o.malformed;
        self.job_queries += o.job_queries;
        self.duplicates += o.duplicates;
        self.dropped_no_origin += o.dropped_no_origin;
        self.dropped_no_destination += o.dropped_no_destination;
        self.dropped_same_city += o.dropped_same_city;
        self.emitted += o.emitted;
    }
}

impl Add for IngestStats {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl IngestStats {
    pub fn to_rows(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("lines_read", self.lines_read),
            ("malformed", self.malformed),
            ("job_queries", self.job_queries),
            ("duplicates", self.duplicates),
            ("dropped_no_origin", self.dropped_no_origin),
            ("dropped_no_destination", self.dropped_no_destination),
            ("dropped_same_city", self.dropped_same_city),
            ("emitted", self.emitted),
        ]
    }
}

fn clean_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

pub fn parse_query_line(line: &str) -> std::result::Result<QueryRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if !(4..=5).contains(&fields.len()) {
        return Err(format!("expected 4 or 5 tab-separated fields, found {}", fields.len()));
    }
    let timestamp: i64 = fields[0].trim().parse().map_err(|_| "bad timestamp")?;
    if timestamp <= 0 {
        return Err("timestamp must be positive".into());
    }
    let lat: f64 = fields[1].trim().parse().map_err(|_| "bad latitude")?;
    let lon: f64 = fields[2].trim().parse().map_err(|_| "bad longitude")?;
    let location = LatLon::new(lat, lon);
    if !location.is_valid() {
        return Err("coordinates out of range".into());
    }
    let clicked_title = fields.get(4).filter(|t| !t.is_empty()).map(|t| t.to_string());
    Ok(QueryRecord {
        timestamp,
        location,
        query_text: fields[3].to_string(),
        clicked_title,
    })
}

pub fn format_query_line(r: &QueryRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}",
        r.timestamp,
        r.location.lat,
        r.location.lon,
        clean_field(&r.query_text),
        r.clicked_title.as_deref().map(clean_field).unwrap_or_default()
    )
}

pub fn parse_posting_line(line: &str) -> std::result::Result<JobPostingRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if !(3..=4).contains(&fields.len()) {
        return Err(format!("expected 3 or 4 tab-separated fields, found {}", fields.len()));
    }
    let publish_timestamp: i64 = fields[0].trim().parse().map_err(|_| "bad timestamp")?;
    if publish_timestamp <= 0 {
        return Err("timestamp must be positive".into());
    }
    let title = fields[2].trim();
    if title.is_empty() {
        return Err("empty title".into());
    }
    Ok(JobPostingRecord {
        publish_timestamp,
        working_city: fields[1].trim().to_string(),
        title: title.to_string(),
        description: fields.get(3).map(|d| d.to_string()).unwrap_or_default(),
    })
}

pub fn format_posting_line(p: &JobPostingRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}",
        p.publish_timestamp,
        p.working_city,
        clean_field(&p.title),
        clean_field(&p.description)
    )
}

fn read_lines<T>(
    path: &Path,
    parse: impl Fn(&str) -> std::result::Result<T, String> + Sync,
) -> Result<(Vec<T>, IngestStats)>
where
    T: Send,
{
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let parsed: Vec<Option<T>> = lines
        .par_iter()
        .map(|&(n, line)| match parse(line) {
            Ok(r) => Some(r),
            Err(msg) => {
                tracing::debug!(path = %path.display(), line = n + 1, %msg, "skipping malformed line");
                None
            }
        })
        .collect();
    let stats = IngestStats {
        lines_read: lines.len() as u64,
        malformed: parsed.iter().filter(|r| r.is_none()).count() as u64,
        ..Default::default()
    };
    Ok((parsed.into_iter().flatten().collect(), stats))
}

/// Reads a query log, skipping and counting malformed lines.
pub fn read_query_log(path: impl AsRef<Path>) -> Result<(Vec<QueryRecord>, IngestStats)> {
    read_lines(path.as_ref(), parse_query_line)
}

/// Reads a posting file, skipping and counting malformed lines.
pub fn read_postings(path: impl AsRef<Path>) -> Result<(Vec<JobPostingRecord>, IngestStats)> {
    read_lines(path.as_ref(), parse_posting_line)
}

pub fn write_query_log<'a>(out: &mut impl Write, records: impl IntoIterator<Item = &'a QueryRecord>) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", format_query_line(r))?;
    }
    Ok(())
}

pub fn write_postings<'a>(
    out: &mut impl Write,
    postings: impl IntoIterator<Item = &'a JobPostingRecord>,
) -> std::io::Result<()> {
    for p in postings {
        writeln!(out, "{}", format_posting_line(p))?;
    }
    Ok(())
}

/// True when any keyword occurs in the query text or the clicked title.
pub fn is_job_query(record: &QueryRecord, keywords: &[impl AsRef<str>]) -> bool {
    keywords.iter().any(|k| {
        let k = k.as_ref();
        record.query_text.contains(k) || record.clicked_title.as_deref().is_some_and(|t| t.contains(k))
    })
}

pub fn filter_job_queries<'k, I>(records: I, keywords: &'k [String]) -> impl Iterator<Item = QueryRecord> + 'k
where
    I: IntoIterator<Item = QueryRecord>,
    I::IntoIter: 'k,
{
    records.into_iter().filter(move |r| is_job_query(r, keywords))
}

/// Drops repeats of `(CST day, query text, clicked title, located city)`,
/// keeping first occurrences in order.
pub fn dedup(records: Vec<QueryRecord>, registry: &Registry) -> Vec<QueryRecord> {
    let cities: Vec<Option<&str>> = records
        .par_iter()
        .map(|r| registry.locate_point(r.location).ok().flatten())
        .collect();
    let mut seen = HashSet::with_capacity(records.len());
    records
        .into_iter()
        .zip(cities)
        .filter(|(r, city)| {
            seen.insert((
                cst_day(r.timestamp),
                r.query_text.clone(),
                r.clicked_title.clone(),
                *city,
            ))
        })
        .map(|(r, _)| r)
        .collect()
}

/// Outcome of resolving a single query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Extraction {
    Intent(FlowIntentRecord),
    NoOrigin,
    NoDestination,
    SameCity,
}

pub fn extract_one(record: &QueryRecord, registry: &Registry, dict: &PlaceDictionary) -> Extraction {
    let Ok(Some(origin)) = registry.locate_point(record.location) else {
        return Extraction::NoOrigin;
    };
    let Ok(quarter) = quarter_of(record.timestamp) else {
        return Extraction::NoOrigin;
    };
    let destination = resolve_destination(&dict.match_places(&record.query_text), origin, registry).or_else(|| {
        let title = record.clicked_title.as_deref()?;
        resolve_destination(&dict.match_places(title), origin, registry)
    });
    match destination {
        None => Extraction::NoDestination,
        Some(d) if d == origin => Extraction::SameCity,
        Some(d) => Extraction::Intent(FlowIntentRecord {
            origin: origin.to_string(),
            destination: d.to_string(),
            quarter,
        }),
    }
}

/// Resolves origin, destination and quarter for every record, in input order.
pub fn extract_flow_intents(
    records: &[QueryRecord],
    registry: &Registry,
    dict: &PlaceDictionary,
) -> (Vec<FlowIntentRecord>, IngestStats) {
    let parts: Vec<(Vec<FlowIntentRecord>, IngestStats)> = records
        .par_chunks(PAR_CHUNK)
        .map(|chunk| {
            let mut out = Vec::with_capacity(chunk.len());
            let mut stats = IngestStats::default();
            for r in chunk {
                match extract_one(r, registry, dict) {
                    Extraction::Intent(i) => {
                        stats.emitted += 1;
                        out.push(i);
                    }
                    Extraction::NoOrigin => stats.dropped_no_origin += 1,
                    Extraction::NoDestination => stats.dropped_no_destination += 1,
                    Extraction::SameCity => stats.dropped_same_city += 1,
                }
            }
            (out, stats)
        })
        .collect();
    let mut stats = IngestStats::default();
    let mut intents = Vec::with_capacity(records.len());
    for (part, s) in parts {
        intents.extend(part);
        stats += s;
    }
    (intents, stats)
}

/// Full per-partition chain: filter, optional dedup, extract.
pub fn process_queries(
    records: Vec<QueryRecord>,
    keywords: &[String],
    dedup_enabled: bool,
    registry: &Registry,
    dict: &PlaceDictionary,
) -> (Vec<FlowIntentRecord>, IngestStats) {
    let jobs: Vec<QueryRecord> = filter_job_queries(records, keywords).collect();
    let mut stats = IngestStats {
        job_queries: jobs.len() as u64,
        ..Default::default()
    };
    let unique = if dedup_enabled { dedup(jobs, registry) } else { jobs };
    stats.duplicates = stats.job_queries - unique.len() as u64;
    let (intents, s) = extract_flow_intents(&unique, registry, dict);
    stats += s;
    (intents, stats)
}

pub fn write_flow_intents(out: &mut impl Write, intents: &[FlowIntentRecord]) -> std::io::Result<()> {
    writeln!(out, "origin\tdestination\tquarter")?;
    for i in intents {
        writeln!(out, "{}\t{}\t{}", i.origin, i.destination, i.quarter)?;
    }
    Ok(())
}

pub fn read_flow_intents(path: impl AsRef<Path>) -> Result<Vec<FlowIntentRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if n == 0 && line.starts_with("origin\t") || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, n + 1, "expected origin, destination, quarter"));
        }
        out.push(FlowIntentRecord {
            origin: fields[0].to_string(),
            destination: fields[1].to_string(),
            quarter: fields[2].parse().map_err(|e: Error| Error::parse(path, n + 1, e.to_string()))?,
        });
    }
    Ok(out)
}
