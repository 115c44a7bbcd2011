use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::demand::Grouping;
use crate::error::{Error, Result};
use crate::graph::{DEFAULT_HITS_MAX_ITER, DEFAULT_HITS_TOL};
use crate::ingest::DEFAULT_JOB_KEYWORDS;
use crate::quarter::QuarterId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidParameter {
                name: "format",
                reason: format!("expected csv or json, got `{other}`"),
            }),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

/// Pipeline settings, read from a `key = value` file. Relative paths are taken
/// relative to the file's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub registry: PathBuf,
    pub queries: PathBuf,
    pub postings: PathBuf,
    pub indicators: Option<PathBuf>,
    pub output: PathBuf,
    pub keywords: Vec<String>,
    pub dedup: bool,
    /// Quarters to analyse; empty means every quarter present in the data.
    pub quarters: Vec<QuarterId>,
    /// `(t1, t2)` pairs for increase-ratio tables.
    pub compare: Vec<(QuarterId, QuarterId)>,
    pub hits_tol: f64,
    pub hits_max_iter: usize,
    pub resolutions: Vec<f64>,
    pub louvain_seed: u64,
    pub min_freq: u64,
    pub top_drop: usize,
    pub stoplist: Option<PathBuf>,
    pub anchors: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub kmeans_k: usize,
    pub kmeans_seed: u64,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub kmeans_restarts: usize,
    pub grouping: Grouping,
    /// Length of the black hole / volcano rankings; 0 keeps all.
    pub top_k: usize,
    pub format: ReportFormat,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            registry: PathBuf::new(),
            queries: PathBuf::new(),
            postings: PathBuf::new(),
            indicators: None,
            output: PathBuf::from("output"),
            keywords: DEFAULT_JOB_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            dedup: true,
            quarters: Vec::new(),
            compare: Vec::new(),
            hits_tol: DEFAULT_HITS_TOL,
            hits_max_iter: DEFAULT_HITS_MAX_ITER,
            resolutions: vec![1.0],
            louvain_seed: 0,
            min_freq: 1000,
            top_drop: 50,
            stoplist: None,
            anchors: None,
            labels: None,
            kmeans_k: 4,
            kmeans_seed: 0,
            kmeans_max_iter: 100,
            kmeans_tol: 1e-6,
            kmeans_restarts: 10,
            grouping: Grouping::Tier,
            top_k: 0,
            format: ReportFormat::Csv,
            workers: 0,
        }
    }
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad list item `{s}`")))
        .collect()
}

fn one<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("bad value `{v}`"))
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn pairs(v: &str) -> std::result::Result<Vec<(QuarterId, QuarterId)>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|p| {
            let (a, b) = p.split_once(':').ok_or_else(|| format!("expected T1:T2, got `{p}`"))?;
            Ok((one(a.trim())?, one(b.trim())?))
        })
        .collect()
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    /// Parses `key = value` lines; `#` starts a comment line. All problems are
    /// collected into one [`Error::Config`].
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c = Self::default();
        let mut problems = Vec::new();
        let path = |v: &str| base.join(v);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: expected key = value", n + 1));
                continue;
            };
            let (key, v) = (key.trim(), value.trim());
            let opt = |v: &str| (!v.is_empty()).then(|| path(v));
            let r: std::result::Result<(), String> = (|| {
                match key {
                    "registry" => c.registry = path(v),
                    "queries" => c.queries = path(v),
                    "postings" => c.postings = path(v),
                    "indicators" => c.indicators = opt(v),
                    "output" => c.output = path(v),
                    "keywords" => c.keywords = list(v)?,
                    "dedup" => c.dedup = flag(v)?,
                    "quarters" => c.quarters = list(v)?,
                    "compare" => c.compare = pairs(v)?,
                    "hits_tol" => c.hits_tol = one(v)?,
                    "hits_max_iter" => c.hits_max_iter = one(v)?,
                    "resolutions" => c.resolutions = list(v)?,
                    "louvain_seed" => c.louvain_seed = one(v)?,
                    "min_freq" => c.min_freq = one(v)?,
                    "top_drop" => c.top_drop = one(v)?,
                    "stoplist" => c.stoplist = opt(v),
                    "anchors" => c.anchors = opt(v),
                    "labels" => c.labels = opt(v),
                    "kmeans_k" => c.kmeans_k = one(v)?,
                    "kmeans_seed" => c.kmeans_seed = one(v)?,
                    "kmeans_max_iter" => c.kmeans_max_iter = one(v)?,
                    "kmeans_tol" => c.kmeans_tol = one(v)?,
                    "kmeans_restarts" => c.kmeans_restarts = one(v)?,
                    "grouping" => c.grouping = one(v)?,
                    "top_k" => c.top_k = one(v)?,
                    "format" => c.format = one(v)?,
                    "workers" => c.workers = one(v)?,
                    _ => return Err("unknown key".into()),
                }
                Ok(())
            })();
            if let Err(e) = r {
                problems.push(format!("line {}: `{key}`: {e}", n + 1));
            }
        }
        if problems.is_empty() {
            Ok(c)
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Problems that would stop a run; empty when the config is usable.
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut must_exist = |name: &str, path: &Path| {
            if path.as_os_str().is_empty() {
                p.push(format!("{name}: not set"));
            } else if !path.exists() {
                p.push(format!("{name}: {} does not exist", path.display()));
            }
        };
        must_exist("registry", &self.registry);
        must_exist("queries", &self.queries);
        must_exist("postings", &self.postings);
        for (name, path) in [
            ("indicators", &self.indicators),
            ("stoplist", &self.stoplist),
            ("anchors", &self.anchors),
            ("labels", &self.labels),
        ] {
            if let Some(path) = path {
                must_exist(name, path);
            }
        }
        if self.output.as_os_str().is_empty() {
            p.push("output: not set".into());
        }
        if self.keywords.is_empty() {
            p.push("keywords: at least one keyword is required".into());
        }
        if !(self.hits_tol > 0.0 && self.hits_tol.is_finite()) {
            p.push(format!("hits_tol: must be positive, got {}", self.hits_tol));
        }
        if self.hits_max_iter == 0 {
            p.push("hits_max_iter: must be at least 1".into());
        }
        if self.resolutions.is_empty() {
            p.push("resolutions: at least one resolution is required".into());
        }
        if let Some(r) = self.resolutions.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            p.push(format!("resolutions: must be positive, got {r}"));
        }
        if self.min_freq == 0 {
            p.push("min_freq: must be at least 1".into());
        }
        if self.kmeans_k == 0 {
            p.push("kmeans_k: must be at least 1".into());
        }
        if self.kmeans_max_iter == 0 {
            p.push("kmeans_max_iter: must be at least 1".into());
        }
        if self.kmeans_restarts == 0 {
            p.push("kmeans_restarts: must be at least 1".into());
        }
        if !(self.kmeans_tol >= 0.0 && self.kmeans_tol.is_finite()) {
            p.push(format!("kmeans_tol: must be non-negative, got {}", self.kmeans_tol));
        }
        for (a, b) in &self.compare {
            if a == b {
                p.push(format!("compare: {a}:{b} compares a quarter with itself"));
            }
            if !self.quarters.is_empty() {
                for q in [a, b] {
                    if !self.quarters.contains(q) {
                        p.push(format!("compare: {q} is not among the configured quarters"));
                    }
                }
            }
        }
        p
    }
}
