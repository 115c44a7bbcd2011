//! Checkpointed batch pipeline: each stage reads the previous stage's files
//! under `<output>/checkpoints` and the report stage renders `<output>/reports`.

mod config;
mod table;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{PipelineConfig, ReportFormat};
pub use table::{num, Table};

use crate::community::{louvain, Partition};
use crate::demand::{
    build_keyword_dictionary, categorize_all, category_share, demand_series, kmeans_fit, label_by_anchors, read_anchors,
    read_labels, vectorize, write_label_template, ClusterModel, DemandSeries, DictionaryParams, KMeansParams,
    KeywordDictionary, WhitespaceTokenizer,
};
use crate::error::{Error, Result};
use crate::geo::{indicators_by_name, load_indicators, Registry};
use crate::graph::{
    build_graph, build_quarterly_graphs, city_metrics, detect_blackholes_volcanoes, hits, increase_ratio,
    read_edge_list, write_edge_list, CityMetrics, FlowGraph,
};
use crate::ingest::{process_queries, read_flow_intents, read_postings, read_query_log, write_flow_intents, IngestStats};
use crate::matcher::PlaceDictionary;
use crate::quarter::{quarter_of, QuarterId};
use crate::stats::{correlate, CorrelationRow, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Graph,
    Metrics,
    Communities,
    Demand,
    Correlate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Graph,
        Stage::Metrics,
        Stage::Communities,
        Stage::Demand,
        Stage::Correlate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Graph => "graph",
            Stage::Metrics => "metrics",
            Stage::Communities => "communities",
            Stage::Demand => "demand",
            Stage::Correlate => "correlate",
            Stage::Report => "report",
        }
    }

    /// Parses a comma-separated stage list; `all` selects every stage.
    pub fn parse_list(s: &str) -> Result<Vec<Stage>> {
        let mut out = BTreeSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                out.extend(Stage::ALL);
            } else {
                out.insert(part.parse()?);
            }
        }
        Ok(out.into_iter().collect())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidParameter {
                name: "stages",
                reason: format!("unknown stage `{s}`"),
            })
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub mod checkpoint {
    pub const INTENTS: &str = "flow_intents.tsv";
    pub const INGEST_STATS: &str = "ingest_stats.json";
    pub const EDGES: &str = "edges.tsv";
    pub const METRICS: &str = "metrics.json";
    pub const PARTITIONS: &str = "partitions";
    pub const DICTIONARY: &str = "dictionary.tsv";
    pub const MODEL: &str = "kmeans_model.json";
    pub const LABELS: &str = "cluster_labels.tsv";
    pub const SERIES: &str = "demand_series.csv";
    pub const DEMAND_STATS: &str = "demand_stats.json";
    pub const CORRELATIONS: &str = "correlations.json";
}

/// Per-quarter metrics checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterMetrics {
    pub quarter: QuarterId,
    pub hits_iterations: usize,
    pub hits_converged: bool,
    pub degenerate: bool,
    pub cities: Vec<CityMetrics>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandStats {
    pub postings: u64,
    pub malformed: u64,
    pub outside_quarters: u64,
    pub vectorizable: u64,
    pub unclassified: u64,
    pub unknown_city: u64,
    pub bad_timestamp: u64,
}

/// Writes `path` through a sibling temp file and a rename, so readers never see
/// a partial file.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn render(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

fn partition_file(q: QuarterId, gamma: f64) -> String {
    format!("{q}_gamma{gamma}.csv")
}

pub struct Pipeline<'c> {
    config: &'c PipelineConfig,
    registry: OnceLock<Registry>,
}

impl<'c> Pipeline<'c> {
    pub fn new(config: &'c PipelineConfig) -> Self {
        Self {
            config,
            registry: OnceLock::new(),
        }
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.config.output.join("checkpoints")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.config.output.join("reports")
    }

    fn checkpoint(&self, name: &str) -> PathBuf {
        self.checkpoint_dir().join(name)
    }

    /// Path of a checkpoint produced by `stage`, or an error naming that stage.
    fn require(&self, name: &str, stage: Stage) -> Result<PathBuf> {
        let path = self.checkpoint(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingCheckpoint {
                path,
                stage: stage.name(),
            })
        }
    }

    fn registry(&self) -> Result<&Registry> {
        if let Some(r) = self.registry.get() {
            return Ok(r);
        }
        let r = Registry::load(&self.config.registry)?;
        Ok(self.registry.get_or_init(|| r))
    }

    fn wanted(&self, q: QuarterId) -> bool {
        self.config.quarters.is_empty() || self.config.quarters.contains(&q)
    }

    /// Runs the given stages in pipeline order on a pool of `workers` threads.
    pub fn run(&self, stages: &[Stage]) -> Result<()> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .map_err(|e| Error::InvalidParameter {
                name: "workers",
                reason: e.to_string(),
            })?;
        let ordered: BTreeSet<Stage> = stages.iter().copied().collect();
        pool.install(|| {
            for stage in ordered {
                let start = Instant::now();
                tracing::info!(stage = stage.name(), "stage started");
                match stage {
                    Stage::Ingest => self.ingest()?,
                    Stage::Graph => self.graph()?,
                    Stage::Metrics => self.metrics()?,
                    Stage::Communities => self.communities()?,
                    Stage::Demand => self.demand()?,
                    Stage::Correlate => self.correlate()?,
                    Stage::Report => self.report()?,
                }
                tracing::info!(stage = stage.name(), elapsed_ms = start.elapsed().as_millis() as u64, "stage finished");
            }
            Ok(())
        })
    }

    fn ingest(&self) -> Result<()> {
        let registry = self.registry()?;
        let dict = PlaceDictionary::build(registry)?;
        let (records, read_stats) = read_query_log(&self.config.queries)?;
        let (intents, mut stats) = process_queries(records, &self.config.keywords, self.config.dedup, registry, &dict);
        stats += read_stats;
        tracing::info!(
            lines = stats.lines_read,
            job_queries = stats.job_queries,
            duplicates = stats.duplicates,
            intents = stats.emitted,
            "ingest"
        );
        atomic_write(&self.checkpoint(checkpoint::INTENTS), &render(|w| write_flow_intents(w, &intents)))?;
        atomic_write(&self.checkpoint(checkpoint::INGEST_STATS), &serde_json::to_vec_pretty(&stats)?)
    }

    fn graph(&self) -> Result<()> {
        let intents = read_flow_intents(self.require(checkpoint::INTENTS, Stage::Ingest)?)?;
        let kept: Vec<_> = intents.into_iter().filter(|r| self.wanted(r.quarter)).collect();
        let registry = self.registry()?;
        let mut graphs = build_quarterly_graphs(&kept, registry)?;
        for &q in &self.config.quarters {
            if !graphs.contains_key(&q) {
                tracing::warn!(quarter = %q, "no flow intents in configured quarter");
                graphs.insert(q, build_graph(q, &[], registry)?);
            }
        }
        for (q, g) in &graphs {
            tracing::info!(quarter = %q, weight = g.total_weight(), "graph built");
        }
        atomic_write(&self.checkpoint(checkpoint::EDGES), &render(|w| write_edge_list(w, &graphs)))
    }

    fn load_graphs(&self) -> Result<BTreeMap<QuarterId, FlowGraph>> {
        read_edge_list(self.require(checkpoint::EDGES, Stage::Graph)?, self.registry()?)
    }

    fn metrics(&self) -> Result<()> {
        let graphs = self.load_graphs()?;
        let mut out = Vec::new();
        for (q, g) in &graphs {
            let h = hits(g, self.config.hits_tol, self.config.hits_max_iter)?;
            if !h.converged {
                tracing::warn!(quarter = %q, iterations = h.iterations, "HITS did not converge");
            }
            out.push(QuarterMetrics {
                quarter: *q,
                hits_iterations: h.iterations,
                hits_converged: h.converged,
                degenerate: h.degenerate,
                cities: city_metrics(g, &h),
            });
        }
        atomic_write(&self.checkpoint(checkpoint::METRICS), &serde_json::to_vec_pretty(&out)?)
    }

    fn load_metrics(&self) -> Result<Vec<QuarterMetrics>> {
        let path = self.require(checkpoint::METRICS, Stage::Metrics)?;
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&text)?)
    }

    fn communities(&self) -> Result<()> {
        let graphs = self.load_graphs()?;
        let jobs: Vec<(QuarterId, f64)> = graphs
            .keys()
            .flat_map(|&q| self.config.resolutions.iter().map(move |&g| (q, g)))
            .collect();
        let results: Vec<Result<Option<(String, Vec<u8>)>>> = jobs
            .par_iter()
            .map(|&(q, gamma)| {
                let g = &graphs[&q];
                if g.total_weight() == 0.0 {
                    tracing::warn!(quarter = %q, "empty graph, no partition");
                    return Ok(None);
                }
                let p = louvain(g, gamma, self.config.louvain_seed)?;
                tracing::info!(quarter = %q, gamma, clusters = p.cluster_count(), modularity = p.modularity, "partition");
                Ok(Some((partition_file(q, gamma), render(|w| p.write(w)))))
            })
            .collect();
        let dir = self.checkpoint(checkpoint::PARTITIONS);
        for r in results {
            if let Some((name, bytes)) = r? {
                atomic_write(&dir.join(name), &bytes)?;
            }
        }
        Ok(())
    }

    fn demand(&self) -> Result<()> {
        let c = self.config;
        let registry = self.registry()?;
        let (all, read_stats) = read_postings(&c.postings)?;
        let mut stats = DemandStats {
            postings: all.len() as u64,
            malformed: read_stats.malformed,
            ..Default::default()
        };
        let postings: Vec<_> = all
            .into_iter()
            .filter(|p| quarter_of(p.publish_timestamp).map_or(true, |q| self.wanted(q)))
            .collect();
        stats.outside_quarters = stats.postings - postings.len() as u64;

        let stoplist = match &c.stoplist {
            Some(path) => fs::read_to_string(path)
                .map_err(|e| Error::io(path, e))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
            None => BTreeSet::new(),
        };
        let params = DictionaryParams {
            min_freq: c.min_freq,
            top_drop: c.top_drop,
            stoplist,
        };
        let tokenizer = WhitespaceTokenizer;
        let dict = build_keyword_dictionary(postings.iter().map(|p| p.title.as_str()), &tokenizer, &params)?;
        let vectors: Vec<_> = postings
            .par_iter()
            .enumerate()
            .map(|(i, p)| vectorize(i, &p.title, &dict, &tokenizer))
            .filter(|v| v.is_vectorizable())
            .collect();
        stats.vectorizable = vectors.len() as u64;
        let mut model = kmeans_fit(
            &vectors,
            dict.len(),
            &KMeansParams {
                k: c.kmeans_k,
                seed: c.kmeans_seed,
                max_iter: c.kmeans_max_iter,
                tol: c.kmeans_tol,
                restarts: c.kmeans_restarts,
            },
        )?;
        self.label(&mut model, &dict)?;
        tracing::info!(
            keywords = dict.len(),
            k = model.k,
            iterations = model.iterations,
            objective = model.objective(),
            "title clustering"
        );

        let categories = categorize_all(&postings, &model, &dict, &tokenizer);
        stats.unclassified = categories.iter().filter(|c| **c == crate::demand::UNCLASSIFIED).count() as u64;
        let (series, diag) = demand_series(&postings, &categories, registry, c.grouping);
        stats.unknown_city = diag.unknown_city;
        stats.bad_timestamp = diag.bad_timestamp;

        atomic_write(&self.checkpoint(checkpoint::DICTIONARY), &render(|w| dict.write(w)))?;
        atomic_write(&self.checkpoint(checkpoint::MODEL), &serde_json::to_vec_pretty(&model)?)?;
        atomic_write(&self.checkpoint(checkpoint::LABELS), &render(|w| write_label_template(w, &model, &dict)))?;
        atomic_write(&self.checkpoint(checkpoint::SERIES), &render(|w| series.write(w)))?;
        atomic_write(&self.checkpoint(checkpoint::DEMAND_STATS), &serde_json::to_vec_pretty(&stats)?)
    }

    fn label(&self, model: &mut ClusterModel, dict: &KeywordDictionary) -> Result<()> {
        if let Some(path) = &self.config.labels {
            for (id, label) in read_labels(path)? {
                match model.labels.get_mut(id) {
                    Some(l) => *l = label,
                    None => tracing::warn!(cluster = id, "label for a cluster that does not exist"),
                }
            }
        } else if let Some(path) = &self.config.anchors {
            label_by_anchors(model, dict, &read_anchors(path)?);
        }
        Ok(())
    }

    fn correlate(&self) -> Result<()> {
        let metrics = self.load_metrics()?;
        let mut rows = Vec::new();
        match &self.config.indicators {
            None => tracing::warn!("no indicator file configured, correlation report will be empty"),
            Some(path) => {
                let indicators = load_indicators(path)?;
                for (name, values) in indicators_by_name(&indicators) {
                    for qm in &metrics {
                        let joined: Vec<(&CityMetrics, f64)> = qm
                            .cities
                            .iter()
                            .filter_map(|m| values.get(m.city_id.as_str()).map(|&v| (m, v)))
                            .collect();
                        let x: Vec<f64> = joined.iter().map(|(_, v)| *v).collect();
                        for (score, get) in SCORES {
                            let y: Vec<f64> = joined.iter().map(|(m, _)| get(m)).collect();
                            for method in Method::ALL {
                                match correlate(method, &x, &y) {
                                    Ok(result) => rows.push(CorrelationRow {
                                        quarter: qm.quarter.to_string(),
                                        indicator: name.to_string(),
                                        score_name: score.to_string(),
                                        result,
                                    }),
                                    Err(e) => tracing::warn!(quarter = %qm.quarter, indicator = name, score, %method, "skipped: {e}"),
                                }
                            }
                        }
                    }
                }
            }
        }
        atomic_write(&self.checkpoint(checkpoint::CORRELATIONS), &serde_json::to_vec_pretty(&rows)?)
    }

    fn report(&self) -> Result<()> {
        let fmt = self.config.format;
        let ext = fmt.extension();
        let mut outputs: Vec<(String, Table)> = Vec::new();

        let stats: IngestStats = read_json(&self.require(checkpoint::INGEST_STATS, Stage::Ingest)?)?;
        let mut t = Table::new(&["counter", "value"]);
        for (k, v) in stats.to_rows() {
            t.push(vec![json!(k), json!(v)]);
        }
        outputs.push(("ingest_summary".into(), t));

        let metrics = self.load_metrics()?;
        let by_quarter: BTreeMap<QuarterId, &QuarterMetrics> = metrics.iter().map(|m| (m.quarter, m)).collect();
        for qm in &metrics {
            let mut t = Table::new(&[
                "city_id", "inflow", "outflow", "net_inflow", "authority", "hub", "blackhole", "volcano",
            ]);
            for m in &qm.cities {
                t.push(vec![
                    json!(m.city_id),
                    num(m.inflow),
                    num(m.outflow),
                    num(m.net_inflow),
                    num(m.authority),
                    num(m.hub),
                    json!(m.blackhole),
                    json!(m.volcano),
                ]);
            }
            outputs.push((format!("city_metrics_{}", qm.quarter), t));

            let bv = detect_blackholes_volcanoes(&qm.cities, self.config.top_k);
            let mut t = Table::new(&["kind", "rank", "city_id", "surplus"]);
            for (kind, list) in [("blackhole", &bv.blackholes), ("volcano", &bv.volcanoes)] {
                for (rank, (id, s)) in list.iter().enumerate() {
                    t.push(vec![json!(kind), json!(rank + 1), json!(id), num(*s)]);
                }
            }
            outputs.push((format!("blackholes_volcanoes_{}", qm.quarter), t));
        }

        let mut summary = Table::new(&["quarter", "resolution", "clusters", "modularity"]);
        for qm in &metrics {
            for &gamma in &self.config.resolutions {
                let name = partition_file(qm.quarter, gamma);
                let path = self.checkpoint(checkpoint::PARTITIONS).join(&name);
                if !path.exists() {
                    if qm.degenerate {
                        continue;
                    }
                    return Err(Error::MissingCheckpoint {
                        path,
                        stage: Stage::Communities.name(),
                    });
                }
                let p = Partition::read(&path)?;
                summary.push(vec![
                    json!(qm.quarter.to_string()),
                    num(gamma),
                    json!(p.cluster_count()),
                    num(p.modularity),
                ]);
                let mut t = Table::new(&["city_id", "cluster_id"]);
                for (id, c) in p.nodes().iter().zip(p.assignment()) {
                    t.push(vec![json!(id), json!(c)]);
                }
                outputs.push((format!("partition_{}_gamma{gamma}", qm.quarter), t));
            }
        }
        outputs.push(("communities_summary".into(), summary));

        for &(t1, t2) in &self.config.compare {
            let (Some(a), Some(b)) = (by_quarter.get(&t1), by_quarter.get(&t2)) else {
                return Err(Error::InvalidParameter {
                    name: "compare",
                    reason: format!("no metrics for {t1} or {t2}"),
                });
            };
            outputs.push((format!("increase_ratio_{t1}_{t2}"), increase_table(a, b)));
        }

        let series = DemandSeries::read(self.require(checkpoint::SERIES, Stage::Demand)?)?;
        let mut t = Table::new(&["quarter", "group", "category", "count"]);
        for ((q, g, c), n) in &series.cells {
            t.push(vec![json!(q.to_string()), json!(g), json!(c), json!(n)]);
        }
        outputs.push(("demand_series".into(), t));
        let mut t = Table::new(&["quarter", "group", "category", "share"]);
        let cells: BTreeSet<(QuarterId, &str)> = series.cells.keys().map(|(q, g, _)| (*q, g.as_str())).collect();
        for (q, g) in cells {
            for (c, s) in category_share(&series, q, g)? {
                t.push(vec![json!(q.to_string()), json!(g), json!(c), num(s)]);
            }
        }
        outputs.push(("demand_shares".into(), t));
        let dstats: DemandStats = read_json(&self.require(checkpoint::DEMAND_STATS, Stage::Demand)?)?;
        let mut t = Table::new(&["counter", "value"]);
        for (k, v) in serde_json::to_value(dstats)?.as_object().expect("struct").iter() {
            t.push(vec![json!(k), v.clone()]);
        }
        outputs.push(("demand_summary".into(), t));

        let rows: Vec<CorrelationRow> = read_json(&self.require(checkpoint::CORRELATIONS, Stage::Correlate)?)?;
        let mut t = Table::new(&["quarter", "indicator", "score_name", "method", "r", "p", "n"]);
        for r in rows {
            t.push(vec![
                json!(r.quarter),
                json!(r.indicator),
                json!(r.score_name),
                json!(r.result.method.as_str()),
                num(r.result.r),
                num(r.result.p_value),
                json!(r.result.n),
            ]);
        }
        outputs.push(("correlations".into(), t));

        // render everything before touching the report directory
        let rendered: Vec<(PathBuf, String)> = outputs
            .into_iter()
            .map(|(name, t)| (self.report_dir().join(format!("{name}.{ext}")), t.render(fmt)))
            .collect();
        for (path, body) in &rendered {
            atomic_write(path, body.as_bytes())?;
        }
        tracing::info!(files = rendered.len(), dir = %self.report_dir().display(), "reports written");
        Ok(())
    }
}

type Score = (&'static str, fn(&CityMetrics) -> f64);

const SCORES: [Score; 5] = [
    ("inflow", |m| m.inflow),
    ("outflow", |m| m.outflow),
    ("net_inflow", |m| m.net_inflow),
    ("authority", |m| m.authority),
    ("hub", |m| m.hub),
];

fn increase_table(a: &QuarterMetrics, b: &QuarterMetrics) -> Table {
    let mut t = Table::new(&["city_id", "metric", "t1", "t2", "value_t1", "value_t2", "increase_ratio"]);
    let later: BTreeMap<&str, &CityMetrics> = b.cities.iter().map(|m| (m.city_id.as_str(), m)).collect();
    for m1 in &a.cities {
        let Some(m2) = later.get(m1.city_id.as_str()) else {
            continue;
        };
        for (name, get) in SCORES {
            let (v1, v2) = (get(m1), get(m2));
            let ratio = increase_ratio(v1, v2).map_or(Value::Null, num);
            t.push(vec![
                json!(m1.city_id),
                json!(name),
                json!(a.quarter.to_string()),
                json!(b.quarter.to_string()),
                num(v1),
                num(v2),
                ratio,
            ]);
        }
    }
    t
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Loads, validates and runs a pipeline config.
pub fn run(config: &PipelineConfig, stages: &[Stage]) -> Result<()> {
    let problems = config.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    Pipeline::new(config).run(stages)
}
