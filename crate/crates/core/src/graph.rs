//! Quarterly origin-destination graphs and the metrics computed on them:
//! Inflow/Outflow, black holes and volcanoes, HITS Authority/Hub.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Registry;
use crate::ingest::FlowIntentRecord;
use crate::quarter::QuarterId;

pub const DEFAULT_HITS_TOL: f64 = 1e-10;
pub const DEFAULT_HITS_MAX_ITER: usize = 1000;

/// Weighted directed graph over cities; `weight(i, j)` counts intents from `i` to `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGraph {
    quarter: QuarterId,
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    /// Row-major n×n.
    weights: Vec<f64>,
}

impl FlowGraph {
    /// Builds a graph from a dense row-major weight matrix.
    pub fn from_weights(quarter: QuarterId, nodes: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        let n = nodes.len();
        if weights.len() != n * n {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: format!("expected {} entries for {n} nodes, got {}", n * n, weights.len()),
            });
        }
        let mut index = HashMap::with_capacity(n);
        for (i, id) in nodes.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidParameter {
                    name: "nodes",
                    reason: format!("duplicate node `{id}`"),
                });
            }
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: "weights must be finite and non-negative".into(),
            });
        }
        if (0..n).any(|i| weights[i * n + i] != 0.0) {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: "self-loops are not allowed".into(),
            });
        }
        Ok(Self {
            quarter,
            nodes,
            index,
            weights,
        })
    }

    pub fn quarter(&self) -> QuarterId {
        self.quarter
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.nodes.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.nodes.len();
        &self.weights[i * n..(i + 1) * n]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Non-zero edges as `(origin, destination, weight)`, row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.nodes.len();
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(move |(k, &w)| (k / n, k % n, w))
    }

    /// Same weights with node order permuted: new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.nodes.len();
        let nodes = perm.iter().map(|&p| self.nodes[p].clone()).collect();
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                weights[i * n + j] = self.weight(perm[i], perm[j]);
            }
        }
        Self::from_weights(self.quarter, nodes, weights).expect("permutation preserves validity")
    }

    pub fn scaled(&self, c: f64) -> Self {
        let weights = self.weights.iter().map(|w| w * c).collect();
        Self::from_weights(self.quarter, self.nodes.clone(), weights).expect("positive scale preserves validity")
    }
}

/// Counts one quarter's intents into a graph over every prefecture city of the registry.
pub fn build_graph(quarter: QuarterId, records: &[FlowIntentRecord], registry: &Registry) -> Result<FlowGraph> {
    let nodes = registry.prefecture_ids().to_vec();
    let n = nodes.len();
    let mut graph = FlowGraph::from_weights(quarter, nodes, vec![0.0; n * n])?;
    for r in records {
        if r.quarter != quarter {
            return Err(Error::MixedQuarters {
                expected: quarter.to_string(),
                found: r.quarter.to_string(),
            });
        }
        let o = graph.index_of(&r.origin).ok_or_else(|| Error::UnknownCity(r.origin.clone()))?;
        let d = graph
            .index_of(&r.destination)
            .ok_or_else(|| Error::UnknownCity(r.destination.clone()))?;
        if o == d {
            return Err(Error::InvalidParameter {
                name: "records",
                reason: format!("intent from `{}` to itself", r.origin),
            });
        }
        graph.weights[o * n + d] += 1.0;
    }
    Ok(graph)
}

/// Splits intents by quarter and builds one graph per quarter.
pub fn build_quarterly_graphs(records: &[FlowIntentRecord], registry: &Registry) -> Result<BTreeMap<QuarterId, FlowGraph>> {
    let mut by_quarter: BTreeMap<QuarterId, Vec<FlowIntentRecord>> = BTreeMap::new();
    for r in records {
        by_quarter.entry(r.quarter).or_default().push(r.clone());
    }
    by_quarter
        .into_iter()
        .map(|(q, rs)| Ok((q, build_graph(q, &rs, registry)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegreeMetrics {
    pub inflow: f64,
    pub outflow: f64,
    pub net_inflow: f64,
}

/// Inflow is the column sum (flow arriving), Outflow the row sum (flow leaving).
pub fn degree_metrics(graph: &FlowGraph) -> Vec<DegreeMetrics> {
    let n = graph.len();
    let mut inflow = vec![0.0; n];
    let mut outflow = vec![0.0; n];
    for i in 0..n {
        for (j, &w) in graph.row(i).iter().enumerate() {
            outflow[i] += w;
            inflow[j] += w;
        }
    }
    inflow
        .into_iter()
        .zip(outflow)
        .map(|(inflow, outflow)| DegreeMetrics {
            inflow,
            outflow,
            net_inflow: inflow - outflow,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityMetrics {
    pub city_id: String,
    pub inflow: f64,
    pub outflow: f64,
    pub net_inflow: f64,
    pub authority: f64,
    pub hub: f64,
    pub blackhole: bool,
    pub volcano: bool,
}

/// Combines degree metrics and HITS scores per node.
pub fn city_metrics(graph: &FlowGraph, hits: &HitsResult) -> Vec<CityMetrics> {
    degree_metrics(graph)
        .into_iter()
        .enumerate()
        .map(|(i, d)| CityMetrics {
            city_id: graph.nodes()[i].clone(),
            inflow: d.inflow,
            outflow: d.outflow,
            net_inflow: d.net_inflow,
            authority: hits.authority[i],
            hub: hits.hub[i],
            blackhole: d.net_inflow > 0.0,
            volcano: d.net_inflow < 0.0,
        })
        .collect()
}

/// Ranked `(city_id, surplus)` lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlackholesVolcanoes {
    pub blackholes: Vec<(String, f64)>,
    pub volcanoes: Vec<(String, f64)>,
}

/// Black holes have positive net inflow, volcanoes positive net outflow; each list
/// is ranked by magnitude (ties by id) and truncated to `top_k` (0 keeps all).
pub fn detect_blackholes_volcanoes(metrics: &[CityMetrics], top_k: usize) -> BlackholesVolcanoes {
    let rank = |sign: f64| {
        let mut v: Vec<(String, f64)> = metrics
            .iter()
            .map(|m| (m.city_id.clone(), sign * m.net_inflow))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if top_k > 0 {
            v.truncate(top_k);
        }
        v
    };
    BlackholesVolcanoes {
        blackholes: rank(1.0),
        volcanoes: rank(-1.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitsResult {
    pub authority: Vec<f64>,
    pub hub: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the graph has no edges; scores are then uniform.
    pub degenerate: bool,
}

/// Row-stochastic transition matrix; rows without outflow stay zero.
pub fn row_normalize(graph: &FlowGraph) -> Vec<f64> {
    let n = graph.len();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = graph.row(i);
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for j in 0..n {
                p[i * n + j] = row[j] / sum;
            }
        }
    }
    p
}

fn l1_normalize(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// HITS on the row-normalised flow matrix `P`: `A ← norm(Pᵀ H)`, `H ← norm(P A)`,
/// L1-normalised, from a uniform start, until the largest per-entry change is
/// below `tol` or `max_iter` rounds have run.
pub fn hits(graph: &FlowGraph, tol: f64, max_iter: usize) -> Result<HitsResult> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: format!("must be positive, got {tol}"),
        });
    }
    if max_iter == 0 {
        return Err(Error::InvalidParameter {
            name: "max_iter",
            reason: "must be at least 1".into(),
        });
    }
    let n = graph.len();
    let uniform = vec![if n > 0 { 1.0 / n as f64 } else { 0.0 }; n];
    if graph.total_weight() == 0.0 {
        return Ok(HitsResult {
            authority: uniform.clone(),
            hub: uniform,
            iterations: 0,
            converged: true,
            degenerate: true,
        });
    }

    let p = row_normalize(graph);
    let mut authority = uniform.clone();
    let mut hub = uniform;
    let mut next_a = vec![0.0; n];
    let mut next_h = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        next_a.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let h = hub[i];
            if h == 0.0 {
                continue;
            }
            for (a, &pij) in next_a.iter_mut().zip(&p[i * n..(i + 1) * n]) {
                *a += pij * h;
            }
        }
        l1_normalize(&mut next_a);
        for (i, h) in next_h.iter_mut().enumerate() {
            *h = p[i * n..(i + 1) * n].iter().zip(&next_a).map(|(pij, a)| pij * a).sum();
        }
        l1_normalize(&mut next_h);
        let change = max_abs_diff(&next_a, &authority).max(max_abs_diff(&next_h, &hub));
        std::mem::swap(&mut authority, &mut next_a);
        std::mem::swap(&mut hub, &mut next_h);
        if change < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        tracing::warn!(quarter = %graph.quarter(), iterations, "HITS did not converge");
    }
    Ok(HitsResult {
        authority,
        hub,
        iterations,
        converged,
        degenerate: false,
    })
}

/// `(t2 - t1) / t1`.
pub fn increase_ratio(metric_t1: f64, metric_t2: f64) -> Result<f64> {
    if !(metric_t1 > 0.0) || !metric_t1.is_finite() || !metric_t2.is_finite() {
        return Err(Error::UndefinedRatio(metric_t1));
    }
    Ok((metric_t2 - metric_t1) / metric_t1)
}

/// Edge-list checkpoint: `quarter  origin  destination  weight`.
pub fn write_edge_list(out: &mut impl Write, graphs: &BTreeMap<QuarterId, FlowGraph>) -> std::io::Result<()> {
    writeln!(out, "quarter\torigin\tdestination\tweight")?;
    for (q, g) in graphs {
        for (i, j, w) in g.edges() {
            writeln!(out, "{q}\t{}\t{}\t{w}", g.nodes()[i], g.nodes()[j])?;
        }
    }
    Ok(())
}

pub fn read_edge_list(path: impl AsRef<Path>, registry: &Registry) -> Result<BTreeMap<QuarterId, FlowGraph>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let nodes = registry.prefecture_ids().to_vec();
    let n = nodes.len();
    let empty = FlowGraph::from_weights("1970Q1".parse()?, nodes, vec![0.0; n * n])?;
    let mut graphs: BTreeMap<QuarterId, FlowGraph> = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        if k == 0 && line.starts_with("quarter\t") || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::parse(path, k + 1, "expected quarter, origin, destination, weight"));
        }
        let quarter: QuarterId = f[0].parse().map_err(|e: Error| Error::parse(path, k + 1, e.to_string()))?;
        let w: f64 = f[3]
            .parse()
            .map_err(|_| Error::parse(path, k + 1, format!("bad weight `{}`", f[3])))?;
        let g = graphs.entry(quarter).or_insert_with(|| FlowGraph {
            quarter,
            ..empty.clone()
        });
        let i = g.index_of(f[1]).ok_or_else(|| Error::UnknownCity(f[1].to_string()))?;
        let j = g.index_of(f[2]).ok_or_else(|| Error::UnknownCity(f[2].to_string()))?;
        if i == j || !(w >= 0.0) || !w.is_finite() {
            return Err(Error::parse(path, k + 1, "invalid edge"));
        }
        g.weights[i * n + j] = w;
    }
    Ok(graphs)
}
