//! Modularity and Louvain community detection on flow graphs.
//!
//! Flow graphs are directed; modularity here is computed on the symmetrised
//! weights `S = W + Wᵀ`, so a node's degree is its inflow plus its outflow.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::FlowGraph;

/// Louvain stops once a full level improves modularity by less than this.
pub const LEVEL_EPSILON: f64 = 1e-9;
const MOVE_EPSILON: f64 = 1e-12;
const MAX_PASSES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    nodes: Vec<String>,
    /// Dense cluster id per node, numbered in order of first appearance.
    assignment: Vec<usize>,
    pub resolution: f64,
    pub modularity: f64,
}

impl Partition {
    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn cluster_count(&self) -> usize {
        self.assignment.iter().max().map_or(0, |m| m + 1)
    }

    pub fn cluster_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == id).map(|i| self.assignment[i])
    }

    /// Members of each cluster, by node index.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count()];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "# resolution={} modularity={}", self.resolution, self.modularity)?;
        writeln!(out, "city_id,cluster_id")?;
        for (id, c) in self.nodes.iter().zip(&self.assignment) {
            writeln!(out, "{id},{c}")?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty partition file"))?;
        let mut resolution = None;
        let mut modularity = None;
        for kv in header.trim_start_matches('#').split_whitespace() {
            match kv.split_once('=') {
                Some(("resolution", v)) => resolution = v.parse().ok(),
                Some(("modularity", v)) => modularity = v.parse().ok(),
                _ => {}
            }
        }
        let (Some(resolution), Some(modularity)) = (resolution, modularity) else {
            return Err(Error::parse(path, 1, "header must carry resolution= and modularity="));
        };
        let mut nodes = Vec::new();
        let mut assignment = Vec::new();
        for (n, line) in lines {
            if line == "city_id,cluster_id" || line.is_empty() {
                continue;
            }
            let (id, c) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(path, n + 1, "expected city_id,cluster_id"))?;
            nodes.push(id.to_string());
            assignment.push(c.parse().map_err(|_| Error::parse(path, n + 1, "bad cluster id"))?);
        }
        Ok(Self {
            nodes,
            assignment,
            resolution,
            modularity,
        })
    }
}

/// Renumbers cluster labels densely in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

fn check_resolution(resolution: f64) -> Result<()> {
    if resolution > 0.0 && resolution.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "resolution",
            reason: format!("must be positive, got {resolution}"),
        })
    }
}

/// Modularity of `assignment` (cluster label per node) with null-model weight `resolution`.
pub fn modularity(graph: &FlowGraph, assignment: &[usize], resolution: f64) -> Result<f64> {
    check_resolution(resolution)?;
    let n = graph.len();
    if assignment.len() != n {
        return Err(Error::InvalidParameter {
            name: "assignment",
            reason: format!("covers {} nodes, graph has {n}", assignment.len()),
        });
    }
    let total = graph.total_weight();
    if total == 0.0 {
        return Err(Error::EmptyGraph);
    }
    let two_m = 2.0 * total;
    let labels = canonical_labels(assignment);
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut internal = vec![0.0; k];
    let mut tot = vec![0.0; k];
    for i in 0..n {
        for j in 0..n {
            let w = graph.weight(i, j);
            if w == 0.0 {
                continue;
            }
            // each directed weight appears in S[i][j] and S[j][i]
            tot[labels[i]] += w;
            tot[labels[j]] += w;
            if labels[i] == labels[j] {
                internal[labels[i]] += 2.0 * w;
            }
        }
    }
    let q: f64 = internal
        .iter()
        .zip(&tot)
        .map(|(&in_c, &tot_c)| in_c - resolution * tot_c * tot_c / two_m)
        .sum();
    Ok(q / two_m)
}

/// Undirected weighted graph used across Louvain levels.
#[derive(Debug, Clone)]
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    /// Diagonal of S (intra weight carried by aggregated nodes).
    self_loop: Vec<f64>,
    strength: Vec<f64>,
    two_m: f64,
}

impl Level {
    fn from_flow(graph: &FlowGraph) -> Self {
        let n = graph.len();
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for (i, j, w) in graph.edges() {
            *acc[i].entry(j).or_default() += w;
            *acc[j].entry(i).or_default() += w;
        }
        let adj: Vec<Vec<(usize, f64)>> = acc.into_iter().map(|m| m.into_iter().collect()).collect();
        let strength: Vec<f64> = adj.iter().map(|row| row.iter().map(|(_, w)| w).sum()).collect();
        let two_m = strength.iter().sum();
        Self {
            adj,
            self_loop: vec![0.0; n],
            strength,
            two_m,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Local moving. Returns the community of each node and whether anything moved.
    fn local_moving(&self, resolution: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        let n = self.len();
        let mut community: Vec<usize> = (0..n).collect();
        let mut tot = self.strength.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut links = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut any_move = false;

        for _ in 0..MAX_PASSES {
            let mut moved = false;
            for &i in &order {
                let ki = self.strength[i];
                let old = community[i];
                for &(j, w) in &self.adj[i] {
                    let c = community[j];
                    if links[c] == 0.0 {
                        touched.push(c);
                    }
                    links[c] += w;
                }
                tot[old] -= ki;
                let score = |c: usize, links_c: f64| links_c - resolution * tot[c] * ki / self.two_m;
                let stay = score(old, links[old]);
                touched.sort_unstable();
                touched.dedup();
                let mut best = old;
                let mut best_gain = 0.0;
                for &c in &touched {
                    if c == old {
                        continue;
                    }
                    let gain = score(c, links[c]) - stay;
                    // ascending ids, so near-equal gains keep the smaller id
                    if gain > best_gain + MOVE_EPSILON {
                        best = c;
                        best_gain = gain;
                    }
                }
                tot[best] += ki;
                community[i] = best;
                if best != old {
                    moved = true;
                    any_move = true;
                }
                for &c in &touched {
                    links[c] = 0.0;
                }
                links[old] = 0.0;
                touched.clear();
            }
            if !moved {
                break;
            }
        }
        (community, any_move)
    }

    fn aggregate(&self, labels: &[usize], k: usize) -> Self {
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        let mut self_loop = vec![0.0; k];
        for i in 0..self.len() {
            let ci = labels[i];
            self_loop[ci] += self.self_loop[i];
            for &(j, w) in &self.adj[i] {
                let cj = labels[j];
                if ci == cj {
                    self_loop[ci] += w;
                } else {
                    *acc[ci].entry(cj).or_default() += w;
                }
            }
        }
        let adj: Vec<Vec<(usize, f64)>> = acc.into_iter().map(|m| m.into_iter().collect()).collect();
        let strength: Vec<f64> = adj
            .iter()
            .zip(&self_loop)
            .map(|(row, s)| s + row.iter().map(|(_, w)| w).sum::<f64>())
            .collect();
        Self {
            adj,
            self_loop,
            strength,
            two_m: self.two_m,
        }
    }
}

/// Louvain clustering: local moving in seeded-shuffled order, then aggregation,
/// repeated until a level gains less than [`LEVEL_EPSILON`] modularity.
pub fn louvain(graph: &FlowGraph, resolution: f64, seed: u64) -> Result<Partition> {
    check_resolution(resolution)?;
    if graph.total_weight() == 0.0 {
        return Err(Error::EmptyGraph);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.len();
    let mut membership: Vec<usize> = (0..n).collect();
    let mut best_q = modularity(graph, &membership, resolution)?;
    let mut level = Level::from_flow(graph);

    loop {
        let (local, moved) = level.local_moving(resolution, &mut rng);
        if !moved {
            break;
        }
        let labels = canonical_labels(&local);
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let candidate: Vec<usize> = membership.iter().map(|&m| labels[m]).collect();
        let q = modularity(graph, &candidate, resolution)?;
        if q - best_q < LEVEL_EPSILON {
            if q > best_q {
                membership = candidate;
            }
            break;
        }
        membership = candidate;
        best_q = q;
        level = level.aggregate(&labels, k);
    }

    let assignment = canonical_labels(&membership);
    let modularity = modularity(graph, &assignment, resolution)?;
    Ok(Partition {
        nodes: graph.nodes().to_vec(),
        assignment,
        resolution,
        modularity,
    })
}

/// Adjusted Rand index between two labelings of the same nodes.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same nodes");
    let n = a.len() as f64;
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(n);
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
