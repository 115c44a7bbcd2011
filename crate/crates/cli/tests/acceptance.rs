//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test fails if
//! any criterion fails. Expected values come from brute-force oracles written
//! here, independent of the library code.
//!
//! Run with `cargo test -p labourflow-cli --test acceptance -- --nocapture`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use labourflow::community::{louvain, modularity};
use labourflow::demand::{kmeans_fit, KMeansParams, TitleVector};
use labourflow::geo::{AdminLevel, City, LatLon, Registry, Tier};
use labourflow::graph::{build_quarterly_graphs, city_metrics, degree_metrics, detect_blackholes_volcanoes, hits, FlowGraph};
use labourflow::ingest::FlowIntentRecord;
use labourflow::matcher::{disambiguate, PlaceDictionary};
use labourflow::quarter::QuarterId;
use labourflow::stats::{kendall, pearson, spearman};
use labourflow::synth::{files, read_ground_truth, GroundTruth, Scenario};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn q(s: &str) -> QuarterId {
    s.parse().unwrap()
}

fn place(id: &str, name: &str, aliases: Vec<String>, province: &str, level: AdminLevel, parent: Option<&str>, at: (f64, f64)) -> City {
    City {
        city_id: id.into(),
        official_name: name.into(),
        aliases,
        province_id: province.into(),
        admin_level: level,
        tier: (level == AdminLevel::PrefectureCity).then_some(Tier::T3),
        centroid: LatLon::new(at.0, at.1),
        polygon: vec![],
        parent_city_id: parent.map(Into::into),
    }
}

fn graph_from(n: usize, w: Vec<f64>) -> FlowGraph {
    FlowGraph::from_weights(q("2020Q1"), (0..n).map(|i| format!("n{i:02}")).collect(), w).unwrap()
}

/// Adjusted Rand index from the pair-counting contingency table.
fn ari(a: &[usize], b: &[usize]) -> f64 {
    let pairs = |c: u64| c * c.saturating_sub(1) / 2;
    let mut cells: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *cells.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index = cells.values().map(|&c| pairs(c)).sum::<u64>() as f64;
    let ra = rows.values().map(|&c| pairs(c)).sum::<u64>() as f64;
    let cb = cols.values().map(|&c| pairs(c)).sum::<u64>() as f64;
    let expected = ra * cb / pairs(a.len() as u64) as f64;
    let max = (ra + cb) / 2.0;
    if max == expected {
        1.0
    } else {
        (index - expected) / (max - expected)
    }
}

// ---------------------------------------------------------------------------
// 1. matching

const ALPHABET: [char; 7] = ['a', 'b', 'c', '北', '京', '阳', 'x'];

fn word(rng: &mut ChaCha8Rng, len: usize, letters: usize) -> String {
    (0..len).map(|_| ALPHABET[rng.random_range(0..letters)]).collect()
}

fn naive_matches(text: &str, surfaces: &BTreeMap<String, BTreeSet<String>>) -> Vec<(usize, usize, String, Vec<String>)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    for (surface, ids) in surfaces {
        let pat: Vec<char> = surface.chars().collect();
        if pat.len() > chars.len() {
            continue;
        }
        for start in 0..=chars.len() - pat.len() {
            if chars[start..start + pat.len()] == pat[..] {
                out.push((start, start + pat.len(), surface.clone(), ids.iter().cloned().collect()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut texts, mut found, mut bad) = (0usize, 0usize, 0usize);
    for _ in 0..50 {
        let mut set = BTreeSet::new();
        while set.len() < 200 {
            let len = rng.random_range(1..=5);
            set.insert(word(&mut rng, len, 6));
        }
        let mut patterns: Vec<String> = set.into_iter().collect();
        patterns.shuffle(&mut rng);
        let mut cities = vec![
            place("p1", &patterns[0], vec![], "p1", AdminLevel::Province, None, (30.0, 110.0)),
            place("p2", &patterns[1], vec![], "p2", AdminLevel::Province, None, (31.0, 111.0)),
        ];
        for (i, name) in patterns[2..].iter().enumerate() {
            let aliases = if rng.random_bool(0.3) {
                vec![patterns[rng.random_range(0..patterns.len())].clone()]
            } else {
                vec![]
            };
            let province = if i % 2 == 0 { "p1" } else { "p2" };
            cities.push(place(&format!("c{i:03}"), name, aliases, province, AdminLevel::PrefectureCity, None, (30.0, 110.0)));
        }
        let mut surfaces: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for c in &cities {
            for n in c.names() {
                surfaces.entry(n.to_string()).or_default().insert(c.city_id.clone());
            }
        }
        let registry = Registry::new(cities).map_err(|e| e.to_string())?;
        let dict = PlaceDictionary::build(&registry).map_err(|e| e.to_string())?;
        for _ in 0..200 {
            let len = rng.random_range(0..80);
            let text = word(&mut rng, len, ALPHABET.len());
            let mut got: Vec<(usize, usize, String, Vec<String>)> = dict
                .match_places(&text)
                .iter()
                .map(|m| {
                    let ids: BTreeSet<String> = m.candidates.iter().cloned().collect();
                    (m.span.0, m.span.1, m.surface.to_string(), ids.into_iter().collect())
                })
                .collect();
            got.sort();
            let want = naive_matches(&text, &surfaces);
            found += want.len();
            if got != want {
                bad += 1;
            }
            texts += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(bad == 0, || format!("{bad} of {texts} texts disagree with the naive scan"))?;
    ensure(secs < 10.0, || format!("took {secs:.2}s"))?;
    Ok(format!("{texts} texts, 200 patterns each, {found} matches, 0 discrepancies, {secs:.2}s"))
}

// ---------------------------------------------------------------------------
// 2. disambiguation

const NAMES: [&str; 16] = [
    "Chaoyang", "Baiyun", "Xinhua", "Heping", "Changning", "Gulou", "Taiping", "Jinshan", "Longhua", "Qingshan", "Nanshan",
    "Beilin", "Hongqiao", "Xishan", "Dongcheng", "Yuhua",
];

fn fresh_name(rng: &mut ChaCha8Rng, used: &mut BTreeSet<&'static str>) -> &'static str {
    loop {
        let n = NAMES[rng.random_range(0..NAMES.len())];
        if used.insert(n) {
            return n;
        }
    }
}

fn random_places(rng: &mut ChaCha8Rng) -> Vec<City> {
    let mut cities: Vec<City> = Vec::new();
    let spot = |rng: &mut ChaCha8Rng, cities: &[City]| {
        if !cities.is_empty() && rng.random_bool(0.15) {
            let c = &cities[rng.random_range(0..cities.len())].centroid;
            (c.lat, c.lon)
        } else {
            (rng.random_range(20.0..45.0), rng.random_range(100.0..125.0))
        }
    };
    for p in 0..4 {
        let pid = format!("p{p}");
        let mut used = BTreeSet::new();
        let alias = |rng: &mut ChaCha8Rng| {
            if rng.random_bool(0.3) {
                vec![NAMES[rng.random_range(0..NAMES.len())].to_string()]
            } else {
                vec![]
            }
        };
        let at = spot(rng, &cities);
        let name = fresh_name(rng, &mut used);
        let a = alias(rng);
        cities.push(place(&pid, name, a, &pid, AdminLevel::Province, None, at));
        for c in 0..3 {
            let cid = format!("{pid}c{c}");
            let at = spot(rng, &cities);
            let name = fresh_name(rng, &mut used);
            let a = alias(rng);
            cities.push(place(&cid, name, a, &pid, AdminLevel::PrefectureCity, None, at));
            for d in 0..rng.random_range(0..=2) {
                let at = spot(rng, &cities);
                let name = fresh_name(rng, &mut used);
                let a = alias(rng);
                cities.push(place(&format!("{cid}d{d}"), name, a, &pid, AdminLevel::District, Some(&cid), at));
            }
        }
    }
    cities
}

fn km(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6371.0 * h.sqrt().asin()
}

/// Winner of the rule sequence: the candidate that beats every other one on the
/// first rule where they differ.
fn rule_oracle(candidates: &[String], origin: &City, by_id: &HashMap<String, City>) -> Option<String> {
    use std::cmp::Ordering;
    let level = |c: &City| match c.admin_level {
        AdminLevel::Province => 2,
        AdminLevel::PrefectureCity => 1,
        AdminLevel::District => 0,
    };
    // Less means `a` is preferred over `b`.
    let prefer = |a: &City, b: &City| -> Ordering {
        let same = |c: &City| c.province_id == origin.province_id;
        same(b)
            .cmp(&same(a))
            .then(level(b).cmp(&level(a)))
            .then(km(origin.centroid, a.centroid).partial_cmp(&km(origin.centroid, b.centroid)).unwrap())
            .then(a.city_id.cmp(&b.city_id))
    };
    let unique: BTreeSet<&String> = candidates.iter().collect();
    let winners: Vec<&String> = unique
        .iter()
        .filter(|a| unique.iter().all(|b| a == &b || prefer(&by_id[a.as_str()], &by_id[b.as_str()]) == Ordering::Less))
        .copied()
        .collect();
    (winners.len() == 1).then(|| winners[0].clone())
}

fn chaoyang() -> Vec<City> {
    vec![
        place("beijing", "Beijing", vec![], "BJ", AdminLevel::PrefectureCity, None, (39.9, 116.4)),
        place("bj-chaoyang", "Chaoyang", vec![], "BJ", AdminLevel::District, Some("beijing"), (39.95, 116.45)),
        place("liaoning", "Liaoning", vec![], "LN", AdminLevel::Province, None, (41.3, 122.6)),
        place("ln-chaoyang", "Chaoyang", vec![], "LN", AdminLevel::PrefectureCity, None, (41.57, 120.45)),
        place("shenyang", "Shenyang", vec![], "LN", AdminLevel::PrefectureCity, None, (41.8, 123.4)),
        place("shanghai", "Shanghai", vec![], "SH", AdminLevel::PrefectureCity, None, (31.2, 121.5)),
    ]
}

/// `Some(description)` when the library and the oracle disagree.
fn disambiguation_case(cities: &[City], surface: &str, origin: &str, expected: Option<&str>) -> Result<Option<String>, String> {
    let by_id: HashMap<String, City> = cities.iter().map(|c| (c.city_id.clone(), c.clone())).collect();
    let candidates: Vec<String> = cities
        .iter()
        .filter(|c| c.names().any(|n| n == surface))
        .map(|c| c.city_id.clone())
        .collect();
    let registry = Registry::new(cities.to_vec()).map_err(|e| e.to_string())?;
    let got = disambiguate(&candidates, origin, &registry).to_string();
    let want = rule_oracle(&candidates, &by_id[origin], &by_id).ok_or("oracle found no unique winner")?;
    Ok((got != want || expected.is_some_and(|e| e != got)).then(|| format!("{surface} from {origin}: got {got}, oracle {want}")))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut cases, mut bad) = (0usize, Vec::new());
    let mut check = |cities: &[City], surface: &str, origin: &str, expected: Option<&str>| -> Result<usize, String> {
        bad.extend(disambiguation_case(cities, surface, origin, expected)?);
        Ok(1)
    };

    let china = chaoyang();
    cases += check(&china, "Chaoyang", "beijing", Some("bj-chaoyang"))?;
    cases += check(&china, "Chaoyang", "shenyang", Some("ln-chaoyang"))?;
    cases += check(&china, "Chaoyang", "shanghai", Some("ln-chaoyang"))?;

    while cases < 1000 {
        let cities = random_places(&mut rng);
        let mut by_surface: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &cities {
            for n in c.names().collect::<BTreeSet<_>>() {
                *by_surface.entry(n).or_default() += 1;
            }
        }
        let ambiguous: Vec<&str> = by_surface.iter().filter(|(_, &k)| k >= 2).map(|(s, _)| *s).collect();
        let origins: Vec<&City> = cities.iter().filter(|c| c.admin_level != AdminLevel::Province).collect();
        if ambiguous.is_empty() {
            continue;
        }
        for _ in 0..20 {
            if cases >= 1000 {
                break;
            }
            let surface = ambiguous[rng.random_range(0..ambiguous.len())];
            let origin = origins[rng.random_range(0..origins.len())].city_id.clone();
            cases += check(&cities, surface, &origin, None)?;
        }
    }
    ensure(bad.is_empty(), || format!("{} of {cases} disagree, first: {}", bad.len(), bad[0]))?;
    Ok(format!("{cases} cases including the Chaoyang district/prefecture pair, 100% agreement"))
}

// ---------------------------------------------------------------------------
// 3. HITS

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn power_iteration(m: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = m.len();
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..200_000 {
        let next = normalized(m.iter().map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect());
        let change = linf(&next, &v);
        v = next;
        if change < 1e-15 {
            return Some(v);
        }
    }
    None
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tol = 1e-10;
    let (mut worst_err, mut worst_res, mut worst_scale) = (0.0f64, 0.0f64, 0.0f64);
    for g in 0..100 {
        let n = rng.random_range(10..=50);
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(0.3) {
                    w[i * n + j] = rng.random_range(1..=20) as f64;
                }
            }
        }
        let mut p = vec![vec![0.0; n]; n];
        for i in 0..n {
            let s: f64 = w[i * n..(i + 1) * n].iter().sum();
            if s > 0.0 {
                for j in 0..n {
                    p[i][j] = w[i * n + j] / s;
                }
            }
        }
        let ptp: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| p[k][i] * p[k][j]).sum()).collect()).collect();
        let ppt: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| p[i][k] * p[j][k]).sum()).collect()).collect();
        let a_ref = power_iteration(&ptp).ok_or(format!("graph {g}: oracle did not converge"))?;
        let h_ref = power_iteration(&ppt).ok_or(format!("graph {g}: oracle did not converge"))?;

        let graph = graph_from(n, w.clone());
        let r = hits(&graph, tol, 1000).map_err(|e| e.to_string())?;
        ensure(r.converged, || format!("graph {g}: HITS did not converge"))?;
        worst_err = worst_err.max(linf(&r.authority, &a_ref)).max(linf(&r.hub, &h_ref));

        let a_next = normalized((0..n).map(|j| (0..n).map(|i| p[i][j] * r.hub[i]).sum()).collect());
        let h_next = normalized((0..n).map(|i| (0..n).map(|j| p[i][j] * r.authority[j]).sum()).collect());
        worst_res = worst_res.max(linf(&a_next, &r.authority)).max(linf(&h_next, &r.hub));

        let c = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled = graph_from(n, w.iter().map(|x| x * c).collect());
        let rs = hits(&scaled, tol, 1000).map_err(|e| e.to_string())?;
        worst_scale = worst_scale.max(linf(&rs.authority, &r.authority)).max(linf(&rs.hub, &r.hub));
    }
    ensure(worst_err <= 1e-8, || format!("max deviation from eigen oracle {worst_err:e}"))?;
    ensure(worst_res < tol, || format!("fixed-point residual {worst_res:e}"))?;
    ensure(worst_scale <= 1e-12, || format!("scale deviation {worst_scale:e}"))?;
    Ok(format!(
        "100 graphs, oracle deviation {worst_err:.1e}, residual {worst_res:.1e}, scale deviation {worst_scale:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 4. modularity

fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for label in 0..=next {
            prefix.push(label);
            grow(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    grow(&mut Vec::new(), n, &mut out);
    out
}

fn modularity_oracle(n: usize, w: &[f64], labels: &[usize], gamma: f64) -> f64 {
    let s = |i: usize, j: usize| w[i * n + j] + w[j * n + i];
    let k: Vec<f64> = (0..n).map(|i| (0..n).map(|j| s(i, j)).sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                q += s(i, j) - gamma * k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut graphs, mut evaluated, mut worst, mut worst_single) = (0, 0usize, 0.0f64, 0.0f64);
    // a single node has no edge without a self-loop, which flow graphs exclude
    for n in 2..=8 {
        let partitions = set_partitions(n);
        for _ in 0..4 {
            let mut w = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    if i != j && rng.random_bool(0.4) {
                        w[i * n + j] = rng.random_range(1..=9) as f64;
                    }
                }
            }
            if w.iter().all(|&x| x == 0.0) {
                w[1] = 1.0;
            }
            let graph = graph_from(n, w.clone());
            for labels in &partitions {
                for gamma in [0.5, 1.0, 2.0] {
                    let got = modularity(&graph, labels, gamma).map_err(|e| e.to_string())?;
                    worst = worst.max((got - modularity_oracle(n, &w, labels, gamma)).abs());
                    evaluated += 1;
                }
            }
            let single = modularity(&graph, &vec![0; n], 1.0).map_err(|e| e.to_string())?;
            worst_single = worst_single.max(single.abs());
            graphs += 1;
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    ensure(worst_single <= 1e-12, || format!("all-in-one partition scored {worst_single:e}"))?;
    Ok(format!(
        "{graphs} graphs of 2..8 nodes, {evaluated} (partition, resolution) pairs, max deviation {worst:.1e}, all-in-one |Q| <= {worst_single:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 5. Louvain

fn clique_pairs(base: usize, size: usize) -> impl Iterator<Item = (usize, usize)> {
    (base..base + size).flat_map(move |i| (base..base + size).filter(move |&j| j != i).map(move |j| (i, j)))
}

fn cliques_of_cliques() -> (usize, Vec<f64>) {
    // 4 groups, each of 2 cliques of 5 nodes
    let n = 40;
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (ci, cj) = (i / 5, j / 5);
            w[i * n + j] = if ci == cj {
                1.0
            } else if ci / 2 == cj / 2 {
                0.1
            } else {
                0.004
            };
        }
    }
    (n, w)
}

fn criterion_5() -> Outcome {
    let mut w = vec![0.0; 64];
    for (i, j) in clique_pairs(0, 4).chain(clique_pairs(4, 4)) {
        w[i * 8 + j] = 1.0;
    }
    w[3 * 8 + 4] = 1.0;
    let p = louvain(&graph_from(8, w), 1.0, 0).map_err(|e| e.to_string())?;
    ensure(p.assignment() == [0, 0, 0, 0, 1, 1, 1, 1], || format!("2x4 cliques split as {:?}", p.assignment()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth: Vec<usize> = (0..40).map(|i| i / 10).collect();
    let mut scores = Vec::new();
    for g in 0..20 {
        let mut w = vec![0.0; 1600];
        for i in 0..40 {
            for j in 0..40 {
                if i != j {
                    let hi = if truth[i] == truth[j] { 10 } else { 2 };
                    w[i * 40 + j] = rng.random_range(0..=hi) as f64;
                }
            }
        }
        let p = louvain(&graph_from(40, w), 1.0, g).map_err(|e| e.to_string())?;
        scores.push(ari(p.assignment(), &truth));
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(min >= 0.95, || format!("planted partition agreement down to {min:.3}"))?;

    let (n, w) = cliques_of_cliques();
    let graph = graph_from(n, w);
    let mut counts = Vec::new();
    for gamma in [0.5, 1.0, 2.0] {
        counts.push(louvain(&graph, gamma, 0).map_err(|e| e.to_string())?.cluster_count());
    }
    ensure(counts.windows(2).all(|c| c[0] <= c[1]), || format!("community counts {counts:?} not monotone"))?;
    Ok(format!(
        "2x4 cliques exact, planted 4x10 min agreement {min:.3} over 20 graphs, counts at resolution 0.5/1/2 = {counts:?}"
    ))
}

// ---------------------------------------------------------------------------
// 6. degree metrics and black holes

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ids: Vec<String> = (0..30).map(|i| format!("c{i:02}")).collect();
    let cities: Vec<City> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| place(id, id, vec![], &format!("p{}", i % 3), AdminLevel::PrefectureCity, None, (30.0, 110.0 + i as f64)))
        .collect();
    let registry = Registry::new(cities).map_err(|e| e.to_string())?;
    let quarters = [q("2020Q1"), q("2020Q2")];
    let records: Vec<FlowIntentRecord> = (0..10_000)
        .map(|_| {
            let o = rng.random_range(0..30);
            let d = (o + rng.random_range(1..30)) % 30;
            FlowIntentRecord {
                origin: ids[o].clone(),
                destination: ids[d].clone(),
                quarter: quarters[rng.random_range(0..2)],
            }
        })
        .collect();

    let mut inflow: HashMap<(QuarterId, &str), u64> = HashMap::new();
    let mut outflow: HashMap<(QuarterId, &str), u64> = HashMap::new();
    let mut edges: HashMap<(QuarterId, &str, &str), u64> = HashMap::new();
    for r in &records {
        *inflow.entry((r.quarter, &r.destination)).or_default() += 1;
        *outflow.entry((r.quarter, &r.origin)).or_default() += 1;
        *edges.entry((r.quarter, &r.origin, &r.destination)).or_default() += 1;
    }

    let graphs = build_quarterly_graphs(&records, &registry).map_err(|e| e.to_string())?;
    ensure(graphs.keys().copied().eq(quarters), || "unexpected quarters".into())?;
    let mut checked = 0;
    for (&quarter, graph) in &graphs {
        let nodes = graph.nodes();
        for (i, a) in nodes.iter().enumerate() {
            for (j, b) in nodes.iter().enumerate() {
                let want = edges.get(&(quarter, a.as_str(), b.as_str())).copied().unwrap_or(0) as f64;
                ensure(graph.weight(i, j) == want, || format!("{quarter} edge {a}->{b}"))?;
            }
        }
        let metrics = degree_metrics(graph);
        let mut net_sum = 0.0;
        for (id, m) in nodes.iter().zip(&metrics) {
            let i = inflow.get(&(quarter, id.as_str())).copied().unwrap_or(0) as f64;
            let o = outflow.get(&(quarter, id.as_str())).copied().unwrap_or(0) as f64;
            ensure(m.inflow == i && m.outflow == o && m.net_inflow == i - o, || format!("{quarter} {id}: {m:?}"))?;
            net_sum += m.net_inflow;
            checked += 1;
        }
        ensure(net_sum == 0.0, || format!("{quarter}: net inflow sums to {net_sum}"))?;

        let h = hits(graph, 1e-10, 1000).map_err(|e| e.to_string())?;
        let cm = city_metrics(graph, &h);
        let ranked = |sign: f64| {
            let mut v: Vec<(String, f64)> = nodes
                .iter()
                .map(|id| {
                    let i = inflow.get(&(quarter, id.as_str())).copied().unwrap_or(0) as f64;
                    let o = outflow.get(&(quarter, id.as_str())).copied().unwrap_or(0) as f64;
                    (id.clone(), sign * (i - o))
                })
                .filter(|(_, s)| *s > 0.0)
                .collect();
            v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            v
        };
        let (holes, volcanoes) = (ranked(1.0), ranked(-1.0));
        let all = detect_blackholes_volcanoes(&cm, 0);
        ensure(all.blackholes == holes && all.volcanoes == volcanoes, || format!("{quarter}: rankings differ"))?;
        let top = detect_blackholes_volcanoes(&cm, 5);
        ensure(top.blackholes[..] == holes[..5.min(holes.len())], || format!("{quarter}: top 5 differs"))?;
    }
    Ok(format!("10000 records, {checked} city-quarters, edges and rankings equal the oracles, net inflow sums to 0"))
}

// ---------------------------------------------------------------------------
// 7. correlations

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|a| a * a).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

fn ranks_oracle(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|a| {
            let below = x.iter().filter(|b| *b < a).count() as f64;
            let equal = x.iter().filter(|b| *b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided Student t tail from the closed-form finite series in the angle
/// `atan(t / sqrt(dof))`.
fn t_two_sided(t: f64, dof: usize) -> f64 {
    let theta = (t.abs() / (dof as f64).sqrt()).atan();
    let (s, c) = theta.sin_cos();
    let inside = if dof.is_multiple_of(2) {
        let (mut term, mut sum) = (1.0, 1.0);
        for k in (2..=dof.saturating_sub(2)).step_by(2) {
            term *= (k as f64 - 1.0) / k as f64 * c * c;
            sum += term;
        }
        s * sum
    } else if dof == 1 {
        2.0 * theta / std::f64::consts::PI
    } else {
        let (mut term, mut sum) = (c, c);
        for k in (3..=dof - 2).step_by(2) {
            term *= (k as f64 - 1.0) / k as f64 * c * c;
            sum += term;
        }
        2.0 / std::f64::consts::PI * (theta + s * sum)
    };
    (1.0 - inside).max(0.0)
}

fn r_p_oracle(r: f64, n: usize) -> f64 {
    if 1.0 - r * r <= 0.0 {
        return 0.0;
    }
    let dof = n - 2;
    t_two_sided(r * (dof as f64 / (1.0 - r * r)).sqrt(), dof)
}

/// Two-sided standard normal tail by Simpson integration of the density.
fn normal_two_sided(z: f64) -> f64 {
    let z = z.abs();
    let steps = 2 * ((z * 2000.0).ceil() as usize).max(1);
    let h = z / steps as f64;
    let phi = |u: f64| (-u * u / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = phi(0.0) + phi(z);
    for i in 1..steps {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * phi(i as f64 * h);
    }
    (2.0 * (0.5 - acc * h / 3.0)).max(0.0)
}

fn kendall_oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len();
    let (mut conc, mut disc, mut only_x, mut only_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = (x[i] - x[j]).signum() * (x[i] != x[j]) as i32 as f64;
            let dy = (y[i] - y[j]).signum() * (y[i] != y[j]) as i32 as f64;
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => only_x += 1,
                (false, true) => only_y += 1,
                _ if dx == dy => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let s = (conc - disc) as f64;
    let tau = s / (((conc + disc + only_y) as f64) * ((conc + disc + only_x) as f64)).sqrt();

    let groups = |v: &[f64]| -> Vec<f64> {
        let mut m: BTreeMap<u64, f64> = BTreeMap::new();
        for a in v {
            *m.entry(a.to_bits()).or_default() += 1.0;
        }
        m.into_values().collect()
    };
    let (tx, ty) = (groups(x), groups(y));
    let nf = n as f64;
    let sum = |g: &[f64], f: fn(f64) -> f64| g.iter().map(|&t| f(t)).sum::<f64>();
    let a = |t: f64| t * (t - 1.0) * (2.0 * t + 5.0);
    let b = |t: f64| t * (t - 1.0);
    let c = |t: f64| t * (t - 1.0) * (t - 2.0);
    let var = (a(nf) - sum(&tx, a) - sum(&ty, a)) / 18.0
        + sum(&tx, b) * sum(&ty, b) / (2.0 * nf * (nf - 1.0))
        + sum(&tx, c) * sum(&ty, c) / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    let p = if var > 0.0 { normal_two_sided(s / var.sqrt()) } else { 1.0 };
    (tau, p)
}

fn sample(rng: &mut ChaCha8Rng, kind: usize) -> (Vec<f64>, Vec<f64>) {
    loop {
        let n = rng.random_range(5..=80);
        let x: Vec<f64> = (0..n)
            .map(|_| match kind {
                0 | 1 => rng.random_range(0.0..10.0),
                _ => rng.random_range(0..5) as f64,
            })
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&a| match kind {
                0 => 0.7 * a + rng.random_range(-2.0..2.0),
                1 => rng.random_range(-5.0..5.0),
                2 => a + rng.random_range(0..3) as f64,
                _ => rng.random_range(0..4) as f64,
            })
            .collect();
        let varies = |v: &[f64]| v.iter().any(|a| *a != v[0]);
        if varies(&x) && varies(&y) {
            return (x, y);
        }
    }
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_r, mut worst_p) = (0.0f64, 0.0f64);
    for i in 0..200 {
        let (x, y) = sample(&mut rng, i % 4);
        let n = x.len();
        let err = |e: labourflow::Error| e.to_string();

        let p = pearson(&x, &y).map_err(err)?;
        let r = pearson_oracle(&x, &y);
        worst_r = worst_r.max((p.r - r).abs());
        worst_p = worst_p.max((p.p_value - r_p_oracle(r, n)).abs());

        let s = spearman(&x, &y).map_err(err)?;
        let rs = pearson_oracle(&ranks_oracle(&x), &ranks_oracle(&y));
        worst_r = worst_r.max((s.r - rs).abs());
        worst_p = worst_p.max((s.p_value - r_p_oracle(rs, n)).abs());

        let k = kendall(&x, &y).map_err(err)?;
        let (tau, kp) = kendall_oracle(&x, &y);
        worst_r = worst_r.max((k.r - tau).abs());
        worst_p = worst_p.max((k.p_value - kp).abs());
    }
    let example = kendall(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).map_err(|e| e.to_string())?.r;
    ensure(worst_r <= 1e-12, || format!("coefficient deviation {worst_r:e}"))?;
    ensure(worst_p <= 1e-9, || format!("p-value deviation {worst_p:e}"))?;
    ensure(example == 2.0 / 3.0, || format!("tau example gave {example:?}"))?;
    Ok(format!(
        "200 samples x 3 methods, coefficient deviation {worst_r:.1e}, p-value deviation {worst_p:.1e}, tau example = 2/3 exactly"
    ))
}

// ---------------------------------------------------------------------------
// 8. k-means

fn dense_vectors(points: &[Vec<f64>]) -> Vec<TitleVector> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| TitleVector {
            posting_id: i,
            entries: p.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect(),
        })
        .collect()
}

fn sse(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = points[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..dim).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
        total += members.iter().map(|p| p.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum::<f64>();
    }
    total
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let err = |e: labourflow::Error| e.to_string();

    let mut steps = 0;
    for run in 0..30 {
        let dim = 6;
        let points: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                let mut p = vec![0.0; dim];
                for _ in 0..rng.random_range(1..=3) {
                    p[rng.random_range(0..dim)] += rng.random_range(0.1..1.0);
                }
                p
            })
            .collect();
        let params = KMeansParams {
            k: 2 + run % 5,
            seed: run as u64,
            max_iter: 100,
            tol: 0.0,
            ..Default::default()
        };
        let model = kmeans_fit(&dense_vectors(&points), dim, &params).map_err(err)?;
        for w in model.objective_history.windows(2) {
            ensure(w[1] <= w[0] * (1.0 + 1e-12), || format!("run {run}: objective rose from {} to {}", w[0], w[1]))?;
            steps += 1;
        }
    }

    let mut worst_gap = 0.0f64;
    for inst in 0..100 {
        let n = rng.random_range(4..=12);
        let dim = rng.random_range(1..=3);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let best = (0u32..1 << (n - 1))
            .map(|mask| {
                let labels: Vec<usize> = (0..n).map(|i| (mask >> i & 1) as usize).collect();
                sse(&points, &labels, 2)
            })
            .fold(f64::INFINITY, f64::min);
        let params = KMeansParams {
            k: 2,
            seed: inst,
            max_iter: 100,
            tol: 0.0,
            ..Default::default()
        };
        let vectors = dense_vectors(&points);
        let model = kmeans_fit(&vectors, dim, &params).map_err(err)?;
        let labels: Vec<usize> = vectors.iter().map(|v| model.predict(v)).collect();
        let gap = ((model.objective() - best) / best).abs().max(((sse(&points, &labels, 2) - best) / best).abs());
        worst_gap = worst_gap.max(gap);
    }
    ensure(worst_gap <= 1e-9, || format!("relative gap to the exhaustive optimum {worst_gap:e}"))?;

    let points: Vec<Vec<f64>> = (0..5000).map(|_| (0..8).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let vectors = dense_vectors(&points);
    let params = KMeansParams {
        k: 5,
        seed: 42,
        ..Default::default()
    };
    let fit = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| kmeans_fit(&vectors, 8, &params))
    };
    let (a, b, c) = (fit(1).map_err(err)?, fit(4).map_err(err)?, fit(4).map_err(err)?);
    let bits = |m: &labourflow::demand::ClusterModel| -> Vec<u64> {
        m.centroids.iter().flatten().chain(&m.objective_history).map(|x| x.to_bits()).collect()
    };
    ensure(bits(&a) == bits(&b) && bits(&b) == bits(&c) && a == b, || "refits differ".into())?;
    Ok(format!(
        "{steps} Lloyd steps non-increasing, 100 exhaustive 2-partition checks (gap {worst_gap:.1e}), identical refits on 1 and 4 threads"
    ))
}

// ---------------------------------------------------------------------------
// 9 and 10. end to end through the binary

fn labourflow(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_labourflow"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("labourflow {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Rows of a CSV report as column-name maps.
fn read_csv(path: &Path) -> Result<Vec<HashMap<String, String>>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap_or_default().split(',').map(String::from).collect();
    Ok(lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect())
        .collect())
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

struct Workspace {
    _dir: tempfile::TempDir,
    data: PathBuf,
    first: PathBuf,
    run_secs: f64,
}

fn end_to_end() -> Result<Workspace, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("scenario");
    labourflow(&["generate", "--output", data.to_str().unwrap()])?;
    let first = dir.path().join("run-a");
    let started = Instant::now();
    labourflow(&[
        "run",
        "--config",
        data.join(files::CONFIG).to_str().unwrap(),
        "--output",
        first.to_str().unwrap(),
    ])?;
    Ok(Workspace {
        run_secs: started.elapsed().as_secs_f64(),
        _dir: dir,
        data,
        first,
    })
}

fn criterion_9(ws: &Workspace) -> Outcome {
    let scenario = Scenario::from_json(&fs::read_to_string(ws.data.join(files::SCENARIO)).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let truth = read_ground_truth(ws.data.join(files::GROUND_TRUTH)).map_err(|e| e.to_string())?;
    let reports = ws.first.join("reports");
    let registry = labourflow::geo::load_registry(ws.data.join(files::REGISTRY)).map_err(|e| e.to_string())?;

    let mut planted_holes = BTreeMap::new();
    let mut communities = BTreeMap::new();
    let mut flows: HashMap<(QuarterId, String, bool), f64> = HashMap::new();
    let mut totals = None;
    for t in &truth {
        match t {
            GroundTruth::Community { city_id, community } => {
                communities.insert(city_id.clone(), *community);
            }
            GroundTruth::Blackhole { city_id, surplus } => {
                planted_holes.insert(city_id.clone(), *surplus as f64);
            }
            GroundTruth::Flow {
                quarter,
                origin,
                destination,
                count,
            } => {
                *flows.entry((*quarter, destination.clone(), true)).or_default() += *count as f64;
                *flows.entry((*quarter, origin.clone(), false)).or_default() += *count as f64;
            }
            GroundTruth::Totals(x) => totals = Some(*x),
            _ => {}
        }
    }
    let totals = totals.ok_or("ground truth has no totals")?;
    let tiers: BTreeSet<Tier> = registry.prefecture_ids().iter().filter_map(|id| registry.tier_of(id)).collect();
    ensure(
        registry.prefecture_ids().len() >= 50
            && tiers.len() == 6
            && scenario.quarters.len() >= 4
            && totals.queries >= 200_000
            && totals.postings >= 100_000,
        || "scenario below the required size".into(),
    )?;

    let summary: HashMap<String, String> = read_csv(&reports.join("ingest_summary.csv"))?
        .into_iter()
        .map(|r| (r["counter"].clone(), r["value"].clone()))
        .collect();
    for (name, want) in [
        ("lines_read", totals.queries),
        ("job_queries", totals.job_queries),
        ("duplicates", totals.duplicates),
        ("dropped_no_origin", totals.dropped_no_origin),
        ("dropped_no_destination", totals.dropped_no_destination),
        ("dropped_same_city", totals.dropped_same_city),
        ("emitted", totals.intents),
    ] {
        ensure(summary.get(name) == Some(&want.to_string()), || format!("ingest counter {name} != {want}"))?;
    }

    let mut min_ari = f64::INFINITY;
    for quarter in &scenario.quarters {
        let found: BTreeMap<String, f64> = read_csv(&reports.join(format!("blackholes_volcanoes_{quarter}.csv")))?
            .into_iter()
            .filter(|r| r["kind"] == "blackhole")
            .map(|r| (r["city_id"].clone(), r["surplus"].parse().unwrap()))
            .collect();
        for (city, surplus) in &planted_holes {
            ensure(found.get(city) == Some(surplus), || format!("{quarter}: black hole {city} not reported with surplus {surplus}"))?;
        }
        let partition: HashMap<String, usize> = read_csv(&reports.join(format!("partition_{quarter}_gamma1.csv")))?
            .into_iter()
            .map(|r| (r["city_id"].clone(), r["cluster_id"].parse().unwrap()))
            .collect();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (city, &c) in &communities {
            a.push(*partition.get(city).ok_or(format!("{quarter}: {city} missing from partition"))?);
            b.push(c);
        }
        min_ari = min_ari.min(ari(&a, &b));
    }
    ensure(min_ari >= 0.95, || format!("community agreement {min_ari:.3}"))?;

    let mut cells: BTreeMap<(String, String), BTreeMap<String, f64>> = BTreeMap::new();
    for r in read_csv(&reports.join("demand_series.csv"))? {
        *cells.entry((r["quarter"].clone(), r["group"].clone())).or_default().entry(r["category"].clone()).or_default() +=
            r["count"].parse::<f64>().unwrap();
    }
    let mut worst_share = 0.0f64;
    for quarter in &scenario.quarters {
        for (tier, mixture) in &scenario.demand_mixture {
            let counts = cells
                .get(&(quarter.to_string(), tier.as_str().to_string()))
                .ok_or(format!("no demand for {quarter} {}", tier.as_str()))?;
            let total: f64 = counts.values().sum();
            for (category, share) in mixture {
                let got = counts.get(category).copied().unwrap_or(0.0) / total;
                worst_share = worst_share.max((got - share).abs());
            }
        }
    }
    ensure(worst_share <= 0.02, || format!("demand share off by {worst_share:.4}"))?;

    let mut ratio_rows = 0;
    for entry in fs::read_dir(&reports).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if !name.starts_with("increase_ratio_") {
            continue;
        }
        for r in read_csv(&path)? {
            let (t1, t2): (QuarterId, QuarterId) = (q(&r["t1"]), q(&r["t2"]));
            let value = |quarter, inflow| flows.get(&(quarter, r["city_id"].clone(), inflow)).copied().unwrap_or(0.0);
            let (v1, v2) = match r["metric"].as_str() {
                "inflow" => (value(t1, true), value(t2, true)),
                "outflow" => (value(t1, false), value(t2, false)),
                "net_inflow" => (value(t1, true) - value(t1, false), value(t2, true) - value(t2, false)),
                _ => continue,
            };
            let want = if v1 > 0.0 { Some((v2 - v1) / v1) } else { None };
            let got = Some(r["increase_ratio"].as_str()).filter(|s| !s.is_empty()).map(|s| s.parse::<f64>().unwrap());
            let same = r["value_t1"].parse::<f64>() == Ok(v1) && r["value_t2"].parse::<f64>() == Ok(v2) && got == want;
            ensure(same, || format!("{name}: {} {} expected {v1} -> {v2} ratio {want:?}", r["city_id"], r["metric"]))?;
            ratio_rows += 1;
        }
    }
    ensure(ratio_rows > 0, || "no increase-ratio rows".into())?;
    ensure(ws.run_secs < 300.0, || format!("pipeline took {:.1}s", ws.run_secs))?;
    Ok(format!(
        "{} cities, {} queries, {} postings; {} black holes found each quarter, community agreement {min_ari:.3}, \
         worst demand share gap {:.2} points, {ratio_rows} ratio rows exact, pipeline {:.1}s",
        registry.prefecture_ids().len(),
        totals.queries,
        totals.postings,
        planted_holes.len(),
        worst_share * 100.0,
        ws.run_secs
    ))
}

fn criterion_10(ws: &Workspace) -> Outcome {
    let second = ws.first.with_file_name("run-b");
    labourflow(&[
        "run",
        "--config",
        ws.data.join(files::CONFIG).to_str().unwrap(),
        "--output",
        second.to_str().unwrap(),
        "--workers",
        "1",
    ])?;
    let (a, b) = (tree(&ws.first), tree(&second));
    ensure(!a.is_empty(), || "first run wrote nothing".into())?;
    let a_names: Vec<&PathBuf> = a.keys().collect();
    let b_names: Vec<&PathBuf> = b.keys().collect();
    ensure(a_names == b_names, || "runs wrote different file sets".into())?;
    let differing: Vec<&PathBuf> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    ensure(differing.is_empty(), || format!("{} files differ, first {}", differing.len(), differing[0].display()))?;
    let bytes: usize = a.values().map(Vec::len).sum();
    Ok(format!("{} files ({bytes} bytes) byte-identical across a default and a single-thread run", a.len()))
}

#[test]
fn acceptance_criteria() {
    let run = |f: &dyn Fn() -> Outcome| match catch_unwind(AssertUnwindSafe(f)) {
        Ok(outcome) => outcome,
        Err(panic) => Err(panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let ws = end_to_end();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("matching oracle", Box::new(criterion_1)),
        ("disambiguation", Box::new(criterion_2)),
        ("HITS", Box::new(criterion_3)),
        ("modularity", Box::new(criterion_4)),
        ("Louvain", Box::new(criterion_5)),
        ("degree metrics and black holes", Box::new(criterion_6)),
        ("correlations", Box::new(criterion_7)),
        ("k-means", Box::new(criterion_8)),
        (
            "end to end",
            Box::new(|| ws.as_ref().map_err(Clone::clone).and_then(criterion_9)),
        ),
        (
            "determinism",
            Box::new(|| ws.as_ref().map_err(Clone::clone).and_then(criterion_10)),
        ),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match run(f.as_ref()) {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
