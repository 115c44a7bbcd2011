//! Synthetic scenarios with planted ground truth: a grid registry, a job-search
//! query log with known flows and noise, job postings with a known category
//! mixture, and a ground-truth file describing what was planted.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, AdminLevel, City, LatLon, Registry, Ring, Tier};
use crate::ingest::{format_posting_line, format_query_line, JobPostingRecord, QueryRecord, DEFAULT_JOB_KEYWORDS};
use crate::quarter::{cst_day, QuarterId};

const GRID_COLS: usize = 10;
const CELL_DEG: f64 = 0.5;
const CITY_DEG: f64 = 0.4;
const MAX_DISTRICTS: usize = 3;
const ORIGIN_LAT: f64 = 22.0;
const ORIGIN_LON: f64 = 102.0;

const SYLLABLES: [&str; 24] = [
    "ba", "ko", "ri", "shen", "zhou", "lan", "mei", "tai", "yu", "an", "ning", "qi", "hua", "dong", "xi", "pu", "lin",
    "jiang", "he", "su", "wen", "chang", "gu", "fen",
];
const DISTRACTORS: [&str; 12] = [
    "work", "salary", "shift", "night", "benefit", "apply", "today", "fulltime", "parttime", "nearby", "weekend",
    "contract",
];
const GENERIC: [&str; 2] = ["hiring", "urgent"];
const STOPWORDS: [&str; 4] = ["senior", "junior", "experienced", "skilled"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedBlackhole {
    pub city_id: String,
    /// Net inflow delivered on top of the symmetric baseline, every quarter.
    pub surplus: u32,
}

/// Fractions of the whole query log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub non_job: f64,
    pub province_only: f64,
    pub same_city: f64,
    pub no_origin: f64,
    pub duplicate: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Self {
            non_job: 0.20,
            province_only: 0.05,
            same_city: 0.02,
            no_origin: 0.02,
            duplicate: 0.02,
        }
    }
}

impl Noise {
    fn total(&self) -> f64 {
        self.non_job + self.province_only + self.same_city + self.no_origin + self.duplicate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub seed: u64,
    /// Prefecture cities per tier, in tier order T1, NewT1, T2, T3, T4, T5.
    pub cities_per_tier: Vec<usize>,
    pub provinces: usize,
    /// Communities are unions of consecutive provinces.
    pub communities: usize,
    pub districts_per_city: usize,
    /// Districts named after a prefecture city of another province.
    pub ambiguous_districts: usize,
    /// Pairs of prefecture cities in different provinces sharing one alias.
    pub shared_aliases: usize,
    /// Mean records per inter-community OD pair and quarter.
    pub flow_intensity: u32,
    pub intra_multiplier: u32,
    pub blackholes: Vec<PlantedBlackhole>,
    pub quarters: Vec<QuarterId>,
    /// Postings per prefecture city and quarter, by tier.
    pub postings_per_city: Vec<u32>,
    /// Keyword pool per category.
    pub categories: BTreeMap<String, Vec<String>>,
    pub demand_mixture: BTreeMap<Tier, BTreeMap<String, f64>>,
    pub noise: Noise,
    /// Share of flow queries whose place name appears only in the clicked title.
    pub title_only: f64,
    pub job_keywords: Vec<String>,
}

fn q(s: &str) -> QuarterId {
    s.parse().expect("valid quarter literal")
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

impl Default for Scenario {
    fn default() -> Self {
        let categories: BTreeMap<String, Vec<String>> = [
            (
                "white-collar",
                words(&["accountant", "engineer", "analyst", "programmer", "designer", "consultant", "manager", "clerk"]),
            ),
            (
                "manufacture",
                words(&["assembler", "welder", "operator", "machinist", "technician", "fitter", "packer", "inspector"]),
            ),
            (
                "express",
                words(&["courier", "parcel", "delivery", "sorter", "dispatcher", "rider", "logistics", "warehouse"]),
            ),
            (
                "passenger-transport",
                words(&["driver", "bus", "taxi", "chauffeur", "conductor", "shuttle", "coach", "transit"]),
            ),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let mix = |w: f64, m: f64, e: f64, p: f64| -> BTreeMap<String, f64> {
            [("white-collar", w), ("manufacture", m), ("express", e), ("passenger-transport", p)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect()
        };
        let demand_mixture = [
            (Tier::T1, mix(0.55, 0.15, 0.18, 0.12)),
            (Tier::NewT1, mix(0.45, 0.25, 0.17, 0.13)),
            (Tier::T2, mix(0.35, 0.35, 0.16, 0.14)),
            (Tier::T3, mix(0.25, 0.45, 0.15, 0.15)),
            (Tier::T4, mix(0.20, 0.50, 0.14, 0.16)),
            (Tier::T5, mix(0.15, 0.55, 0.13, 0.17)),
        ]
        .into();
        Self {
            seed: 20200101,
            cities_per_tier: vec![4, 6, 8, 10, 10, 12],
            provinces: 10,
            communities: 5,
            districts_per_city: 1,
            ambiguous_districts: 6,
            shared_aliases: 4,
            flow_intensity: 9,
            intra_multiplier: 5,
            blackholes: ["c01", "c12", "c23", "c34"]
                .iter()
                .zip([300, 250, 200, 150])
                .map(|(c, s)| PlantedBlackhole {
                    city_id: c.to_string(),
                    surplus: s,
                })
                .collect(),
            quarters: vec![q("2019Q4"), q("2020Q1"), q("2020Q2"), q("2020Q3")],
            postings_per_city: vec![1200, 800, 600, 450, 350, 300],
            categories,
            demand_mixture,
            noise: Noise::default(),
            title_only: 0.10,
            job_keywords: DEFAULT_JOB_KEYWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn city_count(&self) -> usize {
        self.cities_per_tier.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleScenario(m));
        let n = self.city_count();
        if self.cities_per_tier.len() != 6 || self.postings_per_city.len() != 6 {
            return bad("cities_per_tier and postings_per_city need one entry per tier (6)".into());
        }
        if n < 2 {
            return bad("need at least two prefecture cities".into());
        }
        if self.provinces == 0 || self.provinces > n {
            return bad(format!("provinces must be in 1..={n}"));
        }
        if self.communities == 0 || self.communities > self.provinces {
            return bad("communities must be in 1..=provinces".into());
        }
        if self.districts_per_city > MAX_DISTRICTS {
            return bad(format!("at most {MAX_DISTRICTS} districts per city"));
        }
        if n.div_ceil(GRID_COLS) as f64 * CELL_DEG + ORIGIN_LAT > 89.0 {
            return bad("too many cities for the grid".into());
        }
        if self.flow_intensity == 0 || self.intra_multiplier == 0 {
            return bad("flow_intensity and intra_multiplier must be positive".into());
        }
        if self.quarters.is_empty() || self.quarters.windows(2).any(|w| w[0] >= w[1]) {
            return bad("quarters must be non-empty and strictly increasing".into());
        }
        if self.job_keywords.is_empty() || self.job_keywords.iter().any(|k| k.is_empty()) {
            return bad("job_keywords must be non-empty".into());
        }
        let fractions = [
            self.noise.non_job,
            self.noise.province_only,
            self.noise.same_city,
            self.noise.no_origin,
            self.noise.duplicate,
            self.title_only,
        ];
        if fractions.iter().any(|f| !(0.0..1.0).contains(f)) || self.noise.total() >= 1.0 {
            return bad("noise fractions must be in [0, 1) and sum below 1".into());
        }
        if self.categories.is_empty() || self.categories.values().any(|p| p.len() < 2) {
            return bad("every category needs a keyword pool of at least two words".into());
        }
        let mut seen = HashSet::new();
        for w in self.categories.values().flatten() {
            if w.chars().count() < 2 || w.chars().any(|c| !c.is_ascii_lowercase()) || !seen.insert(w) {
                return bad(format!("category keyword `{w}` must be unique, lowercase ASCII, 2+ chars"));
            }
            if GENERIC.contains(&w.as_str()) || STOPWORDS.contains(&w.as_str()) {
                return bad(format!("category keyword `{w}` collides with filler words"));
            }
        }
        for (t, &count) in Tier::ALL.iter().zip(&self.cities_per_tier) {
            if count == 0 {
                continue;
            }
            let Some(mix) = self.demand_mixture.get(t) else {
                return bad(format!("no demand mixture for tier {t}"));
            };
            if let Some((c, s)) = mix.iter().find(|(c, s)| !self.categories.contains_key(*c) || !(**s >= 0.0)) {
                return bad(format!("tier {t}: share {s} for category `{c}` is negative or unknown"));
            }
            let sum: f64 = mix.values().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return bad(format!("tier {t}: shares sum to {sum}, not 1"));
            }
        }
        let mut planted = HashSet::new();
        for b in &self.blackholes {
            let idx = city_index(&b.city_id).filter(|&i| i < n);
            let Some(idx) = idx else {
                return bad(format!("black hole `{}` is not a generated city id", b.city_id));
            };
            if !planted.insert(idx) {
                return bad(format!("black hole `{}` listed twice", b.city_id));
            }
        }
        let layout = Layout::new(self);
        for b in &self.blackholes {
            let idx = city_index(&b.city_id).expect("checked above");
            if b.surplus > 0 && layout.donors(idx, &planted).is_empty() {
                return bad(format!("black hole `{}` has no non-black-hole city in its community", b.city_id));
            }
        }
        Ok(())
    }
}

fn city_id(i: usize) -> String {
    format!("c{:02}", i + 1)
}

fn city_index(id: &str) -> Option<usize> {
    id.strip_prefix('c')?.parse::<usize>().ok()?.checked_sub(1)
}

/// Province and community membership of the prefecture cities.
struct Layout {
    n: usize,
    province: Vec<usize>,
    community: Vec<usize>,
}

impl Layout {
    fn new(s: &Scenario) -> Self {
        let n = s.city_count();
        let province: Vec<usize> = (0..n).map(|i| i * s.provinces / n).collect();
        let community = province.iter().map(|&p| p * s.communities / s.provinces).collect();
        Self { n, province, community }
    }

    fn donors(&self, city: usize, blackholes: &HashSet<usize>) -> Vec<usize> {
        (0..self.n)
            .filter(|&j| j != city && self.community[j] == self.community[city] && !blackholes.contains(&j))
            .collect()
    }
}

/// Everything the generator planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Community {
        city_id: String,
        community: usize,
    },
    Blackhole {
        city_id: String,
        surplus: u32,
    },
    Flow {
        quarter: QuarterId,
        origin: String,
        destination: String,
        count: u32,
    },
    Demand {
        quarter: QuarterId,
        tier: Tier,
        category: String,
        count: u64,
    },
    /// Alias queries whose resolution depends on the origin.
    Ambiguity {
        surface: String,
        origin: String,
        resolved: String,
    },
    Totals(Totals),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub queries: u64,
    pub job_queries: u64,
    pub duplicates: u64,
    pub dropped_no_origin: u64,
    pub dropped_no_destination: u64,
    pub dropped_same_city: u64,
    pub intents: u64,
    pub postings: u64,
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruth>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, n + 1, e.to_string())))
        .collect()
}

/// File names written by [`generate`].
pub mod files {
    pub const REGISTRY: &str = "registry.jsonl";
    pub const QUERIES: &str = "queries.tsv";
    pub const POSTINGS: &str = "postings.tsv";
    pub const GROUND_TRUTH: &str = "ground_truth.jsonl";
    pub const INDICATORS: &str = "indicators.csv";
    pub const ANCHORS: &str = "anchors.tsv";
    pub const STOPLIST: &str = "stoplist.txt";
    pub const CONFIG: &str = "pipeline.conf";
    pub const SCENARIO: &str = "scenario.json";
}

/// A place as the generator sees it, for resolving mentions on its side.
struct Place {
    id: String,
    province: usize,
    rank: u8,
    centroid: LatLon,
    /// Prefecture city index for cities and districts.
    city: Option<usize>,
}

struct World {
    registry: Registry,
    places: Vec<Place>,
    surfaces: HashMap<String, Vec<usize>>,
    /// Place index of each prefecture city, province and district.
    city_place: Vec<usize>,
    province_place: Vec<usize>,
    district_places: Vec<Vec<usize>>,
    boxes: Vec<(LatLon, LatLon)>,
    tiers: Vec<Tier>,
}

impl World {
    fn names_of(&self, place: usize) -> Vec<&str> {
        let id = &self.places[place].id;
        self.registry.get(id).expect("place registered").names().collect()
    }

    /// Rule sequence: same province as the origin, then higher admin level,
    /// then nearest centroid, then smallest id.
    fn pick(&self, surface: &str, origin: usize) -> usize {
        let origin_place = &self.places[self.city_place[origin]];
        let mut pool: Vec<usize> = self.surfaces[surface].clone();
        let same: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&p| self.places[p].province == origin_place.province)
            .collect();
        if !same.is_empty() {
            pool = same;
        }
        let top = pool.iter().map(|&p| self.places[p].rank).max().expect("non-empty");
        pool.retain(|&p| self.places[p].rank == top);
        let dist = |p: usize| haversine_km(self.places[p].centroid, origin_place.centroid);
        let best = pool.iter().map(|&p| dist(p)).fold(f64::INFINITY, f64::min);
        pool.retain(|&p| dist(p) == best);
        *pool.iter().min_by_key(|&&p| &self.places[p].id).expect("non-empty")
    }

    /// Destination prefecture of a text's mentions (in order), or `None`.
    fn resolve(&self, mentions: &[&str], origin: usize) -> Option<usize> {
        let mut best: Option<usize> = None;
        for m in mentions {
            let p = self.pick(m, origin);
            if best.is_none_or(|b| self.places[p].rank < self.places[b].rank) {
                best = Some(p);
            }
        }
        best.and_then(|p| self.places[p].city)
    }
}

fn make_names(rng: &mut ChaCha8Rng, count: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(count);
    while out.len() < count {
        let len = rng.random_range(2..=3);
        let mut w: String = (0..len).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
        w[..1].make_ascii_uppercase();
        if out.iter().all(|o| !o.contains(&w) && !w.contains(o.as_str())) {
            out.push(w);
        }
    }
    out
}

fn build_world(s: &Scenario, layout: &Layout, rng: &mut ChaCha8Rng) -> Result<World> {
    let n = layout.n;
    let mut tiers: Vec<Tier> = Tier::ALL
        .iter()
        .zip(&s.cities_per_tier)
        .flat_map(|(&t, &c)| std::iter::repeat_n(t, c))
        .collect();
    for i in (1..tiers.len()).rev() {
        tiers.swap(i, rng.random_range(0..=i));
    }

    let district_total = n * s.districts_per_city;
    let ambiguous = s.ambiguous_districts.min(district_total);
    let mut names = make_names(
        rng,
        s.provinces + 2 * n + district_total - ambiguous + s.shared_aliases,
    )
    .into_iter();
    let mut take = || names.next().expect("enough names generated");

    let boxes: Vec<(LatLon, LatLon)> = (0..n)
        .map(|i| {
            let lat = ORIGIN_LAT + (i / GRID_COLS) as f64 * CELL_DEG;
            let lon = ORIGIN_LON + (i % GRID_COLS) as f64 * CELL_DEG;
            (LatLon::new(lat, lon), LatLon::new(lat + CITY_DEG, lon + CITY_DEG))
        })
        .collect();
    let centre = |(lo, hi): (LatLon, LatLon)| LatLon::new((lo.lat + hi.lat) / 2.0, (lo.lon + hi.lon) / 2.0);
    let ring = |lo: LatLon, hi: LatLon| Ring::rectangle(lo, hi).map_err(Error::InfeasibleScenario);

    let mut cities = Vec::new();
    for p in 0..s.provinces {
        let members: Vec<usize> = (0..n).filter(|&i| layout.province[i] == p).collect();
        let k = members.len().max(1) as f64;
        let lat = members.iter().map(|&i| centre(boxes[i]).lat).sum::<f64>() / k;
        let lon = members.iter().map(|&i| centre(boxes[i]).lon).sum::<f64>() / k;
        cities.push(City {
            city_id: format!("p{:02}", p + 1),
            official_name: take(),
            aliases: vec![],
            province_id: format!("p{:02}", p + 1),
            admin_level: AdminLevel::Province,
            tier: None,
            centroid: LatLon::new(lat, lon),
            polygon: vec![],
            parent_city_id: None,
        });
    }
    let first_city = cities.len();
    for i in 0..n {
        let (lo, hi) = boxes[i];
        cities.push(City {
            city_id: city_id(i),
            official_name: take(),
            aliases: vec![take()],
            province_id: format!("p{:02}", layout.province[i] + 1),
            admin_level: AdminLevel::PrefectureCity,
            tier: Some(tiers[i]),
            centroid: centre(boxes[i]),
            polygon: vec![ring(lo, hi)?],
            parent_city_id: None,
        });
    }
    // shared aliases between cities of different provinces
    let mut shared = 0;
    let mut a = 1;
    while shared < s.shared_aliases && a < n {
        let b = (a + n / 2 + 2) % n;
        if layout.province[a] != layout.province[b] {
            let alias = take();
            cities[first_city + a].aliases.push(alias.clone());
            cities[first_city + b].aliases.push(alias);
            shared += 1;
        }
        a += 3;
    }
    let mut named_after = 0;
    for i in 0..n {
        let (lo, _) = boxes[i];
        for d in 0..s.districts_per_city {
            let dlo = LatLon::new(lo.lat + 0.05, lo.lon + 0.05 + 0.12 * d as f64);
            let dhi = LatLon::new(dlo.lat + 0.1, dlo.lon + 0.1);
            let twin = (i + n / 2) % n;
            let name = if d == 0 && named_after < ambiguous && layout.province[twin] != layout.province[i] {
                named_after += 1;
                cities[first_city + twin].official_name.clone()
            } else {
                take()
            };
            cities.push(City {
                city_id: format!("{}-d{}", city_id(i), d + 1),
                official_name: name,
                aliases: vec![],
                province_id: format!("p{:02}", layout.province[i] + 1),
                admin_level: AdminLevel::District,
                tier: None,
                centroid: LatLon::new((dlo.lat + dhi.lat) / 2.0, (dlo.lon + dhi.lon) / 2.0),
                polygon: vec![ring(dlo, dhi)?],
                parent_city_id: Some(city_id(i)),
            });
        }
    }

    let mut places = Vec::new();
    let mut surfaces: HashMap<String, Vec<usize>> = HashMap::new();
    let mut city_place = vec![0; n];
    let mut province_place = vec![0; s.provinces];
    let mut district_places = vec![Vec::new(); n];
    for c in &cities {
        let idx = places.len();
        let province = c.province_id[1..].parse::<usize>().expect("generated id") - 1;
        let city = match c.admin_level {
            AdminLevel::Province => {
                province_place[province] = idx;
                None
            }
            AdminLevel::PrefectureCity => {
                let i = city_index(&c.city_id).expect("generated id");
                city_place[i] = idx;
                Some(i)
            }
            AdminLevel::District => {
                let i = city_index(c.parent_city_id.as_deref().expect("district parent")).expect("generated id");
                district_places[i].push(idx);
                Some(i)
            }
        };
        for name in c.names() {
            surfaces.entry(name.to_string()).or_default().push(idx);
        }
        places.push(Place {
            id: c.city_id.clone(),
            province,
            rank: c.admin_level.rank(),
            centroid: c.centroid,
            city,
        });
    }
    Ok(World {
        registry: Registry::new(cities)?,
        places,
        surfaces,
        city_place,
        province_place,
        district_places,
        boxes,
        tiers,
    })
}

/// Planned OD counts per quarter, row-major over prefecture cities.
fn plan_flows(s: &Scenario, layout: &Layout, rng: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
    let n = layout.n;
    let planted: HashSet<usize> = s.blackholes.iter().filter_map(|b| city_index(&b.city_id)).collect();
    s.quarters
        .iter()
        .map(|_| {
            let mut w = vec![0u32; n * n];
            for i in 0..n {
                for j in i + 1..n {
                    let mean = if layout.community[i] == layout.community[j] {
                        s.flow_intensity * s.intra_multiplier
                    } else {
                        s.flow_intensity
                    };
                    let c = rng.random_range((mean * 3).div_ceil(4)..=mean * 5 / 4);
                    w[i * n + j] = c;
                    w[j * n + i] = c;
                }
            }
            for b in &s.blackholes {
                let x = city_index(&b.city_id).expect("validated");
                let donors = layout.donors(x, &planted);
                for _ in 0..b.surplus {
                    let d = donors[rng.random_range(0..donors.len())];
                    w[d * n + x] += 1;
                }
            }
            w
        })
        .collect()
}

struct QueryMaker<'w> {
    world: &'w World,
    scenario: &'w Scenario,
    rng: ChaCha8Rng,
    seen: HashSet<(i64, String, Option<String>, Option<usize>)>,
}

impl QueryMaker<'_> {
    fn distractor(&mut self) -> &'static str {
        DISTRACTORS[self.rng.random_range(0..DISTRACTORS.len())]
    }

    fn keyword(&mut self) -> String {
        let k = &self.scenario.job_keywords;
        k[self.rng.random_range(0..k.len())].clone()
    }

    fn point_in(&mut self, city: usize) -> LatLon {
        let (lo, hi) = self.world.boxes[city];
        LatLon::new(
            self.rng.random_range(lo.lat + 0.01..hi.lat - 0.01),
            self.rng.random_range(lo.lon + 0.01..hi.lon - 0.01),
        )
    }

    fn timestamp(&mut self, quarter: QuarterId) -> i64 {
        self.rng.random_range(quarter.start_timestamp()..quarter.end_timestamp())
    }

    fn job_text(&mut self, mention: Option<&str>) -> String {
        let kw = self.keyword();
        let d = self.distractor();
        match (mention, self.rng.random_range(0..3)) {
            (Some(m), 0) => format!("{m} {kw} {d}"),
            (Some(m), 1) => format!("{kw} {m} {d}"),
            (Some(m), _) => format!("{d} {m} {kw}"),
            (None, _) => format!("{kw} {d} {}", self.distractor()),
        }
    }

    fn plain_title(&mut self) -> Option<String> {
        self.rng
            .random_bool(0.5)
            .then(|| format!("{} {} listing", self.distractor(), self.distractor()))
    }

    /// Keeps drawing until the dedup key is new.
    fn unique(
        &mut self,
        origin: Option<usize>,
        mut draw: impl FnMut(&mut Self) -> QueryRecord,
    ) -> Result<QueryRecord> {
        for _ in 0..200 {
            let r = draw(self);
            let key = (cst_day(r.timestamp), r.query_text.clone(), r.clicked_title.clone(), origin);
            if self.seen.insert(key) {
                return Ok(r);
            }
        }
        Err(Error::InfeasibleScenario(
            "could not draw a distinct query; lower the flow intensity".into(),
        ))
    }

    /// Surfaces naming `dest` (directly or through one of its districts) that
    /// resolve to `dest` from `origin`.
    fn surfaces_for(&self, dest: usize, origin: usize) -> Vec<String> {
        let w = self.world;
        std::iter::once(w.city_place[dest])
            .chain(w.district_places[dest].iter().copied())
            .flat_map(|p| w.names_of(p))
            .filter(|s| w.resolve(&[s], origin) == Some(dest))
            .map(String::from)
            .collect()
    }

    fn flow_query(&mut self, origin: usize, dest: usize, quarter: QuarterId, ambiguity: &mut BTreeSet<(String, String, String)>) -> Result<QueryRecord> {
        let options = self.surfaces_for(dest, origin);
        if options.is_empty() {
            return Err(Error::InfeasibleScenario(format!(
                "no name of {} resolves to it from {}",
                city_id(dest),
                city_id(origin)
            )));
        }
        let w = self.world;
        let province_name = w.names_of(w.province_place[w.places[w.city_place[dest]].province])[0].to_string();
        let title_only = self.scenario.title_only;
        let r = self.unique(Some(origin), |m| {
            let surface = options[m.rng.random_range(0..options.len())].clone();
            let mention = if m.rng.random_bool(0.1) {
                format!("{province_name} {surface}")
            } else {
                surface.clone()
            };
            let (query_text, clicked_title) = if m.rng.random_bool(title_only) {
                (m.job_text(None), Some(format!("{mention} {} openings", m.distractor())))
            } else {
                let t = m.job_text(Some(&mention));
                (t, m.plain_title())
            };
            QueryRecord {
                timestamp: m.timestamp(quarter),
                location: m.point_in(origin),
                query_text,
                clicked_title,
            }
        })?;
        for (surface, _) in self.world.surfaces.iter().filter(|(_, c)| c.len() > 1) {
            let text = format!("{} {}", r.query_text, r.clicked_title.as_deref().unwrap_or(""));
            if text.contains(surface.as_str()) {
                ambiguity.insert((surface.clone(), city_id(origin), city_id(dest)));
            }
        }
        Ok(r)
    }
}

/// Outcome of [`generate`].
#[derive(Debug, Clone)]
pub struct Generated {
    pub totals: Totals,
    pub registry: Registry,
}

/// Writes a complete scenario into `out_dir`. Same scenario, same bytes.
pub fn generate(scenario: &Scenario, out_dir: impl AsRef<Path>) -> Result<Generated> {
    scenario.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let layout = Layout::new(scenario);
    let world = build_world(scenario, &layout, &mut rng)?;
    let flows = plan_flows(scenario, &layout, &mut rng);
    let n = layout.n;

    let mut truth = Vec::new();
    for i in 0..n {
        truth.push(GroundTruth::Community {
            city_id: city_id(i),
            community: layout.community[i],
        });
    }
    for b in &scenario.blackholes {
        truth.push(GroundTruth::Blackhole {
            city_id: b.city_id.clone(),
            surplus: b.surplus,
        });
    }
    for (qi, &quarter) in scenario.quarters.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                let count = flows[qi][i * n + j];
                if count > 0 {
                    truth.push(GroundTruth::Flow {
                        quarter,
                        origin: city_id(i),
                        destination: city_id(j),
                        count,
                    });
                }
            }
        }
    }

    let mut maker = QueryMaker {
        world: &world,
        scenario,
        rng: ChaCha8Rng::seed_from_u64(rng.random()),
        seen: HashSet::new(),
    };
    let mut ambiguity = BTreeSet::new();
    let mut queries = Vec::new();
    for (qi, &quarter) in scenario.quarters.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                for _ in 0..flows[qi][i * n + j] {
                    queries.push(maker.flow_query(i, j, quarter, &mut ambiguity)?);
                }
            }
        }
    }
    let intents = queries.len() as u64;
    let total = (intents as f64 / (1.0 - scenario.noise.total())).round() as u64;
    let count = |f: f64| (f * total as f64).round() as u64;
    let noise = &scenario.noise;
    let (non_job, province_only, same_city, no_origin, duplicates) = (
        count(noise.non_job),
        count(noise.province_only),
        count(noise.same_city),
        count(noise.no_origin),
        count(noise.duplicate),
    );
    let nq = scenario.quarters.len();

    for _ in 0..duplicates {
        let k = maker.rng.random_range(0..intents as usize);
        queries.push(queries[k].clone());
    }
    for _ in 0..province_only {
        let quarter = scenario.quarters[maker.rng.random_range(0..nq)];
        let origin = maker.rng.random_range(0..n);
        let prov = maker.rng.random_range(0..scenario.provinces);
        let name = world.names_of(world.province_place[prov])[0].to_string();
        let r = maker.unique(Some(origin), |m| QueryRecord {
            timestamp: m.timestamp(quarter),
            location: m.point_in(origin),
            query_text: m.job_text(Some(&name)),
            clicked_title: m.plain_title(),
        })?;
        queries.push(r);
    }
    for _ in 0..same_city {
        let quarter = scenario.quarters[maker.rng.random_range(0..nq)];
        let origin = maker.rng.random_range(0..n);
        let options = maker.surfaces_for(origin, origin);
        let r = maker.unique(Some(origin), |m| {
            let s = options[m.rng.random_range(0..options.len())].clone();
            QueryRecord {
                timestamp: m.timestamp(quarter),
                location: m.point_in(origin),
                query_text: m.job_text(Some(&s)),
                clicked_title: m.plain_title(),
            }
        })?;
        queries.push(r);
    }
    for _ in 0..no_origin {
        let quarter = scenario.quarters[maker.rng.random_range(0..nq)];
        let dest = maker.rng.random_range(0..n);
        let name = world.names_of(world.city_place[dest])[0].to_string();
        let r = maker.unique(None, |m| QueryRecord {
            timestamp: m.timestamp(quarter),
            location: LatLon::new(m.rng.random_range(5.0..15.0), m.rng.random_range(80.0..95.0)),
            query_text: m.job_text(Some(&name)),
            clicked_title: m.plain_title(),
        })?;
        queries.push(r);
    }
    for _ in 0..non_job {
        let quarter = scenario.quarters[maker.rng.random_range(0..nq)];
        let origin = maker.rng.random_range(0..n);
        let dest = maker.rng.random_range(0..n);
        let name = world.names_of(world.city_place[dest])[0].to_string();
        let (a, b) = (maker.distractor(), maker.distractor());
        queries.push(QueryRecord {
            timestamp: maker.timestamp(quarter),
            location: maker.point_in(origin),
            query_text: format!("{name} {a} {b}"),
            clicked_title: None,
        });
    }
    for i in (1..queries.len()).rev() {
        queries.swap(i, maker.rng.random_range(0..=i));
    }

    let (postings, demand) = make_postings(scenario, &world, &mut rng);
    for ((quarter, tier, category), count) in &demand {
        truth.push(GroundTruth::Demand {
            quarter: *quarter,
            tier: *tier,
            category: category.clone(),
            count: *count,
        });
    }
    for (surface, origin, resolved) in ambiguity {
        truth.push(GroundTruth::Ambiguity {
            surface,
            origin,
            resolved,
        });
    }
    let totals = Totals {
        queries: queries.len() as u64,
        job_queries: queries.len() as u64 - non_job,
        duplicates,
        dropped_no_origin: no_origin,
        dropped_no_destination: province_only,
        dropped_same_city: same_city,
        intents,
        postings: postings.len() as u64,
    };
    truth.push(GroundTruth::Totals(totals));

    write_with(out_dir.join(files::REGISTRY), |mut w| world.registry.write(&mut w))?;
    write_with(out_dir.join(files::QUERIES), |w| {
        queries.iter().try_for_each(|r| writeln!(w, "{}", format_query_line(r)))
    })?;
    write_with(out_dir.join(files::POSTINGS), |w| {
        postings.iter().try_for_each(|p| writeln!(w, "{}", format_posting_line(p)))
    })?;
    write_with(out_dir.join(files::GROUND_TRUTH), |w| {
        for t in &truth {
            serde_json::to_writer(&mut *w, t)?;
            writeln!(w)?;
        }
        Ok(())
    })?;
    write_with(out_dir.join(files::INDICATORS), |w| write_indicators(w, &world, &mut rng))?;
    write_with(out_dir.join(files::ANCHORS), |w| {
        scenario
            .categories
            .iter()
            .try_for_each(|(c, pool)| writeln!(w, "{c}\t{}", pool.join(" ")))
    })?;
    write_with(out_dir.join(files::STOPLIST), |w| STOPWORDS.iter().try_for_each(|s| writeln!(w, "{s}")))?;
    write_with(out_dir.join(files::CONFIG), |w| write_config(w, scenario))?;
    write_with(out_dir.join(files::SCENARIO), |w| {
        serde_json::to_writer_pretty(&mut *w, scenario)?;
        writeln!(w)
    })?;
    tracing::info!(
        queries = totals.queries,
        intents = totals.intents,
        postings = totals.postings,
        dir = %out_dir.display(),
        "scenario generated"
    );
    Ok(Generated {
        totals,
        registry: world.registry,
    })
}

type DemandCounts = BTreeMap<(QuarterId, Tier, String), u64>;

/// Largest-remainder allocation of `total` by `shares`; ties go to the earlier key.
fn allocate(total: u64, shares: &BTreeMap<String, f64>) -> Vec<(String, u64)> {
    let mut alloc: Vec<(String, u64, f64)> = shares
        .iter()
        .map(|(c, &s)| {
            let exact = s * total as f64;
            (c.clone(), exact.floor() as u64, exact - exact.floor())
        })
        .collect();
    let assigned: u64 = alloc.iter().map(|a| a.1).sum();
    let mut order: Vec<usize> = (0..alloc.len()).collect();
    order.sort_by(|&a, &b| alloc[b].2.total_cmp(&alloc[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        alloc[i].1 += 1;
    }
    alloc.into_iter().map(|(c, n, _)| (c, n)).collect()
}

fn make_postings(s: &Scenario, world: &World, rng: &mut ChaCha8Rng) -> (Vec<JobPostingRecord>, DemandCounts) {
    let n = world.tiers.len();
    let mut postings = Vec::new();
    let mut demand = DemandCounts::new();
    let mut serial = 0u64;
    for &quarter in &s.quarters {
        for (ti, &tier) in Tier::ALL.iter().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| world.tiers[i] == tier).collect();
            let per_city = s.postings_per_city[ti] as u64;
            let total = per_city * members.len() as u64;
            if total == 0 {
                continue;
            }
            let mut cats: Vec<&str> = Vec::with_capacity(total as usize);
            for (c, k) in allocate(total, &s.demand_mixture[&tier]) {
                if k > 0 {
                    demand.insert((quarter, tier, c.clone()), k);
                }
                let name = s.categories.get_key_value(&c).expect("validated").0.as_str();
                cats.extend(std::iter::repeat_n(name, k as usize));
            }
            for i in (1..cats.len()).rev() {
                cats.swap(i, rng.random_range(0..=i));
            }
            let mut cats = cats.into_iter();
            for &city in &members {
                for _ in 0..per_city {
                    let cat = cats.next().expect("allocation covers every posting");
                    let working_city = match world.district_places[city].first() {
                        Some(&d) if rng.random_bool(0.05) => world.places[d].id.clone(),
                        _ => city_id(city),
                    };
                    serial += 1;
                    postings.push(JobPostingRecord {
                        publish_timestamp: rng.random_range(quarter.start_timestamp()..quarter.end_timestamp()),
                        working_city,
                        title: posting_title(&s.categories[cat], rng),
                        description: format!("full time position ref {serial}"),
                    });
                }
            }
        }
    }
    (postings, demand)
}

fn posting_title(pool: &[String], rng: &mut ChaCha8Rng) -> String {
    let mut tokens: Vec<String> = vec![pool[0].clone(), GENERIC[0].to_string()];
    let extra = rng.random_range(1..=2);
    let mut picked = BTreeSet::new();
    while picked.len() < extra.min(pool.len() - 1) {
        picked.insert(rng.random_range(1..pool.len()));
    }
    tokens.extend(picked.into_iter().map(|i| pool[i].clone()));
    if rng.random_bool(0.8) {
        tokens.push(GENERIC[1].to_string());
    }
    if rng.random_bool(0.5) {
        tokens.push(STOPWORDS[rng.random_range(0..STOPWORDS.len())].to_string());
    }
    if rng.random_bool(0.3) {
        tokens.push(((b'a' + rng.random_range(0..26u8)) as char).to_string());
    }
    if rng.random_bool(0.3) {
        tokens.push(format!("ref{:06}", rng.random_range(0..1_000_000)));
    }
    for i in (1..tokens.len()).rev() {
        tokens.swap(i, rng.random_range(0..=i));
    }
    tokens.join(" ")
}

fn write_indicators(w: &mut dyn Write, world: &World, rng: &mut ChaCha8Rng) -> std::io::Result<()> {
    writeln!(w, "city_id,name,value")?;
    for (i, tier) in world.tiers.iter().enumerate() {
        let scale = 6.0 - Tier::ALL.iter().position(|t| t == tier).expect("known tier") as f64;
        let gdp = scale * 1000.0 * rng.random_range(0.8..1.2);
        let population = scale * 150.0 * rng.random_range(0.7..1.3);
        writeln!(w, "{},GDP-2020,{gdp:.3}", city_id(i))?;
        writeln!(w, "{},population,{population:.3}", city_id(i))?;
    }
    Ok(())
}

fn write_config(w: &mut dyn Write, s: &Scenario) -> std::io::Result<()> {
    let quarters: Vec<String> = s.quarters.iter().map(ToString::to_string).collect();
    let compare: Vec<String> = s
        .quarters
        .windows(2)
        .map(|p| format!("{}:{}", p[0], p[1]))
        .chain((s.quarters.len() > 2).then(|| format!("{}:{}", quarters[0], quarters[quarters.len() - 1])))
        .collect();
    writeln!(w, "# generated scenario, seed {}", s.seed)?;
    for (k, v) in [
        ("registry", files::REGISTRY.to_string()),
        ("queries", files::QUERIES.to_string()),
        ("postings", files::POSTINGS.to_string()),
        ("indicators", files::INDICATORS.to_string()),
        ("output", "output".to_string()),
        ("keywords", s.job_keywords.join(",")),
        ("dedup", "true".to_string()),
        ("quarters", quarters.join(",")),
        ("compare", compare.join(",")),
        ("resolutions", "0.5,1,2".to_string()),
        ("louvain_seed", "7".to_string()),
        ("min_freq", "200".to_string()),
        ("top_drop", "2".to_string()),
        ("stoplist", files::STOPLIST.to_string()),
        ("anchors", files::ANCHORS.to_string()),
        ("kmeans_k", s.categories.len().to_string()),
        ("kmeans_seed", "1".to_string()),
        ("grouping", "tier".to_string()),
        ("format", "csv".to_string()),
    ] {
        writeln!(w, "{k} = {v}")?;
    }
    Ok(())
}

fn write_with(path: impl AsRef<Path>, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}
