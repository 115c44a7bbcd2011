//! City universe: names, aliases, administrative hierarchy, tiers and polygons.
//!
//! The registry file is line-delimited JSON, one place per line:
//!
//! ```text
//! {"city_id":"c001","official_name":"Kotaro","aliases":["Kota"],"province_id":"p01",
//!  "admin_level":"prefecture_city","tier":"T2","centroid":[30.25,110.25],
//!  "polygon":[[30.0,110.0,30.0,110.5,30.5,110.5,30.5,110.0,30.0,110.0]],"parent_city_id":null}
//! ```
//!
//! Each polygon ring is a flat `[lat, lon, lat, lon, ...]` array.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used for great-circle distances.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdminLevel {
    Province,
    PrefectureCity,
    District,
}

impl AdminLevel {
    /// Larger is higher in the administrative hierarchy.
    pub fn rank(self) -> u8 {
        match self {
            AdminLevel::Province => 2,
            AdminLevel::PrefectureCity => 1,
            AdminLevel::District => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    T1,
    NewT1,
    T2,
    T3,
    T4,
    T5,
}

impl Tier {
    pub const ALL: [Tier; 6] = [Tier::T1, Tier::NewT1, Tier::T2, Tier::T3, Tier::T4, Tier::T5];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::T1 => "T1",
            Tier::NewT1 => "NewT1",
            Tier::T2 => "T2",
            Tier::T3 => "T3",
            Tier::T4 => "T4",
            Tier::T5 => "T5",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// A simple closed ring: first vertex equals last.
#[derive(Debug, Clone, PartialEq)]
pub struct Ring {
    vertices: Vec<LatLon>,
    min: LatLon,
    max: LatLon,
}

impl Ring {
    pub fn new(vertices: Vec<LatLon>) -> std::result::Result<Self, String> {
        if vertices.len() < 4 {
            return Err(format!("ring has {} vertices, need at least 4", vertices.len()));
        }
        if vertices.first() != vertices.last() {
            return Err("ring is not closed (first vertex differs from last)".into());
        }
        if let Some(v) = vertices.iter().find(|v| !v.is_valid()) {
            return Err(format!("ring vertex ({}, {}) out of range", v.lat, v.lon));
        }
        let mut min = LatLon::new(f64::INFINITY, f64::INFINITY);
        let mut max = LatLon::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &vertices {
            min.lat = min.lat.min(v.lat);
            min.lon = min.lon.min(v.lon);
            max.lat = max.lat.max(v.lat);
            max.lon = max.lon.max(v.lon);
        }
        Ok(Self { vertices, min, max })
    }

    /// Axis-aligned rectangle ring with corners `lo` and `hi`.
    pub fn rectangle(lo: LatLon, hi: LatLon) -> std::result::Result<Self, String> {
        Ring::new(vec![
            LatLon::new(lo.lat, lo.lon),
            LatLon::new(lo.lat, hi.lon),
            LatLon::new(hi.lat, hi.lon),
            LatLon::new(hi.lat, lo.lon),
            LatLon::new(lo.lat, lo.lon),
        ])
    }

    pub fn vertices(&self) -> &[LatLon] {
        &self.vertices
    }

    /// Boundary-inclusive point-in-polygon test (even-odd rule).
    pub fn contains(&self, p: LatLon) -> bool {
        if p.lat < self.min.lat || p.lat > self.max.lat || p.lon < self.min.lon || p.lon > self.max.lon {
            return false;
        }
        let mut inside = false;
        for edge in self.vertices.windows(2) {
            let (a, b) = (edge[0], edge[1]);
            if on_segment(p, a, b) {
                return true;
            }
            // x = lon, y = lat
            if (a.lat > p.lat) != (b.lat > p.lat) {
                let cross_lon = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
                if p.lon < cross_lon {
                    inside = !inside;
                }
            }
        }
        inside
    }

    fn flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| [v.lat, v.lon]).collect()
    }
}

fn on_segment(p: LatLon, a: LatLon, b: LatLon) -> bool {
    let cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    if cross.abs() > 1e-12 {
        return false;
    }
    p.lon >= a.lon.min(b.lon) && p.lon <= a.lon.max(b.lon) && p.lat >= a.lat.min(b.lat) && p.lat <= a.lat.max(b.lat)
}

/// A province, prefecture city or district.
#[derive(Debug, Clone, PartialEq)]
pub struct City {
    pub city_id: String,
    pub official_name: String,
    pub aliases: Vec<String>,
    pub province_id: String,
    pub admin_level: AdminLevel,
    /// Required for prefecture cities; districts inherit their parent's tier.
    pub tier: Option<Tier>,
    pub centroid: LatLon,
    pub polygon: Vec<Ring>,
    pub parent_city_id: Option<String>,
}

impl City {
    pub fn contains(&self, p: LatLon) -> bool {
        self.polygon.iter().any(|ring| ring.contains(p))
    }

    /// Every surface form this place can be mentioned by.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.official_name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CityRecord {
    city_id: String,
    official_name: String,
    #[serde(default)]
    aliases: Vec<String>,
    province_id: String,
    admin_level: AdminLevel,
    #[serde(default)]
    tier: Option<Tier>,
    centroid: [f64; 2],
    #[serde(default)]
    polygon: Vec<Vec<f64>>,
    #[serde(default)]
    parent_city_id: Option<String>,
}

impl CityRecord {
    fn into_city(self) -> Result<City> {
        let invalid = |reason: String| Error::InvalidCity {
            city: self.city_id.clone(),
            reason,
        };
        let mut polygon = Vec::with_capacity(self.polygon.len());
        for flat in &self.polygon {
            if flat.len() % 2 != 0 {
                return Err(invalid("polygon ring has an odd number of coordinates".into()));
            }
            let vertices = flat.chunks_exact(2).map(|c| LatLon::new(c[0], c[1])).collect();
            polygon.push(Ring::new(vertices).map_err(invalid)?);
        }
        Ok(City {
            centroid: LatLon::new(self.centroid[0], self.centroid[1]),
            city_id: self.city_id,
            official_name: self.official_name,
            aliases: self.aliases,
            province_id: self.province_id,
            admin_level: self.admin_level,
            tier: self.tier,
            polygon,
            parent_city_id: self.parent_city_id,
        })
    }

    fn from_city(city: &City) -> Self {
        CityRecord {
            city_id: city.city_id.clone(),
            official_name: city.official_name.clone(),
            aliases: city.aliases.clone(),
            province_id: city.province_id.clone(),
            admin_level: city.admin_level,
            tier: city.tier,
            centroid: [city.centroid.lat, city.centroid.lon],
            polygon: city.polygon.iter().map(Ring::flat).collect(),
            parent_city_id: city.parent_city_id.clone(),
        }
    }
}

/// Immutable set of places, indexed by id.
#[derive(Debug, Clone)]
pub struct Registry {
    cities: Vec<City>,
    by_id: HashMap<String, usize>,
    /// Indices of places with at least one ring, in locate order
    /// (lowest admin level first, then city id).
    locatable: Vec<usize>,
    prefectures: Vec<String>,
}

impl Registry {
    /// Builds a registry, checking every invariant.
    pub fn new(cities: Vec<City>) -> Result<Self> {
        if cities.is_empty() {
            return Err(Error::EmptyRegistry);
        }
        let mut by_id = HashMap::with_capacity(cities.len());
        let mut names = HashSet::new();
        for (i, city) in cities.iter().enumerate() {
            let invalid = |reason: &str| Error::InvalidCity {
                city: city.city_id.clone(),
                reason: reason.to_string(),
            };
            if city.city_id.is_empty() {
                return Err(invalid("empty city_id"));
            }
            if by_id.insert(city.city_id.clone(), i).is_some() {
                return Err(invalid("duplicate city_id"));
            }
            if city.names().any(str::is_empty) {
                return Err(invalid("empty name or alias"));
            }
            if !names.insert((city.official_name.as_str(), city.province_id.as_str())) {
                return Err(invalid("official_name is not unique within its province"));
            }
            if !city.centroid.is_valid() {
                return Err(invalid("centroid out of range"));
            }
            match city.admin_level {
                AdminLevel::PrefectureCity if city.tier.is_none() => {
                    return Err(invalid("prefecture city without a tier"));
                }
                AdminLevel::District if city.parent_city_id.is_none() => {
                    return Err(Error::DanglingParent {
                        district: city.city_id.clone(),
                        parent: String::new(),
                    });
                }
                _ => {}
            }
        }
        for city in cities.iter().filter(|c| c.admin_level == AdminLevel::District) {
            let parent = city.parent_city_id.as_deref().unwrap_or_default();
            let ok = by_id
                .get(parent)
                .is_some_and(|&p| cities[p].admin_level == AdminLevel::PrefectureCity);
            if !ok {
                return Err(Error::DanglingParent {
                    district: city.city_id.clone(),
                    parent: parent.to_string(),
                });
            }
        }

        let mut locatable: Vec<usize> = (0..cities.len()).filter(|&i| !cities[i].polygon.is_empty()).collect();
        locatable.sort_by(|&a, &b| {
            let (a, b) = (&cities[a], &cities[b]);
            a.admin_level
                .rank()
                .cmp(&b.admin_level.rank())
                .then_with(|| a.city_id.cmp(&b.city_id))
        });
        let mut prefectures: Vec<String> = cities
            .iter()
            .filter(|c| c.admin_level == AdminLevel::PrefectureCity)
            .map(|c| c.city_id.clone())
            .collect();
        prefectures.sort();

        Ok(Self {
            cities,
            by_id,
            locatable,
            prefectures,
        })
    }

    pub fn len(&self) -> usize {
        self.cities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cities.is_empty()
    }

    pub fn cities(&self) -> &[City] {
        &self.cities
    }

    pub fn get(&self, id: &str) -> Option<&City> {
        self.by_id.get(id).map(|&i| &self.cities[i])
    }

    pub fn require(&self, id: &str) -> Result<&City> {
        self.get(id).ok_or_else(|| Error::UnknownCity(id.to_string()))
    }

    /// Sorted ids of all prefecture cities: the node set of every flow graph.
    pub fn prefecture_ids(&self) -> &[String] {
        &self.prefectures
    }

    /// Tier of a place; districts report their parent's tier.
    pub fn tier_of(&self, id: &str) -> Option<Tier> {
        let city = self.get(id)?;
        city.tier.or_else(|| self.get(city.parent_city_id.as_deref()?)?.tier)
    }

    /// Maps a place to the prefecture city it belongs to. Provinces have none.
    pub fn prefecture_of<'a>(&'a self, id: &str) -> Option<&'a str> {
        let city = self.get(id)?;
        match city.admin_level {
            AdminLevel::PrefectureCity => Some(&city.city_id),
            AdminLevel::District => city.parent_city_id.as_deref(),
            AdminLevel::Province => None,
        }
    }

    /// Prefecture city whose territory contains `point`.
    ///
    /// The most specific containing place wins (district before prefecture before
    /// province, ties by id) and districts resolve to their parent city.
    pub fn locate_point(&self, point: LatLon) -> Result<Option<&str>> {
        if !point.is_valid() {
            return Err(Error::CoordinateOutOfRange {
                lat: point.lat,
                lon: point.lon,
            });
        }
        let hit = self
            .locatable
            .iter()
            .map(|&i| &self.cities[i])
            .find(|c| c.contains(point));
        Ok(hit.and_then(|c| self.prefecture_of(&c.city_id)))
    }

    /// Great-circle distance between two places' centroids, in kilometres.
    pub fn city_distance(&self, a: &str, b: &str) -> Result<f64> {
        let (ca, cb) = (self.require(a)?, self.require(b)?);
        if a == b {
            return Ok(0.0);
        }
        Ok(haversine_km(ca.centroid, cb.centroid))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cities = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let record: CityRecord =
                serde_json::from_str(line).map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
            cities.push(record.into_city()?);
        }
        let registry = Registry::new(cities)?;
        tracing::info!(path = %path.display(), places = registry.len(), "loaded registry");
        Ok(registry)
    }

    pub fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        for city in &self.cities {
            serde_json::to_writer(&mut *out, &CityRecord::from_city(city))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Loads a registry file.
pub fn load_registry(path: impl AsRef<Path>) -> Result<Registry> {
    Registry::load(path)
}

pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// A named numeric attribute of a city, such as GDP.
#[derive(Debug, Clone, PartialEq)]
pub struct Indicator {
    pub city_id: String,
    pub name: String,
    pub value: f64,
}

/// Reads `city_id,name,value` rows. A header row is optional.
pub fn load_indicators(path: impl AsRef<Path>) -> Result<Vec<Indicator>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, n + 1, "expected city_id,name,value"));
        }
        if n == 0 && fields == ["city_id", "name", "value"] {
            continue;
        }
        let value: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, n + 1, format!("bad value `{}`", fields[2])))?;
        if !value.is_finite() {
            return Err(Error::parse(path, n + 1, "indicator value is not finite"));
        }
        out.push(Indicator {
            city_id: fields[0].to_string(),
            name: fields[1].to_string(),
            value,
        });
    }
    Ok(out)
}

/// Groups indicators by name, keyed by city.
pub fn indicators_by_name(indicators: &[Indicator]) -> BTreeMap<&str, BTreeMap<&str, f64>> {
    let mut out: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for ind in indicators {
        out.entry(&ind.name).or_default().insert(&ind.city_id, ind.value);
    }
    out
}
