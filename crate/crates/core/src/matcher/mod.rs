//! Place-name mention finding and destination resolution.

mod automaton;

use std::cmp::Ordering;
use std::collections::BTreeMap;

pub use automaton::{Automaton, Match};

use crate::error::{Error, Result};
use crate::geo::{AdminLevel, Registry};

/// Every official name and alias in the registry, mapped to the places it may denote.
#[derive(Debug, Clone)]
pub struct PlaceDictionary {
    surfaces: Vec<String>,
    candidates: Vec<Vec<String>>,
    automaton: Automaton,
}

/// A dictionary word found in a text, with every place it could mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchCandidate<'d> {
    pub surface: &'d str,
    /// Character offsets, end exclusive.
    pub span: (usize, usize),
    pub candidates: &'d [String],
}

impl PlaceDictionary {
    pub fn build(registry: &Registry) -> Result<Self> {
        if registry.is_empty() {
            return Err(Error::EmptyRegistry);
        }
        let mut by_surface: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for city in registry.cities() {
            for name in city.names() {
                let ids = by_surface.entry(name).or_default();
                if !ids.contains(&city.city_id) {
                    ids.push(city.city_id.clone());
                }
            }
        }
        let (surfaces, mut candidates): (Vec<String>, Vec<Vec<String>>) =
            by_surface.into_iter().map(|(s, ids)| (s.to_string(), ids)).unzip();
        candidates.iter_mut().for_each(|ids| ids.sort());
        let automaton = Automaton::new(&surfaces);
        Ok(Self {
            surfaces,
            candidates,
            automaton,
        })
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn patterns(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.surfaces
            .iter()
            .map(String::as_str)
            .zip(self.candidates.iter().map(Vec::as_slice))
    }

    pub fn candidates_for(&self, surface: &str) -> Option<&[String]> {
        self.surfaces
            .binary_search_by(|s| s.as_str().cmp(surface))
            .ok()
            .map(|i| self.candidates[i].as_slice())
    }

    /// All dictionary mentions in `text`, overlaps included, left to right.
    pub fn match_places<'d>(&'d self, text: &str) -> Vec<MatchCandidate<'d>> {
        self.automaton
            .find_overlapping(text)
            .into_iter()
            .map(|m| MatchCandidate {
                surface: &self.surfaces[m.pattern],
                span: (m.start, m.end),
                candidates: &self.candidates[m.pattern],
            })
            .collect()
    }
}

/// Picks the place an ambiguous word most likely denotes for a query from `origin`.
///
/// Rules apply in strict order until one candidate remains: same province as the
/// origin, then higher administrative level, then smaller centroid distance to the
/// origin. Anything still tied goes to the lexicographically smallest id.
///
/// # Panics
///
/// If `candidates` is empty.
pub fn disambiguate<'c>(candidates: &'c [String], origin: &str, registry: &Registry) -> &'c str {
    assert!(!candidates.is_empty(), "disambiguate needs at least one candidate");
    let origin_city = registry.get(origin);
    let origin_province = origin_city.map(|c| c.province_id.as_str());

    let mut pool: Vec<&'c str> = candidates.iter().map(String::as_str).collect();
    pool.sort_unstable();
    pool.dedup();

    let same_province = |id: &str| {
        origin_province.is_some() && registry.get(id).map(|c| c.province_id.as_str()) == origin_province
    };
    keep_best(&mut pool, |a, b| same_province(a).cmp(&same_province(b)));

    let level = |id: &str| registry.get(id).map_or(0, |c| c.admin_level.rank() + 1);
    keep_best(&mut pool, |a, b| level(a).cmp(&level(b)));

    if origin_city.is_some() {
        let closeness = |id: &str| {
            registry
                .city_distance(id, origin)
                .map_or(f64::NEG_INFINITY, |d| -d)
        };
        keep_best(&mut pool, |a, b| closeness(a).total_cmp(&closeness(b)));
    }

    // pool is sorted, so the first survivor is the lexicographic minimum
    pool[0]
}

/// Retains the candidates that are maximal under `cmp`.
fn keep_best<T: Copy>(pool: &mut Vec<T>, cmp: impl Fn(T, T) -> Ordering) {
    if pool.len() < 2 {
        return;
    }
    let best = pool
        .iter()
        .copied()
        .reduce(|a, b| if cmp(b, a) == Ordering::Greater { b } else { a })
        .expect("non-empty");
    pool.retain(|&x| cmp(x, best) == Ordering::Equal);
}

/// Resolves the mentions of one text to a destination prefecture city.
///
/// Each mention is disambiguated; among the resulting places the lowest
/// administrative level wins (first mention breaks ties). Districts map to their
/// parent city and a winning province means the text names no city.
pub fn resolve_destination<'r>(
    matches: &[MatchCandidate<'_>],
    origin: &str,
    registry: &'r Registry,
) -> Option<&'r str> {
    let mut best: Option<(u8, &str)> = None;
    for m in matches {
        let place = disambiguate(m.candidates, origin, registry);
        let Some(city) = registry.get(place) else {
            continue;
        };
        let rank = city.admin_level.rank();
        if best.is_none_or(|(r, _)| rank < r) {
            best = Some((rank, &city.city_id));
        }
    }
    let (_, place) = best?;
    match registry.get(place)?.admin_level {
        AdminLevel::Province => None,
        _ => registry.prefecture_of(place),
    }
}
