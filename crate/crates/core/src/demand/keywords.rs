use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Splits a job title into tokens. Word segmentation is pluggable so that
/// CJK segmenters can be dropped in.
pub trait Tokenizer: Send + Sync {
    fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str> {
        text.split_whitespace().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictionaryParams {
    pub min_freq: u64,
    pub top_drop: usize,
    pub stoplist: BTreeSet<String>,
}

impl Default for DictionaryParams {
    fn default() -> Self {
        Self {
            min_freq: 1000,
            top_drop: 50,
            stoplist: BTreeSet::new(),
        }
    }
}

/// Ordered keyword list; a keyword's position is its vector dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordDictionary {
    keywords: Vec<String>,
    frequencies: Vec<u64>,
    index: HashMap<String, usize>,
    pub min_freq: u64,
    pub top_drop: usize,
    pub stoplist: BTreeSet<String>,
}

impl KeywordDictionary {
    fn from_entries(entries: Vec<(String, u64)>, params: &DictionaryParams) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        let index = entries.iter().enumerate().map(|(i, (k, _))| (k.clone(), i)).collect();
        let (keywords, frequencies) = entries.into_iter().unzip();
        Ok(Self {
            keywords,
            frequencies,
            index,
            min_freq: params.min_freq,
            top_drop: params.top_drop,
            stoplist: params.stoplist.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn frequency(&self, dim: usize) -> u64 {
        self.frequencies[dim]
    }

    pub fn dim_of(&self, keyword: &str) -> Option<usize> {
        self.index.get(keyword).copied()
    }

    /// `keyword<TAB>frequency` per line, in dimension order.
    pub fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        for (k, f) in self.keywords.iter().zip(&self.frequencies) {
            writeln!(out, "{k}\t{f}")?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let (k, f) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, n + 1, "expected keyword<TAB>frequency"))?;
            let f = f.parse().map_err(|_| Error::parse(path, n + 1, "bad frequency"))?;
            entries.push((k.to_string(), f));
        }
        Self::from_entries(entries, &DictionaryParams::default())
    }
}

/// Builds the keyword dictionary from a title corpus.
///
/// Single-character tokens are dropped, then tokens rarer than `min_freq`, then
/// the `top_drop` most frequent, then stoplist entries. Survivors are ordered by
/// descending frequency, ties lexicographic.
pub fn build_keyword_dictionary<'a, I>(titles: I, tokenizer: &dyn Tokenizer, params: &DictionaryParams) -> Result<KeywordDictionary>
where
    I: IntoIterator<Item = &'a str>,
{
    if params.min_freq == 0 {
        return Err(Error::InvalidParameter {
            name: "min_freq",
            reason: "must be at least 1".into(),
        });
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for title in titles {
        for tok in tokenizer.tokenize(title) {
            if tok.chars().nth(1).is_none() {
                continue;
            }
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().filter(|&(_, c)| c >= params.min_freq).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let entries: Vec<(String, u64)> = ranked
        .into_iter()
        .skip(params.top_drop)
        .filter(|(k, _)| !params.stoplist.contains(*k))
        .map(|(k, c)| (k.to_string(), c))
        .collect();
    KeywordDictionary::from_entries(entries, params)
}

/// Sparse keyword-frequency vector of one title.
#[derive(Debug, Clone, PartialEq)]
pub struct TitleVector {
    pub posting_id: usize,
    /// `(dimension, value)` sorted by dimension; values sum to 1 when non-empty.
    pub entries: Vec<(usize, f64)>,
}

impl TitleVector {
    /// False when the title contains no dictionary keyword.
    pub fn is_vectorizable(&self) -> bool {
        !self.entries.is_empty()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        for &(d, x) in &self.entries {
            v[d] = x;
        }
        v
    }
}

/// `x_i = f_i / Σ_k f_k` over dictionary keywords in the title.
pub fn vectorize(posting_id: usize, title: &str, dict: &KeywordDictionary, tokenizer: &dyn Tokenizer) -> TitleVector {
    let mut counts: Vec<(usize, f64)> = Vec::new();
    for tok in tokenizer.tokenize(title) {
        if let Some(d) = dict.dim_of(tok) {
            match counts.iter_mut().find(|(k, _)| *k == d) {
                Some((_, c)) => *c += 1.0,
                None => counts.push((d, 1.0)),
            }
        }
    }
    let total: f64 = counts.iter().map(|(_, c)| c).sum();
    counts.iter_mut().for_each(|(_, c)| *c /= total);
    counts.sort_by_key(|&(d, _)| d);
    TitleVector {
        posting_id,
        entries: counts,
    }
}
