//! Aho-Corasick automaton over Unicode scalar values.
//!
//! Spans are reported in character offsets, not bytes, so mentions inside
//! CJK text line up with what a reader counts.

use std::collections::VecDeque;

const ROOT: u32 = 0;

#[derive(Debug, Clone, Default)]
struct Node {
    /// Sorted by char for binary search.
    goto: Vec<(char, u32)>,
    fail: u32,
    /// Nearest proper suffix node that ends at least one pattern.
    output_link: Option<u32>,
    /// Patterns ending exactly at this node.
    outputs: Vec<u32>,
}

impl Node {
    fn child(&self, c: char) -> Option<u32> {
        self.goto
            .binary_search_by_key(&c, |&(k, _)| k)
            .ok()
            .map(|i| self.goto[i].1)
    }
}

/// One occurrence of a pattern in a text: `text[start..end]` in chars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Match {
    pub start: usize,
    pub end: usize,
    pub pattern: usize,
}

#[derive(Debug, Clone)]
pub struct Automaton {
    nodes: Vec<Node>,
    pattern_lens: Vec<usize>,
}

impl Automaton {
    /// Builds the automaton in time linear in the total pattern length.
    ///
    /// Empty patterns never match. Pattern ids are positions in the input.
    pub fn new<I, P>(patterns: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: AsRef<str>,
    {
        let mut nodes = vec![Node::default()];
        let mut pattern_lens = Vec::new();
        for (id, pattern) in patterns.into_iter().enumerate() {
            let pattern = pattern.as_ref();
            pattern_lens.push(pattern.chars().count());
            if pattern.is_empty() {
                continue;
            }
            let mut cur = ROOT;
            for c in pattern.chars() {
                cur = match nodes[cur as usize].child(c) {
                    Some(next) => next,
                    None => {
                        let next = nodes.len() as u32;
                        nodes.push(Node::default());
                        let goto = &mut nodes[cur as usize].goto;
                        let at = goto.partition_point(|&(k, _)| k < c);
                        goto.insert(at, (c, next));
                        next
                    }
                };
            }
            nodes[cur as usize].outputs.push(id as u32);
        }

        // Breadth-first so every failure target is finished before it is used.
        let mut queue: VecDeque<u32> = nodes[ROOT as usize].goto.iter().map(|&(_, n)| n).collect();
        while let Some(state) = queue.pop_front() {
            let children = nodes[state as usize].goto.clone();
            for (c, child) in children {
                let mut f = nodes[state as usize].fail;
                let fail = loop {
                    if let Some(n) = nodes[f as usize].child(c) {
                        break n;
                    }
                    if f == ROOT {
                        break ROOT;
                    }
                    f = nodes[f as usize].fail;
                };
                let output_link = if nodes[fail as usize].outputs.is_empty() {
                    nodes[fail as usize].output_link
                } else {
                    Some(fail)
                };
                let node = &mut nodes[child as usize];
                node.fail = fail;
                node.output_link = output_link;
                queue.push_back(child);
            }
        }
        Self { nodes, pattern_lens }
    }

    pub fn pattern_count(&self) -> usize {
        self.pattern_lens.len()
    }

    fn step(&self, mut state: u32, c: char) -> u32 {
        loop {
            if let Some(next) = self.nodes[state as usize].child(c) {
                return next;
            }
            if state == ROOT {
                return ROOT;
            }
            state = self.nodes[state as usize].fail;
        }
    }

    /// Every occurrence of every pattern, overlaps included, ordered by
    /// `(start, end, pattern)`.
    pub fn find_overlapping(&self, text: &str) -> Vec<Match> {
        let mut out = Vec::new();
        let mut state = ROOT;
        for (i, c) in text.chars().enumerate() {
            state = self.step(state, c);
            let end = i + 1;
            let mut node = Some(state);
            while let Some(n) = node {
                let n_ref = &self.nodes[n as usize];
                for &p in &n_ref.outputs {
                    out.push(Match {
                        start: end - self.pattern_lens[p as usize],
                        end,
                        pattern: p as usize,
                    });
                }
                node = n_ref.output_link;
            }
        }
        out.sort_unstable();
        out
    }
}
