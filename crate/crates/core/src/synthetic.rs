//! Template corpora with known annotations.
//!
//! A document is one or more chains joined by `;`. A chain walks the schema
//! from a root type downward and renders as
//! `Name0 cue1 Name1 cue2 Name2 ...`, where `cue_i` is the type name of
//! level `i` without its parenthesized part. Names are capitalized words
//! drawn from a pool owned by the type name, so no word belongs to two
//! types. Every prefix of a chain is a gold tuple. Span texts are distinct
//! within a document and spans never overlap.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{ExtractionTuple, Record, Span};
use crate::schema::{Schema, SchemaNode, TypePath};

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["", "n", "r", "l", "s", "x"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub count: usize,
    pub seed: u64,
    /// Chains per document are drawn uniformly from `1..=max_chains`.
    pub max_chains: usize,
    /// Probability of descending one more level when children exist.
    pub descend: f64,
    /// Names per type.
    pub pool_size: usize,
    /// Probability that a name has two words.
    pub two_word: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { count: 100, seed: 0, max_chains: 2, descend: 0.75, pool_size: 40, two_word: 0.3 }
    }
}

/// The cue word(s) for a type: its name up to the first `(`.
pub fn cue(type_name: &str) -> &str {
    type_name.split('(').next().unwrap_or(type_name).trim()
}

fn word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
        w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
    }
    w.push_str(CODAS[rng.random_range(0..CODAS.len())]);
    let mut c = w.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

/// Disjoint word pools, one per distinct type name, in sorted name order.
fn pools(schema: &Schema, size: usize, seed: u64) -> BTreeMap<String, Vec<String>> {
    let names: BTreeSet<String> = schema.enumerate_paths().into_iter().filter_map(|p| p.0.last().cloned()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9001);
    let mut taken = BTreeSet::new();
    let mut out = BTreeMap::new();
    for name in names {
        let mut pool = Vec::with_capacity(size);
        while pool.len() < size {
            let w = word(&mut rng);
            if taken.insert(w.clone()) {
                pool.push(w);
            }
        }
        out.insert(name, pool);
    }
    out
}

struct Builder {
    text: String,
    chars: usize,
}

impl Builder {
    fn push(&mut self, s: &str) -> (usize, usize) {
        if !self.text.is_empty() {
            self.text.push(' ');
            self.chars += 1;
        }
        let start = self.chars;
        self.text.push_str(s);
        self.chars += s.chars().count();
        (start, self.chars)
    }
}

fn walk<'a>(schema: &'a Schema, cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<&'a SchemaNode> {
    let roots = schema.roots();
    let mut node = &roots[rng.random_range(0..roots.len())];
    let mut chain = vec![node];
    while !node.children.is_empty() && rng.random_bool(cfg.descend) {
        node = &node.children[rng.random_range(0..node.children.len())];
        chain.push(node);
    }
    chain
}

pub fn generate(schema: &Schema, cfg: &SyntheticConfig) -> Vec<Record> {
    if schema.is_empty() {
        return (0..cfg.count).map(|_| Record { text: String::new(), tuples: Vec::new() }).collect();
    }
    let pools = pools(schema, cfg.pool_size.max(2), cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut docs = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let mut b = Builder { text: String::new(), chars: 0 };
        let mut used = BTreeSet::new();
        let mut tuples = BTreeSet::new();
        let chains = rng.random_range(1..=cfg.max_chains.max(1));
        for c in 0..chains {
            if c > 0 {
                b.push(";");
            }
            let mut current = ExtractionTuple { types: TypePath::root(), spans: Vec::new() };
            for (level, node) in walk(schema, cfg, &mut rng).into_iter().enumerate() {
                if level > 0 {
                    b.push(cue(&node.name));
                }
                let pool = &pools[&node.name];
                let name = loop {
                    let mut n = pool[rng.random_range(0..pool.len())].clone();
                    if rng.random_bool(cfg.two_word) {
                        n.push(' ');
                        n.push_str(&pool[rng.random_range(0..pool.len())]);
                    }
                    if used.insert(n.clone()) {
                        break n;
                    }
                };
                let (start, end) = b.push(&name);
                current = current.extend(&node.name, Span { text: name, start, end });
                tuples.insert(current.clone());
            }
        }
        b.push(".");
        docs.push(Record { text: b.text, tuples: tuples.into_iter().collect() });
    }
    docs
}
