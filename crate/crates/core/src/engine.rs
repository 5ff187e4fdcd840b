//! Recursive extraction.
//!
//! Depth 1 queries the schema roots with an empty prefix. Every mention
//! whose type has children in the schema becomes the prefix of a group at
//! the next depth, with those children as candidate types. All groups of one
//! depth are packed into as few queries as the limits allow. Every decoded
//! mention is a finished tuple, whether or not it is recursed into.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ExtractionTuple, Record, Span};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::linking::{decode, encode_targets, DecodedMention, GoldMention};
use crate::query::{build_queries, EncodedQuery, Limits, PrefixGroup, PrefixItem};
use crate::schema::{Schema, TypePath};
use crate::scoring::{score, scoring_mask, threshold, BinaryLinkMatrix, ScoringParams};
use crate::tokenizer::Tokenize;

/// Produces the thresholded link matrix of a query.
pub trait LinkScorer: Sync {
    fn link(&self, query: &EncodedQuery) -> Result<BinaryLinkMatrix>;
}

pub struct ModelScorer<'a, E: ?Sized> {
    pub encoder: &'a E,
    pub params: &'a ScoringParams,
    pub delta: f64,
}

impl<E: Encoder + ?Sized> LinkScorer for ModelScorer<'_, E> {
    fn link(&self, query: &EncodedQuery) -> Result<BinaryLinkMatrix> {
        let h = self.encoder.encode(query)?;
        let z = score(&h, &query.position_ids, &scoring_mask(query), self.params);
        Ok(threshold(&z, self.delta))
    }
}

/// Returns the gold link matrix of every query, built from annotated tuples.
pub struct GoldScorer<'a> {
    pub tuples: &'a [ExtractionTuple],
}

impl GoldScorer<'_> {
    pub fn gold_mentions(&self, query: &EncodedQuery) -> Result<Vec<GoldMention>> {
        let mut out = BTreeSet::new();
        for group in &query.groups {
            let n = group.prefix_items.len();
            for tuple in self.tuples.iter().filter(|t| t.len() == n + 1) {
                let matches_prefix = group
                    .prefix_items
                    .iter()
                    .zip(tuple.types.0.iter().zip(&tuple.spans))
                    .all(|(item, (ty, span))| item.type_name == *ty && item.span_text == span.text);
                let child_type = &tuple.types.0[n];
                if !matches_prefix || !group.candidate_types.contains(child_type) {
                    continue;
                }
                let span = &tuple.spans[n];
                let tokens = query.token_span(span.start, span.end).ok_or_else(|| {
                    Error::Target(format!(
                        "span {:?} at {}..{} is not aligned to token boundaries",
                        span.text, span.start, span.end
                    ))
                })?;
                out.insert(GoldMention { group_index: group.group_index, type_name: child_type.clone(), span: tokens });
            }
        }
        Ok(out.into_iter().collect())
    }
}

impl LinkScorer for GoldScorer<'_> {
    fn link(&self, query: &EncodedQuery) -> Result<BinaryLinkMatrix> {
        Ok(encode_targets(&self.gold_mentions(query)?, query)?.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TypeOrder {
    /// Candidate types in schema document order.
    #[default]
    Schema,
    /// Candidate types sorted by name.
    Lexicographic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Packing {
    /// Pack all groups of a depth into shared queries.
    #[default]
    Shared,
    /// One query (or more, if split) per group.
    Single,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractionConfig {
    pub limits: Limits,
    pub type_order: TypeOrder,
    pub packing: Packing,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResultSet {
    pub tuples: BTreeSet<ExtractionTuple>,
    pub per_depth: BTreeMap<usize, BTreeSet<ExtractionTuple>>,
    pub queries_issued: usize,
}

impl ResultSet {
    pub fn is_prefix_closed(&self) -> bool {
        self.tuples.iter().all(|t| t.len() <= 1 || self.tuples.contains(&t.prefix(t.len() - 1)))
    }
}

/// Groups that share a prefix string: same type path and span texts. All
/// parent tuples with that rendering are kept so children extend each of them.
#[derive(Debug, Clone)]
pub struct PendingGroup {
    pub types: TypePath,
    pub texts: Vec<String>,
    pub parents: Vec<ExtractionTuple>,
    pub candidates: Vec<String>,
}

impl PendingGroup {
    pub fn to_prefix_group(&self) -> PrefixGroup {
        let first = &self.parents[0];
        PrefixGroup {
            prefix_items: first
                .types
                .0
                .iter()
                .zip(&first.spans)
                .map(|(t, s)| PrefixItem { type_name: t.clone(), span_text: s.text.clone(), span_offsets: (s.start, s.end) })
                .collect(),
            candidate_types: self.candidates.clone(),
        }
    }
}

fn candidates(schema: &Schema, path: &TypePath, order: TypeOrder) -> Result<Vec<String>> {
    let mut out: Vec<String> = schema.children_of(path)?.into_iter().map(str::to_string).collect();
    if order == TypeOrder::Lexicographic {
        out.sort();
    }
    Ok(out)
}

/// Groups for the next depth: one per distinct (types, texts) among
/// `tuples` whose type node has children.
pub fn next_groups<'a>(
    tuples: impl IntoIterator<Item = &'a ExtractionTuple>,
    schema: &Schema,
    order: TypeOrder,
) -> Result<Vec<PendingGroup>> {
    let mut by_key: BTreeMap<(TypePath, Vec<String>), Vec<ExtractionTuple>> = BTreeMap::new();
    for tuple in tuples {
        let key = (tuple.types.clone(), tuple.span_texts().into_iter().map(str::to_string).collect());
        by_key.entry(key).or_default().push(tuple.clone());
    }
    let mut out = Vec::new();
    for ((types, texts), mut parents) in by_key {
        let cands = candidates(schema, &types, order)?;
        if cands.is_empty() {
            continue;
        }
        parents.sort();
        parents.dedup();
        out.push(PendingGroup { types, texts, parents, candidates: cands });
    }
    Ok(out)
}

pub fn root_group(schema: &Schema, order: TypeOrder) -> Result<Option<PendingGroup>> {
    let cands = candidates(schema, &TypePath::root(), order)?;
    Ok((!cands.is_empty()).then(|| PendingGroup {
        types: TypePath::root(),
        texts: Vec::new(),
        parents: vec![ExtractionTuple { types: TypePath::root(), spans: Vec::new() }],
        candidates: cands,
    }))
}

pub fn queries_for(
    groups: &[PendingGroup],
    text: &str,
    tok: &dyn Tokenize,
    cfg: &ExtractionConfig,
) -> Result<Vec<EncodedQuery>> {
    let prefix_groups: Vec<PrefixGroup> = groups.iter().map(PendingGroup::to_prefix_group).collect();
    match cfg.packing {
        Packing::Shared => build_queries(&prefix_groups, text, tok, cfg.limits),
        Packing::Single => {
            let mut out = Vec::new();
            for (i, group) in prefix_groups.iter().enumerate() {
                for mut q in build_queries(std::slice::from_ref(group), text, tok, cfg.limits)? {
                    for g in &mut q.groups {
                        g.group_index = i;
                    }
                    for slot in q.t_marker_map.values_mut() {
                        slot.group_index = i;
                    }
                    out.push(q);
                }
            }
            Ok(out)
        }
    }
}

/// Extends each mention's parent tuples by the mention; deduplicated.
pub fn merge(mentions: &[DecodedMention], groups: &[PendingGroup], text: &str) -> BTreeSet<ExtractionTuple> {
    let mut out = BTreeSet::new();
    for m in mentions {
        let span = Span::from_text(text, m.char_span.0, m.char_span.1);
        for parent in &groups[m.group_index].parents {
            out.insert(parent.extend(&m.type_name, span.clone()));
        }
    }
    out
}

pub fn extract(
    text: &str,
    schema: &Schema,
    tok: &dyn Tokenize,
    scorer: &dyn LinkScorer,
    cfg: &ExtractionConfig,
) -> Result<ResultSet> {
    let mut result = ResultSet::default();
    let mut frontier: Vec<PendingGroup> = root_group(schema, cfg.type_order)?.into_iter().collect();
    let mut depth = 1;
    while !frontier.is_empty() {
        let queries = queries_for(&frontier, text, tok, cfg)?;
        result.queries_issued += queries.len();
        let mut mentions = Vec::new();
        for q in &queries {
            mentions.extend(decode(&scorer.link(q)?, q));
        }
        let found = merge(&mentions, &frontier, text);
        frontier = next_groups(&found, schema, cfg.type_order)?;
        result.tuples.extend(found.iter().cloned());
        if !found.is_empty() {
            result.per_depth.insert(depth, found);
        }
        depth += 1;
    }
    Ok(result)
}

/// Extracts every text, fanning documents out over `workers` threads.
/// Output order follows input order.
pub fn extract_corpus<S: AsRef<str> + Sync>(
    texts: &[S],
    schema: &Schema,
    tok: &dyn Tokenize,
    scorer: &dyn LinkScorer,
    cfg: &ExtractionConfig,
    workers: usize,
) -> Result<Vec<ResultSet>> {
    let run = |t: &S| extract(t.as_ref(), schema, tok, scorer, cfg);
    if workers <= 1 {
        return texts.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Data(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| texts.par_iter().map(run).collect())
}

/// Teacher-forced training example for one query.
#[derive(Debug, Clone)]
pub struct TrainingInstance {
    /// Index in the training set.
    pub id: usize,
    pub query: EncodedQuery,
    pub gold_bits: BinaryLinkMatrix,
    pub valid_mask: Array2<bool>,
    pub doc_index: usize,
    pub depth: usize,
}

/// Builds one instance per query over gold prefixes: the empty prefix, then
/// every gold tuple whose type has children, depth by depth. Head-to-tail
/// targets are shared across each document's instances, see
/// [`share_span_targets`].
pub fn build_training_set(
    docs: &[Record],
    schema: &Schema,
    tok: &dyn Tokenize,
    cfg: &ExtractionConfig,
) -> Result<Vec<TrainingInstance>> {
    let mut out = Vec::new();
    for (doc_index, doc) in docs.iter().enumerate() {
        for tuple in &doc.tuples {
            tuple
                .validate(&doc.text, schema)
                .map_err(|e| Error::Data(format!("record {}: {e}", doc_index + 1)))?;
        }
        let gold = GoldScorer { tuples: &doc.tuples };
        let mut frontier: Vec<PendingGroup> = root_group(schema, cfg.type_order)?.into_iter().collect();
        let mut depth = 1;
        while !frontier.is_empty() {
            for query in queries_for(&frontier, &doc.text, tok, cfg)? {
                let mentions = gold.gold_mentions(&query)?;
                let (gold_bits, valid_mask) = encode_targets(&mentions, &query)?;
                out.push(TrainingInstance { id: out.len(), query, gold_bits, valid_mask, doc_index, depth });
            }
            let level = doc.tuples.iter().filter(|t| t.len() == depth);
            frontier = next_groups(level, schema, cfg.type_order)?;
            depth += 1;
        }
    }
    share_span_targets(&mut out);
    Ok(out)
}

/// Unions the head-to-tail targets of all instances of a document.
///
/// Text tokens never see the prompt, so the text-to-text block of the score
/// matrix is the same in every query over a text. Without this, a span that
/// is gold at one depth and absent at another gets contradictory labels for
/// one and the same score. The extra head-to-tail links decode to nothing
/// on their own; a mention still needs both links to a type marker.
pub fn share_span_targets(instances: &mut [TrainingInstance]) {
    let mut spans: BTreeMap<usize, BTreeSet<(usize, usize)>> = BTreeMap::new();
    for inst in instances.iter() {
        let text = inst.query.text_range.clone();
        let entry = spans.entry(inst.doc_index).or_default();
        for i in text.clone() {
            for j in i..text.end {
                if inst.gold_bits.bits[[i, j]] {
                    entry.insert((i - text.start, j - text.start));
                }
            }
        }
    }
    for inst in instances.iter_mut() {
        let base = inst.query.text_range.start;
        for &(i, j) in &spans[&inst.doc_index] {
            inst.gold_bits.bits[[base + i, base + j]] = true;
        }
    }
}
