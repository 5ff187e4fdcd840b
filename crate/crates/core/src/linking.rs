//! Token-linking decoder.
//!
//! A typed span `(head, tail, [T] k)` is asserted by three links in the
//! binary matrix: head→tail, head→k and k→tail. Nested and overlapping
//! spans decode independently.

use std::collections::BTreeSet;
use std::ops::Range;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::query::EncodedQuery;
use crate::scoring::{scoring_mask, BinaryLinkMatrix};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DecodedMention {
    pub group_index: usize,
    pub type_name: String,
    /// Inclusive text-token interval in query coordinates.
    pub span: (usize, usize),
    /// Character interval `[start, end)` in the source text.
    pub char_span: (usize, usize),
}

/// A gold mention in query coordinates, input to [`encode_targets`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GoldMention {
    pub group_index: usize,
    pub type_name: String,
    pub span: (usize, usize),
}

/// All `(head, tail, marker)` triples satisfying the three-link rule.
pub fn decode_triples(
    bits: &Array2<bool>,
    text_range: Range<usize>,
    markers: &[usize],
) -> BTreeSet<(usize, usize, usize)> {
    let mut out = BTreeSet::new();
    for head in text_range.clone() {
        let typed: Vec<usize> = markers.iter().copied().filter(|&k| bits[[head, k]]).collect();
        if typed.is_empty() {
            continue;
        }
        for tail in head..text_range.end {
            if !bits[[head, tail]] {
                continue;
            }
            for &k in &typed {
                if bits[[k, tail]] {
                    out.insert((head, tail, k));
                }
            }
        }
    }
    out
}

pub fn decode(bits: &BinaryLinkMatrix, query: &EncodedQuery) -> Vec<DecodedMention> {
    let markers: Vec<usize> = query.t_marker_map.keys().copied().collect();
    let mut out: Vec<DecodedMention> = decode_triples(&bits.bits, query.text_range.clone(), &markers)
        .into_iter()
        .map(|(head, tail, k)| {
            let slot = &query.t_marker_map[&k];
            DecodedMention {
                group_index: slot.group_index,
                type_name: slot.type_name.clone(),
                span: (head, tail),
                char_span: query.char_span(head, tail),
            }
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Gold link matrix for `gold` plus the scoring mask of `query`.
pub fn encode_targets(gold: &[GoldMention], query: &EncodedQuery) -> Result<(BinaryLinkMatrix, Array2<bool>)> {
    let valid = scoring_mask(query);
    let mut target = BinaryLinkMatrix::zeros(query.len());
    let text = &query.text_range;
    for m in gold {
        let (head, tail) = m.span;
        if head > tail || !text.contains(&head) || !text.contains(&tail) {
            return Err(Error::Target(format!(
                "span {:?} outside text tokens {:?}",
                m.span, query.text_range
            )));
        }
        let slot = crate::query::TypeSlot { group_index: m.group_index, type_name: m.type_name.clone() };
        let k = query.marker_of(&slot).ok_or_else(|| {
            Error::Target(format!(
                "type {:?} of group {} is not placed in this query",
                m.type_name, m.group_index
            ))
        })?;
        target.bits[[head, tail]] = true;
        target.bits[[head, k]] = true;
        target.bits[[k, tail]] = true;
    }
    Ok((target, valid))
}

/// True when no two distinct spans in `spans` share a head or a tail. Gold
/// sets with this property decode back to themselves exactly.
pub fn spans_unambiguous(spans: impl IntoIterator<Item = (usize, usize)>) -> bool {
    let distinct: BTreeSet<(usize, usize)> = spans.into_iter().collect();
    let heads: BTreeSet<usize> = distinct.iter().map(|s| s.0).collect();
    let tails: BTreeSet<usize> = distinct.iter().map(|s| s.1).collect();
    heads.len() == distinct.len() && tails.len() == distinct.len()
}
