//! Explicit schema instructor queries.
//!
//! A query packs one or more prefix groups in front of the text:
//!
//! ```text
//! [CLS] ([P] prefix ([T] type)+ )+ [Text] text [SEP]
//! ```
//!
//! Each group is isolated from the others: its tokens never see another
//! group's tokens, all groups share the same position numbering, and text
//! tokens only see text (plus the start marker). Type segments of one group
//! all restart at the same position id, so neither group order nor type
//! order within a group changes any token's view.

use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{Marker, TokenId, Tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_total: usize,
    pub max_esi: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_total: 512, max_esi: 256 }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<()> {
        if self.max_esi == 0 || self.max_total == 0 || self.max_esi >= self.max_total {
            return Err(Error::Data(format!(
                "limits must satisfy 0 < max_esi < max_total, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One element of a prefix: a previously extracted span and its type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrefixItem {
    pub type_name: String,
    pub span_text: String,
    pub span_offsets: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixGroup {
    pub prefix_items: Vec<PrefixItem>,
    pub candidate_types: Vec<String>,
}

impl PrefixGroup {
    pub fn root(candidate_types: Vec<String>) -> Self {
        Self { prefix_items: Vec::new(), candidate_types }
    }
}

/// Renders prefix items as `type: span` joined by `,`.
pub fn render_prefix(items: &[PrefixItem]) -> String {
    items
        .iter()
        .map(|item| format!("{}: {}", item.type_name, item.span_text))
        .collect::<Vec<_>>()
        .join(",")
}

/// What part of the query a token belongs to. `group` is the index into the
/// query's own group list; `slot` indexes that group's candidate types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenRole {
    Start,
    PrefixMarker { group: usize },
    PrefixToken { group: usize },
    TypeMarker { group: usize, slot: usize },
    TypeToken { group: usize, slot: usize },
    TextMarker,
    TextToken,
    End,
}

impl TokenRole {
    fn is_text_side(self) -> bool {
        matches!(self, TokenRole::TextMarker | TokenRole::TextToken | TokenRole::End)
    }

    fn prefix_group(self) -> Option<usize> {
        match self {
            TokenRole::PrefixMarker { group } | TokenRole::PrefixToken { group } => Some(group),
            _ => None,
        }
    }

    fn type_segment(self) -> Option<(usize, usize)> {
        match self {
            TokenRole::TypeMarker { group, slot } | TokenRole::TypeToken { group, slot } => {
                Some((group, slot))
            }
            _ => None,
        }
    }

    pub fn segment_id(self) -> u8 {
        match self {
            TokenRole::PrefixMarker { .. } | TokenRole::PrefixToken { .. } => 1,
            TokenRole::TypeMarker { .. } | TokenRole::TypeToken { .. } => 2,
            _ => 0,
        }
    }
}

/// A `[T]` marker's meaning: which input group and which candidate type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeSlot {
    pub group_index: usize,
    pub type_name: String,
}

/// A group as placed in one query; `candidate_types` may be a subset of the
/// input group's when the group was split across queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryGroup {
    pub group_index: usize,
    pub prefix_items: Vec<PrefixItem>,
    pub candidate_types: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EncodedQuery {
    pub tokens: Vec<TokenId>,
    pub roles: Vec<TokenRole>,
    pub position_ids: Vec<usize>,
    pub attention_mask: Array2<bool>,
    pub segment_ids: Vec<u8>,
    pub groups: Vec<QueryGroup>,
    pub p_marker_index: Vec<usize>,
    pub t_marker_map: BTreeMap<usize, TypeSlot>,
    pub text_range: Range<usize>,
    /// Character interval in the source text of each token in `text_range`.
    pub source_char_map: Vec<(usize, usize)>,
    pub text: String,
}

impl EncodedQuery {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of instructor tokens (everything between `[CLS]` and `[Text]`).
    pub fn esi_len(&self) -> usize {
        self.text_range.start - 2
    }

    /// Character interval covered by text tokens `head..=tail`.
    pub fn char_span(&self, head: usize, tail: usize) -> (usize, usize) {
        let base = self.text_range.start;
        (self.source_char_map[head - base].0, self.source_char_map[tail - base].1)
    }

    /// Finds the text-token interval whose characters are exactly `[start, end)`.
    pub fn token_span(&self, start: usize, end: usize) -> Option<(usize, usize)> {
        let base = self.text_range.start;
        let head = self.source_char_map.iter().position(|&(s, _)| s == start)?;
        let tail = self.source_char_map.iter().rposition(|&(_, e)| e == end)?;
        (head <= tail).then_some((base + head, base + tail))
    }

    pub fn marker_of(&self, slot: &TypeSlot) -> Option<usize> {
        self.t_marker_map.iter().find(|(_, s)| *s == slot).map(|(&k, _)| k)
    }

    /// Detokenized form: markers by name, one space between a marker and
    /// following ordinary tokens.
    pub fn render(&self, tok: &dyn Tokenize) -> String {
        let mut out = String::new();
        let mut run: Vec<TokenId> = Vec::new();
        let mut after_marker = false;
        for &id in &self.tokens {
            match Marker::from_id(id) {
                Some(marker) => {
                    out.push_str(&tok.decode(&run));
                    run.clear();
                    out.push_str(marker.as_str());
                    after_marker = true;
                }
                None => {
                    if after_marker {
                        out.push(' ');
                        after_marker = false;
                    }
                    run.push(id);
                }
            }
        }
        out.push_str(&tok.decode(&run));
        out
    }
}

/// Prompt isolation mask over a token layout.
pub fn isolation_mask(roles: &[TokenRole]) -> Array2<bool> {
    let n = roles.len();
    Array2::from_shape_fn((n, n), |(row, col)| attends(roles[row], roles[col]) || row == col)
}

fn attends(from: TokenRole, to: TokenRole) -> bool {
    if from == TokenRole::Start || to == TokenRole::Start {
        return true;
    }
    if from.is_text_side() {
        return to.is_text_side();
    }
    if to.is_text_side() {
        return true;
    }
    if let Some(g) = from.prefix_group() {
        return to.prefix_group() == Some(g) || to.type_segment().is_some_and(|(h, _)| h == g);
    }
    if let Some((g, s)) = from.type_segment() {
        return to.type_segment() == Some((g, s)) || to.prefix_group() == Some(g);
    }
    false
}

/// Position ids: start marker and every `[P]` at 0, prefix tokens `1..=L_p`,
/// every type segment of a group from `L_p + 1`, text from `text_base`.
pub fn assign_positions(roles: &[TokenRole], text_base: usize) -> Vec<usize> {
    let mut prefix_len: BTreeMap<usize, usize> = BTreeMap::new();
    for role in roles {
        if let TokenRole::PrefixToken { group } = role {
            *prefix_len.entry(*group).or_default() += 1;
        }
    }
    let mut prefix_seen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut type_offset = 0;
    let mut text_seen = 0;
    roles
        .iter()
        .map(|role| match *role {
            TokenRole::Start | TokenRole::PrefixMarker { .. } => 0,
            TokenRole::PrefixToken { group } => {
                let seen = prefix_seen.entry(group).or_default();
                *seen += 1;
                *seen
            }
            TokenRole::TypeMarker { group, .. } => {
                type_offset = 0;
                prefix_len.get(&group).copied().unwrap_or(0) + 1
            }
            TokenRole::TypeToken { group, .. } => {
                type_offset += 1;
                prefix_len.get(&group).copied().unwrap_or(0) + 1 + type_offset
            }
            TokenRole::TextMarker => text_base.saturating_sub(1),
            TokenRole::TextToken => {
                text_seen += 1;
                text_base + text_seen - 1
            }
            TokenRole::End => text_base + text_seen,
        })
        .collect()
}

struct GroupTokens {
    prefix: Vec<TokenId>,
    types: Vec<Vec<TokenId>>,
}

/// A contiguous run of one group's candidate types placed in one query.
struct Unit {
    group: usize,
    slots: Range<usize>,
    cost: usize,
}

/// Builds queries for `groups` over `text`, packing groups greedily in
/// order and splitting a group's candidate types when its instructor alone
/// would exceed the budget.
pub fn build_queries(
    groups: &[PrefixGroup],
    text: &str,
    tok: &dyn Tokenize,
    limits: Limits,
) -> Result<Vec<EncodedQuery>> {
    limits.validate()?;
    let text_tokens = tok.encode(text);
    let fixed = 3 + text_tokens.len();
    if fixed >= limits.max_total {
        return Err(Error::InputTooLong(format!(
            "text needs {} tokens, limit leaves room for {}",
            text_tokens.len(),
            limits.max_total.saturating_sub(4)
        )));
    }
    let budget = limits.max_esi.min(limits.max_total - fixed);

    let encoded: Vec<GroupTokens> = groups
        .iter()
        .map(|g| GroupTokens {
            prefix: tok.encode(&render_prefix(&g.prefix_items)).iter().map(|t| t.id).collect(),
            types: g
                .candidate_types
                .iter()
                .map(|t| tok.encode(t).iter().map(|t| t.id).collect())
                .collect(),
        })
        .collect();

    let mut units = Vec::new();
    for (gi, (group, enc)) in groups.iter().zip(&encoded).enumerate() {
        if group.candidate_types.is_empty() {
            return Err(Error::Data(format!("prefix group {gi} has no candidate types")));
        }
        let head = 1 + enc.prefix.len();
        let mut start = 0;
        let mut cost = head;
        for (slot, ty) in enc.types.iter().enumerate() {
            let c = 1 + ty.len();
            if head + c > budget {
                return Err(Error::InputTooLong(format!(
                    "prefix group {gi} with type {:?} needs {} instructor tokens, budget is {budget}",
                    group.candidate_types[slot],
                    head + c
                )));
            }
            if cost + c > budget {
                units.push(Unit { group: gi, slots: start..slot, cost });
                start = slot;
                cost = head;
            }
            cost += c;
        }
        units.push(Unit { group: gi, slots: start..enc.types.len(), cost });
    }

    let mut batches: Vec<Vec<Unit>> = Vec::new();
    let mut used = 0;
    for unit in units {
        match batches.last_mut() {
            Some(batch) if used + unit.cost <= budget => {
                used += unit.cost;
                batch.push(unit);
            }
            _ => {
                used = unit.cost;
                batches.push(vec![unit]);
            }
        }
    }

    Ok(batches
        .into_iter()
        .map(|batch| assemble(&batch, groups, &encoded, &text_tokens, text, limits))
        .collect())
}

fn assemble(
    batch: &[Unit],
    groups: &[PrefixGroup],
    encoded: &[GroupTokens],
    text_tokens: &[crate::tokenizer::Token],
    text: &str,
    limits: Limits,
) -> EncodedQuery {
    let mut tokens = vec![Marker::Cls.id()];
    let mut roles = vec![TokenRole::Start];
    let mut query_groups = Vec::with_capacity(batch.len());
    let mut p_marker_index = Vec::with_capacity(batch.len());
    let mut t_marker_map = BTreeMap::new();

    for (local, unit) in batch.iter().enumerate() {
        let group = &groups[unit.group];
        let enc = &encoded[unit.group];
        p_marker_index.push(tokens.len());
        tokens.push(Marker::Prefix.id());
        roles.push(TokenRole::PrefixMarker { group: local });
        for &id in &enc.prefix {
            tokens.push(id);
            roles.push(TokenRole::PrefixToken { group: local });
        }
        for (slot, orig) in unit.slots.clone().enumerate() {
            t_marker_map.insert(
                tokens.len(),
                TypeSlot { group_index: unit.group, type_name: group.candidate_types[orig].clone() },
            );
            tokens.push(Marker::Type.id());
            roles.push(TokenRole::TypeMarker { group: local, slot });
            for &id in &enc.types[orig] {
                tokens.push(id);
                roles.push(TokenRole::TypeToken { group: local, slot });
            }
        }
        query_groups.push(QueryGroup {
            group_index: unit.group,
            prefix_items: group.prefix_items.clone(),
            candidate_types: group.candidate_types[unit.slots.clone()].to_vec(),
        });
    }

    tokens.push(Marker::Text.id());
    roles.push(TokenRole::TextMarker);
    let text_start = tokens.len();
    for t in text_tokens {
        tokens.push(t.id);
        roles.push(TokenRole::TextToken);
    }
    let text_range = text_start..tokens.len();
    tokens.push(Marker::Sep.id());
    roles.push(TokenRole::End);

    EncodedQuery {
        position_ids: assign_positions(&roles, limits.max_esi),
        attention_mask: isolation_mask(&roles),
        segment_ids: roles.iter().map(|r| r.segment_id()).collect(),
        tokens,
        roles,
        groups: query_groups,
        p_marker_index,
        t_marker_map,
        text_range,
        source_char_map: text_tokens.iter().map(|t| (t.start, t.end)).collect(),
        text: text.to_string(),
    }
}
