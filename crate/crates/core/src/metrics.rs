//! Strict micro-averaged F1 over extraction tuples.
//!
//! Each task maps a tuple to a match key (or skips it). Keys are collected
//! per document as sets, so duplicates count once, then true positives,
//! false positives and false negatives are pooled over the corpus.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::ExtractionTuple;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Length-1 tuples: type and offsets.
    Entity,
    /// Length-2 tuples: both types and both offsets.
    RelationStrict,
    /// Length-2 tuples: relation type and both span strings.
    RelationTriplet,
    /// Length-1 tuples: event type and trigger offsets.
    EventTrigger,
    /// Length-2 tuples: event type, role and argument offsets.
    EventArgument,
    /// Length-2 tuples, full path.
    Sentiment,
    /// Length-3 tuples, full path.
    Quadruple,
    /// Tuples that no other tuple of the document extends, full path.
    Quintuple,
    /// Every tuple, full path.
    Tuple,
}

impl Task {
    pub const ALL: [Task; 9] = [
        Task::Entity,
        Task::RelationStrict,
        Task::RelationTriplet,
        Task::EventTrigger,
        Task::EventArgument,
        Task::Sentiment,
        Task::Quadruple,
        Task::Quintuple,
        Task::Tuple,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Entity => "entity",
            Task::RelationStrict => "relation-strict",
            Task::RelationTriplet => "relation-triplet",
            Task::EventTrigger => "event-trigger",
            Task::EventArgument => "event-argument",
            Task::Sentiment => "sentiment",
            Task::Quadruple => "quadruple",
            Task::Quintuple => "quintuple",
            Task::Tuple => "tuple",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Task::ALL.iter().map(|t| t.name()).collect();
                Error::Data(format!("unknown task {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum KeyPart {
    Type(String),
    Offsets(usize, usize),
    Text(String),
}

fn full_path(t: &ExtractionTuple) -> Vec<KeyPart> {
    t.types
        .0
        .iter()
        .zip(&t.spans)
        .flat_map(|(ty, s)| [KeyPart::Type(ty.clone()), KeyPart::Offsets(s.start, s.end)])
        .collect()
}

fn key(task: Task, t: &ExtractionTuple) -> Option<Vec<KeyPart>> {
    let types = &t.types.0;
    match (task, t.len()) {
        (Task::Entity | Task::EventTrigger, 1) | (Task::RelationStrict | Task::Sentiment, 2) | (Task::Quadruple, 3) => {
            Some(full_path(t))
        }
        (Task::Tuple | Task::Quintuple, _) => Some(full_path(t)),
        (Task::RelationTriplet, 2) => Some(vec![
            KeyPart::Type(types[1].clone()),
            KeyPart::Text(t.spans[0].text.clone()),
            KeyPart::Text(t.spans[1].text.clone()),
        ]),
        (Task::EventArgument, 2) => Some(vec![
            KeyPart::Type(types[0].clone()),
            KeyPart::Type(types[1].clone()),
            KeyPart::Offsets(t.spans[1].start, t.spans[1].end),
        ]),
        _ => None,
    }
}

fn is_extended(t: &ExtractionTuple, doc: &[ExtractionTuple]) -> bool {
    doc.iter().any(|o| o.len() > t.len() && o.prefix(t.len()) == *t)
}

fn keys(task: Task, doc: &[ExtractionTuple]) -> BTreeSet<Vec<KeyPart>> {
    doc.iter()
        .filter(|t| task != Task::Quintuple || !is_extended(t, doc))
        .filter_map(|t| key(task, t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MetricReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1, tp, fp, fn_ }
    }
}

/// Structured report line: `{task, precision, recall, f1, tp, fp, fn}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl TaskReport {
    pub fn new(task: Task, m: MetricReport) -> Self {
        Self { task, precision: m.precision, recall: m.recall, f1: m.f1, tp: m.tp, fp: m.fp, fn_: m.fn_ }
    }
}

/// Scores per-document predictions against per-document gold tuples.
pub fn evaluate<P, G>(task: Task, pred: &[P], gold: &[G]) -> Result<MetricReport>
where
    P: AsRef<[ExtractionTuple]>,
    G: AsRef<[ExtractionTuple]>,
{
    if pred.len() != gold.len() {
        return Err(Error::Data(format!(
            "prediction has {} records but gold has {}",
            pred.len(),
            gold.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let (p, g) = (keys(task, p.as_ref()), keys(task, g.as_ref()));
        let hit = p.intersection(&g).count();
        tp += hit;
        fp += p.len() - hit;
        fn_ += g.len() - hit;
    }
    Ok(MetricReport::from_counts(tp, fp, fn_))
}

pub fn entity_strict_f1<P: AsRef<[ExtractionTuple]>, G: AsRef<[ExtractionTuple]>>(pred: &[P], gold: &[G]) -> Result<MetricReport> {
    evaluate(Task::Entity, pred, gold)
}

pub fn relation_strict_f1<P: AsRef<[ExtractionTuple]>, G: AsRef<[ExtractionTuple]>>(pred: &[P], gold: &[G]) -> Result<MetricReport> {
    evaluate(Task::RelationStrict, pred, gold)
}

pub fn relation_triplet_f1<P: AsRef<[ExtractionTuple]>, G: AsRef<[ExtractionTuple]>>(pred: &[P], gold: &[G]) -> Result<MetricReport> {
    evaluate(Task::RelationTriplet, pred, gold)
}

pub fn event_trigger_f1<P: AsRef<[ExtractionTuple]>, G: AsRef<[ExtractionTuple]>>(pred: &[P], gold: &[G]) -> Result<MetricReport> {
    evaluate(Task::EventTrigger, pred, gold)
}

pub fn event_argument_f1<P: AsRef<[ExtractionTuple]>, G: AsRef<[ExtractionTuple]>>(pred: &[P], gold: &[G]) -> Result<MetricReport> {
    evaluate(Task::EventArgument, pred, gold)
}

pub fn sentiment_strict_f1<P: AsRef<[ExtractionTuple]>, G: AsRef<[ExtractionTuple]>>(pred: &[P], gold: &[G]) -> Result<MetricReport> {
    evaluate(Task::Sentiment, pred, gold)
}

pub fn quadruple_strict_f1<P: AsRef<[ExtractionTuple]>, G: AsRef<[ExtractionTuple]>>(pred: &[P], gold: &[G]) -> Result<MetricReport> {
    evaluate(Task::Quadruple, pred, gold)
}

pub fn quintuple_strict_f1<P: AsRef<[ExtractionTuple]>, G: AsRef<[ExtractionTuple]>>(pred: &[P], gold: &[G]) -> Result<MetricReport> {
    evaluate(Task::Quintuple, pred, gold)
}
