//! Independent reference implementations and generators shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use spanlink_core::engine::TrainingInstance;
use spanlink_core::scoring::{score, ScoringParams};
use spanlink_core::training::Model;
use spanlink_core::{Encoder, PrefixGroup, PrefixItem, Schema, SchemaNode};

/// Every `(i, j, k)` with text `i <= j`, marker `k` and all three links set.
pub fn brute_force_triples(bits: &Array2<bool>, text: &[usize], markers: &[usize]) -> BTreeSet<(usize, usize, usize)> {
    let mut out = BTreeSet::new();
    for &i in text {
        for &j in text {
            for &k in markers {
                if i <= j && bits[[i, j]] && bits[[i, k]] && bits[[k, j]] {
                    out.insert((i, j, k));
                }
            }
        }
    }
    out
}

/// The rotation as an explicit block-diagonal matrix.
pub fn rotation_matrix(dim: usize, position: f64, base: f64) -> Array2<f64> {
    let mut r = Array2::zeros((dim, dim));
    for m in 0..dim / 2 {
        let theta = position * base.powf(-2.0 * m as f64 / dim as f64);
        r[[2 * m, 2 * m]] = theta.cos();
        r[[2 * m, 2 * m + 1]] = -theta.sin();
        r[[2 * m + 1, 2 * m]] = theta.sin();
        r[[2 * m + 1, 2 * m + 1]] = theta.cos();
    }
    r
}

/// `Z[j,k] = (R(p_j) q_j)^T (R(p_k) k_k)` with explicit matrices, zero off the mask.
pub fn literal_scores(h: &Array2<f64>, positions: &[usize], mask: &Array2<bool>, p: &ScoringParams) -> Array2<f64> {
    let n = h.nrows();
    let dr = p.wq.nrows();
    let q: Vec<Array1<f64>> = (0..n)
        .map(|j| rotation_matrix(dr, positions[j] as f64, p.rope_base).dot(&(p.wq.dot(&h.row(j)) + &p.bq)))
        .collect();
    let k: Vec<Array1<f64>> = (0..n)
        .map(|j| rotation_matrix(dr, positions[j] as f64, p.rope_base).dot(&(p.wk.dot(&h.row(j)) + &p.bk)))
        .collect();
    Array2::from_shape_fn((n, n), |(a, b)| if mask[[a, b]] { q[a].dot(&k[b]) } else { 0.0 })
}

/// `log(1 + sum_neg e^z) + log(1 + sum_pos e^-z)` by direct summation.
pub fn naive_circle_loss(z: &Array2<f64>, gold: &Array2<bool>, valid: &Array2<bool>) -> f64 {
    let (mut neg, mut pos) = (0.0, 0.0);
    for j in 0..z.nrows() {
        for k in 0..z.ncols() {
            if valid[[j, k]] {
                if gold[[j, k]] {
                    pos += (-z[[j, k]]).exp();
                } else {
                    neg += z[[j, k]].exp();
                }
            }
        }
    }
    (1.0 + neg).ln() + (1.0 + pos).ln()
}

/// Summed loss of `instances` under `model`, forward pass only.
pub fn forward_loss(model: &Model, instances: &[TrainingInstance]) -> f64 {
    instances
        .iter()
        .map(|inst| {
            let h = model.encoder.encode(&inst.query).unwrap();
            let z = score(&h, &inst.query.position_ids, &inst.valid_mask, &model.scoring);
            naive_circle_loss(&z.values, &inst.gold_bits.bits, &inst.valid_mask)
        })
        .sum()
}

pub fn lowercase_word(rng: &mut ChaCha8Rng) -> String {
    const SYL: [&str; 8] = ["ka", "lo", "mi", "ne", "ru", "sa", "to", "vi"];
    (0..rng.random_range(1..=3)).map(|_| SYL[rng.random_range(0..SYL.len())]).collect()
}

/// Space-separated random words.
pub fn random_text(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words).map(|_| lowercase_word(rng)).collect::<Vec<_>>().join(" ")
}

/// A random schema of the given maximum depth and branching.
pub fn random_schema(rng: &mut ChaCha8Rng, depth: usize, branching: usize) -> Schema {
    fn level(rng: &mut ChaCha8Rng, depth: usize, branching: usize) -> Vec<SchemaNode> {
        let mut names: Vec<String> = (0..branching * 2).map(|i| format!("type{i}")).collect();
        names.shuffle(rng);
        let count = rng.random_range(1..=branching);
        names
            .into_iter()
            .take(count)
            .map(|name| SchemaNode {
                name,
                children: if depth > 1 && rng.random_bool(0.6) { level(rng, depth - 1, branching) } else { Vec::new() },
            })
            .collect()
    }
    Schema::new(level(rng, depth, branching)).unwrap()
}

/// Random prefix groups drawing candidate types from `schema` paths with children.
pub fn random_groups(rng: &mut ChaCha8Rng, schema: &Schema, count: usize) -> Vec<PrefixGroup> {
    let paths = schema.enumerate_paths();
    (0..count)
        .map(|_| {
            let internal: Vec<_> = paths.iter().filter(|p| !schema.children_of(p).unwrap().is_empty()).collect();
            let (prefix, types) = if internal.is_empty() || rng.random_bool(0.3) {
                (Vec::new(), schema.roots().iter().map(|r| r.name.clone()).collect())
            } else {
                let path = internal[rng.random_range(0..internal.len())];
                let items = path
                    .0
                    .iter()
                    .map(|t| PrefixItem { type_name: t.clone(), span_text: lowercase_word(rng), span_offsets: (0, 0) })
                    .collect();
                (items, schema.children_of(path).unwrap().into_iter().map(str::to_string).collect())
            };
            PrefixGroup { prefix_items: prefix, candidate_types: types }
        })
        .collect()
}
