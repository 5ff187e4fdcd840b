//! Rotary bilinear scoring head and thresholding.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::query::{EncodedQuery, TokenRole};

pub const ROPE_BASE: f64 = 10_000.0;

/// Rotates consecutive coordinate pairs `(2m, 2m+1)` by `position * base^(-2m/len)`.
pub fn rotary_rotate(v: ArrayView1<f64>, position: f64, base: f64) -> Array1<f64> {
    let dr = v.len();
    assert!(dr.is_multiple_of(2), "rotary dimension must be even, got {dr}");
    let mut out = Array1::zeros(dr);
    for m in 0..dr / 2 {
        let theta = position * base.powf(-2.0 * m as f64 / dr as f64);
        let (sin, cos) = theta.sin_cos();
        let (a, b) = (v[2 * m], v[2 * m + 1]);
        out[2 * m] = a * cos - b * sin;
        out[2 * m + 1] = a * sin + b * cos;
    }
    out
}

/// Affine query/key projections `d -> d_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub rope_base: f64,
}

impl ScoringParams {
    pub fn new(dim: usize, rotary_dim: usize, seed: u64) -> Self {
        assert!(rotary_dim.is_multiple_of(2), "rotary dimension must be even");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = 1.0 / (dim as f64).sqrt();
        let mut init = || Array2::from_shape_fn((rotary_dim, dim), |_| rng.random_range(-a..a));
        Self {
            wq: init(),
            bq: Array1::zeros(rotary_dim),
            wk: init(),
            bk: Array1::zeros(rotary_dim),
            rope_base: ROPE_BASE,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            wq: Array2::eye(dim),
            bq: Array1::zeros(dim),
            wk: Array2::eye(dim),
            bk: Array1::zeros(dim),
            rope_base: ROPE_BASE,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            wq: Array2::zeros(self.wq.raw_dim()),
            bq: Array1::zeros(self.bq.raw_dim()),
            wk: Array2::zeros(self.wk.raw_dim()),
            bk: Array1::zeros(self.bk.raw_dim()),
            rope_base: self.rope_base,
        }
    }

    pub fn rotary_dim(&self) -> usize {
        self.wq.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.wq.ncols()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.wq.as_slice().unwrap(),
            self.bq.as_slice().unwrap(),
            self.wk.as_slice().unwrap(),
            self.bk.as_slice().unwrap(),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.wq.as_slice_mut().unwrap(),
            self.bq.as_slice_mut().unwrap(),
            self.wk.as_slice_mut().unwrap(),
            self.bk.as_slice_mut().unwrap(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub values: Array2<f64>,
    pub valid_mask: Array2<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryLinkMatrix {
    pub bits: Array2<bool>,
}

impl BinaryLinkMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { bits: Array2::from_elem((n, n), false) }
    }

    pub fn len(&self) -> usize {
        self.bits.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Cells that carry a link: text head to text tail (`head <= tail`), text
/// token to `[T]`, and `[T]` to text token.
pub fn scoring_mask(query: &EncodedQuery) -> Array2<bool> {
    let n = query.len();
    let text = query.text_range.clone();
    let is_type = |i: usize| matches!(query.roles[i], TokenRole::TypeMarker { .. });
    Array2::from_shape_fn((n, n), |(j, k)| {
        let (tj, tk) = (text.contains(&j), text.contains(&k));
        (tj && tk && j <= k) || (tj && is_type(k)) || (is_type(j) && tk)
    })
}

/// Forward intermediates kept for backpropagation.
pub struct ScoreTrace {
    pub rq: Array2<f64>,
    pub rk: Array2<f64>,
}

fn project_rotate(h: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>, positions: &[usize], base: f64) -> Array2<f64> {
    let mut proj = h.dot(&w.t());
    proj += b;
    for (j, mut row) in proj.axis_iter_mut(Axis(0)).enumerate() {
        let rotated = rotary_rotate(row.view(), positions[j] as f64, base);
        row.assign(&rotated);
    }
    proj
}

pub fn score_with_trace(
    h: &Array2<f64>,
    positions: &[usize],
    valid_mask: &Array2<bool>,
    params: &ScoringParams,
) -> (ScoreMatrix, ScoreTrace) {
    let n = h.nrows();
    let rq = project_rotate(h, &params.wq, &params.bq, positions, params.rope_base);
    let rk = project_rotate(h, &params.wk, &params.bk, positions, params.rope_base);
    let mut values = Array2::zeros((n, n));
    for ((j, k), v) in values.indexed_iter_mut() {
        if valid_mask[[j, k]] {
            *v = rq.row(j).dot(&rk.row(k));
        }
    }
    (ScoreMatrix { values, valid_mask: valid_mask.clone() }, ScoreTrace { rq, rk })
}

/// `Z[j,k] = <R(p_j) FFNN_q(h_j), R(p_k) FFNN_k(h_k)>` on valid cells, 0 elsewhere.
pub fn score(h: &Array2<f64>, positions: &[usize], valid_mask: &Array2<bool>, params: &ScoringParams) -> ScoreMatrix {
    score_with_trace(h, positions, valid_mask, params).0
}

/// Backpropagates `dz = dL/dZ` into `grads`; returns `dL/dh`.
pub fn score_backward(
    h: &Array2<f64>,
    positions: &[usize],
    dz: &Array2<f64>,
    trace: &ScoreTrace,
    params: &ScoringParams,
    grads: &mut ScoringParams,
) -> Array2<f64> {
    let drq = dz.dot(&trace.rk);
    let drk = dz.t().dot(&trace.rq);
    let unrotate = |d: Array2<f64>| {
        let mut d = d;
        for (j, mut row) in d.axis_iter_mut(Axis(0)).enumerate() {
            let r = rotary_rotate(row.view(), -(positions[j] as f64), params.rope_base);
            row.assign(&r);
        }
        d
    };
    let dq = unrotate(drq);
    let dk = unrotate(drk);
    grads.wq += &dq.t().dot(h);
    grads.bq += &dq.sum_axis(Axis(0));
    grads.wk += &dk.t().dot(h);
    grads.bk += &dk.sum_axis(Axis(0));
    dq.dot(&params.wq) + dk.dot(&params.wk)
}

/// `bits[j,k] = valid[j,k] && Z[j,k] >= delta`.
pub fn threshold(z: &ScoreMatrix, delta: f64) -> BinaryLinkMatrix {
    let mut bits = Array2::from_elem(z.values.raw_dim(), false);
    ndarray::Zip::from(&mut bits)
        .and(&z.values)
        .and(&z.valid_mask)
        .for_each(|b, &v, &m| *b = m && v >= delta);
    BinaryLinkMatrix { bits }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn zero_rotation_is_identity() {
        let v = array![0.3, -1.2, 2.0, 0.5];
        assert_eq!(rotary_rotate(v.view(), 0.0, ROPE_BASE), v);
    }

    #[test]
    fn rotation_preserves_norm() {
        let v = array![0.6, 0.8, 0.0, 0.0, 0.0, 0.0];
        for p in [1.0, 17.0, 255.0, 1e4] {
            let r = rotary_rotate(v.view(), p, ROPE_BASE);
            assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_position_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let dr = 2 * rng.random_range(1..5);
            let q = Array1::from_shape_fn(dr, |_| rng.random_range(-1.0..1.0));
            let k = Array1::from_shape_fn(dr, |_| rng.random_range(-1.0..1.0));
            let (pj, pk) = (rng.random_range(0..600) as f64, rng.random_range(0..600) as f64);
            let lhs = rotary_rotate(q.view(), pj, ROPE_BASE).dot(&rotary_rotate(k.view(), pk, ROPE_BASE));
            let rhs = q.dot(&rotary_rotate(k.view(), pk - pj, ROPE_BASE));
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn zero_hidden_states_score_zero() {
        let h = Array2::zeros((4, 6));
        let mask = Array2::from_elem((4, 4), true);
        let z = score(&h, &[0, 1, 2, 3], &mask, &ScoringParams::new(6, 4, 1));
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn threshold_respects_mask_at_zero_delta() {
        let z = ScoreMatrix {
            values: array![[0.0, 0.0], [-0.1, 2.0]],
            valid_mask: array![[true, false], [true, true]],
        };
        let bits = threshold(&z, 0.0).bits;
        assert_eq!(bits, array![[true, false], [false, true]]);
        assert_eq!(threshold(&z, 2.5).count_ones(), 0);
    }

    #[test]
    fn threshold_matches_elementwise_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..12);
            let values = Array2::from_shape_fn((n, n), |_| rng.random_range(-2.0..2.0));
            let valid_mask = Array2::from_shape_fn((n, n), |_| rng.random_bool(0.6));
            let delta = rng.random_range(-1.0..1.0);
            let bits = threshold(&ScoreMatrix { values: values.clone(), valid_mask: valid_mask.clone() }, delta);
            for j in 0..n {
                for k in 0..n {
                    assert_eq!(bits.bits[[j, k]], valid_mask[[j, k]] && values[[j, k]] >= delta);
                }
            }
        }
    }
}
