//! Query encoders.
//!
//! Every encoder maps a query to an `n x d` matrix of hidden states and must
//! respect the query's attention mask exactly: row `j` may depend only on
//! tokens `i` with `attention_mask[j, i]` set. Both encoders here take each
//! token's neighborhood from the layer inputs, so the guarantee holds at any
//! depth.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::EncodedQuery;

pub trait Encoder: Send + Sync {
    fn hidden_dim(&self) -> usize;
    fn encode(&self, query: &EncodedQuery) -> Result<Array2<f64>>;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Untrained deterministic encoder for pipeline tests.
///
/// A row is a pseudo-random function of the token's id, position and
/// segment plus the mean of pseudo-random vectors of its visible neighbors'
/// ids. Neighbor contributions are summed in sorted-id order, so the row
/// depends on the neighbor multiset only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEncoder {
    pub dim: usize,
    pub seed: u64,
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    fn vector(&self, key: u64, out: &mut [f64], scale: f64) {
        let mut state = splitmix(self.seed ^ key);
        for v in out.iter_mut() {
            state = splitmix(state);
            *v += scale * ((state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0);
        }
    }
}

impl Encoder for HashEncoder {
    fn hidden_dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, query: &EncodedQuery) -> Result<Array2<f64>> {
        let n = query.len();
        let mut h = Array2::zeros((n, self.dim));
        for j in 0..n {
            let mut row = vec![0.0; self.dim];
            let own = (query.tokens[j] as u64)
                ^ ((query.position_ids[j] as u64) << 24)
                ^ ((query.segment_ids[j] as u64) << 48);
            self.vector(splitmix(own), &mut row, 1.0);
            let mut visible: Vec<u32> = (0..n)
                .filter(|&i| query.attention_mask[[j, i]])
                .map(|i| query.tokens[i])
                .collect();
            visible.sort_unstable();
            let scale = 1.0 / visible.len() as f64;
            for id in visible {
                self.vector(splitmix(0xa5a5_0000_0000 | id as u64), &mut row, scale);
            }
            h.row_mut(j).assign(&ArrayView1::from(&row));
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixLayer {
    pub self_w: Array2<f64>,
    pub nbr_w: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Small trainable encoder.
///
/// `x_j = tok[id_j] + pos[bucket(p_j)] + seg[s_j]`, `c_j` is the mean of
/// `x_i` over the tokens `j` attends to, and each layer computes
/// `h' = h + tanh(W_self h + W_nbr c + b)`. The mean is summed in
/// (token, position, segment) order, so reordering the segments of a query
/// permutes the output rows bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyEncoder {
    pub tok: Array2<f64>,
    pub pos: Array2<f64>,
    pub seg: Array2<f64>,
    pub layers: Vec<MixLayer>,
}

pub const SEGMENT_COUNT: usize = 3;

/// Activations kept from the forward pass for backpropagation.
pub struct EncoderTrace {
    context: Array2<f64>,
    hidden: Vec<Array2<f64>>,
    acts: Vec<Array2<f64>>,
}

impl EncoderTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.hidden.last().expect("trace holds the input layer")
    }
}

impl TinyEncoder {
    pub fn new(vocab_size: usize, dim: usize, layers: usize, max_positions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize, a: f64| {
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
        };
        let emb = 0.5;
        let w = 1.0 / (dim as f64).sqrt();
        let tok = uniform(vocab_size, dim, emb);
        let pos = uniform(max_positions.max(1), dim, emb);
        let seg = uniform(SEGMENT_COUNT, dim, emb);
        let layers = (0..layers)
            .map(|_| MixLayer {
                self_w: uniform(dim, dim, w),
                nbr_w: uniform(dim, dim, w),
                bias: Array1::zeros(dim),
            })
            .collect();
        Self { tok, pos, seg, layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tok: Array2::zeros(self.tok.raw_dim()),
            pos: Array2::zeros(self.pos.raw_dim()),
            seg: Array2::zeros(self.seg.raw_dim()),
            layers: self
                .layers
                .iter()
                .map(|l| MixLayer {
                    self_w: Array2::zeros(l.self_w.raw_dim()),
                    nbr_w: Array2::zeros(l.nbr_w.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.tok.ncols()
    }

    pub fn vocab_size(&self) -> usize {
        self.tok.nrows()
    }

    pub fn max_positions(&self) -> usize {
        self.pos.nrows()
    }

    fn bucket(&self, position: usize) -> usize {
        position.min(self.pos.nrows() - 1)
    }

    pub fn forward(&self, query: &EncodedQuery) -> Result<EncoderTrace> {
        let n = query.len();
        let d = self.dim();
        let mut x = Array2::zeros((n, d));
        for j in 0..n {
            let id = query.tokens[j];
            if id as usize >= self.vocab_size() {
                return Err(Error::Vocabulary { id, size: self.vocab_size() });
            }
            let mut row = x.row_mut(j);
            row += &self.tok.row(id as usize);
            row += &self.pos.row(self.bucket(query.position_ids[j]));
            row += &self.seg.row(query.segment_ids[j] as usize);
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (query.tokens[i], self.bucket(query.position_ids[i]), query.segment_ids[i]));
        let mut context = Array2::zeros((n, d));
        for j in 0..n {
            let mut row = context.row_mut(j);
            let mut count = 0usize;
            for &i in &order {
                if query.attention_mask[[j, i]] {
                    row += &x.row(i);
                    count += 1;
                }
            }
            row /= count as f64;
        }

        let mut hidden = vec![x];
        let mut acts = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let h = hidden.last().unwrap();
            let mut u = h.dot(&layer.self_w.t()) + context.dot(&layer.nbr_w.t());
            u += &layer.bias;
            let act = u.mapv(f64::tanh);
            hidden.push(h + &act);
            acts.push(act);
        }
        Ok(EncoderTrace { context, hidden, acts })
    }

    /// Accumulates parameter gradients into `grads` given `d_out = dL/dh`.
    pub fn backward(&self, query: &EncodedQuery, trace: &EncoderTrace, d_out: Array2<f64>, grads: &mut TinyEncoder) {
        let n = query.len();
        let mut dh = d_out;
        let mut dctx = Array2::<f64>::zeros(trace.context.raw_dim());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let du = &dh * &trace.acts[l].mapv(|a| 1.0 - a * a);
            let g = &mut grads.layers[l];
            g.self_w += &du.t().dot(&trace.hidden[l]);
            g.nbr_w += &du.t().dot(&trace.context);
            g.bias += &du.sum_axis(Axis(0));
            dctx += &du.dot(&layer.nbr_w);
            dh += &du.dot(&layer.self_w);
        }
        for j in 0..n {
            let count = (0..n).filter(|&i| query.attention_mask[[j, i]]).count() as f64;
            let share = dctx.row(j).mapv(|v| v / count);
            for i in 0..n {
                if query.attention_mask[[j, i]] {
                    let mut row = dh.row_mut(i);
                    row += &share;
                }
            }
        }
        for j in 0..n {
            let row = dh.row(j);
            let mut t = grads.tok.row_mut(query.tokens[j] as usize);
            t += &row;
            let mut p = grads.pos.row_mut(self.bucket(query.position_ids[j]));
            p += &row;
            let mut s = grads.seg.row_mut(query.segment_ids[j] as usize);
            s += &row;
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.tok.as_slice().unwrap(),
            self.pos.as_slice().unwrap(),
            self.seg.as_slice().unwrap(),
        ];
        for l in &self.layers {
            out.push(l.self_w.as_slice().unwrap());
            out.push(l.nbr_w.as_slice().unwrap());
            out.push(l.bias.as_slice().unwrap());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.tok.as_slice_mut().unwrap(),
            self.pos.as_slice_mut().unwrap(),
            self.seg.as_slice_mut().unwrap(),
        ];
        for l in &mut self.layers {
            out.push(l.self_w.as_slice_mut().unwrap());
            out.push(l.nbr_w.as_slice_mut().unwrap());
            out.push(l.bias.as_slice_mut().unwrap());
        }
        out
    }
}

impl Encoder for TinyEncoder {
    fn hidden_dim(&self) -> usize {
        self.dim()
    }

    fn encode(&self, query: &EncodedQuery) -> Result<Array2<f64>> {
        let mut trace = self.forward(query)?;
        Ok(trace.hidden.pop().unwrap())
    }
}
