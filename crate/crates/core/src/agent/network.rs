//! Transformer encoder with an appended readout token.
//!
//! The input is the episode's `M` slot vectors plus one all-zero readout token
//! at position `M`. Tokens are projected to the hidden width and given a
//! learned positional embedding, then pass through pre-norm encoder layers
//! (multi-head scaled dot-product attention and a ReLU feed-forward block,
//! both residual). The readout token's final hidden state feeds a two-layer
//! tanh MLP head.
//!
//! Attention mask, with `f` filled slots:
//!
//! - filled slot rows attend to filled slots only (never the readout token);
//! - the readout row attends to every filled slot and to itself;
//! - empty padding slots are attended by nobody.
//!
//! Since no unmasked path leads from a padding slot to the readout token, the
//! padding rows are dropped before the computation: the encoder runs on the
//! `f + 1` live tokens with their original positions. Masked attention
//! weights are exact zeros, so this is numerically identical to carrying the
//! padding along.


use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ff_width: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            hidden: 16,
            ff_width: 64,
        }
    }
}

/// Shapes needed to build one network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub config: NetworkConfig,
    /// Width of each slot vector.
    pub input_dim: usize,
    /// Number of state slots `M`.
    pub slots: usize,
    pub output_dim: usize,
}

const PER_LAYER: usize = 16;

// tensor indices inside one layer block
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const BQ: usize = 3;
const WK: usize = 4;
const BK: usize = 5;
const WV: usize = 6;
const BV: usize = 7;
const WO: usize = 8;
const BO: usize = 9;
const LN2_G: usize = 10;
const LN2_B: usize = 11;
const FF_W1: usize = 12;
const FF_B1: usize = 13;
const FF_W2: usize = 14;
const FF_B2: usize = 15;

impl NetworkShape {
    fn layer_base(&self, layer: usize) -> usize {
        3 + layer * PER_LAYER
    }

    fn tail_base(&self) -> usize {
        3 + self.config.layers * PER_LAYER
    }

    pub fn tensor_count(&self) -> usize {
        self.tail_base() + 6
    }

    /// `(name, rows, cols)` of every parameter tensor, in storage order.
    pub fn tensor_specs(&self) -> Vec<(String, usize, usize)> {
        let h = self.config.hidden;
        let ff = self.config.ff_width;
        let mut specs = vec![
            ("input.w".to_string(), self.input_dim, h),
            ("input.b".to_string(), 1, h),
            ("position".to_string(), self.slots + 1, h),
        ];
        for l in 0..self.config.layers {
            let p = |n: &str| format!("layer{l}.{n}");
            specs.extend([
                (p("ln1.g"), 1, h),
                (p("ln1.b"), 1, h),
                (p("attn.wq"), h, h),
                (p("attn.bq"), 1, h),
                (p("attn.wk"), h, h),
                (p("attn.bk"), 1, h),
                (p("attn.wv"), h, h),
                (p("attn.bv"), 1, h),
                (p("attn.wo"), h, h),
                (p("attn.bo"), 1, h),
                (p("ln2.g"), 1, h),
                (p("ln2.b"), 1, h),
                (p("ff.w1"), h, ff),
                (p("ff.b1"), 1, ff),
                (p("ff.w2"), ff, h),
                (p("ff.b2"), 1, h),
            ]);
        }
        specs.extend([
            ("final_ln.g".to_string(), 1, h),
            ("final_ln.b".to_string(), 1, h),
            ("head.w1".to_string(), h, h),
            ("head.b1".to_string(), 1, h),
            ("head.w2".to_string(), h, self.output_dim),
            ("head.b2".to_string(), 1, self.output_dim),
        ]);
        specs
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.layers == 0 || c.heads == 0 || c.hidden == 0 || c.ff_width == 0 {
            return Err(Error::Config("network sizes must be positive".into()));
        }
        if c.hidden % c.heads != 0 {
            return Err(Error::Config(format!(
                "hidden width {} not divisible by {} heads",
                c.hidden, c.heads
            )));
        }
        if self.input_dim == 0 || self.slots == 0 || self.output_dim == 0 {
            return Err(Error::Config("network input, slot and output sizes must be positive".into()));
        }
        Ok(())
    }

    /// Fresh parameters: orthogonal projections (gain √2), zero biases, unit
    /// layer-norm gains, small random positions, and `head_gain` on the last
    /// head layer.
    pub fn init(&self, head_gain: f64, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        let gain = std::f64::consts::SQRT_2;
        let specs = self.tensor_specs();
        let last = specs.len() - 2;
        specs
            .iter()
            .enumerate()
            .map(|(i, (name, rows, cols))| {
                if name.ends_with(".g") {
                    Tensor::from_vec(*rows, *cols, vec![1.0; rows * cols])
                } else if name == "position" {
                    let data = (0..rows * cols)
                        .map(|_| 0.02 * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    Tensor::from_vec(*rows, *cols, data)
                } else if *rows == 1 {
                    Tensor::zeros(*rows, *cols)
                } else {
                    let g = if i == last { head_gain } else { gain };
                    orthogonal(*rows, *cols, g, rng)
                }
            })
            .collect()
    }
}

/// `rows × cols` matrix with orthonormal rows or columns (whichever are
/// fewer), scaled by `gain`.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let (long, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // `short` orthonormal vectors of length `long`, modified Gram-Schmidt
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut t = Tensor::zeros(rows, cols);
    for (s, b) in basis.iter().enumerate() {
        for (l, &x) in b.iter().enumerate() {
            let (r, c) = if rows >= cols { (l, s) } else { (s, l) };
            t.data[r * cols + c] = gain * x;
        }
    }
    t
}

/// Runs the network on one state and returns the head output (`1 × output_dim`).
///
/// `params` are the network's tensors already placed on `tape`, in
/// [`NetworkShape::tensor_specs`] order. `slots` is `M × input_dim`; only the
/// first `filled` rows are live.
pub fn forward(
    tape: &mut Tape,
    shape: &NetworkShape,
    params: &[Var],
    slots: &Tensor,
    filled: usize,
) -> Result<Var> {
    if slots.rows != shape.slots || slots.cols != shape.input_dim {
        return Err(Error::InvalidArgument(format!(
            "state is {}x{}, network expects {}x{}",
            slots.rows, slots.cols, shape.slots, shape.input_dim
        )));
    }
    if filled > shape.slots {
        return Err(Error::InvalidArgument(format!(
            "{filled} filled slots exceed capacity {}",
            shape.slots
        )));
    }
    debug_assert_eq!(params.len(), shape.tensor_count());
    let cfg = shape.config;
    let tokens = filled + 1;

    // live tokens: filled slots then the all-zero readout token
    let mut input = Tensor::zeros(tokens, shape.input_dim);
    input.data[..filled * shape.input_dim].copy_from_slice(&slots.data[..filled * shape.input_dim]);
    let positions: Vec<usize> = (0..filled).chain(std::iter::once(shape.slots)).collect();

    let mut mask = vec![false; tokens * tokens];
    for i in 0..tokens {
        for j in 0..tokens {
            mask[i * tokens + j] = if i == filled { true } else { j < filled };
        }
    }

    let x = tape.leaf(input);
    let h = tape.matmul(x, params[0]);
    let h = tape.add_row(h, params[1]);
    let pos = tape.gather_rows(params[2], &positions);
    let mut h = tape.add(h, pos);

    let head_dim = cfg.hidden / cfg.heads;
    let inv_sqrt = 1.0 / (head_dim as f64).sqrt();
    for l in 0..cfg.layers {
        let p = |i: usize| params[shape.layer_base(l) + i];
        let a = affine_norm(tape, h, p(LN1_G), p(LN1_B));
        let q = linear(tape, a, p(WQ), p(BQ));
        let k = linear(tape, a, p(WK), p(BK));
        let v = linear(tape, a, p(WV), p(BV));
        let mut heads = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let start = hd * head_dim;
            let qh = tape.slice_cols(q, start, head_dim);
            let kh = tape.slice_cols(k, start, head_dim);
            let vh = tape.slice_cols(v, start, head_dim);
            let scores = tape.matmul_tb(qh, kh);
            let scores = tape.scale(scores, inv_sqrt);
            let weights = tape.masked_softmax(scores, &mask);
            heads.push(tape.matmul(weights, vh));
        }
        let attn = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        };
        let attn = linear(tape, attn, p(WO), p(BO));
        h = tape.add(h, attn);

        let f = affine_norm(tape, h, p(LN2_G), p(LN2_B));
        let f = linear(tape, f, p(FF_W1), p(FF_B1));
        let f = tape.relu(f);
        let f = linear(tape, f, p(FF_W2), p(FF_B2));
        h = tape.add(h, f);
    }
    let t = shape.tail_base();
    let h = affine_norm(tape, h, params[t], params[t + 1]);
    let readout = tape.gather_rows(h, &[filled]);
    let z = linear(tape, readout, params[t + 2], params[t + 3]);
    let z = tape.tanh(z);
    Ok(linear(tape, z, params[t + 4], params[t + 5]))
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

fn affine_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Var {
    let n = tape.layer_norm(x);
    let n = tape.mul_row(n, gain);
    tape.add_row(n, bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn orthogonal_columns() {
        let mut rng = seeded(3);
        let w = orthogonal(6, 3, 1.0, &mut rng);
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..6).map(|r| w.at(r, a) * w.at(r, b)).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-12);
            }
        }
        let wide = orthogonal(2, 5, 2.0, &mut rng);
        let dot: f64 = (0..5).map(|c| wide.at(0, c) * wide.at(0, c)).sum();
        assert!((dot - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_state_shape() {
        let shape = NetworkShape {
            config: NetworkConfig { layers: 1, heads: 1, hidden: 4, ff_width: 8 },
            input_dim: 3,
            slots: 2,
            output_dim: 1,
        };
        let mut rng = seeded(0);
        let params = shape.init(1.0, &mut rng);
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.into_iter().map(|p| tape.leaf(p)).collect();
        let bad = Tensor::zeros(2, 4);
        assert!(forward(&mut tape, &shape, &vars, &bad, 1).is_err());
        let good = Tensor::zeros(2, 3);
        assert!(forward(&mut tape, &shape, &vars, &good, 3).is_err());
        let out = forward(&mut tape, &shape, &vars, &good, 2).unwrap();
        assert_eq!(tape.value(out).shape(), (1, 1));
    }
}
