//! Seeded generator of small random tapes for gradient checks.

#![allow(dead_code)]

use gradrecon::autodiff::{Conv2dParams, Graph, NodeId};
use gradrecon::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

pub struct RandomTape {
    pub graph: Graph,
    /// `sum(final ⊙ r)`
    pub root: NodeId,
    /// `mean(sigmoid(final))`, a second head over the same body.
    pub alt_root: NodeId,
    pub values: HashMap<String, Tensor<f64>>,
    /// Leaves that require gradients, `x` first.
    pub grad_leaves: Vec<String>,
    pub depth: usize,
    /// Op names in application order.
    pub ops: Vec<&'static str>,
}

struct Builder {
    g: Graph,
    rng: ChaCha8Rng,
    values: HashMap<String, Tensor<f64>>,
    grad_leaves: Vec<String>,
}

impl Builder {
    fn leaf(&mut self, prefix: &str, shape: &[usize], scale: f64) -> NodeId {
        let name = format!("{prefix}{}", self.values.len());
        let t = Tensor::from_fn(shape, |_| self.rng.gen_range(-scale..scale));
        let id = self.g.leaf(&name, true);
        self.values.insert(name.clone(), t);
        self.grad_leaves.push(name);
        id
    }
}

/// A random composition of `1..=max_depth` layers on an input `x` of at most
/// `[1,2,8,8]`; every tensor stays within 8×8 spatially.
pub fn random_tape(seed: u64, max_depth: usize) -> RandomTape {
    let mut b = Builder {
        g: Graph::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        values: HashMap::new(),
        grad_leaves: Vec::new(),
    };
    let c = b.rng.gen_range(1..=2);
    let h = b.rng.gen_range(3..=8);
    let w = b.rng.gen_range(3..=8);
    let x = b.g.leaf("x", true);
    b.values.insert(
        "x".into(),
        Tensor::from_fn(&[1, c, h, w], |_| b.rng.gen_range(-1.0..1.0)),
    );
    b.grad_leaves.push("x".into());

    let depth = b.rng.gen_range(1..=max_depth.max(1));
    let mut cur = x;
    let mut shape = vec![1, c, h, w];
    let mut ops = Vec::with_capacity(depth);
    for _ in 0..depth {
        let spatial = shape.len() == 4;
        let choice = b.rng.gen_range(0..15);
        let (node, name) = match choice {
            0 | 1 if spatial => {
                let k = b.rng.gen_range(1..=3usize);
                let s = b.rng.gen_range(1..=2usize);
                let p = b.rng.gen_range(0..=1usize);
                let o = b.rng.gen_range(1..=3usize);
                let (hh, ww) = (shape[2] + 2 * p, shape[3] + 2 * p);
                if hh < k || ww < k {
                    continue;
                }
                let out = [(hh - k) / s + 1, (ww - k) / s + 1];
                if out[0] > 8 || out[1] > 8 {
                    continue;
                }
                let fan = (shape[1] * k * k) as f64;
                let wt = b.leaf("w", &[o, shape[1], k, k], 1.5 / fan.sqrt());
                let bias = b.leaf("b", &[o], 0.3);
                let n = b
                    .g
                    .conv2d(cur, wt, Some(bias), Conv2dParams { stride: s, padding: p })
                    .unwrap();
                shape = vec![1, o, out[0], out[1]];
                (n, "conv2d")
            }
            2 if spatial => {
                let k = b.rng.gen_range(2..=3usize);
                let s = b.rng.gen_range(1..=2usize);
                let p = b.rng.gen_range(0..=1usize);
                let o = b.rng.gen_range(1..=2usize);
                let out = |d: usize| ((d - 1) * s + k).checked_sub(2 * p);
                let (Some(oh), Some(ow)) = (out(shape[2]), out(shape[3])) else {
                    continue;
                };
                if oh == 0 || ow == 0 || oh > 8 || ow > 8 {
                    continue;
                }
                let fan = (shape[1] * k * k) as f64 / (s * s) as f64;
                let wt = b.leaf("w", &[shape[1], o, k, k], 1.5 / fan.sqrt());
                let n = b
                    .g
                    .conv_transpose2d(cur, wt, None, Conv2dParams { stride: s, padding: p })
                    .unwrap();
                shape = vec![1, o, oh, ow];
                (n, "conv_transpose2d")
            }
            3 if spatial && shape[2] + 2 <= 8 && shape[3] + 2 <= 8 => {
                shape[2] += 2;
                shape[3] += 2;
                (b.g.pad_symmetric(cur, 1), "pad_symmetric")
            }
            4 => {
                let din: usize = shape.iter().product();
                let dout = b.rng.gen_range(1..=8usize);
                let flat = b.g.reshape(cur, &[1, din]);
                let wt = b.leaf("w", &[din, dout], 1.5 / (din as f64).sqrt());
                let bias = b.leaf("b", &[dout], 0.3);
                shape = vec![1, dout];
                (b.g.dense(flat, wt, Some(bias)), "dense")
            }
            5 if !spatial && shape[1] > 1 => {
                let len = b.rng.gen_range(1..shape[1]);
                let start = b.rng.gen_range(0..=shape[1] - len);
                shape[1] = len;
                (b.g.narrow(cur, start, len), "narrow")
            }
            6 => (b.g.leaky_relu(cur, 0.1), "leaky_relu"),
            7 => (b.g.sigmoid(cur), "sigmoid"),
            8 => {
                let s = b.g.scale(cur, 0.5);
                (b.g.exp(s), "exp")
            }
            9 => (b.g.square(cur), "square"),
            10 => (b.g.abs(cur), "abs"),
            11 => {
                let other = b.leaf("m", &shape.clone(), 1.0);
                (b.g.mul(cur, other), "mul")
            }
            12 => {
                let other = b.leaf("a", &shape.clone(), 1.0);
                if b.rng.gen_bool(0.5) {
                    (b.g.add(cur, other), "add")
                } else {
                    (b.g.sub(cur, other), "sub")
                }
            }
            13 => {
                let other = b.leaf("d", &shape.clone(), 1.0);
                let sq = b.g.square(other);
                let den = b.g.offset(sq, 0.5);
                (b.g.div(cur, den), "div")
            }
            _ => {
                let s = b.g.scale(cur, 0.8);
                let o = b.g.offset(s, 0.1);
                (b.g.clamp(o, -1.2, 1.2), "clamp")
            }
        };
        cur = node;
        ops.push(name);
    }
    let r = b.leaf("r", &shape.clone(), 1.0);
    let weighted = b.g.mul(cur, r);
    let root = b.g.sum(weighted);
    let sig = b.g.sigmoid(cur);
    let alt_root = b.g.mean(sig);
    RandomTape {
        graph: b.g,
        root,
        alt_root,
        values: b.values,
        grad_leaves: b.grad_leaves,
        depth: ops.len(),
        ops,
    }
}
