//! Layers built on the tape: affine maps, the three-layer MLP and
//! multi-head scaled dot-product attention.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParamStore};

/// `y = x Wᵀ + b` with `W` stored `out × in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[out_dim, in_dim], in_dim, rng);
        let bias = store.add_uniform(format!("{name}.bias"), &[out_dim], in_dim, rng);
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let (_, width) = x.value().dims2()?;
        if width != self.in_dim {
            return Err(shape_err!("linear layer expects width {}, got {}", self.in_dim, width));
        }
        x.matmul_t(g.param(store, self.weight))?.add_row(g.param(store, self.bias))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Three affine layers with ReLU between them and none after the last.
#[derive(Clone, Debug)]
pub struct Mlp3 {
    pub layers: [Linear; 3],
}

impl Mlp3 {
    pub fn new(store: &mut ParamStore, name: &str, widths: [usize; 4], rng: &mut ChaCha8Rng) -> Self {
        let layers = [0, 1, 2].map(|i| Linear::new(store, &format!("{name}.{i}"), widths[i], widths[i + 1], rng));
        Mlp3 { layers }
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let h = self.layers[0].forward(g, store, x)?.relu();
        let h = self.layers[1].forward(g, store, h)?.relu();
        self.layers[2].forward(g, store, h)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[2].out_dim
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(Linear::params)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

/// Result of one attention call.
pub struct AttentionOutput<'g> {
    /// Output-projected result, `n_q × d`.
    pub output: Var<'g>,
    /// Concatenated head outputs before the output projection.
    pub heads_concat: Var<'g>,
    /// One `n_q × n_k` row-stochastic matrix per head.
    pub weights: Vec<Var<'g>>,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("width {dim} is not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng),
            heads,
            dim,
        })
    }

    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        query: Var<'g>,
        key: Var<'g>,
        value: Var<'g>,
    ) -> Result<AttentionOutput<'g>> {
        let (n_k, _) = key.value().dims2()?;
        if n_k == 0 {
            return Err(shape_err!("attention needs at least one key"));
        }
        if value.value().dims2()?.0 != n_k {
            return Err(shape_err!("key and value row counts differ"));
        }
        let qp = self.q.forward(g, store, query)?;
        let kp = self.k.forward(g, store, key)?;
        let vp = self.v.forward(g, store, value)?;
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (s, e) = (h * head_dim, (h + 1) * head_dim);
            let scores = qp.slice_cols(s, e)?.matmul_t(kp.slice_cols(s, e)?)?.scale(scale);
            let attn = scores.softmax_rows()?;
            outs.push(attn.matmul(vp.slice_cols(s, e)?)?);
            weights.push(attn);
        }
        let heads_concat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        let output = self.out.forward(g, store, heads_concat)?;
        Ok(AttentionOutput { output, heads_concat, weights })
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        [&self.q, &self.k, &self.v, &self.out].into_iter().flat_map(Linear::params)
    }
}
