//! Parameter storage and the small set of layers the encoders are built from.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{AttentionMask, Tape, Var};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Added to the L2 norm before dividing.
pub const NORM_EPS: f64 = 1e-12;
pub const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter tensors. Insertion order defines checkpoint layout.
#[derive(Clone, Debug)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Matrix<F>>,
    decay: Vec<bool>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            decay: Vec::new(),
        }
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn add(&mut self, name: impl Into<String>, value: Matrix<F>, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.decay.push(decay);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    pub fn value(&self, id: ParamId) -> &Matrix<F> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix<F> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Ids whose name starts with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.names
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
    }

    pub fn zero_prefix(&mut self, prefix: &str) {
        let ids: Vec<_> = self.ids_with_prefix(prefix).collect();
        assert!(!ids.is_empty(), "no parameter matches {prefix}");
        for id in ids {
            for x in self.values[id.0].data_mut() {
                *x = F::zero();
            }
        }
    }
}

/// Seeded initializer used while a model is being constructed.
pub struct Init<'a, F> {
    pub store: &'a mut ParamStore<F>,
    rng: ChaCha8Rng,
}

impl<'a, F: Scalar> Init<'a, F> {
    pub fn new(store: &'a mut ParamStore<F>, seed: u64) -> Self {
        Init {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        let dist = Normal::new(0.0, INIT_STD).expect("valid std");
        let data = (0..rows * cols).map(|_| F::of(dist.sample(&mut self.rng))).collect();
        self.store.add(name, Matrix::from_vec(rows, cols, data), true)
    }

    pub fn constant(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: F) -> ParamId {
        self.store.add(name, Matrix::filled(rows, cols, v), false)
    }
}

/// Borrowed view of a tape together with the parameters it reads.
#[derive(Clone, Copy)]
pub struct Graph<'t, F: Scalar> {
    pub tape: &'t Tape<F>,
    pub params: &'t ParamStore<F>,
}

impl<'t, F: Scalar> Graph<'t, F> {
    pub fn new(tape: &'t Tape<F>, params: &'t ParamStore<F>) -> Self {
        Graph { tape, params }
    }

    #[inline]
    pub fn p(&self, id: ParamId) -> Var<'t, F> {
        self.tape.param(self.params, id)
    }

    pub fn constant(&self, m: Matrix<F>) -> Var<'t, F> {
        self.tape.constant(m)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<F: Scalar>(init: &mut Init<'_, F>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = init.normal(format!("{name}.weight"), fan_in, fan_out);
        let bias = Some(init.constant(format!("{name}.bias"), 1, fan_out, F::zero()));
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn no_bias<F: Scalar>(init: &mut Init<'_, F>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = init.normal(format!("{name}.weight"), fan_in, fan_out);
        Linear {
            weight,
            bias: None,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<'t, F: Scalar>(&self, g: Graph<'t, F>, x: Var<'t, F>) -> Var<'t, F> {
        let y = x.matmul(g.p(self.weight));
        match self.bias {
            Some(b) => y.add_row(g.p(b)),
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<F: Scalar>(init: &mut Init<'_, F>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: init.constant(format!("{name}.gain"), 1, dim, F::one()),
            bias: init.constant(format!("{name}.bias"), 1, dim, F::zero()),
        }
    }

    pub fn forward<'t, F: Scalar>(&self, g: Graph<'t, F>, x: Var<'t, F>) -> Var<'t, F> {
        x.layer_norm(F::of(LN_EPS)).mul_row(g.p(self.gain)).add_row(g.p(self.bias))
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<F: Scalar>(init: &mut Init<'_, F>, name: &str, dim: usize, kv_dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "hidden size must divide by head count");
        MultiHeadAttention {
            query: Linear::new(init, &format!("{name}.q"), dim, dim),
            key: Linear::new(init, &format!("{name}.k"), kv_dim, dim),
            value: Linear::new(init, &format!("{name}.v"), kv_dim, dim),
            out: Linear::new(init, &format!("{name}.o"), dim, dim),
            heads,
        }
    }

    /// Attends from the rows of `x` to the rows of `context`.
    pub fn forward<'t, F: Scalar>(
        &self,
        g: Graph<'t, F>,
        x: Var<'t, F>,
        context: Var<'t, F>,
        mask: Option<&AttentionMask>,
    ) -> Var<'t, F> {
        let q = self.query.forward(g, x);
        let k = self.key.forward(g, context);
        let v = self.value.forward(g, context);
        let dim = q.cols();
        let dh = dim / self.heads;
        let scale = F::one() / F::of(dh as f64).sqrt();
        let heads: Vec<_> = (0..self.heads)
            .map(|h| {
                let (a, b) = (h * dh, (h + 1) * dh);
                let scores = q.slice_cols(a, b).matmul_t(k.slice_cols(a, b)).scale(scale);
                scores.softmax_rows(mask).matmul(v.slice_cols(a, b))
            })
            .collect();
        let merged = if heads.len() == 1 { heads[0] } else { g.tape.concat_cols(&heads) };
        self.out.forward(g, merged)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<F: Scalar>(init: &mut Init<'_, F>, name: &str, dim: usize, hidden: usize) -> Self {
        FeedForward {
            up: Linear::new(init, &format!("{name}.up"), dim, hidden),
            down: Linear::new(init, &format!("{name}.down"), hidden, dim),
        }
    }

    pub fn forward<'t, F: Scalar>(&self, g: Graph<'t, F>, x: Var<'t, F>) -> Var<'t, F> {
        self.down.forward(g, self.up.forward(g, x).gelu())
    }
}

/// Pre-norm transformer block with optional cross-attention.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub ln_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub cross: Option<(LayerNorm, MultiHeadAttention)>,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl TransformerLayer {
    pub fn new<F: Scalar>(
        init: &mut Init<'_, F>,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_hidden: usize,
        cross_kv_dim: Option<usize>,
    ) -> Self {
        TransformerLayer {
            ln_self: LayerNorm::new(init, &format!("{name}.ln_self"), dim),
            self_attn: MultiHeadAttention::new(init, &format!("{name}.self"), dim, dim, heads),
            cross: cross_kv_dim.map(|kv| {
                (
                    LayerNorm::new(init, &format!("{name}.ln_cross"), dim),
                    MultiHeadAttention::new(init, &format!("{name}.cross"), dim, kv, heads),
                )
            }),
            ln_ffn: LayerNorm::new(init, &format!("{name}.ln_ffn"), dim),
            ffn: FeedForward::new(init, &format!("{name}.ffn"), dim, ffn_hidden),
        }
    }

    /// `condition` enables the cross-attention sublayer; it is skipped otherwise.
    pub fn forward<'t, F: Scalar>(
        &self,
        g: Graph<'t, F>,
        x: Var<'t, F>,
        self_mask: Option<&AttentionMask>,
        condition: Option<Var<'t, F>>,
    ) -> Var<'t, F> {
        let h = self.ln_self.forward(g, x);
        let mut x = x.add(self.self_attn.forward(g, h, h, self_mask));
        if let (Some((ln, attn)), Some(cond)) = (&self.cross, condition) {
            let h = ln.forward(g, x);
            x = x.add(attn.forward(g, h, cond, None));
        }
        let h = self.ln_ffn.forward(g, x);
        x.add(self.ffn.forward(g, h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_lookup_and_zeroing() {
        let mut store = ParamStore::<f64>::default();
        let mut init = Init::new(&mut store, 3);
        let lin = Linear::new(&mut init, "enc.proj", 4, 2);
        assert_eq!(store.num_scalars(), 4 * 2 + 2);
        assert_eq!(store.id_of("enc.proj.weight"), Some(lin.weight));
        store.zero_prefix("enc.proj");
        assert!(store.value(lin.weight).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn init_is_seeded() {
        let build = |seed| {
            let mut s = ParamStore::<f32>::default();
            let mut init = Init::new(&mut s, seed);
            init.normal("w", 3, 3);
            s.value(ParamId(0)).clone()
        };
        assert_eq!(build(5), build(5));
        assert_ne!(build(5), build(6));
    }
}
