use std::sync::Arc;

use rand::Rng;

use super::{init_weight, RopeConfig};
use crate::graph::Graph;
use crate::scalar::Real;
use crate::tensor::{mismatch, Result, RopeTable, Tape, Tensor, TensorError, Var};

pub const LN_EPS: f64 = 1e-5;

/// Parameters of one graph-transformer block. Projection matrices are stored
/// in×out, so head `k` owns columns `k·d_k..(k+1)·d_k` of `wq`, `wk`, `wv`.
#[derive(Clone, Debug, PartialEq)]
pub struct GtBlockParams<T> {
    pub heads: usize,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
    pub ln1_gain: Tensor<T>,
    pub ln1_bias: Tensor<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_bias: Tensor<T>,
}

impl<T: Real> GtBlockParams<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::InvalidArgument {
                op: "GtBlockParams::init",
                detail: format!("{heads} heads do not divide width {d}"),
            });
        }
        Ok(Self {
            heads,
            wq: init_weight(rng, d, d),
            wk: init_weight(rng, d, d),
            wv: init_weight(rng, d, d),
            wo: init_weight(rng, d, d),
            w1: init_weight(rng, d, 2 * d),
            w2: init_weight(rng, 2 * d, d),
            ln1_gain: Tensor::filled(&[d], T::one()).with_grad(),
            ln1_bias: Tensor::zeros(&[d]).with_grad(),
            ln2_gain: Tensor::filled(&[d], T::one()).with_grad(),
            ln2_bias: Tensor::zeros(&[d]).with_grad(),
        })
    }

    pub fn width(&self) -> usize {
        self.wq.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.width() / self.heads
    }

    /// Named tensors in a fixed order.
    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor<T>); 10] {
        [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("w1", &mut self.w1),
            ("w2", &mut self.w2),
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
        ]
    }

    pub fn named(&self) -> [(&'static str, &Tensor<T>); 10] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("w1", &self.w1),
            ("w2", &self.w2),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> GtBlockVars {
        self.bind_with(&mut |t| tape.leaf(t))
    }

    /// Binds every tensor through `f`, in [`GtBlockParams::named`] order.
    pub fn bind_with(&self, f: &mut dyn FnMut(&Tensor<T>) -> Var) -> GtBlockVars {
        let [wq, wk, wv, wo, w1, w2, g1, b1, g2, b2] = self.named().map(|(_, t)| f(t));
        GtBlockVars { heads: self.heads, wq, wk, wv, wo, w1, w2, ln1_gain: g1, ln1_bias: b1, ln2_gain: g2, ln2_bias: b2 }
    }
}

/// A [`GtBlockParams`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GtBlockVars {
    pub heads: usize,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub w1: Var,
    pub w2: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionOptions {
    /// Divide each aggregated message by `|N_i|` on top of the softmax.
    pub average_over_neighbors: bool,
}

impl Default for AttentionOptions {
    fn default() -> Self {
        Self { average_over_neighbors: true }
    }
}

/// Multi-head attention restricted to graph neighborhoods:
/// `ĥ_i = O_h ∥_k (1/|N_i| Σ_{j∈N_i} w^k_ij V^k h_j)` with
/// `w^k_ij = softmax_j(Q^k h_i · K^k h_j / √d_k)` and RoPE folded into Q, K.
pub fn graph_self_attention_vars<T: Real>(
    tape: &mut Tape<T>,
    h: Var,
    g: &Graph<T>,
    p: &GtBlockVars,
    rope: Option<&Arc<RopeTable<T>>>,
    opts: AttentionOptions,
) -> Result<Var> {
    let rows = tape.shape(h)[0];
    if rows != g.len() {
        return Err(mismatch("graph_self_attention", format!("{rows} feature rows for {} nodes", g.len())));
    }
    let d = tape.shape(p.wq)[1];
    let dk = d / p.heads;
    let edges = g.edge_list();

    let mut q = tape.matmul(h, p.wq)?;
    let mut k = tape.matmul(h, p.wk)?;
    let v = tape.matmul(h, p.wv)?;
    if let Some(table) = rope {
        q = tape.rope(q, table.clone())?;
        k = tape.rope(k, table.clone())?;
    }
    let qe = tape.gather_rows(q, edges.centers.clone())?;
    let ke = tape.gather_rows(k, edges.neighbors.clone())?;
    let ve = tape.gather_rows(v, edges.neighbors.clone())?;
    let prod = tape.mul(qe, ke)?;
    let logits = tape.group_sum(prod, dk)?;
    let logits = tape.scale(logits, T::one() / T::count(dk).sqrt())?;
    let w = tape.segment_softmax(logits, edges.offsets.clone())?;
    let w = tape.repeat_cols(w, dk)?;
    let msg = tape.mul(w, ve)?;
    let mut agg = tape.segment_sum(msg, edges.offsets.clone())?;
    if opts.average_over_neighbors {
        let inv: Arc<[T]> = edges.offsets.windows(2).map(|s| T::one() / T::count(s[1] - s[0])).collect();
        agg = tape.scale_rows(agg, inv)?;
    }
    tape.matmul(agg, p.wo)
}

/// Attention → residual → norm → ReLU feed-forward → residual → norm.
pub fn graph_transformer_block_vars<T: Real>(
    tape: &mut Tape<T>,
    h: Var,
    g: &Graph<T>,
    p: &GtBlockVars,
    rope: Option<&Arc<RopeTable<T>>>,
    opts: AttentionOptions,
) -> Result<Var> {
    let eps = T::lit(LN_EPS);
    let attn = graph_self_attention_vars(tape, h, g, p, rope, opts)?;
    let res = tape.add(h, attn)?;
    let hh = tape.layer_norm(res, p.ln1_gain, p.ln1_bias, eps)?;
    let ff = tape.matmul(hh, p.w1)?;
    let ff = tape.relu(ff)?;
    let ff = tape.matmul(ff, p.w2)?;
    let res = tape.add(hh, ff)?;
    tape.layer_norm(res, p.ln2_gain, p.ln2_bias, eps)
}

fn table_for<T: Real>(g: &Graph<T>, rope: Option<&RopeConfig<T>>) -> Result<Option<Arc<RopeTable<T>>>> {
    rope.map(|cfg| cfg.table(g.points().positions()).map(Arc::new)).transpose()
}

/// Value-level wrapper around [`graph_self_attention_vars`].
pub fn graph_self_attention<T: Real>(
    h: &Tensor<T>,
    g: &Graph<T>,
    p: &GtBlockParams<T>,
    rope: Option<&RopeConfig<T>>,
    opts: AttentionOptions,
) -> Result<Tensor<T>> {
    let table = table_for(g, rope)?;
    let mut tape = Tape::new();
    let hv = tape.constant(h);
    let pv = p.bind(&mut tape);
    let out = graph_self_attention_vars(&mut tape, hv, g, &pv, table.as_ref(), opts)?;
    Ok(tape.tensor(out))
}

/// Value-level wrapper around [`graph_transformer_block_vars`].
pub fn graph_transformer_block<T: Real>(
    h: &Tensor<T>,
    g: &Graph<T>,
    p: &GtBlockParams<T>,
    rope: Option<&RopeConfig<T>>,
    opts: AttentionOptions,
) -> Result<Tensor<T>> {
    let table = table_for(g, rope)?;
    let mut tape = Tape::new();
    let hv = tape.constant(h);
    let pv = p.bind(&mut tape);
    let out = graph_transformer_block_vars(&mut tape, hv, g, &pv, table.as_ref(), opts)?;
    Ok(tape.tensor(out))
}
