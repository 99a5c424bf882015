//! Wengert-style tape: every primitive appends a node holding its value and
//! the information its adjoint needs; `backward` replays nodes in reverse.

use std::sync::Arc;

use super::{gemm, gemm_nt, gemm_tn, mismatch, Result, Tensor, TensorError};
use crate::scalar::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Precomputed rotation angles for rotary embeddings: one (cos, sin) pair per
/// row and per rotated pair of a head, shared by every head of the row.
#[derive(Clone, Debug)]
pub struct RopeTable<T> {
    pub head_dim: usize,
    pub rows: usize,
    pub cos: Vec<T>,
    pub sin: Vec<T>,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    ScaleRows(Var, Arc<[T]>),
    Relu(Var),
    Sqrt(Var),
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    GatherRows(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>),
    Softmax(Var),
    GroupSum(Var, usize),
    RepeatCols(Var, usize),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Rope(Var, Arc<RopeTable<T>>),
    Slice(Var, usize),
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

impl<T> Node<T> {
    fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    fn rows(&self) -> usize {
        self.value.len() / self.cols().max(1)
    }
}

/// Ordered record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf holding a copy of `t`; gradients flow to it iff
    /// `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            requires_grad: t.requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape nodes hold valid shapes")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adjoint of `v` after [`Tape::backward`]; `None` when `v` is not reachable
    /// from the loss or does not require gradients.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Accumulates the adjoint of `v` into `t.grad`.
    pub fn write_grad(&self, v: Var, t: &mut Tensor<T>) {
        if let Some(g) = self.grad(v) {
            t.accumulate_grad(g);
        }
    }

    fn rows_cols(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows(), n.cols())
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NumericFault { op: op_name });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                self.requires_grad(*a) || self.requires_grad(*b)
            }
            Op::LayerNorm { x, gain, bias, .. } => {
                self.requires_grad(*x) || self.requires_grad(*gain) || self.requires_grad(*bias)
            }
            Op::Concat(parts) => parts.iter().any(|p| self.requires_grad(*p)),
            Op::Scale(a, _)
            | Op::ScaleRows(a, _)
            | Op::Relu(a)
            | Op::Sqrt(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Transpose(a)
            | Op::GatherRows(a, _)
            | Op::SegmentSum(a, _)
            | Op::SegmentSoftmax(a, _)
            | Op::Softmax(a)
            | Op::GroupSum(a, _)
            | Op::RepeatCols(a, _)
            | Op::Rope(a, _)
            | Op::Slice(a, _)
            | Op::Reshape(a) => self.requires_grad(*a),
        };
        self.nodes.push(Node { shape, value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    // ---- primitives -----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(self.value(a), self.value(b), m, k, n, &mut out);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push("add", self.shape(a).to_vec(), v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        self.push("sub", self.shape(a).to_vec(), v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        self.push("mul", self.shape(a).to_vec(), v, Op::Mul(a, b))
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, c) = self.rows_cols(a);
        if self.value(row).len() != c {
            return Err(mismatch("add_row", format!("row of {} for {c} columns", self.value(row).len())));
        }
        let r = self.value(row).to_vec();
        let v = self
            .value(a)
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(&r).map(|(&x, &y)| x + y).collect::<Vec<_>>())
            .collect();
        self.push("add_row", self.shape(a).to_vec(), v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.value(a).iter().map(|&x| x * s).collect();
        self.push("scale", self.shape(a).to_vec(), v, Op::Scale(a, s))
    }

    /// Multiplies row `i` of `a` by the constant `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Arc<[T]>) -> Result<Var> {
        let (r, c) = self.rows_cols(a);
        if s.len() != r {
            return Err(mismatch("scale_rows", format!("{} factors for {r} rows", s.len())));
        }
        let mut v = self.value(a).to_vec();
        for (i, chunk) in v.chunks_mut(c).enumerate() {
            chunk.iter_mut().for_each(|x| *x *= s[i]);
        }
        self.push("scale_rows", self.shape(a).to_vec(), v, Op::ScaleRows(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        self.push("relu", self.shape(a).to_vec(), v, Op::Relu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).iter().any(|&x| x <= T::zero()) {
            return Err(TensorError::InvalidArgument { op: "sqrt", detail: "non-positive input".into() });
        }
        let v = self.value(a).iter().map(|&x| x.sqrt()).collect();
        self.push("sqrt", self.shape(a).to_vec(), v, Op::Sqrt(a))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| mismatch("concat", "no inputs"))?;
        let rows = self.rows_cols(first).0;
        if parts.iter().any(|&p| self.rows_cols(p).0 != rows) {
            return Err(mismatch("concat", "row counts differ"));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.rows_cols(p).1).collect();
        let total: usize = widths.iter().sum();
        let mut v = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                v.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = self.shape(first).to_vec();
        *shape.last_mut().expect("non-empty") = total;
        self.push("concat", shape, v, Op::Concat(parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().fold(T::zero(), |acc, &x| acc + x);
        self.push("sum", vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = T::count(self.value(a).len());
        let s = self.value(a).iter().fold(T::zero(), |acc, &x| acc + x);
        self.push("mean", vec![1], vec![s / n], Op::Mean(a))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(mismatch("transpose", format!("expected matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a);
        let mut v = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                v[j * r + i] = src[i * c + j];
            }
        }
        self.push("transpose", vec![c, r], v, Op::Transpose(a))
    }

    /// Rows of `a` picked by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let (r, c) = self.rows_cols(a);
        if idx.is_empty() || idx.iter().any(|&i| i >= r) {
            return Err(mismatch("gather_rows", format!("index out of range for {r} rows")));
        }
        let src = self.value(a);
        let mut v = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            v.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        self.push("gather_rows", vec![idx.len(), c], v, Op::GatherRows(a, idx))
    }

    fn check_offsets(&self, op: &'static str, a: Var, offsets: &[usize]) -> Result<()> {
        let rows = self.rows_cols(a).0;
        let ok = offsets.len() >= 2
            && offsets[0] == 0
            && *offsets.last().expect("len >= 2") == rows
            && offsets.windows(2).all(|w| w[0] <= w[1]);
        if !ok {
            return Err(mismatch(op, format!("offsets do not partition {rows} rows")));
        }
        Ok(())
    }

    /// Sums the row ranges `offsets[s]..offsets[s+1]` into output row `s`.
    pub fn segment_sum(&mut self, a: Var, offsets: Arc<[usize]>) -> Result<Var> {
        self.check_offsets("segment_sum", a, &offsets)?;
        let c = self.rows_cols(a).1;
        let segs = offsets.len() - 1;
        let src = self.value(a);
        let mut v = vec![T::zero(); segs * c];
        for s in 0..segs {
            let out = &mut v[s * c..(s + 1) * c];
            for e in offsets[s]..offsets[s + 1] {
                for (o, &x) in out.iter_mut().zip(&src[e * c..(e + 1) * c]) {
                    *o += x;
                }
            }
        }
        self.push("segment_sum", vec![segs, c], v, Op::SegmentSum(a, offsets))
    }

    /// Column-wise softmax within each row segment.
    pub fn segment_softmax(&mut self, a: Var, offsets: Arc<[usize]>) -> Result<Var> {
        self.check_offsets("segment_softmax", a, &offsets)?;
        let c = self.rows_cols(a).1;
        let src = self.value(a);
        let mut v = vec![T::zero(); src.len()];
        for w in offsets.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if lo == hi {
                return Err(TensorError::InvalidArgument {
                    op: "segment_softmax",
                    detail: "empty segment".into(),
                });
            }
            for col in 0..c {
                let mut m = T::neg_infinity();
                for e in lo..hi {
                    m = m.max(src[e * c + col]);
                }
                let mut z = T::zero();
                for e in lo..hi {
                    let ex = (src[e * c + col] - m).exp();
                    v[e * c + col] = ex;
                    z += ex;
                }
                for e in lo..hi {
                    v[e * c + col] /= z;
                }
            }
        }
        self.push("segment_softmax", self.shape(a).to_vec(), v, Op::SegmentSoftmax(a, offsets))
    }

    /// Max-shifted softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let c = self.rows_cols(a).1;
        let mut v = self.value(a).to_vec();
        for row in v.chunks_mut(c) {
            let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut z = T::zero();
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        self.push("softmax", self.shape(a).to_vec(), v, Op::Softmax(a))
    }

    /// Sums consecutive groups of `group` columns: m×(g·k) → m×k.
    pub fn group_sum(&mut self, a: Var, group: usize) -> Result<Var> {
        let (r, c) = self.rows_cols(a);
        if group == 0 || c % group != 0 {
            return Err(mismatch("group_sum", format!("{c} columns not divisible by {group}")));
        }
        let k = c / group;
        let src = self.value(a);
        let mut v = vec![T::zero(); r * k];
        for i in 0..r {
            for h in 0..k {
                let mut s = T::zero();
                for &x in &src[i * c + h * group..i * c + (h + 1) * group] {
                    s += x;
                }
                v[i * k + h] = s;
            }
        }
        self.push("group_sum", vec![r, k], v, Op::GroupSum(a, group))
    }

    /// Repeats every column `times` times consecutively: m×k → m×(k·times).
    pub fn repeat_cols(&mut self, a: Var, times: usize) -> Result<Var> {
        let (r, c) = self.rows_cols(a);
        if times == 0 {
            return Err(mismatch("repeat_cols", "zero repeats"));
        }
        let src = self.value(a);
        let mut v = Vec::with_capacity(r * c * times);
        for i in 0..r {
            for j in 0..c {
                v.extend(std::iter::repeat(src[i * c + j]).take(times));
            }
        }
        self.push("repeat_cols", vec![r, c * times], v, Op::RepeatCols(a, times))
    }

    /// Per-row normalization over the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (r, d) = self.rows_cols(x);
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(mismatch("layer_norm", format!("gain/bias must have {d} entries")));
        }
        if eps <= T::zero() {
            return Err(TensorError::InvalidArgument { op: "layer_norm", detail: "eps must be > 0".into() });
        }
        let dn = T::count(d);
        let src = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![T::zero(); r * d];
        let mut inv_std = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * d];
        for i in 0..r {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / dn;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[i * d + j] = xh;
                out[i * d + j] = xh * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push("layer_norm", shape, out, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    /// Rotates consecutive coordinate pairs of every head block of width
    /// `table.head_dim` by the per-row angles in `table`.
    pub fn rope(&mut self, a: Var, table: Arc<RopeTable<T>>) -> Result<Var> {
        let (r, c) = self.rows_cols(a);
        let hd = table.head_dim;
        if hd == 0 || hd % 2 != 0 || c % hd != 0 || table.rows != r {
            return Err(mismatch("rope", format!("table {}x{hd} for {r}x{c}", table.rows)));
        }
        let mut v = self.value(a).to_vec();
        rotate_pairs(&mut v, &table, c, false);
        self.push("rope", self.shape(a).to_vec(), v, Op::Rope(a, table))
    }

    /// Flat slice `[start, start + prod(shape))` of `a`, reshaped.
    pub fn slice(&mut self, a: Var, start: usize, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n == 0 || start + n > self.value(a).len() {
            return Err(mismatch("slice", format!("{start}+{n} exceeds {}", self.value(a).len())));
        }
        let v = self.value(a)[start..start + n].to_vec();
        self.push("slice", shape, v, Op::Slice(a, start))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() || shape.iter().any(|&s| s == 0) {
            return Err(mismatch("reshape", format!("{:?} -> {shape:?}", self.shape(a))));
        }
        let v = self.value(a).to_vec();
        self.push("reshape", shape, v, Op::Reshape(a))
    }

    // ---- composites -----------------------------------------------------

    /// `x·w (+ b)` with `w` stored as in×out.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    // ---- reverse pass ---------------------------------------------------

    /// Replays the tape backwards from a scalar `loss`. Adjoints of leaves
    /// are retained and readable through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            adj[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                adj[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        self.grads = adj;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |s| gemm_nt(g, bv, m, n, k, s));
                acc(*b, &mut |s| gemm_tn(av, g, m, k, n, s));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |s| {
                    for ((x, &y), &w) in s.iter_mut().zip(g).zip(bv) {
                        *x += y * w;
                    }
                });
                acc(*b, &mut |s| {
                    for ((x, &y), &w) in s.iter_mut().zip(g).zip(av) {
                        *x += y * w;
                    }
                });
            }
            Op::AddRow(a, row) => {
                let c = node.cols();
                acc(*a, &mut |s| add_into(s, g));
                acc(*row, &mut |s| {
                    for chunk in g.chunks(c) {
                        add_into(s, chunk);
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *k)),
            Op::ScaleRows(a, f) => {
                let c = node.cols();
                acc(*a, &mut |s| {
                    for (r, (sc, gc)) in s.chunks_mut(c).zip(g.chunks(c)).enumerate() {
                        sc.iter_mut().zip(gc).for_each(|(x, &y)| *x += y * f[r]);
                    }
                });
            }
            Op::Relu(a) => {
                let av = &nodes[a.0].value;
                acc(*a, &mut |s| {
                    for ((x, &y), &v) in s.iter_mut().zip(g).zip(av) {
                        if v > T::zero() {
                            *x += y;
                        }
                    }
                });
            }
            Op::Sqrt(a) => {
                let out = &node.value;
                acc(*a, &mut |s| {
                    for ((x, &y), &o) in s.iter_mut().zip(g).zip(out) {
                        *x += y / (o + o);
                    }
                });
            }
            Op::Concat(parts) => {
                let rows = node.rows();
                let total = node.cols();
                let mut off = 0;
                for p in parts {
                    let w = nodes[p.0].cols();
                    acc(*p, &mut |s| {
                        for r in 0..rows {
                            add_into(&mut s[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = T::count(nodes[a.0].value.len());
                acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::Transpose(a) => {
                let (r, c) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                acc(*a, &mut |s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let c = node.cols();
                acc(*a, &mut |s| {
                    for (e, &i) in idx.iter().enumerate() {
                        add_into(&mut s[i * c..(i + 1) * c], &g[e * c..(e + 1) * c]);
                    }
                });
            }
            Op::SegmentSum(a, offsets) => {
                let c = node.cols();
                acc(*a, &mut |s| {
                    for (seg, w) in offsets.windows(2).enumerate() {
                        let gs = &g[seg * c..(seg + 1) * c];
                        for e in w[0]..w[1] {
                            add_into(&mut s[e * c..(e + 1) * c], gs);
                        }
                    }
                });
            }
            Op::SegmentSoftmax(a, offsets) => {
                let c = node.cols();
                let y = &node.value;
                acc(*a, &mut |s| {
                    for w in offsets.windows(2) {
                        for col in 0..c {
                            let mut dot = T::zero();
                            for e in w[0]..w[1] {
                                dot += y[e * c + col] * g[e * c + col];
                            }
                            for e in w[0]..w[1] {
                                let k = e * c + col;
                                s[k] += y[k] * (g[k] - dot);
                            }
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let c = node.cols();
                let y = &node.value;
                acc(*a, &mut |s| {
                    for ((sr, yr), gr) in s.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&p, &q)| a + p * q);
                        for ((x, &p), &q) in sr.iter_mut().zip(yr).zip(gr) {
                            *x += p * (q - dot);
                        }
                    }
                });
            }
            Op::GroupSum(a, group) => {
                let k = node.cols();
                let c = k * group;
                acc(*a, &mut |s| {
                    for (sr, gr) in s.chunks_mut(c).zip(g.chunks(k)) {
                        for (h, &gv) in gr.iter().enumerate() {
                            sr[h * group..(h + 1) * group].iter_mut().for_each(|x| *x += gv);
                        }
                    }
                });
            }
            Op::RepeatCols(a, times) => {
                let c = nodes[a.0].cols();
                acc(*a, &mut |s| {
                    for (sr, gr) in s.chunks_mut(c).zip(g.chunks(c * times)) {
                        for (j, x) in sr.iter_mut().enumerate() {
                            for &gv in &gr[j * times..(j + 1) * times] {
                                *x += gv;
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let d = node.cols();
                let dn = T::count(d);
                let gv = &nodes[gain.0].value;
                acc(*x, &mut |s| {
                    let mut dxhat = vec![T::zero(); d];
                    for (r, (sr, gr)) in s.chunks_mut(d).zip(g.chunks(d)).enumerate() {
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for j in 0..d {
                            dxhat[j] = gr[j] * gv[j];
                            sum_d += dxhat[j];
                            sum_dx += dxhat[j] * xh[j];
                        }
                        let k = inv_std[r] / dn;
                        for j in 0..d {
                            sr[j] += k * (dn * dxhat[j] - sum_d - xh[j] * sum_dx);
                        }
                    }
                });
                acc(*gain, &mut |s| {
                    for (gr, xh) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            s[j] += gr[j] * xh[j];
                        }
                    }
                });
                acc(*bias, &mut |s| {
                    for gr in g.chunks(d) {
                        add_into(s, gr);
                    }
                });
            }
            Op::Rope(a, table) => {
                let c = node.cols();
                acc(*a, &mut |s| {
                    let mut back = g.to_vec();
                    rotate_pairs(&mut back, table, c, true);
                    add_into(s, &back);
                });
            }
            Op::Slice(a, start) => {
                let n = node.value.len();
                acc(*a, &mut |s| add_into(&mut s[*start..*start + n], g));
            }
            Op::Reshape(a) => acc(*a, &mut |s| add_into(s, g)),
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn rotate_pairs<T: Real>(v: &mut [T], table: &RopeTable<T>, cols: usize, inverse: bool) {
    let hd = table.head_dim;
    let half = hd / 2;
    for (r, row) in v.chunks_mut(cols).enumerate() {
        let cs = &table.cos[r * half..(r + 1) * half];
        let sn = &table.sin[r * half..(r + 1) * half];
        for head in row.chunks_mut(hd) {
            for p in 0..half {
                let (x0, x1) = (head[2 * p], head[2 * p + 1]);
                let (c, s) = (cs[p], if inverse { -sn[p] } else { sn[p] });
                head[2 * p] = x0 * c - x1 * s;
                head[2 * p + 1] = x0 * s + x1 * c;
            }
        }
    }
}
