use std::sync::Arc;

use rand::Rng;

use crate::attention::{init_bias, init_weight, LN_EPS};
use crate::scalar::Real;
use crate::tensor::{mismatch, Result, Tape, Tensor, TensorError, Var};

pub type Binder<'a, T> = dyn FnMut(&Tensor<T>) -> Var + 'a;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub w: Tensor<T>,
    pub b: Option<Tensor<T>>,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Option<Var>,
}

impl<T: Real> Linear<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let w = init_weight(rng, fan_in, fan_out);
        let b = bias.then(|| init_bias(rng, fan_in, fan_out));
        Self { w, b }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.w"), &self.w));
        if let Some(b) = &self.b {
            out.push((format!("{prefix}.b"), b));
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}.w"), &mut self.w));
        if let Some(b) = &mut self.b {
            out.push((format!("{prefix}.b"), b));
        }
    }

    pub fn bind_with(&self, f: &mut Binder<'_, T>) -> LinearVars {
        let w = f(&self.w);
        let b = self.b.as_ref().map(|b| f(b));
        LinearVars { w, b }
    }
}

impl LinearVars {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.linear(x, self.w, self.b)
    }
}

/// Stack of linear layers with ReLU between consecutive layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<LinearVars>,
}

impl<T: Real> Mlp<T> {
    /// `widths = [in, hidden…, out]`.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, widths: &[usize]) -> Self {
        let layers = widths.windows(2).map(|w| Linear::init(rng, w[0], w[1], true)).collect();
        Self { layers }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}.{i}"), out);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("{prefix}.{i}"), out);
        }
    }

    pub fn bind_with(&self, f: &mut Binder<'_, T>) -> MlpVars {
        MlpVars { layers: self.layers.iter().map(|l| l.bind_with(f)).collect() }
    }
}

impl MlpVars {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, mut x: Var) -> Result<Var> {
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            x = l.apply(tape, x)?;
            if i + 1 < n {
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct NormVars {
    pub gain: Var,
    pub bias: Var,
}

impl<T: Real> Norm<T> {
    pub fn new(d: usize) -> Self {
        Self { gain: Tensor::filled(&[d], T::one()).with_grad(), bias: Tensor::zeros(&[d]).with_grad() }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.gain"), &self.gain));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}.gain"), &mut self.gain));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }

    pub fn bind_with(&self, f: &mut Binder<'_, T>) -> NormVars {
        NormVars { gain: f(&self.gain), bias: f(&self.bias) }
    }
}

impl NormVars {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.layer_norm(x, self.gain, self.bias, T::lit(LN_EPS))
    }
}

/// Galerkin-type cross-attention block fusing input-node latents (keys and
/// values) with query embeddings, wrapped as Attn → Norm → MLP → Norm with
/// residuals on the query stream.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossFormerParams<T> {
    pub heads: usize,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub norm_k: Norm<T>,
    pub norm_v: Norm<T>,
    pub norm1: Norm<T>,
    pub mlp: Mlp<T>,
    pub norm2: Norm<T>,
}

#[derive(Clone, Debug)]
pub struct CrossFormerVars {
    pub heads: usize,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub norm_k: NormVars,
    pub norm_v: NormVars,
    pub norm1: NormVars,
    pub mlp: MlpVars,
    pub norm2: NormVars,
}

impl<T: Real> CrossFormerParams<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::InvalidArgument {
                op: "CrossFormerParams::init",
                detail: format!("{heads} heads do not divide width {d}"),
            });
        }
        Ok(Self {
            heads,
            wq: init_weight(rng, d, d),
            wk: init_weight(rng, d, d),
            wv: init_weight(rng, d, d),
            wo: init_weight(rng, d, d),
            norm_k: Norm::new(d),
            norm_v: Norm::new(d),
            norm1: Norm::new(d),
            mlp: Mlp::init(rng, &[d, 2 * d, d]),
            norm2: Norm::new(d),
        })
    }

    pub fn width(&self) -> usize {
        self.wq.rows()
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.wq"), &self.wq));
        out.push((format!("{prefix}.wk"), &self.wk));
        out.push((format!("{prefix}.wv"), &self.wv));
        out.push((format!("{prefix}.wo"), &self.wo));
        self.norm_k.visit(&format!("{prefix}.norm_k"), out);
        self.norm_v.visit(&format!("{prefix}.norm_v"), out);
        self.norm1.visit(&format!("{prefix}.norm1"), out);
        self.mlp.visit(&format!("{prefix}.mlp"), out);
        self.norm2.visit(&format!("{prefix}.norm2"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}.wq"), &mut self.wq));
        out.push((format!("{prefix}.wk"), &mut self.wk));
        out.push((format!("{prefix}.wv"), &mut self.wv));
        out.push((format!("{prefix}.wo"), &mut self.wo));
        self.norm_k.visit_mut(&format!("{prefix}.norm_k"), out);
        self.norm_v.visit_mut(&format!("{prefix}.norm_v"), out);
        self.norm1.visit_mut(&format!("{prefix}.norm1"), out);
        self.mlp.visit_mut(&format!("{prefix}.mlp"), out);
        self.norm2.visit_mut(&format!("{prefix}.norm2"), out);
    }

    pub fn bind_with(&self, f: &mut Binder<'_, T>) -> CrossFormerVars {
        CrossFormerVars {
            heads: self.heads,
            wq: f(&self.wq),
            wk: f(&self.wk),
            wv: f(&self.wv),
            wo: f(&self.wo),
            norm_k: self.norm_k.bind_with(f),
            norm_v: self.norm_v.bind_with(f),
            norm1: self.norm1.bind_with(f),
            mlp: self.mlp.bind_with(f),
            norm2: self.norm2.bind_with(f),
        }
    }
}

/// Block-diagonal 0/1 mask keeping each head's d_k×d_k block of `KᵀV`.
fn head_mask<T: Real>(d: usize, heads: usize) -> Tensor<T> {
    let dk = d / heads;
    let data = (0..d * d).map(|n| if (n / d) / dk == (n % d) / dk { T::one() } else { T::zero() }).collect();
    Tensor::matrix(d, d, data).expect("square mask")
}

/// Softmax-free linear attention `Q·(KᵀV)/L` per head, with K and V
/// layer-normalized. `key_order` fixes the summation order over input nodes.
pub fn galerkin_attention_vars<T: Real>(
    tape: &mut Tape<T>,
    h_in: Var,
    h_query: Var,
    p: &CrossFormerVars,
    key_order: Option<Arc<[usize]>>,
) -> Result<Var> {
    let (l, d) = (tape.shape(h_in)[0], tape.shape(h_in)[1]);
    if tape.shape(h_query)[1] != d {
        return Err(mismatch("cross_attention", format!("widths {d} vs {}", tape.shape(h_query)[1])));
    }
    let src = match key_order {
        Some(order) => tape.gather_rows(h_in, order)?,
        None => h_in,
    };
    let k = tape.matmul(src, p.wk)?;
    let k = p.norm_k.apply(tape, k)?;
    let v = tape.matmul(src, p.wv)?;
    let v = p.norm_v.apply(tape, v)?;
    let q = tape.matmul(h_query, p.wq)?;
    let kt = tape.transpose(k)?;
    let kv = tape.matmul(kt, v)?;
    let mask = tape.constant(&head_mask::<T>(d, p.heads));
    let kv = tape.mul(kv, mask)?;
    let kv = tape.scale(kv, T::one() / T::count(l))?;
    let attn = tape.matmul(q, kv)?;
    tape.matmul(attn, p.wo)
}

/// Full CrossFormer block: `X = Norm(H_q + Attn)`, `Y = Norm(X + MLP(X))`.
pub fn cross_former_vars<T: Real>(
    tape: &mut Tape<T>,
    h_in: Var,
    h_query: Var,
    p: &CrossFormerVars,
    key_order: Option<Arc<[usize]>>,
) -> Result<Var> {
    let attn = galerkin_attention_vars(tape, h_in, h_query, p, key_order)?;
    let x = tape.add(h_query, attn)?;
    let x = p.norm1.apply(tape, x)?;
    let f = p.mlp.apply(tape, x)?;
    let y = tape.add(x, f)?;
    p.norm2.apply(tape, y)
}

/// Value-level CrossFormer block.
pub fn cross_attention<T: Real>(h_in: &Tensor<T>, h_query: &Tensor<T>, p: &CrossFormerParams<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let a = tape.constant(h_in);
    let b = tape.constant(h_query);
    let pv = p.bind_with(&mut |t| tape.constant(t));
    let out = cross_former_vars(&mut tape, a, b, &pv, None)?;
    Ok(tape.tensor(out))
}

/// Value-level raw Galerkin attention (before residual, norms and MLP).
pub fn galerkin_attention<T: Real>(h_in: &Tensor<T>, h_query: &Tensor<T>, p: &CrossFormerParams<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let a = tape.constant(h_in);
    let b = tape.constant(h_query);
    let pv = p.bind_with(&mut |t| tape.constant(t));
    let out = galerkin_attention_vars(&mut tape, a, b, &pv, None)?;
    Ok(tape.tensor(out))
}
