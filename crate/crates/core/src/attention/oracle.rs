//! Slow reference path that evaluates graph attention as a discretized kernel
//! integral: for every pair (i, j) it materializes the block-diagonal kernel
//! `κ_ij = O·(w¹_ij V¹ ⊕ … ⊕ w^H_ij V^H)` and applies it to the stacked
//! `[h_j; …; h_j]`, averaging over `N_i`. Nothing here shares code with the
//! tape-based fast path.

use super::{GtBlockParams, RopeConfig};
use crate::graph::Graph;
use crate::scalar::Real;
use crate::tensor::{mismatch, Result, Tensor};

type Dense<T> = Vec<Vec<T>>;

fn dense_zeros<T: Real>(r: usize, c: usize) -> Dense<T> {
    vec![vec![T::zero(); c]; r]
}

fn mat_vec<T: Real>(m: &Dense<T>, v: &[T]) -> Vec<T> {
    m.iter().map(|row| row.iter().zip(v).fold(T::zero(), |a, (&x, &y)| a + x * y)).collect()
}

fn mat_mat<T: Real>(a: &Dense<T>, b: &Dense<T>) -> Dense<T> {
    let (n, m) = (a.len(), b[0].len());
    let mut out = dense_zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            out[i][j] = (0..b.len()).fold(T::zero(), |s, t| s + a[i][t] * b[t][j]);
        }
    }
    out
}

/// Rows `cols` of the transpose of an in×out weight: the d_k×d head matrix.
fn head_matrix<T: Real>(w: &Tensor<T>, head: usize, dk: usize) -> Dense<T> {
    (0..dk).map(|r| (0..w.rows()).map(|c| w.at(c, head * dk + r)).collect()).collect()
}

fn transpose<T: Real>(w: &Tensor<T>) -> Dense<T> {
    (0..w.cols()).map(|r| (0..w.rows()).map(|c| w.at(c, r)).collect()).collect()
}

/// Dense d_k×d_k rotation `R_Θ(x)`.
fn rotation<T: Real>(cfg: Option<&RopeConfig<T>>, x: &[T], dk: usize) -> Dense<T> {
    let mut r = dense_zeros(dk, dk);
    let Some(cfg) = cfg else {
        (0..dk).for_each(|i| r[i][i] = T::one());
        return r;
    };
    let mut pair = 0;
    for (axis, &m) in cfg.dims_per_axis.iter().enumerate() {
        for j in 0..m / 2 {
            let theta = cfg.base.powf(-(T::count(2 * j) / T::count(m)));
            let angle = theta * cfg.angle_per_unit * x[axis];
            let (s, c) = angle.sin_cos();
            let k = 2 * pair;
            r[k][k] = c;
            r[k][k + 1] = -s;
            r[k + 1][k] = s;
            r[k + 1][k + 1] = c;
            pair += 1;
        }
    }
    r
}

/// Graph self-attention evaluated through explicit per-pair kernel matrices.
pub fn kernel_oracle<T: Real>(
    h: &Tensor<T>,
    g: &Graph<T>,
    p: &GtBlockParams<T>,
    rope: Option<&RopeConfig<T>>,
) -> Result<Tensor<T>> {
    let (l, d) = (h.rows(), h.cols());
    if l != g.len() || d != p.width() {
        return Err(mismatch("kernel_oracle", format!("features {l}x{d} for {} nodes", g.len())));
    }
    let heads = p.heads;
    let dk = d / heads;
    if let Some(cfg) = rope {
        if cfg.dims_per_axis.iter().sum::<usize>() != dk {
            return Err(mismatch("kernel_oracle", "rope partition does not match head dim"));
        }
    }
    let o = transpose(&p.wo);
    let qs: Vec<Dense<T>> = (0..heads).map(|k| head_matrix(&p.wq, k, dk)).collect();
    let ks: Vec<Dense<T>> = (0..heads).map(|k| head_matrix(&p.wk, k, dk)).collect();
    let vs: Vec<Dense<T>> = (0..heads).map(|k| head_matrix(&p.wv, k, dk)).collect();
    let rots: Vec<Dense<T>> = (0..l).map(|i| rotation(rope, g.points().point(i), dk)).collect();
    let inv_sqrt = T::one() / T::count(dk).sqrt();

    let mut out = Vec::with_capacity(l * d);
    for i in 0..l {
        let nbrs = g.neighbors(i);
        // w[k][n]: softmax weight of head k for the n-th neighbor.
        let mut w = vec![vec![T::zero(); nbrs.len()]; heads];
        for k in 0..heads {
            let qi = mat_vec(&rots[i], &mat_vec(&qs[k], h.row(i)));
            let logits: Vec<T> = nbrs
                .iter()
                .map(|&j| {
                    let kj = mat_vec(&rots[j], &mat_vec(&ks[k], h.row(j)));
                    qi.iter().zip(&kj).fold(T::zero(), |a, (&x, &y)| a + x * y) * inv_sqrt
                })
                .collect();
            let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let z = logits.iter().fold(T::zero(), |a, &b| a + (b - m).exp());
            for (n, &lg) in logits.iter().enumerate() {
                w[k][n] = (lg - m).exp() / z;
            }
        }
        let mut u = vec![T::zero(); d];
        for (n, &j) in nbrs.iter().enumerate() {
            let mut block = dense_zeros(d, heads * d);
            for k in 0..heads {
                for r in 0..dk {
                    for c in 0..d {
                        block[k * dk + r][k * d + c] = w[k][n] * vs[k][r][c];
                    }
                }
            }
            let kernel = mat_mat(&o, &block);
            let stacked: Vec<T> = (0..heads).flat_map(|_| h.row(j).iter().copied()).collect();
            let contrib = mat_vec(&kernel, &stacked);
            u.iter_mut().zip(&contrib).for_each(|(a, &b)| *a += b);
        }
        let inv_n = T::one() / T::count(nbrs.len());
        out.extend(u.into_iter().map(|x| x * inv_n));
    }
    Tensor::matrix(l, d, out)
}
