use std::f64::consts::PI;
use std::sync::Arc;

use crate::scalar::Real;
use crate::tensor::{mismatch, Result, RopeTable, Tape, Tensor, TensorError};

/// Rotary position embedding over n spatial axes. Each head's `d_k` dims are
/// partitioned across the axes (`dims_per_axis`) and standard 1-D RoPE runs
/// per axis on its partition.
#[derive(Clone, Debug, PartialEq)]
pub struct RopeConfig<T> {
    pub base: T,
    pub dims_per_axis: Vec<usize>,
    /// User-facing scale: the domain diagonal spans `[0, 2π·scale]` radians.
    pub scale: T,
    /// Radians per coordinate unit at frequency index 0.
    pub angle_per_unit: T,
}

impl<T: Real> RopeConfig<T> {
    /// Splits `head_dim` into rotation pairs distributed round-robin over
    /// the axes, and scales angles so the diagonal of `bounds` maps to
    /// `2π·scale`.
    pub fn for_domain(head_dim: usize, bounds: &[(T, T)], base: T, scale: T) -> Result<Self> {
        if head_dim % 2 != 0 || bounds.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "rope",
                detail: format!("head dim {head_dim} must be even and the domain non-empty"),
            });
        }
        let n = bounds.len();
        let mut dims = vec![0; n];
        for p in 0..head_dim / 2 {
            dims[p % n] += 2;
        }
        let diag = bounds.iter().fold(T::zero(), |a, &(lo, hi)| a + (hi - lo) * (hi - lo)).sqrt();
        let angle_per_unit = T::lit(2.0 * PI) * scale / diag;
        Ok(Self { base, dims_per_axis: dims, scale, angle_per_unit })
    }

    pub fn head_dim(&self) -> usize {
        self.dims_per_axis.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims_per_axis.iter().any(|d| d % 2 != 0) {
            return Err(TensorError::InvalidArgument {
                op: "rope",
                detail: format!("odd axis partition {:?}", self.dims_per_axis),
            });
        }
        Ok(())
    }

    /// `(axis, frequency)` for every rotated pair of a head, in layout order.
    pub fn pair_frequencies(&self) -> Vec<(usize, T)> {
        let mut out = Vec::with_capacity(self.head_dim() / 2);
        for (axis, &m) in self.dims_per_axis.iter().enumerate() {
            for j in 0..m / 2 {
                let expo = -T::lit(2.0) * T::count(j) / T::count(m);
                out.push((axis, self.base.powf(expo)));
            }
        }
        out
    }

    /// Angle table for an L×n position matrix.
    pub fn table(&self, positions: &Tensor<T>) -> Result<RopeTable<T>> {
        self.validate()?;
        if positions.cols() != self.dims_per_axis.len() {
            return Err(mismatch(
                "rope",
                format!("{} axes configured, positions have {}", self.dims_per_axis.len(), positions.cols()),
            ));
        }
        let freqs = self.pair_frequencies();
        let half = freqs.len();
        let rows = positions.rows();
        let mut cos = Vec::with_capacity(rows * half);
        let mut sin = Vec::with_capacity(rows * half);
        for r in 0..rows {
            let p = positions.row(r);
            for &(axis, w) in &freqs {
                let angle = w * self.angle_per_unit * p[axis];
                cos.push(angle.cos());
                sin.push(angle.sin());
            }
        }
        Ok(RopeTable { head_dim: self.head_dim(), rows, cos, sin })
    }
}

/// Rotates each row of `vecs` (L×d_k, or L×(H·d_k) with shared angles per
/// head) by the angles its position dictates.
pub fn rope_encode<T: Real>(vecs: &Tensor<T>, positions: &Tensor<T>, cfg: &RopeConfig<T>) -> Result<Tensor<T>> {
    let table = Arc::new(cfg.table(positions)?);
    let mut tape = Tape::new();
    let v = tape.constant(vecs);
    let out = tape.rope(v, table)?;
    Ok(tape.tensor(out))
}
