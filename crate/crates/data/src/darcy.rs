//! Steady Darcy flow `−∇·(a∇u) = β` with `u = 0` on the boundary, on the
//! lattice nodes of a [`Grid`].

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{DataError, Grid, Result};

/// Law of the two-phase coefficient field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoefficientLaw {
    /// Cosine modes per axis in the spectral synthesis.
    pub modes: usize,
    /// Spectral offset: mode `k` has standard deviation `(π²|k|² + τ²)⁻¹`.
    pub tau: f64,
    pub low: f64,
    pub high: f64,
    /// Resolution of the reference lattice whose median sets the threshold.
    pub reference: usize,
}

impl Default for CoefficientLaw {
    fn default() -> Self {
        Self { modes: 12, tau: 3.0, low: 3.0, high: 12.0, reference: 65 }
    }
}

/// A smooth Gaussian random field on the unit square, defined pointwise so
/// the same seed yields the same field at any resolution.
#[derive(Clone, Debug)]
pub struct RandomField {
    modes: usize,
    coeffs: Vec<f64>,
}

impl RandomField {
    pub fn sample(seed: u64, law: &CoefficientLaw) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = law.modes;
        let coeffs = (0..k * k)
            .map(|n| {
                let (k1, k2) = ((n % k) as f64, (n / k) as f64);
                let xi: f64 = StandardNormal.sample(&mut rng);
                if n == 0 {
                    0.0
                } else {
                    xi / (PI * PI * (k1 * k1 + k2 * k2) + law.tau * law.tau)
                }
            })
            .collect();
        Self { modes: k, coeffs }
    }

    /// Value at `(s, t)` in unit-square coordinates.
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        let cs: Vec<f64> = (0..self.modes).map(|k| (PI * k as f64 * s).cos()).collect();
        let ct: Vec<f64> = (0..self.modes).map(|k| (PI * k as f64 * t).cos()).collect();
        let mut acc = 0.0;
        for (k2, &c2) in ct.iter().enumerate() {
            for (k1, &c1) in cs.iter().enumerate() {
                acc += self.coeffs[k2 * self.modes + k1] * c1 * c2;
            }
        }
        acc
    }

    fn median_on(&self, n: usize) -> f64 {
        let mut v: Vec<f64> = (0..n * n)
            .map(|m| self.eval((m % n) as f64 / (n - 1) as f64, (m / n) as f64 / (n - 1) as f64))
            .collect();
        v.sort_by(f64::total_cmp);
        0.5 * (v[(n * n - 1) / 2] + v[n * n / 2])
    }
}

/// Piecewise-constant coefficient on the grid nodes: the random field
/// thresholded at its median over a fixed reference lattice, so nested
/// resolutions see the same interface.
pub fn gen_darcy_coefficient(seed: u64, grid: &Grid, law: &CoefficientLaw) -> Result<Vec<f64>> {
    if grid.nx < 8 || grid.ny < 8 {
        return Err(DataError::InvalidArgument(format!("Darcy grids need at least 8x8 nodes, got {}x{}", grid.nx, grid.ny)));
    }
    let field = RandomField::sample(seed, law);
    let threshold = field.median_on(law.reference);
    let mut a = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let s = i as f64 / (grid.nx - 1) as f64;
            let t = j as f64 / (grid.ny - 1) as f64;
            a.push(if field.eval(s, t) > threshold { law.high } else { law.low });
        }
    }
    Ok(a)
}

/// Compressed sparse rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[r] = s;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                d[r][self.cols[k]] += self.vals[k];
            }
        }
        d
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Five-point conservative stencil with harmonic-mean face coefficients on
/// the interior nodes; boundary values are eliminated (they are zero).
/// Unknown `m` is interior node `(i, j)` with `m = (j−1)(nx−2) + (i−1)`.
pub fn assemble_darcy(a: &[f64], grid: &Grid) -> Result<Csr> {
    if a.len() != grid.len() || a.iter().any(|&x| !(x > 0.0)) {
        return Err(DataError::InvalidArgument("coefficient must be positive on every node".into()));
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let (mx, my) = (nx - 2, ny - 2);
    let (hx, hy) = grid.node_spacing();
    let (cx, cy) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let mut row_ptr = vec![0];
    let (mut cols, mut vals) = (Vec::new(), Vec::new());
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let c = a[grid.index(i, j)];
            let w = harmonic(c, a[grid.index(i - 1, j)]) * cx;
            let e = harmonic(c, a[grid.index(i + 1, j)]) * cx;
            let s = harmonic(c, a[grid.index(i, j - 1)]) * cy;
            let n = harmonic(c, a[grid.index(i, j + 1)]) * cy;
            let m = |i: usize, j: usize| (j - 1) * mx + (i - 1);
            if j > 1 {
                cols.push(m(i, j - 1));
                vals.push(-s);
            }
            if i > 1 {
                cols.push(m(i - 1, j));
                vals.push(-w);
            }
            cols.push(m(i, j));
            vals.push(w + e + s + n);
            if i < nx - 2 {
                cols.push(m(i + 1, j));
                vals.push(-e);
            }
            if j < ny - 2 {
                cols.push(m(i, j + 1));
                vals.push(-n);
            }
            row_ptr.push(cols.len());
        }
    }
    Ok(Csr { n: mx * my, row_ptr, cols, vals })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient on an SPD system from `x = 0`, stopping once
/// `‖r‖ ≤ tol·‖b‖`.
pub fn conjugate_gradient(m: &Csr, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = m.n;
    let mut x = vec![0.0; n];
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for _ in 0..max_iter {
        if rr.sqrt() <= tol * bnorm {
            return Ok(x);
        }
        m.mul_vec(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        x.iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
        r.iter_mut().zip(&ap).for_each(|(r, ap)| *r -= alpha * ap);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        p.iter_mut().zip(&r).for_each(|(p, r)| *p = r + beta * *p);
        rr = rr_new;
    }
    if rr.sqrt() <= tol * bnorm {
        return Ok(x);
    }
    Err(DataError::NonConvergence { iterations: max_iter, residual: rr.sqrt() / bnorm })
}

pub const CG_TOLERANCE: f64 = 1e-10;

/// Pressure field on every grid node (zero on the boundary).
pub fn solve_darcy(a: &[f64], beta: f64, grid: &Grid) -> Result<Vec<f64>> {
    let m = assemble_darcy(a, grid)?;
    let rhs = vec![beta; m.n];
    let inner = conjugate_gradient(&m, &rhs, CG_TOLERANCE, 20 * m.n + 100)?;
    let mut u = vec![0.0; grid.len()];
    let mx = grid.nx - 2;
    for (k, v) in inner.into_iter().enumerate() {
        u[grid.index(k % mx + 1, k / mx + 1)] = v;
    }
    Ok(u)
}
