//! Two-species diffusion-reaction system
//! `∂t u = D_u Δu + u − u³ − k − v`, `∂t v = D_v Δv + u − v`
//! on cell centers with no-flux walls, explicit Euler in time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{DataError, Grid, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffReactParams {
    pub du: f64,
    pub dv: f64,
    pub k: f64,
    pub t_final: f64,
    /// Turn the reaction terms off (pure diffusion).
    pub reactions: bool,
    /// Largest Euler step allowed; the actual step divides each frame interval.
    pub dt_cap: f64,
    /// Explicit step to use instead of the automatic choice.
    pub dt: Option<f64>,
}

impl Default for DiffReactParams {
    fn default() -> Self {
        Self { du: 1e-3, dv: 5e-3, k: 5e-3, t_final: 5.0, reactions: true, dt_cap: 1e-2, dt: None }
    }
}

/// Frames of `(u, v)` interleaved per cell: `frames[t][2·c]` is `u`,
/// `frames[t][2·c + 1]` is `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl DiffReactParams {
    /// Explicit-diffusion stability bound on the grid, scaled by 0.2.
    pub fn stable_dt(&self, grid: &Grid) -> f64 {
        let (dx, dy) = grid.cell_size();
        let h2 = dx.min(dy).powi(2);
        0.2 * h2 / (4.0 * self.du.max(self.dv))
    }
}

/// Standard-normal initial state per cell, seeded.
pub fn random_initial_state(seed: u64, grid: &Grid) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let v = (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    (u, v)
}

/// `Σ_faces (w_nb − w_c)` scaled by the face spacing; wall faces carry no flux.
fn laplacian(w: &[f64], grid: &Grid, out: &mut [f64]) {
    let (dx, dy) = grid.cell_size();
    let (cx, cy) = (1.0 / (dx * dx), 1.0 / (dy * dy));
    out.iter_mut().for_each(|o| *o = 0.0);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.index(i, j);
            if i + 1 < grid.nx {
                let e = grid.index(i + 1, j);
                let f = (w[e] - w[c]) * cx;
                out[c] += f;
                out[e] -= f;
            }
            if j + 1 < grid.ny {
                let n = grid.index(i, j + 1);
                let f = (w[n] - w[c]) * cy;
                out[c] += f;
                out[n] -= f;
            }
        }
    }
}

/// Integrates from the given state and records `frames` evenly spaced
/// snapshots over `[0, t_final]`, the first being the initial state.
pub fn integrate(mut u: Vec<f64>, mut v: Vec<f64>, grid: &Grid, frames: usize, p: &DiffReactParams) -> Result<Trajectory> {
    if frames < 2 || u.len() != grid.len() || v.len() != grid.len() || !(p.t_final > 0.0) {
        return Err(DataError::InvalidArgument(format!("{frames} frames over t = {}", p.t_final)));
    }
    let limit = p.stable_dt(grid);
    let interval = p.t_final / (frames - 1) as f64;
    let substeps = match p.dt {
        Some(dt) if dt > limit => return Err(DataError::Cfl { dt, limit }),
        Some(dt) if dt > 0.0 => (interval / dt).round().max(1.0) as usize,
        Some(dt) => return Err(DataError::InvalidArgument(format!("time step {dt}"))),
        None => (interval / limit.min(p.dt_cap)).ceil() as usize,
    };
    let dt = interval / substeps as f64;
    if dt > limit * (1.0 + 1e-12) {
        return Err(DataError::Cfl { dt, limit });
    }
    let snapshot = |u: &[f64], v: &[f64]| u.iter().zip(v).flat_map(|(&a, &b)| [a, b]).collect::<Vec<f64>>();
    let mut out = Trajectory { times: vec![0.0], frames: vec![snapshot(&u, &v)] };
    let (mut lu, mut lv) = (vec![0.0; grid.len()], vec![0.0; grid.len()]);
    for f in 1..frames {
        for _ in 0..substeps {
            laplacian(&u, grid, &mut lu);
            laplacian(&v, grid, &mut lv);
            for c in 0..grid.len() {
                let (uc, vc) = (u[c], v[c]);
                let (ru, rv) = if p.reactions { (uc - uc * uc * uc - p.k - vc, uc - vc) } else { (0.0, 0.0) };
                u[c] = uc + dt * (p.du * lu[c] + ru);
                v[c] = vc + dt * (p.dv * lv[c] + rv);
            }
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(DataError::InvalidArgument(format!("state diverged before t = {}", f as f64 * interval)));
        }
        out.times.push(f as f64 * interval);
        out.frames.push(snapshot(&u, &v));
    }
    Ok(out)
}

/// Seeded random initial state, then [`integrate`].
pub fn simulate_diffusion_reaction(seed: u64, grid: &Grid, frames: usize, p: &DiffReactParams) -> Result<Trajectory> {
    let (u, v) = random_initial_state(seed, grid);
    integrate(u, v, grid, frames, p)
}
