//! Shallow-water equations over a flat bottom, first-order Rusanov finite
//! volumes on cell centers with reflective walls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{DataError, Grid, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweParams {
    pub gravity: f64,
    pub t_final: f64,
    pub cfl: f64,
    pub depth_inside: f64,
    pub depth_outside: f64,
    pub radius_range: (f64, f64),
}

impl Default for SweParams {
    fn default() -> Self {
        Self { gravity: 1.0, t_final: 1.0, cfl: 0.4, depth_inside: 2.0, depth_outside: 1.0, radius_range: (0.3, 0.7) }
    }
}

/// Conserved state per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweState {
    pub h: Vec<f64>,
    pub hu: Vec<f64>,
    pub hv: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweTrajectory {
    pub times: Vec<f64>,
    /// Depth field per frame.
    pub frames: Vec<Vec<f64>>,
}

/// Deeper water inside a disc of radius `r` about the origin.
pub fn dam_break(grid: &Grid, r: f64, p: &SweParams) -> SweState {
    let c = grid.cell_centers();
    let h = (0..grid.len())
        .map(|k| {
            let (x, y) = (c[2 * k], c[2 * k + 1]);
            if x * x + y * y < r * r {
                p.depth_inside
            } else {
                p.depth_outside
            }
        })
        .collect();
    SweState { h, hu: vec![0.0; grid.len()], hv: vec![0.0; grid.len()] }
}

/// Radius drawn uniformly from `p.radius_range`.
pub fn random_radius(seed: u64, p: &SweParams) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.gen_range(p.radius_range.0..p.radius_range.1)
}

/// Rusanov flux across a face with normal momentum `m` and tangential `t`.
/// Returns (mass, normal momentum, tangential momentum) fluxes.
fn rusanov(g: f64, l: (f64, f64, f64), r: (f64, f64, f64)) -> (f64, f64, f64) {
    let (hl, ml, tl) = l;
    let (hr, mr, tr) = r;
    let (ul, ur) = (ml / hl, mr / hr);
    let a = (ul.abs() + (g * hl).sqrt()).max(ur.abs() + (g * hr).sqrt());
    let fl = (ml, ml * ul + 0.5 * g * hl * hl, tl * ul);
    let fr = (mr, mr * ur + 0.5 * g * hr * hr, tr * ur);
    (
        0.5 * (fl.0 + fr.0) - 0.5 * a * (hr - hl),
        0.5 * (fl.1 + fr.1) - 0.5 * a * (mr - ml),
        0.5 * (fl.2 + fr.2) - 0.5 * a * (tr - tl),
    )
}

fn max_speed(s: &SweState, g: f64) -> f64 {
    (0..s.h.len()).fold(0.0, |m: f64, k| {
        let c = (g * s.h[k]).sqrt();
        m.max(s.hu[k].abs() / s.h[k] + c).max(s.hv[k].abs() / s.h[k] + c)
    })
}

/// One forward-Euler step of size `dt`.
pub fn step(s: &SweState, grid: &Grid, dt: f64, g: f64) -> SweState {
    let (nx, ny) = (grid.nx, grid.ny);
    let (dx, dy) = grid.cell_size();
    let (lx, ly) = (dt / dx, dt / dy);
    let n = grid.len();
    // Flux divergence per cell, x and y parts kept apart.
    let mut dxf = vec![(0.0, 0.0, 0.0); n];
    let mut dyf = vec![(0.0, 0.0, 0.0); n];
    let cell = |k: usize| (s.h[k], s.hu[k], s.hv[k]);
    for j in 0..ny {
        for i in 0..=nx {
            // Face between cells i−1 and i; walls mirror the normal momentum.
            let (l, r) = match (i, i == nx) {
                (0, _) => {
                    let (h, m, t) = cell(grid.index(0, j));
                    ((h, -m, t), (h, m, t))
                }
                (_, true) => {
                    let (h, m, t) = cell(grid.index(nx - 1, j));
                    ((h, m, t), (h, -m, t))
                }
                _ => (cell(grid.index(i - 1, j)), cell(grid.index(i, j))),
            };
            let f = rusanov(g, l, r);
            if i > 0 {
                let k = grid.index(i - 1, j);
                dxf[k] = (dxf[k].0 + f.0, dxf[k].1 + f.1, dxf[k].2 + f.2);
            }
            if i < nx {
                let k = grid.index(i, j);
                dxf[k] = (dxf[k].0 - f.0, dxf[k].1 - f.1, dxf[k].2 - f.2);
            }
        }
    }
    for i in 0..nx {
        for j in 0..=ny {
            let swap = |(h, u, v): (f64, f64, f64)| (h, v, u);
            let (l, r) = match (j, j == ny) {
                (0, _) => {
                    let (h, m, t) = swap(cell(grid.index(i, 0)));
                    ((h, -m, t), (h, m, t))
                }
                (_, true) => {
                    let (h, m, t) = swap(cell(grid.index(i, ny - 1)));
                    ((h, m, t), (h, -m, t))
                }
                _ => (swap(cell(grid.index(i, j - 1))), swap(cell(grid.index(i, j)))),
            };
            let f = rusanov(g, l, r);
            if j > 0 {
                let k = grid.index(i, j - 1);
                dyf[k] = (dyf[k].0 + f.0, dyf[k].1 + f.1, dyf[k].2 + f.2);
            }
            if j < ny {
                let k = grid.index(i, j);
                dyf[k] = (dyf[k].0 - f.0, dyf[k].1 - f.1, dyf[k].2 - f.2);
            }
        }
    }
    let mut out = s.clone();
    for k in 0..n {
        // The y-sweep returns (mass, v-momentum, u-momentum).
        out.h[k] = s.h[k] - (lx * dxf[k].0 + ly * dyf[k].0);
        out.hu[k] = s.hu[k] - (lx * dxf[k].1 + ly * dyf[k].2);
        out.hv[k] = s.hv[k] - (lx * dxf[k].2 + ly * dyf[k].1);
    }
    out
}

/// Advances `state`, recording the depth at `frames` evenly spaced times
/// over `[0, t_final]` (the first being the initial state).
pub fn integrate(mut state: SweState, grid: &Grid, frames: usize, p: &SweParams) -> Result<SweTrajectory> {
    if frames < 2 || state.h.len() != grid.len() || !(p.t_final > 0.0) || !(p.cfl > 0.0 && p.cfl <= 1.0) {
        return Err(DataError::InvalidArgument(format!("{frames} frames, cfl {}", p.cfl)));
    }
    if let Some(&d) = state.h.iter().find(|&&h| !(h > 0.0)) {
        return Err(DataError::Drying { depth: d, time: 0.0 });
    }
    let (dx, dy) = grid.cell_size();
    let interval = p.t_final / (frames - 1) as f64;
    let mut out = SweTrajectory { times: vec![0.0], frames: vec![state.h.clone()] };
    let mut t = 0.0;
    for f in 1..frames {
        let target = f as f64 * interval;
        while t < target {
            let mut dt = p.cfl * dx.min(dy) / max_speed(&state, p.gravity);
            if t + dt >= target {
                dt = target - t;
            }
            state = step(&state, grid, dt, p.gravity);
            t = if t + dt >= target { target } else { t + dt };
            if let Some(&d) = state.h.iter().find(|&&h| !(h > 0.0)) {
                return Err(DataError::Drying { depth: d, time: t });
            }
        }
        out.times.push(target);
        out.frames.push(state.h.clone());
    }
    Ok(out)
}

/// Radial dam break with a seeded radius.
pub fn simulate_shallow_water(seed: u64, grid: &Grid, frames: usize, p: &SweParams) -> Result<SweTrajectory> {
    let r = random_radius(seed, p);
    integrate(dam_break(grid, r, p), grid, frames, p)
}
