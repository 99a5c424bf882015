//! Dataset builders for the three generators. Sample `k` of a dataset with
//! base seed `s` is drawn from seed `s + k`, so splits with disjoint seed
//! ranges never share a field.

use crate::darcy::{gen_darcy_coefficient, solve_darcy, CoefficientLaw};
use crate::diffreact::{simulate_diffusion_reaction, DiffReactParams};
use crate::swe::{simulate_shallow_water, SweParams};
use crate::{DataError, DatasetFile, DatasetHeader, DatasetKind, Grid, Layout, Result, Sample};

pub const DARCY_BOUNDS: [(f64, f64); 2] = [(0.0, 1.0), (0.0, 1.0)];
pub const SWE_BOUNDS: [(f64, f64); 2] = [(-2.5, 2.5), (-2.5, 2.5)];
pub const DIFFREACT_BOUNDS: [(f64, f64); 2] = [(-1.0, 1.0), (-1.0, 1.0)];

fn check_count(n: usize) -> Result<()> {
    if n == 0 {
        return Err(DataError::InvalidArgument("a generated dataset needs at least one sample".into()));
    }
    Ok(())
}

/// Darcy pairs `a ↦ u` on the `res × res` lattice nodes of the unit square.
pub fn darcy_dataset(n: usize, res: usize, beta: f64, seed: u64, law: &CoefficientLaw) -> Result<DatasetFile> {
    check_count(n)?;
    if !beta.is_finite() {
        return Err(DataError::InvalidArgument(format!("forcing {beta}")));
    }
    let grid = Grid::new(res, res, DARCY_BOUNDS)?;
    let samples = (0..n as u64)
        .map(|k| {
            let a = gen_darcy_coefficient(seed.wrapping_add(k), &grid, law)?;
            let u = solve_darcy(&a, beta, &grid)?;
            Ok(Sample { theta: a, target: u, positions: None })
        })
        .collect::<Result<Vec<_>>>()?;
    let header = DatasetHeader {
        kind: DatasetKind::Darcy,
        nx: res,
        ny: res,
        l: grid.len(),
        dim: 2,
        c: 1,
        out: 1,
        t_in: 0,
        t_out: 0,
        bounds: DARCY_BOUNDS.to_vec(),
        params: vec![beta],
        seed,
        layout: Layout::LatticeNodes,
    };
    Ok(DatasetFile { header, shared_positions: None, samples })
}

/// Splits a trajectory of `t_in + t_out` frames with `ch` values per cell
/// into input channels (frames stacked per point) and target frames.
fn split_frames(frames: &[Vec<f64>], t_in: usize, ch: usize) -> (Vec<f64>, Vec<f64>) {
    let l = frames[0].len() / ch;
    let mut theta = Vec::with_capacity(l * t_in * ch);
    for p in 0..l {
        for f in &frames[..t_in] {
            theta.extend_from_slice(&f[p * ch..(p + 1) * ch]);
        }
    }
    let target = frames[t_in..].concat();
    (theta, target)
}

fn check_frames(t_in: usize, t_out: usize) -> Result<()> {
    if t_in == 0 || t_out == 0 {
        return Err(DataError::InvalidArgument(format!("t_in = {t_in} and t_out = {t_out} must be positive")));
    }
    Ok(())
}

/// Dam-break depth trajectories on `res × res` cell centers: the first
/// `t_in` frames are the input, the next `t_out` the target.
pub fn swe_dataset(n: usize, res: usize, t_in: usize, t_out: usize, seed: u64, p: &SweParams) -> Result<DatasetFile> {
    check_count(n)?;
    check_frames(t_in, t_out)?;
    let grid = Grid::new(res, res, SWE_BOUNDS)?;
    let samples = (0..n as u64)
        .map(|k| {
            let tr = simulate_shallow_water(seed.wrapping_add(k), &grid, t_in + t_out, p)?;
            let (theta, target) = split_frames(&tr.frames, t_in, 1);
            Ok(Sample { theta, target, positions: None })
        })
        .collect::<Result<Vec<_>>>()?;
    let header = DatasetHeader {
        kind: DatasetKind::Swe,
        nx: res,
        ny: res,
        l: grid.len(),
        dim: 2,
        c: t_in,
        out: 1,
        t_in,
        t_out,
        bounds: SWE_BOUNDS.to_vec(),
        params: vec![p.gravity, p.t_final, p.cfl, p.radius_range.0, p.radius_range.1],
        seed,
        layout: Layout::CellCenters,
    };
    Ok(DatasetFile { header, shared_positions: None, samples })
}

/// Activator/inhibitor trajectories on `res × res` cell centers, two
/// channels per frame.
pub fn diffreact_dataset(n: usize, res: usize, t_in: usize, t_out: usize, seed: u64, p: &DiffReactParams) -> Result<DatasetFile> {
    check_count(n)?;
    check_frames(t_in, t_out)?;
    let grid = Grid::new(res, res, DIFFREACT_BOUNDS)?;
    let samples = (0..n as u64)
        .map(|k| {
            let tr = simulate_diffusion_reaction(seed.wrapping_add(k), &grid, t_in + t_out, p)?;
            let (theta, target) = split_frames(&tr.frames, t_in, 2);
            Ok(Sample { theta, target, positions: None })
        })
        .collect::<Result<Vec<_>>>()?;
    let header = DatasetHeader {
        kind: DatasetKind::DiffReact,
        nx: res,
        ny: res,
        l: grid.len(),
        dim: 2,
        c: 2 * t_in,
        out: 2,
        t_in,
        t_out,
        bounds: DIFFREACT_BOUNDS.to_vec(),
        params: vec![p.du, p.dv, p.k, p.t_final],
        seed,
        layout: Layout::CellCenters,
    };
    Ok(DatasetFile { header, shared_positions: None, samples })
}
