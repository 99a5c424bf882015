use crate::{DataError, Result};

/// Structured 2-D grid, row-major with y outer and x inner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub bounds: [(f64, f64); 2],
}

impl Grid {
    pub fn new(nx: usize, ny: usize, bounds: [(f64, f64); 2]) -> Result<Self> {
        if nx < 2 || ny < 2 || bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(DataError::InvalidArgument(format!("grid {nx}x{ny} on {bounds:?}")));
        }
        Ok(Self { nx, ny, bounds })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Spacing between lattice nodes (both ends included).
    pub fn node_spacing(&self) -> (f64, f64) {
        let [x, y] = self.bounds;
        ((x.1 - x.0) / (self.nx - 1) as f64, (y.1 - y.0) / (self.ny - 1) as f64)
    }

    /// Width of finite-volume cells tiling the box.
    pub fn cell_size(&self) -> (f64, f64) {
        let [x, y] = self.bounds;
        ((x.1 - x.0) / self.nx as f64, (y.1 - y.0) / self.ny as f64)
    }

    /// Lattice-node coordinates, spanning the bounds exactly.
    pub fn node_positions(&self) -> Vec<f64> {
        let coord = |i: usize, n: usize, (lo, hi): (f64, f64)| (lo + (hi - lo) * (i as f64 / (n - 1) as f64)).min(hi);
        let mut out = Vec::with_capacity(2 * self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push(coord(i, self.nx, self.bounds[0]));
                out.push(coord(j, self.ny, self.bounds[1]));
            }
        }
        out
    }

    /// Cell-center coordinates. Computed as `mid + (2i+1−n)·half/n` so a
    /// box symmetric about the origin gives exactly mirrored centers.
    pub fn cell_centers(&self) -> Vec<f64> {
        let coord = |i: usize, n: usize, (lo, hi): (f64, f64)| {
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            mid + (2.0 * i as f64 + 1.0 - n as f64) * (half / n as f64)
        };
        let mut out = Vec::with_capacity(2 * self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push(coord(i, self.nx, self.bounds[0]));
                out.push(coord(j, self.ny, self.bounds[1]));
            }
        }
        out
    }

    /// Box spanned by the cell centers.
    pub fn cell_center_bounds(&self) -> [(f64, f64); 2] {
        let c = self.cell_centers();
        let last = 2 * (self.len() - 1);
        [(c[0], c[last]), (c[1], c[last + 1])]
    }
}
