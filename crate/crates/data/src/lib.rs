//! Desk-scale PDE data: two-phase Darcy flow, FitzHugh–Nagumo-type
//! diffusion-reaction, radial dam-break shallow water, and the binary
//! dataset container shared by the generators and external point clouds.

pub mod darcy;
pub mod dataset;
pub mod diffreact;
pub mod external;
pub mod generate;
pub mod grid;
pub mod swe;

pub use dataset::{read_dataset, write_dataset, DatasetFile, DatasetHeader, DatasetKind, Layout, Sample};
pub use grid::Grid;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("bad magic bytes")]
    Magic,
    #[error("unsupported format version {0}")]
    Version(u16),
    #[error("file holds kind {0:#04x}, expected a dataset")]
    Kind(u8),
    #[error("file is truncated")]
    Truncated,
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },
    #[error("water depth reached {depth:e} at t = {time}")]
    Drying { depth: f64, time: f64 },
    #[error("point {0} lies outside the declared bounds")]
    OutOfBounds(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
