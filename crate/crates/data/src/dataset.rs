//! Binary dataset container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "HMLT" u16 version  u8 b'D'  u8 kind
//! u32 n  u32 nx  u32 ny  u32 l  u32 dim  u32 c  u32 out  u32 t_in  u32 t_out
//! dim × (f64 lo, f64 hi)
//! u32 n_params  n_params × f64
//! u64 seed  u8 layout
//! [l·dim f64 shared positions, when layout = shared]
//! per sample: l·c f64 theta, frames·l·out f64 target, [l·dim f64 positions]
//! ```
//!
//! `frames` is `t_out`, or 1 for steady datasets (`t_out = 0`).

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::{DataError, Grid, Result};

pub const MAGIC: &[u8; 4] = b"HMLT";
pub const VERSION: u16 = 1;
pub const KIND_DATASET: u8 = b'D';

/// Largest header extent accepted when reading; guards allocations against
/// corrupt counts.
const MAX_EXTENT: u32 = 1 << 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Darcy,
    Swe,
    DiffReact,
    External,
}

impl DatasetKind {
    pub fn code(self) -> u8 {
        match self {
            Self::Darcy => 0,
            Self::Swe => 1,
            Self::DiffReact => 2,
            Self::External => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Self::Darcy,
            1 => Self::Swe,
            2 => Self::DiffReact,
            3 => Self::External,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Darcy => "darcy",
            Self::Swe => "swe",
            Self::DiffReact => "diffreact",
            Self::External => "external",
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "darcy" => Ok(Self::Darcy),
            "swe" | "shallow-water" => Ok(Self::Swe),
            "diffreact" | "diffusion-reaction" => Ok(Self::DiffReact),
            "external" => Ok(Self::External),
            _ => Err(format!("unknown dataset kind `{s}`")),
        }
    }
}

/// Where the sample locations come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Lattice nodes of the `nx × ny` grid, boundary included.
    LatticeNodes,
    /// Finite-volume cell centers of the `nx × ny` grid.
    CellCenters,
    /// One explicit position block shared by every sample.
    Shared,
    /// Every sample carries its own positions.
    PerSample,
}

impl Layout {
    fn code(self) -> u8 {
        match self {
            Self::LatticeNodes => 0,
            Self::CellCenters => 1,
            Self::Shared => 2,
            Self::PerSample => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Self::LatticeNodes,
            1 => Self::CellCenters,
            2 => Self::Shared,
            3 => Self::PerSample,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub kind: DatasetKind,
    /// Zero for unstructured layouts.
    pub nx: usize,
    pub ny: usize,
    /// Points per sample.
    pub l: usize,
    pub dim: usize,
    /// Input channels per point.
    pub c: usize,
    /// Output channels per point and frame.
    pub out: usize,
    pub t_in: usize,
    /// Output frames; zero marks a steady dataset.
    pub t_out: usize,
    pub bounds: Vec<(f64, f64)>,
    /// PDE parameters, e.g. `[β]` for Darcy.
    pub params: Vec<f64>,
    pub seed: u64,
    pub layout: Layout,
}

impl DatasetHeader {
    pub fn frames(&self) -> usize {
        self.t_out.max(1)
    }

    pub fn theta_len(&self) -> usize {
        self.l * self.c
    }

    pub fn target_len(&self) -> usize {
        self.frames() * self.l * self.out
    }

    pub fn is_steady(&self) -> bool {
        self.t_out == 0
    }

    pub fn grid(&self) -> Option<Grid> {
        match self.layout {
            Layout::LatticeNodes | Layout::CellCenters => {
                let b = &self.bounds;
                Grid::new(self.nx, self.ny, [b[0], b[1]]).ok()
            }
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::InvalidArgument(m));
        if self.dim == 0 || self.bounds.len() != self.dim || self.bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
            return bad(format!("bounds {:?} for dimension {}", self.bounds, self.dim));
        }
        if self.l == 0 || self.c == 0 || self.out == 0 {
            return bad(format!("l = {}, c = {}, out = {} must be positive", self.l, self.c, self.out));
        }
        match self.layout {
            Layout::LatticeNodes | Layout::CellCenters => {
                if self.dim != 2 || self.nx < 2 || self.ny < 2 || self.nx * self.ny != self.l {
                    return bad(format!("grid {}x{} does not describe {} points in {}-D", self.nx, self.ny, self.l, self.dim));
                }
            }
            Layout::Shared | Layout::PerSample => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// L×c, point-major.
    pub theta: Vec<f64>,
    /// frames×L×out, point-major within each frame.
    pub target: Vec<f64>,
    /// L×dim, present only for per-sample layouts.
    pub positions: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    /// L×dim, present only for the shared layout.
    pub shared_positions: Option<Vec<f64>>,
    pub samples: Vec<Sample>,
}

impl DatasetFile {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample locations (L×dim) of sample `i`.
    pub fn positions(&self, i: usize) -> Vec<f64> {
        let h = &self.header;
        match h.layout {
            Layout::LatticeNodes => h.grid().expect("validated grid").node_positions(),
            Layout::CellCenters => h.grid().expect("validated grid").cell_centers(),
            Layout::Shared => self.shared_positions.clone().expect("validated positions"),
            Layout::PerSample => self.samples[i].positions.clone().expect("validated positions"),
        }
    }

    /// Checks block sizes, finiteness and that every position lies in the
    /// declared bounds.
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        h.validate()?;
        let check_positions = |p: &[f64]| -> Result<()> {
            if p.len() != h.l * h.dim {
                return Err(DataError::InvalidArgument(format!("{} position values, expected {}", p.len(), h.l * h.dim)));
            }
            for (k, row) in p.chunks(h.dim).enumerate() {
                let inside = row.iter().zip(&h.bounds).all(|(&x, &(lo, hi))| x.is_finite() && x >= lo && x <= hi);
                if !inside {
                    return Err(DataError::OutOfBounds(k));
                }
            }
            Ok(())
        };
        match (h.layout, &self.shared_positions) {
            (Layout::Shared, Some(p)) => check_positions(p)?,
            (Layout::Shared, None) => return Err(DataError::InvalidArgument("shared layout without positions".into())),
            (_, Some(_)) => return Err(DataError::InvalidArgument("positions block given for a layout that has none".into())),
            _ => {}
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.theta.len() != h.theta_len() || s.target.len() != h.target_len() {
                return Err(DataError::InvalidArgument(format!(
                    "sample {i}: {} theta and {} target values, expected {} and {}",
                    s.theta.len(),
                    s.target.len(),
                    h.theta_len(),
                    h.target_len()
                )));
            }
            if s.theta.iter().chain(&s.target).any(|x| !x.is_finite()) {
                return Err(DataError::InvalidArgument(format!("sample {i} holds non-finite values")));
            }
            match (h.layout, &s.positions) {
                (Layout::PerSample, Some(p)) => check_positions(p)?,
                (Layout::PerSample, None) => return Err(DataError::InvalidArgument(format!("sample {i} lacks positions"))),
                (_, Some(_)) => return Err(DataError::InvalidArgument(format!("sample {i} carries unexpected positions"))),
                _ => {}
            }
        }
        Ok(())
    }
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| DataError::InvalidArgument(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s(w: &mut impl Write, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_dataset_to(w: &mut impl Write, d: &DatasetFile) -> Result<()> {
    d.validate()?;
    let h = &d.header;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[KIND_DATASET, h.kind.code()])?;
    for v in [d.samples.len(), h.nx, h.ny, h.l, h.dim, h.c, h.out, h.t_in, h.t_out] {
        put_u32(w, v)?;
    }
    for &(lo, hi) in &h.bounds {
        put_f64s(w, &[lo, hi])?;
    }
    put_u32(w, h.params.len())?;
    put_f64s(w, &h.params)?;
    w.write_all(&h.seed.to_le_bytes())?;
    w.write_all(&[h.layout.code()])?;
    if let Some(p) = &d.shared_positions {
        put_f64s(w, p)?;
    }
    for s in &d.samples {
        put_f64s(w, &s.theta)?;
        put_f64s(w, &s.target)?;
        if let Some(p) = &s.positions {
            put_f64s(w, p)?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => DataError::Truncated,
            _ => DataError::Io(e),
        })?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let v = u32::from_le_bytes(self.bytes()?);
        if v > MAX_EXTENT {
            return Err(DataError::Corrupt(format!("implausible extent {v}")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn read_dataset_from(r: impl Read) -> Result<DatasetFile> {
    let mut r = Reader { inner: r };
    if &r.bytes::<4>()? != MAGIC {
        return Err(DataError::Magic);
    }
    let version = u16::from_le_bytes(r.bytes()?);
    if version != VERSION {
        return Err(DataError::Version(version));
    }
    let file_kind = r.u8()?;
    if file_kind != KIND_DATASET {
        return Err(DataError::Kind(file_kind));
    }
    let kind_code = r.u8()?;
    let kind = DatasetKind::from_code(kind_code).ok_or_else(|| DataError::Corrupt(format!("dataset kind {kind_code}")))?;
    let [n, nx, ny, l, dim, c, out, t_in, t_out] = [(); 9].map(|_| r.u32());
    let (n, dim) = (n?, dim?);
    let bounds = (0..dim).map(|_| Ok((r.f64()?, r.f64()?))).collect::<Result<Vec<_>>>()?;
    let n_params = r.u32()?;
    let params = r.f64s(n_params)?;
    let seed = u64::from_le_bytes(r.bytes()?);
    let layout_code = r.u8()?;
    let layout = Layout::from_code(layout_code).ok_or_else(|| DataError::Corrupt(format!("layout {layout_code}")))?;
    let header = DatasetHeader {
        kind,
        nx: nx?,
        ny: ny?,
        l: l?,
        dim,
        c: c?,
        out: out?,
        t_in: t_in?,
        t_out: t_out?,
        bounds,
        params,
        seed,
        layout,
    };
    header.validate().map_err(|e| DataError::Corrupt(e.to_string()))?;
    let shared_positions = match layout {
        Layout::Shared => Some(r.f64s(header.l * dim)?),
        _ => None,
    };
    let mut samples = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let theta = r.f64s(header.theta_len())?;
        let target = r.f64s(header.target_len())?;
        let positions = match layout {
            Layout::PerSample => Some(r.f64s(header.l * dim)?),
            _ => None,
        };
        samples.push(Sample { theta, target, positions });
    }
    if r.inner.read(&mut [0u8; 1])? != 0 {
        return Err(DataError::Corrupt("trailing bytes after the last sample".into()));
    }
    let d = DatasetFile { header, shared_positions, samples };
    d.validate().map_err(|e| match e {
        DataError::OutOfBounds(k) => DataError::OutOfBounds(k),
        e => DataError::Corrupt(e.to_string()),
    })?;
    Ok(d)
}

pub fn write_dataset(path: impl AsRef<Path>, d: &DatasetFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(&mut w, d)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<DatasetFile> {
    read_dataset_from(BufReader::new(File::open(path)?))
}
