//! Unstructured point-cloud datasets, e.g. fields on an airfoil mesh.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::{read_dataset, DataError, DatasetFile, DatasetHeader, DatasetKind, Layout, Result, Sample};

/// Reads a dataset whose locations are explicit (shared or per sample).
pub fn load_external_pointcloud_dataset(path: impl AsRef<Path>) -> Result<DatasetFile> {
    let d = read_dataset(path)?;
    match d.header.layout {
        Layout::Shared | Layout::PerSample => Ok(d),
        other => Err(DataError::Corrupt(format!("expected explicit positions, file has {other:?} layout"))),
    }
}

/// Builds a point-cloud dataset from CSV text with a header row and columns
/// `sample, x₁…x_dim, in₁…in_c, out₁…out_out`. Rows of one sample must be
/// contiguous and every sample needs the same number of points. `bounds`
/// defaults to the bounding box of all positions.
pub fn pointcloud_from_csv(
    r: impl Read,
    dim: usize,
    c: usize,
    out: usize,
    bounds: Option<Vec<(f64, f64)>>,
) -> Result<DatasetFile> {
    if dim == 0 || c == 0 || out == 0 {
        return Err(DataError::InvalidArgument(format!("dim = {dim}, c = {c}, out = {out} must be positive")));
    }
    let width = 1 + dim + c + out;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
    let mut groups: BTreeMap<u64, usize> = BTreeMap::new();
    let mut samples: Vec<Sample> = Vec::new();
    let mut last: Option<u64> = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| DataError::Corrupt(format!("csv row {}: {e}", row + 1)))?;
        if rec.len() != width {
            return Err(DataError::Corrupt(format!("csv row {} has {} columns, expected {width}", row + 1, rec.len())));
        }
        let id: u64 = rec[0].parse().map_err(|_| DataError::Corrupt(format!("csv row {}: sample id `{}`", row + 1, &rec[0])))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|_| DataError::Corrupt(format!("csv row {}: value `{f}`", row + 1))))
            .collect::<Result<Vec<_>>>()?;
        if last != Some(id) {
            if groups.insert(id, samples.len()).is_some() {
                return Err(DataError::Corrupt(format!("rows of sample {id} are not contiguous")));
            }
            samples.push(Sample { theta: Vec::new(), target: Vec::new(), positions: Some(Vec::new()) });
            last = Some(id);
        }
        let s = samples.last_mut().expect("pushed above");
        s.positions.as_mut().expect("per-sample").extend_from_slice(&vals[..dim]);
        s.theta.extend_from_slice(&vals[dim..dim + c]);
        s.target.extend_from_slice(&vals[dim + c..]);
    }
    let l = samples.first().map_or(0, |s| s.theta.len() / c);
    if l == 0 || samples.iter().any(|s| s.theta.len() != l * c) {
        return Err(DataError::Corrupt("samples must be non-empty and of equal size".into()));
    }
    let bounds = bounds.unwrap_or_else(|| {
        (0..dim)
            .map(|k| {
                samples.iter().flat_map(|s| s.positions.as_ref().expect("per-sample").iter().skip(k).step_by(dim)).fold(
                    (f64::INFINITY, f64::NEG_INFINITY),
                    |(lo, hi), &x| (lo.min(x), hi.max(x)),
                )
            })
            .collect()
    });
    let header = DatasetHeader {
        kind: DatasetKind::External,
        nx: 0,
        ny: 0,
        l,
        dim,
        c,
        out,
        t_in: 0,
        t_out: 0,
        bounds,
        params: Vec::new(),
        seed: 0,
        layout: Layout::PerSample,
    };
    let d = DatasetFile { header, shared_positions: None, samples };
    d.validate()?;
    Ok(d)
}
