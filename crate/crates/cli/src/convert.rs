//! Dataset files to model-ready samples.

use std::sync::Arc;

use hamlet_core::model::{Mode, ModelConfig, QuerySet};
use hamlet_core::{OperatorSample, PointSet, Tensor};
use hamlet_data::{DatasetFile, Layout};

use crate::{CliError, Result};

/// Copies the data-dependent fields (channels, mode, bounds) into `cfg`.
pub fn configure_for(cfg: &mut ModelConfig, d: &DatasetFile) {
    let h = &d.header;
    cfg.in_channels = h.c;
    cfg.out_channels = h.out;
    cfg.bounds = h.bounds.clone();
    if h.is_steady() {
        cfg.mode = Mode::Steady;
    } else {
        cfg.mode = Mode::Rollout;
        cfg.rollout_steps = h.t_out;
    }
}

fn point_set(d: &DatasetFile, i: usize) -> Result<PointSet> {
    let h = &d.header;
    let pos = Tensor::matrix(h.l, h.dim, d.positions(i)).map_err(|e| CliError::Data(e.to_string()))?;
    PointSet::new(pos, h.bounds.clone()).map_err(|e| CliError::Data(e.to_string()))
}

fn target(d: &DatasetFile, i: usize) -> Result<Tensor> {
    let h = &d.header;
    let t = d.samples[i].target.clone();
    let r = if h.is_steady() { Tensor::matrix(h.l, h.out, t) } else { Tensor::new(vec![h.t_out, h.l, h.out], t) };
    r.map_err(|e| CliError::Data(e.to_string()))
}

/// One sample per dataset entry, querying at the input locations. Grid
/// layouts share a single point set.
pub fn to_samples(d: &DatasetFile) -> Result<Vec<OperatorSample>> {
    let h = &d.header;
    let shared = match h.layout {
        Layout::PerSample => None,
        _ if d.is_empty() => None,
        _ => Some(Arc::new(point_set(d, 0)?)),
    };
    (0..d.len())
        .map(|i| {
            let points = match &shared {
                Some(p) => p.clone(),
                None => Arc::new(point_set(d, i)?),
            };
            let theta = Tensor::matrix(h.l, h.c, d.samples[i].theta.clone()).map_err(|e| CliError::Data(e.to_string()))?;
            Ok(OperatorSample { theta, queries: QuerySet::from_points(&points), points, target: target(d, i)? })
        })
        .collect()
}

/// Inputs from `input`, queries and targets from `query`: the same fields
/// sampled at another resolution.
pub fn to_cross_resolution_samples(input: &DatasetFile, query: &DatasetFile) -> Result<Vec<OperatorSample>> {
    same_fields(input, query)?;
    let mut out = to_samples(input)?;
    let q = to_samples(query)?;
    for (s, q) in out.iter_mut().zip(q) {
        s.queries = q.queries;
        s.target = q.target;
    }
    Ok(out)
}

/// Two datasets describe the same fields when kind, seed, sample count,
/// bounds, PDE parameters and channel layout all agree.
pub fn same_fields(a: &DatasetFile, b: &DatasetFile) -> Result<()> {
    let (x, y) = (&a.header, &b.header);
    let agree = x.kind == y.kind
        && x.seed == y.seed
        && a.len() == b.len()
        && x.bounds == y.bounds
        && x.params == y.params
        && (x.c, x.out, x.t_in, x.t_out) == (y.c, y.out, y.t_in, y.t_out);
    if agree {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "datasets do not hold the same fields ({} seed {} N {} vs {} seed {} N {})",
            x.kind,
            x.seed,
            a.len(),
            y.kind,
            y.seed,
            b.len()
        )))
    }
}
