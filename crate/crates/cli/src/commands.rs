//! Subcommand implementations. Each returns a summary the binary prints;
//! files land under the configured output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hamlet_core::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelError, PosEncoding};
use hamlet_core::training::{fit_normalizers, relative_l2, rmse, TrainError};
use hamlet_core::{OperatorModel, OperatorSample, Trainer};
use hamlet_data::darcy::CoefficientLaw;
use hamlet_data::diffreact::DiffReactParams;
use hamlet_data::generate::{darcy_dataset, diffreact_dataset, swe_dataset};
use hamlet_data::swe::SweParams;
use hamlet_data::{read_dataset, write_dataset, DataError, DatasetFile, DatasetKind};

use crate::baselines::{mean_field, nearest_neighbor, BaselineScore};
use crate::convert::{configure_for, same_fields, to_cross_resolution_samples, to_samples};
use crate::{AblationKind, CliError, Result, RunConfig};

pub const BEST_CHECKPOINT: &str = "model.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const HISTORY_CSV: &str = "history.csv";
pub const RESOLVED_CONFIG: &str = "run.cfg";

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn data_err(path: &Path, e: DataError) -> CliError {
    match e {
        DataError::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => {
            CliError::Usage(format!("{}: dataset not found", path.display()))
        }
        DataError::InvalidArgument(m) => CliError::Usage(m),
        DataError::NonConvergence { .. } | DataError::Cfl { .. } | DataError::Drying { .. } => CliError::Numeric(e.to_string()),
        e => io_err(path, e),
    }
}

fn model_err(e: ModelError) -> CliError {
    match e {
        ModelError::Io(_) | ModelError::Format(_) => CliError::Io(e.to_string()),
        e => CliError::Usage(e.to_string()),
    }
}

fn train_err(e: TrainError) -> CliError {
    if e.is_numeric_fault() {
        return CliError::Numeric(e.to_string());
    }
    match e {
        TrainError::Model(e) => model_err(e),
        e => CliError::Usage(e.to_string()),
    }
}

pub fn load_dataset(path: &Path) -> Result<DatasetFile> {
    read_dataset(path).map_err(|e| data_err(path, e))
}

pub fn load_model(path: &Path) -> Result<(OperatorModel, Vec<(String, hamlet_core::Tensor)>)> {
    let ck = load_checkpoint(path).map_err(|e| match e {
        ModelError::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => {
            CliError::Usage(format!("{}: checkpoint not found", path.display()))
        }
        e => io_err(path, e),
    })?;
    ck.into_model().map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Clone, Debug)]
pub struct GenArgs {
    pub kind: DatasetKind,
    pub out_dir: PathBuf,
    pub n: usize,
    pub n_test: usize,
    /// Lattice nodes (Darcy) or cells (time-dependent problems) per axis.
    pub grid: usize,
    pub beta: f64,
    pub t_in: usize,
    pub t_out: usize,
    pub seed: u64,
}

impl Default for GenArgs {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Darcy,
            out_dir: PathBuf::from("data"),
            n: 200,
            n_test: 50,
            grid: 16,
            beta: 1.0,
            t_in: 4,
            t_out: 10,
            seed: 0,
        }
    }
}

/// Builds one dataset of `n` samples whose seeds start at `seed`.
pub fn generate(args: &GenArgs, n: usize, seed: u64) -> Result<DatasetFile> {
    let r = match args.kind {
        DatasetKind::Darcy => darcy_dataset(n, args.grid, args.beta, seed, &CoefficientLaw::default()),
        DatasetKind::Swe => swe_dataset(n, args.grid, args.t_in, args.t_out, seed, &SweParams::default()),
        DatasetKind::DiffReact => diffreact_dataset(n, args.grid, args.t_in, args.t_out, seed, &DiffReactParams::default()),
        DatasetKind::External => return Err(CliError::Usage("external datasets are converted, not generated".into())),
    };
    r.map_err(|e| data_err(&args.out_dir, e))
}

/// Writes `train.bin` (seeds `seed..seed+n`) and, when `n_test > 0`,
/// `test.bin` (the next `n_test` seeds).
pub fn cmd_gen(args: &GenArgs) -> Result<Vec<PathBuf>> {
    if args.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    if !(args.beta.is_finite() && args.beta > 0.0) {
        return Err(CliError::Usage(format!("--beta must be positive, got {}", args.beta)));
    }
    fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;
    let mut written = Vec::new();
    for (name, n, seed) in [("train.bin", args.n, args.seed), ("test.bin", args.n_test, args.seed + args.n as u64)] {
        if n == 0 {
            continue;
        }
        let d = generate(args, n, seed)?;
        let path = args.out_dir.join(name);
        write_dataset(&path, &d).map_err(|e| data_err(&path, e))?;
        log::info!("wrote {} samples to {}", n, path.display());
        written.push(path);
    }
    Ok(written)
}

/// Training and test samples named by the run configuration.
pub struct Split {
    pub train_file: DatasetFile,
    pub train: Vec<OperatorSample>,
    pub test: Vec<OperatorSample>,
}

pub fn load_split(cfg: &RunConfig) -> Result<Split> {
    let path = cfg.train_data.as_ref().ok_or_else(|| CliError::Usage("train_data is not set".into()))?;
    let mut train_file = load_dataset(path)?;
    if cfg.n_train > 0 {
        if cfg.n_train > train_file.len() {
            return Err(CliError::Usage(format!("n_train = {} but {} holds {}", cfg.n_train, path.display(), train_file.len())));
        }
        train_file.samples.truncate(cfg.n_train);
    }
    if train_file.is_empty() {
        return Err(CliError::Usage(format!("{} holds no samples", path.display())));
    }
    let train = to_samples(&train_file)?;
    let test = match &cfg.test_data {
        Some(p) => {
            let d = load_dataset(p)?;
            let h = (&d.header, &train_file.header);
            if (h.0.c, h.0.out, h.0.t_out, &h.0.bounds) != (h.1.c, h.1.out, h.1.t_out, &h.1.bounds) {
                return Err(CliError::Usage(format!("{} does not match the training data layout", p.display())));
            }
            to_samples(&d)?
        }
        None => Vec::new(),
    };
    Ok(Split { train_file, train, test })
}

/// Fresh model for the data, with normalizers fitted on the training set.
pub fn build_model(cfg: &RunConfig, split: &Split) -> Result<OperatorModel> {
    let mut mc = cfg.model.clone();
    configure_for(&mut mc, &split.train_file);
    let mut model = OperatorModel::new(mc).map_err(model_err)?;
    fit_normalizers(&mut model, &split.train);
    Ok(model)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub epochs: usize,
    pub eval_nrmse: f64,
    pub eval_rmse: f64,
    pub train_nrmse: f64,
    pub mean_field: Option<BaselineScore>,
    pub nearest_neighbor: Option<BaselineScore>,
    pub seconds: f64,
}

/// Trains in memory and scores the final-epoch model; writes nothing. The
/// test split is only touched after training, so no model selection leaks
/// into the reported numbers.
pub fn train_in_memory(cfg: &RunConfig, split: &Split) -> Result<(OperatorModel, TrainSummary)> {
    let start = Instant::now();
    let model = build_model(cfg, split)?;
    let mut trainer = Trainer::new(model, cfg.train.clone()).map_err(train_err)?;
    let out = trainer.run(&split.train, &[], |_, _| {}).map_err(train_err)?;
    if let Some(f) = out.fault {
        return Err(CliError::Numeric(f));
    }
    let summary = summarize(&out.last, split, out.history.records.len(), start)?;
    Ok((out.last, summary))
}

fn summarize(model: &OperatorModel, split: &Split, epochs: usize, start: Instant) -> Result<TrainSummary> {
    let tr = hamlet_core::training::evaluate(model, &split.train).map_err(train_err)?;
    let (eval_nrmse, eval_rmse, mf, nn) = if split.test.is_empty() {
        (f64::NAN, f64::NAN, None, None)
    } else {
        let ev = hamlet_core::training::evaluate(model, &split.test).map_err(train_err)?;
        (ev.nrmse, ev.rmse, mean_field(&split.train, &split.test).ok(), nearest_neighbor(&split.train, &split.test).ok())
    };
    Ok(TrainSummary {
        epochs,
        eval_nrmse,
        eval_rmse,
        train_nrmse: tr.nrmse,
        mean_field: mf,
        nearest_neighbor: nn,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Full training run with checkpoints, history CSV and the resolved config
/// under `cfg.out_dir`. With `resume`, continues from `last.ckpt` at the
/// saved step of the learning-rate schedule.
pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<TrainSummary> {
    let start = Instant::now();
    let split = load_split(cfg)?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_text(&dir.join(RESOLVED_CONFIG), &format!("# config hash {}\n{}", cfg.hash(), cfg.to_text()))?;

    let fresh = build_model(cfg, &split)?;
    let last_path = dir.join(LAST_CHECKPOINT);
    let history_path = dir.join(HISTORY_CSV);
    let (model, state, mut history_text) = if resume {
        let (m, extras) = load_model(&last_path)?;
        if m.config != fresh.config {
            return Err(CliError::Usage(format!("{} was trained with a different model configuration", last_path.display())));
        }
        let prior = fs::read_to_string(&history_path).map_err(|e| io_err(&history_path, e))?;
        (m, Some(extras), prior)
    } else {
        (fresh, None, format!("{}\n", hamlet_core::training::TrainHistory::CSV_HEADER))
    };
    let mut trainer = Trainer::new(model, cfg.train.clone()).map_err(train_err)?;
    if let Some(extras) = state {
        trainer.restore_state(&extras).map_err(train_err)?;
    }
    let mut save_err = None;
    let limit = if cfg.stop_after == 0 { cfg.train.epochs } else { cfg.stop_after };
    let out = trainer
        .run_until(limit, &split.train, &split.test, |rec, t| {
            let _ = writeln!(
                history_text,
                "{},{},{},{},{},{}",
                rec.epoch, rec.train_loss, rec.eval_nrmse, rec.eval_rmse, rec.lr, rec.seconds
            );
            let ck = Checkpoint::from_model(&t.model, t.state_tensors());
            let r = save_checkpoint(&last_path, &ck).map_err(|e| io_err(&last_path, e));
            let r = r.and_then(|_| write_text(&history_path, &history_text));
            if let Err(e) = r {
                save_err.get_or_insert(e);
            }
        })
        .map_err(train_err)?;
    if let Some(e) = save_err {
        return Err(e);
    }
    let best_path = dir.join(BEST_CHECKPOINT);
    save_checkpoint(&best_path, &Checkpoint::from_model(&out.best, Vec::new())).map_err(|e| io_err(&best_path, e))?;
    if let Some(f) = out.fault {
        return Err(CliError::Numeric(f));
    }
    let summary = summarize(&out.best, &split, trainer.epoch, start)?;
    let mut rows = vec![
        vec!["train_nrmse".into(), summary.train_nrmse.to_string()],
        vec!["eval_nrmse".into(), summary.eval_nrmse.to_string()],
        vec!["eval_rmse".into(), summary.eval_rmse.to_string()],
    ];
    if let (Some(m), Some(n)) = (summary.mean_field, summary.nearest_neighbor) {
        rows.push(vec!["mean_field_nrmse".into(), m.nrmse.to_string()]);
        rows.push(vec!["nearest_neighbor_nrmse".into(), n.nrmse.to_string()]);
    }
    write_csv(&dir.join("summary.csv"), &["metric", "value"], &rows)?;
    Ok(summary)
}

/// Per-sample metrics of a model on a dataset.
#[derive(Clone, Debug)]
pub struct EvalTable {
    pub rel_l2: Vec<f64>,
    pub rmse: Vec<f64>,
    pub nrmse: f64,
    pub total_rmse: f64,
}

impl EvalTable {
    /// Largest per-sample relative L₂ error: the empirical maximum offset.
    pub fn max_offset(&self) -> f64 {
        self.rel_l2.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_compatible(model: &OperatorModel, d: &DatasetFile) -> Result<()> {
    let c = &model.config;
    let h = &d.header;
    let steps = if h.is_steady() { 0 } else { h.t_out };
    let model_steps = match c.mode {
        hamlet_core::model::Mode::Steady => 0,
        hamlet_core::model::Mode::Rollout => c.rollout_steps,
    };
    if c.in_channels != h.c || c.out_channels != h.out || steps != model_steps || c.bounds != h.bounds {
        return Err(CliError::Usage(format!(
            "checkpoint expects {} → {} channels, {} steps on {:?}; dataset has {} → {}, {} steps on {:?}",
            c.in_channels, c.out_channels, model_steps, c.bounds, h.c, h.out, steps, h.bounds
        )));
    }
    Ok(())
}

/// Predictions for every sample.
pub fn predict_all(model: &OperatorModel, samples: &[OperatorSample]) -> Result<Vec<hamlet_core::Tensor>> {
    samples
        .iter()
        .map(|s| {
            let input = model.prepare_input(&s.theta, &s.points).map_err(model_err)?;
            model.predict(&input, &s.queries).map_err(model_err)
        })
        .collect()
}

pub fn eval_samples(model: &OperatorModel, samples: &[OperatorSample]) -> Result<(EvalTable, Vec<hamlet_core::Tensor>)> {
    if samples.is_empty() {
        return Err(CliError::Usage("nothing to evaluate".into()));
    }
    let preds = predict_all(model, samples)?;
    let targets: Vec<_> = samples.iter().map(|s| s.target.clone()).collect();
    let mut rel = Vec::new();
    let mut per_rmse = Vec::new();
    for (p, t) in preds.iter().zip(&targets) {
        rel.push(relative_l2(p, t).map_err(train_err)?);
        per_rmse.push(rmse(std::slice::from_ref(p), std::slice::from_ref(t)).map_err(train_err)?);
    }
    let total_rmse = rmse(&preds, &targets).map_err(train_err)?;
    let nrmse = rel.iter().sum::<f64>() / rel.len() as f64;
    if !nrmse.is_finite() {
        return Err(CliError::Numeric("non-finite prediction".into()));
    }
    Ok((EvalTable { rel_l2: rel, rmse: per_rmse, nrmse, total_rmse }, preds))
}

#[derive(Clone, Debug, Default)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    /// Same fields at the query resolution; inputs still come from `dataset`.
    pub query_dataset: Option<PathBuf>,
    /// Per-sample metrics CSV.
    pub metrics_csv: Option<PathBuf>,
    /// Per-point error field of one sample.
    pub error_field_csv: Option<PathBuf>,
    pub error_field_sample: usize,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalTable> {
    let (model, _) = load_model(&args.checkpoint)?;
    let d = load_dataset(&args.dataset)?;
    check_compatible(&model, &d)?;
    let samples = match &args.query_dataset {
        Some(q) => {
            let qd = load_dataset(q)?;
            to_cross_resolution_samples(&d, &qd)?
        }
        None => to_samples(&d)?,
    };
    let (table, preds) = eval_samples(&model, &samples)?;
    if let Some(path) = &args.metrics_csv {
        let rows = (0..table.rel_l2.len())
            .map(|i| vec![i.to_string(), table.rel_l2[i].to_string(), table.rmse[i].to_string()])
            .collect::<Vec<_>>();
        write_csv(path, &["sample", "rel_l2", "rmse"], &rows)?;
    }
    if let Some(path) = &args.error_field_csv {
        let k = args.error_field_sample;
        let s = samples.get(k).ok_or_else(|| CliError::Usage(format!("sample {k} out of range")))?;
        let q = s.queries.positions();
        let (p, t) = (preds[k].data(), s.target.data());
        let per_frame = q.rows() * model.config.out_channels;
        let rows = (0..p.len())
            .map(|i| {
                let (frame, rest) = (i / per_frame, i % per_frame);
                let (point, channel) = (rest / model.config.out_channels, rest % model.config.out_channels);
                let mut r = vec![frame.to_string(), point.to_string(), channel.to_string()];
                r.extend(q.row(point).iter().map(|x| x.to_string()));
                r.extend([p[i].to_string(), t[i].to_string(), (p[i] - t[i]).to_string()]);
                r
            })
            .collect::<Vec<_>>();
        let mut header = vec!["frame", "point", "channel"];
        let axes = ["x", "y", "z"];
        header.extend(axes.iter().take(q.cols()));
        header.extend(["pred", "target", "error"]);
        write_csv(path, &header, &rows)?;
    }
    Ok(table)
}

#[derive(Clone, Debug)]
pub struct InvarianceRow {
    pub dataset: PathBuf,
    pub points: usize,
    pub nrmse: f64,
    pub max_offset: f64,
}

/// Evaluates one checkpoint on the same fields at several resolutions.
/// Every dataset must hold the same underlying fields (same generator,
/// seeds, bounds and parameters); only the sampling may differ.
pub fn cmd_invariance(checkpoint: &Path, datasets: &[PathBuf], csv: Option<&Path>) -> Result<Vec<InvarianceRow>> {
    if datasets.is_empty() {
        return Err(CliError::Usage("invariance needs at least one dataset".into()));
    }
    let (model, _) = load_model(checkpoint)?;
    let files = datasets.iter().map(|p| load_dataset(p)).collect::<Result<Vec<_>>>()?;
    for f in &files[1..] {
        same_fields(&files[0], f)?;
    }
    let mut rows = Vec::new();
    for (path, d) in datasets.iter().zip(&files) {
        check_compatible(&model, d)?;
        let (t, _) = eval_samples(&model, &to_samples(d)?)?;
        rows.push(InvarianceRow { dataset: path.clone(), points: d.header.l, nrmse: t.nrmse, max_offset: t.max_offset() });
    }
    if let Some(p) = csv {
        let body = rows
            .iter()
            .map(|r| vec![r.dataset.display().to_string(), r.points.to_string(), r.nrmse.to_string(), r.max_offset.to_string()])
            .collect::<Vec<_>>();
        write_csv(p, &["dataset", "points", "nrmse", "max_offset"], &body)?;
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub value: String,
    pub config_hash: String,
    pub nrmse: f64,
    pub rmse: f64,
    /// Mean directed edge count of the training graphs.
    pub edges: f64,
    pub seconds: f64,
}

fn default_sweep(kind: AblationKind) -> Vec<String> {
    let v: &[&str] = match kind {
        AblationKind::Radius => &["0.04", "0.08", "0.12", "0.16"],
        AblationKind::Knn => &["4", "8", "16"],
        AblationKind::PosEnc => &["none", "concat-coords", "rope"],
        AblationKind::DataSize => &["50", "100", "200"],
    };
    v.iter().map(|s| s.to_string()).collect()
}

/// Runs one training per sweep value on a shared split and seed; only the
/// ablated factor changes between cells.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let kind = cfg.ablate.ok_or_else(|| CliError::Usage("ablate is not set".into()))?;
    if cfg.test_data.is_none() {
        return Err(CliError::Usage("ablations need test_data".into()));
    }
    let values = if cfg.sweep.is_empty() { default_sweep(kind) } else { cfg.sweep.clone() };
    let full = load_split(cfg)?;
    let mut rows = Vec::new();
    for v in &values {
        let mut cell = cfg.clone();
        match kind {
            AblationKind::Radius => {
                cell.set("radius", v)?;
                cell.model.knn = 0;
            }
            AblationKind::Knn => cell.set("knn", v)?,
            AblationKind::PosEnc => {
                let _: PosEncoding = v.parse().map_err(CliError::Usage)?;
                cell.set("pos_enc", v)?;
            }
            AblationKind::DataSize => cell.set("n_train", v)?,
        }
        let n = if cell.n_train == 0 { full.train.len() } else { cell.n_train };
        if n > full.train.len() {
            return Err(CliError::Usage(format!("data size {n} exceeds the {} training samples", full.train.len())));
        }
        let split = Split { train_file: full.train_file.clone(), train: full.train[..n].to_vec(), test: full.test.clone() };
        let probe = build_model(&cell, &split)?;
        let edges = split
            .train
            .iter()
            .map(|s| probe.build_graph(&s.points).map(|g| g.edge_count() as f64))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(model_err)?;
        let (_, summary) = train_in_memory(&cell, &split)?;
        log::info!("{kind} = {v}: nRMSE {:.4e}", summary.eval_nrmse);
        rows.push(AblationRow {
            value: v.clone(),
            config_hash: cell.hash(),
            nrmse: summary.eval_nrmse,
            rmse: summary.eval_rmse,
            edges: edges.iter().sum::<f64>() / edges.len() as f64,
            seconds: summary.seconds,
        });
    }
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
    write_text(&cfg.out_dir.join(RESOLVED_CONFIG), &format!("# config hash {}\n{}", cfg.hash(), cfg.to_text()))?;
    let body = rows
        .iter()
        .map(|r| {
            vec![
                kind.to_string(),
                r.value.clone(),
                r.config_hash.clone(),
                r.nrmse.to_string(),
                r.rmse.to_string(),
                r.edges.to_string(),
                r.seconds.to_string(),
            ]
        })
        .collect::<Vec<_>>();
    let path = cfg.out_dir.join(format!("ablate_{kind}.csv"));
    write_csv(&path, &["ablation", "value", "config_hash", "nrmse", "rmse", "edges", "seconds"], &body)?;
    Ok(rows)
}
