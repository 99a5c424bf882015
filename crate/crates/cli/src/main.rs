use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hamlet_cli::commands::{cmd_ablate, cmd_eval, cmd_gen, cmd_invariance, cmd_train, load_split, EvalArgs, GenArgs};
use hamlet_cli::{baselines, CliError, Result, RunConfig};
use hamlet_data::external::pointcloud_from_csv;
use hamlet_data::{write_dataset, DatasetKind};

#[derive(Parser)]
#[command(name = "hamlet", version, about = "Graph-transformer neural operators for PDE data")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set lr=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.sets)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate train.bin and test.bin with disjoint seed ranges.
    Gen {
        /// darcy, swe or diffreact
        kind: DatasetKind,
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        n_test: usize,
        /// Nodes (Darcy) or cells per axis.
        #[arg(long, default_value_t = 16)]
        grid: usize,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 4)]
        t_in: usize,
        #[arg(long, default_value_t = 10)]
        t_out: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes checkpoints, history.csv and summary.csv.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from last.ckpt in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Same fields at another resolution, used as query points and targets.
        #[arg(long)]
        query_data: Option<PathBuf>,
        #[arg(long)]
        metrics_csv: Option<PathBuf>,
        #[arg(long)]
        error_field_csv: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Error of one checkpoint on the same fields at several resolutions.
    Invariance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One dataset per resolution; repeat the flag
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sweep one factor (radius, knn, pos_enc, data_size) with everything else fixed.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Overrides the `ablate` key.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Best-constant and nearest-neighbor scores for the configured split.
    Baselines {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Convert a point-cloud CSV (`sample, coords…, inputs…, outputs…`) to a dataset.
    Convert {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        inputs: usize,
        #[arg(long, default_value_t = 1)]
        outputs: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen { kind, out, n, n_test, grid, beta, t_in, t_out, seed } => {
            let args = GenArgs { kind, out_dir: out, n, n_test, grid, beta, t_in, t_out, seed };
            for p in cmd_gen(&args)? {
                println!("{}", p.display());
            }
        }
        Cmd::Train { config, resume } => {
            let cfg = config.resolve()?;
            let s = cmd_train(&cfg, resume)?;
            println!("config hash   {}", cfg.hash());
            println!("epochs        {}", s.epochs);
            println!("train nRMSE   {:.6e}", s.train_nrmse);
            println!("eval nRMSE    {:.6e}", s.eval_nrmse);
            println!("eval RMSE     {:.6e}", s.eval_rmse);
            if let (Some(m), Some(n)) = (s.mean_field, s.nearest_neighbor) {
                println!("mean field    {:.6e}", m.nrmse);
                println!("1-NN          {:.6e}", n.nrmse);
            }
        }
        Cmd::Eval { checkpoint, data, query_data, metrics_csv, error_field_csv, sample } => {
            let args = EvalArgs {
                checkpoint,
                dataset: data,
                query_dataset: query_data,
                metrics_csv,
                error_field_csv,
                error_field_sample: sample,
            };
            let t = cmd_eval(&args)?;
            println!("samples {}", t.rel_l2.len());
            println!("nRMSE   {:.6e}", t.nrmse);
            println!("RMSE    {:.6e}", t.total_rmse);
            println!("max rel {:.6e}", t.max_offset());
        }
        Cmd::Invariance { checkpoint, data, csv } => {
            println!("{:<40} {:>8} {:>14} {:>14}", "dataset", "points", "nRMSE", "max offset");
            for r in cmd_invariance(&checkpoint, &data, csv.as_deref())? {
                println!("{:<40} {:>8} {:>14.6e} {:>14.6e}", r.dataset.display(), r.points, r.nrmse, r.max_offset);
            }
        }
        Cmd::Ablate { config, kind } => {
            let mut cfg = config.resolve()?;
            if let Some(k) = kind {
                cfg.set("ablate", &k)?;
            }
            println!("{:<16} {:>14} {:>12} {:>10}", "value", "nRMSE", "edges", "seconds");
            for r in cmd_ablate(&cfg)? {
                println!("{:<16} {:>14.6e} {:>12.1} {:>10.1}", r.value, r.nrmse, r.edges, r.seconds);
            }
        }
        Cmd::Baselines { config } => {
            let split = load_split(&config.resolve()?)?;
            let m = baselines::mean_field(&split.train, &split.test)?;
            let n = baselines::nearest_neighbor(&split.train, &split.test)?;
            println!("mean field nRMSE {:.6e}  RMSE {:.6e}", m.nrmse, m.rmse);
            println!("1-NN       nRMSE {:.6e}  RMSE {:.6e}", n.nrmse, n.rmse);
        }
        Cmd::Convert { csv, out, dim, inputs, outputs } => {
            let f = std::fs::File::open(&csv).map_err(|e| CliError::Usage(format!("{}: {e}", csv.display())))?;
            let d = pointcloud_from_csv(std::io::BufReader::new(f), dim, inputs, outputs, None)
                .map_err(|e| CliError::Io(format!("{}: {e}", csv.display())))?;
            write_dataset(&out, &d).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
            println!("{} samples of {} points -> {}", d.len(), d.header.l, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
