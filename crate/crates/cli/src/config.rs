//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hamlet_core::model::ModelConfig;
use hamlet_core::training::TrainConfig;

use crate::{CliError, Result};

/// Factor varied by an ablation sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationKind {
    Radius,
    Knn,
    PosEnc,
    DataSize,
}

impl FromStr for AblationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "radius" => Ok(Self::Radius),
            "knn" => Ok(Self::Knn),
            "pos_enc" | "pos-enc" => Ok(Self::PosEnc),
            "data_size" | "data-size" => Ok(Self::DataSize),
            _ => Err(format!("unknown ablation `{s}` (radius | knn | pos_enc | data_size)")),
        }
    }
}

impl std::fmt::Display for AblationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Radius => "radius",
            Self::Knn => "knn",
            Self::PosEnc => "pos_enc",
            Self::DataSize => "data_size",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    /// Use only the first `n_train` training samples (0 = all).
    pub n_train: usize,
    /// Stop after this many epochs in total (0 = run to `epochs`); a later
    /// `--resume` picks up from there.
    pub stop_after: usize,
    pub out_dir: PathBuf,
    pub ablate: Option<AblationKind>,
    /// Comma-separated sweep values; empty picks the default sweep.
    pub sweep: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig { lr: 3e-3, epochs: 150, batch_size: 4, ..TrainConfig::default() },
            train_data: None,
            test_data: None,
            n_train: 0,
            stop_after: 0,
            out_dir: PathBuf::from("runs"),
            ablate: None,
            sweep: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| CliError::Usage(format!("{key} = {v}: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Usage(format!("{key} = {v}: expected true or false"))),
    }
}

impl RunConfig {
    /// Every accepted key, in the order [`RunConfig::to_text`] writes them.
    pub const KEYS: &'static [&'static str] = &[
        "d_model",
        "n_gt_blocks",
        "n_heads",
        "d_dec",
        "n_out_mlp_layers",
        "n_prop_mlp_layers",
        "gf_dim",
        "gf_sigma",
        "rope_base",
        "rope_scale",
        "radius",
        "knn",
        "cross_heads",
        "pos_enc",
        "attn_avg",
        "model_seed",
        "loss",
        "lr",
        "epochs",
        "batch_size",
        "pct_start",
        "div_factor",
        "final_div_factor",
        "beta1",
        "beta2",
        "adam_eps",
        "clip_norm",
        "seed",
        "train_data",
        "test_data",
        "n_train",
        "stop_after",
        "out_dir",
        "ablate",
        "sweep",
    ];

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "d_model" => m.d_model = parse(key, v)?,
            "n_gt_blocks" => m.n_gt_blocks = parse(key, v)?,
            "n_heads" => m.n_heads = parse(key, v)?,
            "d_dec" => m.d_dec = parse(key, v)?,
            "n_out_mlp_layers" => m.n_out_mlp_layers = parse(key, v)?,
            "n_prop_mlp_layers" => m.n_prop_mlp_layers = parse(key, v)?,
            "gf_dim" => m.gf_dim = parse(key, v)?,
            "gf_sigma" => m.gf_sigma = parse(key, v)?,
            "rope_base" => m.rope_base = parse(key, v)?,
            "rope_scale" => m.rope_scale = parse(key, v)?,
            "radius" => m.radius = parse(key, v)?,
            "knn" => m.knn = parse(key, v)?,
            "cross_heads" => m.cross_heads = parse(key, v)?,
            "pos_enc" => m.pos_enc = parse(key, v)?,
            "attn_avg" => m.attn_avg = parse_bool(key, v)?,
            "model_seed" => m.seed = parse(key, v)?,
            "loss" => t.loss = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "pct_start" => t.onecycle.pct_start = parse(key, v)?,
            "div_factor" => t.onecycle.div_factor = parse(key, v)?,
            "final_div_factor" => t.onecycle.final_div_factor = parse(key, v)?,
            "beta1" => t.adam.beta1 = parse(key, v)?,
            "beta2" => t.adam.beta2 = parse(key, v)?,
            "adam_eps" => t.adam.eps = parse(key, v)?,
            "clip_norm" => t.clip_norm = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "train_data" => self.train_data = (!v.is_empty()).then(|| PathBuf::from(v)),
            "test_data" => self.test_data = (!v.is_empty()).then(|| PathBuf::from(v)),
            "n_train" => self.n_train = parse(key, v)?,
            "stop_after" => self.stop_after = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "ablate" => self.ablate = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "sweep" => self.sweep = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
            _ => return Err(CliError::Usage(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped; a key may appear once.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(CliError::Usage(format!("line {}: `{k}` given twice", n + 1)));
            }
            self.set(k, v.trim()).map_err(|e| CliError::Usage(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse_text(&text)
    }

    /// `key=value` overrides, as given on the command line.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (k, v) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{s}`")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// The resolved configuration in the same file format.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values = [
            m.d_model.to_string(),
            m.n_gt_blocks.to_string(),
            m.n_heads.to_string(),
            m.d_dec.to_string(),
            m.n_out_mlp_layers.to_string(),
            m.n_prop_mlp_layers.to_string(),
            m.gf_dim.to_string(),
            m.gf_sigma.to_string(),
            m.rope_base.to_string(),
            m.rope_scale.to_string(),
            m.radius.to_string(),
            m.knn.to_string(),
            m.cross_heads.to_string(),
            m.pos_enc.to_string(),
            m.attn_avg.to_string(),
            m.seed.to_string(),
            t.loss.to_string(),
            t.lr.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.onecycle.pct_start.to_string(),
            t.onecycle.div_factor.to_string(),
            t.onecycle.final_div_factor.to_string(),
            t.adam.beta1.to_string(),
            t.adam.beta2.to_string(),
            t.adam.eps.to_string(),
            t.clip_norm.to_string(),
            t.seed.to_string(),
            path(&self.train_data),
            path(&self.test_data),
            self.n_train.to_string(),
            self.stop_after.to_string(),
            self.out_dir.display().to_string(),
            self.ablate.map(|a| a.to_string()).unwrap_or_default(),
            self.sweep.join(","),
        ];
        let mut s = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Short stable fingerprint of the resolved configuration (FNV-1a).
    pub fn hash(&self) -> String {
        let h = self.to_text().bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
        format!("{h:016x}")
    }
}
