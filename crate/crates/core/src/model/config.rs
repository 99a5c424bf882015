use super::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Steady,
    Rollout,
}

/// How node positions enter the input encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosEncoding {
    /// Node features carry the field only.
    None,
    /// Coordinates appended to the node features.
    ConcatCoords,
    /// Coordinates appended, plus rotary embedding inside graph attention.
    Rope,
}

impl Mode {
    pub fn code(self) -> u8 {
        match self {
            Mode::Steady => 0,
            Mode::Rollout => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [Mode::Steady, Mode::Rollout].into_iter().find(|m| m.code() == c)
    }
}

impl PosEncoding {
    pub fn code(self) -> u8 {
        match self {
            PosEncoding::None => 0,
            PosEncoding::ConcatCoords => 1,
            PosEncoding::Rope => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [PosEncoding::None, PosEncoding::ConcatCoords, PosEncoding::Rope].into_iter().find(|m| m.code() == c)
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "steady" => Ok(Mode::Steady),
            "rollout" => Ok(Mode::Rollout),
            _ => Err(format!("unknown mode {s:?} (steady | rollout)")),
        }
    }
}

impl std::str::FromStr for PosEncoding {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(PosEncoding::None),
            "concat-coords" | "concat" => Ok(PosEncoding::ConcatCoords),
            "rope" => Ok(PosEncoding::Rope),
            _ => Err(format!("unknown position encoding {s:?} (none | concat-coords | rope)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Steady => "steady",
            Mode::Rollout => "rollout",
        })
    }
}

impl std::fmt::Display for PosEncoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PosEncoding::None => "none",
            PosEncoding::ConcatCoords => "concat-coords",
            PosEncoding::Rope => "rope",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_gt_blocks: usize,
    pub n_heads: usize,
    /// Hidden width of the output and propagator MLPs.
    pub d_dec: usize,
    pub n_out_mlp_layers: usize,
    pub n_prop_mlp_layers: usize,
    pub gf_dim: usize,
    pub gf_sigma: f64,
    pub rope_base: f64,
    pub rope_scale: f64,
    pub radius: f64,
    /// Neighbors per node; 0 selects the radius graph.
    pub knn: usize,
    pub mode: Mode,
    pub rollout_steps: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub cross_heads: usize,
    pub pos_enc: PosEncoding,
    /// Divide graph-attention messages by the neighborhood size.
    pub attn_avg: bool,
    pub seed: u64,
    /// Domain box, one `(lo, hi)` per axis.
    pub bounds: Vec<(f64, f64)>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_gt_blocks: 2,
            n_heads: 4,
            d_dec: 64,
            n_out_mlp_layers: 2,
            n_prop_mlp_layers: 2,
            gf_dim: 32,
            gf_sigma: 1.0,
            rope_base: 100.0,
            rope_scale: 5.0,
            radius: 0.12,
            knn: 0,
            mode: Mode::Steady,
            rollout_steps: 1,
            in_channels: 1,
            out_channels: 1,
            cross_heads: 4,
            pos_enc: PosEncoding::Rope,
            attn_avg: true,
            seed: 0,
            bounds: vec![(0.0, 1.0), (0.0, 1.0)],
        }
    }
}

impl ModelConfig {
    pub fn coord_dim(&self) -> usize {
        self.bounds.len()
    }

    /// Width of a node feature row fed to the lift layer.
    pub fn feature_width(&self) -> usize {
        match self.pos_enc {
            PosEncoding::None => self.in_channels,
            _ => self.in_channels + self.coord_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_dec", self.d_dec),
            ("n_out_mlp_layers", self.n_out_mlp_layers),
            ("gf_dim", self.gf_dim),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("cross_heads", self.cross_heads),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{k} must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("n_heads = {} does not divide d_model = {}", self.n_heads, self.d_model));
        }
        if self.d_model % self.cross_heads != 0 {
            return bad(format!("cross_heads = {} does not divide d_model = {}", self.cross_heads, self.d_model));
        }
        if self.gf_dim % 2 != 0 {
            return bad(format!("gf_dim = {} must be even", self.gf_dim));
        }
        if !(self.gf_sigma > 0.0 && self.gf_sigma.is_finite()) {
            return bad(format!("gf_sigma = {} must be positive", self.gf_sigma));
        }
        if self.knn == 0 && !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad(format!("radius = {} must be positive", self.radius));
        }
        if self.bounds.is_empty() || self.bounds.iter().any(|&(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
            return bad(format!("invalid domain bounds {:?}", self.bounds));
        }
        if self.pos_enc == PosEncoding::Rope {
            let hd = self.d_model / self.n_heads;
            if hd % (2 * self.coord_dim()) != 0 {
                return bad(format!("head dim {hd} must split into rotation pairs on every axis"));
            }
            if !(self.rope_base > 1.0) || !(self.rope_scale > 0.0) {
                return bad("rope_base must exceed 1 and rope_scale be positive".into());
            }
        }
        if self.mode == Mode::Rollout && (self.rollout_steps == 0 || self.n_prop_mlp_layers == 0) {
            return bad("rollout needs rollout_steps ≥ 1 and n_prop_mlp_layers ≥ 1".into());
        }
        Ok(())
    }
}
