//! The end-to-end operator: an input encoder (lift + graph-transformer
//! stack), a query encoder (Gaussian Fourier features + MLP) fused with the
//! input latents by Galerkin cross-attention, and a steady or recurrent
//! decoder.

mod checkpoint;
mod config;
mod layers;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, FormatError};
pub use config::{Mode, ModelConfig, PosEncoding};
pub use layers::{
    cross_attention, cross_former_vars, galerkin_attention, galerkin_attention_vars, CrossFormerParams,
    CrossFormerVars, Linear, LinearVars, Mlp, MlpVars, Norm, NormVars,
};

use crate::attention::{graph_transformer_block_vars, AttentionOptions, GtBlockParams, GtBlockVars, RopeConfig};
use crate::graph::{build_knn_graph, build_radius_graph, Graph, GraphError, PointSet};
use crate::scalar::Real;
use crate::tensor::{RopeTable, Tape, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("operation needs a {expected} model")]
    ModeMismatch { expected: &'static str },
    #[error("invalid query set: {0}")]
    Query(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// L′×n query locations, independent of the input discretization.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet<T> {
    positions: Tensor<T>,
}

impl<T: Real> QuerySet<T> {
    pub fn new(positions: Tensor<T>, bounds: &[(T, T)]) -> Result<Self> {
        if positions.shape().len() != 2 || positions.rows() == 0 || positions.cols() != bounds.len() {
            return Err(ModelError::Query(format!(
                "expected an L′×{} matrix with L′ ≥ 1, got {:?}",
                bounds.len(),
                positions.shape()
            )));
        }
        for r in 0..positions.rows() {
            for (&x, &(lo, hi)) in positions.row(r).iter().zip(bounds) {
                if !x.is_finite() || x < lo || x > hi {
                    return Err(ModelError::Query(format!("query {r} lies outside the domain")));
                }
            }
        }
        Ok(Self { positions })
    }

    pub fn from_points(points: &PointSet<T>) -> Self {
        Self { positions: points.positions().clone() }
    }

    pub fn positions(&self) -> &Tensor<T> {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.rows() == 0
    }
}

/// Per-channel affine map `x·scale + shift`, used to standardize inputs and
/// de-standardize outputs. Not trained.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAffine<T> {
    pub shift: Tensor<T>,
    pub scale: Tensor<T>,
}

impl<T: Real> ChannelAffine<T> {
    pub fn identity(c: usize) -> Self {
        Self { shift: Tensor::zeros(&[c]), scale: Tensor::filled(&[c], T::one()) }
    }

    pub fn channels(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        let c = self.channels();
        let mut out = x.clone();
        for (n, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.scale.data()[n % c] + self.shift.data()[n % c];
        }
        out
    }

    fn apply_vars(&self, tape: &mut Tape<T>, x: Var) -> std::result::Result<Var, TensorError> {
        let rows = tape.shape(x)[0];
        let c = self.channels();
        let s: Vec<T> = (0..rows * c).map(|n| self.scale.data()[n % c]).collect();
        let s = tape.constant(&Tensor::matrix(rows, c, s)?);
        let y = tape.mul(x, s)?;
        let b = tape.constant(&self.shift);
        tape.add_row(y, b)
    }
}

/// An input field on its discretization, with the graph, the RoPE angle
/// table and the canonical node order precomputed.
#[derive(Clone, Debug)]
pub struct InputGraph<T> {
    pub graph: Graph<T>,
    pub rope: Option<Arc<RopeTable<T>>>,
    pub key_order: Arc<[usize]>,
}

impl<T: Real> InputGraph<T> {
    pub fn features(&self) -> &Tensor<T> {
        self.graph.node_features().expect("input graphs always carry features")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorModel<T> {
    pub config: ModelConfig,
    pub fc_in: Linear<T>,
    pub blocks: Vec<GtBlockParams<T>>,
    /// n×(gf_dim/2) Gaussian Fourier projection, drawn once and frozen.
    pub gf_b: Tensor<T>,
    pub mlp_qry: Mlp<T>,
    pub cross: CrossFormerParams<T>,
    pub mlp_out: Mlp<T>,
    pub mlp_prop: Option<Mlp<T>>,
    pub input_norm: ChannelAffine<T>,
    pub output_norm: ChannelAffine<T>,
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    pub fc_in: LinearVars,
    pub blocks: Vec<GtBlockVars>,
    pub mlp_qry: MlpVars,
    pub cross: CrossFormerVars,
    pub mlp_out: MlpVars,
    pub mlp_prop: Option<MlpVars>,
}

fn mlp_widths(input: usize, hidden: usize, output: usize, layers: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat(hidden).take(layers - 1));
    w.push(output);
    w
}

impl<T: Real> OperatorModel<T> {
    /// Draws all parameters from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = &config;
        let d = c.d_model;
        let n = c.coord_dim();
        let fc_in = Linear::init(&mut rng, c.feature_width(), d, true);
        let blocks =
            (0..c.n_gt_blocks).map(|_| GtBlockParams::init(&mut rng, d, c.n_heads)).collect::<std::result::Result<_, _>>()?;
        let normal = Normal::new(0.0, c.gf_sigma).map_err(|e| ModelError::Config(e.to_string()))?;
        let gf: Vec<T> = (0..n * c.gf_dim / 2).map(|_| T::lit(normal.sample(&mut rng))).collect();
        let gf_b = Tensor::matrix(n, c.gf_dim / 2, gf)?;
        let mlp_qry = Mlp::init(&mut rng, &[c.gf_dim, d, d]);
        let cross = CrossFormerParams::init(&mut rng, d, c.cross_heads)?;
        let mlp_out = Mlp::init(&mut rng, &mlp_widths(d + n, c.d_dec, c.out_channels, c.n_out_mlp_layers));
        let mlp_prop = match c.mode {
            Mode::Steady => None,
            Mode::Rollout => {
                let mut m = Mlp::init(&mut rng, &mlp_widths(d + n, c.d_dec, d, c.n_prop_mlp_layers));
                // Residual increments shrink with the horizon so the latent
                // drift over a whole rollout stays O(1) at init.
                let s = T::lit(1.0 / c.rollout_steps as f64);
                let last = m.layers.last_mut().expect("at least one layer");
                last.w.data_mut().iter_mut().for_each(|w| *w *= s);
                if let Some(b) = last.b.as_mut() {
                    b.data_mut().iter_mut().for_each(|x| *x *= s);
                }
                Some(m)
            }
        };
        Ok(Self {
            input_norm: ChannelAffine::identity(c.in_channels),
            output_norm: ChannelAffine::identity(c.out_channels),
            config,
            fc_in,
            blocks,
            gf_b,
            mlp_qry,
            cross,
            mlp_out,
            mlp_prop,
        })
    }

    /// Trainable tensors in binding order.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.fc_in.visit("fc_in", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.named().into_iter().map(|(k, t)| (format!("gt.{i}.{k}"), t)));
        }
        self.mlp_qry.visit("qry", &mut out);
        self.cross.visit("cross", &mut out);
        self.mlp_out.visit("out", &mut out);
        if let Some(p) = &self.mlp_prop {
            p.visit("prop", &mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.fc_in.visit_mut("fc_in", &mut out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.named_mut().into_iter().map(|(k, t)| (format!("gt.{i}.{k}"), t)));
        }
        self.mlp_qry.visit_mut("qry", &mut out);
        self.cross.visit_mut("cross", &mut out);
        self.mlp_out.visit_mut("out", &mut out);
        if let Some(p) = &mut self.mlp_prop {
            p.visit_mut("prop", &mut out);
        }
        out
    }

    /// Frozen tensors stored alongside the trainable ones in checkpoints.
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("gf.b".into(), &self.gf_b),
            ("norm.in.shift".into(), &self.input_norm.shift),
            ("norm.in.scale".into(), &self.input_norm.scale),
            ("norm.out.shift".into(), &self.output_norm.shift),
            ("norm.out.scale".into(), &self.output_norm.scale),
        ]
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("gf.b".into(), &mut self.gf_b),
            ("norm.in.shift".into(), &mut self.input_norm.shift),
            ("norm.in.scale".into(), &mut self.input_norm.scale),
            ("norm.out.shift".into(), &mut self.output_norm.shift),
            ("norm.out.scale".into(), &mut self.output_norm.scale),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().chain(self.buffers().iter()).all(|(_, t)| t.is_finite())
    }

    /// Records every trainable tensor through `f`, in [`Self::params`] order.
    pub fn bind_with(&self, f: &mut dyn FnMut(&Tensor<T>) -> Var) -> ModelVars {
        ModelVars {
            fc_in: self.fc_in.bind_with(f),
            blocks: self.blocks.iter().map(|b| b.bind_with(f)).collect(),
            mlp_qry: self.mlp_qry.bind_with(f),
            cross: self.cross.bind_with(f),
            mlp_out: self.mlp_out.bind_with(f),
            mlp_prop: self.mlp_prop.as_ref().map(|p| p.bind_with(f)),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> ModelVars {
        self.bind_with(&mut |t| tape.leaf(t))
    }

    fn bind_constant(&self, tape: &mut Tape<T>) -> ModelVars {
        self.bind_with(&mut |t| tape.constant(t))
    }

    fn rope_config(&self) -> Result<Option<RopeConfig<T>>> {
        if self.config.pos_enc != PosEncoding::Rope {
            return Ok(None);
        }
        let bounds: Vec<(T, T)> = self.config.bounds.iter().map(|&(a, b)| (T::lit(a), T::lit(b))).collect();
        let head_dim = self.config.d_model / self.config.n_heads;
        let cfg = RopeConfig::for_domain(head_dim, &bounds, T::lit(self.config.rope_base), T::lit(self.config.rope_scale))?;
        Ok(Some(cfg))
    }

    pub fn build_graph(&self, points: &PointSet<T>) -> Result<Graph<T>> {
        Ok(match self.config.knn {
            0 => build_radius_graph(points, T::lit(self.config.radius), false)?,
            k => build_knn_graph(points, k.min(points.len()))?,
        })
    }

    /// Builds the neighborhood graph on `points` and attaches the
    /// standardized input field (plus coordinates unless positional
    /// encoding is disabled).
    pub fn prepare_input(&self, theta: &Tensor<T>, points: &PointSet<T>) -> Result<InputGraph<T>> {
        let g = self.build_graph(points)?;
        self.attach_input(theta, &g)
    }

    /// As [`Self::prepare_input`] on an existing graph.
    pub fn attach_input(&self, theta: &Tensor<T>, g: &Graph<T>) -> Result<InputGraph<T>> {
        if theta.shape().len() != 2 || theta.cols() != self.config.in_channels {
            return Err(ModelError::Config(format!(
                "input field has shape {:?}, model expects {} channels",
                theta.shape(),
                self.config.in_channels
            )));
        }
        if g.points().dim() != self.config.coord_dim() {
            return Err(ModelError::Config(format!("{}-D points for a {}-D model", g.points().dim(), self.config.coord_dim())));
        }
        let theta = self.input_norm.apply(theta);
        let graph = match self.config.pos_enc {
            PosEncoding::None => g.with_features(theta),
            _ => g.assemble_node_features(&theta)?,
        };
        let rope = self.rope_config()?.map(|c| c.table(g.points().positions()).map(Arc::new)).transpose()?;
        let key_order = g.points().canonical_order().into();
        Ok(InputGraph { graph, rope, key_order })
    }

    pub fn queries_on_input(&self, input: &InputGraph<T>) -> QuerySet<T> {
        QuerySet::from_points(input.graph.points())
    }

    /// Lift and graph-transformer stack: `H_EncI`, L×d_model.
    pub fn encode_input_vars(&self, tape: &mut Tape<T>, v: &ModelVars, input: &InputGraph<T>) -> Result<Var> {
        let opts = AttentionOptions { average_over_neighbors: self.config.attn_avg };
        let x = tape.constant(input.features());
        let mut h = v.fc_in.apply(tape, x)?;
        for b in &v.blocks {
            h = graph_transformer_block_vars(tape, h, &input.graph, b, input.rope.as_ref(), opts)?;
        }
        Ok(h)
    }

    /// `γ(x) = [sin(2π x̂B) | cos(2π x̂B)]` with `x̂` the query mapped to the
    /// unit box.
    pub fn fourier_features(&self, q: &QuerySet<T>) -> Tensor<T> {
        let n = self.config.coord_dim();
        let half = self.gf_b.cols();
        let two_pi = T::lit(2.0 * PI);
        let mut out = Vec::with_capacity(q.len() * 2 * half);
        for r in 0..q.len() {
            let x: Vec<T> = q
                .positions()
                .row(r)
                .iter()
                .zip(&self.config.bounds)
                .map(|(&x, &(lo, hi))| (x - T::lit(lo)) / T::lit(hi - lo))
                .collect();
            let proj: Vec<T> =
                (0..half).map(|c| two_pi * (0..n).fold(T::zero(), |a, t| a + x[t] * self.gf_b.at(t, c))).collect();
            out.extend(proj.iter().map(|p| p.sin()));
            out.extend(proj.iter().map(|p| p.cos()));
        }
        Tensor::matrix(q.len(), 2 * half, out).expect("non-empty query set")
    }

    /// Query embedding `H_EncQ = MLP_qry(γ(D_qry))`, L′×d_model.
    pub fn encode_queries_vars(&self, tape: &mut Tape<T>, v: &ModelVars, q: &QuerySet<T>) -> Result<Var> {
        let g = tape.constant(&self.fourier_features(q));
        Ok(v.mlp_qry.apply(tape, g)?)
    }

    /// Decoded frames: one for a steady model, `rollout_steps` otherwise.
    /// Each frame is L′×out_channels in physical units.
    pub fn forward_vars(&self, tape: &mut Tape<T>, v: &ModelVars, input: &InputGraph<T>, q: &QuerySet<T>) -> Result<Vec<Var>> {
        self.check_queries(q)?;
        let h_in = self.encode_input_vars(tape, v, input)?;
        let h_q = self.encode_queries_vars(tape, v, q)?;
        let h = cross_former_vars(tape, h_in, h_q, &v.cross, Some(input.key_order.clone()))?;
        let coords = tape.constant(q.positions());
        match (self.config.mode, &v.mlp_prop) {
            (Mode::Steady, _) => Ok(vec![self.decode_frame(tape, v, h, coords)?]),
            (Mode::Rollout, Some(prop)) => {
                let mut state = h;
                let mut frames = Vec::with_capacity(self.config.rollout_steps);
                for _ in 0..self.config.rollout_steps {
                    let z = tape.concat(&[state, coords])?;
                    let dz = prop.apply(tape, z)?;
                    state = tape.add(dz, state)?;
                    frames.push(self.decode_frame(tape, v, state, coords)?);
                }
                Ok(frames)
            }
            (Mode::Rollout, None) => Err(ModelError::ModeMismatch { expected: "rollout" }),
        }
    }

    fn decode_frame(&self, tape: &mut Tape<T>, v: &ModelVars, h: Var, coords: Var) -> Result<Var> {
        let z = tape.concat(&[h, coords])?;
        let y = v.mlp_out.apply(tape, z)?;
        Ok(self.output_norm.apply_vars(tape, y)?)
    }

    fn check_queries(&self, q: &QuerySet<T>) -> Result<()> {
        if q.positions().cols() != self.config.coord_dim() {
            return Err(ModelError::Query(format!("{}-D queries for a {}-D model", q.positions().cols(), self.config.coord_dim())));
        }
        Ok(())
    }

    /// Prediction: L′×out for steady models, steps×L′×out for rollouts.
    pub fn predict(&self, input: &InputGraph<T>, q: &QuerySet<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = self.bind_constant(&mut tape);
        let frames = self.forward_vars(&mut tape, &v, input, q)?;
        let out = self.config.out_channels;
        Ok(match self.config.mode {
            Mode::Steady => tape.tensor(frames[0]),
            Mode::Rollout => {
                let data = frames.iter().flat_map(|&f| tape.value(f).iter().copied()).collect();
                Tensor::new(vec![frames.len(), q.len(), out], data)?
            }
        })
    }

    /// Builds the graph, then predicts at `q`.
    pub fn forward(&self, theta: &Tensor<T>, points: &PointSet<T>, q: &QuerySet<T>) -> Result<Tensor<T>> {
        let input = self.prepare_input(theta, points)?;
        self.predict(&input, q)
    }

    pub fn encode_input(&self, input: &InputGraph<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = self.bind_constant(&mut tape);
        let h = self.encode_input_vars(&mut tape, &v, input)?;
        Ok(tape.tensor(h))
    }

    pub fn encode_queries(&self, q: &QuerySet<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = self.bind_constant(&mut tape);
        let h = self.encode_queries_vars(&mut tape, &v, q)?;
        Ok(tape.tensor(h))
    }

    /// Fused latent `H_Enc` (L′×d_model) at the queries.
    pub fn encode(&self, input: &InputGraph<T>, q: &QuerySet<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = self.bind_constant(&mut tape);
        let h_in = self.encode_input_vars(&mut tape, &v, input)?;
        let h_q = self.encode_queries_vars(&mut tape, &v, q)?;
        let h = cross_former_vars(&mut tape, h_in, h_q, &v.cross, Some(input.key_order.clone()))?;
        Ok(tape.tensor(h))
    }

    /// `MLP_out(H_Enc ∥ D_qry)`.
    pub fn decode_steady(&self, h_enc: &Tensor<T>, q: &QuerySet<T>) -> Result<Tensor<T>> {
        if self.config.mode != Mode::Steady {
            return Err(ModelError::ModeMismatch { expected: "steady" });
        }
        let mut tape = Tape::new();
        let v = self.bind_constant(&mut tape);
        let h = tape.constant(h_enc);
        let c = tape.constant(q.positions());
        let y = self.decode_frame(&mut tape, &v, h, c)?;
        Ok(tape.tensor(y))
    }

    /// Latent states `H^{Δt}, …, H^{steps·Δt}` and their decoded frames.
    pub fn decode_rollout(&self, h_enc: &Tensor<T>, q: &QuerySet<T>, steps: usize) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        let Some(prop) = &self.mlp_prop else {
            return Err(ModelError::ModeMismatch { expected: "rollout" });
        };
        if steps == 0 {
            return Err(ModelError::Config("rollout needs at least one step".into()));
        }
        let mut tape = Tape::new();
        let v = self.bind_constant(&mut tape);
        let pv = prop.bind_with(&mut |t| tape.constant(t));
        let coords = tape.constant(q.positions());
        let mut state = tape.constant(h_enc);
        let (mut states, mut frames) = (Vec::new(), Vec::new());
        for _ in 0..steps {
            let z = tape.concat(&[state, coords])?;
            let dz = pv.apply(&mut tape, z)?;
            state = tape.add(dz, state)?;
            let y = self.decode_frame(&mut tape, &v, state, coords)?;
            states.push(tape.tensor(state));
            frames.push(tape.tensor(y));
        }
        Ok((states, frames))
    }
}
