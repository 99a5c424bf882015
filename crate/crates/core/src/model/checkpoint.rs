//! Binary checkpoint: `"HMLT"`, u16 version, kind byte `'C'`, the model
//! config, a u32 blob count, then named blobs (u16 name length, UTF-8 name,
//! u8 rank, u32 extents, f64 payload). Everything little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{Mode, ModelConfig, ModelError, OperatorModel, PosEncoding, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HMLT";
pub const VERSION: u16 = 1;
pub const KIND_CHECKPOINT: u8 = b'C';

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic bytes")]
    Magic,
    #[error("unsupported format version {0}")]
    Version(u16),
    #[error("file holds kind {0:#04x}, expected a checkpoint")]
    Kind(u8),
    #[error("file is truncated")]
    Truncated,
    #[error("corrupt file: {0}")]
    Corrupt(String),
}

/// Config plus every named tensor, parameters and extras alike, in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    /// Snapshot of `model` followed by caller-provided extras (optimizer
    /// state, step counters).
    pub fn from_model<T: Real>(model: &OperatorModel<T>, extras: Vec<(String, Tensor<f64>)>) -> Self {
        let mut tensors: Vec<(String, Tensor<f64>)> =
            model.params().into_iter().chain(model.buffers()).map(|(k, t)| (k, detached(t))).collect();
        tensors.extend(extras);
        Self { config: model.config.clone(), tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(k, _)| k == name).map(|(_, t)| t)
    }

    /// Rebuilds the model; returns it with the tensors it did not consume.
    pub fn into_model<T: Real>(self) -> Result<(OperatorModel<T>, Vec<(String, Tensor<f64>)>)> {
        let mut model = OperatorModel::<T>::new(self.config)?;
        let mut pool = self.tensors;
        let mut missing = Vec::new();
        let mut fill = |name: &str, slot: &mut Tensor<T>| -> std::result::Result<(), FormatError> {
            let Some(i) = pool.iter().position(|(k, _)| k == name) else {
                missing.push(name.to_string());
                return Ok(());
            };
            let (_, t) = pool.remove(i);
            if t.shape() != slot.shape() {
                return Err(FormatError::Corrupt(format!("{name}: shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            let requires_grad = slot.requires_grad;
            *slot = t.cast();
            slot.requires_grad = requires_grad;
            Ok(())
        };
        for (name, slot) in model.params_mut() {
            fill(&name, slot)?;
        }
        for (name, slot) in model.buffers_mut() {
            fill(&name, slot)?;
        }
        drop(fill);
        if !missing.is_empty() {
            return Err(FormatError::Corrupt(format!("missing tensors {missing:?}")).into());
        }
        Ok((model, pool))
    }
}

fn detached<T: Real>(t: &Tensor<T>) -> Tensor<f64> {
    let mut t: Tensor<f64> = t.cast();
    t.requires_grad = false;
    t.grad = None;
    t
}

struct Out<W: Write>(W);

impl<W: Write> Out<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.0.write_all(b)
    }
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.bytes(&[v])
    }
    fn u16(&mut self, v: u16) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u32(&mut self, v: usize) -> std::io::Result<()> {
        let v = u32::try_from(v).map_err(|_| std::io::Error::new(ErrorKind::InvalidInput, "value exceeds u32"))?;
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
}

struct In<R: Read>(R);

impl<R: Read> In<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(eof)?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

fn eof(e: std::io::Error) -> ModelError {
    if e.kind() == ErrorKind::UnexpectedEof {
        FormatError::Truncated.into()
    } else {
        e.into()
    }
}

fn write_config<W: Write>(o: &mut Out<W>, c: &ModelConfig) -> std::io::Result<()> {
    for v in [c.d_model, c.n_gt_blocks, c.n_heads, c.d_dec, c.n_out_mlp_layers, c.n_prop_mlp_layers, c.gf_dim] {
        o.u32(v)?;
    }
    for v in [c.gf_sigma, c.rope_base, c.rope_scale, c.radius] {
        o.f64(v)?;
    }
    o.u32(c.knn)?;
    o.u8(c.mode.code())?;
    for v in [c.rollout_steps, c.in_channels, c.out_channels, c.cross_heads] {
        o.u32(v)?;
    }
    o.u8(c.pos_enc.code())?;
    o.u8(c.attn_avg as u8)?;
    o.u64(c.seed)?;
    o.u8(c.bounds.len() as u8)?;
    for &(lo, hi) in &c.bounds {
        o.f64(lo)?;
        o.f64(hi)?;
    }
    Ok(())
}

fn read_config<R: Read>(i: &mut In<R>) -> Result<ModelConfig> {
    let mut u = [0usize; 7];
    for v in u.iter_mut() {
        *v = i.u32()?;
    }
    let mut f = [0f64; 4];
    for v in f.iter_mut() {
        *v = i.f64()?;
    }
    let knn = i.u32()?;
    let mode = i.u8()?;
    let mode = Mode::from_code(mode).ok_or_else(|| FormatError::Corrupt(format!("mode code {mode}")))?;
    let mut r = [0usize; 4];
    for v in r.iter_mut() {
        *v = i.u32()?;
    }
    let pe = i.u8()?;
    let pos_enc = PosEncoding::from_code(pe).ok_or_else(|| FormatError::Corrupt(format!("position encoding code {pe}")))?;
    let attn_avg = match i.u8()? {
        0 => false,
        1 => true,
        b => return Err(FormatError::Corrupt(format!("flag byte {b}")).into()),
    };
    let seed = i.u64()?;
    let dims = i.u8()? as usize;
    let mut bounds = Vec::with_capacity(dims);
    for _ in 0..dims {
        bounds.push((i.f64()?, i.f64()?));
    }
    Ok(ModelConfig {
        d_model: u[0],
        n_gt_blocks: u[1],
        n_heads: u[2],
        d_dec: u[3],
        n_out_mlp_layers: u[4],
        n_prop_mlp_layers: u[5],
        gf_dim: u[6],
        gf_sigma: f[0],
        rope_base: f[1],
        rope_scale: f[2],
        radius: f[3],
        knn,
        mode,
        rollout_steps: r[0],
        in_channels: r[1],
        out_channels: r[2],
        cross_heads: r[3],
        pos_enc,
        attn_avg,
        seed,
        bounds,
    })
}

pub fn write_checkpoint<W: Write>(w: W, ck: &Checkpoint) -> Result<()> {
    let mut o = Out(w);
    o.bytes(MAGIC)?;
    o.u16(VERSION)?;
    o.u8(KIND_CHECKPOINT)?;
    write_config(&mut o, &ck.config)?;
    o.u32(ck.tensors.len())?;
    for (name, t) in &ck.tensors {
        let nb = name.as_bytes();
        let len = u16::try_from(nb.len()).map_err(|_| FormatError::Corrupt(format!("tensor name too long: {name}")))?;
        o.u16(len)?;
        o.bytes(nb)?;
        o.u8(t.shape().len() as u8)?;
        for &e in t.shape() {
            o.u32(e)?;
        }
        for &x in t.data() {
            o.f64(x)?;
        }
    }
    o.0.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Checkpoint> {
    let mut i = In(r);
    if &i.array::<4>()? != MAGIC {
        return Err(FormatError::Magic.into());
    }
    let version = i.u16()?;
    if version != VERSION {
        return Err(FormatError::Version(version).into());
    }
    let kind = i.u8()?;
    if kind != KIND_CHECKPOINT {
        return Err(FormatError::Kind(kind).into());
    }
    let config = read_config(&mut i)?;
    let count = i.u32()?;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = i.u16()? as usize;
        let mut name = vec![0u8; len];
        i.0.read_exact(&mut name).map_err(eof)?;
        let name = String::from_utf8(name).map_err(|_| FormatError::Corrupt("tensor name is not UTF-8".into()))?;
        let rank = i.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(i.u32()?);
        }
        let n: usize = shape.iter().product();
        if n == 0 || n > (1 << 28) {
            return Err(FormatError::Corrupt(format!("{name}: implausible shape {shape:?}")).into());
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(i.f64()?);
        }
        tensors.push((name, Tensor::new(shape, data)?));
    }
    let mut rest = [0u8; 1];
    if i.0.read(&mut rest)? != 0 {
        return Err(FormatError::Corrupt("trailing bytes".into()).into());
    }
    Ok(Checkpoint { config, tensors })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ck)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
