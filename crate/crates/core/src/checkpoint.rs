//! Parameter checkpoints: a short plain-text header followed by a flat
//! little-endian binary body. The layout is described in `docs/formats.md`.
//!
//! The body alone determines the parameters; the header is for humans and
//! is only checked for its first line. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lstm_augmented::{AugmentedDims, AugmentedLstmParams, InputGateMode};
use crate::lstm_vanilla::VanillaLstmParams;
use crate::params::Parameters;
use crate::rnn_cells::StandardRnnParams;
use crate::training::LossHead;

pub const HEADER_LINE: &str = "rgl-checkpoint 1";
pub const MAGIC: &[u8; 8] = b"RGLPARM1";

#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams {
    StandardRnn(StandardRnnParams),
    VanillaLstm(VanillaLstmParams),
    AugmentedLstm(AugmentedLstmParams),
}

impl ModelParams {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelParams::StandardRnn(_) => "standard-rnn",
            ModelParams::VanillaLstm(_) => "vanilla-lstm",
            ModelParams::AugmentedLstm(_) => "augmented-lstm",
        }
    }

    fn code(&self) -> u32 {
        match self {
            ModelParams::StandardRnn(_) => 0,
            ModelParams::VanillaLstm(_) => 1,
            ModelParams::AugmentedLstm(_) => 2,
        }
    }

    fn flat(&self) -> Vec<f64> {
        match self {
            ModelParams::StandardRnn(p) => p.to_flat(),
            ModelParams::VanillaLstm(p) => p.to_flat(),
            ModelParams::AugmentedLstm(p) => p.to_flat(),
        }
    }

    fn tensor_summary(&self) -> String {
        let tensors = match self {
            ModelParams::StandardRnn(p) => p.tensors(),
            ModelParams::VanillaLstm(p) => p.tensors(),
            ModelParams::AugmentedLstm(p) => p.tensors(),
        };
        tensors
            .iter()
            .map(|t| format!("{} {}", t.name, t.shape))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub head: LossHead,
}

fn head_code(head: &LossHead) -> u32 {
    match head {
        LossHead::Mse => 0,
        LossHead::AffineMse { .. } => 1,
        LossHead::SoftmaxCe { .. } => 2,
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated body at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        usize::try_from(u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .map_err(|_| Error::Format("value count does not fit in memory".into()))
    }

    fn values(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()?;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("value count overflows".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_values(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn load<P: Parameters>(mut p: P, values: &[f64], what: &str) -> Result<P> {
    if values.len() != p.num_scalars() {
        return Err(Error::Format(format!(
            "{what} expects {} values, body has {}",
            p.num_scalars(),
            values.len()
        )));
    }
    p.set_flat(values)?;
    Ok(p)
}

impl Checkpoint {
    pub fn new(model: ModelParams, head: LossHead) -> Self {
        Checkpoint { model, head }
    }

    fn header(&self) -> String {
        let mut h = format!("{HEADER_LINE}\nmodel: {}\n", self.model.kind());
        match &self.model {
            ModelParams::StandardRnn(p) => h.push_str(&format!("d_x: {}\nd_s: {}\n", p.input_dim(), p.state_dim())),
            ModelParams::VanillaLstm(p) => h.push_str(&format!("d_x: {}\nd_s: {}\n", p.input_dim(), p.state_dim())),
            ModelParams::AugmentedLstm(p) => {
                let d = p.dims();
                h.push_str(&format!(
                    "d_x: {}\nd_s: {}\nd_v: {}\ncontext: {}\ninput_gate: {}\n",
                    d.d_x, d.d_s, d.d_v, d.context, d.input_gate
                ));
            }
        }
        h.push_str(&format!("tensors: {}\n", self.model.tensor_summary()));
        h.push_str(&format!("head: {}\n", self.head.kind()));
        h.push_str("encoding: little-endian u32 dims, u64 counts, f64 values\n\n");
        h
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = self.header().into_bytes();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.model.code() as usize)?;
        match &self.model {
            ModelParams::StandardRnn(p) => {
                put_u32(&mut out, p.input_dim())?;
                put_u32(&mut out, p.state_dim())?;
            }
            ModelParams::VanillaLstm(p) => {
                put_u32(&mut out, p.input_dim())?;
                put_u32(&mut out, p.state_dim())?;
            }
            ModelParams::AugmentedLstm(p) => {
                let d = p.dims();
                put_u32(&mut out, d.d_x)?;
                put_u32(&mut out, d.d_s)?;
                put_u32(&mut out, d.context)?;
                put_u32(&mut out, d.d_v)?;
                put_u32(&mut out, usize::from(d.input_gate == InputGateMode::WindowInputs))?;
            }
        }
        put_values(&mut out, &self.model.flat());
        put_u32(&mut out, head_code(&self.head) as usize)?;
        match &self.head {
            LossHead::Mse => {}
            LossHead::AffineMse { w_y, .. } | LossHead::SoftmaxCe { w_y, .. } => {
                put_u32(&mut out, w_y.rows())?;
                put_u32(&mut out, w_y.cols())?;
                put_values(&mut out, &self.head.to_flat());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| Error::Format("missing blank line after header".into()))?;
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| Error::Format("header is not UTF-8".into()))?;
        if header.lines().next() != Some(HEADER_LINE) {
            return Err(Error::Format(format!("first line must be `{HEADER_LINE}`")));
        }
        let mut r = Reader {
            buf: bytes,
            pos: split + 2,
        };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let model = match r.u32()? {
            0 => {
                let (d_x, d_s) = (r.u32()?, r.u32()?);
                ModelParams::StandardRnn(load(StandardRnnParams::zeros(d_x, d_s), &r.values()?, "standard-rnn")?)
            }
            1 => {
                let (d_x, d_s) = (r.u32()?, r.u32()?);
                ModelParams::VanillaLstm(load(VanillaLstmParams::zeros(d_x, d_s), &r.values()?, "vanilla-lstm")?)
            }
            2 => {
                let (d_x, d_s, context, d_v) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
                let input_gate = match r.u32()? {
                    0 => InputGateMode::Elementwise,
                    1 => InputGateMode::WindowInputs,
                    m => return Err(Error::Format(format!("unknown input-gate code {m}"))),
                };
                let dims = AugmentedDims {
                    d_x,
                    d_s,
                    d_v,
                    context,
                    input_gate,
                };
                if context == 0 || d_v > d_s || (input_gate == InputGateMode::Elementwise && d_x != d_s) {
                    return Err(Error::Format(format!("invalid augmented dimensions {dims:?}")));
                }
                ModelParams::AugmentedLstm(load(AugmentedLstmParams::zeros(dims), &r.values()?, "augmented-lstm")?)
            }
            c => return Err(Error::Format(format!("unknown model code {c}"))),
        };
        let head = match r.u32()? {
            0 => LossHead::Mse,
            c @ (1 | 2) => {
                let (d_y, d_v) = (r.u32()?, r.u32()?);
                let empty = if c == 1 {
                    LossHead::affine_mse(d_y, d_v)
                } else {
                    LossHead::softmax_ce(d_y, d_v)
                };
                load(empty, &r.values()?, "head")?
            }
            c => return Err(Error::Format(format!("unknown head code {c}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { model, head })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
