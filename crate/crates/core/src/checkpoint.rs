//! Binary model checkpoints.
//!
//! Layout, all little-endian: magic `VAEC`, version `u16`; architecture
//! (`height u32, width u32`, encoder and decoder channel lists as a `u32`
//! count followed by `u32` entries, `latent_dim u32`, covariance `u8`
//! (0 scalar, 1 per-pixel), `clip f64`, `variance_floor f64`); a `u32`
//! block count and per block its name (`u32` length + UTF-8), rank `u32`,
//! extents `u32` and `f32` values; metadata (`epochs u32`, `final_loss f64`,
//! `seed u64`); CRC-32 of every preceding byte.

use std::path::Path;

use crate::numerics::Tensor;
use crate::vae::{Architecture, CovarianceMode, VaeModel};
use crate::wire::{blame_checksum, write_atomic, Reader, Writer};
use crate::{FormatError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VAEC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingMeta {
    pub epochs: u32,
    pub final_loss: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: VaeModel,
    pub meta: TrainingMeta,
}

fn channels(w: &mut Writer, c: &[usize]) {
    w.u32(c.len() as u32);
    for &v in c {
        w.u32(v as u32);
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let a = &ckpt.model.arch;
    let mut w = Writer::new(&CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    w.u32(a.height as u32);
    w.u32(a.width as u32);
    channels(&mut w, &a.encoder_channels);
    channels(&mut w, &a.decoder_channels);
    w.u32(a.latent_dim as u32);
    w.u8(match a.covariance {
        CovarianceMode::Scalar => 0,
        CovarianceMode::PerPixel => 1,
    });
    w.f64(a.clip);
    w.f64(a.variance_floor);
    let blocks = ckpt.model.params.blocks();
    w.u32(blocks.len() as u32);
    for (name, t) in blocks {
        w.str(&name);
        w.u32(t.rank() as u32);
        for &d in t.shape() {
            w.u32(d as u32);
        }
        for &v in t.data() {
            w.f32(v);
        }
    }
    w.u32(ckpt.meta.epochs);
    w.f64(ckpt.meta.final_loss);
    w.u64(ckpt.meta.seed);
    w.finish()
}

fn read_channels(r: &mut Reader) -> Result<Vec<usize>, FormatError> {
    let n = r.u32()? as usize;
    r.require(4 * n)?;
    (0..n).map(|_| r.u32().map(|v| v as usize)).collect()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    parse(bytes).map_err(|e| blame_checksum(bytes, e))
}

fn parse(bytes: &[u8]) -> Result<Checkpoint> {
    let malformed = |m: String| FormatError::Malformed(m);
    let mut r = Reader::open(bytes, &CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    r.require(8)?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let encoder_channels = read_channels(&mut r)?;
    let decoder_channels = read_channels(&mut r)?;
    r.require(21)?;
    let latent_dim = r.u32()? as usize;
    let covariance = match r.u8()? {
        0 => CovarianceMode::Scalar,
        1 => CovarianceMode::PerPixel,
        c => return Err(malformed(format!("covariance code {c}")).into()),
    };
    let clip = r.f64()?;
    let variance_floor = r.f64()?;
    let arch = Architecture {
        height,
        width,
        encoder_channels,
        decoder_channels,
        latent_dim,
        covariance,
        clip,
        variance_floor,
    };
    arch.validate().map_err(|e| malformed(format!("architecture: {e}")))?;
    // The architecture fixes every block shape, so decode into a template.
    let mut model = VaeModel::<f32>::new(arch, 0)?;
    let names = model.params.block_names();
    r.require(4)?;
    let count = r.u32()? as usize;
    if count != names.len() {
        return Err(malformed(format!("{count} parameter blocks, architecture has {}", names.len())).into());
    }
    for (expected, block) in names.iter().zip(model.params.blocks_mut()) {
        r.require(4)?;
        let name = r.str()?;
        if &name != expected {
            return Err(malformed(format!("block `{name}` where `{expected}` belongs")).into());
        }
        r.require(4)?;
        let rank = r.u32()? as usize;
        r.require(4 * rank)?;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_, _>>()?;
        if shape != block.shape() {
            return Err(malformed(format!("block `{name}` has shape {shape:?}, expected {:?}", block.shape())).into());
        }
        r.require(4 * block.len())?;
        let data = (0..block.len()).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
        *block = Tensor::from_vec(&shape, data)?;
    }
    r.require(20)?;
    let meta = TrainingMeta { epochs: r.u32()?, final_loss: r.f64()?, seed: r.u64()? };
    r.finish()?;
    Ok(Checkpoint { model, meta })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    Ok(write_atomic(path.as_ref(), &encode_checkpoint(ckpt))?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
