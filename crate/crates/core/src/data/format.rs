//! Binary dataset files.
//!
//! Layout, all little-endian: magic `LDSD`, version `u16`, then
//! `height u32, width u32, n_train u32, n_validation u32, n_test u32`,
//! then one record per slice (train, validation, test order):
//! `subject u32, slice_index u16, lesion_px u32`, the mask packed
//! row-major eight pixels per byte (LSB first), and the pixels as `f32`.
//! A CRC-32 of every preceding byte closes the file.

use std::path::Path;

use super::{BrainMask, DatasetSplit, SliceImage, SliceRecord, SplitName};
use crate::wire::{blame_checksum, write_atomic, Reader, Writer};
use crate::{Error, FormatError, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"LDSD";
pub const DATASET_VERSION: u16 = 1;

pub fn encode_dataset(split: &DatasetSplit) -> Result<Vec<u8>> {
    let (h, w) = split.extent().unwrap_or((0, 0));
    let mut out = Writer::new(&DATASET_MAGIC, DATASET_VERSION);
    out.u32(h as u32);
    out.u32(w as u32);
    for name in SplitName::ALL {
        out.u32(split.get(name).len() as u32);
    }
    for (_, r) in split.iter() {
        if (r.image.height, r.image.width) != (h, w) || (r.mask.height, r.mask.width) != (h, w) {
            return Err(Error::shape("encode_dataset", format!("{h}x{w}"), format!("{}x{}", r.image.height, r.image.width)));
        }
        out.u32(r.image.subject);
        out.u16(r.image.slice_index);
        out.u32(r.image.lesion_px);
        for chunk in r.mask.bits.chunks(8) {
            out.u8(chunk.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i)));
        }
        for &p in &r.image.pixels {
            out.f32(p);
        }
    }
    Ok(out.finish())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<DatasetSplit> {
    parse(bytes).map_err(|e| blame_checksum(bytes, e))
}

fn parse(bytes: &[u8]) -> Result<DatasetSplit> {
    let mut r = Reader::open(bytes, &DATASET_MAGIC, DATASET_VERSION)?;
    r.require(20)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let counts = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let px = h.checked_mul(w).ok_or_else(|| FormatError::Malformed("extent overflow".into()))?;
    let record = 10 + px.div_ceil(8) + 4 * px;
    let total: usize = counts.iter().sum();
    r.require(record.saturating_mul(total))?;

    let mut split = DatasetSplit::default();
    for (name, n) in SplitName::ALL.into_iter().zip(counts) {
        let mut recs = Vec::with_capacity(n);
        for _ in 0..n {
            let subject = r.u32()?;
            let slice_index = r.u16()?;
            let lesion_px = r.u32()?;
            let packed = r.take(px.div_ceil(8))?;
            let bits = (0..px).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
            let mut pixels = Vec::with_capacity(px);
            for _ in 0..px {
                pixels.push(r.f32()?);
            }
            let mut image = SliceImage::new(h, w, pixels)?;
            image.subject = subject;
            image.slice_index = slice_index;
            image.lesion_px = lesion_px;
            recs.push(SliceRecord { image, mask: BrainMask::new(h, w, bits)? });
        }
        match name {
            SplitName::Train => split.train = recs,
            SplitName::Validation => split.validation = recs,
            SplitName::Test => split.test = recs,
        }
    }
    r.finish()?;
    Ok(split)
}

pub fn save_dataset(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    Ok(write_atomic(path.as_ref(), &encode_dataset(split)?)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetSplit> {
    decode_dataset(&std::fs::read(path)?)
}
