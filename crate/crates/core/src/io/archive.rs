//! Noise-dataset archive.
//!
//! All integers little-endian, floats as IEEE-754 binary64 bit patterns.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "PNOISEDS"
//! 8       2     version (u16) = 1
//! 10      36    config block:
//!                 N u32, M u32, K u32, W u32, H u32, C u32,
//!                 master_seed u64,
//!                 interpolation u8 (0 = linear, 1 = smoothstep),
//!                 channel_mode u8 (0 = replicate, 1 = independent),
//!                 reserved u16 = 0
//! 46      8     sample count T (u64), must equal N*M*K
//! 54      ...   T records, category-major:
//!                 label u32, n u32, m u32, k u32, seed u64,
//!                 W*H*C values f64 in [x][y][c] row-major order
//! ```
//!
//! The file ends exactly after the last record.

use std::path::Path;

use super::{read_file, write_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::perlin::{label_to_params, ChannelMode, DatasetConfig, Interpolation, NoiseDataset, NoiseSample};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PNOISEDS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 54;

pub fn encode_config(cfg: &DatasetConfig) -> Vec<u8> {
    let mut w = ByteWriter::new();
    write_config(&mut w, cfg);
    w.buf
}

fn write_config(w: &mut ByteWriter, cfg: &DatasetConfig) {
    w.u32(cfg.n_max);
    w.u32(cfg.m_max);
    w.u32(cfg.per_category);
    w.u32(cfg.width as u32);
    w.u32(cfg.height as u32);
    w.u32(cfg.channels as u32);
    w.u64(cfg.master_seed);
    w.u8(match cfg.interpolation {
        Interpolation::Linear => 0,
        Interpolation::Smoothstep => 1,
    });
    w.u8(match cfg.channel_mode {
        ChannelMode::Replicate => 0,
        ChannelMode::Independent => 1,
    });
    w.u16(0);
}

fn read_config(r: &mut ByteReader) -> Result<DatasetConfig> {
    let start = r.pos();
    let n_max = r.u32()?;
    let m_max = r.u32()?;
    let per_category = r.u32()?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let master_seed = r.u64()?;
    let interpolation = match r.u8()? {
        0 => Interpolation::Linear,
        1 => Interpolation::Smoothstep,
        other => return Err(Error::format(r.pos() - 1, format!("unknown interpolation code {other}"))),
    };
    let channel_mode = match r.u8()? {
        0 => ChannelMode::Replicate,
        1 => ChannelMode::Independent,
        other => return Err(Error::format(r.pos() - 1, format!("unknown channel mode {other}"))),
    };
    if r.u16()? != 0 {
        return Err(Error::format(r.pos() - 2, "reserved config field is nonzero"));
    }
    let cfg = DatasetConfig {
        n_max,
        m_max,
        per_category,
        width,
        height,
        channels,
        master_seed,
        interpolation,
        channel_mode,
    };
    cfg.validate()
        .map_err(|e| Error::format(start, format!("invalid config block: {e}")))?;
    Ok(cfg)
}

pub fn encode_noise_dataset(ds: &NoiseDataset) -> Vec<u8> {
    let cfg = &ds.config;
    let per_sample = 24 + 8 * cfg.width * cfg.height * cfg.channels;
    let mut w = ByteWriter {
        buf: Vec::with_capacity(HEADER_LEN + ds.len() * per_sample),
    };
    w.buf.extend_from_slice(MAGIC);
    w.u16(VERSION);
    write_config(&mut w, cfg);
    w.u64(ds.len() as u64);
    for s in &ds.samples {
        w.u32(s.label);
        w.u32(s.n);
        w.u32(s.m);
        w.u32(s.index);
        w.u64(s.seed);
        w.f64_slice(s.values.data());
    }
    w.buf
}

pub fn decode_noise_dataset(bytes: &[u8]) -> Result<NoiseDataset> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            supported: VERSION,
        });
    }
    let config = read_config(&mut r)?;
    let count_at = r.pos();
    let count = r.u64()?;
    if count != config.total_samples() as u64 {
        return Err(Error::format(
            count_at,
            format!("sample count {count} does not match N*M*K = {}", config.total_samples()),
        ));
    }
    let [w, h, c] = config.input_shape();
    let k_per = config.per_category as usize;
    let mut samples = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let at = r.pos();
        let label = r.u32()?;
        let n = r.u32()?;
        let m = r.u32()?;
        let index = r.u32()?;
        let seed = r.u64()?;
        let expected_label = (i / k_per + 1) as u32;
        let expected_index = (i % k_per + 1) as u32;
        if label != expected_label || index != expected_index {
            return Err(Error::format(
                at,
                format!(
                    "record {i} has label {label} / index {index}, expected {expected_label} / {expected_index}"
                ),
            ));
        }
        if label_to_params(label, config.m_max)? != (n, m) {
            return Err(Error::format(at, format!("record {i}: (n, m) = ({n}, {m}) disagrees with label {label}")));
        }
        let values = Tensor::from_vec(&[w, h, c], r.f64_vec(w * h * c)?)?;
        samples.push(NoiseSample {
            values,
            label,
            n,
            m,
            index,
            seed,
        });
    }
    r.finish()?;
    Ok(NoiseDataset { config, samples })
}

pub fn write_noise_dataset(ds: &NoiseDataset, path: &Path) -> Result<()> {
    write_file(path, &encode_noise_dataset(ds))
}

pub fn read_noise_dataset(path: &Path) -> Result<NoiseDataset> {
    decode_noise_dataset(&read_file(path)?)
}
