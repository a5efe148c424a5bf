//! Checkpoint container.
//!
//! ```text
//! header      magic "NICHKPT\0" (8), version u16 = 1, spec digest u64
//! spec        input W, H, C (u32 each), layer count u32,
//!             per layer: tag u8, four u32 fields
//!               0 conv      (out_channels, kernel, stride, pad)
//!               1 relu      (0, 0, 0, 0)
//!               2 maxpool   (size, stride, 0, 0)
//!               3 flatten   (0, 0, 0, 0)
//!               4 dense     (units, 0, 0, 0)
//!               5 softmax_cross_entropy (classes, 0, 0, 0)
//! tensors     count u32, then per tensor:
//!               name (u16 length + UTF-8, "layer{i}.weight" / "layer{i}.bias"),
//!               provenance (tag u8, a u64, b u64),
//!               rank u8, dims u32 each, payload f64 each
//! provenance  init provenance (tag u8, a u64, b u64),
//!             fingerprint flag u8 + u64,
//!             history count u32, per epoch:
//!               epoch u32, learning_rate f64, train_loss f64,
//!               train_accuracy f64, val_loss (flag u8 + f64),
//!               val_accuracy (flag u8 + f64)
//! ```
//!
//! Provenance tags: 0 he, 1 xavier, 2 sparse (b = k), 3 normal, 4 zero
//! (a = seed for all five), 5 noise-pretrained (a = fingerprint).
//! Little-endian throughout; the file ends after the last history entry.

use std::path::Path;

use super::{fnv1a, read_file, write_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::nn::{EpochMetrics, InitKind, InitScheme, Layer, LayerParams, NetworkSpec, ParamSet, Provenance};
use crate::pipeline::Checkpoint;

pub const MAGIC: &[u8; 8] = b"NICHKPT\0";
pub const VERSION: u16 = 1;

pub fn encode_spec(spec: &NetworkSpec) -> Vec<u8> {
    let mut w = ByteWriter::new();
    write_spec(&mut w, spec);
    w.buf
}

fn write_spec(w: &mut ByteWriter, spec: &NetworkSpec) {
    for d in spec.input_shape() {
        w.u32(d as u32);
    }
    w.u32(spec.layers().len() as u32);
    for layer in spec.layers() {
        let (tag, f) = match *layer {
            Layer::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            } => (0, [out_channels, kernel, stride, pad]),
            Layer::Relu => (1, [0; 4]),
            Layer::MaxPool { size, stride } => (2, [size, stride, 0, 0]),
            Layer::Flatten => (3, [0; 4]),
            Layer::Dense { units } => (4, [units, 0, 0, 0]),
            Layer::SoftmaxCrossEntropy { classes } => (5, [classes, 0, 0, 0]),
        };
        w.u8(tag);
        for x in f {
            w.u32(x as u32);
        }
    }
}

fn read_spec(r: &mut ByteReader) -> Result<NetworkSpec> {
    let start = r.pos();
    let input = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let count = r.u32()? as usize;
    if count > r.remaining() / 17 {
        return Err(r.error(format!("layer count {count} exceeds remaining data")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos();
        let tag = r.u8()?;
        let f = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        layers.push(match tag {
            0 => Layer::Conv {
                out_channels: f[0],
                kernel: f[1],
                stride: f[2],
                pad: f[3],
            },
            1 => Layer::Relu,
            2 => Layer::MaxPool {
                size: f[0],
                stride: f[1],
            },
            3 => Layer::Flatten,
            4 => Layer::Dense { units: f[0] },
            5 => Layer::SoftmaxCrossEntropy { classes: f[0] },
            other => return Err(Error::format(at, format!("unknown layer tag {other}"))),
        });
    }
    NetworkSpec::new(input, layers).map_err(|e| Error::format(start, format!("invalid network: {e}")))
}

fn write_provenance(w: &mut ByteWriter, p: &Provenance) {
    let (tag, a, b) = match *p {
        Provenance::Init(InitScheme { kind, seed }) => match kind {
            InitKind::He => (0, seed, 0),
            InitKind::Xavier => (1, seed, 0),
            InitKind::Sparse { k } => (2, seed, k as u64),
            InitKind::Normal => (3, seed, 0),
            InitKind::Zero => (4, seed, 0),
        },
        Provenance::NoisePretrained { fingerprint } => (5, fingerprint, 0),
    };
    w.u8(tag);
    w.u64(a);
    w.u64(b);
}

fn read_provenance(r: &mut ByteReader) -> Result<Provenance> {
    let at = r.pos();
    let tag = r.u8()?;
    let a = r.u64()?;
    let b = r.u64()?;
    let init = |kind| Ok(Provenance::Init(InitScheme::new(kind, a)));
    match tag {
        0 => init(InitKind::He),
        1 => init(InitKind::Xavier),
        2 => init(InitKind::Sparse { k: b as usize }),
        3 => init(InitKind::Normal),
        4 => init(InitKind::Zero),
        5 => Ok(Provenance::NoisePretrained { fingerprint: a }),
        other => Err(Error::format(at, format!("unknown provenance tag {other}"))),
    }
}

fn write_opt(w: &mut ByteWriter, v: Option<f64>) {
    w.u8(v.is_some() as u8);
    w.f64(v.unwrap_or(0.0));
}

fn read_opt(r: &mut ByteReader) -> Result<Option<f64>> {
    let at = r.pos();
    let flag = r.u8()?;
    let v = r.f64()?;
    match flag {
        0 => Ok(None),
        1 => Ok(Some(v)),
        other => Err(Error::format(at, format!("bad option flag {other}"))),
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(MAGIC);
    w.u16(VERSION);
    let spec_bytes = encode_spec(&ckpt.spec);
    w.u64(fnv1a(&spec_bytes));
    w.buf.extend_from_slice(&spec_bytes);

    let tensors: Vec<_> = ckpt
        .params
        .layers
        .iter()
        .enumerate()
        .filter_map(|(i, slot)| slot.as_ref().map(|p| (i, p)))
        .collect();
    w.u32(2 * tensors.len() as u32);
    for (i, p) in tensors {
        w.string(&format!("layer{i}.weight"));
        write_provenance(&mut w, &p.weight_origin);
        w.tensor(&p.weight);
        w.string(&format!("layer{i}.bias"));
        write_provenance(&mut w, &p.bias_origin);
        w.tensor(&p.bias);
    }

    write_provenance(&mut w, &ckpt.init);
    w.u8(ckpt.fingerprint.is_some() as u8);
    w.u64(ckpt.fingerprint.unwrap_or(0));
    w.u32(ckpt.history.len() as u32);
    for e in &ckpt.history {
        w.u32(e.epoch as u32);
        w.f64(e.learning_rate);
        w.f64(e.train_loss);
        w.f64(e.train_accuracy);
        write_opt(&mut w, e.val_loss);
        write_opt(&mut w, e.val_accuracy);
    }
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            supported: VERSION,
        });
    }
    let digest = r.u64()?;
    let spec_at = r.pos();
    let spec = read_spec(&mut r)?;
    if spec.digest() != digest {
        return Err(Error::format(spec_at, "spec section does not match header digest"));
    }

    let count_at = r.pos();
    let count = r.u32()? as usize;
    let slots: Vec<usize> = (0..spec.layers().len()).filter(|&i| spec.param_shapes(i).is_some()).collect();
    if count != 2 * slots.len() {
        return Err(Error::format(
            count_at,
            format!("{count} tensors, network needs {}", 2 * slots.len()),
        ));
    }
    let mut layers: Vec<Option<LayerParams>> = vec![None; spec.layers().len()];
    for &i in &slots {
        let (wshape, bshape) = spec.param_shapes(i).expect("parameterized");
        let mut read_named = |name: String, shape: &[usize]| -> Result<_> {
            let at = r.pos();
            let got = r.string()?;
            if got != name {
                return Err(Error::format(at, format!("expected tensor {name:?}, found {got:?}")));
            }
            let origin = read_provenance(&mut r)?;
            let at = r.pos();
            let t = r.tensor()?;
            if t.shape() != shape {
                return Err(Error::format(at, format!("{name} has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok((t, origin))
        };
        let (weight, weight_origin) = read_named(format!("layer{i}.weight"), &wshape)?;
        let (bias, bias_origin) = read_named(format!("layer{i}.bias"), &bshape)?;
        layers[i] = Some(LayerParams {
            weight,
            bias,
            weight_origin,
            bias_origin,
        });
    }

    let init = read_provenance(&mut r)?;
    let flag_at = r.pos();
    let fingerprint = match (r.u8()?, r.u64()?) {
        (0, _) => None,
        (1, f) => Some(f),
        (other, _) => return Err(Error::format(flag_at, format!("bad fingerprint flag {other}"))),
    };
    let epochs = r.u32()? as usize;
    if epochs > r.remaining() / 46 {
        return Err(r.error(format!("history length {epochs} exceeds remaining data")));
    }
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        history.push(EpochMetrics {
            epoch: r.u32()? as usize,
            learning_rate: r.f64()?,
            train_loss: r.f64()?,
            train_accuracy: r.f64()?,
            val_loss: read_opt(&mut r)?,
            val_accuracy: read_opt(&mut r)?,
        });
    }
    r.finish()?;
    Ok(Checkpoint {
        spec,
        params: ParamSet { layers },
        init,
        history,
        fingerprint,
    })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_file(path, &encode_checkpoint(ckpt))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}
