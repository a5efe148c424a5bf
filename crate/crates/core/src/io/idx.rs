//! IDX arrays (the MNIST container): two zero bytes, a dtype code, the rank,
//! big-endian u32 dimensions, then the row-major payload.
//!
//! Supported dtypes are `0x08` (unsigned byte) and `0x0D` (big-endian f32).
//! Image files of rank 3 `[N, d1, d2]` load as `[N, d1, d2, 1]`; rank 4 keeps
//! its trailing channel axis. Axis `d1` becomes the network's W axis without
//! any transposition.

use std::path::Path;

use super::{read_file, write_file, ByteReader};
use crate::data::LabeledData;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxDtype {
    U8,
    F32,
}

impl IdxDtype {
    pub fn code(self) -> u8 {
        match self {
            IdxDtype::U8 => 0x08,
            IdxDtype::F32 => 0x0D,
        }
    }

    fn size(self) -> usize {
        match self {
            IdxDtype::U8 => 1,
            IdxDtype::F32 => 4,
        }
    }
}

/// A decoded IDX array; byte payloads are kept as their integer values.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxFile {
    pub dtype: IdxDtype,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn decode_idx(bytes: &[u8]) -> Result<IdxFile> {
    let mut r = ByteReader::new(bytes);
    let head = r.bytes(4).map_err(|_| Error::format(0, "file too short for IDX magic"))?;
    if head[0] != 0 || head[1] != 0 {
        return Err(Error::format(0, "IDX magic must start with two zero bytes"));
    }
    let dtype = match head[2] {
        0x08 => IdxDtype::U8,
        0x0D => IdxDtype::F32,
        code => return Err(Error::UnsupportedDtype { code, offset: 2 }),
    };
    let rank = head[3] as usize;
    if rank == 0 {
        return Err(Error::format(3, "IDX rank must be positive"));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = r.be_u32()? as usize;
        dims.push(d);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| r.error("IDX dimensions overflow"))?;
    let payload_at = r.pos();
    let need = count * dtype.size();
    if r.remaining() != need {
        return Err(Error::format(
            payload_at,
            format!(
                "payload has {} bytes, dims {dims:?} need {need}",
                r.remaining()
            ),
        ));
    }
    let raw = r.bytes(need)?;
    let values = match dtype {
        IdxDtype::U8 => raw.iter().map(|&b| b as f64).collect(),
        IdxDtype::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_be_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    Ok(IdxFile { dtype, dims, values })
}

pub fn encode_idx(file: &IdxFile) -> Vec<u8> {
    let mut out = vec![0, 0, file.dtype.code(), file.dims.len() as u8];
    for &d in &file.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &v in &file.values {
        match file.dtype {
            IdxDtype::U8 => out.push(v as u8),
            IdxDtype::F32 => out.extend_from_slice(&(v as f32).to_be_bytes()),
        }
    }
    out
}

pub fn read_idx(path: &Path) -> Result<IdxFile> {
    decode_idx(&read_file(path)?)
}

pub fn write_idx(file: &IdxFile, path: &Path) -> Result<()> {
    write_file(path, &encode_idx(file))
}

/// Pairs decoded images with labels. Byte images are scaled to `[0, 1]`.
pub fn idx_to_labeled(images: IdxFile, labels: IdxFile) -> Result<LabeledData> {
    let (n, w, h, c) = match images.dims.as_slice() {
        &[n, w, h] => (n, w, h, 1),
        &[n, w, h, c] => (n, w, h, c),
        other => {
            return Err(Error::format(
                3,
                format!("image file must have rank 3 or 4, got dims {other:?}"),
            ))
        }
    };
    if labels.dims.len() != 1 {
        return Err(Error::format(3, format!("label file must have rank 1, got dims {:?}", labels.dims)));
    }
    if labels.dims[0] != n {
        return Err(Error::format(
            4,
            format!("label file count {} does not match {n} images", labels.dims[0]),
        ));
    }
    if n == 0 || w == 0 || h == 0 || c == 0 {
        return Err(Error::format(4, "IDX image dimensions must be positive"));
    }
    let mut classes = Vec::with_capacity(n);
    for (i, &y) in labels.values.iter().enumerate() {
        if y < 0.0 || y.fract() != 0.0 {
            return Err(Error::format(
                (8 + i * labels.dtype.size()) as u64,
                format!("label {y} is not a class index"),
            ));
        }
        classes.push(y as usize);
    }
    let num_classes = classes.iter().max().map_or(0, |&m| m + 1);
    let divisor = match images.dtype {
        IdxDtype::U8 => 255.0,
        IdxDtype::F32 => 1.0,
    };
    let data = images.values.into_iter().map(|v| v / divisor).collect();
    LabeledData::new(Tensor::from_vec(&[n, w, h, c], data)?, classes, num_classes)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledData> {
    let images = read_idx(images_path)?;
    let labels = read_idx(labels_path)?;
    idx_to_labeled(images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two 3x3 byte images, written out by hand from the format description.
    fn image_fixture() -> Vec<u8> {
        let mut b = vec![0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 3];
        b.extend_from_slice(&[0, 51, 102, 153, 204, 255, 0, 0, 0]);
        b.extend_from_slice(&[255, 255, 255, 0, 0, 0, 51, 51, 51]);
        b
    }

    fn label_fixture() -> Vec<u8> {
        vec![0x00, 0x00, 0x08, 0x01, 0, 0, 0, 2, 7, 1]
    }

    #[test]
    fn golden_fixture() {
        let data = idx_to_labeled(decode_idx(&image_fixture()).unwrap(), decode_idx(&label_fixture()).unwrap()).unwrap();
        assert_eq!(data.inputs().shape(), &[2, 3, 3, 1]);
        assert_eq!(data.labels(), &[7, 1]);
        assert_eq!(data.num_classes(), 8);
        assert_eq!(data.sample(0), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(data.sample(1), &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.2, 0.2, 0.2]);
    }

    #[test]
    fn float_payload_round_trip() {
        let file = IdxFile {
            dtype: IdxDtype::F32,
            dims: vec![2, 2],
            values: vec![0.5, -1.25, 3.0, 1e-3f32 as f64],
        };
        let bytes = encode_idx(&file);
        assert_eq!(&bytes[..4], &[0, 0, 0x0D, 2]);
        assert_eq!(decode_idx(&bytes).unwrap(), file);
        assert_eq!(encode_idx(&decode_idx(&image_fixture()).unwrap()), image_fixture());
    }

    #[test]
    fn int16_rejected() {
        let mut b = image_fixture();
        b[2] = 0x0B;
        assert!(matches!(decode_idx(&b), Err(Error::UnsupportedDtype { code: 0x0B, offset: 2 })));
    }

    #[test]
    fn count_mismatch_rejected() {
        let labels = vec![0x00, 0x00, 0x08, 0x01, 0, 0, 0, 3, 7, 1, 2];
        let err = idx_to_labeled(decode_idx(&image_fixture()).unwrap(), decode_idx(&labels).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 4, .. }), "{err}");
    }

    #[test]
    fn malformed_headers_positioned() {
        let mut b = image_fixture();
        b[0] = 1;
        assert!(matches!(decode_idx(&b), Err(Error::Format { offset: 0, .. })));
        let b = image_fixture();
        assert!(matches!(decode_idx(&b[..b.len() - 1]), Err(Error::Format { offset: 16, .. })));
        assert!(matches!(decode_idx(&b[..10]), Err(Error::Format { offset: 8, .. })));
        let mut long = image_fixture();
        long.push(0);
        assert!(matches!(decode_idx(&long), Err(Error::Format { offset: 16, .. })));
    }
}
