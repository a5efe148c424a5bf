//! Dense row-major `f64` arrays.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major flat offset of a multi-index.
    #[inline]
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            debug_assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            off = off * d + i;
        }
        off
    }

    #[inline]
    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    #[inline]
    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    }

    /// Slice along the leading axis.
    pub fn row(&self, i: usize) -> &[f64] {
        let stride = self.data.len() / self.shape[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Shape(format!(
                "cannot multiply {:?} by {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Little-endian encoding: rank (u8), dims (u32 each), payload (f64 bits).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 4 * self.rank() + 8 * self.len());
        self.write_bytes(&mut out);
        out
    }

    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        out.push(self.rank() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &self.data {
            out.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    }

    /// Inverse of [`Tensor::to_bytes`]; the whole buffer must be consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<Tensor> {
        let mut reader = crate::io::ByteReader::new(bytes);
        let t = reader.tensor()?;
        reader.finish()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 0], vec![]).is_err());
        assert_eq!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).unwrap().len(), 6);
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::from_vec(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        assert_eq!(t.get(&[1, 2, 3]), 23.0);
        assert_eq!(t.get(&[0, 1, 0]), 4.0);
        assert_eq!(t.get(&[1, 0, 0]), 12.0);
    }

    #[test]
    fn matmul_identity() {
        let x = Tensor::from_vec(&[3, 2], vec![1.5, -2.0, 0.25, 7.0, 3.0, -1.0]).unwrap();
        assert_eq!(Tensor::identity(3).matmul(&x).unwrap(), x);
        assert_eq!(x.matmul(&Tensor::identity(2)).unwrap(), x);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![5.0, 6.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(42);
        let a = Tensor::from_vec(&[7, 5], (0..35).map(|_| rng.gaussian()).collect()).unwrap();
        let b = Tensor::from_vec(&[5, 3], (0..15).map(|_| rng.gaussian()).collect()).unwrap();
        let c = a.matmul(&b).unwrap();
        for i in 0..7 {
            for j in 0..3 {
                let mut s = 0.0;
                for p in 0..5 {
                    s += a.get(&[i, p]) * b.get(&[p, j]);
                }
                assert!((c.get(&[i, j]) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&Tensor::zeros(&[2, 3])), Err(Error::Shape(_))));
        assert!(a.matmul(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn byte_round_trip_keeps_special_values() {
        let t = Tensor::from_vec(&[2, 2], vec![-0.0, f64::MIN_POSITIVE, 1e308, f64::NAN]).unwrap();
        let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_bytes_rejected() {
        let t = Tensor::zeros(&[3, 3]);
        let bytes = t.to_bytes();
        assert!(matches!(
            Tensor::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn right_identity_is_exact(m in 1usize..6, n in 1usize..6, seed in any::<u64>()) {
                let mut rng = crate::rng::Rng::new(seed);
                let a = Tensor::from_vec(&[m, n], (0..m * n).map(|_| rng.gaussian() * 1e3).collect()).unwrap();
                prop_assert_eq!(a.matmul(&Tensor::identity(n)).unwrap(), a);
            }

            #[test]
            fn bytes_round_trip(dims in proptest::collection::vec(1usize..4, 1..4), seed in any::<u64>()) {
                let len = dims.iter().product();
                let mut rng = crate::rng::Rng::new(seed);
                let t = Tensor::from_vec(&dims, (0..len).map(|_| f64::from_bits(rng.next_u64())).collect()).unwrap();
                let back = Tensor::from_bytes(&t.to_bytes()).unwrap();
                prop_assert_eq!(back.shape(), t.shape());
                prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }
}
