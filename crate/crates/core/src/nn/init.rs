use std::fmt;

use super::{LayerParams, NetworkSpec, ParamSet, Provenance};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitKind {
    /// Gaussian with variance `2 / fan_in`.
    He,
    /// Uniform on `+-sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    /// Exactly `k` unit-Gaussian weights per output unit, the rest zero.
    Sparse { k: usize },
    /// Unit Gaussian.
    Normal,
    Zero,
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitKind::He => f.write_str("he"),
            InitKind::Xavier => f.write_str("xavier"),
            InitKind::Sparse { k } => write!(f, "sparse{k}"),
            InitKind::Normal => f.write_str("normal"),
            InitKind::Zero => f.write_str("zero"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InitScheme {
    pub kind: InitKind,
    pub seed: u64,
}

impl InitScheme {
    pub fn new(kind: InitKind, seed: u64) -> Self {
        InitScheme { kind, seed }
    }

    pub fn he(seed: u64) -> Self {
        InitScheme::new(InitKind::He, seed)
    }

    /// Weights for one layer with the given fans. `rng` is the layer's own
    /// stream; biases are always zero and drawn from nothing.
    pub fn weights(&self, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        let data = match self.kind {
            InitKind::He => {
                let std = (2.0 / fan_in as f64).sqrt();
                (0..len).map(|_| std * rng.gaussian()).collect()
            }
            InitKind::Xavier => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..len)
                    .map(|_| rng.uniform(-bound, bound))
                    .collect::<Result<Vec<_>>>()?
            }
            InitKind::Normal => (0..len).map(|_| rng.gaussian()).collect(),
            InitKind::Zero => vec![0.0; len],
            InitKind::Sparse { k } => {
                if k < 1 || k > fan_in {
                    return Err(Error::InvalidParameter(format!(
                        "sparse init needs 1 <= k <= fan_in, got k = {k}, fan_in = {fan_in}"
                    )));
                }
                let mut data = vec![0.0; len];
                let mut slots: Vec<usize> = (0..fan_in).collect();
                for row in data.chunks_exact_mut(fan_in) {
                    // Partial Fisher-Yates picks k distinct inputs.
                    for s in 0..k {
                        let j = s + rng.below((fan_in - s) as u64) as usize;
                        slots.swap(s, j);
                        let mut w = 0.0;
                        while w == 0.0 {
                            w = rng.gaussian();
                        }
                        row[slots[s]] = w;
                    }
                }
                data
            }
        };
        Tensor::from_vec(shape, data)
    }
}

/// Fresh parameters for every layer of `spec`. Layer `i` draws from
/// substream `i` of the scheme seed.
pub fn init_params(spec: &NetworkSpec, scheme: InitScheme) -> Result<ParamSet> {
    let layers = (0..spec.layers().len())
        .map(|i| init_layer(spec, i, scheme))
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamSet { layers })
}

pub(crate) fn init_layer(spec: &NetworkSpec, i: usize, scheme: InitScheme) -> Result<Option<LayerParams>> {
    let Some((wshape, bshape)) = spec.param_shapes(i) else {
        return Ok(None);
    };
    let (fan_in, fan_out) = spec.fans(i).expect("parameterized layer");
    let mut rng = Rng::substream(scheme.seed, i as u64);
    let weight = scheme
        .weights(&wshape, fan_in, fan_out, &mut rng)
        .map_err(|e| match e {
            Error::InvalidParameter(msg) => Error::InvalidParameter(format!("layer {i}: {msg}")),
            other => other,
        })?;
    Ok(Some(LayerParams {
        weight,
        bias: Tensor::zeros(&bshape),
        weight_origin: Provenance::Init(scheme),
        bias_origin: Provenance::Init(scheme),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn dense_net(fan_in: usize, units: usize) -> NetworkSpec {
        NetworkSpec::new(
            [fan_in, 1, 1],
            vec![
                Layer::Flatten,
                Layer::dense(units),
                Layer::SoftmaxCrossEntropy { classes: units },
            ],
        )
        .unwrap()
    }

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn he_variance_matches_fan_in() {
        // 800 x 1250 = 10^6 weights.
        let spec = dense_net(800, 1250);
        let p = init_params(&spec, InitScheme::he(3)).unwrap();
        let w = p.layers[1].as_ref().unwrap().weight.data();
        assert_eq!(w.len(), 1_000_000);
        let (mean, var) = moments(w);
        assert!((var - 0.0025).abs() < 0.01 * 0.0025, "var {var}");
        assert!(mean.abs() < 3.0 * (0.0025f64 / 1e6).sqrt());
    }

    #[test]
    fn xavier_bounds_and_moments() {
        let spec = dense_net(300, 100);
        let p = init_params(&spec, InitScheme::new(InitKind::Xavier, 1)).unwrap();
        let w = p.layers[1].as_ref().unwrap().weight.data();
        let bound = (6.0f64 / 400.0).sqrt();
        assert!(w.iter().all(|x| x.abs() < bound));
        let (mean, var) = moments(w);
        let expected_var = bound * bound / 3.0;
        assert!(mean.abs() < 3.0 * (expected_var / w.len() as f64).sqrt());
        assert!((var - expected_var).abs() < 0.03 * expected_var);
    }

    #[test]
    fn normal_moments() {
        let spec = dense_net(200, 200);
        let p = init_params(&spec, InitScheme::new(InitKind::Normal, 9)).unwrap();
        let (mean, var) = moments(p.layers[1].as_ref().unwrap().weight.data());
        assert!(mean.abs() < 3.0 / 200.0);
        assert!((var - 1.0).abs() < 0.03);
    }

    #[test]
    fn zero_is_exact() {
        let spec = NetworkSpec::mini_cnn([8, 8, 1], 3).unwrap();
        let p = init_params(&spec, InitScheme::new(InitKind::Zero, 0)).unwrap();
        for l in p.layers.iter().flatten() {
            assert!(l.weight.data().iter().all(|&x| x == 0.0));
            assert!(l.bias.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn sparse_counts_exact() {
        let spec = dense_net(100, 50);
        let p = init_params(&spec, InitScheme::new(InitKind::Sparse { k: 15 }, 4)).unwrap();
        let w = &p.layers[1].as_ref().unwrap().weight;
        assert_eq!(w.data().iter().filter(|&&x| x != 0.0).count(), 15 * 50);
        for row in w.data().chunks(100) {
            assert_eq!(row.iter().filter(|&&x| x != 0.0).count(), 15);
        }
    }

    #[test]
    fn sparse_k_above_fan_in_fails() {
        let spec = dense_net(10, 4);
        let err = init_params(&spec, InitScheme::new(InitKind::Sparse { k: 11 }, 0)).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
        assert!(init_params(&spec, InitScheme::new(InitKind::Sparse { k: 10 }, 0)).is_ok());
    }

    #[test]
    fn biases_zero_and_provenance_tagged() {
        let spec = NetworkSpec::mini_cnn([8, 8, 1], 3).unwrap();
        let scheme = InitScheme::he(12);
        let p = init_params(&spec, scheme).unwrap();
        p.check(&spec).unwrap();
        for l in p.layers.iter().flatten() {
            assert!(l.bias.data().iter().all(|&x| x == 0.0));
            assert_eq!(l.weight_origin, Provenance::Init(scheme));
        }
        assert_eq!(p, init_params(&spec, scheme).unwrap());
    }
}
