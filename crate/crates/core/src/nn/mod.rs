//! Small feed-forward networks with hand-written backpropagation.
//!
//! Activations use the same `[x][y][channel]` row-major layout as the inputs.
//! Conv weights are `[out, kx, ky, in]`, dense weights `[out, in]`.

mod engine;
mod gradcheck;
mod init;
mod kernels;
mod train;

pub use engine::{argmax, backward, evaluate, forward, predict, Cache, ForwardOutput};
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport, GradEntry};
pub use init::{init_params, InitKind, InitScheme};
pub(crate) use init::init_layer;
pub use train::{sgd_step, train, train_observed, EpochMetrics, TrainConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
    SoftmaxCrossEntropy {
        classes: usize,
    },
}

impl Layer {
    pub fn conv(out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Layer::Conv {
            out_channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn max_pool(size: usize) -> Self {
        Layer::MaxPool { size, stride: size }
    }

    pub fn dense(units: usize) -> Self {
        Layer::Dense { units }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
            Layer::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv { .. } | Layer::Dense { .. })
    }
}

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActShape {
    /// `[x, y, channels]`
    Spatial([usize; 3]),
    Flat(usize),
}

impl ActShape {
    pub fn len(&self) -> usize {
        match *self {
            ActShape::Spatial([x, y, c]) => x * y * c,
            ActShape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    input: [usize; 3],
    layers: Vec<Layer>,
    /// `shapes[i]` is the input of layer `i`; the last entry is the output.
    shapes: Vec<ActShape>,
}

impl NetworkSpec {
    pub fn new(input: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let shape_err = |i: usize, msg: String| Error::Shape(format!("layer {i}: {msg}"));
        if input.contains(&0) {
            return Err(Error::Shape(format!("input shape {input:?} has a zero dimension")));
        }
        let mut shapes = vec![ActShape::Spatial(input)];
        for (i, layer) in layers.iter().enumerate() {
            let cur = *shapes.last().unwrap();
            let next = match (*layer, cur) {
                (Layer::Conv { out_channels, kernel, stride, pad }, ActShape::Spatial([x, y, _])) => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(shape_err(i, "conv sizes must be positive".into()));
                    }
                    if x + 2 * pad < kernel || y + 2 * pad < kernel {
                        return Err(shape_err(i, format!("kernel {kernel} larger than padded input {x}x{y}")));
                    }
                    ActShape::Spatial([
                        (x + 2 * pad - kernel) / stride + 1,
                        (y + 2 * pad - kernel) / stride + 1,
                        out_channels,
                    ])
                }
                (Layer::MaxPool { size, stride }, ActShape::Spatial([x, y, c])) => {
                    if size == 0 || stride == 0 || size > x || size > y {
                        return Err(shape_err(i, format!("pool {size}/{stride} does not fit {x}x{y}")));
                    }
                    ActShape::Spatial([(x - size) / stride + 1, (y - size) / stride + 1, c])
                }
                (Layer::Conv { .. } | Layer::MaxPool { .. }, ActShape::Flat(_)) => {
                    return Err(shape_err(i, format!("{} needs a spatial input", layer.name())));
                }
                (Layer::Relu, s) => s,
                (Layer::Flatten, s) => ActShape::Flat(s.len()),
                (Layer::Dense { units }, ActShape::Flat(_)) => {
                    if units == 0 {
                        return Err(shape_err(i, "dense layer needs at least one unit".into()));
                    }
                    ActShape::Flat(units)
                }
                (Layer::Dense { .. }, ActShape::Spatial(_)) => {
                    return Err(shape_err(i, "dense needs a flat input; add Flatten".into()));
                }
                (Layer::SoftmaxCrossEntropy { classes }, s) => {
                    if i + 1 != layers.len() {
                        return Err(shape_err(i, "the loss layer must be last".into()));
                    }
                    if s != ActShape::Flat(classes) || classes < 2 {
                        return Err(shape_err(
                            i,
                            format!("loss over {classes} classes cannot follow {s:?}"),
                        ));
                    }
                    s
                }
            };
            shapes.push(next);
        }
        if !matches!(layers.last(), Some(Layer::SoftmaxCrossEntropy { .. })) {
            return Err(Error::Shape("network must end with a SoftmaxCrossEntropy layer".into()));
        }
        Ok(NetworkSpec {
            input,
            layers,
            shapes,
        })
    }

    /// Conv(16, 3x3, pad 1) -> ReLU -> MaxPool(2) -> Conv(32, 3x3, pad 1) ->
    /// ReLU -> MaxPool(2) -> Flatten -> Dense(classes).
    pub fn mini_cnn(input: [usize; 3], classes: usize) -> Result<Self> {
        NetworkSpec::new(
            input,
            vec![
                Layer::conv(16, 3, 1, 1),
                Layer::Relu,
                Layer::max_pool(2),
                Layer::conv(32, 3, 1, 1),
                Layer::Relu,
                Layer::max_pool(2),
                Layer::Flatten,
                Layer::dense(classes),
                Layer::SoftmaxCrossEntropy { classes },
            ],
        )
    }

    /// Flatten -> Dense(hidden) -> ReLU -> Dense(classes).
    pub fn mlp(input: [usize; 3], hidden: usize, classes: usize) -> Result<Self> {
        NetworkSpec::new(
            input,
            vec![
                Layer::Flatten,
                Layer::dense(hidden),
                Layer::Relu,
                Layer::dense(classes),
                Layer::SoftmaxCrossEntropy { classes },
            ],
        )
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_of(&self, layer: usize) -> ActShape {
        self.shapes[layer]
    }

    pub fn output_of(&self, layer: usize) -> ActShape {
        self.shapes[layer + 1]
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::SoftmaxCrossEntropy { classes }) => *classes,
            _ => unreachable!("validated at construction"),
        }
    }

    /// Index of the final dense layer (the classifier head).
    pub fn head_index(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| matches!(l, Layer::Dense { .. }))
    }

    /// Weight and bias shapes of layer `i`, if it has parameters.
    pub fn param_shapes(&self, i: usize) -> Option<(Vec<usize>, Vec<usize>)> {
        match (self.layers[i], self.input_of(i)) {
            (Layer::Conv { out_channels, kernel, .. }, ActShape::Spatial([_, _, c])) => {
                Some((vec![out_channels, kernel, kernel, c], vec![out_channels]))
            }
            (Layer::Dense { units }, ActShape::Flat(n)) => Some((vec![units, n], vec![units])),
            _ => None,
        }
    }

    /// `(fan_in, fan_out)` of a parameterized layer.
    pub fn fans(&self, i: usize) -> Option<(usize, usize)> {
        match (self.layers[i], self.input_of(i)) {
            (Layer::Conv { out_channels, kernel, .. }, ActShape::Spatial([_, _, c])) => {
                Some((kernel * kernel * c, kernel * kernel * out_channels))
            }
            (Layer::Dense { units }, ActShape::Flat(n)) => Some((n, units)),
            _ => None,
        }
    }

    /// Same network with the classifier head resized to `classes`.
    pub fn with_head(&self, classes: usize) -> Result<Self> {
        let head = self
            .head_index()
            .ok_or_else(|| Error::Shape("network has no dense head".into()))?;
        let mut layers = self.layers.clone();
        layers[head] = Layer::dense(classes);
        let last = layers.len() - 1;
        layers[last] = Layer::SoftmaxCrossEntropy { classes };
        NetworkSpec::new(self.input, layers)
    }

    pub fn param_count(&self) -> usize {
        (0..self.layers.len())
            .filter_map(|i| self.param_shapes(i))
            .map(|(w, b)| w.iter().product::<usize>() + b[0])
            .sum()
    }

    /// Stable digest of the topology.
    pub fn digest(&self) -> u64 {
        crate::io::fnv1a(&crate::io::checkpoint::encode_spec(self))
    }
}

/// Where a parameter tensor's initial values came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Init(InitScheme),
    /// Copied from a network pretrained on noise data with this fingerprint.
    NoisePretrained { fingerprint: u64 },
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Init(s) => write!(f, "{}(seed={})", s.kind, s.seed),
            Provenance::NoisePretrained { fingerprint } => {
                write!(f, "perlin(fingerprint={fingerprint:016x})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub weight_origin: Provenance,
    pub bias_origin: Provenance,
}

/// Parameters aligned with `NetworkSpec::layers`; `None` for layers without
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<Option<LayerParams>>,
}

impl ParamSet {
    /// Checks every tensor shape against `spec`.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layers().len() {
            return Err(Error::Shape(format!(
                "{} parameter slots for {} layers",
                self.layers.len(),
                spec.layers().len()
            )));
        }
        for (i, slot) in self.layers.iter().enumerate() {
            match (spec.param_shapes(i), slot) {
                (None, None) => {}
                (Some((w, b)), Some(p)) if p.weight.shape() == w && p.bias.shape() == b => {}
                (expected, got) => {
                    return Err(Error::Shape(format!(
                        "layer {i}: expected parameters {expected:?}, got {:?}",
                        got.as_ref().map(|p| (p.weight.shape().to_vec(), p.bias.shape().to_vec()))
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn conv1(&self) -> Option<&LayerParams> {
        self.layers.first().and_then(|l| l.as_ref())
    }

    /// FNV-1a digest of every parameter value's bit pattern.
    pub fn digest(&self) -> u64 {
        let mut h = crate::io::Fnv1a::new();
        for p in self.layers.iter().flatten() {
            for t in [&p.weight, &p.bias] {
                for &x in t.data() {
                    h.write(&x.to_bits().to_le_bytes());
                }
            }
        }
        h.finish()
    }

    pub fn zeros_like(&self) -> Grads {
        Grads {
            layers: self
                .layers
                .iter()
                .map(|slot| {
                    slot.as_ref().map(|p| LayerGrad {
                        weight: Tensor::zeros(p.weight.shape()),
                        bias: Tensor::zeros(p.bias.shape()),
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients (or SGD velocities) shaped like a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Option<LayerGrad>>,
}

impl Grads {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Grads {
            layers: (0..spec.layers().len())
                .map(|i| {
                    spec.param_shapes(i).map(|(w, b)| LayerGrad {
                        weight: Tensor::zeros(&w),
                        bias: Tensor::zeros(&b),
                    })
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mini_cnn_shapes() {
        let spec = NetworkSpec::mini_cnn([32, 32, 1], 9).unwrap();
        assert_eq!(spec.output_of(0), ActShape::Spatial([32, 32, 16]));
        assert_eq!(spec.output_of(2), ActShape::Spatial([16, 16, 16]));
        assert_eq!(spec.output_of(5), ActShape::Spatial([8, 8, 32]));
        assert_eq!(spec.output_of(6), ActShape::Flat(2048));
        assert_eq!(spec.num_classes(), 9);
        assert_eq!(spec.head_index(), Some(7));
        assert_eq!(spec.param_shapes(0).unwrap().0, vec![16, 3, 3, 1]);
        assert_eq!(spec.param_shapes(3).unwrap().0, vec![32, 3, 3, 16]);
        assert_eq!(spec.fans(3), Some((144, 288)));
        assert_eq!(spec.param_count(), 16 * 9 + 16 + 32 * 144 + 32 + 9 * 2048 + 9);
    }

    #[test]
    fn rejects_inconsistent_topologies() {
        let dense_on_spatial = NetworkSpec::new(
            [4, 4, 1],
            vec![Layer::dense(2), Layer::SoftmaxCrossEntropy { classes: 2 }],
        );
        assert!(matches!(dense_on_spatial, Err(Error::Shape(_))));

        let no_loss = NetworkSpec::new([4, 4, 1], vec![Layer::Flatten, Layer::dense(2)]);
        assert!(no_loss.is_err());

        let two_losses = NetworkSpec::new(
            [4, 4, 1],
            vec![
                Layer::Flatten,
                Layer::dense(2),
                Layer::SoftmaxCrossEntropy { classes: 2 },
                Layer::SoftmaxCrossEntropy { classes: 2 },
            ],
        );
        assert!(two_losses.is_err());

        let wrong_classes = NetworkSpec::new(
            [4, 4, 1],
            vec![Layer::Flatten, Layer::dense(3), Layer::SoftmaxCrossEntropy { classes: 2 }],
        );
        assert!(wrong_classes.is_err());

        let big_kernel = NetworkSpec::new(
            [2, 2, 1],
            vec![
                Layer::conv(1, 5, 1, 0),
                Layer::Flatten,
                Layer::dense(2),
                Layer::SoftmaxCrossEntropy { classes: 2 },
            ],
        );
        assert!(big_kernel.is_err());
    }

    #[test]
    fn with_head_keeps_body() {
        let spec = NetworkSpec::mini_cnn([32, 32, 1], 9).unwrap();
        let five = spec.with_head(5).unwrap();
        assert_eq!(five.num_classes(), 5);
        assert_eq!(five.layers()[..7], spec.layers()[..7]);
        assert_ne!(five.digest(), spec.digest());
    }
}
