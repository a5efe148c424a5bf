use rayon::prelude::*;

use super::kernels::{self, ConvGeom};
use super::{ActShape, Grads, Layer, LayerGrad, NetworkSpec, ParamSet};
use crate::data::LabeledData;
use crate::error::{Error, Result};
use crate::io::Fnv1a;
use crate::tensor::Tensor;

/// Activations retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    spec_digest: u64,
    params_digest: u64,
    labels: Vec<usize>,
    samples: Vec<Trace>,
}

#[derive(Debug, Clone)]
struct Trace {
    /// `acts[i]` is the input of layer `i`; the last one holds the logits.
    acts: Vec<Vec<f64>>,
    /// Max-pool routing per layer (empty for other layers).
    argmax: Vec<Vec<u32>>,
    probs: Vec<f64>,
}

impl Cache {
    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }

    /// Digest of every piecewise-linear decision taken in the forward pass:
    /// ReLU input signs and max-pool winners. Two evaluations with equal
    /// digests lie on the same smooth piece of the loss.
    pub fn decision_digest(&self, spec: &NetworkSpec) -> u64 {
        let mut h = Fnv1a::new();
        for trace in &self.samples {
            for (i, layer) in spec.layers().iter().enumerate() {
                match layer {
                    Layer::Relu => {
                        for &x in &trace.acts[i] {
                            h.write(&[(x > 0.0) as u8]);
                        }
                    }
                    Layer::MaxPool { .. } => {
                        for &a in &trace.argmax[i] {
                            h.write(&a.to_le_bytes());
                        }
                    }
                    _ => {}
                }
            }
        }
        h.finish()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// `[B, classes]`
    pub logits: Tensor,
    pub cache: Cache,
}

fn check_batch(spec: &NetworkSpec, params: &ParamSet, batch: &Tensor) -> Result<usize> {
    params.check(spec)?;
    let [w, h, c] = spec.input_shape();
    let s = batch.shape();
    if s.len() != 4 || s[1..] != [w, h, c] {
        return Err(Error::Shape(format!(
            "batch {s:?} does not match network input [B, {w}, {h}, {c}]"
        )));
    }
    Ok(s[0])
}

fn run_sample(spec: &NetworkSpec, params: &ParamSet, input: &[f64]) -> Result<Trace> {
    let layers = spec.layers();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut argmax: Vec<Vec<u32>> = Vec::with_capacity(layers.len());
    acts.push(input.to_vec());
    // The loss layer is applied separately; it has no activation output.
    for (i, layer) in layers[..layers.len() - 1].iter().enumerate() {
        let x = &acts[i];
        let out_len = spec.output_of(i).len();
        let mut out = vec![0.0; out_len];
        let mut routes = Vec::new();
        match (*layer, spec.input_of(i), spec.output_of(i)) {
            (Layer::Conv { kernel, stride, pad, .. }, ActShape::Spatial(ins), ActShape::Spatial(outs)) => {
                let p = params.layers[i].as_ref().expect("checked");
                let g = ConvGeom {
                    input: ins,
                    output: outs,
                    kernel,
                    stride,
                    pad,
                };
                kernels::conv_forward(&g, x, p.weight.data(), p.bias.data(), &mut out);
            }
            (Layer::MaxPool { size, stride }, ActShape::Spatial(ins), ActShape::Spatial(outs)) => {
                routes = vec![0u32; out_len];
                kernels::maxpool_forward(x, ins, outs, size, stride, &mut out, &mut routes);
            }
            (Layer::Relu, _, _) => kernels::relu_forward(x, &mut out),
            (Layer::Flatten, _, _) => out.copy_from_slice(x),
            (Layer::Dense { .. }, _, _) => {
                let p = params.layers[i].as_ref().expect("checked");
                kernels::dense_forward(x, p.weight.data(), p.bias.data(), &mut out);
            }
            (layer, ins, outs) => unreachable!("{layer:?} with {ins:?} -> {outs:?}"),
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                layer: i,
                kind: layer.name(),
            });
        }
        acts.push(out);
        argmax.push(routes);
    }
    argmax.push(Vec::new());
    Ok(Trace {
        acts,
        argmax,
        probs: Vec::new(),
    })
}

/// Runs the batch `[B, W, H, C]` through the network and scores it against
/// zero-based `labels`.
pub fn forward(spec: &NetworkSpec, params: &ParamSet, batch: &Tensor, labels: &[usize]) -> Result<ForwardOutput> {
    let b = check_batch(spec, params, batch)?;
    if labels.len() != b {
        return Err(Error::Shape(format!("{b} samples but {} labels", labels.len())));
    }
    let classes = spec.num_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidInput(format!("label {bad} outside 0..{classes}")));
    }
    let loss_layer = spec.layers().len() - 1;
    let results: Vec<(f64, Trace)> = (0..b)
        .into_par_iter()
        .map(|s| {
            let mut trace = run_sample(spec, params, batch.row(s))?;
            let (loss, probs) = kernels::softmax_cross_entropy(trace.acts.last().unwrap(), labels[s]);
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    layer: loss_layer,
                    kind: "softmax_cross_entropy",
                });
            }
            trace.probs = probs;
            Ok((loss, trace))
        })
        .collect::<Result<_>>()?;

    let mut total = 0.0;
    let mut logits = Vec::with_capacity(b * classes);
    let mut samples = Vec::with_capacity(b);
    for (loss, trace) in results {
        total += loss;
        logits.extend_from_slice(trace.acts.last().unwrap());
        samples.push(trace);
    }
    Ok(ForwardOutput {
        loss: total / b as f64,
        logits: Tensor::from_vec(&[b, classes], logits)?,
        cache: Cache {
            spec_digest: spec.digest(),
            params_digest: params.digest(),
            labels: labels.to_vec(),
            samples,
        },
    })
}

/// Logits `[B, classes]` without keeping activations.
pub fn predict(spec: &NetworkSpec, params: &ParamSet, batch: &Tensor) -> Result<Tensor> {
    let b = check_batch(spec, params, batch)?;
    let rows: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|s| run_sample(spec, params, batch.row(s)).map(|mut t| t.acts.pop().unwrap()))
        .collect::<Result<_>>()?;
    Tensor::from_vec(&[b, spec.num_classes()], rows.concat())
}

/// Index of the largest logit; ties go to the lowest class.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Mean loss and accuracy over a dataset.
pub fn evaluate(spec: &NetworkSpec, params: &ParamSet, data: &LabeledData) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty dataset".into()));
    }
    const CHUNK: usize = 256;
    let mut loss = 0.0;
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(CHUNK) {
        let part = data.select(chunk);
        let logits = predict(spec, params, part.inputs())?;
        for (r, &y) in part.labels().iter().enumerate() {
            let row = logits.row(r);
            loss += kernels::softmax_cross_entropy(row, y).0;
            if argmax(row) == y {
                correct += 1;
            }
        }
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Gradients of the mean batch loss recorded in `cache`.
pub fn backward(spec: &NetworkSpec, params: &ParamSet, cache: &Cache) -> Result<Grads> {
    if cache.spec_digest != spec.digest() {
        return Err(Error::Contract("cache was produced by a different network".into()));
    }
    if cache.params_digest != params.digest() {
        return Err(Error::Contract(
            "cache is stale: parameters changed since the forward pass".into(),
        ));
    }
    let b = cache.samples.len();
    let scale = 1.0 / b as f64;
    let per_sample: Vec<Vec<Option<(Vec<f64>, Vec<f64>)>>> = cache
        .samples
        .par_iter()
        .zip(cache.labels.par_iter())
        .map(|(trace, &label)| sample_backward(spec, params, trace, label, scale))
        .collect();

    let mut grads = Grads::zeros(spec);
    // Fixed sample order keeps the sum independent of scheduling.
    for sample in &per_sample {
        for (slot, g) in grads.layers.iter_mut().zip(sample) {
            if let (Some(LayerGrad { weight, bias }), Some((dw, db))) = (slot.as_mut(), g) {
                for (a, b) in weight.data_mut().iter_mut().zip(dw) {
                    *a += b;
                }
                for (a, b) in bias.data_mut().iter_mut().zip(db) {
                    *a += b;
                }
            }
        }
    }
    Ok(grads)
}

#[allow(clippy::type_complexity)]
fn sample_backward(
    spec: &NetworkSpec,
    params: &ParamSet,
    trace: &Trace,
    label: usize,
    scale: f64,
) -> Vec<Option<(Vec<f64>, Vec<f64>)>> {
    let layers = spec.layers();
    let mut out: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; layers.len()];
    let first_param = layers.iter().position(Layer::has_params).unwrap_or(layers.len());

    let mut grad: Vec<f64> = trace.probs.iter().map(|p| p * scale).collect();
    grad[label] -= scale;

    for i in (0..layers.len() - 1).rev() {
        let x = &trace.acts[i];
        let need_input = i > first_param;
        match (layers[i], spec.input_of(i), spec.output_of(i)) {
            (Layer::Conv { kernel, stride, pad, .. }, ActShape::Spatial(ins), ActShape::Spatial(outs)) => {
                let p = params.layers[i].as_ref().expect("checked");
                let mut dw = vec![0.0; p.weight.len()];
                let mut db = vec![0.0; p.bias.len()];
                let mut dx = if need_input { vec![0.0; x.len()] } else { Vec::new() };
                let g = ConvGeom {
                    input: ins,
                    output: outs,
                    kernel,
                    stride,
                    pad,
                };
                kernels::conv_backward(
                    &g,
                    x,
                    p.weight.data(),
                    &grad,
                    &mut dw,
                    &mut db,
                    need_input.then_some(dx.as_mut_slice()),
                );
                out[i] = Some((dw, db));
                grad = dx;
            }
            (Layer::Dense { .. }, _, _) => {
                let p = params.layers[i].as_ref().expect("checked");
                let mut dw = vec![0.0; p.weight.len()];
                let mut db = vec![0.0; p.bias.len()];
                let mut dx = if need_input { vec![0.0; x.len()] } else { Vec::new() };
                kernels::dense_backward(
                    x,
                    p.weight.data(),
                    &grad,
                    &mut dw,
                    &mut db,
                    need_input.then_some(dx.as_mut_slice()),
                );
                out[i] = Some((dw, db));
                grad = dx;
            }
            (Layer::MaxPool { .. }, _, _) => {
                let mut dx = vec![0.0; x.len()];
                kernels::maxpool_backward(&grad, &trace.argmax[i], &mut dx);
                grad = dx;
            }
            (Layer::Relu, _, _) => {
                let mut dx = vec![0.0; x.len()];
                kernels::relu_backward(x, &grad, &mut dx);
                grad = dx;
            }
            (Layer::Flatten, _, _) => {}
            (layer, ..) => unreachable!("{layer:?} inside the network body"),
        }
        if i <= first_param {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, InitKind, InitScheme, Layer};
    use crate::rng::Rng;

    fn random_batch(shape: [usize; 3], b: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        let len = b * shape.iter().product::<usize>();
        Tensor::from_vec(&[b, shape[0], shape[1], shape[2]], (0..len).map(|_| rng.gaussian()).collect()).unwrap()
    }

    #[test]
    fn zero_network_gives_log_classes() {
        let spec = NetworkSpec::mini_cnn([8, 8, 1], 7).unwrap();
        let params = init_params(&spec, InitScheme::new(InitKind::Zero, 0)).unwrap();
        let out = forward(&spec, &params, &random_batch([8, 8, 1], 3, 1), &[0, 3, 6]).unwrap();
        assert!(out.logits.data().iter().all(|&z| z == 0.0));
        assert!((out.loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_scalar_recomputation() {
        // Flatten -> Dense(3) -> ReLU -> Dense(4), recomputed term by term.
        let spec = NetworkSpec::mlp([2, 3, 1], 3, 4).unwrap();
        let params = init_params(&spec, InitScheme::he(8)).unwrap();
        let batch = random_batch([2, 3, 1], 2, 2);
        let labels = [1, 3];
        let out = forward(&spec, &params, &batch, &labels).unwrap();

        let w1 = &params.layers[1].as_ref().unwrap().weight;
        let w2 = &params.layers[3].as_ref().unwrap().weight;
        let mut total = 0.0;
        for s in 0..2 {
            let x = batch.row(s);
            let mut hidden = [0.0; 3];
            for (h, slot) in hidden.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..6 {
                    acc += w1.get(&[h, k]) * x[k];
                }
                *slot = acc.max(0.0);
            }
            let mut z = [0.0; 4];
            for (o, slot) in z.iter_mut().enumerate() {
                for h in 0..3 {
                    *slot += w2.get(&[o, h]) * hidden[h];
                }
            }
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            total += -(z[labels[s]].exp() / denom).ln();
            for o in 0..4 {
                assert!((out.logits.get(&[s, o]) - z[o]).abs() < 1e-12);
            }
        }
        assert!((out.loss - total / 2.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let spec = NetworkSpec::mini_cnn([8, 8, 2], 5).unwrap();
        let params = init_params(&spec, InitScheme::he(4)).unwrap();
        let out = forward(&spec, &params, &random_batch([8, 8, 2], 4, 3), &[0, 1, 2, 3]).unwrap();
        for t in &out.cache.samples {
            assert!(t.probs.iter().all(|&p| p > 0.0));
            assert!((t.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_and_label_errors() {
        let spec = NetworkSpec::mini_cnn([8, 8, 1], 3).unwrap();
        let params = init_params(&spec, InitScheme::he(0)).unwrap();
        let wrong = random_batch([8, 7, 1], 2, 0);
        assert!(matches!(forward(&spec, &params, &wrong, &[0, 1]), Err(Error::Shape(_))));
        let batch = random_batch([8, 8, 1], 2, 0);
        assert!(matches!(forward(&spec, &params, &batch, &[0]), Err(Error::Shape(_))));
        assert!(matches!(forward(&spec, &params, &batch, &[0, 3]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let spec = NetworkSpec::mlp([2, 2, 1], 3, 2).unwrap();
        let mut params = init_params(&spec, InitScheme::he(0)).unwrap();
        params.layers[1].as_mut().unwrap().weight.data_mut()[0] = f64::INFINITY;
        let batch = Tensor::filled(&[1, 2, 2, 1], 1.0);
        match forward(&spec, &params, &batch, &[0]) {
            Err(Error::Numeric { layer, kind }) => {
                assert_eq!(layer, 1);
                assert_eq!(kind, "dense");
            }
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let spec = NetworkSpec::mlp([2, 2, 1], 3, 2).unwrap();
        let mut params = init_params(&spec, InitScheme::he(0)).unwrap();
        let out = forward(&spec, &params, &random_batch([2, 2, 1], 2, 1), &[0, 1]).unwrap();
        assert!(backward(&spec, &params, &out.cache).is_ok());
        params.layers[1].as_mut().unwrap().weight.data_mut()[0] += 1.0;
        assert!(matches!(backward(&spec, &params, &out.cache), Err(Error::Contract(_))));
        let other = NetworkSpec::mlp([2, 2, 1], 4, 2).unwrap();
        let other_params = init_params(&other, InitScheme::he(0)).unwrap();
        assert!(matches!(backward(&other, &other_params, &out.cache), Err(Error::Contract(_))));
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        // Hidden biases far below zero: every ReLU input is negative, so the
        // first dense layer receives no gradient.
        let spec = NetworkSpec::mlp([2, 2, 1], 3, 2).unwrap();
        let mut params = init_params(&spec, InitScheme::he(5)).unwrap();
        params.layers[1].as_mut().unwrap().bias.data_mut().fill(-100.0);
        let batch = random_batch([2, 2, 1], 3, 7);
        let out = forward(&spec, &params, &batch, &[0, 1, 1]).unwrap();
        let grads = backward(&spec, &params, &out.cache).unwrap();
        let g1 = grads.layers[1].as_ref().unwrap();
        assert!(g1.weight.data().iter().all(|&g| g == 0.0));
        assert!(g1.bias.data().iter().all(|&g| g == 0.0));
        assert!(grads.layers[3].as_ref().unwrap().bias.data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let spec = NetworkSpec::new(
            [5, 5, 1],
            vec![
                Layer::conv(2, 3, 1, 1),
                Layer::Relu,
                Layer::max_pool(2),
                Layer::Flatten,
                Layer::dense(3),
                Layer::SoftmaxCrossEntropy { classes: 3 },
            ],
        )
        .unwrap();
        let params = init_params(&spec, InitScheme::he(2)).unwrap();
        let batch = random_batch([5, 5, 1], 3, 9);
        let labels = [0, 2, 1];
        let single = forward(&spec, &params, &batch, &labels).unwrap();
        let g1 = backward(&spec, &params, &single.cache).unwrap();

        let mut doubled_data = batch.data().to_vec();
        doubled_data.extend_from_slice(batch.data());
        let doubled = Tensor::from_vec(&[6, 5, 5, 1], doubled_data).unwrap();
        let two = forward(&spec, &params, &doubled, &[0, 2, 1, 0, 2, 1]).unwrap();
        let g2 = backward(&spec, &params, &two.cache).unwrap();

        assert!((single.loss - two.loss).abs() < 1e-12);
        for (a, b) in g1.layers.iter().flatten().zip(g2.layers.iter().flatten()) {
            for (x, y) in a.weight.data().iter().zip(b.weight.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evaluate_is_order_independent() {
        let spec = NetworkSpec::mini_cnn([8, 8, 1], 3).unwrap();
        let params = init_params(&spec, InitScheme::he(1)).unwrap();
        let batch = random_batch([8, 8, 1], 30, 4);
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let data = LabeledData::new(batch, labels, 3).unwrap();
        let (_, acc) = evaluate(&spec, &params, &data).unwrap();
        let mut order: Vec<usize> = (0..30).collect();
        Rng::new(3).shuffle(&mut order);
        let (_, acc2) = evaluate(&spec, &params, &data.select(&order)).unwrap();
        assert_eq!(acc, acc2);
    }
}
