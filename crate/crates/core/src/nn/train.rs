use super::engine::{argmax, backward, evaluate, forward};
use super::{Grads, NetworkSpec, ParamSet};
use crate::data::LabeledData;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Mini-batch SGD with momentum and a step-decay schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Zero-based epochs from which the rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub shuffle_seed: u64,
    /// Update only the classifier head.
    pub freeze_features: bool,
}

impl TrainConfig {
    /// Defaults: lr 0.01, momentum 0.9, batch 32, decay x0.1 at 50% and 75%
    /// of the epochs.
    pub fn new(epochs: usize, shuffle_seed: u64) -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs,
            decay_epochs: Self::default_milestones(epochs),
            decay_factor: 0.1,
            shuffle_seed,
            freeze_features: false,
        }
    }

    pub fn default_milestones(epochs: usize) -> Vec<usize> {
        vec![epochs / 2, epochs * 3 / 4]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.decay_factor > 0.0) {
            return Err(Error::InvalidConfig("decay factor must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used during zero-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = self.decay_epochs.iter().filter(|&&m| epoch >= m).count();
        self.learning_rate * self.decay_factor.powi(steps as i32)
    }
}

/// `velocity <- momentum * velocity - lr(epoch) * grad; params <- params + velocity`.
pub fn sgd_step(params: &mut ParamSet, grads: &Grads, velocity: &mut Grads, cfg: &TrainConfig, epoch: usize) {
    let lr = cfg.lr_at(epoch);
    let head = params.layers.iter().rposition(Option::is_some);
    for (i, ((p, g), v)) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(velocity.layers.iter_mut())
        .enumerate()
    {
        if cfg.freeze_features && Some(i) != head {
            continue;
        }
        let (Some(p), Some(g), Some(v)) = (p.as_mut(), g.as_ref(), v.as_mut()) else {
            continue;
        };
        for (param, grad, vel) in [
            (p.weight.data_mut(), g.weight.data(), v.weight.data_mut()),
            (p.bias.data_mut(), g.bias.data(), v.bias.data_mut()),
        ] {
            assert_eq!(param.len(), grad.len(), "gradient shape");
            for ((w, &dw), u) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
                *u = cfg.momentum * *u - lr * dw;
                *w += *u;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// One-based.
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean loss over the epoch's mini-batches (sample weighted).
    pub train_loss: f64,
    /// Accuracy of the predictions made during the epoch.
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub fn train(
    spec: &NetworkSpec,
    params: ParamSet,
    data: &LabeledData,
    cfg: &TrainConfig,
) -> Result<(ParamSet, Vec<EpochMetrics>)> {
    train_observed(spec, params, data, cfg, None, &mut |_| {})
}

/// [`train`] with optional per-epoch validation and a progress callback.
/// Epoch `e` visits the data in the order given by substream `e` of the
/// shuffle seed.
pub fn train_observed(
    spec: &NetworkSpec,
    mut params: ParamSet,
    data: &LabeledData,
    cfg: &TrainConfig,
    validation: Option<&LabeledData>,
    observer: &mut dyn FnMut(&EpochMetrics),
) -> Result<(ParamSet, Vec<EpochMetrics>)> {
    cfg.validate()?;
    params.check(spec)?;
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if data.num_classes() > spec.num_classes() {
        return Err(Error::InvalidInput(format!(
            "dataset has {} classes but the network predicts {}",
            data.num_classes(),
            spec.num_classes()
        )));
    }
    if data.input_shape() != spec.input_shape() {
        return Err(Error::Shape(format!(
            "dataset inputs {:?} do not match network input {:?}",
            data.input_shape(),
            spec.input_shape()
        )));
    }

    let mut velocity = Grads::zeros(spec);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        Rng::substream(cfg.shuffle_seed, epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let out = forward(spec, &params, batch.inputs(), batch.labels())?;
            loss_sum += out.loss * chunk.len() as f64;
            correct += batch
                .labels()
                .iter()
                .enumerate()
                .filter(|&(r, &y)| argmax(out.logits.row(r)) == y)
                .count();
            let grads = backward(spec, &params, &out.cache)?;
            sgd_step(&mut params, &grads, &mut velocity, cfg, epoch);
        }

        let (val_loss, val_accuracy) = match validation {
            Some(v) => {
                let (l, a) = evaluate(spec, &params, v)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            learning_rate: cfg.lr_at(epoch),
            train_loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
            val_loss,
            val_accuracy,
        };
        observer(&metrics);
        history.push(metrics);
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, InitScheme, Layer, LayerParams, Provenance};
    use crate::tensor::Tensor;

    fn scalar_params(w: f64) -> ParamSet {
        let scheme = InitScheme::he(0);
        ParamSet {
            layers: vec![Some(LayerParams {
                weight: Tensor::from_vec(&[1, 1], vec![w]).unwrap(),
                bias: Tensor::zeros(&[1]),
                weight_origin: Provenance::Init(scheme),
                bias_origin: Provenance::Init(scheme),
            })],
        }
    }

    fn scalar_grads(g: f64) -> Grads {
        let mut grads = scalar_params(g).zeros_like();
        grads.layers[0].as_mut().unwrap().weight.data_mut()[0] = g;
        grads
    }

    fn plain(lr: f64, momentum: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            momentum,
            decay_epochs: vec![],
            ..TrainConfig::new(10, 0)
        }
    }

    #[test]
    fn plain_sgd_step() {
        let mut p = scalar_params(1.0);
        let mut v = p.zeros_like();
        sgd_step(&mut p, &scalar_grads(2.0), &mut v, &plain(0.1, 0.0), 0);
        assert!((p.layers[0].as_ref().unwrap().weight.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_decays_velocity_only() {
        let mut p = scalar_params(1.0);
        let mut v = scalar_grads(0.5);
        sgd_step(&mut p, &scalar_grads(0.0), &mut v, &plain(0.1, 0.9), 0);
        let w = p.layers[0].as_ref().unwrap().weight.data()[0];
        let vel = v.layers[0].as_ref().unwrap().weight.data()[0];
        assert!((vel - 0.45).abs() < 1e-15);
        assert!((w - 1.45).abs() < 1e-15);

        let mut p = scalar_params(1.0);
        let mut v = p.zeros_like();
        sgd_step(&mut p, &scalar_grads(0.0), &mut v, &plain(0.1, 0.9), 0);
        assert_eq!(p.layers[0].as_ref().unwrap().weight.data()[0], 1.0);
    }

    #[test]
    fn momentum_minimizes_quadratic() {
        // f(w) = w^2, gradient 2w.
        let cfg = plain(0.1, 0.9);
        let mut p = scalar_params(1.0);
        let mut v = p.zeros_like();
        for _ in 0..100 {
            let w = p.layers[0].as_ref().unwrap().weight.data()[0];
            sgd_step(&mut p, &scalar_grads(2.0 * w), &mut v, &cfg, 0);
        }
        let w = p.layers[0].as_ref().unwrap().weight.data()[0];
        // Oracle: the recurrence w' = 1.7 w - 0.9 w_prev iterated in Python,
        // frozen. Its roots have modulus sqrt(0.9), so 100 steps only reach
        // |w| ~ 3e-3.
        assert!((w - -0.002851411121182658).abs() < 1e-12, "{w}");
        for _ in 0..200 {
            let w = p.layers[0].as_ref().unwrap().weight.data()[0];
            sgd_step(&mut p, &scalar_grads(2.0 * w), &mut v, &cfg, 0);
        }
        assert!(p.layers[0].as_ref().unwrap().weight.data()[0].abs() < 1e-6);
    }

    #[test]
    fn step_decay_schedule() {
        let cfg = TrainConfig::new(20, 0);
        assert_eq!(cfg.decay_epochs, vec![10, 15]);
        assert!((cfg.lr_at(0) - 0.01).abs() < 1e-18);
        assert!((cfg.lr_at(9) - 0.01).abs() < 1e-18);
        assert!((cfg.lr_at(10) - 0.001).abs() < 1e-18);
        assert!((cfg.lr_at(15) - 0.0001).abs() < 1e-18);
    }

    #[test]
    fn invalid_configs() {
        let base = TrainConfig::new(5, 0);
        for bad in [
            TrainConfig { learning_rate: 0.0, ..base.clone() },
            TrainConfig { momentum: 1.0, ..base.clone() },
            TrainConfig { momentum: -0.1, ..base.clone() },
            TrainConfig { batch_size: 0, ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    fn separable_toy() -> LabeledData {
        // 20 points on a line, class = sign of the first coordinate.
        let mut rng = Rng::new(17);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let class = i % 2;
            let x = if class == 0 { -1.0 } else { 1.0 } * rng.uniform(0.2, 1.0).unwrap();
            data.extend_from_slice(&[x, rng.uniform(-1.0, 1.0).unwrap()]);
            labels.push(class);
        }
        LabeledData::new(Tensor::from_vec(&[20, 2, 1, 1], data).unwrap(), labels, 2).unwrap()
    }

    #[test]
    fn mlp_overfits_separable_toy() {
        let data = separable_toy();
        let spec = NetworkSpec::mlp([2, 1, 1], 8, 2).unwrap();
        let params = init_params(&spec, InitScheme::he(1)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            batch_size: 4,
            decay_epochs: vec![],
            ..TrainConfig::new(50, 3)
        };
        let (trained, history) = train(&spec, params, &data, &cfg).unwrap();
        assert_eq!(history.len(), 50);
        let (_, acc) = evaluate(&spec, &trained, &data).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable_toy();
        let spec = NetworkSpec::mlp([2, 1, 1], 6, 2).unwrap();
        let cfg = TrainConfig::new(5, 42);
        let run = || train(&spec, init_params(&spec, InitScheme::he(9)).unwrap(), &data, &cfg).unwrap();
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(ha, hb);
    }

    #[test]
    fn frozen_features_only_move_head() {
        let data = separable_toy();
        let spec = NetworkSpec::mlp([2, 1, 1], 6, 2).unwrap();
        let params = init_params(&spec, InitScheme::he(9)).unwrap();
        let cfg = TrainConfig {
            freeze_features: true,
            ..TrainConfig::new(3, 1)
        };
        let (trained, _) = train(&spec, params.clone(), &data, &cfg).unwrap();
        assert_eq!(trained.layers[1], params.layers[1]);
        assert_ne!(trained.layers[3], params.layers[3]);
    }

    #[test]
    fn rejects_mismatched_data() {
        let data = separable_toy();
        let spec = NetworkSpec::new(
            [2, 1, 1],
            vec![Layer::Flatten, Layer::dense(2), Layer::SoftmaxCrossEntropy { classes: 2 }],
        )
        .unwrap();
        let other = NetworkSpec::mlp([3, 1, 1], 4, 2).unwrap();
        let p = init_params(&other, InitScheme::he(0)).unwrap();
        assert!(train(&other, p, &data, &TrainConfig::new(1, 0)).is_err());
        let p = init_params(&spec, InitScheme::he(0)).unwrap();
        assert!(train(&spec, p, &data, &TrainConfig::new(1, 0)).is_ok());
    }
}
