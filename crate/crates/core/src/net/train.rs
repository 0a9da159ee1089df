use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backprop::{loss_and_gradients, Gradients};
use super::network::{sigmoid, Network};
use crate::categorical::ObservationMatrix;
use crate::error::{Error, Result};
use crate::rng::{RngStream, Substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Multiplier on `Σ‖W‖²`, added to the per-sample mean deviance.
    pub weight_decay_rate: f64,
    pub dropout_rate: f64,
    pub corruption_rate: f64,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 100,
            batch_size: 20,
            weight_decay_rate: 1e-5,
            dropout_rate: 0.1,
            corruption_rate: 0.1,
            pretrain_epochs: 5,
            pretrain_learning_rate: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.weight_decay_rate >= 0.0 && self.weight_decay_rate.is_finite()) {
            return bad("weight decay rate must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout rate must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.corruption_rate) {
            return bad("corruption rate must lie in [0, 1)");
        }
        if !(self.pretrain_learning_rate > 0.0 && self.pretrain_learning_rate.is_finite()) {
            return bad("pre-training learning rate must be positive");
        }
        Ok(())
    }
}

fn apply_step(net: &mut Network, grads: &Gradients, scale: f64) {
    for (layer, (gw, gb)) in net.layers.iter_mut().zip(&grads.layers) {
        layer.weights.scaled_add(-scale, gw);
        layer.bias.scaled_add(-scale, gb);
    }
}

fn with_epoch(err: Error, epoch: usize) -> Error {
    match err {
        Error::Training { layer, reason, .. } => Error::Training {
            epoch,
            layer,
            reason,
        },
        other => other,
    }
}

/// Minibatch SGD on the soft-target deviance, `config.epochs` passes.
///
/// Each minibatch step minimises `mean_B(err_i) + λ Σ‖W‖²` with a constant
/// learning rate. Minibatch order comes from the `Shuffle` substream only, so
/// runs sharing a seed see identical splits whatever the observations are.
/// Dropout is not used here.
pub fn train(
    net: &Network,
    x: ArrayView2<'_, f64>,
    obs: &ObservationMatrix,
    config: &TrainConfig,
    rng: &RngStream,
) -> Result<Network> {
    config.validate()?;
    net.check_input(x)?;
    if obs.n() != x.nrows() {
        return Err(Error::Dimension(format!(
            "{} feature rows vs {} observation rows",
            x.nrows(),
            obs.n()
        )));
    }
    let mut net = net.clone();
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle = rng.substream(Substream::Shuffle, 0);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let pb = obs.select_rows(batch);
            let m = batch.len() as f64;
            let (loss, grads) =
                loss_and_gradients(&net, xb.view(), &pb, config.weight_decay_rate * m, None)
                    .map_err(|e| with_epoch(e, epoch))?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    layer: net.depth(),
                    reason: "non-finite loss".into(),
                });
            }
            apply_step(&mut net, &grads, config.learning_rate / m);
        }
        if !net.is_finite() {
            return Err(Error::Training {
                epoch,
                layer: net.depth(),
                reason: "non-finite parameters".into(),
            });
        }
    }
    Ok(net)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentOutcome {
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub final_loss: f64,
}

/// Full-batch gradient descent on the summed deviance with step
/// `learning_rate`, stopping once `‖∇‖₂ ≤ tol` or after `max_iter` steps.
pub fn gradient_descent(
    net: &Network,
    x: ArrayView2<'_, f64>,
    obs: &ObservationMatrix,
    learning_rate: f64,
    weight_decay: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(Network, DescentOutcome)> {
    let mut net = net.clone();
    let mut iterations = 0;
    loop {
        let (loss, grads) =
            loss_and_gradients(&net, x, obs, weight_decay, None).map_err(|e| with_epoch(e, iterations))?;
        let grad_norm = grads.sq_norm().sqrt();
        if grad_norm <= tol || iterations == max_iter {
            return Ok((
                net,
                DescentOutcome {
                    iterations,
                    grad_norm,
                    converged: grad_norm <= tol,
                    final_loss: loss,
                },
            ));
        }
        apply_step(&mut net, &grads, learning_rate);
        iterations += 1;
    }
}

/// Reconstruction loss used by a denoising autoencoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reconstruction {
    /// Sigmoid decoder, cross-entropy; inputs in `[0, 1]`.
    CrossEntropy,
    /// Linear decoder, half squared error.
    Squared,
}

/// Layer-wise stacked denoising-autoencoder pre-training.
///
/// For hidden layer `l` the (clean) output of layers `< l` is corrupted by
/// zeroing entries with probability `corruption_rate`, encoded by layer `l`,
/// its sigmoid outputs dropped with probability `dropout_rate` (inverted
/// scaling by `1/(1−rate)`), and decoded with tied weights `Wᵀ` plus a private
/// decoder bias. The head layer is left untouched.
///
/// Masks come from the `Corruption` and `Dropout` substreams and minibatch
/// order from `Shuffle`, each at index `l + 1`; fine-tuning uses index 0.
pub fn pretrain_sda(
    net: &Network,
    x: ArrayView2<'_, f64>,
    config: &TrainConfig,
    rng: &RngStream,
) -> Result<Network> {
    config.validate()?;
    net.check_input(x)?;
    if net.depth() == 0 {
        return Err(Error::Config("pre-training needs at least one hidden layer".into()));
    }
    let mut net = net.clone();
    if config.pretrain_epochs == 0 {
        return Ok(net);
    }
    for l in 0..net.depth() {
        let input = net.hidden_representation(x, l)?;
        let recon = if input.iter().all(|v| (0.0..=1.0).contains(v)) {
            Reconstruction::CrossEntropy
        } else {
            Reconstruction::Squared
        };
        let stream = l as u32 + 1;
        let mut shuffle = rng.substream(Substream::Shuffle, stream);
        let mut corrupt = rng.substream(Substream::Corruption, stream);
        let mut drop = rng.substream(Substream::Dropout, stream);
        let mut decoder_bias = Array1::<f64>::zeros(input.ncols());
        let mut order: Vec<usize> = (0..input.nrows()).collect();
        for epoch in 0..config.pretrain_epochs {
            order.shuffle(&mut shuffle);
            for batch in order.chunks(config.batch_size) {
                let clean = input.select(Axis(0), batch);
                let corrupted = if config.corruption_rate > 0.0 {
                    let keep = mask(&mut corrupt, clean.dim(), config.corruption_rate, 1.0);
                    &clean * &keep
                } else {
                    clean.clone()
                };
                let dropout = (config.dropout_rate > 0.0).then(|| {
                    let scale = 1.0 / (1.0 - config.dropout_rate);
                    mask(
                        &mut drop,
                        (batch.len(), net.layers[l].out_dim()),
                        config.dropout_rate,
                        scale,
                    )
                });
                let layer = &mut net.layers[l];
                denoising_step(
                    layer,
                    &mut decoder_bias,
                    &clean,
                    &corrupted,
                    dropout.as_ref(),
                    recon,
                    config,
                )
                .map_err(|reason| Error::Training {
                    epoch,
                    layer: l,
                    reason,
                })?;
            }
        }
    }
    Ok(net)
}

/// Bernoulli keep-mask: 0 with probability `rate`, otherwise `scale`.
fn mask(rng: &mut ChaCha8Rng, dim: (usize, usize), rate: f64, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn(dim, |_| if rng.random::<f64>() < rate { 0.0 } else { scale })
}

fn denoising_step(
    layer: &mut super::network::Layer,
    decoder_bias: &mut Array1<f64>,
    clean: &Array2<f64>,
    corrupted: &Array2<f64>,
    dropout: Option<&Array2<f64>>,
    recon: Reconstruction,
    config: &TrainConfig,
) -> std::result::Result<(), String> {
    let m = clean.nrows() as f64;
    let mut h = layer.affine(corrupted.view());
    h.mapv_inplace(sigmoid);
    let h_drop = match dropout {
        Some(d) => &h * d,
        None => h.clone(),
    };
    let mut z = h_drop.dot(&layer.weights);
    z += &*decoder_bias;
    if recon == Reconstruction::CrossEntropy {
        z.mapv_inplace(sigmoid);
    }
    // Both losses have d(loss)/d(pre-activation) = x̂ − x.
    let dz = &z - clean;
    if dz.iter().any(|v| !v.is_finite()) {
        return Err("non-finite reconstruction".into());
    }
    let mut dh = dz.dot(&layer.weights.t());
    if let Some(d) = dropout {
        dh *= d;
    }
    ndarray::Zip::from(&mut dh)
        .and(&h)
        .for_each(|g, &s| *g *= s * (1.0 - s));

    let mut gw = h_drop.t().dot(&dz);
    gw += &dh.t().dot(corrupted);
    let gb = dh.sum_axis(Axis(0));
    let gc = dz.sum_axis(Axis(0));

    let lr = config.pretrain_learning_rate;
    if config.weight_decay_rate != 0.0 {
        layer.weights *= 1.0 - lr * 2.0 * config.weight_decay_rate;
    }
    layer.weights.scaled_add(-lr / m, &gw);
    layer.bias.scaled_add(-lr / m, &gb);
    decoder_bias.scaled_add(-lr / m, &gc);
    if layer.weights.iter().any(|v| !v.is_finite()) {
        return Err("non-finite encoder weights".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::categorical::encode_observations;
    use crate::net::network::{init_network, Architecture, Head};
    use ndarray::array;

    fn toy() -> (Array2<f64>, ObservationMatrix) {
        let x = array![[0.0, 0.1], [1.0, 0.9], [0.2, -0.3], [0.8, 1.2], [0.4, 0.5], [1.5, 0.2]];
        let obs = encode_observations(&[1, 2, 1, 2, 1, 2], 2).unwrap();
        (x, obs)
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (x, obs) = toy();
        let net = init_network(&Architecture::new(2, vec![3], 2, Head::Full), &RngStream::new(1)).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(train(&net, x.view(), &obs, &cfg, &RngStream::new(1)).unwrap(), net);
    }

    #[test]
    fn training_is_deterministic() {
        let (x, obs) = toy();
        let net = init_network(&Architecture::new(2, vec![3], 2, Head::Full), &RngStream::new(1)).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let a = train(&net, x.view(), &obs, &cfg, &RngStream::new(9)).unwrap();
        let b = train(&net, x.view(), &obs, &cfg, &RngStream::new(9)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, net);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let (x, obs) = toy();
        let x = x * 1e6;
        let net = init_network(&Architecture::new(2, vec![3], 2, Head::Full), &RngStream::new(1)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&net, x.view(), &obs, &cfg, &RngStream::new(1)),
            Err(Error::Training { .. })
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { dropout_rate: 1.0, ..TrainConfig::default() },
            TrainConfig { corruption_rate: -0.1, ..TrainConfig::default() },
            TrainConfig { weight_decay_rate: -1.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn full_batch_loss_is_non_increasing_with_small_steps() {
        let (x, obs) = toy();
        let mut net =
            init_network(&Architecture::new(2, vec![4], 2, Head::Full), &RngStream::new(3)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 1,
            batch_size: x.nrows(),
            weight_decay_rate: 0.0,
            ..TrainConfig::default()
        };
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let (loss, _) = loss_and_gradients(&net, x.view(), &obs, 0.0, None).unwrap();
            assert!(loss <= last + 1e-12, "{loss} > {last}");
            last = loss;
            net = train(&net, x.view(), &obs, &cfg, &RngStream::new(3)).unwrap();
        }
    }

    #[test]
    fn pretraining_no_op_and_determinism() {
        let (x, _) = toy();
        let net = init_network(&Architecture::new(2, vec![3, 2], 2, Head::Full), &RngStream::new(1)).unwrap();
        let off = TrainConfig {
            corruption_rate: 0.0,
            dropout_rate: 0.0,
            pretrain_epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(pretrain_sda(&net, x.view(), &off, &RngStream::new(4)).unwrap(), net);

        let on = TrainConfig {
            corruption_rate: 0.3,
            dropout_rate: 0.2,
            pretrain_epochs: 10,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let a = pretrain_sda(&net, x.view(), &on, &RngStream::new(4)).unwrap();
        let b = pretrain_sda(&net, x.view(), &on, &RngStream::new(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.layers[0], net.layers[0]);
        assert_ne!(a.layers[1], net.layers[1]);
        assert_eq!(a.layers[2], net.layers[2], "head must be untouched");
    }

    #[test]
    fn pretraining_requires_hidden_layer() {
        let (x, _) = toy();
        let net = Network::zeros(&Architecture::new(2, vec![], 2, Head::Reference)).unwrap();
        assert!(matches!(
            pretrain_sda(&net, x.view(), &TrainConfig::default(), &RngStream::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gradient_descent_converges_on_toy_logistic_problem() {
        let x = array![[0.0], [1.0], [2.0], [3.0], [1.5], [0.5]];
        let obs = encode_observations(&[1, 1, 2, 2, 1, 2], 2).unwrap();
        let net = Network::zeros(&Architecture::new(1, vec![], 2, Head::Reference)).unwrap();
        let (_, out) = gradient_descent(&net, x.view(), &obs, 0.5 / 6.0, 0.0, 50_000, 1e-8).unwrap();
        assert!(out.converged, "{out:?}");
    }
}
