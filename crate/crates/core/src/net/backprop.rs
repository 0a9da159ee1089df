use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::network::{sigmoid, softmax_rows, Head, Network};
use crate::categorical::ObservationMatrix;
use crate::error::{Error, Result};

/// Per-layer gradients, same shapes as the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|(w, b)| w.iter().chain(b.iter()).map(|g| g * g).sum::<f64>())
            .sum()
    }
}

/// Soft-target deviance `Σ_i −2 Σ_c p̄_ic ln μ̂_ic` (with `p̄` the observation
/// row extended by `1 − Σp`) plus `weight_decay · Σ‖W‖²`, and its gradient.
///
/// `dropout_masks`, when given, holds one `n × width` multiplicative mask per
/// hidden layer, applied to that layer's sigmoid output.
pub fn loss_and_gradients(
    net: &Network,
    x: ArrayView2<'_, f64>,
    obs: &ObservationMatrix,
    weight_decay: f64,
    dropout_masks: Option<&[Array2<f64>]>,
) -> Result<(f64, Gradients)> {
    net.check_input(x)?;
    if obs.n() != x.nrows() || obs.k() != net.k() {
        return Err(Error::Dimension(format!(
            "{} feature rows / k = {} vs {} observation rows / k = {}",
            x.nrows(),
            net.k(),
            obs.n(),
            obs.k()
        )));
    }
    let depth = net.depth();
    if let Some(masks) = dropout_masks {
        if masks.len() != depth
            || masks
                .iter()
                .zip(&net.layers)
                .any(|(m, l)| m.dim() != (x.nrows(), l.out_dim()))
        {
            return Err(Error::Dimension("dropout masks do not match hidden layers".into()));
        }
    }

    // activations[l] is the input to layer l; sigmoid outputs kept for backprop.
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(depth + 1);
    let mut sig_out: Vec<Array2<f64>> = Vec::with_capacity(depth);
    activations.push(x.to_owned());
    for l in 0..depth {
        let mut h = net.layers[l].affine(activations[l].view());
        h.mapv_inplace(sigmoid);
        if h.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(l));
        }
        let a = match dropout_masks {
            Some(masks) => &h * &masks[l],
            None => h.clone(),
        };
        sig_out.push(h);
        activations.push(a);
    }
    let z = net.layers[depth].affine(activations[depth].view());
    if z.iter().any(|v| !v.is_finite()) {
        return Err(non_finite(depth));
    }

    let full_obs = obs.to_full();
    let (dev, mut delta) = head_loss_and_delta(&z, &full_obs, net.head());

    let mut loss = dev;
    if weight_decay != 0.0 {
        loss += weight_decay * net.weight_sq_norm();
    }
    if !loss.is_finite() {
        return Err(non_finite(depth));
    }

    let mut grads = vec![(Array2::zeros((0, 0)), Array1::zeros(0)); depth + 1];
    for l in (0..=depth).rev() {
        let layer = &net.layers[l];
        let mut gw = delta.t().dot(&activations[l]);
        if weight_decay != 0.0 {
            gw.scaled_add(2.0 * weight_decay, &layer.weights);
        }
        let gb = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut back = delta.dot(&layer.weights);
            if let Some(masks) = dropout_masks {
                back *= &masks[l - 1];
            }
            let h = &sig_out[l - 1];
            ndarray::Zip::from(&mut back)
                .and(h)
                .for_each(|d, &s| *d *= s * (1.0 - s));
            delta = back;
        }
        grads[l] = (gw, gb);
    }
    Ok((loss, Gradients { layers: grads }))
}

fn non_finite(layer: usize) -> Error {
    Error::Training {
        epoch: 0,
        layer,
        reason: "non-finite activations".into(),
    }
}

/// Deviance of the batch and `∂/∂z` of it with respect to head logits.
///
/// With `Σ_c p̄_c = 1` for every row, the gradient is `2(μ̂ − p̄)` restricted
/// to the head's logits.
fn head_loss_and_delta(z: &Array2<f64>, full_obs: &Array2<f64>, head: Head) -> (f64, Array2<f64>) {
    let mu = softmax_rows(z, head);
    let (n, m) = z.dim();
    let mut delta = Array2::zeros((n, m));
    let mut dev = 0.0;
    for i in 0..n {
        // log-softmax computed directly so the loss stays smooth in the logits.
        let zr = z.row(i);
        let mut shift = zr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if head == Head::Reference {
            shift = shift.max(0.0);
        }
        let mut s: f64 = zr.iter().map(|v| (v - shift).exp()).sum();
        if head == Head::Reference {
            s += (-shift).exp();
        }
        let lse = shift + s.ln();
        let k = full_obs.ncols();
        let mut ll = 0.0;
        for c in 0..k {
            let logit = if c < m { zr[c] } else { 0.0 };
            ll += full_obs[[i, c]] * (logit - lse);
        }
        dev -= 2.0 * ll;
        for c in 0..m {
            delta[[i, c]] = 2.0 * (mu[[i, c]] - full_obs[[i, c]]);
        }
    }
    (dev, delta)
}
