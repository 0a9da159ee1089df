//! Random toy networks and a central-difference gradient check.

use deepdof::categorical::ObservationMatrix;
use deepdof::net::{init_network, loss_and_gradients, Architecture, Head, Network};
use deepdof::rng::RngStream;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const TOL: f64 = 1e-6;

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

pub struct Case {
    pub net: Network,
    pub x: Array2<f64>,
    pub obs: ObservationMatrix,
    pub weight_decay: f64,
    pub masks: Option<Vec<Array2<f64>>>,
}

pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (arch, net) = loop {
        let input = rng.random_range(1..=4);
        let depth = rng.random_range(0..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=4)).collect();
        let k = rng.random_range(2..=4);
        let head = if rng.random::<bool>() { Head::Full } else { Head::Reference };
        let arch = Architecture::new(input, hidden, k, head);
        if arch.param_count() <= 50 {
            let net = init_network(&arch, &RngStream::new(seed)).unwrap();
            break (arch, net);
        }
    };
    let mut net = net;
    for layer in net.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let n = rng.random_range(1..=4);
    let x = Array2::from_shape_fn((n, arch.input_dim), |_| rng.random_range(-2.0..2.0));
    // Soft rows, slightly off the simplex as perturbed observations are.
    let obs = Array2::from_shape_fn((n, arch.k - 1), |_| rng.random_range(-0.1..0.6));
    let obs = ObservationMatrix::new(obs, arch.k).unwrap();
    let weight_decay = if rng.random::<bool>() { 0.0 } else { 0.05 };
    let masks = if arch.hidden.is_empty() || rng.random::<bool>() {
        None
    } else {
        Some(
            arch.hidden
                .iter()
                .map(|&w| Array2::from_shape_fn((n, w), |_| if rng.random::<f64>() < 0.3 { 0.0 } else { 1.0 / 0.7 }))
                .collect(),
        )
    };
    Case {
        net,
        x,
        obs,
        weight_decay,
        masks,
    }
}

fn loss(case: &Case, net: &Network) -> f64 {
    loss_and_gradients(net, case.x.view(), &case.obs, case.weight_decay, case.masks.as_deref())
        .unwrap()
        .0
}

/// Largest per-entry relative error between backprop and central differences.
pub fn worst_error(case: &Case) -> f64 {
    let (_, grads) =
        loss_and_gradients(&case.net, case.x.view(), &case.obs, case.weight_decay, case.masks.as_deref()).unwrap();
    let mut worst: f64 = 0.0;
    for (l, (gw, gb)) in grads.layers.iter().enumerate() {
        for ((r, c), &analytic) in gw.indexed_iter() {
            let mut plus = case.net.clone();
            plus.layers_mut()[l].weights[[r, c]] += STEP;
            let mut minus = case.net.clone();
            minus.layers_mut()[l].weights[[r, c]] -= STEP;
            let numeric = (loss(case, &plus) - loss(case, &minus)) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic, numeric));
        }
        for (j, &analytic) in gb.indexed_iter() {
            let mut plus = case.net.clone();
            plus.layers_mut()[l].bias[j] += STEP;
            let mut minus = case.net.clone();
            minus.layers_mut()[l].bias[j] -= STEP;
            let numeric = (loss(case, &plus) - loss(case, &minus)) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    worst
}

