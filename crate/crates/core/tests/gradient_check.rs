//! Backpropagation against central finite differences.

mod common;

use common::{random_case, worst_error, Case, TOL};
use deepdof::categorical::ObservationMatrix;
use deepdof::net::{init_network, Architecture, Head};
use deepdof::rng::RngStream;

#[test]
fn random_small_nets_match_finite_differences() {
    for seed in 0..30u64 {
        let case = random_case(seed);
        assert!(case.net.param_count() <= 50);
        let err = worst_error(&case);
        assert!(err <= TOL, "seed {seed}: {:?} worst relative error {err:e}", case.net.architecture());
    }
}

#[test]
fn three_by_three_by_two_net() {
    let arch = Architecture::new(3, vec![3], 2, Head::Reference);
    let net = init_network(&arch, &RngStream::new(42)).unwrap();
    let x = ndarray::array![[0.5, -1.0, 2.0], [1.5, 0.2, -0.3]];
    let obs = ObservationMatrix::new(ndarray::array![[0.9], [0.1]], 2).unwrap();
    let case = Case {
        net,
        x,
        obs,
        weight_decay: 0.0,
        masks: None,
    };
    let err = worst_error(&case);
    assert!(err <= TOL, "worst relative error {err:e}");
}
