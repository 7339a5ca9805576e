mod common;

use common::{hsic_brute_linear, hsic_value, randn, rbf_independence, HSIC_INDEP_LIMIT};
use dibod::hsic::{center, gram, hsic, Bandwidth, KernelSpec};
use dibod::rng::rng_for;
use dibod::tape::Tape;
use dibod::tensor::Tensor;
use dibod::Error;
use proptest::prelude::*;

#[test]
fn linear_hsic_matches_brute_force_trace() {
    for (n, seed) in [(2, 1u64), (3, 2), (7, 3), (3, 4), (7, 5)] {
        let mut rng = rng_for(seed, &[0x7e]);
        let a = randn(n, 3, &mut rng);
        let b = randn(n, 2, &mut rng);
        let got = hsic_value(&a, &b, KernelSpec::Linear);
        let want = hsic_brute_linear(&a, &b);
        assert!((got - want).abs() <= 1e-12, "n={n}: {got} vs {want}");
    }
}

#[test]
fn constant_input_gives_zero() {
    let mut rng = rng_for(9, &[]);
    let a = randn(6, 3, &mut rng);
    let c = Tensor::full(6, 2, 0.7);
    assert!(hsic_value(&a, &c, KernelSpec::Linear).abs() <= 1e-12);
    let fixed = KernelSpec::Rbf {
        bandwidth: Bandwidth::Fixed(1.0),
    };
    assert!(hsic_value(&a, &c, fixed).abs() <= 1e-12);
}

#[test]
fn self_dependence_is_positive() {
    let mut rng = rng_for(10, &[]);
    let a = randn(8, 2, &mut rng);
    assert!(hsic_value(&a, &a, KernelSpec::Linear) > 0.0);
    assert!(hsic_value(&a, &a, KernelSpec::default()) > 0.0);
}

#[test]
fn centering_annihilates_constants() {
    let mut tape = Tape::new();
    let k = tape.constant(Tensor::full(5, 5, 3.25));
    let c = center(&mut tape, k).unwrap();
    assert!(tape.value(c).data().iter().all(|v| v.abs() <= 1e-12));
}

#[test]
fn rbf_diagonal_is_one() {
    let mut rng = rng_for(11, &[]);
    let mut tape = Tape::new();
    let x = tape.constant(randn(9, 4, &mut rng));
    let k = gram(&mut tape, x, KernelSpec::default()).unwrap();
    let v = tape.value(k);
    for i in 0..9 {
        assert_eq!(v.get(i, i), 1.0);
    }
}

#[test]
fn median_bandwidth_rejects_coincident_samples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(4, 2, 1.0));
    assert!(matches!(gram(&mut tape, x, KernelSpec::default()), Err(Error::Domain(_))));
}

#[test]
fn fewer_than_two_samples_is_contract_error() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(1, 2));
    assert!(matches!(hsic(&mut tape, a, a, KernelSpec::Linear), Err(Error::Contract(_))));
}

#[test]
fn independent_normals_have_small_rbf_hsic() {
    let mut small = 0;
    for seed in 1..=5 {
        let (indep, copied) = rbf_independence(seed);
        if indep < HSIC_INDEP_LIMIT {
            small += 1;
        }
        assert!(copied >= 10.0 * indep, "seed {seed}: copied {copied} indep {indep}");
    }
    assert!(small >= 4, "{small}/5 seeds below {HSIC_INDEP_LIMIT}");
}

proptest! {
    #[test]
    fn hsic_is_symmetric(seed in 0u64..10_000, n in 2usize..9) {
        let mut rng = rng_for(seed, &[0x5e]);
        let a = randn(n, 3, &mut rng);
        let b = randn(n, 2, &mut rng);
        for spec in [KernelSpec::Linear, KernelSpec::default()] {
            let ab = hsic_value(&a, &b, spec);
            let ba = hsic_value(&b, &a, spec);
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!(ab >= -1e-12);
        }
    }
}
