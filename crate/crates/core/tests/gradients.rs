mod common;

use common::{worst_over, GRAD_TOL};

fn assert_check(name: &str) {
    let (_, f) = common::CHECKS.iter().find(|(n, _)| *n == name).unwrap();
    let worst = worst_over(*f, 10);
    assert!(worst <= GRAD_TOL, "{name}: relative error {worst:e}");
}

#[test]
fn gcn_layer_gradient() {
    assert_check("gcn_layer");
}

#[test]
fn ba_bound_gradient() {
    assert_check("ba_bound");
}

#[test]
fn categorical_club_gradient() {
    assert_check("club_categorical");
}

#[test]
fn gaussian_club_gradient() {
    assert_check("club_gaussian");
}

#[test]
fn kl_compression_gradient() {
    assert_check("kl_compression");
}

#[test]
fn hsic_linear_gradient() {
    assert_check("hsic_linear");
}

#[test]
fn hsic_rbf_gradient() {
    assert_check("hsic_rbf_fixed");
}

#[test]
fn contrastive_distillation_gradient() {
    assert_check("loss_ckd");
}

#[test]
fn teacher_ib_gradient() {
    assert_check("loss_ibt");
}

#[test]
fn student_ib_gradient() {
    assert_check("loss_ibs");
}

#[test]
fn total_objective_gradient() {
    assert_check("loss_total");
}

