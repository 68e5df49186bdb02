mod common;

use common::{discriminator_check, generator_check, regressor_check, TOLERANCE};

#[test]
fn regressor_matches_finite_differences() {
    let worst = regressor_check();
    assert!(worst < TOLERANCE, "worst relative error {worst}");
}

#[test]
fn discriminator_loss_matches_finite_differences() {
    let worst = discriminator_check();
    assert!(worst < TOLERANCE, "worst relative error {worst}");
}

#[test]
fn generator_loss_matches_finite_differences() {
    let worst = generator_check();
    assert!(worst < TOLERANCE, "worst relative error {worst}");
}
