//! Shared fixtures for the benchmarks.

use std::f64::consts::FRAC_PI_2;

use spherecov::{
    paper_grid, AsymmetricCovariance, AsymmetrySpec, FieldSimulator, ObservationSet, Preset,
    SphereDim, SpherePoint,
};

/// Bivariate asymmetric model with the reference scales used throughout the test suite.
pub fn reference_model(preset: Preset) -> AsymmetricCovariance {
    let spec = preset.bivariate([1.0, 1.0], 0.5, 0.1, 0.2, false);
    let asym = AsymmetrySpec::new(0.6, FRAC_PI_2, FRAC_PI_2);
    AsymmetricCovariance::new(spec, Some(asym), SphereDim::Sphere)
        .expect("reference model is valid")
}

pub fn grid(n_per_axis: usize) -> Vec<SpherePoint> {
    paper_grid(n_per_axis, true).expect("grid size is positive")
}

/// One simulated field on an `n_per_axis`² grid, both variables at every site.
pub fn dataset(model: &AsymmetricCovariance, n_per_axis: usize) -> ObservationSet {
    FieldSimulator::new(model, &grid(n_per_axis), 1e-10)
        .expect("simulation succeeds")
        .draw(1, 0)
}
