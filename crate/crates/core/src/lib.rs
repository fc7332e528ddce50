//! Multivariate Gaussian random fields on S¹ and S² with symmetric and
//! rotation-induced asymmetric matrix-valued covariances.

pub mod asym;
pub mod error;
pub mod estimate;
pub mod experiments;
pub mod gegenbauer;
pub mod geom;
pub mod io;
pub mod linalg;
pub mod models;
pub mod optimize;
pub mod predict;
pub mod simulate;

pub use asym::{build_block_cov, AsymmetricCovariance, AsymmetrySpec, BlockCovariance};
pub use error::{Error, Result};
pub use estimate::{
    auto_init, cl_objective, fit, CompositeLikelihood, FitOptions, FitResult, Init,
    ParameterVector, Variant,
};
pub use geom::{geodesic_distance, paper_grid, RotationMatrix, SphereDim, SpherePoint};
pub use models::{Family, Preset, RadialModelSpec, ValidationReport};
pub use predict::{cokrige, drop_one_cv, CvScores, PredictionResult};
pub use simulate::{simulate_field, FieldSimulator, ObservationSet};
