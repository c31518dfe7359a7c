//! Gaussian-splat radiance fields: projection, compositing, a differentiable
//! tile rasterizer and the optimization loop.

mod backward;
mod gaussian;
mod render;
mod train;
mod volume;

use thiserror::Error;

pub use backward::{rasterize_backward, SceneGradients};
pub use gaussian::{
    appearance_apply, covariance_from_params, logit, project_gaussian, sigmoid, Gaussian2D, Gaussian3D, SplatScene,
    COV_FLOOR_PX2, IDENTITY_APPEARANCE, Z_NEAR,
};
pub use render::{
    rasterize, rasterize_reference, RenderOutput, ALPHA_CAP, MAHALANOBIS_CUTOFF, TILE_SIZE, TRANSMITTANCE_STOP,
};
pub use train::{init_from_points, train, TrainConfig, TrainResult, TrainView};
pub use volume::{
    alpha_from_density, composite_front_to_back, transmittance_exponential, transmittance_product, volume_render_ray,
    Composite, Ray, RaySample,
};

#[derive(Debug, Error, PartialEq)]
pub enum RadianceError {
    #[error("ray direction has zero length")]
    DegenerateRay,
    #[error("invalid sampling range [{near}, {far}] with {samples} samples")]
    InvalidRange { near: f64, far: f64, samples: usize },
    #[error("field returned negative density {sigma} at t = {t}")]
    NegativeDensity { t: f64, sigma: f64 },
    #[error("scene has no gaussians")]
    EmptyScene,
    #[error("appearance gains must be positive (image {0})")]
    NonPositiveGain(usize),
    #[error("appearance id {id} out of range for {count} images")]
    AppearanceOutOfRange { id: usize, count: usize },
    #[error("training needs at least 2 views, got {0}")]
    TooFewViews(usize),
    #[error("view {index} is {got:?} but the camera is {expected:?}")]
    ViewSize { index: usize, got: (usize, usize), expected: (usize, usize) },
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("invalid training option {key} = {value:?}: {reason}")]
    Config { key: String, value: String, reason: String },
}
