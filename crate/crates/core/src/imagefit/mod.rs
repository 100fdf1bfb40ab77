//! Fitting the articulated model to 2D keypoints and a silhouette.

mod annotation;
mod camera;
mod edt;
mod energy;
mod fit;
mod keypoints;
mod raster;
#[cfg(test)]
mod tests;

pub use annotation::{load_annotation, read_mask, save_annotation, write_mask, Annotation};
pub use camera::{project, Camera, Vec2};
pub use edt::{distance_transform, squared_distance_transform, DistanceField};
pub use energy::{
    e_kp, e_lim, e_silh, projection_backward, reference_scale, silhouette_energy, EdgeFaces,
    FitParams, ImageObservation, Keypoint2, KeypointTargets, SilhouetteParts, SilhouetteTarget,
    REFERENCE_SIZE,
};
pub use fit::{
    default_focal, fit_image, fit_image_from, fitted_shape_dim, image_energy, EnergyTerms,
    ImageFit, ImageFitConfig, ImageFitWeights, StageReport, MIN_KEYPOINTS, MIN_TORSO_KEYPOINTS,
};
pub use keypoints::KeypointVertexMap;
pub use raster::{
    rasterize, render_silhouette, vertex_visibility, DepthBuffer, Mask, VISIBILITY_TOLERANCE,
};
