//! Ground-truth quadruped generator.

mod animal;
mod dataset;
mod family;
mod model;
mod pose;
mod render;
mod scene;
mod template;

pub use animal::{remesh, sample_animal, AnimalTruth, SynthAnimal, SynthSpec, MAX_NOISE};
pub use dataset::{
    animal_id, animal_seed, read_keypoints3d, write_dataset, DatasetSpec, TruthFile, ViewSpec,
    ViewTruth,
};
pub use family::Family;
pub use model::{family_shapes, ground_truth_model, training_poses};
pub use pose::{sample_pose, walk_cycle, PoseRanges};
pub use render::{framing_translation, place_in_view, render_annotation, view_rotation};
pub use scene::{random_scene, render_params, scene_params, Scene, SceneSpec};
pub use template::*;
#[cfg(test)]
mod tests;
