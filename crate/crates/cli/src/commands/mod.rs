//! One module per subcommand.

pub mod build_model;
pub mod fit_image;
pub mod register;
pub mod render;
pub mod synth;
pub mod verify;
