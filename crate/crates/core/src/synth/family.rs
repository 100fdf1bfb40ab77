//! Named animal families with distinct body proportions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::template::Recipe;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Feline,
    Canine,
    Equine,
    Bovine,
    Hippo,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Feline,
        Family::Canine,
        Family::Equine,
        Family::Bovine,
        Family::Hippo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Feline => "feline",
            Family::Canine => "canine",
            Family::Equine => "equine",
            Family::Bovine => "bovine",
            Family::Hippo => "hippo",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown family `{name}`")))
    }

    /// Typical proportions of the family.
    pub fn mean_recipe(self) -> Recipe {
        let [torso_length, torso_girth, leg_length, leg_width, neck_length, head_scale, tail_length, ear_size] =
            match self {
                Family::Feline => [1.0, 0.9, 0.5, 0.04, 0.2, 0.95, 0.85, 0.07],
                Family::Canine => [1.0, 1.0, 0.6, 0.045, 0.3, 1.05, 0.55, 0.1],
                Family::Equine => [1.25, 1.15, 0.85, 0.05, 0.5, 1.25, 0.5, 0.09],
                Family::Bovine => [1.3, 1.4, 0.6, 0.065, 0.3, 1.3, 0.6, 0.09],
                Family::Hippo => [1.35, 1.7, 0.35, 0.08, 0.18, 1.45, 0.25, 0.05],
            };
        Recipe {
            torso_length,
            torso_girth,
            leg_length,
            leg_width,
            neck_length,
            head_scale,
            tail_length,
            ear_size,
        }
    }

    /// Family mean with every dimension scaled by an independent uniform
    /// factor in `[1 - spread, 1 + spread]`.
    pub fn sample_recipe(self, rng: &mut impl Rng, spread: f64) -> Recipe {
        let m = self.mean_recipe();
        let mut f = |v: f64| {
            if spread > 0.0 {
                v * (1.0 + rng.random_range(-spread..=spread))
            } else {
                v
            }
        };
        Recipe {
            torso_length: f(m.torso_length),
            torso_girth: f(m.torso_girth),
            leg_length: f(m.leg_length),
            leg_width: f(m.leg_width).min(0.09),
            neck_length: f(m.neck_length),
            head_scale: f(m.head_scale),
            tail_length: f(m.tail_length),
            ear_size: f(m.ear_size),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
