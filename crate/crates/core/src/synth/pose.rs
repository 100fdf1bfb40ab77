//! Random poses and a walk cycle for the template skeleton.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::template::*;

/// Half-widths of the uniform pose sampler, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseRanges {
    pub root_yaw: f64,
    pub leg_flexion: f64,
    pub spine: f64,
    pub tail: f64,
    pub neck_head: f64,
}

impl Default for PoseRanges {
    fn default() -> Self {
        Self {
            root_yaw: 0.3,
            leg_flexion: 0.5,
            spine: 0.12,
            tail: 0.4,
            neck_head: 0.25,
        }
    }
}

impl PoseRanges {
    /// Ranges scaled by `f`.
    pub fn scaled(&self, f: f64) -> Self {
        Self {
            root_yaw: self.root_yaw * f,
            leg_flexion: self.leg_flexion * f,
            spine: self.spine * f,
            tail: self.tail * f,
            neck_head: self.neck_head * f,
        }
    }
}

fn set(theta: &mut [f64], part: usize, r: [f64; 3]) {
    theta[3 * part..3 * part + 3].copy_from_slice(&r);
}

/// Uniform random pose for the template skeleton (3 entries per part).
pub fn sample_pose(rng: &mut impl Rng, ranges: &PoseRanges) -> Vec<f64> {
    let mut theta = vec![0.0; 3 * PART_COUNT];
    let mut u = |h: f64| {
        if h > 0.0 {
            rng.random_range(-h..=h)
        } else {
            0.0
        }
    };
    set(&mut theta, PELVIS, [0.0, u(ranges.root_yaw), 0.0]);
    for &p in TORSO.iter().filter(|&&p| p != PELVIS) {
        set(
            &mut theta,
            p,
            [u(ranges.spine), u(ranges.spine), u(ranges.spine)],
        );
    }
    for p in [NECK, HEAD] {
        set(
            &mut theta,
            p,
            [
                u(ranges.neck_head),
                u(ranges.neck_head),
                u(ranges.neck_head),
            ],
        );
    }
    for p in 14..=25 {
        let lateral = 0.1 * ranges.leg_flexion;
        set(
            &mut theta,
            p,
            [u(ranges.leg_flexion), u(lateral), u(lateral)],
        );
    }
    for p in TAIL_BASE..TAIL_BASE + TAIL_SECTIONS {
        set(&mut theta, p, [u(ranges.tail), u(ranges.tail), 0.0]);
    }
    theta
}

/// Pose at `phase` (in cycles) of a diagonal-gait walk.
pub fn walk_cycle(phase: f64) -> Vec<f64> {
    let w = std::f64::consts::TAU * phase;
    let mut theta = vec![0.0; 3 * PART_COUNT];
    // Diagonal pairs swing together.
    let legs = [(14, 0.0), (23, 0.0), (17, 0.5), (20, 0.5)];
    for (upper, offset) in legs {
        let a = w + std::f64::consts::TAU * offset;
        let swing = 0.35 * a.sin();
        let knee = 0.3 * (0.5 - 0.5 * a.cos());
        let knee = if upper >= 20 { -knee } else { knee };
        set(&mut theta, upper, [swing, 0.0, 0.0]);
        set(&mut theta, upper + 1, [knee, 0.0, 0.0]);
        set(&mut theta, upper + 2, [-0.5 * swing, 0.0, 0.0]);
    }
    set(&mut theta, NECK, [0.05 * (2.0 * w).sin(), 0.0, 0.0]);
    for p in TORSO.iter().filter(|&&p| p != PELVIS) {
        set(&mut theta, *p, [0.0, 0.02 * w.sin(), 0.0]);
    }
    for (i, p) in (TAIL_BASE..TAIL_BASE + TAIL_SECTIONS).enumerate() {
        set(&mut theta, p, [0.0, 0.08 * (w - 0.4 * i as f64).sin(), 0.0]);
    }
    theta
}
