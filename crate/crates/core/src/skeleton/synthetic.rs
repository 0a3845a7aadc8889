//! Procedural humanoid action classes on the 25-joint Kinect layout.
//!
//! A class is a (limb group, phase profile) pair. The limb group fixes which
//! joint chain rotates about which pivot; the phase profile fixes when in the
//! clip the articulation happens. Every clip then gets a random global yaw,
//! translation, speed and amplitude jitter, so the raw camera-frame
//! coordinates of two clips of the same class can point anywhere.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use super::clip::{Dataset, SkeletonClip, Split};
use super::ops::DEFAULT_FRAMES;
use super::topology::{ntu, SkeletonTopology};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::nn::Tensor;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub clips_per_class: usize,
    pub joints: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            class_count: 8,
            clips_per_class: 40,
            joints: 25,
            frames: DEFAULT_FRAMES,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimbGroup {
    RightArmRaise,
    LeftArmRaise,
    BothArmsForward,
    RightLegKick,
    LeftLegKick,
    TorsoBend,
}

pub const LIMB_GROUPS: [LimbGroup; 6] = [
    LimbGroup::RightArmRaise,
    LimbGroup::LeftArmRaise,
    LimbGroup::BothArmsForward,
    LimbGroup::RightLegKick,
    LimbGroup::LeftLegKick,
    LimbGroup::TorsoBend,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseProfile {
    Early,
    Late,
    Double,
}

const PROFILES: [PhaseProfile; 3] = [
    PhaseProfile::Early,
    PhaseProfile::Late,
    PhaseProfile::Double,
];

struct Articulation {
    pivot: usize,
    axis: Vec3,
    /// Sign and magnitude of the full-amplitude rotation, radians.
    angle: f64,
    joints: &'static [usize],
}

use ntu::*;

const RIGHT_ARM: &[usize] = &[
    RIGHT_ELBOW,
    RIGHT_WRIST,
    RIGHT_HAND,
    RIGHT_HAND_TIP,
    RIGHT_THUMB,
];
const LEFT_ARM: &[usize] = &[LEFT_ELBOW, LEFT_WRIST, LEFT_HAND, LEFT_HAND_TIP, LEFT_THUMB];
const RIGHT_LEG: &[usize] = &[RIGHT_KNEE, RIGHT_ANKLE, RIGHT_FOOT];
const LEFT_LEG: &[usize] = &[LEFT_KNEE, LEFT_ANKLE, LEFT_FOOT];
const UPPER_BODY: &[usize] = &[
    SPINE_MID,
    SPINE_SHOULDER,
    NECK,
    HEAD,
    LEFT_SHOULDER,
    LEFT_ELBOW,
    LEFT_WRIST,
    LEFT_HAND,
    LEFT_HAND_TIP,
    LEFT_THUMB,
    RIGHT_SHOULDER,
    RIGHT_ELBOW,
    RIGHT_WRIST,
    RIGHT_HAND,
    RIGHT_HAND_TIP,
    RIGHT_THUMB,
];
const TORSO: &[usize] = &[SPINE_MID, SPINE_SHOULDER, NECK, HEAD];

impl LimbGroup {
    /// Joints whose motion defines the group.
    pub fn joints(self) -> Vec<usize> {
        match self {
            LimbGroup::RightArmRaise => RIGHT_ARM.to_vec(),
            LimbGroup::LeftArmRaise => LEFT_ARM.to_vec(),
            LimbGroup::BothArmsForward => [LEFT_ARM, RIGHT_ARM].concat(),
            LimbGroup::RightLegKick => RIGHT_LEG.to_vec(),
            LimbGroup::LeftLegKick => LEFT_LEG.to_vec(),
            LimbGroup::TorsoBend => TORSO.to_vec(),
        }
    }

    // Body faces +z, +y is up, the body's left is +x.
    fn articulations(self) -> Vec<Articulation> {
        let deg = PI / 180.0;
        let z = [0.0, 0.0, 1.0];
        let x = [1.0, 0.0, 0.0];
        match self {
            LimbGroup::RightArmRaise => vec![Articulation {
                pivot: RIGHT_SHOULDER,
                axis: z,
                angle: -110.0 * deg,
                joints: RIGHT_ARM,
            }],
            LimbGroup::LeftArmRaise => vec![Articulation {
                pivot: LEFT_SHOULDER,
                axis: z,
                angle: 110.0 * deg,
                joints: LEFT_ARM,
            }],
            LimbGroup::BothArmsForward => vec![
                Articulation {
                    pivot: LEFT_SHOULDER,
                    axis: x,
                    angle: -85.0 * deg,
                    joints: LEFT_ARM,
                },
                Articulation {
                    pivot: RIGHT_SHOULDER,
                    axis: x,
                    angle: -85.0 * deg,
                    joints: RIGHT_ARM,
                },
            ],
            LimbGroup::RightLegKick => vec![Articulation {
                pivot: RIGHT_HIP,
                axis: x,
                angle: -65.0 * deg,
                joints: RIGHT_LEG,
            }],
            LimbGroup::LeftLegKick => vec![Articulation {
                pivot: LEFT_HIP,
                axis: x,
                angle: -65.0 * deg,
                joints: LEFT_LEG,
            }],
            LimbGroup::TorsoBend => vec![Articulation {
                pivot: SPINE_BASE,
                axis: x,
                angle: 45.0 * deg,
                joints: UPPER_BODY,
            }],
        }
    }
}

impl PhaseProfile {
    /// Articulation envelope in [0, 1] at normalised time `u`.
    pub fn envelope(self, u: f64) -> f64 {
        match self {
            PhaseProfile::Early => bump(u, 0.3, 0.4),
            PhaseProfile::Late => bump(u, 0.7, 0.4),
            PhaseProfile::Double => bump(u, 0.25, 0.3) + bump(u, 0.75, 0.3),
        }
    }
}

fn bump(u: f64, center: f64, width: f64) -> f64 {
    let d = u - center;
    if d.abs() >= width / 2.0 {
        0.0
    } else {
        (PI * (d + width / 2.0) / width).sin().powi(2)
    }
}

/// Definition of class `k`: six limb groups crossed with three phase
/// profiles, staggered so consecutive classes differ in both; beyond 18
/// classes the amplitude tier grows.
pub fn class_definition(k: usize) -> (LimbGroup, PhaseProfile, f64) {
    let group = LIMB_GROUPS[k % 6];
    let profile = PROFILES[(k + k / 6) % 3];
    let tier = 1.0 + 0.35 * (k / 18) as f64;
    (group, profile, tier)
}

fn rest_pose() -> [Vec3; 25] {
    let mut p = [[0.0; 3]; 25];
    p[SPINE_BASE] = [0.0, 1.00, 0.0];
    p[SPINE_MID] = [0.0, 1.25, 0.0];
    p[SPINE_SHOULDER] = [0.0, 1.45, 0.0];
    p[NECK] = [0.0, 1.55, 0.0];
    p[HEAD] = [0.0, 1.70, 0.0];
    p[LEFT_SHOULDER] = [0.18, 1.42, 0.0];
    p[LEFT_ELBOW] = [0.20, 1.15, 0.0];
    p[LEFT_WRIST] = [0.21, 0.92, 0.0];
    p[LEFT_HAND] = [0.21, 0.85, 0.0];
    p[LEFT_HAND_TIP] = [0.21, 0.78, 0.0];
    p[LEFT_THUMB] = [0.19, 0.83, 0.03];
    p[LEFT_HIP] = [0.10, 0.95, 0.0];
    p[LEFT_KNEE] = [0.10, 0.52, 0.0];
    p[LEFT_ANKLE] = [0.10, 0.10, 0.0];
    p[LEFT_FOOT] = [0.10, 0.05, 0.10];
    for (l, r) in [
        (LEFT_SHOULDER, RIGHT_SHOULDER),
        (LEFT_ELBOW, RIGHT_ELBOW),
        (LEFT_WRIST, RIGHT_WRIST),
        (LEFT_HAND, RIGHT_HAND),
        (LEFT_HAND_TIP, RIGHT_HAND_TIP),
        (LEFT_THUMB, RIGHT_THUMB),
        (LEFT_HIP, RIGHT_HIP),
        (LEFT_KNEE, RIGHT_KNEE),
        (LEFT_ANKLE, RIGHT_ANKLE),
        (LEFT_FOOT, RIGHT_FOOT),
    ] {
        p[r] = [-p[l][0], p[l][1], p[l][2]];
    }
    p
}

/// One clip of class `class`, fully determined by `seed`.
pub fn synthesize_clip(
    topology: &Arc<SkeletonTopology>,
    class: usize,
    frames: usize,
    seed: u64,
) -> Result<SkeletonClip> {
    let mut r = rng::rng(seed);
    let (group, profile, tier) = class_definition(class);
    let yaw = r.random_range(0.0..2.0 * PI);
    let offset = [
        r.random_range(-1.0..1.0),
        r.random_range(-0.1..0.1),
        r.random_range(-1.0..1.0),
    ];
    let speed = r.random_range(0.8..1.2);
    let articulations = group.articulations();
    let amplitude: Vec<f64> = articulations
        .iter()
        .map(|_| tier * r.random_range(0.85..1.15))
        .collect();

    let rest = rest_pose();
    let global = geom::axis_angle([0.0, 1.0, 0.0], yaw);
    let mut data = Vec::with_capacity(frames * 25 * 3);
    for t in 0..frames {
        let u = t as f64 / (frames - 1) as f64;
        let warped = 0.5 + (u - 0.5) * speed;
        let env = profile.envelope(warped);
        let mut pose = rest;
        for (a, amp) in articulations.iter().zip(&amplitude) {
            let rot = geom::axis_angle(a.axis, a.angle * amp * env);
            let pivot = pose[a.pivot];
            for &j in a.joints {
                pose[j] = geom::add(pivot, geom::mat_vec(&rot, geom::sub(pose[j], pivot)));
            }
        }
        for p in pose {
            data.extend_from_slice(&geom::add(geom::mat_vec(&global, p), offset));
        }
    }
    SkeletonClip::new(
        topology.clone(),
        Tensor::new(vec![frames, 25, 3], data)?,
        Some(class),
    )
}

/// Class-major dataset; clip `i` is seeded with `derive_seed(seed, i)`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.class_count < 2 {
        return Err(Error::invalid("synthetic dataset needs at least 2 classes"));
    }
    if spec.joints != 25 {
        return Err(Error::invalid(format!(
            "synthetic generator uses the 25-joint humanoid, got joints = {}",
            spec.joints
        )));
    }
    if spec.frames < 2 {
        return Err(Error::invalid("synthetic clips need at least 2 frames"));
    }
    let topology = Arc::new(SkeletonTopology::ntu25());
    let mut clips = Vec::with_capacity(spec.class_count * spec.clips_per_class);
    for class in 0..spec.class_count {
        for i in 0..spec.clips_per_class {
            let index = (class * spec.clips_per_class + i) as u64;
            clips.push(synthesize_clip(
                &topology,
                class,
                spec.frames,
                rng::derive_seed(spec.seed, index),
            )?);
        }
    }
    Dataset::new(clips, spec.class_count, Split::Train)
}
