//! Direction-invariant features: every joint expressed in a per-frame
//! body-local frame.
//!
//! The frame has its origin at the center (spine) joint. `Y` points from the
//! spine to the chest, `X = Y × (right_shoulder − left_shoulder)` and
//! `Z = X × Y`. Because only joint differences enter, the transformed clip is
//! unchanged by any proper rigid motion of the capture coordinates.

use crate::error::{Error, Result};
use crate::geom::{self, Mat3, Vec3};
use crate::nn::Tensor;
use crate::skeleton::{SkeletonClip, SkeletonTopology};

/// Cross-product norms below this are treated as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin: Vec3,
    /// Rows are the X, Y, Z axes.
    pub axes: Mat3,
}

impl LocalFrame {
    pub fn to_local(&self, p: Vec3) -> Vec3 {
        geom::mat_vec(&self.axes, geom::sub(p, self.origin))
    }
}

/// Frame for one pose, or `None` when the landmarks are degenerate.
pub fn try_local_frame(frame: &[f64], topology: &SkeletonTopology) -> Result<Option<LocalFrame>> {
    let joint = |j: usize| -> Vec3 { [frame[3 * j], frame[3 * j + 1], frame[3 * j + 2]] };
    let spine = joint(topology.center());
    let chest = joint(topology.chest());
    let left = joint(topology.left_shoulder());
    let right = joint(topology.right_shoulder());
    if [spine, chest, left, right]
        .iter()
        .flatten()
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("landmark joint".into()));
    }
    let up = geom::sub(chest, spine);
    let up_len = geom::norm(up);
    if up_len < DEGENERATE_EPS {
        return Ok(None);
    }
    let y = geom::scale(up, 1.0 / up_len);
    let x_raw = geom::cross(y, geom::sub(right, left));
    let x_len = geom::norm(x_raw);
    if x_len < DEGENERATE_EPS {
        return Ok(None);
    }
    let x = geom::scale(x_raw, 1.0 / x_len);
    let z = geom::cross(x, y);
    Ok(Some(LocalFrame {
        origin: spine,
        axes: [x, y, z],
    }))
}

/// Frame for a single pose `[V × 3]`; a degenerate pose yields the identity
/// frame at the spine.
pub fn compute_local_frame(
    frame_positions: &Tensor,
    topology: &SkeletonTopology,
) -> Result<LocalFrame> {
    let v = topology.joint_count();
    if frame_positions.shape() != [v, 3] {
        return Err(Error::shape(
            "local frame",
            frame_positions.shape(),
            &[v, 3],
        ));
    }
    let data = frame_positions.data();
    Ok(try_local_frame(data, topology)?.unwrap_or_else(|| identity_at_spine(data, topology)))
}

fn identity_at_spine(frame: &[f64], topology: &SkeletonTopology) -> LocalFrame {
    let c = topology.center();
    LocalFrame {
        origin: [frame[3 * c], frame[3 * c + 1], frame[3 * c + 2]],
        axes: geom::IDENTITY,
    }
}

/// Per-frame local frames; a degenerate frame reuses the previous frame's
/// axes (the origin always follows the spine).
pub fn clip_frames(clip: &SkeletonClip) -> Result<Vec<LocalFrame>> {
    let mut frames: Vec<LocalFrame> = Vec::with_capacity(clip.frames());
    for t in 0..clip.frames() {
        let pose = clip.frame(t);
        let f = match try_local_frame(pose, &clip.topology)? {
            Some(f) => f,
            None => match frames.last() {
                Some(prev) => LocalFrame {
                    origin: identity_at_spine(pose, &clip.topology).origin,
                    axes: prev.axes,
                },
                None => identity_at_spine(pose, &clip.topology),
            },
        };
        frames.push(f);
    }
    Ok(frames)
}

/// `p'_j = axes_t · (p_j − origin_t)` for every frame and joint.
pub fn apply_dif(clip: &SkeletonClip) -> Result<SkeletonClip> {
    let frames = clip_frames(clip)?;
    let v = clip.joints();
    let mut pos = clip.positions().clone();
    let d = pos.data_mut();
    for (t, f) in frames.iter().enumerate() {
        for j in 0..v {
            let o = (t * v + j) * 3;
            let q = f.to_local([d[o], d[o + 1], d[o + 2]]);
            d[o..o + 3].copy_from_slice(&q);
        }
    }
    clip.with_positions(pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::topology::ntu;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn pose_tensor(points: &[(usize, Vec3)]) -> Tensor {
        let mut t = Tensor::zeros(&[25, 3]);
        for &(j, p) in points {
            for k in 0..3 {
                t.set(&[j, k], p[k]);
            }
        }
        t
    }

    #[test]
    fn worked_example() {
        let topo = SkeletonTopology::ntu25();
        let pose = pose_tensor(&[
            (ntu::SPINE_MID, [0.0, 0.0, 0.0]),
            (ntu::SPINE_SHOULDER, [0.0, 1.0, 0.0]),
            (ntu::LEFT_SHOULDER, [0.2, 1.4, 0.0]),
            (ntu::RIGHT_SHOULDER, [-0.2, 1.4, 0.0]),
        ]);
        let f = compute_local_frame(&pose, &topo).unwrap();
        assert_eq!(f.axes, [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]]);
    }

    #[test]
    fn degenerate_first_frame_is_identity_and_later_reuses_previous() {
        let topo = Arc::new(SkeletonTopology::ntu25());
        let good = [
            (ntu::SPINE_MID, [0.0, 0.0, 0.0]),
            (ntu::SPINE_SHOULDER, [0.0, 1.0, 0.0]),
            (ntu::LEFT_SHOULDER, [0.2, 1.4, 0.0]),
            (ntu::RIGHT_SHOULDER, [-0.2, 1.4, 0.0]),
        ];
        let bad = pose_tensor(&[(ntu::SPINE_MID, [0.5, 0.0, 0.0])]);
        let data = [bad.data(), pose_tensor(&good).data(), bad.data()].concat();
        let clip =
            SkeletonClip::new(topo, Tensor::new(vec![3, 25, 3], data).unwrap(), None).unwrap();
        let frames = clip_frames(&clip).unwrap();
        assert_eq!(frames[0].axes, geom::IDENTITY);
        assert_eq!(frames[0].origin, [0.5, 0.0, 0.0]);
        assert_eq!(frames[2].axes, frames[1].axes);
        assert_eq!(frames[2].origin, [0.5, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_input_is_an_error() {
        let topo = SkeletonTopology::ntu25();
        let pose = pose_tensor(&[(ntu::LEFT_SHOULDER, [f64::NAN, 0.0, 0.0])]);
        assert!(compute_local_frame(&pose, &topo).is_err());
    }

    fn random_pose(r: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(
            vec![25, 3],
            (0..75).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn random_rotation(r: &mut ChaCha8Rng) -> Mat3 {
        let axis = [
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        ];
        geom::axis_angle(axis, r.random_range(-3.0..3.0))
    }

    #[test]
    fn axes_transform_covariantly_and_ignore_translation() {
        let topo = SkeletonTopology::ntu25();
        let mut r = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let pose = random_pose(&mut r);
            let rot = random_rotation(&mut r);
            let shift = [
                r.random_range(-5.0..5.0),
                r.random_range(-5.0..5.0),
                r.random_range(-5.0..5.0),
            ];
            let mut moved = pose.clone();
            let mut shifted = pose.clone();
            for j in 0..25 {
                let p = [pose.get(&[j, 0]), pose.get(&[j, 1]), pose.get(&[j, 2])];
                let q = geom::mat_vec(&rot, p);
                for k in 0..3 {
                    moved.set(&[j, k], q[k]);
                    shifted.set(&[j, k], p[k] + shift[k]);
                }
            }
            let f0 = compute_local_frame(&pose, &topo).unwrap();
            let f1 = compute_local_frame(&moved, &topo).unwrap();
            let f2 = compute_local_frame(&shifted, &topo).unwrap();
            // Each axis row a becomes R·a, i.e. axes' = axes·Rᵀ.
            let expect = geom::mat_mul(&f0.axes, &geom::transpose(&rot));
            for i in 0..3 {
                for k in 0..3 {
                    assert!((f1.axes[i][k] - expect[i][k]).abs() < 1e-9);
                    assert!((f2.axes[i][k] - f0.axes[i][k]).abs() < 1e-12);
                    assert!((f2.origin[k] - f0.origin[k] - shift[k]).abs() < 1e-12);
                }
            }
            assert!((geom::det(&f0.axes) - 1.0).abs() < 1e-9);
        }
    }
}
