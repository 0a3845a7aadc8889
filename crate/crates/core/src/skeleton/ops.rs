use rand::RngExt;
use rand_distr::{Distribution, Normal};

use super::clip::SkeletonClip;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng;

pub const DEFAULT_FRAMES: usize = 100;

/// Linear resampling to `target` frames. Output frame `t` samples source time
/// `t·(T−1)/(target−1)`, so both endpoints are preserved exactly.
pub fn resample_uniform(clip: &SkeletonClip, target: usize) -> Result<SkeletonClip> {
    let t_src = clip.frames();
    if t_src < 2 || target < 2 {
        return Err(Error::invalid(format!(
            "resampling needs at least 2 frames (source {t_src}, target {target})"
        )));
    }
    let stride = clip.joints() * 3;
    let src = clip.positions().data();
    let mut out = Vec::with_capacity(target * stride);
    let scale = (t_src - 1) as f64;
    let denom = (target - 1) as f64;
    for t in 0..target {
        let s = t as f64 * scale / denom;
        let i0 = (s.floor() as usize).min(t_src - 1);
        let frac = s - i0 as f64;
        let a = &src[i0 * stride..(i0 + 1) * stride];
        if frac == 0.0 || i0 + 1 >= t_src {
            out.extend_from_slice(a);
        } else {
            let b = &src[(i0 + 1) * stride..(i0 + 2) * stride];
            out.extend(a.iter().zip(b).map(|(&x, &y)| x + (y - x) * frac));
        }
    }
    clip.with_positions(Tensor::new(vec![target, clip.joints(), 3], out)?)
}

/// Adds i.i.d. `N(0, sigma²)` to every coordinate.
pub fn add_gaussian_noise(clip: &SkeletonClip, sigma: f64, seed: u64) -> Result<SkeletonClip> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "noise sigma must be ≥ 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(clip.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut r = rng::rng(seed);
    let mut noisy = clip.positions().clone();
    for x in noisy.data_mut() {
        *x += normal.sample(&mut r);
    }
    clip.with_positions(noisy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Yaw range in degrees: rotation drawn from `[-max_yaw_deg, max_yaw_deg]`.
    pub max_yaw_deg: f64,
    /// Per-axis translation range in meters.
    pub max_translation: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            max_yaw_deg: 30.0,
            max_translation: 0.5,
        }
    }
}

/// The rigid motion applied by [`augment_translate_rotate`] to frames
/// `start..end`: `p' = R_y(yaw)·(p − pivot) + pivot + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentLog {
    pub start: usize,
    pub end: usize,
    pub yaw: f64,
    pub pivot: [f64; 3],
    pub translation: [f64; 3],
}

impl AugmentLog {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = rotate_y(sub(p, self.pivot), self.yaw);
        [
            r[0] + self.pivot[0] + self.translation[0],
            r[1] + self.pivot[1] + self.translation[1],
            r[2] + self.pivot[2] + self.translation[2],
        ]
    }

    pub fn invert(&self, p: [f64; 3]) -> [f64; 3] {
        let q = sub(sub(p, self.translation), self.pivot);
        let r = rotate_y(q, -self.yaw);
        [
            r[0] + self.pivot[0],
            r[1] + self.pivot[1],
            r[2] + self.pivot[2],
        ]
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Rotation about the vertical (y) axis.
pub fn rotate_y(p: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]]
}

/// Rigidly moves a random contiguous fragment: a random yaw about the
/// vertical axis through the fragment's first-frame center joint, then a
/// random translation.
pub fn augment_translate_rotate(
    clip: &SkeletonClip,
    seed: u64,
    params: AugmentParams,
) -> Result<(SkeletonClip, AugmentLog)> {
    let mut r = rng::rng(seed);
    let t_len = clip.frames();
    let start = r.random_range(0..t_len);
    let end = r.random_range(start + 1..=t_len);
    let yaw = if params.max_yaw_deg > 0.0 {
        r.random_range(-params.max_yaw_deg..=params.max_yaw_deg)
            .to_radians()
    } else {
        0.0
    };
    let mut translation = [0.0; 3];
    if params.max_translation > 0.0 {
        for t in &mut translation {
            *t = r.random_range(-params.max_translation..=params.max_translation);
        }
    }
    let log = AugmentLog {
        start,
        end,
        yaw,
        pivot: clip.joint(start, clip.topology.center()),
        translation,
    };
    if yaw == 0.0 && translation == [0.0; 3] {
        return Ok((clip.clone(), log));
    }
    let v = clip.joints();
    let mut pos = clip.positions().clone();
    let d = pos.data_mut();
    for t in start..end {
        for j in 0..v {
            let o = (t * v + j) * 3;
            let q = log.apply([d[o], d[o + 1], d[o + 2]]);
            d[o..o + 3].copy_from_slice(&q);
        }
    }
    Ok((clip.with_positions(pos)?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::SkeletonTopology;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn ramp_clip(t_len: usize) -> SkeletonClip {
        let topo = Arc::new(SkeletonTopology::ntu25());
        let mut data = Vec::new();
        for t in 0..t_len {
            for j in 0..25 {
                data.extend_from_slice(&[
                    t as f64 * 0.1 + j as f64,
                    2.0 * t as f64 - 1.0,
                    -(t as f64) / 7.0 + 0.5 * j as f64,
                ]);
            }
        }
        SkeletonClip::new(
            topo,
            Tensor::new(vec![t_len, 25, 3], data).unwrap(),
            Some(0),
        )
        .unwrap()
    }

    fn random_clip(seed: u64, t_len: usize) -> SkeletonClip {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..t_len * 75).map(|_| r.random_range(-1.0..1.0)).collect();
        SkeletonClip::new(
            Arc::new(SkeletonTopology::ntu25()),
            Tensor::new(vec![t_len, 25, 3], data).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn resample_two_frames_to_three() {
        let mut clip = ramp_clip(2);
        let mut pos = clip.positions().clone();
        for j in 0..25 {
            pos.set(&[0, j, 0], 0.0);
            pos.set(&[1, j, 0], 1.0);
        }
        clip = clip.with_positions(pos).unwrap();
        let r = resample_uniform(&clip, 3).unwrap();
        assert_eq!(
            [r.joint(0, 0)[0], r.joint(1, 0)[0], r.joint(2, 0)[0]],
            [0.0, 0.5, 1.0]
        );
    }

    #[test]
    fn resample_ramp_matches_closed_form() {
        let clip = ramp_clip(50);
        let r = resample_uniform(&clip, 100).unwrap();
        assert_eq!(r.frames(), 100);
        for t in 0..100 {
            let s = t as f64 * 49.0 / 99.0;
            for j in 0..25 {
                let expect = [s * 0.1 + j as f64, 2.0 * s - 1.0, -s / 7.0 + 0.5 * j as f64];
                let got = r.joint(t, j);
                for k in 0..3 {
                    assert!((got[k] - expect[k]).abs() < 1e-12);
                }
            }
        }
        assert_eq!(r.frame(0), clip.frame(0));
        assert_eq!(r.frame(99), clip.frame(49));
    }

    #[test]
    fn resample_constant_and_identity() {
        let clip = random_clip(1, 2);
        let still = clip
            .with_positions({
                let f = clip.frame(0).to_vec();
                Tensor::new(vec![2, 25, 3], [f.clone(), f].concat()).unwrap()
            })
            .unwrap();
        let r = resample_uniform(&still, 17).unwrap();
        for t in 0..17 {
            assert_eq!(r.frame(t), still.frame(0));
        }
        let c = random_clip(2, 100);
        assert_eq!(resample_uniform(&c, 100).unwrap(), c);
    }

    #[test]
    fn noise_contract() {
        let c = random_clip(3, 10);
        assert_eq!(add_gaussian_noise(&c, 0.0, 1).unwrap(), c);
        assert_eq!(
            add_gaussian_noise(&c, 0.1, 9).unwrap(),
            add_gaussian_noise(&c, 0.1, 9).unwrap()
        );
        assert!(add_gaussian_noise(&c, -0.1, 9).is_err());
    }

    #[test]
    fn noise_sample_std() {
        // 1334 frames × 75 coordinates ≈ 1.0e5 samples; std of the sample
        // std is σ/√(2n) ≈ 1.1e-4, so [0.049, 0.051] is a ±9σ window.
        let zeros = SkeletonClip::new(
            Arc::new(SkeletonTopology::ntu25()),
            Tensor::zeros(&[1334, 25, 3]),
            None,
        )
        .unwrap();
        let noisy = add_gaussian_noise(&zeros, 0.05, 42).unwrap();
        let d = noisy.positions().data();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.049..=0.051).contains(&std), "{std}");
    }

    #[test]
    fn augment_zero_ranges_is_identity() {
        let c = random_clip(4, 12);
        let (a, _) = augment_translate_rotate(
            &c,
            3,
            AugmentParams {
                max_yaw_deg: 0.0,
                max_translation: 0.0,
            },
        )
        .unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn augment_is_rigid_and_invertible() {
        for seed in 0..20 {
            let c = random_clip(100 + seed, 15);
            let (a, log) = augment_translate_rotate(&c, seed, AugmentParams::default()).unwrap();
            for t in 0..c.frames() {
                for i in 0..25 {
                    for j in i + 1..25 {
                        let d0 = dist(c.joint(t, i), c.joint(t, j));
                        let d1 = dist(a.joint(t, i), a.joint(t, j));
                        assert!((d0 - d1).abs() < 1e-9);
                    }
                }
            }
            for t in 0..c.frames() {
                for j in 0..25 {
                    let back = if (log.start..log.end).contains(&t) {
                        log.invert(a.joint(t, j))
                    } else {
                        a.joint(t, j)
                    };
                    let orig = c.joint(t, j);
                    for k in 0..3 {
                        assert!((back[k] - orig[k]).abs() < 1e-9);
                    }
                }
            }
        }
    }

    fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }
}
