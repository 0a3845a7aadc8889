use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint tree with the four landmark joints the body-local frame needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTopology", into = "RawTopology")]
pub struct SkeletonTopology {
    names: Vec<String>,
    parent: Vec<i64>,
    center: usize,
    chest: usize,
    left_shoulder: usize,
    right_shoulder: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    names: Vec<String>,
    parent: Vec<i64>,
    center: usize,
    chest: usize,
    lshoulder: usize,
    rshoulder: usize,
}

impl TryFrom<RawTopology> for SkeletonTopology {
    type Error = Error;

    fn try_from(r: RawTopology) -> Result<Self> {
        SkeletonTopology::new(
            r.names,
            r.parent,
            r.center,
            r.chest,
            r.lshoulder,
            r.rshoulder,
        )
    }
}

impl From<SkeletonTopology> for RawTopology {
    fn from(t: SkeletonTopology) -> Self {
        RawTopology {
            names: t.names,
            parent: t.parent,
            center: t.center,
            chest: t.chest,
            lshoulder: t.left_shoulder,
            rshoulder: t.right_shoulder,
        }
    }
}

/// 0-based indices into the 25-joint Kinect v2 layout.
pub mod ntu {
    pub const SPINE_BASE: usize = 0;
    pub const SPINE_MID: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const LEFT_SHOULDER: usize = 4;
    pub const LEFT_ELBOW: usize = 5;
    pub const LEFT_WRIST: usize = 6;
    pub const LEFT_HAND: usize = 7;
    pub const RIGHT_SHOULDER: usize = 8;
    pub const RIGHT_ELBOW: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const RIGHT_HAND: usize = 11;
    pub const LEFT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const LEFT_ANKLE: usize = 14;
    pub const LEFT_FOOT: usize = 15;
    pub const RIGHT_HIP: usize = 16;
    pub const RIGHT_KNEE: usize = 17;
    pub const RIGHT_ANKLE: usize = 18;
    pub const RIGHT_FOOT: usize = 19;
    pub const SPINE_SHOULDER: usize = 20;
    pub const LEFT_HAND_TIP: usize = 21;
    pub const LEFT_THUMB: usize = 22;
    pub const RIGHT_HAND_TIP: usize = 23;
    pub const RIGHT_THUMB: usize = 24;

    pub const NAMES: [&str; 25] = [
        "spine_base",
        "spine_mid",
        "neck",
        "head",
        "left_shoulder",
        "left_elbow",
        "left_wrist",
        "left_hand",
        "right_shoulder",
        "right_elbow",
        "right_wrist",
        "right_hand",
        "left_hip",
        "left_knee",
        "left_ankle",
        "left_foot",
        "right_hip",
        "right_knee",
        "right_ankle",
        "right_foot",
        "spine_shoulder",
        "left_hand_tip",
        "left_thumb",
        "right_hand_tip",
        "right_thumb",
    ];

    /// Bone list of the Kinect v2 skeleton, rooted at the spine base.
    pub const PARENTS: [i64; 25] = [
        -1, 0, 20, 2, 20, 4, 5, 6, 20, 8, 9, 10, 0, 12, 13, 14, 0, 16, 17, 18, 1, 22, 7, 24, 11,
    ];
}

impl SkeletonTopology {
    pub fn new(
        names: Vec<String>,
        parent: Vec<i64>,
        center: usize,
        chest: usize,
        left_shoulder: usize,
        right_shoulder: usize,
    ) -> Result<Self> {
        let v = parent.len();
        if v == 0 {
            return Err(Error::Topology("no joints".into()));
        }
        if names.len() != v {
            return Err(Error::Topology(format!(
                "{} names for {v} joints",
                names.len()
            )));
        }
        let roots = parent.iter().filter(|&&p| p == -1).count();
        if roots != 1 {
            return Err(Error::Topology(format!("expected one root, found {roots}")));
        }
        if let Some((j, &p)) = parent
            .iter()
            .enumerate()
            .find(|&(j, &p)| p < -1 || p >= v as i64 || p == j as i64)
        {
            return Err(Error::Topology(format!("joint {j} has invalid parent {p}")));
        }
        for start in 0..v {
            let mut j = start;
            let mut steps = 0;
            while parent[j] != -1 {
                j = parent[j] as usize;
                steps += 1;
                if steps > v {
                    return Err(Error::Topology(format!("cycle through joint {start}")));
                }
            }
        }
        let marks = [center, chest, left_shoulder, right_shoulder];
        if marks.iter().any(|&m| m >= v) {
            return Err(Error::Topology(format!(
                "landmark index out of range: {marks:?}"
            )));
        }
        for i in 0..4 {
            for k in i + 1..4 {
                if marks[i] == marks[k] {
                    return Err(Error::Topology(format!(
                        "landmark joints not distinct: {marks:?}"
                    )));
                }
            }
        }
        Ok(SkeletonTopology {
            names,
            parent,
            center,
            chest,
            left_shoulder,
            right_shoulder,
        })
    }

    /// 25-joint Kinect v2 skeleton. Center is the mid spine, chest the
    /// spine-shoulder joint.
    pub fn ntu25() -> Self {
        SkeletonTopology::new(
            ntu::NAMES.iter().map(|s| s.to_string()).collect(),
            ntu::PARENTS.to_vec(),
            ntu::SPINE_MID,
            ntu::SPINE_SHOULDER,
            ntu::LEFT_SHOULDER,
            ntu::RIGHT_SHOULDER,
        )
        .expect("built-in topology is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.parent.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parents(&self) -> &[i64] {
        &self.parent
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn chest(&self) -> usize {
        self.chest
    }

    pub fn left_shoulder(&self) -> usize {
        self.left_shoulder
    }

    pub fn right_shoulder(&self) -> usize {
        self.right_shoulder
    }
}
