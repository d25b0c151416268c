use crate::error::{Error, Result};
use crate::geometry::Vec3;
use serde::{Deserialize, Serialize};

/// Joint tree with rest offsets and the named joints the rest of the crate relies on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    /// Parent index per joint; the root has `None`.
    pub parents: Vec<Option<usize>>,
    /// Offset from the parent joint in the rest pose (meters, parent frame).
    pub offsets: Vec<Vec3>,
    pub root: usize,
    pub left_hip: usize,
    pub right_hip: usize,
    pub spine: usize,
    pub left_knee: usize,
    pub right_knee: usize,
    pub left_heel: usize,
    pub right_heel: usize,
    pub left_toe: usize,
    pub right_toe: usize,
    pub left_shoulder: usize,
    pub right_shoulder: usize,
    pub left_wrist: usize,
    pub right_wrist: usize,
    pub head: usize,
}

pub const SMPL22_NAMES: [&str; 22] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

const SMPL22_PARENTS: [i32; 22] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19,
];

// +X is the body's left, +Y up, +Z forward.
const SMPL22_OFFSETS: [Vec3; 22] = [
    [0.0, 0.0, 0.0],
    [0.07, -0.09, 0.0],
    [-0.07, -0.09, 0.0],
    [0.0, 0.11, 0.0],
    [0.03, -0.38, 0.0],
    [-0.03, -0.38, 0.0],
    [0.0, 0.13, 0.0],
    [0.0, -0.40, -0.03],
    [0.0, -0.40, -0.03],
    [0.0, 0.06, 0.0],
    [0.0, -0.05, 0.13],
    [0.0, -0.05, 0.13],
    [0.0, 0.21, -0.02],
    [0.08, 0.12, -0.01],
    [-0.08, 0.12, -0.01],
    [0.0, 0.10, 0.05],
    [0.11, 0.03, 0.0],
    [-0.11, 0.03, 0.0],
    [0.26, 0.0, 0.0],
    [-0.26, 0.0, 0.0],
    [0.25, 0.0, 0.0],
    [-0.25, 0.0, 0.0],
];

impl Skeleton {
    /// 22-joint SMPL-style body.
    pub fn smpl22() -> Self {
        Self {
            names: SMPL22_NAMES.iter().map(|s| s.to_string()).collect(),
            parents: SMPL22_PARENTS
                .iter()
                .map(|&p| if p < 0 { None } else { Some(p as usize) })
                .collect(),
            offsets: SMPL22_OFFSETS.to_vec(),
            root: 0,
            left_hip: 1,
            right_hip: 2,
            spine: 9,
            left_knee: 4,
            right_knee: 5,
            left_heel: 7,
            right_heel: 8,
            left_toe: 10,
            right_toe: 11,
            left_shoulder: 16,
            right_shoulder: 17,
            left_wrist: 20,
            right_wrist: 21,
            head: 15,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    /// Heel and toe joints in contact-flag order: left heel, left toe, right heel, right toe.
    pub fn foot_joints(&self) -> [usize; 4] {
        [self.left_heel, self.left_toe, self.right_heel, self.right_toe]
    }

    /// First child of each joint, used to orient joints from bone directions.
    pub fn first_children(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.joint_count()];
        for (j, p) in self.parents.iter().enumerate() {
            if let Some(p) = *p {
                if out[p].is_none() {
                    out[p] = Some(j);
                }
            }
        }
        out
    }

    /// Left/right joint correspondence (a joint on the midline maps to itself).
    pub fn mirror_map(&self) -> Vec<usize> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let other = if let Some(rest) = n.strip_prefix("left_") {
                    format!("right_{rest}")
                } else if let Some(rest) = n.strip_prefix("right_") {
                    format!("left_{rest}")
                } else {
                    return i;
                };
                self.names.iter().position(|m| *m == other).unwrap_or(i)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joint_count();
        if self.names.len() != n || self.offsets.len() != n {
            return Err(Error::invalid("skeleton arrays have different lengths"));
        }
        let roots: Vec<usize> = (0..n).filter(|&j| self.parents[j].is_none()).collect();
        if roots != [self.root] {
            return Err(Error::invalid("skeleton must have exactly one root"));
        }
        for j in 0..n {
            // walking up must reach the root without revisiting
            let mut k = j;
            let mut steps = 0;
            while let Some(p) = self.parents[k] {
                if p >= n {
                    return Err(Error::invalid(format!("joint {j} has parent {p} >= {n}")));
                }
                k = p;
                steps += 1;
                if steps > n {
                    return Err(Error::invalid("parent array contains a cycle"));
                }
            }
        }
        let named = [
            self.left_hip,
            self.right_hip,
            self.spine,
            self.left_knee,
            self.right_knee,
            self.left_heel,
            self.right_heel,
            self.left_toe,
            self.right_toe,
            self.left_shoulder,
            self.right_shoulder,
            self.left_wrist,
            self.right_wrist,
            self.head,
        ];
        if named.iter().any(|&i| i >= n) {
            return Err(Error::invalid("named joint index out of range"));
        }
        if self.offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rest offsets must be finite"));
        }
        Ok(())
    }

    /// Rest-pose (T-pose) global joint positions with the root at `root_pos`.
    pub fn rest_positions(&self, root_pos: Vec3) -> Vec<Vec3> {
        let n = self.joint_count();
        let mut out = vec![[0.0; 3]; n];
        for j in 0..n {
            out[j] = match self.parents[j] {
                None => root_pos,
                Some(p) => {
                    let o = self.offsets[j];
                    [out[p][0] + o[0], out[p][1] + o[1], out[p][2] + o[2]]
                }
            };
        }
        out
    }

    /// Height of the root above the ground in the rest pose.
    pub fn rest_root_height(&self) -> f64 {
        let rest = self.rest_positions([0.0; 3]);
        -self
            .foot_joints()
            .iter()
            .map(|&j| rest[j][1])
            .fold(f64::INFINITY, f64::min)
    }
}
