//! Keypoint layout: which indices belong to the face and which to the body,
//! plus the body bone list used for kinematic beat extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Body keypoints in the default 121-point layout.
pub mod body {
    pub const NECK: usize = 0;
    pub const NOSE: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const MID_HIP: usize = 8;
    /// First point of the 21-point right hand (its wrist).
    pub const R_HAND: usize = 9;
    /// First point of the 21-point left hand.
    pub const L_HAND: usize = 30;
    pub const HAND_POINTS: usize = 21;
    pub const COUNT: usize = 51;
}

/// Face keypoints (68-point landmarks plus two pupils), offsets within the face block.
pub mod face {
    pub const COUNT: usize = 70;
    pub const INNER_LIP_TOP: usize = 62;
    pub const INNER_LIP_BOTTOM: usize = 66;
}

pub const DEFAULT_TOTAL_KEYPOINTS: usize = 121;
pub const COORDINATE_DIMS: usize = 2;

/// Keypoint layout shared by every pose file of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonLayout {
    #[serde(rename = "total")]
    total_keypoints: usize,
    face_indices: Vec<usize>,
    body_indices: Vec<usize>,
    /// Pairs of global keypoint indices, both in the body set.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    bones: Vec<(usize, usize)>,
    /// Global indices of the upper and lower inner-lip points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lips: Option<(usize, usize)>,
}

impl Default for SkeletonLayout {
    fn default() -> Self {
        Self::openpose_121()
    }
}

impl SkeletonLayout {
    /// 51 body points (upper body + two hands) followed by 70 face points.
    pub fn openpose_121() -> Self {
        let body_indices: Vec<usize> = (0..body::COUNT).collect();
        let face_indices: Vec<usize> = (body::COUNT..DEFAULT_TOTAL_KEYPOINTS).collect();
        Self {
            total_keypoints: DEFAULT_TOTAL_KEYPOINTS,
            face_indices,
            body_indices,
            bones: default_bones(),
            lips: Some((
                body::COUNT + face::INNER_LIP_TOP,
                body::COUNT + face::INNER_LIP_BOTTOM,
            )),
        }
    }

    pub fn new(
        total_keypoints: usize,
        face_indices: Vec<usize>,
        body_indices: Vec<usize>,
        bones: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let layout = Self {
            total_keypoints,
            face_indices,
            body_indices,
            bones,
            lips: None,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn with_lips(mut self, top: usize, bottom: usize) -> Result<Self> {
        self.lips = Some((top, bottom));
        self.validate()?;
        Ok(self)
    }

    /// Fills in defaults omitted from a manifest and checks the partition.
    pub fn resolved(mut self) -> Result<Self> {
        let default = Self::openpose_121();
        if self.total_keypoints == default.total_keypoints
            && self.face_indices == default.face_indices
            && self.body_indices == default.body_indices
        {
            if self.bones.is_empty() {
                self.bones = default.bones;
            }
            if self.lips.is_none() {
                self.lips = default.lips;
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = "skeleton layout";
        if self.face_indices.len() + self.body_indices.len() != self.total_keypoints {
            return Err(Error::schema(
                ctx,
                format!(
                    "{} face + {} body indices do not add up to {} keypoints",
                    self.face_indices.len(),
                    self.body_indices.len(),
                    self.total_keypoints
                ),
            ));
        }
        let mut seen = vec![false; self.total_keypoints];
        for &i in self.face_indices.iter().chain(&self.body_indices) {
            if i >= self.total_keypoints {
                return Err(Error::schema(ctx, format!("index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::schema(ctx, format!("index {i} listed twice")));
            }
        }
        for &(a, b) in &self.bones {
            if !self.body_indices.contains(&a) || !self.body_indices.contains(&b) {
                return Err(Error::schema(
                    ctx,
                    format!("bone ({a}, {b}) leaves the body set"),
                ));
            }
        }
        if let Some((top, bottom)) = self.lips {
            if !self.face_indices.contains(&top) || !self.face_indices.contains(&bottom) {
                return Err(Error::schema(ctx, "lip points must be face keypoints"));
            }
        }
        Ok(())
    }

    pub fn total_keypoints(&self) -> usize {
        self.total_keypoints
    }

    pub fn face_indices(&self) -> &[usize] {
        &self.face_indices
    }

    pub fn body_indices(&self) -> &[usize] {
        &self.body_indices
    }

    pub fn num_body(&self) -> usize {
        self.body_indices.len()
    }

    pub fn num_face(&self) -> usize {
        self.face_indices.len()
    }

    pub fn bones(&self) -> &[(usize, usize)] {
        &self.bones
    }

    /// Bones re-indexed into positions within `body_indices`.
    pub fn body_bones(&self) -> Vec<(usize, usize)> {
        let pos = |g: usize| self.body_indices.iter().position(|&b| b == g);
        self.bones
            .iter()
            .filter_map(|&(a, b)| Some((pos(a)?, pos(b)?)))
            .collect()
    }

    pub fn lips(&self) -> Option<(usize, usize)> {
        self.lips
    }

    /// Lip points as positions within `face_indices`.
    pub fn face_lips(&self) -> Option<(usize, usize)> {
        let (top, bottom) = self.lips?;
        let pos = |g: usize| self.face_indices.iter().position(|&f| f == g);
        Some((pos(top)?, pos(bottom)?))
    }
}

fn default_bones() -> Vec<(usize, usize)> {
    use body::*;
    let mut bones = vec![
        (NECK, NOSE),
        (NECK, R_SHOULDER),
        (R_SHOULDER, R_ELBOW),
        (R_ELBOW, R_WRIST),
        (NECK, L_SHOULDER),
        (L_SHOULDER, L_ELBOW),
        (L_ELBOW, L_WRIST),
        (NECK, MID_HIP),
    ];
    for hand in [R_HAND, L_HAND] {
        for finger in 0..5 {
            let base = hand + 1 + 4 * finger;
            bones.push((hand, base));
            for joint in 0..3 {
                bones.push((base + joint, base + joint + 1));
            }
        }
    }
    bones
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_partitions_121_points() {
        let layout = SkeletonLayout::default();
        layout.validate().unwrap();
        assert_eq!(layout.num_face(), 70);
        assert_eq!(layout.num_body(), 51);
        assert_eq!(layout.bones().len(), 8 + 40);
        assert_eq!(layout.face_lips(), Some((62, 66)));
    }

    #[test]
    fn overlapping_indices_are_rejected() {
        let err = SkeletonLayout::new(3, vec![0, 1], vec![1], vec![]).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
    }

    #[test]
    fn wrong_count_is_rejected() {
        assert!(SkeletonLayout::new(4, vec![0, 1], vec![2], vec![]).is_err());
    }

    #[test]
    fn manifest_layout_without_bones_gets_defaults() {
        let json = serde_json::json!({
            "total": 121,
            "face_indices": (51..121).collect::<Vec<_>>(),
            "body_indices": (0..51).collect::<Vec<_>>(),
        });
        let layout: SkeletonLayout = serde_json::from_value(json).unwrap();
        let layout = layout.resolved().unwrap();
        assert_eq!(layout, SkeletonLayout::openpose_121());
    }
}
