use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::sdf::OrientedBox;
use crate::error::{Error, Result};

/// Parallel-jaw gripper as three boxes (palm and two fingers) in the gripper
/// frame.
///
/// Frame convention: the origin is the grasp center between the fingertips,
/// `+z` is the approach direction and `closing_axis` (default `+y`) is the
/// direction the fingers close along.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GripperRepr")]
pub struct GripperModel {
    boxes: [OrientedBox; 3],
    closing_axis: Vector3<f64>,
    closing_region: OrientedBox,
}

#[derive(Deserialize)]
struct GripperRepr {
    boxes: Vec<OrientedBox>,
    closing_axis: Vector3<f64>,
    closing_region: OrientedBox,
}

impl TryFrom<GripperRepr> for GripperModel {
    type Error = Error;

    fn try_from(r: GripperRepr) -> Result<Self> {
        let boxes: [OrientedBox; 3] = r.boxes.try_into().map_err(|b: Vec<OrientedBox>| {
            Error::validation("gripper.boxes", format!("exactly 3 boxes required, found {}", b.len()))
        })?;
        GripperModel::new(boxes, r.closing_axis, r.closing_region)
    }
}

impl Default for GripperModel {
    fn default() -> Self {
        let b = |c: [f64; 3], h: [f64; 3]| {
            OrientedBox::centered(Vector3::from(c), Vector3::from(h)).expect("positive extents")
        };
        let palm = b([0.0, 0.0, -0.045], [0.02, 0.04, 0.02]);
        let left = b([0.0, 0.04, 0.0], [0.01, 0.005, 0.025]);
        let right = b([0.0, -0.04, 0.0], [0.01, 0.005, 0.025]);
        let region = b([0.0, 0.0, 0.0], [0.01, 0.035, 0.025]);
        Self {
            boxes: [palm, left, right],
            closing_axis: Vector3::y(),
            closing_region: region,
        }
    }
}

impl GripperModel {
    pub fn new(boxes: [OrientedBox; 3], closing_axis: Vector3<f64>, closing_region: OrientedBox) -> Result<Self> {
        for (i, b) in boxes.iter().chain(std::iter::once(&closing_region)).enumerate() {
            if b.half_extent.iter().any(|h| !(*h > 0.0)) {
                return Err(Error::validation(
                    format!("gripper box {i}"),
                    "half extents must be positive",
                ));
            }
        }
        let len = closing_axis.norm();
        if !(len > 1e-9) {
            return Err(Error::validation("gripper.closing_axis", "must be non-zero"));
        }
        Ok(Self {
            boxes,
            closing_axis: closing_axis / len,
            closing_region,
        })
    }

    pub fn boxes(&self) -> &[OrientedBox; 3] {
        &self.boxes
    }

    pub fn closing_axis(&self) -> &Vector3<f64> {
        &self.closing_axis
    }

    pub fn closing_region(&self) -> &OrientedBox {
        &self.closing_region
    }
}
