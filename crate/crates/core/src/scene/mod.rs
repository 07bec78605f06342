//! Synthetic tabletop world.
//!
//! Table frame, in centimeters: `x` runs right along the table edge, `y` up,
//! `z` away from the participant. The camera sits on the participant's glasses
//! and looks forward and down at the table.

mod file;
mod render;
mod replay;

pub use file::{load_scene, parse_scene, scene_to_toml, SceneFileError, SCENE_SCHEMA_VERSION};
pub use render::{
    object_feature, project_box, render_depth, render_frame, FrameSource, NoiseConfig,
    BACKGROUND_DEPTH_M,
};
pub use replay::{load_replay, read_replay, write_replay, ReplayError, ReplayWriter};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraModel, Category, DepthMap, Detection, HandKind};

pub type Vec3 = [f64; 3];

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("object {0:?} has a non-positive extent")]
    Extent(String),
    #[error("duplicate object id {0:?}")]
    DuplicateId(String),
    #[error("scene hand must have a hand category, got {0}")]
    NotAHand(String),
    #[error("object {0:?} duplicates the scene hand")]
    SecondHand(String),
    #[error("invalid category on {0:?}")]
    Category(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub category: Category,
    /// Center of the axis-aligned extent.
    pub position: Vec3,
    /// Width (x), height (y), depth (z).
    pub extent: Vec3,
    #[serde(default)]
    pub is_obstacle: bool,
}

impl SceneObject {
    pub fn new(id: impl Into<String>, category: Category, position: Vec3, extent: Vec3) -> Self {
        Self {
            id: id.into(),
            category,
            position,
            extent,
            is_obstacle: false,
        }
    }

    /// Object standing on the table with its footprint centered at `(x, z)`.
    pub fn on_table(id: impl Into<String>, category: Category, x: f64, z: f64, extent: Vec3) -> Self {
        Self::new(id, category, [x, extent[1] / 2.0, z], extent)
    }

    pub fn obstacle(mut self) -> Self {
        self.is_obstacle = true;
        self
    }

    pub fn min_corner(&self) -> Vec3 {
        [
            self.position[0] - self.extent[0] / 2.0,
            self.position[1] - self.extent[1] / 2.0,
            self.position[2] - self.extent[2] / 2.0,
        ]
    }

    pub fn max_corner(&self) -> Vec3 {
        [
            self.position[0] + self.extent[0] / 2.0,
            self.position[1] + self.extent[1] / 2.0,
            self.position[2] + self.extent[2] / 2.0,
        ]
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let lo = self.min_corner();
        let hi = self.max_corner();
        let mut out = [[0.0; 3]; 8];
        for (i, c) in out.iter_mut().enumerate() {
            *c = [
                if i & 1 == 0 { lo[0] } else { hi[0] },
                if i & 2 == 0 { lo[1] } else { hi[1] },
                if i & 4 == 0 { lo[2] } else { hi[2] },
            ];
        }
        out
    }

    /// Axis-aligned overlap of two extents (touching faces do not count).
    pub fn intersects(&self, other: &SceneObject) -> bool {
        let (a0, a1) = (self.min_corner(), self.max_corner());
        let (b0, b1) = (other.min_corner(), other.max_corner());
        (0..3).all(|k| a0[k] < b1[k] && b0[k] < a1[k])
    }

    /// Entry distance of the ray `origin + t * dir` into the extent grown by
    /// `margin` on every side, if it is hit at `t >= 0`.
    pub fn ray_entry(&self, origin: Vec3, dir: Vec3, margin: f64) -> Option<f64> {
        let lo = self.min_corner();
        let hi = self.max_corner();
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            let (a, b) = (lo[k] - margin, hi[k] + margin);
            if dir[k].abs() < 1e-15 {
                if origin[k] < a || origin[k] > b {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let (mut ta, mut tb) = ((a - origin[k]) * inv, (b - origin[k]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// Camera position plus heading. Positive pitch looks down, positive yaw looks right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
}

impl Default for CameraPose {
    /// Glasses roughly above the table edge, looking at the middle of the table.
    fn default() -> Self {
        Self {
            position: [0.0, 40.0, -5.0],
            yaw_deg: 0.0,
            pitch_deg: 38.7,
        }
    }
}

/// Orthonormal camera basis in table coordinates.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub origin: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
}

impl CameraPose {
    pub fn frame(&self) -> CameraFrame {
        let (sp, cp) = self.pitch_deg.to_radians().sin_cos();
        let (sy, cy) = self.yaw_deg.to_radians().sin_cos();
        let yaw = |v: Vec3| [v[0] * cy + v[2] * sy, v[1], -v[0] * sy + v[2] * cy];
        CameraFrame {
            origin: self.position,
            right: yaw([1.0, 0.0, 0.0]),
            up: yaw([0.0, cp, sp]),
            forward: yaw([0.0, -sp, cp]),
        }
    }

    pub fn perturbed(&self, d_yaw_deg: f64, d_pitch_deg: f64) -> Self {
        Self {
            yaw_deg: self.yaw_deg + d_yaw_deg,
            pitch_deg: self.pitch_deg + d_pitch_deg,
            ..*self
        }
    }
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    InView { px: f64, py: f64 },
    OutOfView { px: f64, py: f64 },
    Behind,
}

impl Projection {
    pub fn in_view(&self) -> Option<(f64, f64)> {
        match *self {
            Projection::InView { px, py } => Some((px, py)),
            _ => None,
        }
    }

    /// Pixel coordinates whether or not they land inside the image.
    pub fn pixel(&self) -> Option<(f64, f64)> {
        match *self {
            Projection::InView { px, py } | Projection::OutOfView { px, py } => Some((px, py)),
            Projection::Behind => None,
        }
    }
}

/// Pinhole projection of a table-frame point.
pub fn project(point: Vec3, pose: &CameraPose, cam: &CameraModel) -> Projection {
    let fr = pose.frame();
    let d = sub(point, fr.origin);
    let zc = dot(d, fr.forward);
    if zc <= 0.0 {
        return Projection::Behind;
    }
    let f = cam.focal_px();
    let (cx, cy) = cam.center();
    let px = cx + f * dot(d, fr.right) / zc;
    let py = cy - f * dot(d, fr.up) / zc;
    let (w, h) = (cam.width_px as f64, cam.height_px as f64);
    // small tolerance so points exactly on the FOV edge count as in view
    let tol = 1e-9;
    if px < -tol || px > w + tol || py < -tol || py > h + tol {
        Projection::OutOfView { px, py }
    } else {
        Projection::InView { px, py }
    }
}

/// Unnormalized ray direction through a pixel; its forward component is 1.
pub fn pixel_ray(px: f64, py: f64, pose: &CameraPose, cam: &CameraModel) -> Vec3 {
    let fr = pose.frame();
    let f = cam.focal_px();
    let (cx, cy) = cam.center();
    let a = (px - cx) / f;
    let b = -(py - cy) / f;
    [
        fr.forward[0] + a * fr.right[0] + b * fr.up[0],
        fr.forward[1] + a * fr.right[1] + b * fr.up[1],
        fr.forward[2] + a * fr.right[2] + b * fr.up[2],
    ]
}

/// Point on the ray through `(px, py)` at camera-axis depth `depth_cm`.
pub fn unproject_at_depth(px: f64, py: f64, depth_cm: f64, pose: &CameraPose, cam: &CameraModel) -> Vec3 {
    let dir = pixel_ray(px, py, pose, cam);
    let o = pose.position;
    [o[0] + depth_cm * dir[0], o[1] + depth_cm * dir[1], o[2] + depth_cm * dir[2]]
}

/// Point on the ray through `(px, py)` lying in the table-frame plane `z = plane_z`.
pub fn unproject_to_z_plane(
    px: f64,
    py: f64,
    plane_z: f64,
    pose: &CameraPose,
    cam: &CameraModel,
) -> Option<Vec3> {
    let dir = pixel_ray(px, py, pose, cam);
    let o = pose.position;
    if dir[2].abs() < 1e-12 {
        return None;
    }
    let t = (plane_z - o[2]) / dir[2];
    if t <= 0.0 {
        return None;
    }
    Some([o[0] + t * dir[0], o[1] + t * dir[1], plane_z])
}

/// Depth of a point along the camera's optical axis, in centimeters.
pub fn camera_depth(point: Vec3, pose: &CameraPose) -> f64 {
    let fr = pose.frame();
    dot(sub(point, fr.origin), fr.forward)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub hand: SceneObject,
    pub camera_pose: CameraPose,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        let mut seen = std::collections::HashSet::new();
        for obj in self.objects.iter().chain(std::iter::once(&self.hand)) {
            if obj.extent.iter().any(|e| !(*e > 0.0)) {
                return Err(SceneError::Extent(obj.id.clone()));
            }
            if obj.category.validate().is_err() {
                return Err(SceneError::Category(obj.id.clone()));
            }
            if !seen.insert(obj.id.as_str()) {
                return Err(SceneError::DuplicateId(obj.id.clone()));
            }
        }
        match self.hand.category.hand_kind {
            Some(HandKind::MyLeft) | Some(HandKind::MyRight) => {}
            _ => return Err(SceneError::NotAHand(self.hand.category.to_string())),
        }
        if let Some(dup) = self.objects.iter().find(|o| o.category == self.hand.category) {
            return Err(SceneError::SecondHand(dup.id.clone()));
        }
        Ok(())
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn remove_object(&mut self, id: &str) -> Option<SceneObject> {
        let idx = self.objects.iter().position(|o| o.id == id)?;
        Some(self.objects.remove(idx))
    }
}

/// One processed camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub frame_index: u64,
    pub detections: Vec<Detection>,
    pub depth: Option<DepthMap>,
    /// Seconds since the previous frame.
    pub wall_dt: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level_pose() -> CameraPose {
        CameraPose {
            position: [0.0, 0.0, 0.0],
            yaw_deg: 0.0,
            pitch_deg: 0.0,
        }
    }

    #[test]
    fn optical_axis_maps_to_center() {
        let cam = CameraModel::default();
        let p = project([0.0, 0.0, 50.0], &level_pose(), &cam);
        assert_eq!(p.in_view(), Some((320.0, 240.0)));
    }

    #[test]
    fn fov_edge_maps_to_image_edge() {
        let cam = CameraModel::default();
        let a = 44f64.to_radians();
        let p = project([50.0 * a.tan(), 0.0, 50.0], &level_pose(), &cam);
        let (px, py) = p.in_view().expect("edge point is in view");
        assert!((px - 640.0).abs() < 1e-9);
        assert!((py - 240.0).abs() < 1e-9);
        let beyond = project([50.0 * 45f64.to_radians().tan(), 0.0, 50.0], &level_pose(), &cam);
        assert!(matches!(beyond, Projection::OutOfView { .. }));
    }

    #[test]
    fn half_fov_angle_follows_tangent_ratio() {
        let cam = CameraModel::default();
        let a = 22f64.to_radians();
        let (px, _) = project([30.0 * a.tan(), 0.0, 30.0], &level_pose(), &cam)
            .in_view()
            .unwrap();
        let expected = 320.0 + 320.0 * a.tan() / 44f64.to_radians().tan();
        assert!((px - expected).abs() < 1e-9);
    }

    #[test]
    fn behind_camera() {
        let cam = CameraModel::default();
        assert_eq!(project([0.0, 0.0, -1.0], &level_pose(), &cam), Projection::Behind);
    }

    #[test]
    fn pitched_camera_looks_down() {
        let pose = CameraPose::default();
        let fr = pose.frame();
        assert!(fr.forward[1] < 0.0 && fr.forward[2] > 0.0);
        assert!((dot(fr.forward, fr.up)).abs() < 1e-12);
        assert!((dot(fr.right, fr.up)).abs() < 1e-12);
    }

    #[test]
    fn ray_entry_hits_box_face() {
        let obj = SceneObject::new("b", Category::object("box"), [0.0, 0.0, 50.0], [10.0, 10.0, 10.0]);
        let t = obj.ray_entry([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], 0.0).unwrap();
        assert!((t - 45.0).abs() < 1e-12);
        assert!(obj.ray_entry([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.0).is_none());
        assert!(obj.ray_entry([7.0, 0.0, 0.0], [0.0, 0.0, 1.0], 0.0).is_none());
        assert!(obj.ray_entry([7.0, 0.0, 0.0], [0.0, 0.0, 1.0], 2.5).is_some());
    }

    #[test]
    fn scene_validation() {
        let hand = SceneObject::new("hand", Category::hand(HandKind::MyRight), [0.0, 2.0, 20.0], [9.0, 4.0, 12.0]);
        let bottle = SceneObject::on_table("b", Category::object("bottle"), 0.0, 40.0, [7.0, 25.0, 7.0]);
        let mut scene = Scene {
            objects: vec![bottle.clone()],
            hand: hand.clone(),
            camera_pose: CameraPose::default(),
        };
        assert!(scene.validate().is_ok());
        scene.objects.push(bottle.clone());
        assert_eq!(scene.validate(), Err(SceneError::DuplicateId("b".into())));
        scene.objects.pop();
        let mut second = hand.clone();
        second.id = "h2".into();
        scene.objects.push(second);
        assert_eq!(scene.validate(), Err(SceneError::SecondHand("h2".into())));
        scene.objects.pop();
        scene.objects[0].extent[1] = 0.0;
        assert!(matches!(scene.validate(), Err(SceneError::Extent(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn projection_round_trip(
                x in -40.0f64..40.0, y in 0.0f64..40.0, z in 10.0f64..80.0,
                yaw in -10.0f64..10.0, pitch in 20.0f64..50.0,
            ) {
                let cam = CameraModel::default();
                let pose = CameraPose { position: [0.0, 40.0, -5.0], yaw_deg: yaw, pitch_deg: pitch };
                let p = [x, y, z];
                if let Some((px, py)) = project(p, &pose, &cam).in_view() {
                    let back = unproject_at_depth(px, py, camera_depth(p, &pose), &pose, &cam);
                    for k in 0..3 {
                        prop_assert!((back[k] - p[k]).abs() < 1e-6);
                    }
                    let plane = unproject_to_z_plane(px, py, z, &pose, &cam).unwrap();
                    for k in 0..3 {
                        prop_assert!((plane[k] - p[k]).abs() < 1e-6);
                    }
                }
            }
        }
    }
}
