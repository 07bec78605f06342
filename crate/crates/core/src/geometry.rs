//! Shared domain types: camera intrinsics, pixel boxes, detections and depth maps.
//!
//! Boxes are stored as center + size. Corner form (`x1, y1, x2, y2`) only
//! appears at serialization boundaries, see [`PixelBox::to_corners`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default horizontal field of view of the head-mounted camera, degrees.
pub const DEFAULT_HFOV_DEG: f64 = 88.0;
pub const DEFAULT_WIDTH_PX: u32 = 640;
pub const DEFAULT_HEIGHT_PX: u32 = 480;
/// Length of the appearance vectors supplied by the perception layer.
pub const DEFAULT_FEATURE_LEN: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("field of view {0}° outside (0, 180)")]
    FieldOfView(f64),
    #[error("image size must be positive, got {0}x{1}")]
    ImageSize(u32, u32),
    #[error("box size must be positive, got {w}x{h}")]
    BoxSize { w: f64, h: f64 },
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("appearance feature norm {0} is not 1")]
    FeatureNorm(f64),
    #[error("hand kind must be present iff label is \"hand\" (label {0:?})")]
    HandKind(String),
    #[error("depth grid has {got} values, expected {expected}")]
    DepthGrid { got: usize, expected: usize },
    #[error("metric depth must be positive, found {0}")]
    MetricDepth(f32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub hfov_deg: f64,
    pub width_px: u32,
    pub height_px: u32,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            hfov_deg: DEFAULT_HFOV_DEG,
            width_px: DEFAULT_WIDTH_PX,
            height_px: DEFAULT_HEIGHT_PX,
        }
    }
}

impl CameraModel {
    pub fn new(hfov_deg: f64, width_px: u32, height_px: u32) -> Result<Self, GeometryError> {
        let cam = Self {
            hfov_deg,
            width_px,
            height_px,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(GeometryError::FieldOfView(self.hfov_deg));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(GeometryError::ImageSize(self.width_px, self.height_px));
        }
        Ok(())
    }

    /// Linear visual angle per pixel, `hfov / width`.
    pub fn deg_per_px(&self) -> f64 {
        self.hfov_deg / self.width_px as f64
    }

    /// Pinhole focal length in pixels, chosen so the image edge sits at `hfov / 2`.
    pub fn focal_px(&self) -> f64 {
        (self.width_px as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    pub fn center(&self) -> (f64, f64) {
        (self.width_px as f64 / 2.0, self.height_px as f64 / 2.0)
    }
}

/// Converts a pixel distance into degrees of visual angle.
pub fn px_to_deg(px: f64, cam: &CameraModel) -> f64 {
    px * cam.deg_per_px()
}

/// Axis-aligned image box. `x` grows right, `y` grows down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl PixelBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(w > 0.0 && h > 0.0) {
            return Err(GeometryError::BoxSize { w, h });
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    pub fn to_corners(&self) -> [f64; 4] {
        [self.left(), self.top(), self.right(), self.bottom()]
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
    pub fn center(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }
    pub fn aspect(&self) -> f64 {
        self.w / self.h
    }

    pub fn intersection_area(&self, other: &PixelBox) -> f64 {
        let iw = self.right().min(other.right()) - self.left().max(other.left());
        let ih = self.bottom().min(other.bottom()) - self.top().max(other.top());
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// True when `other` lies entirely inside `self`.
    pub fn contains(&self, other: &PixelBox) -> bool {
        other.left() >= self.left()
            && other.right() <= self.right()
            && other.top() >= self.top()
            && other.bottom() <= self.bottom()
    }
}

impl Serialize for PixelBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_corners().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PixelBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x1, y1, x2, y2] = <[f64; 4]>::deserialize(d)?;
        PixelBox::from_corners(x1, y1, x2, y2).map_err(serde::de::Error::custom)
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Fraction of `target` covered by `hand`.
pub fn overlap_fraction(hand: &PixelBox, target: &PixelBox) -> f64 {
    if hand.contains(target) {
        return 1.0;
    }
    (hand.intersection_area(target) / target.area()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandKind {
    MyLeft,
    MyRight,
    OtherLeft,
    OtherRight,
}

pub const HAND_LABEL: &str = "hand";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Category {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand_kind: Option<HandKind>,
}

impl Category {
    pub fn object(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            hand_kind: None,
        }
    }

    pub fn hand(kind: HandKind) -> Self {
        Self {
            label: HAND_LABEL.to_string(),
            hand_kind: Some(kind),
        }
    }

    pub fn is_hand(&self) -> bool {
        self.label == HAND_LABEL
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.is_hand() != self.hand_kind.is_some() {
            return Err(GeometryError::HandKind(self.label.clone()));
        }
        Ok(())
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.hand_kind {
            Some(kind) => write!(f, "hand/{}", serde_json::to_value(kind).unwrap().as_str().unwrap()),
            None => f.write_str(&self.label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub category: Category,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
    pub frame_index: u64,
    /// Ground-truth scene object id. Synthetic streams fill it for evaluation;
    /// the tracker never reads it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

impl Detection {
    pub fn validate(&self) -> Result<(), GeometryError> {
        self.category.validate()?;
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(GeometryError::Confidence(self.confidence));
        }
        if !(self.bbox.w > 0.0 && self.bbox.h > 0.0) {
            return Err(GeometryError::BoxSize {
                w: self.bbox.w,
                h: self.bbox.h,
            });
        }
        if let Some(f) = &self.feature {
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(GeometryError::FeatureNorm(norm));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    /// Values are meters along the optical axis.
    Metric,
    /// Values are unitless disparity (larger is nearer).
    Relative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width_px: u32,
    pub height_px: u32,
    pub mode: DepthMode,
    /// Row-major.
    pub values: Vec<f32>,
    pub frame_index: u64,
}

impl DepthMap {
    pub fn new(
        width_px: u32,
        height_px: u32,
        mode: DepthMode,
        values: Vec<f32>,
        frame_index: u64,
    ) -> Result<Self, GeometryError> {
        let map = Self {
            width_px,
            height_px,
            mode,
            values,
            frame_index,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let expected = self.width_px as usize * self.height_px as usize;
        if self.values.len() != expected {
            return Err(GeometryError::DepthGrid {
                got: self.values.len(),
                expected,
            });
        }
        if self.mode == DepthMode::Metric {
            if let Some(&bad) = self.values.iter().find(|v| !(**v > 0.0)) {
                return Err(GeometryError::MetricDepth(bad));
            }
        }
        Ok(())
    }

    pub fn get(&self, col: u32, row: u32) -> Option<f32> {
        if col >= self.width_px || row >= self.height_px {
            return None;
        }
        Some(self.values[row as usize * self.width_px as usize + col as usize])
    }

    /// Value at the pixel containing `(x, y)`, if inside the map.
    pub fn sample(&self, x: f64, y: f64) -> Option<f32> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        self.get(x.floor() as u32, y.floor() as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pb(cx: f64, cy: f64, w: f64, h: f64) -> PixelBox {
        PixelBox::new(cx, cy, w, h).unwrap()
    }

    #[test]
    fn default_camera_reproduces_reported_visual_angles() {
        let cam = CameraModel::default();
        assert!((px_to_deg(10.0, &cam) - 1.4).abs() <= 0.1);
        assert!((px_to_deg(90.0, &cam) - 12.4).abs() <= 0.1);
        assert!((px_to_deg(313.5, &cam) - 43.1).abs() <= 0.1);
        assert_eq!(cam.deg_per_px() * cam.width_px as f64, cam.hfov_deg);
    }

    #[test]
    fn camera_validation() {
        assert!(CameraModel::new(0.0, 640, 480).is_err());
        assert!(CameraModel::new(180.0, 640, 480).is_err());
        assert!(CameraModel::new(88.0, 0, 480).is_err());
        assert!(CameraModel::new(88.0, 640, 480).is_ok());
    }

    #[test]
    fn iou_examples() {
        let a = pb(5.0, 5.0, 4.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &pb(50.0, 50.0, 4.0, 2.0)), 0.0);
        let l = pb(1.0, 1.0, 2.0, 2.0);
        let r = pb(2.0, 1.0, 2.0, 2.0);
        assert!((iou(&l, &r) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_examples() {
        let target = pb(10.0, 10.0, 4.0, 4.0);
        assert_eq!(overlap_fraction(&pb(10.0, 10.0, 20.0, 20.0), &target), 1.0);
        assert_eq!(overlap_fraction(&pb(100.0, 10.0, 4.0, 4.0), &target), 0.0);
        // hand spans x in [0, 10], target x in [8, 12]
        let left_half = pb(5.0, 10.0, 10.0, 4.0);
        assert!((overlap_fraction(&left_half, &target) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(PixelBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(PixelBox::from_corners(5.0, 0.0, 1.0, 3.0).is_err());
    }

    #[test]
    fn corners_serialize() {
        let b = pb(10.0, 20.0, 4.0, 6.0);
        assert_eq!(serde_json::to_string(&b).unwrap(), "[8.0,17.0,12.0,23.0]");
        let back: PixelBox = serde_json::from_str("[8.0,17.0,12.0,23.0]").unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn category_hand_kind_rule() {
        assert!(Category::hand(HandKind::MyRight).validate().is_ok());
        assert!(Category::object("bottle").validate().is_ok());
        let bad = Category {
            label: "bottle".into(),
            hand_kind: Some(HandKind::MyLeft),
        };
        assert!(bad.validate().is_err());
        let bad = Category {
            label: "hand".into(),
            hand_kind: None,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn detection_validation() {
        let mut d = Detection {
            category: Category::object("cup"),
            bbox: pb(1.0, 1.0, 2.0, 2.0),
            confidence: 0.5,
            feature: Some(vec![0.6, 0.8]),
            frame_index: 0,
            source_id: None,
        };
        assert!(d.validate().is_ok());
        d.confidence = 1.2;
        assert_eq!(d.validate(), Err(GeometryError::Confidence(1.2)));
        d.confidence = 0.5;
        d.feature = Some(vec![0.5, 0.5]);
        assert!(matches!(d.validate(), Err(GeometryError::FeatureNorm(_))));
    }

    #[test]
    fn depth_map_checks() {
        assert!(DepthMap::new(2, 2, DepthMode::Metric, vec![1.0; 3], 0).is_err());
        assert!(DepthMap::new(2, 1, DepthMode::Metric, vec![1.0, 0.0], 0).is_err());
        let m = DepthMap::new(2, 1, DepthMode::Relative, vec![1.0, 0.0], 0).unwrap();
        assert_eq!(m.sample(1.5, 0.2), Some(0.0));
        assert_eq!(m.sample(2.0, 0.0), None);
    }

    // Integer corners make unit-cell counting exact.
    fn raster_area(a: [i32; 4], b: Option<[i32; 4]>) -> f64 {
        let mut n = 0;
        for x in -5..60 {
            for y in -5..60 {
                let inside = |r: [i32; 4]| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
                if inside(a) && b.map_or(true, inside) {
                    n += 1;
                }
            }
        }
        n as f64
    }

    fn int_box() -> impl Strategy<Value = [i32; 4]> {
        (0..40i32, 0..40i32, 1..15i32, 1..15i32).prop_map(|(x, y, w, h)| [x, y, x + w, y + h])
    }

    fn to_box(r: [i32; 4]) -> PixelBox {
        PixelBox::from_corners(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64).unwrap()
    }

    proptest! {
        #[test]
        fn px_to_deg_is_linear(a in -1e4f64..1e4, b in -1e4f64..1e4) {
            let cam = CameraModel::default();
            let lhs = px_to_deg(a + b, &cam);
            let rhs = px_to_deg(a, &cam) + px_to_deg(b, &cam);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn iou_matches_raster_oracle(ra in int_box(), rb in int_box()) {
            let (a, b) = (to_box(ra), to_box(rb));
            let inter = raster_area(ra, Some(rb));
            let union = raster_area(ra, None) + raster_area(rb, None) - inter;
            prop_assert!((iou(&a, &b) - inter / union).abs() <= 1e-3);
            prop_assert_eq!(iou(&a, &b), iou(&b, &a));
            prop_assert_eq!(iou(&a, &a), 1.0);
            let (sa, sb) = (a.area(), b.area());
            prop_assert!(iou(&a, &b) <= sa.min(sb) / sa.max(sb) + 1e-12);
            let frac = overlap_fraction(&a, &b);
            prop_assert!((frac - inter / raster_area(rb, None)).abs() <= 1e-3);
        }

        #[test]
        fn overlap_is_one_when_target_inside(ra in int_box(), dx in 0.1f64..0.9, dy in 0.1f64..0.9) {
            let outer = to_box(ra);
            let inner = PixelBox::new(outer.cx, outer.cy, outer.w * dx, outer.h * dy).unwrap();
            prop_assert!(outer.contains(&inner));
            prop_assert_eq!(overlap_fraction(&outer, &inner), 1.0);
        }
    }
}
