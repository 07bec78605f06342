use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{camera_depth, project, CameraPose, FrameBundle, Scene, SceneObject};
use crate::geometry::{
    overlap_fraction, CameraModel, DepthMap, DepthMode, Detection, PixelBox, DEFAULT_FEATURE_LEN,
};

/// Depth reported for rays that hit no object (room behind the table).
pub const BACKGROUND_DEPTH_M: f32 = 3.0;

/// Detector failure model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Per frame, per object.
    pub dropout_prob: f64,
    /// The hand has its own dropout knob.
    pub hand_dropout_prob: f64,
    pub jitter_sigma_px: f64,
    pub occlusion_overlap_threshold: f64,
    pub occlusion_drop_prob: f64,
    pub camera_jitter_sigma_deg: f64,
    pub feature_noise_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            dropout_prob: 0.0,
            hand_dropout_prob: 0.0,
            jitter_sigma_px: 0.0,
            occlusion_overlap_threshold: 0.3,
            occlusion_drop_prob: 1.0,
            camera_jitter_sigma_deg: 0.0,
            feature_noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("dropout_prob", self.dropout_prob),
            ("hand_dropout_prob", self.hand_dropout_prob),
            ("occlusion_overlap_threshold", self.occlusion_overlap_threshold),
            ("occlusion_drop_prob", self.occlusion_drop_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} outside [0, 1]"));
            }
        }
        for (name, s) in [
            ("jitter_sigma_px", self.jitter_sigma_px),
            ("camera_jitter_sigma_deg", self.camera_jitter_sigma_deg),
            ("feature_noise_sigma", self.feature_noise_sigma),
        ] {
            if !(s >= 0.0) {
                return Err(format!("{name} = {s} must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Tight image box around the projection of the object's eight corners,
/// clipped to the image. `None` when any corner is behind the camera or less
/// than half of the box is inside the frame.
pub fn project_box(obj: &SceneObject, pose: &CameraPose, cam: &CameraModel) -> Option<PixelBox> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in obj.corners() {
        let (px, py) = project(c, pose, cam).pixel()?;
        lo = [lo[0].min(px), lo[1].min(py)];
        hi = [hi[0].max(px), hi[1].max(py)];
    }
    let full = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    let (w, h) = (cam.width_px as f64, cam.height_px as f64);
    let (x1, y1) = (lo[0].max(0.0), lo[1].max(0.0));
    let (x2, y2) = (hi[0].min(w), hi[1].min(h));
    if x2 <= x1 || y2 <= y1 {
        return None;
    }
    if (x2 - x1) * (y2 - y1) < 0.5 * full {
        return None;
    }
    PixelBox::from_corners(x1, y1, x2, y2).ok()
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Stable per-object appearance vector, derived from the object id.
pub fn object_feature(id: &str, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(id));
    let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&mut v);
    v
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * sigma
}

/// Random draws for one object. Always drawn in full so that the stream of
/// draws does not depend on visibility.
struct ObjectDraws {
    drop: f64,
    occlude: f64,
    jitter: (f64, f64),
    confidence: f64,
    feature_noise: Vec<f64>,
}

impl ObjectDraws {
    fn draw<R: Rng + ?Sized>(rng: &mut R, noise: &NoiseConfig) -> Self {
        Self {
            drop: rng.random(),
            occlude: rng.random(),
            jitter: (gauss(rng, noise.jitter_sigma_px), gauss(rng, noise.jitter_sigma_px)),
            confidence: 0.7 + 0.3 * rng.random::<f64>(),
            feature_noise: (0..DEFAULT_FEATURE_LEN)
                .map(|_| gauss(rng, noise.feature_noise_sigma))
                .collect(),
        }
    }

    fn detection(self, obj: &SceneObject, bbox: PixelBox, frame_index: u64) -> Detection {
        let mut feature = object_feature(&obj.id, DEFAULT_FEATURE_LEN);
        feature.iter_mut().zip(&self.feature_noise).for_each(|(f, n)| *f += n);
        normalize(&mut feature);
        Detection {
            category: obj.category.clone(),
            bbox: PixelBox {
                cx: bbox.cx + self.jitter.0,
                cy: bbox.cy + self.jitter.1,
                ..bbox
            },
            confidence: self.confidence,
            feature: Some(feature),
            frame_index,
            source_id: Some(obj.id.clone()),
        }
    }
}

/// Renders one frame of synthetic detections. Returns the bundle and the
/// (possibly jittered) camera pose used for it.
fn render_with_pose<R: Rng + ?Sized>(
    scene: &Scene,
    cam: &CameraModel,
    noise: &NoiseConfig,
    rng: &mut R,
    frame_index: u64,
    wall_dt: f64,
) -> (FrameBundle, CameraPose) {
    let pose = scene.camera_pose.perturbed(
        gauss(rng, noise.camera_jitter_sigma_deg),
        gauss(rng, noise.camera_jitter_sigma_deg),
    );
    let mut detections = Vec::new();

    let hand_draws = ObjectDraws::draw(rng, noise);
    let hand_box = project_box(&scene.hand, &pose, cam);
    let hand_depth = camera_depth(scene.hand.position, &pose);
    if let Some(b) = hand_box {
        if hand_draws.drop >= noise.hand_dropout_prob {
            detections.push(hand_draws.detection(&scene.hand, b, frame_index));
        }
    }

    for obj in &scene.objects {
        let draws = ObjectDraws::draw(rng, noise);
        let Some(b) = project_box(obj, &pose, cam) else {
            continue;
        };
        if draws.drop < noise.dropout_prob {
            continue;
        }
        if let Some(hb) = hand_box {
            let occluded = overlap_fraction(&hb, &b) >= noise.occlusion_overlap_threshold
                && hand_depth < camera_depth(obj.position, &pose);
            if occluded && draws.occlude < noise.occlusion_drop_prob {
                continue;
            }
        }
        detections.push(draws.detection(obj, b, frame_index));
    }

    (
        FrameBundle {
            frame_index,
            detections,
            depth: None,
            wall_dt,
        },
        pose,
    )
}

/// Synthetic detections for one frame; deterministic given the scene, noise
/// and RNG state.
pub fn render_frame<R: Rng + ?Sized>(
    scene: &Scene,
    cam: &CameraModel,
    noise: &NoiseConfig,
    rng: &mut R,
    frame_index: u64,
    wall_dt: f64,
) -> FrameBundle {
    render_with_pose(scene, cam, noise, rng, frame_index, wall_dt).0
}

/// Metric depth map: per pixel, depth along the optical axis (meters) to the
/// nearest object surface hit by that pixel's ray, or the background constant.
pub fn render_depth(scene: &Scene, pose: &CameraPose, cam: &CameraModel, frame_index: u64) -> DepthMap {
    let (w, h) = (cam.width_px, cam.height_px);
    let origin = pose.position;
    let fr = pose.frame();
    let f = cam.focal_px();
    let (ccx, ccy) = cam.center();
    let mut t_min = vec![f64::INFINITY; w as usize * h as usize];
    for obj in scene.objects.iter().chain(std::iter::once(&scene.hand)) {
        // only pixels inside the projected corner hull can hit the box
        let (mut c0, mut c1, mut r0, mut r1) = (0i64, w as i64 - 1, 0i64, h as i64 - 1);
        let pixels: Option<Vec<(f64, f64)>> = obj.corners().iter().map(|c| project(*c, pose, cam).pixel()).collect();
        if let Some(px) = pixels {
            let lo_x = px.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let hi_x = px.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let lo_y = px.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let hi_y = px.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            c0 = c0.max(lo_x.floor() as i64 - 1);
            c1 = c1.min(hi_x.ceil() as i64 + 1);
            r0 = r0.max(lo_y.floor() as i64 - 1);
            r1 = r1.min(hi_y.ceil() as i64 + 1);
        }
        for row in r0..=r1 {
            let b = -(row as f64 + 0.5 - ccy) / f;
            for col in c0..=c1 {
                let a = (col as f64 + 0.5 - ccx) / f;
                let dir = [
                    fr.forward[0] + a * fr.right[0] + b * fr.up[0],
                    fr.forward[1] + a * fr.right[1] + b * fr.up[1],
                    fr.forward[2] + a * fr.right[2] + b * fr.up[2],
                ];
                if let Some(t) = obj.ray_entry(origin, dir, 0.0) {
                    let k = row as usize * w as usize + col as usize;
                    t_min[k] = t_min[k].min(t);
                }
            }
        }
    }
    // ray directions have unit forward component, so t is axis depth in cm
    let values = t_min
        .into_iter()
        .map(|t| if t.is_finite() { (t / 100.0) as f32 } else { BACKGROUND_DEPTH_M })
        .collect();
    DepthMap {
        width_px: w,
        height_px: h,
        mode: DepthMode::Metric,
        values,
        frame_index,
    }
}

/// Stateful frame generator for one scene stream.
#[derive(Debug, Clone)]
pub struct FrameSource {
    pub camera: CameraModel,
    pub noise: NoiseConfig,
    pub frame_rate_hz: f64,
    rng: ChaCha8Rng,
    next_index: u64,
}

impl FrameSource {
    pub fn new(camera: CameraModel, noise: NoiseConfig, frame_rate_hz: f64) -> Self {
        Self {
            camera,
            noise,
            frame_rate_hz,
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
            next_index: 0,
        }
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    /// Renders the next frame, with a depth map when `with_depth` is set.
    pub fn next_frame(&mut self, scene: &Scene, with_depth: bool) -> FrameBundle {
        let index = self.next_index;
        self.next_index += 1;
        let dt = 1.0 / self.frame_rate_hz;
        let (mut bundle, pose) = render_with_pose(scene, &self.camera, &self.noise, &mut self.rng, index, dt);
        if with_depth {
            bundle.depth = Some(render_depth(scene, &pose, &self.camera, index));
        }
        bundle
    }
}
