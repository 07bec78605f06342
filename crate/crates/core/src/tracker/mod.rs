//! Multi-object tracking: constant-velocity Kalman prediction, gated
//! overlap + appearance association, and track lifecycle.
//!
//! Appearance features are supplied with the detections; the tracker only
//! keeps an exponential moving average of them per track.

mod assign;
mod kalman;

pub use assign::{associate, pair_cost, solve_assignment, Association, AssignmentValue, TIE_EPS};
pub use kalman::{kalman_predict, kalman_update, KalmanFilter, KalmanNoise, KalmanState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Category, PixelBox};
use crate::scene::FrameBundle;

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error("frame {got} does not follow frame {last}")]
    FrameOrder { last: u64, got: u64 },
    #[error("invalid tracker config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    /// Confirmed earlier, currently coasting without detections.
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub category: Category,
    pub kalman: KalmanState,
    pub status: TrackStatus,
    pub hits: u32,
    pub time_since_update: u32,
    pub last_feature: Option<Vec<f64>>,
    /// Index of the detection that updated this track in the latest frame.
    pub last_detection: Option<usize>,
    last_box: PixelBox,
}

impl Track {
    pub fn bbox(&self) -> PixelBox {
        self.kalman.bbox()
    }

    /// The raw detector box from the most recent update.
    pub fn measured_box(&self) -> PixelBox {
        self.last_box
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Consecutive hits needed to confirm a track.
    pub n_init: u32,
    /// Frames a confirmed track may coast before deletion.
    pub max_age: u32,
    pub gate_iou_min: f64,
    /// Appearance weight when both sides carry features.
    pub feature_weight: f64,
    /// Weight of the old feature in the moving average.
    pub feature_ema: f64,
    pub kalman: KalmanNoise,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            n_init: 3,
            max_age: 30,
            gate_iou_min: 0.1,
            feature_weight: 0.5,
            feature_ema: 0.9,
            kalman: KalmanNoise::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        if !frac(self.gate_iou_min) || !frac(self.feature_weight) || !frac(self.feature_ema) {
            return Err(TrackerError::Config("fractions must lie in [0, 1]".into()));
        }
        if self.n_init < 1 || self.max_age < 1 {
            return Err(TrackerError::Config("n_init and max_age must be >= 1".into()));
        }
        Ok(())
    }
}

/// Newline-delimited track log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackLogRecord {
    pub frame_index: u64,
    pub id: u64,
    pub category: Category,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub status: TrackStatus,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    filter: KalmanFilter,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

fn blend_feature(old: &[f64], new: &[f64], alpha: f64) -> Vec<f64> {
    let mut f: Vec<f64> = old.iter().zip(new).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
    let n = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        f.iter_mut().for_each(|x| *x /= n);
    }
    f
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            filter: KalmanFilter::new(cfg.kalman),
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Every live track, including tentative and coasting ones.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn is_alive(&self, id: u64) -> bool {
        self.tracks.iter().any(|t| t.id == id)
    }

    /// Advances one frame and returns the confirmed tracks updated in it,
    /// ordered by id.
    pub fn step(&mut self, frame: &FrameBundle) -> Result<Vec<Track>, TrackerError> {
        let dt = match self.last_frame {
            Some(last) if frame.frame_index <= last => {
                return Err(TrackerError::FrameOrder {
                    last,
                    got: frame.frame_index,
                })
            }
            Some(last) => frame.frame_index - last,
            None => 1,
        };
        self.last_frame = Some(frame.frame_index);

        for t in &mut self.tracks {
            t.kalman = self.filter.predict(&t.kalman, dt as f64);
            t.last_detection = None;
        }

        let assoc = associate(&self.tracks, &frame.detections, &self.cfg);

        for &(ti, di) in &assoc.matches {
            let det = &frame.detections[di];
            let t = &mut self.tracks[ti];
            t.kalman = if t.hits == 1 && t.status == TrackStatus::Tentative {
                // tentative tracks die on a miss, so the previous hit was `dt` frames ago
                self.filter.initiate_two_point(&t.last_box, &det.bbox, dt as f64)
            } else {
                self.filter.update(&t.kalman, &det.bbox)
            };
            t.hits += 1;
            t.time_since_update = 0;
            t.last_box = det.bbox;
            t.last_detection = Some(di);
            t.last_feature = match (&t.last_feature, &det.feature) {
                (Some(old), Some(new)) => Some(blend_feature(old, new, self.cfg.feature_ema)),
                (None, Some(new)) => Some(new.clone()),
                (old, None) => old.clone(),
            };
            match t.status {
                TrackStatus::Tentative if t.hits >= self.cfg.n_init => t.status = TrackStatus::Confirmed,
                TrackStatus::Lost => t.status = TrackStatus::Confirmed,
                _ => {}
            }
        }

        let mut dead = vec![false; self.tracks.len()];
        for &ti in &assoc.unmatched_tracks {
            let t = &mut self.tracks[ti];
            t.time_since_update += dt as u32;
            match t.status {
                TrackStatus::Tentative => dead[ti] = true,
                _ if t.time_since_update > self.cfg.max_age => dead[ti] = true,
                _ => t.status = TrackStatus::Lost,
            }
        }
        let mut i = 0;
        self.tracks.retain(|_| {
            i += 1;
            !dead[i - 1]
        });

        for &di in &assoc.unmatched_detections {
            let det = &frame.detections[di];
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track {
                id,
                category: det.category.clone(),
                kalman: self.filter.initiate(&det.bbox),
                status: if self.cfg.n_init <= 1 {
                    TrackStatus::Confirmed
                } else {
                    TrackStatus::Tentative
                },
                hits: 1,
                time_since_update: 0,
                last_feature: det.feature.clone(),
                last_detection: Some(di),
                last_box: det.bbox,
            });
        }

        Ok(self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Confirmed && t.time_since_update == 0)
            .cloned()
            .collect())
    }

    /// Log lines for every live track after the latest step.
    pub fn log_records(&self) -> Vec<TrackLogRecord> {
        let frame_index = self.last_frame.unwrap_or(0);
        self.tracks
            .iter()
            .map(|t| TrackLogRecord {
                frame_index,
                id: t.id,
                category: t.category.clone(),
                bbox: t.bbox(),
                status: t.status,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Detection;
    use crate::geometry::Category;

    fn det(frame: u64, cx: f64, cy: f64) -> Detection {
        Detection {
            category: Category::object("bottle"),
            bbox: PixelBox::new(cx, cy, 40.0, 80.0).unwrap(),
            confidence: 0.9,
            feature: None,
            frame_index: frame,
            source_id: None,
        }
    }

    fn frame(i: u64, dets: Vec<Detection>) -> FrameBundle {
        FrameBundle {
            frame_index: i,
            detections: dets,
            depth: None,
            wall_dt: 1.0 / 30.0,
        }
    }

    #[test]
    fn confirms_after_n_init_hits() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        assert!(tr.step(&frame(0, vec![det(0, 100.0, 100.0)])).unwrap().is_empty());
        assert!(tr.step(&frame(1, vec![det(1, 100.0, 100.0)])).unwrap().is_empty());
        let out = tr.step(&frame(2, vec![det(2, 100.0, 100.0)])).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, 1);
        let out = tr.step(&frame(3, vec![det(3, 101.0, 100.0)])).unwrap();
        assert_eq!(out[0].id, 1);
    }

    #[test]
    fn rejects_out_of_order_frames() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.step(&frame(5, vec![])).unwrap();
        assert_eq!(
            tr.step(&frame(5, vec![])),
            Err(TrackerError::FrameOrder { last: 5, got: 5 })
        );
    }

    #[test]
    fn tentative_track_dies_on_a_miss() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.step(&frame(0, vec![det(0, 100.0, 100.0)])).unwrap();
        tr.step(&frame(1, vec![])).unwrap();
        assert!(tr.tracks().is_empty());
        tr.step(&frame(2, vec![det(2, 100.0, 100.0)])).unwrap();
        assert_eq!(tr.tracks()[0].id, 2);
    }

    #[test]
    fn coasting_track_deleted_after_max_age() {
        let cfg = TrackerConfig {
            max_age: 5,
            ..TrackerConfig::default()
        };
        let mut tr = Tracker::new(cfg).unwrap();
        for i in 0..3 {
            tr.step(&frame(i, vec![det(i, 100.0, 100.0)])).unwrap();
        }
        for i in 3..8 {
            tr.step(&frame(i, vec![])).unwrap();
            assert_eq!(tr.tracks()[0].status, TrackStatus::Lost);
        }
        tr.step(&frame(8, vec![])).unwrap();
        assert!(tr.tracks().is_empty());
    }

    #[test]
    fn occlusion_gap_keeps_identity() {
        let cfg = TrackerConfig::default();
        let mut tr = Tracker::new(cfg).unwrap();
        let pos = |i: u64| 100.0 + 2.0 * i as f64;
        let gap = (cfg.max_age - 1) as u64;
        let mut last_id = None;
        for i in 0..(10 + gap + 5) {
            let visible = !(10..10 + gap).contains(&i);
            let dets = if visible { vec![det(i, pos(i), 200.0)] } else { vec![] };
            let out = tr.step(&frame(i, dets)).unwrap();
            if visible && i >= 2 {
                assert_eq!(out.len(), 1, "frame {i}");
                if let Some(id) = last_id {
                    assert_eq!(out[0].id, id);
                }
                last_id = Some(out[0].id);
            }
        }
        assert_eq!(last_id, Some(1));
    }

    #[test]
    fn ids_never_reused() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        let mut seen = Vec::new();
        for i in 0..40u64 {
            let x = 60.0 + 90.0 * ((i / 5) % 6) as f64;
            tr.step(&frame(i, vec![det(i, x, 100.0)])).unwrap();
            for t in tr.tracks() {
                if !seen.contains(&t.id) {
                    assert!(seen.last().map_or(true, |l| t.id > *l));
                    seen.push(t.id);
                }
            }
        }
        assert!(seen.len() > 2);
    }

    #[test]
    fn exact_on_noise_free_linear_motion() {
        let cfg = TrackerConfig::default();
        let mut tr = Tracker::new(cfg).unwrap();
        let truth = |i: u64| (50.0 + 3.5 * i as f64, 300.0 - 1.25 * i as f64);
        let filter = KalmanFilter::new(cfg.kalman);
        for i in 0..60u64 {
            if i >= cfg.n_init as u64 {
                let t = &tr.tracks()[0];
                let pred = filter.predict(&t.kalman, 1.0);
                let (x, y) = truth(i);
                assert!((pred.mean[0] - x).abs() < 1e-6 && (pred.mean[1] - y).abs() < 1e-6);
            }
            let (x, y) = truth(i);
            tr.step(&frame(i, vec![det(i, x, y)])).unwrap();
        }
    }

    #[test]
    fn feature_average_stays_unit() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        for i in 0..5u64 {
            let mut d = det(i, 100.0, 100.0);
            let a = 0.1 * i as f64;
            d.feature = Some(vec![a.cos(), a.sin()]);
            tr.step(&frame(i, vec![d])).unwrap();
        }
        let f = tr.tracks()[0].last_feature.as_ref().unwrap();
        assert!((f[0].hypot(f[1]) - 1.0).abs() < 1e-12);
    }
}
