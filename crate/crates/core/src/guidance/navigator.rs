//! Glue between tracker output and the guidance state machine: picks the
//! wearer's hand, locks a target track, and re-locks when that track dies.

use serde::{Deserialize, Serialize};

use super::{
    guidance_step, CalibrationProfile, GuidanceConfig, GuidanceError, GuidanceState, NavigationMode, Phase,
    StampedDepth, StepOutcome, TargetSource,
};
use crate::geometry::{iou, Category, HandKind, PixelBox};
use crate::tracker::{Track, TrackStatus};

fn updated_confirmed(t: &Track) -> bool {
    t.status == TrackStatus::Confirmed && t.time_since_update == 0
}

/// Leftmost (smallest center x) confirmed track of the wanted category;
/// ties go to the lower id.
pub fn select_target(tracks: &[Track], wanted: &Category) -> Result<u64, GuidanceError> {
    tracks
        .iter()
        .filter(|t| t.status == TrackStatus::Confirmed && &t.category == wanted)
        .min_by(|a, b| a.bbox().cx.total_cmp(&b.bbox().cx).then(a.id.cmp(&b.id)))
        .map(|t| t.id)
        .ok_or_else(|| GuidanceError::NoCandidate(wanted.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavigatorConfig {
    pub hand_kind: HandKind,
    /// Treat target observations whose center jumps more than
    /// `lock_guard_px` from the previous effective center as missing.
    pub lock_guard: bool,
    pub lock_guard_px: f64,
}

impl Default for NavigatorConfig {
    fn default() -> Self {
        Self {
            hand_kind: HandKind::MyRight,
            lock_guard: false,
            lock_guard_px: 90.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavStep {
    pub outcome: StepOutcome,
    pub phase: Phase,
    pub hand: Option<PixelBox>,
    pub target_track: Option<u64>,
}

impl NavStep {
    pub fn live(&self) -> bool {
        matches!(self.outcome.target, Some((_, TargetSource::Live)))
    }
}

#[derive(Debug, Clone)]
pub struct Navigator {
    pub guidance: GuidanceConfig,
    pub config: NavigatorConfig,
    pub calibration: CalibrationProfile,
    pub wanted: Category,
    pub state: GuidanceState,
    last_effective: Option<PixelBox>,
}

impl Navigator {
    pub fn new(
        wanted: Category,
        mode: NavigationMode,
        guidance: GuidanceConfig,
        config: NavigatorConfig,
        calibration: CalibrationProfile,
    ) -> Self {
        Self {
            guidance,
            config,
            calibration,
            wanted,
            state: GuidanceState::new(mode),
            last_effective: None,
        }
    }

    fn hand_box(&self, tracks: &[Track]) -> Option<PixelBox> {
        let want = Category::hand(self.config.hand_kind);
        tracks
            .iter()
            .filter(|t| updated_confirmed(t) && t.category == want)
            .min_by_key(|t| t.id)
            .map(|t| t.bbox())
    }

    fn relock(&mut self, tracks: &[Track]) {
        let alive = |id: u64| tracks.iter().any(|t| t.id == id);
        if self.state.target_lock.is_some_and(alive) {
            return;
        }
        if self.state.phase == Phase::AwaitingDetection {
            let fresh: Vec<Track> = tracks.iter().filter(|t| updated_confirmed(t)).cloned().collect();
            self.state.target_lock = select_target(&fresh, &self.wanted).ok();
            return;
        }
        self.state.target_lock = None;
        let Some(reference) = self.state.frozen_box.or(self.state.last_live_box) else {
            return;
        };
        self.state.target_lock = tracks
            .iter()
            .filter(|t| updated_confirmed(t) && t.category == self.wanted)
            .map(|t| (iou(&t.bbox(), &reference), t.id))
            .filter(|(o, _)| *o >= self.guidance.unfreeze_iou_min)
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
            .map(|(_, id)| id);
    }

    /// One frame. `tracks` is every live track of the tracker after its step.
    pub fn step(&mut self, tracks: &[Track], depth: Option<StampedDepth<'_>>, now: f64) -> NavStep {
        let hand = self.hand_box(tracks);
        self.relock(tracks);
        let mut observed = self
            .state
            .target_lock
            .and_then(|id| tracks.iter().find(|t| t.id == id && updated_confirmed(t)))
            .map(|t| t.bbox());
        if self.config.lock_guard {
            if let (Some(o), Some(prev)) = (observed, self.last_effective) {
                if (o.cx - prev.cx).abs() > self.config.lock_guard_px {
                    observed = None;
                }
            }
        }
        let outcome = guidance_step(
            &mut self.state,
            hand.as_ref(),
            observed.as_ref(),
            depth,
            &self.calibration,
            &self.guidance,
            now,
        );
        if let Some((b, _)) = outcome.target {
            self.last_effective = Some(b);
        }
        NavStep {
            outcome,
            phase: self.state.phase,
            hand,
            target_track: self.state.target_lock,
        }
    }
}
