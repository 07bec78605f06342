//! Navigation state machine: turns hand and target boxes (plus optional depth
//! maps) into vibration commands.

mod depth;
mod motor;
mod navigator;

pub use depth::{
    box_depth, center_depth, nearer_than, obstacle_base_depth, plan_depth_detour, DetourKind, DetourPlan,
};
pub use motor::{
    angle_to_intensities, calibrate_adjust, direction_angle, motor_weights, normalize_deg, AdjustDirection,
    CalibrationProfile, CommandKind, Motor, MotorQuad, VibrationCommand, CALIBRATION_BASELINE, CALIBRATION_STEP,
};
pub use navigator::{select_target, NavStep, Navigator, NavigatorConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, overlap_fraction, DepthMap, PixelBox};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GuidanceError {
    #[error("hand and target centers coincide")]
    CoincidentCenters,
    #[error("target lost for {0} frames")]
    TargetLost(u32),
    #[error("target depth unreadable")]
    DegenerateDepth,
    #[error("no confirmed track of category {0}")]
    NoCandidate(String),
    #[error("invalid motor quad: {0}")]
    InvalidQuad(String),
    #[error("calibration gains must lie in [0, 1]")]
    InvalidCalibration,
    #[error("invalid guidance config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingDetection,
    Navigate2d,
    NavigateHorizontal,
    NavigateVertical,
    DetourAbove,
    DetourBack,
    GraspSignaled,
    Done,
    Failed,
}

impl Phase {
    pub fn is_navigation(self) -> bool {
        matches!(
            self,
            Phase::Navigate2d | Phase::NavigateHorizontal | Phase::NavigateVertical | Phase::DetourAbove | Phase::DetourBack
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::GraspSignaled | Phase::Done | Phase::Failed)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NavigationMode {
    #[default]
    #[serde(rename = "interpolated_2d")]
    Interpolated2d,
    #[serde(rename = "axis_sequential")]
    AxisSequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    Live,
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceFailure {
    TargetLost,
    HandLost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub align_eps_px: f64,
    pub freeze_overlap_min: f64,
    pub unfreeze_iou_min: f64,
    pub lost_target_timeout: u32,
    pub lost_hand_timeout: u32,
    pub depth_margin_m: f64,
    /// Obstacles reaching above this row force a move-back detour.
    pub above_max_top_row_px: f64,
    pub clearance_px: f64,
    pub command_rate_hz: f64,
    /// Depth maps older than this (stream seconds) are ignored.
    pub depth_max_age_s: f64,
    pub grasp_pulse_ms: u32,
    pub move_back_pulse_ms: u32,
    pub move_back_gap_ms: u32,
    pub move_back_rate_hz: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            align_eps_px: 25.0,
            freeze_overlap_min: 0.3,
            unfreeze_iou_min: 0.3,
            lost_target_timeout: 60,
            lost_hand_timeout: 60,
            depth_margin_m: 0.05,
            above_max_top_row_px: 0.2 * crate::geometry::DEFAULT_HEIGHT_PX as f64,
            clearance_px: 30.0,
            command_rate_hz: 10.0,
            depth_max_age_s: 1.0,
            grasp_pulse_ms: 500,
            move_back_pulse_ms: 200,
            move_back_gap_ms: 100,
            move_back_rate_hz: 1.0,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        let non_neg = [
            self.align_eps_px,
            self.freeze_overlap_min,
            self.unfreeze_iou_min,
            self.depth_margin_m,
            self.above_max_top_row_px,
            self.clearance_px,
            self.depth_max_age_s,
        ];
        if non_neg.iter().any(|v| !(*v >= 0.0)) {
            return Err(GuidanceError::Config("thresholds must be >= 0".into()));
        }
        if !(self.command_rate_hz > 0.0) || !(self.move_back_rate_hz > 0.0) {
            return Err(GuidanceError::Config("rates must be > 0".into()));
        }
        Ok(())
    }

    fn grasp_pulse(&self) -> VibrationCommand {
        VibrationCommand::GraspPulse {
            duration_ms: self.grasp_pulse_ms,
        }
    }

    fn move_back_pulse(&self) -> VibrationCommand {
        VibrationCommand::MoveBackPulse {
            duration_ms: self.move_back_pulse_ms,
            gap_ms: self.move_back_gap_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceState {
    pub phase: Phase,
    pub mode: NavigationMode,
    pub target_lock: Option<u64>,
    pub frozen_box: Option<PixelBox>,
    pub last_live_box: Option<PixelBox>,
    pub detour: Option<DetourPlan>,
    /// Set once a detour has been completed; no further plans are made.
    pub detour_done: bool,
    pub frames_without_hand: u32,
    pub frames_without_target: u32,
    pub grasp_pulses: u32,
    pub failure: Option<GuidanceFailure>,
    pub navigation_started_at: Option<f64>,
    pub grasp_signaled_at: Option<f64>,
    pub last_command: Option<VibrationCommand>,
    next_command_at: f64,
    next_pulse_at: f64,
    last_pulse_at: f64,
    planned_depth_frame: Option<u64>,
}

impl GuidanceState {
    pub fn new(mode: NavigationMode) -> Self {
        Self {
            phase: Phase::AwaitingDetection,
            mode,
            target_lock: None,
            frozen_box: None,
            last_live_box: None,
            detour: None,
            detour_done: false,
            frames_without_hand: 0,
            frames_without_target: 0,
            grasp_pulses: 0,
            failure: None,
            navigation_started_at: None,
            grasp_signaled_at: None,
            last_command: None,
            next_command_at: f64::NEG_INFINITY,
            next_pulse_at: f64::NEG_INFINITY,
            last_pulse_at: f64::NEG_INFINITY,
            planned_depth_frame: None,
        }
    }

    fn navigation_phase(&self) -> Phase {
        match self.mode {
            NavigationMode::Interpolated2d => Phase::Navigate2d,
            NavigationMode::AxisSequential => Phase::NavigateHorizontal,
        }
    }

    fn fail(&mut self, why: GuidanceFailure) {
        self.phase = Phase::Failed;
        self.failure = Some(why);
        self.frozen_box = None;
    }

    /// Marks a signaled grasp as completed.
    pub fn finish(&mut self) {
        if self.phase == Phase::GraspSignaled {
            self.phase = Phase::Done;
        }
    }
}

/// Per-axis alignment test.
pub fn grasp_ready(hand: &PixelBox, target: &PixelBox, eps: f64) -> bool {
    (hand.cx - target.cx).abs() <= eps && (hand.cy - target.cy).abs() <= eps
}

/// Live or frozen target box for this frame. `Ok(None)` means the target is
/// momentarily missing and the previous command should be held.
pub fn effective_target_box(
    observed: Option<&PixelBox>,
    hand: Option<&PixelBox>,
    state: &mut GuidanceState,
    cfg: &GuidanceConfig,
) -> Result<Option<(PixelBox, TargetSource)>, GuidanceError> {
    if let Some(obs) = observed {
        state.frames_without_target = 0;
        match state.frozen_box {
            Some(frozen) if iou(obs, &frozen) < cfg.unfreeze_iou_min => return Ok(Some((frozen, TargetSource::Frozen))),
            _ => {
                state.frozen_box = None;
                state.last_live_box = Some(*obs);
                return Ok(Some((*obs, TargetSource::Live)));
            }
        }
    }
    state.frames_without_target += 1;
    if let Some(frozen) = state.frozen_box {
        return Ok(Some((frozen, TargetSource::Frozen)));
    }
    if let (Some(h), Some(last)) = (hand, state.last_live_box) {
        if overlap_fraction(h, &last) >= cfg.freeze_overlap_min {
            state.frozen_box = Some(last);
            return Ok(Some((last, TargetSource::Frozen)));
        }
    }
    if state.frames_without_target > cfg.lost_target_timeout {
        return Err(GuidanceError::TargetLost(state.frames_without_target));
    }
    Ok(None)
}

/// A depth map together with the stream time it was captured at.
#[derive(Debug, Clone, Copy)]
pub struct StampedDepth<'a> {
    pub map: &'a DepthMap,
    pub time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOutcome {
    pub command: Option<VibrationCommand>,
    pub target: Option<(PixelBox, TargetSource)>,
    pub theta: Option<f64>,
    /// Whether this step belonged to the navigation part of the trial.
    pub navigating: bool,
}

/// Newline-delimited guidance event record, one per emitted command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceEvent {
    pub t: f64,
    pub phase: Phase,
    pub theta: Option<f64>,
    pub quad: Option<MotorQuad>,
    pub command: CommandKind,
    pub source: Option<TargetSource>,
}

impl GuidanceEvent {
    pub fn from_outcome(t: f64, phase: Phase, out: &StepOutcome) -> Option<Self> {
        let cmd = out.command?;
        Some(Self {
            t,
            phase,
            theta: out.theta,
            quad: cmd.quad(),
            command: cmd.kind(),
            source: out.target.map(|(_, s)| s),
        })
    }
}

fn horizontal_theta(dx: f64) -> f64 {
    if dx >= 0.0 {
        90.0
    } else {
        270.0
    }
}

/// Advances the state machine by one frame.
///
/// State (freezing, counters, detour planning) updates every call; commands
/// are rate-limited to `command_rate_hz` of stream time, so the caller may
/// step at frame rate.
pub fn guidance_step(
    state: &mut GuidanceState,
    hand: Option<&PixelBox>,
    target_obs: Option<&PixelBox>,
    depth: Option<StampedDepth<'_>>,
    cal: &CalibrationProfile,
    cfg: &GuidanceConfig,
    now: f64,
) -> StepOutcome {
    let mut out = StepOutcome::default();
    if state.phase.is_terminal() {
        return out;
    }

    if state.phase == Phase::AwaitingDetection {
        match (hand, target_obs) {
            (Some(_), Some(t)) => {
                state.phase = state.navigation_phase();
                state.navigation_started_at = Some(now);
                state.last_live_box = Some(*t);
                state.frames_without_target = 0;
            }
            _ => return out,
        }
    }
    out.navigating = true;

    let target = match effective_target_box(target_obs, hand, state, cfg) {
        Ok(t) => t,
        Err(_) => {
            state.fail(GuidanceFailure::TargetLost);
            out.command = emit(state, VibrationCommand::Stop);
            return out;
        }
    };
    out.target = target;

    let Some(hand) = hand else {
        state.frames_without_hand += 1;
        if state.frames_without_hand > cfg.lost_hand_timeout {
            state.fail(GuidanceFailure::HandLost);
            out.command = emit(state, VibrationCommand::Stop);
        }
        return out;
    };
    state.frames_without_hand = 0;
    let Some((tbox, _)) = target else {
        return out;
    };

    let fresh = depth.filter(|d| now - d.time_s <= cfg.depth_max_age_s);
    if let Some(d) = fresh {
        let unplanned = state.planned_depth_frame != Some(d.map.frame_index);
        let can_plan = matches!(state.phase, Phase::Navigate2d | Phase::NavigateHorizontal | Phase::NavigateVertical);
        if unplanned && can_plan && !state.detour_done {
            state.planned_depth_frame = Some(d.map.frame_index);
            if let Ok(Some(plan)) = plan_depth_detour(d.map, hand, &tbox, cfg) {
                state.detour = Some(plan);
                state.phase = match plan.kind {
                    DetourKind::Above { .. } => Phase::DetourAbove,
                    DetourKind::Back => Phase::DetourBack,
                };
            }
        }
    }

    if now < state.next_command_at {
        return out;
    }

    let dx = tbox.cx - hand.cx;
    let dy = tbox.cy - hand.cy;
    let theta = match state.phase {
        Phase::DetourBack => {
            let plan = state.detour.expect("detour phase has a plan");
            // only a map taken after the last pulse shows where the hand went
            let clear = fresh.filter(|d| d.time_s > state.last_pulse_at).is_some_and(|d| {
                let hand_depth = center_depth(d.map, hand);
                let obstacle = obstacle_base_depth(d.map, &plan, hand, cfg.depth_margin_m);
                match (hand_depth, obstacle) {
                    (Some(h), Some(o)) => nearer_than(h, o, cfg.depth_margin_m, d.map.mode),
                    (Some(_), None) => true,
                    _ => false,
                }
            });
            if !clear {
                if now >= state.next_pulse_at {
                    state.next_pulse_at = now + 1.0 / cfg.move_back_rate_hz - 1e-9;
                    state.last_pulse_at = now;
                    state.next_command_at = now + 1.0 / cfg.command_rate_hz - 1e-9;
                    out.command = emit(state, cfg.move_back_pulse());
                }
                return out;
            }
            state.detour_done = true;
            state.phase = state.navigation_phase();
            None
        }
        Phase::DetourAbove => {
            let plan = state.detour.expect("detour phase has a plan");
            let DetourKind::Above { clearance_row_px } = plan.kind else {
                unreachable!("above phase holds an above plan")
            };
            let (lo, hi) = plan.obstacle_cols;
            let past = if dx < 0.0 { hand.right() < lo } else { hand.left() > hi };
            if hand.bottom() >= clearance_row_px {
                Some(0.0)
            } else if !past && dx.abs() > cfg.align_eps_px {
                Some(horizontal_theta(dx))
            } else {
                state.detour_done = true;
                state.phase = state.navigation_phase();
                None
            }
        }
        _ => None,
    };

    if let Some(theta) = theta {
        state.next_command_at = now + 1.0 / cfg.command_rate_hz - 1e-9;
        out.theta = Some(theta);
        out.command = emit(state, VibrationCommand::Direction {
            quad: angle_to_intensities(theta, cal),
        });
        return out;
    }

    if grasp_ready(hand, &tbox, cfg.align_eps_px) {
        state.phase = Phase::GraspSignaled;
        state.frozen_box = None;
        state.grasp_pulses += 1;
        state.grasp_signaled_at = Some(now);
        out.command = emit(state, cfg.grasp_pulse());
        return out;
    }

    let theta = match state.mode {
        NavigationMode::Interpolated2d => direction_angle(hand.center(), tbox.center()).unwrap_or(0.0),
        NavigationMode::AxisSequential => {
            if dx.abs() > cfg.align_eps_px {
                state.phase = Phase::NavigateHorizontal;
                horizontal_theta(dx)
            } else {
                state.phase = Phase::NavigateVertical;
                if dy < 0.0 {
                    0.0
                } else {
                    180.0
                }
            }
        }
    };
    state.next_command_at = now + 1.0 / cfg.command_rate_hz - 1e-9;
    out.theta = Some(theta);
    out.command = emit(state, VibrationCommand::Direction {
        quad: angle_to_intensities(theta, cal),
    });
    out
}

fn emit(state: &mut GuidanceState, cmd: VibrationCommand) -> Option<VibrationCommand> {
    state.last_command = Some(cmd);
    Some(cmd)
}
