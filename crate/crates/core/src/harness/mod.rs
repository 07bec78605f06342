//! Closed-loop reproduction of the three grasping tasks with scripted agents.

pub mod agent;
pub mod layout;
pub mod metrics;
pub mod report;

pub use agent::{perceive, reach_hits, Agent, AgentConfig, AgentEvent, AgentKind};
pub use layout::{
    depth_schedule, layout_depth, layout_grasping, layout_multi, mix_seed, multi_round_of, trial_spec, DepthTrialKind,
    TaskKind, TrialSpec,
};
pub use metrics::{
    binned_detection_curve, detection_percentage, jump_histogram, jump_magnitudes, summarize, FailureReason,
    FrameRecord, MetricsError, Summary, TrialResult, JUMP_BIN_PX, JUMP_THRESHOLD_PX,
};
pub use report::{read_results_dir, write_outputs, write_report, ReportError};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bracelet::{decode, Bracelet, MockTransport};
use crate::geometry::{px_to_deg, CameraModel, Category, DepthMap};
use crate::guidance::{
    CalibrationProfile, DetourKind, GuidanceConfig, GuidanceFailure, NavigationMode, Navigator, NavigatorConfig,
    Phase, StampedDepth, VibrationCommand,
};
use crate::scene::{FrameBundle, FrameSource, NoiseConfig, Scene, SceneObject};
use crate::tracker::{Tracker, TrackerConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Tracker(#[from] crate::tracker::TrackerError),
    #[error("bracelet: {0}")]
    Bracelet(String),
}

/// Named detector noise presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseProfile {
    Zero,
    Default,
    /// Occlusion always hides the target.
    Freeze,
    /// Camera shake of 2 px.
    Jitter2,
}

impl NoiseProfile {
    pub fn config(self, cam: &CameraModel) -> NoiseConfig {
        let zero = NoiseConfig {
            feature_noise_sigma: 0.0,
            ..NoiseConfig::default()
        };
        match self {
            NoiseProfile::Zero => zero,
            NoiseProfile::Default => NoiseConfig {
                dropout_prob: 0.05,
                jitter_sigma_px: 1.0,
                ..NoiseConfig::default()
            },
            NoiseProfile::Freeze => NoiseConfig {
                dropout_prob: FREEZE_DROPOUT,
                occlusion_drop_prob: 1.0,
                ..zero
            },
            NoiseProfile::Jitter2 => NoiseConfig {
                camera_jitter_sigma_deg: px_to_deg(2.0, cam),
                ..zero
            },
        }
    }
}

/// Random dropout of the freeze profile. Occlusion alone already hides the
/// target for the last stretch of every approach (roughly 30 % of navigation
/// frames with the row layout), so any extra dropout only moves the detection
/// percentage further from the 85-92 % band.
pub const FREEZE_DROPOUT: f64 = 0.0;

impl std::str::FromStr for NoiseProfile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown noise profile {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub trials: usize,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub guidance: GuidanceConfig,
    pub navigator: NavigatorConfig,
    pub tracker: TrackerConfig,
    pub mode: NavigationMode,
    pub agent: AgentConfig,
    pub calibration: CalibrationProfile,
    pub camera: CameraModel,
    pub frame_rate_hz: f64,
    /// Depth maps are rendered every this many frames in the depth task.
    pub depth_every_frames: u64,
    pub timeout_s: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::Grasping,
            trials: 10,
            seed: 0,
            noise: NoiseProfile::Zero.config(&CameraModel::default()),
            guidance: GuidanceConfig::default(),
            navigator: NavigatorConfig::default(),
            tracker: TrackerConfig::default(),
            mode: NavigationMode::default(),
            agent: AgentConfig::default(),
            calibration: CalibrationProfile::default(),
            camera: CameraModel::default(),
            frame_rate_hz: 30.0,
            depth_every_frames: 15,
            timeout_s: 120.0,
        }
    }
}

impl TaskConfig {
    pub fn new(kind: TaskKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.trials == 0 {
            return bad("trials must be > 0".into());
        }
        if !(self.frame_rate_hz > 0.0) || !(self.timeout_s > 0.0) || self.depth_every_frames == 0 {
            return bad("frame rate, timeout and depth interval must be positive".into());
        }
        self.noise.validate().map_err(HarnessError::Config)?;
        self.agent.validate().map_err(HarnessError::Config)?;
        self.guidance.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.tracker.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.calibration.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.camera.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}

/// One finished task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRun {
    pub config: TaskConfig,
    pub results: Vec<TrialResult>,
    /// Bracelet traffic per trial, as `timestamp_ms,hex` lines.
    pub wire: Vec<String>,
}

/// How a trial ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialEnd {
    pub success: bool,
    pub failure_reason: Option<FailureReason>,
}

/// Closed loop for one trial, advanced a frame at a time: render, track,
/// guide, send over the bracelet link, move the agent.
#[derive(Debug)]
pub struct TrialRunner {
    pub trial_index: usize,
    pub scene: Scene,
    pub target: SceneObject,
    pub navigator: Navigator,
    pub agent: Agent,
    pub depth_kind: Option<DepthTrialKind>,
    camera: CameraModel,
    frame_rate_hz: f64,
    depth_every: Option<u64>,
    max_frames: u64,
    source: FrameSource,
    tracker: Tracker,
    bracelet: Bracelet<MockTransport>,
    depth: Option<(DepthMap, f64)>,
    log: Vec<FrameRecord>,
    planned_detour: Option<DepthTrialKind>,
    move_back_pulses: u32,
    frame: u64,
    end: Option<TrialEnd>,
}

impl TrialRunner {
    /// Trial `trial_index` of the configured task, with its scheduled layout and target.
    pub fn new(cfg: &TaskConfig, trial_index: usize) -> Result<Self, HarnessError> {
        let spec = trial_spec(cfg.kind, cfg.seed, trial_index);
        Self::with_spec(cfg, trial_index, spec)
    }

    pub fn with_spec(cfg: &TaskConfig, trial_index: usize, spec: TrialSpec) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let target = spec
            .scene
            .object(&spec.target_id)
            .cloned()
            .ok_or_else(|| HarnessError::Config(format!("target {} missing from layout", spec.target_id)))?;
        let noise = NoiseConfig {
            seed: mix_seed(cfg.seed, 10, trial_index as u64),
            ..cfg.noise
        };
        Ok(Self {
            trial_index,
            scene: spec.scene,
            target,
            navigator: Navigator::new(spec.target_category, cfg.mode, cfg.guidance, cfg.navigator, cfg.calibration),
            agent: Agent::new(
                cfg.agent,
                cfg.calibration,
                ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 11, trial_index as u64)),
            ),
            depth_kind: spec.depth_kind,
            camera: cfg.camera,
            frame_rate_hz: cfg.frame_rate_hz,
            depth_every: (cfg.kind == TaskKind::Depth).then_some(cfg.depth_every_frames),
            max_frames: (cfg.timeout_s * cfg.frame_rate_hz).ceil() as u64,
            source: FrameSource::new(cfg.camera, noise, cfg.frame_rate_hz),
            tracker: Tracker::new(cfg.tracker)?,
            bracelet: Bracelet::new(MockTransport::new()),
            depth: None,
            log: Vec::new(),
            planned_detour: None,
            move_back_pulses: 0,
            frame: 0,
            end: None,
        })
    }

    pub fn end(&self) -> Option<TrialEnd> {
        self.end
    }

    pub fn log(&self) -> &[FrameRecord] {
        &self.log
    }

    /// Runs one frame. Returns the outcome once the trial has ended.
    pub fn step(&mut self) -> Result<Option<TrialEnd>, HarnessError> {
        if self.end.is_some() {
            return Ok(self.end);
        }
        let frame = self.frame;
        if frame >= self.max_frames {
            self.end = Some(TrialEnd {
                success: false,
                failure_reason: Some(FailureReason::Timeout),
            });
            return Ok(self.end);
        }
        self.frame += 1;
        let dt = 1.0 / self.frame_rate_hz;
        let t = frame as f64 * dt;
        let with_depth = self.depth_every.is_some_and(|n| frame % n == 0);
        let mut bundle = self.source.next_frame(&self.scene, with_depth);
        if let Some(d) = bundle.depth.take() {
            self.depth = Some((d, t));
        }
        self.tracker.step(&bundle)?;
        let stamped = self.depth.as_ref().map(|(map, time_s)| StampedDepth { map, time_s: *time_s });
        let step = self.navigator.step(self.tracker.tracks(), stamped, t);
        if self.planned_detour.is_none() {
            self.planned_detour = self.navigator.state.detour.map(|p| match p.kind {
                DetourKind::Above { .. } => DepthTrialKind::Above,
                DetourKind::Back => DepthTrialKind::Back,
            });
        }

        let mut wire = None;
        if let Some(cmd) = step.outcome.command {
            let ts_ms = (frame as f64 * 1000.0 / self.frame_rate_hz).round() as u64;
            let sent = self.bracelet.send(&cmd, ts_ms).map_err(|e| HarnessError::Bracelet(e.to_string()))?;
            let (received, _) = decode(sent.bytes()).map_err(|e| HarnessError::Bracelet(e.to_string()))?;
            if matches!(received, VibrationCommand::MoveBackPulse { .. }) {
                self.move_back_pulses += 1;
            }
            self.agent.command(received, t);
            wire = Some(sent.to_hex());
        }
        self.log.push(FrameRecord {
            trial: self.trial_index,
            frame,
            t,
            phase: step.phase,
            navigating: step.outcome.navigating,
            hand: step.hand,
            target: step.outcome.target.map(|(b, _)| b),
            source: step.outcome.target.map(|(_, s)| s),
            target_track: step.target_track,
            theta: step.outcome.theta,
            command: step.outcome.command,
            wire,
        });

        let fail = |why| Some(TrialEnd {
            success: false,
            failure_reason: Some(why),
        });
        if step.phase == Phase::Failed {
            self.end = fail(match self.navigator.state.failure {
                Some(GuidanceFailure::HandLost) => FailureReason::HandLost,
                _ => FailureReason::TargetLost,
            });
        } else if let AgentEvent::Reached { hit, .. } = self.agent.advance(&mut self.scene, &self.target, &self.camera, t, dt) {
            self.navigator.state.finish();
            self.end = if hit {
                Some(TrialEnd {
                    success: true,
                    failure_reason: None,
                })
            } else {
                fail(FailureReason::MissedGrasp)
            };
        } else if self.scene.objects.iter().any(|o| o.is_obstacle && o.intersects(&self.scene.hand)) {
            self.end = fail(FailureReason::Collision);
        }
        Ok(self.end)
    }

    /// Result and bracelet dump. A trial still running is reported as timed out.
    pub fn finish(self) -> (TrialResult, String) {
        let end = self.end.unwrap_or(TrialEnd {
            success: false,
            failure_reason: Some(FailureReason::Timeout),
        });
        let end_t = self.log.last().map_or(0.0, |r| r.t);
        let st = &self.navigator.state;
        let navigation_duration_s = match st.navigation_started_at {
            Some(start) => (st.grasp_signaled_at.unwrap_or(end_t) - start).max(0.0),
            None => 0.0,
        };
        let result = TrialResult {
            trial_index: self.trial_index,
            target_id: self.target.id.clone(),
            success: end.success,
            failure_reason: end.failure_reason,
            navigation_duration_s,
            detection_percentage: detection_percentage(&self.log).unwrap_or(0.0),
            jump_magnitudes_px: jump_magnitudes(&self.log),
            grasp_pulses: st.grasp_pulses,
            move_back_pulses: self.move_back_pulses,
            depth_kind: self.depth_kind,
            planned_detour: self.planned_detour,
            log: self.log,
        };
        (result, self.bracelet.transport().dump())
    }
}

/// Runs trial `trial_index` of the task. Depends only on the config and the index.
pub fn run_trial(cfg: &TaskConfig, trial_index: usize) -> Result<(TrialResult, String), HarnessError> {
    let mut runner = TrialRunner::new(cfg, trial_index)?;
    while runner.step()?.is_none() {}
    Ok(runner.finish())
}

/// Runs every trial of the task in order.
pub fn run_task(cfg: &TaskConfig) -> Result<TaskRun, HarnessError> {
    cfg.validate()?;
    let mut results = Vec::with_capacity(cfg.trials);
    let mut wire = Vec::with_capacity(cfg.trials);
    for i in 0..cfg.trials {
        let (r, w) = run_trial(cfg, i)?;
        results.push(r);
        wire.push(w);
    }
    Ok(TaskRun {
        config: cfg.clone(),
        results,
        wire,
    })
}

/// Open-loop guidance over a recorded frame stream: nobody moves the hand,
/// the log shows what the bracelet would have been told.
pub fn guide_recorded(cfg: &TaskConfig, wanted: Category, frames: &[FrameBundle]) -> Result<Vec<FrameRecord>, HarnessError> {
    cfg.validate()?;
    let mut tracker = Tracker::new(cfg.tracker)?;
    let mut navigator = Navigator::new(wanted, cfg.mode, cfg.guidance, cfg.navigator, cfg.calibration);
    let mut depth: Option<(DepthMap, f64)> = None;
    let mut log = Vec::with_capacity(frames.len());
    for bundle in frames {
        let t = bundle.frame_index as f64 / cfg.frame_rate_hz;
        if let Some(d) = &bundle.depth {
            depth = Some((d.clone(), t));
        }
        tracker.step(bundle)?;
        let stamped = depth.as_ref().map(|(map, time_s)| StampedDepth { map, time_s: *time_s });
        let step = navigator.step(tracker.tracks(), stamped, t);
        log.push(FrameRecord {
            trial: 0,
            frame: bundle.frame_index,
            t,
            phase: step.phase,
            navigating: step.outcome.navigating,
            hand: step.hand,
            target: step.outcome.target.map(|(b, _)| b),
            source: step.outcome.target.map(|(_, s)| s),
            target_track: step.target_track,
            theta: step.outcome.theta,
            command: step.outcome.command,
            wire: None,
        });
    }
    Ok(log)
}
