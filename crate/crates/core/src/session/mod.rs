//! Interactive control plane: one session owns a scene, tracker and guidance
//! loop, accepts operator messages between frames and emits snapshots.
//!
//! The [`Session`] type does no I/O; [`server`] puts it behind a socket and
//! [`transcript`] records and replays its inbound messages.

pub mod server;
pub mod transcript;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Category, PixelBox};
use crate::guidance::{
    calibrate_adjust, AdjustDirection, CalibrationProfile, CommandKind, Motor, MotorQuad, NavigationMode, Phase,
    TargetSource, VibrationCommand,
};
use crate::harness::{
    detection_percentage, summarize, trial_spec, AgentKind, FailureReason, HarnessError, TaskConfig, TaskKind,
    TrialResult, TrialRunner,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SNAPSHOT_HZ: f64 = 15.0;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

/// Operator messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionMessage {
    CreateSession {
        task: TaskKind,
        seed: u64,
        #[serde(default)]
        mode: NavigationMode,
    },
    SetTarget {
        category: String,
    },
    StartTrial,
    AbortTrial,
    CalibAdjust {
        motor: Motor,
        dir: AdjustDirection,
    },
    /// Hand velocity in px/s; only for the human-steered agent.
    SteerHand {
        vx: f64,
        vy: f64,
    },
    SetAgent {
        kind: AgentKind,
    },
    Shutdown,
}

impl SessionMessage {
    pub fn name(&self) -> &'static str {
        match self {
            SessionMessage::CreateSession { .. } => "create_session",
            SessionMessage::SetTarget { .. } => "set_target",
            SessionMessage::StartTrial => "start_trial",
            SessionMessage::AbortTrial => "abort_trial",
            SessionMessage::CalibAdjust { .. } => "calib_adjust",
            SessionMessage::SteerHand { .. } => "steer_hand",
            SessionMessage::SetAgent { .. } => "set_agent",
            SessionMessage::Shutdown => "shutdown",
        }
    }
}

/// Wire form of an inbound message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(default = "schema_version")]
    pub v: u32,
    #[serde(flatten)]
    pub msg: SessionMessage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Idle,
    Running,
    Closed,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{msg} not allowed while {phase:?}")]
    InvalidPhase { msg: &'static str, phase: SessionPhase },
    #[error("no object of category {0:?} in the scene")]
    UnknownCategory(String),
    #[error("steering needs the human_bridge agent")]
    SteerRejected,
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::InvalidPhase { .. } => "invalid_phase",
            SessionError::UnknownCategory(_) => "unknown_category",
            SessionError::SteerRejected => "steer_rejected",
            SessionError::Harness(_) => "config",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveMetrics {
    pub trials: usize,
    pub successes: usize,
    pub mean_duration_s: Option<f64>,
    /// Detection percentage of the running trial so far.
    pub detection_so_far: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub v: u32,
    pub t: f64,
    pub frame: u64,
    pub session_phase: SessionPhase,
    /// `idle` between trials, otherwise the guidance phase.
    pub phase: String,
    pub hand: Option<PixelBox>,
    pub target: Option<PixelBox>,
    pub source: Option<TargetSource>,
    /// Motor levels of the latest command; zero unless it was a direction.
    pub quad: MotorQuad,
    /// Command emitted since the previous snapshot.
    pub command: Option<CommandKind>,
    pub last_command: Option<CommandKind>,
    pub gains: [f64; 4],
    pub trial_index: usize,
    pub task: TaskKind,
    pub target_category: Option<String>,
    pub agent: AgentKind,
    pub metrics: LiveMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial_index: usize,
    pub target_id: String,
    pub success: bool,
    pub failure_reason: Option<FailureReason>,
    pub navigation_duration_s: f64,
    pub detection_percentage: f64,
}

impl From<&TrialResult> for TrialSummary {
    fn from(r: &TrialResult) -> Self {
        Self {
            trial_index: r.trial_index,
            target_id: r.target_id.clone(),
            success: r.success,
            failure_reason: r.failure_reason,
            navigation_duration_s: r.navigation_duration_s,
            detection_percentage: r.detection_percentage,
        }
    }
}

/// Everything a session sends out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    Snapshot(Snapshot),
    Ack { request: String },
    Error { code: String, message: String },
    Created { session: u64 },
    TrialEnded(TrialSummary),
}

impl Outbound {
    pub fn from_result(request: &SessionMessage, r: Result<(), SessionError>) -> Self {
        match r {
            Ok(()) => Outbound::Ack {
                request: request.name().to_string(),
            },
            Err(e) => Outbound::Error {
                code: e.code().to_string(),
                message: e.to_string(),
            },
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }
}

pub struct Session {
    config: TaskConfig,
    phase: SessionPhase,
    target_override: Option<Category>,
    trial_index: usize,
    runner: Option<TrialRunner>,
    results: Vec<TrialResult>,
    steer: (f64, f64),
    frame: u64,
    snapshot_every: u64,
    last_command: Option<VibrationCommand>,
    command_since_snapshot: Option<CommandKind>,
}

impl Default for Session {
    fn default() -> Self {
        Self::new(TaskConfig::default())
    }
}

impl Session {
    pub fn new(config: TaskConfig) -> Self {
        let snapshot_every = (config.frame_rate_hz / DEFAULT_SNAPSHOT_HZ).round().max(1.0) as u64;
        Self {
            config,
            phase: SessionPhase::Idle,
            target_override: None,
            trial_index: 0,
            runner: None,
            results: Vec::new(),
            steer: (0.0, 0.0),
            frame: 0,
            snapshot_every,
            last_command: None,
            command_since_snapshot: None,
        }
    }

    pub fn phase(&self) -> SessionPhase {
        self.phase
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn results(&self) -> &[TrialResult] {
        &self.results
    }

    pub fn calibration(&self) -> CalibrationProfile {
        self.config.calibration
    }

    fn require(&self, msg: &SessionMessage, ok: &[SessionPhase]) -> Result<(), SessionError> {
        if ok.contains(&self.phase) {
            Ok(())
        } else {
            Err(SessionError::InvalidPhase {
                msg: msg.name(),
                phase: self.phase,
            })
        }
    }

    /// Applies one message. Runs between frames, so a snapshot never sees
    /// it half applied.
    pub fn handle(&mut self, msg: &SessionMessage) -> Result<(), SessionError> {
        use SessionPhase::*;
        match msg {
            SessionMessage::CreateSession { task, seed, mode } => {
                self.require(msg, &[Idle])?;
                let mut config = TaskConfig {
                    kind: *task,
                    seed: *seed,
                    mode: *mode,
                    ..self.config.clone()
                };
                config.calibration = CalibrationProfile::default();
                config.validate()?;
                *self = Self {
                    frame: self.frame,
                    ..Self::new(config)
                };
            }
            SessionMessage::SetTarget { category } => {
                self.require(msg, &[Idle])?;
                let scene = trial_spec(self.config.kind, self.config.seed, self.trial_index).scene;
                if !scene.objects.iter().any(|o| &o.category.label == category) {
                    return Err(SessionError::UnknownCategory(category.clone()));
                }
                self.target_override = Some(Category::object(category.clone()));
            }
            SessionMessage::StartTrial => {
                self.require(msg, &[Idle])?;
                let mut spec = trial_spec(self.config.kind, self.config.seed, self.trial_index);
                if let Some(cat) = &self.target_override {
                    let obj = spec
                        .scene
                        .objects
                        .iter()
                        .filter(|o| &o.category == cat)
                        .min_by(|a, b| a.position[0].total_cmp(&b.position[0]))
                        .ok_or_else(|| SessionError::UnknownCategory(cat.label.clone()))?;
                    spec.target_id = obj.id.clone();
                    spec.target_category = cat.clone();
                }
                let mut runner = TrialRunner::with_spec(&self.config, self.trial_index, spec)?;
                runner.agent.steer(self.steer.0, self.steer.1);
                self.runner = Some(runner);
                self.last_command = None;
                self.phase = Running;
            }
            SessionMessage::AbortTrial => {
                self.require(msg, &[Running])?;
                self.runner = None;
                self.phase = Idle;
            }
            SessionMessage::CalibAdjust { motor, dir } => {
                self.require(msg, &[Idle, Running])?;
                let cal = calibrate_adjust(&self.config.calibration, *motor, *dir);
                self.config.calibration = cal;
                if let Some(r) = &mut self.runner {
                    r.navigator.calibration = cal;
                    r.agent.calibration = cal;
                }
            }
            SessionMessage::SteerHand { vx, vy } => {
                self.require(msg, &[Idle, Running])?;
                if self.config.agent.kind != AgentKind::HumanBridge {
                    return Err(SessionError::SteerRejected);
                }
                self.steer = (*vx, *vy);
                if let Some(r) = &mut self.runner {
                    r.agent.steer(*vx, *vy);
                }
            }
            SessionMessage::SetAgent { kind } => {
                self.require(msg, &[Idle])?;
                self.config.agent = match kind {
                    AgentKind::Noisy => crate::harness::AgentConfig::noisy(),
                    k => crate::harness::AgentConfig {
                        kind: *k,
                        ..Default::default()
                    },
                };
            }
            SessionMessage::Shutdown => {
                self.require(msg, &[Idle, Running])?;
                self.runner = None;
                self.phase = Closed;
            }
        }
        Ok(())
    }

    /// Advances stream time by one frame.
    pub fn tick(&mut self) -> Result<Vec<Outbound>, SessionError> {
        let mut out = Vec::new();
        if self.phase == SessionPhase::Closed {
            return Ok(out);
        }
        if let Some(runner) = &mut self.runner {
            let ended = runner.step()?;
            if let Some(cmd) = runner.log().last().and_then(|r| r.command) {
                self.last_command = Some(cmd);
                self.command_since_snapshot = Some(cmd.kind());
            }
            if ended.is_some() {
                let (result, _) = self.runner.take().expect("runner present").finish();
                out.push(Outbound::TrialEnded(TrialSummary::from(&result)));
                self.results.push(result);
                self.trial_index += 1;
                self.target_override = None;
                self.phase = SessionPhase::Idle;
            }
        }
        if self.frame % self.snapshot_every == 0 {
            out.push(Outbound::Snapshot(self.snapshot()));
            self.command_since_snapshot = None;
        }
        self.frame += 1;
        Ok(out)
    }

    /// Current state; does not consume the pending command flag.
    pub fn snapshot(&self) -> Snapshot {
        let rec = self.runner.as_ref().and_then(|r| r.log().last());
        let ok: Vec<&TrialResult> = self.results.iter().filter(|r| r.success).collect();
        let mean_duration_s = (!ok.is_empty())
            .then(|| summarize(&self.results).ok().and_then(|s| s.duration_mean_s))
            .flatten();
        let phase = match (self.phase, rec) {
            (SessionPhase::Closed, _) => "closed".to_string(),
            (_, Some(r)) => phase_name(r.phase),
            _ => "idle".to_string(),
        };
        let target_category = match &self.runner {
            Some(r) => Some(r.navigator.wanted.label.clone()),
            None => self
                .target_override
                .as_ref()
                .map(|c| c.label.clone())
                .or_else(|| Some(trial_spec(self.config.kind, self.config.seed, self.trial_index).target_category.label)),
        };
        Snapshot {
            v: SCHEMA_VERSION,
            t: self.frame as f64 / self.config.frame_rate_hz,
            frame: self.frame,
            session_phase: self.phase,
            phase,
            hand: rec.and_then(|r| r.hand),
            target: rec.and_then(|r| r.target),
            source: rec.and_then(|r| r.source),
            quad: self.last_command.and_then(|c| c.quad()).unwrap_or(MotorQuad::ZERO),
            command: self.command_since_snapshot,
            last_command: self.last_command.map(|c| c.kind()),
            gains: self.config.calibration.gains,
            trial_index: self.trial_index,
            task: self.config.kind,
            target_category,
            agent: self.config.agent.kind,
            metrics: LiveMetrics {
                trials: self.results.len(),
                successes: ok.len(),
                mean_duration_s,
                detection_so_far: self.runner.as_ref().and_then(|r| detection_percentage(r.log()).ok()),
            },
        }
    }
}

pub fn phase_name(p: Phase) -> String {
    serde_json::to_value(p).expect("serializable").as_str().unwrap_or_default().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn create(task: TaskKind) -> Session {
        let mut s = Session::default();
        s.handle(&SessionMessage::CreateSession {
            task,
            seed: 4,
            mode: NavigationMode::Interpolated2d,
        })
        .unwrap();
        s
    }

    fn run_until_idle(s: &mut Session) -> Vec<Outbound> {
        let mut all = Vec::new();
        for _ in 0..5000 {
            all.extend(s.tick().unwrap());
            if s.phase() != SessionPhase::Running {
                break;
            }
        }
        // the pulse shows in the next snapshot
        all.extend(s.tick().unwrap());
        all.extend(s.tick().unwrap());
        all
    }

    #[test]
    fn fresh_session_is_idle_at_baseline() {
        let mut s = create(TaskKind::Grasping);
        assert_eq!(s.phase(), SessionPhase::Idle);
        let out = s.tick().unwrap();
        let Outbound::Snapshot(snap) = &out[0] else { panic!() };
        assert_eq!(snap.phase, "idle");
        assert_eq!(snap.gains, [0.5; 4]);
    }

    #[test]
    fn second_start_is_rejected() {
        let mut s = create(TaskKind::Grasping);
        s.handle(&SessionMessage::StartTrial).unwrap();
        let err = s.handle(&SessionMessage::StartTrial).unwrap_err();
        assert_eq!(err.code(), "invalid_phase");
        s.handle(&SessionMessage::AbortTrial).unwrap();
        assert_eq!(s.phase(), SessionPhase::Idle);
    }

    #[test]
    fn calibration_clicks_delegate() {
        let mut s = create(TaskKind::Grasping);
        let up = SessionMessage::CalibAdjust {
            motor: Motor::Up,
            dir: AdjustDirection::Increase,
        };
        s.handle(&up).unwrap();
        s.handle(&up).unwrap();
        assert_eq!(s.snapshot().gains[0], 0.6);
    }

    #[test]
    fn unknown_category_and_steering_rules() {
        let mut s = create(TaskKind::Grasping);
        let e = s
            .handle(&SessionMessage::SetTarget {
                category: "giraffe".into(),
            })
            .unwrap_err();
        assert_eq!(e.code(), "unknown_category");
        s.handle(&SessionMessage::SetTarget { category: "cup".into() }).unwrap();
        let e = s.handle(&SessionMessage::SteerHand { vx: 1.0, vy: 0.0 }).unwrap_err();
        assert_eq!(e.code(), "steer_rejected");
        s.handle(&SessionMessage::SetAgent {
            kind: AgentKind::HumanBridge,
        })
        .unwrap();
        s.handle(&SessionMessage::SteerHand { vx: 1.0, vy: 0.0 }).unwrap();
    }

    #[test]
    fn trial_runs_to_completion_with_one_grasp_snapshot() {
        let mut s = create(TaskKind::Grasping);
        s.handle(&SessionMessage::StartTrial).unwrap();
        let out = run_until_idle(&mut s);
        let snaps: Vec<&Snapshot> = out
            .iter()
            .filter_map(|o| match o {
                Outbound::Snapshot(x) => Some(x),
                _ => None,
            })
            .collect();
        assert!(snaps.windows(2).all(|w| w[0].t < w[1].t));
        assert_eq!(snaps.iter().filter(|x| x.command == Some(CommandKind::GraspPulse)).count(), 1);
        let ended: Vec<&TrialSummary> = out
            .iter()
            .filter_map(|o| match o {
                Outbound::TrialEnded(x) => Some(x),
                _ => None,
            })
            .collect();
        assert_eq!(ended.len(), 1);
        assert!(ended[0].success);
        assert_eq!(s.snapshot().metrics.successes, 1);
        assert_eq!(s.snapshot().trial_index, 1);
    }

    #[test]
    fn snapshot_quad_is_the_emitted_quad() {
        let mut s = create(TaskKind::Grasping);
        s.handle(&SessionMessage::StartTrial).unwrap();
        for _ in 0..30 {
            for o in s.tick().unwrap() {
                if let Outbound::Snapshot(snap) = o {
                    let log = s.runner.as_ref().unwrap().log();
                    let emitted = log.iter().rev().find_map(|r| r.command).and_then(|c| c.quad());
                    assert_eq!(Some(snap.quad), emitted.or(Some(MotorQuad::ZERO)));
                }
            }
        }
    }

    #[test]
    fn human_steering_moves_the_hand() {
        let mut s = create(TaskKind::Grasping);
        s.handle(&SessionMessage::SetAgent {
            kind: AgentKind::HumanBridge,
        })
        .unwrap();
        s.handle(&SessionMessage::StartTrial).unwrap();
        for _ in 0..5 {
            s.tick().unwrap();
        }
        let x0 = s.snapshot().hand.unwrap().cx;
        s.handle(&SessionMessage::SteerHand { vx: -150.0, vy: 0.0 }).unwrap();
        for _ in 0..15 {
            s.tick().unwrap();
        }
        let x1 = s.snapshot().hand.unwrap().cx;
        assert!(x1 < x0 - 50.0, "{x0} -> {x1}");
    }

    #[test]
    fn closed_session_rejects_messages() {
        let mut s = create(TaskKind::Depth);
        s.handle(&SessionMessage::Shutdown).unwrap();
        assert!(s.handle(&SessionMessage::StartTrial).is_err());
        assert!(s.tick().unwrap().is_empty());
    }

    #[test]
    fn envelope_defaults_version() {
        let e: Envelope = serde_json::from_str(r#"{"type":"calib_adjust","motor":"up","dir":"+"}"#).unwrap();
        assert_eq!(e.v, 1);
        assert_eq!(
            e.msg,
            SessionMessage::CalibAdjust {
                motor: Motor::Up,
                dir: AdjustDirection::Increase
            }
        );
        let e: Envelope = serde_json::from_str(r#"{"type":"create_session","task":"depth","seed":3}"#).unwrap();
        assert!(matches!(e.msg, SessionMessage::CreateSession { mode: NavigationMode::Interpolated2d, .. }));
    }
}
