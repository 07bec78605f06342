//! Scripted participants that follow bracelet commands.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::CameraModel;
use crate::guidance::{CalibrationProfile, Motor, MotorQuad, VibrationCommand};
use crate::scene::{pixel_ray, project, unproject_to_z_plane, CameraPose, Scene, SceneObject};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Ideal,
    Noisy,
    HumanBridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub kind: AgentKind,
    /// Image-space hand speed when the perceived intensity is full.
    pub speed_px_per_s: f64,
    pub angular_noise_sigma_deg: f64,
    pub reaction_latency_ms: f64,
    pub overshoot_prob: f64,
    pub overshoot_px: f64,
    /// Distance pulled toward the body per move-back pulse.
    pub move_back_cm: f64,
    pub move_back_speed_cm_per_s: f64,
    /// Reach forward after this many seconds without any command.
    pub grasp_on_silence_s: Option<f64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            kind: AgentKind::Ideal,
            speed_px_per_s: 150.0,
            angular_noise_sigma_deg: 0.0,
            reaction_latency_ms: 0.0,
            overshoot_prob: 0.0,
            overshoot_px: 100.0,
            move_back_cm: 10.0,
            move_back_speed_cm_per_s: 20.0,
            grasp_on_silence_s: None,
        }
    }
}

impl AgentConfig {
    pub fn noisy() -> Self {
        Self {
            kind: AgentKind::Noisy,
            angular_noise_sigma_deg: 10.0,
            reaction_latency_ms: 300.0,
            overshoot_prob: 0.05,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        // a zero speed is allowed: it models a participant who never moves
        if !(self.speed_px_per_s >= 0.0) {
            return Err("speed_px_per_s must be >= 0".into());
        }
        if !(self.angular_noise_sigma_deg >= 0.0) || !(self.reaction_latency_ms >= 0.0) {
            return Err("noise sigma and latency must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.overshoot_prob) {
            return Err("overshoot_prob must lie in [0, 1]".into());
        }
        if !(self.move_back_cm >= 0.0) || !(self.move_back_speed_cm_per_s > 0.0) || !(self.overshoot_px >= 0.0) {
            return Err("move-back distance and overshoot must be >= 0, move-back speed > 0".into());
        }
        Ok(())
    }
}

/// Direction and strength a participant reads from a quad, undoing the
/// per-motor calibration gains.
pub fn perceive(quad: &MotorQuad, cal: &CalibrationProfile) -> Option<(f64, f64)> {
    let w: Vec<(Motor, f64)> = Motor::ALL
        .into_iter()
        .map(|m| {
            let g = cal.gain(m);
            (m, if g > 0.0 { quad.get(m) / g } else { 0.0 })
        })
        .filter(|(_, v)| *v > 0.0)
        .collect();
    match w.as_slice() {
        [(m, v)] => Some((m.angle_deg(), v.min(1.0))),
        [(a, va), (b, vb)] => {
            // order the pair clockwise; left and up wrap around 0
            let (first, w1, w2) = if (a.index() + 1) % 4 == b.index() { (*a, *va, *vb) } else { (*b, *vb, *va) };
            let theta = (first.angle_deg() + 90.0 * w2 / (w1 + w2)).rem_euclid(360.0);
            Some((theta, (w1 + w2).min(1.0)))
        }
        _ => None,
    }
}

/// What the agent did this frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentEvent {
    None,
    /// Reached forward; `hit` tells whether the reach met the target.
    Reached { hit: bool, overshoot: bool },
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub calibration: CalibrationProfile,
    rng: ChaCha8Rng,
    pending: Vec<(f64, VibrationCommand)>,
    heading: Option<(f64, f64)>,
    last_heading_deg: f64,
    back_remaining_cm: f64,
    grasp_requested: bool,
    steer: (f64, f64),
    last_command_at: f64,
}

impl Agent {
    pub fn new(config: AgentConfig, calibration: CalibrationProfile, rng: ChaCha8Rng) -> Self {
        Self {
            config,
            calibration,
            rng,
            pending: Vec::new(),
            heading: None,
            last_heading_deg: 0.0,
            back_remaining_cm: 0.0,
            grasp_requested: false,
            steer: (0.0, 0.0),
            last_command_at: 0.0,
        }
    }

    /// Hands a decoded bracelet command to the agent at stream time `t`.
    pub fn command(&mut self, cmd: VibrationCommand, t: f64) {
        self.last_command_at = t;
        self.pending.push((t + self.config.reaction_latency_ms / 1000.0, cmd));
    }

    /// Velocity in px/s for the human-steered agent.
    pub fn steer(&mut self, vx: f64, vy: f64) {
        self.steer = (vx, vy);
    }

    fn react(&mut self, cmd: VibrationCommand) {
        match cmd {
            VibrationCommand::Direction { quad } => {
                self.heading = perceive(&quad, &self.calibration).map(|(theta, strength)| {
                    let noise = if self.config.angular_noise_sigma_deg > 0.0 {
                        let z: f64 = self.rng.sample(StandardNormal);
                        z * self.config.angular_noise_sigma_deg
                    } else {
                        0.0
                    };
                    (theta + noise, strength)
                });
            }
            VibrationCommand::GraspPulse { .. } => {
                self.heading = None;
                self.grasp_requested = true;
            }
            VibrationCommand::MoveBackPulse { .. } => {
                self.heading = None;
                self.back_remaining_cm += self.config.move_back_cm;
            }
            VibrationCommand::Stop => self.heading = None,
        }
    }

    fn shift_in_image(hand: &mut SceneObject, dx: f64, dy: f64, pose: &CameraPose, cam: &CameraModel) {
        let Some((px, py)) = project(hand.position, pose, cam).pixel() else {
            return;
        };
        if let Some(p) = unproject_to_z_plane(px + dx, py + dy, hand.position[2], pose, cam) {
            hand.position[0] = p[0];
            // the table stops the hand
            hand.position[1] = p[1].max(hand.extent[1] / 2.0);
        }
    }

    /// Moves the hand for one frame of length `dt` ending at time `t`.
    /// `target` is the object the participant is meant to grasp.
    pub fn advance(&mut self, scene: &mut Scene, target: &SceneObject, cam: &CameraModel, t: f64, dt: f64) -> AgentEvent {
        let mut due: Vec<VibrationCommand> = Vec::new();
        self.pending.retain(|(at, cmd)| {
            if *at <= t + 1e-9 {
                due.push(*cmd);
                false
            } else {
                true
            }
        });
        for cmd in due {
            self.react(cmd);
        }
        if let Some(s) = self.config.grasp_on_silence_s {
            if t - self.last_command_at >= s && self.pending.is_empty() {
                self.grasp_requested = true;
            }
        }

        let pose = scene.camera_pose;
        if self.grasp_requested {
            self.grasp_requested = false;
            let overshoot = self.config.overshoot_prob > 0.0 && self.rng.random::<f64>() < self.config.overshoot_prob;
            if overshoot {
                // carried past the target along the last sideways motion
                let side = self.last_heading_deg.to_radians().sin();
                let d = if side < 0.0 { -self.config.overshoot_px } else { self.config.overshoot_px };
                Self::shift_in_image(&mut scene.hand, d, 0.0, &pose, cam);
            }
            return AgentEvent::Reached {
                hit: reach_hits(&scene.hand, target, &pose, cam),
                overshoot,
            };
        }

        if self.back_remaining_cm > 0.0 {
            let step = (self.config.move_back_speed_cm_per_s * dt).min(self.back_remaining_cm);
            self.back_remaining_cm -= step;
            scene.hand.position[2] -= step;
            return AgentEvent::None;
        }

        let (vx, vy) = match self.config.kind {
            AgentKind::HumanBridge => self.steer,
            _ => match self.heading {
                Some((theta, strength)) => {
                    self.last_heading_deg = theta;
                    let v = self.config.speed_px_per_s * strength;
                    let a = theta.to_radians();
                    (v * a.sin(), -v * a.cos())
                }
                None => (0.0, 0.0),
            },
        };
        if vx != 0.0 || vy != 0.0 {
            Self::shift_in_image(&mut scene.hand, vx * dt, vy * dt, &pose, cam);
        }
        AgentEvent::None
    }
}

/// The reach follows the line of sight through the hand center; it meets the
/// target when that line passes within the hand's half-width (x) and
/// half-height (y) of the target's extent.
pub fn reach_hits(hand: &SceneObject, target: &SceneObject, pose: &CameraPose, cam: &CameraModel) -> bool {
    let Some((px, py)) = project(hand.position, pose, cam).pixel() else {
        return false;
    };
    let dir = pixel_ray(px, py, pose, cam);
    let mut swept = target.clone();
    swept.extent[0] += hand.extent[0];
    swept.extent[1] += hand.extent[1];
    swept.ray_entry(pose.position, dir, 0.0).is_some()
}
