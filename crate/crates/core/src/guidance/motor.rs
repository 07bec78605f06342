//! Motor layout, calibration gains and the angle-to-intensity law.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::GuidanceError;

pub const CALIBRATION_BASELINE: f64 = 0.5;
pub const CALIBRATION_STEP: f64 = 0.05;

/// Motors in clockwise order starting at the top of the wrist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motor {
    Up,
    Right,
    Down,
    Left,
}

impl Motor {
    pub const ALL: [Motor; 4] = [Motor::Up, Motor::Right, Motor::Down, Motor::Left];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Motor {
        Self::ALL[i % 4]
    }

    /// Direction angle the motor encodes on its own.
    pub fn angle_deg(self) -> f64 {
        90.0 * self.index() as f64
    }
}

impl fmt::Display for Motor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Motor::Up => "up",
            Motor::Right => "right",
            Motor::Down => "down",
            Motor::Left => "left",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MotorQuad {
    pub up: f64,
    pub right: f64,
    pub down: f64,
    pub left: f64,
}

impl MotorQuad {
    pub const ZERO: MotorQuad = MotorQuad {
        up: 0.0,
        right: 0.0,
        down: 0.0,
        left: 0.0,
    };

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            up: a[0],
            right: a[1],
            down: a[2],
            left: a[3],
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.up, self.right, self.down, self.left]
    }

    pub fn get(&self, m: Motor) -> f64 {
        self.to_array()[m.index()]
    }

    pub fn single(m: Motor, value: f64) -> Self {
        let mut a = [0.0; 4];
        a[m.index()] = value;
        Self::from_array(a)
    }

    pub fn active(&self) -> Vec<Motor> {
        Motor::ALL.into_iter().filter(|m| self.get(*m) != 0.0).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.active().is_empty()
    }

    pub fn has_horizontal(&self) -> bool {
        self.right != 0.0 || self.left != 0.0
    }

    pub fn has_vertical(&self) -> bool {
        self.up != 0.0 || self.down != 0.0
    }

    pub fn validate(&self) -> Result<(), GuidanceError> {
        let a = self.to_array();
        if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(GuidanceError::InvalidQuad("intensity outside [0, 1]".into()));
        }
        match self.active().as_slice() {
            [] | [_] => Ok(()),
            [a, b] if (b.index() + 4 - a.index()) % 4 == 1 || (a.index() + 4 - b.index()) % 4 == 1 => Ok(()),
            [_, _] => Err(GuidanceError::InvalidQuad("active motors are not adjacent".into())),
            _ => Err(GuidanceError::InvalidQuad("more than two active motors".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    /// Per-motor gains in (up, right, down, left) order.
    pub gains: [f64; 4],
}

impl Default for CalibrationProfile {
    fn default() -> Self {
        Self {
            gains: [CALIBRATION_BASELINE; 4],
        }
    }
}

impl CalibrationProfile {
    pub fn uniform(g: f64) -> Self {
        Self { gains: [g; 4] }
    }

    pub fn gain(&self, m: Motor) -> f64 {
        self.gains[m.index()]
    }

    pub fn validate(&self) -> Result<(), GuidanceError> {
        if self.gains.iter().all(|g| (0.0..=1.0).contains(g)) {
            Ok(())
        } else {
            Err(GuidanceError::InvalidCalibration)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdjustDirection {
    #[serde(rename = "+")]
    Increase,
    #[serde(rename = "-")]
    Decrease,
}

/// One calibration click: moves a gain by one step, clamped to [0, 1].
pub fn calibrate_adjust(cal: &CalibrationProfile, motor: Motor, dir: AdjustDirection) -> CalibrationProfile {
    let mut out = *cal;
    let step = match dir {
        AdjustDirection::Increase => CALIBRATION_STEP,
        AdjustDirection::Decrease => -CALIBRATION_STEP,
    };
    let g = (cal.gain(motor) + step).clamp(0.0, 1.0);
    // drop accumulated binary rounding so repeated clicks land on the step grid
    out.gains[motor.index()] = (g * 1e9).round() / 1e9;
    out
}

/// Clockwise angle from image-up toward the target, in [0, 360).
pub fn direction_angle(hand: (f64, f64), target: (f64, f64)) -> Result<f64, GuidanceError> {
    let dx = target.0 - hand.0;
    let dy = target.1 - hand.1;
    if dx == 0.0 && dy == 0.0 {
        return Err(GuidanceError::CoincidentCenters);
    }
    Ok(normalize_deg(dx.atan2(-dy).to_degrees()))
}

pub fn normalize_deg(theta: f64) -> f64 {
    let t = theta.rem_euclid(360.0);
    if t >= 360.0 {
        0.0
    } else {
        t
    }
}

/// Pre-gain weights of the two motors bracketing `theta`: `(first, w1, w2)`,
/// with the second motor following the first clockwise.
pub fn motor_weights(theta: f64) -> (Motor, f64, f64) {
    let theta = normalize_deg(theta);
    let s = ((theta / 90.0).floor() as usize).min(3);
    let w2 = (theta - 90.0 * s as f64) / 90.0;
    (Motor::from_index(s), 1.0 - w2, w2)
}

/// Linear blend of the two motors adjacent to `theta`, scaled by gains.
pub fn angle_to_intensities(theta: f64, cal: &CalibrationProfile) -> MotorQuad {
    let (m1, w1, w2) = motor_weights(theta);
    let m2 = Motor::from_index(m1.index() + 1);
    let mut a = [0.0; 4];
    a[m1.index()] = w1 * cal.gain(m1);
    a[m2.index()] = w2 * cal.gain(m2);
    MotorQuad::from_array(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Direction,
    GraspPulse,
    MoveBackPulse,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum VibrationCommand {
    Direction { quad: MotorQuad },
    GraspPulse { duration_ms: u32 },
    MoveBackPulse { duration_ms: u32, gap_ms: u32 },
    Stop,
}

impl VibrationCommand {
    pub fn kind(&self) -> CommandKind {
        match self {
            VibrationCommand::Direction { .. } => CommandKind::Direction,
            VibrationCommand::GraspPulse { .. } => CommandKind::GraspPulse,
            VibrationCommand::MoveBackPulse { .. } => CommandKind::MoveBackPulse,
            VibrationCommand::Stop => CommandKind::Stop,
        }
    }

    pub fn quad(&self) -> Option<MotorQuad> {
        match self {
            VibrationCommand::Direction { quad } => Some(*quad),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(a: [f64; 4]) -> MotorQuad {
        MotorQuad::from_array(a)
    }

    #[test]
    fn cardinal_and_diagonal_examples() {
        let full = CalibrationProfile::uniform(1.0);
        assert_eq!(angle_to_intensities(0.0, &full), q([1.0, 0.0, 0.0, 0.0]));
        assert_eq!(angle_to_intensities(270.0, &full), q([0.0, 0.0, 0.0, 1.0]));
        assert_eq!(angle_to_intensities(45.0, &full), q([0.5, 0.5, 0.0, 0.0]));
        assert_eq!(angle_to_intensities(315.0, &full), q([0.5, 0.0, 0.0, 0.5]));
    }

    #[test]
    fn direction_angle_examples() {
        assert_eq!(direction_angle((320.0, 400.0), (320.0, 200.0)).unwrap(), 0.0);
        assert_eq!(direction_angle((100.0, 240.0), (300.0, 240.0)).unwrap(), 90.0);
        let want = 100f64.atan2(-100.0).to_degrees();
        assert!((direction_angle((0.0, 0.0), (100.0, 100.0)).unwrap() - want).abs() < 1e-12);
        assert!((want - 135.0).abs() < 1e-12);
        assert_eq!(direction_angle((5.0, 5.0), (5.0, 5.0)), Err(GuidanceError::CoincidentCenters));
        assert_eq!(direction_angle((10.0, 0.0), (0.0, 0.0)).unwrap(), 270.0);
    }

    #[test]
    fn calibration_steps_and_clamps() {
        let cal = CalibrationProfile::default();
        let up = calibrate_adjust(&calibrate_adjust(&cal, Motor::Up, AdjustDirection::Increase), Motor::Up, AdjustDirection::Increase);
        assert_eq!(up.gains, [0.6, 0.5, 0.5, 0.5]);
        let zero = CalibrationProfile::uniform(0.0);
        assert_eq!(calibrate_adjust(&zero, Motor::Left, AdjustDirection::Decrease).gains[3], 0.0);
        let one = CalibrationProfile::uniform(1.0);
        assert_eq!(calibrate_adjust(&one, Motor::Down, AdjustDirection::Increase).gains[2], 1.0);
        let mut c = cal;
        for _ in 0..10 {
            c = calibrate_adjust(&c, Motor::Right, AdjustDirection::Increase);
        }
        assert_eq!(c.gains[1], 1.0);
        for _ in 0..7 {
            c = calibrate_adjust(&c, Motor::Right, AdjustDirection::Decrease);
        }
        assert_eq!(c.gains[1], 0.65);
    }

    #[test]
    fn quad_validation() {
        assert!(q([0.3, 0.0, 0.0, 0.2]).validate().is_ok());
        assert!(q([0.3, 0.0, 0.2, 0.0]).validate().is_err());
        assert!(q([0.3, 0.1, 0.2, 0.0]).validate().is_err());
        assert!(q([1.2, 0.0, 0.0, 0.0]).validate().is_err());
    }

    #[test]
    fn command_json_shape() {
        let c = VibrationCommand::MoveBackPulse {
            duration_ms: 200,
            gap_ms: 100,
        };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"variant":"move_back_pulse","duration_ms":200,"gap_ms":100}"#);
        assert_eq!(serde_json::from_str::<VibrationCommand>(&s).unwrap(), c);
    }

    fn nearest_cardinal(theta: f64) -> Vec<Motor> {
        Motor::ALL
            .into_iter()
            .filter(|m| {
                let d = (theta - m.angle_deg()).rem_euclid(360.0);
                d.min(360.0 - d) <= 45.0
            })
            .collect()
    }

    proptest! {
        #[test]
        fn adjacency_and_unit_weights(theta in 0.0f64..360.0) {
            let quad = angle_to_intensities(theta, &CalibrationProfile::uniform(1.0));
            prop_assert!(quad.validate().is_ok());
            let (_, w1, w2) = motor_weights(theta);
            prop_assert_eq!(w1 + w2, 1.0);
        }

        #[test]
        fn argmax_is_nearest_cardinal(theta in 0.0f64..360.0) {
            let quad = angle_to_intensities(theta, &CalibrationProfile::uniform(1.0));
            let a = quad.to_array();
            let best = (0..4).max_by(|i, j| a[*i].total_cmp(&a[*j])).unwrap();
            prop_assert!(nearest_cardinal(theta).contains(&Motor::from_index(best)));
        }

        #[test]
        fn gain_scales_only_its_motor(theta in 0.0f64..360.0, m in 0usize..4, g in 0.01f64..1.0) {
            let base = CalibrationProfile::uniform(1.0);
            let mut scaled = base;
            scaled.gains[m] = g;
            let a = angle_to_intensities(theta, &base);
            let b = angle_to_intensities(theta, &scaled);
            prop_assert_eq!(a.active(), b.active());
            for k in 0..4 {
                let want = if k == m { a.to_array()[k] * g } else { a.to_array()[k] };
                prop_assert_eq!(b.to_array()[k], want);
            }
        }
    }
}
