//! Robot constants, leg kinematics, nominal stance geometry and the joint PD law.
//!
//! Legs are indexed `[FR, FL, RR, RL]`; joints are stored leg-major as
//! `[hip_abduction, hip_pitch, knee]` per leg. Each leg is a 3-DoF chain:
//! abduction about the body x axis, then hip and knee pitch about y. The zero
//! pose is a straight leg pointing down, and positive pitch swings the foot
//! forward.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 12;
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Foot / leg ordering used everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Leg {
    FrontRight = 0,
    FrontLeft = 1,
    RearRight = 2,
    RearLeft = 3,
}

/// Short leg labels in [`Leg::ALL`] order.
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FR", "FL", "RR", "RL"];

impl Leg {
    pub const ALL: [Leg; NUM_LEGS] = [Leg::FrontRight, Leg::FrontLeft, Leg::RearRight, Leg::RearLeft];

    pub fn from_index(index: usize) -> Option<Leg> {
        Leg::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// +1 for front legs, -1 for rear legs.
    pub fn fore_sign(self) -> f64 {
        match self {
            Leg::FrontRight | Leg::FrontLeft => 1.0,
            Leg::RearRight | Leg::RearLeft => -1.0,
        }
    }

    /// +1 for left legs, -1 for right legs.
    pub fn side_sign(self) -> f64 {
        match self {
            Leg::FrontLeft | Leg::RearLeft => 1.0,
            Leg::FrontRight | Leg::RearRight => -1.0,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Leg::FrontRight => "FR",
            Leg::FrontLeft => "FL",
            Leg::RearRight => "RR",
            Leg::RearLeft => "RL",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unknown robot preset `{0}` (expected `go1` or `ask1`)")]
    UnknownPreset(String),
    #[error("invalid robot parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

/// Kinematic and dynamic constants of one robot variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    pub name: String,
    /// Total mass, carried entirely by the trunk (legs are massless).
    pub trunk_mass: f64,
    /// Trunk box (length, width, height) in metres.
    pub trunk_dims: [f64; 3],
    pub thigh_len: f64,
    pub calf_len: f64,
    /// Hip joint positions in the trunk frame, `[FR, FL, RR, RL]`.
    pub hip_offsets: [[f64; 3]; NUM_LEGS],
    pub torque_limit: f64,
    pub kp: f64,
    pub kd: f64,
    pub joint_lower: [f64; NUM_JOINTS],
    pub joint_upper: [f64; NUM_JOINTS],
    pub nominal_q: [f64; NUM_JOINTS],
    /// Base height above flat ground with legs at `nominal_q`.
    pub nominal_body_height: f64,
    /// Joint offset (rad) produced by a unit action.
    pub action_scale: f64,
}

const DEFAULT_NOMINAL_LEG: [f64; 3] = [0.0, 0.8, -1.6];
const DEFAULT_LOWER_LEG: [f64; 3] = [-0.8, -1.0, -2.7];
const DEFAULT_UPPER_LEG: [f64; 3] = [0.8, 3.0, -0.6];
const TRUNK_HEIGHT: f64 = 0.12;
/// Servo gains. With massless legs a softer servo lets the stance buckle under the
/// trunk weight, so these are stiffer than typical hardware gains.
const DEFAULT_KP: f64 = 60.0;
const DEFAULT_KD: f64 = 1.5;

fn per_leg(values: [f64; 3]) -> [f64; NUM_JOINTS] {
    let mut out = [0.0; NUM_JOINTS];
    for leg in 0..NUM_LEGS {
        out[leg * 3..leg * 3 + 3].copy_from_slice(&values);
    }
    out
}

impl RobotParams {
    /// Build a preset from the overall size (length, width) of the robot.
    /// Hips sit at ±0.31·length fore/aft and ±0.5·width laterally.
    fn from_table(name: &str, mass: f64, thigh: f64, calf: f64, length: f64, width: f64) -> Self {
        let hx = length * 0.31;
        let hy = width * 0.5;
        let hip_offsets = Leg::ALL.map(|leg| [leg.fore_sign() * hx, leg.side_sign() * hy, 0.0]);
        let mut params = RobotParams {
            name: name.to_string(),
            trunk_mass: mass,
            trunk_dims: [length, width, TRUNK_HEIGHT],
            thigh_len: thigh,
            calf_len: calf,
            hip_offsets,
            torque_limit: 25.0,
            kp: DEFAULT_KP,
            kd: DEFAULT_KD,
            joint_lower: per_leg(DEFAULT_LOWER_LEG),
            joint_upper: per_leg(DEFAULT_UPPER_LEG),
            nominal_q: per_leg(DEFAULT_NOMINAL_LEG),
            nominal_body_height: 0.0,
            action_scale: 0.5,
        };
        params.nominal_body_height = params.standing_height();
        params
    }

    pub fn go1() -> Self {
        Self::from_table("go1", 12.0, 0.23, 0.24, 0.645, 0.280)
    }

    pub fn ask1() -> Self {
        Self::from_table("ask1", 20.0, 0.28, 0.25, 0.840, 0.360)
    }

    pub fn preset(name: &str) -> Result<Self, ModelError> {
        match name.to_ascii_lowercase().as_str() {
            "go1" => Ok(Self::go1()),
            "ask1" => Ok(Self::ask1()),
            _ => Err(ModelError::UnknownPreset(name.to_string())),
        }
    }

    /// Height of the base above the lowest nominal foot.
    pub fn standing_height(&self) -> f64 {
        (0..NUM_LEGS)
            .map(|leg| -leg_fk(self.leg_joints(&self.nominal_q, leg), leg, self).z)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn leg_joints(&self, q: &[f64; NUM_JOINTS], leg: usize) -> [f64; 3] {
        [q[leg * 3], q[leg * 3 + 1], q[leg * 3 + 2]]
    }

    pub fn hip(&self, leg: usize) -> Vector3<f64> {
        Vector3::from(self.hip_offsets[leg])
    }

    pub fn max_leg_reach(&self) -> f64 {
        self.thigh_len + self.calf_len
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        fn bad(field: &'static str, reason: impl Into<String>) -> ModelError {
            ModelError::InvalidParam { field, reason: reason.into() }
        }
        let positive = [
            ("trunk_mass", self.trunk_mass),
            ("thigh_len", self.thigh_len),
            ("calf_len", self.calf_len),
            ("torque_limit", self.torque_limit),
            ("kp", self.kp),
            ("action_scale", self.action_scale),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(bad(field, format!("must be finite and > 0, got {value}")));
            }
        }
        if !(self.kd.is_finite() && self.kd >= 0.0) {
            return Err(bad("kd", format!("must be >= 0, got {}", self.kd)));
        }
        if self.trunk_dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(bad("trunk_dims", "all dimensions must be > 0"));
        }
        for i in 0..NUM_JOINTS {
            let (lo, nom, hi) = (self.joint_lower[i], self.nominal_q[i], self.joint_upper[i]);
            if !(lo < nom && nom < hi) {
                return Err(bad(
                    "nominal_q",
                    format!("joint {i}: expected lower < nominal < upper, got {lo} / {nom} / {hi}"),
                ));
            }
        }
        for leg in Leg::ALL {
            let [x, y, _] = self.hip_offsets[leg.index()];
            if x * leg.fore_sign() <= 0.0 || y * leg.side_sign() <= 0.0 {
                return Err(bad(
                    "hip_offsets",
                    format!("{} hip at ({x}, {y}) violates fore/aft or left/right signs", leg.short_name()),
                ));
            }
        }
        let (front, rear) = (self.hip_offsets[0], self.hip_offsets[2]);
        let symmetric = (self.hip_offsets[1][0] - front[0]).abs() < 1e-12
            && (self.hip_offsets[1][1] + front[1]).abs() < 1e-12
            && (self.hip_offsets[3][0] - rear[0]).abs() < 1e-12
            && (self.hip_offsets[3][1] + rear[1]).abs() < 1e-12;
        if !symmetric {
            return Err(bad("hip_offsets", "left and right hips must mirror each other"));
        }
        if !(self.nominal_body_height.is_finite() && self.nominal_body_height > 0.0) {
            return Err(bad("nominal_body_height", "must be > 0"));
        }
        Ok(())
    }
}

/// Foot position in the sagittal plane of the leg (before abduction), relative to the hip.
fn sagittal(q: [f64; 3], params: &RobotParams) -> (f64, f64) {
    let (l1, l2) = (params.thigh_len, params.calf_len);
    let (s1, c1) = q[1].sin_cos();
    let (s12, c12) = (q[1] + q[2]).sin_cos();
    (l1 * s1 + l2 * s12, -l1 * c1 - l2 * c12)
}

/// Foot position in the body frame for one leg.
pub fn leg_fk(q_leg: [f64; 3], leg_index: usize, params: &RobotParams) -> Vector3<f64> {
    let (x, z) = sagittal(q_leg, params);
    let (s0, c0) = q_leg[0].sin_cos();
    params.hip(leg_index) + Vector3::new(x, -s0 * z, c0 * z)
}

/// Knee position in the body frame (used for link collision checks).
pub fn knee_position(q_leg: [f64; 3], leg_index: usize, params: &RobotParams) -> Vector3<f64> {
    let (s1, c1) = q_leg[1].sin_cos();
    let (x, z) = (params.thigh_len * s1, -params.thigh_len * c1);
    let (s0, c0) = q_leg[0].sin_cos();
    params.hip(leg_index) + Vector3::new(x, -s0 * z, c0 * z)
}

/// d(foot position)/d(q_leg), columns ordered like the joints.
pub fn leg_jacobian(q_leg: [f64; 3], params: &RobotParams) -> Matrix3<f64> {
    let (l1, l2) = (params.thigh_len, params.calf_len);
    let (s0, c0) = q_leg[0].sin_cos();
    let (s1, c1) = q_leg[1].sin_cos();
    let (s12, c12) = (q_leg[1] + q_leg[2]).sin_cos();
    let z = -l1 * c1 - l2 * c12;
    let (dx1, dz1) = (l1 * c1 + l2 * c12, l1 * s1 + l2 * s12);
    let (dx2, dz2) = (l2 * c12, l2 * s12);
    Matrix3::new(
        0.0, dx1, dx2, //
        -c0 * z, -s0 * dz1, -s0 * dz2, //
        -s0 * z, c0 * dz1, c0 * dz2,
    )
}

/// PD torque with explicit gains; used when gains are randomized.
pub fn pd_torque_with_gains(
    q_target: &[f64; NUM_JOINTS],
    q: &[f64; NUM_JOINTS],
    q_dot: &[f64; NUM_JOINTS],
    kp: f64,
    kd: f64,
    torque_limit: f64,
) -> [f64; NUM_JOINTS] {
    std::array::from_fn(|i| (kp * (q_target[i] - q[i]) - kd * q_dot[i]).clamp(-torque_limit, torque_limit))
}

/// `τ = clamp(kp·(q_target − q) − kd·q̇, ±torque_limit)`.
pub fn pd_torque(
    q_target: &[f64; NUM_JOINTS],
    q: &[f64; NUM_JOINTS],
    q_dot: &[f64; NUM_JOINTS],
    params: &RobotParams,
) -> [f64; NUM_JOINTS] {
    pd_torque_with_gains(q_target, q, q_dot, params.kp, params.kd, params.torque_limit)
}

/// Nominal stance: stance width `W` (lateral), stance length `L` (fore-aft) and the
/// ground-plane projection of each nominal foot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceGeometry {
    pub width: f64,
    pub length: f64,
    pub p_norm: [[f64; 2]; NUM_LEGS],
}

pub fn nominal_stance(params: &RobotParams) -> StanceGeometry {
    let p_norm: [[f64; 2]; NUM_LEGS] = std::array::from_fn(|leg| {
        let p = leg_fk(params.leg_joints(&params.nominal_q, leg), leg, params);
        [p.x, p.y]
    });
    let [fr, fl, rr, rl] = p_norm;
    let width = 0.5 * ((fl[1] - fr[1]) + (rl[1] - rr[1]));
    let length = 0.5 * ((fr[0] - rr[0]) + (fl[0] - rl[0]));
    StanceGeometry { width, length, p_norm }
}
