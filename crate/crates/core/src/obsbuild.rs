//! Actor observations, the 5-frame history and the critic's privileged input.
//!
//! The layouts here are frozen: checkpoints and evaluation tooling rely on the
//! indices. [`layout_table`] renders the reference table shipped in the guide.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::gait::{COMMAND_DIM, GAIT_DESCRIPTOR_DIM};
use crate::model::{NUM_JOINTS, NUM_LEGS};

pub const OBS_DIM: usize = 30;
pub const HISTORY_LEN: usize = 5;
pub const HISTORY_DIM: usize = OBS_DIM * HISTORY_LEN;
pub const PRIV_DIM: usize = 17;
pub const HEIGHTMAP_ROWS: usize = 17;
pub const HEIGHTMAP_COLS: usize = 11;
pub const HEIGHTMAP_DIM: usize = HEIGHTMAP_ROWS * HEIGHTMAP_COLS;
pub const CRITIC_DIM: usize = COMMAND_DIM + GAIT_DESCRIPTOR_DIM + HEIGHTMAP_DIM + PRIV_DIM + OBS_DIM;

/// Body-frame direction of gravity for a base orientation.
pub fn gravity_projection(base_quat: &UnitQuaternion<f64>) -> Vector3<f64> {
    base_quat.inverse_transform_vector(&Vector3::new(0.0, 0.0, -1.0))
}

/// Actor-visible observation `o^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialObservation {
    pub gravity_proj: [f64; 3],
    pub base_ang_vel: [f64; 3],
    pub q: [f64; NUM_JOINTS],
    pub q_dot: [f64; NUM_JOINTS],
}

impl PartialObservation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        out[0..3].copy_from_slice(&self.gravity_proj);
        out[3..6].copy_from_slice(&self.base_ang_vel);
        out[6..18].copy_from_slice(&self.q);
        out[18..30].copy_from_slice(&self.q_dot);
        out
    }

    /// Multiply each channel group by its network input scale.
    pub fn scaled(&self, s: &ObsScales) -> [f64; OBS_DIM] {
        let mut out = self.to_array();
        out[3..6].iter_mut().for_each(|x| *x *= s.ang_vel);
        out[6..18].iter_mut().for_each(|x| *x *= s.joint_pos);
        out[18..30].iter_mut().for_each(|x| *x *= s.joint_vel);
        out
    }
}

/// Raw sensor readout the partial observation is built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReadout {
    pub base_quat: UnitQuaternion<f64>,
    pub base_ang_vel: [f64; 3],
    pub q: [f64; NUM_JOINTS],
    pub q_dot: [f64; NUM_JOINTS],
}

/// Half-widths of the additive uniform noise per channel group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub gravity: f64,
    pub ang_vel: f64,
    pub joint_pos: f64,
    pub joint_vel: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { enabled: true, gravity: 0.05, ang_vel: 0.2, joint_pos: 0.01, joint_vel: 1.5 }
    }
}

impl NoiseConfig {
    pub fn disabled() -> Self {
        NoiseConfig { enabled: false, ..Self::default() }
    }
}

/// Fixed multiplicative input scales applied before observations reach a network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObsScales {
    pub ang_vel: f64,
    pub joint_pos: f64,
    pub joint_vel: f64,
    pub lin_vel: f64,
}

impl Default for ObsScales {
    fn default() -> Self {
        ObsScales { ang_vel: 0.25, joint_pos: 1.0, joint_vel: 0.05, lin_vel: 2.0 }
    }
}

impl ObsScales {
    pub fn identity() -> Self {
        ObsScales { ang_vel: 1.0, joint_pos: 1.0, joint_vel: 1.0, lin_vel: 1.0 }
    }
}

pub fn noiseless_obs(readout: &SensorReadout) -> PartialObservation {
    PartialObservation {
        gravity_proj: gravity_projection(&readout.base_quat).into(),
        base_ang_vel: readout.base_ang_vel,
        q: readout.q,
        q_dot: readout.q_dot,
    }
}

pub fn add_noise<R: Rng>(obs: &mut PartialObservation, noise: &NoiseConfig, rng: &mut R) {
    if !noise.enabled {
        return;
    }
    let mut jitter = |x: &mut f64, half: f64| {
        if half > 0.0 {
            *x += rng.random_range(-half..=half);
        }
    };
    obs.gravity_proj.iter_mut().for_each(|x| jitter(x, noise.gravity));
    obs.base_ang_vel.iter_mut().for_each(|x| jitter(x, noise.ang_vel));
    obs.q.iter_mut().for_each(|x| jitter(x, noise.joint_pos));
    obs.q_dot.iter_mut().for_each(|x| jitter(x, noise.joint_vel));
}

/// One-step observation delay line. With latency 1 the frame served at `t` is the
/// noiseless build from `t − 1`; noise is added after the delay.
#[derive(Debug, Clone, Default)]
pub struct LatencyLine {
    previous: Option<PartialObservation>,
}

impl LatencyLine {
    pub fn reset(&mut self) {
        self.previous = None;
    }

    pub fn serve(&mut self, current: PartialObservation, latency_steps: u32) -> PartialObservation {
        let prev = self.previous.replace(current);
        match (latency_steps, prev) {
            (0, _) | (_, None) => current,
            (_, Some(p)) => p,
        }
    }
}

pub fn build_partial_obs<R: Rng>(
    readout: &SensorReadout,
    noise: &NoiseConfig,
    latency: &mut LatencyLine,
    latency_steps: u32,
    rng: &mut R,
) -> PartialObservation {
    let mut obs = latency.serve(noiseless_obs(readout), latency_steps);
    add_noise(&mut obs, noise, rng);
    obs
}

/// Simulation-only state `s^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivilegedState {
    /// Base linear velocity in the body frame.
    pub base_lin_vel: [f64; 3],
    /// Foot contact forces (world frame) divided by body weight.
    pub contact_force: [[f64; 3]; NUM_LEGS],
    pub friction_mu: f64,
    pub mass_scale: f64,
}

impl PrivilegedState {
    pub fn to_array(&self, s: &ObsScales) -> [f64; PRIV_DIM] {
        let mut out = [0.0; PRIV_DIM];
        for i in 0..3 {
            out[i] = self.base_lin_vel[i] * s.lin_vel;
        }
        for (leg, f) in self.contact_force.iter().enumerate() {
            out[3 + 3 * leg..6 + 3 * leg].copy_from_slice(f);
        }
        out[15] = self.friction_mu;
        out[16] = self.mass_scale;
        out
    }
}

/// Critic input in the frozen order `(c, g, i^e, s^p, o^p)`.
pub fn build_full_state(
    cmd: &[f64; COMMAND_DIM],
    gait: &[f64; GAIT_DESCRIPTOR_DIM],
    heightmap: &[f64; HEIGHTMAP_DIM],
    privileged: &[f64; PRIV_DIM],
    obs: &[f64; OBS_DIM],
) -> [f64; CRITIC_DIM] {
    let mut out = [0.0; CRITIC_DIM];
    let mut at = 0;
    for block in [&cmd[..], &gait[..], &heightmap[..], &privileged[..], &obs[..]] {
        out[at..at + block.len()].copy_from_slice(block);
        at += block.len();
    }
    out
}

/// Ring of the five most recent frames, oldest first.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    frames: VecDeque<[f64; OBS_DIM]>,
}

impl HistoryBuffer {
    pub fn new(initial: [f64; OBS_DIM]) -> Self {
        let mut buffer = HistoryBuffer { frames: VecDeque::with_capacity(HISTORY_LEN) };
        buffer.reset(initial);
        buffer
    }

    pub fn reset(&mut self, frame: [f64; OBS_DIM]) {
        self.frames.clear();
        self.frames.extend(std::iter::repeat_n(frame, HISTORY_LEN));
    }

    pub fn push(&mut self, frame: [f64; OBS_DIM]) {
        self.frames.pop_front();
        self.frames.push_back(frame);
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64; OBS_DIM]> {
        self.frames.iter()
    }

    pub fn newest(&self) -> &[f64; OBS_DIM] {
        self.frames.back().expect("history is never empty")
    }

    pub fn flatten(&self) -> [f64; HISTORY_DIM] {
        let mut out = [0.0; HISTORY_DIM];
        for (i, frame) in self.frames.iter().enumerate() {
            out[i * OBS_DIM..(i + 1) * OBS_DIM].copy_from_slice(frame);
        }
        out
    }
}

/// One named slice of an input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutEntry {
    pub vector: &'static str,
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

const fn entry(vector: &'static str, name: &'static str, offset: usize, len: usize) -> LayoutEntry {
    LayoutEntry { vector, name, offset, len }
}

pub const PARTIAL_OBS_LAYOUT: [LayoutEntry; 4] = [
    entry("o^p", "gravity_proj", 0, 3),
    entry("o^p", "base_ang_vel", 3, 3),
    entry("o^p", "q", 6, 12),
    entry("o^p", "q_dot", 18, 12),
];

pub const PRIVILEGED_LAYOUT: [LayoutEntry; 4] = [
    entry("s^p", "base_lin_vel", 0, 3),
    entry("s^p", "contact_force", 3, 12),
    entry("s^p", "friction_mu", 15, 1),
    entry("s^p", "mass_scale", 16, 1),
];

pub const CRITIC_LAYOUT: [LayoutEntry; 5] = [
    entry("critic", "command", 0, COMMAND_DIM),
    entry("critic", "gait", 3, GAIT_DESCRIPTOR_DIM),
    entry("critic", "heightmap", 14, HEIGHTMAP_DIM),
    entry("critic", "privileged", 201, PRIV_DIM),
    entry("critic", "partial_obs", 218, OBS_DIM),
];

pub const ACTOR_LAYOUT: [LayoutEntry; 4] = [
    entry("actor", "latent", 0, 32),
    entry("actor", "velocity_estimate", 32, 3),
    entry("actor", "command", 35, COMMAND_DIM),
    entry("actor", "gait", 38, GAIT_DESCRIPTOR_DIM),
];

pub fn all_layouts() -> impl Iterator<Item = &'static LayoutEntry> {
    PARTIAL_OBS_LAYOUT.iter().chain(&PRIVILEGED_LAYOUT).chain(&CRITIC_LAYOUT).chain(&ACTOR_LAYOUT)
}

/// FNV-1a over every layout entry; changes whenever any slice moves or is renamed.
pub fn layout_checksum() -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            hash ^= u64::from(*b);
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for e in all_layouts() {
        feed(e.vector.as_bytes());
        feed(e.name.as_bytes());
        feed(&(e.offset as u64).to_le_bytes());
        feed(&(e.len as u64).to_le_bytes());
    }
    hash
}

/// Markdown reference table of every input layout.
pub fn layout_table() -> String {
    let mut out = String::from("| vector | slice | offset | length |\n|---|---|---|---|\n");
    for e in all_layouts() {
        out.push_str(&format!("| {} | {} | {} | {} |\n", e.vector, e.name, e.offset, e.len));
    }
    out.push_str(&format!("\nLayout checksum: `{:016x}`\n", layout_checksum()));
    out
}
