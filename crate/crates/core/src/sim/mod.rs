//! Vectorized simplified quadruped environment.
//!
//! Physics runs at `1 / dt` (200 Hz by default) and the policy acts every
//! `decimation` substeps (50 Hz). Each [`Env`] is independently owned and
//! seeded, so a batch stepped in parallel is bitwise identical to the same
//! environments stepped one by one.

mod env;
mod physics;
mod terrain;

pub use env::{
    check_termination, count_collisions, DoneReason, Env, EnvContext, EnvState, Observation, StepRecord, VecEnv,
};
pub use physics::{
    box_inertia, contact_force, physics_substep, trunk_energy, PhysicsConfig, RandomizedDynamics, RobotState,
};
pub use terrain::{
    make_terrain, sample_heightmap, TerrainField, TerrainKind, TerrainParams, HEIGHTMAP_SPACING, MAX_STAIR_RISE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::TROT_OFFSETS;
use crate::model::NUM_LEGS;
use crate::obsbuild::{NoiseConfig, ObsScales};
use crate::rewards::RewardWeights;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("terrain: {0}")]
    Terrain(String),
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Ranges the per-episode dynamics scales are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationRanges {
    pub enabled: bool,
    pub friction: [f64; 2],
    pub mass: [f64; 2],
    pub kp: [f64; 2],
    pub kd: [f64; 2],
    /// Observation latency is drawn uniformly from `0..=max_latency_steps`.
    pub max_latency_steps: u32,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        RandomizationRanges {
            enabled: true,
            friction: [0.5, 1.25],
            mass: [0.9, 1.2],
            kp: [0.9, 1.1],
            kd: [0.9, 1.1],
            max_latency_steps: 1,
        }
    }
}

impl RandomizationRanges {
    pub fn disabled() -> Self {
        RandomizationRanges { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, [lo, hi]) in [("friction", self.friction), ("mass", self.mass), ("kp", self.kp), ("kd", self.kd)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(SimError::Config(format!("randomization range `{name}` must satisfy 0 < lo <= hi, got [{lo}, {hi}]")));
            }
        }
        if self.max_latency_steps > 1 {
            return Err(SimError::Config("max_latency_steps must be 0 or 1".into()));
        }
        Ok(())
    }
}

/// Velocity command sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommandRanges {
    pub lin_vel_x: [f64; 2],
    pub lin_vel_y: [f64; 2],
    pub yaw_rate: [f64; 2],
    /// Commands are redrawn after this many seconds within an episode.
    pub resample_interval_s: f64,
}

impl Default for CommandRanges {
    fn default() -> Self {
        CommandRanges { lin_vel_x: [-1.0, 1.0], lin_vel_y: [-0.5, 0.5], yaw_rate: [-1.0, 1.0], resample_interval_s: 10.0 }
    }
}

/// Gait descriptor defaults; `body_height: None` uses the robot's nominal height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitDefaults {
    pub frequency: f64,
    pub stance_ratio: f64,
    pub phase_offsets: [f64; NUM_LEGS],
    pub body_height: Option<f64>,
}

impl Default for GaitDefaults {
    fn default() -> Self {
        GaitDefaults { frequency: 2.0, stance_ratio: 0.5, phase_offsets: TROT_OFFSETS, body_height: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResetConfig {
    /// Half-width of the uniform joint-angle perturbation (rad).
    pub joint_noise: f64,
    /// Half-width of the uniform spawn position jitter (m).
    pub position_jitter: f64,
    /// Height of the feet above the ground at spawn (m).
    pub drop_height: f64,
}

impl Default for ResetConfig {
    fn default() -> Self {
        ResetConfig { joint_noise: 0.1, position_jitter: 0.5, drop_height: 0.02 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminationConfig {
    /// Terminate once the body-frame gravity z component rises above this.
    pub max_gravity_z: f64,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        TerminationConfig { max_gravity_z: -0.2 }
    }
}

/// Terrain difficulty ladder. Each env keeps a success score in `[0, 1]`; its terrain
/// difficulty is `(level + 1) / levels` with `level = floor(score · levels)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub levels: usize,
    pub initial_score: f64,
    /// Weight of the newest episode in the running score.
    pub score_rate: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig { levels: 5, initial_score: 0.0, score_rate: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub physics: PhysicsConfig,
    pub terrain: TerrainParams,
    pub randomization: RandomizationRanges,
    pub noise: NoiseConfig,
    pub obs_scales: ObsScales,
    pub commands: CommandRanges,
    pub gait: GaitDefaults,
    pub rewards: RewardWeights,
    pub reset: ResetConfig,
    pub termination: TerminationConfig,
    pub curriculum: CurriculumConfig,
    pub episode_length_s: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            physics: PhysicsConfig::default(),
            terrain: TerrainParams::default(),
            randomization: RandomizationRanges::default(),
            noise: NoiseConfig::default(),
            obs_scales: ObsScales::default(),
            commands: CommandRanges::default(),
            gait: GaitDefaults::default(),
            rewards: RewardWeights::default(),
            reset: ResetConfig::default(),
            termination: TerminationConfig::default(),
            curriculum: CurriculumConfig::default(),
            episode_length_s: 20.0,
        }
    }
}

impl EnvConfig {
    /// Episode length in policy steps (1000 at 20 s and 50 Hz).
    pub fn episode_len_steps(&self) -> usize {
        (self.episode_length_s / self.physics.policy_dt()).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let p = &self.physics;
        if !(p.dt > 0.0 && p.decimation > 0 && p.joint_inertia > 0.0 && p.contact_stiffness > 0.0) {
            return Err(SimError::Config("physics dt, decimation, joint inertia and stiffness must be > 0".into()));
        }
        if !(self.episode_length_s > 0.0) {
            return Err(SimError::Config("episode_length_s must be > 0".into()));
        }
        if self.curriculum.levels == 0 {
            return Err(SimError::Config("curriculum needs at least one level".into()));
        }
        self.randomization.validate()?;
        self.rewards.validate().map_err(SimError::Config)?;
        for (name, [lo, hi]) in [
            ("lin_vel_x", self.commands.lin_vel_x),
            ("lin_vel_y", self.commands.lin_vel_y),
            ("yaw_rate", self.commands.yaw_rate),
        ] {
            if !(lo <= hi) {
                return Err(SimError::Config(format!("command range `{name}` is empty: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}
