use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::physics::{physics_substep, RandomizedDynamics, RobotState};
use super::terrain::{make_terrain, sample_heightmap, TerrainField, TerrainKind};
use super::{EnvConfig, SimError};
use crate::foothold::{desired_footholds, FootXY};
use crate::gait::{desired_contact_smoothed, foot_phase, GaitCommand, CONTACT_SMOOTHING, GAIT_DESCRIPTOR_DIM};
use crate::model::{leg_fk, nominal_stance, pd_torque_with_gains, RobotParams, StanceGeometry, NUM_JOINTS, NUM_LEGS};
use crate::obsbuild::{
    build_full_state, build_partial_obs, gravity_projection, noiseless_obs, HistoryBuffer, LatencyLine, PrivilegedState,
    SensorReadout, CRITIC_DIM, HISTORY_DIM, OBS_DIM,
};
use crate::rewards::{evaluate, RegularizationInputs, RewardBreakdown, RewardInputs, NUM_REWARD_ROWS};

/// Shared, read-only data for a batch of environments.
#[derive(Debug)]
pub struct EnvContext {
    pub params: RobotParams,
    pub cfg: EnvConfig,
    pub stance: StanceGeometry,
    pub body_height_cmd: f64,
    /// One field per curriculum level, easiest first.
    pub terrains: Vec<TerrainField>,
}

impl EnvContext {
    pub fn new(params: RobotParams, cfg: EnvConfig, terrain_seed: u64) -> Result<Arc<Self>, SimError> {
        params.validate()?;
        cfg.validate()?;
        let levels = if cfg.terrain.kind == TerrainKind::Flat { 1 } else { cfg.curriculum.levels };
        let terrains = (0..levels)
            .map(|l| {
                let difficulty = (l + 1) as f64 / levels as f64;
                make_terrain(&cfg.terrain.at_difficulty(difficulty), terrain_seed.wrapping_add(l as u64))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let stance = nominal_stance(&params);
        let body_height_cmd = cfg.gait.body_height.unwrap_or(params.nominal_body_height);
        Ok(Arc::new(EnvContext { params, cfg, stance, body_height_cmd, terrains }))
    }

    pub fn policy_dt(&self) -> f64 {
        self.cfg.physics.policy_dt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    Timeout,
    TrunkContact,
    Orientation,
    Diverged,
}

impl DoneReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DoneReason::Timeout => "timeout",
            DoneReason::TrunkContact => "trunk_contact",
            DoneReason::Orientation => "orientation",
            DoneReason::Diverged => "diverged",
        }
    }
}

/// Failure terminations; the episode timeout is handled by the caller.
pub fn check_termination(robot: &RobotState, params: &RobotParams, terrain: &TerrainField, cfg: &EnvConfig) -> Option<DoneReason> {
    if robot.diverged || !robot.is_finite() {
        return Some(DoneReason::Diverged);
    }
    if robot.trunk_probe_points(params).iter().any(|p| p.z < terrain.height_at(p.x, p.y)) {
        return Some(DoneReason::TrunkContact);
    }
    if gravity_projection(&robot.base_quat).z > cfg.termination.max_gravity_z {
        return Some(DoneReason::Orientation);
    }
    None
}

/// Knees below the ground plus one if any part of the trunk touches it.
pub fn count_collisions(robot: &RobotState, params: &RobotParams, terrain: &TerrainField) -> u32 {
    let knees = robot.knee_positions(params).iter().filter(|k| k.z < terrain.height_at(k.x, k.y)).count() as u32;
    let trunk = robot.trunk_probe_points(params).iter().any(|p| p.z < terrain.height_at(p.x, p.y));
    knees + u32::from(trunk)
}

/// Everything that changes during an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub robot: RobotState,
    pub gait: GaitCommand,
    pub base_phase: f64,
    pub dynamics: RandomizedDynamics,
    pub level: usize,
    pub curriculum_score: f64,
    pub step_count: usize,
    pub prev_q_dot: [f64; NUM_JOINTS],
    pub spawn_xy: [f64; 2],
    pub commanded_distance: f64,
    pub episode_return: f64,
    /// Redraw the velocity command every resample interval.
    pub resample_commands: bool,
    pub rng: ChaCha8Rng,
}

impl EnvState {
    pub fn foot_phases(&self) -> [f64; NUM_LEGS] {
        self.gait.phase_offsets.map(|o| foot_phase(self.base_phase, o))
    }
}

/// Network-facing views of the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Five scaled, noisy frames, oldest first.
    pub history: [f64; HISTORY_DIM],
    pub command: [f64; 3],
    pub gait: [f64; GAIT_DESCRIPTOR_DIM],
    pub critic: [f64; CRITIC_DIM],
    /// Body-frame base velocity, the estimator's regression target (m/s).
    pub lin_vel: [f64; 3],
}

/// Outcome of one policy step. Kinematic fields describe the state before any auto-reset.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub reward: RewardBreakdown,
    pub done: Option<DoneReason>,
    /// Length and return of the episode that just ended.
    pub episode_len: usize,
    pub episode_return: f64,
    pub cmd_vel: [f64; 3],
    pub body_lin_vel: [f64; 3],
    pub yaw_rate: f64,
    pub base_height: f64,
    pub feet_actual: FootXY,
    pub feet_desired: FootXY,
    pub contact_cmd: [f64; NUM_LEGS],
    pub contact_force_z: [f64; NUM_LEGS],
    /// Foot height above the terrain directly below it.
    pub foot_height: [f64; NUM_LEGS],
    pub level: usize,
}

impl StepRecord {
    pub fn timed_out(&self) -> bool {
        self.done == Some(DoneReason::Timeout)
    }
}

/// One simulated robot with its own RNG stream.
#[derive(Debug, Clone)]
pub struct Env {
    ctx: Arc<EnvContext>,
    pub state: EnvState,
    history: HistoryBuffer,
    latency: LatencyLine,
    obs: Observation,
}

impl Env {
    /// Environment seeded by `(seed, stream)` and reset once.
    pub fn new(ctx: Arc<EnvContext>, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let params = &ctx.params;
        let robot = RobotState::at_rest(params, Vector3::new(0.0, 0.0, params.nominal_body_height), UnitQuaternion::identity(), params.nominal_q);
        let gait = GaitCommand {
            cmd_vel: [0.0; 3],
            phase_offsets: ctx.cfg.gait.phase_offsets,
            frequency: ctx.cfg.gait.frequency,
            body_height: ctx.body_height_cmd,
            stance_ratio: ctx.cfg.gait.stance_ratio,
        };
        let state = EnvState {
            robot,
            gait,
            base_phase: 0.0,
            dynamics: RandomizedDynamics::default(),
            level: 0,
            curriculum_score: ctx.cfg.curriculum.initial_score.clamp(0.0, 1.0),
            step_count: 0,
            prev_q_dot: [0.0; NUM_JOINTS],
            spawn_xy: [0.0; 2],
            commanded_distance: 0.0,
            episode_return: 0.0,
            resample_commands: true,
            rng,
        };
        let obs = Observation {
            history: [0.0; HISTORY_DIM],
            command: [0.0; 3],
            gait: [0.0; GAIT_DESCRIPTOR_DIM],
            critic: [0.0; CRITIC_DIM],
            lin_vel: [0.0; 3],
        };
        let mut env = Env { ctx, state, history: HistoryBuffer::new([0.0; OBS_DIM]), latency: LatencyLine::default(), obs };
        env.reset();
        env
    }

    pub fn context(&self) -> &Arc<EnvContext> {
        &self.ctx
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    pub fn terrain(&self) -> &TerrainField {
        &self.ctx.terrains[self.state.level]
    }

    /// Fix the velocity command and stop resampling it.
    pub fn set_command(&mut self, cmd_vel: [f64; 3]) {
        self.state.gait.cmd_vel = cmd_vel;
        self.state.resample_commands = false;
        self.refresh_command_views();
    }

    /// Start a new episode, drawing everything from the env's own RNG.
    pub fn reset(&mut self) {
        let ctx = self.ctx.clone();
        let cfg = &ctx.cfg;
        let params = &ctx.params;
        let st = &mut self.state;
        let rng = &mut st.rng;

        let levels = ctx.terrains.len();
        st.level = ((st.curriculum_score * levels as f64).floor() as usize).min(levels - 1);
        let terrain = &ctx.terrains[st.level];

        let r = &cfg.randomization;
        st.dynamics = if r.enabled {
            RandomizedDynamics {
                friction_scale: uniform(rng, r.friction),
                mass_scale: uniform(rng, r.mass),
                kp_scale: uniform(rng, r.kp),
                kd_scale: uniform(rng, r.kd),
                obs_latency_steps: rng.random_range(0..=r.max_latency_steps),
            }
        } else {
            RandomizedDynamics::default()
        };

        let jn = cfg.reset.joint_noise;
        let q: [f64; NUM_JOINTS] = std::array::from_fn(|i| {
            let qi = params.nominal_q[i] + if jn > 0.0 { rng.random_range(-jn..=jn) } else { 0.0 };
            qi.clamp(params.joint_lower[i], params.joint_upper[i])
        });
        let pj = cfg.reset.position_jitter;
        let mut jitter = || if pj > 0.0 { rng.random_range(-pj..=pj) } else { 0.0 };
        let (x, y) = (jitter(), jitter());
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let quat = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);

        // lowest foot sits drop_height above the highest ground under any foot
        let mut ground: f64 = f64::NEG_INFINITY;
        let mut lowest: f64 = f64::INFINITY;
        for leg in 0..NUM_LEGS {
            let p = quat * leg_fk(params.leg_joints(&q, leg), leg, params);
            ground = ground.max(terrain.height_at(x + p.x, y + p.y));
            lowest = lowest.min(p.z);
        }
        let z = ground - lowest + cfg.reset.drop_height;
        st.robot = RobotState::at_rest(params, Vector3::new(x, y, z), quat, q);
        st.robot.prev_q_target = params.nominal_q;

        st.gait.cmd_vel = if st.resample_commands { sample_command(rng, cfg) } else { st.gait.cmd_vel };
        st.base_phase = 0.0;
        st.step_count = 0;
        st.prev_q_dot = st.robot.q_dot;
        st.spawn_xy = [x, y];
        st.commanded_distance = 0.0;
        st.episode_return = 0.0;

        self.latency.reset();
        self.observe(true);
    }

    /// Apply one action (12 normalized joint offsets) for `decimation` physics substeps.
    pub fn step(&mut self, action: &[f64; NUM_JOINTS]) -> StepRecord {
        let ctx = self.ctx.clone();
        let cfg = &ctx.cfg;
        let params = &ctx.params;
        let terrain = &ctx.terrains[self.state.level];
        let policy_dt = cfg.physics.policy_dt();
        let st = &mut self.state;

        let q_target: [f64; NUM_JOINTS] = std::array::from_fn(|i| params.nominal_q[i] + params.action_scale * action[i]);
        let dynamics = st.dynamics;
        let kp = params.kp * dynamics.kp_scale;
        let kd = params.kd * dynamics.kd_scale;
        let mut robot = st.robot.clone();
        for _ in 0..cfg.physics.decimation {
            let tau = pd_torque_with_gains(&q_target, &robot.q, &robot.q_dot, kp, kd, params.torque_limit);
            robot = physics_substep(&robot, &tau, terrain, cfg.physics.dt, params, &dynamics, &cfg.physics);
            if robot.diverged {
                break;
            }
        }
        let target_delta: [f64; NUM_JOINTS] = std::array::from_fn(|i| q_target[i] - robot.prev_q_target[i]);
        robot.prev_q_target = q_target;
        let joint_acc: [f64; NUM_JOINTS] = std::array::from_fn(|i| (robot.q_dot[i] - st.prev_q_dot[i]) / policy_dt);
        st.prev_q_dot = robot.q_dot;
        st.robot = robot;
        st.base_phase = foot_phase(st.base_phase + st.gait.frequency * policy_dt, 0.0);
        st.step_count += 1;
        let cmd = st.gait.cmd_vel;
        st.commanded_distance += cmd[0].hypot(cmd[1]) * policy_dt;

        let robot = &st.robot;
        let mut done = check_termination(robot, params, terrain, cfg);
        let body_vel = robot.body_lin_vel();
        let yaw = robot.yaw();
        let (sy, cy) = yaw.sin_cos();
        let feet_actual: FootXY = std::array::from_fn(|leg| {
            let d = robot.foot_pos[leg] - robot.base_pos;
            [cy * d.x + sy * d.y, -sy * d.x + cy * d.y]
        });
        let phases = st.foot_phases();
        let feet_desired = desired_footholds(&st.gait, &phases, &ctx.stance).map(|d| d.p_desired).unwrap_or(feet_actual);
        let contact_cmd = phases.map(|p| desired_contact_smoothed(p, st.gait.stance_ratio, CONTACT_SMOOTHING));
        let ground_under_feet = robot.foot_pos.iter().map(|p| terrain.height_at(p.x, p.y)).sum::<f64>() / NUM_LEGS as f64;
        let base_height = robot.base_pos.z - ground_under_feet;

        let reward = if done == Some(DoneReason::Diverged) {
            RewardBreakdown::from_rows([0.0; NUM_REWARD_ROWS])
        } else {
            let weight = params.trunk_mass * dynamics.mass_scale * cfg.physics.gravity;
            let inputs = RewardInputs {
                lin_vel_xy: [body_vel.x, body_vel.y],
                yaw_rate: robot.base_ang_vel.z,
                cmd_vel: cmd,
                regularization: RegularizationInputs {
                    torque: robot.last_torque,
                    joint_acc,
                    target_delta,
                    body_height: base_height,
                    body_height_cmd: st.gait.body_height,
                    n_collision: count_collisions(robot, params, terrain),
                    lin_vel: body_vel.into(),
                    ang_vel: robot.base_ang_vel.into(),
                },
                gravity: gravity_projection(&robot.base_quat).into(),
                feet_actual,
                feet_desired,
                contact_cmd,
                foot_forces: robot.contact_force.map(|f| (f / weight).into()),
                foot_vels: robot.foot_vel.map(|v| v.into()),
            };
            evaluate(&inputs, &cfg.rewards)
        };
        st.episode_return += reward.total;

        if done.is_none() && st.step_count >= cfg.episode_len_steps() {
            done = Some(DoneReason::Timeout);
        }
        let record = StepRecord {
            reward,
            done,
            episode_len: st.step_count,
            episode_return: st.episode_return,
            cmd_vel: cmd,
            body_lin_vel: body_vel.into(),
            yaw_rate: robot.base_ang_vel.z,
            base_height,
            feet_actual,
            feet_desired,
            contact_cmd,
            contact_force_z: robot.contact_force.map(|f| f.z),
            foot_height: robot.foot_pos.map(|p| p.z - terrain.height_at(p.x, p.y)),
            level: st.level,
        };

        if let Some(reason) = done {
            self.update_curriculum(reason);
            self.reset();
        } else {
            let resample_steps = (cfg.commands.resample_interval_s / policy_dt).round() as usize;
            if st.resample_commands && resample_steps > 0 && st.step_count.is_multiple_of(resample_steps) {
                st.gait.cmd_vel = sample_command(&mut st.rng, cfg);
            }
            self.observe(false);
        }
        record
    }

    fn update_curriculum(&mut self, reason: DoneReason) {
        if self.ctx.terrains.len() <= 1 {
            return;
        }
        let st = &mut self.state;
        let success = if reason == DoneReason::Timeout {
            let p = st.robot.base_pos;
            let travelled = (p.x - st.spawn_xy[0]).hypot(p.y - st.spawn_xy[1]);
            (travelled / (0.5 * st.commanded_distance).max(0.5)).min(1.0)
        } else {
            0.0
        };
        let rate = self.ctx.cfg.curriculum.score_rate.clamp(0.0, 1.0);
        st.curriculum_score = ((1.0 - rate) * st.curriculum_score + rate * success).clamp(0.0, 1.0);
    }

    fn refresh_command_views(&mut self) {
        self.obs.command = self.state.gait.cmd_vel;
        self.obs.critic[..3].copy_from_slice(&self.obs.command);
    }

    fn observe(&mut self, fresh: bool) {
        let ctx = &self.ctx;
        let cfg = &ctx.cfg;
        let st = &mut self.state;
        let robot = &st.robot;
        let readout = SensorReadout { base_quat: robot.base_quat, base_ang_vel: robot.base_ang_vel.into(), q: robot.q, q_dot: robot.q_dot };
        let noisy = build_partial_obs(&readout, &cfg.noise, &mut self.latency, st.dynamics.obs_latency_steps, &mut st.rng);
        let frame = noisy.scaled(&cfg.obs_scales);
        if fresh {
            self.history.reset(frame);
        } else {
            self.history.push(frame);
        }

        let terrain = &ctx.terrains[st.level];
        let body_vel = robot.body_lin_vel();
        let weight = ctx.params.trunk_mass * st.dynamics.mass_scale * cfg.physics.gravity;
        let privileged = PrivilegedState {
            base_lin_vel: body_vel.into(),
            contact_force: robot.contact_force.map(|f| (f / weight).into()),
            friction_mu: terrain.friction_mu * st.dynamics.friction_scale,
            mass_scale: st.dynamics.mass_scale,
        };
        let heightmap = sample_heightmap(terrain, robot.base_pos.into(), robot.yaw());
        let gait = st.gait.descriptor(&st.foot_phases());
        let clean = noiseless_obs(&readout).scaled(&cfg.obs_scales);
        self.obs = Observation {
            history: self.history.flatten(),
            command: st.gait.cmd_vel,
            gait,
            critic: build_full_state(&st.gait.cmd_vel, &gait, &heightmap, &privileged.to_array(&cfg.obs_scales), &clean),
            lin_vel: body_vel.into(),
        };
    }
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn sample_command<R: Rng>(rng: &mut R, cfg: &EnvConfig) -> [f64; 3] {
    let c = &cfg.commands;
    [uniform(rng, c.lin_vel_x), uniform(rng, c.lin_vel_y), uniform(rng, c.yaw_rate)]
}

/// A batch of environments stepped in parallel. Env `i` uses RNG stream `i` of the
/// batch seed, so results do not depend on the thread count.
#[derive(Debug, Clone)]
pub struct VecEnv {
    pub envs: Vec<Env>,
}

impl VecEnv {
    pub fn new(ctx: Arc<EnvContext>, num_envs: usize, seed: u64) -> Self {
        let envs = (0..num_envs).map(|i| Env::new(ctx.clone(), seed, i as u64)).collect();
        VecEnv { envs }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn step(&mut self, actions: &[[f64; NUM_JOINTS]]) -> Vec<StepRecord> {
        assert_eq!(actions.len(), self.envs.len(), "one action per environment");
        self.envs.par_iter_mut().zip(actions.par_iter()).map(|(env, a)| env.step(a)).collect()
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.envs.iter().map(|e| e.observation())
    }
}
