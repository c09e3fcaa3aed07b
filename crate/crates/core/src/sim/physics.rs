//! Simplified quadruped dynamics.
//!
//! The trunk is a rigid box carrying the whole robot mass; legs are massless
//! kinematic chains whose joints behave as second-order servos with a fixed
//! reflected inertia. Feet are points that touch the height field through a
//! spring-damper normal force and an anchored tangential spring capped by
//! Coulomb friction. Joint dynamics see the contact load through `Jᵀ F`, with
//! the contact's stiffness and damping applied implicitly in the joint velocities.
//!
//! Joints and trunk rotation use semi-implicit Euler. Trunk position advances
//! with the mean of the old and new velocity, so free flight is integrated
//! without discretization error and a resting trunk has exactly zero velocity.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::terrain::TerrainField;
use crate::model::{knee_position, leg_fk, leg_jacobian, RobotParams, NUM_JOINTS, NUM_LEGS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsConfig {
    pub dt: f64,
    /// Physics substeps per policy step.
    pub decimation: usize,
    pub gravity: f64,
    /// Reflected rotor inertia of every joint (kg·m²).
    pub joint_inertia: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub tangential_stiffness: f64,
    pub tangential_damping: f64,
    /// Any base speed above this flags the state as diverged (m/s).
    pub max_speed: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            dt: 0.005,
            decimation: 4,
            gravity: 9.81,
            joint_inertia: 0.05,
            contact_stiffness: 4000.0,
            contact_damping: 120.0,
            tangential_stiffness: 4000.0,
            tangential_damping: 120.0,
            max_speed: 50.0,
        }
    }
}

impl PhysicsConfig {
    pub fn policy_dt(&self) -> f64 {
        self.dt * self.decimation as f64
    }
}

/// Per-episode physical scales applied on top of the nominal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizedDynamics {
    pub friction_scale: f64,
    pub mass_scale: f64,
    pub kp_scale: f64,
    pub kd_scale: f64,
    pub obs_latency_steps: u32,
}

impl Default for RandomizedDynamics {
    fn default() -> Self {
        RandomizedDynamics { friction_scale: 1.0, mass_scale: 1.0, kp_scale: 1.0, kd_scale: 1.0, obs_latency_steps: 0 }
    }
}

/// Full simulated state of one robot.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub base_pos: Vector3<f64>,
    pub base_quat: UnitQuaternion<f64>,
    /// World frame.
    pub base_lin_vel: Vector3<f64>,
    /// Body frame.
    pub base_ang_vel: Vector3<f64>,
    pub q: [f64; NUM_JOINTS],
    pub q_dot: [f64; NUM_JOINTS],
    /// World frame, kept consistent with `q` and the base pose.
    pub foot_pos: [Vector3<f64>; NUM_LEGS],
    pub foot_vel: [Vector3<f64>; NUM_LEGS],
    /// Ground reaction on each foot, world frame (N).
    pub contact_force: [Vector3<f64>; NUM_LEGS],
    pub last_torque: [f64; NUM_JOINTS],
    pub prev_q_target: [f64; NUM_JOINTS],
    /// Sticking point of each foot's tangential spring while in contact.
    pub slip_anchor: [Option<Vector2<f64>>; NUM_LEGS],
    pub diverged: bool,
}

impl RobotState {
    /// Robot at rest with the given pose; foot kinematics filled in.
    pub fn at_rest(params: &RobotParams, base_pos: Vector3<f64>, base_quat: UnitQuaternion<f64>, q: [f64; NUM_JOINTS]) -> Self {
        let mut state = RobotState {
            base_pos,
            base_quat,
            base_lin_vel: Vector3::zeros(),
            base_ang_vel: Vector3::zeros(),
            q,
            q_dot: [0.0; NUM_JOINTS],
            foot_pos: [Vector3::zeros(); NUM_LEGS],
            foot_vel: [Vector3::zeros(); NUM_LEGS],
            contact_force: [Vector3::zeros(); NUM_LEGS],
            last_torque: [0.0; NUM_JOINTS],
            prev_q_target: q,
            slip_anchor: [None; NUM_LEGS],
            diverged: false,
        };
        state.update_kinematics(params);
        state
    }

    pub fn leg_q(&self, leg: usize) -> [f64; 3] {
        [self.q[3 * leg], self.q[3 * leg + 1], self.q[3 * leg + 2]]
    }

    pub fn leg_q_dot(&self, leg: usize) -> Vector3<f64> {
        Vector3::new(self.q_dot[3 * leg], self.q_dot[3 * leg + 1], self.q_dot[3 * leg + 2])
    }

    /// Recompute world foot positions and velocities from the joint and base state.
    pub fn update_kinematics(&mut self, params: &RobotParams) {
        let rot = self.base_quat.to_rotation_matrix();
        for leg in 0..NUM_LEGS {
            let q_leg = self.leg_q(leg);
            let p_body = leg_fk(q_leg, leg, params);
            let v_rel = self.base_ang_vel.cross(&p_body) + leg_jacobian(q_leg, params) * self.leg_q_dot(leg);
            self.foot_pos[leg] = self.base_pos + rot * p_body;
            self.foot_vel[leg] = self.base_lin_vel + rot * v_rel;
        }
    }

    /// Velocity of the base expressed in the body frame.
    pub fn body_lin_vel(&self) -> Vector3<f64> {
        self.base_quat.inverse_transform_vector(&self.base_lin_vel)
    }

    pub fn yaw(&self) -> f64 {
        let fwd = self.base_quat * Vector3::x();
        fwd.y.atan2(fwd.x)
    }

    pub fn knee_positions(&self, params: &RobotParams) -> [Vector3<f64>; NUM_LEGS] {
        std::array::from_fn(|leg| self.base_pos + self.base_quat * knee_position(self.leg_q(leg), leg, params))
    }

    /// Bottom corners and centre of the trunk box, world frame.
    pub fn trunk_probe_points(&self, params: &RobotParams) -> [Vector3<f64>; 5] {
        let [l, w, h] = params.trunk_dims;
        let corner = |sx: f64, sy: f64| self.base_pos + self.base_quat * Vector3::new(sx * l / 2.0, sy * w / 2.0, -h / 2.0);
        [self.base_pos, corner(1.0, 1.0), corner(1.0, -1.0), corner(-1.0, 1.0), corner(-1.0, -1.0)]
    }

    pub fn is_finite(&self) -> bool {
        self.base_pos.iter().all(|x| x.is_finite())
            && self.base_lin_vel.iter().all(|x| x.is_finite())
            && self.base_ang_vel.iter().all(|x| x.is_finite())
            && self.base_quat.coords.iter().all(|x| x.is_finite())
            && self.q.iter().chain(&self.q_dot).all(|x| x.is_finite())
    }
}

/// Diagonal inertia of a solid box.
pub fn box_inertia(mass: f64, dims: [f64; 3]) -> Vector3<f64> {
    let [l, w, h] = dims;
    Vector3::new(mass / 12.0 * (w * w + h * h), mass / 12.0 * (l * l + h * h), mass / 12.0 * (l * l + w * w))
}

/// Ground reaction on a point foot. Returns the force and the updated tangential anchor.
pub fn contact_force(
    foot_pos: &Vector3<f64>,
    foot_vel: &Vector3<f64>,
    anchor: Option<Vector2<f64>>,
    ground_height: f64,
    mu: f64,
    cfg: &PhysicsConfig,
) -> (Vector3<f64>, Option<Vector2<f64>>) {
    let penetration = ground_height - foot_pos.z;
    if penetration <= 0.0 {
        return (Vector3::zeros(), None);
    }
    let normal = (cfg.contact_stiffness * penetration - cfg.contact_damping * foot_vel.z).max(0.0);
    let p_xy = foot_pos.xy();
    let anchor = anchor.unwrap_or(p_xy);
    let mut tangential = -cfg.tangential_stiffness * (p_xy - anchor) - cfg.tangential_damping * foot_vel.xy();
    let cap = mu * normal;
    let magnitude = tangential.norm();
    let mut new_anchor = anchor;
    if magnitude > cap {
        tangential *= if magnitude > 0.0 { cap / magnitude } else { 0.0 };
        // slide the anchor so the spring alone reproduces the capped force
        new_anchor = p_xy + tangential / cfg.tangential_stiffness;
    }
    (Vector3::new(tangential.x, tangential.y, normal), Some(new_anchor))
}

/// Advance one physics step of length `dt` under joint torques `torque`.
pub fn physics_substep(
    state: &RobotState,
    torque: &[f64; NUM_JOINTS],
    terrain: &TerrainField,
    dt: f64,
    params: &RobotParams,
    dynamics: &RandomizedDynamics,
    cfg: &PhysicsConfig,
) -> RobotState {
    let mut next = state.clone();
    let rot = state.base_quat.to_rotation_matrix();
    let mass = params.trunk_mass * dynamics.mass_scale;
    let inertia = box_inertia(mass, params.trunk_dims);
    let mu = terrain.friction_mu * dynamics.friction_scale;
    let gravity = Vector3::new(0.0, 0.0, -cfg.gravity);

    let mut force = Vector3::zeros();
    let mut moment = Vector3::zeros();
    for leg in 0..NUM_LEGS {
        let p = state.foot_pos[leg];
        let ground = terrain.height_at(p.x, p.y);
        let (f, anchor) = contact_force(&p, &state.foot_vel[leg], state.slip_anchor[leg], ground, mu, cfg);
        next.slip_anchor[leg] = anchor;

        // The foot's effective mass is tiny, so contact stiffness and damping are
        // taken implicitly in the joint velocities: (I + dt·Jᵀ(C + dt·K)J) q̇' = I q̇ + dt(τ + Jᵀf).
        let q_leg = state.leg_q(leg);
        let jac = rot.matrix() * leg_jacobian(q_leg, params);
        let q_dot = state.leg_q_dot(leg);
        let tau = Vector3::new(torque[3 * leg], torque[3 * leg + 1], torque[3 * leg + 2]);
        let mut gain = Vector3::zeros();
        if f.z > 0.0 {
            let sliding = Vector2::new(f.x, f.y).norm() >= mu * f.z * (1.0 - 1e-9);
            let tangential = if sliding { 0.0 } else { cfg.tangential_damping + dt * cfg.tangential_stiffness };
            gain = Vector3::new(tangential, tangential, cfg.contact_damping + dt * cfg.contact_stiffness);
        }
        let lhs = Matrix3::identity() * cfg.joint_inertia + dt * jac.transpose() * Matrix3::from_diagonal(&gain) * jac;
        let rhs = cfg.joint_inertia * q_dot + dt * (tau + jac.transpose() * f);
        let q_dot_new = lhs.lu().solve(&rhs).unwrap_or(q_dot);
        let mut f_eff = f - gain.component_mul(&(jac * (q_dot_new - q_dot)));
        f_eff.z = f_eff.z.max(0.0);
        let tangential = Vector2::new(f_eff.x, f_eff.y).norm();
        if tangential > mu * f_eff.z {
            let k = mu * f_eff.z / tangential;
            f_eff.x *= k;
            f_eff.y *= k;
        }
        next.contact_force[leg] = f_eff;
        force += f_eff;
        moment += (p - state.base_pos).cross(&f_eff);

        for j in 0..3 {
            let i = 3 * leg + j;
            next.q_dot[i] = q_dot_new[j];
            let q = state.q[i] + dt * next.q_dot[i];
            let clamped = q.clamp(params.joint_lower[i], params.joint_upper[i]);
            if clamped != q {
                next.q_dot[i] = 0.0;
            }
            next.q[i] = clamped;
        }
    }

    // trunk translation: mean of old and new velocity, exact under constant acceleration
    next.base_lin_vel = state.base_lin_vel + dt * (force / mass + gravity);
    next.base_pos = state.base_pos + 0.5 * dt * (state.base_lin_vel + next.base_lin_vel);

    // trunk rotation: Euler's equations in the body frame
    let w = state.base_ang_vel;
    let i_w = inertia.component_mul(&w);
    let torque_body = rot.transpose() * moment;
    let ang_acc = (torque_body - w.cross(&i_w)).component_div(&inertia);
    next.base_ang_vel = w + dt * ang_acc;
    let spin = UnitQuaternion::from_scaled_axis(next.base_ang_vel * dt);
    next.base_quat = UnitQuaternion::new_normalize((state.base_quat * spin).into_inner());

    next.last_torque = *torque;
    next.update_kinematics(params);
    next.diverged = !next.is_finite()
        || next.base_lin_vel.norm() > cfg.max_speed
        || next.base_ang_vel.norm() > 10.0 * cfg.max_speed;
    next
}

/// Kinetic plus gravitational potential energy of the trunk.
pub fn trunk_energy(state: &RobotState, params: &RobotParams, dynamics: &RandomizedDynamics, cfg: &PhysicsConfig) -> f64 {
    let mass = params.trunk_mass * dynamics.mass_scale;
    let inertia = box_inertia(mass, params.trunk_dims);
    let w = state.base_ang_vel;
    0.5 * mass * state.base_lin_vel.norm_squared() + 0.5 * w.dot(&inertia.component_mul(&w)) + mass * cfg.gravity * state.base_pos.z
}
