//! The reward table: task tracking `r_g`, regularization `r_l`, style `r_s`
//! (including the foothold term) and contact-schedule `r_c`, summed into `r_t`.
//!
//! Weights are stored unsigned; the sign of each row lives in the formula.
//! Every `‖·‖` in the table is evaluated as a squared L2 norm unless
//! [`RewardWeights::squared_norms`] is switched off.

use serde::{Deserialize, Serialize};

use crate::foothold::{foothold_error, FootXY};
use crate::model::{NUM_JOINTS, NUM_LEGS};

pub const NUM_REWARD_ROWS: usize = 13;

/// Row names, in the order used by [`RewardBreakdown::rows`] and the metrics CSV.
pub const REWARD_ROW_NAMES: [&str; NUM_REWARD_ROWS] = [
    "lin_track",
    "ang_track",
    "torque",
    "joint_acc",
    "action_rate",
    "height",
    "collision",
    "vz",
    "omega_xy",
    "gravity_xy",
    "raibert",
    "swing_force",
    "stance_vel",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_lin_track: f64,
    pub w_ang_track: f64,
    pub w_torque: f64,
    pub w_joint_acc: f64,
    pub w_action_rate: f64,
    pub w_height: f64,
    pub w_collision: f64,
    pub w_vz: f64,
    pub w_omega_xy: f64,
    pub w_gravity_xy: f64,
    pub w_raibert: f64,
    pub w_swing_force: f64,
    pub w_stance_vel: f64,
    pub tracking_sigma: f64,
    pub sigma_cf: f64,
    /// Read table norms as squared L2 norms (`true`) or plain L2 norms.
    pub squared_norms: bool,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_lin_track: 1.0,
            w_ang_track: 0.5,
            w_torque: 1e-4,
            w_joint_acc: 2.5e-7,
            w_action_rate: 0.1,
            w_height: 1.0,
            w_collision: 0.1,
            w_vz: 0.5,
            w_omega_xy: 0.05,
            w_gravity_xy: 0.5,
            w_raibert: 1.0,
            w_swing_force: 1.0,
            w_stance_vel: 1.0,
            tracking_sigma: 0.15,
            sigma_cf: 0.25,
            squared_norms: true,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        let w = [
            self.w_lin_track,
            self.w_ang_track,
            self.w_torque,
            self.w_joint_acc,
            self.w_action_rate,
            self.w_height,
            self.w_collision,
            self.w_vz,
            self.w_omega_xy,
            self.w_gravity_xy,
            self.w_raibert,
            self.w_swing_force,
            self.w_stance_vel,
        ];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err("reward weights must be finite and >= 0".into());
        }
        if !(self.tracking_sigma > 0.0 && self.sigma_cf > 0.0) {
            return Err("tracking_sigma and sigma_cf must be > 0".into());
        }
        Ok(())
    }

    /// The table's norm of a vector under the configured interpretation.
    fn norm(&self, v: &[f64]) -> f64 {
        let sq: f64 = v.iter().map(|x| x * x).sum();
        if self.squared_norms {
            sq
        } else {
            sq.sqrt()
        }
    }
}

/// Per-step reward values: one entry per table row plus the four group sums.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub rows: [f64; NUM_REWARD_ROWS],
    pub r_g: f64,
    pub r_l: f64,
    pub r_s: f64,
    pub r_c: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn from_rows(rows: [f64; NUM_REWARD_ROWS]) -> Self {
        let r_g = rows[0] + rows[1];
        let r_l = rows[2..9].iter().sum();
        let r_s = rows[9] + rows[10];
        let r_c = rows[11] + rows[12];
        RewardBreakdown { rows, r_g, r_l, r_s, r_c, total: total_reward(r_g, r_l, r_s, r_c) }
    }
}

/// Returns the two task rows `(linear, yaw)`.
fn task_rows(v_xy: [f64; 2], v_cmd: [f64; 2], yaw_rate: f64, yaw_cmd: f64, w: &RewardWeights) -> [f64; 2] {
    let e_v = w.norm(&[v_cmd[0] - v_xy[0], v_cmd[1] - v_xy[1]]);
    let e_w = w.norm(&[yaw_cmd - yaw_rate]);
    [
        w.w_lin_track * (-e_v / w.tracking_sigma).exp(),
        w.w_ang_track * (-e_w / w.tracking_sigma).exp(),
    ]
}

pub fn task_reward(v_xy: [f64; 2], v_cmd: [f64; 2], yaw_rate: f64, yaw_cmd: f64, weights: &RewardWeights) -> f64 {
    let [a, b] = task_rows(v_xy, v_cmd, yaw_rate, yaw_cmd, weights);
    a + b
}

/// Quantities consumed by the regularization rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationInputs {
    pub torque: [f64; NUM_JOINTS],
    pub joint_acc: [f64; NUM_JOINTS],
    /// Change of the joint targets between consecutive policy steps.
    pub target_delta: [f64; NUM_JOINTS],
    pub body_height: f64,
    pub body_height_cmd: f64,
    pub n_collision: u32,
    /// Base velocity in the body frame.
    pub lin_vel: [f64; 3],
    pub ang_vel: [f64; 3],
}

impl RegularizationInputs {
    pub fn still(height: f64) -> Self {
        RegularizationInputs {
            torque: [0.0; NUM_JOINTS],
            joint_acc: [0.0; NUM_JOINTS],
            target_delta: [0.0; NUM_JOINTS],
            body_height: height,
            body_height_cmd: height,
            n_collision: 0,
            lin_vel: [0.0; 3],
            ang_vel: [0.0; 3],
        }
    }
}

fn regularization_rows(x: &RegularizationInputs, w: &RewardWeights) -> [f64; 7] {
    [
        -w.w_torque * w.norm(&x.torque),
        -w.w_joint_acc * w.norm(&x.joint_acc),
        -w.w_action_rate * w.norm(&x.target_delta),
        -w.w_height * w.norm(&[x.body_height_cmd - x.body_height]),
        -w.w_collision * f64::from(x.n_collision),
        -w.w_vz * w.norm(&[x.lin_vel[2]]),
        -w.w_omega_xy * (w.norm(&[x.ang_vel[0]]) + w.norm(&[x.ang_vel[1]])),
    ]
}

pub fn regularization_reward(inputs: &RegularizationInputs, weights: &RewardWeights) -> f64 {
    regularization_rows(inputs, weights).iter().sum()
}

fn style_rows(gravity: [f64; 3], p_actual: &FootXY, p_desired: &FootXY, w: &RewardWeights) -> [f64; 2] {
    [
        -w.w_gravity_xy * (w.norm(&[gravity[0]]) + w.norm(&[gravity[1]])),
        -w.w_raibert * foothold_error(p_actual, p_desired),
    ]
}

pub fn style_reward(gravity: [f64; 3], p_actual: &FootXY, p_desired: &FootXY, weights: &RewardWeights) -> f64 {
    style_rows(gravity, p_actual, p_desired, weights).iter().sum()
}

/// Contact-schedule rows `(swing_force, stance_velocity)`. Forces must already be
/// normalized by body weight.
fn contact_rows(c: &[f64; NUM_LEGS], forces: &[[f64; 3]; NUM_LEGS], foot_vels: &[[f64; 3]; NUM_LEGS], w: &RewardWeights) -> [f64; 2] {
    let mut swing = 0.0;
    let mut stance = 0.0;
    for i in 0..NUM_LEGS {
        swing += (1.0 - c[i]) * (-w.norm(&forces[i]) / w.sigma_cf).exp();
        stance += c[i] * (-w.norm(&foot_vels[i]) / w.sigma_cf).exp();
    }
    [w.w_swing_force * swing, w.w_stance_vel * stance]
}

pub fn contact_schedule_reward(
    c: &[f64; NUM_LEGS],
    forces: &[[f64; 3]; NUM_LEGS],
    foot_vels: &[[f64; 3]; NUM_LEGS],
    weights: &RewardWeights,
) -> f64 {
    let [a, b] = contact_rows(c, forces, foot_vels, weights);
    a + b
}

pub fn total_reward(r_g: f64, r_l: f64, r_s: f64, r_c: f64) -> f64 {
    r_g + r_l + r_s + r_c
}

/// Everything needed to evaluate one step's reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs {
    pub lin_vel_xy: [f64; 2],
    pub yaw_rate: f64,
    pub cmd_vel: [f64; 3],
    pub regularization: RegularizationInputs,
    pub gravity: [f64; 3],
    pub feet_actual: FootXY,
    pub feet_desired: FootXY,
    pub contact_cmd: [f64; NUM_LEGS],
    /// Foot contact forces divided by body weight.
    pub foot_forces: [[f64; 3]; NUM_LEGS],
    pub foot_vels: [[f64; 3]; NUM_LEGS],
}

pub fn evaluate(inputs: &RewardInputs, weights: &RewardWeights) -> RewardBreakdown {
    let mut rows = [0.0; NUM_REWARD_ROWS];
    let [cx, cy, cw] = inputs.cmd_vel;
    rows[0..2].copy_from_slice(&task_rows(inputs.lin_vel_xy, [cx, cy], inputs.yaw_rate, cw, weights));
    rows[2..9].copy_from_slice(&regularization_rows(&inputs.regularization, weights));
    rows[9..11].copy_from_slice(&style_rows(inputs.gravity, &inputs.feet_actual, &inputs.feet_desired, weights));
    rows[11..13].copy_from_slice(&contact_rows(&inputs.contact_cmd, &inputs.foot_forces, &inputs.foot_vels, weights));
    RewardBreakdown::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FEET: FootXY = [[0.2, -0.15], [0.2, 0.15], [-0.2, -0.15], [-0.2, 0.15]];

    fn ideal_trot() -> RewardInputs {
        RewardInputs {
            lin_vel_xy: [0.4, -0.1],
            yaw_rate: 0.3,
            cmd_vel: [0.4, -0.1, 0.3],
            regularization: RegularizationInputs::still(0.3),
            gravity: [0.0, 0.0, -1.0],
            feet_actual: FEET,
            feet_desired: FEET,
            contact_cmd: [1.0, 0.0, 0.0, 1.0],
            foot_forces: [[0.0, 0.0, 0.5], [0.0; 3], [0.0; 3], [0.0, 0.0, 0.5]],
            foot_vels: [[0.0; 3], [0.8, 0.0, 0.3], [0.8, 0.0, 0.3], [0.0; 3]],
        }
    }

    #[test]
    fn task_examples() {
        let w = RewardWeights::default();
        assert_eq!(task_reward([0.3, 0.1], [0.3, 0.1], 0.5, 0.5, &w), 1.5);
        let r = task_reward([0.0, 0.0], [0.15f64.sqrt(), 0.0], 0.0, 0.0, &w);
        assert!((r - (1.0 / std::f64::consts::E + 0.5)).abs() < 1e-12);
        assert!((r - 0.86788).abs() < 1e-5);
        let far = task_reward([0.0, 0.0], [1e3, 0.0], 0.0, 1e3, &w);
        assert!((0.0..1e-12).contains(&far));
    }

    #[test]
    fn regularization_examples() {
        let w = RewardWeights::default();
        assert_eq!(regularization_reward(&RegularizationInputs::still(0.31), &w), 0.0);
        let mut x = RegularizationInputs::still(0.31);
        x.n_collision = 1;
        assert!((regularization_reward(&x, &w) + 0.1).abs() < 1e-15);
        let mut x = RegularizationInputs::still(0.31);
        x.torque[0] = 10.0;
        assert!((regularization_reward(&x, &w) + 0.01).abs() < 1e-15);
    }

    #[test]
    fn style_examples() {
        let w = RewardWeights::default();
        assert_eq!(style_reward([0.0, 0.0, -1.0], &FEET, &FEET, &w), 0.0);
        let g = [0.5, 0.0, -(0.75f64).sqrt()];
        assert!((style_reward(g, &FEET, &FEET, &w) + 0.125).abs() < 1e-15);
        let mut off = FEET;
        off[0][0] += 0.1;
        assert!((style_reward([0.0, 0.0, -1.0], &off, &FEET, &w) + 0.01).abs() < 1e-12);
    }

    #[test]
    fn contact_examples() {
        let w = RewardWeights::default();
        let x = ideal_trot();
        assert_eq!(contact_schedule_reward(&x.contact_cmd, &x.foot_forces.map(|_| [0.0; 3]), &[[0.0; 3]; 4], &w), 4.0);
        let mut forces = [[0.0; 3]; 4];
        forces[1] = [0.0, 0.0, 50.0];
        let r = contact_schedule_reward(&x.contact_cmd, &forces, &[[0.0; 3]; 4], &w);
        assert!((r - 3.0).abs() < 1e-12);
        let mut vels = [[0.0; 3]; 4];
        vels[0] = [20.0, 0.0, 0.0];
        let r = contact_schedule_reward(&x.contact_cmd, &[[0.0; 3]; 4], &vels, &w);
        assert!((r - 3.0).abs() < 1e-12);
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_reward(1.5, 0.0, 0.0, 4.0), 5.5);
        assert_eq!(total_reward(0.0, 0.0, 0.0, 0.0), 0.0);
        assert!((total_reward(1.5, -0.2, -0.1, 3.0) - 4.2).abs() < 1e-15);
    }

    #[test]
    fn ideal_trot_breakdown() {
        let mut x = ideal_trot();
        x.foot_forces = [[0.0; 3]; 4];
        x.foot_vels = [[0.0; 3]; 4];
        let b = evaluate(&x, &RewardWeights::default());
        assert_eq!((b.r_g, b.r_l, b.r_s, b.r_c, b.total), (1.5, 0.0, 0.0, 4.0, 5.5));
    }

    #[test]
    fn unsquared_switch() {
        let w = RewardWeights { squared_norms: false, ..RewardWeights::default() };
        let mut x = RegularizationInputs::still(0.3);
        x.torque[0] = 3.0;
        x.torque[1] = 4.0;
        assert!((regularization_reward(&x, &w) + 5e-4).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn group_signs_and_bounds(
            v in proptest::array::uniform3(-2.0f64..2.0),
            cmd in proptest::array::uniform3(-2.0f64..2.0),
            tau in proptest::array::uniform12(-25.0f64..25.0),
            h in 0.0f64..0.6,
            ncol in 0u32..5,
            c in proptest::array::uniform4(0.0f64..1.0),
            f in proptest::array::uniform4(proptest::array::uniform3(-2.0f64..2.0)),
            gx in -0.7f64..0.7,
        ) {
            let mut x = ideal_trot();
            x.lin_vel_xy = [v[0], v[1]];
            x.yaw_rate = v[2];
            x.cmd_vel = cmd;
            x.regularization.torque = tau;
            x.regularization.body_height = h;
            x.regularization.n_collision = ncol;
            x.contact_cmd = c;
            x.foot_forces = f;
            x.gravity = [gx, 0.0, -(1.0 - gx * gx).sqrt()];
            let b = evaluate(&x, &RewardWeights::default());
            prop_assert!(b.r_g > 0.0 && b.r_g <= 1.5);
            prop_assert!(b.r_l <= 0.0 && b.r_s <= 0.0);
            prop_assert!(b.r_c >= 0.0 && b.r_c <= 4.0);
            prop_assert_eq!(b.total, b.r_g + b.r_l + b.r_s + b.r_c);
            prop_assert_eq!(b.r_g, b.rows[0] + b.rows[1]);
        }

        #[test]
        fn contact_terms_monotone(c in 0.0f64..1.0, f1 in 0.0f64..3.0, df in 0.0f64..3.0) {
            let w = RewardWeights::default();
            let cs = [c; 4];
            let lo = contact_schedule_reward(&cs, &[[0.0, 0.0, f1]; 4], &[[0.0; 3]; 4], &w);
            let hi = contact_schedule_reward(&cs, &[[0.0, 0.0, f1 + df]; 4], &[[0.0; 3]; 4], &w);
            prop_assert!(hi <= lo + 1e-15);
            let lo = contact_schedule_reward(&cs, &[[0.0; 3]; 4], &[[f1, 0.0, 0.0]; 4], &w);
            let hi = contact_schedule_reward(&cs, &[[0.0; 3]; 4], &[[f1 + df, 0.0, 0.0]; 4], &w);
            prop_assert!(hi <= lo + 1e-15);
        }

        #[test]
        fn shrinking_errors_increase_total(scale in 0.0f64..1.0, e in proptest::array::uniform3(0.01f64..1.0)) {
            let w = RewardWeights::default();
            let base = ideal_trot();
            let perturbed = |s: f64| {
                let mut x = base;
                x.lin_vel_xy[0] += s * e[0];
                x.regularization.torque[3] = s * 20.0 * e[1];
                x.feet_actual[1][1] += s * e[2] * 0.1;
                x.foot_vels[0][0] = s * e[2];
                evaluate(&x, &w).total
            };
            prop_assert!(perturbed(scale) >= perturbed(1.0) - 1e-12);
        }
    }
}
