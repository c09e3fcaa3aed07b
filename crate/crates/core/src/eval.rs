//! Deterministic closed-loop rollouts of a policy under a command schedule.

use std::sync::Arc;

use ndarray::ArrayView2;

use crate::model::NUM_LEGS;
use crate::nets::NetworkBundle;
use crate::rewards::RewardBreakdown;
use crate::sim::{DoneReason, Env, EnvContext};

/// A command that takes effect at `start` seconds and holds until the next segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandSegment {
    pub start: f64,
    /// `(v_x, v_y, ω_z)` in m/s, m/s, rad/s.
    pub cmd: [f64; 3],
}

/// Piecewise-constant velocity command schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandProfile {
    segments: Vec<CommandSegment>,
}

impl CommandProfile {
    /// Segments must be non-empty, finite, start at 0 and have strictly increasing start times.
    pub fn new(segments: Vec<CommandSegment>) -> Result<Self, String> {
        let first = segments.first().ok_or("command profile has no segments")?;
        if first.start != 0.0 {
            return Err(format!("command profile must start at t = 0, first segment starts at {}", first.start));
        }
        for (i, seg) in segments.iter().enumerate() {
            if !seg.start.is_finite() || seg.cmd.iter().any(|c| !c.is_finite()) {
                return Err(format!("segment {i} has non-finite values"));
            }
            if i > 0 && seg.start <= segments[i - 1].start {
                return Err(format!("segment {i} starts at {} which is not after {}", seg.start, segments[i - 1].start));
            }
        }
        Ok(CommandProfile { segments })
    }

    pub fn constant(cmd: [f64; 3]) -> Self {
        CommandProfile { segments: vec![CommandSegment { start: 0.0, cmd }] }
    }

    pub fn segments(&self) -> &[CommandSegment] {
        &self.segments
    }

    pub fn at(&self, t: f64) -> [f64; 3] {
        self.segments.iter().rev().find(|s| s.start <= t).unwrap_or(&self.segments[0]).cmd
    }
}

/// One policy step of an evaluation rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalStep {
    /// Time at the end of the step.
    pub t: f64,
    pub cmd: [f64; 3],
    /// Body-frame linear velocity.
    pub lin_vel: [f64; 3],
    pub yaw_rate: f64,
    pub base_height: f64,
    pub foot_height: [f64; NUM_LEGS],
    pub contact: [bool; NUM_LEGS],
    pub reward: RewardBreakdown,
    pub done: Option<DoneReason>,
}

/// Run one env for `duration_s` with the mean action of `bundle`. The env auto-resets on termination.
pub fn run_policy(ctx: Arc<EnvContext>, bundle: &NetworkBundle, profile: &CommandProfile, duration_s: f64, seed: u64) -> Vec<EvalStep> {
    let dt = ctx.policy_dt();
    let steps = (duration_s / dt).round() as usize;
    let mut env = Env::new(ctx, seed, 0);
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        env.set_command(profile.at(k as f64 * dt));
        let obs = env.observation();
        let row = |v: &[f64]| ArrayView2::from_shape((1, v.len()), v).expect("row view").to_owned();
        let policy = bundle.policy_forward(row(&obs.history).view(), row(&obs.command).view(), row(&obs.gait).view());
        let action: [f64; 12] = std::array::from_fn(|j| policy.mean[[0, j]]);
        let rec = env.step(&action);
        out.push(EvalStep {
            t: (k + 1) as f64 * dt,
            cmd: rec.cmd_vel,
            lin_vel: rec.body_lin_vel,
            yaw_rate: rec.yaw_rate,
            base_height: rec.base_height,
            foot_height: rec.foot_height,
            contact: rec.contact_force_z.map(|f| f > 0.0),
            reward: rec.reward,
            done: rec.done,
        });
    }
    out
}

/// Mean `|v_x − v_x^cmd|` over a rollout.
pub fn mean_forward_error(steps: &[EvalStep]) -> f64 {
    if steps.is_empty() {
        return 0.0;
    }
    steps.iter().map(|s| (s.lin_vel[0] - s.cmd[0]).abs()).sum::<f64>() / steps.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_lookup_is_piecewise_constant() {
        let p = CommandProfile::new(vec![
            CommandSegment { start: 0.0, cmd: [0.0; 3] },
            CommandSegment { start: 2.0, cmd: [0.5, 0.0, 0.0] },
        ])
        .unwrap();
        assert_eq!(p.at(1.99), [0.0; 3]);
        assert_eq!(p.at(2.0), [0.5, 0.0, 0.0]);
        assert_eq!(p.at(50.0), [0.5, 0.0, 0.0]);
    }

    #[test]
    fn profile_rejects_bad_schedules() {
        assert!(CommandProfile::new(vec![]).is_err());
        assert!(CommandProfile::new(vec![CommandSegment { start: 1.0, cmd: [0.0; 3] }]).is_err());
        let dup = vec![CommandSegment { start: 0.0, cmd: [0.0; 3] }, CommandSegment { start: 0.0, cmd: [1.0, 0.0, 0.0] }];
        assert!(CommandProfile::new(dup).is_err());
    }
}
