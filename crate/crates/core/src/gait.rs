//! Per-foot phase clocks, the commanded contact schedule and the gait descriptor `g_t`.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

use crate::model::NUM_LEGS;

/// Length of the gait descriptor: sin/cos per foot phase, frequency, body height, stance ratio.
pub const GAIT_DESCRIPTOR_DIM: usize = 2 * NUM_LEGS + 3;
/// Length of the velocity command `(v_x, v_y, ω_z)`.
pub const COMMAND_DIM: usize = 3;

pub const TROT_OFFSETS: [f64; NUM_LEGS] = [0.0, 0.5, 0.5, 0.0];

#[derive(Debug, Error, PartialEq)]
pub enum GaitError {
    #[error("gait frequency must be > 0, got {0}")]
    Frequency(f64),
    #[error("stance ratio must lie in (0.1, 0.9), got {0}")]
    StanceRatio(f64),
    #[error("phase offset {index} must lie in [0, 1), got {value}")]
    Offset { index: usize, value: f64 },
    #[error("command contains a non-finite value")]
    NonFinite,
}

/// Commanded velocities plus the gait descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitCommand {
    /// `(v_x, v_y, ω_z)` in the yaw-aligned body frame.
    pub cmd_vel: [f64; 3],
    pub phase_offsets: [f64; NUM_LEGS],
    pub frequency: f64,
    pub body_height: f64,
    pub stance_ratio: f64,
}

impl GaitCommand {
    /// Trot at 2 Hz with a 0.5 duty factor.
    pub fn trot(cmd_vel: [f64; 3], body_height: f64) -> Self {
        GaitCommand { cmd_vel, phase_offsets: TROT_OFFSETS, frequency: 2.0, body_height, stance_ratio: 0.5 }
    }

    pub fn validate(&self) -> Result<(), GaitError> {
        if !(self.frequency.is_finite() && self.frequency > 0.0) {
            return Err(GaitError::Frequency(self.frequency));
        }
        if !(self.stance_ratio > 0.1 && self.stance_ratio < 0.9) {
            return Err(GaitError::StanceRatio(self.stance_ratio));
        }
        for (index, &value) in self.phase_offsets.iter().enumerate() {
            if !(0.0..1.0).contains(&value) {
                return Err(GaitError::Offset { index, value });
            }
        }
        if self.cmd_vel.iter().any(|v| !v.is_finite()) || !self.body_height.is_finite() {
            return Err(GaitError::NonFinite);
        }
        Ok(())
    }

    /// Foot phases at base phase zero.
    pub fn initial_phases(&self) -> [f64; NUM_LEGS] {
        self.phase_offsets.map(|o| foot_phase(0.0, o))
    }

    /// `g_t = [sin 2πφ_i, cos 2πφ_i] × 4, f, h_b, ρ`.
    pub fn descriptor(&self, phases: &[f64; NUM_LEGS]) -> [f64; GAIT_DESCRIPTOR_DIM] {
        let mut g = [0.0; GAIT_DESCRIPTOR_DIM];
        for (i, phase) in phases.iter().enumerate() {
            let (s, c) = (TAU * phase).sin_cos();
            g[2 * i] = s;
            g[2 * i + 1] = c;
        }
        g[8] = self.frequency;
        g[9] = self.body_height;
        g[10] = self.stance_ratio;
        g
    }
}

fn wrap_unit(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    // rem_euclid can return exactly 1.0 for tiny negative inputs
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// `phase' = (phase + f·dt) mod 1`.
pub fn advance_phases(phases: &[f64; NUM_LEGS], frequency: f64, dt: f64) -> [f64; NUM_LEGS] {
    phases.map(|p| wrap_unit(p + frequency * dt))
}

pub fn foot_phase(base_phase: f64, offset: f64) -> f64 {
    wrap_unit(base_phase + offset)
}

pub fn in_stance(phase: f64, stance_ratio: f64) -> bool {
    phase < stance_ratio
}

/// Default transition width of the smoothed contact indicator, in phase units.
pub const CONTACT_SMOOTHING: f64 = 0.04;

/// Smoothed commanded-contact indicator: ≈1 over the stance window `[0, ρ)`, ≈0 over
/// swing, exactly 0.5 at both window edges.
pub fn desired_contact(phase: f64, stance_ratio: f64) -> f64 {
    desired_contact_smoothed(phase, stance_ratio, CONTACT_SMOOTHING)
}

pub fn desired_contact_smoothed(phase: f64, stance_ratio: f64, kappa: f64) -> f64 {
    // signed distance from the stance-window centre, wrapped to [-0.5, 0.5)
    let d = wrap_unit(phase - 0.5 * stance_ratio + 0.5) - 0.5;
    let margin = 0.5 * stance_ratio - d.abs();
    1.0 / (1.0 + (-margin / kappa).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn advance_examples() {
        assert_eq!(advance_phases(&[0.0; 4], 2.0, 0.25), [0.5; 4]);
        let wrapped = advance_phases(&[0.9; 4], 2.0, 0.1)[0];
        assert!((wrapped - 0.1).abs() < 1e-12);
        let p = [0.1, 0.2, 0.7, 0.95];
        assert_eq!(advance_phases(&p, 0.0, 0.02), p);
    }

    #[test]
    fn foot_phase_examples() {
        let trot: Vec<f64> = TROT_OFFSETS.iter().map(|&o| foot_phase(0.25, o)).collect();
        assert_eq!(trot, vec![0.25, 0.75, 0.75, 0.25]);
        assert_eq!(foot_phase(0.3, 0.0), 0.3);
        let w = foot_phase(0.75, 0.5);
        assert!((0.0..1.0).contains(&w) && (w - 0.25).abs() < 1e-12);
    }

    #[test]
    fn contact_examples() {
        for rho in [0.4, 0.5, 0.6, 0.7] {
            assert!(desired_contact(rho / 2.0, rho) > 0.99);
            // mid-swing sits (1 − ρ)/2 outside the stance window
            let mid_swing = 1.0 / (1.0 + ((1.0 - rho) / 2.0 / CONTACT_SMOOTHING).exp());
            assert!((desired_contact(rho + (1.0 - rho) / 2.0, rho) - mid_swing).abs() < 1e-12);
            assert!(mid_swing < 0.025);
            assert!((desired_contact(rho, rho) - 0.5).abs() < 1e-12);
            assert!((desired_contact(0.0, rho) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn contact_time_average_is_the_stance_ratio() {
        for rho in [0.2, 0.35, 0.5, 0.65, 0.8] {
            let n = 100_000;
            let mean: f64 = (0..n).map(|i| desired_contact(i as f64 / n as f64, rho)).sum::<f64>() / n as f64;
            assert!((mean - rho).abs() < 0.02, "rho={rho} mean={mean}");
        }
    }

    #[test]
    fn descriptor_layout() {
        let cmd = GaitCommand::trot([0.5, 0.0, 0.0], 0.35);
        let g = cmd.descriptor(&cmd.initial_phases());
        assert_eq!(g.len(), 11);
        assert_eq!(&g[8..], &[2.0, 0.35, 0.5]);
        assert!((g[0] - 0.0).abs() < 1e-12 && (g[1] - 1.0).abs() < 1e-12);
        assert!((g[3] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        let mut c = GaitCommand::trot([0.0; 3], 0.3);
        c.validate().unwrap();
        c.frequency = 0.0;
        assert_eq!(c.validate(), Err(GaitError::Frequency(0.0)));
        c.frequency = 2.0;
        c.stance_ratio = 0.95;
        assert!(matches!(c.validate(), Err(GaitError::StanceRatio(_))));
        c.stance_ratio = 0.5;
        c.phase_offsets[2] = 1.0;
        assert!(matches!(c.validate(), Err(GaitError::Offset { index: 2, .. })));
    }

    proptest! {
        #[test]
        fn full_period_returns_to_start(p in 0.0f64..1.0, f in 0.5f64..4.0, steps in 1usize..200) {
            let dt = 1.0 / (f * steps as f64);
            let mut phases = [p; 4];
            for _ in 0..steps {
                phases = advance_phases(&phases, f, dt);
            }
            let d = (phases[0] - p).abs();
            prop_assert!(d.min(1.0 - d) < 1e-9);
        }

        #[test]
        fn trot_diagonals_share_contact(base in 0.0f64..1.0, rho in 0.15f64..0.85) {
            let c: Vec<f64> = TROT_OFFSETS.iter().map(|&o| desired_contact(foot_phase(base, o), rho)).collect();
            prop_assert_eq!(c[0], c[3]);
            prop_assert_eq!(c[1], c[2]);
        }
    }
}
