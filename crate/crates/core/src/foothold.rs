//! Raibert-style desired footholds and the foothold tracking error.
//!
//! All foot positions live in the yaw-aligned, body-centred ground frame:
//! origin below the base, x forward along the heading, y to the left.
//!
//! The desired foothold of each foot is its nominal stance point shifted by a
//! phase-dependent offset
//!
//! ```text
//! Δp_x = φ · (v_x^cmd + v_x^yaw) / f
//! Δp_y = φ · (v_y^cmd + v_y^yaw) / f
//! ```
//!
//! where `v^yaw = ω_z ẑ × p_norm` is the velocity the nominal foothold would
//! have if the body spun at the commanded yaw rate, and `φ ∈ [-0.5, 0.5]` is
//! the stance-progress variable from [`phase_variable`].

use thiserror::Error;

use crate::gait::{in_stance, GaitCommand};
use crate::model::{Leg, StanceGeometry, NUM_LEGS};

pub type FootXY = [[f64; 2]; NUM_LEGS];

#[derive(Debug, Error, PartialEq)]
pub enum FootholdError {
    #[error("gait frequency must be > 0 to place footholds, got {0}")]
    NonPositiveFrequency(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredFootholds {
    pub p_desired: FootXY,
    pub offsets: FootXY,
    pub phase_var: [f64; NUM_LEGS],
}

/// Stance-progress variable. During stance it sweeps from +0.5 at touchdown to
/// -0.5 at lift-off, so the target travels backwards under the body the way a
/// planted foot does. During swing it holds the touchdown value +0.5.
pub fn phase_variable(foot_phase: f64, stance_ratio: f64) -> f64 {
    if in_stance(foot_phase, stance_ratio) {
        0.5 - foot_phase / stance_ratio
    } else {
        0.5
    }
}

/// Velocity of the nominal foothold under a pure yaw rate `ω_z`: `ω_z ẑ × (±L/2, ±W/2)`.
pub fn yaw_velocity_terms(yaw_rate: f64, geometry: &StanceGeometry, leg: Leg) -> (f64, f64) {
    let vx = -leg.side_sign() * yaw_rate * geometry.width / 2.0;
    let vy = leg.fore_sign() * yaw_rate * geometry.length / 2.0;
    (vx, vy)
}

pub fn desired_footholds(
    cmd: &GaitCommand,
    foot_phases: &[f64; NUM_LEGS],
    geometry: &StanceGeometry,
) -> Result<DesiredFootholds, FootholdError> {
    let f = cmd.frequency;
    if !(f > 0.0) {
        return Err(FootholdError::NonPositiveFrequency(f));
    }
    let [vx_cmd, vy_cmd, yaw_cmd] = cmd.cmd_vel;
    let mut out = DesiredFootholds { p_desired: [[0.0; 2]; NUM_LEGS], offsets: [[0.0; 2]; NUM_LEGS], phase_var: [0.0; NUM_LEGS] };
    for leg in Leg::ALL {
        let i = leg.index();
        let phi = phase_variable(foot_phases[i], cmd.stance_ratio);
        let (vx_yaw, vy_yaw) = yaw_velocity_terms(yaw_cmd, geometry, leg);
        let dx = phi * (vx_cmd + vx_yaw) / f;
        let dy = phi * (vy_cmd + vy_yaw) / f;
        out.phase_var[i] = phi;
        out.offsets[i] = [dx, dy];
        out.p_desired[i] = [geometry.p_norm[i][0] + dx, geometry.p_norm[i][1] + dy];
    }
    Ok(out)
}

/// Sum of squared coordinate differences over the four feet (m²).
pub fn foothold_error(p_actual: &FootXY, p_desired: &FootXY) -> f64 {
    p_actual
        .iter()
        .zip(p_desired)
        .flat_map(|(a, d)| [d[0] - a[0], d[1] - a[1]])
        .map(|e| e * e)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{nominal_stance, RobotParams};
    use proptest::prelude::*;

    fn box_geometry(w: f64, l: f64) -> StanceGeometry {
        let p_norm = Leg::ALL.map(|leg| [leg.fore_sign() * l / 2.0, leg.side_sign() * w / 2.0]);
        StanceGeometry { width: w, length: l, p_norm }
    }

    #[test]
    fn phase_variable_examples() {
        assert_eq!(phase_variable(0.25, 0.5), 0.0);
        assert_eq!(phase_variable(0.0, 0.5), 0.5);
        assert_eq!(phase_variable(0.7, 0.5), 0.5);
        assert!((phase_variable(0.4999999, 0.5) + 0.5).abs() < 1e-6);
    }

    #[test]
    fn yaw_terms() {
        let g = box_geometry(0.3, 0.5);
        assert_eq!(yaw_velocity_terms(0.0, &g, Leg::FrontLeft), (0.0, 0.0));
        let (vx, vy) = yaw_velocity_terms(1.0, &g, Leg::FrontLeft);
        assert!((vx + 0.15).abs() < 1e-12 && (vy - 0.25).abs() < 1e-12);
        // independent route: ω ẑ × p
        for leg in Leg::ALL {
            let p = g.p_norm[leg.index()];
            let (vx, vy) = yaw_velocity_terms(0.7, &g, leg);
            assert!((vx - (-0.7 * p[1])).abs() < 1e-12);
            assert!((vy - 0.7 * p[0]).abs() < 1e-12);
        }
        let sum = Leg::ALL.iter().fold((0.0, 0.0), |acc, &leg| {
            let (x, y) = yaw_velocity_terms(1.3, &g, leg);
            (acc.0 + x, acc.1 + y)
        });
        assert!(sum.0.abs() < 1e-12 && sum.1.abs() < 1e-12);
    }

    #[test]
    fn footholds_examples() {
        let g = nominal_stance(&RobotParams::ask1());
        let mut cmd = GaitCommand::trot([0.0; 3], 0.35);
        let still = desired_footholds(&cmd, &[0.1, 0.3, 0.6, 0.9], &g).unwrap();
        assert_eq!(still.p_desired, g.p_norm);

        // φ = 0.25 ⇔ foot phase 0.125 at ρ = 0.5
        cmd.cmd_vel = [1.0, 0.0, 0.0];
        let fh = desired_footholds(&cmd, &[0.125; 4], &g).unwrap();
        assert!((fh.offsets[0][0] - 0.125).abs() < 1e-12);

        let g = box_geometry(0.3, 0.5);
        cmd.cmd_vel = [0.0, 0.0, 1.0];
        let fh = desired_footholds(&cmd, &[0.0; 4], &g).unwrap();
        assert!((fh.offsets[Leg::FrontLeft.index()][0] + 0.0375).abs() < 1e-12);

        cmd.frequency = 0.0;
        assert_eq!(desired_footholds(&cmd, &[0.0; 4], &g), Err(FootholdError::NonPositiveFrequency(0.0)));
    }

    #[test]
    fn error_examples() {
        let d = [[0.1, 0.2], [0.3, -0.2], [-0.2, 0.1], [-0.3, -0.1]];
        assert_eq!(foothold_error(&d, &d), 0.0);
        let mut a = d;
        a[2][0] += 0.1;
        assert!((foothold_error(&a, &d) - 0.01).abs() < 1e-15);
        let shifted = d.map(|p| [p[0] + 0.1, p[1] + 0.1]);
        let brute: f64 = (0..4).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| (d[i][j] - shifted[i][j]).powi(2)).sum();
        assert!((foothold_error(&shifted, &d) - brute).abs() < 1e-15);
        assert!((brute - 0.08).abs() < 1e-12);
    }

    fn arb_feet() -> impl Strategy<Value = FootXY> {
        proptest::array::uniform4(proptest::array::uniform2(-1.0f64..1.0))
    }

    proptest! {
        #[test]
        fn error_is_symmetric_and_yaw_invariant(a in arb_feet(), d in arb_feet(), yaw in -3.2f64..3.2) {
            prop_assert!((foothold_error(&a, &d) - foothold_error(&d, &a)).abs() < 1e-12);
            let (s, c) = yaw.sin_cos();
            let rot = |p: FootXY| p.map(|[x, y]| [c * x - s * y, s * x + c * y]);
            prop_assert!((foothold_error(&rot(a), &rot(d)) - foothold_error(&a, &d)).abs() < 1e-12);
        }

        #[test]
        fn offsets_are_bounded(vx in -2.0f64..2.0, vy in -1.0f64..1.0, wz in -2.0f64..2.0, f in 0.5f64..4.0,
                               phases in proptest::array::uniform4(0.0f64..1.0)) {
            let g = nominal_stance(&RobotParams::go1());
            let mut cmd = GaitCommand::trot([vx, vy, wz], 0.3);
            cmd.frequency = f;
            let fh = desired_footholds(&cmd, &phases, &g).unwrap();
            for leg in Leg::ALL {
                let (yx, yy) = yaw_velocity_terms(wz, &g, leg);
                let o = fh.offsets[leg.index()];
                prop_assert!(o[0].abs() <= (vx.abs() + yx.abs()) * 0.5 / f + 1e-12);
                prop_assert!(o[1].abs() <= (vy.abs() + yy.abs()) * 0.5 / f + 1e-12);
                prop_assert_eq!(fh.p_desired[leg.index()][0], g.p_norm[leg.index()][0] + o[0]);
            }
        }
    }
}
