use std::sync::Arc;

use ask1_core::model::{leg_fk, RobotParams, NUM_JOINTS, NUM_LEGS};
use ask1_core::sim::*;
use nalgebra::{UnitQuaternion, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quiet_config() -> EnvConfig {
    let mut cfg = EnvConfig::default();
    cfg.randomization = RandomizationRanges::disabled();
    cfg.reset.joint_noise = 0.0;
    cfg.reset.position_jitter = 0.0;
    cfg
}

fn context(robot: &str, cfg: EnvConfig) -> Arc<EnvContext> {
    EnvContext::new(RobotParams::preset(robot).unwrap(), cfg, 7).unwrap()
}

fn flat() -> TerrainField {
    make_terrain(&TerrainParams::default(), 0).unwrap()
}

fn airborne(params: &RobotParams, height: f64) -> RobotState {
    RobotState::at_rest(params, Vector3::new(0.0, 0.0, height), UnitQuaternion::identity(), params.nominal_q)
}

#[test]
fn free_fall_matches_ballistic_trajectory() {
    let params = RobotParams::ask1();
    let cfg = PhysicsConfig::default();
    let mut state = airborne(&params, 20.0);
    state.base_lin_vel = Vector3::new(0.3, -0.2, 0.0);
    let terrain = flat();
    let steps = (1.0 / cfg.dt).round() as usize;
    for _ in 0..steps {
        state = physics_substep(&state, &[0.0; NUM_JOINTS], &terrain, cfg.dt, &params, &RandomizedDynamics::default(), &cfg);
    }
    let drop = 20.0 - state.base_pos.z;
    assert!((drop - 0.5 * 9.81).abs() < 1e-3, "drop {drop}");
    assert!((state.base_lin_vel.x - 0.3).abs() < 1e-12 && (state.base_lin_vel.y + 0.2).abs() < 1e-12);
    assert!((state.base_pos.x - 0.3).abs() < 1e-9);
}

#[test]
fn trunk_energy_is_conserved_in_flight() {
    let params = RobotParams::go1();
    let cfg = PhysicsConfig::default();
    let dynamics = RandomizedDynamics::default();
    let mut state = airborne(&params, 30.0);
    state.base_lin_vel = Vector3::new(1.0, 0.5, 2.0);
    state.base_ang_vel = Vector3::new(0.4, -0.3, 0.6);
    let terrain = flat();
    let e0 = trunk_energy(&state, &params, &dynamics, &cfg);
    for _ in 0..200 {
        state = physics_substep(&state, &[0.0; NUM_JOINTS], &terrain, cfg.dt, &params, &dynamics, &cfg);
    }
    let e1 = trunk_energy(&state, &params, &dynamics, &cfg);
    assert!(((e1 - e0) / e0).abs() < 0.01, "{e0} -> {e1}");
}

#[test]
fn zero_gravity_rest_is_a_fixed_point() {
    let params = RobotParams::ask1();
    let cfg = PhysicsConfig { gravity: 0.0, ..PhysicsConfig::default() };
    let start = airborne(&params, 1.0);
    let mut state = start.clone();
    for _ in 0..100 {
        state = physics_substep(&state, &[0.0; NUM_JOINTS], &flat(), cfg.dt, &params, &RandomizedDynamics::default(), &cfg);
    }
    assert_eq!(state.base_pos, start.base_pos);
    assert_eq!(state.q, start.q);
    assert_eq!(state.base_ang_vel, Vector3::zeros());
}

#[test]
fn settled_stance_carries_the_weight_without_drift() {
    let ctx = context("ask1", quiet_config());
    let mut env = Env::new(ctx.clone(), 3, 0);
    env.set_command([0.0; 3]);
    // let the landing transient decay
    for _ in 0..150 {
        assert!(env.step(&[0.0; NUM_JOINTS]).done.is_none());
    }
    let start = env.state.robot.base_pos;
    for _ in 0..50 {
        assert!(env.step(&[0.0; NUM_JOINTS]).done.is_none());
    }
    let robot = &env.state.robot;
    let drift = (robot.base_pos - start).norm();
    assert!(drift < 1e-3, "drift {drift}");
    let weight = ctx.params.trunk_mass * 9.81;
    let normal: f64 = robot.contact_force.iter().map(|f| f.z).sum();
    assert!((normal - weight).abs() < 0.01 * weight, "{normal} vs {weight}");
    for f in &robot.contact_force {
        assert!((f.z - weight / 4.0).abs() < 0.15 * weight / 4.0, "share {}", f.z);
    }
}

#[test]
fn zero_action_stands_for_a_full_episode() {
    for robot in ["ask1", "go1"] {
        for (cfg, seed) in [(quiet_config(), 0), (EnvConfig::default(), 11)] {
            let mut env = Env::new(context(robot, cfg), seed, 0);
            let mut reason = None;
            for t in 0..1000 {
                let r = env.step(&[0.0; NUM_JOINTS]);
                if let Some(d) = r.done {
                    reason = Some((t + 1, d));
                    break;
                }
            }
            assert_eq!(reason, Some((1000, DoneReason::Timeout)), "{robot}");
        }
    }
}

#[test]
fn decimation_and_policy_period() {
    let cfg = EnvConfig::default();
    assert_eq!(cfg.physics.decimation, 4);
    assert_eq!(cfg.physics.policy_dt(), 0.02);
    assert_eq!(cfg.episode_len_steps(), 1000);
}

#[test]
fn robot_state_invariants_hold_while_stepping() {
    let ctx = context("go1", EnvConfig::default());
    let mut env = Env::new(ctx.clone(), 5, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..300 {
        let action: [f64; NUM_JOINTS] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        env.step(&action);
        let r = &env.state.robot;
        assert!((r.base_quat.coords.norm() - 1.0).abs() < 1e-6);
        for leg in 0..NUM_LEGS {
            let expected = r.base_pos + r.base_quat * leg_fk(r.leg_q(leg), leg, &ctx.params);
            assert!((expected - r.foot_pos[leg]).norm() < 1e-12);
            let f = r.contact_force[leg];
            assert!(f.z >= 0.0);
        }
        assert!(env.state.step_count <= ctx.cfg.episode_len_steps());
    }
}

#[test]
fn trunk_below_terrain_terminates_within_one_step() {
    let ctx = context("ask1", quiet_config());
    let mut env = Env::new(ctx, 1, 0);
    env.state.robot.base_pos.z = 0.02;
    env.state.robot.update_kinematics(&RobotParams::ask1());
    assert_eq!(env.step(&[0.0; NUM_JOINTS]).done, Some(DoneReason::TrunkContact));
}

#[test]
fn timeout_ends_the_episode_regardless_of_state() {
    let mut cfg = quiet_config();
    cfg.episode_length_s = 0.2;
    let mut env = Env::new(context("ask1", cfg), 1, 0);
    let reasons: Vec<_> = (0..10).map(|_| env.step(&[0.0; NUM_JOINTS]).done).collect();
    assert!(reasons[..9].iter().all(Option::is_none));
    assert_eq!(reasons[9], Some(DoneReason::Timeout));
    assert_eq!(env.state.step_count, 0);
}

#[test]
fn termination_examples() {
    let params = RobotParams::ask1();
    let cfg = EnvConfig::default();
    let terrain = flat();
    let upright = airborne(&params, 2.0);
    assert_eq!(check_termination(&upright, &params, &terrain, &cfg), None);
    let rolled = RobotState::at_rest(&params, Vector3::new(0.0, 0.0, 2.0), UnitQuaternion::from_euler_angles(std::f64::consts::PI, 0.0, 0.0), params.nominal_q);
    assert_eq!(check_termination(&rolled, &params, &terrain, &cfg), Some(DoneReason::Orientation));
    let sunk = airborne(&params, 0.0);
    assert_eq!(check_termination(&sunk, &params, &terrain, &cfg), Some(DoneReason::TrunkContact));
    let mut blown = airborne(&params, 2.0);
    blown.diverged = true;
    assert_eq!(check_termination(&blown, &params, &terrain, &cfg), Some(DoneReason::Diverged));
}

#[test]
fn collapsed_ranges_fix_the_scales() {
    let mut cfg = EnvConfig::default();
    cfg.randomization = RandomizationRanges {
        enabled: true,
        friction: [0.8, 0.8],
        mass: [1.1, 1.1],
        kp: [0.95, 0.95],
        kd: [1.05, 1.05],
        max_latency_steps: 0,
    };
    let env = Env::new(context("go1", cfg), 4, 2);
    let d = env.state.dynamics;
    assert_eq!((d.friction_scale, d.mass_scale, d.kp_scale, d.kd_scale, d.obs_latency_steps), (0.8, 1.1, 0.95, 1.05, 0));
}

#[test]
fn reset_is_deterministic_in_seed() {
    let ctx = context("ask1", EnvConfig::default());
    let a = Env::new(ctx.clone(), 99, 3);
    let b = Env::new(ctx.clone(), 99, 3);
    assert_eq!(a.state, b.state);
    assert_eq!(a.observation(), b.observation());
    let c = Env::new(ctx, 100, 3);
    assert_ne!(a.state.robot.q, c.state.robot.q);
}

#[test]
fn default_ranges_hold_over_many_resets() {
    let ctx = context("go1", EnvConfig::default());
    let mut env = Env::new(ctx.clone(), 12, 0);
    let params = &ctx.params;
    for _ in 0..10_000 {
        env.reset();
        let st = &env.state;
        let d = st.dynamics;
        assert!((0.5..=1.25).contains(&d.friction_scale));
        assert!((0.9..=1.2).contains(&d.mass_scale));
        assert!((0.9..=1.1).contains(&d.kp_scale) && (0.9..=1.1).contains(&d.kd_scale));
        assert!(d.obs_latency_steps <= 1);
        assert_eq!(st.base_phase, 0.0);
        for i in 0..NUM_JOINTS {
            assert!((st.robot.q[i] - params.nominal_q[i]).abs() <= ctx.cfg.reset.joint_noise + 1e-12);
        }
    }
}

#[test]
fn batch_stepping_matches_independent_envs() {
    let ctx = context("ask1", EnvConfig::default());
    let n = 6;
    let mut batch = VecEnv::new(ctx.clone(), n, 42);
    let mut singles: Vec<Env> = (0..n).map(|i| Env::new(ctx.clone(), 42, i as u64)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..120 {
        let actions: Vec<[f64; NUM_JOINTS]> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.5..1.5))).collect();
        let batched = batch.step(&actions);
        for (i, env) in singles.iter_mut().enumerate() {
            let record = env.step(&actions[i]);
            assert_eq!(record, batched[i]);
            assert_eq!(env.observation(), batch.envs[i].observation());
            assert_eq!(env.state, batch.envs[i].state);
        }
    }
}

#[test]
fn observation_shapes_and_gait_descriptor() {
    let env = Env::new(context("ask1", quiet_config()), 0, 0);
    let obs = env.observation();
    assert_eq!(obs.history.len(), 150);
    assert_eq!(obs.critic.len(), 248);
    assert_eq!(&obs.critic[..3], &obs.command);
    assert_eq!(&obs.critic[3..14], &obs.gait);
    // trot at phase zero: FR/RL at 0, FL/RR at 0.5
    assert_eq!(&obs.gait[0..2], &[0.0, 1.0]);
    assert!((obs.gait[3] + 1.0).abs() < 1e-12);
    assert_eq!(obs.gait[8], 2.0);
    assert_eq!(obs.gait[10], 0.5);
    // with no noise and no latency the five history frames start identical
    assert!(obs.history.chunks(30).all(|f| f == &obs.history[..30]));
}

#[test]
fn stairs_terrain_builds_a_difficulty_ladder() {
    let mut cfg = EnvConfig::default();
    cfg.terrain.kind = TerrainKind::Stairs;
    let ctx = context("ask1", cfg);
    assert_eq!(ctx.terrains.len(), 5);
    let rises: Vec<f64> = ctx.terrains.iter().map(|t| t.height_at(10.0, 0.0)).collect();
    assert!(rises.windows(2).all(|w| w[0] < w[1]), "{rises:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn contact_force_respects_the_friction_cone(
        z in -0.05f64..0.05, vx in -3.0f64..3.0, vy in -3.0f64..3.0, vz in -3.0f64..3.0,
        ax in -0.1f64..0.1, ay in -0.1f64..0.1, mu in 0.1f64..1.5,
    ) {
        let cfg = PhysicsConfig::default();
        let pos = Vector3::new(0.0, 0.0, z);
        let vel = Vector3::new(vx, vy, vz);
        let (f, anchor) = contact_force(&pos, &vel, Some(Vector2::new(ax, ay)), 0.0, mu, &cfg);
        prop_assert!(f.z >= 0.0);
        prop_assert!(Vector2::new(f.x, f.y).norm() <= mu * f.z + 1e-6);
        if z >= 0.0 {
            prop_assert_eq!(f, Vector3::zeros());
            prop_assert!(anchor.is_none());
        }
    }
}
