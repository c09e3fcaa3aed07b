//! The `train` and `eval` commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ask1_core::eval::{mean_forward_error, run_policy, CommandProfile, CommandSegment, EvalStep};
use ask1_core::model::LEG_NAMES;
use ask1_core::nets::{load_checkpoint, save_checkpoint, BundleSpec, NetworkBundle};
use ask1_core::ppo::{init_bundle, train, IterationMetrics, TrainError, TrainSink, Trainer};
use ask1_core::rewards::REWARD_ROW_NAMES;
use ask1_core::sim::{EnvContext, VecEnv};
use serde::Serialize;

use crate::config::RunConfig;
use crate::plot::{parse_table, render_svg};
use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

struct RunSink {
    metrics: csv::Writer<std::fs::File>,
    metrics_path: PathBuf,
    checkpoints: PathBuf,
    every: usize,
    last: Option<IterationMetrics>,
    started: Instant,
    quiet: bool,
}

impl TrainSink for RunSink {
    fn on_iteration(&mut self, m: &IterationMetrics, bundle: &NetworkBundle) -> Result<(), String> {
        let path = self.metrics_path.display().to_string();
        self.metrics.write_record(m.csv_record()).map_err(|e| format!("{path}: {e}"))?;
        self.metrics.flush().map_err(|e| format!("{path}: {e}"))?;
        let done = m.iteration + 1;
        if self.every > 0 && done.is_multiple_of(self.every) {
            let p = self.checkpoints.join(format!("iter_{done:06}.ckpt"));
            save_checkpoint(bundle, &p).map_err(|e| format!("{}: {e}", p.display()))?;
        }
        if !self.quiet {
            eprintln!(
                "iter {:>5}  r_t {:>7.3}  r_g {:>6.3}  ep_len {:>7.1}  value {:>8.4}  est {:>7.4}  kl {:.4}  {:.0}s",
                m.iteration,
                m.mean_r_t,
                m.mean_r_g,
                m.mean_episode_len,
                m.value_loss,
                m.estimator_loss,
                m.approx_kl,
                self.started.elapsed().as_secs_f64()
            );
        }
        self.last = Some(m.clone());
        Ok(())
    }

    fn on_finish(&mut self, bundle: &NetworkBundle) -> Result<(), String> {
        let p = self.checkpoints.join("final.ckpt");
        save_checkpoint(bundle, &p).map_err(|e| format!("{}: {e}", p.display()))
    }
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    status: &'a str,
    error: Option<String>,
    seed: u64,
    iterations_completed: usize,
    env_steps: usize,
    elapsed_s: f64,
    final_metrics: Option<&'a IterationMetrics>,
}

/// Train from a config and write the run directory. Returns the directory.
pub fn cmd_train(cfg: &RunConfig, quiet: bool) -> Result<PathBuf, CliError> {
    let cfg = cfg.resolved()?;
    let out = cfg.output_dir.clone();
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| io_err(&ckpt_dir, e))?;
    write_file(&out.join("config.json"), &cfg.to_json())?;

    let params = cfg.robot_params()?;
    let ctx = EnvContext::new(params, cfg.env.clone(), cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
    let venv = VecEnv::new(ctx, cfg.num_envs, cfg.seed);
    let bundle = init_bundle(&BundleSpec::default(), cfg.seed);
    let mut trainer = Trainer::new(cfg.ppo.clone(), bundle, venv, cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;

    let metrics_path = out.join("metrics.csv");
    let file = std::fs::File::create(&metrics_path).map_err(|e| io_err(&metrics_path, e))?;
    let mut metrics = csv::Writer::from_writer(file);
    metrics.write_record(IterationMetrics::csv_header()).map_err(|e| io_err(&metrics_path, e))?;
    metrics.flush().map_err(|e| io_err(&metrics_path, e))?;
    let mut sink =
        RunSink { metrics, metrics_path, checkpoints: ckpt_dir.clone(), every: cfg.checkpoint_every, last: None, started: Instant::now(), quiet };

    let result = train(&mut trainer, cfg.max_iterations, &mut sink);
    let error = match &result {
        Ok(()) => None,
        Err(e) => {
            // keep the last finite parameters for inspection
            let _ = save_checkpoint(&trainer.bundle, &ckpt_dir.join("final.ckpt"));
            Some(e.to_string())
        }
    };
    let summary = TrainSummary {
        status: if error.is_none() { "completed" } else { "failed" },
        error: error.clone(),
        seed: cfg.seed,
        iterations_completed: sink.last.as_ref().map_or(0, |m| m.iteration + 1),
        env_steps: sink.last.as_ref().map_or(0, |m| m.steps),
        elapsed_s: sink.started.elapsed().as_secs_f64(),
        final_metrics: sink.last.as_ref(),
    };
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write_file(&out.join("summary.json"), &text)?;
    match result {
        Ok(()) => Ok(out),
        Err(TrainError::Sink(msg)) => Err(CliError::Io(msg)),
        Err(e @ TrainError::Config(_)) => Err(CliError::Config(e.to_string())),
        Err(e) => Err(CliError::Training(e.to_string())),
    }
}

/// Read a `t,v_x,v_y,omega_z` schedule.
pub fn load_profile(path: &Path) -> Result<CommandProfile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read command profile {}: {e}", path.display())))?;
    let table = parse_table(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let col = |name: &str| {
        table
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("{}: missing column `{name}` (expected t,v_x,v_y,omega_z)", path.display())))
    };
    let (t, vx, vy, wz) = (col("t")?, col("v_x")?, col("v_y")?, col("omega_z")?);
    let segments = (0..table.columns[0].len())
        .map(|r| CommandSegment { start: table.columns[t][r], cmd: [table.columns[vx][r], table.columns[vy][r], table.columns[wz][r]] })
        .collect();
    CommandProfile::new(segments).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub profile: CommandProfile,
    pub duration_s: f64,
    pub out: PathBuf,
}

fn csv_text(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn names(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn num(x: f64) -> String {
    x.to_string()
}

/// The three eval tables: tracking, feet and rewards.
pub fn eval_tables(steps: &[EvalStep]) -> [(String, String); 3] {
    let tracking = csv_text(
        &names(&["t", "cmd_v_x", "cmd_v_y", "cmd_omega_z", "v_x", "v_y", "omega_z"]),
        steps.iter().map(|s| [s.t, s.cmd[0], s.cmd[1], s.cmd[2], s.lin_vel[0], s.lin_vel[1], s.yaw_rate].map(num).to_vec()),
    );
    let mut feet_header = vec!["t".to_string()];
    feet_header.extend(LEG_NAMES.iter().map(|l| format!("{l}_height")));
    feet_header.extend(LEG_NAMES.iter().map(|l| format!("{l}_contact")));
    let feet = csv_text(
        &feet_header,
        steps.iter().map(|s| {
            let mut r = vec![num(s.t)];
            r.extend(s.foot_height.map(num));
            r.extend(s.contact.map(|c| if c { "1".to_string() } else { "0".to_string() }));
            r
        }),
    );
    let mut reward_header = vec!["t".to_string()];
    reward_header.extend(REWARD_ROW_NAMES.iter().map(|n| n.to_string()));
    reward_header.extend(names(&["r_g", "r_l", "r_s", "r_c", "r_t", "done"]));
    let rewards = csv_text(
        &reward_header,
        steps.iter().map(|s| {
            let mut r = vec![num(s.t)];
            r.extend(s.reward.rows.map(num));
            r.extend([s.reward.r_g, s.reward.r_l, s.reward.r_s, s.reward.r_c, s.reward.total].map(num));
            r.push(if s.done.is_some() { "1".into() } else { "0".into() });
            r
        }),
    );
    [("tracking".into(), tracking), ("feet".into(), feet), ("rewards".into(), rewards)]
}

/// Deterministic rollout of a checkpoint; writes CSV tables and their SVG plots.
pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<Vec<EvalStep>, CliError> {
    let cfg = cfg.resolved()?;
    let bundle = load_checkpoint(&args.checkpoint).map_err(|e| CliError::Config(format!("{}: {e}", args.checkpoint.display())))?;
    bundle.check_layout(&BundleSpec::default()).map_err(|e| CliError::Config(format!("{}: layout mismatch: {e}", args.checkpoint.display())))?;
    if !(args.duration_s > 0.0 && args.duration_s.is_finite()) {
        return Err(CliError::Config(format!("duration must be > 0, got {}", args.duration_s)));
    }
    let ctx = EnvContext::new(cfg.robot_params()?, cfg.env.clone(), cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
    let steps = run_policy(ctx, &bundle, &args.profile, args.duration_s, cfg.seed);

    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    for (name, text) in eval_tables(&steps) {
        write_file(&args.out.join(format!("{name}.csv")), &text)?;
        let table = parse_table(&text).map_err(CliError::Io)?;
        let series: Vec<String> = match name.as_str() {
            "feet" => LEG_NAMES.iter().map(|l| format!("{l}_height")).collect(),
            "rewards" => names(&["r_g", "r_l", "r_s", "r_c", "r_t"]),
            _ => Vec::new(),
        };
        let svg = render_svg(&table, &series, &name).map_err(CliError::Io)?;
        write_file(&args.out.join(format!("{name}.svg")), &svg)?;
    }
    Ok(steps)
}

/// One-line digest of an eval rollout.
pub fn eval_report(steps: &[EvalStep]) -> String {
    let falls = steps.iter().filter(|s| s.done.is_some_and(|d| d.as_str() != "timeout")).count();
    let speed = steps.iter().map(|s| s.lin_vel[0].hypot(s.lin_vel[1])).fold(0.0, f64::max);
    format!("{} steps, mean |v_x - cmd| {:.3} m/s, max planar speed {:.3} m/s, {falls} falls", steps.len(), mean_forward_error(steps), speed)
}
