//! Run configuration: a JSON document with every tunable and its default.

use std::path::{Path, PathBuf};

use ask1_core::model::RobotParams;
use ask1_core::ppo::PpoConfig;
use ask1_core::sim::{EnvConfig, TerrainKind};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Robot preset, `go1` or `ask1`.
    pub robot: String,
    /// Fields of the preset to replace, keyed by their names in the resolved copy.
    pub robot_overrides: Map<String, Value>,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub num_envs: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Save a checkpoint every this many iterations (0 keeps only the final one).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            robot: "ask1".into(),
            robot_overrides: Map::new(),
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            num_envs: 256,
            max_iterations: 500,
            seed: 1,
            output_dir: PathBuf::from("runs/latest"),
            checkpoint_every: 50,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub num_envs: Option<usize>,
    pub iterations: Option<usize>,
    pub out: Option<PathBuf>,
    pub robot: Option<String>,
    pub terrain: Option<TerrainKind>,
}

pub fn robot_preset(name: &str) -> Result<RobotParams, CliError> {
    match name {
        "go1" => Ok(RobotParams::go1()),
        "ask1" => Ok(RobotParams::ask1()),
        other => Err(CliError::Config(format!("unknown robot preset `{other}` (expected go1 or ask1)"))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", cfg.schema_version));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(n) = o.num_envs {
            self.num_envs = n;
        }
        if let Some(n) = o.iterations {
            self.max_iterations = n;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(robot) = &o.robot {
            self.robot = robot.clone();
        }
        if let Some(kind) = o.terrain {
            self.env.terrain.kind = kind;
        }
    }

    /// Preset with the overrides applied and validated.
    pub fn robot_params(&self) -> Result<RobotParams, CliError> {
        let mut value = serde_json::to_value(robot_preset(&self.robot)?).expect("robot params serialize");
        let fields = value.as_object_mut().expect("robot params are an object");
        for (key, v) in &self.robot_overrides {
            if !fields.contains_key(key) {
                return Err(CliError::Config(format!("unknown robot field `{key}` in robot_overrides")));
            }
            fields.insert(key.clone(), v.clone());
        }
        let params: RobotParams = serde_json::from_value(value).map_err(|e| CliError::Config(format!("robot_overrides: {e}")))?;
        params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(params)
    }

    /// Validated copy with the robot fully materialized, so the file alone reproduces the run.
    pub fn resolved(&self) -> Result<RunConfig, CliError> {
        let params = self.robot_params()?;
        self.env.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.num_envs == 0 {
            return Err(CliError::Config("num_envs must be > 0".into()));
        }
        self.ppo.validate(self.num_envs).map_err(CliError::Config)?;
        let mut out = self.clone();
        out.robot_overrides = match serde_json::to_value(params).expect("robot params serialize") {
            Value::Object(m) => m,
            _ => unreachable!("robot params are an object"),
        };
        Ok(out)
    }
}
