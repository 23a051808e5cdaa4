use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};
use strider_core::adapter::GanConfig;
use strider_core::env::{EnvConfig, QuadrupedModel};
use strider_core::nav::RayConfig;
use strider_core::policy::PolicyConfig;
use strider_core::refmotion::SynthConfig;
use strider_core::rewards::RewardWeights;
use strider_core::trainer::{ScheduleConfig, StageConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("cannot read config: {0}")]
    Read(String),
}

fn invalid(key: &str, msg: impl ToString) -> ConfigError {
    ConfigError::Invalid { key: key.into(), msg: msg.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Published hyperparameters unchanged.
    Full,
    /// Published constants with the learning-rate and budget overrides that
    /// make a single-machine run finish.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipConfig {
    pub synth: SynthConfig,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSettings {
    pub records: usize,
    pub gan: GanConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSettings {
    pub host: String,
    pub port: u16,
    /// WebSocket binding of the same frames; 0 disables it.
    pub ws_port: u16,
    pub tick_hz: u32,
    /// Frames queued per client before new ones are dropped.
    pub client_buffer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavSettings {
    pub cruise: f64,
    pub cell_size_mm: u32,
    pub rays: RayConfig,
}

/// Everything a run depends on. Serialized in full next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub paths: Paths,
    pub model: QuadrupedModel,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub rewards: RewardWeights,
    pub clip: ClipConfig,
    pub imitation: StageConfig,
    pub finetune: StageConfig,
    pub schedule: ScheduleConfig,
    pub adapter: AdapterSettings,
    pub serve: ServeSettings,
    pub nav: NavSettings,
}

impl RunConfig {
    pub fn full() -> Self {
        let mut imitation = StageConfig::imitation();
        imitation.ppo.workers = 8;
        let mut finetune = StageConfig::finetune();
        finetune.ppo.workers = 8;
        Self {
            preset: Preset::Full,
            seed: 1,
            paths: Paths {
                data: "data".into(),
                checkpoints: "checkpoints".into(),
                reports: "reports".into(),
            },
            model: QuadrupedModel::default(),
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            rewards: RewardWeights::default(),
            clip: ClipConfig { synth: SynthConfig::default(), duration_s: 60.0 },
            imitation,
            finetune,
            schedule: ScheduleConfig::default(),
            adapter: AdapterSettings { records: 1_000_000, gan: GanConfig::default() },
            serve: ServeSettings {
                host: "127.0.0.1".into(),
                port: 7878,
                ws_port: 7879,
                tick_hz: 30,
                client_buffer: 64,
            },
            nav: NavSettings { cruise: 1.0, cell_size_mm: 1000, rays: RayConfig::default() },
        }
    }

    pub fn desk() -> Self {
        let mut c = Self::full();
        c.preset = Preset::Desk;
        c.imitation.ppo.policy_lr = DESK_IMITATION_POLICY_LR;
        c.imitation.ppo.value_lr = DESK_IMITATION_VALUE_LR;
        c.imitation.ppo.max_grad_norm = Some(1.0);
        c.imitation.iterations = 3000;
        c.imitation.time_budget_s = Some(7200.0);
        c.finetune.ppo.max_grad_norm = Some(1.0);
        c.finetune.iterations = 1000;
        c.finetune.time_budget_s = Some(3600.0);
        c.adapter.records = 100_000;
        c
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Full => Self::full(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.validate().map_err(|e| invalid("env", e))?;
        self.rewards.validate().map_err(|e| invalid("rewards", e))?;
        self.imitation.validate().map_err(|e| invalid("imitation", e))?;
        self.finetune.validate().map_err(|e| invalid("finetune", e))?;
        self.schedule.validate().map_err(|e| invalid("schedule", e))?;
        self.adapter.gan.validate().map_err(|e| invalid("adapter.gan", e))?;
        if self.adapter.records < 1000 {
            return Err(invalid("adapter.records", "must be at least 1000"));
        }
        if self.policy.k == 0 || !(self.policy.sigma2 > 0.0) {
            return Err(invalid("policy", "k must be positive and sigma2 > 0"));
        }
        if !(self.clip.duration_s > 0.0) {
            return Err(invalid("clip.duration_s", "must be positive"));
        }
        if self.serve.tick_hz == 0 || self.serve.client_buffer == 0 {
            return Err(invalid("serve", "tick_hz and client_buffer must be positive"));
        }
        if !(self.nav.cruise > 0.0) || self.nav.cell_size_mm == 0 {
            return Err(invalid("nav", "cruise and cell_size_mm must be positive"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the resolved config as `<dir>/<name>.config.json`.
    pub fn write_next_to(&self, dir: &Path, name: &str) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{name}.config.json"));
        std::fs::write(&path, self.to_json())?;
        Ok(path)
    }
}

pub const DESK_IMITATION_POLICY_LR: f64 = 5e-5;
pub const DESK_IMITATION_VALUE_LR: f64 = 1e-3;

/// Recursively overlays `user` onto `base`. Every key in `user` must already
/// exist in `base`.
fn overlay(base: &mut Value, user: &Value, path: &str) -> Result<(), ConfigError> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(k) {
                    Some(slot) => overlay(slot, v, &p)?,
                    None => return Err(ConfigError::UnknownKey(p)),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v.clone();
            Ok(())
        }
    }
}

/// Sets one dotted key, e.g. `imitation.ppo.policy_lr`.
fn set_path(base: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut cur = base;
    for part in key.split('.') {
        cur = match cur {
            Value::Object(m) => m.get_mut(part).ok_or_else(|| ConfigError::UnknownKey(key.into()))?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        };
    }
    *cur = value;
    Ok(())
}

/// Parses `key=value`; the value is JSON when it parses as JSON and a
/// string otherwise.
pub fn parse_assignment(s: &str) -> Result<(String, Value), ConfigError> {
    let (k, v) = s.split_once('=').ok_or_else(|| invalid(s, "expected key=value"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.into()));
    Ok((k.trim().to_string(), value))
}

/// Builds the run config: preset defaults, then the user's JSON document,
/// then individual assignments, then validation.
pub fn resolve(user: Option<&Value>, assignments: &[(String, Value)]) -> Result<RunConfig, ConfigError> {
    let preset = match user.and_then(|u| u.get("preset")) {
        Some(p) => serde_json::from_value(p.clone()).map_err(|e| invalid("preset", e))?,
        None => Preset::Desk,
    };
    let mut base = serde_json::to_value(RunConfig::preset(preset)).expect("config serializes");
    if let Some(u) = user {
        if !u.is_object() {
            return Err(invalid("", "config must be a JSON object"));
        }
        overlay(&mut base, u, "")?;
    }
    for (k, v) in assignments {
        set_path(&mut base, k, v.clone())?;
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(base).map_err(|e| {
        let key = e.path().to_string();
        invalid(&key, e.into_inner())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: Option<&Path>, assignments: &[(String, Value)]) -> Result<RunConfig, ConfigError> {
    let user = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Read(format!("{}: {e}", p.display())))?;
            Some(serde_json::from_str::<Value>(&text).map_err(|e| ConfigError::Read(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    resolve(user.as_ref(), assignments)
}
