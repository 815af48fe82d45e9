//! Flat `key = value` experiment configuration.
//!
//! One key per line, `#` starts a comment, unknown keys are rejected.
//! Every key has a default; resolving a config records a notice for each
//! defaulted key so runs are explicit about what they used. `manifest()`
//! serializes the fully-resolved config in a stable order — feeding a
//! manifest back in reproduces the run exactly.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use vswarm_core::controller::EpisodeConfig;
use vswarm_core::dataset::{GenConfig, SplitCounts};
use vswarm_core::flocking::FlockParams;
use vswarm_core::math::Vec3;
use vswarm_core::nn::train::TrainConfig;
use vswarm_core::world::{TrackingMode, WorldConfig};
use vswarm_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Position,
    Vision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalMode {
    /// Every agent migrates to the same point.
    Common,
    /// The flock splits toward opposite points: the first ceil(n/2) agents
    /// head for the goal, the rest for its reflection through the origin.
    Opposing,
    /// Pure flocking, no migration.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub flock: FlockParams,
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub counts: SplitCounts,
    pub controller: ControllerKind,
    pub goals: GoalMode,
    pub goal: Vec3,
    pub cone_half_angle_deg: f64,
    pub cone_speed: f64,
    /// Low-pass smoothing factor for vision commands; `None` disables it.
    pub lowpass_alpha: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut notices = Vec::new();
        // The empty config resolves every key to its default.
        Self::parse("", &mut notices).expect("defaults are valid")
    }
}

/// The parsed key-value map plus the bookkeeping for defaults.
struct Fields {
    map: BTreeMap<String, String>,
}

impl Fields {
    fn take<T>(&mut self, key: &str, default: T, notices: &mut Vec<String>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        match self.map.remove(key) {
            Some(v) => v.parse().map_err(|e| {
                Error::Config(format!("key `{key}`: cannot parse `{v}`: {e}"))
            }),
            None => {
                notices.push(format!("{key} defaulted to {default}"));
                Ok(default)
            }
        }
    }

    /// Like `take` but for keys with a fixed set of spellings.
    fn take_word(
        &mut self,
        key: &str,
        default: &str,
        allowed: &[&str],
        notices: &mut Vec<String>,
    ) -> Result<String> {
        let v = self.take(key, default.to_string(), notices)?;
        if allowed.contains(&v.as_str()) {
            Ok(v)
        } else {
            Err(Error::Config(format!(
                "key `{key}`: `{v}` is not one of {}",
                allowed.join(" | ")
            )))
        }
    }
}

fn parse_kv(text: &str) -> Result<Fields> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got `{line}`", idx + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Config(format!(
                "line {}: empty key or value in `{line}`",
                idx + 1
            )));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", idx + 1)));
        }
    }
    Ok(Fields { map })
}

impl ExperimentConfig {
    pub fn load(path: &Path, notices: &mut Vec<String>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, notices)
    }

    pub fn parse(text: &str, notices: &mut Vec<String>) -> Result<Self> {
        let mut f = parse_kv(text)?;
        let n = notices;

        let seed: u64 = f.take("seed", 0, n)?;
        let flock = FlockParams {
            n_agents: f.take("n_agents", 9, n)?,
            r_max: f.take("r_max", 20.0, n)?,
            v_max: f.take("v_max", 2.0, n)?,
            k_sep: f.take("k_sep", 7.0, n)?,
            k_coh: f.take("k_coh", 1.0, n)?,
            k_mig: f.take("k_mig", 1.0, n)?,
        };
        let tracking = f.take_word("tracking", "perfect", &["perfect", "lag"], n)?;
        let tau: f64 = f.take("tau", 0.3, n)?;
        let world = WorldConfig {
            dt: f.take("dt", 0.1, n)?,
            spawn_cube_side: f.take("spawn_cube_side", 4.0, n)?,
            spawn_min_dist: f.take("spawn_min_dist", 1.5, n)?,
            goal_radius: f.take("goal_radius", 1.0, n)?,
            collision_thresh: f.take("collision_thresh", 1.0, n)?,
            dispersion_thresh: f.take("dispersion_thresh", 7.0, n)?,
            max_steps: f.take("max_steps", 2000, n)?,
            rng_seed: seed,
            tracking: match tracking.as_str() {
                "perfect" => TrackingMode::Perfect,
                _ => TrackingMode::Lag { tau },
            },
        };
        let train = TrainConfig {
            batch_size: f.take("batch_size", 128, n)?,
            weight_decay: f.take("weight_decay", 0.0005, n)?,
            momentum: f.take("momentum", 0.9, n)?,
            lr: f.take("lr", 0.005, n)?,
            lr_decay: f.take("lr_decay", 0.5, n)?,
            plateau_patience: f.take("plateau_patience", 10, n)?,
            early_stop_patience: f.take("early_stop_patience", 10, n)?,
            dropout: f.take("dropout", 0.5, n)?,
            seed,
            max_epochs: f.take("max_epochs", 50, n)?,
        };
        let counts = SplitCounts {
            train: f.take("train_samples", 20_000, n)?,
            val: f.take("val_samples", 2_000, n)?,
            test: f.take("test_samples", 2_000, n)?,
        };
        let controller = match f
            .take_word("controller", "position", &["position", "vision"], n)?
            .as_str()
        {
            "position" => ControllerKind::Position,
            _ => ControllerKind::Vision,
        };
        let goals = match f
            .take_word("goals", "common", &["common", "opposing", "none"], n)?
            .as_str()
        {
            "common" => GoalMode::Common,
            "opposing" => GoalMode::Opposing,
            _ => GoalMode::None,
        };
        let goal = Vec3::new(
            f.take("goal_x", 15.0, n)?,
            f.take("goal_y", 0.0, n)?,
            f.take("goal_z", 0.0, n)?,
        );
        let cone_half_angle_deg: f64 = f.take("cone_half_angle_deg", 15.0, n)?;
        let cone_speed: f64 = f.take("cone_speed", 2.0, n)?;
        let lowpass = f.take("lowpass_alpha", "off".to_string(), n)?;
        let lowpass_alpha = if lowpass == "off" {
            None
        } else {
            let a: f64 = lowpass.parse().map_err(|e| {
                Error::Config(format!("key `lowpass_alpha`: cannot parse `{lowpass}`: {e}"))
            })?;
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Config(format!(
                    "key `lowpass_alpha`: {a} outside (0, 1]"
                )));
            }
            Some(a)
        };

        if !f.map.is_empty() {
            let unknown: Vec<&str> = f.map.keys().map(String::as_str).collect();
            return Err(Error::Config(format!(
                "unknown key(s): {}",
                unknown.join(", ")
            )));
        }

        let cfg = ExperimentConfig {
            seed,
            flock,
            world,
            train,
            counts,
            controller,
            goals,
            goal,
            cone_half_angle_deg,
            cone_speed,
            lowpass_alpha,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.flock.validate()?;
        self.world.validate()?;
        self.train.validate()?;
        if !(self.cone_half_angle_deg >= 0.0 && self.cone_half_angle_deg < 90.0) {
            return Err(Error::Config(format!(
                "cone_half_angle_deg {} outside [0, 90)",
                self.cone_half_angle_deg
            )));
        }
        if !self.cone_speed.is_finite() || self.cone_speed <= 0.0 {
            return Err(Error::Config(format!(
                "cone_speed {} must be positive",
                self.cone_speed
            )));
        }
        if !self.goal.is_finite() {
            return Err(Error::Config("goal must be finite".into()));
        }
        Ok(())
    }

    /// Override the seed after parsing (the `--seed` flag). Keeps the
    /// mirrored copies in the world and training configs in sync.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.world.rng_seed = seed;
        self.train.seed = seed;
    }

    /// The fully-resolved config, one `key = value` per line in a fixed
    /// order. Parsing this text yields the same config with no defaulting
    /// notices.
    pub fn manifest(&self) -> String {
        let tracking = match self.world.tracking {
            TrackingMode::Perfect => ("perfect", 0.3),
            TrackingMode::Lag { tau } => ("lag", tau),
        };
        let lowpass = match self.lowpass_alpha {
            None => "off".to_string(),
            Some(a) => a.to_string(),
        };
        let controller = match self.controller {
            ControllerKind::Position => "position",
            ControllerKind::Vision => "vision",
        };
        let goals = match self.goals {
            GoalMode::Common => "common",
            GoalMode::Opposing => "opposing",
            GoalMode::None => "none",
        };
        let mut out = String::new();
        let mut push = |k: &str, v: &dyn Display| out.push_str(&format!("{k} = {v}\n"));
        push("seed", &self.seed);
        push("n_agents", &self.flock.n_agents);
        push("r_max", &self.flock.r_max);
        push("v_max", &self.flock.v_max);
        push("k_sep", &self.flock.k_sep);
        push("k_coh", &self.flock.k_coh);
        push("k_mig", &self.flock.k_mig);
        push("dt", &self.world.dt);
        push("spawn_cube_side", &self.world.spawn_cube_side);
        push("spawn_min_dist", &self.world.spawn_min_dist);
        push("goal_radius", &self.world.goal_radius);
        push("collision_thresh", &self.world.collision_thresh);
        push("dispersion_thresh", &self.world.dispersion_thresh);
        push("max_steps", &self.world.max_steps);
        push("tracking", &tracking.0);
        push("tau", &tracking.1);
        push("batch_size", &self.train.batch_size);
        push("weight_decay", &self.train.weight_decay);
        push("momentum", &self.train.momentum);
        push("lr", &self.train.lr);
        push("lr_decay", &self.train.lr_decay);
        push("plateau_patience", &self.train.plateau_patience);
        push("early_stop_patience", &self.train.early_stop_patience);
        push("dropout", &self.train.dropout);
        push("max_epochs", &self.train.max_epochs);
        push("train_samples", &self.counts.train);
        push("val_samples", &self.counts.val);
        push("test_samples", &self.counts.test);
        push("controller", &controller);
        push("goals", &goals);
        push("goal_x", &self.goal.x);
        push("goal_y", &self.goal.y);
        push("goal_z", &self.goal.z);
        push("cone_half_angle_deg", &self.cone_half_angle_deg);
        push("cone_speed", &self.cone_speed);
        push("lowpass_alpha", &lowpass);
        out
    }

    /// Per-agent migration goals for an episode.
    pub fn goal_vector(&self) -> Vec<Option<Vec3>> {
        let len = self.flock.n_agents;
        match self.goals {
            GoalMode::Common => vec![Some(self.goal); len],
            GoalMode::None => vec![None; len],
            GoalMode::Opposing => {
                let head = len.div_ceil(2);
                (0..len)
                    .map(|i| Some(if i < head { self.goal } else { -self.goal }))
                    .collect()
            }
        }
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            world: self.world,
            flock: self.flock,
            ..EpisodeConfig::default()
        }
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            world: self.world,
            flock: self.flock,
            goal: self.goal,
            cone_half_angle: self.cone_half_angle_deg.to_radians(),
            cone_speed: self.cone_speed,
            ..GenConfig::default()
        }
    }
}
