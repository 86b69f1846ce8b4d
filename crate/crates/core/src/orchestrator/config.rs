use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::bandit::{TrainConfig, Variant};
use crate::follower::CompetenceProfile;
use crate::genmodel::{BehaviorProb, ModelConfig};
use crate::hexworld::WorldConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FollowerSource {
    #[default]
    Sim,
    Human,
}

impl std::str::FromStr for FollowerSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sim" => Ok(Self::Sim),
            "human" => Ok(Self::Human),
            _ => Err(format!("follower must be `sim` or `human`, got `{s}`")),
        }
    }
}

/// Declarative description of one continual-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub variant: Variant,
    pub rounds: u32,
    /// Games played per round.
    pub interactions: u32,
    /// Ensemble size.
    pub ensemble: usize,
    pub follower: FollowerSource,
    /// Simulated follower preset.
    pub profile: String,
    pub seed: u64,
    /// Bootstrap examples.
    pub d0_size: usize,
    /// Sampling temperature.
    pub tau: f64,
    pub behavior: BehaviorProb,
    /// Runs live under `out/name/variant`.
    pub out: PathBuf,
    pub port: u16,
    /// Idle human sessions are dropped after this many seconds.
    pub session_ttl_secs: u64,
    /// Train after the last round too, although that ensemble is never
    /// deployed within the run.
    pub final_training: bool,
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            variant: Variant::Full,
            rounds: 6,
            interactions: 100,
            ensemble: 2,
            follower: FollowerSource::Sim,
            profile: "typical".into(),
            seed: 1,
            d0_size: 500,
            tau: 0.5,
            behavior: BehaviorProb::Untempered,
            out: PathBuf::from("runs"),
            port: 8080,
            session_ttl_secs: 900,
            final_training: true,
            world: WorldConfig {
                turn_limit: 3,
                ..WorldConfig::default()
            },
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs: 30,
                lr: 0.01,
                ..TrainConfig::default()
            },
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| OrchestratorError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad(format!(
                "run name `{}` is not a plain directory name",
                self.name
            ));
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.interactions == 0 {
            return bad("interactions must be at least 1".into());
        }
        if self.ensemble == 0 {
            return bad("ensemble must have at least one member".into());
        }
        if self.variant == Variant::NoEnsemble && self.ensemble != 1 {
            return bad(format!(
                "variant no-ensemble needs ensemble = 1, got {}",
                self.ensemble
            ));
        }
        if self.d0_size == 0 {
            return bad("d0_size must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must be in (0, 1], got {}", self.tau));
        }
        if self.world.turn_limit == 0 {
            return bad("world.turn_limit must be at least 1".into());
        }
        self.profile()?;
        self.model.validate()?;
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return bad("train.epochs and train.batch_size must be positive".into());
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<CompetenceProfile, OrchestratorError> {
        CompetenceProfile::preset(&self.profile).ok_or_else(|| {
            OrchestratorError::Config(format!("unknown follower profile `{}`", self.profile))
        })
    }

    /// `out/name/variant`.
    pub fn run_dir(&self) -> PathBuf {
        self.out.join(&self.name).join(self.variant.to_string())
    }
}
