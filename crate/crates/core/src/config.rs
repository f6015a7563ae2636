//! Run configuration files.
//!
//! A TOML document with a top-level `seed` and the sections `[env]`,
//! `[pretrain]`, `[irl]`, `[eval]` and `[expert]`. Every key has a default;
//! unknown keys are rejected.

use std::fs;
use std::hash::Hash;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvKind, FruitGrid, FruitGridConfig, LaneWorld, LaneWorldConfig, TaskEnvironment, DEFAULT_STATE_CAP};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, Variant};
use crate::expert::ExpertConfig;
use crate::irl::IrlConfig;
use crate::nn::Activation;
use crate::pretrain::PretrainConfig;

/// File name of the echoed configuration in every output directory.
pub const RESOLVED_NAME: &str = "config.resolved.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub kind: EnvKind,
    /// Seed of the random pre-training task mixtures.
    pub task_seed: u64,
    /// Largest state space enumerated for exact experts and evaluation.
    pub state_cap: usize,
    pub fruitgrid: FruitGridConfig,
    pub laneworld: LaneWorldConfig,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            kind: EnvKind::FruitGrid,
            task_seed: 0,
            state_cap: DEFAULT_STATE_CAP,
            fruitgrid: FruitGridConfig::default(),
            laneworld: LaneWorldConfig::default(),
        }
    }
}

/// Code that runs against whichever environment a config selects.
pub trait EnvVisitor {
    type Output;

    fn visit<E>(self, env: E) -> Result<Self::Output>
    where
        E: TaskEnvironment + 'static,
        E::State: Eq + Hash + Send + Sync;
}

impl EnvSection {
    /// Builds the selected environment (with an all-zero reward) and hands it
    /// to `visitor`.
    pub fn visit<V: EnvVisitor>(&self, visitor: V) -> Result<V::Output> {
        match self.kind {
            EnvKind::FruitGrid => visitor.visit(FruitGrid::unrewarded(self.fruitgrid.clone())?),
            EnvKind::LaneWorld => visitor.visit(LaneWorld::unrewarded(self.laneworld.clone())?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed of every random stream in the run.
    pub seed: u64,
    pub env: EnvSection,
    pub pretrain: PretrainConfig,
    pub irl: IrlConfig,
    pub eval: EvalConfig,
    pub expert: ExpertConfig,
}

impl RunConfig {
    /// Small FruitGrid settings that run end to end in minutes.
    pub fn desk() -> Self {
        let temperature = 0.05;
        Self {
            seed: 0,
            env: EnvSection {
                fruitgrid: FruitGridConfig::desk(),
                state_cap: 400_000,
                ..EnvSection::default()
            },
            pretrain: PretrainConfig {
                lr: 3e-4,
                lr_final_fraction: 0.1,
                exploration_temperature: 0.1,
                psi_hidden: Vec::new(),
                task_crossed: true,
                taskless_itd: true,
                activation: Activation::Relu,
                ..PretrainConfig::default()
            },
            irl: IrlConfig {
                temperature,
                lr: 3e-4,
                bc_psi_lr_scale: 0.1,
                demo_counts: vec![10, 30, 100, 300, 1000],
                ..IrlConfig::default()
            },
            eval: EvalConfig {
                variants: vec![Variant::Basis, Variant::NoPretraining, Variant::NoSfDqn, Variant::BasisUnfrozenPhi],
                ..EvalConfig::default()
            },
            expert: ExpertConfig {
                temperature,
                state_cap: 400_000,
                ..ExpertConfig::default()
            },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Writes the fully resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let p = dir.join(RESOLVED_NAME);
        fs::write(&p, self.to_toml_string()).map_err(|e| Error::io(&p, e))
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |r: Result<()>, section: &str| {
            r.map_err(|e| match e {
                Error::Config(m) => Error::Config(m),
                other => Error::Config(format!("[{section}] {other}")),
            })
        };
        wrap(self.env.fruitgrid.validate(), "env.fruitgrid")?;
        wrap(self.env.laneworld.validate(), "env.laneworld")?;
        if self.env.state_cap == 0 {
            return Err(Error::Config("[env] state_cap must be >= 1".into()));
        }
        wrap(self.pretrain.validate(), "pretrain")?;
        wrap(self.irl.validate(), "irl")?;
        wrap(self.eval.validate(), "eval")?;
        wrap(self.expert.validate(), "expert")?;
        if self.irl.temperature != self.expert.temperature {
            log::warn!(
                "irl.temperature {} differs from expert.temperature {}; inferred rewards will be rescaled",
                self.irl.temperature,
                self.expert.temperature
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for cfg in [RunConfig::default(), RunConfig::desk()] {
            let text = cfg.to_toml_string();
            assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 7\n[irl]\nlr = 0.01\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.irl.lr, 0.01);
        assert_eq!(cfg.irl.batch_size, IrlConfig::default().batch_size);
        assert_eq!(cfg.pretrain, PretrainConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in [
            "sed = 1",
            "[irl]\nlearning_rate = 0.1",
            "[env]\nkind = \"maze\"",
            "[env.fruitgrid]\ngrid = 5",
            "[irl]\ngamma = 1.5",
            "[pretrain]\nbatch_size = 0",
            "[eval]\nseeds = []",
        ] {
            assert!(matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn visitor_sees_the_selected_environment() {
        struct Kind;
        impl EnvVisitor for Kind {
            type Output = (EnvKind, usize);
            fn visit<E>(self, env: E) -> Result<(EnvKind, usize)>
            where
                E: TaskEnvironment + 'static,
                E::State: Eq + Hash + Send + Sync,
            {
                Ok((env.kind(), env.num_actions()))
            }
        }
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.env.visit(Kind).unwrap(), (EnvKind::FruitGrid, 4));
        cfg.env.kind = EnvKind::LaneWorld;
        assert_eq!(cfg.env.visit(Kind).unwrap(), (EnvKind::LaneWorld, 5));
    }

    #[test]
    fn resolved_config_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::desk();
        cfg.write_resolved(dir.path()).unwrap();
        assert_eq!(RunConfig::load(&dir.path().join(RESOLVED_NAME)).unwrap(), cfg);
    }
}
