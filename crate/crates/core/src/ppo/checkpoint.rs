use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{Agent, AgentSpec};
use crate::env::NormStats;
use crate::error::{Error, Result};

const FORMAT: &str = "rangewise-ppo";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained agent plus what is needed to feed it observations again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: AgentSpec,
    pub observation_len: usize,
    pub agent: Agent,
    /// Normalisation fitted on the training slice.
    pub norm: Option<NormStats>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(spec: AgentSpec, agent: Agent, norm: Option<NormStats>, seed: u64) -> Self {
        Self {
            format: FORMAT.into(),
            version: CHECKPOINT_VERSION,
            observation_len: agent.actor.input_len(),
            spec,
            agent,
            norm,
            seed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(Error::Config(format!(
                "not a checkpoint (format `{}`)",
                ck.format
            )));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        let a = &ck.agent;
        if a.actor.input_len() != ck.observation_len
            || a.critic.input_len() != ck.observation_len
            || a.actor.output_len() != ck.spec.action_set.len()
            || a.critic.output_len() != 1
        {
            return Err(Error::Config(
                "checkpoint networks do not match its spec".into(),
            ));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn json_round_trip_is_exact() {
        let spec = AgentSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let agent = Agent::new(&spec, 13, &mut rng);
        let ck = Checkpoint::new(spec, agent, Some(NormStats::identity()), 2);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_other_versions() {
        let spec = AgentSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ck = Checkpoint::new(spec.clone(), Agent::new(&spec, 13, &mut rng), None, 0);
        ck.version = 99;
        let err = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap_err();
        assert!(err.to_string().contains("version 99"));
    }
}
