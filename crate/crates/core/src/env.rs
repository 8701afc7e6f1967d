//! A reset/step environment over [`Simulation`] that speaks observations,
//! candidate indices and shaped rewards.

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::SimError;
use crate::obs::{observe, Observation, PruneConfig};
use crate::sim::{EpisodeMetrics, LogRecord, SimConfig, Simulation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub sim: SimConfig,
    /// `None` disables pruning.
    #[serde(default)]
    pub prune: Option<PruneConfig>,
}

/// What the agent sees after each decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// `None` once the episode is over.
    pub observation: Option<Observation>,
    /// Shaped reward earned since the previous decision.
    pub reward: f64,
    /// Seconds since the previous decision.
    pub dt: u64,
    pub done: bool,
}

pub struct Env {
    sim: Simulation,
    prune: Option<PruneConfig>,
    current: Option<Observation>,
    phi: f64,
}

impl Env {
    /// Starts an episode and returns the first observation.
    pub fn reset(ds: &Dataset, cfg: EnvConfig) -> Result<(Self, Transition), SimError> {
        cfg.sim
            .shaping
            .validate()
            .map_err(|e| SimError::Invariant(format!("reward config: {e}")))?;
        let mut sim = Simulation::new(ds, cfg.sim)?;
        sim.start()?;
        let phi = sim.potential();
        let mut env = Self {
            sim,
            prune: cfg.prune,
            current: None,
            phi,
        };
        env.refresh();
        let first = env.transition(0.0, 0);
        Ok((env, first))
    }

    fn refresh(&mut self) {
        self.current = self.sim.pending().map(|d| observe(&self.sim, d, self.prune));
    }

    fn transition(&self, reward: f64, dt: u64) -> Transition {
        Transition {
            observation: self.current.clone(),
            reward,
            dt,
            done: self.current.is_none(),
        }
    }

    pub fn observation(&self) -> Option<&Observation> {
        self.current.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.current.is_none()
    }

    /// Applies candidate `index` of the current observation.
    pub fn step(&mut self, index: usize) -> Result<Transition, SimError> {
        let obs = self.current.as_ref().ok_or(SimError::NoPendingDecision)?;
        let invalid = |reason: &str| SimError::InvalidAction {
            index,
            reason: reason.to_string(),
        };
        if index >= obs.mask.len() {
            return Err(invalid("index out of range"));
        }
        if !obs.mask[index] {
            return Err(invalid("target is masked"));
        }
        let action = obs.actions[index].ok_or_else(|| invalid("not a target of this decision"))?;
        let info = self.sim.step(action)?;
        let next = self.sim.potential();
        let reward = self.sim.config().shaping.reward(self.phi, next, info.dt as f64);
        self.phi = next;
        self.refresh();
        Ok(self.transition(reward, info.dt))
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn metrics(&self) -> EpisodeMetrics {
        self.sim.metrics()
    }

    pub fn log(&self) -> &[LogRecord] {
        self.sim.log()
    }

    /// Candidate index of simulator action `action`, if it is kept.
    pub fn candidate_of(&self, action: usize) -> Option<usize> {
        self.current
            .as_ref()?
            .actions
            .iter()
            .position(|a| *a == Some(action))
    }
}
