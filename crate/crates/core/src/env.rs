//! Gym-style wrapper around the simulator: reset spawns a seeded scenario,
//! step applies an ego command and returns observation, reward, termination.

use crate::reward::{compute_reward, RewardTerms, RewardWeights, TerminationReason, TerminationTracker};
use crate::sensors::Observation;
use crate::worldsim::{spawn_scenario, EgoCommand, Events, MapId, World, WorldError, DT};

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub map: MapId,
    pub n_traffic: usize,
    pub max_episode_steps: u64,
    pub weights: RewardWeights,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            map: MapId::Mini03,
            n_traffic: 100,
            max_episode_steps: 1000,
            weights: RewardWeights::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    pub events: Events,
    pub terms: RewardTerms,
    pub termination: TerminationReason,
    pub speed: f64,
}

pub struct DrivingEnv {
    pub config: EnvConfig,
    world: World,
    tracker: TerminationTracker,
    episode_step: u64,
}

impl DrivingEnv {
    pub fn new(config: EnvConfig, seed: u64) -> Result<Self, WorldError> {
        let world = spawn_scenario(config.map, config.n_traffic, seed)?;
        Ok(DrivingEnv {
            config,
            world,
            tracker: TerminationTracker::new(),
            episode_step: 0,
        })
    }

    /// Start a fresh episode from the given seed.
    pub fn reset(&mut self, seed: u64) -> Result<Observation, WorldError> {
        self.world = spawn_scenario(self.config.map, self.config.n_traffic, seed)?;
        self.tracker.reset();
        self.episode_step = 0;
        Ok(Observation::render(&self.world))
    }

    pub fn step(
        &mut self,
        cmd: &EgoCommand,
    ) -> Result<(Observation, f64, StepInfo), WorldError> {
        let events = self.world.step(cmd, DT)?;
        self.episode_step += 1;
        let termination =
            self.tracker
                .check(&events, self.episode_step, self.config.max_episode_steps);
        let (reward, terms) = compute_reward(&self.world.ego, cmd, &events, &self.config.weights);
        let obs = Observation::render(&self.world);
        Ok((
            obs,
            reward,
            StepInfo {
                events,
                terms,
                termination,
                speed: self.world.ego.speed,
            },
        ))
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn episode_step(&self) -> u64 {
        self.episode_step
    }

    pub fn speed_limit(&self) -> f64 {
        self.world.ego_speed_limit()
    }
}
