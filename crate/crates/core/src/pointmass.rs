//! Tiny 2D reach-goal task used to sanity-check the continuous-control agent
//! end to end, with scripted oracle and random policies that pin the expected
//! performance band.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{DDPGAgent, DDPGConfig, ReplayBuffer, Transition};
use crate::neural::{Frame, NetworkSpec};

pub const OBS_DIM: usize = 4;
pub const ACT_DIM: usize = 2;
pub const MAX_STEPS: u32 = 60;
pub const GOAL_RADIUS: f64 = 0.5;
pub const GOAL_BONUS: f64 = 10.0;
const BOX: f64 = 5.0;
const DRAG: f64 = 0.9;
const THRUST: f64 = 0.5;
const VMAX: f64 = 1.0;

/// A damped point mass on a [-5, 5]^2 box chasing a random goal. Dense reward
/// -0.1 * distance per step, +10 and done on arrival.
pub struct PointMassEnv {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub goal: [f64; 2],
    step: u32,
    rng: ChaCha8Rng,
}

impl PointMassEnv {
    pub fn new(seed: u64) -> Self {
        let mut env = PointMassEnv {
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset();
        env
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.pos = [self.rng.gen_range(-4.0..4.0), self.rng.gen_range(-4.0..4.0)];
        self.vel = [0.0, 0.0];
        loop {
            self.goal = [self.rng.gen_range(-4.0..4.0), self.rng.gen_range(-4.0..4.0)];
            if self.dist_to_goal() > 2.0 * GOAL_RADIUS {
                break;
            }
        }
        self.step = 0;
        self.observe()
    }

    pub fn dist_to_goal(&self) -> f64 {
        let dx = self.goal[0] - self.pos[0];
        let dy = self.goal[1] - self.pos[1];
        (dx * dx + dy * dy).sqrt()
    }

    /// Observation: goal offset scaled to roughly [-1, 1], plus velocity.
    pub fn observe(&self) -> Vec<f64> {
        vec![
            (self.goal[0] - self.pos[0]) / (2.0 * BOX),
            (self.goal[1] - self.pos[1]) / (2.0 * BOX),
            self.vel[0],
            self.vel[1],
        ]
    }

    /// Returns (observation, reward, done).
    pub fn step(&mut self, action: [f64; 2]) -> (Vec<f64>, f64, bool) {
        for i in 0..2 {
            let a = action[i].clamp(-1.0, 1.0);
            self.vel[i] = (DRAG * self.vel[i] + THRUST * a).clamp(-VMAX, VMAX);
            self.pos[i] = (self.pos[i] + self.vel[i]).clamp(-BOX, BOX);
        }
        self.step += 1;
        let d = self.dist_to_goal();
        if d < GOAL_RADIUS {
            return (self.observe(), GOAL_BONUS, true);
        }
        let done = self.step >= MAX_STEPS;
        (self.observe(), -0.1 * d, done)
    }
}

/// Scripted proportional controller: thrust toward the goal, braking on the
/// current velocity. Reads only the observation vector.
pub fn oracle_action(obs: &[f64]) -> [f64; 2] {
    [
        (6.0 * obs[0] - 1.5 * obs[2]).clamp(-1.0, 1.0),
        (6.0 * obs[1] - 1.5 * obs[3]).clamp(-1.0, 1.0),
    ]
}

/// Mean episodic return of a policy over `episodes` fresh episodes.
pub fn mean_return<F>(mut policy: F, episodes: usize, seed: u64) -> f64
where
    F: FnMut(&[f64], &mut ChaCha8Rng) -> [f64; 2],
{
    let mut env = PointMassEnv::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset();
        loop {
            let a = policy(&obs, &mut rng);
            let (next, r, done) = env.step(a);
            total += r;
            obs = next;
            if done {
                break;
            }
        }
    }
    total / episodes as f64
}

pub fn random_policy(_obs: &[f64], rng: &mut ChaCha8Rng) -> [f64; 2] {
    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
}

/// Threshold the learner must beat: random + 0.8 * (oracle - random),
/// both measured with the bundled policies.
pub fn derived_threshold(episodes: usize, seed: u64) -> f64 {
    let random = mean_return(random_policy, episodes, seed);
    let oracle = mean_return(|o, _| oracle_action(o), episodes, seed);
    random + 0.8 * (oracle - random)
}

pub struct PointMassTrainResult {
    /// Return of each completed episode, in order.
    pub episode_returns: Vec<f64>,
    /// First environment step at which the trailing-20-episode mean reached
    /// the threshold, if it did.
    pub crossed_at_step: Option<u64>,
    pub threshold: f64,
}

fn to_frames(obs: &[f64]) -> Vec<Arc<Frame>> {
    vec![Arc::new(Frame::Vector(obs.to_vec()))]
}

/// Train DDPG on the point-mass task for `max_steps` environment steps.
pub fn train_pointmass(seed: u64, max_steps: u64) -> PointMassTrainResult {
    let threshold = derived_threshold(200, 1234);
    let spec = NetworkSpec::vector(OBS_DIM, 0, ACT_DIM, 1);
    let config = DDPGConfig {
        k: ACT_DIM,
        lr_actor: 1e-3,
        lr_critic: 1e-3,
        update_every: 2,
        ..Default::default()
    };
    let update_every = config.update_every;
    let mut agent = DDPGAgent::new(spec, config, seed);
    let mut buffer = ReplayBuffer::new(50_000, seed.wrapping_add(7));
    let mut env = PointMassEnv::new(seed.wrapping_add(13));

    let warmup = 1_000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    let mut obs = env.reset();
    let mut frames = to_frames(&obs);
    let mut episode_return = 0.0;
    let mut returns = Vec::new();
    let mut crossed_at_step = None;

    for step in 1..=max_steps {
        let action = if step <= warmup {
            random_policy(&obs, &mut rng).to_vec()
        } else {
            agent.act(&frames, &[], true)
        };
        let (next_obs, r, done) = env.step([action[0], action[1]]);
        let next_frames = to_frames(&next_obs);
        episode_return += r;
        buffer.push(Transition {
            frames: frames.clone(),
            extras: vec![],
            action: action.clone(),
            reward: r,
            next_frames: next_frames.clone(),
            next_extras: vec![],
            // time-limit truncation is not failure: only goal arrival
            // bootstraps as terminal
            done: done && r == GOAL_BONUS,
        });
        obs = next_obs;
        frames = next_frames;

        if step > warmup && step % update_every == 0 {
            agent.update(&mut buffer).expect("ddpg update");
        }
        if done {
            returns.push(episode_return);
            episode_return = 0.0;
            obs = env.reset();
            frames = to_frames(&obs);
            if crossed_at_step.is_none() && returns.len() >= 20 {
                let mean: f64 = returns[returns.len() - 20..].iter().sum::<f64>() / 20.0;
                if mean >= threshold {
                    crossed_at_step = Some(step);
                    break;
                }
            }
        }
    }
    PointMassTrainResult { episode_returns: returns, crossed_at_step, threshold }
}
