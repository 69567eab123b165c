//! Off-policy agents: a generic DDPG implementation (actor/critic with slow
//! targets and a seeded replay buffer) and a discrete Q-learning agent used by
//! the discrete-hierarchy baseline.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::neural::{
    adam_step, backward, forward, polyak_update, Frame, HiddenState, NetworkParams, NetworkSpec,
    NeuralError, OptState, SeqInput,
};

/// One stored experience. Observation sequences hold shared frame handles so
/// overlapping histories cost one frame, not L copies.
#[derive(Debug, Clone)]
pub struct Transition {
    pub frames: Vec<Arc<Frame>>,
    /// Scalars appended to every timestep of `frames` (e.g. the intention).
    pub extras: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_frames: Vec<Arc<Frame>>,
    pub next_extras: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO ring with seeded uniform sampling.
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            items: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.items[idx]
    }

    /// Uniform sample with replacement over the stored items.
    pub fn sample_indices(&mut self, n: usize) -> Vec<usize> {
        assert!(!self.items.is_empty());
        (0..n).map(|_| self.rng.gen_range(0..self.items.len())).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DDPGConfig {
    pub gamma: f64,
    pub rho: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch: usize,
    pub noise_sigma_start: f64,
    pub noise_sigma_end: f64,
    pub noise_decay_steps: u64,
    pub update_every: u64,
    /// Action dimension.
    pub k: usize,
}

impl Default for DDPGConfig {
    fn default() -> Self {
        DDPGConfig {
            gamma: 0.99,
            rho: 0.995,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            batch: 64,
            noise_sigma_start: 0.3,
            noise_sigma_end: 0.05,
            noise_decay_steps: 20_000,
            update_every: 1,
            k: 2,
        }
    }
}

impl DDPGConfig {
    /// Linear noise decay from start to end over the first `noise_decay_steps`.
    pub fn sigma_at(&self, step: u64) -> f64 {
        if self.noise_decay_steps == 0 || step >= self.noise_decay_steps {
            return self.noise_sigma_end;
        }
        let t = step as f64 / self.noise_decay_steps as f64;
        self.noise_sigma_start + t * (self.noise_sigma_end - self.noise_sigma_start)
    }
}

/// Deterministic-policy-gradient agent. Actions live in [-1, 1]^k via a tanh
/// squash on the actor head; the critic reads the action as appended scalars.
pub struct DDPGAgent {
    pub actor_spec: NetworkSpec,
    pub critic_spec: NetworkSpec,
    pub actor: NetworkParams,
    pub actor_targ: NetworkParams,
    pub critic: NetworkParams,
    pub critic_targ: NetworkParams,
    pub opt_actor: OptState,
    pub opt_critic: OptState,
    pub config: DDPGConfig,
    /// Count of exploratory act() calls, drives the noise schedule.
    pub explore_steps: u64,
    rng: ChaCha8Rng,
}

impl DDPGAgent {
    /// `actor_spec.head` must equal `config.k`; the critic reuses the same
    /// trunk shape with the action appended to the extras and a scalar head.
    pub fn new(actor_spec: NetworkSpec, config: DDPGConfig, seed: u64) -> Self {
        assert_eq!(actor_spec.head, config.k, "actor head must match action dim");
        let critic_spec = NetworkSpec {
            extra_inputs: actor_spec.extra_inputs + config.k,
            head: 1,
            ..actor_spec.clone()
        };
        let actor = actor_spec.init_params(seed);
        let critic = critic_spec.init_params(seed.wrapping_add(1));
        DDPGAgent {
            opt_actor: OptState::new_for(&actor),
            opt_critic: OptState::new_for(&critic),
            actor_targ: actor.clone(),
            critic_targ: critic.clone(),
            actor,
            critic,
            actor_spec,
            critic_spec,
            config,
            explore_steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(2)),
        }
    }

    fn actor_forward(
        spec: &NetworkSpec,
        params: &NetworkParams,
        seqs: &[SeqInput],
    ) -> Array2<f64> {
        let (y, _, _) = forward(spec, params, seqs, &HiddenState::zeros(seqs.len(), spec.lstm))
            .expect("actor forward");
        y.mapv(f64::tanh)
    }

    /// Deterministic action, plus clipped Gaussian noise when exploring.
    pub fn act(&mut self, frames: &[Arc<Frame>], extras: &[f64], explore: bool) -> Vec<f64> {
        let seqs = [SeqInput { frames, extras }];
        let a = Self::actor_forward(&self.actor_spec, &self.actor, &seqs);
        let mut out: Vec<f64> = a.row(0).to_vec();
        if explore {
            let sigma = self.config.sigma_at(self.explore_steps);
            self.explore_steps += 1;
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).unwrap();
                for v in &mut out {
                    *v = (*v + normal.sample(&mut self.rng)).clamp(-1.0, 1.0);
                }
            }
        }
        out
    }

    fn critic_extras(obs_extras: &[f64], action: &[f64]) -> Vec<f64> {
        let mut e = Vec::with_capacity(obs_extras.len() + action.len());
        e.extend_from_slice(obs_extras);
        e.extend_from_slice(action);
        e
    }

    /// Bellman targets y_i = r_i + gamma * (1 - d_i) * Q'(s', mu'(s')).
    pub fn compute_target(&self, batch: &[&Transition]) -> Vec<f64> {
        assert!(!batch.is_empty());
        let next_seqs: Vec<SeqInput> = batch
            .iter()
            .map(|t| SeqInput { frames: &t.next_frames, extras: &t.next_extras })
            .collect();
        let next_actions = Self::actor_forward(&self.actor_spec, &self.actor_targ, &next_seqs);
        let critic_in: Vec<Vec<f64>> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| Self::critic_extras(&t.next_extras, &next_actions.row(i).to_vec()))
            .collect();
        let seqs: Vec<SeqInput> = batch
            .iter()
            .zip(&critic_in)
            .map(|(t, e)| SeqInput { frames: &t.next_frames, extras: e })
            .collect();
        let (q_next, _, _) = forward(
            &self.critic_spec,
            &self.critic_targ,
            &seqs,
            &HiddenState::zeros(batch.len(), self.critic_spec.lstm),
        )
        .expect("target critic forward");
        batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let d = if t.done { 1.0 } else { 0.0 };
                t.reward + self.config.gamma * (1.0 - d) * q_next[[i, 0]]
            })
            .collect()
    }

    /// One gradient update on a sampled batch: critic MSBE step, actor ascent
    /// through the critic, then polyak blend of both targets. Returns
    /// (critic_loss, actor_loss), or None when the buffer is too small.
    pub fn update(&mut self, buffer: &mut ReplayBuffer) -> Result<Option<(f64, f64)>, NeuralError> {
        if buffer.len() < self.config.batch {
            return Ok(None);
        }
        let idx = buffer.sample_indices(self.config.batch);
        let batch: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i)).collect();
        self.update_batch(&batch).map(Some)
    }

    /// Update on an explicit batch (exposed for the frozen-batch oracles).
    pub fn update_batch(&mut self, batch: &[&Transition]) -> Result<(f64, f64), NeuralError> {
        let n = batch.len();
        let y = self.compute_target(batch);

        // critic step on stored actions
        let critic_in: Vec<Vec<f64>> = batch
            .iter()
            .map(|t| Self::critic_extras(&t.extras, &t.action))
            .collect();
        let seqs: Vec<SeqInput> = batch
            .iter()
            .zip(&critic_in)
            .map(|(t, e)| SeqInput { frames: &t.frames, extras: e })
            .collect();
        let (q, tape, _) = forward(
            &self.critic_spec,
            &self.critic,
            &seqs,
            &HiddenState::zeros(n, self.critic_spec.lstm),
        )?;
        let mut critic_loss = 0.0;
        let mut out_grad = Array2::zeros((n, 1));
        for i in 0..n {
            let diff = q[[i, 0]] - y[i];
            critic_loss += diff * diff / n as f64;
            out_grad[[i, 0]] = 2.0 * diff / n as f64;
        }
        let (grads, _) = backward(&self.critic_spec, &self.critic, &tape, &out_grad)?;
        adam_step(&mut self.critic, &grads, &mut self.opt_critic, self.config.lr_critic)?;

        // actor step: maximize Q(s, mu(s)); the chain runs through the
        // critic's action inputs and the tanh squash
        let actor_seqs: Vec<SeqInput> = batch
            .iter()
            .map(|t| SeqInput { frames: &t.frames, extras: &t.extras })
            .collect();
        let (pre_squash, actor_tape, _) = forward(
            &self.actor_spec,
            &self.actor,
            &actor_seqs,
            &HiddenState::zeros(n, self.actor_spec.lstm),
        )?;
        let actions = pre_squash.mapv(f64::tanh);
        let critic_in: Vec<Vec<f64>> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| Self::critic_extras(&t.extras, &actions.row(i).to_vec()))
            .collect();
        let seqs: Vec<SeqInput> = batch
            .iter()
            .zip(&critic_in)
            .map(|(t, e)| SeqInput { frames: &t.frames, extras: e })
            .collect();
        let (q_pi, tape, _) = forward(
            &self.critic_spec,
            &self.critic,
            &seqs,
            &HiddenState::zeros(n, self.critic_spec.lstm),
        )?;
        let actor_loss = -q_pi.column(0).sum() / n as f64;
        let out_grad = Array2::from_elem((n, 1), -1.0 / n as f64);
        let (_, extras_grad) = backward(&self.critic_spec, &self.critic, &tape, &out_grad)?;
        let e = self.actor_spec.extra_inputs;
        let k = self.config.k;
        let mut actor_out_grad = Array2::zeros((n, k));
        for i in 0..n {
            for j in 0..k {
                let a = actions[[i, j]];
                actor_out_grad[[i, j]] = extras_grad[[i, e + j]] * (1.0 - a * a);
            }
        }
        let (actor_grads, _) = backward(&self.actor_spec, &self.actor, &actor_tape, &actor_out_grad)?;
        adam_step(&mut self.actor, &actor_grads, &mut self.opt_actor, self.config.lr_actor)?;

        polyak_update(&mut self.actor_targ, &self.actor, self.config.rho)?;
        polyak_update(&mut self.critic_targ, &self.critic, self.config.rho)?;
        Ok((critic_loss, actor_loss))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f64,
    pub rho: f64,
    pub lr: f64,
    pub batch: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: u64,
    pub update_every: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.99,
            rho: 0.995,
            lr: 1e-3,
            batch: 64,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 20_000,
            update_every: 1,
        }
    }
}

impl DqnConfig {
    pub fn eps_at(&self, step: u64) -> f64 {
        if self.eps_decay_steps == 0 || step >= self.eps_decay_steps {
            return self.eps_end;
        }
        let t = step as f64 / self.eps_decay_steps as f64;
        self.eps_start + t * (self.eps_end - self.eps_start)
    }
}

/// Discrete Q agent over `n_actions`; same trunk as the DDPG networks, the
/// head holds one Q value per action. Actions are stored in `Transition` as a
/// one-element vector carrying the index.
pub struct DqnAgent {
    pub spec: NetworkSpec,
    pub q: NetworkParams,
    pub q_targ: NetworkParams,
    pub opt: OptState,
    pub config: DqnConfig,
    pub n_actions: usize,
    pub explore_steps: u64,
    rng: ChaCha8Rng,
}

impl DqnAgent {
    pub fn new(spec: NetworkSpec, config: DqnConfig, seed: u64) -> Self {
        let n_actions = spec.head;
        let q = spec.init_params(seed);
        DqnAgent {
            opt: OptState::new_for(&q),
            q_targ: q.clone(),
            q,
            spec,
            config,
            n_actions,
            explore_steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(2)),
        }
    }

    fn q_values(&self, frames: &[Arc<Frame>], extras: &[f64]) -> Vec<f64> {
        let seqs = [SeqInput { frames, extras }];
        let (y, _, _) = forward(&self.spec, &self.q, &seqs, &HiddenState::zeros(1, self.spec.lstm))
            .expect("q forward");
        y.row(0).to_vec()
    }

    /// Epsilon-greedy action index.
    pub fn act(&mut self, frames: &[Arc<Frame>], extras: &[f64], explore: bool) -> usize {
        if explore {
            let eps = self.config.eps_at(self.explore_steps);
            self.explore_steps += 1;
            if self.rng.gen_bool(eps) {
                return self.rng.gen_range(0..self.n_actions);
            }
        }
        let q = self.q_values(frames, extras);
        q.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }

    /// Q-learning targets y_i = r_i + gamma * (1 - d_i) * max_a Q'(s', a).
    pub fn compute_target(&self, batch: &[&Transition]) -> Vec<f64> {
        let seqs: Vec<SeqInput> = batch
            .iter()
            .map(|t| SeqInput { frames: &t.next_frames, extras: &t.next_extras })
            .collect();
        let (q_next, _, _) = forward(
            &self.spec,
            &self.q_targ,
            &seqs,
            &HiddenState::zeros(batch.len(), self.spec.lstm),
        )
        .expect("target q forward");
        batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let d = if t.done { 1.0 } else { 0.0 };
                let best = q_next.row(i).iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                t.reward + self.config.gamma * (1.0 - d) * best
            })
            .collect()
    }

    pub fn update(&mut self, buffer: &mut ReplayBuffer) -> Result<Option<f64>, NeuralError> {
        if buffer.len() < self.config.batch {
            return Ok(None);
        }
        let idx = buffer.sample_indices(self.config.batch);
        let batch: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i)).collect();
        self.update_batch(&batch).map(Some)
    }

    pub fn update_batch(&mut self, batch: &[&Transition]) -> Result<f64, NeuralError> {
        let n = batch.len();
        let y = self.compute_target(batch);
        let seqs: Vec<SeqInput> = batch
            .iter()
            .map(|t| SeqInput { frames: &t.frames, extras: &t.extras })
            .collect();
        let (q, tape, _) =
            forward(&self.spec, &self.q, &seqs, &HiddenState::zeros(n, self.spec.lstm))?;
        let mut loss = 0.0;
        let mut out_grad = Array2::zeros((n, self.n_actions));
        for (i, t) in batch.iter().enumerate() {
            let a = t.action[0] as usize;
            let diff = q[[i, a]] - y[i];
            loss += diff * diff / n as f64;
            out_grad[[i, a]] = 2.0 * diff / n as f64;
        }
        let (grads, _) = backward(&self.spec, &self.q, &tape, &out_grad)?;
        adam_step(&mut self.q, &grads, &mut self.opt, self.config.lr)?;
        polyak_update(&mut self.q_targ, &self.q, self.config.rho)?;
        Ok(loss)
    }
}
