//! Experiment orchestration: config files, seeded training runs for the four
//! methods, greedy evaluation, run comparison, and trace replay.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{DDPGConfig, DqnConfig};
use crate::env::{DrivingEnv, EnvConfig};
use crate::neural::{load_params, Frame, NetworkSpec, NeuralError};
use crate::planner::{
    AthrlPlanner, FlatPlanner, FlatStep, HdqnPlanner, HdqnStep, LevelLoss, PlanStep,
    PlannerError, SpecTemplate, SEQ_LEN,
};
use crate::reward::RewardWeights;
use crate::sensors::Observation;
use crate::worldsim::{
    spawn_scenario, MapId, TrafficVehicle, VehicleState, WorldError, DT, VEHICLE_LENGTH,
    VEHICLE_WIDTH,
};

/// Environment variable that, when set, replaces the configured output root.
pub const OUTPUT_ROOT_ENV: &str = "ATHRL_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad configuration; the CLI maps this to exit code 2.
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("planner: {0}")]
    Planner(String),
    #[error("missing file: {0}")]
    Missing(PathBuf),
}

impl From<PlannerError> for HarnessError {
    fn from(e: PlannerError) -> Self {
        HarnessError::Planner(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Athrl,
    DdpgFlat,
    Hddpg2Level,
    Hdqn,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s {
            "athrl" => Ok(Method::Athrl),
            "ddpg_flat" => Ok(Method::DdpgFlat),
            "hddpg_2level" => Ok(Method::Hddpg2Level),
            "hdqn" => Ok(Method::Hdqn),
            other => Err(HarnessError::Config(format!("unknown method '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Athrl => "athrl",
            Method::DdpgFlat => "ddpg_flat",
            Method::Hddpg2Level => "hddpg_2level",
            Method::Hdqn => "hdqn",
        }
    }

    pub const ALL: [Method; 4] =
        [Method::Athrl, Method::DdpgFlat, Method::Hddpg2Level, Method::Hdqn];
}

/// Architecture knobs shared by every network in a run; defaults are the
/// full-scale driving stack. Shrinking these gives cheap smoke-scale runs
/// with identical code paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkScale {
    pub feature: usize,
    pub mlp_in: usize,
    pub lstm: usize,
    pub mlp_out: usize,
    pub seq_len: usize,
}

impl Default for NetworkScale {
    fn default() -> Self {
        NetworkScale { feature: 256, mlp_in: 256, lstm: 128, mlp_out: 64, seq_len: SEQ_LEN }
    }
}

impl NetworkScale {
    pub fn template(&self) -> SpecTemplate {
        SpecTemplate(NetworkSpec {
            input: crate::neural::InputSpec::Grids {
                lidar_cells: 1024,
                bev_cells: 3072,
                feature: self.feature,
            },
            extra_inputs: 0,
            mlp_in: self.mlp_in,
            lstm: self.lstm,
            mlp_out: self.mlp_out,
            head: 1,
            seq_len: self.seq_len,
        })
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub map: MapId,
    pub n_traffic: usize,
    pub seeds: Vec<u64>,
    pub warmup_steps: u64,
    pub train_steps: u64,
    pub max_episode_steps: u64,
    pub eval_episodes: usize,
    pub buffer_capacity: usize,
    pub output_dir: PathBuf,
    pub weights: RewardWeights,
    pub ddpg: DDPGConfig,
    pub dqn: DqnConfig,
    pub network: NetworkScale,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Athrl,
            map: MapId::Mini03,
            n_traffic: 100,
            seeds: default_seeds(),
            warmup_steps: 10_000,
            train_steps: 30_000,
            max_episode_steps: 1000,
            eval_episodes: 20,
            buffer_capacity: 40_000,
            output_dir: PathBuf::from("output"),
            weights: RewardWeights::default(),
            ddpg: DDPGConfig::default(),
            dqn: DqnConfig::default(),
            network: NetworkScale::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must be nonempty".into()));
        }
        if self.max_episode_steps == 0 {
            return Err(HarnessError::Config("max_episode_steps must be > 0".into()));
        }
        if self.buffer_capacity < self.ddpg.batch.max(self.dqn.batch) {
            return Err(HarnessError::Config(
                "buffer_capacity smaller than the update batch".into(),
            ));
        }
        if self.network.seq_len == 0 {
            return Err(HarnessError::Config("seq_len must be > 0".into()));
        }
        Ok(())
    }

    /// Output root, honoring the environment override.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root),
            _ => self.output_dir.clone(),
        }
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.output_root()
            .join(self.method.name())
            .join(self.map.name())
            .join(seed.to_string())
    }

    /// FNV-1a over the canonical serialized form, as hex.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// One network checkpoint entry in a run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestNetwork {
    pub name: String,
    /// actor | critic | actor_target | critic_target | q | q_target
    pub role: String,
    /// intention | trajectory | flat | high | mid
    pub level: String,
    pub file: String,
    /// Hex architecture hash the checkpoint header must carry.
    pub spec_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub method: Method,
    pub map: MapId,
    pub seed: u64,
    pub config_hash: String,
    pub network: NetworkScale,
    pub networks: Vec<ManifestNetwork>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join("manifest.toml");
        let text = fs::read_to_string(&path).map_err(|_| HarnessError::Missing(path))?;
        toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// Per-episode metrics row, the unit of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: u64,
    pub steps: u64,
    pub total_reward: f64,
    pub mean_speed: f64,
    pub termination: String,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub episodes: usize,
    /// Mean over episodes of the per-episode mean step reward.
    pub avg_reward: f64,
    pub avg_speed: f64,
    pub termination_counts: BTreeMap<String, usize>,
}

/// The four method planners behind one interface.
enum AnyPlanner {
    Athrl(AthrlPlanner),
    Flat(FlatPlanner),
    Hdqn(HdqnPlanner),
}

/// What one planning step decided, normalized for tracing.
struct Decision {
    cmd: crate::worldsim::EgoCommand,
    intention: Option<f64>,
    theta: Option<f64>,
    radius: Option<f64>,
    desired_speed: Option<f64>,
    athrl: Option<PlanStep>,
    flat: Option<FlatStep>,
    hdqn: Option<HdqnStep>,
}

impl Decision {
    fn from_plan(p: PlanStep) -> Self {
        Decision {
            cmd: p.cmd.clone(),
            intention: p.intention.map(|i| i.0),
            theta: Some(p.trajectory.theta),
            radius: Some(p.trajectory.radius),
            desired_speed: Some(p.trajectory.desired_speed),
            athrl: Some(p),
            flat: None,
            hdqn: None,
        }
    }

    fn from_flat(p: FlatStep) -> Self {
        Decision {
            cmd: p.cmd.clone(),
            intention: None,
            theta: None,
            radius: None,
            desired_speed: None,
            athrl: None,
            flat: Some(p),
            hdqn: None,
        }
    }

    fn from_hdqn(p: HdqnStep) -> Self {
        Decision {
            cmd: p.cmd.clone(),
            intention: Some(p.intention_index as f64),
            theta: Some(p.trajectory.theta),
            radius: Some(p.trajectory.radius),
            desired_speed: Some(p.trajectory.desired_speed),
            athrl: None,
            flat: None,
            hdqn: Some(p),
        }
    }
}

impl AnyPlanner {
    fn build(config: &ExperimentConfig, seed: u64) -> Self {
        let template = config.network.template();
        match config.method {
            Method::Athrl => AnyPlanner::Athrl(AthrlPlanner::new(
                &template,
                true,
                &config.ddpg,
                config.buffer_capacity,
                seed,
            )),
            Method::Hddpg2Level => AnyPlanner::Athrl(AthrlPlanner::new(
                &template,
                false,
                &config.ddpg,
                config.buffer_capacity,
                seed,
            )),
            Method::DdpgFlat => AnyPlanner::Flat(FlatPlanner::new(
                &template,
                &config.ddpg,
                config.buffer_capacity,
                seed,
            )),
            Method::Hdqn => AnyPlanner::Hdqn(HdqnPlanner::new(
                &template,
                &config.dqn,
                config.buffer_capacity,
                seed,
            )),
        }
    }

    fn plan(
        &mut self,
        frames: &[Arc<Frame>],
        speed: f64,
        v_limit: f64,
        mode: PlanMode,
    ) -> Result<Decision, HarnessError> {
        Ok(match self {
            AnyPlanner::Athrl(p) => Decision::from_plan(match mode {
                PlanMode::Random => p.plan_random(frames, speed, v_limit, DT)?,
                PlanMode::Explore => p.plan(frames, speed, v_limit, DT, true)?,
                PlanMode::Greedy => p.plan(frames, speed, v_limit, DT, false)?,
            }),
            AnyPlanner::Flat(p) => Decision::from_flat(match mode {
                PlanMode::Random => p.plan_random(frames),
                PlanMode::Explore => p.plan(frames, true),
                PlanMode::Greedy => p.plan(frames, false),
            }),
            AnyPlanner::Hdqn(p) => Decision::from_hdqn(match mode {
                PlanMode::Random => p.plan_random(frames, speed, v_limit, DT)?,
                PlanMode::Explore => p.plan(frames, speed, v_limit, DT, true)?,
                PlanMode::Greedy => p.plan(frames, speed, v_limit, DT, false)?,
            }),
        })
    }

    fn record(&mut self, d: &Decision, reward: f64, next_frames: &[Arc<Frame>], done: bool) {
        match self {
            AnyPlanner::Athrl(p) => p.record(d.athrl.as_ref().unwrap(), reward, next_frames, done),
            AnyPlanner::Flat(p) => p.record(d.flat.as_ref().unwrap(), reward, next_frames, done),
            AnyPlanner::Hdqn(p) => p.record(d.hdqn.as_ref().unwrap(), reward, next_frames, done),
        }
    }

    fn update(&mut self) -> Result<Vec<LevelLoss>, NeuralError> {
        match self {
            AnyPlanner::Athrl(p) => p.update(),
            AnyPlanner::Flat(p) => p.update(),
            AnyPlanner::Hdqn(p) => p.update(),
        }
    }

    fn reset_controllers(&mut self) {
        match self {
            AnyPlanner::Athrl(p) => p.reset_controllers(),
            AnyPlanner::Flat(_) => {}
            AnyPlanner::Hdqn(p) => p.reset_controllers(),
        }
    }

    fn flush_pending(&mut self) {
        match self {
            AnyPlanner::Athrl(p) => p.flush_pending(),
            AnyPlanner::Flat(_) => {}
            AnyPlanner::Hdqn(p) => p.flush_pending(),
        }
    }

    fn buffer_sizes(&self) -> Vec<(&'static str, usize)> {
        match self {
            AnyPlanner::Athrl(p) => {
                let mut v = Vec::new();
                if p.intention.is_some() {
                    v.push(("intention", p.intention_buffer.len()));
                }
                v.push(("trajectory", p.trajectory_buffer.len()));
                v
            }
            AnyPlanner::Flat(p) => vec![("flat", p.buffer.len())],
            AnyPlanner::Hdqn(p) => {
                vec![("high", p.high_buffer.len()), ("mid", p.mid_buffer.len())]
            }
        }
    }

    fn checkpoints(&self) -> Vec<(&'static str, &'static str, &'static str, &NetworkSpec, &crate::neural::NetworkParams)> {
        let mut out = Vec::new();
        match self {
            AnyPlanner::Athrl(p) => {
                if let Some(agent) = &p.intention {
                    out.push(("intention_actor", "actor", "intention", &agent.actor_spec, &agent.actor));
                    out.push(("intention_critic", "critic", "intention", &agent.critic_spec, &agent.critic));
                }
                out.push(("trajectory_actor", "actor", "trajectory", &p.trajectory.actor_spec, &p.trajectory.actor));
                out.push(("trajectory_critic", "critic", "trajectory", &p.trajectory.critic_spec, &p.trajectory.critic));
            }
            AnyPlanner::Flat(p) => {
                out.push(("flat_actor", "actor", "flat", &p.agent.actor_spec, &p.agent.actor));
                out.push(("flat_critic", "critic", "flat", &p.agent.critic_spec, &p.agent.critic));
            }
            AnyPlanner::Hdqn(p) => {
                out.push(("high_q", "q", "high", &p.high.spec, &p.high.q));
                out.push(("mid_q", "q", "mid", &p.mid.spec, &p.mid.q));
            }
        }
        out
    }

    /// Restore main-network parameters from checkpoint files, verifying spec
    /// hashes. Target networks are set equal to the restored mains.
    fn load_checkpoints(&mut self, dir: &Path) -> Result<(), HarnessError> {
        fn restore(
            dir: &Path,
            name: &str,
            spec: &NetworkSpec,
            into: &mut crate::neural::NetworkParams,
        ) -> Result<(), HarnessError> {
            let path = dir.join(format!("{name}.bin"));
            if !path.exists() {
                return Err(HarnessError::Missing(path));
            }
            *into = load_params(&path, spec.hash())?;
            Ok(())
        }
        match self {
            AnyPlanner::Athrl(p) => {
                if let Some(agent) = &mut p.intention {
                    restore(dir, "intention_actor", &agent.actor_spec, &mut agent.actor)?;
                    restore(dir, "intention_critic", &agent.critic_spec, &mut agent.critic)?;
                    agent.actor_targ = agent.actor.clone();
                    agent.critic_targ = agent.critic.clone();
                }
                restore(dir, "trajectory_actor", &p.trajectory.actor_spec, &mut p.trajectory.actor)?;
                restore(dir, "trajectory_critic", &p.trajectory.critic_spec, &mut p.trajectory.critic)?;
                p.trajectory.actor_targ = p.trajectory.actor.clone();
                p.trajectory.critic_targ = p.trajectory.critic.clone();
            }
            AnyPlanner::Flat(p) => {
                restore(dir, "flat_actor", &p.agent.actor_spec, &mut p.agent.actor)?;
                restore(dir, "flat_critic", &p.agent.critic_spec, &mut p.agent.critic)?;
                p.agent.actor_targ = p.agent.actor.clone();
                p.agent.critic_targ = p.agent.critic.clone();
            }
            AnyPlanner::Hdqn(p) => {
                restore(dir, "high_q", &p.high.spec, &mut p.high.q)?;
                restore(dir, "mid_q", &p.mid.spec, &mut p.mid.q)?;
                p.high.q_targ = p.high.q.clone();
                p.mid.q_targ = p.mid.q.clone();
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum PlanMode {
    Random,
    Explore,
    Greedy,
}

/// Rolling observation history padded to the sequence length.
struct History {
    frames: VecDeque<Arc<Frame>>,
    len: usize,
}

impl History {
    fn start(len: usize, first: Arc<Frame>) -> Self {
        History { frames: std::iter::repeat(first).take(len).collect(), len }
    }

    fn push(&mut self, frame: Arc<Frame>) {
        self.frames.push_back(frame);
        while self.frames.len() > self.len {
            self.frames.pop_front();
        }
    }

    fn snapshot(&self) -> Vec<Arc<Frame>> {
        self.frames.iter().cloned().collect()
    }
}

pub struct RunSummary {
    pub dir: PathBuf,
    pub seed: u64,
    pub total_steps: u64,
    pub episodes: u64,
    pub eval: Option<EvalSummary>,
}

/// Train every configured seed; returns one summary per seed.
pub fn run(config: &ExperimentConfig) -> Result<Vec<RunSummary>, HarnessError> {
    config.validate()?;
    config.seeds.iter().map(|&seed| train_one(config, seed)).collect()
}

/// One seeded training run: warm-up, training, checkpoints, metrics, greedy
/// evaluation. Everything lands under `output/<method>/<map>/<seed>/`.
pub fn train_one(config: &ExperimentConfig, seed: u64) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    let dir = config.run_dir(seed);
    fs::create_dir_all(&dir)?;

    // resolved config echo, for provenance and replayability
    fs::write(
        dir.join("config.toml"),
        toml::to_string_pretty(config).expect("config serializes"),
    )?;

    let env_config = EnvConfig {
        map: config.map,
        n_traffic: config.n_traffic,
        max_episode_steps: config.max_episode_steps,
        weights: config.weights,
    };
    let mut env = DrivingEnv::new(env_config, seed)?;
    let mut planner = AnyPlanner::build(config, seed);

    let mut episode_seeds = EpisodeSeeds::new(seed);
    let obs = env.reset(episode_seeds.next())?;
    let mut history = History::start(config.network.seq_len, obs.to_frame());

    let mut metrics = csv::Writer::from_path(dir.join("metrics.csv"))?;
    let mut losses = csv::Writer::from_path(dir.join("losses.csv"))?;
    losses.write_record(["step", "level", "critic_loss", "actor_loss"])?;
    let mut trace = csv::Writer::from_path(dir.join("planner_trace.csv"))?;
    trace.write_record([
        "step", "episode", "intention", "theta", "radius", "desired_speed", "accel_cmd",
        "steer_cmd", "reward",
    ])?;

    let total = config.warmup_steps + config.train_steps;
    let mut episode: u64 = 0;
    let mut ep_steps: u64 = 0;
    let mut ep_reward = 0.0;
    let mut ep_speed_sum = 0.0;

    for step in 1..=total {
        let frames = history.snapshot();
        let mode = if step <= config.warmup_steps { PlanMode::Random } else { PlanMode::Explore };
        let decision = planner.plan(&frames, env.world().ego.speed, env.speed_limit(), mode)?;
        let (obs, reward, info) = env.step(&decision.cmd)?;
        let next_frame = obs.to_frame();
        history.push(next_frame);
        let next_frames = history.snapshot();
        let done = info.termination.is_terminal();
        planner.record(&decision, reward, &next_frames, done);

        ep_steps += 1;
        ep_reward += reward;
        ep_speed_sum += info.speed;
        write_trace_row(&mut trace, step, episode, &decision, reward)?;

        if step > config.warmup_steps {
            for loss in planner.update()? {
                losses.write_record([
                    step.to_string(),
                    loss.level.to_string(),
                    format!("{:.9e}", loss.critic),
                    loss.actor.map(|a| format!("{a:.9e}")).unwrap_or_default(),
                ])?;
            }
        }

        if done {
            metrics.serialize(EpisodeRow {
                episode,
                steps: ep_steps,
                total_reward: ep_reward,
                mean_speed: ep_speed_sum / ep_steps as f64,
                termination: info.termination.name().to_string(),
            })?;
            episode += 1;
            ep_steps = 0;
            ep_reward = 0.0;
            ep_speed_sum = 0.0;
            let obs = env.reset(episode_seeds.next())?;
            history = History::start(config.network.seq_len, obs.to_frame());
            planner.reset_controllers();
        }
    }
    planner.flush_pending();
    metrics.flush()?;
    losses.flush()?;
    trace.flush()?;

    write_buffer_counts(&dir, &planner)?;
    write_checkpoints(&dir, &planner)?;
    write_manifest(&dir, config, seed, &planner)?;

    let eval = if config.eval_episodes > 0 {
        Some(evaluate_in_memory(
            config,
            &mut planner,
            seed.wrapping_add(0x5eed),
            config.eval_episodes,
            Some(&dir),
        )?)
    } else {
        None
    };

    Ok(RunSummary { dir, seed, total_steps: total, episodes: episode, eval })
}

/// Deterministic per-episode reset seed stream.
struct EpisodeSeeds {
    state: u64,
}

impl EpisodeSeeds {
    fn new(seed: u64) -> Self {
        EpisodeSeeds { state: seed }
    }

    fn next(&mut self) -> u64 {
        // splitmix64
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

fn write_trace_row(
    w: &mut csv::Writer<fs::File>,
    step: u64,
    episode: u64,
    d: &Decision,
    reward: f64,
) -> Result<(), HarnessError> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    w.write_record([
        step.to_string(),
        episode.to_string(),
        opt(d.intention),
        opt(d.theta),
        opt(d.radius),
        opt(d.desired_speed),
        format!("{:.6}", d.cmd.accel_cmd),
        format!("{:.6}", d.cmd.steer_cmd),
        format!("{reward:.6}"),
    ])?;
    Ok(())
}

fn write_buffer_counts(dir: &Path, planner: &AnyPlanner) -> Result<(), HarnessError> {
    let mut text = String::new();
    for (level, n) in planner.buffer_sizes() {
        writeln!(text, "{level} = {n}").unwrap();
    }
    fs::write(dir.join("buffers.toml"), text)?;
    Ok(())
}

fn write_checkpoints(dir: &Path, planner: &AnyPlanner) -> Result<(), HarnessError> {
    let ckpt = dir.join("checkpoints");
    fs::create_dir_all(&ckpt)?;
    for (name, _, _, spec, params) in planner.checkpoints() {
        crate::neural::save_params(&ckpt.join(format!("{name}.bin")), params, spec.hash())?;
    }
    Ok(())
}

fn write_manifest(
    dir: &Path,
    config: &ExperimentConfig,
    seed: u64,
    planner: &AnyPlanner,
) -> Result<(), HarnessError> {
    let manifest = RunManifest {
        method: config.method,
        map: config.map,
        seed,
        config_hash: config.hash(),
        network: config.network.clone(),
        networks: planner
            .checkpoints()
            .into_iter()
            .map(|(name, role, level, spec, _)| ManifestNetwork {
                name: name.to_string(),
                role: role.to_string(),
                level: level.to_string(),
                file: format!("checkpoints/{name}.bin"),
                spec_hash: format!("{:016x}", spec.hash()),
            })
            .collect(),
    };
    fs::write(
        dir.join("manifest.toml"),
        toml::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

/// Greedy evaluation of a planner already in memory. When `dir` is given,
/// writes `eval.csv` and a full vehicle trace of the first episode.
fn evaluate_in_memory(
    config: &ExperimentConfig,
    planner: &mut AnyPlanner,
    seed: u64,
    episodes: usize,
    dir: Option<&Path>,
) -> Result<EvalSummary, HarnessError> {
    if episodes == 0 {
        return Err(HarnessError::Config("eval episodes must be > 0".into()));
    }
    let env_config = EnvConfig {
        map: config.map,
        n_traffic: config.n_traffic,
        max_episode_steps: config.max_episode_steps,
        weights: config.weights,
    };
    let mut env = DrivingEnv::new(env_config, seed)?;
    let mut episode_seeds = EpisodeSeeds::new(seed);

    let mut eval_csv = match dir {
        Some(d) => {
            let mut w = csv::Writer::from_path(d.join("eval.csv"))?;
            w.write_record(["episode", "steps", "total_reward", "mean_reward", "mean_speed", "termination"])?;
            Some(w)
        }
        None => None,
    };
    let mut trace_csv = match dir {
        Some(d) => {
            let mut w = csv::Writer::from_path(d.join("eval_trace.csv"))?;
            w.write_record(["map", "tick", "vehicle_id", "x", "y", "yaw", "speed"])?;
            Some(w)
        }
        None => None,
    };

    let mut avg_reward = 0.0;
    let mut avg_speed = 0.0;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for ep in 0..episodes {
        let obs = env.reset(episode_seeds.next())?;
        let mut history = History::start(config.network.seq_len, obs.to_frame());
        planner.reset_controllers();
        let mut total = 0.0;
        let mut speed_sum = 0.0;
        let mut steps = 0u64;
        let termination;
        loop {
            if ep == 0 {
                if let Some(w) = &mut trace_csv {
                    for (tick, id, x, y, yaw, speed) in env.world().trace_rows() {
                        w.write_record([
                            config.map.name().to_string(),
                            tick.to_string(),
                            id.to_string(),
                            format!("{x:.6}"),
                            format!("{y:.6}"),
                            format!("{yaw:.6}"),
                            format!("{speed:.6}"),
                        ])?;
                    }
                }
            }
            let frames = history.snapshot();
            let decision =
                planner.plan(&frames, env.world().ego.speed, env.speed_limit(), PlanMode::Greedy)?;
            let (obs, reward, info) = env.step(&decision.cmd)?;
            history.push(obs.to_frame());
            total += reward;
            speed_sum += info.speed;
            steps += 1;
            if info.termination.is_terminal() {
                termination = info.termination;
                break;
            }
        }
        let mean_reward = total / steps as f64;
        let mean_speed = speed_sum / steps as f64;
        avg_reward += mean_reward / episodes as f64;
        avg_speed += mean_speed / episodes as f64;
        *counts.entry(termination.name().to_string()).or_default() += 1;
        if let Some(w) = &mut eval_csv {
            w.write_record([
                ep.to_string(),
                steps.to_string(),
                format!("{total:.6}"),
                format!("{mean_reward:.6}"),
                format!("{mean_speed:.6}"),
                termination.name().to_string(),
            ])?;
        }
    }
    if let Some(mut w) = eval_csv {
        w.flush()?;
    }
    if let Some(mut w) = trace_csv {
        w.flush()?;
    }
    Ok(EvalSummary { episodes, avg_reward, avg_speed, termination_counts: counts })
}

/// Evaluate a finished run directory: rebuilds the planner from the manifest,
/// restores checkpoints (hash-checked), and runs greedy episodes.
pub fn evaluate(
    run_dir: &Path,
    map: MapId,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary, HarnessError> {
    if episodes == 0 {
        return Err(HarnessError::Config("eval episodes must be > 0".into()));
    }
    let manifest = RunManifest::load(run_dir)?;
    let config_path = run_dir.join("config.toml");
    let mut config = if config_path.exists() {
        ExperimentConfig::load(&config_path)?
    } else {
        ExperimentConfig {
            method: manifest.method,
            network: manifest.network.clone(),
            ..Default::default()
        }
    };
    config.map = map;
    let mut planner = AnyPlanner::build(&config, seed);
    planner.load_checkpoints(&run_dir.join("checkpoints"))?;
    evaluate_in_memory(&config, &mut planner, seed, episodes, None)
}

#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub mean_final_reward: f64,
    pub std_final_reward: f64,
    pub mean_final_speed: f64,
    pub std_final_speed: f64,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub rows: Vec<MethodSummary>,
    pub table: String,
}

fn read_metrics(dir: &Path) -> Result<Vec<EpisodeRow>, HarnessError> {
    let path = dir.join("metrics.csv");
    if !path.exists() {
        return Err(HarnessError::Missing(path));
    }
    let mut rows = Vec::new();
    let mut reader = csv::Reader::from_path(&path)?;
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Mean of the last `n` values, or of everything when shorter.
fn tail_mean(values: &[f64], n: usize) -> f64 {
    let tail = &values[values.len().saturating_sub(n)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Centered-window moving average with shrinking edges; a constant series
/// smooths to itself.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Aggregate finished runs: per-method mean and std of final-10-episode
/// reward and speed, plus smoothed training curves written next to the data.
pub fn compare(run_dirs: &[PathBuf], out: Option<&Path>) -> Result<CompareReport, HarnessError> {
    if run_dirs.len() < 2 {
        return Err(HarnessError::Config("compare needs at least two run dirs".into()));
    }
    let mut per_method: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    for dir in run_dirs {
        let manifest = RunManifest::load(dir)?;
        let rows = read_metrics(dir)?;
        let rewards: Vec<f64> = rows.iter().map(|r| r.total_reward).collect();
        let speeds: Vec<f64> = rows.iter().map(|r| r.mean_speed).collect();
        per_method
            .entry(manifest.method.name().to_string())
            .or_default()
            .push((tail_mean(&rewards, 10), tail_mean(&speeds, 10)));
        curves.push((
            format!("{}/{}", manifest.method.name(), manifest.seed),
            smooth(&rewards, 20),
        ));
    }

    let mut rows = Vec::new();
    let mut table = format!(
        "{:<14} {:>5} {:>16} {:>16}\n",
        "method", "runs", "final reward", "final speed"
    );
    for (method, finals) in &per_method {
        let (mr, sr) = mean_std(&finals.iter().map(|f| f.0).collect::<Vec<_>>());
        let (ms, ss) = mean_std(&finals.iter().map(|f| f.1).collect::<Vec<_>>());
        writeln!(
            table,
            "{method:<14} {:>5} {mr:>9.2} ± {sr:<5.2} {ms:>9.2} ± {ss:<5.2}",
            finals.len()
        )
        .unwrap();
        rows.push(MethodSummary {
            method: method.clone(),
            runs: finals.len(),
            mean_final_reward: mr,
            std_final_reward: sr,
            mean_final_speed: ms,
            std_final_speed: ss,
        });
    }

    if let Some(out) = out {
        fs::create_dir_all(out)?;
        let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
        w.write_record([
            "method", "runs", "mean_final_reward", "std_final_reward", "mean_final_speed",
            "std_final_speed",
        ])?;
        for r in &rows {
            w.write_record([
                r.method.clone(),
                r.runs.to_string(),
                format!("{:.6}", r.mean_final_reward),
                format!("{:.6}", r.std_final_reward),
                format!("{:.6}", r.mean_final_speed),
                format!("{:.6}", r.std_final_speed),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(out.join("curves.csv"))?;
        w.write_record(["run", "episode", "smoothed_reward"])?;
        for (run, curve) in &curves {
            for (i, v) in curve.iter().enumerate() {
                w.write_record([run.clone(), i.to_string(), format!("{v:.6}")])?;
            }
        }
        w.flush()?;
        fs::write(out.join("summary.txt"), &table)?;
    }
    Ok(CompareReport { rows, table })
}

/// Re-render a recorded vehicle trace as grayscale observation frames, one
/// set every `stride` ticks. Returns the number of rendered ticks.
pub fn replay_trace(trace: &Path, out_dir: &Path, stride: u64) -> Result<usize, HarnessError> {
    if !trace.exists() {
        return Err(HarnessError::Missing(trace.to_path_buf()));
    }
    let stride = stride.max(1);
    let mut reader = csv::Reader::from_path(trace)?;
    // tick -> (map, rows)
    let mut ticks: BTreeMap<u64, (MapId, Vec<(usize, f64, f64, f64, f64)>)> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        if row.len() != 7 {
            return Err(HarnessError::Config(format!(
                "trace rows need 7 fields, got {}",
                row.len()
            )));
        }
        let map = MapId::parse(&row[0]).map_err(|e| HarnessError::Config(e.to_string()))?;
        let parse = |i: usize| -> Result<f64, HarnessError> {
            row[i]
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad number '{}'", &row[i])))
        };
        let tick: u64 = row[1]
            .parse()
            .map_err(|_| HarnessError::Config(format!("bad tick '{}'", &row[1])))?;
        let id: usize = row[2]
            .parse()
            .map_err(|_| HarnessError::Config(format!("bad vehicle id '{}'", &row[2])))?;
        ticks
            .entry(tick)
            .or_insert_with(|| (map, Vec::new()))
            .1
            .push((id, parse(3)?, parse(4)?, parse(5)?, parse(6)?));
    }
    if ticks.is_empty() {
        return Err(HarnessError::Config("trace holds no rows".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut rendered = 0;
    for (tick, (map, rows)) in ticks {
        if tick % stride != 0 {
            continue;
        }
        let mut world = spawn_scenario(map, 0, 0)?;
        let vehicle = |x: f64, y: f64, yaw: f64, speed: f64| VehicleState {
            x,
            y,
            yaw,
            speed,
            length: VEHICLE_LENGTH,
            width: VEHICLE_WIDTH,
        };
        for &(id, x, y, yaw, speed) in &rows {
            if id == 0 {
                world.ego = vehicle(x, y, yaw, speed);
            } else {
                world
                    .traffic
                    .push(TrafficVehicle { state: vehicle(x, y, yaw, speed), route: vec![0] });
            }
        }
        let obs = Observation::render(&world);
        obs.dump_debug_images(out_dir, &format!("{tick:06}"))?;
        rendered += 1;
    }
    Ok(rendered)
}
