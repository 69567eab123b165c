//! Hierarchical driving planner: a continuous intention level feeding a
//! waypoint/speed trajectory level, executed by two PID controllers. Also
//! holds the baselines that share this scaffolding: the two-level ablation
//! without the intention input, a flat continuous-control agent, and a
//! discrete-action hierarchy.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agents::{DDPGAgent, DDPGConfig, DqnAgent, DqnConfig, ReplayBuffer, Transition};
use crate::neural::{Frame, NetworkSpec, NeuralError};
use crate::worldsim::EgoCommand;

/// Forward semicircle radius for waypoint placement, meters.
pub const SEMICIRCLE_RADIUS: f64 = 10.0;
/// Observation history length fed to the recurrent networks.
pub const SEQ_LEN: usize = 8;
/// Waypoints never collapse onto the rear axle.
pub const MIN_WAYPOINT_RADIUS: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("degenerate waypoint at the origin")]
    DegenerateWaypoint,
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Lane-choice value in [0, 2]: 0 = leftmost option, 1 = straight, 2 = right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intention(pub f64);

impl Intention {
    /// Affine map from the actor's [-1, 1] output.
    pub fn from_actor(a: f64) -> Self {
        Intention((a + 1.0).clamp(0.0, 2.0))
    }
}

/// One waypoint in ego-frame polar coordinates plus a target speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryAction {
    /// Bearing in [-pi/2, pi/2], left positive.
    pub theta: f64,
    /// Distance in (0, SEMICIRCLE_RADIUS].
    pub radius: f64,
    /// m/s in [0, v_limit].
    pub desired_speed: f64,
}

impl TrajectoryAction {
    /// Midpoint mapping from the actor's [-1, 1]^3 output.
    pub fn from_actor(a: &[f64], v_limit: f64) -> Self {
        TrajectoryAction {
            theta: a[0].clamp(-1.0, 1.0) * FRAC_PI_2,
            radius: ((a[1].clamp(-1.0, 1.0) + 1.0) / 2.0 * SEMICIRCLE_RADIUS)
                .max(MIN_WAYPOINT_RADIUS),
            desired_speed: (a[2].clamp(-1.0, 1.0) + 1.0) / 2.0 * v_limit,
        }
    }

    /// Ego-frame cartesian waypoint (x forward, y left).
    pub fn waypoint(&self) -> [f64; 2] {
        [self.radius * self.theta.cos(), self.radius * self.theta.sin()]
    }
}

/// Scalar PID with clamped integral and clipped output.
#[derive(Debug, Clone)]
pub struct PidController {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral: f64,
    pub prev_error: Option<f64>,
    pub windup_clamp: f64,
}

impl PidController {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Self {
        PidController { kp, ki, kd, integral: 0.0, prev_error: None, windup_clamp: 2.0 }
    }

    /// Throttle/brake gains.
    pub fn longitudinal() -> Self {
        PidController::new(0.5, 0.1, 0.05)
    }

    /// Steering gains. The proportional gain must beat the bearing drift
    /// u*sin(e)/d of a closing waypoint, which needs kp*tan(max steer)/L
    /// comfortably above 1/d over the pursuit range.
    pub fn lateral() -> Self {
        PidController::new(3.0, 0.0, 0.1)
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    /// One controller step on error `e`; output clipped to [-1, 1].
    pub fn update(&mut self, e: f64, dt: f64) -> f64 {
        assert!(dt > 0.0);
        self.integral = (self.integral + e * dt).clamp(-self.windup_clamp, self.windup_clamp);
        let de = match self.prev_error {
            Some(prev) => (e - prev) / dt,
            None => 0.0,
        };
        self.prev_error = Some(e);
        (self.kp * e + self.ki * self.integral + self.kd * de).clamp(-1.0, 1.0)
    }
}

/// Throttle command from current speed `u` toward target `v`.
pub fn pid_longitudinal(ctrl: &mut PidController, u: f64, v: f64, dt: f64) -> f64 {
    ctrl.update(v - u, dt)
}

/// Steering command pursuing an ego-frame waypoint; the heading error is the
/// waypoint bearing itself.
pub fn pid_lateral(
    ctrl: &mut PidController,
    waypoint: [f64; 2],
    dt: f64,
) -> Result<f64, PlannerError> {
    let r = (waypoint[0] * waypoint[0] + waypoint[1] * waypoint[1]).sqrt();
    if r < 1e-9 {
        return Err(PlannerError::DegenerateWaypoint);
    }
    let e = waypoint[1].atan2(waypoint[0]);
    Ok(ctrl.update(e, dt))
}

/// Builds the observation networks from one architecture template, varying
/// only the appended-scalar count and the head width.
#[derive(Debug, Clone)]
pub struct SpecTemplate(pub NetworkSpec);

impl SpecTemplate {
    /// Full-scale driving networks.
    pub fn driving() -> Self {
        SpecTemplate(NetworkSpec::observation(0, 1, SEQ_LEN))
    }

    pub fn build(&self, extra_inputs: usize, head: usize) -> NetworkSpec {
        NetworkSpec { extra_inputs, head, ..self.0.clone() }
    }
}

/// What one planning call decided, with the raw actor outputs kept for
/// replay storage.
#[derive(Debug, Clone)]
pub struct PlanStep {
    pub frames: Vec<Arc<Frame>>,
    /// Raw intention-actor output in [-1, 1], when the level exists.
    pub raw_intention: Option<f64>,
    pub intention: Option<Intention>,
    pub raw_trajectory: [f64; 3],
    pub trajectory: TrajectoryAction,
    pub cmd: EgoCommand,
}

struct PendingTrajectory {
    transition: Transition,
}

/// Losses from one update call, tagged by hierarchy level.
#[derive(Debug, Clone, Copy)]
pub struct LevelLoss {
    pub level: &'static str,
    pub critic: f64,
    /// Absent for the discrete agents.
    pub actor: Option<f64>,
}

/// The hierarchical planner. With `intention: None` this is the two-level
/// ablation: identical trajectory level, no intention input.
pub struct AthrlPlanner {
    pub intention: Option<DDPGAgent>,
    pub trajectory: DDPGAgent,
    pub intention_buffer: ReplayBuffer,
    pub trajectory_buffer: ReplayBuffer,
    pub pid_longi: PidController,
    pub pid_lat: PidController,
    pending: Option<PendingTrajectory>,
    rng: ChaCha8Rng,
}

impl AthrlPlanner {
    pub fn new(
        template: &SpecTemplate,
        with_intention: bool,
        config: &DDPGConfig,
        buffer_capacity: usize,
        seed: u64,
    ) -> Self {
        let intention = with_intention.then(|| {
            DDPGAgent::new(
                template.build(0, 1),
                DDPGConfig { k: 1, ..config.clone() },
                seed,
            )
        });
        let traj_extras = if with_intention { 1 } else { 0 };
        let trajectory = DDPGAgent::new(
            template.build(traj_extras, 3),
            DDPGConfig { k: 3, ..config.clone() },
            seed.wrapping_add(100),
        );
        // hierarchy contract: the trajectory nets see exactly one scalar more
        // than the intention nets when the intention level exists
        if let Some(i) = &intention {
            assert_eq!(
                trajectory.actor_spec.fused_width(),
                i.actor_spec.fused_width() + 1
            );
        }
        AthrlPlanner {
            intention,
            trajectory,
            intention_buffer: ReplayBuffer::new(buffer_capacity, seed.wrapping_add(201)),
            trajectory_buffer: ReplayBuffer::new(buffer_capacity, seed.wrapping_add(202)),
            pid_longi: PidController::longitudinal(),
            pid_lat: PidController::lateral(),
            pending: None,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(203)),
        }
    }

    pub fn reset_controllers(&mut self) {
        self.pid_longi.reset();
        self.pid_lat.reset();
    }

    fn compose(
        &mut self,
        frames: &[Arc<Frame>],
        raw_intention: Option<f64>,
        raw_trajectory: [f64; 3],
        speed: f64,
        v_limit: f64,
        dt: f64,
    ) -> Result<PlanStep, PlannerError> {
        let intention = raw_intention.map(Intention::from_actor);
        let trajectory = TrajectoryAction::from_actor(&raw_trajectory, v_limit);
        let accel = pid_longitudinal(&mut self.pid_longi, speed, trajectory.desired_speed, dt);
        let steer = pid_lateral(&mut self.pid_lat, trajectory.waypoint(), dt)?;
        let plan = PlanStep {
            frames: frames.to_vec(),
            raw_intention,
            intention,
            raw_trajectory,
            trajectory,
            cmd: EgoCommand::clipped(accel, steer),
        };
        // a newly chosen intention completes last step's trajectory transition
        if let Some(pending) = self.pending.take() {
            let mut t = pending.transition;
            if let Some(i) = plan.intention {
                t.next_extras = vec![i.0];
            }
            self.trajectory_buffer.push(t);
        }
        Ok(plan)
    }

    /// Greedy or exploratory plan from the current policies.
    pub fn plan(
        &mut self,
        frames: &[Arc<Frame>],
        speed: f64,
        v_limit: f64,
        dt: f64,
        explore: bool,
    ) -> Result<PlanStep, PlannerError> {
        let raw_intention = self
            .intention
            .as_mut()
            .map(|agent| agent.act(frames, &[], explore)[0]);
        let extras: Vec<f64> = raw_intention
            .map(|a| vec![Intention::from_actor(a).0])
            .unwrap_or_default();
        let raw = self.trajectory.act(frames, &extras, explore);
        self.compose(frames, raw_intention, [raw[0], raw[1], raw[2]], speed, v_limit, dt)
    }

    /// Uniform-random plan used during warm-up.
    pub fn plan_random(
        &mut self,
        frames: &[Arc<Frame>],
        speed: f64,
        v_limit: f64,
        dt: f64,
    ) -> Result<PlanStep, PlannerError> {
        let raw_intention = self.intention.as_ref().map(|_| self.rng.gen_range(-1.0..1.0));
        let raw = [
            self.rng.gen_range(-1.0..1.0),
            self.rng.gen_range(-1.0..1.0),
            self.rng.gen_range(-1.0..1.0),
        ];
        self.compose(frames, raw_intention, raw, speed, v_limit, dt)
    }

    /// Store the outcome of `plan` at both hierarchy levels. The trajectory
    /// transition needs the next step's intention; it is held back until the
    /// next `plan` call unless the episode ended.
    pub fn record(
        &mut self,
        plan: &PlanStep,
        reward: f64,
        next_frames: &[Arc<Frame>],
        done: bool,
    ) {
        if let Some(raw_i) = plan.raw_intention {
            self.intention_buffer.push(Transition {
                frames: plan.frames.clone(),
                extras: vec![],
                action: vec![raw_i],
                reward,
                next_frames: next_frames.to_vec(),
                next_extras: vec![],
                done,
            });
        }
        let extras = plan.intention.map(|i| vec![i.0]).unwrap_or_default();
        let transition = Transition {
            frames: plan.frames.clone(),
            // placeholder next intention; overwritten when the next plan
            // lands, irrelevant on terminal transitions
            next_extras: extras.clone(),
            extras,
            action: plan.raw_trajectory.to_vec(),
            reward,
            next_frames: next_frames.to_vec(),
            done,
        };
        if done {
            self.pending = None;
            self.trajectory_buffer.push(transition);
        } else {
            self.pending = Some(PendingTrajectory { transition });
        }
    }

    /// One gradient update on each level from its own buffer.
    pub fn update(&mut self) -> Result<Vec<LevelLoss>, NeuralError> {
        let mut out = Vec::new();
        if let Some(agent) = &mut self.intention {
            if let Some((c, a)) = agent.update(&mut self.intention_buffer)? {
                out.push(LevelLoss { level: "intention", critic: c, actor: Some(a) });
            }
        }
        if let Some((c, a)) = self.trajectory.update(&mut self.trajectory_buffer)? {
            out.push(LevelLoss { level: "trajectory", critic: c, actor: Some(a) });
        }
        Ok(out)
    }

    /// Push any held-back trajectory transition, keeping its placeholder next
    /// intention. Called when a run stops mid-episode.
    pub fn flush_pending(&mut self) {
        if let Some(p) = self.pending.take() {
            self.trajectory_buffer.push(p.transition);
        }
    }
}

/// Non-hierarchical baseline: the actor output is the vehicle command.
pub struct FlatPlanner {
    pub agent: DDPGAgent,
    pub buffer: ReplayBuffer,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct FlatStep {
    pub frames: Vec<Arc<Frame>>,
    pub raw: [f64; 2],
    pub cmd: EgoCommand,
}

impl FlatPlanner {
    pub fn new(
        template: &SpecTemplate,
        config: &DDPGConfig,
        buffer_capacity: usize,
        seed: u64,
    ) -> Self {
        FlatPlanner {
            agent: DDPGAgent::new(
                template.build(0, 2),
                DDPGConfig { k: 2, ..config.clone() },
                seed,
            ),
            buffer: ReplayBuffer::new(buffer_capacity, seed.wrapping_add(201)),
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(203)),
        }
    }

    pub fn plan(&mut self, frames: &[Arc<Frame>], explore: bool) -> FlatStep {
        let raw = self.agent.act(frames, &[], explore);
        FlatStep {
            frames: frames.to_vec(),
            raw: [raw[0], raw[1]],
            cmd: EgoCommand::clipped(raw[0], raw[1]),
        }
    }

    pub fn plan_random(&mut self, frames: &[Arc<Frame>]) -> FlatStep {
        let raw = [self.rng.gen_range(-1.0..1.0), self.rng.gen_range(-1.0..1.0)];
        FlatStep { frames: frames.to_vec(), raw, cmd: EgoCommand::clipped(raw[0], raw[1]) }
    }

    pub fn record(&mut self, step: &FlatStep, reward: f64, next_frames: &[Arc<Frame>], done: bool) {
        self.buffer.push(Transition {
            frames: step.frames.clone(),
            extras: vec![],
            action: step.raw.to_vec(),
            reward,
            next_frames: next_frames.to_vec(),
            next_extras: vec![],
            done,
        });
    }

    pub fn update(&mut self) -> Result<Vec<LevelLoss>, NeuralError> {
        let mut out = Vec::new();
        if let Some((c, a)) = self.agent.update(&mut self.buffer)? {
            out.push(LevelLoss { level: "flat", critic: c, actor: Some(a) });
        }
        Ok(out)
    }
}

/// Discrete waypoint menu for the discrete-hierarchy baseline: 5 bearings x
/// 3 radii x 3 speed levels.
pub const HDQN_BEARINGS: [f64; 5] =
    [-FRAC_PI_2, -FRAC_PI_2 / 2.0, 0.0, FRAC_PI_2 / 2.0, FRAC_PI_2];
pub const HDQN_RADII: [f64; 3] = [
    SEMICIRCLE_RADIUS / 3.0,
    2.0 * SEMICIRCLE_RADIUS / 3.0,
    SEMICIRCLE_RADIUS,
];
pub const HDQN_SPEED_FRACTIONS: [f64; 3] = [1.0 / 3.0, 2.0 / 3.0, 1.0];
pub const HDQN_MID_ACTIONS: usize = 45;

/// Decode a mid-level action index into a trajectory.
pub fn hdqn_decode(index: usize, v_limit: f64) -> TrajectoryAction {
    assert!(index < HDQN_MID_ACTIONS);
    let bearing = index / 9;
    let radius = (index / 3) % 3;
    let speed = index % 3;
    TrajectoryAction {
        theta: HDQN_BEARINGS[bearing],
        radius: HDQN_RADII[radius],
        desired_speed: HDQN_SPEED_FRACTIONS[speed] * v_limit,
    }
}

/// Discrete three-level baseline: a 3-way intention Q-net over the same
/// trunk, then a 45-way waypoint/speed menu, then the shared PIDs.
pub struct HdqnPlanner {
    pub high: DqnAgent,
    pub mid: DqnAgent,
    pub high_buffer: ReplayBuffer,
    pub mid_buffer: ReplayBuffer,
    pub pid_longi: PidController,
    pub pid_lat: PidController,
    pending: Option<PendingTrajectory>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct HdqnStep {
    pub frames: Vec<Arc<Frame>>,
    pub intention_index: usize,
    pub mid_index: usize,
    pub trajectory: TrajectoryAction,
    pub cmd: EgoCommand,
}

impl HdqnPlanner {
    pub fn new(
        template: &SpecTemplate,
        config: &DqnConfig,
        buffer_capacity: usize,
        seed: u64,
    ) -> Self {
        HdqnPlanner {
            high: DqnAgent::new(template.build(0, 3), config.clone(), seed),
            mid: DqnAgent::new(
                template.build(1, HDQN_MID_ACTIONS),
                config.clone(),
                seed.wrapping_add(100),
            ),
            high_buffer: ReplayBuffer::new(buffer_capacity, seed.wrapping_add(201)),
            mid_buffer: ReplayBuffer::new(buffer_capacity, seed.wrapping_add(202)),
            pid_longi: PidController::longitudinal(),
            pid_lat: PidController::lateral(),
            pending: None,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(203)),
        }
    }

    pub fn reset_controllers(&mut self) {
        self.pid_longi.reset();
        self.pid_lat.reset();
    }

    fn compose(
        &mut self,
        frames: &[Arc<Frame>],
        intention_index: usize,
        mid_index: usize,
        speed: f64,
        v_limit: f64,
        dt: f64,
    ) -> Result<HdqnStep, PlannerError> {
        let trajectory = hdqn_decode(mid_index, v_limit);
        let accel = pid_longitudinal(&mut self.pid_longi, speed, trajectory.desired_speed, dt);
        let steer = pid_lateral(&mut self.pid_lat, trajectory.waypoint(), dt)?;
        if let Some(pending) = self.pending.take() {
            let mut t = pending.transition;
            t.next_extras = vec![intention_index as f64];
            self.mid_buffer.push(t);
        }
        Ok(HdqnStep {
            frames: frames.to_vec(),
            intention_index,
            mid_index,
            trajectory,
            cmd: EgoCommand::clipped(accel, steer),
        })
    }

    pub fn plan(
        &mut self,
        frames: &[Arc<Frame>],
        speed: f64,
        v_limit: f64,
        dt: f64,
        explore: bool,
    ) -> Result<HdqnStep, PlannerError> {
        let hi = self.high.act(frames, &[], explore);
        let mid = self.mid.act(frames, &[hi as f64], explore);
        self.compose(frames, hi, mid, speed, v_limit, dt)
    }

    pub fn plan_random(
        &mut self,
        frames: &[Arc<Frame>],
        speed: f64,
        v_limit: f64,
        dt: f64,
    ) -> Result<HdqnStep, PlannerError> {
        let hi = self.rng.gen_range(0..3);
        let mid = self.rng.gen_range(0..HDQN_MID_ACTIONS);
        self.compose(frames, hi, mid, speed, v_limit, dt)
    }

    pub fn record(&mut self, step: &HdqnStep, reward: f64, next_frames: &[Arc<Frame>], done: bool) {
        self.high_buffer.push(Transition {
            frames: step.frames.clone(),
            extras: vec![],
            action: vec![step.intention_index as f64],
            reward,
            next_frames: next_frames.to_vec(),
            next_extras: vec![],
            done,
        });
        let transition = Transition {
            frames: step.frames.clone(),
            extras: vec![step.intention_index as f64],
            action: vec![step.mid_index as f64],
            reward,
            next_frames: next_frames.to_vec(),
            next_extras: vec![step.intention_index as f64],
            done,
        };
        if done {
            self.pending = None;
            self.mid_buffer.push(transition);
        } else {
            self.pending = Some(PendingTrajectory { transition });
        }
    }

    pub fn update(&mut self) -> Result<Vec<LevelLoss>, NeuralError> {
        let mut out = Vec::new();
        if let Some(c) = self.high.update(&mut self.high_buffer)? {
            out.push(LevelLoss { level: "high", critic: c, actor: None });
        }
        if let Some(c) = self.mid.update(&mut self.mid_buffer)? {
            out.push(LevelLoss { level: "mid", critic: c, actor: None });
        }
        Ok(out)
    }

    pub fn flush_pending(&mut self) {
        if let Some(p) = self.pending.take() {
            self.mid_buffer.push(p.transition);
        }
    }
}
