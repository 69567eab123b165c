//! Scalar step reward and episode termination derived from world events.

use serde::{Deserialize, Serialize};

use crate::worldsim::{Events, VehicleState, EgoCommand, MAX_STEER, WHEELBASE};

/// Weights a1..a7 of the seven reward terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    pub a6: f64,
    pub a7: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            a1: 200.0,
            a2: 1.0,
            a3: 10.0,
            a4: 1.0,
            a5: 5.0,
            a6: 0.2,
            a7: -0.1,
        }
    }
}

impl RewardWeights {
    pub const ZERO: RewardWeights = RewardWeights {
        a1: 0.0,
        a2: 0.0,
        a3: 0.0,
        a4: 0.0,
        a5: 0.0,
        a6: 0.0,
        a7: 0.0,
    };
}

/// The unweighted factors of the reward sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerms {
    /// -1 on collision, else 0.
    pub r_collision: f64,
    /// Speed along the lane direction, m/s.
    pub r_longspeed: f64,
    /// Negated speed-limit excess, <= 0.
    pub r_exceed: f64,
    /// -1 while out of lane, else 0.
    pub r_out: f64,
    /// Negated squared wheel angle, <= 0.
    pub r_steer: f64,
    /// Negated lateral-speed proxy u^2 |tan d| / L, <= 0.
    pub r_latspeed: f64,
    /// Always 1; carries the constant weight a7.
    pub constant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    Collision,
    OutOfLane,
    MaxSteps,
    RouteComplete,
    None,
}

impl TerminationReason {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, TerminationReason::None)
    }

    pub fn name(&self) -> &'static str {
        match self {
            TerminationReason::Collision => "collision",
            TerminationReason::OutOfLane => "out_of_lane",
            TerminationReason::MaxSteps => "max_steps",
            TerminationReason::RouteComplete => "route_complete",
            TerminationReason::None => "none",
        }
    }
}

/// Consecutive out-of-lane steps required before the episode ends.
pub const OUT_OF_LANE_PERSISTENCE: u32 = 5;

pub fn compute_reward(
    state: &VehicleState,
    cmd: &EgoCommand,
    ev: &Events,
    w: &RewardWeights,
) -> (f64, RewardTerms) {
    let u = state.speed;
    let delta = MAX_STEER * cmd.steer_cmd.clamp(-1.0, 1.0);
    let terms = RewardTerms {
        r_collision: if ev.collision { -1.0 } else { 0.0 },
        r_longspeed: u * ev.heading_error.cos(),
        r_exceed: -ev.speed_over_limit,
        r_out: if ev.out_of_lane { -1.0 } else { 0.0 },
        r_steer: -delta * delta,
        r_latspeed: -(u * u * delta.tan().abs() / WHEELBASE),
        constant: 1.0,
    };
    let r = w.a1 * terms.r_collision
        + w.a2 * terms.r_longspeed
        + w.a3 * terms.r_exceed
        + w.a4 * terms.r_out
        + w.a5 * terms.r_steer
        + w.a6 * terms.r_latspeed
        + w.a7 * terms.constant;
    assert!(r.is_finite(), "non-finite reward from {ev:?}");
    (r, terms)
}

/// Tracks the out-of-lane streak across steps of one episode.
#[derive(Debug, Clone, Default)]
pub struct TerminationTracker {
    out_of_lane_streak: u32,
}

impl TerminationTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.out_of_lane_streak = 0;
    }

    /// Classify the step; collision dominates, then persistent lane
    /// departure, then the step cap, then route completion.
    pub fn check(&mut self, ev: &Events, tick: u64, max_steps: u64) -> TerminationReason {
        if ev.out_of_lane {
            self.out_of_lane_streak += 1;
        } else {
            self.out_of_lane_streak = 0;
        }
        if ev.collision {
            TerminationReason::Collision
        } else if self.out_of_lane_streak >= OUT_OF_LANE_PERSISTENCE {
            TerminationReason::OutOfLane
        } else if tick >= max_steps {
            TerminationReason::MaxSteps
        } else if ev.route_complete {
            TerminationReason::RouteComplete
        } else {
            TerminationReason::None
        }
    }
}
