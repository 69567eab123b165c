pub mod agents;
pub mod env;
pub mod harness;
pub mod neural;
pub mod planner;
pub mod pointmass;
pub mod reward;
pub mod sensors;
pub mod worldsim;

pub use agents::{DDPGAgent, DDPGConfig, DqnAgent, DqnConfig, ReplayBuffer, Transition};
pub use env::DrivingEnv;
pub use harness::{ExperimentConfig, HarnessError, Method, RunManifest};
pub use neural::{HiddenState, NetworkParams, NetworkSpec, OptState};
pub use planner::{AthrlPlanner, FlatPlanner, HdqnPlanner, SpecTemplate};
pub use worldsim::{EgoCommand, Events, MapId, RoadNetwork, VehicleState, World};
