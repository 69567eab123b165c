//! Deterministic 2D driving world: road networks, ego kinematics, scripted
//! background traffic, and per-step event detection.

pub mod geometry;
mod maps;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use geometry::{obb_corners, obb_overlap, wrap_angle, Point, Polyline};

/// Wheelbase of the kinematic bicycle, meters.
pub const WHEELBASE: f64 = 2.5;
/// Maximum front-wheel angle, radians.
pub const MAX_STEER: f64 = 0.6;
/// Peak acceleration, m/s^2.
pub const MAX_ACCEL: f64 = 3.0;
/// Peak braking deceleration, m/s^2.
pub const MAX_BRAKE: f64 = 8.0;
/// Speed cap, m/s.
pub const MAX_SPEED: f64 = 20.0;
/// Environment step, seconds.
pub const DT: f64 = 0.1;
/// Lateral offset beyond which the ego counts as out of lane, meters.
pub const OUT_OF_LANE_THRESHOLD: f64 = 2.0;
/// Vehicle footprint, meters.
pub const VEHICLE_LENGTH: f64 = 4.5;
pub const VEHICLE_WIDTH: f64 = 2.0;
/// Gap below which traffic holds full brake, and the gap where braking starts.
pub const GAP_STOP: f64 = 2.0;
pub const GAP_SAFE: f64 = 8.0;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("non-finite state during integration: {0}")]
    Integration(String),
    #[error("cannot place {requested} traffic vehicles, only {placed} slots available")]
    Spawn { requested: usize, placed: usize },
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Heading in (-pi, pi].
    pub yaw: f64,
    /// Forward speed, always >= 0.
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, yaw: f64, speed: f64) -> Self {
        VehicleState {
            x,
            y,
            yaw: wrap_angle(yaw),
            speed: speed.max(0.0),
            length: VEHICLE_LENGTH,
            width: VEHICLE_WIDTH,
        }
    }

    pub fn corners(&self) -> [Point; 4] {
        // x, y is the rear axle; the body center sits half a wheelbase ahead
        let cx = self.x + (WHEELBASE / 2.0) * self.yaw.cos();
        let cy = self.y + (WHEELBASE / 2.0) * self.yaw.sin();
        obb_corners(cx, cy, self.yaw, self.length, self.width)
    }
}

/// Normalized driving command; positive accel is throttle, negative is brake.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EgoCommand {
    pub accel_cmd: f64,
    pub steer_cmd: f64,
}

impl EgoCommand {
    pub fn clipped(accel_cmd: f64, steer_cmd: f64) -> Self {
        EgoCommand {
            accel_cmd: accel_cmd.clamp(-1.0, 1.0),
            steer_cmd: steer_cmd.clamp(-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapId {
    Mini02,
    Mini03,
    Mini04,
}

impl MapId {
    pub fn parse(s: &str) -> Result<Self, WorldError> {
        match s {
            "mini02" => Ok(MapId::Mini02),
            "mini03" => Ok(MapId::Mini03),
            "mini04" => Ok(MapId::Mini04),
            other => Err(WorldError::Config(format!("unknown map `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MapId::Mini02 => "mini02",
            MapId::Mini03 => "mini03",
            MapId::Mini04 => "mini04",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub center: Polyline,
    pub width: f64,
    pub speed_limit: f64,
    pub successors: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RoadNetwork {
    pub lanes: Vec<Lane>,
    pub map_id: MapId,
    /// Axis-aligned map boundary, also the lidar's far wall.
    pub bounds_min: Point,
    pub bounds_max: Point,
}

impl RoadNetwork {
    pub fn build(map_id: MapId) -> Self {
        maps::build(map_id)
    }

    pub fn total_lane_length(&self) -> f64 {
        self.lanes.iter().map(|l| l.center.length()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct TrafficVehicle {
    pub state: VehicleState,
    /// Current lane plus the lanes already driven, most recent last.
    pub route: Vec<usize>,
}

impl TrafficVehicle {
    pub fn lane(&self) -> usize {
        *self.route.last().unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub ego: VehicleState,
    pub traffic: Vec<TrafficVehicle>,
    pub road: RoadNetwork,
    /// Ordered lane indices the ego is meant to follow.
    pub route: Vec<usize>,
    pub tick: u64,
    rng: ChaCha8Rng,
    route_path: Polyline,
    /// Cumulative start arc length of each route lane along `route_path`.
    route_lane_starts: Vec<f64>,
}

/// Per-step event readout used by the reward and termination logic.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Events {
    pub collision: bool,
    pub out_of_lane: bool,
    pub lateral_offset: f64,
    pub heading_error: f64,
    pub speed_over_limit: f64,
    pub route_complete: bool,
}

/// Kinematic bicycle update over one step of length `dt`.
pub fn bicycle_step(
    state: &VehicleState,
    cmd: &EgoCommand,
    dt: f64,
) -> Result<VehicleState, WorldError> {
    assert!(dt > 0.0, "dt must be positive");
    let accel_cmd = cmd.accel_cmd.clamp(-1.0, 1.0);
    let steer_cmd = cmd.steer_cmd.clamp(-1.0, 1.0);
    let accel = if accel_cmd >= 0.0 {
        MAX_ACCEL * accel_cmd
    } else {
        MAX_BRAKE * accel_cmd
    };
    let delta = MAX_STEER * steer_cmd;
    let u = state.speed;
    let next = VehicleState {
        x: state.x + u * state.yaw.cos() * dt,
        y: state.y + u * state.yaw.sin() * dt,
        yaw: wrap_angle(state.yaw + (u / WHEELBASE) * delta.tan() * dt),
        speed: (u + accel * dt).clamp(0.0, MAX_SPEED),
        length: state.length,
        width: state.width,
    };
    if !(next.x.is_finite() && next.y.is_finite() && next.yaw.is_finite() && next.speed.is_finite())
    {
        return Err(WorldError::Integration(format!("state {next:?}")));
    }
    Ok(next)
}

/// Scripted lane-following with gap keeping for background vehicles.
/// Deterministic: same vehicle and world always produce the same command.
pub fn traffic_policy(vehicle: &TrafficVehicle, world: &World) -> EgoCommand {
    let lane = &world.road.lanes[vehicle.lane()];
    let v = &vehicle.state;
    let pos = [v.x, v.y];
    let proj = lane.center.project(pos);

    // pure-pursuit style steer toward a lookahead point on the centerline
    let lookahead = (v.speed * 0.8).max(4.0);
    let target = lane.center.point_at(proj.s + lookahead);
    let desired = (target[1] - v.y).atan2(target[0] - v.x);
    let err = wrap_angle(desired - v.yaw);
    let delta = (2.0 * WHEELBASE * err.sin() / lookahead).atan();
    let steer_cmd = (delta / MAX_STEER).clamp(-1.0, 1.0);

    // gap keeping against the nearest vehicle ahead in our corridor
    let mut min_gap = f64::INFINITY;
    let (sy, cy) = v.yaw.sin_cos();
    let mut consider = |other: &VehicleState| {
        let dx = other.x - v.x;
        let dy = other.y - v.y;
        let forward = dx * cy + dy * sy;
        let lateral = -dx * sy + dy * cy;
        if forward > 0.0 && lateral.abs() < 2.5 {
            min_gap = min_gap.min(forward - v.length);
        }
    };
    consider(&world.ego);
    for other in &world.traffic {
        if !std::ptr::eq(other, vehicle) {
            consider(&other.state);
        }
    }

    let accel_cmd = if min_gap < GAP_STOP {
        -1.0
    } else if min_gap < GAP_SAFE {
        -(GAP_SAFE - min_gap) / (GAP_SAFE - GAP_STOP)
    } else {
        // slow down for sharp corners, otherwise track the limit
        let target_speed = lane.speed_limit * (1.0 - err.abs()).clamp(0.3, 1.0);
        0.5 * (target_speed - v.speed)
    };
    EgoCommand::clipped(accel_cmd, steer_cmd)
}

/// Unsigned lateral offset and heading error of `state` against the route
/// centerline.
pub fn lane_metrics(
    state: &VehicleState,
    road: &RoadNetwork,
    route: &[usize],
) -> Result<(f64, f64), WorldError> {
    if route.is_empty() {
        return Err(WorldError::Config("empty route".into()));
    }
    let path = route_polyline(road, route);
    let proj = path.project([state.x, state.y]);
    let heading_error = wrap_angle(state.yaw - proj.tangent);
    Ok((proj.distance, heading_error))
}

pub(crate) fn route_polyline(road: &RoadNetwork, route: &[usize]) -> Polyline {
    let mut pts: Vec<Point> = Vec::new();
    for &idx in route {
        for &p in &road.lanes[idx].center.pts {
            if pts.last().map(|&q| geometry::dist(p, q) < 1e-9) != Some(true) {
                pts.push(p);
            }
        }
    }
    Polyline::new(pts)
}

impl World {
    /// Advance every vehicle one step and report events seen by the ego.
    pub fn step(&mut self, ego_cmd: &EgoCommand, dt: f64) -> Result<Events, WorldError> {
        assert!(dt > 0.0, "dt must be positive");
        self.ego = bicycle_step(&self.ego, ego_cmd, dt)?;

        let commands: Vec<EgoCommand> = self
            .traffic
            .iter()
            .map(|v| traffic_policy(v, self))
            .collect();
        for (vehicle, cmd) in self.traffic.iter_mut().zip(&commands) {
            vehicle.state = bicycle_step(&vehicle.state, cmd, dt)?;
        }
        // lane handoff once a vehicle nears the end of its current lane
        for i in 0..self.traffic.len() {
            let lane_idx = self.traffic[i].lane();
            let lane = &self.road.lanes[lane_idx];
            let proj = lane
                .center
                .project([self.traffic[i].state.x, self.traffic[i].state.y]);
            if proj.s > lane.center.length() - 1.0 && !lane.successors.is_empty() {
                let pick = self.rng.gen_range(0..lane.successors.len());
                let next = self.road.lanes[lane_idx].successors[pick];
                self.traffic[i].route.push(next);
                if self.traffic[i].route.len() > 32 {
                    self.traffic[i].route.remove(0);
                }
            }
        }
        self.tick += 1;
        Ok(self.events())
    }

    /// Events for the current state, without stepping.
    pub fn events(&self) -> Events {
        let ego_box = self.ego.corners();
        let collision = self
            .traffic
            .iter()
            .any(|v| obb_overlap(&ego_box, &v.state.corners()));

        let proj = self.route_path.project([self.ego.x, self.ego.y]);
        let heading_error = wrap_angle(self.ego.yaw - proj.tangent);
        let lateral_offset = proj.distance;

        let lane_idx = self.route_lane_at(proj.s);
        let limit = self.road.lanes[lane_idx].speed_limit;

        Events {
            collision,
            out_of_lane: lateral_offset > OUT_OF_LANE_THRESHOLD,
            lateral_offset,
            heading_error,
            speed_over_limit: (self.ego.speed - limit).max(0.0),
            route_complete: proj.s >= self.route_path.length() - 2.0,
        }
    }

    /// Speed limit that applies to the ego right now.
    pub fn ego_speed_limit(&self) -> f64 {
        let proj = self.route_path.project([self.ego.x, self.ego.y]);
        self.road.lanes[self.route_lane_at(proj.s)].speed_limit
    }

    fn route_lane_at(&self, s: f64) -> usize {
        let mut idx = 0;
        for (i, &start) in self.route_lane_starts.iter().enumerate() {
            if s >= start {
                idx = i;
            }
        }
        self.route[idx]
    }

    pub fn route_path(&self) -> &Polyline {
        &self.route_path
    }

    /// Rigidly transform every pose, lane, the route path, and the map
    /// bounds: rotate by `phi` about the origin, then translate. The bounds
    /// stay axis-aligned, so they are only exact for multiples of 90 degrees.
    pub fn apply_rigid_transform(&mut self, phi: f64, dx: f64, dy: f64) {
        let (sp, cp) = phi.sin_cos();
        let tp = |p: Point| -> Point {
            [cp * p[0] - sp * p[1] + dx, sp * p[0] + cp * p[1] + dy]
        };
        let tv = |v: &VehicleState| -> VehicleState {
            let p = tp([v.x, v.y]);
            VehicleState {
                x: p[0],
                y: p[1],
                yaw: wrap_angle(v.yaw + phi),
                ..*v
            }
        };
        self.ego = tv(&self.ego);
        for t in &mut self.traffic {
            t.state = tv(&t.state);
        }
        for lane in &mut self.road.lanes {
            let pts: Vec<Point> = lane.center.pts.iter().map(|&p| tp(p)).collect();
            lane.center = Polyline::new(pts);
        }
        self.route_path = Polyline::new(self.route_path.pts.iter().map(|&p| tp(p)).collect());
        let corners = [
            self.road.bounds_min,
            self.road.bounds_max,
            [self.road.bounds_min[0], self.road.bounds_max[1]],
            [self.road.bounds_max[0], self.road.bounds_min[1]],
        ];
        let mapped: Vec<Point> = corners.iter().map(|&p| tp(p)).collect();
        for k in 0..2 {
            self.road.bounds_min[k] = mapped.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            self.road.bounds_max[k] = mapped.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        }
    }

    /// tick, vehicle_id, x, y, yaw, speed rows; vehicle 0 is the ego.
    pub fn trace_rows(&self) -> Vec<(u64, usize, f64, f64, f64, f64)> {
        let mut rows = vec![(
            self.tick,
            0,
            self.ego.x,
            self.ego.y,
            self.ego.yaw,
            self.ego.speed,
        )];
        for (i, v) in self.traffic.iter().enumerate() {
            rows.push((self.tick, i + 1, v.state.x, v.state.y, v.state.yaw, v.state.speed));
        }
        rows
    }
}

/// Build a map, place the ego at its route start, and scatter `n_traffic`
/// vehicles over the lane network. Fully determined by the arguments.
pub fn spawn_scenario(map_id: MapId, n_traffic: usize, seed: u64) -> Result<World, WorldError> {
    let road = RoadNetwork::build(map_id);
    let route = maps::default_route(&road);
    let route_path = route_polyline(&road, &route);
    let mut route_lane_starts = Vec::with_capacity(route.len());
    let mut acc = 0.0;
    for &idx in &route {
        route_lane_starts.push(acc);
        acc += road.lanes[idx].center.length();
    }

    let ego = VehicleState::new(
        route_path.start()[0],
        route_path.start()[1],
        route_path.start_heading(),
        0.0,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // candidate slots along every lane at fixed spacing
    let spacing = VEHICLE_LENGTH + 4.0;
    let mut slots: Vec<(usize, f64)> = Vec::new();
    for (i, lane) in road.lanes.iter().enumerate() {
        let n = (lane.center.length() / spacing) as usize;
        for k in 0..n {
            slots.push((i, (k as f64 + 0.5) * spacing));
        }
    }
    if slots.len() < n_traffic {
        return Err(WorldError::Spawn {
            requested: n_traffic,
            placed: slots.len(),
        });
    }
    slots.shuffle(&mut rng);

    let mut traffic: Vec<TrafficVehicle> = Vec::with_capacity(n_traffic);
    let ego_box = ego.corners();
    for (lane_idx, s) in slots {
        if traffic.len() == n_traffic {
            break;
        }
        let lane = &road.lanes[lane_idx];
        let p = lane.center.point_at(s);
        let q = lane.center.point_at(s + 1.0);
        let yaw = (q[1] - p[1]).atan2(q[0] - p[0]);
        let state = VehicleState::new(p[0], p[1], yaw, 0.0);
        let candidate = state.corners();
        let clear = geometry::dist([state.x, state.y], [ego.x, ego.y]) > 12.0
            && !obb_overlap(&candidate, &ego_box)
            && traffic
                .iter()
                .all(|v| !obb_overlap(&candidate, &v.state.corners()));
        if clear {
            traffic.push(TrafficVehicle {
                state,
                route: vec![lane_idx],
            });
        }
    }
    if traffic.len() < n_traffic {
        return Err(WorldError::Spawn {
            requested: n_traffic,
            placed: traffic.len(),
        });
    }

    Ok(World {
        ego,
        traffic,
        road,
        route,
        tick: 0,
        rng,
        route_path,
        route_lane_starts,
    })
}
