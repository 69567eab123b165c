//! Procedural mini-maps, ~200 m square. Roads are two-way with right-hand
//! traffic; lane connectivity is recovered by matching lane endpoints.

use super::geometry::{dist, wrap_angle, Point, Polyline};
use super::{Lane, MapId, RoadNetwork};

const LANE_WIDTH: f64 = 3.5;
const SPEED_LIMIT: f64 = 8.0;
const HALF_OFFSET: f64 = LANE_WIDTH / 2.0;
/// Endpoint matching tolerance for successor discovery.
const JOIN_TOL: f64 = 4.5;

struct Builder {
    lanes: Vec<Vec<Point>>,
}

impl Builder {
    fn new() -> Self {
        Builder { lanes: Vec::new() }
    }

    /// Two-way straight road between nodes; adds one lane per direction,
    /// each offset half a lane width to its right.
    fn road(&mut self, a: Point, b: Point) {
        self.lanes.push(offset(&[a, b], HALF_OFFSET));
        self.lanes.push(offset(&[b, a], HALF_OFFSET));
    }

    /// One-way lane along the given points, no offset.
    fn one_way(&mut self, pts: Vec<Point>) {
        self.lanes.push(pts);
    }

    fn finish(self, map_id: MapId) -> RoadNetwork {
        let centers: Vec<Polyline> = self.lanes.into_iter().map(Polyline::new).collect();
        let mut lanes: Vec<Lane> = centers
            .iter()
            .map(|c| Lane {
                center: c.clone(),
                width: LANE_WIDTH,
                speed_limit: SPEED_LIMIT,
                successors: Vec::new(),
            })
            .collect();
        for i in 0..lanes.len() {
            let end = lanes[i].center.end();
            let out_heading = lanes[i].center.end_heading();
            let mut succ = Vec::new();
            for (j, lane) in lanes.iter().enumerate() {
                if i == j {
                    continue;
                }
                let gap = dist(end, lane.center.start());
                let turn = wrap_angle(lane.center.start_heading() - out_heading);
                if gap < JOIN_TOL && turn.cos() > -0.2 {
                    succ.push(j);
                }
            }
            lanes[i].successors = succ;
        }

        let mut bounds_min = [f64::INFINITY; 2];
        let mut bounds_max = [f64::NEG_INFINITY; 2];
        for lane in &lanes {
            for p in &lane.center.pts {
                for k in 0..2 {
                    bounds_min[k] = bounds_min[k].min(p[k] - 12.0);
                    bounds_max[k] = bounds_max[k].max(p[k] + 12.0);
                }
            }
        }
        RoadNetwork {
            lanes,
            map_id,
            bounds_min,
            bounds_max,
        }
    }
}

fn offset(pts: &[Point], d: f64) -> Vec<Point> {
    let mut out = Vec::with_capacity(pts.len());
    for (i, p) in pts.iter().enumerate() {
        let (a, b) = if i == 0 {
            (pts[0], pts[1])
        } else if i == pts.len() - 1 {
            (pts[pts.len() - 2], pts[pts.len() - 1])
        } else {
            (pts[i - 1], pts[i + 1])
        };
        let len = dist(a, b).max(1e-9);
        // right-hand normal of the local direction
        let nx = (b[1] - a[1]) / len;
        let ny = -(b[0] - a[0]) / len;
        out.push([p[0] + nx * d, p[1] + ny * d]);
    }
    out
}

fn arc(center: Point, r: f64, a0: f64, a1: f64, n: usize) -> Vec<Point> {
    (0..=n)
        .map(|k| {
            let a = a0 + (a1 - a0) * k as f64 / n as f64;
            [center[0] + r * a.cos(), center[1] + r * a.sin()]
        })
        .collect()
}

pub fn build(map_id: MapId) -> RoadNetwork {
    match map_id {
        MapId::Mini02 => build_mini02(),
        MapId::Mini03 => build_mini03(),
        MapId::Mini04 => build_mini04(),
    }
}

/// Rectangular loop with a middle road forming two T-junctions.
fn build_mini02() -> RoadNetwork {
    let mut b = Builder::new();
    let (x0, x1, xm) = (20.0, 180.0, 100.0);
    let (y0, y1) = (20.0, 140.0);
    // bottom and top edges, split at the middle road
    b.road([x0, y0], [xm, y0]);
    b.road([xm, y0], [x1, y0]);
    b.road([x0, y1], [xm, y1]);
    b.road([xm, y1], [x1, y1]);
    // sides and the middle road
    b.road([x0, y0], [x0, y1]);
    b.road([x1, y0], [x1, y1]);
    b.road([xm, y0], [xm, y1]);
    b.finish(MapId::Mini02)
}

/// Roundabout in the center, a four-way junction south of it, a perimeter
/// loop, and connecting straights.
fn build_mini03() -> RoadNetwork {
    use std::f64::consts::FRAC_PI_2 as Q;
    let mut b = Builder::new();
    let (x0, x1) = (20.0, 180.0);
    let (y0, y1) = (20.0, 180.0);
    let c: Point = [100.0, 100.0];
    let r = 18.0;

    // perimeter, split where the spokes and the y=60 road meet it
    b.road([x0, y0], [100.0, y0]);
    b.road([100.0, y0], [x1, y0]);
    b.road([x0, y1], [100.0, y1]);
    b.road([100.0, y1], [x1, y1]);
    b.road([x0, y0], [x0, 60.0]);
    b.road([x0, 60.0], [x0, 100.0]);
    b.road([x0, 100.0], [x0, y1]);
    b.road([x1, y0], [x1, 60.0]);
    b.road([x1, 60.0], [x1, 100.0]);
    b.road([x1, 100.0], [x1, y1]);

    // spokes to the roundabout; the south spoke crosses y=60 (four-way)
    b.road([100.0, y0], [100.0, 60.0]);
    b.road([100.0, 60.0], [100.0, c[1] - r]);
    b.road([100.0, c[1] + r], [100.0, y1]);
    b.road([x0, 100.0], [c[0] - r, 100.0]);
    b.road([c[0] + r, 100.0], [x1, 100.0]);

    // the east-west road through the four-way junction
    b.road([x0, 60.0], [100.0, 60.0]);
    b.road([100.0, 60.0], [x1, 60.0]);

    // counterclockwise ring, one arc per quadrant
    b.one_way(arc(c, r, -Q, 0.0, 8));
    b.one_way(arc(c, r, 0.0, Q, 8));
    b.one_way(arc(c, r, Q, 2.0 * Q, 8));
    b.one_way(arc(c, r, 2.0 * Q, 3.0 * Q, 8));
    b.finish(MapId::Mini03)
}

/// Two long straights joined into a perimeter loop, with a 3x3 block grid in
/// the top-right corner.
fn build_mini04() -> RoadNetwork {
    let mut b = Builder::new();
    let (x0, x1) = (20.0, 180.0);
    let (y0, y1) = (20.0, 180.0);
    let grid = [120.0, 150.0, 180.0];

    // long straights at the bottom and left, perimeter elsewhere split at
    // grid attachment points
    b.road([x0, y0], [x1, y0]);
    b.road([x0, y0], [x0, y1]);
    b.road([x1, y0], [x1, grid[0]]);
    b.road([x0, y1], [grid[0], y1]);
    // the top and right perimeter edges double as the outer grid roads
    for w in grid.windows(2) {
        b.road([x1, w[0]], [x1, w[1]]);
        b.road([w[0], y1], [w[1], y1]);
    }
    // inner grid roads
    for &gx in &grid[..2] {
        for w in grid.windows(2) {
            b.road([gx, w[0]], [gx, w[1]]);
        }
    }
    for &gy in &grid[..2] {
        for w in grid.windows(2) {
            b.road([w[0], gy], [w[1], gy]);
        }
    }
    b.finish(MapId::Mini04)
}

/// Deterministic ego route: follow successors from lane 0, preferring unseen
/// lanes, until the route is long enough.
pub fn default_route(road: &RoadNetwork) -> Vec<usize> {
    let mut route = vec![0usize];
    let mut total = road.lanes[0].center.length();
    while total < 350.0 {
        let cur = *route.last().unwrap();
        let next = road.lanes[cur]
            .successors
            .iter()
            .copied()
            .find(|n| !route.contains(n));
        match next {
            Some(n) => {
                total += road.lanes[n].center.length();
                route.push(n);
            }
            None => break,
        }
    }
    route
}
