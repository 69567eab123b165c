//! Ego-centric observation rasterizers: a 32x32x1 lidar occupancy grid and a
//! 32x32x3 semantic birdeye image rendered from the same world tick.

use std::path::Path;
use std::sync::Arc;

use crate::neural::Frame;
use crate::worldsim::geometry::ray_segment;
use crate::worldsim::World;

/// Grid side length in cells.
pub const GRID: usize = 32;
/// Number of lidar rays over 360 degrees.
pub const N_RAYS: usize = 64;
/// Metric half-extent of both images, meters; 2 m per cell.
pub const RANGE: f64 = 32.0;
/// Half-width of the rasterized route strip, meters.
const ROUTE_STRIP_HALF_WIDTH: f64 = 1.0;

/// 32x32 occupancy of lidar returns, row 0 farthest ahead of the ego.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarImage {
    pub grid: [[f64; GRID]; GRID],
}

/// 32x32x3 semantic image: channel 0 drivable area, channel 1 surrounding
/// objects, channel 2 the ego route.
#[derive(Debug, Clone, PartialEq)]
pub struct BEVImage {
    pub grid: [[[f64; 3]; GRID]; GRID],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub lidar: LidarImage,
    pub bev: BEVImage,
}

impl Observation {
    pub fn render(world: &World) -> Self {
        Observation {
            lidar: render_lidar(world),
            bev: render_bev(world),
        }
    }

    /// Sparse network input: active cell indices, birdeye channel-major.
    pub fn to_frame(&self) -> Arc<Frame> {
        let mut lidar = Vec::new();
        for (r, row) in self.lidar.grid.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v > 0.0 {
                    lidar.push((r * GRID + c) as u16);
                }
            }
        }
        let mut bev = Vec::new();
        for ch in 0..3 {
            for (r, row) in self.bev.grid.iter().enumerate() {
                for (c, cell) in row.iter().enumerate() {
                    if cell[ch] > 0.0 {
                        bev.push((ch * GRID * GRID + r * GRID + c) as u16);
                    }
                }
            }
        }
        Arc::new(Frame::Grids { lidar, bev })
    }

    /// One grayscale PNG per channel, for eyeballing what the agent sees.
    pub fn dump_debug_images(&self, dir: &Path, tag: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let save = |name: String, get: &dyn Fn(usize, usize) -> f64| -> std::io::Result<()> {
            let mut img = image::GrayImage::new(GRID as u32, GRID as u32);
            for r in 0..GRID {
                for c in 0..GRID {
                    img.put_pixel(c as u32, r as u32, image::Luma([(get(r, c) * 255.0) as u8]));
                }
            }
            img.save(dir.join(name))
                .map_err(|e| std::io::Error::other(e.to_string()))
        };
        save(format!("{tag}_lidar.png"), &|r, c| self.lidar.grid[r][c])?;
        for ch in 0..3 {
            save(format!("{tag}_bev{ch}.png"), &|r, c| self.bev.grid[r][c][ch])?;
        }
        Ok(())
    }
}

/// World point -> (row, col) in the ego frame, heading up. None if outside.
fn ego_cell(world: &World, p: [f64; 2]) -> Option<(usize, usize)> {
    let (sy, cy) = world.ego.yaw.sin_cos();
    let dx = p[0] - world.ego.x;
    let dy = p[1] - world.ego.y;
    let forward = dx * cy + dy * sy;
    let right = dx * sy - dy * cy;
    let cell = 2.0 * RANGE / GRID as f64;
    let row = ((RANGE - forward) / cell).floor();
    let col = ((RANGE + right) / cell).floor();
    if (0.0..GRID as f64).contains(&row) && (0.0..GRID as f64).contains(&col) {
        Some((row as usize, col as usize))
    } else {
        None
    }
}

/// Center of an ego-frame cell in world coordinates.
fn cell_center(world: &World, row: usize, col: usize) -> [f64; 2] {
    let cell = 2.0 * RANGE / GRID as f64;
    let forward = RANGE - (row as f64 + 0.5) * cell;
    let right = (col as f64 + 0.5) * cell - RANGE;
    let (sy, cy) = world.ego.yaw.sin_cos();
    [
        world.ego.x + forward * cy + right * sy,
        world.ego.y + forward * sy - right * cy,
    ]
}

/// Cast 64 rays from the ego center; each first hit on a vehicle rectangle or
/// the map boundary marks its cell.
pub fn render_lidar(world: &World) -> LidarImage {
    let mut grid = [[0.0; GRID]; GRID];
    let origin = [world.ego.x, world.ego.y];

    // boundary rectangle of the map
    let lo = world.road.bounds_min;
    let hi = world.road.bounds_max;
    let walls = [
        ([lo[0], lo[1]], [hi[0], lo[1]]),
        ([hi[0], lo[1]], [hi[0], hi[1]]),
        ([hi[0], hi[1]], [lo[0], hi[1]]),
        ([lo[0], hi[1]], [lo[0], lo[1]]),
    ];

    for k in 0..N_RAYS {
        let angle = world.ego.yaw + std::f64::consts::TAU * k as f64 / N_RAYS as f64;
        let dir = [angle.cos(), angle.sin()];
        let mut nearest = f64::INFINITY;
        for v in &world.traffic {
            let c = v.state.corners();
            for i in 0..4 {
                if let Some(t) = ray_segment(origin, dir, c[i], c[(i + 1) % 4]) {
                    nearest = nearest.min(t);
                }
            }
        }
        for (a, b) in walls {
            if let Some(t) = ray_segment(origin, dir, a, b) {
                nearest = nearest.min(t);
            }
        }
        if nearest <= RANGE {
            let hit = [origin[0] + nearest * dir[0], origin[1] + nearest * dir[1]];
            if let Some((r, c)) = ego_cell(world, hit) {
                grid[r][c] = 1.0;
            }
        }
    }
    LidarImage { grid }
}

/// Rasterize lane surfaces, non-ego vehicle footprints, and the forward route
/// strip into the three birdeye channels.
pub fn render_bev(world: &World) -> BEVImage {
    let mut grid = [[[0.0; 3]; GRID]; GRID];

    // forward part of the route, from the ego's current projection
    let path = world.route_path();
    let s0 = path.project([world.ego.x, world.ego.y]).s;

    // pre-filter vehicles that can reach the frame at all
    let nearby: Vec<_> = world
        .traffic
        .iter()
        .filter(|v| {
            let d = crate::worldsim::geometry::dist([v.state.x, v.state.y], [world.ego.x, world.ego.y]);
            d < RANGE * 1.5 + v.state.length
        })
        .map(|v| v.state.corners())
        .collect();

    for row in 0..GRID {
        for col in 0..GRID {
            let p = cell_center(world, row, col);
            for lane in &world.road.lanes {
                if lane.center.project(p).distance <= lane.width / 2.0 {
                    grid[row][col][0] = 1.0;
                    break;
                }
            }
            for corners in &nearby {
                if point_in_quad(p, corners) {
                    grid[row][col][1] = 1.0;
                    break;
                }
            }
            let proj = path.project(p);
            if proj.distance <= ROUTE_STRIP_HALF_WIDTH && proj.s >= s0 - 1.0 {
                grid[row][col][2] = 1.0;
            }
        }
    }
    BEVImage { grid }
}

fn point_in_quad(p: [f64; 2], quad: &[[f64; 2]; 4]) -> bool {
    for i in 0..4 {
        let a = quad[i];
        let b = quad[(i + 1) % 4];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross < 0.0 {
            return false;
        }
    }
    true
}
