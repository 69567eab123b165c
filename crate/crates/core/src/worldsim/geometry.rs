//! Small 2D helpers shared by the simulator and the rasterizers.

pub type Point = [f64; 2];

/// Normalize an angle to (-pi, pi].
pub fn wrap_angle(mut a: f64) -> f64 {
    use std::f64::consts::PI;
    while a > PI {
        a -= 2.0 * PI;
    }
    while a <= -PI {
        a += 2.0 * PI;
    }
    a
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// A sampled centerline with cached cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub pts: Vec<Point>,
    cum: Vec<f64>,
}

/// Nearest-point projection result onto a polyline.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// Arc length of the foot point from the start.
    pub s: f64,
    /// Unsigned distance from the query point to the foot point.
    pub distance: f64,
    /// Signed lateral offset: positive when the point lies left of the tangent.
    pub lateral: f64,
    /// Heading of the segment carrying the foot point.
    pub tangent: f64,
}

impl Polyline {
    pub fn new(pts: Vec<Point>) -> Self {
        assert!(pts.len() >= 2, "polyline needs at least two points");
        let mut cum = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in pts.windows(2) {
            acc += dist(w[0], w[1]);
            cum.push(acc);
        }
        Polyline { pts, cum }
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn start(&self) -> Point {
        self.pts[0]
    }

    pub fn end(&self) -> Point {
        *self.pts.last().unwrap()
    }

    pub fn start_heading(&self) -> f64 {
        let a = self.pts[0];
        let b = self.pts[1];
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    pub fn end_heading(&self) -> f64 {
        let n = self.pts.len();
        let a = self.pts[n - 2];
        let b = self.pts[n - 1];
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    /// Point at arc length `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Point {
        if s <= 0.0 {
            return self.pts[0];
        }
        if s >= self.length() {
            return self.end();
        }
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let seg_len = self.cum[i + 1] - self.cum[i];
        let t = if seg_len > 0.0 {
            (s - self.cum[i]) / seg_len
        } else {
            0.0
        };
        let a = self.pts[i];
        let b = self.pts[i + 1];
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    pub fn project(&self, p: Point) -> Projection {
        let mut best = Projection {
            s: 0.0,
            distance: f64::INFINITY,
            lateral: 0.0,
            tangent: 0.0,
        };
        for i in 0..self.pts.len() - 1 {
            let a = self.pts[i];
            let b = self.pts[i + 1];
            let abx = b[0] - a[0];
            let aby = b[1] - a[1];
            let len2 = abx * abx + aby * aby;
            if len2 == 0.0 {
                continue;
            }
            let t = (((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / len2).clamp(0.0, 1.0);
            let foot = [a[0] + t * abx, a[1] + t * aby];
            let d = dist(p, foot);
            if d < best.distance {
                let seg_len = len2.sqrt();
                // cross > 0 means left of the tangent
                let cross = abx * (p[1] - a[1]) - aby * (p[0] - a[0]);
                best = Projection {
                    s: self.cum[i] + t * seg_len,
                    distance: d,
                    lateral: cross / seg_len,
                    tangent: aby.atan2(abx),
                };
            }
        }
        best
    }
}

/// Corners of an oriented rectangle centered at (x, y).
pub fn obb_corners(x: f64, y: f64, yaw: f64, length: f64, width: f64) -> [Point; 4] {
    let (s, c) = yaw.sin_cos();
    let hl = length / 2.0;
    let hw = width / 2.0;
    let mut out = [[0.0; 2]; 4];
    for (k, (dx, dy)) in [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)].iter().enumerate() {
        out[k] = [x + c * dx - s * dy, y + s * dx + c * dy];
    }
    out
}

/// Separating-axis overlap test for two convex quads.
pub fn obb_overlap(a: &[Point; 4], b: &[Point; 4]) -> bool {
    for quad in [a, b] {
        for i in 0..4 {
            let p = quad[i];
            let q = quad[(i + 1) % 4];
            // outward normal of edge pq
            let axis = [q[1] - p[1], p[0] - q[0]];
            let proj = |pts: &[Point; 4]| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for v in pts {
                    let d = v[0] * axis[0] + v[1] * axis[1];
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
                (lo, hi)
            };
            let (alo, ahi) = proj(a);
            let (blo, bhi) = proj(b);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
    }
    true
}

/// Distance along a ray (origin, direction) to a segment, if it hits.
pub fn ray_segment(origin: Point, dir: Point, a: Point, b: Point) -> Option<f64> {
    let v1 = [origin[0] - a[0], origin[1] - a[1]];
    let v2 = [b[0] - a[0], b[1] - a[1]];
    let denom = v2[1] * dir[0] - v2[0] * dir[1];
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (v2[0] * v1[1] - v2[1] * v1[0]) / denom; // along the ray
    let u = (dir[0] * v1[1] - dir[1] * v1[0]) / denom; // along the segment
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}
