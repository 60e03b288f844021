//! Planar and 3D oriented-box geometry: corner extraction, axis-aligned
//! enclosures, rotated IoU via convex polygon clipping, and 3D IoU.
//!
//! All boxes are metric and live in the sensor frame (x forward, y left,
//! z up); yaw is the heading angle about +z, in `(-pi, pi]`.

use serde::{Deserialize, Serialize};

/// Planar point, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }
}

/// Rectangle oriented by a heading angle. `l` runs along the heading,
/// `w` across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox2D {
    pub cx: f64,
    pub cy: f64,
    pub l: f64,
    pub w: f64,
    pub yaw: f64,
}

/// Axis-aligned rectangle; `h_bbox` is the extent along x, `w_bbox` along y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb2D {
    pub cx: f64,
    pub cy: f64,
    pub h_bbox: f64,
    pub w_bbox: f64,
}

/// Upright 3D box: center, size `(l, w, h)` and yaw about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl OrientedBox2D {
    pub fn new(cx: f64, cy: f64, l: f64, w: f64, yaw: f64) -> Self {
        OrientedBox2D { cx, cy, l, w, yaw }
    }

    pub fn area(&self) -> f64 {
        self.l * self.w
    }

    /// Counter-clockwise corners of the rotated rectangle.
    pub fn corners(&self) -> [Point2; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hx = c * self.l * 0.5;
        let hy = s * self.l * 0.5;
        let nx = -s * self.w * 0.5;
        let ny = c * self.w * 0.5;
        [
            Point2::new(self.cx + hx + nx, self.cy + hy + ny),
            Point2::new(self.cx - hx + nx, self.cy - hy + ny),
            Point2::new(self.cx - hx - nx, self.cy - hy - ny),
            Point2::new(self.cx + hx - nx, self.cy + hy - ny),
        ]
    }

    pub fn contains(&self, p: Point2) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let dx = p.x - self.cx;
        let dy = p.y - self.cy;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= self.l * 0.5 && v.abs() <= self.w * 0.5
    }

    /// Minimum axis-aligned rectangle enclosing the box:
    /// `h_bbox = l|cos yaw| + w|sin yaw|`, `w_bbox = l|sin yaw| + w|cos yaw|`.
    pub fn enclosing_aabb(&self) -> Aabb2D {
        let (s, c) = (self.yaw.sin().abs(), self.yaw.cos().abs());
        Aabb2D {
            cx: self.cx,
            cy: self.cy,
            h_bbox: self.l * c + self.w * s,
            w_bbox: self.l * s + self.w * c,
        }
    }
}

impl Aabb2D {
    pub fn new(cx: f64, cy: f64, h_bbox: f64, w_bbox: f64) -> Self {
        Aabb2D {
            cx,
            cy,
            h_bbox,
            w_bbox,
        }
    }

    /// View as an oriented box with zero heading.
    pub fn as_oriented(&self) -> OrientedBox2D {
        OrientedBox2D::new(self.cx, self.cy, self.h_bbox, self.w_bbox, 0.0)
    }

    pub fn area(&self) -> f64 {
        self.h_bbox * self.w_bbox
    }
}

impl Box3D {
    /// Planar footprint of the box.
    pub fn footprint(&self) -> OrientedBox2D {
        OrientedBox2D::new(self.cx, self.cy, self.l, self.w, self.yaw)
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn z_min(&self) -> f64 {
        self.cz - self.h * 0.5
    }

    pub fn z_max(&self) -> f64 {
        self.cz + self.h * 0.5
    }
}

/// Axis-aligned square, typically one BEV cell footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Square {
    pub min_x: f64,
    pub min_y: f64,
    pub side: f64,
}

impl Square {
    pub fn max_x(&self) -> f64 {
        self.min_x + self.side
    }

    pub fn max_y(&self) -> f64 {
        self.min_y + self.side
    }

    pub fn vertices(&self) -> [Point2; 4] {
        [
            Point2::new(self.min_x, self.min_y),
            Point2::new(self.max_x(), self.min_y),
            Point2::new(self.max_x(), self.max_y()),
            Point2::new(self.min_x, self.max_y()),
        ]
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.min_x + self.side * 0.5, self.min_y + self.side * 0.5)
    }

    /// Closed containment test.
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min_x && p.x <= self.max_x() && p.y >= self.min_y && p.y <= self.max_y()
    }

    /// Nearest point of the (closed) square to `p`.
    pub fn nearest_to(&self, p: Point2) -> Point2 {
        Point2::new(
            p.x.clamp(self.min_x, self.max_x()),
            p.y.clamp(self.min_y, self.max_y()),
        )
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(std::f64::consts::TAU);
    if x > std::f64::consts::PI {
        x -= std::f64::consts::TAU;
    }
    x
}

/// Clipped polygons below this area are treated as empty (sliver control).
const DEGENERATE_AREA: f64 = 1e-12;

fn polygon_area(pts: &[Point2]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..pts.len() {
        let a = pts[i];
        let b = pts[(i + 1) % pts.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    acc.abs() * 0.5
}

/// Sutherland-Hodgman clip of `subject` against the half-plane left of the
/// directed edge `a -> b`.
fn clip_edge(subject: &[Point2], a: Point2, b: Point2, out: &mut Vec<Point2>) {
    out.clear();
    let ex = b.x - a.x;
    let ey = b.y - a.y;
    let side = |p: Point2| ex * (p.y - a.y) - ey * (p.x - a.x);
    for i in 0..subject.len() {
        let cur = subject[i];
        let next = subject[(i + 1) % subject.len()];
        let sc = side(cur);
        let sn = side(next);
        if sc >= 0.0 {
            out.push(cur);
        }
        if (sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0) {
            let t = sc / (sc - sn);
            out.push(Point2::new(
                cur.x + t * (next.x - cur.x),
                cur.y + t * (next.y - cur.y),
            ));
        }
    }
}

/// Area of the intersection of two oriented rectangles.
pub fn intersection_area(a: &OrientedBox2D, b: &OrientedBox2D) -> f64 {
    let clip = b.corners();
    let mut poly: Vec<Point2> = a.corners().to_vec();
    let mut scratch = Vec::with_capacity(8);
    for i in 0..4 {
        if poly.is_empty() {
            return 0.0;
        }
        clip_edge(&poly, clip[i], clip[(i + 1) % 4], &mut scratch);
        std::mem::swap(&mut poly, &mut scratch);
    }
    let area = polygon_area(&poly);
    if area < DEGENERATE_AREA {
        0.0
    } else {
        area
    }
}

/// Intersection over union of two oriented rectangles.
pub fn rotated_iou(a: &OrientedBox2D, b: &OrientedBox2D) -> f64 {
    let inter = intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// 3D IoU of two upright boxes: rotated planar overlap times vertical overlap.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let planar = intersection_area(&a.footprint(), &b.footprint());
    if planar <= 0.0 {
        return 0.0;
    }
    let vz = (a.z_max().min(b.z_max()) - a.z_min().max(b.z_min())).max(0.0);
    let inter = planar * vz;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// True when two oriented rectangles overlap with positive area.
pub fn rects_overlap(a: &OrientedBox2D, b: &OrientedBox2D) -> bool {
    intersection_area(a, b) > 0.0
}
