//! Rotated-rectangle geometry in the bird's-eye-view plane and its vertical
//! extension to 3D IoU.
//!
//! Boxes live in the ego frame: `x` forward, `y` left, `z` up. Yaw rotates
//! counter-clockwise about `z`, with yaw 0 putting the length axis along `+x`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-plane inclusion tolerance used while clipping, in meters.
pub const CLIP_EPS: f64 = 1e-9;

/// Vertices closer than this (meters) are merged after clipping.
pub const DEDUP_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box field `{field}` is not finite ({value})")]
    NonFinite { field: &'static str, value: f64 },
    #[error("box dimension `{field}` must be positive, got {value}")]
    NonPositiveDimension { field: &'static str, value: f64 },
}

/// Which overlap measure to use when comparing two boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IouKind {
    /// Footprint overlap in the bird's-eye view.
    Bev,
    /// Volumetric overlap.
    ThreeD,
}

/// Wraps an angle into `[-π, π)`.
///
/// Angles already inside the range are returned untouched, so the function is
/// idempotent bit-for-bit.
pub fn normalize_yaw(yaw: f64) -> f64 {
    if (-PI..PI).contains(&yaw) {
        return yaw;
    }
    let wrapped = (yaw + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else if wrapped < -PI {
        -PI
    } else {
        wrapped
    }
}

/// Oriented 3D bounding box.
///
/// Construction validates every field and normalizes yaw, so any `Box3D`
/// value in hand satisfies the invariants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    cx: f64,
    cy: f64,
    cz: f64,
    length: f64,
    width: f64,
    height: f64,
    yaw: f64,
}

impl Box3D {
    pub fn new(
        cx: f64,
        cy: f64,
        cz: f64,
        length: f64,
        width: f64,
        height: f64,
        yaw: f64,
    ) -> Result<Self, GeometryError> {
        let fields = [
            ("cx", cx),
            ("cy", cy),
            ("cz", cz),
            ("length", length),
            ("width", width),
            ("height", height),
            ("yaw", yaw),
        ];
        for (field, value) in fields {
            if !value.is_finite() {
                return Err(GeometryError::NonFinite { field, value });
            }
        }
        for (field, value) in [("length", length), ("width", width), ("height", height)] {
            if value <= 0.0 {
                return Err(GeometryError::NonPositiveDimension { field, value });
            }
        }
        Ok(Self {
            cx,
            cy,
            cz,
            length,
            width,
            height,
            yaw: normalize_yaw(yaw),
        })
    }

    /// Builds a box from `[cx, cy, cz, length, width, height, yaw]`.
    pub fn from_array(v: [f64; 7]) -> Result<Self, GeometryError> {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6])
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.cx,
            self.cy,
            self.cz,
            self.length,
            self.width,
            self.height,
            self.yaw,
        ]
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn cz(&self) -> f64 {
        self.cz
    }
    pub fn length(&self) -> f64 {
        self.length
    }
    pub fn width(&self) -> f64 {
        self.width
    }
    pub fn height(&self) -> f64 {
        self.height
    }
    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }

    pub fn bottom(&self) -> f64 {
        self.cz - self.height / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cz + self.height / 2.0
    }

    pub fn footprint_area(&self) -> f64 {
        self.length * self.width
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    /// Same box moved to a new center.
    pub fn with_center(&self, cx: f64, cy: f64, cz: f64) -> Result<Self, GeometryError> {
        Self::new(cx, cy, cz, self.length, self.width, self.height, self.yaw)
    }
}

/// Convex polygon with counter-clockwise vertices. An empty vertex list means
/// "no overlap".
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon2D {
    vertices: Vec<[f64; 2]>,
}

impl Polygon2D {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Wraps a vertex list, merging near-duplicate vertices and collapsing
    /// anything with fewer than three distinct vertices to the empty polygon.
    ///
    /// The caller is responsible for convexity and counter-clockwise order.
    pub fn from_vertices(vertices: Vec<[f64; 2]>) -> Self {
        let mut out: Vec<[f64; 2]> = Vec::with_capacity(vertices.len());
        for v in vertices {
            if out.last().is_some_and(|last| close(*last, v)) {
                continue;
            }
            out.push(v);
        }
        while out.len() > 1 && close(out[0], out[out.len() - 1]) {
            out.pop();
        }
        if out.len() < 3 {
            out.clear();
        }
        Self { vertices: out }
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Signed shoelace area; positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        // Shift to the first vertex to limit cancellation far from the origin.
        let [ox, oy] = self.vertices[0];
        let mut twice = 0.0;
        for i in 1..n - 1 {
            let [ax, ay] = self.vertices[i];
            let [bx, by] = self.vertices[i + 1];
            twice += (ax - ox) * (by - oy) - (bx - ox) * (ay - oy);
        }
        twice / 2.0
    }
}

fn close(a: [f64; 2], b: [f64; 2]) -> bool {
    (a[0] - b[0]).abs() <= DEDUP_EPS && (a[1] - b[1]).abs() <= DEDUP_EPS
}

/// The four footprint corners of `b`, counter-clockwise, starting at the
/// front-left corner.
pub fn box_to_bev_polygon(b: &Box3D) -> Polygon2D {
    let (sin, cos) = b.yaw.sin_cos();
    let hl = b.length / 2.0;
    let hw = b.width / 2.0;
    let corners =
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(u, v)| [b.cx + u * cos - v * sin, b.cy + u * sin + v * cos]);
    Polygon2D {
        vertices: corners.to_vec(),
    }
}

/// Area of a convex polygon; 0 for empty or degenerate input.
pub fn polygon_area(p: &Polygon2D) -> f64 {
    p.signed_area().abs()
}

/// Intersection of two convex counter-clockwise polygons by successive
/// half-plane clipping of `subject` against each edge of `clip`.
pub fn convex_clip(subject: &Polygon2D, clip: &Polygon2D) -> Polygon2D {
    if subject.is_empty() || clip.is_empty() {
        return Polygon2D::empty();
    }
    let mut current: Vec<[f64; 2]> = subject.vertices.clone();
    let n = clip.vertices.len();
    for i in 0..n {
        if current.is_empty() {
            break;
        }
        let a = clip.vertices[i];
        let b = clip.vertices[(i + 1) % n];
        let ex = b[0] - a[0];
        let ey = b[1] - a[1];
        let len = ex.hypot(ey);
        if len <= DEDUP_EPS {
            continue;
        }
        // Signed distance to the left of edge a->b.
        let dist = |p: [f64; 2]| (ex * (p[1] - a[1]) - ey * (p[0] - a[0])) / len;

        let input = std::mem::take(&mut current);
        let m = input.len();
        for j in 0..m {
            let p = input[j];
            let q = input[(j + 1) % m];
            let dp = dist(p);
            let dq = dist(q);
            let p_in = dp >= -CLIP_EPS;
            let q_in = dq >= -CLIP_EPS;
            match (p_in, q_in) {
                (true, true) => current.push(q),
                (true, false) => current.push(lerp(p, q, dp / (dp - dq))),
                (false, true) => {
                    current.push(lerp(p, q, dp / (dp - dq)));
                    current.push(q);
                }
                (false, false) => {}
            }
        }
    }
    Polygon2D::from_vertices(current)
}

fn lerp(p: [f64; 2], q: [f64; 2], t: f64) -> [f64; 2] {
    let t = t.clamp(0.0, 1.0);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area shared by the two footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let pa = box_to_bev_polygon(a);
    let pb = box_to_bev_polygon(b);
    let area = polygon_area(&convex_clip(&pa, &pb));
    area.min(a.footprint_area()).min(b.footprint_area())
}

/// Length of the shared vertical extent.
pub fn vertical_overlap(a: &Box3D, b: &Box3D) -> f64 {
    (a.top().min(b.top()) - a.bottom().max(b.bottom())).max(0.0)
}

/// Bird's-eye-view IoU of the two box footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = bev_intersection_area(a, b);
    let union = a.footprint_area() + b.footprint_area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU: footprint intersection times vertical overlap over the
/// union volume.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let dz = vertical_overlap(a, b);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn iou(kind: IouKind, a: &Box3D, b: &Box3D) -> f64 {
    match kind {
        IouKind::Bev => iou_bev(a, b),
        IouKind::ThreeD => iou_3d(a, b),
    }
}
