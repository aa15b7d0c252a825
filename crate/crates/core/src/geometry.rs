//! Planar domain description and ray tracing through building footprints.
//!
//! Buildings are simple polygons (convex or not) with a macroscopic total
//! cross-section. A ray from a source to a detector is split into building
//! segments and air segments; the optical depth of the ray is the sum of
//! `length * sigma_t` over those segments.

use crate::error::{Error, Result};

/// Intersection parameters closer than this are merged.
pub const PARAM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Point at parameter `t` on the segment `self -> other`.
    pub fn lerp(&self, other: &Point2, t: f64) -> Point2 {
        Point2::new(
            self.x + t * (other.x - self.x),
            self.y + t * (other.y - self.y),
        )
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

fn cross(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    ax * by - ay * bx
}

/// Axis-aligned bounding box used to reject rays early.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Aabb {
    min: Point2,
    max: Point2,
}

impl Aabb {
    fn of(points: &[Point2]) -> Self {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Self { min, max }
    }

    fn overlaps_segment(&self, p0: &Point2, p1: &Point2) -> bool {
        p0.x.max(p1.x) >= self.min.x
            && p0.x.min(p1.x) <= self.max.x
            && p0.y.max(p1.y) >= self.min.y
            && p0.y.min(p1.y) <= self.max.y
    }
}

/// A building footprint with its macroscopic total cross-section (1/m).
#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    vertices: Vec<Point2>,
    sigma_t: f64,
    aabb: Aabb,
}

impl Building {
    /// Validates the footprint: at least three finite vertices, nonzero area,
    /// no self-intersection and a non-negative cross-section.
    pub fn new(vertices: Vec<Point2>, sigma_t: f64) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "building needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("non-finite building vertex".into()));
        }
        if !(sigma_t >= 0.0) || !sigma_t.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sigma_t must be finite and >= 0, got {sigma_t}"
            )));
        }
        if signed_area(&vertices).abs() <= 0.0 {
            return Err(Error::InvalidInput("building has zero area".into()));
        }
        if !is_simple(&vertices) {
            return Err(Error::InvalidInput("building polygon self-intersects".into()));
        }
        let aabb = Aabb::of(&vertices);
        Ok(Self {
            vertices,
            sigma_t,
            aabb,
        })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn sigma_t(&self) -> f64 {
        self.sigma_t
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    pub fn with_sigma_t(&self, sigma_t: f64) -> Result<Self> {
        Building::new(self.vertices.clone(), sigma_t)
    }

    /// Even-odd containment test with the half-open crossing convention.
    pub fn contains(&self, p: &Point2) -> bool {
        point_in_polygon(p, &self.vertices)
    }

    fn edges(&self) -> impl Iterator<Item = (&Point2, &Point2)> {
        let n = self.vertices.len();
        (0..n).map(move |i| (&self.vertices[i], &self.vertices[(i + 1) % n]))
    }
}

/// Shoelace area, positive for counter-clockwise vertex order.
pub fn signed_area(vertices: &[Point2]) -> f64 {
    let n = vertices.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = &vertices[i];
        let b = &vertices[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Even-odd rule. Points exactly on an edge are classified by the half-open
/// convention (edges include their lower endpoint in y).
pub fn point_in_polygon(p: &Point2, vertices: &[Point2]) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let vi = &vertices[i];
        let vj = &vertices[j];
        if (vi.y > p.y) != (vj.y > p.y) {
            let x_cross = (vj.x - vi.x) * (p.y - vi.y) / (vj.y - vi.y) + vi.x;
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn orientation(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    cross(b.x - a.x, b.y - a.y, c.x - a.x, c.y - a.y)
}

fn on_segment(a: &Point2, b: &Point2, p: &Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect(a0: &Point2, a1: &Point2, b0: &Point2, b1: &Point2) -> bool {
    let d1 = orientation(b0, b1, a0);
    let d2 = orientation(b0, b1, a1);
    let d3 = orientation(a0, a1, b0);
    let d4 = orientation(a0, a1, b1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(b0, b1, a0))
        || (d2 == 0.0 && on_segment(b0, b1, a1))
        || (d3 == 0.0 && on_segment(a0, a1, b0))
        || (d4 == 0.0 && on_segment(a0, a1, b1))
}

/// Proper crossing only: the segments cross at a single interior point of both.
fn segments_cross_properly(a0: &Point2, a1: &Point2, b0: &Point2, b1: &Point2) -> bool {
    let d1 = orientation(b0, b1, a0);
    let d2 = orientation(b0, b1, a1);
    let d3 = orientation(a0, a1, b0);
    let d4 = orientation(a0, a1, b1);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn is_simple(vertices: &[Point2]) -> bool {
    let n = vertices.len();
    for i in 0..n {
        let a0 = &vertices[i];
        let a1 = &vertices[(i + 1) % n];
        if a0 == a1 {
            return false;
        }
        for j in (i + 1)..n {
            // adjacent edges share a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let b0 = &vertices[j];
            let b1 = &vertices[(j + 1) % n];
            if segments_intersect(a0, a1, b0, b1) {
                return false;
            }
        }
    }
    true
}

/// A point just inside `b`, next to the midpoint of each edge.
fn interior_probes(b: &Building) -> Vec<Point2> {
    let ccw = signed_area(&b.vertices) > 0.0;
    let scale = (b.aabb.max.x - b.aabb.min.x).max(b.aabb.max.y - b.aabb.min.y);
    let eps = 1e-6 * scale.max(1e-9);
    b.edges()
        .map(|(p, q)| {
            let mx = 0.5 * (p.x + q.x);
            let my = 0.5 * (p.y + q.y);
            let (dx, dy) = (q.x - p.x, q.y - p.y);
            let len = dx.hypot(dy);
            // inward normal is to the left of a counter-clockwise edge
            let (nx, ny) = if ccw { (-dy, dx) } else { (dy, -dx) };
            Point2::new(mx + eps * nx / len, my + eps * ny / len)
        })
        .collect()
}

/// True when the interiors of two footprints overlap.
pub fn interiors_overlap(a: &Building, b: &Building) -> bool {
    if a.aabb.max.x < b.aabb.min.x
        || b.aabb.max.x < a.aabb.min.x
        || a.aabb.max.y < b.aabb.min.y
        || b.aabb.max.y < a.aabb.min.y
    {
        return false;
    }
    for (a0, a1) in a.edges() {
        for (b0, b1) in b.edges() {
            if segments_cross_properly(a0, a1, b0, b1) {
                return true;
            }
        }
    }
    interior_probes(a).iter().any(|p| b.contains(p))
        || interior_probes(b).iter().any(|p| a.contains(p))
}

/// Axis-aligned domain `[0, width] x [0, height]` in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainBounds {
    pub width: f64,
    pub height: f64,
}

impl DomainBounds {
    pub fn contains(&self, p: &Point2) -> bool {
        let tol = PARAM_TOLERANCE * self.width.max(self.height);
        p.x >= -tol && p.x <= self.width + tol && p.y >= -tol && p.y <= self.height + tol
    }
}

/// Buildings inside a rectangular domain; everything else is air.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainGeometry {
    bounds: DomainBounds,
    buildings: Vec<Building>,
    air_sigma_t: f64,
}

impl DomainGeometry {
    pub fn new(bounds: DomainBounds, buildings: Vec<Building>, air_sigma_t: f64) -> Result<Self> {
        if !(bounds.width > 0.0 && bounds.height > 0.0)
            || !bounds.width.is_finite()
            || !bounds.height.is_finite()
        {
            return Err(Error::InvalidInput(format!(
                "domain bounds must be positive, got {} x {}",
                bounds.width, bounds.height
            )));
        }
        if !(air_sigma_t >= 0.0) || !air_sigma_t.is_finite() {
            return Err(Error::InvalidInput(format!(
                "air sigma_t must be finite and >= 0, got {air_sigma_t}"
            )));
        }
        for (i, b) in buildings.iter().enumerate() {
            if let Some(v) = b.vertices.iter().find(|v| !bounds.contains(v)) {
                return Err(Error::InvalidInput(format!(
                    "building {i} vertex ({}, {}) outside domain",
                    v.x, v.y
                )));
            }
        }
        for i in 0..buildings.len() {
            for j in (i + 1)..buildings.len() {
                if interiors_overlap(&buildings[i], &buildings[j]) {
                    return Err(Error::InvalidInput(format!(
                        "buildings {i} and {j} overlap"
                    )));
                }
            }
        }
        Ok(Self {
            bounds,
            buildings,
            air_sigma_t,
        })
    }

    pub fn free_space(bounds: DomainBounds, air_sigma_t: f64) -> Result<Self> {
        Self::new(bounds, Vec::new(), air_sigma_t)
    }

    pub fn bounds(&self) -> DomainBounds {
        self.bounds
    }

    pub fn buildings(&self) -> &[Building] {
        &self.buildings
    }

    pub fn air_sigma_t(&self) -> f64 {
        self.air_sigma_t
    }

    /// Index of the building containing `p`, if any.
    pub fn building_at(&self, p: &Point2) -> Option<usize> {
        self.buildings.iter().position(|b| b.contains(p))
    }
}

/// Ordered list of `(length, sigma_t)` pieces along a ray.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegments {
    pub segments: Vec<(f64, f64)>,
    pub total_length: f64,
}

/// Parametric intervals `[t_in, t_out]` of `p0 -> p1` lying inside `b`.
///
/// All crossings of the segment with the polygon boundary are collected,
/// merged within [`PARAM_TOLERANCE`], and each sub-interval is classified by
/// its midpoint. This pairs crossings by parity, so non-convex footprints and
/// rays grazing a vertex are handled consistently.
pub fn segment_polygon_clip(p0: &Point2, p1: &Point2, b: &Building) -> Result<Vec<(f64, f64)>> {
    if p0 == p1 {
        return Err(Error::InvalidInput("degenerate segment (p0 == p1)".into()));
    }
    if !b.aabb.overlaps_segment(p0, p1) {
        return Ok(Vec::new());
    }
    let dx = p1.x - p0.x;
    let dy = p1.y - p0.y;
    let len2 = dx * dx + dy * dy;

    let mut params: Vec<f64> = vec![0.0, 1.0];
    for (q0, q1) in b.edges() {
        let ex = q1.x - q0.x;
        let ey = q1.y - q0.y;
        let wx = q0.x - p0.x;
        let wy = q0.y - p0.y;
        let denom = cross(dx, dy, ex, ey);
        let scale = (len2 * (ex * ex + ey * ey)).sqrt();
        if denom.abs() <= 1e-14 * scale {
            // parallel; only collinear overlaps contribute breakpoints
            if cross(wx, wy, dx, dy).abs() <= 1e-12 * len2.sqrt() * (wx.hypot(wy) + 1.0) {
                for q in [q0, q1] {
                    let t = ((q.x - p0.x) * dx + (q.y - p0.y) * dy) / len2;
                    if t > 0.0 && t < 1.0 {
                        params.push(t);
                    }
                }
            }
            continue;
        }
        let t = cross(wx, wy, ex, ey) / denom;
        let s = cross(wx, wy, dx, dy) / denom;
        if (-PARAM_TOLERANCE..=1.0 + PARAM_TOLERANCE).contains(&s) && t > 0.0 && t < 1.0 {
            params.push(t);
        }
    }
    params.sort_by(|a, c| a.total_cmp(c));
    let mut merged: Vec<f64> = Vec::with_capacity(params.len());
    for t in params {
        match merged.last() {
            Some(&last) if t - last <= PARAM_TOLERANCE => {}
            _ => merged.push(t),
        }
    }
    if let Some(last) = merged.last_mut() {
        if *last < 1.0 && 1.0 - *last <= PARAM_TOLERANCE {
            *last = 1.0;
        }
    }

    let mut out: Vec<(f64, f64)> = Vec::new();
    for w in merged.windows(2) {
        let (a, c) = (w[0], w[1]);
        let mid = p0.lerp(p1, 0.5 * (a + c));
        if b.contains(&mid) {
            match out.last_mut() {
                Some(last) if (last.1 - a).abs() <= PARAM_TOLERANCE => last.1 = c,
                _ => out.push((a, c)),
            }
        }
    }
    Ok(out)
}

/// Splits `src -> dst` into building and air segments.
pub fn trace_path(geom: &DomainGeometry, src: &Point2, dst: &Point2) -> Result<PathSegments> {
    if src == dst {
        return Err(Error::InvalidInput("source and destination coincide".into()));
    }
    for p in [src, dst] {
        if !p.is_finite() || !geom.bounds.contains(p) {
            return Err(Error::InvalidInput(format!(
                "point ({}, {}) outside domain",
                p.x, p.y
            )));
        }
    }
    let total_length = src.distance(dst);

    let mut intervals: Vec<(f64, f64, f64)> = Vec::new();
    for b in &geom.buildings {
        for (t0, t1) in segment_polygon_clip(src, dst, b)? {
            intervals.push((t0, t1, b.sigma_t));
        }
    }
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut segments = Vec::with_capacity(2 * intervals.len() + 1);
    let mut cursor = 0.0;
    for (t0, t1, sigma) in intervals {
        if t0 > cursor {
            segments.push(((t0 - cursor) * total_length, geom.air_sigma_t));
        }
        let start = t0.max(cursor);
        if t1 > start {
            segments.push(((t1 - start) * total_length, sigma));
        }
        cursor = cursor.max(t1);
    }
    if cursor < 1.0 {
        segments.push(((1.0 - cursor) * total_length, geom.air_sigma_t));
    }
    Ok(PathSegments {
        segments,
        total_length,
    })
}

/// Sum of `length * sigma_t` over the path.
pub fn optical_depth(path: &PathSegments) -> f64 {
    path.segments.iter().map(|(l, s)| l * s).sum()
}
