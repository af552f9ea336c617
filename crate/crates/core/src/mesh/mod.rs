//! Conforming triangulations of the unit disk with a marked active arc.
//!
//! The builder starts from a concentric-ring triangulation, grades it toward
//! the two endpoints of the active arc by longest-edge bisection and then
//! applies uniform red refinement. Boundary vertices always sit exactly on
//! the unit circle, so the boundary polygon is inscribed.

mod io;
mod refine;

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};

pub use io::{read_mesh, write_mesh};

/// Angular extent of the default active arc.
pub const DEFAULT_ARC: (f64, f64) = (PI, 1.5 * PI);

const ARC_MATCH_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Polar angle in `[0, 2π)`.
    pub fn angle(self) -> f64 {
        let a = self.y.atan2(self.x);
        if a < 0.0 {
            a + TAU
        } else {
            a
        }
    }

    pub fn midpoint(self, other: Point2) -> Point2 {
        Point2::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    pub(crate) fn on_unit_circle(theta: f64) -> Point2 {
        // Snap quarter angles so that (−1,0) and (0,−1) are exact.
        let quarters = theta / FRAC_PI_2;
        if (quarters - quarters.round()).abs() < 1e-14 {
            match (quarters.round() as i64).rem_euclid(4) {
                0 => return Point2::new(1.0, 0.0),
                1 => return Point2::new(0.0, 1.0),
                2 => return Point2::new(-1.0, 0.0),
                _ => return Point2::new(0.0, -1.0),
            }
        }
        Point2::new(theta.cos(), theta.sin())
    }

    pub(crate) fn projected_to_circle(self) -> Point2 {
        let r = self.norm();
        Point2::new(self.x / r, self.y / r)
    }
}

/// Twice the signed area of the triangle `(a, b, c)`.
pub fn signed_area2(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Mesh construction parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSpec {
    /// Number of concentric rings of the base triangulation.
    pub n_base: usize,
    pub refine_levels: usize,
    /// Target edge length at the arc endpoints relative to `h_max`.
    pub corner_grading: f64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self {
            n_base: 10,
            refine_levels: 1,
            corner_grading: 0.25,
        }
    }
}

impl MeshSpec {
    pub fn build(&self) -> Result<Mesh> {
        build_disk_mesh(self.n_base, self.refine_levels, self.corner_grading)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point2>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// Closed counter-clockwise cycle; segment `i` ends where `i + 1` starts.
    pub boundary_segments: Vec<[usize; 2]>,
    pub gamma2_flags: Vec<bool>,
    /// Start and end vertex of the flagged chain, in counter-clockwise order.
    pub gamma2_endpoint_vertices: [usize; 2],
    pub h_max: f64,
    pub refine_level: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub min_angle: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub n_triangles: usize,
    pub n_boundary_segments: usize,
    pub disk_area_defect: f64,
}

/// Builds the graded disk mesh and marks the default active arc `[π, 3π/2]`.
pub fn build_disk_mesh(n_base: usize, refine_levels: usize, corner_grading: f64) -> Result<Mesh> {
    if n_base < 8 {
        return Err(Error::Parameter(format!(
            "n_base must be >= 8, got {n_base}"
        )));
    }
    if !(corner_grading > 0.0 && corner_grading <= 1.0) {
        return Err(Error::Parameter(format!(
            "corner_grading must lie in (0, 1], got {corner_grading}"
        )));
    }
    if refine_levels > 8 {
        return Err(Error::Parameter(format!(
            "refine_levels = {refine_levels} would exceed memory; use at most 8"
        )));
    }

    let (vertices, triangles) = ring_triangulation(n_base);
    let mut refiner = refine::Refiner::new(vertices, triangles);
    let corners = [
        Point2::on_unit_circle(DEFAULT_ARC.0),
        Point2::on_unit_circle(DEFAULT_ARC.1),
    ];
    if corner_grading < 1.0 {
        let h0 = refiner.h_max();
        refiner.grade_toward(&corners, h0, corner_grading, CORNER_RADIUS, 2.0 * h0);
    }
    for _ in 0..refine_levels {
        refiner.red_refine();
    }
    let (vertices, triangles) = refiner.into_parts();

    let mut mesh = Mesh {
        h_max: 0.0,
        boundary_segments: boundary_cycle(&vertices, &triangles)?,
        vertices,
        triangles,
        gamma2_flags: Vec::new(),
        gamma2_endpoint_vertices: [0, 0],
        refine_level: refine_levels,
    };
    mesh.h_max = mesh
        .triangles
        .iter()
        .map(|t| mesh.diameter(t))
        .fold(0.0, f64::max);
    mesh.validate()?;
    mark_active_boundary(mesh, DEFAULT_ARC.0, DEFAULT_ARC.1)
}

/// Radius around each arc endpoint inside which edges are fully graded.
pub const CORNER_RADIUS: f64 = 0.1;

/// Concentric rings at radii `k / n`; ring `k` holds `6k` vertices, the outer
/// ring is rounded up to a multiple of four so quarter angles are vertices.
fn ring_triangulation(n: usize) -> (Vec<Point2>, Vec<[usize; 3]>) {
    let mut vertices = vec![Point2::new(0.0, 0.0)];
    let mut rings: Vec<Vec<usize>> = vec![vec![0]];
    for k in 1..=n {
        let count = if k == n {
            6 * k + (4 - (6 * k) % 4) % 4
        } else {
            6 * k
        };
        let offset = if k == n || k % 2 == 0 {
            0.0
        } else {
            PI / count as f64
        };
        let r = k as f64 / n as f64;
        let ring = (0..count)
            .map(|j| {
                let theta = offset + TAU * j as f64 / count as f64;
                let p = if k == n {
                    Point2::on_unit_circle(theta)
                } else {
                    Point2::new(r * theta.cos(), r * theta.sin())
                };
                vertices.push(p);
                vertices.len() - 1
            })
            .collect();
        rings.push(ring);
    }

    let mut triangles = Vec::new();
    for k in 1..=n {
        let outer = &rings[k];
        if k == 1 {
            for j in 0..outer.len() {
                triangles.push([0, outer[j], outer[(j + 1) % outer.len()]]);
            }
            continue;
        }
        stitch_rings(&vertices, &rings[k - 1], outer, &mut triangles);
    }
    (vertices, triangles)
}

/// Triangulates the annular strip between two angularly sorted rings.
fn stitch_rings(vertices: &[Point2], inner: &[usize], outer: &[usize], out: &mut Vec<[usize; 3]>) {
    let start = vertices[outer[0]].angle();
    let rel = |v: usize| (vertices[v].angle() - start).rem_euclid(TAU);
    let mut inner: Vec<usize> = inner.to_vec();
    inner.sort_by(|&a, &b| rel(a).total_cmp(&rel(b)));
    let (na, nb) = (inner.len(), outer.len());
    let unwrapped = |ring: &[usize], i: usize| {
        let n = ring.len();
        rel(ring[i % n]) + if i >= n { TAU } else { 0.0 }
    };
    let (mut i, mut j) = (0, 0);
    while i < na || j < nb {
        let advance_inner = if i == na {
            false
        } else if j == nb {
            true
        } else {
            unwrapped(&inner, i + 1) < unwrapped(outer, j + 1)
        };
        if advance_inner {
            out.push([inner[i % na], outer[j % nb], inner[(i + 1) % na]]);
            i += 1;
        } else {
            out.push([inner[i % na], outer[j % nb], outer[(j + 1) % nb]]);
            j += 1;
        }
    }
}

/// Orders the boundary edges into a single counter-clockwise cycle starting at (1, 0).
fn boundary_cycle(vertices: &[Point2], triangles: &[[usize; 3]]) -> Result<Vec<[usize; 2]>> {
    use std::collections::HashMap;
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let mut next: HashMap<usize, usize> = HashMap::new();
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if count[&(a.min(b), a.max(b))] == 1 && next.insert(a, b).is_some() {
                return Err(Error::Mesh(format!(
                    "boundary vertex {a} starts two boundary edges"
                )));
            }
        }
    }
    let start = (0..vertices.len())
        .find(|&v| next.contains_key(&v) && vertices[v] == Point2::new(1.0, 0.0))
        .ok_or_else(|| Error::Mesh("no boundary vertex at (1, 0)".into()))?;
    let mut cycle = Vec::with_capacity(next.len());
    let mut v = start;
    loop {
        let w = next[&v];
        cycle.push([v, w]);
        v = w;
        if v == start {
            break;
        }
        if cycle.len() > next.len() {
            return Err(Error::Mesh("boundary edges do not close".into()));
        }
    }
    if cycle.len() != next.len() {
        return Err(Error::Mesh(format!(
            "boundary splits into several cycles ({} of {} edges reached)",
            cycle.len(),
            next.len()
        )));
    }
    Ok(cycle)
}

/// Flags boundary segments whose midpoint angle lies in `[theta_start, theta_end]`.
pub fn mark_active_boundary(mut mesh: Mesh, theta_start: f64, theta_end: f64) -> Result<Mesh> {
    if !(0.0 <= theta_start && theta_start < theta_end && theta_end <= TAU) {
        return Err(Error::Marking(format!(
            "arc [{theta_start}, {theta_end}] must satisfy 0 <= start < end <= 2π"
        )));
    }
    let find_vertex = |theta: f64| {
        let target = Point2::on_unit_circle(theta);
        mesh.boundary_segments
            .iter()
            .map(|s| s[0])
            .find(|&v| mesh.vertices[v].dist(target) <= ARC_MATCH_TOL)
            .ok_or_else(|| {
                Error::Marking(format!("no boundary vertex at arc endpoint θ = {theta}"))
            })
    };
    let first = find_vertex(theta_start)?;
    let last = find_vertex(theta_end)?;

    mesh.gamma2_flags = mesh
        .boundary_segments
        .iter()
        .map(|s| {
            let theta = mesh.vertices[s[0]].midpoint(mesh.vertices[s[1]]).angle();
            (theta_start..=theta_end).contains(&theta)
        })
        .collect();

    let n = mesh.boundary_segments.len();
    let begin = mesh
        .boundary_segments
        .iter()
        .position(|s| s[0] == first)
        .expect("endpoint is a segment start");
    let mut k = begin;
    let mut chain = 0;
    while mesh.gamma2_flags[k] {
        chain += 1;
        if mesh.boundary_segments[k][1] == last {
            break;
        }
        k = (k + 1) % n;
        if k == begin {
            break;
        }
    }
    let flagged = mesh.gamma2_flags.iter().filter(|&&f| f).count();
    if chain == 0 || chain != flagged || mesh.boundary_segments[k][1] != last {
        return Err(Error::Marking(format!(
            "flagged segments ({flagged}) do not form one chain between the arc endpoints"
        )));
    }
    mesh.gamma2_endpoint_vertices = [first, last];
    Ok(mesh)
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_points(&self, t: &[usize; 3]) -> [Point2; 3] {
        [
            self.vertices[t[0]],
            self.vertices[t[1]],
            self.vertices[t[2]],
        ]
    }

    pub fn area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        0.5 * signed_area2(a, b, c)
    }

    /// Longest edge of a triangle.
    pub fn diameter(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        a.dist(b).max(b.dist(c)).max(c.dist(a))
    }

    pub fn segment_length(&self, s: &[usize; 2]) -> f64 {
        self.vertices[s[0]].dist(self.vertices[s[1]])
    }

    pub fn polygon_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.area(t)).sum()
    }

    pub fn perimeter(&self) -> f64 {
        self.boundary_segments
            .iter()
            .map(|s| self.segment_length(s))
            .sum()
    }

    pub fn active_length(&self) -> f64 {
        self.boundary_segments
            .iter()
            .zip(&self.gamma2_flags)
            .filter(|(_, &f)| f)
            .map(|(s, _)| self.segment_length(s))
            .sum()
    }

    /// Vertices of the flagged chain in counter-clockwise order, endpoints included.
    pub fn active_chain(&self) -> Vec<usize> {
        let n = self.boundary_segments.len();
        let begin = self
            .boundary_segments
            .iter()
            .position(|s| s[0] == self.gamma2_endpoint_vertices[0])
            .expect("marked mesh");
        let mut chain = vec![self.boundary_segments[begin][0]];
        let mut k = begin;
        while self.gamma2_flags[k] {
            chain.push(self.boundary_segments[k][1]);
            k = (k + 1) % n;
            if chain.len() > n {
                break;
            }
        }
        chain
    }

    /// Longest edge having any point within `radius` of `center`.
    pub fn max_edge_near(&self, center: Point2, radius: f64) -> f64 {
        let mut best: f64 = 0.0;
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (self.vertices[t[k]], self.vertices[t[(k + 1) % 3]]);
                if point_segment_distance(center, a, b) <= radius {
                    best = best.max(a.dist(b));
                }
            }
        }
        best
    }

    /// Checks the structural invariants; used after construction and after reading dumps.
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= self.vertices.len()) {
                return Err(Error::Mesh(format!(
                    "triangle {i} references a missing vertex"
                )));
            }
            let area = self.area(t);
            if !(area > 0.0) {
                return Err(Error::Mesh(format!(
                    "triangle {i} has non-positive area {area:e}"
                )));
            }
        }
        for v in self.vertices.iter() {
            if !(v.x.is_finite() && v.y.is_finite()) {
                return Err(Error::Mesh("non-finite vertex coordinate".into()));
            }
        }
        let n = self.boundary_segments.len();
        for k in 0..n {
            if self.boundary_segments[k][1] != self.boundary_segments[(k + 1) % n][0] {
                return Err(Error::Mesh(format!(
                    "boundary cycle broken after segment {k}"
                )));
            }
            let p = self.vertices[self.boundary_segments[k][0]];
            if (p.norm() - 1.0).abs() > 1e-14 {
                return Err(Error::Mesh(format!(
                    "boundary vertex {p:?} is off the unit circle"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let s = if len2 > 0.0 {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.dist(Point2::new(a.x + s * dx, a.y + s * dy))
}

pub fn mesh_quality(mesh: &Mesh) -> QualityReport {
    let mut min_angle = f64::INFINITY;
    let mut h_min = f64::INFINITY;
    let mut h_max: f64 = 0.0;
    for t in &mesh.triangles {
        let p = mesh.triangle_points(t);
        for k in 0..3 {
            let (a, b, c) = (p[k], p[(k + 1) % 3], p[(k + 2) % 3]);
            let (u, v) = ((b.x - a.x, b.y - a.y), (c.x - a.x, c.y - a.y));
            let cos = (u.0 * v.0 + u.1 * v.1) / (a.dist(b) * a.dist(c));
            min_angle = min_angle.min(cos.clamp(-1.0, 1.0).acos().to_degrees());
        }
        let d = mesh.diameter(t);
        h_min = h_min.min(d);
        h_max = h_max.max(d);
    }
    QualityReport {
        min_angle,
        h_max,
        h_min,
        n_triangles: mesh.triangles.len(),
        n_boundary_segments: mesh.boundary_segments.len(),
        disk_area_defect: PI - mesh.polygon_area(),
    }
}
