use std::collections::HashMap;

use super::{point_segment_distance, signed_area2, Point2};

type Edge = (usize, usize);

fn key(a: usize, b: usize) -> Edge {
    (a.min(b), a.max(b))
}

/// Mutable triangulation supporting longest-edge (Rivara) bisection and
/// uniform red refinement. Midpoints of boundary edges are projected onto
/// the unit circle.
pub(super) struct Refiner {
    vertices: Vec<Point2>,
    triangles: Vec<[usize; 3]>,
    edges: HashMap<Edge, Vec<usize>>,
}

impl Refiner {
    pub fn new(vertices: Vec<Point2>, triangles: Vec<[usize; 3]>) -> Self {
        let mut r = Self {
            vertices,
            triangles,
            edges: HashMap::new(),
        };
        r.rebuild_edges();
        r
    }

    pub fn into_parts(self) -> (Vec<Point2>, Vec<[usize; 3]>) {
        (self.vertices, self.triangles)
    }

    fn rebuild_edges(&mut self) {
        self.edges.clear();
        for (i, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                self.edges
                    .entry(key(t[k], t[(k + 1) % 3]))
                    .or_default()
                    .push(i);
            }
        }
    }

    fn edge_len(&self, e: Edge) -> f64 {
        self.vertices[e.0].dist(self.vertices[e.1])
    }

    pub fn h_max(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                (0..3)
                    .map(|k| self.edge_len(key(t[k], t[(k + 1) % 3])))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Longest edge with a global tie-break on vertex indices so that two
    /// neighbours always agree on which of equal edges is longest.
    fn longest_edge(&self, t: usize) -> Edge {
        let tri = self.triangles[t];
        (0..3)
            .map(|k| key(tri[k], tri[(k + 1) % 3]))
            .max_by(|&a, &b| {
                self.edge_len(a)
                    .total_cmp(&self.edge_len(b))
                    .then(a.cmp(&b))
            })
            .expect("three edges")
    }

    fn is_boundary(&self, e: Edge) -> bool {
        self.edges.get(&e).map_or(0, Vec::len) == 1
    }

    fn new_midpoint(&mut self, e: Edge) -> usize {
        let m = self.vertices[e.0].midpoint(self.vertices[e.1]);
        let m = if self.is_boundary(e) {
            m.projected_to_circle()
        } else {
            m
        };
        self.vertices.push(m);
        self.vertices.len() - 1
    }

    /// Splits edge `e` in every triangle containing it.
    fn split_edge(&mut self, e: Edge) {
        let m = self.new_midpoint(e);
        let owners = self.edges.remove(&e).unwrap_or_default();
        for t in owners {
            let tri = self.triangles[t];
            let k = (0..3)
                .find(|&k| key(tri[k], tri[(k + 1) % 3]) == e)
                .expect("owner contains edge");
            let (x, y, z) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
            let fresh = self.triangles.len();
            self.triangles[t] = [x, m, z];
            self.triangles.push([m, y, z]);
            self.edges.entry(key(x, m)).or_default().push(t);
            self.edges.entry(key(m, y)).or_default().push(fresh);
            let mz = self.edges.entry(key(m, z)).or_default();
            mz.push(t);
            mz.push(fresh);
            let yz = self.edges.get_mut(&key(y, z)).expect("edge present");
            for owner in yz.iter_mut() {
                if *owner == t {
                    *owner = fresh;
                }
            }
        }
    }

    /// Longest-edge propagation path bisection of triangle `t`.
    fn bisect(&mut self, t: usize) {
        loop {
            let e = self.longest_edge(t);
            let neighbour = self.edges[&e].iter().copied().find(|&o| o != t);
            match neighbour {
                None => return self.split_edge(e),
                Some(n) if self.longest_edge(n) == e => return self.split_edge(e),
                Some(n) => self.bisect(n),
            }
        }
    }

    fn distance_to_triangle(&self, p: Point2, t: usize) -> f64 {
        let tri = self.triangles[t];
        let [a, b, c] = [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ];
        if signed_area2(a, b, p) >= 0.0
            && signed_area2(b, c, p) >= 0.0
            && signed_area2(c, a, p) >= 0.0
        {
            return 0.0;
        }
        point_segment_distance(p, a, b)
            .min(point_segment_distance(p, b, c))
            .min(point_segment_distance(p, c, a))
    }

    /// Refines until every triangle within `radius` of a corner has edges no
    /// longer than `ratio * h0`, with a linear ramp back to `h0` over `ramp`.
    pub fn grade_toward(
        &mut self,
        corners: &[Point2],
        h0: f64,
        ratio: f64,
        radius: f64,
        ramp: f64,
    ) {
        let target = |d: f64| {
            let s = ((d - radius) / ramp).clamp(0.0, 1.0);
            h0 * (ratio + (1.0 - ratio) * s)
        };
        loop {
            let mut changed = false;
            let mut t = 0;
            while t < self.triangles.len() {
                let d = corners
                    .iter()
                    .map(|&c| self.distance_to_triangle(c, t))
                    .fold(f64::INFINITY, f64::min);
                if self.edge_len(self.longest_edge(t)) > target(d) * (1.0 + 1e-12) {
                    self.bisect(t);
                    changed = true;
                } else {
                    t += 1;
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Splits every triangle into four similar children.
    pub fn red_refine(&mut self) {
        let mut midpoint: HashMap<Edge, usize> = HashMap::new();
        let old = std::mem::take(&mut self.triangles);
        let mut refined = Vec::with_capacity(4 * old.len());
        for tri in &old {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let e = key(tri[k], tri[(k + 1) % 3]);
                mid[k] = match midpoint.get(&e) {
                    Some(&m) => m,
                    None => {
                        let m = self.new_midpoint(e);
                        midpoint.insert(e, m);
                        m
                    }
                };
            }
            let [a, b, c] = *tri;
            let [ab, bc, ca] = mid;
            refined.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        self.triangles = refined;
        self.rebuild_edges();
    }
}
