//! P1 finite elements on the disk and on its boundary polygon.
//!
//! Surface operators are assembled segment by segment: on a straight segment
//! the tangential gradient of an affine function is its directional
//! derivative, so the Laplace–Beltrami stiffness reduces to the 1D P1
//! stiffness along each segment.

mod block;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::{CsrMatrix, TripletBuilder};

pub use block::{
    assemble_block_operator, model_by_name, model_names, BlockLayout, BlockOperator, Field,
    FullSystem, ReducedSystem, SystemModel,
};

/// Degree-of-freedom bookkeeping for the three node sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    pub n_volume: usize,
    pub n_gamma: usize,
    pub n_gamma2: usize,
    /// Γ node → mesh vertex; Γ node `i` starts boundary segment `i`.
    pub gamma_to_volume: Vec<usize>,
    /// Γ₂ node → Γ node, ordered along the arc.
    pub gamma2_to_gamma: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let gamma_to_volume: Vec<usize> = mesh.boundary_segments.iter().map(|s| s[0]).collect();
        let index: HashMap<usize, usize> = gamma_to_volume
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, i))
            .collect();
        if index.len() != gamma_to_volume.len() {
            return Err(Error::Assembly(
                "boundary vertex repeated in the boundary cycle".into(),
            ));
        }
        if mesh.gamma2_flags.len() != mesh.boundary_segments.len() {
            return Err(Error::Assembly(
                "gamma2 flags do not match the boundary cycle".into(),
            ));
        }
        let gamma2_to_gamma = mesh
            .active_chain()
            .iter()
            .map(|v| {
                index.get(v).copied().ok_or_else(|| {
                    Error::Assembly(format!("active-arc vertex {v} is not on the boundary"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if gamma2_to_gamma.len() < 2 {
            return Err(Error::Assembly("active arc has no segments".into()));
        }
        Ok(Self {
            n_volume: mesh.n_vertices(),
            n_gamma: gamma_to_volume.len(),
            n_gamma2: gamma2_to_gamma.len(),
            gamma_to_volume,
            gamma2_to_gamma,
        })
    }

    /// Γ₂ node → mesh vertex.
    pub fn gamma2_to_volume(&self) -> Vec<usize> {
        self.gamma2_to_gamma
            .iter()
            .map(|&g| self.gamma_to_volume[g])
            .collect()
    }

    /// Trace operator `T_Γ` (n_gamma × n_volume).
    pub fn trace_gamma(&self) -> CsrMatrix {
        CsrMatrix::selection(&self.gamma_to_volume, self.n_volume)
    }

    /// Restriction `T₂` from Γ to Γ₂ (n_gamma2 × n_gamma).
    pub fn restrict_gamma2(&self) -> CsrMatrix {
        CsrMatrix::selection(&self.gamma2_to_gamma, self.n_gamma)
    }

    fn check_against(&self, mesh: &Mesh) -> Result<()> {
        if self.n_volume != mesh.n_vertices() || self.n_gamma != mesh.boundary_segments.len() {
            return Err(Error::Assembly(
                "dof map does not belong to this mesh".into(),
            ));
        }
        Ok(())
    }
}

/// Consistent (exact P1) or row-sum lumped mass matrices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassKind {
    #[default]
    Consistent,
    Lumped,
}

impl MassKind {
    fn apply(self, m: CsrMatrix) -> CsrMatrix {
        match self {
            MassKind::Consistent => m,
            MassKind::Lumped => m.lumped(),
        }
    }
}

/// Which boundary curve a surface operator lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Gamma,
    Gamma2,
}

/// P1 gradients of the barycentric basis on a triangle, and its area.
pub(crate) fn p1_gradients(p: [crate::mesh::Point2; 3]) -> Result<([[f64; 2]; 3], f64)> {
    let det = (p[1].x - p[0].x) * (p[2].y - p[0].y) - (p[2].x - p[0].x) * (p[1].y - p[0].y);
    if !(det > 0.0) {
        return Err(Error::Assembly(format!(
            "degenerate or inverted triangle (2·area = {det:e})"
        )));
    }
    let mut g = [[0.0; 2]; 3];
    for k in 0..3 {
        let (b, c) = (p[(k + 1) % 3], p[(k + 2) % 3]);
        g[k] = [(b.y - c.y) / det, (c.x - b.x) / det];
    }
    Ok((g, 0.5 * det))
}

/// Consistent mass `M_Ω` and stiffness `K_Ω` on the triangulation.
pub fn assemble_volume_matrices(mesh: &Mesh) -> Result<(CsrMatrix, CsrMatrix)> {
    let n = mesh.n_vertices();
    let mut mass = TripletBuilder::new(n, n);
    let mut stiff = TripletBuilder::new(n, n);
    for t in &mesh.triangles {
        let (g, area) = p1_gradients(mesh.triangle_points(t))?;
        for a in 0..3 {
            for b in 0..3 {
                let m = if a == b { area / 6.0 } else { area / 12.0 };
                mass.push(t[a], t[b], m);
                stiff.push(t[a], t[b], area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]));
            }
        }
    }
    Ok((mass.build(), stiff.build()))
}

fn segment_element(len: f64) -> Result<([[f64; 2]; 2], [[f64; 2]; 2])> {
    if !(len > 0.0) {
        return Err(Error::Assembly(format!(
            "boundary segment of length {len:e}"
        )));
    }
    let m = [[len / 3.0, len / 6.0], [len / 6.0, len / 3.0]];
    let k = [[1.0 / len, -1.0 / len], [-1.0 / len, 1.0 / len]];
    Ok((m, k))
}

/// 1D P1 mass and stiffness over the cyclic Γ chain or the open Γ₂ chain.
/// The open chain carries natural (zero-flux) end conditions.
pub fn assemble_surface_matrices(
    mesh: &Mesh,
    dofs: &DofMap,
    which: Surface,
) -> Result<(CsrMatrix, CsrMatrix)> {
    dofs.check_against(mesh)?;
    let segments: Vec<([usize; 2], f64)> = match which {
        Surface::Gamma => (0..dofs.n_gamma)
            .map(|i| {
                (
                    [i, (i + 1) % dofs.n_gamma],
                    mesh.segment_length(&mesh.boundary_segments[i]),
                )
            })
            .collect(),
        Surface::Gamma2 => {
            let verts = dofs.gamma2_to_volume();
            (0..dofs.n_gamma2.saturating_sub(1))
                .map(|j| {
                    (
                        [j, j + 1],
                        mesh.vertices[verts[j]].dist(mesh.vertices[verts[j + 1]]),
                    )
                })
                .collect()
        }
    };
    if segments.is_empty() {
        return Err(Error::Assembly("empty boundary chain".into()));
    }
    let n = match which {
        Surface::Gamma => dofs.n_gamma,
        Surface::Gamma2 => dofs.n_gamma2,
    };
    let mut mass = TripletBuilder::new(n, n);
    let mut stiff = TripletBuilder::new(n, n);
    for (nodes, len) in segments {
        let (m, k) = segment_element(len)?;
        for a in 0..2 {
            for b in 0..2 {
                mass.push(nodes[a], nodes[b], m[a][b]);
                stiff.push(nodes[a], nodes[b], k[a][b]);
            }
        }
    }
    Ok((mass.build(), stiff.build()))
}

/// Surface mass on Γ restricted to the flagged segments (`χ_Γ₂` piecewise constant).
pub fn assemble_flagged_surface_mass(mesh: &Mesh, dofs: &DofMap) -> Result<CsrMatrix> {
    dofs.check_against(mesh)?;
    let n = dofs.n_gamma;
    let mut mass = TripletBuilder::new(n, n);
    for (i, s) in mesh.boundary_segments.iter().enumerate() {
        if !mesh.gamma2_flags[i] {
            continue;
        }
        let (m, _) = segment_element(mesh.segment_length(s))?;
        let nodes = [i, (i + 1) % n];
        for a in 0..2 {
            for b in 0..2 {
                mass.push(nodes[a], nodes[b], m[a][b]);
            }
        }
    }
    Ok(mass.build())
}

/// Rectangular volume-trace × surface coupling `B = Tᵀ M_surface`
/// (n_volume × n_surface), built from the same surface mass so that
/// coupling terms cancel exactly against the surface blocks.
pub fn assemble_trace_coupling(mesh: &Mesh, dofs: &DofMap, which: Surface) -> Result<CsrMatrix> {
    let (m, _) = assemble_surface_matrices(mesh, dofs, which)?;
    Ok(trace_coupling_from_mass(dofs, which, &m))
}

pub(crate) fn trace_coupling_from_mass(
    dofs: &DofMap,
    which: Surface,
    surface_mass: &CsrMatrix,
) -> CsrMatrix {
    let map = match which {
        Surface::Gamma => dofs.gamma_to_volume.clone(),
        Surface::Gamma2 => dofs.gamma2_to_volume(),
    };
    let trace = CsrMatrix::selection(&map, dofs.n_volume);
    trace.transpose().matmul(surface_mass)
}

/// All mesh-dependent matrices, assembled once and shared by every model.
#[derive(Debug, Clone)]
pub struct FemBlocks {
    pub dofs: DofMap,
    pub mass_kind: MassKind,
    pub mass_volume: CsrMatrix,
    pub stiff_volume: CsrMatrix,
    pub mass_gamma: CsrMatrix,
    pub stiff_gamma: CsrMatrix,
    /// `M_Γ|χ₂`: Γ mass over flagged segments only.
    pub mass_gamma_flagged: CsrMatrix,
    pub mass_gamma2: CsrMatrix,
    pub stiff_gamma2: CsrMatrix,
    /// `T_Γᵀ M_Γ`, n_volume × n_gamma.
    pub coupling_gamma: CsrMatrix,
    /// `(T₂ T_Γ)ᵀ M_Γ₂`, n_volume × n_gamma2.
    pub coupling_gamma2: CsrMatrix,
}

impl FemBlocks {
    pub fn assemble(mesh: &Mesh, mass_kind: MassKind) -> Result<Self> {
        let dofs = DofMap::new(mesh)?;
        let (mass_volume, stiff_volume) = assemble_volume_matrices(mesh)?;
        let (mass_gamma, stiff_gamma) = assemble_surface_matrices(mesh, &dofs, Surface::Gamma)?;
        let (mass_gamma2, stiff_gamma2) = assemble_surface_matrices(mesh, &dofs, Surface::Gamma2)?;
        let mass_gamma_flagged = assemble_flagged_surface_mass(mesh, &dofs)?;

        let mass_volume = mass_kind.apply(mass_volume);
        let mass_gamma = mass_kind.apply(mass_gamma);
        let mass_gamma2 = mass_kind.apply(mass_gamma2);
        let mass_gamma_flagged = mass_kind.apply(mass_gamma_flagged);
        Ok(Self {
            coupling_gamma: trace_coupling_from_mass(&dofs, Surface::Gamma, &mass_gamma),
            coupling_gamma2: trace_coupling_from_mass(&dofs, Surface::Gamma2, &mass_gamma2),
            dofs,
            mass_kind,
            mass_volume,
            stiff_volume,
            mass_gamma,
            stiff_gamma,
            mass_gamma_flagged,
            mass_gamma2,
            stiff_gamma2,
        })
    }

    /// `T_Γᵀ M_Γ T_Γ`: the Robin mass acting on the volume trace.
    pub fn trace_mass_gamma(&self) -> CsrMatrix {
        self.coupling_gamma.matmul(&self.dofs.trace_gamma())
    }

    /// `T_Γᵀ M_Γ|χ₂`: flagged Γ mass tested against the volume trace.
    pub fn coupling_gamma_flagged(&self) -> CsrMatrix {
        self.dofs
            .trace_gamma()
            .transpose()
            .matmul(&self.mass_gamma_flagged)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_disk_mesh, Point2};

    fn unit_right_triangle() -> Mesh {
        Mesh {
            vertices: vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(0.0, 1.0),
            ],
            triangles: vec![[0, 1, 2]],
            boundary_segments: vec![],
            gamma2_flags: vec![],
            gamma2_endpoint_vertices: [0, 0],
            h_max: 2f64.sqrt(),
            refine_level: 0,
        }
    }

    #[test]
    fn right_triangle_element_stiffness() {
        let (m, k) = assemble_volume_matrices(&unit_right_triangle()).unwrap();
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k.get(i, j) - expected[i][j]).abs() < 1e-15);
            }
        }
        assert!((m.get(0, 0) - 1.0 / 12.0).abs() < 1e-15);
        assert!((m.get(0, 1) - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_triangle_is_an_error() {
        let mut mesh = unit_right_triangle();
        mesh.vertices[2] = Point2::new(2.0, 0.0);
        assert!(matches!(
            assemble_volume_matrices(&mesh),
            Err(Error::Assembly(_))
        ));
    }

    #[test]
    fn single_segment_element() {
        let (m, k) = segment_element(0.3).unwrap();
        assert!((k[0][0] - 1.0 / 0.3).abs() < 1e-14 && (k[0][1] + 1.0 / 0.3).abs() < 1e-14);
        assert!((m[0][0] - 0.3 * 2.0 / 6.0).abs() < 1e-16 && (m[0][1] - 0.3 / 6.0).abs() < 1e-16);
        assert!(segment_element(0.0).is_err());
    }

    #[test]
    fn partition_of_unity_sums() {
        let mesh = build_disk_mesh(8, 1, 0.25).unwrap();
        let dofs = DofMap::new(&mesh).unwrap();
        let (mv, kv) = assemble_volume_matrices(&mesh).unwrap();
        let total: f64 = mv.iter().map(|(_, _, v)| v).sum();
        assert!((total - mesh.polygon_area()).abs() < 1e-12);
        assert!(total < std::f64::consts::PI);
        let (mg, kg) = assemble_surface_matrices(&mesh, &dofs, Surface::Gamma).unwrap();
        let total: f64 = mg.iter().map(|(_, _, v)| v).sum();
        assert!((total - mesh.perimeter()).abs() < 1e-12);
        let (m2, k2) = assemble_surface_matrices(&mesh, &dofs, Surface::Gamma2).unwrap();
        let total: f64 = m2.iter().map(|(_, _, v)| v).sum();
        assert!((total - mesh.active_length()).abs() < 1e-12);
        for k in [&kv, &kg, &k2] {
            let row_max = k.row_sums().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(row_max <= 1e-12 * k.norm_inf());
            assert!(k.max_abs_asymmetry() <= 1e-15 * k.norm_inf());
        }
        assert!(mv.iter().all(|(_, _, v)| v >= 0.0));
    }

    #[test]
    fn trace_coupling_locality_and_sums() {
        let mesh = build_disk_mesh(8, 0, 0.5).unwrap();
        let dofs = DofMap::new(&mesh).unwrap();
        let b = assemble_trace_coupling(&mesh, &dofs, Surface::Gamma).unwrap();
        let ones_v = vec![1.0; dofs.n_volume];
        let ones_g = vec![1.0; dofs.n_gamma];
        assert!((b.bilinear(&ones_v, &ones_g) - mesh.perimeter()).abs() < 1e-12);
        // a single Γ node touches at most its two incident segments: 3 volume rows
        let bt = b.transpose();
        for g in 0..dofs.n_gamma {
            let rows: Vec<usize> = bt.row(g).map(|(i, _)| i).collect();
            assert!(rows.len() <= 3);
            assert!(rows.contains(&dofs.gamma_to_volume[g]));
        }
        // the Γ coupling restricted to flagged segments equals the Γ₂ coupling through the restriction map
        let fem = FemBlocks::assemble(&mesh, MassKind::Consistent).unwrap();
        let via_gamma2 = fem.coupling_gamma2.matmul(&dofs.restrict_gamma2());
        let flagged = fem.coupling_gamma_flagged();
        let diff = via_gamma2.add_scaled(&flagged, -1.0);
        assert!(diff.norm_inf() < 1e-15);
    }

    #[test]
    fn gamma2_length_converges_second_order() {
        let errs: Vec<f64> = (0..4)
            .map(|lv| {
                let mesh = build_disk_mesh(8, lv, 0.25).unwrap();
                let dofs = DofMap::new(&mesh).unwrap();
                let (m2, _) = assemble_surface_matrices(&mesh, &dofs, Surface::Gamma2).unwrap();
                std::f64::consts::FRAC_PI_2 - m2.iter().map(|(_, _, v)| v).sum::<f64>()
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(w[1] > 0.0 && (order - 2.0).abs() < 0.05, "order {order}");
        }
    }
}
