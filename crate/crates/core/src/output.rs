//! CSV writers and the run manifest.
//!
//! Floats are written with `{:e}` (shortest round-trip), NaN as an empty cell.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::to_toml;
use crate::diagnostics::{gamma_angles, RadialProfile};
use crate::error::{Error, Result};
use crate::fem::{DofMap, Field};
use crate::mesh::{mesh_quality, write_mesh, Mesh};
use crate::qssa::ConvergenceReport;
use crate::sparse::CsrMatrix;
use crate::transient::{SimConfig, StateVector, StepDiagnostics};

pub const SOFTWARE_NAME: &str = "vsrd";

/// `"<crate version>+<git revision>"`, or `"+unknown"` outside a checkout.
pub fn version_string() -> String {
    format!(
        "{}+{}",
        env!("CARGO_PKG_VERSION"),
        option_env!("VSRD_GIT_REV").unwrap_or("unknown")
    )
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:e}")
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path)
        .map_err(|e| Error::Io(e).context(format!("cannot create {}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

/// Creates `dir` (and parents) and checks that it is writable.
pub fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Io(e).context(format!("cannot create {}", dir.display())))?;
    let probe = dir.join(".vsrd-write-test");
    File::create(&probe)
        .map_err(|e| Error::Io(e).context(format!("{} is not writable", dir.display())))?;
    std::fs::remove_file(&probe)?;
    Ok(())
}

/// File names written by [`write_snapshot`] for `stem`.
pub fn snapshot_files(stem: &str) -> [String; 2] {
    [format!("{stem}_volume.csv"), format!("{stem}_boundary.csv")]
}

/// Volume table `node_id,x,y,L,P` and boundary table `node_id,theta,l,p_or_empty`.
pub fn write_snapshot(
    dir: &Path,
    stem: &str,
    state: &StateVector,
    mesh: &Mesh,
    dofs: &DofMap,
) -> Result<[PathBuf; 2]> {
    if state.volume_l.len() != mesh.n_vertices() || state.cortex_l.len() != dofs.n_gamma {
        return Err(Error::Domain("state does not match the mesh".into()));
    }
    let [vname, bname] = snapshot_files(stem);
    let (vpath, bpath) = (dir.join(vname), dir.join(bname));

    let mut w = csv_writer(&vpath)?;
    w.write_record(["node_id", "x", "y", "L", "P"])?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        w.write_record([
            i.to_string(),
            fmt_f64(v.x),
            fmt_f64(v.y),
            fmt_f64(state.volume_l[i]),
            fmt_f64(state.volume_p[i]),
        ])?;
    }
    w.flush()?;

    let mut p_at = vec![f64::NAN; dofs.n_gamma];
    if !state.cortex_p.is_empty() {
        for (k, &g) in dofs.gamma2_to_gamma.iter().enumerate() {
            p_at[g] = state.cortex_p[k];
        }
    }
    let theta = gamma_angles(mesh, dofs);
    let mut w = csv_writer(&bpath)?;
    w.write_record(["node_id", "theta", "l", "p_or_empty"])?;
    for g in 0..dofs.n_gamma {
        w.write_record([
            dofs.gamma_to_volume[g].to_string(),
            fmt_f64(theta[g]),
            fmt_f64(state.cortex_l[g]),
            fmt_f64(p_at[g]),
        ])?;
    }
    w.flush()?;
    Ok([vpath, bpath])
}

pub fn write_diagnostics(path: &Path, diagnostics: &[StepDiagnostics]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string(), "mass".into(), "H".into()];
    for prefix in ["L2", "min", "max"] {
        header.extend(
            Field::ALL
                .iter()
                .map(|f| format!("{prefix}_{}", f.symbol())),
        );
    }
    w.write_record(&header)?;
    for d in diagnostics {
        let mut row = vec![fmt_f64(d.t), fmt_f64(d.mass.total), fmt_f64(d.h)];
        row.extend(d.fields.iter().map(|s| fmt_f64(s.l2)));
        row.extend(d.fields.iter().map(|s| fmt_f64(s.min)));
        row.extend(d.fields.iter().map(|s| fmt_f64(s.max)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_convergence(path: &Path, report: &ConvergenceReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["xi", "p_norm_sq", "p_l1_scaled", "err_L", "err_l"])?;
    for i in 0..report.xis.len() {
        w.write_record([
            fmt_f64(report.xis[i]),
            fmt_f64(report.p_norms[i]),
            fmt_f64(report.p_l1_scaled[i]),
            fmt_f64(report.errors_l_volume[i]),
            fmt_f64(report.errors_l_cortex[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_profiles(path: &Path, profiles: &[RadialProfile]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["field", "theta", "r", "value"])?;
    for p in profiles {
        for (field, values) in [("L", &p.volume_l), ("P", &p.volume_p)] {
            for (r, v) in p.r.iter().zip(values) {
                w.write_record([
                    field.to_string(),
                    fmt_f64(p.theta),
                    fmt_f64(*r),
                    fmt_f64(*v),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Generic table writer for comparison files.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Domain(format!(
                "row has {} cells, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mesh_file(path: &Path, mesh: &Mesh) -> Result<()> {
    let mut out = create(path)?;
    write_mesh(mesh, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_matrix_file(path: &Path, matrix: &CsrMatrix) -> Result<()> {
    let mut out = create(path)?;
    matrix.write_coo(&mut out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshStats {
    pub n_vertices: usize,
    pub n_triangles: usize,
    pub n_boundary_segments: usize,
    pub n_gamma2_nodes: usize,
    pub refine_level: usize,
    pub h_max: f64,
    pub h_min: f64,
    pub min_angle_deg: f64,
    pub area_defect: f64,
    pub active_length: f64,
}

impl MeshStats {
    pub fn of(mesh: &Mesh) -> Self {
        let q = mesh_quality(mesh);
        Self {
            n_vertices: mesh.n_vertices(),
            n_triangles: q.n_triangles,
            n_boundary_segments: q.n_boundary_segments,
            n_gamma2_nodes: mesh.active_chain().len(),
            refine_level: mesh.refine_level,
            h_max: q.h_max,
            h_min: q.h_min,
            min_angle_deg: q.min_angle,
            area_defect: q.disk_area_defect,
            active_length: mesh.active_length(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub software: String,
    pub version: String,
    pub preset: String,
    pub description: String,
    pub dt: f64,
    pub params: BTreeMap<String, f64>,
    pub mesh: MeshStats,
    pub outputs: Vec<String>,
    pub summary: toml::Table,
    pub config: toml::Table,
}

impl Manifest {
    pub fn new(preset: &str, description: &str, config: &SimConfig, mesh: &Mesh) -> Result<Self> {
        let config_table: toml::Table = toml::from_str(&to_toml(config))
            .map_err(|e| Error::Domain(format!("config does not serialise: {e}")))?;
        Ok(Self {
            software: SOFTWARE_NAME.into(),
            version: version_string(),
            preset: preset.into(),
            description: description.into(),
            dt: config.dt,
            params: config
                .params
                .named()
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            mesh: MeshStats::of(mesh),
            outputs: Vec::new(),
            summary: toml::Table::new(),
            config: config_table,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::Domain(format!("manifest does not serialise: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = self.to_toml()?;
        std::fs::write(path, text)
            .map_err(|e| Error::Io(e).context(format!("cannot write {}", path.display())))
    }
}

/// Summary value that survives TOML: non-finite floats become strings.
pub fn summary_float(v: f64) -> toml::Value {
    if v.is_finite() {
        toml::Value::Float(v)
    } else {
        toml::Value::String(v.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_disk_mesh;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-17, 0.0, 1e300] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(f64::NAN), "");
    }

    #[test]
    fn snapshot_tables_have_one_row_per_node() {
        let mesh = build_disk_mesh(8, 0, 0.5).unwrap();
        let dofs = DofMap::new(&mesh).unwrap();
        let layout = crate::fem::BlockLayout {
            n_volume: dofs.n_volume,
            n_gamma: dofs.n_gamma,
            n_gamma2: dofs.n_gamma2,
        };
        let state = crate::transient::InitialData::default()
            .state(&layout)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let [v, b] = write_snapshot(dir.path(), "s", &state, &mesh, &dofs).unwrap();
        let vol = std::fs::read_to_string(v).unwrap();
        assert_eq!(vol.lines().count(), mesh.n_vertices() + 1);
        assert!(vol.starts_with("node_id,x,y,L,P\n"));
        let bnd = std::fs::read_to_string(b).unwrap();
        assert_eq!(bnd.lines().count(), dofs.n_gamma + 1);
        let empty = bnd.lines().skip(1).filter(|l| l.ends_with(',')).count();
        assert_eq!(empty, dofs.n_gamma - dofs.n_gamma2);
    }

    #[test]
    fn manifest_names_required_fields() {
        let mesh = build_disk_mesh(8, 0, 0.5).unwrap();
        let m = Manifest::new("demo", "d", &SimConfig::default(), &mesh).unwrap();
        let text = m.to_toml().unwrap();
        for key in [
            "version",
            "preset = \"demo\"",
            "dt",
            "n_triangles",
            "alpha",
            "[config.params]",
        ] {
            assert!(text.contains(key), "missing {key} in\n{text}");
        }
    }
}
