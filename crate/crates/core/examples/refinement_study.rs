//! Prints mesh statistics over a range of base sizes and refinement levels.
//!
//! cargo run --release --example refinement_study -- [max_level]

use vsrd::mesh::{build_disk_mesh, mesh_quality};

fn main() {
    let max_level: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2);
    println!("n_base,level,triangles,vertices,boundary_segments,min_angle,h_max,h_min,area_defect,arc_length");
    for n_base in [8, 10, 12] {
        for level in 0..=max_level {
            let mesh = match build_disk_mesh(n_base, level, 0.25) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("n_base {n_base}, level {level}: {e}");
                    continue;
                }
            };
            let q = mesh_quality(&mesh);
            println!(
                "{n_base},{level},{},{},{},{:.3},{:.5},{:.6},{:.3e},{:.8}",
                q.n_triangles,
                mesh.n_vertices(),
                q.n_boundary_segments,
                q.min_angle,
                q.h_max,
                q.h_min,
                q.disk_area_defect,
                mesh.active_length()
            );
        }
    }
}
