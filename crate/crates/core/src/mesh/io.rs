//! Plain-text node/element dump.
//!
//! ```text
//! vertices <n>
//! x y
//! triangles <m>
//! i j k
//! boundary <k>
//! i j flag
//! ```
//! Floats are written in shortest round-trip form, so a dump reads back bit-identically.

use std::io::{BufRead, Write};

use super::{Mesh, Point2};
use crate::error::{Error, Result};

pub fn write_mesh<W: Write>(mesh: &Mesh, mut out: W) -> Result<()> {
    writeln!(out, "refine_level {}", mesh.refine_level)?;
    writeln!(out, "vertices {}", mesh.vertices.len())?;
    for v in &mesh.vertices {
        writeln!(out, "{} {}", v.x, v.y)?;
    }
    writeln!(out, "triangles {}", mesh.triangles.len())?;
    for t in &mesh.triangles {
        writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(out, "boundary {}", mesh.boundary_segments.len())?;
    for (s, &f) in mesh.boundary_segments.iter().zip(&mesh.gamma2_flags) {
        writeln!(out, "{} {} {}", s[0], s[1], u8::from(f))?;
    }
    Ok(())
}

pub fn read_mesh<R: BufRead>(input: R) -> Result<Mesh> {
    let mut lines = input.lines().enumerate();
    let mut next_fields = |expect: &str| -> Result<Vec<String>> {
        let (no, line) = lines.next().ok_or_else(|| {
            Error::Mesh(format!("unexpected end of mesh file, expected {expect}"))
        })?;
        let line = line?;
        let fields: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if fields.is_empty() {
            return Err(Error::Mesh(format!(
                "line {}: empty, expected {expect}",
                no + 1
            )));
        }
        Ok(fields)
    };
    fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
        s.parse()
            .map_err(|_| Error::Mesh(format!("malformed number `{s}`")))
    }
    fn header(fields: &[String], name: &str) -> Result<usize> {
        if fields.len() != 2 || fields[0] != name {
            return Err(Error::Mesh(format!(
                "expected `{name} <count>`, got `{}`",
                fields.join(" ")
            )));
        }
        num(&fields[1])
    }

    let refine_level = header(&next_fields("refine_level")?, "refine_level")?;
    let n = header(&next_fields("vertices")?, "vertices")?;
    let mut vertices = Vec::with_capacity(n);
    for _ in 0..n {
        let f = next_fields("x y")?;
        vertices.push(Point2::new(num(&f[0])?, num(&f[1])?));
    }
    let m = header(&next_fields("triangles")?, "triangles")?;
    let mut triangles = Vec::with_capacity(m);
    for _ in 0..m {
        let f = next_fields("i j k")?;
        triangles.push([num(&f[0])?, num(&f[1])?, num(&f[2])?]);
    }
    let k = header(&next_fields("boundary")?, "boundary")?;
    let mut boundary_segments = Vec::with_capacity(k);
    let mut gamma2_flags = Vec::with_capacity(k);
    for _ in 0..k {
        let f = next_fields("i j flag")?;
        boundary_segments.push([num(&f[0])?, num(&f[1])?]);
        gamma2_flags.push(num::<u8>(&f[2])? != 0);
    }

    let start = (0..k)
        .find(|&i| gamma2_flags[i] && !gamma2_flags[(i + k - 1) % k])
        .ok_or_else(|| Error::Mesh("no flagged chain in boundary section".into()))?;
    let end = (0..k)
        .find(|&i| gamma2_flags[i] && !gamma2_flags[(i + 1) % k])
        .expect("chain has an end");
    let mut mesh = Mesh {
        gamma2_endpoint_vertices: [boundary_segments[start][0], boundary_segments[end][1]],
        vertices,
        triangles,
        boundary_segments,
        gamma2_flags,
        h_max: 0.0,
        refine_level,
    };
    mesh.h_max = mesh
        .triangles
        .iter()
        .map(|t| mesh.diameter(t))
        .fold(0.0, f64::max);
    mesh.validate()?;
    Ok(mesh)
}
