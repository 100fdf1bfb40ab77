//! Wavefront OBJ: `v` and triangular `f` records only.

use std::fmt::Write as _;
use std::path::Path;

use super::{Mesh, Vec3};
use crate::{Error, Result};

pub fn parse_obj(text: &str, origin: &Path) -> Result<Mesh> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        message: format!("line {}: {message}", line + 1),
    };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let xyz: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| err(ln, e.to_string())))
                    .collect::<Result<_>>()?;
                if xyz.len() != 3 {
                    return Err(err(ln, "vertex needs three coordinates".into()));
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first
                            .parse()
                            .map_err(|_| err(ln, format!("bad index `{t}`")))?;
                        let resolved = if i < 0 {
                            vertices.len() as i64 + i
                        } else {
                            i - 1
                        };
                        if resolved < 0 {
                            return Err(err(ln, format!("index `{t}` out of range")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(err(
                        ln,
                        format!("only triangles are supported, got {} vertices", idx.len()),
                    ));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces).map_err(|e| e.context(origin.display().to_string()))
}

pub fn read_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

pub fn format_obj(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(mesh.vertex_count() * 40);
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    out
}

pub fn write_obj(path: &Path, mesh: &Mesh) -> Result<()> {
    std::fs::write(path, format_obj(mesh)).map_err(|e| Error::io(path, e))
}
