//! Mesh and field file I/O.
//!
//! Formats: OBJ restricted to `v x y z` / `f i j k` lines (closed triangle
//! meshes), polyline CSV with one `x,y` vertex per line (implicitly closed),
//! and field CSV with `vertex_index,value` rows.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::mesh::SimplicialManifold;
use crate::geometry::primitives::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    PolylineCsv,
}

impl MeshFormat {
    /// Infers the format from the file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("csv") => Ok(MeshFormat::PolylineCsv),
            other => Err(Error::InvalidParameter {
                name: "file".into(),
                reason: format!("cannot infer mesh format from extension {other:?}"),
            }),
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "obj" => Ok(MeshFormat::Obj),
            "polyline-csv" => Ok(MeshFormat::PolylineCsv),
            other => Err(Error::InvalidParameter {
                name: "format".into(),
                reason: format!("unknown mesh format `{other}`"),
            }),
        }
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<SimplicialManifold> {
    let text = std::fs::read_to_string(path)?;
    let pstr = path.display().to_string();
    match format {
        MeshFormat::Obj => parse_obj(&text, &pstr),
        MeshFormat::PolylineCsv => parse_polyline_csv(&text, &pstr),
    }
}

fn parse_obj(text: &str, path: &str) -> Result<SimplicialManifold> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap();
        let err = |reason: String| Error::Parse {
            path: path.into(),
            line: lineno + 1,
            reason,
        };
        match tag {
            "v" => {
                let coords: Vec<f64> = parts
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(format!("bad vertex coordinate: {e}")))?;
                if coords.len() != 3 {
                    return Err(err(format!("expected 3 coordinates, got {}", coords.len())));
                }
                vertices.push(Point::new(coords[0], coords[1], coords[2]));
            }
            "f" => {
                let idx: Vec<usize> = parts
                    .map(|t| {
                        // Tolerate `i/j/k` references; only the vertex index is used.
                        let first = t.split('/').next().unwrap_or(t);
                        first.parse::<usize>()
                    })
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(format!("bad face index: {e}")))?;
                if idx.len() != 3 {
                    return Err(err(format!("expected triangle face, got {} indices", idx.len())));
                }
                if idx.iter().any(|&i| i == 0) {
                    return Err(err("OBJ face indices are 1-based".into()));
                }
                faces.push(idx.iter().map(|&i| i - 1).collect());
            }
            // Ignore other tags (vn, vt, o, g, s, usemtl ...).
            _ => {}
        }
    }
    SimplicialManifold::new(3, 2, vertices, faces)
}

fn parse_polyline_csv(text: &str, path: &str) -> Result<SimplicialManifold> {
    let mut vertices = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(|t| t.trim()).collect();
        let err = |reason: String| Error::Parse {
            path: path.into(),
            line: lineno + 1,
            reason,
        };
        if parts.len() != 2 {
            return Err(err(format!("expected `x,y`, got {} fields", parts.len())));
        }
        let x: f64 = parts[0]
            .parse()
            .map_err(|e| err(format!("bad x coordinate: {e}")))?;
        let y: f64 = parts[1]
            .parse()
            .map_err(|e| err(format!("bad y coordinate: {e}")))?;
        vertices.push(Point::new(x, y, 0.0));
    }
    let n = vertices.len();
    let cells = (0..n).map(|i| vec![i, (i + 1) % n]).collect();
    SimplicialManifold::new(2, 1, vertices, cells)
}

/// Loads a `vertex_index,value` CSV into a dense value vector.
pub fn load_field_csv(path: &Path, num_vertices: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let pstr = path.display().to_string();
    let mut values = vec![0.0; num_vertices];
    let mut seen = vec![false; num_vertices];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("vertex_index") {
            continue;
        }
        let err = |reason: String| Error::Parse {
            path: pstr.clone(),
            line: lineno + 1,
            reason,
        };
        let parts: Vec<&str> = line.split(',').map(|t| t.trim()).collect();
        if parts.len() != 2 {
            return Err(err(format!("expected `vertex_index,value`, got {} fields", parts.len())));
        }
        let i: usize = parts[0]
            .parse()
            .map_err(|e| err(format!("bad vertex index: {e}")))?;
        if i >= num_vertices {
            return Err(err(format!("vertex index {i} out of range (mesh has {num_vertices})")));
        }
        values[i] = parts[1]
            .parse()
            .map_err(|e| err(format!("bad value: {e}")))?;
        seen[i] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Parse {
            path: pstr,
            line: 0,
            reason: format!("no value for vertex {missing}"),
        });
    }
    Ok(values)
}

pub fn save_field_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "vertex_index,value")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(file, "{i},{v:.17e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyline_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poly.csv");
        let mut text = String::new();
        for i in 0..64 {
            let t = 2.0 * std::f64::consts::PI * i as f64 / 64.0;
            text.push_str(&format!("{},{}\n", t.cos(), t.sin()));
        }
        std::fs::write(&path, text).unwrap();
        let m = load_mesh(&path, MeshFormat::PolylineCsv).unwrap();
        assert_eq!(m.vertices().len(), 64);
        assert_eq!(m.num_cells(), 64);
    }

    #[test]
    fn obj_open_strip_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("strip.obj");
        std::fs::write(
            &path,
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3\nf 2 4 3\n",
        )
        .unwrap();
        let err = load_mesh(&path, MeshFormat::Obj).unwrap_err();
        assert!(matches!(err, Error::NonManifold { .. }), "{err}");
    }

    #[test]
    fn obj_parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.obj");
        std::fs::write(&path, "v 0 0 0\nv 1 0 zzz\n").unwrap();
        let err = load_mesh(&path, MeshFormat::Obj).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn field_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        let values = vec![1.0, -2.5, 3.25];
        save_field_csv(&path, &values).unwrap();
        let back = load_field_csv(&path, 3).unwrap();
        assert_eq!(values, back);
    }
}
