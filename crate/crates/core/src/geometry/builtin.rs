//! Deterministic built-in test geometries. The square boundary and the cube
//! surface carry genuine corners (Lipschitz but not C^1).

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::mesh::SimplicialManifold;
use crate::geometry::primitives::Point;

/// Regular n-gon inscribed in the unit circle, as a closed polyline (k = 1,
/// ambient dimension 2).
pub fn circle_polygon(n: usize) -> Result<SimplicialManifold> {
    if n < 3 {
        return Err(Error::InvalidParameter {
            name: "resolution".into(),
            reason: "circle-polygon needs at least 3 vertices".into(),
        });
    }
    let vertices: Vec<Point> = (0..n)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            Point::new(t.cos(), t.sin(), 0.0)
        })
        .collect();
    let cells = (0..n).map(|i| vec![i, (i + 1) % n]).collect();
    SimplicialManifold::new(2, 1, vertices, cells)
}

/// Boundary of the axis-aligned unit square (side 1, perimeter exactly 4),
/// with `n` segments per side.
pub fn square_boundary(n: usize) -> Result<SimplicialManifold> {
    if n < 1 {
        return Err(Error::InvalidParameter {
            name: "resolution".into(),
            reason: "square-boundary needs at least 1 segment per side".into(),
        });
    }
    let corners = [
        Point::new(-0.5, -0.5, 0.0),
        Point::new(0.5, -0.5, 0.0),
        Point::new(0.5, 0.5, 0.0),
        Point::new(-0.5, 0.5, 0.0),
    ];
    let mut vertices = Vec::with_capacity(4 * n);
    for side in 0..4 {
        let a = corners[side];
        let b = corners[(side + 1) % 4];
        for i in 0..n {
            let t = i as f64 / n as f64;
            vertices.push(a + (b - a) * t);
        }
    }
    let m = vertices.len();
    let cells = (0..m).map(|i| vec![i, (i + 1) % m]).collect();
    SimplicialManifold::new(2, 1, vertices, cells)
}

/// Icosahedron subdivided `level` times, vertices projected to the unit
/// sphere (k = 2, ambient dimension 3).
pub fn icosphere(level: usize) -> Result<SimplicialManifold> {
    if level > 6 {
        return Err(Error::InvalidParameter {
            name: "resolution".into(),
            reason: "icosphere level capped at 6".into(),
        });
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Point::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mids = [0usize; 3];
            for i in 0..3 {
                let (a, b) = (f[i], f[(i + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mids[i] = *midpoint.entry(key).or_insert_with(|| {
                    vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                    vertices.len() - 1
                });
            }
            next.push([f[0], mids[0], mids[2]]);
            next.push([mids[0], f[1], mids[1]]);
            next.push([mids[2], mids[1], f[2]]);
            next.push([mids[0], mids[1], mids[2]]);
        }
        faces = next;
    }
    SimplicialManifold::new(
        3,
        2,
        vertices,
        faces.iter().map(|f| f.to_vec()).collect(),
    )
}

/// Surface of the axis-aligned unit cube (side 1, area exactly 6), every
/// face split into (2^level)^2 quads of two triangles each.
pub fn cube_surface(level: usize) -> Result<SimplicialManifold> {
    if level > 6 {
        return Err(Error::InvalidParameter {
            name: "resolution".into(),
            reason: "cube-surface level capped at 6".into(),
        });
    }
    let n = 1usize << level;
    // Integer lattice on [0, n]^3; vertices welded by exact lattice key.
    let mut vert_ids: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut vertices: Vec<Point> = Vec::new();
    let mut faces: Vec<Vec<usize>> = Vec::new();
    let vid = |key: (i64, i64, i64),
                   vertices: &mut Vec<Point>,
                   vert_ids: &mut HashMap<(i64, i64, i64), usize>| {
        *vert_ids.entry(key).or_insert_with(|| {
            let p = Point::new(
                key.0 as f64 / n as f64 - 0.5,
                key.1 as f64 / n as f64 - 0.5,
                key.2 as f64 / n as f64 - 0.5,
            );
            vertices.push(p);
            vertices.len() - 1
        })
    };
    // axis = fixed coordinate, side = 0 or n.
    for axis in 0..3usize {
        for side in [0i64, n as i64] {
            for i in 0..n as i64 {
                for j in 0..n as i64 {
                    let corner = |di: i64, dj: i64| -> (i64, i64, i64) {
                        let (u, v) = (i + di, j + dj);
                        match axis {
                            0 => (side, u, v),
                            1 => (u, side, v),
                            _ => (u, v, side),
                        }
                    };
                    let a = vid(corner(0, 0), &mut vertices, &mut vert_ids);
                    let b = vid(corner(1, 0), &mut vertices, &mut vert_ids);
                    let c = vid(corner(1, 1), &mut vertices, &mut vert_ids);
                    let d = vid(corner(0, 1), &mut vertices, &mut vert_ids);
                    faces.push(vec![a, b, c]);
                    faces.push(vec![a, c, d]);
                }
            }
        }
    }
    SimplicialManifold::new(3, 2, vertices, faces)
}

/// Builds a named mesh. Recognized names: `circle-polygon`, `square-boundary`,
/// `icosphere`, `cube-surface`.
pub fn builtin_mesh(name: &str, resolution: usize) -> Result<SimplicialManifold> {
    match name {
        "circle-polygon" => circle_polygon(resolution),
        "square-boundary" => square_boundary(resolution),
        "icosphere" => icosphere(resolution),
        "cube-surface" => cube_surface(resolution),
        other => Err(Error::InvalidParameter {
            name: "mesh".into(),
            reason: format!("unknown builtin mesh `{other}`"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn circle_polygon_counts_and_perimeter() {
        let m = circle_polygon(64).unwrap();
        assert_eq!(m.vertices().len(), 64);
        assert_eq!(m.num_cells(), 64);
        assert_eq!(m.intrinsic_dim(), 1);
        assert_eq!(m.ambient_dim(), 2);
        let expect = 64.0 * 2.0 * (std::f64::consts::PI / 64.0).sin();
        assert_relative_eq!(m.total_measure(), expect, max_relative = 1e-13);
    }

    #[test]
    fn square_boundary_perimeter_is_four() {
        for n in [1, 3, 8] {
            let m = square_boundary(n).unwrap();
            assert_relative_eq!(m.total_measure(), 4.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn icosphere_euler_characteristic_and_area() {
        let m = icosphere(3).unwrap();
        assert_eq!(m.euler_characteristic(), 2);
        assert_eq!(m.num_cells(), 20 * 4usize.pow(3));
        // Total area approaches 4 pi from below under refinement.
        let area = m.total_measure();
        assert!(area < 4.0 * std::f64::consts::PI);
        assert_relative_eq!(area, 4.0 * std::f64::consts::PI, max_relative = 0.01);
    }

    #[test]
    fn cube_surface_area_exact() {
        for level in [0, 1, 2] {
            let m = cube_surface(level).unwrap();
            assert_relative_eq!(m.total_measure(), 6.0, max_relative = 1e-13);
            assert_eq!(m.euler_characteristic(), 2);
        }
    }

    #[test]
    fn dilate_scales_measure_exactly() {
        let m = icosphere(1).unwrap();
        let d = m.dilate(2.0).unwrap();
        assert_relative_eq!(
            d.total_measure(),
            4.0 * m.total_measure(),
            max_relative = 1e-14
        );
        assert!(m.dilate(0.0).is_err());
    }
}
