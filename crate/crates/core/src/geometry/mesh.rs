//! Embedded closed simplicial k-manifolds (polyline loops in the plane,
//! closed triangle meshes in 3-space).

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::primitives::{triangle_area, Point};
use crate::quad::Cell;

/// Relative tolerance for degeneracy / embedding checks, against the
/// bounding-box diameter.
pub const MESH_SCALE_TOL: f64 = 1e-12;

/// A point on the manifold, addressed by simplex and barycentric weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshPoint {
    pub cell: usize,
    pub bary: [f64; 3],
}

impl MeshPoint {
    pub fn vertex(mesh: &SimplicialManifold, v: usize) -> Self {
        let (cell, slot) = mesh
            .cells_with_vertex(v)
            .next()
            .expect("vertex belongs to no simplex");
        let mut bary = [0.0; 3];
        bary[slot] = 1.0;
        MeshPoint { cell, bary }
    }
}

/// An embedded simplicial manifold: closed, connected, oriented,
/// non-degenerate. Immutable after construction.
#[derive(Clone, Debug)]
pub struct SimplicialManifold {
    ambient_dim: usize,
    intrinsic_dim: usize,
    vertices: Vec<Point>,
    /// Vertex indices per simplex; for k = 1 the third entry repeats the second.
    cells: Vec<[usize; 3]>,
    /// Neighbor simplex across each of the k+1 facets.
    adjacency: Vec<[usize; 3]>,
}

impl SimplicialManifold {
    /// Builds and validates. `cells` entries use the first k+1 slots.
    pub fn new(
        ambient_dim: usize,
        intrinsic_dim: usize,
        vertices: Vec<Point>,
        raw_cells: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if !(2..=3).contains(&ambient_dim) {
            return Err(Error::InvalidParameter {
                name: "ambient_dim".into(),
                reason: "must be 2 or 3".into(),
            });
        }
        if !(1..=2).contains(&intrinsic_dim) || intrinsic_dim >= ambient_dim {
            return Err(Error::InvalidParameter {
                name: "intrinsic_dim".into(),
                reason: "must be 1 or 2 and below the ambient dimension".into(),
            });
        }
        let k = intrinsic_dim;
        let mut cells = Vec::with_capacity(raw_cells.len());
        for (i, c) in raw_cells.iter().enumerate() {
            if c.len() != k + 1 {
                return Err(Error::InvalidParameter {
                    name: "simplices".into(),
                    reason: format!("simplex {i} has {} vertices, expected {}", c.len(), k + 1),
                });
            }
            for &v in c {
                if v >= vertices.len() {
                    return Err(Error::InvalidParameter {
                        name: "simplices".into(),
                        reason: format!("simplex {i} references missing vertex {v}"),
                    });
                }
            }
            let arr = if k == 1 {
                [c[0], c[1], c[1]]
            } else {
                [c[0], c[1], c[2]]
            };
            cells.push(arr);
        }

        let mut mesh = SimplicialManifold {
            ambient_dim,
            intrinsic_dim,
            vertices,
            cells,
            adjacency: Vec::new(),
        };
        mesh.build_adjacency()?;
        mesh.orient()?;
        mesh.check_connected()?;
        mesh.check_degenerate()?;
        mesh.check_embedded()?;
        Ok(mesh)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_vertex_ids(&self, c: usize) -> &[usize] {
        &self.cells[c][..self.intrinsic_dim + 1]
    }

    pub fn cell_points(&self, c: usize) -> [Point; 3] {
        let ids = self.cells[c];
        [
            self.vertices[ids[0]],
            self.vertices[ids[1]],
            self.vertices[ids[2]],
        ]
    }

    pub fn neighbors(&self, c: usize) -> &[usize] {
        &self.adjacency[c][..self.intrinsic_dim + 1]
    }

    fn cells_with_vertex(&self, v: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells.iter().enumerate().filter_map(move |(i, c)| {
            c[..self.intrinsic_dim + 1]
                .iter()
                .position(|&x| x == v)
                .map(|slot| (i, slot))
        })
    }

    pub fn position(&self, p: &MeshPoint) -> Point {
        let pts = self.cell_points(p.cell);
        let mut x = pts[0] * p.bary[0] + pts[1] * p.bary[1];
        if self.intrinsic_dim == 2 {
            x += pts[2] * p.bary[2];
        }
        x
    }

    /// Ambient straight-line distance between two points of the manifold.
    pub fn euclidean_distance(&self, a: &MeshPoint, b: &MeshPoint) -> f64 {
        (self.position(a) - self.position(b)).norm()
    }

    pub fn cell_measure(&self, c: usize) -> f64 {
        let p = self.cell_points(c);
        if self.intrinsic_dim == 1 {
            (p[1] - p[0]).norm()
        } else {
            triangle_area(&p[0], &p[1], &p[2])
        }
    }

    /// Total k-dimensional Hausdorff measure of the mesh.
    pub fn total_measure(&self) -> f64 {
        (0..self.cells.len()).map(|c| self.cell_measure(c)).sum()
    }

    pub fn bbox_diameter(&self) -> f64 {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (hi - lo).norm()
    }

    /// All vertices scaled by `lambda` about the origin. Measures scale by
    /// lambda^k exactly.
    pub fn dilate(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda".into(),
                reason: "must be > 0".into(),
            });
        }
        let mut out = self.clone();
        for v in &mut out.vertices {
            *v *= lambda;
        }
        Ok(out)
    }

    /// Geometry cells with optional vertex data attached.
    pub fn cells_with_values(&self, values: Option<&[f64]>) -> Vec<Cell> {
        (0..self.cells.len())
            .map(|c| self.cell_with_values(c, values))
            .collect()
    }

    pub fn cell_with_values(&self, c: usize, values: Option<&[f64]>) -> Cell {
        let ids = self.cells[c];
        let pts = self.cell_points(c);
        let vals = match values {
            Some(v) => [v[ids[0]], v[ids[1]], v[ids[2]]],
            None => [0.0; 3],
        };
        Cell {
            k: self.intrinsic_dim,
            pts,
            vals,
        }
    }

    fn facets_of(&self, c: usize) -> Vec<Vec<usize>> {
        let ids = self.cell_vertex_ids(c);
        match self.intrinsic_dim {
            1 => vec![vec![ids[0]], vec![ids[1]]],
            _ => {
                let mut out = Vec::with_capacity(3);
                for i in 0..3 {
                    let mut f = vec![ids[i], ids[(i + 1) % 3]];
                    f.sort_unstable();
                    out.push(f);
                }
                out
            }
        }
    }

    fn build_adjacency(&mut self) -> Result<()> {
        let mut facet_map: HashMap<Vec<usize>, Vec<(usize, usize)>> = HashMap::new();
        for c in 0..self.cells.len() {
            for (slot, f) in self.facets_of(c).into_iter().enumerate() {
                facet_map.entry(f).or_default().push((c, slot));
            }
        }
        let mut adjacency = vec![[usize::MAX; 3]; self.cells.len()];
        for (facet, owners) in &facet_map {
            if owners.len() != 2 {
                return Err(Error::NonManifold {
                    facet: facet.clone(),
                    count: owners.len(),
                });
            }
            let (c0, s0) = owners[0];
            let (c1, s1) = owners[1];
            adjacency[c0][s0] = c1;
            adjacency[c1][s1] = c0;
        }
        self.adjacency = adjacency;
        Ok(())
    }

    /// Orients all simplices consistently (flipping as needed); errors on
    /// non-orientable input.
    fn orient(&mut self) -> Result<()> {
        let n = self.cells.len();
        if n == 0 {
            return Err(Error::EmptySelection);
        }
        // Simplices are flipped in place as the front advances, so
        // compatibility is always evaluated against the stored orientation.
        let mut visited = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        visited[0] = true;
        queue.push_back(0usize);
        while let Some(c) = queue.pop_front() {
            let neighbors: Vec<usize> = self.neighbors(c).to_vec();
            for nb in neighbors {
                if nb == usize::MAX {
                    continue;
                }
                if !visited[nb] {
                    if !self.orientation_compatible(c, nb) {
                        self.flip_cell(nb);
                    }
                    visited[nb] = true;
                    queue.push_back(nb);
                } else if !self.orientation_compatible(c, nb) {
                    return Err(Error::NonOrientable { simplex: nb });
                }
            }
        }
        Ok(())
    }

    /// Two adjacent simplices are compatibly oriented when the shared facet
    /// appears with opposite orientation in the two.
    fn orientation_compatible(&self, a: usize, b: usize) -> bool {
        match self.intrinsic_dim {
            1 => {
                // Directed edges u->v: the shared vertex must be head of one
                // and tail of the other.
                let ea = &self.cells[a];
                let eb = &self.cells[b];
                let shared: Vec<usize> = [ea[0], ea[1]]
                    .iter()
                    .filter(|v| eb[..2].contains(v))
                    .copied()
                    .collect();
                shared
                    .iter()
                    .all(|&v| (ea[1] == v && eb[0] == v) || (ea[0] == v && eb[1] == v))
            }
            _ => {
                let ta = &self.cells[a][..3];
                let tb = &self.cells[b][..3];
                for i in 0..3 {
                    let (u, v) = (ta[i], ta[(i + 1) % 3]);
                    for j in 0..3 {
                        if tb[j] == v && tb[(j + 1) % 3] == u {
                            return true;
                        }
                        if tb[j] == u && tb[(j + 1) % 3] == v {
                            return false;
                        }
                    }
                }
                true
            }
        }
    }

    fn flip_cell(&mut self, c: usize) {
        if self.intrinsic_dim == 1 {
            self.cells[c].swap(0, 1);
            self.cells[c][2] = self.cells[c][1];
            self.adjacency[c].swap(0, 1);
        } else {
            self.cells[c].swap(1, 2);
            // Facet slots: facet i = edge (i, i+1). Swapping vertices 1,2
            // exchanges facets 0 and 2.
            self.adjacency[c].swap(0, 2);
        }
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.cells.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(c) = stack.pop() {
            for &nb in self.neighbors(c) {
                if nb != usize::MAX && !seen[nb] {
                    seen[nb] = true;
                    count += 1;
                    stack.push(nb);
                }
            }
        }
        if count != n {
            return Err(Error::Disconnected);
        }
        Ok(())
    }

    fn check_degenerate(&self) -> Result<()> {
        let scale = self.bbox_diameter();
        let tol = MESH_SCALE_TOL * scale.powi(self.intrinsic_dim as i32);
        for c in 0..self.cells.len() {
            let m = self.cell_measure(c);
            if !(m > tol) {
                return Err(Error::DegenerateSimplex {
                    simplex: c,
                    measure: m,
                    tol,
                });
            }
        }
        Ok(())
    }

    fn check_embedded(&self) -> Result<()> {
        let tol = MESH_SCALE_TOL * self.bbox_diameter();
        let cells: Vec<Cell> = self.cells_with_values(None);
        let centroids: Vec<Point> = cells.iter().map(|c| c.centroid()).collect();
        let radii: Vec<f64> = cells.iter().map(|c| 0.5 * c.diameter() + tol).collect();
        for a in 0..cells.len() {
            for b in (a + 1)..cells.len() {
                if (centroids[a] - centroids[b]).norm() > radii[a] + radii[b] {
                    continue;
                }
                let shares_vertex = self
                    .cell_vertex_ids(a)
                    .iter()
                    .any(|v| self.cell_vertex_ids(b).contains(v));
                if shares_vertex {
                    continue;
                }
                if cells[a].min_distance(&cells[b]) <= tol {
                    return Err(Error::SelfIntersection { a, b });
                }
            }
        }
        Ok(())
    }

    /// Oriented triangle normal (k = 2 only, not normalized).
    pub fn cell_normal(&self, c: usize) -> Point {
        let p = self.cell_points(c);
        (p[1] - p[0]).cross(&(p[2] - p[0]))
    }

    /// Euler characteristic V - E + F (k = 2) or V - E (k = 1).
    pub fn euler_characteristic(&self) -> i64 {
        let v = self.vertices.len() as i64;
        match self.intrinsic_dim {
            1 => v - self.cells.len() as i64,
            _ => {
                let mut edges = std::collections::HashSet::new();
                for c in 0..self.cells.len() {
                    let ids = self.cell_vertex_ids(c);
                    for i in 0..3 {
                        let mut e = [ids[i], ids[(i + 1) % 3]];
                        e.sort_unstable();
                        edges.insert(e);
                    }
                }
                v - edges.len() as i64 + self.cells.len() as i64
            }
        }
    }
}

/// Minimum ambient distance from a point to a family of cells.
pub fn dist_point_to_cells(p: &Point, cells: &[Cell]) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::EmptyTarget);
    }
    Ok(cells
        .iter()
        .map(|c| c.contains_distance_to_point(p))
        .fold(f64::INFINITY, f64::min))
}

/// Minimum ambient distance between two families of cells.
pub fn dist_cells_to_cells(a: &[Cell], b: &[Cell]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let mut d = f64::INFINITY;
    for ca in a {
        for cb in b {
            d = d.min(ca.min_distance(cb));
        }
    }
    Ok(d)
}
