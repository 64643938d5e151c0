//! Open connected subsets of a manifold, given per-simplex with optional
//! linear clips, plus the boundary-conforming refinement used by the
//! extension pipeline.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::mesh::{dist_point_to_cells, MeshPoint, SimplicialManifold};
use crate::geometry::primitives::{point_segment_distance, Point};
use crate::quad::Cell;

/// Region membership is decided by a selector; clips are intersections of
/// the ambient zero sets of linear functionals with the mesh, so every
/// partial simplex decomposes into flat sub-simplices.
#[derive(Clone, Debug)]
pub enum Selector {
    /// k = 1 loops around the origin: points with polar angle in
    /// (start, end), 0 < end - start < 2 pi.
    AngleRange { start: f64, end: f64 },
    /// Points with normal . x >= offset.
    HalfSpace { normal: Point, offset: f64 },
    /// Whole simplices by index.
    CellIds(Vec<usize>),
    Complement(Box<Selector>),
}

impl Selector {
    /// Spherical cap of geodesic radius `radius` around the unit direction
    /// `axis`, for meshes inscribed in the unit sphere.
    pub fn geodesic_cap(axis: Point, radius: f64) -> Selector {
        Selector::HalfSpace {
            normal: axis.normalize(),
            offset: radius.cos(),
        }
    }

    fn complemented(&self) -> Selector {
        match self {
            Selector::Complement(inner) => (**inner).clone(),
            other => Selector::Complement(Box::new(other.clone())),
        }
    }
}

/// Linear functional phi(x) = n . x + c; "inside" means phi >= 0.
#[derive(Clone, Copy)]
struct LinFn {
    n: Point,
    c: f64,
}

impl LinFn {
    fn eval(&self, p: &Point) -> f64 {
        self.n.dot(p) + self.c
    }
}

/// Corners of a sub-simplex in barycentric coordinates of its parent.
pub type BaryCell = [[f64; 3]; 3];

fn bary_pos(parent: &[Point; 3], b: &[f64; 3]) -> Point {
    parent[0] * b[0] + parent[1] * b[1] + parent[2] * b[2]
}

fn bary_lerp(a: &[f64; 3], b: &[f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn bary_cell_measure(parent: &[Point; 3], k: usize, cell: &BaryCell) -> f64 {
    let p0 = bary_pos(parent, &cell[0]);
    let p1 = bary_pos(parent, &cell[1]);
    if k == 1 {
        (p1 - p0).norm()
    } else {
        let p2 = bary_pos(parent, &cell[2]);
        crate::geometry::primitives::triangle_area(&p0, &p1, &p2)
    }
}

/// Splits a bary-cell by one linear functional: (phi >= 0 side, phi < 0 side).
fn clip_one(parent: &[Point; 3], k: usize, cell: &BaryCell, f: &LinFn) -> (Vec<BaryCell>, Vec<BaryCell>) {
    let nv = k + 1;
    let vals: Vec<f64> = (0..nv)
        .map(|i| f.eval(&bary_pos(parent, &cell[i])))
        .collect();
    if vals.iter().all(|&v| v >= 0.0) {
        return (vec![*cell], vec![]);
    }
    if vals.iter().all(|&v| v <= 0.0) {
        return (vec![], vec![*cell]);
    }
    if k == 1 {
        let t = vals[0] / (vals[0] - vals[1]);
        let m = bary_lerp(&cell[0], &cell[1], t);
        let lo = [cell[0], m, m];
        let hi = [m, cell[1], cell[1]];
        if vals[0] >= 0.0 {
            (vec![lo], vec![hi])
        } else {
            (vec![hi], vec![lo])
        }
    } else {
        // Sutherland-Hodgman on the triangle, both output polygons.
        let mut inside_poly: Vec<[f64; 3]> = Vec::new();
        let mut outside_poly: Vec<[f64; 3]> = Vec::new();
        for i in 0..3 {
            let j = (i + 1) % 3;
            let (vi, vj) = (vals[i], vals[j]);
            if vi >= 0.0 {
                inside_poly.push(cell[i]);
            }
            if vi <= 0.0 {
                outside_poly.push(cell[i]);
            }
            if (vi > 0.0 && vj < 0.0) || (vi < 0.0 && vj > 0.0) {
                let t = vi / (vi - vj);
                let m = bary_lerp(&cell[i], &cell[j], t);
                inside_poly.push(m);
                outside_poly.push(m);
            }
        }
        (fan_triangulate(&inside_poly), fan_triangulate(&outside_poly))
    }
}

fn fan_triangulate(poly: &[[f64; 3]]) -> Vec<BaryCell> {
    if poly.len() < 3 {
        return vec![];
    }
    (1..poly.len() - 1)
        .map(|i| [poly[0], poly[i], poly[i + 1]])
        .collect()
}

fn clip_by_fns(
    parent: &[Point; 3],
    k: usize,
    cell: &BaryCell,
    fns: &[LinFn],
) -> (Vec<BaryCell>, Vec<BaryCell>) {
    let mut inside = vec![*cell];
    let mut outside = Vec::new();
    for f in fns {
        let mut next = Vec::new();
        for c in &inside {
            let (i, o) = clip_one(parent, k, c, f);
            next.extend(i);
            outside.extend(o);
        }
        inside = next;
    }
    (inside, outside)
}

fn angle_window_fns(start: f64, end: f64) -> [LinFn; 2] {
    let da = Point::new(start.cos(), start.sin(), 0.0);
    let db = Point::new(end.cos(), end.sin(), 0.0);
    // cross(da, x) >= 0 and cross(db, x) <= 0
    [
        LinFn {
            n: Point::new(-da.y, da.x, 0.0),
            c: 0.0,
        },
        LinFn {
            n: Point::new(db.y, -db.x, 0.0),
            c: 0.0,
        },
    ]
}

/// Clips a bary-cell against a geometric selector.
fn selector_clip(
    selector: &Selector,
    parent: &[Point; 3],
    k: usize,
    cell: &BaryCell,
) -> (Vec<BaryCell>, Vec<BaryCell>) {
    match selector {
        Selector::HalfSpace { normal, offset } => clip_by_fns(
            parent,
            k,
            cell,
            &[LinFn {
                n: *normal,
                c: -offset,
            }],
        ),
        Selector::AngleRange { start, end } => {
            let span = end - start;
            if span <= std::f64::consts::PI {
                clip_by_fns(parent, k, cell, &angle_window_fns(*start, *end))
            } else {
                // Split into two half-windows; outside is the intersection
                // of the two outside families.
                let mid = start + span / 2.0;
                let (in1, out1) = clip_by_fns(parent, k, cell, &angle_window_fns(*start, mid));
                let mut inside = in1;
                let mut outside = Vec::new();
                for c in &out1 {
                    let (i2, o2) = clip_by_fns(parent, k, c, &angle_window_fns(mid, *end));
                    inside.extend(i2);
                    outside.extend(o2);
                }
                (inside, outside)
            }
        }
        Selector::Complement(inner) => {
            let (i, o) = selector_clip(inner, parent, k, cell);
            (o, i)
        }
        Selector::CellIds(_) => unreachable!("CellIds selections never clip"),
    }
}

#[derive(Clone, Debug)]
pub enum CellStatus {
    Out,
    Full,
    Partial(Vec<BaryCell>),
}

/// One piece of the region boundary: a point (k = 1, a == b) or a segment
/// (k = 2), tagged with the parent simplex.
#[derive(Clone, Debug)]
pub struct BoundaryFacet {
    pub cell: usize,
    pub a: Point,
    pub b: Point,
}

impl BoundaryFacet {
    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    pub fn midpoint(&self) -> Point {
        (self.a + self.b) * 0.5
    }
}

/// An open connected subset of a manifold with Lipschitz boundary.
#[derive(Clone, Debug)]
pub struct Region {
    parent: Arc<SimplicialManifold>,
    selector: Selector,
    status: Vec<CellStatus>,
    boundary: Vec<BoundaryFacet>,
}

impl Region {
    pub fn parent(&self) -> &Arc<SimplicialManifold> {
        &self.parent
    }

    pub fn selector(&self) -> &Selector {
        &self.selector
    }

    pub fn status(&self) -> &[CellStatus] {
        &self.status
    }

    pub fn boundary(&self) -> &[BoundaryFacet] {
        &self.boundary
    }

    pub fn boundary_measure(&self) -> f64 {
        self.boundary.iter().map(|f| f.length()).sum()
    }

    /// Whole-mesh pseudo-region (no boundary); used internally for norms
    /// over all of M.
    pub fn whole(parent: Arc<SimplicialManifold>) -> Region {
        let status = vec![CellStatus::Full; parent.num_cells()];
        Region {
            parent,
            selector: Selector::CellIds(Vec::new()),
            status,
            boundary: Vec::new(),
        }
    }

    pub fn measure(&self) -> f64 {
        let k = self.parent.intrinsic_dim();
        self.status
            .iter()
            .enumerate()
            .map(|(i, st)| match st {
                CellStatus::Out => 0.0,
                CellStatus::Full => self.parent.cell_measure(i),
                CellStatus::Partial(subs) => {
                    let pts = self.parent.cell_points(i);
                    subs.iter()
                        .map(|s| bary_cell_measure(&pts, k, s))
                        .sum::<f64>()
                }
            })
            .sum()
    }

    /// Geometry cells of the region, carrying interpolated vertex data.
    pub fn cells_with_values(&self, values: Option<&[f64]>) -> Vec<Cell> {
        let k = self.parent.intrinsic_dim();
        let mut out = Vec::new();
        for (i, st) in self.status.iter().enumerate() {
            match st {
                CellStatus::Out => {}
                CellStatus::Full => out.push(self.parent.cell_with_values(i, values)),
                CellStatus::Partial(subs) => {
                    let base = self.parent.cell_with_values(i, values);
                    for s in subs {
                        out.push(sub_cell(&base, k, s));
                    }
                }
            }
        }
        out
    }

    pub fn cells(&self) -> Vec<Cell> {
        self.cells_with_values(None)
    }

    /// Region with complementary membership (same boundary).
    pub fn complement(&self) -> Result<Region> {
        let k = self.parent.intrinsic_dim();
        let mut status = Vec::with_capacity(self.status.len());
        for (i, st) in self.status.iter().enumerate() {
            status.push(match st {
                CellStatus::Out => CellStatus::Full,
                CellStatus::Full => CellStatus::Out,
                CellStatus::Partial(_) => {
                    let pts = self.parent.cell_points(i);
                    let whole: BaryCell = [
                        [1.0, 0.0, 0.0],
                        [0.0, 1.0, 0.0],
                        [0.0, 0.0, 1.0],
                    ];
                    let (_, outs) = selector_clip(&self.selector, &pts, k, &whole);
                    let outs = drop_slivers(&pts, k, outs);
                    if outs.is_empty() {
                        CellStatus::Out
                    } else {
                        CellStatus::Partial(outs)
                    }
                }
            });
        }
        Ok(Region {
            parent: self.parent.clone(),
            selector: self.selector.complemented(),
            status,
            boundary: self.boundary.clone(),
        })
    }

    /// Membership test for a point given by simplex + barycentric weights.
    pub fn contains(&self, p: &MeshPoint) -> bool {
        match &self.status[p.cell] {
            CellStatus::Out => false,
            CellStatus::Full => true,
            CellStatus::Partial(subs) => {
                let k = self.parent.intrinsic_dim();
                subs.iter().any(|s| bary_point_in_subcell(k, &p.bary, s))
            }
        }
    }

    /// Minimum ambient distance from an arbitrary point to the region boundary.
    pub fn dist_to_boundary(&self, p: &Point) -> f64 {
        self.boundary
            .iter()
            .map(|f| point_segment_distance(p, &f.a, &f.b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Minimum ambient distance from a point to the region itself.
    pub fn dist_from_point(&self, p: &Point) -> Result<f64> {
        dist_point_to_cells(p, &self.cells())
    }
}

fn drop_slivers(parent: &[Point; 3], k: usize, cells: Vec<BaryCell>) -> Vec<BaryCell> {
    let parent_measure = bary_cell_measure(
        parent,
        k,
        &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    );
    cells
        .into_iter()
        .filter(|c| bary_cell_measure(parent, k, c) > 1e-13 * parent_measure)
        .collect()
}

fn sub_cell(base: &Cell, k: usize, s: &BaryCell) -> Cell {
    let corner = |b: &[f64; 3]| -> (Point, f64) {
        (
            base.pts[0] * b[0] + base.pts[1] * b[1] + base.pts[2] * b[2],
            base.vals[0] * b[0] + base.vals[1] * b[1] + base.vals[2] * b[2],
        )
    };
    let (p0, v0) = corner(&s[0]);
    let (p1, v1) = corner(&s[1]);
    if k == 1 {
        Cell::segment(p0, p1, v0, v1)
    } else {
        let (p2, v2) = corner(&s[2]);
        Cell::triangle([p0, p1, p2], [v0, v1, v2])
    }
}

fn bary_point_in_subcell(k: usize, p: &[f64; 3], s: &BaryCell) -> bool {
    const TOL: f64 = 1e-10;
    if k == 1 {
        // 1-d: compare along the second barycentric coordinate.
        let (lo, hi) = (s[0][1].min(s[1][1]), s[0][1].max(s[1][1]));
        p[1] >= lo - TOL && p[1] <= hi + TOL
    } else {
        // Solve p = l0 s0 + l1 s1 + l2 s2 in the (b1, b2) plane.
        let (a1, a2) = (s[0][1], s[0][2]);
        let (b1, b2) = (s[1][1], s[1][2]);
        let (c1, c2) = (s[2][1], s[2][2]);
        let det = (b1 - a1) * (c2 - a2) - (c1 - a1) * (b2 - a2);
        if det.abs() < 1e-30 {
            return false;
        }
        let l1 = ((p[1] - a1) * (c2 - a2) - (c1 - a1) * (p[2] - a2)) / det;
        let l2 = ((b1 - a1) * (p[2] - a2) - (p[1] - a1) * (b2 - a2)) / det;
        l1 >= -TOL && l2 >= -TOL && l1 + l2 <= 1.0 + TOL
    }
}

/// Constructs a region from a selector; validates connectivity and extracts
/// the boundary.
pub fn make_region(parent: Arc<SimplicialManifold>, selector: Selector) -> Result<Region> {
    let k = parent.intrinsic_dim();
    if let Selector::AngleRange { start, end } = &selector {
        if k != 1 {
            return Err(Error::InvalidParameter {
                name: "selector".into(),
                reason: "angle ranges only select on polyline loops".into(),
            });
        }
        if !(end > start) {
            return Err(Error::EmptySelection);
        }
        if end - start >= 2.0 * std::f64::consts::PI {
            return Err(Error::SelectionIsWholeManifold);
        }
    }

    let whole: BaryCell = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut status = Vec::with_capacity(parent.num_cells());
    match &selector {
        Selector::CellIds(ids) => {
            for &i in ids {
                if i >= parent.num_cells() {
                    return Err(Error::InvalidParameter {
                        name: "selector".into(),
                        reason: format!("simplex id {i} out of range"),
                    });
                }
            }
            let set: std::collections::HashSet<usize> = ids.iter().copied().collect();
            for i in 0..parent.num_cells() {
                status.push(if set.contains(&i) {
                    CellStatus::Full
                } else {
                    CellStatus::Out
                });
            }
        }
        geom => {
            for i in 0..parent.num_cells() {
                let pts = parent.cell_points(i);
                let (ins, outs) = selector_clip(geom, &pts, k, &whole);
                let ins = drop_slivers(&pts, k, ins);
                let outs = drop_slivers(&pts, k, outs);
                status.push(if ins.is_empty() {
                    CellStatus::Out
                } else if outs.is_empty() {
                    CellStatus::Full
                } else {
                    CellStatus::Partial(ins)
                });
            }
        }
    }

    let included: Vec<usize> = status
        .iter()
        .enumerate()
        .filter(|(_, s)| !matches!(s, CellStatus::Out))
        .map(|(i, _)| i)
        .collect();
    if included.is_empty() {
        return Err(Error::EmptySelection);
    }
    if included.len() == parent.num_cells()
        && status.iter().all(|s| matches!(s, CellStatus::Full))
    {
        return Err(Error::SelectionIsWholeManifold);
    }

    // Connectivity over the included subcomplex.
    {
        let inc: std::collections::HashSet<usize> = included.iter().copied().collect();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![included[0]];
        seen.insert(included[0]);
        while let Some(c) = stack.pop() {
            for &nb in parent.neighbors(c) {
                if nb != usize::MAX && inc.contains(&nb) && seen.insert(nb) {
                    stack.push(nb);
                }
            }
        }
        if seen.len() != included.len() {
            return Err(Error::DisconnectedSelection);
        }
    }

    let boundary = extract_boundary(&parent, &status)?;
    let region = Region {
        parent,
        selector,
        status,
        boundary,
    };
    if !(region.measure() > 0.0) {
        return Err(Error::EmptySelection);
    }
    Ok(region)
}

fn quant_key(p: &Point, scale: f64) -> (i64, i64, i64) {
    let q = 1e-9 * scale;
    (
        (p.x / q).round() as i64,
        (p.y / q).round() as i64,
        (p.z / q).round() as i64,
    )
}

fn extract_boundary(
    parent: &Arc<SimplicialManifold>,
    status: &[CellStatus],
) -> Result<Vec<BoundaryFacet>> {
    let k = parent.intrinsic_dim();
    let scale = parent.bbox_diameter();

    // Facets of every kept sub-simplex, counted with a quantized geometric key.
    type Key = ((i64, i64, i64), (i64, i64, i64));
    let mut counts: HashMap<Key, (usize, Point, Point, usize)> = HashMap::new();
    let mut add_facet = |cell: usize, a: Point, b: Point| {
        let (ka, kb) = (quant_key(&a, scale), quant_key(&b, scale));
        let key = if ka <= kb { (ka, kb) } else { (kb, ka) };
        let e = counts.entry(key).or_insert((0, a, b, cell));
        e.0 += 1;
    };

    for (i, st) in status.iter().enumerate() {
        let pts = parent.cell_points(i);
        let subs: Vec<BaryCell> = match st {
            CellStatus::Out => continue,
            CellStatus::Full => vec![[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]],
            CellStatus::Partial(subs) => subs.clone(),
        };
        for s in &subs {
            let p: Vec<Point> = (0..k + 1).map(|j| bary_pos(&pts, &s[j])).collect();
            if k == 1 {
                add_facet(i, p[0], p[0]);
                add_facet(i, p[1], p[1]);
            } else {
                for e in 0..3 {
                    add_facet(i, p[e], p[(e + 1) % 3]);
                }
            }
        }
    }

    let mut boundary: Vec<(Key, BoundaryFacet)> = counts
        .into_iter()
        .filter(|(_, (n, _, _, _))| *n == 1)
        .map(|(key, (_, a, b, cell))| (key, BoundaryFacet { cell, a, b }))
        .collect();
    // Deterministic order.
    boundary.sort_by(|x, y| x.0.cmp(&y.0));
    Ok(boundary.into_iter().map(|(_, f)| f).collect())
}

/// A refinement of the whole parent mesh conforming to a region boundary:
/// every cell lies entirely inside or outside the region.
#[derive(Clone, Debug)]
pub struct ConformingMesh {
    pub k: usize,
    pub verts: Vec<Point>,
    pub cells: Vec<[usize; 3]>,
    pub in_region: Vec<bool>,
    /// Parent simplex of each conforming cell.
    pub cell_parent: Vec<usize>,
    /// Parent simplex and barycentric coordinates of each vertex, for exact
    /// transfer of piecewise-linear fields.
    pub vert_on_parent: Vec<(usize, [f64; 3])>,
    /// Vertex is a corner of at least one inside cell (lies in the region
    /// closure).
    pub vert_in_closure: Vec<bool>,
}

impl ConformingMesh {
    pub fn cells_with_values<'a>(
        &self,
        values: &[f64],
        filter: impl Fn(usize) -> bool + 'a,
    ) -> Vec<Cell> {
        let mut out = Vec::new();
        for (i, c) in self.cells.iter().enumerate() {
            if !filter(i) {
                continue;
            }
            let pts = [self.verts[c[0]], self.verts[c[1]], self.verts[c[2]]];
            let vals = [values[c[0]], values[c[1]], values[c[2]]];
            out.push(Cell {
                k: self.k,
                pts,
                vals,
            });
        }
        out
    }

    /// Evaluates a parent-mesh PL field at a conforming vertex.
    pub fn eval_parent_field(&self, mesh: &SimplicialManifold, values: &[f64], v: usize) -> f64 {
        let (cell, bary) = self.vert_on_parent[v];
        let ids = mesh.cell_vertex_ids(cell);
        let mut sum = 0.0;
        for (slot, &vid) in ids.iter().enumerate() {
            sum += bary[slot] * values[vid];
        }
        sum
    }
}

fn refine_bary(k: usize, cell: &BaryCell, levels: u32) -> Vec<BaryCell> {
    let mut current = vec![*cell];
    for _ in 0..levels {
        let mut next = Vec::with_capacity(current.len() * (1 << k));
        for c in &current {
            if k == 1 {
                let m = bary_lerp(&c[0], &c[1], 0.5);
                next.push([c[0], m, m]);
                next.push([m, c[1], c[1]]);
            } else {
                let mab = bary_lerp(&c[0], &c[1], 0.5);
                let mbc = bary_lerp(&c[1], &c[2], 0.5);
                let mca = bary_lerp(&c[2], &c[0], 0.5);
                next.push([c[0], mab, mca]);
                next.push([mab, c[1], mbc]);
                next.push([mca, mbc, c[2]]);
                next.push([mab, mbc, mca]);
            }
        }
        current = next;
    }
    current
}

/// Uniformly refines the parent mesh `levels` times, then splits the cells
/// crossed by the region boundary so everything conforms.
pub fn conforming_refinement(region: &Region, levels: u32) -> ConformingMesh {
    conforming_refinement_graded(region, levels, &[], 0.0)
}

/// Like `conforming_refinement`, but additionally splits curve cells near
/// any of the `focus` points (within the given radius) until their length
/// drops below `target_h`. Surfaces ignore the focus (bisection would
/// leave hanging nodes).
pub fn conforming_refinement_graded(
    region: &Region,
    levels: u32,
    focus: &[(Point, f64)],
    target_h: f64,
) -> ConformingMesh {
    let parent = region.parent();
    let k = parent.intrinsic_dim();
    let scale = parent.bbox_diameter();
    let whole: BaryCell = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    // (parent cell, bary corners, inside flag)
    let mut pieces: Vec<(usize, BaryCell, bool)> = Vec::new();
    for i in 0..parent.num_cells() {
        let pts = parent.cell_points(i);
        let refined = refine_bary(k, &whole, levels);
        match &region.status()[i] {
            CellStatus::Out => {
                for r in refined {
                    pieces.push((i, r, false));
                }
            }
            CellStatus::Full => {
                for r in refined {
                    pieces.push((i, r, true));
                }
            }
            CellStatus::Partial(_) => {
                for r in refined {
                    let (ins, outs) = selector_clip(region.selector(), &pts, k, &r);
                    for c in drop_slivers(&pts, k, ins) {
                        pieces.push((i, c, true));
                    }
                    for c in drop_slivers(&pts, k, outs) {
                        pieces.push((i, c, false));
                    }
                }
            }
        }
    }

    if k == 1 && !focus.is_empty() && target_h > 0.0 {
        let mut queue = std::mem::take(&mut pieces);
        while let Some((pc, baryc, inside)) = queue.pop() {
            let pts = parent.cell_points(pc);
            let a = bary_pos(&pts, &baryc[0]);
            let b = bary_pos(&pts, &baryc[1]);
            let len = (b - a).norm();
            let near = focus
                .iter()
                .any(|(x, r)| point_segment_distance(x, &a, &b) <= *r);
            if near && len > target_h {
                let m = bary_lerp(&baryc[0], &baryc[1], 0.5);
                queue.push((pc, [baryc[0], m, m], inside));
                queue.push((pc, [m, baryc[1], baryc[1]], inside));
            } else {
                pieces.push((pc, baryc, inside));
            }
        }
    }

    let mut verts: Vec<Point> = Vec::new();
    let mut vert_on_parent: Vec<(usize, [f64; 3])> = Vec::new();
    let mut ids: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut cells = Vec::with_capacity(pieces.len());
    let mut in_region = Vec::with_capacity(pieces.len());
    let mut cell_parent = Vec::with_capacity(pieces.len());
    for (pc, baryc, inside) in &pieces {
        let pts = parent.cell_points(*pc);
        let mut cell = [0usize; 3];
        for j in 0..k + 1 {
            let p = bary_pos(&pts, &baryc[j]);
            let key = quant_key(&p, scale);
            let v = *ids.entry(key).or_insert_with(|| {
                verts.push(p);
                vert_on_parent.push((*pc, baryc[j]));
                verts.len() - 1
            });
            cell[j] = v;
        }
        if k == 1 {
            cell[2] = cell[1];
        }
        cells.push(cell);
        in_region.push(*inside);
        cell_parent.push(*pc);
    }

    let mut vert_in_closure = vec![false; verts.len()];
    for (c, &inside) in cells.iter().zip(&in_region) {
        if inside {
            for j in 0..k + 1 {
                vert_in_closure[c[j]] = true;
            }
        }
    }

    ConformingMesh {
        k,
        verts,
        cells,
        in_region,
        cell_parent,
        vert_on_parent,
        vert_in_closure,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::builtin::{circle_polygon, icosphere};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn half_circle_region_measure_and_boundary() {
        let m = Arc::new(circle_polygon(64).unwrap());
        let total = m.total_measure();
        let r = make_region(
            m.clone(),
            Selector::AngleRange {
                start: 0.0,
                end: PI,
            },
        )
        .unwrap();
        assert_relative_eq!(r.measure(), total / 2.0, max_relative = 1e-12);
        assert_eq!(r.boundary().len(), 2);
    }

    #[test]
    fn angle_window_larger_than_pi() {
        let m = Arc::new(circle_polygon(64).unwrap());
        let total = m.total_measure();
        let r = make_region(
            m.clone(),
            Selector::AngleRange {
                start: 0.1,
                end: 0.1 + 1.5 * PI,
            },
        )
        .unwrap();
        assert_relative_eq!(r.measure(), 0.75 * total, max_relative = 1e-3);
        assert_eq!(r.boundary().len(), 2);
    }

    #[test]
    fn complement_measures_add_up() {
        let m = Arc::new(circle_polygon(64).unwrap());
        let r = make_region(
            m.clone(),
            Selector::AngleRange {
                start: 0.3,
                end: 2.0,
            },
        )
        .unwrap();
        let c = r.complement().unwrap();
        assert_relative_eq!(
            r.measure() + c.measure(),
            m.total_measure(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn empty_and_whole_selections_error() {
        let m = Arc::new(circle_polygon(16).unwrap());
        assert!(matches!(
            make_region(
                m.clone(),
                Selector::AngleRange {
                    start: 1.0,
                    end: 1.0
                }
            ),
            Err(Error::EmptySelection)
        ));
        assert!(matches!(
            make_region(
                m.clone(),
                Selector::AngleRange {
                    start: 0.0,
                    end: 2.0 * PI
                }
            ),
            Err(Error::SelectionIsWholeManifold)
        ));
    }

    #[test]
    fn cap_boundary_length_converges_to_circle() {
        // Geodesic cap of radius r on the unit sphere has boundary length
        // 2 pi sin r in the refinement limit.
        let r = 0.8f64;
        let mut lengths = Vec::new();
        for level in [2, 3, 4] {
            let m = Arc::new(icosphere(level).unwrap());
            let reg = make_region(
                m,
                Selector::geodesic_cap(Point::new(0.0, 0.0, 1.0), r),
            )
            .unwrap();
            lengths.push(reg.boundary_measure());
        }
        let target = 2.0 * PI * r.sin();
        let err: Vec<f64> = lengths.iter().map(|l| (l - target).abs() / target).collect();
        assert!(err[2] < err[0], "errors {err:?} do not decrease");
        assert!(err[2] < 0.01, "boundary length {} vs {}", lengths[2], target);
    }

    #[test]
    fn conforming_refinement_partitions_measure() {
        let m = Arc::new(icosphere(2).unwrap());
        let total = m.total_measure();
        let reg = make_region(
            m.clone(),
            Selector::geodesic_cap(Point::new(0.0, 0.0, 1.0), 0.7),
        )
        .unwrap();
        let conf = conforming_refinement(&reg, 1);
        let inside: f64 = conf
            .cells_with_values(&vec![0.0; conf.verts.len()], |i| conf.in_region[i])
            .iter()
            .map(|c| c.measure())
            .sum();
        let all: f64 = conf
            .cells_with_values(&vec![0.0; conf.verts.len()], |_| true)
            .iter()
            .map(|c| c.measure())
            .sum();
        assert_relative_eq!(inside, reg.measure(), max_relative = 1e-10);
        assert_relative_eq!(all, total, max_relative = 1e-10);
    }

    #[test]
    fn membership_matches_selector() {
        let m = Arc::new(circle_polygon(64).unwrap());
        let reg = make_region(
            m.clone(),
            Selector::AngleRange {
                start: 0.0,
                end: PI,
            },
        )
        .unwrap();
        // Vertex 16 sits at angle pi/2 (inside), vertex 48 at -pi/2 (outside).
        let inside = MeshPoint { cell: 16, bary: [0.5, 0.5, 0.5] };
        assert!(reg.contains(&inside));
        let outside = MeshPoint { cell: 48, bary: [0.5, 0.5, 0.5] };
        assert!(!reg.contains(&outside));
    }
}
