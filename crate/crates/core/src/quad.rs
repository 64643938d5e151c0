//! Quadrature for single and double integrals over simplicial cells.
//!
//! Double integrals with a `|x - y|^-alpha` kernel are computed with a
//! panel-clustering pair loop: well-separated pairs use tensor Gauss
//! quadrature, close pairs are split dyadically until their children
//! separate. The remaining singular core of an identical pair is summed
//! exactly: in closed form for straight segments, and by a self-similarity
//! geometric series for planar triangles (midpoint subdivision produces
//! four children that are scaled copies of the parent, so the identical
//! sub-pair contributions form a geometric series).

use crate::geometry::primitives::{
    point_segment_distance, segment_segment_distance, triangle_area, triangle_triangle_distance,
    Point,
};
use rayon::prelude::*;

/// A flat k-simplex with piecewise-linear data at its corners.
/// For k = 1 only the first two corners are meaningful.
#[derive(Clone, Copy, Debug)]
pub struct Cell {
    pub k: usize,
    pub pts: [Point; 3],
    pub vals: [f64; 3],
}

impl Cell {
    pub fn segment(a: Point, b: Point, va: f64, vb: f64) -> Self {
        Cell {
            k: 1,
            pts: [a, b, b],
            vals: [va, vb, vb],
        }
    }

    pub fn triangle(pts: [Point; 3], vals: [f64; 3]) -> Self {
        Cell { k: 2, pts, vals }
    }

    pub fn measure(&self) -> f64 {
        match self.k {
            1 => (self.pts[1] - self.pts[0]).norm(),
            _ => triangle_area(&self.pts[0], &self.pts[1], &self.pts[2]),
        }
    }

    pub fn centroid(&self) -> Point {
        match self.k {
            1 => (self.pts[0] + self.pts[1]) * 0.5,
            _ => (self.pts[0] + self.pts[1] + self.pts[2]) / 3.0,
        }
    }

    pub fn diameter(&self) -> f64 {
        match self.k {
            1 => (self.pts[1] - self.pts[0]).norm(),
            _ => {
                let a = (self.pts[1] - self.pts[0]).norm();
                let b = (self.pts[2] - self.pts[1]).norm();
                let c = (self.pts[0] - self.pts[2]).norm();
                a.max(b).max(c)
            }
        }
    }

    /// Euclidean norm of the intrinsic gradient of the linear interpolant.
    pub fn gradient_norm(&self) -> f64 {
        match self.k {
            1 => {
                let h = self.measure();
                if h == 0.0 {
                    0.0
                } else {
                    (self.vals[1] - self.vals[0]).abs() / h
                }
            }
            _ => {
                // Solve for g in the triangle plane from the two edge differences.
                let e1 = self.pts[1] - self.pts[0];
                let e2 = self.pts[2] - self.pts[0];
                let d1 = self.vals[1] - self.vals[0];
                let d2 = self.vals[2] - self.vals[0];
                let g11 = e1.norm_squared();
                let g12 = e1.dot(&e2);
                let g22 = e2.norm_squared();
                let det = g11 * g22 - g12 * g12;
                if det <= 0.0 {
                    return 0.0;
                }
                let a = (g22 * d1 - g12 * d2) / det;
                let b = (g11 * d2 - g12 * d1) / det;
                (a * a * g11 + 2.0 * a * b * g12 + b * b * g22).sqrt()
            }
        }
    }

    pub fn subdivide(&self) -> Vec<Cell> {
        match self.k {
            1 => {
                let m = (self.pts[0] + self.pts[1]) * 0.5;
                let vm = 0.5 * (self.vals[0] + self.vals[1]);
                vec![
                    Cell::segment(self.pts[0], m, self.vals[0], vm),
                    Cell::segment(m, self.pts[1], vm, self.vals[1]),
                ]
            }
            _ => {
                let [a, b, c] = self.pts;
                let [va, vb, vc] = self.vals;
                let mab = (a + b) * 0.5;
                let mbc = (b + c) * 0.5;
                let mca = (c + a) * 0.5;
                let vab = 0.5 * (va + vb);
                let vbc = 0.5 * (vb + vc);
                let vca = 0.5 * (vc + va);
                vec![
                    Cell::triangle([a, mab, mca], [va, vab, vca]),
                    Cell::triangle([mab, b, mbc], [vab, vb, vbc]),
                    Cell::triangle([mca, mbc, c], [vca, vbc, vc]),
                    Cell::triangle([mab, mbc, mca], [vab, vbc, vca]),
                ]
            }
        }
    }

    pub fn min_distance(&self, other: &Cell) -> f64 {
        match self.k {
            1 => segment_segment_distance(&self.pts[0], &self.pts[1], &other.pts[0], &other.pts[1]),
            _ => triangle_triangle_distance(&self.pts, &other.pts),
        }
    }

    pub fn max_distance(&self, other: &Cell) -> f64 {
        let na = self.k + 1;
        let nb = other.k + 1;
        let mut d: f64 = 0.0;
        for i in 0..na {
            for j in 0..nb {
                d = d.max((self.pts[i] - other.pts[j]).norm());
            }
        }
        d
    }

    pub fn contains_distance_to_point(&self, p: &Point) -> f64 {
        match self.k {
            1 => point_segment_distance(p, &self.pts[0], &self.pts[1]),
            _ => crate::geometry::primitives::point_triangle_distance(
                p,
                &self.pts[0],
                &self.pts[1],
                &self.pts[2],
            ),
        }
    }
}

// Gauss-Legendre nodes/weights on [0, 1], orders 2..=6.
const GL2: [(f64, f64); 2] = [
    (0.21132486540518713, 0.5),
    (0.7886751345948129, 0.5),
];
const GL3: [(f64, f64); 3] = [
    (0.1127016653792583, 0.2777777777777778),
    (0.5, 0.4444444444444444),
    (0.8872983346207417, 0.2777777777777778),
];
const GL4: [(f64, f64); 4] = [
    (0.06943184420297371, 0.17392742256872692),
    (0.33000947820757187, 0.3260725774312731),
    (0.6699905217924281, 0.3260725774312731),
    (0.9305681557970262, 0.17392742256872692),
];
const GL5: [(f64, f64); 5] = [
    (0.04691007703066802, 0.11846344252809454),
    (0.23076534494715845, 0.23931433524968324),
    (0.5, 0.28444444444444444),
    (0.7692346550528415, 0.23931433524968324),
    (0.953089922969332, 0.11846344252809454),
];
const GL6: [(f64, f64); 6] = [
    (0.03376524289842399, 0.08566224618958517),
    (0.16939530676686776, 0.18038078652406930),
    (0.38069040695840156, 0.23395696728634552),
    (0.6193095930415985, 0.23395696728634552),
    (0.8306046932331322, 0.18038078652406930),
    (0.9662347571015760, 0.08566224618958517),
];

pub fn gauss_legendre_01(order: usize) -> &'static [(f64, f64)] {
    match order {
        0..=2 => &GL2,
        3 => &GL3,
        4 => &GL4,
        5 => &GL5,
        _ => &GL6,
    }
}

// Symmetric triangle rules in barycentric coordinates, weights summing to 1.
// Degree 2 (3 points).
const TRI_DEG2: [([f64; 3], f64); 3] = [
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];
// Degree 4 (6 points, Dunavant).
const TRI_DEG4: [([f64; 3], f64); 6] = [
    (
        [0.108103018168070, 0.445948490915965, 0.445948490915965],
        0.223381589678011,
    ),
    (
        [0.445948490915965, 0.108103018168070, 0.445948490915965],
        0.223381589678011,
    ),
    (
        [0.445948490915965, 0.445948490915965, 0.108103018168070],
        0.223381589678011,
    ),
    (
        [0.816847572980459, 0.091576213509771, 0.091576213509771],
        0.109951743655322,
    ),
    (
        [0.091576213509771, 0.816847572980459, 0.091576213509771],
        0.109951743655322,
    ),
    (
        [0.091576213509771, 0.091576213509771, 0.816847572980459],
        0.109951743655322,
    ),
];
// Degree 5 (7 points, Dunavant).
const TRI_DEG5: [([f64; 3], f64); 7] = [
    ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
    (
        [0.059715871789770, 0.470142064105115, 0.470142064105115],
        0.132394152788506,
    ),
    (
        [0.470142064105115, 0.059715871789770, 0.470142064105115],
        0.132394152788506,
    ),
    (
        [0.470142064105115, 0.470142064105115, 0.059715871789770],
        0.132394152788506,
    ),
    (
        [0.797426985353087, 0.101286507323456, 0.101286507323456],
        0.125939180544827,
    ),
    (
        [0.101286507323456, 0.797426985353087, 0.101286507323456],
        0.125939180544827,
    ),
    (
        [0.101286507323456, 0.101286507323456, 0.797426985353087],
        0.125939180544827,
    ),
];

pub fn triangle_rule(order: usize) -> &'static [([f64; 3], f64)] {
    match order {
        0..=2 => &TRI_DEG2,
        3 => &TRI_DEG4,
        _ => &TRI_DEG5,
    }
}

/// Quadrature node on a cell: position, value, weight (includes measure).
#[derive(Clone, Copy)]
pub struct QuadNode {
    pub pos: Point,
    pub val: f64,
    pub w: f64,
}

pub fn cell_nodes(cell: &Cell, order: usize) -> Vec<QuadNode> {
    let m = cell.measure();
    let mut out = Vec::new();
    match cell.k {
        1 => {
            for &(t, w) in gauss_legendre_01(order) {
                out.push(QuadNode {
                    pos: cell.pts[0] + (cell.pts[1] - cell.pts[0]) * t,
                    val: cell.vals[0] + (cell.vals[1] - cell.vals[0]) * t,
                    w: w * m,
                });
            }
        }
        _ => {
            for &(b, w) in triangle_rule(order) {
                out.push(QuadNode {
                    pos: cell.pts[0] * b[0] + cell.pts[1] * b[1] + cell.pts[2] * b[2],
                    val: cell.vals[0] * b[0] + cell.vals[1] * b[1] + cell.vals[2] * b[2],
                    w: w * m,
                });
            }
        }
    }
    out
}

/// Settings for the double-integral pair loop.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct QuadratureSpec {
    /// Gauss points per direction (segments) / rule selector (triangles)
    /// for well-separated pairs.
    pub far_order: usize,
    /// Dyadic subdivision depth for identical/adjacent pairs.
    pub near_refinement: u32,
    /// A pair is "far" when the centroid distance is at least this multiple
    /// of the larger cell diameter.
    pub separation_ratio: f64,
    /// Run the pair loop on a single thread. The parallel reduction is
    /// deterministic either way; this is a bit-reproducibility escape hatch.
    pub sequential: bool,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            far_order: 3,
            near_refinement: 6,
            separation_ratio: 2.0,
            sequential: false,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> crate::error::Result<()> {
        if self.far_order < 2 {
            return Err(crate::error::Error::InvalidParameter {
                name: "far_order".into(),
                reason: "must be >= 2".into(),
            });
        }
        if self.near_refinement < 2 {
            return Err(crate::error::Error::InvalidParameter {
                name: "near_refinement".into(),
                reason: "must be >= 2".into(),
            });
        }
        if self.separation_ratio < 1.0 {
            return Err(crate::error::Error::InvalidParameter {
                name: "separation_ratio".into(),
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Restriction of a pair kernel to a distance range.
#[derive(Clone, Copy, Debug)]
pub enum DistRange {
    All,
    /// |x - y| < t
    Below(f64),
    /// |x - y| >= t
    AtLeast(f64),
}

impl DistRange {
    fn admits(&self, d: f64) -> bool {
        match *self {
            DistRange::All => true,
            DistRange::Below(t) => d < t,
            DistRange::AtLeast(t) => d >= t,
        }
    }

    /// Whether a pair with point distances in [dmin, dmax] straddles the cut.
    fn straddles(&self, dmin: f64, dmax: f64) -> bool {
        match *self {
            DistRange::All => false,
            DistRange::Below(t) | DistRange::AtLeast(t) => dmin < t && dmax >= t,
        }
    }
}

/// Integrand of the pair loop.
#[derive(Clone, Copy, Debug)]
pub enum PairKernel {
    /// |u(x) - u(y)|^p / |x - y|^alpha
    DiffPow { p: f64, alpha: f64 },
    /// |u(x)|^p / |x - y|^alpha restricted to a distance range
    /// (x taken from the value-carrying cells).
    SourcePow { p: f64, alpha: f64, range: DistRange },
}

impl PairKernel {
    fn range(&self) -> DistRange {
        match *self {
            PairKernel::DiffPow { .. } => DistRange::All,
            PairKernel::SourcePow { range, .. } => range,
        }
    }
}

fn pow_abs(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p == 4.0 {
        let x2 = x * x;
        x2 * x2
    } else if p == 1.0 {
        x.abs()
    } else {
        x.abs().powf(p)
    }
}

struct PairCtx {
    kernel: PairKernel,
    spec: QuadratureSpec,
}

impl PairCtx {
    fn far(&self, a: &Cell, b: &Cell) -> bool {
        let d = (a.centroid() - b.centroid()).norm();
        d >= self.spec.separation_ratio * a.diameter().max(b.diameter())
    }

    /// Tensor Gauss evaluation of one ordered pair (x in a, y in b).
    fn gauss_pair(&self, a: &Cell, b: &Cell, order_offset: usize) -> f64 {
        let na = cell_nodes(a, self.spec.far_order);
        let nb = cell_nodes(b, self.spec.far_order + order_offset);
        let range = self.kernel.range();
        let mut sum = 0.0;
        match self.kernel {
            PairKernel::DiffPow { p, alpha } => {
                for qa in &na {
                    for qb in &nb {
                        let d = (qa.pos - qb.pos).norm();
                        if d == 0.0 {
                            continue;
                        }
                        let num = pow_abs(qa.val - qb.val, p);
                        if num != 0.0 {
                            sum += qa.w * qb.w * num / d.powf(alpha);
                        }
                    }
                }
            }
            PairKernel::SourcePow { p, alpha, .. } => {
                for qa in &na {
                    let fx = pow_abs(qa.val, p);
                    if fx == 0.0 {
                        continue;
                    }
                    for qb in &nb {
                        let d = (qa.pos - qb.pos).norm();
                        if d == 0.0 || !range.admits(d) {
                            continue;
                        }
                        sum += qa.w * qb.w * fx / d.powf(alpha);
                    }
                }
            }
        }
        sum
    }

    /// Ordered-pair integral over distinct cells a x b.
    fn pair_rec(&self, a: &Cell, b: &Cell, depth: u32) -> f64 {
        if a.measure() == 0.0 || b.measure() == 0.0 {
            return 0.0;
        }
        let needs_cut_refine = self
            .kernel
            .range()
            .straddles(a.min_distance(b), a.max_distance(b));
        if (self.far(a, b) && !needs_cut_refine) || depth == 0 {
            return self.gauss_pair(a, b, 0);
        }
        let ca = a.subdivide();
        let cb = b.subdivide();
        let mut sum = 0.0;
        for x in &ca {
            for y in &cb {
                sum += self.pair_rec(x, y, depth - 1);
            }
        }
        sum
    }

    /// Ordered-pair integral over an identical pair a x a.
    fn identical(&self, a: &Cell, depth: u32) -> f64 {
        if a.measure() == 0.0 {
            return 0.0;
        }
        match self.kernel {
            PairKernel::DiffPow { p, alpha } => {
                if a.k == 1 {
                    // Straight segment with linear data: closed form.
                    // I = |dv|^p h^(2-alpha) * 2 / ((e+1)(e+2)), e = p - alpha.
                    let h = a.measure();
                    let dv = (a.vals[1] - a.vals[0]).abs();
                    if dv == 0.0 {
                        return 0.0;
                    }
                    let e = p - alpha;
                    debug_assert!(e > -1.0, "kernel not integrable on the diagonal");
                    pow_abs(dv, p) * h.powf(2.0 - alpha) * 2.0 / ((e + 1.0) * (e + 2.0))
                } else {
                    // Self-similarity: the four midpoint children are scaled
                    // copies of the parent carrying the same gradient, so
                    // I(T) = J / (1 - 4 * 2^-(2k + p - alpha)) with J the sum
                    // over distinct child pairs.
                    let children = a.subdivide();
                    let mut j_sum = 0.0;
                    for (i, x) in children.iter().enumerate() {
                        for (jj, y) in children.iter().enumerate() {
                            if i != jj {
                                j_sum += self.pair_rec(x, y, depth.saturating_sub(1));
                            }
                        }
                    }
                    let factor = 4.0 * 2f64.powf(-(4.0 + p - alpha));
                    debug_assert!(factor < 1.0, "diagonal series diverges");
                    j_sum / (1.0 - factor)
                }
            }
            PairKernel::SourcePow { .. } => {
                if depth == 0 {
                    // Offset the orders of the two factors so tensor nodes
                    // never coincide.
                    return self.gauss_pair(a, a, 1);
                }
                let children = a.subdivide();
                let mut sum = 0.0;
                for (i, x) in children.iter().enumerate() {
                    for (jj, y) in children.iter().enumerate() {
                        if i == jj {
                            sum += self.identical(x, depth - 1);
                        } else {
                            sum += self.pair_rec(x, y, depth - 1);
                        }
                    }
                }
                sum
            }
        }
    }
}

/// Ordered double integral of `kernel` over `cells x cells`.
pub fn double_integral(cells: &[Cell], kernel: PairKernel, spec: &QuadratureSpec) -> f64 {
    let ctx = PairCtx {
        kernel,
        spec: *spec,
    };
    let depth = spec.near_refinement;
    let row = |i: usize| -> f64 {
        let mut sum = ctx.identical(&cells[i], depth);
        for j in (i + 1)..cells.len() {
            let v = ctx.pair_rec(&cells[i], &cells[j], depth);
            // Symmetric kernels are accumulated once with factor 2; for the
            // asymmetric SourcePow kernel both orders are evaluated.
            sum += match kernel {
                PairKernel::DiffPow { .. } => 2.0 * v,
                PairKernel::SourcePow { .. } => v + ctx.pair_rec(&cells[j], &cells[i], depth),
            };
        }
        sum
    };
    let partials: Vec<f64> = if spec.sequential {
        (0..cells.len()).map(row).collect()
    } else {
        (0..cells.len()).into_par_iter().map(row).collect()
    };
    partials.iter().sum()
}

/// Ordered double integral of `kernel` over `xs x ys` (disjoint families;
/// values are taken from `xs`).
pub fn cross_integral(xs: &[Cell], ys: &[Cell], kernel: PairKernel, spec: &QuadratureSpec) -> f64 {
    let ctx = PairCtx {
        kernel,
        spec: *spec,
    };
    let depth = spec.near_refinement;
    let row = |i: usize| -> f64 {
        ys.iter().map(|y| ctx.pair_rec(&xs[i], y, depth)).sum()
    };
    let partials: Vec<f64> = if spec.sequential {
        (0..xs.len()).map(row).collect()
    } else {
        (0..xs.len()).into_par_iter().map(row).collect()
    };
    partials.iter().sum()
}

/// Single integral of |u|^p over the cells, exact for even integer p on
/// piecewise-linear data.
pub fn lp_integral(cells: &[Cell], p: f64, order: usize) -> f64 {
    let ord = order.max(match p as usize {
        0..=2 => 2,
        3..=4 => 3,
        _ => 4,
    });
    cells
        .iter()
        .map(|c| {
            cell_nodes(c, ord)
                .iter()
                .map(|q| q.w * pow_abs(q.val, p))
                .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_segment_cells(n: usize, f: impl Fn(f64) -> f64) -> Vec<Cell> {
        (0..n)
            .map(|i| {
                let a = i as f64 / n as f64;
                let b = (i + 1) as f64 / n as f64;
                Cell::segment(
                    Point::new(a, 0.0, 0.0),
                    Point::new(b, 0.0, 0.0),
                    f(a),
                    f(b),
                )
            })
            .collect()
    }

    #[test]
    fn lp_constant_field() {
        let cells = unit_segment_cells(7, |_| 3.0);
        assert_relative_eq!(lp_integral(&cells, 2.0, 3), 9.0, max_relative = 1e-14);
    }

    #[test]
    fn lp_linear_field_exact() {
        // int_0^1 x^2 dx = 1/3
        let cells = unit_segment_cells(4, |x| x);
        assert_relative_eq!(lp_integral(&cells, 2.0, 3), 1.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn seminorm_constant_is_exactly_zero() {
        let cells = unit_segment_cells(8, |_| 5.0);
        let v = double_integral(
            &cells,
            PairKernel::DiffPow { p: 2.0, alpha: 2.0 },
            &QuadratureSpec::default(),
        );
        assert_eq!(v, 0.0);
    }

    #[test]
    fn identity_on_unit_interval_closed_form() {
        // u(x) = x on [0,1], p = 2, alpha = 1 + 2s:
        // I = int int |x-y|^(1-2s) = 2 / ((2-2s)(3-2s)).
        for &s in &[0.25, 0.5, 0.75] {
            let alpha = 1.0 + 2.0 * s;
            let expect = 2.0 / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s));
            for n in [1usize, 3, 8] {
                let cells = unit_segment_cells(n, |x| x);
                let v = double_integral(
                    &cells,
                    PairKernel::DiffPow { p: 2.0, alpha },
                    &QuadratureSpec::default(),
                );
                assert_relative_eq!(v, expect, max_relative = 2e-3);
            }
        }
    }

    #[test]
    fn sequential_matches_parallel_bitwise() {
        let cells = unit_segment_cells(16, |x| (3.0 * x).sin());
        let mut spec = QuadratureSpec::default();
        let a = double_integral(&cells, PairKernel::DiffPow { p: 2.0, alpha: 2.0 }, &spec);
        spec.sequential = true;
        let b = double_integral(&cells, PairKernel::DiffPow { p: 2.0, alpha: 2.0 }, &spec);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn triangle_rule_weights_sum_to_one() {
        for order in [2, 3, 4] {
            let s: f64 = triangle_rule(order).iter().map(|r| r.1).sum();
            assert_relative_eq!(s, 1.0, max_relative = 1e-12);
        }
    }
}
