//! Bi-Lipschitz charts on metric balls of the manifold, measured chart
//! constants, the admissible ball radius, boundary coverings, and the
//! induced partition of unity.

use std::sync::Arc;

use nalgebra::{Matrix2, Matrix3};

use crate::error::{Error, Result};
use crate::geometry::mesh::{MeshPoint, SimplicialManifold};
use crate::geometry::primitives::Point;
use crate::geometry::region::{ConformingMesh, Region};

/// Measured Lipschitz and Jacobian bounds of a chart.
#[derive(Clone, Copy, Debug)]
pub struct ChartConstants {
    /// Lipschitz bound of the parameterization (domain to manifold).
    pub lip_fwd: f64,
    /// Lipschitz bound of its inverse.
    pub lip_inv: f64,
    pub jac_min: f64,
    pub jac_max: f64,
}

impl ChartConstants {
    /// Defensive invariants every bi-Lipschitz parameterization satisfies.
    pub fn check(&self, k: usize) -> Result<()> {
        let ok = self.lip_fwd > 0.0
            && self.lip_inv > 0.0
            && self.lip_fwd * self.lip_inv >= 1.0 - 1e-12
            && self.jac_min > 0.0
            && self.jac_min <= self.jac_max * (1.0 + 1e-12)
            && self.jac_max <= self.lip_fwd.powi(k as i32) * (1.0 + 1e-9);
        if ok {
            Ok(())
        } else {
            Err(Error::DomainMismatch {
                reason: format!("inconsistent chart constants {self:?}"),
            })
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ChartSeg {
    pub cell: usize,
    /// Barycentric coordinates of the endpoints in the parent simplex.
    pub b: [[f64; 3]; 2],
    pub p: [Point; 2],
}

#[derive(Clone, Debug)]
pub(crate) struct ChartTri {
    pub cell: usize,
    pub b: [[f64; 3]; 3],
    pub p: [Point; 3],
    pub uv: [[f64; 2]; 3],
}

#[derive(Clone, Debug)]
pub(crate) enum ChartMap {
    /// Arc-length parameterization of the polyline arc inside the ball;
    /// `ts[i]..ts[i + 1]` is the parameter interval of `segs[i]`, zero at
    /// the chart center.
    Curve { ts: Vec<f64>, segs: Vec<ChartSeg> },
    /// Orthogonal projection onto a fitted plane, inverted per triangle.
    Surface { tris: Vec<ChartTri> },
}

/// A bi-Lipschitz parameterization of the part of the manifold inside the
/// metric ball B(center, eps).
#[derive(Clone, Debug)]
pub struct Chart {
    pub center: Point,
    pub center_cell: usize,
    pub eps: f64,
    pub(crate) map: ChartMap,
}

impl Chart {
    pub fn intrinsic_dim(&self) -> usize {
        match self.map {
            ChartMap::Curve { .. } => 1,
            ChartMap::Surface { .. } => 2,
        }
    }

    /// Simplices of the parent mesh that the chart covers.
    pub fn patch_cells(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = match &self.map {
            ChartMap::Curve { segs, .. } => segs.iter().map(|s| s.cell).collect(),
            ChartMap::Surface { tris } => tris.iter().map(|t| t.cell).collect(),
        };
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Area (length) of the parameterized patch.
    pub fn patch_measure(&self) -> f64 {
        match &self.map {
            ChartMap::Curve { segs, .. } => {
                segs.iter().map(|s| (s.p[1] - s.p[0]).norm()).sum()
            }
            ChartMap::Surface { tris } => tris
                .iter()
                .map(|t| crate::geometry::primitives::triangle_area(&t.p[0], &t.p[1], &t.p[2]))
                .sum(),
        }
    }

    /// Parameter-domain range: for curves the arc-length interval, for
    /// surfaces the bounding radius of the projected patch.
    pub fn domain_radius(&self) -> f64 {
        match &self.map {
            ChartMap::Curve { ts, .. } => ts[0].abs().max(ts[ts.len() - 1].abs()),
            ChartMap::Surface { tris } => tris
                .iter()
                .flat_map(|t| t.uv.iter())
                .map(|uv| (uv[0] * uv[0] + uv[1] * uv[1]).sqrt())
                .fold(0.0, f64::max),
        }
    }

    /// Evaluates the parameterization; `None` outside the patch domain.
    pub fn forward(&self, u: &[f64; 2]) -> Option<(Point, MeshPoint)> {
        match &self.map {
            ChartMap::Curve { ts, segs } => {
                let t = u[0];
                if t < ts[0] - 1e-12 || t > ts[ts.len() - 1] + 1e-12 {
                    return None;
                }
                let i = match ts.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
                    Ok(i) => i.min(segs.len() - 1),
                    Err(i) => i.saturating_sub(1).min(segs.len() - 1),
                };
                let seg = &segs[i];
                let len = ts[i + 1] - ts[i];
                let s = ((t - ts[i]) / len).clamp(0.0, 1.0);
                let b = [
                    seg.b[0][0] * (1.0 - s) + seg.b[1][0] * s,
                    seg.b[0][1] * (1.0 - s) + seg.b[1][1] * s,
                    seg.b[0][2] * (1.0 - s) + seg.b[1][2] * s,
                ];
                let p = seg.p[0] * (1.0 - s) + seg.p[1] * s;
                Some((p, MeshPoint { cell: seg.cell, bary: b }))
            }
            ChartMap::Surface { tris } => {
                const TOL: f64 = 1e-10;
                for t in tris {
                    let (l1, l2) = match uv_bary(&t.uv, u) {
                        Some(l) => l,
                        None => continue,
                    };
                    let l0 = 1.0 - l1 - l2;
                    if l0 >= -TOL && l1 >= -TOL && l2 >= -TOL {
                        let b = [
                            l0 * t.b[0][0] + l1 * t.b[1][0] + l2 * t.b[2][0],
                            l0 * t.b[0][1] + l1 * t.b[1][1] + l2 * t.b[2][1],
                            l0 * t.b[0][2] + l1 * t.b[1][2] + l2 * t.b[2][2],
                        ];
                        let p = t.p[0] * l0 + t.p[1] * l1 + t.p[2] * l2;
                        return Some((p, MeshPoint { cell: t.cell, bary: b }));
                    }
                }
                None
            }
        }
    }

    /// Chart coordinates of an ambient point lying on the given simplex;
    /// `None` if the simplex is not part of the patch or the point misses it.
    pub fn inverse(&self, cell: usize, pos: &Point) -> Option<[f64; 2]> {
        match &self.map {
            ChartMap::Curve { ts, segs } => {
                let mut best: Option<(f64, f64)> = None;
                for (i, seg) in segs.iter().enumerate() {
                    if seg.cell != cell {
                        continue;
                    }
                    let d = seg.p[1] - seg.p[0];
                    let len2 = d.norm_squared();
                    if len2 == 0.0 {
                        continue;
                    }
                    let s = ((pos - seg.p[0]).dot(&d) / len2).clamp(0.0, 1.0);
                    let proj = seg.p[0] + d * s;
                    let resid = (proj - pos).norm();
                    let t = ts[i] + s * (ts[i + 1] - ts[i]);
                    if best.map_or(true, |(r, _)| resid < r) {
                        best = Some((resid, t));
                    }
                }
                let (resid, t) = best?;
                if resid > 1e-9 * self.eps.max(1e-300) {
                    return None;
                }
                Some([t, 0.0])
            }
            ChartMap::Surface { tris } => {
                for t in tris {
                    if t.cell != cell {
                        continue;
                    }
                    let (l1, l2) = tri3d_bary(&t.p, pos)?;
                    let l0 = 1.0 - l1 - l2;
                    const TOL: f64 = 1e-9;
                    if l0 < -TOL || l1 < -TOL || l2 < -TOL {
                        continue;
                    }
                    return Some([
                        l0 * t.uv[0][0] + l1 * t.uv[1][0] + l2 * t.uv[2][0],
                        l0 * t.uv[0][1] + l1 * t.uv[1][1] + l2 * t.uv[2][1],
                    ]);
                }
                None
            }
        }
    }

    /// Transported chart of the dilated manifold: identical parameter
    /// domain, ambient data scaled by `lambda`.
    pub fn dilate(&self, lambda: f64) -> Result<Chart> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter {
                name: "lambda".into(),
                reason: format!("dilation factor must be positive and finite, got {lambda}"),
            });
        }
        let map = match &self.map {
            ChartMap::Curve { ts, segs } => ChartMap::Curve {
                ts: ts.clone(),
                segs: segs
                    .iter()
                    .map(|s| ChartSeg {
                        cell: s.cell,
                        b: s.b,
                        p: [s.p[0] * lambda, s.p[1] * lambda],
                    })
                    .collect(),
            },
            ChartMap::Surface { tris } => ChartMap::Surface {
                tris: tris
                    .iter()
                    .map(|t| ChartTri {
                        cell: t.cell,
                        b: t.b,
                        p: [t.p[0] * lambda, t.p[1] * lambda, t.p[2] * lambda],
                        uv: t.uv,
                    })
                    .collect(),
            },
        };
        Ok(Chart {
            center: self.center * lambda,
            center_cell: self.center_cell,
            eps: self.eps * lambda,
            map,
        })
    }

    /// Dense parameter/position samples: simplex corners, edge midpoints,
    /// centroids.
    pub fn samples(&self) -> Vec<([f64; 2], Point)> {
        let mut out = Vec::new();
        match &self.map {
            ChartMap::Curve { ts, segs } => {
                for (i, seg) in segs.iter().enumerate() {
                    out.push(([ts[i], 0.0], seg.p[0]));
                    out.push(([(ts[i] + ts[i + 1]) / 2.0, 0.0], (seg.p[0] + seg.p[1]) * 0.5));
                }
                let last = segs.len() - 1;
                out.push(([ts[last + 1], 0.0], segs[last].p[1]));
            }
            ChartMap::Surface { tris } => {
                for t in tris {
                    for j in 0..3 {
                        out.push((t.uv[j], t.p[j]));
                        let l = (j + 1) % 3;
                        out.push((
                            [
                                (t.uv[j][0] + t.uv[l][0]) / 2.0,
                                (t.uv[j][1] + t.uv[l][1]) / 2.0,
                            ],
                            (t.p[j] + t.p[l]) * 0.5,
                        ));
                    }
                    out.push((
                        [
                            (t.uv[0][0] + t.uv[1][0] + t.uv[2][0]) / 3.0,
                            (t.uv[0][1] + t.uv[1][1] + t.uv[2][1]) / 3.0,
                        ],
                        (t.p[0] + t.p[1] + t.p[2]) / 3.0,
                    ));
                }
            }
        }
        out
    }
}

fn uv_bary(uv: &[[f64; 2]; 3], q: &[f64; 2]) -> Option<(f64, f64)> {
    let (ax, ay) = (uv[0][0], uv[0][1]);
    let (bx, by) = (uv[1][0] - ax, uv[1][1] - ay);
    let (cx, cy) = (uv[2][0] - ax, uv[2][1] - ay);
    let det = bx * cy - cx * by;
    if det.abs() < 1e-30 {
        return None;
    }
    let (qx, qy) = (q[0] - ax, q[1] - ay);
    Some(((qx * cy - cx * qy) / det, (bx * qy - qx * by) / det))
}

fn tri3d_bary(p: &[Point; 3], q: &Point) -> Option<(f64, f64)> {
    let e1 = p[1] - p[0];
    let e2 = p[2] - p[0];
    let d = q - p[0];
    let (g11, g12, g22) = (e1.dot(&e1), e1.dot(&e2), e2.dot(&e2));
    let det = g11 * g22 - g12 * g12;
    if det.abs() < 1e-30 {
        return None;
    }
    let (r1, r2) = (d.dot(&e1), d.dot(&e2));
    Some(((g22 * r1 - g12 * r2) / det, (g11 * r2 - g12 * r1) / det))
}

/// Measures Lipschitz and Jacobian constants: exact per-simplex values
/// joined with a dense pairwise sample sweep.
pub fn estimate_constants(chart: &Chart) -> Result<ChartConstants> {
    let k = chart.intrinsic_dim();
    let mut lip_fwd: f64 = 0.0;
    let mut lip_inv: f64 = 0.0;
    let mut jac_min = f64::INFINITY;
    let mut jac_max: f64 = 0.0;

    match &chart.map {
        ChartMap::Curve { ts, segs } => {
            for (i, seg) in segs.iter().enumerate() {
                let dt = ts[i + 1] - ts[i];
                let chord = (seg.p[1] - seg.p[0]).norm();
                let speed = chord / dt;
                lip_fwd = lip_fwd.max(speed);
                lip_inv = lip_inv.max(dt / chord);
                jac_min = jac_min.min(speed);
                jac_max = jac_max.max(speed);
            }
        }
        ChartMap::Surface { tris } => {
            for t in tris {
                let u = Matrix2::new(
                    t.uv[1][0] - t.uv[0][0],
                    t.uv[2][0] - t.uv[0][0],
                    t.uv[1][1] - t.uv[0][1],
                    t.uv[2][1] - t.uv[0][1],
                );
                let uinv = u.try_inverse().ok_or_else(|| Error::DomainMismatch {
                    reason: "degenerate projected triangle in chart".into(),
                })?;
                let (e1, e2) = (t.p[1] - t.p[0], t.p[2] - t.p[0]);
                let a1 = e1 * uinv[(0, 0)] + e2 * uinv[(1, 0)];
                let a2 = e1 * uinv[(0, 1)] + e2 * uinv[(1, 1)];
                let (g11, g12, g22) = (a1.dot(&a1), a1.dot(&a2), a2.dot(&a2));
                let tr = g11 + g22;
                let det = (g11 * g22 - g12 * g12).max(0.0);
                let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
                let smax = ((tr + disc) / 2.0).sqrt();
                let smin = ((tr - disc) / 2.0).max(0.0).sqrt();
                if smin <= 0.0 {
                    return Err(Error::DomainMismatch {
                        reason: "rank-deficient chart differential".into(),
                    });
                }
                lip_fwd = lip_fwd.max(smax);
                lip_inv = lip_inv.max(1.0 / smin);
                jac_min = jac_min.min(det.sqrt());
                jac_max = jac_max.max(det.sqrt());
            }
        }
    }

    // Pairwise sweep catches ratios across simplex boundaries.
    let samples = chart.samples();
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let du = {
                let a = &samples[i].0;
                let b = &samples[j].0;
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
            };
            let dp = (samples[i].1 - samples[j].1).norm();
            if du < 1e-14 || dp < 1e-14 {
                continue;
            }
            lip_fwd = lip_fwd.max(dp / du);
            lip_inv = lip_inv.max(du / dp);
        }
    }

    let c = ChartConstants {
        lip_fwd,
        lip_inv,
        jac_min,
        jac_max,
    };
    c.check(k)?;
    Ok(c)
}

/// Builds the chart over B(center, eps). The patch must be a single
/// connected piece of the ball intersection, with the rest of the manifold
/// staying outside the ball.
pub fn build_chart(
    mesh: &Arc<SimplicialManifold>,
    center: &MeshPoint,
    eps: f64,
) -> Result<Chart> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter {
            name: "eps".into(),
            reason: format!("ball radius must be positive, got {eps}"),
        });
    }
    let x = mesh.position(center);
    match mesh.intrinsic_dim() {
        1 => build_curve_chart(mesh, center, &x, eps),
        _ => build_surface_chart(mesh, center, &x, eps),
    }
}

pub fn build_chart_at_vertex(
    mesh: &Arc<SimplicialManifold>,
    v: usize,
    eps: f64,
) -> Result<Chart> {
    build_chart(mesh, &MeshPoint::vertex(mesh, v), eps)
}

/// First crossing of |p(s) - x| = eps on the parent segment [a, b], moving
/// from inside the ball at `s0` toward `s0 + dir`.
fn ball_exit(a: &Point, b: &Point, x: &Point, eps: f64, s0: f64, dir: f64) -> Option<f64> {
    let d = b - a;
    let w = a - x;
    let qa = d.norm_squared();
    let qb = 2.0 * w.dot(&d);
    let qc = w.norm_squared() - eps * eps;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let root = if dir > 0.0 {
        (-qb + sq) / (2.0 * qa)
    } else {
        (-qb - sq) / (2.0 * qa)
    };
    if dir > 0.0 && root > s0 && root <= 1.0 {
        Some(root)
    } else if dir < 0.0 && root < s0 && root >= 0.0 {
        Some(root)
    } else {
        None
    }
}

fn curve_bary(s: f64) -> [f64; 3] {
    [1.0 - s, s, s]
}

fn build_curve_chart(
    mesh: &Arc<SimplicialManifold>,
    center: &MeshPoint,
    x: &Point,
    eps: f64,
) -> Result<Chart> {
    let c0 = center.cell;
    let s0 = center.bary[1];

    // (cell, s interval) pieces in traversal order.
    let walk = |dir: f64| -> Result<Vec<(usize, f64, f64)>> {
        let mut out = Vec::new();
        let mut cell = c0;
        let mut prev = usize::MAX;
        let mut entry = s0;
        loop {
            let ids = mesh.cell_vertex_ids(cell);
            let (a, b) = (mesh.vertices()[ids[0]], mesh.vertices()[ids[1]]);
            if let Some(exit) = ball_exit(&a, &b, x, eps, entry, dir) {
                out.push((cell, entry, exit));
                return Ok(out);
            }
            let bound = if dir > 0.0 { 1.0 } else { 0.0 };
            out.push((cell, entry, bound));
            let shared = if dir > 0.0 { ids[1] } else { ids[0] };
            let next = mesh
                .neighbors(cell)
                .iter()
                .copied()
                .find(|&n| {
                    n != cell
                        && n != prev
                        && mesh.cell_vertex_ids(n).iter().any(|&v| v == shared)
                })
                .ok_or_else(|| Error::ChartBuild {
                    simplex: cell,
                    reason: "traversal left the loop".into(),
                })?;
            prev = cell;
            cell = next;
            entry = {
                let nids = mesh.cell_vertex_ids(cell);
                if dir > 0.0 {
                    if nids[0] == shared { 0.0 } else { 1.0 }
                } else if nids[1] == shared {
                    1.0
                } else {
                    0.0
                }
            };
            if out.len() > mesh.num_cells() {
                return Err(Error::ChartBuild {
                    simplex: c0,
                    reason: "ball contains the entire loop".into(),
                });
            }
        }
    };

    let fwd = walk(1.0)?;
    let bwd = walk(-1.0)?;

    let mut segs: Vec<ChartSeg> = Vec::new();
    for &(cell, e, s) in bwd.iter().rev() {
        let ids = mesh.cell_vertex_ids(cell);
        let (a, b) = (mesh.vertices()[ids[0]], mesh.vertices()[ids[1]]);
        let lerp = |s: f64| a * (1.0 - s) + b * s;
        segs.push(ChartSeg {
            cell,
            b: [curve_bary(s), curve_bary(e)],
            p: [lerp(s), lerp(e)],
        });
    }
    for &(cell, e, s) in &fwd {
        let ids = mesh.cell_vertex_ids(cell);
        let (a, b) = (mesh.vertices()[ids[0]], mesh.vertices()[ids[1]]);
        let lerp = |s: f64| a * (1.0 - s) + b * s;
        segs.push(ChartSeg {
            cell,
            b: [curve_bary(e), curve_bary(s)],
            p: [lerp(e), lerp(s)],
        });
    }
    segs.retain(|s| (s.p[1] - s.p[0]).norm() > 1e-14 * eps);

    // Arc-length parameters, zero at the center.
    let back_len: f64 = bwd
        .iter()
        .map(|&(cell, e, s)| {
            let ids = mesh.cell_vertex_ids(cell);
            (mesh.vertices()[ids[1]] - mesh.vertices()[ids[0]]).norm() * (e - s).abs()
        })
        .sum();
    let mut ts = Vec::with_capacity(segs.len() + 1);
    let mut acc = -back_len;
    ts.push(acc);
    for seg in &segs {
        acc += (seg.p[1] - seg.p[0]).norm();
        ts.push(acc);
    }

    // Any simplex not in the arc must stay outside the ball.
    let touched: std::collections::HashSet<usize> = segs.iter().map(|s| s.cell).collect();
    for c in 0..mesh.num_cells() {
        if touched.contains(&c) {
            continue;
        }
        let cell = mesh.cell_with_values(c, None);
        if cell.contains_distance_to_point(x) < eps * (1.0 - 1e-12) {
            return Err(Error::ChartBuild {
                simplex: c,
                reason: "a distant part of the manifold enters the ball".into(),
            });
        }
    }

    Ok(Chart {
        center: *x,
        center_cell: c0,
        eps,
        map: ChartMap::Curve { ts, segs },
    })
}

/// Lift gradient over the fitted plane must stay below this bound; the
/// corresponding minimum cosine against the plane normal is 1/sqrt(1 + G^2).
const MAX_LIFT_GRADIENT: f64 = 10.0;

fn build_surface_chart(
    mesh: &Arc<SimplicialManifold>,
    center: &MeshPoint,
    x: &Point,
    eps: f64,
) -> Result<Chart> {
    // Simplices meeting the ball, split into connected components.
    let in_ball: Vec<bool> = (0..mesh.num_cells())
        .map(|c| {
            mesh.cell_with_values(c, None)
                .contains_distance_to_point(x)
                < eps * (1.0 - 1e-12)
        })
        .collect();
    if !in_ball[center.cell] {
        return Err(Error::ChartBuild {
            simplex: center.cell,
            reason: "center simplex misses its own ball".into(),
        });
    }
    let mut comp = vec![false; mesh.num_cells()];
    let mut stack = vec![center.cell];
    comp[center.cell] = true;
    while let Some(c) = stack.pop() {
        for &n in mesh.neighbors(c) {
            if n != usize::MAX && in_ball[n] && !comp[n] {
                comp[n] = true;
                stack.push(n);
            }
        }
    }
    if let Some(stray) = (0..mesh.num_cells()).find(|&c| in_ball[c] && !comp[c]) {
        return Err(Error::ChartBuild {
            simplex: stray,
            reason: "a distant part of the manifold enters the ball".into(),
        });
    }
    let patch: Vec<usize> = (0..mesh.num_cells()).filter(|&c| comp[c]).collect();

    // Least-squares plane over the patch vertices.
    let mut vids: Vec<usize> = patch
        .iter()
        .flat_map(|&c| mesh.cell_vertex_ids(c).iter().copied())
        .collect();
    vids.sort_unstable();
    vids.dedup();
    let centroid: Point =
        vids.iter().map(|&v| mesh.vertices()[v]).sum::<Point>() / vids.len() as f64;
    let mut cov = Matrix3::zeros();
    for &v in &vids {
        let d = mesh.vertices()[v] - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut min_i = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[min_i] {
            min_i = i;
        }
    }
    let mut normal: Point = eig.eigenvectors.column(min_i).into_owned();
    let reference = mesh.cell_normal(center.cell).normalize();
    if normal.dot(&reference) < 0.0 {
        normal = -normal;
    }
    normal.normalize_mut();

    // Every patch triangle must be a graph of bounded slope over the plane.
    let min_cos = 1.0 / (1.0 + MAX_LIFT_GRADIENT * MAX_LIFT_GRADIENT).sqrt();
    for &c in &patch {
        let cosine = mesh.cell_normal(c).normalize().dot(&normal);
        if cosine < min_cos {
            return Err(Error::ChartBuild {
                simplex: c,
                reason: format!(
                    "patch is not a bounded-slope graph over the fitted plane (cos {cosine:.3})"
                ),
            });
        }
    }

    // In-plane frame; center projects to the parameter origin.
    let seed = if normal.x.abs() < normal.y.abs() && normal.x.abs() < normal.z.abs() {
        Point::new(1.0, 0.0, 0.0)
    } else if normal.y.abs() < normal.z.abs() {
        Point::new(0.0, 1.0, 0.0)
    } else {
        Point::new(0.0, 0.0, 1.0)
    };
    let e1 = (seed - normal * seed.dot(&normal)).normalize();
    let e2 = normal.cross(&e1);
    let origin = x - normal * (x - centroid).dot(&normal);
    let project = |p: &Point| -> [f64; 2] {
        let d = p - origin;
        [d.dot(&e1), d.dot(&e2)]
    };

    let tris = patch
        .iter()
        .map(|&c| {
            let p = mesh.cell_points(c);
            ChartTri {
                cell: c,
                b: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                p,
                uv: [project(&p[0]), project(&p[1]), project(&p[2])],
            }
        })
        .collect();

    Ok(Chart {
        center: *x,
        center_cell: center.cell,
        eps,
        map: ChartMap::Surface { tris },
    })
}

/// Inclusion margins of the ball inside the measured Lipschitz envelopes,
/// and the round-trip residual of forward(inverse).
#[derive(Clone, Copy, Debug)]
pub struct InclusionReport {
    /// min over samples of lip_inv * |y - x| - |t(y)|.
    pub margin_domain: f64,
    /// min over samples of lip_fwd * |t(y)| - |y - x|.
    pub margin_ball: f64,
    pub roundtrip_residual: f64,
}

pub fn verify_inclusions(chart: &Chart, constants: &ChartConstants) -> InclusionReport {
    let mut margin_domain = f64::INFINITY;
    let mut margin_ball = f64::INFINITY;
    let mut roundtrip = 0.0f64;
    for (t, y) in chart.samples() {
        let r = (y - chart.center).norm();
        let rho = (t[0] * t[0] + t[1] * t[1]).sqrt();
        margin_domain = margin_domain.min(constants.lip_inv * r - rho);
        margin_ball = margin_ball.min(constants.lip_fwd * rho - r);
        if let Some((p, _)) = chart.forward(&t) {
            roundtrip = roundtrip.max((p - y).norm());
        }
    }
    InclusionReport {
        margin_domain,
        margin_ball,
        roundtrip_residual: roundtrip,
    }
}

pub const MAX_EPSILON_LEVEL: u32 = 20;

/// Largest dyadic fraction of the manifold diameter at which every vertex
/// admits a valid chart.
pub fn select_epsilon(mesh: &Arc<SimplicialManifold>) -> Result<(f64, u32)> {
    let diam = mesh.bbox_diameter();
    for level in 1..=MAX_EPSILON_LEVEL {
        let eps = diam * (2f64).powi(-(level as i32));
        let ok = (0..mesh.vertices().len())
            .all(|v| build_chart_at_vertex(mesh, v, eps).is_ok());
        if ok {
            return Ok((eps, level));
        }
    }
    Err(Error::NoValidEpsilon {
        max_level: MAX_EPSILON_LEVEL,
    })
}

/// One dilation row of the chart scaling study.
#[derive(Clone, Copy, Debug)]
pub struct ScalingRow {
    pub lambda: f64,
    pub patch_measure: f64,
    pub constants: ChartConstants,
}

#[derive(Clone, Debug)]
pub struct ScalingStudy {
    pub rows: Vec<ScalingRow>,
    /// Regression slopes of log constants against log patch measure:
    /// lip_fwd, lip_inv, jac_max, 1/jac_min.
    pub slope_lip_fwd: f64,
    pub slope_lip_inv: f64,
    pub slope_jac_max: f64,
    pub slope_inv_jac_min: f64,
}

fn regression_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// How the measured constants of one transported chart respond to dilating
/// the manifold.
pub fn scaling_study(chart: &Chart, lambdas: &[f64]) -> Result<ScalingStudy> {
    if lambdas.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "lambdas".into(),
            reason: "scaling study needs at least two dilation factors".into(),
        });
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let c = chart.dilate(lam)?;
        rows.push(ScalingRow {
            lambda: lam,
            patch_measure: c.patch_measure(),
            constants: estimate_constants(&c)?,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.patch_measure.ln()).collect();
    let take = |f: &dyn Fn(&ScalingRow) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    Ok(ScalingStudy {
        slope_lip_fwd: regression_slope(&xs, &take(&|r| r.constants.lip_fwd.ln())),
        slope_lip_inv: regression_slope(&xs, &take(&|r| r.constants.lip_inv.ln())),
        slope_jac_max: regression_slope(&xs, &take(&|r| r.constants.jac_max.ln())),
        slope_inv_jac_min: regression_slope(&xs, &take(&|r| (1.0 / r.constants.jac_min).ln())),
        rows,
    })
}

/// Ball centers covering the region boundary: a greedy radius/4 net.
#[derive(Clone, Debug)]
pub struct Cover {
    pub radius: f64,
    /// (simplex holding the center, ambient center).
    pub centers: Vec<(usize, Point)>,
}

pub fn build_cover(region: &Region, radius: f64) -> Result<Cover> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidParameter {
            name: "radius".into(),
            reason: format!("cover radius must be positive, got {radius}"),
        });
    }
    let mut samples: Vec<(usize, Point)> = Vec::new();
    for f in region.boundary() {
        if f.length() == 0.0 {
            samples.push((f.cell, f.a));
        } else {
            samples.push((f.cell, f.a));
            samples.push((f.cell, f.midpoint()));
            samples.push((f.cell, f.b));
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyTarget);
    }

    let net = radius / 4.0;
    let mut centers: Vec<(usize, Point)> = vec![samples[0]];
    loop {
        let mut far_i = None;
        let mut far_d = net;
        for (i, (_, p)) in samples.iter().enumerate() {
            let d = centers
                .iter()
                .map(|(_, c)| (p - c).norm())
                .fold(f64::INFINITY, f64::min);
            if d > far_d {
                far_d = d;
                far_i = Some(i);
            }
        }
        match far_i {
            Some(i) => centers.push(samples[i]),
            None => break,
        }
    }
    Ok(Cover { radius, centers })
}

/// Piecewise-linear partition of unity over the conforming mesh: one inner
/// cutoff over the deep interior plus one bump per cover ball. The fields
/// sum to one on the region closure.
#[derive(Clone, Debug)]
pub struct Partition {
    pub radius: f64,
    /// psi[0] is the inner cutoff; psi[i] matches cover center i - 1.
    pub psi: Vec<Vec<f64>>,
    /// Exact per-cell gradient bound of each field.
    pub lipschitz: Vec<f64>,
}

pub fn partition_of_unity(
    region: &Region,
    conf: &ConformingMesh,
    cover: &Cover,
) -> Result<Partition> {
    let eps = cover.radius;
    let n = cover.centers.len();
    let nv = conf.verts.len();

    let mut d = vec![vec![0.0f64; nv]; n + 1];
    for v in 0..nv {
        let p = &conf.verts[v];
        if conf.vert_in_closure[v] {
            let dist = region.dist_to_boundary(p);
            d[0][v] = (4.0 * dist / eps - 1.0).clamp(0.0, 1.0);
        }
        for (i, (_, c)) in cover.centers.iter().enumerate() {
            d[i + 1][v] = (1.0 - (p - c).norm() / eps).clamp(0.0, 1.0);
        }
    }

    let mut psi = vec![vec![0.0f64; nv]; n + 1];
    for v in 0..nv {
        let s: f64 = (0..n + 1).map(|i| d[i][v]).sum();
        if conf.vert_in_closure[v] && s < 0.25 - 1e-9 {
            let p = &conf.verts[v];
            return Err(Error::CoveringFailure {
                node: [p.x, p.y, p.z],
            });
        }
        let denom = s.max(0.25);
        for i in 0..n + 1 {
            psi[i][v] = d[i][v] / denom;
        }
    }

    for (i, field) in psi.iter().enumerate() {
        for (v, &val) in field.iter().enumerate() {
            if !(0.0..=1.0 + 1e-12).contains(&val) {
                return Err(Error::CutoffOutOfRange {
                    value: val,
                    vertex: v + i * 0,
                });
            }
        }
    }

    let lipschitz = psi
        .iter()
        .map(|field| {
            conf.cells_with_values(field, |_| true)
                .iter()
                .map(|c| c.gradient_norm())
                .fold(0.0, f64::max)
        })
        .collect();

    Ok(Partition {
        radius: eps,
        psi,
        lipschitz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::builtin::{circle_polygon, icosphere};
    use crate::geometry::region::{conforming_refinement, make_region, Selector};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn circle_chart_constants_and_roundtrip() {
        let m = Arc::new(circle_polygon(64).unwrap());
        let chart = build_chart_at_vertex(&m, 0, 0.3).unwrap();
        let c = estimate_constants(&chart).unwrap();
        // Arc-length parameterization: unit speed per segment, inverse
        // stretched by arc/chord across corners.
        assert_relative_eq!(c.lip_fwd, 1.0, epsilon = 1e-12);
        assert!(c.lip_inv >= 1.0 && c.lip_inv < 1.05);
        assert_relative_eq!(c.jac_max, 1.0, epsilon = 1e-12);

        let rep = verify_inclusions(&chart, &c);
        assert!(rep.margin_domain >= -1e-12, "{rep:?}");
        assert!(rep.margin_ball >= -1e-12, "{rep:?}");
        assert!(rep.roundtrip_residual < 1e-12, "{rep:?}");
    }

    #[test]
    fn curve_chart_inverse_matches_forward() {
        let m = Arc::new(circle_polygon(48).unwrap());
        let chart = build_chart_at_vertex(&m, 5, 0.4).unwrap();
        for t in [-0.21, -0.05, 0.0, 0.13, 0.3] {
            let (p, mp) = chart.forward(&[t, 0.0]).unwrap();
            let back = chart.inverse(mp.cell, &p).unwrap();
            assert_relative_eq!(back[0], t, epsilon = 1e-10);
        }
    }

    #[test]
    fn sphere_chart_constants() {
        let m = Arc::new(icosphere(2).unwrap());
        let chart = build_chart_at_vertex(&m, 0, 0.5).unwrap();
        let c = estimate_constants(&chart).unwrap();
        assert!(c.lip_fwd >= 1.0 - 1e-9 && c.lip_fwd < 1.5, "{c:?}");
        assert!(c.lip_inv >= 1.0 - 1e-9 && c.lip_inv < 1.5, "{c:?}");
        let rep = verify_inclusions(&chart, &c);
        assert!(rep.margin_domain >= -1e-12 && rep.margin_ball >= -1e-12, "{rep:?}");
        assert!(rep.roundtrip_residual < 1e-10, "{rep:?}");
    }

    #[test]
    fn chart_rejects_tight_sphere_ball() {
        // A ball swallowing most of the sphere cannot be a graph patch.
        let m = Arc::new(icosphere(1).unwrap());
        assert!(build_chart_at_vertex(&m, 0, 1.9).is_err());
    }

    #[test]
    fn transported_chart_scales_exactly() {
        let m = Arc::new(circle_polygon(64).unwrap());
        let chart = build_chart_at_vertex(&m, 0, 0.3).unwrap();
        let base = estimate_constants(&chart).unwrap();
        let lam = 3.5;
        let scaled = estimate_constants(&chart.dilate(lam).unwrap()).unwrap();
        assert_relative_eq!(scaled.lip_fwd, lam * base.lip_fwd, max_relative = 1e-12);
        assert_relative_eq!(scaled.lip_inv, base.lip_inv / lam, max_relative = 1e-12);
        assert_relative_eq!(scaled.jac_max, lam * base.jac_max, max_relative = 1e-12);
    }

    #[test]
    fn scaling_slopes_match_dimension() {
        for (mesh, k) in [
            (Arc::new(circle_polygon(64).unwrap()), 1.0),
            (Arc::new(icosphere(2).unwrap()), 2.0),
        ] {
            let eps = 0.3;
            let chart = build_chart_at_vertex(&mesh, 0, eps).unwrap();
            let study = scaling_study(&chart, &[0.5, 1.0, 2.0, 10.0]).unwrap();
            assert_relative_eq!(study.slope_lip_fwd, 1.0 / k, epsilon = 1e-6);
            assert_relative_eq!(study.slope_lip_inv, -1.0 / k, epsilon = 1e-6);
            assert_relative_eq!(study.slope_jac_max, 1.0, epsilon = 1e-6);
            assert_relative_eq!(study.slope_inv_jac_min, -1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn epsilon_selection_succeeds_on_builtins() {
        let m = Arc::new(circle_polygon(64).unwrap());
        let (eps, level) = select_epsilon(&m).unwrap();
        assert!(eps > 0.0 && level <= MAX_EPSILON_LEVEL);
        for v in 0..m.vertices().len() {
            assert!(build_chart_at_vertex(&m, v, eps).is_ok());
        }
    }

    #[test]
    fn cover_is_a_net_of_the_boundary() {
        let m = Arc::new(circle_polygon(64).unwrap());
        let region = make_region(
            m.clone(),
            Selector::AngleRange { start: 0.0, end: PI },
        )
        .unwrap();
        let radius = 0.2;
        let cover = build_cover(&region, radius).unwrap();
        for f in region.boundary() {
            let d = cover
                .centers
                .iter()
                .map(|(_, c)| (f.a - c).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(d <= radius / 4.0 + 1e-12);
        }
    }

    #[test]
    fn partition_sums_to_one_on_closure() {
        let m = Arc::new(icosphere(2).unwrap());
        let region = make_region(
            m.clone(),
            Selector::geodesic_cap(Point::new(0.0, 0.0, 1.0), 0.7),
        )
        .unwrap();
        let conf = conforming_refinement(&region, 1);
        let cover = build_cover(&region, 0.35).unwrap();
        let part = partition_of_unity(&region, &conf, &cover).unwrap();
        for v in 0..conf.verts.len() {
            let s: f64 = part.psi.iter().map(|f| f[v]).sum();
            if conf.vert_in_closure[v] {
                assert!((s - 1.0).abs() < 1e-12, "sum {s} at vertex {v}");
            } else {
                assert!(s <= 1.0 + 1e-12);
            }
        }
        assert!(part.lipschitz.iter().all(|&l| l.is_finite()));
    }
}
