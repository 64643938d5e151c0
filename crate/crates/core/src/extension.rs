//! The three extension building blocks (zero extension, truncation by a
//! cutoff, chart reflection) and the composite extension operator from a
//! region to the whole manifold, each instrumented with measured-constant
//! inequality checks.

use std::collections::HashSet;
use std::sync::Arc;

use crate::atlas::{
    build_chart, build_cover, estimate_constants, partition_of_unity, select_epsilon, Chart,
    ChartConstants, ChartMap, Cover, Partition,
};
use crate::error::{Error, Result};
use crate::geometry::mesh::{dist_cells_to_cells, MeshPoint, SimplicialManifold};
use crate::geometry::primitives::Point;
use crate::geometry::region::{ConformingMesh, Region};
use crate::quad::{cross_integral, double_integral, lp_integral, Cell, DistRange, PairKernel, QuadratureSpec};
use crate::sobolev::{ScalarField, SobolevParams};

const VANISHING_TOL: f64 = 1e-12;
const AGREEMENT_TOL: f64 = 1e-8;

/// One measured inequality: holds when lhs <= rhs + margin, where margin
/// absorbs the estimated quadrature error of both sides.
#[derive(Clone, Copy, Debug)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

impl InequalityCheck {
    pub fn holds(&self) -> bool {
        self.lhs.is_finite() && self.rhs.is_finite() && self.lhs <= self.rhs + self.margin
    }

    /// lhs / rhs, guarded for a vanishing right-hand side.
    pub fn ratio(&self) -> f64 {
        if self.rhs == 0.0 {
            if self.lhs == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.lhs / self.rhs
        }
    }
}

/// Record of one zero extension by a compactly supported field.
#[derive(Clone, Debug)]
pub struct ZeroExtensionReport {
    pub lp_p_region: f64,
    pub lp_p_global: f64,
    pub semi_p_region: f64,
    pub semi_p_global: f64,
    /// 2 x the cross term between the complement and the support.
    pub cross_p: f64,
    /// The same cross term recovered from the global/region seminorm gap.
    pub cross_check_p: f64,
    pub dist: f64,
    /// cross/2 <= |M \ region| / dist^(k + sp) * lp_p_region.
    pub cross_bound: InequalityCheck,
}

/// Extends a field supported inside `support` (compactly contained in
/// `region`) by zero to the whole manifold.
pub fn zero_extend(
    region: &Region,
    support: &Region,
    u: &ScalarField,
    params: &SobolevParams,
    spec: &QuadratureSpec,
) -> Result<(ScalarField, ZeroExtensionReport)> {
    let mesh = region.parent();
    if !Arc::ptr_eq(mesh, support.parent()) {
        return Err(Error::DomainMismatch {
            reason: "region and support live on different meshes".into(),
        });
    }
    let k = mesh.intrinsic_dim();

    for v in 0..mesh.vertices().len() {
        let mp = MeshPoint::vertex(mesh, v);
        if !support.contains(&mp) && u.values[v].abs() > VANISHING_TOL {
            let p = mesh.vertices()[v];
            return Err(Error::NonVanishing {
                value: u.values[v].abs(),
                node: [p.x, p.y, p.z],
            });
        }
    }

    let star_values: Vec<f64> = (0..mesh.vertices().len())
        .map(|v| {
            if region.contains(&MeshPoint::vertex(mesh, v)) {
                u.values[v]
            } else {
                0.0
            }
        })
        .collect();
    let star = ScalarField {
        values: star_values,
    };

    let complement = region.complement()?;
    let support_cells = support.cells_with_values(Some(&u.values));
    let comp_cells = complement.cells();
    let dist = dist_cells_to_cells(&comp_cells, &support_cells)?;
    if dist <= 0.0 {
        return Err(Error::TouchingSets);
    }

    let alpha = params.alpha(k);
    let kernel = PairKernel::SourcePow {
        p: params.p,
        alpha,
        range: DistRange::All,
    };
    let half_cross = cross_integral(&support_cells, &comp_cells, kernel, spec);

    let region_cells = region.cells_with_values(Some(&u.values));
    let global_cells = {
        let mut cells = region.cells_with_values(Some(&star.values));
        cells.extend(comp_cells.iter().cloned());
        cells
    };
    let diff = PairKernel::DiffPow {
        p: params.p,
        alpha,
    };
    let semi_region = double_integral(&region_cells, diff, spec);
    let semi_global = double_integral(&global_cells, diff, spec);
    let lp_region = lp_integral(&region_cells, params.p, spec.far_order);
    let lp_global = lp_integral(&global_cells, params.p, spec.far_order);

    let comp_measure: f64 = comp_cells.iter().map(|c| c.measure()).sum();
    let report = ZeroExtensionReport {
        lp_p_region: lp_region,
        lp_p_global: lp_global,
        semi_p_region: semi_region,
        semi_p_global: semi_global,
        cross_p: 2.0 * half_cross,
        cross_check_p: semi_global - semi_region,
        dist,
        cross_bound: InequalityCheck {
            lhs: half_cross,
            rhs: comp_measure / dist.powf(alpha) * lp_region,
            margin: 0.0,
        },
    };
    Ok((star, report))
}

/// Record of one truncation by a cutoff field.
#[derive(Clone, Debug)]
pub struct TruncationReport {
    pub lp_p_product: f64,
    pub lp_p_field: f64,
    pub semi_p_product: f64,
    pub semi_p_field: f64,
    /// Near/far pieces of the Fubini split at distance eps, without the
    /// Lipschitz factor.
    pub near_p: f64,
    pub far_p: f64,
    pub cutoff_lipschitz: f64,
    pub eps: f64,
    /// lp(product) <= lp(field).
    pub lp_monotone: InequalityCheck,
    /// semi(product)^p <= 2^(p-1) (semi^p + L^p (near + far)).
    pub split_bound: InequalityCheck,
    /// far <= |region| eps^-(k + (s-1)p) lp^p; literal only when the kernel
    /// exponent k + (s-1)p is nonnegative.
    pub far_bound: InequalityCheck,
    pub far_bound_applicable: bool,
}

/// Pointwise product of a field and a cutoff, both sampled on the
/// conforming mesh, restricted to the region.
pub fn truncate(
    region: &Region,
    conf: &ConformingMesh,
    field: &[f64],
    cutoff: &[f64],
    cutoff_lipschitz: f64,
    eps: f64,
    params: &SobolevParams,
    spec: &QuadratureSpec,
) -> Result<(Vec<f64>, TruncationReport)> {
    if field.len() != conf.verts.len() || cutoff.len() != conf.verts.len() {
        return Err(Error::DomainMismatch {
            reason: "field and cutoff must be sampled at the conforming vertices".into(),
        });
    }
    for (v, &c) in cutoff.iter().enumerate() {
        if !(-1e-12..=1.0 + 1e-12).contains(&c) {
            return Err(Error::CutoffOutOfRange { value: c, vertex: v });
        }
    }
    let product: Vec<f64> = field
        .iter()
        .zip(cutoff)
        .map(|(u, c)| u * c)
        .collect();

    let k = conf.k;
    let p = params.p;
    let alpha = params.alpha(k);
    let beta = k as f64 + (params.s - 1.0) * p;

    let in_cells_with = |vals: &[f64]| conf.cells_with_values(vals, |i| conf.in_region[i]);
    let u_cells = in_cells_with(field);
    let prod_cells = in_cells_with(&product);

    let diff = PairKernel::DiffPow { p, alpha };
    let semi_product = double_integral(&prod_cells, diff, spec);
    let semi_field = double_integral(&u_cells, diff, spec);
    let lp_product = lp_integral(&prod_cells, p, spec.far_order);
    let lp_field = lp_integral(&u_cells, p, spec.far_order);

    let near = double_integral(
        &u_cells,
        PairKernel::SourcePow {
            p,
            alpha: beta,
            range: DistRange::Below(eps),
        },
        spec,
    );
    let far = double_integral(
        &u_cells,
        PairKernel::SourcePow {
            p,
            alpha: beta,
            range: DistRange::AtLeast(eps),
        },
        spec,
    );

    let lpsi = cutoff_lipschitz;
    let split_rhs =
        (2f64).powf(p - 1.0) * (semi_field + lpsi.powf(p) * (near + far));
    let measure = region.measure();
    let report = TruncationReport {
        lp_p_product: lp_product,
        lp_p_field: lp_field,
        semi_p_product: semi_product,
        semi_p_field: semi_field,
        near_p: near,
        far_p: far,
        cutoff_lipschitz: lpsi,
        eps,
        lp_monotone: InequalityCheck {
            lhs: lp_product,
            rhs: lp_field,
            margin: 1e-12 * lp_field.abs(),
        },
        split_bound: InequalityCheck {
            lhs: semi_product,
            rhs: split_rhs,
            margin: 0.02 * split_rhs.abs(),
        },
        far_bound: InequalityCheck {
            lhs: far,
            rhs: measure * eps.powf(-beta) * lp_field,
            margin: 0.0,
        },
        far_bound_applicable: beta >= 0.0,
    };
    Ok((product, report))
}

/// The proof-side transport inequalities of one chart extension, measured
/// over the conforming cells fully inside the chart ball.
#[derive(Clone, Debug)]
pub struct TransportReport {
    pub constants: ChartConstants,
    /// ||v||^p <= Jhat ||u||^p on the region side.
    pub pullback_lp: InequalityCheck,
    /// semi(v)^p <= L^(k+sp) Jhat^2 semi(u)^p.
    pub pullback_semi: InequalityCheck,
    /// ||ubar||^p <= J ||vbar||^p over the whole ball.
    pub pushforward_lp: InequalityCheck,
    /// semi(ubar)^p <= J^2 Lhat^(k+sp) semi(vbar)^p.
    pub pushforward_semi: InequalityCheck,
    /// ||ubar||_{W^{s,p}} / ||u||_{W^{s,p}} over the sampled ball cells.
    pub measured_operator_ratio: f64,
}

/// Result of extending a field across the region boundary within one chart
/// ball by even reflection in chart coordinates.
#[derive(Clone, Debug)]
pub struct ChartExtension {
    /// Extended values at the conforming vertices; zero outside the ball.
    pub values: Vec<f64>,
    pub reflected: usize,
    pub flagged: usize,
    pub transport: TransportReport,
}

fn pullback_cell(chart: &Chart, parent: usize, pts: &[Point; 3], vals: [f64; 3], k: usize) -> Option<Cell> {
    let uv0 = chart.inverse(parent, &pts[0])?;
    let uv1 = chart.inverse(parent, &pts[1])?;
    let embed = |uv: [f64; 2]| Point::new(uv[0], uv[1], 0.0);
    if k == 1 {
        Some(Cell::segment(embed(uv0), embed(uv1), vals[0], vals[1]))
    } else {
        let uv2 = chart.inverse(parent, &pts[2])?;
        Some(Cell::triangle(
            [embed(uv0), embed(uv1), embed(uv2)],
            vals,
        ))
    }
}

/// In-region intervals of the curve chart parameter, merged and sorted.
fn curve_region_intervals(chart: &Chart, region: &Region) -> Vec<(f64, f64)> {
    let (ts, segs) = match &chart.map {
        ChartMap::Curve { ts, segs } => (ts, segs),
        _ => unreachable!(),
    };
    let mut spans: Vec<(f64, f64)> = Vec::new();
    for (i, seg) in segs.iter().enumerate() {
        let (t0, t1) = (ts[i], ts[i + 1]);
        let (s0, s1) = (seg.b[0][1], seg.b[1][1]);
        let s_to_t = |s: f64| -> f64 {
            if (s1 - s0).abs() < 1e-300 {
                t0
            } else {
                t0 + (s - s0) / (s1 - s0) * (t1 - t0)
            }
        };
        match &region.status()[seg.cell] {
            crate::geometry::region::CellStatus::Out => {}
            crate::geometry::region::CellStatus::Full => spans.push((t0, t1)),
            crate::geometry::region::CellStatus::Partial(subs) => {
                let (lo, hi) = (s0.min(s1), s0.max(s1));
                for sub in subs {
                    let (a, b) = (sub[0][1].min(sub[1][1]), sub[0][1].max(sub[1][1]));
                    let (a, b) = (a.max(lo), b.min(hi));
                    if b > a + 1e-14 {
                        let (ta, tb) = (s_to_t(a), s_to_t(b));
                        spans.push((ta.min(tb), ta.max(tb)));
                    }
                }
            }
        }
    }
    spans.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for s in spans {
        match merged.last_mut() {
            Some(last) if s.0 <= last.1 + 1e-12 * chart.eps => last.1 = last.1.max(s.1),
            _ => merged.push(s),
        }
    }
    merged
}

fn in_intervals(t: f64, intervals: &[(f64, f64)], tol: f64) -> bool {
    intervals
        .iter()
        .any(|&(a, b)| t >= a - tol && t <= b + tol)
}

/// Fitted boundary graph of the pulled-back region boundary in rotated
/// chart coordinates (surface charts).
struct BoundaryGraph {
    mean: [f64; 2],
    /// Rotated frame: `axis` is the abscissa direction.
    axis: [f64; 2],
    /// Graph samples (abscissa, ordinate), sorted.
    samples: Vec<(f64, f64)>,
    /// Sign of (ordinate - gamma) on the region side.
    side: f64,
}

impl BoundaryGraph {
    fn rotate(&self, uv: &[f64; 2]) -> (f64, f64) {
        let (dx, dy) = (uv[0] - self.mean[0], uv[1] - self.mean[1]);
        (
            dx * self.axis[0] + dy * self.axis[1],
            -dx * self.axis[1] + dy * self.axis[0],
        )
    }

    fn unrotate(&self, a: f64, b: f64) -> [f64; 2] {
        [
            self.mean[0] + a * self.axis[0] - b * self.axis[1],
            self.mean[1] + a * self.axis[1] + b * self.axis[0],
        ]
    }

    fn gamma(&self, a: f64) -> f64 {
        let s = &self.samples;
        if a <= s[0].0 {
            return s[0].1;
        }
        if a >= s[s.len() - 1].0 {
            return s[s.len() - 1].1;
        }
        let i = s.partition_point(|&(x, _)| x < a).max(1);
        let ((x0, y0), (x1, y1)) = (s[i - 1], s[i]);
        if (x1 - x0).abs() < 1e-300 {
            y0
        } else {
            y0 + (a - x0) / (x1 - x0) * (y1 - y0)
        }
    }
}

fn fit_boundary_graph(
    chart: &Chart,
    region: &Region,
    conf: &ConformingMesh,
) -> Result<BoundaryGraph> {
    let patch: HashSet<usize> = chart.patch_cells().into_iter().collect();
    let mut pts: Vec<[f64; 2]> = Vec::new();
    for f in region.boundary() {
        if !patch.contains(&f.cell) {
            continue;
        }
        for q in [f.a, f.midpoint(), f.b] {
            if (q - chart.center).norm() >= chart.eps {
                continue;
            }
            if let Some(uv) = chart.inverse(f.cell, &q) {
                pts.push(uv);
            }
        }
    }
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup_by(|x, y| (x[0] - y[0]).abs() < 1e-12 && (x[1] - y[1]).abs() < 1e-12);
    if pts.len() < 2 {
        return Err(Error::ChartBuild {
            simplex: chart.center_cell,
            reason: "too few boundary samples inside the chart ball".into(),
        });
    }

    let n = pts.len() as f64;
    let mean = [
        pts.iter().map(|p| p[0]).sum::<f64>() / n,
        pts.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &pts {
        let (dx, dy) = (p[0] - mean[0], p[1] - mean[1]);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // Principal axis of the 2x2 scatter.
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let axis = [theta.cos(), theta.sin()];

    let mut graph = BoundaryGraph {
        mean,
        axis,
        samples: Vec::new(),
        side: 1.0,
    };
    let mut samples: Vec<(f64, f64)> = pts.iter().map(|p| graph.rotate(p)).collect();
    samples.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let scale = chart.eps;
    for w in samples.windows(2) {
        if (w[1].0 - w[0].0).abs() < 1e-9 * scale && (w[1].1 - w[0].1).abs() > 1e-7 * scale {
            return Err(Error::NotAGraph { abscissa: w[0].0 });
        }
    }
    samples.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-9 * scale);
    graph.samples = samples;

    // Which side of the graph is the region: majority vote over conforming
    // vertices inside the ball.
    let mut score = 0.0;
    for v in 0..conf.verts.len() {
        if !conf.vert_in_closure[v] {
            continue;
        }
        let p = &conf.verts[v];
        if (p - chart.center).norm() >= chart.eps {
            continue;
        }
        let (pc, _) = conf.vert_on_parent[v];
        if let Some(uv) = chart
            .inverse(pc, p)
            .or_else(|| inverse_any(chart, p))
        {
            let (a, b) = graph.rotate(&uv);
            let d = b - graph.gamma(a);
            if d.abs() > 1e-10 * scale {
                score += d.signum();
            }
        }
    }
    graph.side = if score >= 0.0 { 1.0 } else { -1.0 };
    Ok(graph)
}

/// Chart coordinates of a point by scanning the whole patch.
fn inverse_any(chart: &Chart, pos: &Point) -> Option<[f64; 2]> {
    for cell in chart.patch_cells() {
        if let Some(uv) = chart.inverse(cell, pos) {
            return Some(uv);
        }
    }
    None
}

const CLIP_FRACTIONS: [f64; 8] = [1.0, 0.75, 0.5, 0.25, 0.1, 0.05, 0.02, 0.01];

/// Extends `u` (piecewise linear on the parent mesh, defined on the
/// region) to the ball of `chart` by even reflection across the pulled-back
/// boundary. Returns values at the conforming vertices.
pub fn chart_extend(
    region: &Region,
    conf: &ConformingMesh,
    u: &ScalarField,
    chart: &Chart,
    params: &SobolevParams,
    spec: &QuadratureSpec,
) -> Result<ChartExtension> {
    let mesh = region.parent();
    let k = mesh.intrinsic_dim();
    let eps = chart.eps;
    let mut values = vec![0.0f64; conf.verts.len()];
    let mut reflected = 0usize;
    let mut flagged = 0usize;

    let eval_at = |uv: &[f64; 2]| -> Option<f64> {
        let (_, mp) = chart.forward(uv)?;
        Some(u.eval(mesh, &mp))
    };

    let curve_intervals;
    let graph;
    match k {
        1 => {
            curve_intervals = curve_region_intervals(chart, region);
            graph = None;
            if curve_intervals.is_empty() {
                return Err(Error::ChartBuild {
                    simplex: chart.center_cell,
                    reason: "chart ball misses the region".into(),
                });
            }
        }
        _ => {
            curve_intervals = Vec::new();
            graph = Some(fit_boundary_graph(chart, region, conf)?);
        }
    }

    // Interior boundary abscissas of the curve domain (interval endpoints
    // away from the chart rim).
    let curve_cuts: Vec<f64> = {
        let (dom_lo, dom_hi) = match &chart.map {
            ChartMap::Curve { ts, .. } if !ts.is_empty() => (ts[0], ts[ts.len() - 1]),
            _ => (0.0, 0.0),
        };
        let rim = |t: f64| {
            (t - dom_lo).abs() < 1e-9 * eps || (t - dom_hi).abs() < 1e-9 * eps
        };
        curve_intervals
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .filter(|&t| !rim(t))
            .collect()
    };

    for v in 0..conf.verts.len() {
        let pos = conf.verts[v];
        if (pos - chart.center).norm() >= eps {
            continue;
        }
        if conf.vert_in_closure[v] {
            values[v] = conf.eval_parent_field(mesh, &u.values, v);
            continue;
        }
        let (pc, _) = conf.vert_on_parent[v];
        let uv = match chart.inverse(pc, &pos).or_else(|| inverse_any(chart, &pos)) {
            Some(uv) => uv,
            None => {
                flagged += 1;
                continue;
            }
        };
        reflected += 1;
        match k {
            1 => {
                let t = uv[0];
                if curve_cuts.is_empty() {
                    flagged += 1;
                    continue;
                }
                let c = curve_cuts
                    .iter()
                    .copied()
                    .min_by(|a, b| (a - t).abs().partial_cmp(&(b - t).abs()).unwrap())
                    .unwrap();
                let mirrored = 2.0 * c - t;
                let tol = 1e-12 * eps;
                let mut done = false;
                for f in CLIP_FRACTIONS {
                    let cand = c + f * (mirrored - c);
                    if in_intervals(cand, &curve_intervals, tol) {
                        if let Some(val) = eval_at(&[cand, 0.0]) {
                            values[v] = val;
                            if f < 1.0 {
                                flagged += 1;
                            }
                            done = true;
                            break;
                        }
                    }
                }
                if !done {
                    // Last resort: clamp onto the interval containing c.
                    let iv = curve_intervals
                        .iter()
                        .find(|&&(a, b)| c >= a - tol && c <= b + tol);
                    if let Some(&(a, b)) = iv {
                        let inner = if mirrored > c { b } else { a };
                        if let Some(val) = eval_at(&[inner, 0.0]) {
                            values[v] = val;
                        }
                    }
                    flagged += 1;
                }
            }
            _ => {
                let g = graph.as_ref().unwrap();
                let (a, b) = g.rotate(&uv);
                let gb = g.gamma(a);
                let mirrored = 2.0 * gb - b;
                let mut done = false;
                for f in CLIP_FRACTIONS {
                    let cand_b = gb + f * (mirrored - gb);
                    let cand = g.unrotate(a, cand_b);
                    if let Some((_, mp)) = chart.forward(&cand) {
                        if region.contains(&mp) {
                            values[v] = u.eval(mesh, &mp);
                            if f < 1.0 {
                                flagged += 1;
                            }
                            done = true;
                            break;
                        }
                    }
                }
                if !done {
                    flagged += 1;
                }
            }
        }
    }

    let transport = transport_report(region, conf, u, chart, &values, params, spec)?;
    Ok(ChartExtension {
        values,
        reflected,
        flagged,
        transport,
    })
}

/// Measures the proof's transport inequalities on the conforming cells
/// fully inside the chart ball.
fn transport_report(
    region: &Region,
    conf: &ConformingMesh,
    u: &ScalarField,
    chart: &Chart,
    extended: &[f64],
    params: &SobolevParams,
    spec: &QuadratureSpec,
) -> Result<TransportReport> {
    let mesh = region.parent();
    let k = conf.k;
    let p = params.p;
    let alpha = params.alpha(k);
    let constants = estimate_constants(chart)?;
    let patch: HashSet<usize> = chart.patch_cells().into_iter().collect();

    let inside_ball = |ci: usize| -> bool {
        let c = &conf.cells[ci];
        patch.contains(&conf.cell_parent[ci])
            && (0..k + 1).all(|j| (conf.verts[c[j]] - chart.center).norm() < chart.eps)
    };

    // u sampled at conforming vertices (exact PL transfer).
    let u_conf: Vec<f64> = (0..conf.verts.len())
        .map(|v| conf.eval_parent_field(mesh, &u.values, v))
        .collect();

    let mut region_cells = Vec::new();
    let mut region_pullback = Vec::new();
    let mut ball_cells = Vec::new();
    let mut ball_pullback = Vec::new();
    for ci in 0..conf.cells.len() {
        if !inside_ball(ci) {
            continue;
        }
        let ids = conf.cells[ci];
        let pts = [
            conf.verts[ids[0]],
            conf.verts[ids[1]],
            conf.verts[ids[2]],
        ];
        let ext_vals = [extended[ids[0]], extended[ids[1]], extended[ids[2]]];
        let pull_ext = pullback_cell(chart, conf.cell_parent[ci], &pts, ext_vals, k);
        if let Some(cell) = pull_ext {
            ball_pullback.push(cell);
            ball_cells.push(Cell {
                k,
                pts,
                vals: ext_vals,
            });
        }
        if conf.in_region[ci] {
            let u_vals = [u_conf[ids[0]], u_conf[ids[1]], u_conf[ids[2]]];
            if let Some(cell) = pullback_cell(chart, conf.cell_parent[ci], &pts, u_vals, k) {
                region_pullback.push(cell);
                region_cells.push(Cell {
                    k,
                    pts,
                    vals: u_vals,
                });
            }
        }
    }
    if region_cells.is_empty() || ball_cells.is_empty() {
        return Err(Error::EmptyTarget);
    }

    let diff = PairKernel::DiffPow { p, alpha };
    let lp = |cells: &[Cell]| lp_integral(cells, p, spec.far_order);
    let semi = |cells: &[Cell]| double_integral(cells, diff, spec);

    let lp_u = lp(&region_cells);
    let lp_v = lp(&region_pullback);
    let semi_u = semi(&region_cells);
    let semi_v = semi(&region_pullback);
    let lp_ubar = lp(&ball_cells);
    let lp_vbar = lp(&ball_pullback);
    let semi_ubar = semi(&ball_cells);
    let semi_vbar = semi(&ball_pullback);

    let jhat = 1.0 / constants.jac_min;
    let lfac = constants.lip_fwd.powf(alpha);
    let j = constants.jac_max;
    let lhatfac = constants.lip_inv.powf(alpha);
    // Small relative margin for accumulated quadrature error on both sides.
    let m = |x: f64| 5e-3 * x.abs();

    let op_num = (lp_ubar + semi_ubar).powf(1.0 / p);
    let op_den = (lp_u + semi_u).powf(1.0 / p);
    Ok(TransportReport {
        constants,
        pullback_lp: InequalityCheck {
            lhs: lp_v,
            rhs: jhat * lp_u,
            margin: m(jhat * lp_u),
        },
        pullback_semi: InequalityCheck {
            lhs: semi_v,
            rhs: lfac * jhat * jhat * semi_u,
            margin: m(lfac * jhat * jhat * semi_u),
        },
        pushforward_lp: InequalityCheck {
            lhs: lp_ubar,
            rhs: j * lp_vbar,
            margin: m(j * lp_vbar),
        },
        pushforward_semi: InequalityCheck {
            lhs: semi_ubar,
            rhs: j * j * lhatfac * semi_vbar,
            margin: m(j * j * lhatfac * semi_vbar),
        },
        measured_operator_ratio: if op_den > 0.0 { op_num / op_den } else { 0.0 },
    })
}

/// Everything the composite operator needs, built once per (mesh, region).
#[derive(Clone, Debug)]
pub struct ExtensionSetup {
    pub mesh: Arc<SimplicialManifold>,
    pub region: Region,
    pub conf: ConformingMesh,
    pub cover: Cover,
    pub charts: Vec<Chart>,
    pub partition: Partition,
}

fn mesh_point_on_cell(mesh: &SimplicialManifold, cell: usize, pos: &Point) -> MeshPoint {
    let pts = mesh.cell_points(cell);
    if mesh.intrinsic_dim() == 1 {
        let d = pts[1] - pts[0];
        let s = ((pos - pts[0]).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        MeshPoint {
            cell,
            bary: [1.0 - s, s, s],
        }
    } else {
        let e1 = pts[1] - pts[0];
        let e2 = pts[2] - pts[0];
        let d = pos - pts[0];
        let (g11, g12, g22) = (e1.dot(&e1), e1.dot(&e2), e2.dot(&e2));
        let det = g11 * g22 - g12 * g12;
        let (r1, r2) = (d.dot(&e1), d.dot(&e2));
        let l1 = ((g22 * r1 - g12 * r2) / det).clamp(0.0, 1.0);
        let l2 = ((g11 * r2 - g12 * r1) / det).clamp(0.0, 1.0);
        MeshPoint {
            cell,
            bary: [1.0 - l1 - l2, l1, l2],
        }
    }
}

/// Builds cover, charts, conforming refinement, and partition of unity.
/// The ball radius scales with the region size and is halved on chart
/// failures.
pub fn build_setup(
    mesh: &Arc<SimplicialManifold>,
    region: &Region,
    refinement: u32,
) -> Result<ExtensionSetup> {
    let k = mesh.intrinsic_dim();
    let (eps_mesh, _) = select_epsilon(mesh)?;
    let size = region.measure().powf(1.0 / k as f64);
    let mut radius = eps_mesh.min(0.5 * size);

    let mut last_err = None;
    for _ in 0..7 {
        let attempt = (|| -> Result<(ConformingMesh, Cover, Vec<Chart>, Partition)> {
            let cover = build_cover(region, radius)?;
            let charts = cover
                .centers
                .iter()
                .map(|(cell, pos)| {
                    build_chart(mesh, &mesh_point_on_cell(mesh, *cell, pos), radius)
                })
                .collect::<Result<Vec<_>>>()?;
            // Resolve the partition ramps around each cover ball even when
            // the ball radius undercuts the parent mesh scale.
            let focus: Vec<(Point, f64)> = cover
                .centers
                .iter()
                .map(|(_, pos)| (*pos, 3.0 * radius))
                .collect();
            let conf = crate::geometry::region::conforming_refinement_graded(
                region,
                refinement,
                &focus,
                radius / 8.0,
            );
            let partition = partition_of_unity(region, &conf, &cover)?;
            Ok((conf, cover, charts, partition))
        })();
        match attempt {
            Ok((conf, cover, charts, partition)) => {
                return Ok(ExtensionSetup {
                    mesh: mesh.clone(),
                    region: region.clone(),
                    conf,
                    cover,
                    charts,
                    partition,
                });
            }
            Err(e) => {
                last_err = Some(e);
                radius /= 2.0;
            }
        }
    }
    Err(last_err.unwrap())
}

/// Composite record: per-step reports plus the size-explicit ratio of the
/// main bound.
#[derive(Clone, Debug)]
pub struct ExtensionReport {
    pub agreement_residual: f64,
    pub reflected_nodes: usize,
    pub flagged_nodes: usize,
    pub transports: Vec<TransportReport>,
    pub region_measure: f64,
    pub lp_p_u: f64,
    pub semi_p_u: f64,
    pub lp_p_eu: f64,
    pub semi_p_eu: f64,
    /// 1 + |region|^(-sp/k) + |region|^((1-s)p/k).
    pub c_omega: f64,
    /// ||Eu||^p / (C |u|_Lp^p + semi(u)^p), zero-guarded.
    pub r: f64,
    /// Same ratio with C replaced by 1.
    pub r_control: f64,
}

/// Applies the composite operator: w_0 from the inner cutoff, one
/// reflected term per cover ball, summed at the conforming vertices.
pub fn extend(
    setup: &ExtensionSetup,
    u: &ScalarField,
    params: &SobolevParams,
    spec: &QuadratureSpec,
    compute_norms: bool,
) -> Result<(Vec<f64>, ExtensionReport)> {
    let conf = &setup.conf;
    let mesh = &setup.mesh;
    let nv = conf.verts.len();

    let u_conf: Vec<f64> = (0..nv)
        .map(|v| conf.eval_parent_field(mesh, &u.values, v))
        .collect();

    let mut eu = vec![0.0f64; nv];
    // Inner term: psi_0 u, which vanishes outside the region closure.
    for v in 0..nv {
        if conf.vert_in_closure[v] {
            eu[v] += setup.partition.psi[0][v] * u_conf[v];
        }
    }

    let mut transports = Vec::with_capacity(setup.charts.len());
    let mut reflected = 0;
    let mut flagged = 0;
    for (i, chart) in setup.charts.iter().enumerate() {
        let ext = chart_extend(&setup.region, conf, u, chart, params, spec)?;
        let psi = &setup.partition.psi[i + 1];
        for v in 0..nv {
            if psi[v] > 0.0 {
                eu[v] += psi[v] * ext.values[v];
            }
        }
        reflected += ext.reflected;
        flagged += ext.flagged;
        transports.push(ext.transport);
    }

    let mut residual = 0.0f64;
    for v in 0..nv {
        if conf.vert_in_closure[v] {
            residual = residual.max((eu[v] - u_conf[v]).abs());
        }
    }
    if residual > AGREEMENT_TOL {
        let idx = (0..nv)
            .filter(|&v| conf.vert_in_closure[v])
            .max_by(|&a, &b| {
                (eu[a] - u_conf[a])
                    .abs()
                    .partial_cmp(&(eu[b] - u_conf[b]).abs())
                    .unwrap()
            })
            .unwrap();
        let p = conf.verts[idx];
        return Err(Error::AgreementResidual {
            residual,
            node: [p.x, p.y, p.z],
        });
    }

    let k = conf.k as f64;
    let measure = setup.region.measure();
    let c_omega = 1.0
        + measure.powf(-params.s * params.p / k)
        + measure.powf((1.0 - params.s) * params.p / k);

    let (lp_u, semi_u, lp_eu, semi_eu) = if compute_norms {
        let p = params.p;
        let alpha = params.alpha(conf.k);
        let diff = PairKernel::DiffPow { p, alpha };
        let region_cells = conf.cells_with_values(&u_conf, |i| conf.in_region[i]);
        let all_cells = conf.cells_with_values(&eu, |_| true);
        (
            lp_integral(&region_cells, p, spec.far_order),
            double_integral(&region_cells, diff, spec),
            lp_integral(&all_cells, p, spec.far_order),
            double_integral(&all_cells, diff, spec),
        )
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };

    let denom = c_omega * lp_u + semi_u;
    let denom_control = lp_u + semi_u;
    let report = ExtensionReport {
        agreement_residual: residual,
        reflected_nodes: reflected,
        flagged_nodes: flagged,
        transports,
        region_measure: measure,
        lp_p_u: lp_u,
        semi_p_u: semi_u,
        lp_p_eu: lp_eu,
        semi_p_eu: semi_eu,
        c_omega,
        r: if denom > 0.0 {
            (lp_eu + semi_eu) / denom
        } else {
            0.0
        },
        r_control: if denom_control > 0.0 {
            (lp_eu + semi_eu) / denom_control
        } else {
            0.0
        },
    };
    Ok((eu, report))
}

/// One row of the size-dependence study of the composite bound.
#[derive(Clone, Debug)]
pub struct RatioRow {
    pub region_measure: f64,
    pub c_omega: f64,
    pub lp_p_u: f64,
    pub semi_p_u: f64,
    pub eu_norm_p: f64,
    pub r: f64,
    pub r_control: f64,
}

#[derive(Clone, Debug)]
pub struct RatioStudy {
    pub rows: Vec<RatioRow>,
    /// Fitted slope of log r against log region measure.
    pub slope: f64,
    /// Same fit with the size factor replaced by 1.
    pub control_slope: f64,
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
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

/// Runs the composite operator over a family of nested regions and fits
/// how the bound ratio depends on the region size.
pub fn ratio_study(
    mesh: &Arc<SimplicialManifold>,
    u: &ScalarField,
    selectors: &[crate::geometry::region::Selector],
    params: &SobolevParams,
    spec: &QuadratureSpec,
    refinement: u32,
) -> Result<RatioStudy> {
    if selectors.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "selectors".into(),
            reason: "ratio study needs at least two region sizes".into(),
        });
    }
    let mut rows = Vec::with_capacity(selectors.len());
    for sel in selectors {
        let region = crate::geometry::region::make_region(mesh.clone(), sel.clone())?;
        let setup = build_setup(mesh, &region, refinement)?;
        let (_, rep) = extend(&setup, u, params, spec, true)?;
        rows.push(RatioRow {
            region_measure: rep.region_measure,
            c_omega: rep.c_omega,
            lp_p_u: rep.lp_p_u,
            semi_p_u: rep.semi_p_u,
            eu_norm_p: rep.lp_p_eu + rep.semi_p_eu,
            r: rep.r,
            r_control: rep.r_control,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.region_measure.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.r.max(1e-300).ln()).collect();
    let yc: Vec<f64> = rows.iter().map(|r| r.r_control.max(1e-300).ln()).collect();
    Ok(RatioStudy {
        slope: fit_slope(&xs, &ys),
        control_slope: fit_slope(&xs, &yc),
        rows,
    })
}
