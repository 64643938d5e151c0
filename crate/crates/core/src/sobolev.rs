//! Fractional Sobolev norms of piecewise-linear scalar fields over regions
//! of a manifold, computed two independent ways: a panel-clustering pair
//! quadrature and a uniform midpoint reference sum.

use crate::error::{Error, Result};
use crate::geometry::mesh::{MeshPoint, SimplicialManifold};
use crate::geometry::region::Region;
use crate::quad::{double_integral, lp_integral, Cell, PairKernel, QuadratureSpec};

/// Vertex values of a piecewise-linear field on a fixed mesh.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(mesh: &SimplicialManifold, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != mesh.vertices().len() {
            return Err(Error::DomainMismatch {
                reason: format!(
                    "field has {} values but the mesh has {} vertices",
                    values.len(),
                    mesh.vertices().len()
                ),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::DomainMismatch {
                reason: format!("field contains non-finite value {bad}"),
            });
        }
        Ok(ScalarField { values })
    }

    pub fn from_fn(
        mesh: &SimplicialManifold,
        f: impl Fn(&crate::geometry::Point) -> f64,
    ) -> ScalarField {
        ScalarField {
            values: (0..mesh.vertices().len())
                .map(|i| f(&mesh.vertices()[i]))
                .collect(),
        }
    }

    pub fn eval(&self, mesh: &SimplicialManifold, p: &MeshPoint) -> f64 {
        let ids = mesh.cell_vertex_ids(p.cell);
        let k = mesh.intrinsic_dim();
        (0..k + 1)
            .map(|j| p.bary[j] * self.values[ids[j]])
            .sum()
    }
}

/// Smoothness and integrability exponents of W^{s,p}, 0 < s < 1, p >= 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SobolevParams {
    pub s: f64,
    pub p: f64,
}

impl SobolevParams {
    pub fn new(s: f64, p: f64) -> Result<SobolevParams> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidParameter {
                name: "s".into(),
                reason: format!("smoothness must lie in (0, 1), got {s}"),
            });
        }
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::InvalidParameter {
                name: "p".into(),
                reason: format!("integrability must satisfy p >= 1, got {p}"),
            });
        }
        Ok(SobolevParams { s, p })
    }

    /// Kernel exponent k + s p of the double integral.
    pub fn alpha(&self, k: usize) -> f64 {
        k as f64 + self.s * self.p
    }
}

fn region_cells(region: &Region, field: &ScalarField) -> Vec<Cell> {
    region.cells_with_values(Some(&field.values))
}

/// Integral of |u|^p over the region.
pub fn lp_integral_p(region: &Region, field: &ScalarField, p: f64, spec: &QuadratureSpec) -> Result<f64> {
    spec.validate()?;
    let cells = region_cells(region, field);
    Ok(lp_integral(&cells, p, spec.far_order))
}

pub fn lp_norm(region: &Region, field: &ScalarField, p: f64, spec: &QuadratureSpec) -> Result<f64> {
    Ok(lp_integral_p(region, field, p, spec)?.powf(1.0 / p))
}

/// p-th power of the Gagliardo seminorm over the region, with chord
/// distances in the ambient space.
pub fn gagliardo_seminorm_p(
    region: &Region,
    field: &ScalarField,
    params: &SobolevParams,
    spec: &QuadratureSpec,
) -> Result<f64> {
    spec.validate()?;
    let k = region.parent().intrinsic_dim();
    let cells = region_cells(region, field);
    let kernel = PairKernel::DiffPow {
        p: params.p,
        alpha: params.alpha(k),
    };
    Ok(double_integral(&cells, kernel, spec))
}

pub fn gagliardo_seminorm(
    region: &Region,
    field: &ScalarField,
    params: &SobolevParams,
    spec: &QuadratureSpec,
) -> Result<f64> {
    Ok(gagliardo_seminorm_p(region, field, params, spec)?.powf(1.0 / params.p))
}

/// Seminorm power together with a crude error estimate from one level of
/// near-field coarsening.
pub fn seminorm_p_with_estimate(
    region: &Region,
    field: &ScalarField,
    params: &SobolevParams,
    spec: &QuadratureSpec,
) -> Result<(f64, f64)> {
    let fine = gagliardo_seminorm_p(region, field, params, spec)?;
    let mut coarse_spec = spec.clone();
    coarse_spec.near_refinement = spec.near_refinement.saturating_sub(1).max(1);
    let coarse = gagliardo_seminorm_p(region, field, params, &coarse_spec)?;
    Ok((fine, (fine - coarse).abs()))
}

/// Full norm: (|u|_Lp^p + seminorm^p)^{1/p}.
pub fn wsp_norm(
    region: &Region,
    field: &ScalarField,
    params: &SobolevParams,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let lp = lp_integral_p(region, field, params.p, spec)?;
    let semi = gagliardo_seminorm_p(region, field, params, spec)?;
    Ok((lp + semi).powf(1.0 / params.p))
}

/// Independent reference evaluation: uniform subdivision plus midpoint
/// products, exact self-similar summation on the diagonal. `resolution` is
/// the minimum total number of subdivided cells (at least 64).
pub fn oracle_norms(
    region: &Region,
    field: &ScalarField,
    params: &SobolevParams,
    resolution: usize,
) -> Result<OracleNorms> {
    if resolution < 64 {
        return Err(Error::InvalidParameter {
            name: "resolution".into(),
            reason: format!("reference sums need at least 64 cells, got {resolution}"),
        });
    }
    let k = region.parent().intrinsic_dim();
    let base = region_cells(region, field);
    let mut depth = 0u32;
    while base.len() << (k as u32 * depth) < resolution {
        depth += 1;
    }
    let mut cells = base;
    for _ in 0..depth {
        cells = cells.iter().flat_map(|c| c.subdivide()).collect();
    }

    let p = params.p;
    let alpha = params.alpha(k);

    let lp: f64 = cells
        .iter()
        .map(|c| {
            let m = if k == 1 {
                (c.vals[0] + c.vals[1]) / 2.0
            } else {
                (c.vals[0] + c.vals[1] + c.vals[2]) / 3.0
            };
            m.abs().powf(p) * c.measure()
        })
        .sum();

    let n = cells.len();
    let mut semi = 0.0;
    for i in 0..n {
        semi += oracle_identical(&cells[i], p, alpha);
        for j in i + 1..n {
            let touching = cells[i].min_distance(&cells[j]) < 1e-12 * cells[i].diameter();
            let extra = if touching { 2 } else { 0 };
            semi += 2.0 * oracle_pair(&cells[i], &cells[j], p, alpha, extra);
        }
    }
    Ok(OracleNorms { lp_p: lp, seminorm_p: semi })
}

#[derive(Clone, Copy, Debug)]
pub struct OracleNorms {
    pub lp_p: f64,
    pub seminorm_p: f64,
}

impl OracleNorms {
    pub fn wsp(&self, p: f64) -> f64 {
        (self.lp_p + self.seminorm_p).powf(1.0 / p)
    }
}

fn midpoint_of(c: &Cell) -> (crate::geometry::Point, f64) {
    if c.k == 1 {
        ((c.pts[0] + c.pts[1]) * 0.5, (c.vals[0] + c.vals[1]) * 0.5)
    } else {
        (
            (c.pts[0] + c.pts[1] + c.pts[2]) / 3.0,
            (c.vals[0] + c.vals[1] + c.vals[2]) / 3.0,
        )
    }
}

fn oracle_pair(a: &Cell, b: &Cell, p: f64, alpha: f64, extra_depth: u32) -> f64 {
    if extra_depth == 0 {
        let (xa, va) = midpoint_of(a);
        let (xb, vb) = midpoint_of(b);
        let d = (xa - xb).norm();
        if d == 0.0 {
            return 0.0;
        }
        return (va - vb).abs().powf(p) / d.powf(alpha) * a.measure() * b.measure();
    }
    let mut sum = 0.0;
    for ca in a.subdivide() {
        for cb in b.subdivide() {
            sum += oracle_pair(&ca, &cb, p, alpha, extra_depth - 1);
        }
    }
    sum
}

/// Diagonal term by self-similarity: both orderings included. Children of
/// a midpoint subdivision are scaled copies carrying the same linear
/// gradient, so the identical-pair integral satisfies a geometric relation
/// with ratio 2^k * 2^{-(2k + p - alpha)}.
fn oracle_identical(c: &Cell, p: f64, alpha: f64) -> f64 {
    let k = c.k as f64;
    let ratio = (2f64).powf(k) * (2f64).powf(-(2.0 * k + p - alpha));
    debug_assert!(ratio < 1.0);
    let children = c.subdivide();
    let mut j = 0.0;
    for (i, ca) in children.iter().enumerate() {
        for (l, cb) in children.iter().enumerate() {
            if i != l {
                j += oracle_pair(ca, cb, p, alpha, 3);
            }
        }
    }
    j / (1.0 - ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::builtin::{circle_polygon, icosphere};
    use crate::geometry::region::{make_region, Region, Selector};
    use crate::geometry::Point;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn whole_circle(n: usize) -> (Arc<SimplicialManifold>, Region) {
        let m = Arc::new(circle_polygon(n).unwrap());
        let r = Region::whole(m.clone());
        (m, r)
    }

    #[test]
    fn lp_norm_of_coordinate_on_circle() {
        // int_{S^1} cos^2 theta ds = pi for the smooth circle; the 256-gon
        // inscribes it closely.
        let (m, r) = whole_circle(256);
        let u = ScalarField::from_fn(&m, |p| p.x);
        let spec = QuadratureSpec::default();
        let v = lp_integral_p(&r, &u, 2.0, &spec).unwrap();
        assert_relative_eq!(v, std::f64::consts::PI, max_relative = 1e-3);
    }

    #[test]
    fn quadrature_matches_oracle_on_circle() {
        let (m, r) = whole_circle(64);
        let u = ScalarField::from_fn(&m, |p| p.x);
        let spec = QuadratureSpec::default();
        for s in [0.25, 0.5, 0.75] {
            let params = SobolevParams::new(s, 2.0).unwrap();
            let q = gagliardo_seminorm_p(&r, &u, &params, &spec).unwrap();
            let o = oracle_norms(&r, &u, &params, 512).unwrap();
            let rel = (q - o.seminorm_p).abs() / o.seminorm_p;
            assert!(
                rel < 0.02,
                "s = {s}: quadrature {q} vs reference {} (rel {rel})",
                o.seminorm_p
            );
        }
    }

    #[test]
    fn quadrature_matches_oracle_on_sphere() {
        let m = Arc::new(icosphere(1).unwrap());
        let r = Region::whole(m.clone());
        let u = ScalarField::from_fn(&m, |p| p.z);
        let spec = QuadratureSpec::default();
        let params = SobolevParams::new(0.5, 2.0).unwrap();
        let q = gagliardo_seminorm_p(&r, &u, &params, &spec).unwrap();
        let o = oracle_norms(&r, &u, &params, 320).unwrap();
        let rel = (q - o.seminorm_p).abs() / o.seminorm_p;
        assert!(rel < 0.02, "quadrature {q} vs reference {} (rel {rel})", o.seminorm_p);
    }

    #[test]
    fn dilation_covariance() {
        // |u_lam|^p on lam M equals lam^{k - sp} |u|^p, u values transported.
        let (m, r) = whole_circle(48);
        let u = ScalarField::from_fn(&m, |p| p.x * p.y);
        let spec = QuadratureSpec::default();
        let params = SobolevParams::new(0.6, 2.0).unwrap();
        let base = gagliardo_seminorm_p(&r, &u, &params, &spec).unwrap();
        let base_lp = lp_integral_p(&r, &u, 2.0, &spec).unwrap();
        for lam in [0.5, 2.0, 10.0] {
            let md = Arc::new(m.dilate(lam).unwrap());
            let rd = Region::whole(md.clone());
            let ud = ScalarField { values: u.values.clone() };
            let semi = gagliardo_seminorm_p(&rd, &ud, &params, &spec).unwrap();
            let lp = lp_integral_p(&rd, &ud, 2.0, &spec).unwrap();
            let expect_semi = lam.powf(1.0 - params.s * params.p) * base;
            let expect_lp = lam * base_lp;
            assert_relative_eq!(semi, expect_semi, max_relative = 1e-10);
            assert_relative_eq!(lp, expect_lp, max_relative = 1e-10);
        }
    }

    #[test]
    fn seminorm_on_subregion_is_smaller() {
        let m = Arc::new(circle_polygon(64).unwrap());
        let u = ScalarField::from_fn(&m, |p| p.x);
        let spec = QuadratureSpec::default();
        let params = SobolevParams::new(0.5, 2.0).unwrap();
        let whole = Region::whole(m.clone());
        let half = make_region(
            m.clone(),
            Selector::AngleRange {
                start: 0.0,
                end: std::f64::consts::PI,
            },
        )
        .unwrap();
        let a = gagliardo_seminorm_p(&half, &u, &params, &spec).unwrap();
        let b = gagliardo_seminorm_p(&whole, &u, &params, &spec).unwrap();
        assert!(a > 0.0 && a < b);
    }

    #[test]
    fn error_estimate_brackets_reference() {
        let (m, r) = whole_circle(64);
        let u = ScalarField::from_fn(&m, |p| p.y);
        let spec = QuadratureSpec::default();
        let params = SobolevParams::new(0.75, 2.0).unwrap();
        let (v, est) = seminorm_p_with_estimate(&r, &u, &params, &spec).unwrap();
        assert!(est >= 0.0 && est < 0.05 * v);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(SobolevParams::new(0.0, 2.0).is_err());
        assert!(SobolevParams::new(1.0, 2.0).is_err());
        assert!(SobolevParams::new(0.5, 0.5).is_err());
        let m = circle_polygon(8).unwrap();
        assert!(ScalarField::new(&m, vec![0.0; 3]).is_err());
        assert!(ScalarField::new(&m, vec![f64::NAN; 8]).is_err());
    }

    #[test]
    fn field_eval_interpolates() {
        let m = circle_polygon(8).unwrap();
        let u = ScalarField::from_fn(&m, |p| p.x + 2.0 * p.y);
        let mp = MeshPoint {
            cell: 0,
            bary: [0.25, 0.75, 0.75],
        };
        let ids = m.cell_vertex_ids(0);
        let expect = 0.25 * u.values[ids[0]] + 0.75 * u.values[ids[1]];
        assert_relative_eq!(u.eval(&m, &mp), expect, epsilon = 1e-14);
        let p = Point::new(1.0, 0.0, 0.0);
        assert!((u.eval(&m, &MeshPoint::vertex(&m, 0)) - (p.x + 2.0 * p.y)).abs() < 1e-12);
    }
}
