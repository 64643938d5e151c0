//! Python bindings: meshes, regions, fractional Sobolev norms, and the
//! size-explicit extension operator.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fracsurf::extension::{build_setup, extend, ratio_study};
use fracsurf::geometry::builtin::builtin_mesh;
use fracsurf::geometry::io::{load_mesh, MeshFormat};
use fracsurf::geometry::region::make_region;
use fracsurf::geometry::Point;
use fracsurf::harness::{run, ExperimentConfig};
use fracsurf::sobolev::{
    gagliardo_seminorm_p, lp_integral_p, oracle_norms, ScalarField, SobolevParams,
};
use fracsurf::{QuadratureSpec, Region, Selector, SimplicialManifold};

fn err(e: fracsurf::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Mesh")]
#[derive(Clone)]
struct PyMesh {
    inner: Arc<SimplicialManifold>,
}

#[pymethods]
impl PyMesh {
    /// circle-polygon, square-boundary, icosphere, cube-surface.
    #[staticmethod]
    fn builtin(name: &str, resolution: usize) -> PyResult<PyMesh> {
        Ok(PyMesh {
            inner: Arc::new(builtin_mesh(name, resolution).map_err(err)?),
        })
    }

    /// Loads a closed .obj surface or a closed polyline .csv loop.
    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<PyMesh> {
        let format = MeshFormat::from_path(&path).map_err(err)?;
        Ok(PyMesh {
            inner: Arc::new(load_mesh(&path, format).map_err(err)?),
        })
    }

    #[getter]
    fn intrinsic_dim(&self) -> usize {
        self.inner.intrinsic_dim()
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.inner.vertices().len()
    }

    #[getter]
    fn num_cells(&self) -> usize {
        self.inner.num_cells()
    }

    #[getter]
    fn measure(&self) -> f64 {
        self.inner.total_measure()
    }

    fn vertices(&self) -> Vec<(f64, f64, f64)> {
        self.inner.vertices().iter().map(|p| (p.x, p.y, p.z)).collect()
    }

    fn dilate(&self, factor: f64) -> PyResult<PyMesh> {
        Ok(PyMesh {
            inner: Arc::new(self.inner.dilate(factor).map_err(err)?),
        })
    }

    /// Arc of polar angles (start, end) on a planar loop.
    fn angle_range(&self, start: f64, end: f64) -> PyResult<PyRegion> {
        let region = make_region(self.inner.clone(), Selector::AngleRange { start, end })
            .map_err(err)?;
        Ok(PyRegion { inner: region })
    }

    /// Geodesic cap of the given radius around `axis`, for unit-sphere meshes.
    fn cap(&self, axis: (f64, f64, f64), radius: f64) -> PyResult<PyRegion> {
        let region = make_region(
            self.inner.clone(),
            Selector::geodesic_cap(Point::new(axis.0, axis.1, axis.2), radius),
        )
        .map_err(err)?;
        Ok(PyRegion { inner: region })
    }

    /// Samples a field of ambient coordinates: "x", "y", or "z".
    fn coordinate_field(&self, axis: &str) -> PyResult<Vec<f64>> {
        let f: fn(&Point) -> f64 = match axis {
            "x" => |p| p.x,
            "y" => |p| p.y,
            "z" => |p| p.z,
            _ => return Err(PyValueError::new_err(format!("unknown axis {axis:?}"))),
        };
        Ok(self.inner.vertices().iter().map(f).collect())
    }
}

#[pyclass(name = "Region")]
#[derive(Clone)]
struct PyRegion {
    inner: Region,
}

#[pymethods]
impl PyRegion {
    #[getter]
    fn measure(&self) -> f64 {
        self.inner.measure()
    }
}

fn field_on(mesh: &Arc<SimplicialManifold>, values: Vec<f64>) -> PyResult<ScalarField> {
    ScalarField::new(mesh, values).map_err(err)
}

/// (lp^p, seminorm^p) of vertex values over a region.
#[pyfunction]
#[pyo3(signature = (mesh, region, values, s, p=2.0))]
fn norms(mesh: &PyMesh, region: &PyRegion, values: Vec<f64>, s: f64, p: f64) -> PyResult<(f64, f64)> {
    let u = field_on(&mesh.inner, values)?;
    let params = SobolevParams::new(s, p).map_err(err)?;
    let spec = QuadratureSpec::default();
    let lp = lp_integral_p(&region.inner, &u, p, &spec).map_err(err)?;
    let semi = gagliardo_seminorm_p(&region.inner, &u, &params, &spec).map_err(err)?;
    Ok((lp, semi))
}

/// Brute-force reference (lp^p, seminorm^p) at the given cell resolution.
#[pyfunction]
#[pyo3(signature = (mesh, region, values, s, p=2.0, resolution=256))]
fn reference_norms(
    mesh: &PyMesh,
    region: &PyRegion,
    values: Vec<f64>,
    s: f64,
    p: f64,
    resolution: usize,
) -> PyResult<(f64, f64)> {
    let u = field_on(&mesh.inner, values)?;
    let params = SobolevParams::new(s, p).map_err(err)?;
    let o = oracle_norms(&region.inner, &u, &params, resolution).map_err(err)?;
    Ok((o.lp_p, o.seminorm_p))
}

/// Extends vertex values from the region to the whole mesh. Returns a dict
/// with the extended values (on the refined vertices), their positions, and
/// the size-explicit bound ratio report.
#[pyfunction]
#[pyo3(signature = (mesh, region, values, s, p=2.0, refinement=1, compute_norms=false))]
fn extend_field<'py>(
    py: Python<'py>,
    mesh: &PyMesh,
    region: &PyRegion,
    values: Vec<f64>,
    s: f64,
    p: f64,
    refinement: u32,
    compute_norms: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let u = field_on(&mesh.inner, values)?;
    let params = SobolevParams::new(s, p).map_err(err)?;
    let spec = QuadratureSpec::default();
    let setup = build_setup(&mesh.inner, &region.inner, refinement).map_err(err)?;
    let (eu, rep) = extend(&setup, &u, &params, &spec, compute_norms).map_err(err)?;

    let out = PyDict::new_bound(py);
    out.set_item("values", eu)?;
    let verts: Vec<(f64, f64, f64)> = setup.conf.verts.iter().map(|v| (v.x, v.y, v.z)).collect();
    out.set_item("vertices", verts)?;
    out.set_item("agreement_residual", rep.agreement_residual)?;
    out.set_item("region_measure", rep.region_measure)?;
    out.set_item("c_omega", rep.c_omega)?;
    out.set_item("reflected_nodes", rep.reflected_nodes)?;
    out.set_item("flagged_nodes", rep.flagged_nodes)?;
    if compute_norms {
        out.set_item("lp_p_u", rep.lp_p_u)?;
        out.set_item("semi_p_u", rep.semi_p_u)?;
        out.set_item("lp_p_eu", rep.lp_p_eu)?;
        out.set_item("semi_p_eu", rep.semi_p_eu)?;
        out.set_item("r", rep.r)?;
        out.set_item("r_control", rep.r_control)?;
    }
    Ok(out)
}

/// Bound ratio across a family of nested arcs or caps; returns
/// (rows, slope, control_slope) where each row is a dict.
#[pyfunction]
#[pyo3(signature = (mesh, values, start, end, sizes, s, p=2.0, refinement=0))]
#[allow(clippy::too_many_arguments)]
fn arc_ratio_study<'py>(
    py: Python<'py>,
    mesh: &PyMesh,
    values: Vec<f64>,
    start: f64,
    end: f64,
    sizes: Vec<f64>,
    s: f64,
    p: f64,
    refinement: u32,
) -> PyResult<(Vec<Bound<'py, PyDict>>, f64, f64)> {
    let u = field_on(&mesh.inner, values)?;
    let params = SobolevParams::new(s, p).map_err(err)?;
    let spec = QuadratureSpec::default();
    let mid = 0.5 * (start + end);
    let selectors: Vec<Selector> = sizes
        .iter()
        .map(|w| Selector::AngleRange {
            start: mid - 0.5 * w,
            end: mid + 0.5 * w,
        })
        .collect();
    let study = ratio_study(&mesh.inner, &u, &selectors, &params, &spec, refinement).map_err(err)?;
    let mut rows = Vec::new();
    for r in &study.rows {
        let d = PyDict::new_bound(py);
        d.set_item("measure", r.region_measure)?;
        d.set_item("c_omega", r.c_omega)?;
        d.set_item("lp_p", r.lp_p_u)?;
        d.set_item("semi_p", r.semi_p_u)?;
        d.set_item("eu_norm_p", r.eu_norm_p)?;
        d.set_item("r", r.r)?;
        d.set_item("r_control", r.r_control)?;
        rows.push(d);
    }
    Ok((rows, study.slope, study.control_slope))
}

/// Runs a study from config text (same schema as the CLI) and returns
/// (pass, summary lines, written files).
#[pyfunction]
#[pyo3(signature = (config_text, out_dir=None))]
fn run_config(config_text: &str, out_dir: Option<PathBuf>) -> PyResult<(bool, Vec<String>, Vec<String>)> {
    let mut config = ExperimentConfig::from_toml_str(config_text).map_err(err)?;
    if out_dir.is_some() {
        config.out_dir = out_dir;
    }
    let outcome = run(&config).map_err(err)?;
    let files = outcome
        .files
        .iter()
        .map(|p: &PathBuf| p.display().to_string())
        .collect();
    Ok((outcome.report.pass, outcome.report.summary, files))
}

#[pymodule]
fn fracsurf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyRegion>()?;
    m.add_function(wrap_pyfunction!(norms, m)?)?;
    m.add_function(wrap_pyfunction!(reference_norms, m)?)?;
    m.add_function(wrap_pyfunction!(extend_field, m)?)?;
    m.add_function(wrap_pyfunction!(arc_ratio_study, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
