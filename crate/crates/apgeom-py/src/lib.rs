//! Python bindings: a thin object wrapper around the `apgeom` chart
//! geometry plus free functions for the closed-form constructions and the
//! expression language.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use apgeom::catalog;
use apgeom::chart::{GeometryConfig, Role};
use apgeom::error::GeomError;
use apgeom::exprlang::{Expr, Params};
use apgeom::extrinsic::{codim1, fundamental, mixed_scalar_curvature, shape_ops};
use apgeom::identities;
use apgeom::numerics::halton_points;
use apgeom::scalar::seed;
use apgeom::variation::{action_value, ActionKind, Domain, ElEvaluator, ElSystem};

fn err(e: GeomError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn role_of(name: &str) -> PyResult<Role> {
    match name {
        "tilde" => Ok(Role::Tilde),
        "perp" => Ok(Role::Perp),
        other => Err(PyValueError::new_err(format!(
            "unknown role `{other}` (expected `tilde` or `perp`)"
        ))),
    }
}

const SYSTEMS: [ElSystem; 11] = [
    ElSystem::MixPerp,
    ElSystem::MixTangent,
    ElSystem::ExPerp,
    ElSystem::ExTangent,
    ElSystem::FlowPerp,
    ElSystem::FlowTangent,
    ElSystem::Codim1Perp,
    ElSystem::Codim1Tangent,
    ElSystem::Gravity,
    ElSystem::Biconformal,
    ElSystem::UmbilicalPair,
];

fn system_of(name: &str) -> PyResult<ElSystem> {
    SYSTEMS
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| {
            let all: Vec<&str> = SYSTEMS.iter().map(|s| s.name()).collect();
            PyValueError::new_err(format!(
                "unknown system `{name}` (expected one of {})",
                all.join(", ")
            ))
        })
}

fn params_of(params: Option<BTreeMap<String, f64>>) -> Params {
    params.unwrap_or_default()
}

/// An almost-product pseudo-Riemannian structure on a coordinate chart.
#[pyclass(name = "Geometry")]
struct PyGeometry {
    inner: apgeom::chart::Geometry,
}

#[pymethods]
impl PyGeometry {
    /// Load a catalog geometry by name, with optional parameter overrides.
    #[staticmethod]
    #[pyo3(signature = (name, params=None))]
    fn builtin(name: &str, params: Option<BTreeMap<String, f64>>) -> PyResult<Self> {
        let entry = catalog::builtin(name, &params_of(params)).map_err(err)?;
        Ok(PyGeometry { inner: entry.geometry })
    }

    /// Build a geometry from its JSON chart configuration.
    #[staticmethod]
    fn from_json(config: &str) -> PyResult<Self> {
        let cfg: GeometryConfig = serde_json::from_str(config)
            .map_err(|e| PyValueError::new_err(format!("invalid chart config: {e}")))?;
        Ok(PyGeometry { inner: cfg.build().map_err(err)? })
    }

    /// Serialize back to the JSON chart configuration (round-trips).
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner.to_config())
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.rank(Role::Tilde)
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.rank(Role::Perp)
    }

    #[getter]
    fn bounds(&self) -> Vec<(f64, f64)> {
        self.inner.chart.bounds.iter().map(|b| (b[0], b[1])).collect()
    }

    /// Metric components `g_{ij}(x)`.
    fn metric(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let g = self.inner.metric_at(&x).map_err(err)?;
        Ok((0..g.rows)
            .map(|i| (0..g.rows).map(|j| g.at(i, j)).collect())
            .collect())
    }

    /// Mixed scalar curvature of the distribution pair at `x`.
    fn mixed_scalar_curvature(&self, x: Vec<f64>) -> PyResult<f64> {
        mixed_scalar_curvature(&self.inner, &x).map_err(err)
    }

    /// Scalar invariants of one distribution's configuration tensors:
    /// `[("s_ex", ...), ("h_norm2", ...), ("t_norm2", ...), ("mean_norm2", ...)]`.
    fn extrinsic_scalars(&self, x: Vec<f64>, role: &str) -> PyResult<Vec<(String, f64)>> {
        let role = role_of(role)?;
        let f = fundamental(&self.inner, role, &x).map_err(err)?;
        let ops = shape_ops(&self.inner, &x, &f).map_err(err)?;
        Ok(vec![
            ("s_ex".into(), ops.s_ex),
            ("h_norm2".into(), ops.h_norm2),
            ("t_norm2".into(), ops.t_norm2),
            ("mean_norm2".into(), ops.mean_norm2),
        ])
    }

    /// Mean curvature vector of the `role` distribution at `x`.
    fn mean_curvature(&self, x: Vec<f64>, role: &str) -> PyResult<Vec<f64>> {
        let role = role_of(role)?;
        Ok(fundamental(&self.inner, role, &x).map_err(err)?.mean)
    }

    /// Codimension-one data at `x` (requires a rank-one complement):
    /// `(eps_N, taus, sigmas, ric_n)`.
    fn codim1_data(&self, x: Vec<f64>) -> PyResult<(f64, Vec<f64>, Vec<f64>, f64)> {
        let c = codim1(&self.inner, Role::Perp, &x).map_err(err)?;
        Ok((c.eps, c.tau, c.sigma, c.ric_n))
    }

    /// Run the curvature identity suite on low-discrepancy interior points;
    /// returns `[(check_name, max_residual, pass)]`.
    #[pyo3(signature = (points=200, tol=1e-8, seed=0))]
    fn identity_checks(
        &self,
        points: usize,
        tol: f64,
        seed: usize,
    ) -> PyResult<Vec<(String, f64, bool)>> {
        let pts: Vec<Vec<f64>> = halton_points(self.inner.dim(), points, seed)
            .into_iter()
            .map(|u| self.inner.chart.interior_point(&u, 0.05))
            .collect();
        let reports = identities::check_all(&self.inner, &pts, tol).map_err(err)?;
        Ok(reports
            .into_iter()
            .map(|r| (r.check_name, r.max_residual, r.pass))
            .collect())
    }

    /// Euler-Lagrange residual of one critical-metric system at `x`;
    /// returns `(residual, details)` where `details` are named cross-checks.
    #[pyo3(signature = (x, system, volume_preserving=true, order=4))]
    fn el_residual(
        &self,
        x: Vec<f64>,
        system: &str,
        volume_preserving: bool,
        order: usize,
    ) -> PyResult<(f64, Vec<(String, f64)>)> {
        let system = system_of(system)?;
        let bounds = self
            .inner
            .chart
            .bounds
            .iter()
            .map(|b| {
                let w = 0.1 * (b[1] - b[0]);
                [b[0] + w, b[1] - w]
            })
            .collect();
        let dom = Domain::new(bounds, order).map_err(err)?;
        let ev = ElEvaluator::new(&self.inner, &dom, volume_preserving).map_err(err)?;
        let r = ev.residual(&x, system).map_err(err)?;
        Ok((r.residual, r.details))
    }

    /// Total-curvature action over a coordinate box (`kind` is `mix` or
    /// `ex_tilde`), by tensor-product Gauss-Legendre of the given order.
    #[pyo3(signature = (bounds, order=12, kind="mix"))]
    fn action(&self, bounds: Vec<(f64, f64)>, order: usize, kind: &str) -> PyResult<f64> {
        let kind = match kind {
            "mix" => ActionKind::Mix,
            "ex_tilde" => ActionKind::ExTilde,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown action kind `{other}` (expected `mix` or `ex_tilde`)"
                )))
            }
        };
        let dom = Domain::new(bounds.iter().map(|b| [b.0, b.1]).collect(), order).map_err(err)?;
        Ok(action_value(&self.inner, &dom, kind).map_err(err)?.value)
    }

    fn __repr__(&self) -> String {
        format!(
            "Geometry(dim={}, n={}, p={})",
            self.inner.dim(),
            self.inner.rank(Role::Tilde),
            self.inner.rank(Role::Perp)
        )
    }
}

/// Names of the builtin catalog geometries.
#[pyfunction]
fn builtin_names() -> Vec<String> {
    catalog::builtin_names().into_iter().map(String::from).collect()
}

/// Names of the supported Euler-Lagrange systems.
#[pyfunction]
fn system_names() -> Vec<String> {
    SYSTEMS.iter().map(|s| s.name().to_string()).collect()
}

/// Closed-form solution of `tau1' = tau1^2 + c` anchored at `tau1(0)`.
#[pyfunction]
fn tau1_closed_form(constant: f64, tau1_initial: f64, t: f64) -> PyResult<f64> {
    catalog::tau1_closed_form(constant, tau1_initial, t).map_err(err)
}

/// Fiber-harmonicity exponent `(p n + (p-2)(n-2)) / (2 n)`.
#[pyfunction]
fn fiberwise_harmonic_exponent(n: usize, p: usize) -> f64 {
    catalog::fiberwise_harmonic_exponent(n, p)
}

/// Evaluate an expression-language source at a point.
#[pyfunction]
#[pyo3(signature = (source, x, params=None))]
fn eval_expr(source: &str, x: Vec<f64>, params: Option<BTreeMap<String, f64>>) -> PyResult<f64> {
    let e = Expr::parse(source).map_err(err)?;
    e.eval(&x, &params_of(params)).map_err(err)
}

/// Exact partial derivative `d/dx_k` of an expression at a point, computed
/// with forward-mode dual numbers.
#[pyfunction]
#[pyo3(signature = (source, x, k, params=None))]
fn expr_derivative(
    source: &str,
    x: Vec<f64>,
    k: usize,
    params: Option<BTreeMap<String, f64>>,
) -> PyResult<f64> {
    if k >= x.len() {
        return Err(PyValueError::new_err("derivative index out of range"));
    }
    let e = Expr::parse(source).map_err(err)?;
    Ok(e.eval(&seed(&x, k), &params_of(params)).map_err(err)?.du)
}

/// Round-trip an expression through the parser and printer.
#[pyfunction]
fn format_expr(source: &str) -> PyResult<String> {
    Ok(Expr::parse(source).map_err(err)?.to_string())
}

#[pymodule]
fn apgeom_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGeometry>()?;
    m.add_function(wrap_pyfunction!(builtin_names, m)?)?;
    m.add_function(wrap_pyfunction!(system_names, m)?)?;
    m.add_function(wrap_pyfunction!(tau1_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(fiberwise_harmonic_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(eval_expr, m)?)?;
    m.add_function(wrap_pyfunction!(expr_derivative, m)?)?;
    m.add_function(wrap_pyfunction!(format_expr, m)?)?;
    Ok(())
}
