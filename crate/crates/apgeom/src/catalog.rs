//! Catalog of benchmark geometries and closed-form constructions: product
//! and twisted-product metrics, a codimension-one ansatz with constant
//! principal curvatures, conformal-submersion charts and a harmonic-seed
//! family with prescribed normal divergence.
//!
//! Every entry carries machine-readable expectations (geodesic/umbilical
//! block flags, criticality claims, constant mixed curvature) that the test
//! suite re-verifies numerically.

use std::collections::BTreeMap;
use std::sync::{Mutex, OnceLock};

use serde::Serialize;

use crate::calculus::{
    div_vec, grad, grad_part, laplacian, partial_laplacian, DivWeight, ExprScalar, ScalarField,
};
use crate::chart::{adapted_frame, Geometry, GeometryConfig, Role};
use crate::error::GeomError;
use crate::exprlang::{Expr, Func, Params};
use crate::extrinsic::{
    codim1, fundamental, mixed_scalar_curvature, normal_derivative_h_sc, partial_ricci,
    shape_ops, MeanCurvature,
};
use crate::identities::{combine, rel};
use crate::linalg::{form, Matrix};
use crate::numerics::rk4;
use crate::scalar::seed;
use crate::variation::{Domain, ElSystem};

/// Machine-readable expectations attached to a catalog entry; the test
/// harness re-verifies each claim numerically.
#[derive(Clone, Debug, Serialize)]
pub struct ExpectedFlags {
    pub tilde_geodesic: bool,
    pub tilde_umbilical: bool,
    pub perp_geodesic: bool,
    pub perp_umbilical: bool,
    /// Euler-Lagrange systems whose volume-preserving residual vanishes.
    pub critical: Vec<ElSystem>,
    /// Constant mixed scalar curvature, when the entry has one.
    pub s_mix: Option<f64>,
}

/// A named geometry with its expectations.
pub struct CatalogEntry {
    pub name: String,
    pub summary: String,
    pub geometry: Geometry,
    pub flags: ExpectedFlags,
}

/// Builtin names with one-line summaries, in catalog order.
pub const BUILTINS: [(&str, &str); 8] = [
    (
        "flat_product",
        "flat metric on a box split along coordinate planes (params: n, p)",
    ),
    (
        "sphere_theta_foliation",
        "round two-sphere chart foliated by meridians",
    ),
    (
        "warped_line",
        "hyperbolic-type warped strip diag(1, exp(2 x0))",
    ),
    (
        "heisenberg_flow",
        "Heisenberg nilmanifold chart with the fiber flow against its horizontal plane",
    ),
    (
        "lorentz_product",
        "flat Lorentz product with a timelike unit normal to spacelike leaves",
    ),
    (
        "double_twisted",
        "doubly twisted product warped by (1 + x0)^(2a) on the complement (param: a)",
    ),
    (
        "codim1_biregular",
        "constant-principal-curvature leaves with the normal coefficient slope calibrated so the mean normal Ricci curvature is -3c/2 (params: c, s)",
    ),
    (
        "conformal_submersion",
        "flat fibers over a base dilated by (1 + x0)^(2a) (param: a)",
    ),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

fn override_or(overrides: &Params, key: &str, default: f64) -> f64 {
    overrides.get(key).copied().unwrap_or(default)
}

/// Build a builtin by name; `overrides` replaces default parameter values.
pub fn builtin(name: &str, overrides: &Params) -> Result<CatalogEntry, GeomError> {
    match name {
        "flat_product" => flat_product(overrides, 0),
        "sphere_theta_foliation" => sphere_theta_foliation(),
        "warped_line" => warped_line(),
        "heisenberg_flow" => heisenberg_flow(),
        "lorentz_product" => lorentz_product(),
        "double_twisted" => double_twisted(overrides),
        "codim1_biregular" => codim1_biregular(overrides),
        "conformal_submersion" => conformal_submersion(overrides),
        _ => Err(GeomError::config(
            "/geometry",
            format!("unknown catalog geometry `{name}`"),
        )),
    }
}

/// All builtins with their default parameters.
pub fn builtin_geometries() -> Result<Vec<CatalogEntry>, GeomError> {
    BUILTINS
        .iter()
        .map(|(name, _)| builtin(name, &Params::new()))
        .collect()
}

fn summary_of(name: &str) -> String {
    BUILTINS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| s.to_string())
        .unwrap_or_default()
}

/// Flat metrics are critical for every system that applies to their ranks.
fn flat_critical(n: usize, p: usize) -> Vec<ElSystem> {
    let mut out = vec![
        ElSystem::MixPerp,
        ElSystem::MixTangent,
        ElSystem::ExTangent,
        ElSystem::Biconformal,
        ElSystem::UmbilicalPair,
    ];
    if p >= 2 {
        out.push(ElSystem::ExPerp);
    }
    if n == 1 {
        out.push(ElSystem::FlowPerp);
        out.push(ElSystem::FlowTangent);
    }
    if p == 1 {
        out.push(ElSystem::Codim1Perp);
        out.push(ElSystem::Codim1Tangent);
        out.push(ElSystem::Gravity);
    }
    out
}

fn flat_product(overrides: &Params, signature_q: usize) -> Result<CatalogEntry, GeomError> {
    let n = override_or(overrides, "n", 1.0) as usize;
    let p = override_or(overrides, "p", 2.0) as usize;
    let dim = n + p;
    if n < 1 || p < 1 || dim > 6 {
        return Err(GeomError::config("/n", "ranks must be positive with n + p <= 6"));
    }
    let metric: Vec<Vec<String>> = (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| {
                    if i != j {
                        "0".to_string()
                    } else if signature_q > 0 && i == dim - 1 {
                        "-1".to_string()
                    } else {
                        "1".to_string()
                    }
                })
                .collect()
        })
        .collect();
    let dtilde: Vec<Vec<String>> = (0..n)
        .map(|a| {
            (0..dim)
                .map(|i| if i == a { "1".to_string() } else { "0".to_string() })
                .collect()
        })
        .collect();
    let geometry = GeometryConfig {
        n,
        p,
        bounds: vec![[-1.0, 1.0]; dim],
        signature_q,
        metric,
        dtilde_frame: dtilde,
        params: Params::new(),
    }
    .build()?;
    Ok(CatalogEntry {
        name: "flat_product".into(),
        summary: summary_of("flat_product"),
        geometry,
        flags: ExpectedFlags {
            tilde_geodesic: true,
            tilde_umbilical: true,
            perp_geodesic: true,
            perp_umbilical: true,
            critical: flat_critical(n, p),
            s_mix: Some(0.0),
        },
    })
}

fn sphere_theta_foliation() -> Result<CatalogEntry, GeomError> {
    let geometry = GeometryConfig {
        n: 1,
        p: 1,
        bounds: vec![[0.2, 2.9], [0.0, 1.0]],
        signature_q: 0,
        metric: vec![
            vec!["1".into(), "0".into()],
            vec!["0".into(), "sin(x0)^2".into()],
        ],
        dtilde_frame: vec![vec!["1".into(), "0".into()]],
        params: Params::new(),
    }
    .build()?;
    Ok(CatalogEntry {
        name: "sphere_theta_foliation".into(),
        summary: summary_of("sphere_theta_foliation"),
        geometry,
        flags: ExpectedFlags {
            tilde_geodesic: true,
            tilde_umbilical: true,
            perp_geodesic: false,
            perp_umbilical: true,
            critical: vec![],
            s_mix: Some(1.0),
        },
    })
}

fn warped_line() -> Result<CatalogEntry, GeomError> {
    let geometry = GeometryConfig {
        n: 1,
        p: 1,
        bounds: vec![[-0.5, 1.5]; 2],
        signature_q: 0,
        metric: vec![
            vec!["1".into(), "0".into()],
            vec!["0".into(), "exp(2*x0)".into()],
        ],
        dtilde_frame: vec![vec!["1".into(), "0".into()]],
        params: Params::new(),
    }
    .build()?;
    Ok(CatalogEntry {
        name: "warped_line".into(),
        summary: summary_of("warped_line"),
        geometry,
        flags: ExpectedFlags {
            tilde_geodesic: true,
            tilde_umbilical: true,
            perp_geodesic: false,
            perp_umbilical: true,
            critical: vec![],
            s_mix: Some(-1.0),
        },
    })
}

fn heisenberg_flow() -> Result<CatalogEntry, GeomError> {
    // g = dx^2 + dy^2 + (dz - x dy)^2 on coordinates (z, x, y), fiber d/dz
    let geometry = GeometryConfig {
        n: 1,
        p: 2,
        bounds: vec![[-1.0, 1.0]; 3],
        signature_q: 0,
        metric: vec![
            vec!["1".into(), "0".into(), "-x1".into()],
            vec!["0".into(), "1".into(), "0".into()],
            vec!["-x1".into(), "0".into(), "1 + x1^2".into()],
        ],
        dtilde_frame: vec![vec!["1".into(), "0".into(), "0".into()]],
        params: Params::new(),
    }
    .build()?;
    Ok(CatalogEntry {
        name: "heisenberg_flow".into(),
        summary: summary_of("heisenberg_flow"),
        geometry,
        flags: ExpectedFlags {
            tilde_geodesic: true,
            tilde_umbilical: true,
            perp_geodesic: true,
            perp_umbilical: true,
            critical: vec![
                ElSystem::MixPerp,
                ElSystem::FlowPerp,
                ElSystem::Biconformal,
                ElSystem::UmbilicalPair,
            ],
            s_mix: Some(0.5),
        },
    })
}

fn lorentz_product() -> Result<CatalogEntry, GeomError> {
    // spacelike leaves spanned by d/dx1, d/dx2 with timelike normal d/dx0
    let geometry = GeometryConfig {
        n: 2,
        p: 1,
        bounds: vec![[-1.0, 1.0]; 3],
        signature_q: 1,
        metric: vec![
            vec!["-1".into(), "0".into(), "0".into()],
            vec!["0".into(), "1".into(), "0".into()],
            vec!["0".into(), "0".into(), "1".into()],
        ],
        dtilde_frame: vec![
            vec!["0".into(), "1".into(), "0".into()],
            vec!["0".into(), "0".into(), "1".into()],
        ],
        params: Params::new(),
    }
    .build()?;
    Ok(CatalogEntry {
        name: "lorentz_product".into(),
        summary: summary_of("lorentz_product"),
        geometry,
        flags: ExpectedFlags {
            tilde_geodesic: true,
            tilde_umbilical: true,
            perp_geodesic: true,
            perp_umbilical: true,
            critical: flat_critical(2, 1),
            s_mix: Some(0.0),
        },
    })
}

fn double_twisted(overrides: &Params) -> Result<CatalogEntry, GeomError> {
    let a = override_or(overrides, "a", 1.0);
    let mut params = Params::new();
    params.insert("a".into(), a);
    let ones = [Expr::num(1.0), Expr::num(1.0)];
    let f1 = Expr::num(0.0);
    let f2 = Expr::parse("a*log(1 + x0)")?;
    let mut bounds = vec![[-1.0, 1.0]; 4];
    bounds[0] = [-0.5, 1.5];
    let tp = double_twisted_product(&ones, &ones, &f1, &f2, bounds, params)?;
    // exp(f2) = (1 + x0)^a is leafwise harmonic exactly at a = 1, which
    // makes the mixed scalar curvature vanish identically
    let critical = if (a - 1.0).abs() < 1e-12 {
        vec![ElSystem::MixPerp, ElSystem::Biconformal, ElSystem::UmbilicalPair]
    } else {
        vec![]
    };
    let s_mix = if (a - 1.0).abs() < 1e-12 || a.abs() < 1e-12 {
        Some(0.0)
    } else {
        None
    };
    Ok(CatalogEntry {
        name: "double_twisted".into(),
        summary: summary_of("double_twisted"),
        geometry: tp.geometry,
        flags: ExpectedFlags {
            tilde_geodesic: true,
            tilde_umbilical: true,
            perp_geodesic: a.abs() < 1e-12,
            perp_umbilical: true,
            critical,
            s_mix,
        },
    })
}

fn codim1_biregular(overrides: &Params) -> Result<CatalogEntry, GeomError> {
    let c = override_or(overrides, "c", 1.0);
    let ansatz = match overrides.get("s") {
        Some(&s) => codim1_member(c, s)?,
        None => codim1_critical(c)?,
    };
    Ok(CatalogEntry {
        name: "codim1_biregular".into(),
        summary: summary_of("codim1_biregular"),
        geometry: ansatz.geometry,
        flags: ExpectedFlags {
            tilde_geodesic: false,
            tilde_umbilical: true,
            perp_geodesic: false,
            perp_umbilical: true,
            critical: vec![],
            s_mix: None,
        },
    })
}

fn conformal_submersion(overrides: &Params) -> Result<CatalogEntry, GeomError> {
    let a = override_or(overrides, "a", 1.0);
    let mut params = Params::new();
    params.insert("a".into(), a);
    let ones = [Expr::num(1.0), Expr::num(1.0)];
    let f = Expr::parse("a*log(1 + x0)")?;
    let mut bounds = vec![[-1.0, 1.0]; 4];
    bounds[0] = [-0.5, 1.5];
    let cs = conformal_submersion_metric(&f, &ones, &ones, bounds, params)?;
    let critical = if (a - 1.0).abs() < 1e-12 {
        vec![ElSystem::MixPerp, ElSystem::Biconformal, ElSystem::UmbilicalPair]
    } else {
        vec![]
    };
    let s_mix = if (a - 1.0).abs() < 1e-12 || a.abs() < 1e-12 {
        Some(0.0)
    } else {
        None
    };
    Ok(CatalogEntry {
        name: "conformal_submersion".into(),
        summary: summary_of("conformal_submersion"),
        geometry: cs.geometry,
        flags: ExpectedFlags {
            tilde_geodesic: true,
            tilde_umbilical: true,
            perp_geodesic: a.abs() < 1e-12,
            perp_umbilical: true,
            critical,
            s_mix,
        },
    })
}

// ---------------------------------------------------------------------------
// expression helpers

fn emul(a: Expr, b: Expr) -> Expr {
    Expr::Mul(Box::new(a), Box::new(b))
}

fn eadd(a: Expr, b: Expr) -> Expr {
    Expr::Add(Box::new(a), Box::new(b))
}

fn ecall(f: Func, a: Expr) -> Expr {
    Expr::Call(f, Box::new(a))
}

fn uses_coord(e: &Expr, k: usize) -> bool {
    match e {
        Expr::Num(_) | Expr::Param(_) => false,
        Expr::Coord(i) => *i == k,
        Expr::Neg(a) | Expr::Call(_, a) | Expr::Pow(a, _) => uses_coord(a, k),
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            uses_coord(a, k) || uses_coord(b, k)
        }
    }
}

fn sample_points(geom: &Geometry, count: usize) -> Vec<Vec<f64>> {
    crate::numerics::halton_points(geom.dim(), count, 5)
        .into_iter()
        .map(|u| geom.chart.interior_point(&u, 0.12))
        .collect()
}

// ---------------------------------------------------------------------------
// doubly twisted products

/// Criticality diagnostics of a doubly twisted product.
#[derive(Clone, Debug, Serialize)]
pub struct TwistCriticality {
    /// The first warp depends on the first factor only.
    pub warp_on_first_factor_only: bool,
    /// Leafwise Laplacian of `exp(p f2)` vanishes.
    pub fiber_exp_harmonic: bool,
    /// Restricted Ricci form of the complement is conformal to its block.
    pub ricci_conformal: bool,
    /// Mixed scalar curvature is constant over the sample.
    pub constant_mixed_curvature: bool,
}

pub struct TwistedProduct {
    pub geometry: Geometry,
    /// Named max-residuals of the structural consequences of the twisted
    /// form (integrability, umbilicality of both blocks).
    pub structure: Vec<(String, f64)>,
    pub criticality: TwistCriticality,
}

/// Build `exp(2 f1) g1 (+) exp(2 f2) g2` on the product box and verify the
/// twisted-product structure: both distributions integrable, the first
/// factor umbilical with mean curvature `-n grad_perp f1` and the second
/// with `-p grad_tilde f2`.  Inputs that break the block structure (factor
/// entries depending on the other factor's coordinates) fail the residual
/// gate.
pub fn double_twisted_product(
    first: &[Expr],
    second: &[Expr],
    warp_first: &Expr,
    warp_second: &Expr,
    bounds: Vec<[f64; 2]>,
    params: Params,
) -> Result<TwistedProduct, GeomError> {
    let n = first.len();
    let p = second.len();
    let dim = n + p;
    if n < 1 || p < 1 {
        return Err(GeomError::config("/metric", "both factors need at least one entry"));
    }
    if bounds.len() != dim {
        return Err(GeomError::config(
            "/box",
            format!("expected {dim} intervals, got {}", bounds.len()),
        ));
    }
    let mut metric = vec![vec!["0".to_string(); dim]; dim];
    for (i, e) in first.iter().enumerate() {
        metric[i][i] = emul(ecall(Func::Exp, emul(Expr::num(2.0), warp_first.clone())), e.clone())
            .to_string();
    }
    for (j, e) in second.iter().enumerate() {
        metric[n + j][n + j] =
            emul(ecall(Func::Exp, emul(Expr::num(2.0), warp_second.clone())), e.clone())
                .to_string();
    }
    let dtilde: Vec<Vec<String>> = (0..n)
        .map(|a| {
            (0..dim)
                .map(|i| if i == a { "1".to_string() } else { "0".to_string() })
                .collect()
        })
        .collect();
    let geometry = GeometryConfig {
        n,
        p,
        bounds,
        signature_q: 0,
        metric,
        dtilde_frame: dtilde,
        params,
    }
    .build()?;

    let pts = sample_points(&geometry, 3);
    let mut structure: Vec<(String, f64)> = Vec::new();
    let bump = |name: &str, v: f64, acc: &mut Vec<(String, f64)>| {
        match acc.iter_mut().find(|(k, _)| k == name) {
            Some((_, old)) => *old = old.max(v),
            None => acc.push((name.to_string(), v)),
        }
    };
    let mut max_warp_leak = 0.0f64;
    let mut max_lap = 0.0f64;
    let mut lap_scale = 0.0f64;
    let mut max_conf = 0.0f64;
    let mut smix_lo = f64::INFINITY;
    let mut smix_hi = f64::NEG_INFINITY;
    let warp2 = ecall(Func::Exp, emul(Expr::num(p as f64), warp_second.clone()));

    for x in &pts {
        let g = geometry.metric_at(x)?;
        let ginv = g.inverse()?;
        let ptil = geometry.projector(Role::Tilde, x)?;
        let pperp = geometry.projector(Role::Perp, x)?;
        let btil = ptil.transpose().matmul(&g).matmul(&ptil);
        let bperp = pperp.transpose().matmul(&g).matmul(&pperp);
        let ft = fundamental(&geometry, Role::Tilde, x)?;
        let fp = fundamental(&geometry, Role::Perp, x)?;
        bump("integrability_first", ft.t.max_abs(), &mut structure);
        bump("integrability_second", fp.t.max_abs(), &mut structure);

        for (tag_sff, tag_mean, f, warp, grad_role, block, rank) in [
            ("first_sff", "first_mean", &ft, warp_first, Role::Perp, &btil, n),
            ("second_sff", "second_mean", &fp, warp_second, Role::Tilde, &bperp, p),
        ] {
            let ws = ExprScalar { expr: warp, params: &geometry.params };
            let gw = grad_part(&geometry, &ws, grad_role, x)?;
            let mut scale = f.h.max_abs();
            let gw_max = gw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            scale = scale.max(gw_max * block.max_abs());
            let mut diff = 0.0f64;
            for k in 0..dim {
                for mu in 0..dim {
                    for nu in 0..dim {
                        diff = diff
                            .max((f.h.at(k, mu, nu) + gw[k] * block.at(mu, nu)).abs());
                    }
                }
            }
            bump(tag_sff, rel(diff, scale), &mut structure);
            let mut mdiff = 0.0f64;
            for k in 0..dim {
                mdiff = mdiff.max((f.mean[k] + rank as f64 * gw[k]).abs());
            }
            bump(tag_mean, rel(mdiff, gw_max * rank as f64), &mut structure);
        }

        // Weingarten operators of the first factor: A_Y = -Y(f1) id on D~
        let frame = adapted_frame(&geometry, x)?;
        let nflat = |v: &[f64]| -> Vec<f64> {
            (0..dim)
                .map(|k| (0..dim).map(|l| g.at(k, l) * v[l]).sum())
                .collect()
        };
        for yv in frame.perp() {
            let mut yf = 0.0;
            for mu in 0..dim {
                yf += yv[mu]
                    * warp_first.eval(&seed(x, mu), &geometry.params)?.du;
            }
            let yfl = nflat(yv);
            let hby = Matrix::from_fn(dim, dim, |mu, nu| {
                (0..dim).map(|k| ft.h.at(k, mu, nu) * yfl[k]).sum()
            });
            let a_y = ptil.matmul(&ginv).matmul(&hby);
            let diff = a_y.add(&ptil.scale(yf));
            let restricted = ptil.matmul(&diff).matmul(&ptil);
            bump(
                "first_weingarten",
                rel(restricted.max_abs(), a_y.max_abs().max(yf.abs())),
                &mut structure,
            );
        }

        // criticality diagnostics
        let w1s = ExprScalar { expr: warp_first, params: &geometry.params };
        for j in n..dim {
            max_warp_leak = max_warp_leak.max(w1s.eval(&seed(x, j))?.du.abs());
        }
        let w2s = ExprScalar { expr: &warp2, params: &geometry.params };
        max_lap = max_lap.max(partial_laplacian(&geometry, &w2s, Role::Tilde, x)?.abs());
        lap_scale = lap_scale.max(warp2.eval(x, &geometry.params)?.abs());
        let r = partial_ricci(&geometry, Role::Perp, x)?;
        let mut tr = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                tr += ginv.at(i, j) * r.at(i, j);
            }
        }
        max_conf = max_conf.max(combine(&r, &[(tr / p as f64, &bperp)], &pperp));
        let smix = mixed_scalar_curvature(&geometry, x)?;
        smix_lo = smix_lo.min(smix);
        smix_hi = smix_hi.max(smix);
    }

    for (name, v) in &structure {
        if *v > 1e-8 {
            return Err(GeomError::HypothesisViolated {
                which: format!("not a twisted product: {name} residual {v:.2e}"),
            });
        }
    }
    Ok(TwistedProduct {
        geometry,
        structure,
        criticality: TwistCriticality {
            warp_on_first_factor_only: max_warp_leak < 1e-10,
            fiber_exp_harmonic: rel(max_lap, lap_scale) < 1e-8,
            ricci_conformal: max_conf < 1e-8,
            constant_mixed_curvature: (smix_hi - smix_lo).abs() < 1e-9 * (1.0 + smix_hi.abs()),
        },
    })
}

// ---------------------------------------------------------------------------
// conformal submersions

pub struct ConformalSubmersion {
    pub geometry: Geometry,
    /// Exponent for which fiberwise harmonicity of `exp(lambda f)`
    /// characterizes biconformal criticality.
    pub lambda: f64,
    /// Named max-residuals: umbilicality of the horizontal distribution and
    /// the mixed-curvature formula.
    pub checks: Vec<(String, f64)>,
}

/// `(p n + (p - 2)(n - 2)) / (2 n)`; equals 1 whenever `p = 2`.
pub fn fiberwise_harmonic_exponent(n: usize, p: usize) -> f64 {
    (p * n) as f64 / (2 * n) as f64
        + ((p as f64 - 2.0) * (n as f64 - 2.0)) / (2.0 * n as f64)
}

/// Build `g_fiber (+) exp(2 f) g_base` where the dilation `f` lives on the
/// fibers, and verify the submersion identities: the horizontal
/// distribution is umbilical with mean curvature `-p grad_tilde f`, and the
/// mixed scalar curvature satisfies the divergence formula.
pub fn conformal_submersion_metric(
    dilation: &Expr,
    fiber: &[Expr],
    base: &[Expr],
    bounds: Vec<[f64; 2]>,
    params: Params,
) -> Result<ConformalSubmersion, GeomError> {
    let n = fiber.len();
    let p = base.len();
    let dim = n + p;
    if n < 1 || p < 1 {
        return Err(GeomError::config("/metric", "both blocks need at least one entry"));
    }
    if bounds.len() != dim {
        return Err(GeomError::config(
            "/box",
            format!("expected {dim} intervals, got {}", bounds.len()),
        ));
    }
    let mut metric = vec![vec!["0".to_string(); dim]; dim];
    for (i, e) in fiber.iter().enumerate() {
        metric[i][i] = e.to_string();
    }
    for (j, e) in base.iter().enumerate() {
        metric[n + j][n + j] =
            emul(ecall(Func::Exp, emul(Expr::num(2.0), dilation.clone())), e.clone()).to_string();
    }
    let dtilde: Vec<Vec<String>> = (0..n)
        .map(|a| {
            (0..dim)
                .map(|i| if i == a { "1".to_string() } else { "0".to_string() })
                .collect()
        })
        .collect();
    let geometry = GeometryConfig {
        n,
        p,
        bounds,
        signature_q: 0,
        metric,
        dtilde_frame: dtilde,
        params,
    }
    .build()?;

    let pts = sample_points(&geometry, 3);
    let mut sff = 0.0f64;
    let mut mean = 0.0f64;
    let mut smix_res = 0.0f64;
    for x in &pts {
        let g = geometry.metric_at(x)?;
        let pperp = geometry.projector(Role::Perp, x)?;
        let bperp = pperp.transpose().matmul(&g).matmul(&pperp);
        let fp = fundamental(&geometry, Role::Perp, x)?;
        let fs = ExprScalar { expr: dilation, params: &geometry.params };
        let gt = grad_part(&geometry, &fs, Role::Tilde, x)?;
        let gt_max = gt.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut diff = 0.0f64;
        for k in 0..dim {
            for mu in 0..dim {
                for nu in 0..dim {
                    diff = diff.max((fp.h.at(k, mu, nu) + gt[k] * bperp.at(mu, nu)).abs());
                }
            }
        }
        sff = sff.max(rel(diff, fp.h.max_abs().max(gt_max * bperp.max_abs())));
        let mut mdiff = 0.0f64;
        for k in 0..dim {
            mdiff = mdiff.max((fp.mean[k] + p as f64 * gt[k]).abs());
        }
        mean = mean.max(rel(mdiff, gt_max * p as f64));

        let smix = mixed_scalar_curvature(&geometry, x)?;
        let lap = partial_laplacian(&geometry, &fs, Role::Tilde, x)?;
        let norm2 = form(&g, &gt, &gt);
        let ops_p = shape_ops(&geometry, x, &fp)?;
        let ft = fundamental(&geometry, Role::Tilde, x)?;
        let ops_t = shape_ops(&geometry, x, &ft)?;
        let div_h = div_vec(
            &geometry,
            &MeanCurvature { geom: &geometry, role: Role::Tilde },
            x,
            DivWeight::Full,
        )?;
        let pf = p as f64;
        let nf = n as f64;
        let rhs = -pf * lap - pf * norm2 + ops_p.t_norm2 + div_h
            + (nf - 1.0) / nf * ops_t.mean_norm2;
        smix_res = smix_res.max(rel(
            (smix - rhs).abs(),
            smix.abs().max(pf * lap.abs()).max(pf * norm2.abs()),
        ));
    }
    if sff.max(mean) > 1e-8 {
        return Err(GeomError::HypothesisViolated {
            which: format!("not a conformal submersion chart: sff {sff:.2e}, mean {mean:.2e}"),
        });
    }
    Ok(ConformalSubmersion {
        geometry,
        lambda: fiberwise_harmonic_exponent(n, p),
        checks: vec![
            ("horizontal_sff".into(), sff),
            ("horizontal_mean".into(), mean),
            ("mixed_curvature_formula".into(), smix_res),
        ],
    })
}

// ---------------------------------------------------------------------------
// codimension-one constant-curvature ansatz

/// Closed-form solution of the Riccati equation `tau1' = tau1^2 + C` for a
/// non-positive constant `C`, anchored at `tau1(0) = tau1_initial`.  The
/// admissible band is `|tau1_initial| <= sqrt(-C)`; the endpoints are the
/// constant solutions, `C = 0` only admits the zero solution.
pub fn tau1_closed_form(constant: f64, tau1_initial: f64, t: f64) -> Result<f64, GeomError> {
    if constant > 1e-14 {
        return Err(GeomError::Domain {
            what: "closed form requires a non-positive curvature constant".into(),
        });
    }
    let c = (-constant).max(0.0).sqrt();
    if c < 1e-14 {
        if tau1_initial.abs() > 1e-12 {
            return Err(GeomError::InitialValueOutOfRange);
        }
        return Ok(0.0);
    }
    if tau1_initial.abs() > c * (1.0 + 1e-12) + 1e-12 {
        return Err(GeomError::InitialValueOutOfRange);
    }
    let den = (c + tau1_initial) * (-2.0 * t * c).exp() + (c - tau1_initial);
    Ok(c * (1.0 - 2.0 * (c - tau1_initial) / den))
}

/// Fixed-step integration of one principal curvature along the normal:
/// `y' = sqrt_g00 (tau1(t) y + C / n)`, sampled on `[t0, t1]`.
pub fn principal_curvature_flow(
    constant: f64,
    tau1_initial: f64,
    y0: f64,
    n_leaves: usize,
    sqrt_g00: f64,
    t0: f64,
    t1: f64,
    samples: usize,
) -> Result<Vec<(f64, f64)>, GeomError> {
    let nf = n_leaves.max(1) as f64;
    let mut out = vec![(t0, y0)];
    let mut y = y0;
    let mut t = t0;
    let dt = (t1 - t0) / samples.max(1) as f64;
    for _ in 0..samples.max(1) {
        let next = rk4(
            |s, y: &[f64]| {
                let tau = tau1_closed_form(constant, tau1_initial, s)?;
                Ok(vec![sqrt_g00 * (tau * y[0] + constant / nf)])
            },
            t,
            &[y],
            t + dt,
            1e-3,
        )?;
        y = next[0];
        t += dt;
        if !y.is_finite() || y.abs() > 1e6 {
            return Err(GeomError::OdeDiverged);
        }
        out.push((t, y));
    }
    Ok(out)
}

/// A diagonal codimension-one metric `diag(w, f_i exp(-2 y_i sqrt(w) x0))`
/// with constant principal curvatures `y_i` of the leaves.
#[derive(Clone, Debug)]
pub struct BiregularAnsatz {
    pub geometry: Geometry,
    pub y: Vec<f64>,
    pub curvature_constant: f64,
    pub tau1_initial: f64,
    /// Sup-norm defect of the constant curvatures as a solution of the
    /// curvature flow; vanishes exactly for critical members.
    pub ode_residual: f64,
}

/// Build the constant-curvature ansatz.  `normal_coeff` is `|g00|` as a
/// function of the leaf coordinates `x1..xn`; `leaf_factors` are the
/// positive diagonal factors of the leaf metric.  The trace of `y` must be
/// a fixed point of the closed-form trace evolution, otherwise the claimed
/// curvatures contradict their own trace.
pub fn codim1_ansatz(
    normal_coeff: &Expr,
    leaf_factors: &[Expr],
    y: &[f64],
    curvature_constant: f64,
    bounds: Vec<[f64; 2]>,
    params: Params,
) -> Result<BiregularAnsatz, GeomError> {
    let n = leaf_factors.len();
    if n == 0 || y.len() != n {
        return Err(GeomError::config("/y", "need one curvature per leaf factor"));
    }
    if bounds.len() != n + 1 {
        return Err(GeomError::config(
            "/box",
            format!("expected {} intervals", n + 1),
        ));
    }
    if uses_coord(normal_coeff, 0) {
        return Err(GeomError::config(
            "/metric/0/0",
            "the normal coefficient must not depend on x0",
        ));
    }
    for f in leaf_factors {
        if uses_coord(f, 0) {
            return Err(GeomError::config(
                "/metric",
                "leaf factors must not depend on x0",
            ));
        }
    }
    let tau1: f64 = y.iter().sum();
    tau1_closed_form(curvature_constant, tau1, 0.0)?;
    let tb = bounds[0];
    let mut drift = 0.0f64;
    for k in 0..=20 {
        let t = tb[0] + (tb[1] - tb[0]) * k as f64 / 20.0;
        drift = drift.max((tau1_closed_form(curvature_constant, tau1, t)? - tau1).abs());
    }
    if drift > 1e-7 * (1.0 + tau1.abs()) {
        return Err(GeomError::InconsistentCurvatures);
    }

    let dim = n + 1;
    let sqrt_w = ecall(Func::Sqrt, normal_coeff.clone());
    let mut metric = vec![vec!["0".to_string(); dim]; dim];
    metric[0][0] = normal_coeff.to_string();
    for i in 0..n {
        let exponent = emul(Expr::num(-2.0 * y[i]), emul(sqrt_w.clone(), Expr::coord(0)));
        metric[i + 1][i + 1] =
            emul(leaf_factors[i].clone(), ecall(Func::Exp, exponent)).to_string();
    }
    let dtilde: Vec<Vec<String>> = (0..n)
        .map(|a| {
            (0..dim)
                .map(|i| if i == a + 1 { "1".to_string() } else { "0".to_string() })
                .collect()
        })
        .collect();
    let geometry = GeometryConfig {
        n,
        p: 1,
        bounds: bounds.clone(),
        signature_q: 0,
        metric,
        dtilde_frame: dtilde,
        params,
    }
    .build()?;

    // residual of each constant curvature in the flow, analytically and by
    // integration at the leaf-center value of sqrt|g00|
    let center: Vec<f64> = bounds.iter().map(|b| 0.5 * (b[0] + b[1])).collect();
    let w_c = normal_coeff.eval(&center, &geometry.params)?;
    if w_c <= 0.0 {
        return Err(GeomError::DegenerateMetric);
    }
    let nf = n as f64;
    let mut ode_residual = 0.0f64;
    for &yi in y {
        ode_residual = ode_residual
            .max((tau1 * yi + curvature_constant / nf).abs() / (1.0 + curvature_constant.abs()));
        let flow = principal_curvature_flow(
            curvature_constant,
            tau1,
            yi,
            n,
            w_c.sqrt(),
            tb[0],
            tb[1],
            8,
        )?;
        for (_, yt) in flow {
            ode_residual = ode_residual.max((yt - yi).abs() / (1.0 + yi.abs()));
        }
    }
    Ok(BiregularAnsatz {
        geometry,
        y: y.to_vec(),
        curvature_constant,
        tau1_initial: tau1,
        ode_residual,
    })
}

/// Member of the calibrated family: equal leaf curvatures `sqrt(c)/2` and
/// normal coefficient `exp(2 s x1)`.
pub fn codim1_member(c: f64, s: f64) -> Result<BiregularAnsatz, GeomError> {
    if c <= 0.0 {
        return Err(GeomError::Domain {
            what: "the calibrated family needs a positive curvature scale".into(),
        });
    }
    let mut params = Params::new();
    params.insert("c".into(), c);
    params.insert("s".into(), s);
    let w = Expr::parse("exp(2*s*x1)")?;
    let ones = [Expr::num(1.0), Expr::num(1.0)];
    let yh = 0.5 * c.sqrt();
    // on larger boxes the volume weight concentrates where the normal
    // divergence vanishes and the mean Ricci target becomes unreachable
    codim1_ansatz(&w, &ones, &[yh, yh], -c, vec![[-0.5, 0.5]; 3], params)
}

/// Quadrature domain used both to calibrate the slope and to verify the
/// mean normal Ricci curvature.
pub fn codim1_calibration_domain() -> Domain {
    Domain::new(vec![[-0.5, 0.5]; 3], 10).expect("static box")
}

fn mean_normal_ricci(geom: &Geometry, dom: &Domain) -> Result<f64, GeomError> {
    dom.mean(geom, |x| Ok(codim1(geom, Role::Perp, x)?.ric_n))
}

/// Calibrated critical member: the slope `s` of the normal coefficient is
/// tuned (Illinois regula falsi, cached per `c`) so that the mean normal
/// Ricci curvature over the calibration domain equals `-3c/2`.
pub fn codim1_critical(c: f64) -> Result<BiregularAnsatz, GeomError> {
    static CACHE: OnceLock<Mutex<BTreeMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    if let Some(&s) = cache.lock().unwrap().get(&c.to_bits()) {
        return codim1_member(c, s);
    }
    let dom = codim1_calibration_domain();
    let gap = |s: f64| -> Result<f64, GeomError> {
        let member = codim1_member(c, s)?;
        Ok(mean_normal_ricci(&member.geometry, &dom)? + 1.5 * c)
    };
    // gap(0) = c > 0 and gap decreases with the slope; bracket then refine
    let mut a = 0.0;
    let mut fa = gap(a)?;
    let mut b = 0.5;
    let mut fb = gap(b)?;
    while fb > 0.0 {
        a = b;
        fa = fb;
        b *= 1.6;
        if b > 4.0 {
            return Err(GeomError::Domain {
                what: "slope calibration failed to bracket the target".into(),
            });
        }
        fb = gap(b)?;
    }
    let mut s = b;
    let mut converged = false;
    for _ in 0..60 {
        s = (a * fb - b * fa) / (fb - fa);
        let fs = gap(s)?;
        if fs.abs() < 1e-9 * (1.0 + c) {
            converged = true;
            break;
        }
        if fs * fb < 0.0 {
            a = b;
            fa = fb;
        } else {
            fa *= 0.5;
        }
        b = s;
        fb = fs;
    }
    if !converged {
        return Err(GeomError::Domain {
            what: "slope calibration did not converge".into(),
        });
    }
    cache.lock().unwrap().insert(c.to_bits(), s);
    codim1_member(c, s)
}

/// Residuals of the constant-curvature trace identities at a point, given
/// the curvature constant and the mean normal Ricci curvature: the power
/// traces satisfy `tau1^2 - tau2 = ric_mean - 2 C`, and the normal
/// derivative of the scalar second form satisfies
/// `nabla_N h_sc - tau1 h_sc = (eps / n) C g~`.
pub fn codim1_trace_residuals(
    geom: &Geometry,
    curvature_constant: f64,
    ric_mean: f64,
    x: &[f64],
) -> Result<(f64, f64), GeomError> {
    let c = codim1(geom, Role::Perp, x)?;
    let tau1 = c.tau[0];
    let tau2 = c.tau[1];
    let scale = (tau1 * tau1)
        .abs()
        .max(tau2.abs())
        .max(ric_mean.abs())
        .max(curvature_constant.abs());
    let r1 = rel(
        (tau1 * tau1 - tau2 - (ric_mean - 2.0 * curvature_constant)).abs(),
        scale,
    );
    let nab = normal_derivative_h_sc(geom, Role::Perp, x)?;
    let lhs = nab.sub(&c.h_sc.scale(tau1));
    let g = geom.metric_at(x)?;
    let ptil = geom.projector(Role::Tilde, x)?;
    let btil = ptil.transpose().matmul(&g).matmul(&ptil);
    let coeff = c.eps / geom.n() as f64 * curvature_constant;
    let r2 = combine(&lhs, &[(coeff, &btil)], &ptil);
    Ok((r1, r2))
}

// ---------------------------------------------------------------------------
// isoparametric leaves

struct GradientEnergy<'a> {
    geom: &'a Geometry,
    expr: &'a Expr,
}

impl ScalarField for GradientEnergy<'_> {
    fn eval<S: crate::scalar::Scalar>(&self, x: &[S]) -> Result<S, GeomError> {
        let fs = ExprScalar { expr: self.expr, params: &self.geom.params };
        let gr = grad(self.geom, &fs, x)?;
        let g = self.geom.metric_at(x)?;
        Ok(form(&g, &gr, &gr))
    }
}

struct LaplacianOf<'a> {
    geom: &'a Geometry,
    expr: &'a Expr,
}

impl ScalarField for LaplacianOf<'_> {
    fn eval<S: crate::scalar::Scalar>(&self, x: &[S]) -> Result<S, GeomError> {
        let fs = ExprScalar { expr: self.expr, params: &self.geom.params };
        laplacian(self.geom, &fs, x)
    }
}

fn leaf_derivative<F: ScalarField>(
    geom: &Geometry,
    field: &F,
    x: &[f64],
) -> Result<f64, GeomError> {
    let frame = adapted_frame(geom, x)?;
    let m = geom.dim();
    let mut d = vec![0.0; m];
    for mu in 0..m {
        d[mu] = field.eval(&seed(x, mu))?.du;
    }
    let mut worst = 0.0f64;
    for v in frame.tilde() {
        let dv: f64 = v.iter().zip(&d).map(|(a, b)| a * b).sum();
        worst = worst.max(dv.abs());
    }
    Ok(worst)
}

/// Leafwise-constancy residuals of `g(grad f, grad f)` and of the
/// Laplacian of `f`, for a codimension-one splitting whose leaves are the
/// level sets of `f`.  Both vanish iff the level sets form an
/// isoparametric family.
pub fn isoparametric_check(
    geom: &Geometry,
    f: &Expr,
    x: &[f64],
) -> Result<(f64, f64), GeomError> {
    if geom.p() != 1 {
        return Err(GeomError::NotCodimOne);
    }
    let fs = ExprScalar { expr: f, params: &geom.params };
    let f_leak = leaf_derivative(geom, &fs, x)?;
    if f_leak > 1e-9 * (1.0 + f.eval(x, &geom.params)?.abs()) {
        return Err(GeomError::HypothesisViolated {
            which: "leaves are not level sets of the given function".into(),
        });
    }
    let energy = GradientEnergy { geom, expr: f };
    let e_val: f64 = energy.eval(x)?;
    let r1 = leaf_derivative(geom, &energy, x)? / (1.0 + e_val.abs());
    let lap = LaplacianOf { geom, expr: f };
    let l_val: f64 = lap.eval(x)?;
    let r2 = leaf_derivative(geom, &lap, x)? / (1.0 + l_val.abs());
    Ok((r1, r2))
}

// ---------------------------------------------------------------------------
// harmonic-seed family with prescribed normal divergence

/// Verification report for the harmonic-substitution family: the metric
/// `diag(T(x0) w, 1, 1)` with `w = W(u0 + z0 (x1^2 + x2^2) / 2)`, where
/// `u0` is harmonic on the flat leaves and `W` solves the generating flow
/// `dW/du = sqrt(W)` from `W(0) = w0`.  The normal divergence of the
/// complement's mean curvature is `-lap(w)/2w + |grad w|^2/4w^2`,
/// independent of the normal factor `T`; for `z0 = 0` the harmonic seed
/// makes it vanish identically.
#[derive(Clone, Debug)]
pub struct HarmonicFamily {
    pub target_divergence: f64,
    /// Flat-Laplacian residual of the harmonic seed.
    pub harmonic_residual: f64,
    /// `max |div H~ - target|` over the sample grid.
    pub divergence_residual: f64,
    /// Sample points with the divergence value at each.
    pub samples: Vec<(Vec<f64>, f64)>,
}

/// Evaluate the harmonic-substitution family on a grid over the box.
pub fn poisson_construction(
    t_factor: &Expr,
    u0: &Expr,
    z0: f64,
    w0: f64,
    bounds: [[f64; 2]; 3],
) -> Result<HarmonicFamily, GeomError> {
    if w0 <= 0.0 {
        return Err(GeomError::SubstitutionDomain);
    }
    if uses_coord(u0, 0) {
        return Err(GeomError::config("/u0", "the seed must live on the leaves (x1, x2)"));
    }
    if uses_coord(t_factor, 1) || uses_coord(t_factor, 2) {
        return Err(GeomError::config("/t_factor", "T must depend on x0 only"));
    }
    let params = Params::new();
    let t_mid = 0.5 * (bounds[0][0] + bounds[0][1]);
    let t_ref = t_factor.eval(&[t_mid, 0.0, 0.0], &params)?;
    if t_ref <= 0.0 {
        return Err(GeomError::DegenerateMetric);
    }
    let gen_flow = |w: f64| w.max(0.0).sqrt();
    let gen_flow_d = |w: f64| 0.5 / w.max(1e-300).sqrt();

    let u_expr = eadd(
        u0.clone(),
        emul(
            Expr::num(0.5 * z0),
            eadd(
                emul(Expr::coord(1), Expr::coord(1)),
                emul(Expr::coord(2), Expr::coord(2)),
            ),
        ),
    );

    let mut harmonic = 0.0f64;
    let mut harmonic_scale = 0.0f64;
    let mut worst = 0.0f64;
    let mut samples = Vec::new();
    for kt in 0..4 {
        let t = bounds[0][0] + (bounds[0][1] - bounds[0][0]) * (kt as f64 + 0.5) / 4.0;
        for k1 in 0..5 {
            let x1 = bounds[1][0] + (bounds[1][1] - bounds[1][0]) * (k1 as f64 + 0.5) / 5.0;
            for k2 in 0..5 {
                let x2 = bounds[2][0] + (bounds[2][1] - bounds[2][0]) * (k2 as f64 + 0.5) / 5.0;
                let x = vec![t, x1, x2];
                // leaf jet of u: first and second derivatives by nested duals
                let mut du = [0.0f64; 2];
                let mut ddu = [[0.0f64; 2]; 2];
                let mut ddu0 = [[0.0f64; 2]; 2];
                for i in 0..2 {
                    du[i] = u_expr.eval(&seed(&x, i + 1), &params)?.du;
                    for j in 0..2 {
                        let nested = seed(&seed(&x, i + 1), j + 1);
                        ddu[i][j] = u_expr.eval(&nested, &params)?.du.du;
                        ddu0[i][j] = u0.eval(&nested, &params)?.du.du;
                    }
                }
                harmonic = harmonic.max((ddu0[0][0] + ddu0[1][1]).abs());
                harmonic_scale = harmonic_scale
                    .max(ddu0[0][0].abs())
                    .max(ddu0[1][1].abs())
                    .max(ddu0[0][1].abs());
                let u_val = u_expr.eval(&x, &params)?;
                let w = rk4(
                    |_, w: &[f64]| Ok::<_, GeomError>(vec![gen_flow(w[0])]),
                    0.0,
                    &[w0],
                    u_val,
                    1e-3,
                )?[0];
                if !(w > 1e-9) {
                    return Err(GeomError::SubstitutionDomain);
                }
                // chain rule through the substitution
                let fw = gen_flow(w);
                let fdw = gen_flow_d(w);
                let grad2 = (fw * du[0]).powi(2) + (fw * du[1]).powi(2);
                let lap_w =
                    fdw * fw * (du[0] * du[0] + du[1] * du[1]) + fw * (ddu[0][0] + ddu[1][1]);
                let div = -lap_w / (2.0 * w) + grad2 / (4.0 * w * w);
                worst = worst.max((div - z0).abs());
                samples.push((x, div));
            }
        }
    }
    let harmonic_residual = rel(harmonic, harmonic_scale);
    if harmonic_residual > 1e-8 {
        return Err(GeomError::HypothesisViolated {
            which: "the seed is not harmonic on the flat leaves".into(),
        });
    }
    Ok(HarmonicFamily {
        target_divergence: z0,
        harmonic_residual,
        divergence_residual: worst,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variation::ElEvaluator;

    fn entry_points(geom: &Geometry) -> Vec<Vec<f64>> {
        sample_points(geom, 4)
    }

    #[test]
    fn builtins_build_and_round_trip() {
        for entry in builtin_geometries().unwrap() {
            let cfg = entry.geometry.to_config().expect("builtins are explicit");
            let text = serde_json::to_string(&cfg).unwrap();
            let back: GeometryConfig = serde_json::from_str(&text).unwrap();
            let geom2 = back.build().unwrap();
            for x in entry_points(&entry.geometry) {
                let g1 = entry.geometry.metric_at(&x).unwrap();
                let g2 = geom2.metric_at(&x).unwrap();
                assert!(g1.sub(&g2).max_abs() < 1e-15, "{} round trip", entry.name);
                entry.geometry.check_signature(&x).unwrap();
            }
        }
        assert_eq!(builtin_names().len(), 8);
        assert!(builtin("no_such_geometry", &Params::new()).is_err());
    }

    #[test]
    fn expected_block_flags_hold() {
        for entry in builtin_geometries().unwrap() {
            let geom = &entry.geometry;
            for x in entry_points(geom) {
                for (role, geo, umb) in [
                    (Role::Tilde, entry.flags.tilde_geodesic, entry.flags.tilde_umbilical),
                    (Role::Perp, entry.flags.perp_geodesic, entry.flags.perp_umbilical),
                ] {
                    let f = fundamental(geom, role, &x).unwrap();
                    let h_norm = f.h.max_abs();
                    if geo {
                        assert!(h_norm < 1e-9, "{} {role:?} geodesic: {h_norm:.2e}", entry.name);
                    } else {
                        assert!(h_norm > 1e-6, "{} {role:?} claimed non-geodesic", entry.name);
                    }
                    if umb {
                        // h = (1/rank) H (x) block
                        let g = geom.metric_at(&x).unwrap();
                        let pr = geom.projector(role, &x).unwrap();
                        let block = pr.transpose().matmul(&g).matmul(&pr);
                        let rank = geom.rank(role) as f64;
                        let dim = geom.dim();
                        let mut diff = 0.0f64;
                        for k in 0..dim {
                            for mu in 0..dim {
                                for nu in 0..dim {
                                    diff = diff.max(
                                        (f.h.at(k, mu, nu)
                                            - f.mean[k] / rank * block.at(mu, nu))
                                        .abs(),
                                    );
                                }
                            }
                        }
                        assert!(
                            rel(diff, h_norm) < 1e-9,
                            "{} {role:?} umbilical: {:.2e}",
                            entry.name,
                            rel(diff, h_norm)
                        );
                    }
                }
                if let Some(sm) = entry.flags.s_mix {
                    let got = mixed_scalar_curvature(geom, &x).unwrap();
                    assert!(
                        (got - sm).abs() < 1e-9,
                        "{} s_mix {got} vs {sm}",
                        entry.name
                    );
                }
            }
        }
    }

    #[test]
    fn expected_criticality_holds() {
        for entry in builtin_geometries().unwrap() {
            if entry.flags.critical.is_empty() {
                continue;
            }
            let geom = &entry.geometry;
            let dom = Domain::new(geom.chart.bounds.clone(), 4).unwrap();
            let ev = ElEvaluator::new(geom, &dom, true).unwrap();
            for x in sample_points(geom, 3) {
                for &sys in &entry.flags.critical {
                    let res = ev.residual(&x, sys).unwrap();
                    assert!(
                        res.residual < 1e-6,
                        "{} {} residual {:.2e}",
                        entry.name,
                        sys,
                        res.residual
                    );
                }
            }
        }
    }

    #[test]
    fn twisted_product_reports_mean_curvatures() {
        // plain warped line as a 1x1 twisted product: H~ = -grad f2
        let one = [Expr::num(1.0)];
        let f2 = Expr::parse("2*x0").unwrap();
        let tp = double_twisted_product(
            &one,
            &one,
            &Expr::num(0.0),
            &f2,
            vec![[-0.5, 0.5]; 2],
            Params::new(),
        )
        .unwrap();
        let fp = fundamental(&tp.geometry, Role::Perp, &[0.1, 0.2]).unwrap();
        assert!((fp.mean[0] + 2.0).abs() < 1e-10, "H~ = {:?}", fp.mean);
        assert!(tp.criticality.warp_on_first_factor_only);
        for (name, v) in &tp.structure {
            assert!(*v < 1e-9, "{name} = {v:.2e}");
        }
    }

    #[test]
    fn twisted_product_rejects_broken_blocks() {
        // first-factor entry depending on a second-factor coordinate
        let bad = [Expr::parse("1 + x1^2").unwrap()];
        let one = [Expr::num(1.0)];
        let res = double_twisted_product(
            &bad,
            &one,
            &Expr::num(0.0),
            &Expr::parse("x0").unwrap(),
            vec![[-0.5, 0.5]; 2],
            Params::new(),
        );
        assert!(matches!(res, Err(GeomError::HypothesisViolated { .. })));
    }

    #[test]
    fn twisted_criticality_flags_track_the_warp() {
        // a = 1: exp(f2) harmonic, constant (zero) mixed curvature
        let crit = builtin("double_twisted", &Params::new()).unwrap();
        assert_eq!(crit.flags.critical.len(), 3);
        // a = 0.5: exp(2 f2) = 1 + x0 harmonic, but the mixed curvature is
        // not constant and the metric is not critical
        let mut ov = Params::new();
        ov.insert("a".into(), 0.5);
        let half = builtin("double_twisted", &ov).unwrap();
        assert!(half.flags.critical.is_empty());
        let dom = Domain::new(half.geometry.chart.bounds.clone(), 4).unwrap();
        let ev = ElEvaluator::new(&half.geometry, &dom, true).unwrap();
        let res = ev
            .residual(&half.geometry.chart.interior_point(&[0.4, 0.3, 0.6, 0.2], 0.2), ElSystem::MixPerp)
            .unwrap();
        assert!(res.residual > 1e-3, "a=1/2 twisted must not be critical: {}", res.residual);
    }

    #[test]
    fn submersion_checks_and_exponent() {
        let cs = builtin("conformal_submersion", &Params::new()).unwrap();
        let geom = cs.geometry;
        let f = Expr::parse("a*log(1 + x0)").unwrap();
        let ones = [Expr::num(1.0), Expr::num(1.0)];
        let mut params = Params::new();
        params.insert("a".into(), 1.0);
        let mut bounds = vec![[-1.0, 1.0]; 4];
        bounds[0] = [-0.5, 1.5];
        let built = conformal_submersion_metric(&f, &ones, &ones, bounds, params).unwrap();
        assert_eq!(built.lambda, 1.0);
        for (name, v) in &built.checks {
            assert!(*v < 1e-9, "{name} = {v:.2e}");
        }
        // lambda = 1 for p = 2 and every fiber rank
        for n in 1..=3 {
            assert_eq!(fiberwise_harmonic_exponent(n, 2), 1.0);
        }
        assert!((fiberwise_harmonic_exponent(2, 3) - 1.5).abs() < 1e-15);
        // exp(lambda f) = 1 + x0 is fiberwise harmonic
        let elf = Expr::parse("1 + x0").unwrap();
        let fs = ExprScalar { expr: &elf, params: &geom.params };
        let x = geom.chart.interior_point(&[0.3, 0.6, 0.2, 0.8], 0.15);
        let lap: f64 = partial_laplacian(&geom, &fs, Role::Tilde, &x).unwrap();
        assert!(lap.abs() < 1e-10, "fiberwise laplacian {lap:.2e}");
    }

    #[test]
    fn tau1_closed_form_cases() {
        // C = -1 from rest: -tanh(t), and it solves tau' = tau^2 + C
        for k in 0..=12 {
            let t = -3.0 + 0.5 * k as f64;
            let v = tau1_closed_form(-1.0, 0.0, t).unwrap();
            assert!((v + t.tanh()).abs() < 1e-12, "t={t}: {v}");
            let h = 1e-5;
            let d = (tau1_closed_form(-1.0, 0.0, t + h).unwrap()
                - tau1_closed_form(-1.0, 0.0, t - h).unwrap())
                / (2.0 * h);
            assert!((d - (v * v - 1.0)).abs() < 1e-9, "ode defect at {t}");
        }
        // endpoints are constant solutions
        for t in [-2.0, 0.0, 1.7] {
            assert!((tau1_closed_form(-4.0, 2.0, t).unwrap() - 2.0).abs() < 1e-12);
            assert!((tau1_closed_form(-4.0, -2.0, t).unwrap() + 2.0).abs() < 1e-12);
        }
        assert_eq!(tau1_closed_form(0.0, 0.0, 5.0).unwrap(), 0.0);
        assert!(matches!(
            tau1_closed_form(0.0, 0.1, 0.0),
            Err(GeomError::InitialValueOutOfRange)
        ));
        assert!(matches!(
            tau1_closed_form(-1.0, 1.5, 0.0),
            Err(GeomError::InitialValueOutOfRange)
        ));
        assert!(matches!(tau1_closed_form(1.0, 0.0, 0.0), Err(GeomError::Domain { .. })));
    }

    #[test]
    fn ansatz_accepts_critical_and_rejects_inconsistent_curvatures() {
        // trivial product: flat leaves, zero curvatures
        let flat = codim1_ansatz(
            &Expr::num(1.0),
            &[Expr::num(1.0), Expr::num(1.0)],
            &[0.0, 0.0],
            0.0,
            vec![[-1.0, 1.0]; 3],
            Params::new(),
        )
        .unwrap();
        assert!(flat.ode_residual < 1e-12);
        assert!(mixed_scalar_curvature(&flat.geometry, &[0.1, 0.2, 0.3]).unwrap().abs() < 1e-10);

        // constant solution y_i = sqrt(c)/2 of the flow for C = -c
        let member = codim1_member(1.0, 0.7).unwrap();
        assert!(member.ode_residual < 1e-9, "{}", member.ode_residual);
        assert!((member.tau1_initial - 1.0).abs() < 1e-12);

        // trace of y inside the admissible band but not a fixed point
        let res = codim1_ansatz(
            &Expr::num(1.0),
            &[Expr::num(1.0), Expr::num(1.0)],
            &[0.3, 0.3],
            -1.0,
            vec![[-1.0, 1.0]; 3],
            Params::new(),
        );
        assert!(matches!(res, Err(GeomError::InconsistentCurvatures)));

        // leaf data leaking into the normal coordinate
        let res = codim1_ansatz(
            &Expr::parse("1 + x0^2").unwrap(),
            &[Expr::num(1.0)],
            &[0.0],
            0.0,
            vec![[-1.0, 1.0]; 2],
            Params::new(),
        );
        assert!(matches!(res, Err(GeomError::Config { .. })));
    }

    #[test]
    fn calibrated_member_hits_the_mean_ricci_target() {
        let member = codim1_critical(1.0).unwrap();
        let dom = codim1_calibration_domain();
        let mean = mean_normal_ricci(&member.geometry, &dom).unwrap();
        assert!((mean + 1.5).abs() < 1e-8, "mean Ric_N = {mean}");
        for x in sample_points(&member.geometry, 4) {
            let (r1, r2) =
                codim1_trace_residuals(&member.geometry, -1.0, mean, &x).unwrap();
            assert!(r1 < 1e-7, "trace residual {r1:.2e}");
            assert!(r2 < 1e-7, "derivative residual {r2:.2e}");
            let c = codim1(&member.geometry, Role::Perp, &x).unwrap();
            // equal constant principal curvatures sqrt(c)/2
            assert!((c.tau[0] - 1.0).abs() < 1e-9);
            assert!((c.tau[1] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn isoparametric_residuals_detect_leaf_dependence() {
        // flat product, leaves x0 = const
        let flat = codim1_ansatz(
            &Expr::num(1.0),
            &[Expr::num(1.0), Expr::num(1.0)],
            &[0.0, 0.0],
            0.0,
            vec![[-1.0, 1.0]; 3],
            Params::new(),
        )
        .unwrap();
        let f = Expr::coord(0);
        let (r1, r2) = isoparametric_check(&flat.geometry, &f, &[0.2, 0.1, -0.3]).unwrap();
        assert!(r1 < 1e-12 && r2 < 1e-12);

        // normal coefficient varying along the leaves
        let skew = codim1_ansatz(
            &Expr::parse("1 + x1/2").unwrap(),
            &[Expr::num(1.0), Expr::num(1.0)],
            &[0.0, 0.0],
            0.0,
            vec![[-1.0, 1.0]; 3],
            Params::new(),
        )
        .unwrap();
        let (r1, _) = isoparametric_check(&skew.geometry, &f, &[0.2, 0.1, -0.3]).unwrap();
        assert!(r1 > 1e-4, "leafwise-varying speed must be flagged: {r1:.2e}");

        // a function that is not constant on the leaves
        let res = isoparametric_check(&flat.geometry, &Expr::coord(1), &[0.2, 0.1, -0.3]);
        assert!(matches!(res, Err(GeomError::HypothesisViolated { .. })));

        // rank restriction
        let heis = builtin("heisenberg_flow", &Params::new()).unwrap();
        let res = isoparametric_check(&heis.geometry, &f, &[0.1, 0.1, 0.1]);
        assert!(matches!(res, Err(GeomError::NotCodimOne)));
    }

    #[test]
    fn harmonic_family_divergence_vanishes() {
        let bounds = [[-0.5, 0.5], [-0.6, 0.6], [-0.6, 0.6]];
        let one = Expr::num(1.0);
        // constant seed: w stays at w0, divergence identically zero
        let triv = poisson_construction(&one, &Expr::num(0.3), 0.0, 2.0, bounds).unwrap();
        assert!(triv.divergence_residual < 1e-12);
        // linear and quadratic harmonic seeds
        for seed_expr in ["x1", "x1^2 - x2^2"] {
            let u0 = Expr::parse(seed_expr).unwrap();
            let fam = poisson_construction(&one, &u0, 0.0, 1.0, bounds).unwrap();
            assert!(
                fam.divergence_residual < 1e-9,
                "{seed_expr}: {:.2e}",
                fam.divergence_residual
            );
            assert!(fam.harmonic_residual < 1e-12);
        }
        // non-harmonic seed is rejected
        let res = poisson_construction(&one, &Expr::parse("x1^2").unwrap(), 0.0, 1.0, bounds);
        assert!(matches!(res, Err(GeomError::HypothesisViolated { .. })));
        // driving the profile to zero leaves the admissible domain
        let res = poisson_construction(
            &one,
            &Expr::parse("-8*x1").unwrap(),
            0.0,
            1e-6,
            bounds,
        );
        assert!(matches!(res, Err(GeomError::SubstitutionDomain)));
    }

    #[test]
    fn divergence_formula_matches_covariant_divergence() {
        // independent check of the diagonal-family divergence formula
        // against the covariant divergence of the mean curvature field
        let w = Expr::parse("1 + x1^2/4 + x2/5").unwrap();
        let tf = Expr::parse("2 + sin(x0)").unwrap();
        let geom = GeometryConfig {
            n: 2,
            p: 1,
            bounds: vec![[-0.5, 0.5]; 3],
            signature_q: 0,
            metric: vec![
                vec![emul(tf.clone(), w.clone()).to_string(), "0".into(), "0".into()],
                vec!["0".into(), "1".into(), "0".into()],
                vec!["0".into(), "0".into(), "1".into()],
            ],
            dtilde_frame: vec![
                vec!["0".into(), "1".into(), "0".into()],
                vec!["0".into(), "0".into(), "1".into()],
            ],
            params: Params::new(),
        }
        .build()
        .unwrap();
        let params = Params::new();
        for x in sample_points(&geom, 4) {
            let div: f64 = div_vec(
                &geom,
                &MeanCurvature { geom: &geom, role: Role::Perp },
                &x,
                DivWeight::Full,
            )
            .unwrap();
            let wv = w.eval(&x, &params).unwrap();
            let mut dw = [0.0f64; 2];
            let mut ddw = [0.0f64; 2];
            for i in 0..2 {
                dw[i] = w.eval(&seed(&x, i + 1), &params).unwrap().du;
                ddw[i] = w
                    .eval(&seed(&seed(&x, i + 1), i + 1), &params)
                    .unwrap()
                    .du
                    .du;
            }
            let grad2 = dw[0] * dw[0] + dw[1] * dw[1];
            let lap_w = ddw[0] + ddw[1];
            // the normal factor drops out of the divergence entirely
            let formula = -lap_w / (2.0 * wv) + grad2 / (4.0 * wv * wv);
            assert!(
                (div - formula).abs() < 1e-9,
                "divergence formula: {div} vs {formula}"
            );
        }
    }
}
