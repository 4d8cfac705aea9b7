//! Intrinsic differential operators on a chart.
//!
//! Curvature sign convention used throughout this crate:
//! `R(X,Y) = nabla_Y nabla_X - nabla_X nabla_Y + nabla_{[X,Y]}` and
//! `K(X,Y) = g(R(X,Y)X, Y) / W(X,Y)`.  This is the opposite of the more
//! common `R(X,Y) = [nabla_X, nabla_Y] - nabla_{[X,Y]}`; sectional
//! curvatures come out with the usual sign (round sphere has `K = +1`).

use crate::chart::{Geometry, Role};
use crate::error::GeomError;
use crate::linalg::{form, Matrix, Tensor3, Tensor4};
use crate::scalar::{seed, Scalar};

/// A scalar field on the chart, evaluable at any dual depth.
pub trait ScalarField {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S, GeomError>;
}

/// A vector field (upper index) on the chart.
pub trait VectorField {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>, GeomError>;
}

/// A (0,2)-tensor field on the chart.
pub trait Tensor2Field {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<Matrix<S>, GeomError>;
}

/// A (1,2)-tensor field `P^k_{ij}` (value slot first).
pub trait Tensor3Field {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<Tensor3<S>, GeomError>;
}

/// Weighting of a divergence-type frame sum.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum DivWeight {
    /// Sum over a full orthonormal frame: the ordinary divergence.
    Full,
    /// Sum over a frame of one distribution only.
    Over(Role),
}

/// `Gamma^k_{ij}` at a point.
pub fn christoffel<S: Scalar>(geom: &Geometry, x: &[S]) -> Result<Tensor3<S>, GeomError> {
    let m = geom.dim();
    let ginv = geom.metric_at(x)?.inverse()?;
    // dg[k](i,j) = d_k g_ij
    let mut dg: Vec<Matrix<S>> = Vec::with_capacity(m);
    for k in 0..m {
        let gx = geom.metric_at(&seed(x, k))?;
        dg.push(Matrix::from_fn(m, m, |i, j| gx.at(i, j).du));
    }
    let mut gamma = Tensor3::zeros(m);
    let half = S::from_f64(0.5);
    for k in 0..m {
        for i in 0..m {
            for j in 0..=i {
                let mut s = S::zero();
                for l in 0..m {
                    s = s + ginv.at(k, l)
                        * (dg[i].at(j, l) + dg[j].at(i, l) - dg[l].at(i, j));
                }
                let v = half * s;
                *gamma.at_mut(k, i, j) = v;
                *gamma.at_mut(k, j, i) = v;
            }
        }
    }
    Ok(gamma)
}

/// Curvature components `R^l_{ijk}`: the l-component of `R(e_i, e_j) e_k`
/// in the crate's sign convention.
pub fn riemann<S: Scalar>(geom: &Geometry, x: &[S]) -> Result<Tensor4<S>, GeomError> {
    let m = geom.dim();
    let gamma = christoffel(geom, x)?;
    // dgamma[mu](l, i, j) = d_mu Gamma^l_{ij}
    let mut dgamma: Vec<Tensor3<S>> = Vec::with_capacity(m);
    for mu in 0..m {
        let gx = christoffel(geom, &seed(x, mu))?;
        let mut t = Tensor3::zeros(m);
        for l in 0..m {
            for i in 0..m {
                for j in 0..m {
                    *t.at_mut(l, i, j) = gx.at(l, i, j).du;
                }
            }
        }
        dgamma.push(t);
    }
    let mut r = Tensor4::zeros(m);
    for l in 0..m {
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    // R(e_i,e_j)e_k = nabla_j nabla_i e_k - nabla_i nabla_j e_k
                    let mut v = dgamma[j].at(l, i, k) - dgamma[i].at(l, j, k);
                    for s in 0..m {
                        v = v + gamma.at(l, j, s) * gamma.at(s, i, k)
                            - gamma.at(l, i, s) * gamma.at(s, j, k);
                    }
                    *r.at_mut(l, i, j, k) = v;
                }
            }
        }
    }
    Ok(r)
}

/// Fully covariant curvature `R_{i j k l} = g(R(e_i,e_j) e_k, e_l)`.
pub fn riemann_lowered<S: Scalar>(geom: &Geometry, x: &[S]) -> Result<Tensor4<S>, GeomError> {
    let m = geom.dim();
    let r = riemann(geom, x)?;
    let g = geom.metric_at(x)?;
    let mut out = Tensor4::zeros(m);
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                for l in 0..m {
                    let mut v = S::zero();
                    for s in 0..m {
                        v = v + r.at(s, i, j, k) * g.at(s, l);
                    }
                    *out.at_mut(i, j, k, l) = v;
                }
            }
        }
    }
    Ok(out)
}

/// Sectional curvature of the plane spanned by `u, v`.
pub fn sectional_curvature(
    geom: &Geometry,
    x: &[f64],
    u: &[f64],
    v: &[f64],
) -> Result<f64, GeomError> {
    let g = geom.metric_at(x)?;
    let w = form(&g, u, u) * form(&g, v, v) - form(&g, u, v) * form(&g, u, v);
    if w.abs() <= 1e-12 {
        return Err(GeomError::DegeneratePlane);
    }
    let rl = riemann_lowered(geom, x)?;
    let m = geom.dim();
    let mut num = 0.0;
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                for l in 0..m {
                    num += rl.at(i, j, k, l) * u[i] * v[j] * u[k] * v[l];
                }
            }
        }
    }
    Ok(num / w)
}

/// Covariant derivative of a vector field: `(nabla V)^k_mu = nabla_mu V^k`.
pub fn covariant_derivative_vec<S: Scalar, F: VectorField>(
    geom: &Geometry,
    field: &F,
    x: &[S],
) -> Result<Matrix<S>, GeomError> {
    let m = geom.dim();
    let gamma = christoffel(geom, x)?;
    let v = field.eval(x)?;
    let mut out = Matrix::zeros(m, m); // out(k, mu)
    for mu in 0..m {
        let vx = field.eval(&seed(x, mu))?;
        for k in 0..m {
            let mut s = vx[k].du;
            for l in 0..m {
                s = s + gamma.at(k, mu, l) * v[l];
            }
            *out.at_mut(k, mu) = s;
        }
    }
    Ok(out)
}

/// Covariant derivative of a (0,2)-tensor: `out(mu, i, j) = nabla_mu B_ij`.
pub fn covariant_derivative_t2<S: Scalar, F: Tensor2Field>(
    geom: &Geometry,
    field: &F,
    x: &[S],
) -> Result<Tensor3<S>, GeomError> {
    let m = geom.dim();
    let gamma = christoffel(geom, x)?;
    let b = field.eval(x)?;
    let mut out = Tensor3::zeros(m);
    for mu in 0..m {
        let bx = field.eval(&seed(x, mu))?;
        for i in 0..m {
            for j in 0..m {
                let mut s = bx.at(i, j).du;
                for l in 0..m {
                    s = s - gamma.at(l, mu, i) * b.at(l, j)
                        - gamma.at(l, mu, j) * b.at(i, l);
                }
                *out.at_mut(mu, i, j) = s;
            }
        }
    }
    Ok(out)
}

/// Frame-weighted inverse metric `sum_frame eps e^mu e^nu` for a divergence
/// sum: `g^{-1}` for a full frame, `P g^{-1}` for one distribution.
pub fn frame_weight<S: Scalar>(
    geom: &Geometry,
    weight: DivWeight,
    x: &[S],
) -> Result<Matrix<S>, GeomError> {
    let ginv = geom.metric_at(x)?.inverse()?;
    match weight {
        DivWeight::Full => Ok(ginv),
        DivWeight::Over(role) => {
            let proj = geom.projector(role, x)?;
            Ok(proj.matmul(&ginv))
        }
    }
}

/// Divergence of a vector field with the chosen frame weighting:
/// `sum eps_a g(nabla_{e_a} V, e_a)`.
pub fn div_vec<S: Scalar, F: VectorField>(
    geom: &Geometry,
    field: &F,
    x: &[S],
    weight: DivWeight,
) -> Result<S, GeomError> {
    let m = geom.dim();
    let nabla = covariant_derivative_vec(geom, field, x)?; // (k, mu)
    let g = geom.metric_at(x)?;
    let w = frame_weight(geom, weight, x)?;
    // sum_{mu,nu} w^{mu nu} g(nabla_mu V, e_nu)
    let mut s = S::zero();
    for mu in 0..m {
        for nu in 0..m {
            let mut gv = S::zero();
            for k in 0..m {
                gv = gv + nabla.at(k, mu) * g.at(k, nu);
            }
            s = s + w.at(mu, nu) * gv;
        }
    }
    Ok(s)
}

/// Divergence of a (1,2)-tensor field `P^k_{ij}` over its value slot:
/// `(div P)(e_i, e_j) = sum eps_a g((nabla_{e_a} P)(e_i,e_j), e_a)`.
pub fn div_t3<S: Scalar, F: Tensor3Field>(
    geom: &Geometry,
    field: &F,
    x: &[S],
    weight: DivWeight,
) -> Result<Matrix<S>, GeomError> {
    let m = geom.dim();
    let gamma = christoffel(geom, x)?;
    let p = field.eval(x)?;
    let g = geom.metric_at(x)?;
    let w = frame_weight(geom, weight, x)?;
    // lower the frame slot: weight(mu, k) = sum_nu w^{mu nu} g_{nu k}
    let wl = Matrix::from_fn(m, m, |mu, k| {
        let mut s = S::zero();
        for nu in 0..m {
            s = s + w.at(mu, nu) * g.at(nu, k);
        }
        s
    });
    let mut out = Matrix::zeros(m, m);
    for mu in 0..m {
        let px = field.eval(&seed(x, mu))?;
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    // (nabla_mu P)^k_{ij}
                    let mut nab = px.at(k, i, j).du;
                    for l in 0..m {
                        nab = nab + gamma.at(k, mu, l) * p.at(l, i, j)
                            - gamma.at(l, mu, i) * p.at(k, l, j)
                            - gamma.at(l, mu, j) * p.at(k, i, l);
                    }
                    *out.at_mut(i, j) = out.at(i, j) + wl.at(mu, k) * nab;
                }
            }
        }
    }
    Ok(out)
}

/// Gradient `(grad f)^k = g^{kl} d_l f`.
pub fn grad<S: Scalar, F: ScalarField>(
    geom: &Geometry,
    field: &F,
    x: &[S],
) -> Result<Vec<S>, GeomError> {
    let m = geom.dim();
    let ginv = geom.metric_at(x)?.inverse()?;
    let mut df = vec![S::zero(); m];
    for k in 0..m {
        df[k] = field.eval(&seed(x, k))?.du;
    }
    Ok((0..m)
        .map(|k| {
            let mut s = S::zero();
            for l in 0..m {
                s = s + ginv.at(k, l) * df[l];
            }
            s
        })
        .collect())
}

/// Gradient projected onto one distribution.
pub fn grad_part<S: Scalar, F: ScalarField>(
    geom: &Geometry,
    field: &F,
    role: Role,
    x: &[S],
) -> Result<Vec<S>, GeomError> {
    let gr = grad(geom, field, x)?;
    let proj = geom.projector(role, x)?;
    Ok(proj.mul_vec(&gr))
}

struct GradField<'a, F: ScalarField> {
    geom: &'a Geometry,
    f: &'a F,
    part: Option<Role>,
}

impl<'a, F: ScalarField> VectorField for GradField<'a, F> {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>, GeomError> {
        match self.part {
            None => grad(self.geom, self.f, x),
            Some(role) => grad_part(self.geom, self.f, role, x),
        }
    }
}

/// Laplace-Beltrami operator `div(grad f)`.
pub fn laplacian<S: Scalar, F: ScalarField>(
    geom: &Geometry,
    field: &F,
    x: &[S],
) -> Result<S, GeomError> {
    let gf = GradField {
        geom,
        f: field,
        part: None,
    };
    div_vec(geom, &gf, x, DivWeight::Full)
}

/// Leafwise Laplacian of a distribution: the `role`-frame divergence of the
/// `role`-part of the gradient.
pub fn partial_laplacian<S: Scalar, F: ScalarField>(
    geom: &Geometry,
    field: &F,
    role: Role,
    x: &[S],
) -> Result<S, GeomError> {
    let gf = GradField {
        geom,
        f: field,
        part: Some(role),
    };
    div_vec(geom, &gf, x, DivWeight::Over(role))
}

/// Expression-backed scalar field.
pub struct ExprScalar<'a> {
    pub expr: &'a crate::exprlang::Expr,
    pub params: &'a crate::exprlang::Params,
}

impl<'a> ScalarField for ExprScalar<'a> {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S, GeomError> {
        self.expr.eval(x, self.params)
    }
}

#[cfg(test)]
pub mod tests {
    use super::*;
    use crate::chart::GeometryConfig;
    use crate::exprlang::{Expr, Params};

    pub fn sphere() -> Geometry {
        // unit sphere chart, x0 = theta, x1 = phi, D~ = span(d/dtheta)
        GeometryConfig {
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
        .build()
        .unwrap()
    }

    pub fn warped_line() -> Geometry {
        // g = dt^2 + e^{2t} dx^2, D~ = span(d/dt)
        GeometryConfig {
            n: 1,
            p: 1,
            bounds: vec![[-0.5, 1.5], [-0.5, 1.5]],
            signature_q: 0,
            metric: vec![
                vec!["1".into(), "0".into()],
                vec!["0".into(), "exp(2*x0)".into()],
            ],
            dtilde_frame: vec![vec!["1".into(), "0".into()]],
            params: Params::new(),
        }
        .build()
        .unwrap()
    }

    #[test]
    fn sphere_christoffel() {
        let geom = sphere();
        let th = 1.1f64;
        let gamma = christoffel(&geom, &[th, 0.3]).unwrap();
        assert!((gamma.at(0, 1, 1) - (-th.sin() * th.cos())).abs() < 1e-12);
        assert!((gamma.at(1, 0, 1) - th.cos() / th.sin()).abs() < 1e-12);
        assert!(gamma.at(0, 0, 0).abs() < 1e-14);
    }

    #[test]
    fn warped_christoffel() {
        let geom = warped_line();
        let t = 0.4f64;
        let gamma = christoffel(&geom, &[t, 0.1]).unwrap();
        assert!((gamma.at(0, 1, 1) - (-(2.0 * t).exp())).abs() < 1e-12);
        assert!((gamma.at(1, 0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sectional_curvatures() {
        let geom = sphere();
        let k = sectional_curvature(&geom, &[0.9, 0.2], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((k - 1.0).abs() < 1e-11, "sphere K = {k}");

        let geom = warped_line();
        let k = sectional_curvature(&geom, &[0.3, 0.8], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((k + 1.0).abs() < 1e-11, "warped K = {k}");

        // degenerate plane
        let r = sectional_curvature(&geom, &[0.3, 0.8], &[1.0, 0.0], &[2.0, 0.0]);
        assert!(matches!(r, Err(GeomError::DegeneratePlane)));
    }

    #[test]
    fn sectional_invariant_under_plane_basis_change() {
        let geom = warped_line();
        let x = [0.5, 0.2];
        let k0 = sectional_curvature(&geom, &x, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let k1 =
            sectional_curvature(&geom, &x, &[2.0, 1.0], &[-0.3, 0.9]).unwrap();
        assert!((k0 - k1).abs() < 1e-9);
    }

    #[test]
    fn first_bianchi() {
        let geom = crate::chart::tests::heisenberg();
        let x = [0.2, 0.5, -0.3];
        let r = riemann(&geom, &x).unwrap();
        let m = 3;
        for l in 0..m {
            for i in 0..m {
                for j in 0..m {
                    for k in 0..m {
                        let cyc = r.at(l, i, j, k) + r.at(l, j, k, i) + r.at(l, k, i, j);
                        assert!(cyc.abs() < 1e-11, "Bianchi at {l}{i}{j}{k}: {cyc}");
                    }
                }
            }
        }
    }

    #[test]
    fn metricity() {
        let geom = crate::chart::tests::heisenberg();
        struct MetricAsT2<'a>(&'a Geometry);
        impl<'a> Tensor2Field for MetricAsT2<'a> {
            fn eval<S: Scalar>(&self, x: &[S]) -> Result<Matrix<S>, GeomError> {
                self.0.metric_at(x)
            }
        }
        let x = [0.1, 0.7, 0.2];
        let nab = covariant_derivative_t2(&geom, &MetricAsT2(&geom), &x).unwrap();
        assert!(nab.max_abs() < 1e-12);
    }

    #[test]
    fn divergence_splits_by_distribution() {
        // flat R^3 from the chart tests: D~ = span(d/dz) with x0 = z
        let geom = crate::chart::tests::heisenberg();
        struct V;
        impl VectorField for V {
            fn eval<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>, GeomError> {
                Ok(vec![x[1] * x[1], x[0], x[2]])
            }
        }
        let x = [0.3, -0.2, 0.6];
        let full: f64 = div_vec(&geom, &V, &x, DivWeight::Full).unwrap();
        let perp: f64 = div_vec(&geom, &V, &x, DivWeight::Over(Role::Perp)).unwrap();
        let tilde: f64 = div_vec(&geom, &V, &x, DivWeight::Over(Role::Tilde)).unwrap();
        assert!((full - perp - tilde).abs() < 1e-11);
    }

    #[test]
    fn scalar_operators_on_flat_and_sphere() {
        let geom = crate::chart::tests::heisenberg();
        let e = Expr::parse("x1^2").unwrap();
        let params = Params::new();
        let f = ExprScalar {
            expr: &e,
            params: &params,
        };
        // g is flat in the x-direction; Delta x^2 = 2
        let x = [0.3, 0.1, 0.2];
        let lap: f64 = laplacian(&geom, &f, &x).unwrap();
        assert!((lap - 2.0).abs() < 1e-11, "lap = {lap}");

        // sphere eigenfunction: Delta cos(theta) = -2 cos(theta)
        let geom = sphere();
        let e = Expr::parse("cos(x0)").unwrap();
        let f = ExprScalar {
            expr: &e,
            params: &params,
        };
        let x = [1.2, 0.4];
        let lap: f64 = laplacian(&geom, &f, &x).unwrap();
        assert!((lap + 2.0 * 1.2f64.cos()).abs() < 1e-11);
    }
}
