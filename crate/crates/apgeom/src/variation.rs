//! Adapted variations of the metric: action quadrature over a working
//! domain, volume-normalized families, finite-difference verification of
//! the first-variation formulas, and Euler-Lagrange residual fields.
//!
//! Mean-value terms (the starred scalars) are computed once per
//! (geometry, domain) pair by quadrature; with `volume_preserving = false`
//! they are replaced by zero, which matches dropping the normalization.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::calculus::{div_t3, div_vec, DivWeight, ScalarField, Tensor3Field, VectorField};
use crate::chart::{DeformationField, Geometry, Role};
use crate::error::GeomError;
use crate::extrinsic::{
    codim1, fundamental, mixed_scalar_curvature, normal_derivative_h_sc, partial_ricci,
    restricted_derivative_forms, shape_ops, MeanCurvature, SecondFundamental, ShapeOps,
    TotalMeanCurvature,
};
use crate::identities::{combine, flat, rel};
use crate::linalg::{form, Matrix, Tensor3};
use crate::numerics::{halton_points, BoxRule};
use crate::scalar::{seed, Scalar};

/// Quadrature flavor of a working domain.  Gauss-Legendre for globally
/// smooth action densities; uniform midpoint for bump-localized variation
/// integrands, where it converges superalgebraically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RuleKind {
    Gauss,
    Midpoint,
}

/// Working domain: a coordinate box with a tensor-product rule of the
/// given points-per-axis order.
#[derive(Clone, Debug)]
pub struct Domain {
    pub bounds: Vec<[f64; 2]>,
    pub order: usize,
    pub kind: RuleKind,
}

impl Domain {
    pub fn new(bounds: Vec<[f64; 2]>, order: usize) -> Result<Self, GeomError> {
        if order < 1 || bounds.iter().any(|b| b[1] <= b[0]) {
            return Err(GeomError::config("/domain", "empty box or zero order"));
        }
        Ok(Domain {
            bounds,
            order,
            kind: RuleKind::Gauss,
        })
    }

    pub fn midpoint(bounds: Vec<[f64; 2]>, per_axis: usize) -> Result<Self, GeomError> {
        let mut dom = Domain::new(bounds, per_axis)?;
        dom.kind = RuleKind::Midpoint;
        Ok(dom)
    }

    /// The box must sit inside the geometry's chart.
    pub fn validate(&self, geom: &Geometry) -> Result<(), GeomError> {
        if self.bounds.len() != geom.dim() {
            return Err(GeomError::config("/domain", "dimension mismatch"));
        }
        for (b, c) in self.bounds.iter().zip(&geom.chart.bounds) {
            if b[0] < c[0] - 1e-12 || b[1] > c[1] + 1e-12 {
                return Err(GeomError::config("/domain", "box leaves the chart"));
            }
        }
        Ok(())
    }

    fn rule(&self, order: usize) -> BoxRule {
        match self.kind {
            RuleKind::Gauss => BoxRule::new(&self.bounds, order),
            RuleKind::Midpoint => BoxRule::midpoint(&self.bounds, order),
        }
    }

    /// Integral of `f` against the volume form of `geom`.
    pub fn integrate_dvol(
        &self,
        geom: &Geometry,
        mut f: impl FnMut(&[f64]) -> Result<f64, GeomError>,
    ) -> Result<f64, GeomError> {
        self.rule(self.order)
            .integrate(|x| Ok(f(x)? * geom.volume_density(x)?))
    }

    pub fn volume(&self, geom: &Geometry) -> Result<f64, GeomError> {
        self.integrate_dvol(geom, |_| Ok(1.0))
    }

    /// Mean value of a scalar over the domain.
    pub fn mean(
        &self,
        geom: &Geometry,
        f: impl FnMut(&[f64]) -> Result<f64, GeomError>,
    ) -> Result<f64, GeomError> {
        Ok(self.integrate_dvol(geom, f)? / self.volume(geom)?)
    }

    /// Integral of the Levi-Civita divergence of a vector field over the
    /// box, evaluated as the flux of `sqrt|g| X` through the faces (the
    /// discrete divergence theorem).  This is exact for the divergence
    /// structure and avoids resolving bump-localized derivatives in the
    /// interior.
    pub fn integrate_divergence(
        &self,
        geom: &Geometry,
        field: &impl VectorField,
    ) -> Result<f64, GeomError> {
        let d = self.bounds.len();
        let mut total = 0.0;
        for axis in 0..d {
            let others: Vec<[f64; 2]> = self
                .bounds
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != axis)
                .map(|(_, b)| *b)
                .collect();
            let face = BoxRule::new(&others, self.order.max(12));
            for (side, sign) in [(self.bounds[axis][1], 1.0), (self.bounds[axis][0], -1.0)] {
                total += sign
                    * face.integrate(|u| {
                        let mut x = Vec::with_capacity(d);
                        x.extend_from_slice(&u[..axis]);
                        x.push(side);
                        x.extend_from_slice(&u[axis..]);
                        let v = field.eval(&x)?;
                        Ok(v[axis] * geom.volume_density(&x)?)
                    })?;
            }
        }
        Ok(total)
    }

    /// Interior sample points, shrunk away from the boundary.
    pub fn sample_points(&self, count: usize, margin: f64, start: usize) -> Vec<Vec<f64>> {
        halton_points(self.bounds.len(), count, start)
            .into_iter()
            .map(|u| {
                self.bounds
                    .iter()
                    .zip(&u)
                    .map(|(b, &t)| {
                        let w = (b[1] - b[0]) * (1.0 - 2.0 * margin);
                        b[0] + (b[1] - b[0]) * margin + w * t
                    })
                    .collect()
            })
            .collect()
    }
}

/// Which total-curvature action is integrated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionKind {
    /// Total mixed scalar curvature.
    Mix,
    /// Total extrinsic scalar curvature of the complement distribution.
    ExTilde,
}

/// Action value together with a convergence flag: the rule is re-run with
/// doubled points-per-axis and the relative drift is reported.
#[derive(Clone, Debug, Serialize)]
pub struct ActionValue {
    pub value: f64,
    pub refined: f64,
    pub converged: bool,
}

fn action_integrand(geom: &Geometry, kind: ActionKind, x: &[f64]) -> Result<f64, GeomError> {
    match kind {
        ActionKind::Mix => mixed_scalar_curvature(geom, x),
        ActionKind::ExTilde => {
            let f = fundamental(geom, Role::Perp, x)?;
            Ok(shape_ops(geom, x, &f)?.s_ex)
        }
    }
}

pub fn action_value(
    geom: &Geometry,
    dom: &Domain,
    kind: ActionKind,
) -> Result<ActionValue, GeomError> {
    dom.validate(geom)?;
    let eval = |order: usize| {
        dom.rule(order)
            .integrate(|x| Ok(action_integrand(geom, kind, x)? * geom.volume_density(x)?))
    };
    let value = eval(dom.order)?;
    let refined = eval(dom.order * 2)?;
    let converged = (value - refined).abs() / (1.0 + value.abs()) < 1e-6;
    Ok(ActionValue {
        value,
        refined,
        converged,
    })
}

/// Plain family `g_t = g + tB` or the volume-normalized rescaling of its
/// varied block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flavor {
    Plain,
    VolumeNormalized,
}

#[derive(Clone, Debug)]
pub struct VariationFamily {
    pub base: Geometry,
    pub field: DeformationField,
    pub flavor: Flavor,
}

impl VariationFamily {
    pub fn new(base: Geometry, field: DeformationField, flavor: Flavor) -> Result<Self, GeomError> {
        if flavor == Flavor::VolumeNormalized && field.role != Role::Perp {
            return Err(GeomError::HypothesisViolated {
                which: "volume normalization rescales the complement block only".into(),
            });
        }
        Ok(VariationFamily { base, field, flavor })
    }

    /// The block scale at parameter `t` (identically one for plain families).
    pub fn phi(&self, dom: &Domain, t: f64) -> Result<f64, GeomError> {
        match self.flavor {
            Flavor::Plain => Ok(1.0),
            Flavor::VolumeNormalized => {
                let g_t = self.base.deformed(self.field.clone(), t);
                let p = self.base.rank(self.field.role) as f64;
                Ok((dom.volume(&g_t)? / dom.volume(&self.base)?).powf(-2.0 / p))
            }
        }
    }

    pub fn geometry_at(&self, dom: &Domain, t: f64) -> Result<Geometry, GeomError> {
        match self.flavor {
            Flavor::Plain => Ok(self.base.deformed(self.field.clone(), t)),
            Flavor::VolumeNormalized => {
                let phi = self.phi(dom, t)?;
                Ok(self.base.deformed_scaled(self.field.clone(), t, phi))
            }
        }
    }
}

/// Central difference with one Richardson extrapolation level.
pub fn fd_richardson(
    mut f: impl FnMut(f64) -> Result<f64, GeomError>,
    step: f64,
) -> Result<f64, GeomError> {
    let mut central = |h: f64| -> Result<f64, GeomError> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
    let d1 = central(step)?;
    let d2 = central(step / 2.0)?;
    Ok((4.0 * d2 - d1) / 3.0)
}

/// `Tr_g B` of a deformation direction as a scalar field on the base.
struct TraceB<'a> {
    base: &'a Geometry,
    field: &'a DeformationField,
}

impl<'a> ScalarField for TraceB<'a> {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S, GeomError> {
        let ginv = self.base.metric_at(x)?.inverse()?;
        let b = self.field.eval(self.base, x)?;
        let m = self.base.dim();
        let mut s = S::zero();
        for i in 0..m {
            for j in 0..m {
                s = s + ginv.at(i, j) * b.at(i, j);
            }
        }
        Ok(s)
    }
}

/// Full pairing of two (0,2) tensors: both indices raised with `g^{-1}`.
fn pair_full(ginv: &Matrix<f64>, c: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    ginv.matmul(c).matmul(&ginv.matmul(b)).trace()
}

/// Checks of the volume-normalized family: the flow of the domain volume
/// and the first derivative of the block scale against its closed form.
pub fn volume_normalization_check(
    base: &Geometry,
    dom: &Domain,
    field: &DeformationField,
    fd_step: f64,
) -> Result<(f64, f64), GeomError> {
    let family = VariationFamily::new(base.clone(), field.clone(), Flavor::VolumeNormalized)?;
    let dvol_dt = fd_richardson(
        |t| dom.volume(&family.geometry_at(dom, t)?),
        fd_step,
    )?;
    let phi_dot = fd_richardson(|t| family.phi(dom, t), fd_step)?;
    let trace = TraceB { base, field };
    let p = base.rank(field.role) as f64;
    let expected = -dom.mean(base, |x| trace.eval(x))? / p;
    Ok((dvol_dt.abs(), (phi_dot - expected).abs()))
}

/// Pointwise quantities of the configuration at one parameter value.
struct Snapshot {
    ops_tilde: ShapeOps<f64>,
    ops_perp: ShapeOps<f64>,
    mean_tilde: Vec<f64>,
    g: Matrix<f64>,
}

fn snapshot(geom: &Geometry, x: &[f64]) -> Result<Snapshot, GeomError> {
    let ft = fundamental(geom, Role::Tilde, x)?;
    let fp = fundamental(geom, Role::Perp, x)?;
    Ok(Snapshot {
        mean_tilde: ft.mean.clone(),
        ops_tilde: shape_ops(geom, x, &ft)?,
        ops_perp: shape_ops(geom, x, &fp)?,
        g: geom.metric_at(x)?,
    })
}

/// Plain smooth test field (deliberately not adapted) for the divergence
/// evolution formula.
struct FixedField;

impl VectorField for FixedField {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>, GeomError> {
        let m = x.len();
        Ok((0..m)
            .map(|i| S::one() + S::from_f64(0.3) * x[(i + 1) % m].sin())
            .collect())
    }
}

/// `H_role (x) g_role - h_role`: the tensor whose divergence carries the
/// conformal part of the first variation.
struct MeanFormMinusSff<'a> {
    geom: &'a Geometry,
    role: Role,
}

impl<'a> Tensor3Field for MeanFormMinusSff<'a> {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<Tensor3<S>, GeomError> {
        let m = self.geom.dim();
        let f = fundamental(self.geom, self.role, x)?;
        let g = self.geom.metric_at(x)?;
        let proj = self.geom.projector(self.role, x)?;
        let block = proj.transpose().matmul(&g).matmul(&proj);
        let mut out = Tensor3::zeros(m);
        for k in 0..m {
            for mu in 0..m {
                for nu in 0..m {
                    *out.at_mut(k, mu, nu) =
                        f.mean[k] * block.at(mu, nu) - f.h.at(k, mu, nu);
                }
            }
        }
        Ok(out)
    }
}

/// Named scalar residuals from one verification pass.
pub type NamedResiduals = Vec<(String, f64)>;

/// Finite-difference checks of the first-variation formulas for a
/// complement-block direction `B`.
pub fn first_variation_check(
    base: &Geometry,
    dom: &Domain,
    field: &DeformationField,
    fd_step: f64,
) -> Result<NamedResiduals, GeomError> {
    if field.role != Role::Perp {
        return Err(GeomError::HypothesisViolated {
            which: "first-variation formulas are stated for complement-block directions".into(),
        });
    }
    let family = VariationFamily::new(base.clone(), field.clone(), Flavor::Plain)?;
    let m = base.dim();
    let mut out: NamedResiduals = Vec::new();
    let mut record = |name: &str, v: f64| match out.iter_mut().find(|(n, _)| n == name) {
        Some(e) => e.1 = e.1.max(v),
        None => out.push((name.to_string(), v)),
    };

    let points = dom.sample_points(5, 0.25, 3);
    for x in &points {
        let snap = snapshot(base, x)?;
        let ginv = snap.g.inverse()?;
        let b = field.eval(base, x)?;
        let at = |t: f64| family.geometry_at(dom, t);

        // dS_ex/dt = -<Phi_h, B>
        let d_sex = fd_richardson(
            |t| {
                let g = at(t)?;
                let f = fundamental(&g, Role::Tilde, x)?;
                Ok(shape_ops(&g, x, &f)?.s_ex)
            },
            fd_step,
        )?;
        let rhs = -pair_full(&ginv, &snap.ops_tilde.phi_h, &b);
        record("dt_s_ex", rel((d_sex - rhs).abs(), d_sex.abs().max(rhs.abs())));

        // d<T~,T~>/dt = <2 T-op flat, B>
        let d_tt = fd_richardson(
            |t| {
                let g = at(t)?;
                let f = fundamental(&g, Role::Perp, x)?;
                Ok(shape_ops(&g, x, &f)?.t_norm2)
            },
            fd_step,
        )?;
        let tflat = flat(&snap.g, &snap.ops_perp.cal_t);
        let rhs = 2.0 * pair_full(&ginv, &tflat, &b);
        record(
            "dt_t_tilde_norm",
            rel((d_tt - rhs).abs(), d_tt.abs().max(rhs.abs())),
        );

        // d<T,T>/dt = -<Phi_T, B>
        let d_t = fd_richardson(
            |t| {
                let g = at(t)?;
                let f = fundamental(&g, Role::Tilde, x)?;
                Ok(shape_ops(&g, x, &f)?.t_norm2)
            },
            fd_step,
        )?;
        let rhs = -pair_full(&ginv, &snap.ops_tilde.phi_t, &b);
        record("dt_t_norm", rel((d_t - rhs).abs(), d_t.abs().max(rhs.abs())));

        // dH/dt = -B#(H)
        let mut comp = 0.0f64;
        let mut scale = 0.0f64;
        for mu in 0..m {
            let dh = fd_richardson(
                |t| {
                    let g = at(t)?;
                    Ok(MeanCurvature {
                        geom: &g,
                        role: Role::Tilde,
                    }
                    .eval(x)?[mu])
                },
                fd_step,
            )?;
            let mut bh = 0.0;
            for nu in 0..m {
                for k in 0..m {
                    bh += ginv.at(mu, nu) * b.at(nu, k) * snap.mean_tilde[k];
                }
            }
            comp = comp.max((dh + bh).abs());
            scale = scale.max(dh.abs()).max(bh.abs());
        }
        record("dt_mean_curvature", rel(comp, scale));

        // d(dvol)/dt = (Tr_g B / 2) dvol
        let d_vol = fd_richardson(|t| at(t)?.volume_density(x), fd_step)?;
        let trace = TraceB { base, field }.eval(x)?;
        let rhs = 0.5 * trace * base.volume_density(x)?;
        record("dt_dvol", rel((d_vol - rhs).abs(), d_vol.abs().max(rhs.abs())));

        // d(div X)/dt = X(Tr_g B)/2 for a fixed field X
        let d_div = fd_richardson(
            |t| div_vec(&at(t)?, &FixedField, x, DivWeight::Full),
            fd_step,
        )?;
        let xv = FixedField.eval(x)?;
        let tb = TraceB { base, field };
        let mut xtb = 0.0;
        for mu in 0..m {
            xtb += xv[mu] * tb.eval(&seed(x, mu))?.du;
        }
        record(
            "dt_div",
            rel((d_div - 0.5 * xtb).abs(), d_div.abs().max(xtb.abs())),
        );
    }

    // Integrated forms: boundary terms vanish by the bump support.
    let d_ex = fd_richardson(
        |t| {
            let g = family.geometry_at(dom, t)?;
            dom.integrate_dvol(&g, |x| action_integrand(&g, ActionKind::ExTilde, x))
        },
        fd_step,
    )?;
    let rhs = dom.integrate_dvol(base, |x| {
        let snap = snapshot(base, x)?;
        let ginv = snap.g.inverse()?;
        let b = field.eval(base, x)?;
        let div_part = div_t3(base, &MeanFormMinusSff { geom: base, role: Role::Perp }, x, DivWeight::Full)?;
        let kflat = flat(&snap.g, &snap.ops_perp.kappa);
        let mut c = div_part.clone();
        for i in 0..m {
            for j in 0..m {
                *c.at_mut(i, j) -= kflat.at(i, j);
            }
        }
        let trace = TraceB { base, field }.eval(x)?;
        Ok(pair_full(&ginv, &c, &b) + 0.5 * snap.ops_perp.s_ex * trace)
    })?;
    out.push((
        "dt_integrated_s_ex_tilde".into(),
        rel((d_ex - rhs).abs(), d_ex.abs().max(rhs.abs())),
    ));

    // d/dt of the total divergence integral vanishes for plain families;
    // the divergence integral itself is taken by the flux form
    let d_divtot = fd_richardson(
        |t| {
            let g = family.geometry_at(dom, t)?;
            dom.integrate_divergence(&g, &TotalMeanCurvature { geom: &g })
        },
        fd_step,
    )?;
    out.push(("dt_integrated_div_total_mean".into(), d_divtot.abs()));
    Ok(out)
}

/// The Euler-Lagrange pairing tensor of the mixed action for variations of
/// the `role` block, including the starred mean-value term.
fn mix_variation_tensor(
    geom: &Geometry,
    x: &[f64],
    role: Role,
    star_mean: f64,
) -> Result<Matrix<f64>, GeomError> {
    let m = geom.dim();
    let other = role.other();
    let g = geom.metric_at(x)?;
    let proj = geom.projector(role, x)?;
    let block = proj.transpose().matmul(&g).matmul(&proj);
    let f_role = fundamental(geom, role, x)?;
    let ops_role = shape_ops(geom, x, &f_role)?;
    let f_other = fundamental(geom, other, x)?;
    let ops_other = shape_ops(geom, x, &f_other)?;
    let div_part = div_t3(geom, &MeanFormMinusSff { geom, role }, x, DivWeight::Full)?;
    let tflat = flat(&g, &ops_role.cal_t);
    let kflat = flat(&g, &ops_role.kappa);
    let smix = mixed_scalar_curvature(geom, x)?;
    let div_total: f64 = div_vec(geom, &TotalMeanCurvature { geom }, x, DivWeight::Full)?;
    let c = 0.5 * (smix - star_mean - div_total);
    Ok(Matrix::from_fn(m, m, |i, j| {
        div_part.at(i, j) + 2.0 * tflat.at(i, j)
            - ops_other.phi_h.at(i, j)
            - ops_other.phi_t.at(i, j)
            - kflat.at(i, j)
            + c * block.at(i, j)
    }))
}

/// Pointwise starred scalar for variations of the `role` block (the dual
/// form swaps every tilded and untilded invariant).
pub fn star_pointwise(geom: &Geometry, x: &[f64], role: Role) -> Result<f64, GeomError> {
    let other = role.other();
    let f_role = fundamental(geom, role, x)?;
    let ops_role = shape_ops(geom, x, &f_role)?;
    let f_other = fundamental(geom, other, x)?;
    let ops_other = shape_ops(geom, x, &f_other)?;
    let smix = mixed_scalar_curvature(geom, x)?;
    let mean_other = MeanCurvature { geom, role: other };
    let div_h_other: f64 = div_vec(geom, &mean_other, x, DivWeight::Full)?;
    let rank = geom.rank(role) as f64;
    Ok(smix
        - (2.0 / rank)
            * (ops_other.s_ex + 2.0 * ops_role.t_norm2 - ops_other.t_norm2 + div_h_other))
}

/// The Euler-Lagrange systems with computable residuals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElSystem {
    MixPerp,
    MixTangent,
    ExPerp,
    ExTangent,
    FlowPerp,
    FlowTangent,
    Codim1Perp,
    Codim1Tangent,
    Gravity,
    Biconformal,
    UmbilicalPair,
}

impl ElSystem {
    pub const ALL: [ElSystem; 11] = [
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

    pub fn name(&self) -> &'static str {
        match self {
            ElSystem::MixPerp => "mix-perp",
            ElSystem::MixTangent => "mix-tangent",
            ElSystem::ExPerp => "ex-perp",
            ElSystem::ExTangent => "ex-tangent",
            ElSystem::FlowPerp => "flow-perp",
            ElSystem::FlowTangent => "flow-tangent",
            ElSystem::Codim1Perp => "codim1-perp",
            ElSystem::Codim1Tangent => "codim1-tangent",
            ElSystem::Gravity => "gravity",
            ElSystem::Biconformal => "biconformal",
            ElSystem::UmbilicalPair => "umbilical-pair",
        }
    }
}

impl fmt::Display for ElSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ElSystem {
    type Err = GeomError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ElSystem::ALL
            .iter()
            .copied()
            .find(|sys| sys.name() == s)
            .ok_or_else(|| GeomError::config("/system", "unknown Euler-Lagrange system"))
    }
}

/// One Euler-Lagrange residual evaluation.
#[derive(Clone, Debug, Serialize)]
pub struct ElResidual {
    pub system: ElSystem,
    pub residual: f64,
    pub details: Vec<(String, f64)>,
}

/// Caches the domain means required by the starred terms; write-once.
pub struct ElEvaluator<'a> {
    pub geom: &'a Geometry,
    pub dom: &'a Domain,
    pub volume_preserving: bool,
    star_perp: f64,
    star_tilde: f64,
    ex_star: f64,
    ric_mean: f64,
}

impl<'a> ElEvaluator<'a> {
    pub fn new(
        geom: &'a Geometry,
        dom: &'a Domain,
        volume_preserving: bool,
    ) -> Result<Self, GeomError> {
        dom.validate(geom)?;
        let (star_perp, star_tilde, ex_star) = if volume_preserving {
            (
                dom.mean(geom, |x| star_pointwise(geom, x, Role::Perp))?,
                dom.mean(geom, |x| star_pointwise(geom, x, Role::Tilde))?,
                dom.mean(geom, |x| action_integrand(geom, ActionKind::ExTilde, x))?,
            )
        } else {
            (0.0, 0.0, 0.0)
        };
        let ric_mean = dom.mean(geom, |x| mixed_scalar_curvature(geom, x))?;
        Ok(ElEvaluator {
            geom,
            dom,
            volume_preserving,
            star_perp,
            star_tilde,
            ex_star,
            ric_mean,
        })
    }

    pub fn star(&self, role: Role) -> f64 {
        match role {
            Role::Perp => self.star_perp,
            Role::Tilde => self.star_tilde,
        }
    }

    fn require_rank_one(&self, role: Role, system: &str) -> Result<(), GeomError> {
        if self.geom.rank(role) != 1 {
            return Err(GeomError::HypothesisViolated {
                which: format!("{system} needs a rank-one block"),
            });
        }
        Ok(())
    }

    pub fn residual(&self, x: &[f64], system: ElSystem) -> Result<ElResidual, GeomError> {
        match system {
            ElSystem::MixPerp => self.mix(x, Role::Perp),
            ElSystem::MixTangent => self.mix(x, Role::Tilde),
            ElSystem::ExPerp => self.ex_perp(x),
            ElSystem::ExTangent => self.ex_tangent(x),
            ElSystem::FlowPerp => self.flow_perp(x),
            ElSystem::FlowTangent => self.flow_tangent(x),
            ElSystem::Codim1Perp => self.codim1_perp(x),
            ElSystem::Codim1Tangent => self.codim1_tangent(x),
            ElSystem::Gravity => self.gravity(x),
            ElSystem::Biconformal => self.biconformal(x),
            ElSystem::UmbilicalPair => self.umbilical_pair(x),
        }
    }

    /// Full tensor system for variations of the `role` block, in both the
    /// partial-Ricci form and the raw divergence form; the gap between the
    /// two is an exact identity and is reported as a cross-check.
    fn mix(&self, x: &[f64], role: Role) -> Result<ElResidual, GeomError> {
        let geom = self.geom;
        let m = geom.dim();
        let other = role.other();
        let g = geom.metric_at(x)?;
        let proj = geom.projector(role, x)?;
        let block = proj.transpose().matmul(&g).matmul(&proj);
        let f_role = fundamental(geom, role, x)?;
        let ops_role = shape_ops(geom, x, &f_role)?;
        let f_other = fundamental(geom, other, x)?;
        let ops_other = shape_ops(geom, x, &f_other)?;
        let star = self.star(role);

        let r = partial_ricci(geom, role, x)?;
        let hflat: Vec<f64> = (0..m)
            .map(|k| (0..m).map(|l| g.at(k, l) * f_role.mean[l]).sum())
            .collect();
        let pair_mean = Matrix::from_fn(m, m, |mu, nu| {
            (0..m).map(|k| f_role.h.at(k, mu, nu) * hflat[k]).sum::<f64>()
        });
        let a_flat = flat(&g, &ops_role.cal_a);
        let t_flat = flat(&g, &ops_role.cal_t);
        let k_flat = flat(&g, &ops_role.kappa);
        let mean_other = MeanCurvature { geom, role: other };
        let (def, _) = restricted_derivative_forms(geom, &mean_other, role, x)?;
        let smix = mixed_scalar_curvature(geom, x)?;
        let div_role: f64 = div_vec(geom, &MeanCurvature { geom, role }, x, DivWeight::Full)?;
        let div_other: f64 = div_vec(geom, &mean_other, x, DivWeight::Full)?;
        let rhs = block.scale(0.5 * (smix - star + div_role - div_other));

        let lhs = Matrix::from_fn(m, m, |i, j| {
            r.at(i, j) - pair_mean.at(i, j) + a_flat.at(i, j) - t_flat.at(i, j)
                + ops_other.phi_h.at(i, j)
                + ops_other.phi_t.at(i, j)
                + ops_other.psi.at(i, j)
                - def.at(i, j)
                + k_flat.at(i, j)
        });
        let residual = combine(&lhs, &[(1.0, &rhs)], &proj);

        // raw form: div h_role - 2 T-op + Phi terms + kappa = rhs
        let div_h = div_t3(geom, &SecondFundamental { geom, role }, x, DivWeight::Full)?;
        let raw = Matrix::from_fn(m, m, |i, j| {
            div_h.at(i, j) - 2.0 * t_flat.at(i, j)
                + ops_other.phi_h.at(i, j)
                + ops_other.phi_t.at(i, j)
                + k_flat.at(i, j)
        });
        let raw_residual = combine(&raw, &[(1.0, &rhs)], &proj);
        let gap = combine(&lhs, &[(1.0, &raw)], &proj);
        Ok(ElResidual {
            system: if role == Role::Perp {
                ElSystem::MixPerp
            } else {
                ElSystem::MixTangent
            },
            residual,
            details: vec![
                ("raw_form".into(), raw_residual),
                ("raw_gap".into(), gap),
            ],
        })
    }

    fn ex_star(&self) -> f64 {
        self.ex_star
    }

    /// Complement-block system of the total extrinsic curvature action.
    fn ex_perp(&self, x: &[f64]) -> Result<ElResidual, GeomError> {
        let geom = self.geom;
        let p = geom.p();
        if p < 2 {
            return Err(GeomError::HypothesisViolated {
                which: "extrinsic action complement system needs rank at least two".into(),
            });
        }
        let g = geom.metric_at(x)?;
        let proj = geom.projector(Role::Perp, x)?;
        let block = proj.transpose().matmul(&g).matmul(&proj);
        let f = fundamental(geom, Role::Perp, x)?;
        let ops = shape_ops(geom, x, &f)?;
        let div_h = div_t3(geom, &SecondFundamental { geom, role: Role::Perp }, x, DivWeight::Full)?;
        let k_flat = flat(&g, &ops.kappa);
        let div_mean: f64 = div_vec(
            geom,
            &MeanCurvature { geom, role: Role::Perp },
            x,
            DivWeight::Full,
        )?;
        let star = self.ex_star();
        let m = geom.dim();
        let lhs = Matrix::from_fn(m, m, |i, j| div_h.at(i, j) + k_flat.at(i, j));
        // raw form with the explicit divergence on the right
        let rhs_raw = block.scale(div_mean + 0.5 * (ops.s_ex - star));
        let residual = combine(&lhs, &[(1.0, &rhs_raw)], &proj);
        // trace-eliminated form and the scalar trace equation
        let pf = p as f64;
        let rhs_red = block.scale(-(ops.s_ex - star) / (2.0 * (pf - 1.0)));
        let reduced = combine(&lhs, &[(1.0, &rhs_red)], &proj);
        let tr_target = pf / (2.0 * (1.0 - pf)) * (ops.s_ex - star);
        let trace_res = rel(
            (div_mean - tr_target).abs(),
            div_mean.abs().max(tr_target.abs()),
        );
        Ok(ElResidual {
            system: ElSystem::ExPerp,
            residual,
            details: vec![
                ("reduced_form".into(), reduced),
                ("trace_equation".into(), trace_res),
            ],
        })
    }

    /// Tangent-block system of the total extrinsic curvature action.
    fn ex_tangent(&self, x: &[f64]) -> Result<ElResidual, GeomError> {
        let geom = self.geom;
        let n = geom.n() as f64;
        let g = geom.metric_at(x)?;
        let proj = geom.projector(Role::Tilde, x)?;
        let block = proj.transpose().matmul(&g).matmul(&proj);
        let f = fundamental(geom, Role::Perp, x)?;
        let ops = shape_ops(geom, x, &f)?;
        let star = self.ex_star();
        let rhs = block.scale(0.5 * (ops.s_ex - (n - 2.0) / n * star));
        let residual = combine(&ops.phi_h, &[(1.0, &rhs)], &proj);
        let umb = block.scale(ops.s_ex / n);
        let umbilical = combine(&ops.phi_h, &[(1.0, &umb)], &proj);
        let const_res = rel((ops.s_ex - star).abs(), ops.s_ex.abs().max(star.abs()));
        Ok(ElResidual {
            system: ElSystem::ExTangent,
            residual,
            details: vec![
                ("umbilical_form".into(), umbilical),
                ("constancy".into(), const_res),
            ],
        })
    }

    /// Flow system (tangent block of rank one), complement-block variation.
    fn flow_perp(&self, x: &[f64]) -> Result<ElResidual, GeomError> {
        self.require_rank_one(Role::Tilde, "flow system")?;
        let geom = self.geom;
        let m = geom.dim();
        let g = geom.metric_at(x)?;
        let c = codim1(geom, Role::Tilde, x)?;
        let eps = c.eps;
        let proj = geom.projector(Role::Perp, x)?;
        let block = proj.transpose().matmul(&g).matmul(&proj);
        let a2 = flat(&g, &c.a_n.matmul(&c.a_n));
        let t2 = flat(&g, &c.tsharp_n.matmul(&c.tsharp_n));
        let comm_op = c
            .tsharp_n
            .matmul(&c.a_n)
            .sub(&c.a_n.matmul(&c.tsharp_n));
        let comm = flat(&g, &comm_op);
        let hone = MeanCurvature { geom, role: Role::Tilde };
        let hvec = hone.eval(x)?;
        let hflat: Vec<f64> = (0..m)
            .map(|k| (0..m).map(|l| g.at(k, l) * hvec[l]).sum())
            .collect();
        let hh = Matrix::from_fn(m, m, |i, j| hflat[i] * hflat[j]);
        let (def, _) = restricted_derivative_forms(geom, &hone, Role::Perp, x)?;
        let tau1 = c.tau[0];
        let lhs = Matrix::from_fn(m, m, |i, j| {
            eps * (c.jacobi.at(i, j) + a2.at(i, j) - t2.at(i, j) + comm.at(i, j))
                - tau1 * c.h_sc.at(i, j)
                + hh.at(i, j)
                - def.at(i, j)
        });
        let htilde = MeanCurvature { geom, role: Role::Perp };
        let div_htilde: f64 = div_vec(geom, &htilde, x, DivWeight::Full)?;
        let div_hone: f64 = div_vec(geom, &hone, x, DivWeight::Full)?;
        let rhs = block.scale(0.5 * (eps * c.ric_n - self.star(Role::Perp) + div_htilde - div_hone));
        let residual = combine(&lhs, &[(1.0, &rhs)], &proj);
        Ok(ElResidual {
            system: ElSystem::FlowPerp,
            residual,
            details: vec![],
        })
    }

    /// Flow system, tangent-block variation: a scalar equation.
    fn flow_tangent(&self, x: &[f64]) -> Result<ElResidual, GeomError> {
        self.require_rank_one(Role::Tilde, "flow system")?;
        let geom = self.geom;
        let c = codim1(geom, Role::Tilde, x)?;
        let f = fundamental(geom, Role::Perp, x)?;
        let tt = shape_ops(geom, x, &f)?.t_norm2;
        let div_total: f64 = div_vec(geom, &TotalMeanCurvature { geom }, x, DivWeight::Full)?;
        let value = c.eps * c.ric_n + self.star(Role::Tilde) - 4.0 * tt - div_total;
        let scale = (c.eps * c.ric_n)
            .abs()
            .max(tt.abs())
            .max(div_total.abs())
            .max(self.star(Role::Tilde).abs());
        Ok(ElResidual {
            system: ElSystem::FlowTangent,
            residual: rel(value.abs(), scale),
            details: vec![],
        })
    }

    /// Codimension-one foliation, complement-block variation: scalar
    /// equation on the symmetric functions of the Weingarten operator.
    fn codim1_perp(&self, x: &[f64]) -> Result<ElResidual, GeomError> {
        self.require_rank_one(Role::Perp, "codimension-one system")?;
        let geom = self.geom;
        let c = codim1(geom, Role::Perp, x)?;
        let star = self.star(Role::Perp);
        let value = c.tau[0] * c.tau[0] - c.tau[1] + c.eps * star;
        let scale = (c.tau[0] * c.tau[0]).abs().max(c.tau[1].abs()).max(star.abs());
        let residual = rel(value.abs(), scale);

        // raw form via Ric_N; equivalent through the trace identity, with
        // the normal-sign weight on the divergence term
        let tau1_field = crate::identities::Tau1Field {
            geom,
            one_role: Role::Perp,
        };
        let m = geom.dim();
        let mut n_tau1 = 0.0;
        for mu in 0..m {
            n_tau1 += c.normal[mu] * tau1_field.eval(&seed(x, mu))?.du;
        }
        let div_htilde: f64 = div_vec(
            geom,
            &MeanCurvature { geom, role: Role::Perp },
            x,
            DivWeight::Full,
        )?;
        let raw = c.ric_n + c.eps * star - (n_tau1 - c.tau[0] * c.tau[0]) - c.eps * div_htilde;
        let raw_scale = c.ric_n.abs().max(n_tau1.abs()).max(div_htilde.abs());
        // the two forms are related by the trace of the Jacobi identity
        // and must agree identically
        let trace_gap = rel((value - raw).abs(), scale.max(raw_scale));
        Ok(ElResidual {
            system: ElSystem::Codim1Perp,
            residual,
            details: vec![
                ("raw_form".into(), rel(raw.abs(), raw_scale)),
                ("trace_gap".into(), trace_gap),
            ],
        })
    }

    /// Codimension-one foliation, tangent-block variation.
    fn codim1_tangent(&self, x: &[f64]) -> Result<ElResidual, GeomError> {
        self.require_rank_one(Role::Perp, "codimension-one system")?;
        let geom = self.geom;
        let c = codim1(geom, Role::Perp, x)?;
        let eps = c.eps;
        let g = geom.metric_at(x)?;
        let proj = geom.projector(Role::Tilde, x)?;
        let block = proj.transpose().matmul(&g).matmul(&proj);
        let nab = normal_derivative_h_sc(geom, Role::Perp, x)?;
        let tau1 = c.tau[0];
        let m = geom.dim();
        let tau1_field = crate::identities::Tau1Field {
            geom,
            one_role: Role::Perp,
        };
        let mut n_tau1 = 0.0;
        for mu in 0..m {
            n_tau1 += c.normal[mu] * tau1_field.eval(&seed(x, mu))?.du;
        }
        let star = self.star(Role::Tilde);
        let lhs = Matrix::from_fn(m, m, |i, j| nab.at(i, j) - tau1 * c.h_sc.at(i, j));
        let rhs = block.scale(0.5 * (2.0 * eps * (n_tau1 - tau1 * tau1) + eps * (tau1 * tau1 - c.tau[1]) - star));
        let residual = combine(&lhs, &[(1.0, &rhs)], &proj);
        Ok(ElResidual {
            system: ElSystem::Codim1Tangent,
            residual,
            details: vec![],
        })
    }

    /// The field-equation form of the codimension-one system: a single
    /// full tensor built from the normal derivative of the scalar second
    /// form, whose components reproduce the two scalar/leaf systems.
    /// Only the symmetric part enters; the antisymmetric defect on
    /// `(X, N)` pairs is reported, not asserted to vanish.
    fn gravity(&self, x: &[f64]) -> Result<ElResidual, GeomError> {
        self.require_rank_one(Role::Perp, "field-equation form")?;
        let geom = self.geom;
        let m = geom.dim();
        let g = geom.metric_at(x)?;
        let ginv = g.inverse()?;
        let c = codim1(geom, Role::Perp, x)?;
        let eps = c.eps;
        let nab = normal_derivative_h_sc(geom, Role::Perp, x)?;
        let tau1 = c.tau[0];
        // leaf block of Ric_D, restricted to leaf slots
        let ptil = geom.projector(Role::Tilde, x)?;
        let raw_leaf = Matrix::from_fn(m, m, |i, j| nab.at(i, j) - tau1 * c.h_sc.at(i, j));
        let leaf = ptil.transpose().matmul(&raw_leaf.matmul(&ptil));
        // (N,N) entry: -div of the normal-curve curvature vector
        let htilde = MeanCurvature { geom, role: Role::Perp };
        let div_htilde: f64 = div_vec(geom, &htilde, x, DivWeight::Full)?;
        let nflat: Vec<f64> = (0..m)
            .map(|k| (0..m).map(|l| g.at(k, l) * c.normal[l]).sum())
            .collect();
        let ric_d = Matrix::from_fn(m, m, |i, j| {
            leaf.at(i, j) - div_htilde * nflat[i] * nflat[j]
        });
        let scal_d = {
            let mut s = 0.0;
            for i in 0..m {
                for j in 0..m {
                    s += ginv.at(i, j) * ric_d.at(i, j);
                }
            }
            s
        };
        let el = Matrix::from_fn(m, m, |i, j| {
            ric_d.at(i, j) - 0.5 * scal_d * g.at(i, j)
                + c.ric_n * (nflat[i] * nflat[j] + 0.5 * g.at(i, j))
        });
        // component on (N, N)
        let mut nn = 0.0;
        for i in 0..m {
            for j in 0..m {
                nn += el.at(i, j) * c.normal[i] * c.normal[j];
            }
        }
        // leaf-projected block of the field equation
        let leaf_res = ptil.transpose().matmul(&el.matmul(&ptil));
        // antisymmetric defect of the mixed components: div(A_N X) terms
        let mixed_defect = {
            let sk = Matrix::from_fn(m, m, |i, j| 0.5 * (el.at(i, j) - el.at(j, i)));
            sk.max_abs()
        };
        let scale = 1.0 + el.max_abs().max(c.ric_n.abs());

        // cross-checks against the scalar and leaf systems of the
        // unnormalized action (no starred terms in the field equation):
        // the (N,N) component doubles the complement system, the leaf
        // block matches the tangent system, for a time-like geodesic
        // normal congruence.
        let v0 = tau1 * tau1 - c.tau[1];
        let ricns0f_gap = (2.0 * nn - v0).abs() / (1.0 + nn.abs().max(v0.abs()));
        let tau1_field = crate::identities::Tau1Field {
            geom,
            one_role: Role::Perp,
        };
        let mut n_tau1 = 0.0;
        for mu in 0..m {
            n_tau1 += c.normal[mu] * tau1_field.eval(&seed(x, mu))?.du;
        }
        let gtil = ptil.transpose().matmul(&g).matmul(&ptil);
        let coeff = 0.5 * (2.0 * eps * (n_tau1 - tau1 * tau1) + eps * v0);
        let ricns1f = Matrix::from_fn(m, m, |i, j| leaf.at(i, j) - coeff * gtil.at(i, j));
        let gap = Matrix::from_fn(m, m, |i, j| leaf_res.at(i, j) - ricns1f.at(i, j));
        let ricns1f_gap = gap.max_abs() / (1.0 + leaf_res.max_abs().max(ricns1f.max_abs()));

        Ok(ElResidual {
            system: ElSystem::Gravity,
            residual: (nn.abs().max(leaf_res.max_abs())) / scale,
            details: vec![
                ("component_nn".into(), nn),
                ("ricns0f_gap".into(), ricns0f_gap),
                ("ricns1f_gap".into(), ricns1f_gap),
                ("antisymmetric_defect".into(), mixed_defect / scale),
            ],
        })
    }

    /// Scalar equation for complement-conformal variations: the trace of
    /// the mixed-action pairing tensor against the block metric.
    fn biconformal(&self, x: &[f64]) -> Result<ElResidual, GeomError> {
        let geom = self.geom;
        let value = self.biconformal_density(x)?;
        // the paper groups the same trace through the decomposition
        // identity; report that grouping as well
        let f_t = fundamental(geom, Role::Tilde, x)?;
        let ops_t = shape_ops(geom, x, &f_t)?;
        let f_p = fundamental(geom, Role::Perp, x)?;
        let ops_p = shape_ops(geom, x, &f_p)?;
        let p = geom.p() as f64;
        let div_htilde: f64 = div_vec(
            geom,
            &MeanCurvature { geom, role: Role::Perp },
            x,
            DivWeight::Full,
        )?;
        let star = self.star(Role::Perp);
        let paper = (p - 1.0) * div_htilde
            + 0.5 * (p - 2.0) * (ops_t.s_ex + ops_p.t_norm2)
            + 0.5 * p * (ops_p.s_ex + ops_t.t_norm2 - star);
        let scale = 1.0 + value.abs().max(paper.abs());
        Ok(ElResidual {
            system: ElSystem::Biconformal,
            residual: value.abs() / scale,
            details: vec![("paper_grouping".into(), paper.abs() / scale)],
        })
    }

    /// `<E, g_perp>`: the Riesz representative of conformal variations.
    pub fn biconformal_density(&self, x: &[f64]) -> Result<f64, GeomError> {
        let geom = self.geom;
        let g = geom.metric_at(x)?;
        let ginv = g.inverse()?;
        let proj = geom.projector(Role::Perp, x)?;
        let block = proj.transpose().matmul(&g).matmul(&proj);
        let e = mix_variation_tensor(geom, x, Role::Perp, self.star(Role::Perp))?;
        Ok(pair_full(&ginv, &e, &block))
    }

    /// Sufficient-condition systems for pairs of umbilical or geodesic
    /// distributions.
    fn umbilical_pair(&self, x: &[f64]) -> Result<ElResidual, GeomError> {
        let geom = self.geom;
        let m = geom.dim();
        let g = geom.metric_at(x)?;
        let ft = fundamental(geom, Role::Tilde, x)?;
        let fp = fundamental(geom, Role::Perp, x)?;
        let ops_p = shape_ops(geom, x, &fp)?;
        let smix = mixed_scalar_curvature(geom, x)?;
        let p = geom.p() as f64;
        let n = geom.n() as f64;
        let pperp = geom.projector(Role::Perp, x)?;
        let block = pperp.transpose().matmul(&g).matmul(&pperp);
        let r = partial_ricci(geom, Role::Perp, x)?;

        let geodesic = ft.h.max_abs() < 1e-8 && fp.h.max_abs() < 1e-8 && ft.t.max_abs() < 1e-8;
        if geodesic {
            // totally geodesic pair with integrable tangent distribution
            let t_flat = flat(&g, &ops_p.cal_t);
            let res_fund = combine(&r, &[(-1.0, &t_flat)], &pperp);
            let star = self.star(Role::Perp);
            let rhs = block.scale(0.25 * (smix - star));
            let res_el = combine(&r, &[(1.0, &rhs)], &pperp);
            let conf = block.scale(smix / p);
            let res_conf = combine(&r, &[(1.0, &conf)], &pperp);
            return Ok(ElResidual {
                system: ElSystem::UmbilicalPair,
                residual: res_el,
                details: vec![
                    ("geodesic_fundamental".into(), res_fund),
                    ("partial_ricci_conformal".into(), res_conf),
                ],
            });
        }

        // both distributions umbilical and integrable
        let umb = |f: &crate::extrinsic::Fundamental<f64>,
                   rank: f64,
                   role: Role|
         -> Result<f64, GeomError> {
            let proj = geom.projector(role, x)?;
            let blk = proj.transpose().matmul(&g).matmul(&proj);
            let mut dev = 0.0f64;
            for k in 0..m {
                for mu in 0..m {
                    for nu in 0..m {
                        dev = dev
                            .max((f.h.at(k, mu, nu) - f.mean[k] * blk.at(mu, nu) / rank).abs());
                    }
                }
            }
            Ok(dev)
        };
        if umb(&ft, n, Role::Tilde)? > 1e-8
            || umb(&fp, p, Role::Perp)? > 1e-8
            || ft.t.max_abs() > 1e-8
            || fp.t.max_abs() > 1e-8
        {
            return Err(GeomError::HypothesisViolated {
                which: "umbilical-pair system needs two umbilical foliations".into(),
            });
        }
        let mean_t = MeanCurvature { geom, role: Role::Tilde };
        let mean_p = MeanCurvature { geom, role: Role::Perp };
        let hvec = mean_t.eval(x)?;
        let htl: Vec<f64> = (0..m)
            .map(|k| (0..m).map(|l| g.at(k, l) * hvec[l]).sum())
            .collect();
        let hh = Matrix::from_fn(m, m, |i, j| htl[i] * htl[j]);
        let (def, _) = restricted_derivative_forms(geom, &mean_t, Role::Perp, x)?;
        let htilde_vec = mean_p.eval(x)?;
        let g_htilde = form(&g, &htilde_vec, &htilde_vec);
        let div_htilde: f64 = div_vec(geom, &mean_p, x, DivWeight::Full)?;
        // structural identity of the umbilical pair
        let lhs = Matrix::from_fn(m, m, |i, j| r.at(i, j) + hh.at(i, j) / n - def.at(i, j));
        let rhs = block.scale(((p - 1.0) / p * g_htilde + div_htilde) / p);
        let res_ident = combine(&lhs, &[(1.0, &rhs)], &pperp);
        // Euler-Lagrange form
        let star = self.star(Role::Perp);
        let lhs_el = Matrix::from_fn(m, m, |i, j| r.at(i, j) + hh.at(i, j) - def.at(i, j));
        let div_h: f64 = div_vec(geom, &mean_t, x, DivWeight::Full)?;
        let rhs_el = block.scale(
            0.5 * (smix - star + 2.0 * (p - 1.0) / (p * p) * g_htilde + div_htilde - div_h),
        );
        let res_el = combine(&lhs_el, &[(1.0, &rhs_el)], &pperp);
        let conf = block.scale(smix / p);
        let res_conf = combine(&r, &[(1.0, &conf)], &pperp);
        Ok(ElResidual {
            system: ElSystem::UmbilicalPair,
            residual: res_el,
            details: vec![
                ("umbilical_identity".into(), res_ident),
                ("partial_ricci_conformal".into(), res_conf),
            ],
        })
    }

    /// Domain mean of the mixed scalar curvature (the reduced action
    /// density for rank-one tangent blocks).
    pub fn mixed_mean(&self) -> f64 {
        self.ric_mean
    }
}

/// Structural flags of one distribution over a point sample, with the
/// sup-norm defects that define them.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BlockFlags {
    pub geodesic: bool,
    pub umbilical: bool,
    pub harmonic: bool,
    pub geodesic_defect: f64,
    pub umbilical_defect: f64,
    pub harmonic_defect: f64,
}

pub fn block_flags(
    geom: &Geometry,
    role: Role,
    points: &[Vec<f64>],
) -> Result<BlockFlags, GeomError> {
    let m = geom.dim();
    let rank = geom.rank(role) as f64;
    let mut geo = 0.0f64;
    let mut umb = 0.0f64;
    let mut har = 0.0f64;
    for x in points {
        let f = fundamental(geom, role, x)?;
        let g = geom.metric_at(x)?;
        let proj = geom.projector(role, x)?;
        let block = proj.transpose().matmul(&g).matmul(&proj);
        geo = geo.max(f.h.max_abs());
        for k in 0..m {
            har = har.max(f.mean[k].abs());
            for mu in 0..m {
                for nu in 0..m {
                    umb = umb
                        .max((f.h.at(k, mu, nu) - f.mean[k] * block.at(mu, nu) / rank).abs());
                }
            }
        }
    }
    Ok(BlockFlags {
        geodesic: geo < 1e-8,
        umbilical: umb < 1e-8,
        harmonic: har < 1e-8,
        geodesic_defect: geo,
        umbilical_defect: umb,
        harmonic_defect: har,
    })
}

/// Flag preservation along a plain family: properties the tangent
/// distribution has at `t = 0` against its defects at `t = +-delta`.
#[derive(Clone, Debug, Serialize)]
pub struct PreservationReport {
    pub role: Role,
    pub initial: BlockFlags,
    /// Worst defect over `t = +-delta` for each property that held at
    /// `t = 0`; properties absent at the base are reported as zero.
    pub geodesic_defect: f64,
    pub umbilical_defect: f64,
    pub harmonic_defect: f64,
}

/// Complement-block variations leave the configuration of the other
/// distribution's second fundamental form intact: total geodesy, total
/// umbilicity and harmonicity of that block survive the deformation.
/// Conformal families can additionally preserve umbilicity of the block
/// they vary.  The defects at `t = +-delta` quantify it for one concrete
/// family and the inspected `role`.
pub fn umbilicity_preservation_check(
    family: &VariationFamily,
    dom: &Domain,
    role: Role,
    delta: f64,
) -> Result<PreservationReport, GeomError> {
    let points = dom.sample_points(6, 0.2, 7);
    let initial = block_flags(&family.base, role, &points)?;
    let mut geo = 0.0f64;
    let mut umb = 0.0f64;
    let mut har = 0.0f64;
    for t in [-delta, delta] {
        let g = family.geometry_at(dom, t)?;
        let f = block_flags(&g, role, &points)?;
        if initial.geodesic {
            geo = geo.max(f.geodesic_defect);
        }
        if initial.umbilical {
            umb = umb.max(f.umbilical_defect);
        }
        if initial.harmonic {
            har = har.max(f.harmonic_defect);
        }
    }
    Ok(PreservationReport {
        role,
        initial,
        geodesic_defect: geo,
        umbilical_defect: umb,
        harmonic_defect: har,
    })
}

/// Finite-difference checks of the action derivative: the pairing form of
/// the first variation and the volume-normalization correction.
pub fn action_derivative_check(
    base: &Geometry,
    dom: &Domain,
    field: &DeformationField,
    fd_step: f64,
) -> Result<(f64, f64), GeomError> {
    let plain = VariationFamily::new(base.clone(), field.clone(), Flavor::Plain)?;
    let dj_plain = fd_richardson(
        |t| Ok(action_value(&plain.geometry_at(dom, t)?, dom, ActionKind::Mix)?.value),
        fd_step,
    )?;
    // pairing form (no starred term for plain variations)
    let rhs = dom.integrate_dvol(base, |x| {
        let g = base.metric_at(x)?;
        let ginv = g.inverse()?;
        let e = mix_variation_tensor(base, x, field.role, 0.0)?;
        let b = field.eval(base, x)?;
        Ok(pair_full(&ginv, &e, &b))
    })?;
    let res_pairing = rel((dj_plain - rhs).abs(), dj_plain.abs().max(rhs.abs()));

    let normalized = VariationFamily::new(base.clone(), field.clone(), Flavor::VolumeNormalized)?;
    let dj_norm = fd_richardson(
        |t| Ok(action_value(&normalized.geometry_at(dom, t)?, dom, ActionKind::Mix)?.value),
        fd_step,
    )?;
    let star = dom.mean(base, |x| star_pointwise(base, x, field.role))?;
    let trace = TraceB { base, field };
    let int_trace = dom.integrate_dvol(base, |x| trace.eval(x))?;
    let expected = dj_plain - 0.5 * star * int_trace;
    let res_norm = rel(
        (dj_norm - expected).abs(),
        dj_norm.abs().max(expected.abs()),
    );
    Ok((res_pairing, res_norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{BumpWindow, DeformationShape, GeometryConfig};
    use crate::exprlang::{Expr, Params};

    fn flat2() -> Geometry {
        GeometryConfig {
            n: 1,
            p: 1,
            bounds: vec![[-1.0, 1.0]; 2],
            signature_q: 0,
            metric: vec![
                vec!["1".into(), "0".into()],
                vec!["0".into(), "1".into()],
            ],
            dtilde_frame: vec![vec!["1".into(), "0".into()]],
            params: Params::new(),
        }
        .build()
        .unwrap()
    }

    fn bump_field(dom: &Domain, role: Role, profile: &str) -> DeformationField {
        let shrink: Vec<[f64; 2]> = dom
            .bounds
            .iter()
            .map(|b| {
                let c = 0.5 * (b[0] + b[1]);
                let h = 0.45 * (b[1] - b[0]);
                [c - h, c + h]
            })
            .collect();
        DeformationField {
            role,
            shape: DeformationShape::Conformal(Expr::parse(profile).unwrap()),
            window: BumpWindow::new(
                shrink.iter().map(|b| b[0]).collect(),
                shrink.iter().map(|b| b[1]).collect(),
            ),
        }
    }

    #[test]
    fn action_values_match_analytic_integrals() {
        let geom = flat2();
        let dom = Domain::new(vec![[-0.8, 0.8]; 2], 8).unwrap();
        let v = action_value(&geom, &dom, ActionKind::Mix).unwrap();
        assert!(v.value.abs() < 1e-12 && v.converged);

        let sphere = crate::calculus::tests::sphere();
        let strip = Domain::new(
            vec![[std::f64::consts::FRAC_PI_4, 3.0 * std::f64::consts::FRAC_PI_4], [0.0, 1.0]],
            12,
        )
        .unwrap();
        let v = action_value(&sphere, &strip, ActionKind::Mix).unwrap();
        assert!((v.value - std::f64::consts::SQRT_2).abs() < 1e-6, "{}", v.value);
        assert!(v.converged);

        let warped = crate::calculus::tests::warped_line();
        let boxd = Domain::new(vec![[0.0, 1.0]; 2], 12).unwrap();
        let v = action_value(&warped, &boxd, ActionKind::Mix).unwrap();
        assert!((v.value - (1.0 - std::f64::consts::E)).abs() < 1e-6, "{}", v.value);
    }

    #[test]
    fn volume_normalization_holds() {
        let warped = crate::calculus::tests::warped_line();
        let dom = Domain::new(vec![[0.1, 0.9]; 2], 10).unwrap();
        let field = bump_field(&dom, Role::Perp, "1 + x0/3");
        let (dvol, phi_res) = volume_normalization_check(&warped, &dom, &field, 1e-3).unwrap();
        assert!(dvol < 1e-8, "{dvol}");
        assert!(phi_res < 1e-6, "{phi_res}");

        // zero direction leaves the scale constant
        let zero = bump_field(&dom, Role::Perp, "0");
        let family = VariationFamily::new(warped.clone(), zero, Flavor::VolumeNormalized).unwrap();
        assert!((family.phi(&dom, 0.3).unwrap() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn first_variation_formulas_match_finite_differences() {
        let warped = crate::calculus::tests::warped_line();
        let dom = Domain::new(vec![[0.1, 0.9]; 2], 8).unwrap();
        let field = bump_field(&dom, Role::Perp, "1 + x0/2 - x1/3");
        let res = first_variation_check(&warped, &dom, &field, 1e-3).unwrap();
        for (name, v) in &res {
            let tol = if name.starts_with("dt_integrated") { 1e-5 } else { 1e-6 };
            assert!(*v < tol, "{name}: {v}");
        }

        let heis = crate::chart::tests::heisenberg();
        let dom = Domain::new(vec![[-0.8, 0.8]; 3], 6).unwrap();
        let field = bump_field(&dom, Role::Perp, "1 + x1/2");
        let res = first_variation_check(&heis, &dom, &field, 1e-3).unwrap();
        for (name, v) in &res {
            let tol = if name.starts_with("dt_integrated") { 1e-5 } else { 1e-6 };
            assert!(*v < tol, "{name}: {v}");
        }
    }

    #[test]
    fn action_derivative_matches_pairing_and_normalization() {
        // the action derivative sees bump-localized curvature, so the
        // domain needs the midpoint rule at a resolution that captures it
        let warped = crate::calculus::tests::warped_line();
        let dom = Domain::midpoint(vec![[0.1, 0.9]; 2], 128).unwrap();
        let field = bump_field(&dom, Role::Perp, "1 - x1/2");
        let (pairing, norm) = action_derivative_check(&warped, &dom, &field, 1e-3).unwrap();
        assert!(pairing < 1e-5, "{pairing}");
        assert!(norm < 1e-5, "{norm}");
    }

    #[test]
    fn heisenberg_is_critical_for_volume_preserving_variations() {
        let heis = crate::chart::tests::heisenberg();
        let dom = Domain::new(vec![[-0.9, 0.9]; 3], 6).unwrap();
        let ev = ElEvaluator::new(&heis, &dom, true).unwrap();
        for x in dom.sample_points(6, 0.1, 1) {
            let r = ev.residual(&x, ElSystem::MixPerp).unwrap();
            assert!(r.residual < 1e-9, "mix-perp: {}", r.residual);
            let gap = r.details.iter().find(|(n, _)| n == "raw_gap").unwrap().1;
            assert!(gap < 1e-9, "raw gap: {gap}");
            let u = ev.residual(&x, ElSystem::UmbilicalPair).unwrap();
            assert!(u.residual < 1e-9, "umbilical(geodesic): {}", u.residual);
            let b = ev.residual(&x, ElSystem::Biconformal).unwrap();
            assert!(b.residual < 1e-9, "biconformal: {}", b.residual);
        }
        // without volume preservation the same metric is not critical
        let plain = ElEvaluator::new(&heis, &dom, false).unwrap();
        let x = dom.sample_points(1, 0.3, 0).remove(0);
        let r = plain.residual(&x, ElSystem::MixPerp).unwrap();
        assert!(r.residual > 1e-3, "expected noncritical: {}", r.residual);
    }

    #[test]
    fn biconformal_density_is_riesz_representative() {
        let warped = crate::calculus::tests::warped_line();
        let dom = Domain::midpoint(vec![[0.1, 0.9]; 2], 128).unwrap();
        let ev = ElEvaluator::new(&warped, &dom, true).unwrap();
        for (i, profile) in ["1", "1 - x1/2"].iter().enumerate() {
            let field = bump_field(&dom, Role::Perp, profile);
            let family =
                VariationFamily::new(warped.clone(), field.clone(), Flavor::VolumeNormalized)
                    .unwrap();
            let dj = fd_richardson(
                |t| Ok(action_value(&family.geometry_at(&dom, t)?, &dom, ActionKind::Mix)?.value),
                1e-3,
            )
            .unwrap();
            // B = s g_perp: the bump profile s multiplies the density
            let rhs = dom
                .integrate_dvol(&warped, |x| {
                    let s = field.window.eval(x)
                        * Expr::parse(profile).unwrap().eval(x, &warped.params)?;
                    Ok(s * ev.biconformal_density(x)?)
                })
                .unwrap();
            assert!(
                (dj - rhs).abs() < 1e-6,
                "profile {i}: fd {dj} vs pairing {rhs}"
            );
        }
    }

    /// `g = dt^2 + e^{-2yt}dx^2 + e^{2yt}dz^2`: isoparametric leaves with
    /// vanishing mean curvature, critical for volume-preserving variations.
    fn isoparametric(lorentz: bool) -> Geometry {
        let y = 0.6f64;
        GeometryConfig {
            n: 2,
            p: 1,
            bounds: vec![[-1.0, 1.0]; 3],
            signature_q: if lorentz { 1 } else { 0 },
            metric: vec![
                vec![
                    if lorentz { "-1" } else { "1" }.into(),
                    "0".into(),
                    "0".into(),
                ],
                vec!["0".into(), format!("exp(-2*{y}*x0)"), "0".into()],
                vec!["0".into(), "0".into(), format!("exp(2*{y}*x0)")],
            ],
            dtilde_frame: vec![
                vec!["0".into(), "1".into(), "0".into()],
                vec!["0".into(), "0".into(), "1".into()],
            ],
            params: Params::new(),
        }
        .build()
        .unwrap()
    }

    #[test]
    fn codim1_systems_on_isoparametric_foliation() {
        let geom = isoparametric(false);
        let dom = Domain::new(vec![[-0.9, 0.9]; 3], 6).unwrap();
        let ev = ElEvaluator::new(&geom, &dom, true).unwrap();
        for x in dom.sample_points(5, 0.1, 2) {
            let r = ev.residual(&x, ElSystem::Codim1Perp).unwrap();
            assert!(r.residual < 1e-9, "codim1-perp: {}", r.residual);
            for (name, v) in &r.details {
                assert!(*v < 1e-9, "{name}: {v}");
            }
            let t = ev.residual(&x, ElSystem::Codim1Tangent).unwrap();
            assert!(t.residual < 1e-9, "codim1-tangent: {}", t.residual);
        }
    }

    #[test]
    fn gravity_form_reproduces_scalar_systems_for_timelike_normal() {
        // the reduction of the field-equation form needs a time-like
        // geodesic normal congruence
        let geom = isoparametric(true);
        let dom = Domain::new(vec![[-0.9, 0.9]; 3], 6).unwrap();
        let ev = ElEvaluator::new(&geom, &dom, false).unwrap();
        for x in dom.sample_points(5, 0.1, 4) {
            let gr = ev.residual(&x, ElSystem::Gravity).unwrap();
            let gap0 = gr.details.iter().find(|(n, _)| n == "ricns0f_gap").unwrap().1;
            let gap1 = gr.details.iter().find(|(n, _)| n == "ricns1f_gap").unwrap().1;
            assert!(gap0 < 1e-8, "ricns0f gap: {gap0}");
            assert!(gap1 < 1e-8, "ricns1f gap: {gap1}");
        }
        // trace identity linking the two scalar forms holds on the
        // Riemannian version as well
        let riem = isoparametric(false);
        let ev = ElEvaluator::new(&riem, &dom, false).unwrap();
        let x = vec![0.2, -0.1, 0.3];
        let r = ev.residual(&x, ElSystem::Codim1Perp).unwrap();
        let tg = r.details.iter().find(|(n, _)| n == "trace_gap").unwrap().1;
        assert!(tg < 1e-9, "trace gap: {tg}");
    }

    #[test]
    fn complement_variations_preserve_tangent_configuration() {
        // geodesic fibers stay geodesic under any complement bump
        let heis = crate::chart::tests::heisenberg();
        let dom = Domain::new(vec![[-0.9, 0.9]; 3], 4).unwrap();
        let field = bump_field(&dom, Role::Perp, "1 + x1/2");
        let family = VariationFamily::new(heis, field, Flavor::Plain).unwrap();
        let rep = umbilicity_preservation_check(&family, &dom, Role::Tilde, 1e-2).unwrap();
        assert!(rep.initial.geodesic && rep.initial.umbilical && rep.initial.harmonic);
        assert!(rep.geodesic_defect < 1e-8, "{}", rep.geodesic_defect);
        assert!(rep.umbilical_defect < 1e-8, "{}", rep.umbilical_defect);
        assert!(rep.harmonic_defect < 1e-8, "{}", rep.harmonic_defect);

        // conformal complement family on the submersion chart keeps the
        // dilated block umbilical
        let cs = crate::catalog::builtin("conformal_submersion", &Params::new()).unwrap();
        let bounds: Vec<[f64; 2]> = cs.geometry.chart.bounds.clone();
        let dom = Domain::new(
            bounds
                .iter()
                .map(|b| [b[0] + 0.1, b[1] - 0.1])
                .collect(),
            3,
        )
        .unwrap();
        let field = bump_field(&dom, Role::Perp, "1 - x0/4");
        let family = VariationFamily::new(cs.geometry, field, Flavor::Plain).unwrap();
        let rep = umbilicity_preservation_check(&family, &dom, Role::Perp, 1e-2).unwrap();
        assert!(rep.initial.umbilical && !rep.initial.geodesic);
        assert!(rep.umbilical_defect < 1e-6, "{}", rep.umbilical_defect);
    }

    #[test]
    fn hypothesis_violations_are_reported() {
        let heis = crate::chart::tests::heisenberg();
        let dom = Domain::new(vec![[-0.9, 0.9]; 3], 4).unwrap();
        let ev = ElEvaluator::new(&heis, &dom, false).unwrap();
        let x = vec![0.1, 0.2, 0.3];
        assert!(matches!(
            ev.residual(&x, ElSystem::Codim1Perp),
            Err(GeomError::HypothesisViolated { .. })
        ));
        let field = bump_field(&dom, Role::Tilde, "1");
        assert!(matches!(
            VariationFamily::new(heis, field, Flavor::VolumeNormalized),
            Err(GeomError::HypothesisViolated { .. })
        ));
    }
}
