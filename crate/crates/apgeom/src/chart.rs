//! The computational stage: a coordinate box carrying a pseudo-Riemannian
//! metric and a distribution `D~` spanned by `n` expression-valued vector
//! fields; the complement `D` is its g-orthogonal complement.
//!
//! A [`Geometry`] owns either an explicit metric or a deformation of a base
//! metric (used by adapted variations).  Every evaluation is generic over
//! the scalar type so nested dual numbers flow through unchanged.

use serde::{Deserialize, Serialize};

use crate::error::GeomError;
use crate::exprlang::{Expr, Params};
use crate::linalg::{form, Matrix};
use crate::scalar::Scalar;

/// Which distribution of the pair a quantity refers to.
///
/// `Tilde` is the explicitly spanned distribution `D~` of rank `n`;
/// `Perp` is its orthogonal complement `D` of rank `p`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Tilde,
    Perp,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Tilde => Role::Perp,
            Role::Perp => Role::Tilde,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Chart {
    /// Rank of `D~`.
    pub n: usize,
    /// Rank of the complement `D`.
    pub p: usize,
    /// Closed coordinate intervals, one per coordinate.
    pub bounds: Vec<[f64; 2]>,
}

impl Chart {
    pub fn new(n: usize, p: usize, bounds: Vec<[f64; 2]>) -> Result<Self, GeomError> {
        if n < 1 || p < 1 {
            return Err(GeomError::config("/n", "both ranks must be at least 1"));
        }
        if bounds.len() != n + p {
            return Err(GeomError::config(
                "/box",
                format!("expected {} intervals, got {}", n + p, bounds.len()),
            ));
        }
        for (i, b) in bounds.iter().enumerate() {
            if !(b[0] < b[1]) {
                return Err(GeomError::config(
                    &format!("/box/{i}"),
                    "interval must be nondegenerate",
                ));
            }
        }
        Ok(Chart { n, p, bounds })
    }

    pub fn dim(&self) -> usize {
        self.n + self.p
    }

    /// Map a unit-cube point into the box, keeping a relative margin from
    /// the boundary.
    pub fn interior_point(&self, unit: &[f64], margin: f64) -> Vec<f64> {
        self.bounds
            .iter()
            .zip(unit)
            .map(|(b, u)| {
                let lo = b[0] + margin * (b[1] - b[0]);
                let hi = b[1] - margin * (b[1] - b[0]);
                lo + u * (hi - lo)
            })
            .collect()
    }
}

/// Symmetric matrix of expression entries.
#[derive(Clone, Debug)]
pub struct MetricField {
    pub dim: usize,
    entries: Vec<Expr>,
}

impl MetricField {
    /// Build from rows; entries must be structurally symmetric.
    pub fn new(rows: Vec<Vec<Expr>>) -> Result<Self, GeomError> {
        let dim = rows.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(GeomError::config(
                    &format!("/metric/{i}"),
                    "metric matrix must be square",
                ));
            }
        }
        for i in 0..dim {
            for j in i + 1..dim {
                if rows[i][j] != rows[j][i] {
                    return Err(GeomError::config(
                        &format!("/metric/{i}/{j}"),
                        "metric entries must be structurally symmetric",
                    ));
                }
            }
        }
        Ok(MetricField {
            dim,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    pub fn diagonal(entries: Vec<Expr>) -> Self {
        let dim = entries.len();
        let mut rows = vec![vec![Expr::num(0.0); dim]; dim];
        for (i, e) in entries.into_iter().enumerate() {
            rows[i][i] = e;
        }
        MetricField::new(rows).expect("diagonal matrix is symmetric")
    }

    pub fn entry(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.dim + j]
    }

    pub fn at<S: Scalar>(&self, x: &[S], params: &Params) -> Result<Matrix<S>, GeomError> {
        let mut m = Matrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                *m.at_mut(i, j) = self.entry(i, j).eval(x, params)?;
            }
        }
        Ok(m)
    }
}

/// `n` expression-valued vector fields spanning `D~`.
#[derive(Clone, Debug)]
pub struct SplittingField {
    pub dim: usize,
    pub vectors: Vec<Vec<Expr>>,
}

impl SplittingField {
    pub fn new(dim: usize, vectors: Vec<Vec<Expr>>) -> Result<Self, GeomError> {
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(GeomError::config(
                    &format!("/dtilde_frame/{i}"),
                    format!("vector must have {dim} components"),
                ));
            }
        }
        Ok(SplittingField { dim, vectors })
    }

    /// Span vectors as the columns of an `m x n` matrix.
    pub fn at<S: Scalar>(&self, x: &[S], params: &Params) -> Result<Matrix<S>, GeomError> {
        let n = self.vectors.len();
        let mut m = Matrix::zeros(self.dim, n);
        for (a, v) in self.vectors.iter().enumerate() {
            for i in 0..self.dim {
                *m.at_mut(i, a) = v[i].eval(x, params)?;
            }
        }
        Ok(m)
    }
}

/// Smooth compactly supported window on a sub-box: the classical bump
/// `exp(1 - 1/(1 - r^2))` of the scaled radius, identically zero outside.
#[derive(Clone, Debug)]
pub struct BumpWindow {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BumpWindow {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        BumpWindow { lo, hi }
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> S {
        let mut r2 = S::zero();
        for i in 0..x.len() {
            let c = S::from_f64(0.5 * (self.lo[i] + self.hi[i]));
            let rad = S::from_f64(0.5 * (self.hi[i] - self.lo[i]));
            let u = (x[i] - c) / rad;
            r2 = r2 + u * u;
        }
        if r2.value() >= 1.0 {
            // The bump is flat to all orders here, so the zero jet is exact.
            return S::zero();
        }
        (S::one() - (S::one() - r2).recip()).exp()
    }
}

/// Shape of an adapted symmetric deformation of one metric block.
#[derive(Clone, Debug)]
pub enum DeformationShape {
    /// `B = s * g_block` for a scalar profile `s`.
    Conformal(Expr),
    /// `B = sum c_k * sym(w_i^b (x) w_j^b)` with `w_i` the block projection
    /// of the coordinate vector `e_i`.
    Components(Vec<(Expr, usize, usize)>),
}

/// A compactly supported adapted symmetric (0,2) tensor field used as the
/// direction of a metric variation.  Projections refer to the base metric.
#[derive(Clone, Debug)]
pub struct DeformationField {
    pub role: Role,
    pub shape: DeformationShape,
    pub window: BumpWindow,
}

impl DeformationField {
    /// Component matrix `B_{ij}` at a point, using the base geometry's
    /// projectors so that `B` stays adapted for every `t`.
    pub fn eval<S: Scalar>(&self, base: &Geometry, x: &[S]) -> Result<Matrix<S>, GeomError> {
        let m = base.dim();
        let bump = self.window.eval(x);
        if bump.value() == 0.0 {
            return Ok(Matrix::zeros(m, m));
        }
        let g = base.metric_at(x)?;
        let proj = base.projector(self.role, x)?;
        match &self.shape {
            DeformationShape::Conformal(profile) => {
                let s = profile.eval(x, &base.params)? * bump;
                // g restricted to the block: P^T g P
                let block = proj.transpose().matmul(&g).matmul(&proj);
                Ok(block.scale(s))
            }
            DeformationShape::Components(terms) => {
                let mut b = Matrix::zeros(m, m);
                // w_i^b as rows of P^T g
                let wb = proj.transpose().matmul(&g);
                for (profile, i, j) in terms {
                    let c = profile.eval(x, &base.params)? * bump;
                    let half = S::from_f64(0.5);
                    for mu in 0..m {
                        for nu in 0..m {
                            let sym = wb.at(*i, mu) * wb.at(*j, nu)
                                + wb.at(*j, mu) * wb.at(*i, nu);
                            *b.at_mut(mu, nu) = b.at(mu, nu) + c * half * sym;
                        }
                    }
                }
                Ok(b)
            }
        }
    }
}

/// How the metric of a [`Geometry`] is produced.
#[derive(Clone, Debug)]
pub enum MetricKind {
    Explicit(MetricField),
    /// `g_t = g_base + t B`, optionally with the varied block rescaled by a
    /// precomputed constant `phi` (volume-normalized family).
    Deformed {
        base: Box<Geometry>,
        field: DeformationField,
        t: f64,
        block_scale: Option<f64>,
    },
}

#[derive(Clone, Debug)]
pub struct Geometry {
    pub chart: Chart,
    pub signature_q: usize,
    pub splitting: SplittingField,
    pub params: Params,
    pub metric: MetricKind,
}

impl Geometry {
    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn n(&self) -> usize {
        self.chart.n
    }

    pub fn p(&self) -> usize {
        self.chart.p
    }

    pub fn rank(&self, role: Role) -> usize {
        match role {
            Role::Tilde => self.chart.n,
            Role::Perp => self.chart.p,
        }
    }

    pub fn metric_at<S: Scalar>(&self, x: &[S]) -> Result<Matrix<S>, GeomError> {
        match &self.metric {
            MetricKind::Explicit(mf) => mf.at(x, &self.params),
            MetricKind::Deformed {
                base,
                field,
                t,
                block_scale,
            } => {
                let gb = base.metric_at(x)?;
                let b = field.eval(base, x)?;
                match block_scale {
                    None => Ok(Matrix::from_fn(gb.rows, gb.cols, |i, j| {
                        gb.at(i, j) + S::from_f64(*t) * b.at(i, j)
                    })),
                    Some(phi) => {
                        // phi * (perp block of g_t) + tilde block of g_base
                        let ptil = base.projector(Role::Tilde, x)?;
                        let pperp = base.projector(Role::Perp, x)?;
                        let g_tilde = ptil.transpose().matmul(&gb).matmul(&ptil);
                        let g_perp = pperp.transpose().matmul(&gb).matmul(&pperp);
                        let phi_s = S::from_f64(*phi);
                        let t_s = S::from_f64(*t);
                        Ok(Matrix::from_fn(gb.rows, gb.cols, |i, j| {
                            g_tilde.at(i, j)
                                + phi_s * (g_perp.at(i, j) + t_s * b.at(i, j))
                        }))
                    }
                }
            }
        }
    }

    /// Span of `D~` as matrix columns.  Shared by deformed metrics: the
    /// splitting (and hence the complement) does not move under adapted
    /// variations.
    pub fn splitting_at<S: Scalar>(&self, x: &[S]) -> Result<Matrix<S>, GeomError> {
        match &self.metric {
            MetricKind::Explicit(_) => self.splitting.at(x, &self.params),
            MetricKind::Deformed { base, .. } => base.splitting_at(x),
        }
    }

    /// Projector onto the requested distribution along its complement.
    pub fn projector<S: Scalar>(&self, role: Role, x: &[S]) -> Result<Matrix<S>, GeomError> {
        let m = self.dim();
        let g = self.metric_at(x)?;
        let e = self.splitting_at(x)?;
        let gram = e.transpose().matmul(&g).matmul(&e);
        let gram_inv = gram
            .inverse()
            .map_err(|_| GeomError::DegenerateDistribution)?;
        if gram.max_abs() * gram_inv.max_abs() > 1e12 {
            return Err(GeomError::DegenerateDistribution);
        }
        let ptil = e
            .matmul(&gram_inv)
            .matmul(&e.transpose())
            .matmul(&g);
        match role {
            Role::Tilde => Ok(ptil),
            Role::Perp => Ok(Matrix::from_fn(m, m, |i, j| {
                let id = if i == j { S::one() } else { S::zero() };
                id - ptil.at(i, j)
            })),
        }
    }

    /// `sqrt(|det g|)`, the volume density.
    pub fn volume_density<S: Scalar>(&self, x: &[S]) -> Result<S, GeomError> {
        let g = self.metric_at(x)?;
        let d = g.det();
        Ok(d.abs().sqrt())
    }

    /// Wrap this geometry in a plain deformation `g + tB`.
    pub fn deformed(&self, field: DeformationField, t: f64) -> Geometry {
        Geometry {
            chart: self.chart.clone(),
            signature_q: self.signature_q,
            splitting: self.splitting.clone(),
            params: self.params.clone(),
            metric: MetricKind::Deformed {
                base: Box::new(self.clone()),
                field,
                t,
                block_scale: None,
            },
        }
    }

    /// Wrap in a deformation with the varied block scaled by `phi`.
    pub fn deformed_scaled(&self, field: DeformationField, t: f64, phi: f64) -> Geometry {
        Geometry {
            chart: self.chart.clone(),
            signature_q: self.signature_q,
            splitting: self.splitting.clone(),
            params: self.params.clone(),
            metric: MetricKind::Deformed {
                base: Box::new(self.clone()),
                field,
                t,
                block_scale: Some(phi),
            },
        }
    }
}

/// Pointwise pseudo-orthonormal adapted frame.
#[derive(Clone, Debug)]
pub struct AdaptedFrame {
    /// First `n` vectors span `D~`, the remaining `p` span `D`.
    pub vectors: Vec<Vec<f64>>,
    /// `g(v,v)` signs, in the same order.
    pub signs: Vec<f64>,
    pub n: usize,
}

impl AdaptedFrame {
    pub fn tilde(&self) -> &[Vec<f64>] {
        &self.vectors[..self.n]
    }
    pub fn perp(&self) -> &[Vec<f64>] {
        &self.vectors[self.n..]
    }
}

/// Pseudo-orthonormal Gram-Schmidt on a spanning set, pivoting each step on
/// the candidate with the largest |g(v,v)| after projection.
fn gram_schmidt(
    g: &Matrix<f64>,
    candidates: &[Vec<f64>],
    want: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), GeomError> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(want);
    let mut signs = Vec::with_capacity(want);
    let mut pool: Vec<Vec<f64>> = candidates.to_vec();
    for _ in 0..want {
        // project the pool orthogonally to the current frame
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for (idx, v) in pool.iter().enumerate() {
            let mut r = v.clone();
            for (u, &su) in frame.iter().zip(&signs) {
                let c = su * form(g, &r, u);
                for i in 0..r.len() {
                    r[i] -= c * u[i];
                }
            }
            let q = form(g, &r, &r).abs();
            if best.as_ref().map(|(_, bq, _)| q > *bq).unwrap_or(true) {
                best = Some((idx, q, r));
            }
        }
        let (idx, q, r) = best.ok_or(GeomError::GramSchmidtBreakdown)?;
        if q < 1e-12 {
            return Err(GeomError::GramSchmidtBreakdown);
        }
        let norm = q.sqrt();
        let u: Vec<f64> = r.iter().map(|v| v / norm).collect();
        let sign = form(g, &u, &u).signum();
        frame.push(u);
        signs.push(sign);
        pool.remove(idx);
    }
    Ok((frame, signs))
}

/// Basis of the complement `D` at a point: the `p` most independent columns
/// of the complement projector.
pub fn orthogonal_complement(geom: &Geometry, x: &[f64]) -> Result<Vec<Vec<f64>>, GeomError> {
    let m = geom.dim();
    let p = geom.p();
    let g = geom.metric_at(x)?;
    let proj = geom.projector(Role::Perp, x)?;
    let cols: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..m).map(|i| proj.at(i, j)).collect())
        .collect();
    // pick p columns by pivoted Gram-Schmidt in the Euclidean sense, then
    // verify nondegeneracy of g on the span
    let mut chosen: Vec<Vec<f64>> = Vec::new();
    let mut pool = cols;
    for _ in 0..p {
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for (idx, v) in pool.iter().enumerate() {
            let mut r = v.clone();
            for u in &chosen {
                let uu: f64 = u.iter().map(|a| a * a).sum();
                let c: f64 = r.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() / uu;
                for i in 0..r.len() {
                    r[i] -= c * u[i];
                }
            }
            let q: f64 = r.iter().map(|a| a * a).sum();
            if best.as_ref().map(|(_, bq, _)| q > *bq).unwrap_or(true) {
                best = Some((idx, q, v.clone()));
            }
        }
        let (idx, q, v) = best.ok_or(GeomError::DegenerateDistribution)?;
        if q < 1e-20 {
            return Err(GeomError::DegenerateDistribution);
        }
        chosen.push(v);
        pool.remove(idx);
    }
    // nondegeneracy of g restricted to the span
    let gram = Matrix::from_fn(p, p, |i, j| form(&g, &chosen[i], &chosen[j]));
    gram.inverse()
        .map_err(|_| GeomError::DegenerateDistribution)?;
    Ok(chosen)
}

/// Pointwise adapted pseudo-orthonormal frame: Gram-Schmidt within `D~`,
/// then within `D`.
pub fn adapted_frame(geom: &Geometry, x: &[f64]) -> Result<AdaptedFrame, GeomError> {
    let n = geom.n();
    let g = geom.metric_at(x)?;
    let e = geom.splitting_at(x)?;
    let tilde_basis: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..geom.dim()).map(|i| e.at(i, a)).collect())
        .collect();
    let (mut frame, mut signs) = gram_schmidt(&g, &tilde_basis, n)?;
    let perp_basis = orthogonal_complement(geom, x)?;
    let (perp_frame, perp_signs) = gram_schmidt(&g, &perp_basis, geom.p())?;
    frame.extend(perp_frame);
    signs.extend(perp_signs);
    Ok(AdaptedFrame {
        vectors: frame,
        signs,
        n,
    })
}

/// JSON-facing description of a geometry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub n: usize,
    pub p: usize,
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
    pub signature_q: usize,
    pub metric: Vec<Vec<String>>,
    pub dtilde_frame: Vec<Vec<String>>,
    #[serde(default)]
    pub params: Params,
}

impl GeometryConfig {
    pub fn build(&self) -> Result<Geometry, GeomError> {
        let chart = Chart::new(self.n, self.p, self.bounds.clone())?;
        let dim = chart.dim();
        if self.metric.len() != dim {
            return Err(GeomError::config(
                "/metric",
                format!("expected {dim} rows"),
            ));
        }
        let mut rows = Vec::new();
        for (i, row) in self.metric.iter().enumerate() {
            if row.len() != dim {
                return Err(GeomError::config(
                    &format!("/metric/{i}"),
                    format!("expected {dim} entries"),
                ));
            }
            let mut out = Vec::new();
            for (j, src) in row.iter().enumerate() {
                out.push(Expr::parse(src).map_err(|e| {
                    GeomError::config(&format!("/metric/{i}/{j}"), e.to_string())
                })?);
            }
            rows.push(out);
        }
        let metric = MetricField::new(rows)?;
        if self.dtilde_frame.len() != self.n {
            return Err(GeomError::config(
                "/dtilde_frame",
                format!("expected {} vectors", self.n),
            ));
        }
        let mut vectors = Vec::new();
        for (a, vec) in self.dtilde_frame.iter().enumerate() {
            let mut out = Vec::new();
            for (i, src) in vec.iter().enumerate() {
                out.push(Expr::parse(src).map_err(|e| {
                    GeomError::config(&format!("/dtilde_frame/{a}/{i}"), e.to_string())
                })?);
            }
            vectors.push(out);
        }
        let splitting = SplittingField::new(dim, vectors)?;
        Ok(Geometry {
            chart,
            signature_q: self.signature_q,
            splitting,
            params: self.params.clone(),
            metric: MetricKind::Explicit(metric),
        })
    }
}

impl Geometry {
    /// Serializable form; only explicit metrics round-trip.
    pub fn to_config(&self) -> Option<GeometryConfig> {
        let mf = match &self.metric {
            MetricKind::Explicit(mf) => mf,
            MetricKind::Deformed { .. } => return None,
        };
        let dim = self.dim();
        Some(GeometryConfig {
            n: self.chart.n,
            p: self.chart.p,
            bounds: self.chart.bounds.clone(),
            signature_q: self.signature_q,
            metric: (0..dim)
                .map(|i| (0..dim).map(|j| mf.entry(i, j).to_string()).collect())
                .collect(),
            dtilde_frame: self
                .splitting
                .vectors
                .iter()
                .map(|v| v.iter().map(|e| e.to_string()).collect())
                .collect(),
            params: self.params.clone(),
        })
    }

    /// Verify the declared signature against the frame signs at a point.
    pub fn check_signature(&self, x: &[f64]) -> Result<(), GeomError> {
        let frame = adapted_frame(self, x)?;
        let neg = frame.signs.iter().filter(|&&s| s < 0.0).count();
        if neg != self.signature_q {
            return Err(GeomError::config(
                "/signature_q",
                format!("declared index {} but found {neg} at a sample point", self.signature_q),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
pub mod tests {
    use super::*;

    fn flat3() -> Geometry {
        // flat R^3, D~ = span(d/dz)
        GeometryConfig {
            n: 1,
            p: 2,
            bounds: vec![[-1.0, 1.0]; 3],
            signature_q: 0,
            metric: vec![
                vec!["1".into(), "0".into(), "0".into()],
                vec!["0".into(), "1".into(), "0".into()],
                vec!["0".into(), "0".into(), "1".into()],
            ],
            dtilde_frame: vec![vec!["0".into(), "0".into(), "1".into()]],
            params: Params::new(),
        }
        .build()
        .unwrap()
    }

    pub fn heisenberg() -> Geometry {
        // g = dx^2 + dy^2 + (dz - x dy)^2 on coordinates (z, x, y) with
        // D~ = span(d/dz).  Coordinate order: x0=z, x1=x, x2=y.
        GeometryConfig {
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
        .build()
        .unwrap()
    }

    #[test]
    fn flat_complement_is_coordinate_plane() {
        let geom = flat3();
        let comp = orthogonal_complement(&geom, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(comp.len(), 2);
        for v in comp {
            assert!(v[2].abs() < 1e-12, "complement must not contain d/dz");
        }
    }

    #[test]
    fn heisenberg_complement_matches_hand_solution() {
        // with x0=z: D = span(d/dx, d/dy + x d/dz)
        let geom = heisenberg();
        let x = [0.3, 0.7, -0.2]; // (z, x, y)
        let comp = orthogonal_complement(&geom, &x).unwrap();
        let g = geom.metric_at(&x).unwrap();
        let e_z = [1.0, 0.0, 0.0];
        for v in &comp {
            assert!(form(&g, v, &e_z).abs() < 1e-10);
        }
        // the span must contain d/dy + x d/dz = (x, 0, 1)
        let target = [x[1], 0.0, 1.0];
        let proj = geom.projector(Role::Perp, &x).unwrap();
        let back = proj.mul_vec(&target);
        for i in 0..3 {
            assert!((back[i] - target[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn adapted_frame_is_orthonormal() {
        let geom = heisenberg();
        let x = [0.1, 1.0, 0.4];
        let frame = adapted_frame(&geom, &x).unwrap();
        let g = geom.metric_at(&x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { frame.signs[i] } else { 0.0 };
                let got = form(&g, &frame.vectors[i], &frame.vectors[j]);
                assert!(
                    (got - want).abs() < 1e-10,
                    "frame product ({i},{j}) = {got}"
                );
            }
        }
        assert_eq!(frame.signs, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn lorentz_complement() {
        // g = diag(-1, 1), D~ = span(d/dt + 2 d/dx), spacelike: g(v,v) = 3
        let geom = GeometryConfig {
            n: 1,
            p: 1,
            bounds: vec![[-1.0, 1.0]; 2],
            signature_q: 1,
            metric: vec![
                vec!["-1".into(), "0".into()],
                vec!["0".into(), "1".into()],
            ],
            dtilde_frame: vec![vec!["1".into(), "2".into()]],
            params: Params::new(),
        }
        .build()
        .unwrap();
        let x = [0.0, 0.0];
        let comp = orthogonal_complement(&geom, &x).unwrap();
        let v = &comp[0];
        // complement is span(2 d/dt + d/dx), timelike
        assert!((v[0] * 1.0 - v[1] * 2.0).abs() < 1e-12 || (v[1] / v[0] - 0.5).abs() < 1e-12);
        let g = geom.metric_at(&x).unwrap();
        assert!(form(&g, v, v) < 0.0);
        geom.check_signature(&x).unwrap();
    }

    #[test]
    fn projectors_sum_to_identity() {
        let geom = heisenberg();
        let x = [0.2, -0.5, 0.9];
        let pt = geom.projector(Role::Tilde, &x).unwrap();
        let pp = geom.projector(Role::Perp, &x).unwrap();
        let sum = pt.add(&pp);
        let prod = pt.matmul(&pp);
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((sum.at(i, j) - id).abs() < 1e-12);
                assert!(prod.at(i, j).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let geom = heisenberg();
        let cfg = geom.to_config().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: GeometryConfig = serde_json::from_str(&text).unwrap();
        let geom2 = back.build().unwrap();
        let x = [0.3, 0.4, 0.5];
        let g1 = geom.metric_at(&x).unwrap();
        let g2 = geom2.metric_at(&x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g1.at(i, j), g2.at(i, j));
            }
        }
    }

    #[test]
    fn asymmetric_metric_rejected() {
        let res = GeometryConfig {
            n: 1,
            p: 1,
            bounds: vec![[-1.0, 1.0]; 2],
            signature_q: 0,
            metric: vec![
                vec!["1".into(), "x0".into()],
                vec!["0".into(), "1".into()],
            ],
            dtilde_frame: vec![vec!["1".into(), "0".into()]],
            params: Params::new(),
        }
        .build();
        assert!(matches!(res, Err(GeomError::Config { .. })));
    }

    #[test]
    fn bump_vanishes_outside_window() {
        let w = BumpWindow::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert_eq!(w.eval(&[2.0, 0.5]), 0.0);
        assert!(w.eval(&[0.5, 0.5]) > 0.9); // center value = 1
        assert!(w.eval(&[0.6, 0.5]) > 0.0);
    }
}
