//! Extrinsic geometry of one distribution of the pair: second fundamental
//! form, integrability tensor, mean curvature, and the operators built from
//! them (Weingarten squares, partial Ricci form, codimension-one data).
//!
//! Index conventions: the value slot of a rank-3 component array comes
//! first, and both argument slots are pre-composed with the distribution's
//! projector.  The components therefore form genuine tensors on the chart
//! whose restriction to the distribution is the classical object, and
//! contracting them with arbitrary coordinate vectors is automatically
//! adapted.  Frame sums over a distribution are performed without ever
//! constructing a frame, via `sum_a eps_a e_a^mu e_a^nu = (P g^{-1})^{mu nu}`.

use crate::calculus::{
    christoffel, covariant_derivative_vec, riemann_lowered, Tensor2Field, Tensor3Field,
    VectorField,
};
use crate::chart::{Geometry, Role};
use crate::error::GeomError;
use crate::linalg::{form, Matrix, Tensor3};
use crate::scalar::{seed, Scalar};

/// Second fundamental form `h`, integrability tensor `T` and mean curvature
/// vector `H` of one distribution; `h` and `T` take values in the
/// complementary distribution.
pub struct Fundamental<S: Scalar> {
    pub role: Role,
    /// `h^k_{mu nu}`, symmetric in the argument slots.
    pub h: Tensor3<S>,
    /// `T^k_{mu nu}`, antisymmetric in the argument slots.
    pub t: Tensor3<S>,
    /// `H^k = h^k_{mu nu} (P g^{-1})^{mu nu}`.
    pub mean: Vec<S>,
}

/// Configuration tensors of the `role` distribution at a point.
pub fn fundamental<S: Scalar>(
    geom: &Geometry,
    role: Role,
    x: &[S],
) -> Result<Fundamental<S>, GeomError> {
    let m = geom.dim();
    let gamma = christoffel(geom, x)?;
    let proj = geom.projector(role, x)?;
    let comp = geom.projector(role.other(), x)?;
    // dproj[alpha](k, nu) = d_alpha P^k_nu
    let mut dproj: Vec<Matrix<S>> = Vec::with_capacity(m);
    for alpha in 0..m {
        let px = geom.projector(role, &seed(x, alpha))?;
        dproj.push(Matrix::from_fn(m, m, |k, nu| px.at(k, nu).du));
    }
    // c^k_{mu nu} = (nabla_{V_mu} V_nu)^k for the projected coordinate
    // fields V_nu = P e_nu
    let mut c = Tensor3::zeros(m);
    for mu in 0..m {
        for nu in 0..m {
            for k in 0..m {
                let mut s = S::zero();
                for alpha in 0..m {
                    let mut d = dproj[alpha].at(k, nu);
                    for beta in 0..m {
                        d = d + gamma.at(k, alpha, beta) * proj.at(beta, nu);
                    }
                    s = s + proj.at(alpha, mu) * d;
                }
                *c.at_mut(k, mu, nu) = s;
            }
        }
    }
    // h = complementary part of the symmetrization, T of half the bracket
    let half = S::from_f64(0.5);
    let mut h = Tensor3::zeros(m);
    let mut t = Tensor3::zeros(m);
    for k in 0..m {
        for mu in 0..m {
            for nu in 0..m {
                let mut sy = S::zero();
                let mut an = S::zero();
                for l in 0..m {
                    sy = sy + comp.at(k, l) * (c.at(l, mu, nu) + c.at(l, nu, mu));
                    an = an + comp.at(k, l) * (c.at(l, mu, nu) - c.at(l, nu, mu));
                }
                *h.at_mut(k, mu, nu) = half * sy;
                *t.at_mut(k, mu, nu) = half * an;
            }
        }
    }
    let wt = proj.matmul(&geom.metric_at(x)?.inverse()?);
    let mean = (0..m)
        .map(|k| {
            let mut s = S::zero();
            for mu in 0..m {
                for nu in 0..m {
                    s = s + h.at(k, mu, nu) * wt.at(mu, nu);
                }
            }
            s
        })
        .collect();
    Ok(Fundamental { role, h, t, mean })
}

/// Operators and quadratic invariants derived from the configuration
/// tensors of one distribution `D_r`.
///
/// `cal_a`, `cal_t` and `kappa` are operators on `D_r` (frame sums of
/// Weingarten and integrability-operator squares and their commutator);
/// `psi`, `phi_h` and `phi_t` are symmetric forms on the complement.
pub struct ShapeOps<S: Scalar> {
    /// `sum_i eps_i A_i^2`.
    pub cal_a: Matrix<S>,
    /// `sum_i eps_i (T#_i)^2`.
    pub cal_t: Matrix<S>,
    /// `sum_i eps_i [T#_i, A_i]`; trace-free.
    pub kappa: Matrix<S>,
    /// `sum_i eps_i (A_i T#_i + T#_i A_i)`; g-antisymmetric.
    pub acomm: Matrix<S>,
    /// `psi(X, Y) = Tr(A_Y A_X + T#_Y T#_X)`.
    pub psi: Matrix<S>,
    /// `H^b (x) H^b - sum_{ab} eps_a eps_b h_ab^b (x) h_ab^b`.
    pub phi_h: Matrix<S>,
    /// `-sum_{ab} eps_a eps_b T_ab^b (x) T_ab^b`.
    pub phi_t: Matrix<S>,
    /// `<h, h>`.
    pub h_norm2: S,
    /// `<T, T>`.
    pub t_norm2: S,
    /// `g(H, H)`.
    pub mean_norm2: S,
    /// Extrinsic scalar curvature `g(H,H) - <h,h>`.
    pub s_ex: S,
}

pub fn shape_ops<S: Scalar>(
    geom: &Geometry,
    x: &[S],
    f: &Fundamental<S>,
) -> Result<ShapeOps<S>, GeomError> {
    let m = geom.dim();
    let g = geom.metric_at(x)?;
    let ginv = g.inverse()?;
    let wt = geom.projector(f.role, x)?.matmul(&ginv);
    let wn = geom.projector(f.role.other(), x)?.matmul(&ginv);
    // value slot lowered: hb[k](rho, nu) = g_{kl} h^l_{rho nu}
    let lower = |t3: &Tensor3<S>| -> Vec<Matrix<S>> {
        (0..m)
            .map(|k| {
                Matrix::from_fn(m, m, |rho, nu| {
                    let mut s = S::zero();
                    for l in 0..m {
                        s = s + g.at(k, l) * t3.at(l, rho, nu);
                    }
                    s
                })
            })
            .collect()
    };
    let hb = lower(&f.h);
    let tb = lower(&f.t);
    // operator of the contraction with e_k: A_{e_k} = (P g^{-1}) h^b_k
    let ahat: Vec<Matrix<S>> = hb.iter().map(|b| wt.matmul(b)).collect();
    let that: Vec<Matrix<S>> = tb.iter().map(|b| wt.matmul(b)).collect();
    // pairings over the argument slots, value slots lowered:
    // mlow_{kl} = <h_k^b, h_l^b> = Tr(A_k A_l); the T-pairing needs a sign
    // because T#_k is antisymmetric.
    let mut mlow = Matrix::zeros(m, m);
    let mut nlow = Matrix::zeros(m, m);
    for k in 0..m {
        for l in 0..m {
            *mlow.at_mut(k, l) = ahat[k].matmul(&ahat[l]).trace();
            *nlow.at_mut(k, l) = S::zero() - that[k].matmul(&that[l]).trace();
        }
    }
    let mut cal_a = Matrix::zeros(m, m);
    let mut cal_t = Matrix::zeros(m, m);
    let mut kappa = Matrix::zeros(m, m);
    let mut acomm = Matrix::zeros(m, m);
    for k in 0..m {
        for l in 0..m {
            let w = wn.at(k, l);
            let aa = ahat[k].matmul(&ahat[l]);
            let tt = that[k].matmul(&that[l]);
            let ta = that[k].matmul(&ahat[l]);
            let at = ahat[k].matmul(&that[l]);
            for i in 0..m {
                for j in 0..m {
                    *cal_a.at_mut(i, j) = cal_a.at(i, j) + w * aa.at(i, j);
                    *cal_t.at_mut(i, j) = cal_t.at(i, j) + w * tt.at(i, j);
                    *kappa.at_mut(i, j) = kappa.at(i, j) + w * (ta.at(i, j) - at.at(i, j));
                    *acomm.at_mut(i, j) = acomm.at(i, j) + w * (ta.at(i, j) + at.at(i, j));
                }
            }
        }
    }
    let psi = mlow.sub(&nlow);
    let hflat: Vec<S> = (0..m)
        .map(|mu| {
            let mut s = S::zero();
            for k in 0..m {
                s = s + g.at(mu, k) * f.mean[k];
            }
            s
        })
        .collect();
    let phi_h = Matrix::from_fn(m, m, |mu, nu| hflat[mu] * hflat[nu] - mlow.at(mu, nu));
    let phi_t = Matrix::from_fn(m, m, |mu, nu| S::zero() - nlow.at(mu, nu));
    let contract = |b: &Matrix<S>| {
        let mut s = S::zero();
        for k in 0..m {
            for l in 0..m {
                s = s + ginv.at(k, l) * b.at(k, l);
            }
        }
        s
    };
    let h_norm2 = contract(&mlow);
    let t_norm2 = contract(&nlow);
    let mean_norm2 = form(&g, &f.mean, &f.mean);
    let s_ex = mean_norm2 - h_norm2;
    Ok(ShapeOps {
        cal_a,
        cal_t,
        kappa,
        acomm,
        psi,
        phi_h,
        phi_t,
        h_norm2,
        t_norm2,
        mean_norm2,
        s_ex,
    })
}

/// Partial Ricci form on the `role` distribution:
/// `r(X, Y) = sum_a eps_a g(R(E_a, X) E_a, Y)` with the frame running over
/// the complement and `X, Y` projected onto `role`.
pub fn partial_ricci<S: Scalar>(
    geom: &Geometry,
    role: Role,
    x: &[S],
) -> Result<Matrix<S>, GeomError> {
    let m = geom.dim();
    let rl = riemann_lowered(geom, x)?;
    let ginv = geom.metric_at(x)?.inverse()?;
    let wn = geom.projector(role.other(), x)?.matmul(&ginv);
    let p = geom.projector(role, x)?;
    let raw = Matrix::from_fn(m, m, |s_, t_| {
        let mut v = S::zero();
        for i in 0..m {
            for k in 0..m {
                v = v + wn.at(i, k) * rl.at(i, s_, k, t_);
            }
        }
        v
    });
    Ok(p.transpose().matmul(&raw).matmul(&p))
}

/// Mixed scalar curvature `Tr_g r = sum eps_a eps_i K(E_a, E_i)`-weighted.
pub fn mixed_scalar_curvature<S: Scalar>(geom: &Geometry, x: &[S]) -> Result<S, GeomError> {
    let m = geom.dim();
    let r = partial_ricci(geom, Role::Perp, x)?;
    let ginv = geom.metric_at(x)?.inverse()?;
    let w = geom.projector(Role::Perp, x)?.matmul(&ginv);
    let mut s = S::zero();
    for i in 0..m {
        for j in 0..m {
            s = s + w.at(i, j) * r.at(i, j);
        }
    }
    Ok(s)
}

/// Symmetric and antisymmetric parts of the lowered covariant derivative of
/// a vector field with both slots restricted to one distribution:
/// `(sym, alt)` of `(X, Y) -> g(nabla_X V, Y)`.
pub fn restricted_derivative_forms<S: Scalar, F: VectorField>(
    geom: &Geometry,
    field: &F,
    role: Role,
    x: &[S],
) -> Result<(Matrix<S>, Matrix<S>), GeomError> {
    let m = geom.dim();
    let nab = covariant_derivative_vec(geom, field, x)?; // (k, mu)
    let g = geom.metric_at(x)?;
    let l = Matrix::from_fn(m, m, |mu, nu| {
        let mut s = S::zero();
        for k in 0..m {
            s = s + nab.at(k, mu) * g.at(k, nu);
        }
        s
    });
    let p = geom.projector(role, x)?;
    let lp = p.transpose().matmul(&l).matmul(&p);
    let half = S::from_f64(0.5);
    let sym = Matrix::from_fn(m, m, |i, j| half * (lp.at(i, j) + lp.at(j, i)));
    let alt = Matrix::from_fn(m, m, |i, j| half * (lp.at(i, j) - lp.at(j, i)));
    Ok((sym, alt))
}

/// Data attached to a rank-one distribution spanned by a unit normal `N`:
/// scalar second fundamental form of the complementary (leaf) distribution,
/// Weingarten operator, power traces and mean curvatures, Jacobi operator.
pub struct Codim1<S: Scalar> {
    pub one_role: Role,
    /// Unit (up to sign of `g(N,N)`) spanning vector.
    pub normal: Vec<S>,
    /// `g(N, N)`, either `1` or `-1`.
    pub eps: f64,
    /// `h_sc(X,Y) = eps_N g(h(X,Y), N)` for the leaf distribution.
    pub h_sc: Matrix<S>,
    /// Weingarten operator `A_N = -nabla N` on the leaves.
    pub a_n: Matrix<S>,
    /// Integrability operator `T#_N` on the leaves.
    pub tsharp_n: Matrix<S>,
    /// `tau[i] = Tr A_N^{i+1}`.
    pub tau: Vec<S>,
    /// Elementary symmetric functions `sigma_1..sigma_rank` of `A_N`.
    pub sigma: Vec<S>,
    /// Jacobi form `(X, Y) -> g(R(N, X) N, Y)` restricted to the leaves.
    pub jacobi: Matrix<S>,
    /// `Ric_N = sum_a eps_a g(R(N, E_a) N, E_a)` over a leaf frame.
    pub ric_n: S,
}

/// Compute [`Codim1`] data; `one_role` must have rank one.
pub fn codim1<S: Scalar>(
    geom: &Geometry,
    one_role: Role,
    x: &[S],
) -> Result<Codim1<S>, GeomError> {
    if geom.rank(one_role) != 1 {
        return Err(GeomError::NotCodimOne);
    }
    let m = geom.dim();
    let g = geom.metric_at(x)?;
    let ginv = g.inverse()?;
    let pn = geom.projector(one_role, x)?;
    // spanning vector: the projector column with the largest value-part
    // norm, normalized, oriented so its largest component is positive
    let mut best = (0usize, -1.0f64);
    for j in 0..m {
        let norm: f64 = (0..m).map(|i| pn.at(i, j).value().powi(2)).sum();
        if norm > best.1 {
            best = (j, norm);
        }
    }
    let col: Vec<S> = (0..m).map(|i| pn.at(i, best.0)).collect();
    let q = form(&g, &col, &col);
    if q.value().abs() < 1e-12 {
        return Err(GeomError::DegenerateDistribution);
    }
    let eps = q.value().signum();
    let inv_norm = (q * S::from_f64(eps)).sqrt().recip();
    let mut normal: Vec<S> = col.iter().map(|&c| c * inv_norm).collect();
    let piv = (0..m)
        .max_by(|&a, &b| {
            normal[a]
                .value()
                .abs()
                .partial_cmp(&normal[b].value().abs())
                .unwrap()
        })
        .unwrap();
    if normal[piv].value() < 0.0 {
        normal = normal.iter().map(|&c| S::zero() - c).collect();
    }

    let leaf = one_role.other();
    let f = fundamental(geom, leaf, x)?;
    let nflat: Vec<S> = (0..m)
        .map(|k| {
            let mut s = S::zero();
            for l in 0..m {
                s = s + g.at(k, l) * normal[l];
            }
            s
        })
        .collect();
    // h^b_N(rho, nu) = g(h(e_rho, e_nu), N); h_sc = eps_N h^b_N
    let contract_value = |t3: &Tensor3<S>| {
        Matrix::from_fn(m, m, |rho, nu| {
            let mut s = S::zero();
            for k in 0..m {
                s = s + t3.at(k, rho, nu) * nflat[k];
            }
            s
        })
    };
    let hbn = contract_value(&f.h);
    let tbn = contract_value(&f.t);
    let eps_s = S::from_f64(eps);
    let h_sc = hbn.scale(eps_s);
    let wt = geom.projector(leaf, x)?.matmul(&ginv);
    let a_n = wt.matmul(&hbn);
    let tsharp_n = wt.matmul(&tbn);

    let rank = geom.rank(leaf);
    let kmax = rank.max(4);
    let mut tau = Vec::with_capacity(kmax);
    let mut acc = a_n.clone();
    tau.push(acc.trace());
    for _ in 1..kmax {
        acc = acc.matmul(&a_n);
        tau.push(acc.trace());
    }
    // Newton's identities: k sigma_k = sum_{i=1..k} (-1)^{i-1} sigma_{k-i} tau_i
    let mut sigma: Vec<S> = Vec::with_capacity(rank);
    for k in 1..=rank {
        let mut s = S::zero();
        let mut sign = 1.0;
        for i in 1..=k {
            let prev = if k == i { S::one() } else { sigma[k - i - 1] };
            s = s + S::from_f64(sign) * prev * tau[i - 1];
            sign = -sign;
        }
        sigma.push(s / S::from_f64(k as f64));
    }

    let rl = riemann_lowered(geom, x)?;
    let raw = Matrix::from_fn(m, m, |j, l| {
        let mut v = S::zero();
        for i in 0..m {
            for k in 0..m {
                v = v + normal[i] * normal[k] * rl.at(i, j, k, l);
            }
        }
        v
    });
    let pl = geom.projector(leaf, x)?;
    let jacobi = pl.transpose().matmul(&raw).matmul(&pl);
    let mut ric_n = S::zero();
    for j in 0..m {
        for l in 0..m {
            ric_n = ric_n + wt.at(j, l) * jacobi.at(j, l);
        }
    }
    Ok(Codim1 {
        one_role,
        normal,
        eps,
        h_sc,
        a_n,
        tsharp_n,
        tau,
        sigma,
        jacobi,
        ric_n,
    })
}

/// `nabla_N h_sc`, both slots restricted to the leaves of a rank-one
/// complement.
pub fn normal_derivative_h_sc<S: Scalar>(
    geom: &Geometry,
    one_role: Role,
    x: &[S],
) -> Result<Matrix<S>, GeomError> {
    let c = codim1(geom, one_role, x)?;
    let field = ScalarSecondForm { geom, one_role };
    let d = crate::calculus::covariant_derivative_t2(geom, &field, x)?; // (mu, i, j)
    let m = geom.dim();
    let raw = Matrix::from_fn(m, m, |i, j| {
        let mut s = S::zero();
        for mu in 0..m {
            s = s + c.normal[mu] * d.at(mu, i, j);
        }
        s
    });
    let pl = geom.projector(one_role.other(), x)?;
    Ok(pl.transpose().matmul(&raw).matmul(&pl))
}

/// Mean curvature vector of one distribution as an evaluable field.
pub struct MeanCurvature<'a> {
    pub geom: &'a Geometry,
    pub role: Role,
}

impl<'a> VectorField for MeanCurvature<'a> {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>, GeomError> {
        Ok(fundamental(self.geom, self.role, x)?.mean)
    }
}

/// Sum of both mean curvature vectors as an evaluable field.
pub struct TotalMeanCurvature<'a> {
    pub geom: &'a Geometry,
}

impl<'a> VectorField for TotalMeanCurvature<'a> {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>, GeomError> {
        let a = fundamental(self.geom, Role::Tilde, x)?.mean;
        let b = fundamental(self.geom, Role::Perp, x)?.mean;
        Ok(a.iter().zip(&b).map(|(&u, &v)| u + v).collect())
    }
}

/// Second fundamental form of one distribution as an evaluable field.
pub struct SecondFundamental<'a> {
    pub geom: &'a Geometry,
    pub role: Role,
}

impl<'a> Tensor3Field for SecondFundamental<'a> {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<Tensor3<S>, GeomError> {
        Ok(fundamental(self.geom, self.role, x)?.h)
    }
}

/// Integrability tensor of one distribution as an evaluable field.
pub struct Integrability<'a> {
    pub geom: &'a Geometry,
    pub role: Role,
}

impl<'a> Tensor3Field for Integrability<'a> {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<Tensor3<S>, GeomError> {
        Ok(fundamental(self.geom, self.role, x)?.t)
    }
}

/// Scalar second fundamental form of the leaves of a rank-one complement,
/// as an evaluable field.
pub struct ScalarSecondForm<'a> {
    pub geom: &'a Geometry,
    pub one_role: Role,
}

impl<'a> Tensor2Field for ScalarSecondForm<'a> {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<Matrix<S>, GeomError> {
        Ok(codim1(self.geom, self.one_role, x)?.h_sc)
    }
}

/// Unit spanning vector of a rank-one distribution as an evaluable field.
pub struct UnitNormal<'a> {
    pub geom: &'a Geometry,
    pub one_role: Role,
}

impl<'a> VectorField for UnitNormal<'a> {
    fn eval<S: Scalar>(&self, x: &[S]) -> Result<Vec<S>, GeomError> {
        Ok(codim1(self.geom, self.one_role, x)?.normal)
    }
}
