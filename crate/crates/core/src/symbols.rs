//! Principal symbols of the flow operators at a single point.
//!
//! Every symbol is built by applying a frozen-coefficient principal part to
//! an orthonormal basis of its domain. Principal parts replace ∂_a∂_b by
//! ξ_aξ_b, so a flow ∂_t u = P(u) is parabolic where the symbol of P is
//! positive. For d*d this is the ordinary Fourier symbol of d*d itself
//! (∂ → iξ), since the flow generator is −d*d.
//!
//! Spectra are computed in a g-orthonormal frame, where the symbols of
//! self-adjoint operators are symmetric matrices.

use std::collections::BTreeSet;

use crate::linalg::sym_eigen;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::hermitian::standard_j_matrix;

/// Zero threshold for eigenvalues at unit data scale.
pub const ZERO_TOL: f64 = 1e-10;
/// Threshold for identities that hold exactly, such as σK₂ = |ξ|².
pub const EXACT_TOL: f64 = 1e-12;
const INPUT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SymbolError {
    #[error("dimension {0} is not one of 2, 4, 6")]
    Dimension(usize),
    #[error("{what} has shape {rows}x{cols}, expected {dim}x{dim}")]
    Shape { what: &'static str, rows: usize, cols: usize, dim: usize },
    #[error("metric is not symmetric positive definite")]
    Metric,
    #[error("omega is not antisymmetric and nondegenerate")]
    Omega,
    #[error("J² + Id has max entry {0:.3e}")]
    NotComplex(f64),
    #[error("covector xi vanishes")]
    ZeroCovector,
    #[error("pair is not compatible with g (defect {0:.3e})")]
    NotCompatible(f64),
}

/// Frozen coefficients at a point. `j[(a, i)] = J^a_i`, `omega[(i, k)] = ω_ik`.
#[derive(Debug, Clone)]
pub struct PointData {
    pub dim: usize,
    pub g: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub xi: DVector<f64>,
}

fn standard_j(d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, &standard_j_matrix(d))
}

fn standard_omega(d: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(d, d);
    for k in 0..d / 2 {
        w[(2 * k, 2 * k + 1)] = 1.0;
        w[(2 * k + 1, 2 * k)] = -1.0;
    }
    w
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

impl PointData {
    pub fn new(g: DMatrix<f64>, omega: DMatrix<f64>, j: DMatrix<f64>, xi: DVector<f64>) -> Result<Self, SymbolError> {
        let dim = xi.len();
        if !matches!(dim, 2 | 4 | 6) {
            return Err(SymbolError::Dimension(dim));
        }
        for (what, m) in [("g", &g), ("omega", &omega), ("J", &j)] {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(SymbolError::Shape { what, rows: m.nrows(), cols: m.ncols(), dim });
            }
        }
        let scale = max_abs(&g).max(1.0);
        if max_abs(&(&g - g.transpose())) > INPUT_TOL * scale || g.clone().cholesky().is_none() {
            return Err(SymbolError::Metric);
        }
        let wscale = max_abs(&omega).max(1.0);
        if max_abs(&(&omega + omega.transpose())) > INPUT_TOL * wscale || omega.determinant().abs() < INPUT_TOL {
            return Err(SymbolError::Omega);
        }
        let sq = &j * &j + DMatrix::identity(dim, dim);
        let defect = max_abs(&sq);
        if defect > INPUT_TOL * max_abs(&j).max(1.0).powi(2) {
            return Err(SymbolError::NotComplex(defect));
        }
        if xi.norm() == 0.0 {
            return Err(SymbolError::ZeroCovector);
        }
        Ok(Self { dim, g, omega, j, xi })
    }

    /// Flat standard structure (g = Id, ω₀, J₀) with covector `xi`.
    pub fn standard(xi: DVector<f64>) -> Result<Self, SymbolError> {
        let d = xi.len();
        if !matches!(d, 2 | 4 | 6) {
            return Err(SymbolError::Dimension(d));
        }
        Self::new(DMatrix::identity(d, d), standard_omega(d), standard_j(d), xi)
    }

    /// The standard structure read in the coordinates x = A⁻¹y: g = AᵀA,
    /// ω = Aᵀω₀A, J = A⁻¹J₀A. Always compatible.
    pub fn from_frame(a: &DMatrix<f64>, xi: DVector<f64>) -> Result<Self, SymbolError> {
        let d = xi.len();
        if !matches!(d, 2 | 4 | 6) {
            return Err(SymbolError::Dimension(d));
        }
        let ainv = a.clone().try_inverse().ok_or(SymbolError::Metric)?;
        let g = a.transpose() * a;
        let g = (&g + g.transpose()) * 0.5;
        let w = a.transpose() * standard_omega(d) * a;
        let w = (&w - w.transpose()) * 0.5;
        let j = &ainv * standard_j(d) * a;
        Self::new(g, w, j, xi)
    }

    /// Random compatible data: frame A = Id + U(−0.4, 0.4) entries and a
    /// covector with entries in U(−1, 1).
    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Result<Self, SymbolError> {
        loop {
            let a = DMatrix::<f64>::from_fn(dim, dim, |r, c| if r == c { 1.0 } else { 0.0 } + rng.gen_range(-0.4..0.4));
            let xi = DVector::<f64>::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
            if a.determinant().abs() < 0.2 || xi.norm() < 0.2 {
                continue;
            }
            return Self::from_frame(&a, xi);
        }
    }

    /// max of |g − sym(ωJ)| and |ω(J·,J·) − ω|.
    pub fn compat_defect(&self) -> f64 {
        let wj = &self.omega * &self.j;
        let gd = max_abs(&(&self.g - (&wj + wj.transpose()) * 0.5));
        let inv = max_abs(&(self.j.transpose() * &self.omega * &self.j - &self.omega));
        gd.max(inv)
    }

    pub fn require_compatible(&self) -> Result<(), SymbolError> {
        let defect = self.compat_defect();
        let scale = max_abs(&self.g).max(max_abs(&self.omega)).max(1.0);
        if defect > 1e-10 * scale {
            return Err(SymbolError::NotCompatible(defect));
        }
        Ok(())
    }

    /// |ξ|² measured with g⁻¹.
    pub fn xi_norm2(&self) -> f64 {
        let gi = self.g.clone().try_inverse().expect("metric is invertible");
        (self.xi.transpose() * gi * &self.xi)[(0, 0)]
    }

    /// The same data in the coordinates y = Cx with C = g^{1/2}, where g = Id.
    pub fn normalized(&self) -> PointData {
        let (vals, vecs) = sym_eigen(&self.g);
        let sq = vals.map(f64::sqrt);
        let c = &vecs * DMatrix::from_diagonal(&sq) * vecs.transpose();
        let cinv = &vecs * DMatrix::from_diagonal(&sq.map(|s| 1.0 / s)) * vecs.transpose();
        let w = cinv.transpose() * &self.omega * &cinv;
        PointData {
            dim: self.dim,
            g: DMatrix::identity(self.dim, self.dim),
            omega: (&w - w.transpose()) * 0.5,
            j: &c * &self.j * &cinv,
            xi: cinv.transpose() * &self.xi,
        }
    }

    /// Same structure, covector multiplied by `c`.
    pub fn with_xi_scaled(&self, c: f64) -> PointData {
        PointData { xi: &self.xi * c, ..self.clone() }
    }

    fn g_inv(&self) -> DMatrix<f64> {
        self.g.clone().try_inverse().expect("metric is invertible")
    }

    /// ξ^q = g^{pq}ξ_p.
    fn xi_up(&self) -> DVector<f64> {
        self.g_inv() * &self.xi
    }
}

/// One pass/fail test inside a report.
#[derive(Debug, Clone, Serialize)]
pub struct SymbolCheck {
    pub name: &'static str,
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
}

impl SymbolCheck {
    fn at_most(name: &'static str, value: f64, tol: f64) -> Self {
        Self { name, value, tol, pass: value <= tol }
    }

    fn at_least(name: &'static str, value: f64, tol: f64) -> Self {
        Self { name, value, tol, pass: value >= tol }
    }

    fn equals(name: &'static str, value: usize, expected: usize) -> Self {
        Self { name, value: value as f64, tol: expected as f64, pass: value == expected }
    }
}

#[derive(Debug, Clone)]
pub struct SymbolReport {
    pub operator: &'static str,
    pub dim: usize,
    /// Symbol in an orthonormal basis of the domain, g-orthonormal frame.
    pub matrix: DMatrix<f64>,
    /// Eigenvalues of the symmetric part of `matrix`, ascending.
    pub eigenvalues: Vec<f64>,
    pub null_dim: usize,
    /// Smallest eigenvalue on the constraint subspace the verdict refers to.
    pub min_constrained: f64,
    pub checks: Vec<SymbolCheck>,
}

impl SymbolReport {
    pub fn verdict(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failed_checks(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect()
    }
}

fn unit(d: usize, a: usize, b: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    m[(a, b)] = 1.0;
    m
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Orthonormal basis of the range of a symmetric idempotent `proj` acting
/// on the span of the orthonormal `ambient` basis.
fn projector_range(ambient: &[DMatrix<f64>], proj: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let m = matrix_of(ambient, proj);
    let (vals, vecs) = sym_eigen(&m);
    vals
        .iter()
        .enumerate()
        .filter(|(_, l)| **l > 0.5)
        .map(|(k, _)| {
            let col = vecs.column(k);
            ambient.iter().zip(col.iter()).fold(DMatrix::zeros(ambient[0].nrows(), ambient[0].ncols()), |acc, (e, c)| acc + e * *c)
        })
        .collect()
}

fn antisymmetric_basis(d: usize) -> Vec<DMatrix<f64>> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::new();
    for a in 0..d {
        for b in a + 1..d {
            out.push((unit(d, a, b) - unit(d, b, a)) * s);
        }
    }
    out
}

fn symmetric_basis(d: usize) -> Vec<DMatrix<f64>> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::new();
    for a in 0..d {
        out.push(unit(d, a, a));
        for b in a + 1..d {
            out.push((unit(d, a, b) + unit(d, b, a)) * s);
        }
    }
    out
}

fn anti_j_projection(j: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + j * x * j) * 0.5
}

/// Orthonormal basis of {P : PJ + JP = 0}, g-antisymmetric members first.
/// Needs J orthogonal.
fn anti_j_basis(j: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let d = j.nrows();
    let mut out = projector_range(&antisymmetric_basis(d), |x| anti_j_projection(j, x));
    out.extend(projector_range(&symmetric_basis(d), |x| anti_j_projection(j, x)));
    out
}

/// Orthonormal basis of symmetric h with h(J·,J·) = −h.
fn sym_anti_j_basis(j: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    projector_range(&symmetric_basis(j.nrows()), |h| (h - j.transpose() * h * j) * 0.5)
}

/// Matrix of `op` in `basis`: entry (r, c) = ⟨basis_r, op(basis_c)⟩.
fn matrix_of(basis: &[DMatrix<f64>], op: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.len();
    let mut m = DMatrix::zeros(n, n);
    for (c, b) in basis.iter().enumerate() {
        let img = op(b);
        for (r, e) in basis.iter().enumerate() {
            m[(r, c)] = frob(e, &img);
        }
    }
    m
}

fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    sym_eigen(m).0.iter().copied().collect()
}

fn count_zero(ev: &[f64], tol: f64) -> usize {
    ev.iter().filter(|l| l.abs() <= tol).count()
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        0.0
    } else {
        max_abs(&(m - m.transpose()))
    }
}

fn zero_tol(pt: &PointData) -> f64 {
    ZERO_TOL * pt.xi_norm2().max(1.0)
}

/// Principal part of −d*d on a 2-form β, which is also σ(d*d)(ξ)β:
/// g^{pq}(ξ_pξ_q β_ij − ξ_pξ_i β_qj + ξ_pξ_j β_qi).
pub fn principal_neg_dstard(pt: &PointData, beta: &DMatrix<f64>) -> DMatrix<f64> {
    let v = pt.xi_up();
    let x2 = pt.xi.dot(&v);
    let vb = beta.transpose() * &v; // (vb)_j = ξ^q β_qj
    beta * x2 - &pt.xi * vb.transpose() + &vb * pt.xi.transpose()
}

/// Principal part of ψ = −d*dω − g^{pq}∂_p∂_qω in ω.
fn principal_psi(pt: &PointData, u: &DMatrix<f64>) -> DMatrix<f64> {
    principal_neg_dstard(pt, u) - u * pt.xi_norm2()
}

/// Principal part of X^l = g^{pq}∂_p(u_qm)ω^{ml}: ∂_aX ↦ ξ_a·y.
fn principal_x_gradient(pt: &PointData, u: &DMatrix<f64>) -> DVector<f64> {
    let winv = pt.omega.clone().try_inverse().expect("omega is nondegenerate");
    // y_l = ξ^q u_qm ω^{ml}
    winv.transpose() * (u.transpose() * pt.xi_up())
}

/// Principal part of L_Xω: (∂_iX^l)ω_lj + (∂_jX^l)ω_il.
fn principal_lie_x_form(pt: &PointData, u: &DMatrix<f64>) -> DMatrix<f64> {
    let y = principal_x_gradient(pt, u);
    let yw = pt.omega.transpose() * &y; // (yw)_j = y_l ω_lj
    &pt.xi * yw.transpose() + (&pt.omega * &y) * pt.xi.transpose()
}

/// Principal part of L_XJ: −J^l_i ∂_lX^j + J^j_l ∂_iX^l.
fn principal_lie_x_j(pt: &PointData, u: &DMatrix<f64>) -> DMatrix<f64> {
    let y = principal_x_gradient(pt, u);
    let jxi = pt.j.transpose() * &pt.xi; // J^l_i ξ_l
    -(&y * jxi.transpose()) + (&pt.j * &y) * pt.xi.transpose()
}

/// Second-derivative term of K₂ in J: ½ g^{pq}ξ_pξ_q (P − g⁻¹Pᵀg).
pub fn principal_k2_explicit(pt: &PointData, p: &DMatrix<f64>) -> DMatrix<f64> {
    let gi = pt.g_inv();
    (p - gi * p.transpose() * &pt.g) * (0.5 * pt.xi_norm2())
}

/// Leading part of the linearized Ricci tensor in h:
/// ½ g^{pq}(ξ_qξ_j h_kp + ξ_qξ_k h_jp − ξ_pξ_q h_jk − ξ_jξ_k h_pq).
pub fn principal_ricci(pt: &PointData, h: &DMatrix<f64>) -> DMatrix<f64> {
    let v = pt.xi_up();
    let hv = h * &v;
    let tr = (pt.g_inv() * h).trace();
    (&pt.xi * hv.transpose() + &hv * pt.xi.transpose() - h * pt.xi_norm2() - &pt.xi * pt.xi.transpose() * tr) * 0.5
}

/// B from its definition g(Bx, y) = Ric(Jx, y) + Ric(x, Jy), i.e.
/// B = g⁻¹(JᵀR + RJ), applied to a symmetric R.
fn b_from_ricci(pt: &PointData, r: &DMatrix<f64>) -> DMatrix<f64> {
    pt.g_inv() * (pt.j.transpose() * r + r * &pt.j)
}

/// σDB(ξ)h as the displayed contraction ½ω^{ik}(δδ − JJ)(…) with the
/// inverse contracted on its first index.
fn sigma_db_display(pt: &PointData, h: &DMatrix<f64>) -> DMatrix<f64> {
    let winv = pt.omega.clone().try_inverse().expect("omega is nondegenerate");
    let lam = principal_ricci(pt, h) * 2.0;
    winv.transpose() * (&lam - pt.j.transpose() * &lam * &pt.j) * 0.5
}

/// Metric variation of g = sym(ω J) under (δω, δJ) = (u, P).
fn metric_variation(pt: &PointData, u: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let m = u * &pt.j + &pt.omega * p;
    (&m + m.transpose()) * 0.5
}

/// σ(d*d)(ξ) on Λ².
pub fn symbol_dstard(point: &PointData) -> SymbolReport {
    let pt = point.normalized();
    let d = pt.dim;
    let tol = zero_tol(&pt);
    let basis = antisymmetric_basis(d);
    let m = matrix_of(&basis, |b| principal_neg_dstard(&pt, b));
    let ev = sym_eigenvalues(&m);
    let null_dim = count_zero(&ev, tol);

    let kernel_defect = (0..d)
        .map(|k| {
            let e = DVector::from_fn(d, |i, _| if i == k { 1.0 } else { 0.0 });
            let wedge = &pt.xi * e.transpose() - &e * pt.xi.transpose();
            max_abs(&principal_neg_dstard(&pt, &wedge))
        })
        .fold(0.0, f64::max);

    // σ(d*)(ξ) up to a factor i is the interior product ι_ξ: Λ² → Λ¹.
    let iota = DMatrix::from_fn(d, basis.len(), |r, c| (basis[c].transpose() * &pt.xi)[r]);
    let compose = max_abs(&(&iota * &m));
    // ker ι_ξ = Λ²(ξ^⊥), the range of β ↦ PβP with P the projector onto ξ^⊥
    let perp = DMatrix::identity(d, d) - &pt.xi * pt.xi.transpose() / pt.xi.norm_squared();
    let ker = projector_range(&basis, |b| &perp * b * &perp);
    let restricted = matrix_of(&ker, |b| principal_neg_dstard(&pt, b));
    let min_constrained = sym_eigenvalues(&restricted).first().copied().unwrap_or(f64::INFINITY);

    SymbolReport {
        operator: "dstard",
        dim: d,
        checks: vec![
            SymbolCheck::at_most("self_adjoint", asymmetry(&m), tol),
            SymbolCheck::equals("null_dim", null_dim, d - 1),
            SymbolCheck::at_most("kernel_contains_xi_wedge", kernel_defect, tol),
            SymbolCheck::at_least("positive_on_ker_iota", min_constrained, tol),
            SymbolCheck::at_most("image_in_null_of_codiff", compose, tol),
        ],
        matrix: m,
        eigenvalues: ev,
        null_dim,
        min_constrained,
    }
}

/// Second-derivative symbol of K₂ on anti-J endomorphisms.
pub fn symbol_k2(point: &PointData) -> Result<SymbolReport, SymbolError> {
    point.require_compatible()?;
    let pt = point.normalized();
    let d = pt.dim;
    let x2 = pt.xi_norm2();
    let basis = anti_j_basis(&pt.j);
    let m = matrix_of(&basis, |p| principal_k2_explicit(&pt, p));
    let ev = sym_eigenvalues(&m);
    let null_dim = count_zero(&ev, zero_tol(&pt));
    let spread = ev.iter().map(|l| (l - x2).abs()).fold(0.0, f64::max);
    Ok(SymbolReport {
        operator: "k2",
        dim: d,
        checks: vec![
            SymbolCheck::at_most("self_adjoint", asymmetry(&m), EXACT_TOL * x2.max(1.0)),
            SymbolCheck::equals("space_dim", basis.len(), d * d / 2),
            SymbolCheck::at_most("spectrum_is_xi_squared", spread, EXACT_TOL * x2.max(1.0)),
        ],
        min_constrained: ev.first().copied().unwrap_or(f64::INFINITY),
        matrix: m,
        eigenvalues: ev,
        null_dim,
    })
}

/// Id − ηηᵀ with η_k = ξ_jω_jk, for unit ξ and g = Id.
pub fn symbol_diffeo(point: &PointData) -> Result<SymbolReport, SymbolError> {
    point.require_compatible()?;
    let mut pt = point.normalized();
    pt.xi /= pt.xi.norm();
    let d = pt.dim;
    let eta = pt.omega.transpose() * &pt.xi;
    let m = DMatrix::from_fn(d, d, |r, c| {
        let v = DVector::from_fn(d, |i, _| if i == c { 1.0 } else { 0.0 });
        (&v - &eta * eta.dot(&v))[r]
    });
    let ev = sym_eigenvalues(&m);
    let null_dim = count_zero(&ev, ZERO_TOL);
    let kernel = (&m * &eta).amax();
    let unit_spread = ev.iter().skip(1).map(|l| (l - 1.0).abs()).fold(0.0, f64::max);
    Ok(SymbolReport {
        operator: "diffeo",
        dim: d,
        checks: vec![
            SymbolCheck::at_most("eta_unit", (eta.norm() - 1.0).abs(), ZERO_TOL),
            SymbolCheck::at_least("nonnegative", ev[0], -ZERO_TOL),
            SymbolCheck::equals("null_dim", null_dim, 1),
            SymbolCheck::at_most("eta_in_kernel", kernel, ZERO_TOL),
            SymbolCheck::at_most("other_eigenvalues_one", unit_spread, ZERO_TOL),
        ],
        min_constrained: ev[0],
        matrix: m,
        eigenvalues: ev,
        null_dim,
    })
}

/// The two zero modes (δδ − JJ)ξξ and J^p_bξ_aξ_p + J^p_aξ_bξ_p.
pub fn ricci_b_zero_modes(pt: &PointData) -> [DMatrix<f64>; 2] {
    let jx = &pt.j * &pt.xi; // J^a_i ξ_i
    let jtx = pt.j.transpose() * &pt.xi; // J^p_b ξ_p
    [
        &pt.xi * pt.xi.transpose() - &jx * jx.transpose(),
        &pt.xi * jtx.transpose() + &jtx * pt.xi.transpose(),
    ]
}

/// Symbol of DB on symmetric h, transported back to h by K ↦ ωK.
///
/// The full matrix lives on all symmetric 2-tensors. The constraint
/// subspace is h(J·,J·) = −h, the image of g-symmetric anti-J variations
/// K under K ↦ ωK. Both the definition of B and the displayed contraction
/// are evaluated and must agree.
pub fn symbol_ricci_b(point: &PointData) -> Result<SymbolReport, SymbolError> {
    point.require_compatible()?;
    let pt = point.normalized();
    let d = pt.dim;
    let tol = zero_tol(&pt);
    let op = |h: &DMatrix<f64>| &pt.omega * b_from_ricci(&pt, &principal_ricci(&pt, h));
    let display = |h: &DMatrix<f64>| &pt.omega * sigma_db_display(&pt, h);
    let sym = symmetric_basis(d);
    let m = matrix_of(&sym, op);
    let route_gap = max_abs(&(&m - matrix_of(&sym, display)));
    let ev = sym_eigenvalues(&m);

    let cbasis = sym_anti_j_basis(&pt.j);
    let mc = matrix_of(&cbasis, op);
    let evc = sym_eigenvalues(&mc);
    let null_dim = count_zero(&evc, tol);
    let [z1, z2] = ricci_b_zero_modes(&pt);
    let min_constrained = evc.first().copied().unwrap_or(0.0);

    Ok(SymbolReport {
        operator: "ricci_b",
        dim: d,
        checks: vec![
            SymbolCheck::at_most("display_matches_definition", route_gap, tol),
            SymbolCheck::at_most("zero_mode_1", max_abs(&op(&z1)), tol),
            SymbolCheck::at_most("zero_mode_2", max_abs(&op(&z2)), tol),
            SymbolCheck::at_most("self_adjoint_on_constraint", asymmetry(&mc), tol),
            SymbolCheck::at_least("nonnegative_on_constraint", min_constrained, -tol),
        ],
        matrix: m,
        eigenvalues: ev,
        null_dim,
        min_constrained,
    })
}

/// Principal symbol of the gauged pair system on Λ² ⊕ anti-J.
#[derive(Debug, Clone)]
pub struct SystemSymbol {
    pub dim: usize,
    pub with_ricci: bool,
    /// Block matrix [[Θω, ΘJ], [Kω, KJ]] in orthonormal bases.
    pub matrix: DMatrix<f64>,
    pub omega_dim: usize,
    /// Eigenvalues of the J block, ascending.
    pub j_block_eigenvalues: Vec<f64>,
    pub checks: Vec<SymbolCheck>,
}

impl SystemSymbol {
    pub fn verdict(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Linearizes θ = −d*dω_J + L_Xω_J + g^{pq}∂∂ω_{J−} and
/// K = K₂(ω_J, J) + L_XJ (+ B when `with_ricci`) at a compatible point.
/// K₂ contributes its explicit ∂∂J term and ψ_{J−}g⁻¹; the φ term is first
/// order. Checks: the J→θ block vanishes, the θ block is |ξ|²·Id, and the
/// J block is |ξ|²·Id, or |ξ|²·Id + Q with Q ⪰ 0 when `with_ricci`.
pub fn symbol_system(point: &PointData, with_ricci: bool) -> Result<SystemSymbol, SymbolError> {
    point.require_compatible()?;
    let pt = point.normalized();
    let d = pt.dim;
    let x2 = pt.xi_norm2();
    let tol = zero_tol(&pt);
    let jt = pt.j.transpose();
    let gi = pt.g_inv();

    let theta = |beta: &DMatrix<f64>, p: &DMatrix<f64>| {
        let pull = p.transpose() * &pt.omega * &pt.j + &jt * &pt.omega * p;
        let u = (beta + &jt * beta * &pt.j + &pull) * 0.5;
        let v = (beta - &jt * beta * &pt.j - &pull) * 0.5;
        principal_neg_dstard(&pt, &u) + principal_lie_x_form(&pt, &u) + v * x2
    };
    let k = |beta: &DMatrix<f64>, p: &DMatrix<f64>| {
        let pull = p.transpose() * &pt.omega * &pt.j + &jt * &pt.omega * p;
        let u = (beta + &jt * beta * &pt.j + &pull) * 0.5;
        let psi = principal_psi(&pt, &u);
        let psi_anti = (&psi - &jt * &psi * &pt.j) * 0.5;
        // L^j_i = ψ_ik g^{kj}
        let l = (&psi_anti * &gi).transpose();
        let mut out = principal_k2_explicit(&pt, p) + l + principal_lie_x_j(&pt, &u);
        if with_ricci {
            let h = metric_variation(&pt, &u, p);
            out += b_from_ricci(&pt, &principal_ricci(&pt, &h));
        }
        out
    };

    let wb = antisymmetric_basis(d);
    let jb = anti_j_basis(&pt.j);
    let (nw, nj) = (wb.len(), jb.len());
    let na = d / 2 * (d / 2 - 1);
    let zero = DMatrix::zeros(d, d);
    let mut m = DMatrix::zeros(nw + nj, nw + nj);
    for c in 0..nw + nj {
        let (beta, p) = if c < nw { (&wb[c], &zero) } else { (&zero, &jb[c - nw]) };
        let (t, kk) = (theta(beta, p), k(beta, p));
        for r in 0..nw {
            m[(r, c)] = frob(&wb[r], &t);
        }
        for r in 0..nj {
            m[(nw + r, c)] = frob(&jb[r], &kk);
        }
    }
    let upper_right = max_abs(&m.view((0, nw), (nw, nj)).into_owned());
    let theta_block = m.view((0, 0), (nw, nw)).into_owned();
    let theta_gap = max_abs(&(theta_block - DMatrix::identity(nw, nw) * x2));
    let j_block = m.view((nw, nw), (nj, nj)).into_owned();
    // The anti-J space splits into g-antisymmetric (first na) and
    // g-symmetric members; the J block is lower triangular in that split,
    // so its spectrum is the union of the two diagonal blocks.
    let ns = nj - na;
    let j_as = max_abs(&j_block.view((0, na), (na, ns)).into_owned());
    let (jaa, jss) = (j_block.view((0, 0), (na, na)).into_owned(), j_block.view((na, na), (ns, ns)).into_owned());
    let mut j_ev = sym_eigenvalues(&jaa);
    j_ev.extend(sym_eigenvalues(&jss));
    j_ev.sort_by(|a, b| a.total_cmp(b));
    let mut checks = vec![
        SymbolCheck::at_most("lower_triangular", upper_right, tol),
        SymbolCheck::at_most("theta_block_identity", theta_gap, tol),
        SymbolCheck::at_most("j_block_triangular", j_as, tol),
        SymbolCheck::at_most("j_diagonal_blocks_self_adjoint", asymmetry(&jaa).max(asymmetry(&jss)), tol),
    ];
    if with_ricci {
        let q_min = j_ev.first().map_or(0.0, |l| l - x2);
        checks.push(SymbolCheck::at_least("j_block_identity_plus_nonnegative", q_min, -tol));
    } else {
        let gap = max_abs(&(&j_block - DMatrix::identity(nj, nj) * x2));
        checks.push(SymbolCheck::at_most("j_block_identity", gap, tol));
    }
    Ok(SystemSymbol { dim: d, with_ricci, matrix: m, omega_dim: nw, j_block_eigenvalues: j_ev, checks })
}

/// Operators covered by [`check_symbols`].
pub const OPERATORS: [&str; 6] = ["dstard", "k2", "diffeo", "ricci_b", "system", "system_ricci"];

/// Aggregate over random trials for one operator and dimension.
#[derive(Debug, Clone, Serialize)]
pub struct SymbolRow {
    pub operator: &'static str,
    pub dim: usize,
    pub trials: usize,
    pub passed: usize,
    /// Smallest constraint-subspace eigenvalue seen, relative to |ξ|².
    pub min_eigenvalue: f64,
    /// Distinct null-space dimensions seen.
    pub null_dims: Vec<usize>,
    /// Names of checks that failed in at least one trial.
    pub failed: Vec<&'static str>,
    pub verdict: bool,
}

fn report_for(op: &'static str, pt: &PointData) -> Result<(f64, usize, Vec<&'static str>), SymbolError> {
    let x2 = pt.xi_norm2();
    if op.starts_with("system") {
        let s = symbol_system(pt, op == "system_ricci")?;
        let failed = s.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
        let min = s.j_block_eigenvalues.first().copied().unwrap_or(0.0);
        return Ok((min / x2, count_zero(&s.j_block_eigenvalues, zero_tol(pt)), failed));
    }
    let r = match op {
        "dstard" => symbol_dstard(pt),
        "k2" => symbol_k2(pt)?,
        "diffeo" => symbol_diffeo(pt)?,
        "ricci_b" => symbol_ricci_b(pt)?,
        other => unreachable!("unknown operator {other}"),
    };
    let scale = if op == "diffeo" { 1.0 } else { x2 };
    Ok((r.min_constrained / scale, r.null_dim, r.failed_checks()))
}

/// Runs `trials` random compatible points per operator and dimension.
///
/// A row passes when every trial passes; for `ricci_b` the null-space
/// dimension must also be the same in every trial.
pub fn check_symbols(trials: usize, dims: &[usize], seed: u64) -> Result<Vec<SymbolRow>, SymbolError> {
    let mut rows = Vec::new();
    for &dim in dims {
        if !matches!(dim, 2 | 4 | 6) {
            return Err(SymbolError::Dimension(dim));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (dim as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let points: Vec<PointData> = (0..trials).map(|_| PointData::random(dim, &mut rng)).collect::<Result<_, _>>()?;
        for op in OPERATORS {
            let mut passed = 0;
            let mut min_eig = f64::INFINITY;
            let mut nulls = BTreeSet::new();
            let mut failed = BTreeSet::new();
            for pt in &points {
                let (min, null, f) = report_for(op, pt)?;
                min_eig = min_eig.min(min);
                nulls.insert(null);
                if f.is_empty() {
                    passed += 1;
                }
                failed.extend(f);
            }
            let stable = op != "ricci_b" || nulls.len() <= 1;
            rows.push(SymbolRow {
                operator: op,
                dim,
                trials,
                passed,
                min_eigenvalue: min_eig,
                null_dims: nulls.into_iter().collect(),
                failed: failed.into_iter().collect(),
                verdict: passed == trials && stable,
            });
        }
    }
    Ok(rows)
}
