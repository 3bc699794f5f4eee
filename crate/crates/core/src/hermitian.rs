//! Tamed and compatible pairs (ω, J), their induced metric and the
//! J-invariant splitting of two-forms.

use thiserror::Error;

use crate::fields::{form_basis, FieldError, FormField, GridField, GridSpec, ScalarField, TensorField};
use crate::linalg;

/// Nondegeneracy threshold on min |Pf(ω)|.
pub const EPS_ND: f64 = 1e-8;
/// Max-norm threshold on ω_{J−} below which a pair counts as compatible.
pub const TOL_COMPAT: f64 = 1e-8;
/// Max-norm tolerance on J² + Id for an almost complex field.
pub const TOL_J: f64 = 1e-10;
/// Newton iteration cap for the J retraction.
pub const RETRACTION_MAX_ITER: usize = 50;

#[derive(Debug, Error)]
pub enum HermitianError {
    #[error("pair is not tamed: ω(·, J·) fails to be positive definite at point {point}")]
    NotTamed { point: usize },
    #[error("pair is not compatible: max |ω_J−| = {defect:e}")]
    NotCompatible { defect: f64 },
    #[error("J retraction did not converge at point {point}")]
    RetractionDiverged { point: usize },
    #[error("nondegeneracy lost: min |Pf(ω)| = {min_pf:e}")]
    NondegeneracyLost { min_pf: f64 },
    #[error("metric is not positive definite at point {point}")]
    DegenerateMetric { point: usize },
    #[error("J² + Id has max entry {defect:e}")]
    NotAlmostComplex { defect: f64 },
    #[error("expected a two-form, got degree {0}")]
    WrongDegree(usize),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// J with J² = −Id pointwise, stored as a (1,1) tensor J^j_i at `j * dim + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmostComplexField {
    j: TensorField,
}

impl AlmostComplexField {
    pub fn new(j: TensorField) -> Result<Self, HermitianError> {
        assert_eq!(j.valence(), (1, 1), "J must be a (1,1) tensor");
        let defect = square_defect(&j);
        if defect > TOL_J {
            return Err(HermitianError::NotAlmostComplex { defect });
        }
        Ok(Self { j })
    }

    /// Standard structure J₀∂_{2k} = ∂_{2k+1}, J₀∂_{2k+1} = −∂_{2k}.
    pub fn standard(grid: &GridSpec) -> Self {
        Self { j: TensorField::constant(grid, 1, 1, &standard_j_matrix(grid.dim())) }
    }

    pub fn tensor(&self) -> &TensorField {
        &self.j
    }

    pub fn into_tensor(self) -> TensorField {
        self.j
    }

    pub fn grid(&self) -> &GridSpec {
        self.j.grid()
    }

    /// max |J² + Id| over all points and entries.
    pub fn defect(&self) -> f64 {
        square_defect(&self.j)
    }
}

/// J₀ as a row-major matrix with entry (j, i) = J^j_i.
pub fn standard_j_matrix(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for k in 0..d / 2 {
        m[(2 * k + 1) * d + 2 * k] = 1.0;
        m[(2 * k) * d + 2 * k + 1] = -1.0;
    }
    m
}

/// Σ_k dx^{2k} ∧ dx^{2k+1} as increasing-index components.
pub fn standard_omega_components(d: usize) -> Vec<f64> {
    let b = form_basis(d, 2);
    b.indices.iter().map(|idx| if idx[1] == idx[0] + 1 && idx[0] % 2 == 0 { 1.0 } else { 0.0 }).collect()
}

pub fn standard_omega(grid: &GridSpec) -> FormField {
    FormField::constant(grid, 2, &standard_omega_components(grid.dim()))
}

fn square_defect(j: &TensorField) -> f64 {
    let d = j.grid().dim();
    let mut sq = [0.0; 36];
    let mut worst = 0.0f64;
    for p in 0..j.grid().npoints() {
        let m = j.at(p);
        linalg::mat_mul(m, m, d, &mut sq);
        for i in 0..d {
            sq[i * d + i] += 1.0;
        }
        worst = worst.max(linalg::max_abs(&sq, d));
    }
    worst
}

/// Pointwise (β(J·,J·))_ab = J^c_a J^d_b β_cd on antisymmetric matrices.
pub(crate) fn j_pullback_matrix(beta: &[f64], j: &[f64], d: usize, out: &mut [f64]) {
    // tmp_cb = β_cd J^d_b, out_ab = J^c_a tmp_cb
    let mut tmp = [0.0; 36];
    for c in 0..d {
        for b in 0..d {
            let mut s = 0.0;
            for e in 0..d {
                s += beta[c * d + e] * j[e * d + b];
            }
            tmp[c * d + b] = s;
        }
    }
    for a in 0..d {
        for b in 0..d {
            let mut s = 0.0;
            for c in 0..d {
                s += j[c * d + a] * tmp[c * d + b];
            }
            out[a * d + b] = s;
        }
    }
}

fn split(beta: &FormField, j: &AlmostComplexField, sign: f64) -> Result<FormField, HermitianError> {
    if beta.degree() != 2 {
        return Err(HermitianError::WrongDegree(beta.degree()));
    }
    let grid = beta.grid();
    let d = grid.dim();
    let basis = form_basis(d, 2);
    let nc = basis.len();
    let mut out = FormField::zeros(grid, 2);
    let mut m = [0.0; 36];
    let mut pm = [0.0; 36];
    for p in 0..grid.npoints() {
        beta.matrix_at(p, &mut m);
        j_pullback_matrix(&m, j.tensor().at(p), d, &mut pm);
        let dst = &mut out.data_mut()[p * nc..(p + 1) * nc];
        for (c, idx) in basis.indices.iter().enumerate() {
            let k = idx[0] * d + idx[1];
            dst[c] = 0.5 * (m[k] + sign * pm[k]);
        }
    }
    Ok(out)
}

/// β_J = ½(β + β(J·,J·)).
pub fn invariant_part(beta: &FormField, j: &AlmostComplexField) -> Result<FormField, HermitianError> {
    split(beta, j, 1.0)
}

/// β_{J−} = ½(β − β(J·,J·)).
pub fn anti_invariant_part(beta: &FormField, j: &AlmostComplexField) -> Result<FormField, HermitianError> {
    split(beta, j, -1.0)
}

/// Symmetrized g_ij = ½(ω_ik J^k_j + ω_jk J^k_i) at one point.
pub(crate) fn metric_matrix(omega: &[f64], j: &[f64], d: usize, g: &mut [f64]) {
    for a in 0..d {
        for b in a..d {
            let mut s = 0.0;
            for k in 0..d {
                s += omega[a * d + k] * j[k * d + b] + omega[b * d + k] * j[k * d + a];
            }
            g[a * d + b] = 0.5 * s;
            g[b * d + a] = 0.5 * s;
        }
    }
}

/// g(x, y) = ½(ω(x, Jy) + ω(y, Jx)); errors unless positive definite.
pub fn metric_from_pair(omega: &FormField, j: &AlmostComplexField) -> Result<TensorField, HermitianError> {
    if omega.degree() != 2 {
        return Err(HermitianError::WrongDegree(omega.degree()));
    }
    let grid = omega.grid();
    let d = grid.dim();
    let mut g = TensorField::zeros(grid, 0, 2);
    let mut w = [0.0; 36];
    let mut inv = [0.0; 36];
    for p in 0..grid.npoints() {
        omega.matrix_at(p, &mut w);
        let dst = &mut g.data_mut()[p * d * d..(p + 1) * d * d];
        metric_matrix(&w, j.tensor().at(p), d, dst);
        if linalg::spd_inverse(dst, d, &mut inv).is_none() {
            return Err(HermitianError::NotTamed { point: p });
        }
    }
    Ok(g)
}

/// Riemannian metric with cached inverse and volume density.
#[derive(Debug, Clone)]
pub struct MetricField {
    g: TensorField,
    g_inv: TensorField,
    sqrt_det: ScalarField,
    diagonal: Vec<bool>,
}

impl MetricField {
    pub fn new(g: TensorField) -> Result<Self, HermitianError> {
        assert_eq!(g.valence(), (0, 2), "metric must be a (0,2) tensor");
        let grid = g.grid().clone();
        let d = grid.dim();
        let n = grid.npoints();
        let mut g_inv = TensorField::zeros(&grid, 2, 0);
        let mut sq = vec![0.0; n];
        let mut diagonal = vec![false; n];
        for p in 0..n {
            let m = g.at(p);
            let inv = &mut g_inv.data_mut()[p * d * d..(p + 1) * d * d];
            let det = linalg::spd_inverse(m, d, inv).ok_or(HermitianError::DegenerateMetric { point: p })?;
            sq[p] = det.sqrt();
            diagonal[p] = (0..d).all(|a| (0..d).all(|b| a == b || m[a * d + b] == 0.0));
        }
        Ok(Self { g, g_inv, sqrt_det: ScalarField::new(grid, sq)?, diagonal })
    }

    /// Identity metric of the flat torus.
    pub fn flat(grid: &GridSpec) -> Self {
        let id = TensorField::identity(grid).relabel(0, 2);
        Self::new(id).expect("identity is positive definite")
    }

    pub fn g(&self) -> &TensorField {
        &self.g
    }

    pub fn g_inv(&self) -> &TensorField {
        &self.g_inv
    }

    pub fn sqrt_det(&self) -> &ScalarField {
        &self.sqrt_det
    }

    /// Whether g has exactly zero off-diagonal entries at point `p`.
    pub fn is_diagonal_at(&self, p: usize) -> bool {
        self.diagonal[p]
    }

    pub fn grid(&self) -> &GridSpec {
        self.g.grid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairStatus {
    Tamed,
    Compatible,
    Invalid,
}

/// Pfaffian of a two-form at every point.
pub fn pfaffian_field(omega: &FormField) -> ScalarField {
    let grid = omega.grid();
    let d = grid.dim();
    let mut w = [0.0; 36];
    let values = (0..grid.npoints())
        .map(|p| {
            omega.matrix_at(p, &mut w);
            linalg::pfaffian(&w, d)
        })
        .collect();
    ScalarField::new(grid.clone(), values).expect("finite pfaffian")
}

/// Classify (ω, J) without building the caches.
pub fn classify(omega: &FormField, j: &AlmostComplexField) -> PairStatus {
    if metric_from_pair(omega, j).is_err() {
        return PairStatus::Invalid;
    }
    match anti_invariant_part(omega, j) {
        Ok(a) if a.max_abs() <= TOL_COMPAT => PairStatus::Compatible,
        Ok(_) => PairStatus::Tamed,
        Err(_) => PairStatus::Invalid,
    }
}

/// A validated tamed pair with eagerly computed caches.
#[derive(Debug, Clone)]
pub struct HermitianPair {
    omega: FormField,
    j: AlmostComplexField,
    metric: MetricField,
    omega_inv: TensorField,
    pfaffian: ScalarField,
    compat_defect: f64,
    status: PairStatus,
}

impl HermitianPair {
    pub fn new(omega: FormField, j: AlmostComplexField) -> Result<Self, HermitianError> {
        if omega.degree() != 2 {
            return Err(HermitianError::WrongDegree(omega.degree()));
        }
        if omega.grid() != j.grid() {
            return Err(FieldError::GridMismatch.into());
        }
        let pfaffian = pfaffian_field(&omega);
        let min_pf = pfaffian.values().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if !(min_pf > EPS_ND) {
            return Err(HermitianError::NondegeneracyLost { min_pf });
        }
        let metric = MetricField::new(metric_from_pair(&omega, &j)?)?;
        let grid = omega.grid().clone();
        let d = grid.dim();
        let mut omega_inv = TensorField::zeros(&grid, 2, 0);
        let mut w = [0.0; 36];
        for p in 0..grid.npoints() {
            omega.matrix_at(p, &mut w);
            let dst = &mut omega_inv.data_mut()[p * d * d..(p + 1) * d * d];
            linalg::inverse(&w, d, dst).ok_or(HermitianError::NondegeneracyLost { min_pf: 0.0 })?;
        }
        let compat_defect = anti_invariant_part(&omega, &j)?.max_abs();
        let status = if compat_defect <= TOL_COMPAT { PairStatus::Compatible } else { PairStatus::Tamed };
        Ok(Self { omega, j, metric, omega_inv, pfaffian, compat_defect, status })
    }

    /// Standard flat Kähler pair (ω₀, J₀).
    pub fn standard(grid: &GridSpec) -> Self {
        Self::new(standard_omega(grid), AlmostComplexField::standard(grid)).expect("standard pair is valid")
    }

    pub fn omega(&self) -> &FormField {
        &self.omega
    }

    pub fn j(&self) -> &AlmostComplexField {
        &self.j
    }

    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    pub fn g(&self) -> &TensorField {
        self.metric.g()
    }

    pub fn g_inv(&self) -> &TensorField {
        self.metric.g_inv()
    }

    /// ω^{jk} with ω_ij ω^{jk} = δ_i^k.
    pub fn omega_inv(&self) -> &TensorField {
        &self.omega_inv
    }

    pub fn pfaffian(&self) -> &ScalarField {
        &self.pfaffian
    }

    pub fn min_abs_pfaffian(&self) -> f64 {
        self.pfaffian.values().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// max |ω_{J−}|.
    pub fn compat_defect(&self) -> f64 {
        self.compat_defect
    }

    pub fn status(&self) -> PairStatus {
        self.status
    }

    pub fn grid(&self) -> &GridSpec {
        self.omega.grid()
    }

    pub fn require_compatible(&self) -> Result<(), HermitianError> {
        if self.status == PairStatus::Compatible {
            Ok(())
        } else {
            Err(HermitianError::NotCompatible { defect: self.compat_defect })
        }
    }
}

/// Infinitesimal variation (θ, K) of a pair.
#[derive(Debug, Clone)]
pub struct VariationPair {
    pub theta: FormField,
    pub k: TensorField,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationDefect {
    /// max |JK + KJ|
    pub anticommutator: f64,
    /// max |ω(Kx,Jy) + ω(Jx,Ky) − θ(x,y) + θ(Jx,Jy)|
    pub k_equation: f64,
}

/// Max-norm defects of JK + KJ = 0 and ω(K·,J·) + ω(J·,K·) = θ − θ(J·,J·).
pub fn check_variation(pair: &HermitianPair, var: &VariationPair) -> VariationDefect {
    let grid = pair.grid();
    let d = grid.dim();
    let mut w = [0.0; 36];
    let mut th = [0.0; 36];
    let mut thj = [0.0; 36];
    let mut a = [0.0; 36];
    let mut b = [0.0; 36];
    let mut out = VariationDefect { anticommutator: 0.0, k_equation: 0.0 };
    for p in 0..grid.npoints() {
        let j = pair.j().tensor().at(p);
        let k = var.k.at(p);
        linalg::mat_mul(j, k, d, &mut a);
        linalg::mat_mul(k, j, d, &mut b);
        for e in 0..d * d {
            out.anticommutator = out.anticommutator.max((a[e] + b[e]).abs());
        }
        pair.omega().matrix_at(p, &mut w);
        var.theta.matrix_at(p, &mut th);
        j_pullback_matrix(&th, j, d, &mut thj);
        for x in 0..d {
            for y in 0..d {
                // ω(K∂x, J∂y) = K^c_x ω_cd J^d_y,  ω(J∂x, K∂y) = J^c_x ω_cd K^d_y
                let mut s = 0.0;
                for c in 0..d {
                    for e in 0..d {
                        s += w[c * d + e] * (k[c * d + x] * j[e * d + y] + j[c * d + x] * k[e * d + y]);
                    }
                }
                let r = s - (th[x * d + y] - thj[x * d + y]);
                out.k_equation = out.k_equation.max(r.abs());
            }
        }
    }
    out
}

/// Project a near-complex endomorphism field onto J² = −Id via
/// J = J_raw (−J_raw²)^{−1/2}.
pub fn retract_j(j_raw: &TensorField) -> Result<AlmostComplexField, HermitianError> {
    let grid = j_raw.grid();
    let d = grid.dim();
    let mut out = j_raw.clone();
    let mut s = [0.0; 36];
    let mut r = [0.0; 36];
    for p in 0..grid.npoints() {
        let m = j_raw.at(p);
        linalg::mat_mul(m, m, d, &mut s);
        let mut exact = true;
        for i in 0..d {
            for k in 0..d {
                s[i * d + k] = -s[i * d + k];
                if s[i * d + k] != if i == k { 1.0 } else { 0.0 } {
                    exact = false;
                }
            }
        }
        if exact {
            continue;
        }
        linalg::inverse_sqrt_newton(&s, d, &mut r, RETRACTION_MAX_ITER)
            .ok_or(HermitianError::RetractionDiverged { point: p })?;
        let dst = &mut out.data_mut()[p * d * d..(p + 1) * d * d];
        linalg::mat_mul(m, &r, d, dst);
    }
    Ok(AlmostComplexField { j: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn t4(n: usize) -> GridSpec {
        GridSpec::cubic(4, n, 2.0 * PI).unwrap()
    }

    /// ω = dx∧dy + b dz∧dw.
    fn warped(grid: &GridSpec, b: impl Fn(&[f64]) -> f64) -> FormField {
        FormField::from_fn(grid, 2, |x, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[0] = 1.0;
            out[5] = b(x);
        })
    }

    #[test]
    fn compatible_split_is_trivial() {
        let g = t4(4);
        let w = warped(&g, |x| 2.0 + x[0].cos());
        let j = AlmostComplexField::standard(&g);
        assert_eq!(invariant_part(&w, &j).unwrap(), w);
        assert_eq!(anti_invariant_part(&w, &j).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn split_of_dx_dz() {
        let g = t4(4);
        // increasing basis in dim 4: 01 02 03 12 13 23
        let beta = FormField::constant(&g, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let j = AlmostComplexField::standard(&g);
        let inv = invariant_part(&beta, &j).unwrap();
        assert_eq!(inv.at(0), &[0.0, 0.5, 0.0, 0.0, 0.5, 0.0]);
        let anti = anti_invariant_part(&beta, &j).unwrap();
        assert_eq!(anti_invariant_part(&anti, &j).unwrap(), anti);
        assert_eq!(inv.add(&anti), beta);
        assert!(matches!(invariant_part(&FormField::zeros(&g, 1), &j), Err(HermitianError::WrongDegree(1))));
    }

    #[test]
    fn metric_examples() {
        let g = t4(4);
        let j = AlmostComplexField::standard(&g);
        let m = metric_from_pair(&standard_omega(&g), &j).unwrap();
        assert_eq!(m, TensorField::identity(&g).relabel(0, 2));
        let w = warped(&g, |x| 2.0 + x[0].cos());
        let m = metric_from_pair(&w, &j).unwrap();
        for p in 0..g.npoints() {
            let b = 2.0 + g.coords(p)[0].cos();
            let gp = m.at(p);
            let expected = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, b, 0.0, 0.0, 0.0, 0.0, b];
            assert_eq!(gp, &expected);
        }
        let scaled = metric_from_pair(&standard_omega(&g).scale(3.0), &j).unwrap();
        assert_eq!(scaled.max_abs(), 3.0);
        let flipped = metric_from_pair(&standard_omega(&g).scale(-1.0), &j);
        assert!(matches!(flipped, Err(HermitianError::NotTamed { .. })));
    }

    #[test]
    fn retraction_examples() {
        let g = GridSpec::cubic(4, 4, 1.0).unwrap();
        let j0 = AlmostComplexField::standard(&g);
        assert_eq!(retract_j(j0.tensor()).unwrap(), j0);
        let doubled = j0.tensor().scale(2.0);
        let r = retract_j(&doubled).unwrap();
        assert!(r.tensor().sub(j0.tensor()).max_abs() < 1e-15);
        // J₀(Id + εE) with E anti-commuting with J₀
        let m = [1.0, 0.3, -0.7, 0.2, 0.4, -1.0, 0.2, 0.9, 0.0, 0.25, 0.5, 0.1, 0.2, -0.6, 0.1, -0.5];
        let jm = standard_j_matrix(4);
        let mut jmj = [0.0; 16];
        let mut t = [0.0; 16];
        linalg::mat_mul(&jm, &m, 4, &mut t);
        linalg::mat_mul(&t, &jm, 4, &mut jmj);
        // E = M + J₀ M J₀ anticommutes with J₀
        let e: Vec<f64> = (0..16).map(|k| m[k] + jmj[k]).collect();
        let mut je = [0.0; 16];
        let mut ej = [0.0; 16];
        linalg::mat_mul(&jm, &e, 4, &mut je);
        linalg::mat_mul(&e, &jm, 4, &mut ej);
        for k in 0..16 {
            assert!((je[k] + ej[k]).abs() < 1e-15);
        }
        let eps = 1e-3;
        let raw: Vec<f64> = (0..16).map(|k| jm[k] + eps * je[k]).collect();
        let raw = TensorField::constant(&g, 1, 1, &raw);
        let r = retract_j(&raw).unwrap();
        assert!(r.defect() <= 1e-12);
        let moved = r.tensor().sub(&raw).max_abs();
        assert!(moved < 10.0 * eps * eps && moved > 0.01 * eps * eps, "moved {moved}");
        let hopeless = TensorField::identity(&g);
        assert!(matches!(retract_j(&hopeless), Err(HermitianError::RetractionDiverged { .. })));
    }

    #[test]
    fn pair_caches_and_status() {
        let g = t4(6);
        let w = warped(&g, |x| 1.5 + 0.5 * x[1].sin());
        let pair = HermitianPair::new(w, AlmostComplexField::standard(&g)).unwrap();
        assert_eq!(pair.status(), PairStatus::Compatible);
        let d = 4;
        let mut prod = [0.0; 16];
        let mut w = [0.0; 16];
        for p in 0..g.npoints() {
            linalg::mat_mul(pair.g().at(p), pair.g_inv().at(p), d, &mut prod);
            pair.omega().matrix_at(p, &mut w);
            let mut wi = [0.0; 16];
            linalg::mat_mul(&w, pair.omega_inv().at(p), d, &mut wi);
            for i in 0..d {
                for k in 0..d {
                    let id = if i == k { 1.0 } else { 0.0 };
                    assert!((prod[i * d + k] - id).abs() < 1e-12);
                    assert!((wi[i * d + k] - id).abs() < 1e-12);
                }
            }
            assert!((pair.pfaffian().values()[p] - pair.metric().sqrt_det().values()[p]).abs() < 1e-12);
        }
        let degenerate = warped(&g, |_| 0.0);
        assert!(matches!(
            HermitianPair::new(degenerate, AlmostComplexField::standard(&g)),
            Err(HermitianError::NondegeneracyLost { .. })
        ));
    }

    #[test]
    fn zero_variation_has_zero_defect() {
        let g = t4(4);
        let pair = HermitianPair::standard(&g);
        let var = VariationPair { theta: FormField::zeros(&g, 2), k: TensorField::zeros(&g, 1, 1) };
        let d = check_variation(&pair, &var);
        assert_eq!(d, VariationDefect { anticommutator: 0.0, k_equation: 0.0 });
    }
}
