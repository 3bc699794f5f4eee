//! Exterior derivative, Hodge star, codifferential, Hodge Laplacian, wedge
//! products, L² pairings, energies and Lie derivatives.
//!
//! Forms use unit coefficients on increasing multi-indices, so the stored
//! a_I are exactly the antisymmetric tensor components α(∂_{i₁}, …, ∂_{i_p}).
//! With that convention d*α = −g^{kl}∇_k α_{l…} and −*d* coincide without
//! extra factors.

use std::sync::OnceLock;

use thiserror::Error;

use crate::fields::{
    binomial, for_each_point, form_basis, merge_sign, sort_sign, FieldError, FormField, GridField, ScalarField,
    TensorField, MAX_DIM,
};
use crate::hermitian::{HermitianError, HermitianPair, MetricField};

#[derive(Debug, Error)]
pub enum ExteriorError {
    #[error("form degree {degree} has no successor in dimension {dim}")]
    DegreeOverflow { degree: usize, dim: usize },
    #[error("operation not defined for degree {0}")]
    UnsupportedDegree(usize),
    #[error("operands live on different grids or have mismatched degrees")]
    Mismatch,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Hermitian(#[from] HermitianError),
}

/// dα with centered differences.
pub fn exterior_d(alpha: &FormField) -> Result<FormField, ExteriorError> {
    let grid = alpha.grid();
    let d = grid.dim();
    let p = alpha.degree();
    if p >= d {
        return Err(ExteriorError::DegreeOverflow { degree: p, dim: d });
    }
    let bin = form_basis(d, p);
    let bout = form_basis(d, p + 1);
    // for each output J: (axis, input position, sign) with dx^a ∧ dx^{J∖a} = sign dx^J
    let table: Vec<Vec<(usize, usize, f64)>> = bout
        .masks
        .iter()
        .map(|&mj| {
            (0..d)
                .filter(|a| mj & (1 << a) != 0)
                .map(|a| {
                    let rest = mj & !(1 << a);
                    (a, bin.position(rest), merge_sign(1 << a, rest))
                })
                .collect()
        })
        .collect();
    let mut inv2h = [0.0; MAX_DIM];
    for (a, v) in inv2h.iter_mut().enumerate().take(d) {
        *v = 0.5 / grid.spacing(a);
    }
    let (nin, nout) = (bin.len(), bout.len());
    let src = alpha.data();
    let mut out = FormField::zeros(grid, p + 1);
    let dst = out.data_mut();
    for_each_point(grid, |pt, plus, minus| {
        for (jpos, entries) in table.iter().enumerate() {
            let mut s = 0.0;
            for &(a, c, sign) in entries {
                s += sign * (src[plus[a] * nin + c] - src[minus[a] * nin + c]) * inv2h[a];
            }
            dst[pt * nout + jpos] = s;
        }
    });
    Ok(out)
}

/// Laplace-expansion tables for all minors of a d×d matrix.
struct MinorTables {
    /// per order q ≥ 1: per row set R: (first row, position of R∖r0 in order q−1)
    rows: Vec<Vec<(usize, usize)>>,
    /// per order q ≥ 1: per column set C: (column, sign, position of C∖c in order q−1)
    cols: Vec<Vec<Vec<(usize, f64, usize)>>>,
}

fn minor_tables(d: usize) -> &'static MinorTables {
    static TABLES: OnceLock<Vec<MinorTables>> = OnceLock::new();
    let all = TABLES.get_or_init(|| {
        (0..=MAX_DIM)
            .map(|d| {
                let mut rows = vec![Vec::new()];
                let mut cols = vec![Vec::new()];
                for q in 1..=d {
                    let b = form_basis(d, q);
                    let lower = form_basis(d, q - 1);
                    rows.push(
                        b.masks
                            .iter()
                            .map(|&m| {
                                let r0 = m.trailing_zeros() as usize;
                                (r0, lower.position(m & !(1 << r0)))
                            })
                            .collect(),
                    );
                    cols.push(
                        b.indices
                            .iter()
                            .zip(&b.masks)
                            .map(|(idx, &m)| {
                                idx.iter()
                                    .enumerate()
                                    .map(|(t, &c)| {
                                        let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
                                        (c, sign, lower.position(m & !(1 << c)))
                                    })
                                    .collect()
                            })
                            .collect(),
                    );
                }
                MinorTables { rows, cols }
            })
            .collect()
    });
    &all[d]
}

/// All minors of orders 1..=qmax of a d×d matrix; `out[q]` holds the
/// C(d,q)×C(d,q) compound matrix, row-major over increasing index sets.
fn compound_matrices(a: &[f64], d: usize, qmax: usize, out: &mut [Vec<f64>]) {
    let t = minor_tables(d);
    out[0].clear();
    out[0].push(1.0);
    for q in 1..=qmax {
        let n = binomial(d, q);
        let nl = binomial(d, q - 1);
        let (lo, hi) = out.split_at_mut(q);
        let prev = &lo[q - 1];
        let cur = &mut hi[0];
        cur.resize(n * n, 0.0);
        for (r, &(r0, rrest)) in t.rows[q].iter().enumerate() {
            for (c, entries) in t.cols[q].iter().enumerate() {
                let mut s = 0.0;
                for &(col, sign, crest) in entries {
                    s += sign * a[r0 * d + col] * prev[rrest * nl + crest];
                }
                cur[r * n + c] = s;
            }
        }
    }
}

/// Pointwise raising α^I = Σ_K det(g^{-1}[I,K]) α_K of all points of a form.
struct Raiser<'a> {
    metric: &'a MetricField,
    d: usize,
    p: usize,
    scratch: Vec<Vec<f64>>,
    /// (−1)^{ΣI} parity per increasing index set of degree p
    parity: Vec<f64>,
    /// position of the complement set, per degree-p position
    complement: Vec<usize>,
}

impl<'a> Raiser<'a> {
    fn new(metric: &'a MetricField, p: usize) -> Self {
        let d = metric.grid().dim();
        let b = form_basis(d, p);
        let bc = form_basis(d, d - p);
        let full = (1u32 << d) - 1;
        let parity = b.indices.iter().map(|idx| if idx.iter().sum::<usize>() % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let complement = b.masks.iter().map(|&m| bc.position(full & !m)).collect();
        Self { metric, d, p, scratch: vec![Vec::new(); d + 1], parity, complement }
    }

    fn raise(&mut self, pt: usize, alpha: &[f64], out: &mut [f64]) {
        let (d, p) = (self.d, self.p);
        let n = alpha.len();
        let gi = self.metric.g_inv().at(pt);
        if self.metric.is_diagonal_at(pt) {
            let b = form_basis(d, p);
            for (c, idx) in b.indices.iter().enumerate() {
                let mut f = alpha[c];
                for &i in idx {
                    f *= gi[i * d + i];
                }
                out[c] = f;
            }
        } else if 2 * p <= d {
            compound_matrices(gi, d, p, &mut self.scratch);
            let cm = &self.scratch[p];
            for r in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += cm[r * n + k] * alpha[k];
                }
                out[r] = s;
            }
        } else {
            // complementary minors: det(g⁻¹[I,K]) = (−1)^{ΣI+ΣK} det(g[Kᶜ,Iᶜ]) / det g
            let q = d - p;
            let g = self.metric.g().at(pt);
            compound_matrices(g, d, q, &mut self.scratch);
            let cm = &self.scratch[q];
            let nq = binomial(d, q);
            let sd = self.metric.sqrt_det().values()[pt];
            let inv_det = 1.0 / (sd * sd);
            for r in 0..n {
                let rc = self.complement[r];
                let mut s = 0.0;
                for k in 0..n {
                    s += self.parity[r] * self.parity[k] * cm[self.complement[k] * nq + rc] * alpha[k];
                }
                out[r] = s * inv_det;
            }
        }
    }
}

/// Index-raised components α^I of a form at every point (still stored on
/// increasing I); ⟨α, β⟩ = Σ_I α_I β^I.
pub fn raise_form(alpha: &FormField, metric: &MetricField) -> FormField {
    let p = alpha.degree();
    let n = alpha.ncomp();
    let mut r = Raiser::new(metric, p);
    let mut out = alpha.zeros_like();
    let dst = out.data_mut();
    for pt in 0..alpha.grid().npoints() {
        r.raise(pt, alpha.at(pt), &mut dst[pt * n..(pt + 1) * n]);
    }
    out
}

/// Hodge star, α ∧ *β = ⟨α, β⟩ √det g dx¹∧…∧dx^m.
pub fn hodge_star(alpha: &FormField, metric: &MetricField) -> Result<FormField, ExteriorError> {
    let grid = alpha.grid();
    if grid != metric.grid() {
        return Err(ExteriorError::Mismatch);
    }
    let d = grid.dim();
    let p = alpha.degree();
    let bin = form_basis(d, p);
    let bout = form_basis(d, d - p);
    let full = (1u32 << d) - 1;
    // output J gets sign(Jᶜ, J) √g α^{Jᶜ}
    let map: Vec<(usize, f64)> = bout
        .masks
        .iter()
        .map(|&mj| {
            let mi = full & !mj;
            (bin.position(mi), merge_sign(mi, mj))
        })
        .collect();
    let n = bin.len();
    let mut raiser = Raiser::new(metric, p);
    let mut raised = vec![0.0; n];
    let mut out = FormField::zeros(grid, d - p);
    let dst = out.data_mut();
    let sq = metric.sqrt_det().values();
    for pt in 0..grid.npoints() {
        raiser.raise(pt, alpha.at(pt), &mut raised);
        for (j, &(i, s)) in map.iter().enumerate() {
            dst[pt * n + j] = s * sq[pt] * raised[i];
        }
    }
    Ok(out)
}

/// Pointwise ⟨α, β⟩ with the Gram-determinant pairing.
pub fn inner_product(alpha: &FormField, beta: &FormField, metric: &MetricField) -> Result<ScalarField, ExteriorError> {
    if alpha.degree() != beta.degree() || alpha.grid() != beta.grid() {
        return Err(ExteriorError::Mismatch);
    }
    let raised = raise_form(beta, metric);
    let values = (0..alpha.grid().npoints())
        .map(|pt| alpha.at(pt).iter().zip(raised.at(pt)).map(|(a, b)| a * b).sum())
        .collect();
    Ok(ScalarField::new(alpha.grid().clone(), values)?)
}

/// L² pairing (α, β) = ∫⟨α, β⟩ dμ.
pub fn l2_inner(alpha: &FormField, beta: &FormField, metric: &MetricField) -> Result<f64, ExteriorError> {
    let ip = inner_product(alpha, beta, metric)?;
    let dens: f64 = ip.values().iter().zip(metric.sqrt_det().values()).map(|(a, b)| a * b).sum();
    Ok(dens * alpha.grid().cell_volume())
}

/// α ∧ β.
pub fn wedge(alpha: &FormField, beta: &FormField) -> Result<FormField, ExteriorError> {
    let grid = alpha.grid();
    if grid != beta.grid() {
        return Err(ExteriorError::Mismatch);
    }
    let d = grid.dim();
    let (p, q) = (alpha.degree(), beta.degree());
    if p + q > d {
        return Err(ExteriorError::DegreeOverflow { degree: p + q, dim: d });
    }
    let ba = form_basis(d, p);
    let bb = form_basis(d, q);
    let bo = form_basis(d, p + q);
    let mut table = Vec::new();
    for (i, &mi) in ba.masks.iter().enumerate() {
        for (k, &mk) in bb.masks.iter().enumerate() {
            if mi & mk == 0 {
                table.push((bo.position(mi | mk), i, k, merge_sign(mi, mk)));
            }
        }
    }
    let (na, nb, no) = (ba.len(), bb.len(), bo.len());
    let mut out = FormField::zeros(grid, p + q);
    let (sa, sb) = (alpha.data(), beta.data());
    let dst = out.data_mut();
    for pt in 0..grid.npoints() {
        for &(o, i, k, s) in &table {
            dst[pt * no + o] += s * sa[pt * na + i] * sb[pt * nb + k];
        }
    }
    Ok(out)
}

/// ω^n / n! as a top-degree form.
pub fn top_power(omega: &FormField) -> Result<FormField, ExteriorError> {
    if omega.degree() != 2 {
        return Err(ExteriorError::UnsupportedDegree(omega.degree()));
    }
    let n = omega.grid().dim() / 2;
    let mut acc = omega.clone();
    for k in 2..=n {
        acc = wedge(&acc, omega)?.scale(1.0 / k as f64);
    }
    Ok(acc)
}

/// d* = −*d* (even dimension), the production codifferential.
pub fn codiff(alpha: &FormField, metric: &MetricField) -> Result<FormField, ExteriorError> {
    let p = alpha.degree();
    if p == 0 {
        return Err(ExteriorError::UnsupportedDegree(0));
    }
    let s = hodge_star(alpha, metric)?;
    let ds = exterior_d(&s)?;
    Ok(hodge_star(&ds, metric)?.scale(-1.0))
}

/// Covariant derivative ∇_kα_I = ∂_kα_I − Σ_a Γ^l_{k i_a} α_{…l…} of a form,
/// returned as one form per direction k.
pub fn covariant_derivative_form(alpha: &FormField, gamma: &TensorField) -> Vec<FormField> {
    let grid = alpha.grid();
    let d = grid.dim();
    let p = alpha.degree();
    let b = form_basis(d, p);
    let n = b.len();
    let mut out: Vec<FormField> = (0..d).map(|k| crate::fields::partial(alpha, k).expect("axis in range")).collect();
    if p == 0 {
        return out;
    }
    // α_{i₁…l…i_p} with l at slot a: (target position, sign) for each (I, slot, l)
    let mut idx = vec![0usize; p];
    for pt in 0..grid.npoints() {
        let a_pt = alpha.at(pt);
        let g_pt = gamma.at(pt);
        for (k, o) in out.iter_mut().enumerate() {
            let dst = &mut o.data_mut()[pt * n..(pt + 1) * n];
            for (c, ii) in b.indices.iter().enumerate() {
                let mut s = 0.0;
                for slot in 0..p {
                    for l in 0..d {
                        let gam = g_pt[(l * d + k) * d + ii[slot]];
                        if gam == 0.0 {
                            continue;
                        }
                        idx.copy_from_slice(ii);
                        idx[slot] = l;
                        if let Some((sign, mask)) = sort_sign(&idx) {
                            s += gam * sign * a_pt[b.position(mask)];
                        }
                    }
                }
                dst[c] -= s;
            }
        }
    }
    out
}

/// Covariant codifferential (d*α)_{I'} = −g^{kl}∇_kα_{lI'}, the index form
/// kept as an independent check on [`codiff`].
pub fn codiff_covariant(alpha: &FormField, metric: &MetricField, gamma: &TensorField) -> Result<FormField, ExteriorError> {
    let p = alpha.degree();
    if p == 0 {
        return Err(ExteriorError::UnsupportedDegree(0));
    }
    let grid = alpha.grid();
    let d = grid.dim();
    let nabla = covariant_derivative_form(alpha, gamma);
    let bin = form_basis(d, p);
    let bout = form_basis(d, p - 1);
    let nin = bin.len();
    let nout = bout.len();
    let mut out = FormField::zeros(grid, p - 1);
    let dst = out.data_mut();
    for pt in 0..grid.npoints() {
        let gi = metric.g_inv().at(pt);
        for (c, &m) in bout.masks.iter().enumerate() {
            let mut s = 0.0;
            for l in 0..d {
                if m & (1 << l) != 0 {
                    continue;
                }
                // dx^l ∧ dx^{I'} = sign dx^{l∪I'}
                let sign = merge_sign(1 << l, m);
                let pos = bin.position(m | (1 << l));
                for k in 0..d {
                    s += gi[k * d + l] * sign * nabla[k].data()[pt * nin + pos];
                }
            }
            dst[pt * nout + c] = -s;
        }
    }
    Ok(out)
}

/// d*dω through −*d*d, the production path.
pub fn dstar_d(omega: &FormField, metric: &MetricField) -> Result<FormField, ExteriorError> {
    // top-degree forms are closed
    if omega.degree() == omega.grid().dim() {
        return Ok(omega.zeros_like());
    }
    codiff(&exterior_d(omega)?, metric)
}

/// Hodge Laplacian Δ = dd* + d*d.
pub fn hodge_laplacian(alpha: &FormField, metric: &MetricField) -> Result<FormField, ExteriorError> {
    let d = alpha.grid().dim();
    let p = alpha.degree();
    let mut out = alpha.zeros_like();
    if p > 0 {
        out = exterior_d(&codiff(alpha, metric)?)?;
    }
    if p < d {
        out = out.add(&codiff(&exterior_d(alpha)?, metric)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies {
    /// (dω, dω)
    pub h0: f64,
    /// (d*ω, d*ω)
    pub h1: f64,
    /// H₀ + H₁
    pub h: f64,
    /// ∫ ω^n / n!
    pub volume: f64,
}

/// Volume ∫ω^n/n! through the wedge power.
pub fn volume(omega: &FormField) -> Result<f64, ExteriorError> {
    let top = top_power(omega)?;
    Ok(top.data().iter().sum::<f64>() * omega.grid().cell_volume())
}

pub fn energies(pair: &HermitianPair) -> Result<Energies, ExteriorError> {
    let m = pair.metric();
    let h0 = if pair.omega().degree() == pair.grid().dim() {
        0.0
    } else {
        let dw = exterior_d(pair.omega())?;
        l2_inner(&dw, &dw, m)?
    };
    let ds = codiff(pair.omega(), m)?;
    let h1 = l2_inner(&ds, &ds, m)?;
    Ok(Energies { h0, h1, h: h0 + h1, volume: volume(pair.omega())? })
}

/// Interior product ι_Xα, X a (1,0) tensor.
pub fn interior(x: &TensorField, alpha: &FormField) -> Result<FormField, ExteriorError> {
    let p = alpha.degree();
    if p == 0 {
        return Err(ExteriorError::UnsupportedDegree(0));
    }
    let grid = alpha.grid();
    let d = grid.dim();
    let bin = form_basis(d, p);
    let bout = form_basis(d, p - 1);
    let (nin, nout) = (bin.len(), bout.len());
    let mut out = FormField::zeros(grid, p - 1);
    let dst = out.data_mut();
    for pt in 0..grid.npoints() {
        let xv = x.at(pt);
        for (c, &m) in bout.masks.iter().enumerate() {
            let mut s = 0.0;
            for k in 0..d {
                if m & (1 << k) == 0 {
                    s += xv[k] * merge_sign(1 << k, m) * alpha.data()[pt * nin + bin.position(m | (1 << k))];
                }
            }
            dst[pt * nout + c] = s;
        }
    }
    Ok(out)
}

/// L_Xα in coordinates: X^k∂_kα_I + Σ_a α_{i₁…k…i_p} ∂_{i_a}X^k.
pub fn lie_derivative_form(x: &TensorField, alpha: &FormField) -> FormField {
    let grid = alpha.grid();
    let d = grid.dim();
    let p = alpha.degree();
    let b = form_basis(d, p);
    let n = b.len();
    let da: Vec<FormField> = crate::fields::gradient(alpha);
    let dx: Vec<TensorField> = crate::fields::gradient(x);
    let mut out = alpha.zeros_like();
    let mut idx = vec![0usize; p];
    for pt in 0..grid.npoints() {
        let xv = x.at(pt);
        let a_pt = alpha.at(pt);
        for (c, ii) in b.indices.iter().enumerate() {
            let mut s = 0.0;
            for k in 0..d {
                s += xv[k] * da[k].data()[pt * n + c];
            }
            for slot in 0..p {
                let dxk = &dx[ii[slot]];
                for k in 0..d {
                    idx.copy_from_slice(ii);
                    idx[slot] = k;
                    if let Some((sign, mask)) = sort_sign(&idx) {
                        s += sign * a_pt[b.position(mask)] * dxk.data()[pt * d + k];
                    }
                }
            }
            out.data_mut()[pt * n + c] = s;
        }
    }
    out
}

/// Cartan's formula L_Xα = dι_Xα + ι_Xdα.
pub fn lie_derivative_cartan(x: &TensorField, alpha: &FormField) -> Result<FormField, ExteriorError> {
    let d = alpha.grid().dim();
    let p = alpha.degree();
    let mut out = alpha.zeros_like();
    if p > 0 {
        out = exterior_d(&interior(x, alpha)?)?;
    }
    if p < d {
        out = out.add(&interior(x, &exterior_d(alpha)?)?);
    }
    Ok(out)
}

/// (L_XJ)^j_i = X^k∂_kJ^j_i − J^k_i∂_kX^j + J^j_k∂_iX^k.
pub fn lie_derivative_j(x: &TensorField, j: &TensorField) -> TensorField {
    let grid = j.grid();
    let d = grid.dim();
    let dj: Vec<TensorField> = crate::fields::gradient(j);
    let dx: Vec<TensorField> = crate::fields::gradient(x);
    let mut out = j.zeros_like();
    for pt in 0..grid.npoints() {
        let xv = x.at(pt);
        let jv = j.at(pt);
        let dst = &mut out.data_mut()[pt * d * d..(pt + 1) * d * d];
        for jj in 0..d {
            for i in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += xv[k] * dj[k].data()[pt * d * d + jj * d + i];
                    s -= jv[k * d + i] * dx[k].data()[pt * d + jj];
                    s += jv[jj * d + k] * dx[i].data()[pt * d + k];
                }
                dst[jj * d + i] = s;
            }
        }
    }
    out
}
