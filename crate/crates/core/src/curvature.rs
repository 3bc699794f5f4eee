//! Levi-Civita connection, Riemann and Ricci tensors by finite differences,
//! the Ricci-derived B tensor, and the first-variation formulas for g, Γ
//! and Rm.
//!
//! Index conventions: Γ^k_ij at `(k·d + i)·d + j`;
//! R_ijkl = g(R(∂_i, ∂_j)∂_k, ∂_l) with
//! R(∂_i, ∂_j)∂_k = (∂_iΓ^p_jk − ∂_jΓ^p_ik + Γ^q_jkΓ^p_iq − Γ^q_ikΓ^p_jq)∂_p;
//! Ric_jk = g^{il} R_ijkl.

use thiserror::Error;

use crate::fields::{gradient, FormField, GridField, TensorField};
use crate::hermitian::{HermitianPair, MetricField};

#[derive(Debug, Error)]
pub enum CurvatureError {
    #[error("variation h is not symmetric (max asymmetry {0:e})")]
    AsymmetricVariation(f64),
    #[error("expected a tensor of valence {expected:?}, got {got:?}")]
    Valence { expected: (usize, usize), got: (usize, usize) },
}

/// Γ^k_ij = ½ g^{kl}(∂_i g_lj + ∂_j g_li − ∂_l g_ij).
pub fn christoffel(metric: &MetricField) -> TensorField {
    let grid = metric.grid();
    let d = grid.dim();
    let dg = gradient(metric.g());
    let mut out = TensorField::zeros(grid, 1, 2);
    let d2 = d * d;
    let mut lower = vec![0.0; d * d2];
    for p in 0..grid.npoints() {
        // Γ_lij = ½(∂_i g_lj + ∂_j g_li − ∂_l g_ij)
        for l in 0..d {
            for i in 0..d {
                for j in i..d {
                    let v = 0.5
                        * (dg[i].data()[p * d2 + l * d + j] + dg[j].data()[p * d2 + l * d + i]
                            - dg[l].data()[p * d2 + i * d + j]);
                    lower[(l * d + i) * d + j] = v;
                    lower[(l * d + j) * d + i] = v;
                }
            }
        }
        let gi = metric.g_inv().at(p);
        let dst = &mut out.data_mut()[p * d * d2..(p + 1) * d * d2];
        for k in 0..d {
            for ij in 0..d2 {
                let mut s = 0.0;
                for l in 0..d {
                    s += gi[k * d + l] * lower[l * d2 + ij];
                }
                dst[k * d2 + ij] = s;
            }
        }
    }
    out
}

/// ∇T for a (0,r) tensor, new index first:
/// (∇T)_{k i₁…i_r} = ∂_k T_{i₁…i_r} − Σ_a Γ^l_{k i_a} T_{…l…}.
pub fn covariant_derivative(t: &TensorField, gamma: &TensorField) -> Result<TensorField, CurvatureError> {
    let (up, r) = t.valence();
    if up != 0 {
        return Err(CurvatureError::Valence { expected: (0, r), got: (up, r) });
    }
    let grid = t.grid();
    let d = grid.dim();
    let nc = d.pow(r as u32);
    let dt = gradient(t);
    let mut out = TensorField::zeros(grid, 0, r + 1);
    let mut digits = vec![0usize; r];
    let pow: Vec<usize> = (0..r).map(|a| d.pow((r - 1 - a) as u32)).collect();
    for p in 0..grid.npoints() {
        let tp = t.at(p);
        let gp = gamma.at(p);
        let dst = &mut out.data_mut()[p * nc * d..(p + 1) * nc * d];
        for k in 0..d {
            for c in 0..nc {
                let mut rest = c;
                for a in 0..r {
                    digits[a] = rest / pow[a];
                    rest %= pow[a];
                }
                let mut s = dt[k].data()[p * nc + c];
                for a in 0..r {
                    let ia = digits[a];
                    let base = c - ia * pow[a];
                    for l in 0..d {
                        s -= gp[(l * d + k) * d + ia] * tp[base + l * pow[a]];
                    }
                }
                dst[k * nc + c] = s;
            }
        }
    }
    Ok(out)
}

/// Full Riemann tensor R_ijkl from Γ and its centered differences.
pub fn riemann_with(metric: &MetricField, gamma: &TensorField) -> TensorField {
    let grid = metric.grid();
    let d = grid.dim();
    let d2 = d * d;
    let d3 = d2 * d;
    let dgam = gradient(gamma);
    let mut out = TensorField::zeros(grid, 0, 4);
    let mut up = vec![0.0; d * d3];
    for p in 0..grid.npoints() {
        let gm = gamma.at(p);
        let g = metric.g().at(p);
        // R^p_ijk stored at ((i·d + j)·d + k)·d + p
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for q in 0..d {
                        let mut s = dgam[i].data()[p * d3 + (q * d + j) * d + k] - dgam[j].data()[p * d3 + (q * d + i) * d + k];
                        for m in 0..d {
                            s += gm[(m * d + j) * d + k] * gm[(q * d + i) * d + m] - gm[(m * d + i) * d + k] * gm[(q * d + j) * d + m];
                        }
                        up[((i * d + j) * d + k) * d + q] = s;
                    }
                }
            }
        }
        let dst = &mut out.data_mut()[p * d2 * d2..(p + 1) * d2 * d2];
        for ijk in 0..d3 {
            for l in 0..d {
                let mut s = 0.0;
                for q in 0..d {
                    s += up[ijk * d + q] * g[q * d + l];
                }
                dst[ijk * d + l] = s;
            }
        }
    }
    out
}

pub fn riemann(metric: &MetricField) -> TensorField {
    riemann_with(metric, &christoffel(metric))
}

/// Ric_jk = g^{il} R_ijkl.
pub fn ricci_from_riemann(metric: &MetricField, rm: &TensorField) -> TensorField {
    let grid = metric.grid();
    let d = grid.dim();
    let d2 = d * d;
    let mut out = TensorField::zeros(grid, 0, 2);
    for p in 0..grid.npoints() {
        let r = rm.at(p);
        let gi = metric.g_inv().at(p);
        let dst = &mut out.data_mut()[p * d2..(p + 1) * d2];
        for j in 0..d {
            for k in 0..d {
                let mut s = 0.0;
                for i in 0..d {
                    for l in 0..d {
                        s += gi[i * d + l] * r[((i * d + j) * d + k) * d + l];
                    }
                }
                dst[j * d + k] = s;
            }
        }
    }
    out
}

pub fn ricci(metric: &MetricField) -> TensorField {
    ricci_from_riemann(metric, &riemann(metric))
}

/// Pointwise max of |Rm|_g = (R_ijkl R^ijkl)^{1/2}.
pub fn max_curvature_norm(metric: &MetricField, rm: &TensorField) -> f64 {
    let grid = metric.grid();
    let d = grid.dim();
    let mut worst = 0.0f64;
    let mut raised = vec![0.0; d.pow(4)];
    for p in 0..grid.npoints() {
        raise_all(rm.at(p), metric.g_inv().at(p), d, 4, &mut raised);
        let s: f64 = rm.at(p).iter().zip(&raised).map(|(a, b)| a * b).sum();
        worst = worst.max(s.max(0.0).sqrt());
    }
    worst
}

/// Raise every index of a covariant r-tensor at one point.
pub(crate) fn raise_all(t: &[f64], gi: &[f64], d: usize, r: usize, out: &mut [f64]) {
    let n = d.pow(r as u32);
    out[..n].copy_from_slice(&t[..n]);
    let mut tmp = vec![0.0; n];
    for a in 0..r {
        let stride = d.pow((r - 1 - a) as u32);
        for c in 0..n {
            let ia = (c / stride) % d;
            let base = c - ia * stride;
            let mut s = 0.0;
            for l in 0..d {
                s += gi[ia * d + l] * out[base + l * stride];
            }
            tmp[c] = s;
        }
        out[..n].copy_from_slice(&tmp);
    }
}

/// B^k_j = g^{ka}(J^b_a R_bj + J^b_j R_ba), i.e. g(Bx, y) = Ric(Jx, y) + Ric(x, Jy).
pub fn b_tensor(pair: &HermitianPair, ric: &TensorField) -> TensorField {
    b_tensor_raw(pair.j().tensor(), pair.metric(), ric)
}

pub(crate) fn b_tensor_raw(jt: &TensorField, metric: &MetricField, ric: &TensorField) -> TensorField {
    let grid = metric.grid();
    let d = grid.dim();
    let d2 = d * d;
    let mut out = TensorField::zeros(grid, 1, 1);
    let mut low = vec![0.0; d2];
    for p in 0..grid.npoints() {
        let j = jt.at(p);
        let r = ric.at(p);
        let gi = metric.g_inv().at(p);
        // low_aj = J^b_a R_bj + J^b_j R_ba
        for a in 0..d {
            for jj in 0..d {
                let mut s = 0.0;
                for b in 0..d {
                    s += j[b * d + a] * r[b * d + jj] + j[b * d + jj] * r[b * d + a];
                }
                low[a * d + jj] = s;
            }
        }
        let dst = &mut out.data_mut()[p * d2..(p + 1) * d2];
        for k in 0..d {
            for jj in 0..d {
                let mut s = 0.0;
                for a in 0..d {
                    s += gi[k * d + a] * low[a * d + jj];
                }
                dst[k * d + jj] = s;
            }
        }
    }
    out
}

/// h_ij = ½(θ_ik J^k_j + θ_jk J^k_i), the metric velocity induced by (θ, J).
pub fn predicted_metric_variation(theta: &FormField, j: &TensorField) -> TensorField {
    let grid = theta.grid();
    let d = grid.dim();
    let mut th = vec![0.0; d * d];
    let mut out = TensorField::zeros(grid, 0, 2);
    for p in 0..grid.npoints() {
        theta.matrix_at(p, &mut th);
        crate::hermitian::metric_matrix(&th, j.at(p), d, &mut out.data_mut()[p * d * d..(p + 1) * d * d]);
    }
    out
}

fn check_symmetric(h: &TensorField) -> Result<(), CurvatureError> {
    if h.valence() != (0, 2) {
        return Err(CurvatureError::Valence { expected: (0, 2), got: h.valence() });
    }
    let d = h.grid().dim();
    let mut worst = 0.0f64;
    for p in 0..h.grid().npoints() {
        let m = h.at(p);
        for i in 0..d {
            for j in 0..i {
                worst = worst.max((m[i * d + j] - m[j * d + i]).abs());
            }
        }
    }
    let scale = h.max_abs().max(1.0);
    if worst > 1e-12 * scale {
        return Err(CurvatureError::AsymmetricVariation(worst));
    }
    Ok(())
}

/// ∂_tΓ^k_ij = ½ g^{kl}(∇_i h_lj + ∇_j h_li − ∇_l h_ij).
pub fn predicted_connection_variation(
    metric: &MetricField,
    gamma: &TensorField,
    h: &TensorField,
) -> Result<TensorField, CurvatureError> {
    check_symmetric(h)?;
    let grid = metric.grid();
    let d = grid.dim();
    let d2 = d * d;
    let nh = covariant_derivative(h, gamma)?;
    let mut out = TensorField::zeros(grid, 1, 2);
    let mut lower = vec![0.0; d * d2];
    for p in 0..grid.npoints() {
        let n = nh.at(p);
        for l in 0..d {
            for i in 0..d {
                for j in 0..d {
                    lower[(l * d + i) * d + j] =
                        0.5 * (n[(i * d + l) * d + j] + n[(j * d + l) * d + i] - n[(l * d + i) * d + j]);
                }
            }
        }
        let gi = metric.g_inv().at(p);
        let dst = &mut out.data_mut()[p * d * d2..(p + 1) * d * d2];
        for k in 0..d {
            for ij in 0..d2 {
                let mut s = 0.0;
                for l in 0..d {
                    s += gi[k * d + l] * lower[l * d2 + ij];
                }
                dst[k * d2 + ij] = s;
            }
        }
    }
    Ok(out)
}

/// Second-derivative part of ∂_tR_ijkl:
/// ½(∇_i∇_k h_jl + ∇_j∇_l h_ik − ∇_j∇_k h_il − ∇_i∇_l h_jk).
pub fn curvature_variation_leading(gamma: &TensorField, h: &TensorField) -> Result<TensorField, CurvatureError> {
    check_symmetric(h)?;
    let grid = h.grid();
    let d = grid.dim();
    let nnh = covariant_derivative(&covariant_derivative(h, gamma)?, gamma)?;
    let d4 = d.pow(4);
    let mut out = TensorField::zeros(grid, 0, 4);
    let at = |v: &[f64], a: usize, b: usize, c: usize, e: usize| v[((a * d + b) * d + c) * d + e];
    for p in 0..grid.npoints() {
        let v = nnh.at(p);
        let dst = &mut out.data_mut()[p * d4..(p + 1) * d4];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        dst[((i * d + j) * d + k) * d + l] = 0.5
                            * (at(v, i, k, j, l) + at(v, j, l, i, k) - at(v, j, k, i, l) - at(v, i, l, j, k));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact ∂_tR_ijkl for ∂_t g = h: the leading second-derivative part plus
/// the zeroth-order terms ½(R^m_ijk h_ml − R^m_ijl h_mk).
pub fn predicted_curvature_variation(
    metric: &MetricField,
    gamma: &TensorField,
    rm: &TensorField,
    h: &TensorField,
) -> Result<TensorField, CurvatureError> {
    let mut out = curvature_variation_leading(gamma, h)?;
    let grid = metric.grid();
    let d = grid.dim();
    let d4 = d.pow(4);
    let mut rup = vec![0.0; d4];
    for p in 0..grid.npoints() {
        let r = rm.at(p);
        let gi = metric.g_inv().at(p);
        let hp = h.at(p);
        // R^m_ijk = g^{ml} R_ijkl
        for ijk in 0..d * d * d {
            for m in 0..d {
                let mut s = 0.0;
                for l in 0..d {
                    s += gi[m * d + l] * r[ijk * d + l];
                }
                rup[ijk * d + m] = s;
            }
        }
        let dst = &mut out.data_mut()[p * d4..(p + 1) * d4];
        for ij in 0..d * d {
            for k in 0..d {
                for l in 0..d {
                    let mut s = 0.0;
                    for m in 0..d {
                        s += rup[(ij * d + k) * d + m] * hp[m * d + l] - rup[(ij * d + l) * d + m] * hp[m * d + k];
                    }
                    dst[(ij * d + k) * d + l] += 0.5 * s;
                }
            }
        }
    }
    Ok(out)
}

/// d*dω through the Levi-Civita connection:
/// −(d*dω)_ij = g^{pq}(∇_p∇_qω_ij − ∇_p∇_iω_qj + ∇_p∇_jω_qi).
/// Independent of the Hodge-star route in [`crate::exterior::dstar_d`].
pub fn dstar_d_covariant(omega: &FormField, metric: &MetricField, gamma: &TensorField) -> Result<FormField, CurvatureError> {
    if omega.degree() != 2 {
        return Err(CurvatureError::Valence { expected: (0, 2), got: (0, omega.degree()) });
    }
    let grid = omega.grid();
    let d = grid.dim();
    let nn = covariant_derivative(&covariant_derivative(&omega.to_tensor(), gamma)?, gamma)?;
    let basis = crate::fields::form_basis(d, 2);
    let nb = basis.len();
    let mut out = FormField::zeros(grid, 2);
    let at = |v: &[f64], a: usize, b: usize, c: usize, e: usize| v[((a * d + b) * d + c) * d + e];
    for pt in 0..grid.npoints() {
        let v = nn.at(pt);
        let gi = metric.g_inv().at(pt);
        for (c, ij) in basis.indices.iter().enumerate() {
            let (i, j) = (ij[0], ij[1]);
            let mut s = 0.0;
            for p in 0..d {
                for q in 0..d {
                    let w = gi[p * d + q];
                    if w != 0.0 {
                        s += w * (at(v, p, q, i, j) - at(v, p, i, q, j) + at(v, p, j, q, i));
                    }
                }
            }
            out.data_mut()[pt * nb + c] = -s;
        }
    }
    Ok(out)
}
