//! Small dense pointwise matrix kernels on row-major slices of size d×d.

/// out = a · b.
pub fn mat_mul(a: &[f64], b: &[f64], d: usize, out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += a[i * d + k] * b[k * d + j];
            }
            out[i * d + j] = s;
        }
    }
}

/// Inverse and determinant of a symmetric positive definite matrix via
/// Cholesky. Returns `None` when a pivot is not strictly positive.
pub fn spd_inverse(a: &[f64], d: usize, inv: &mut [f64]) -> Option<f64> {
    let mut l = [0.0; 36];
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= l[j * d + k] * l[j * d + k];
        }
        if !(s > 0.0) {
            return None;
        }
        let ljj = s.sqrt();
        l[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    let mut det = 1.0;
    for j in 0..d {
        det *= l[j * d + j] * l[j * d + j];
    }
    // invert L (lower triangular), then A⁻¹ = L⁻ᵀ L⁻¹
    let mut li = [0.0; 36];
    for j in 0..d {
        li[j * d + j] = 1.0 / l[j * d + j];
        for i in j + 1..d {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i * d + k] * li[k * d + j];
            }
            li[i * d + j] = s / l[i * d + i];
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..d {
                s += li[k * d + i] * li[k * d + j];
            }
            inv[i * d + j] = s;
            inv[j * d + i] = s;
        }
    }
    Some(det)
}

/// General inverse by Gauss-Jordan with partial pivoting; returns the
/// determinant, or `None` for a singular matrix.
pub fn inverse(a: &[f64], d: usize, inv: &mut [f64]) -> Option<f64> {
    let mut m = [0.0; 36];
    m[..d * d].copy_from_slice(&a[..d * d]);
    for i in 0..d {
        for j in 0..d {
            inv[i * d + j] = if i == j { 1.0 } else { 0.0 };
        }
    }
    let mut det = 1.0;
    for c in 0..d {
        let piv = (c..d).max_by(|&x, &y| m[x * d + c].abs().total_cmp(&m[y * d + c].abs())).unwrap_or(c);
        let pv = m[piv * d + c];
        if pv == 0.0 || !pv.is_finite() {
            return None;
        }
        if piv != c {
            for k in 0..d {
                m.swap(piv * d + k, c * d + k);
                inv.swap(piv * d + k, c * d + k);
            }
            det = -det;
        }
        det *= pv;
        let r = 1.0 / pv;
        for k in 0..d {
            m[c * d + k] *= r;
            inv[c * d + k] *= r;
        }
        for i in 0..d {
            if i != c {
                let f = m[i * d + c];
                if f != 0.0 {
                    for k in 0..d {
                        m[i * d + k] -= f * m[c * d + k];
                        inv[i * d + k] -= f * inv[c * d + k];
                    }
                }
            }
        }
    }
    Some(det)
}

pub fn determinant(a: &[f64], d: usize) -> f64 {
    let mut inv = [0.0; 36];
    inverse(a, d, &mut inv).unwrap_or(0.0)
}

fn pf4_idx(a: &[f64], d: usize, r: [usize; 4]) -> f64 {
    let e = |i: usize, j: usize| a[r[i] * d + r[j]];
    e(0, 1) * e(2, 3) - e(0, 2) * e(1, 3) + e(0, 3) * e(1, 2)
}

/// Pfaffian of an antisymmetric d×d matrix, d ∈ {2, 4, 6}, by the closed
/// 1-, 3- and 15-term formulas.
pub fn pfaffian(a: &[f64], d: usize) -> f64 {
    match d {
        2 => a[1],
        4 => pf4_idx(a, 4, [0, 1, 2, 3]),
        6 => {
            // expansion along row 0: Σ_j (−1)^{j+1} a_0j Pf(A without rows/cols 0, j)
            let mut s = 0.0;
            for j in 1..6 {
                let mut rest = [0usize; 4];
                let mut n = 0;
                for k in 1..6 {
                    if k != j {
                        rest[n] = k;
                        n += 1;
                    }
                }
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                s += sign * a[j] * pf4_idx(a, 6, rest);
            }
            s
        }
        _ => panic!("pfaffian supports d = 2, 4, 6"),
    }
}

/// Largest |entry| of a d×d matrix.
pub fn max_abs(a: &[f64], d: usize) -> f64 {
    a[..d * d].iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Inverse square root of a matrix near a positive multiple of the identity
/// by the coupled Newton (Newton–Schulz) iteration. The input is normalized
/// by its mean diagonal first. Returns the iteration count, or `None` if the
/// iteration does not settle within `max_iter` steps.
pub fn inverse_sqrt_newton(s: &[f64], d: usize, out: &mut [f64], max_iter: usize) -> Option<usize> {
    let dd = d * d;
    let c = (0..d).map(|i| s[i * d + i]).sum::<f64>() / d as f64;
    if !(c > 0.0) || !c.is_finite() {
        return None;
    }
    let mut y = [0.0; 36];
    let mut z = [0.0; 36];
    let mut t = [0.0; 36];
    let mut tmp = [0.0; 36];
    for k in 0..dd {
        y[k] = s[k] / c;
    }
    for i in 0..d {
        z[i * d + i] = 1.0;
    }
    for it in 0..=max_iter {
        // t = Z·Y, measure distance from the identity
        mat_mul(&z, &y, d, &mut t);
        let mut dev = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let e = t[i * d + j] - if i == j { 1.0 } else { 0.0 };
                dev = dev.max(e.abs());
            }
        }
        if !dev.is_finite() || dev > 1e6 {
            return None;
        }
        if dev <= 4.0 * f64::EPSILON {
            let r = 1.0 / c.sqrt();
            for k in 0..dd {
                out[k] = z[k] * r;
            }
            return Some(it);
        }
        if it == max_iter {
            break;
        }
        // t ← ½(3I − Z·Y)
        for i in 0..d {
            for j in 0..d {
                t[i * d + j] = 0.5 * ((if i == j { 3.0 } else { 0.0 }) - t[i * d + j]);
            }
        }
        mat_mul(&y, &t, d, &mut tmp);
        y[..dd].copy_from_slice(&tmp[..dd]);
        mat_mul(&t, &z, d, &mut tmp);
        z[..dd].copy_from_slice(&tmp[..dd]);
    }
    None
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations:
/// eigenvalues ascending, eigenvectors in the matching columns. Only the
/// symmetric part of `a` is used.
///
/// nalgebra's `symmetric_eigen` can return a decomposition that does not
/// reconstruct its input when eigenvalues are clustered; Jacobi is slower
/// but accurate to round-off on the small matrices used here.
pub fn sym_eigen(a: &nalgebra::DMatrix<f64>) -> (nalgebra::DVector<f64>, nalgebra::DMatrix<f64>) {
    let n = a.nrows();
    let mut m = (a + a.transpose()) * 0.5;
    let mut v = nalgebra::DMatrix::<f64>::identity(n, n);
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(m[(p, q)].abs());
            }
        }
        if off <= f64::EPSILON * 1e-2 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = nalgebra::DVector::from_iterator(n, order.iter().map(|&i| m[(i, i)]));
    let vectors = nalgebra::DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_inverse_matches_general() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let mut i1 = [0.0; 9];
        let mut i2 = [0.0; 9];
        let d1 = spd_inverse(&a, 3, &mut i1).unwrap();
        let d2 = inverse(&a, 3, &mut i2).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
        for k in 0..9 {
            assert!((i1[k] - i2[k]).abs() < 1e-14);
        }
        let neg = [1.0, 2.0, 2.0, 1.0];
        assert!(spd_inverse(&neg, 2, &mut i1).is_none());
    }

    #[test]
    fn pfaffian_squares_to_determinant() {
        let mut a = [0.0; 36];
        let vals = [0.3, -1.2, 0.7, 2.0, 0.1, 0.9, -0.4, 1.5, 0.25, -0.8, 1.1, 0.6, -1.3, 0.45, 0.35];
        let mut n = 0;
        for i in 0..6 {
            for j in i + 1..6 {
                a[i * 6 + j] = vals[n];
                a[j * 6 + i] = -vals[n];
                n += 1;
            }
        }
        let pf = pfaffian(&a, 6);
        assert!((pf * pf - determinant(&a, 6)).abs() < 1e-12);
        // standard form has Pf = 1
        let mut s = [0.0; 36];
        for k in 0..3 {
            s[(2 * k) * 6 + 2 * k + 1] = 1.0;
            s[(2 * k + 1) * 6 + 2 * k] = -1.0;
        }
        assert_eq!(pfaffian(&s, 6), 1.0);
    }

    #[test]
    fn newton_inverse_sqrt() {
        let s = [4.0, 0.0, 0.0, 4.0];
        let mut out = [0.0; 4];
        inverse_sqrt_newton(&s, 2, &mut out, 50).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-15 && out[1] == 0.0);
        let s = [2.0, 0.3, 0.3, 1.5];
        inverse_sqrt_newton(&s, 2, &mut out, 50).unwrap();
        // out·s·out = I
        let mut t = [0.0; 4];
        let mut u = [0.0; 4];
        mat_mul(&out, &s, 2, &mut t);
        mat_mul(&t, &out, 2, &mut u);
        assert!((u[0] - 1.0).abs() < 1e-14 && u[1].abs() < 1e-14 && (u[3] - 1.0).abs() < 1e-14);
        let bad = [1.0, 0.0, 0.0, -1.0];
        assert!(inverse_sqrt_newton(&bad, 2, &mut out, 50).is_none());
    }

    #[test]
    fn sym_eigen_reconstructs_clustered_spectra() {
        use nalgebra::DMatrix;
        // ω = ω₀ + small antisymmetric perturbation; −ω² has doubled eigenvalues
        let mut w = DMatrix::<f64>::zeros(6, 6);
        for i in 0..6 {
            for j in 0..i {
                let v = 0.1 * ((i * 5 + j * 3) as f64).sin();
                w[(i, j)] = v;
                w[(j, i)] = -v;
            }
        }
        for k in 0..3 {
            w[(2 * k, 2 * k + 1)] += 1.0;
            w[(2 * k + 1, 2 * k)] -= 1.0;
        }
        let m = -(&w * &w);
        let (vals, vecs) = sym_eigen(&m);
        let back = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((back - &m).abs().max() < 1e-14);
        assert!((vecs.transpose() * &vecs - DMatrix::<f64>::identity(6, 6)).abs().max() < 1e-14);
        assert!(vals.as_slice().windows(2).all(|p| p[0] <= p[1]));
        for k in 0..3 {
            assert!((vals[2 * k] - vals[2 * k + 1]).abs() < 1e-13);
        }
    }
}
