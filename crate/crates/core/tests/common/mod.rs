//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use hermflow::exact::{self, WarpedKind};
use hermflow::exterior;
use hermflow::fields::{FormField, GridField, GridSpec, ScalarField, TensorField};
use hermflow::hermitian::{standard_j_matrix, standard_omega, AlmostComplexField, HermitianPair};
use nalgebra::DMatrix;
use std::f64::consts::PI;

pub fn torus(sizes: &[usize]) -> GridSpec {
    GridSpec::new(sizes.to_vec(), vec![2.0 * PI; sizes.len()]).unwrap()
}

pub fn max_diff<F: GridField>(a: &F, b: &F) -> f64 {
    a.data().iter().zip(b.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// ω = dx∧dy + e^{0.1cos x}dz∧dw with J₀.
pub fn warped_t4(grid: &GridSpec) -> HermitianPair {
    let b0 = ScalarField::from_fn(grid, |x| (0.1 * x[0].cos()).exp());
    exact::warped_pair(WarpedKind::T4B, &b0).unwrap()
}

fn write_matrix(m: &DMatrix<f64>, out: &mut [f64]) {
    let d = m.nrows();
    for r in 0..d {
        for c in 0..d {
            out[r * d + c] = m[(r, c)];
        }
    }
}

/// Warped T⁴ form with J = A J₀ A⁻¹, A = exp(ε sin(x+y)·½J₀S) and
/// S = diag(1, −1, 0, 0). A preserves dx∧dy and fixes the (z, w) plane, so
/// the pair stays compatible while θ = −d*dω is no longer J-invariant.
pub fn twisted_warped_t4(grid: &GridSpec, eps: f64) -> HermitianPair {
    let omega = warped_t4(grid).omega().clone();
    let j0 = DMatrix::from_row_slice(4, 4, &standard_j_matrix(4));
    let mut s = DMatrix::zeros(4, 4);
    s[(0, 0)] = 1.0;
    s[(1, 1)] = -1.0;
    let gen = &j0 * &s * 0.5;
    let j = TensorField::from_fn(grid, 1, 1, |x, out| {
        let a = (&gen * (eps * (x[0] + x[1]).sin())).exp();
        let ainv = a.clone().try_inverse().unwrap();
        write_matrix(&(&a * &j0 * ainv), out);
    });
    HermitianPair::new(omega, AlmostComplexField::new(j).unwrap()).unwrap()
}

/// The ω-compatible J = W⁻¹(−W²)^{1/2} at one point; g = WJ = (−W²)^{1/2}.
pub fn polar_j(w: &DMatrix<f64>) -> DMatrix<f64> {
    let minus_w2 = -(w * w);
    let (vals, vecs) = hermflow::linalg::sym_eigen(&minus_w2);
    let sqrt = &vecs * DMatrix::from_diagonal(&vals.map(|l| l.max(0.0).sqrt())) * vecs.transpose();
    w.clone().try_inverse().unwrap() * sqrt
}

/// Compatible pair with J built pointwise from ω by [`polar_j`].
pub fn polar_pair(omega: FormField) -> HermitianPair {
    let grid = omega.grid().clone();
    let d = grid.dim();
    let mut w = vec![0.0; d * d];
    let mut data = vec![0.0; grid.npoints() * d * d];
    for p in 0..grid.npoints() {
        omega.matrix_at(p, &mut w);
        let m = polar_j(&DMatrix::from_row_slice(d, d, &w));
        write_matrix(&m, &mut data[p * d * d..(p + 1) * d * d]);
    }
    let j = TensorField::new(grid, 1, 1, data).unwrap();
    HermitianPair::new(omega, AlmostComplexField::new(j).unwrap()).unwrap()
}

/// ω = ω₀ + ε·dσ with σ = sin x cos y dz + cos(x + y) dw, taken through the
/// discrete d so that the discrete dω vanishes to round-off. Non-flat metric.
pub fn closed_compatible_pair(grid: &GridSpec, eps: f64) -> HermitianPair {
    let sigma = FormField::from_fn(grid, 1, |x, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[2] = x[0].sin() * x[1].cos();
        out[3] = (x[0] + x[1]).cos();
    });
    let exact_part = exterior::exterior_d(&sigma).unwrap().scale(eps);
    polar_pair(standard_omega(grid).add(&exact_part))
}

/// Constant pair ω = Aᵀω₀A, J = A⁻¹J₀A for a fixed generic A.
pub fn constant_generic_pair(grid: &GridSpec) -> HermitianPair {
    let d = grid.dim();
    let mut a = DMatrix::<f64>::identity(d, d);
    for r in 0..d {
        for c in 0..d {
            a[(r, c)] += 0.3 * (((r * 7 + c * 3) % 5) as f64 / 4.0 - 0.5);
        }
    }
    let j0 = DMatrix::from_row_slice(d, d, &standard_j_matrix(d));
    // ω₀ as a matrix is −J₀
    let w0 = -&j0;
    let w = a.transpose() * w0 * &a;
    let j = a.clone().try_inverse().unwrap() * j0 * &a;
    let mut wv = vec![0.0; d * d];
    let mut jv = vec![0.0; d * d];
    write_matrix(&w, &mut wv);
    write_matrix(&j, &mut jv);
    let omega = FormField::two_form_from_matrix(grid, |_, out| out.copy_from_slice(&wv));
    let jt = TensorField::constant(grid, 1, 1, &jv);
    HermitianPair::new(omega, AlmostComplexField::new(jt).unwrap()).unwrap()
}

/// Random trigonometric polynomial data, `ncomp` values per point, built
/// from modes m ∈ {−1, 0, 1}^d with coefficients in (−amp, amp).
pub fn random_smooth(grid: &GridSpec, ncomp: usize, amp: f64, rng: &mut impl rand::Rng) -> Vec<f64> {
    let d = grid.dim();
    let terms: Vec<(usize, Vec<f64>, f64, f64)> = (0..3 * ncomp)
        .map(|i| {
            let k: Vec<f64> = (0..d).map(|_| rng.gen_range(-1i32..=1) as f64).collect();
            (i % ncomp, k, rng.gen_range(-amp..amp), rng.gen_range(-amp..amp))
        })
        .collect();
    let lengths = grid.lengths().to_vec();
    let mut data = vec![0.0; grid.npoints() * ncomp];
    for p in 0..grid.npoints() {
        let x = grid.coords(p);
        for (c, k, a, b) in &terms {
            let phase: f64 = (0..d).map(|i| 2.0 * PI * k[i] * x[i] / lengths[i]).sum();
            data[p * ncomp + c] += a * phase.cos() + b * phase.sin();
        }
    }
    data
}

pub fn random_form(grid: &GridSpec, degree: usize, amp: f64, rng: &mut impl rand::Rng) -> FormField {
    let n = hermflow::fields::form_basis(grid.dim(), degree).len();
    FormField::new(grid.clone(), degree, random_smooth(grid, n, amp, rng)).unwrap()
}

/// ω₀ plus a small random smooth 2-form, with J₀: tamed, generally not compatible.
pub fn random_tamed_pair(grid: &GridSpec, amp: f64, rng: &mut impl rand::Rng) -> HermitianPair {
    let omega = standard_omega(grid).add(&random_form(grid, 2, amp, rng));
    HermitianPair::new(omega, AlmostComplexField::standard(grid)).unwrap()
}

/// Polar pair of ω₀ plus a small random smooth 2-form: compatible, non-flat.
pub fn random_compatible_pair(grid: &GridSpec, amp: f64, rng: &mut impl rand::Rng) -> HermitianPair {
    polar_pair(standard_omega(grid).add(&random_form(grid, 2, amp, rng)))
}

/// Smooth metric I + S(x) with S a random symmetric perturbation.
pub fn random_metric(grid: &GridSpec, amp: f64, rng: &mut impl rand::Rng) -> hermflow::hermitian::MetricField {
    let d = grid.dim();
    let raw = random_smooth(grid, d * d, amp, rng);
    let mut data = vec![0.0; grid.npoints() * d * d];
    for p in 0..grid.npoints() {
        for a in 0..d {
            for b in 0..d {
                let s = 0.5 * (raw[p * d * d + a * d + b] + raw[p * d * d + b * d + a]);
                data[p * d * d + a * d + b] = s + if a == b { 1.0 } else { 0.0 };
            }
        }
    }
    hermflow::hermitian::MetricField::new(TensorField::new(grid.clone(), 0, 2, data).unwrap()).unwrap()
}

pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

/// Constant metric AᵀA with A = I + U(−0.3, 0.3).
pub fn random_constant_metric(grid: &GridSpec, rng: &mut impl rand::Rng) -> hermflow::hermitian::MetricField {
    let d = grid.dim();
    let a = DMatrix::<f64>::identity(d, d) + DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.3..0.3));
    let g = a.transpose() * a;
    let mut gv = vec![0.0; d * d];
    write_matrix(&g, &mut gv);
    hermflow::hermitian::MetricField::new(TensorField::constant(grid, 0, 2, &gv)).unwrap()
}
