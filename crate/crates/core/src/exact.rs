//! Closed-form and spectral reference solutions.
//!
//! The heat oracle is exact in time: it multiplies Fourier modes by
//! e^{−|k|²t}, with no time stepping, so it is independent of the flow
//! integrator it checks.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::exterior::{self, ExteriorError};
use crate::fields::{form_basis, FieldError, FormField, GridField, GridSpec, ScalarField};
use crate::hermitian::{standard_omega_components, AlmostComplexField, HermitianError, HermitianPair, MetricField};

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("coefficient must be positive, minimum is {min}")]
    NonPositiveData { min: f64 },
    #[error("{kind} needs a grid of dimension {expected}, got {got}")]
    Dimension { kind: &'static str, expected: usize, got: usize },
    #[error("no lattice mode with |k|² = {lambda} fits the grid")]
    NotFound { lambda: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Hermitian(#[from] HermitianError),
    #[error(transparent)]
    Exterior(#[from] ExteriorError),
}

/// Exact heat evolution ∂_t u = Σ_a ∂_a²u on the periodic grid by DFT:
/// û_m(t) = û_m(0) e^{−|2πm/L|² t}.
pub fn heat_reference(u0: &ScalarField, t: f64) -> ScalarField {
    let grid = u0.grid();
    let mut buf: Vec<Complex<f64>> = u0.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    transform_all_axes(grid, &mut buf, &mut planner, false);
    for (p, c) in buf.iter_mut().enumerate() {
        let idx = grid.index_of(p);
        let mut k2 = 0.0;
        for a in 0..grid.dim() {
            let n = grid.sizes()[a];
            let m = if idx[a] <= n / 2 { idx[a] as f64 } else { idx[a] as f64 - n as f64 };
            let k = 2.0 * std::f64::consts::PI * m / grid.lengths()[a];
            k2 += k * k;
        }
        *c *= (-k2 * t).exp();
    }
    transform_all_axes(grid, &mut buf, &mut planner, true);
    let scale = 1.0 / grid.npoints() as f64;
    ScalarField::new(grid.clone(), buf.iter().map(|c| c.re * scale).collect()).expect("same grid")
}

fn transform_all_axes(grid: &GridSpec, buf: &mut [Complex<f64>], planner: &mut FftPlanner<f64>, inverse: bool) {
    let mut line = Vec::new();
    for a in 0..grid.dim() {
        let n = grid.sizes()[a];
        if n == 1 {
            continue;
        }
        let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
        let stride = grid.stride(a);
        for p in 0..grid.npoints() {
            if grid.index_of(p)[a] != 0 {
                continue;
            }
            line.clear();
            line.extend((0..n).map(|k| buf[p + k * stride]));
            fft.process(&mut line);
            for (k, v) in line.iter().enumerate() {
                buf[p + k * stride] = *v;
            }
        }
    }
}

/// Warped structures whose d*d-flow reduces to a scalar heat-type equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpedKind {
    /// T⁴ with ω = dx∧dy + b dz∧dw; log b solves the heat equation.
    T4B,
    /// T² × T^{2n} with ω = ω₁ + f ω₂; f^{n−1} solves the heat equation
    /// (log f when n = 1), equivalently ∂_t f = Δf + (n−2)f⁻¹|∇f|².
    ProductF { n: usize },
}

impl WarpedKind {
    fn name(self) -> &'static str {
        match self {
            WarpedKind::T4B => "t4_b",
            WarpedKind::ProductF { .. } => "product_f",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            WarpedKind::T4B => 4,
            WarpedKind::ProductF { n } => 2 + 2 * n,
        }
    }

    /// Exponent of the quantity that solves the heat equation; 0 stands for log.
    fn power(self) -> usize {
        match self {
            WarpedKind::T4B => 0,
            WarpedKind::ProductF { n } => n - 1,
        }
    }

    fn check(self, grid: &GridSpec) -> Result<(), ExactError> {
        let expected = self.dim();
        if let WarpedKind::ProductF { n } = self {
            if n == 0 || expected > crate::fields::MAX_DIM {
                return Err(ExactError::Dimension { kind: self.name(), expected, got: grid.dim() });
            }
        }
        if grid.dim() != expected {
            return Err(ExactError::Dimension { kind: self.name(), expected, got: grid.dim() });
        }
        Ok(())
    }
}

fn check_positive(data: &ScalarField) -> Result<(), ExactError> {
    let min = data.min();
    if !(min > 0.0) {
        return Err(ExactError::NonPositiveData { min });
    }
    Ok(())
}

/// Warping coefficient b(t) or f(t) from its initial value.
pub fn warped_coefficient(kind: WarpedKind, data: &ScalarField, t: f64) -> Result<ScalarField, ExactError> {
    kind.check(data.grid())?;
    check_positive(data)?;
    Ok(match kind.power() {
        0 => heat_reference(&data.map(f64::ln), t).map(f64::exp),
        1 => heat_reference(data, t),
        q => {
            let q = q as f64;
            heat_reference(&data.map(|f| f.powf(q)), t).map(|u| u.powf(1.0 / q))
        }
    })
}

/// ω₁ + c ω₂ with ω₁ = dx⁰∧dx¹ and ω₂ the standard form on the other axes.
pub fn warped_form(coeff: &ScalarField) -> FormField {
    let grid = coeff.grid();
    let d = grid.dim();
    let base = standard_omega_components(d);
    let basis = form_basis(d, 2);
    let nb = basis.len();
    let mut out = FormField::zeros(grid, 2);
    for p in 0..grid.npoints() {
        let c = coeff.values()[p];
        let dst = &mut out.data_mut()[p * nb..(p + 1) * nb];
        for (k, idx) in basis.indices.iter().enumerate() {
            dst[k] = if idx[0] == 0 { base[k] } else { c * base[k] };
        }
    }
    out
}

/// The coefficient c of a warped form, read from its (2, 3) component.
pub fn warped_coefficient_of(omega: &FormField) -> ScalarField {
    let grid = omega.grid();
    ScalarField::new(grid.clone(), (0..grid.npoints()).map(|p| omega.comp2(p, 2, 3)).collect()).expect("same grid")
}

/// Exact solution ω(t) of the compatible d*d-flow from warped data.
pub fn warped_solution(kind: WarpedKind, data: &ScalarField, t: f64) -> Result<FormField, ExactError> {
    Ok(warped_form(&warped_coefficient(kind, data, t)?))
}

/// Initial pair (ω₁ + c₀ω₂, J₀).
pub fn warped_pair(kind: WarpedKind, data: &ScalarField) -> Result<HermitianPair, ExactError> {
    kind.check(data.grid())?;
    check_positive(data)?;
    let j = AlmostComplexField::standard(data.grid());
    Ok(HermitianPair::new(warped_form(data), j)?)
}

/// Long-time limit of the warping coefficient: the mean of c₀^{n−1} raised
/// to 1/(n−1), or the geometric mean when the heat variable is log c.
pub fn limit_coefficient(kind: WarpedKind, data: &ScalarField) -> Result<f64, ExactError> {
    kind.check(data.grid())?;
    check_positive(data)?;
    Ok(match kind.power() {
        0 => data.map(f64::ln).mean().exp(),
        q => {
            let q = q as f64;
            data.map(|f| f.powf(q)).mean().powf(1.0 / q)
        }
    })
}

/// A flat-torus eigenform α with d*dα = λα in the continuum, and the
/// perturbed structure ω₀ = ω_std + εα built from it.
#[derive(Debug, Clone)]
pub struct Eigenform {
    pub lambda: f64,
    pub eps: f64,
    /// Lattice mode m with k_a = 2πm_a/L_a.
    pub mode: Vec<i64>,
    /// Axes (p, q) of α = cos(k·x) dx^p∧dx^q.
    pub axes: (usize, usize),
    pub alpha: FormField,
    pub omega0: FormField,
    /// ‖d*dα − λα‖_∞ for the discrete operator; O(h²).
    pub residual: f64,
}

impl Eigenform {
    /// The linearized flow ω_std + εe^{−λt}α.
    pub fn linear_solution(&self, t: f64) -> FormField {
        let grid = self.alpha.grid();
        let std = FormField::constant(grid, 2, &standard_omega_components(grid.dim()));
        std.add(&self.alpha.scale(self.eps * (-self.lambda * t).exp()))
    }

    /// Compatible pair (ω₀, J₀); α is J₀-invariant by construction.
    pub fn pair(&self) -> Result<HermitianPair, ExactError> {
        Ok(HermitianPair::new(self.omega0.clone(), AlmostComplexField::standard(self.alpha.grid()))?)
    }
}

/// Finds a lattice wave vector with |k|² = λ supported off some complex
/// coordinate pair (2c, 2c+1) and returns α = cos(k·x) dx^{2c}∧dx^{2c+1}.
/// Such α is J₀-invariant and co-closed, so d*dα = |k|²α. Modes are limited
/// to |m_a| < N_a/4 so they stay well resolved.
pub fn eigenform_project(grid: &GridSpec, lambda: f64, eps: f64) -> Result<Eigenform, ExactError> {
    let d = grid.dim();
    let not_found = ExactError::NotFound { lambda };
    if !(lambda > 0.0) || d < 4 {
        return Err(not_found);
    }
    let bounds: Vec<i64> = grid.sizes().iter().map(|&n| (n as i64 / 4 - 1).max(0)).collect();
    let mut best: Option<(Vec<i64>, usize)> = None;
    let mut m = vec![0i64; d];
    let total: usize = bounds.iter().map(|&b| (b + 1) as usize).product();
    for code in 0..total {
        let mut rest = code;
        for a in 0..d {
            let span = (bounds[a] + 1) as usize;
            m[a] = (rest % span) as i64;
            rest /= span;
        }
        let k2: f64 = (0..d)
            .map(|a| {
                let k = 2.0 * std::f64::consts::PI * m[a] as f64 / grid.lengths()[a];
                k * k
            })
            .sum();
        if m.iter().all(|&x| x == 0) || (k2 - lambda).abs() > 1e-9 * lambda {
            continue;
        }
        let Some(c) = (0..d / 2).rev().find(|&c| m[2 * c] == 0 && m[2 * c + 1] == 0) else {
            continue;
        };
        let nonzero = m.iter().filter(|&&x| x != 0).count();
        if best.as_ref().map_or(true, |(bm, _)| nonzero < bm.iter().filter(|&&x| x != 0).count()) {
            best = Some((m.clone(), c));
        }
    }
    let (mode, c) = best.ok_or(not_found)?;
    let axes = (2 * c, 2 * c + 1);
    let basis = form_basis(d, 2);
    let slot = basis.indices.iter().position(|idx| idx[0] == axes.0 && idx[1] == axes.1).expect("pair is a basis index");
    let k: Vec<f64> = (0..d).map(|a| 2.0 * std::f64::consts::PI * mode[a] as f64 / grid.lengths()[a]).collect();
    let alpha = FormField::from_fn(grid, 2, |x, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[slot] = (0..d).map(|a| k[a] * x[a]).sum::<f64>().cos();
    });
    let flat = MetricField::flat(grid);
    let dd = exterior::dstar_d(&alpha, &flat)?;
    let residual = dd.sub(&alpha.scale(lambda)).data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let std = FormField::constant(grid, 2, &standard_omega_components(d));
    let omega0 = std.add(&alpha.scale(eps));
    Ok(Eigenform { lambda, eps, mode, axes, alpha, omega0, residual })
}

/// Least-squares slope of log(v) against t over entries with v > 0.
pub fn fit_decay_rate(t: &[f64], v: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t.iter().zip(v).filter(|(_, &y)| y > 0.0).map(|(&x, &y)| (x, y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Observed order log(e₁/e₂)/log(h₁/h₂) between consecutive refinements.
pub fn observed_orders(h: &[f64], err: &[f64]) -> Vec<f64> {
    h.windows(2).zip(err.windows(2)).map(|(hw, ew)| (ew[0] / ew[1]).ln() / (hw[0] / hw[1]).ln()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{rhs, FlowKind};
    use std::f64::consts::PI;

    fn grid(sizes: Vec<usize>) -> GridSpec {
        let n = sizes.len();
        GridSpec::new(sizes, vec![2.0 * PI; n]).unwrap()
    }

    #[test]
    fn heat_single_mode_and_constant() {
        let g = grid(vec![32, 4]);
        let u = heat_reference(&ScalarField::from_fn(&g, |x| x[0].cos()), 1.0);
        let want = ScalarField::from_fn(&g, |x| (-1.0f64).exp() * x[0].cos());
        let err = u.values().iter().zip(want.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-14, "{err}");
        let c = heat_reference(&ScalarField::constant(&g, 2.5), 3.0);
        assert!(c.values().iter().all(|v| (v - 2.5).abs() < 1e-14));
    }

    #[test]
    fn heat_multi_axis_and_limit() {
        let g = GridSpec::new(vec![16, 8, 4, 4], vec![2.0 * PI, PI, 1.0, 1.0]).unwrap();
        let u0 = ScalarField::from_fn(&g, |x| 1.0 + (x[0]).cos() * (2.0 * x[1]).sin());
        let u = heat_reference(&u0, 0.3);
        let want = ScalarField::from_fn(&g, |x| 1.0 + (-(1.0 + 4.0) * 0.3f64).exp() * x[0].cos() * (2.0 * x[1]).sin());
        let err = u.values().iter().zip(want.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-13, "{err}");
        let late = heat_reference(&u0, 50.0);
        assert!(late.values().iter().all(|v| (v - u0.mean()).abs() < 1e-12));
    }

    #[test]
    fn warped_examples() {
        let g = grid(vec![32, 4, 4, 4]);
        let b0 = ScalarField::from_fn(&g, |x| (0.1 * x[0].cos()).exp());
        let b = warped_coefficient(WarpedKind::T4B, &b0, 0.5).unwrap();
        let err = (0..g.npoints())
            .map(|p| (b.values()[p] - (0.1 * (-0.5f64).exp() * g.coords(p)[0].cos()).exp()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-14, "{err}");

        let g6 = grid(vec![16, 4, 4, 4, 4, 4]);
        let f0 = ScalarField::from_fn(&g6, |x| 1.0 + 0.1 * x[0].cos());
        let f = warped_coefficient(WarpedKind::ProductF { n: 2 }, &f0, 1.0).unwrap();
        let err = (0..g6.npoints())
            .map(|p| (f.values()[p] - (1.0 + 0.1 * (-1.0f64).exp() * g6.coords(p)[0].cos())).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-14, "{err}");
        assert!((limit_coefficient(WarpedKind::ProductF { n: 2 }, &f0).unwrap() - 1.0).abs() < 1e-12);

        let c = ScalarField::constant(&g, 1.7);
        let w = warped_solution(WarpedKind::T4B, &c, 4.0).unwrap();
        assert!((w.comp2(5, 2, 3) - 1.7).abs() < 1e-14 && (w.comp2(5, 0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn warped_errors() {
        let g = grid(vec![8, 4, 4, 4]);
        let bad = ScalarField::from_fn(&g, |x| x[0].cos());
        assert!(matches!(warped_coefficient(WarpedKind::T4B, &bad, 1.0), Err(ExactError::NonPositiveData { .. })));
        let one = ScalarField::constant(&g, 1.0);
        assert!(matches!(
            warped_coefficient(WarpedKind::ProductF { n: 2 }, &one, 1.0),
            Err(ExactError::Dimension { expected: 6, got: 4, .. })
        ));
    }

    /// Pins the first-order coefficient: the ω₂ component of −d*dω equals
    /// (Δf + (n−2)f⁻¹|∇f|²) for n = 1 (T⁴) and n = 2 (T²×T⁴).
    #[test]
    fn warped_rhs_coefficient_sign() {
        for (kind, n) in [(WarpedKind::T4B, 1usize), (WarpedKind::ProductF { n: 2 }, 2)] {
            let mut errs = Vec::new();
            for nx in [32, 64] {
                let mut sizes = vec![4; kind.dim()];
                sizes[0] = nx;
                let g = grid(sizes);
                let f0 = ScalarField::from_fn(&g, |x| 1.0 + 0.3 * x[0].cos());
                let pair = warped_pair(kind, &f0).unwrap();
                let theta = rhs(&pair, FlowKind::CompatibleDstard).unwrap().theta;
                let mut err = 0.0f64;
                for p in 0..g.npoints() {
                    let x = g.coords(p)[0];
                    let (f, fx, fxx) = (1.0 + 0.3 * x.cos(), -0.3 * x.sin(), -0.3 * x.cos());
                    let want = fxx + (n as f64 - 2.0) * fx * fx / f;
                    err = err.max((theta.comp2(p, 2, 3) - want).abs()).max(theta.comp2(p, 0, 1).abs());
                }
                errs.push(err);
            }
            assert!(errs[1] < 2e-3 && errs[0] / errs[1] > 3.5, "{n}: {errs:?}");
        }
    }

    #[test]
    fn eigenform_lookup() {
        let g = grid(vec![16, 8, 8, 8]);
        let e = eigenform_project(&g, 1.0, 0.01).unwrap();
        assert_eq!(e.mode, vec![1, 0, 0, 0]);
        assert_eq!(e.axes, (2, 3));
        assert!(e.residual < 0.1, "{}", e.residual);
        let zero = eigenform_project(&g, 1.0, 0.0).unwrap();
        let dd = exterior::dstar_d(&zero.omega0, &MetricField::flat(&g)).unwrap();
        assert!(dd.data().iter().all(|v| v.abs() == 0.0));
        assert!(matches!(eigenform_project(&g, 0.5, 0.01), Err(ExactError::NotFound { .. })));
    }

    #[test]
    fn decay_fit_and_orders() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|x| 3.0 * (-2.0 * x).exp()).collect();
        assert!((fit_decay_rate(&t, &v).unwrap() + 2.0).abs() < 1e-12);
        let o = observed_orders(&[0.4, 0.2, 0.1], &[1.6e-2, 4e-3, 1e-3]);
        assert!(o.iter().all(|x| (x - 2.0).abs() < 1e-12));
    }
}
