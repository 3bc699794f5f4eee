//! Explicit RK4 integration of the d*d-type flows on pairs (ω, J), the
//! K₁, K₂, L, φ and X constructions, and per-step diagnostics.
//!
//! All background derivatives are flat (∇̄ = ∂) and every ∂_p∂_q is the
//! composition D_q D_p of centered differences, the same stencil the
//! Hodge-star route of d*d uses.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curvature::{self, CurvatureError};
use crate::exterior::{self, ExteriorError};
use crate::fields::{form_basis, gradient, partial, write_snapshot, FieldError, FormField, GridField, GridSpec, TensorField};
use crate::hermitian::{self, AlmostComplexField, HermitianError, HermitianPair, MetricField, EPS_ND, TOL_COMPAT};
use crate::linalg;

pub const CSV_HEADER: [&str; 10] =
    ["t", "dt", "volume", "H0", "H1", "compat_inf", "min_pf", "max_rm", "max_grad_omega", "max_hess_omega"];

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("pair is not compatible: max |ω_J−| = {defect:e}")]
    NotCompatible { defect: f64 },
    #[error("nondegeneracy lost at t = {t}: min |Pf(ω)| = {min_pf:e}")]
    NondegeneracyLost { t: f64, min_pf: f64 },
    #[error("pair stopped being tamed at t = {t} (point {point})")]
    TamingLost { t: f64, point: usize },
    #[error("blowup detected at t = {t}: {monitor} = {value:e}")]
    BlowupDetected { t: f64, monitor: &'static str, value: f64 },
    #[error("J retraction diverged at t = {t} (point {point})")]
    RetractionDiverged { t: f64, point: usize },
    #[error(transparent)]
    Hermitian(#[from] HermitianError),
    #[error(transparent)]
    Exterior(#[from] ExteriorError),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FlowError {
    /// True for the errors that end a run because the solution degenerated,
    /// as opposed to bad input.
    pub fn is_breakdown(&self) -> bool {
        matches!(
            self,
            FlowError::NondegeneracyLost { .. }
                | FlowError::TamingLost { .. }
                | FlowError::BlowupDetected { .. }
                | FlowError::RetractionDiverged { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    /// ∂_tω = −d*dω, J frozen.
    TamedDstard,
    /// ∂_tω = −d*dω, ∂_tJ = K₁.
    CompatibleDstard,
    /// Gauge-fixed system built from (ω_J, J) with the vector field X.
    Deturck,
    /// ∂_tω = −d*dω, ∂_tJ = K₁ + B.
    DstardRicci,
    /// ∂_tω = −Δω with the matching K₁; no well-posedness theory behind it.
    LaplacianExploratory,
}

impl FlowKind {
    pub const ALL: [FlowKind; 5] = [
        FlowKind::TamedDstard,
        FlowKind::CompatibleDstard,
        FlowKind::Deturck,
        FlowKind::DstardRicci,
        FlowKind::LaplacianExploratory,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FlowKind::TamedDstard => "tamed_dstard",
            FlowKind::CompatibleDstard => "compatible_dstard",
            FlowKind::Deturck => "deturck",
            FlowKind::DstardRicci => "dstard_ricci",
            FlowKind::LaplacianExploratory => "laplacian_exploratory",
        }
    }

    pub fn evolves_j(self) -> bool {
        self != FlowKind::TamedDstard
    }

    pub fn requires_compatible(self) -> bool {
        matches!(self, FlowKind::CompatibleDstard | FlowKind::DstardRicci | FlowKind::LaplacianExploratory)
    }

    fn is_dstard_type(self) -> bool {
        self != FlowKind::LaplacianExploratory
    }
}

impl FromStr for FlowKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FlowKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown flow kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Stop with NondegeneracyLost when min |Pf(ω)| drops to this.
    pub min_pf: f64,
    /// Stop when the smallest eigenvalue of g drops to this (checked with the monitors).
    pub min_metric_eig: f64,
    pub max_rm: f64,
    pub max_grad_omega: f64,
    pub max_hess_omega: f64,
    /// Compatibility tolerance on max |ω_J−| for kinds that need it.
    pub tol_compat: f64,
    /// Allowed volume increase per step, relative to the volume, before the
    /// step is flagged.
    pub tol_mono: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            min_pf: EPS_ND,
            min_metric_eig: 1e-8,
            max_rm: 1e8,
            max_grad_omega: 1e8,
            max_hess_omega: 1e8,
            tol_compat: TOL_COMPAT,
            tol_mono: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub kind: FlowKind,
    /// Δt = cfl_sigma · min h² / (2 · dim).
    pub cfl_sigma: f64,
    pub t_end: f64,
    /// Project J back onto J² = −Id after each step.
    pub retraction: bool,
    /// Required to run `laplacian_exploratory`.
    pub allow_exploratory: bool,
    /// Compute |Rm|, |∇ω|, |∇²ω| and min eig g every this many steps.
    pub monitor_every: usize,
    /// Write ω and J snapshots every this many steps when an output dir is given.
    pub snapshot_every: Option<usize>,
    pub max_steps: Option<usize>,
    pub thresholds: Thresholds,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            kind: FlowKind::CompatibleDstard,
            cfl_sigma: 0.2,
            t_end: 1.0,
            retraction: true,
            allow_exploratory: false,
            monitor_every: 1,
            snapshot_every: None,
            max_steps: None,
            thresholds: Thresholds::default(),
        }
    }
}

impl FlowConfig {
    pub fn new(kind: FlowKind, t_end: f64) -> Self {
        Self { kind, t_end, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |field, reason: &str| Err(FlowError::InvalidConfig { field, reason: reason.to_string() });
        if !(self.cfl_sigma > 0.0 && self.cfl_sigma < 1.0) {
            return bad("cfl_sigma", &format!("must lie in (0, 1), got {}", self.cfl_sigma));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("t_end", &format!("must be positive and finite, got {}", self.t_end));
        }
        if self.monitor_every == 0 {
            return bad("monitor_every", "must be at least 1");
        }
        if self.snapshot_every == Some(0) {
            return bad("snapshot_every", "must be at least 1");
        }
        if self.kind == FlowKind::LaplacianExploratory && !self.allow_exploratory {
            return bad("kind", "laplacian_exploratory requires allow_exploratory = true");
        }
        let t = &self.thresholds;
        if !(t.min_pf >= 0.0) || !(t.tol_compat > 0.0) || !(t.tol_mono >= 0.0) {
            return bad("thresholds", "min_pf, tol_compat and tol_mono must be nonnegative");
        }
        Ok(())
    }

    /// Diffusive CFL step for this grid.
    pub fn time_step(&self, grid: &GridSpec) -> f64 {
        let h = grid.min_spacing();
        self.cfl_sigma * h * h / (2.0 * grid.dim() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub volume: f64,
    pub h0: f64,
    pub h1: f64,
    /// max |ω_J−|
    pub compat_inf: f64,
    pub min_pf: f64,
    pub max_rm: Option<f64>,
    pub max_grad_omega: Option<f64>,
    pub max_hess_omega: Option<f64>,
    pub min_metric_eig: Option<f64>,
    /// max |d(ω^{n−1})|, reported only.
    pub d_omega_power: Option<f64>,
    /// Volume went up by more than tol_mono·V during a d*d-type step.
    pub volume_increased: bool,
}

impl Diagnostics {
    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.t.to_string(),
            self.dt.to_string(),
            self.volume.to_string(),
            self.h0.to_string(),
            self.h1.to_string(),
            self.compat_inf.to_string(),
            self.min_pf.to_string(),
            opt(self.max_rm),
            opt(self.max_grad_omega),
            opt(self.max_hess_omega),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub pair: HermitianPair,
    pub t: f64,
    pub step: usize,
    pub diagnostics: Diagnostics,
}

impl FlowState {
    /// State at t = 0 with full monitors.
    pub fn initial(pair: HermitianPair, cfg: &FlowConfig) -> Result<Self, FlowError> {
        let diagnostics = diagnose(&pair, 0, 0.0, 0.0, true, None, cfg)?;
        check_monitors(&diagnostics, cfg)?;
        Ok(Self { pair, t: 0.0, step: 0, diagnostics })
    }
}

/// Right-hand side (θ, K) of a flow; `k` is absent when J is frozen.
#[derive(Debug, Clone)]
pub struct Rhs {
    pub theta: FormField,
    pub k: Option<TensorField>,
}

/// The pieces of K₂ for inspection.
#[derive(Debug, Clone)]
pub struct K2Parts {
    pub k2: TensorField,
    /// g^{pq}∂_p∂_q ω
    pub hess_omega: FormField,
    /// ψ = −d*dω − g^{pq}∂_p∂_q ω
    pub psi: FormField,
    /// φ through its first-derivative expansion.
    pub phi: FormField,
    /// L with g(Lx, y) = ψ_J−(x, y) + ½φ(x, y)
    pub l: TensorField,
}

fn metric_of(omega: &FormField, j: &TensorField) -> Result<MetricField, HermitianError> {
    let grid = omega.grid();
    let d = grid.dim();
    let mut g = TensorField::zeros(grid, 0, 2);
    let mut w = [0.0; 36];
    for p in 0..grid.npoints() {
        omega.matrix_at(p, &mut w);
        hermitian::metric_matrix(&w, j.at(p), d, &mut g.data_mut()[p * d * d..(p + 1) * d * d]);
    }
    match MetricField::new(g) {
        Err(HermitianError::DegenerateMetric { point }) => Err(HermitianError::NotTamed { point }),
        other => other,
    }
}

/// ½(β ± β(J·,J·)) for a J that need not satisfy J² = −Id exactly.
fn split_raw(beta: &FormField, j: &TensorField, sign: f64) -> FormField {
    let grid = beta.grid();
    let d = grid.dim();
    let basis = form_basis(d, 2);
    let nc = basis.len();
    let mut out = FormField::zeros(grid, 2);
    let mut m = [0.0; 36];
    let mut pm = [0.0; 36];
    for p in 0..grid.npoints() {
        beta.matrix_at(p, &mut m);
        hermitian::j_pullback_matrix(&m, j.at(p), d, &mut pm);
        let dst = &mut out.data_mut()[p * nc..(p + 1) * nc];
        for (c, idx) in basis.indices.iter().enumerate() {
            let k = idx[0] * d + idx[1];
            dst[c] = 0.5 * (m[k] + sign * pm[k]);
        }
    }
    out
}

/// Σ_{p,q} g^{pq} D_q D_p f from precomputed first differences D_p f.
fn trace_hessian<F: GridField>(grads: &[F], metric: &MetricField) -> F {
    let grid = grads[0].grid().clone();
    let d = grid.dim();
    let nc = grads[0].ncomp();
    let gi = metric.g_inv().data();
    let mut out = grads[0].zeros_like();
    for p in 0..d {
        for q in p..d {
            let w = if p == q { 1.0 } else { 2.0 };
            if (0..grid.npoints()).all(|pt| gi[pt * d * d + p * d + q] == 0.0) {
                continue;
            }
            let h = partial(&grads[p], q).expect("axis in range");
            let dst = out.data_mut();
            for pt in 0..grid.npoints() {
                let c = w * gi[pt * d * d + p * d + q];
                if c != 0.0 {
                    for k in 0..nc {
                        dst[pt * nc + k] += c * h.data()[pt * nc + k];
                    }
                }
            }
        }
    }
    out
}

/// K^j_i = ½(θ_ip − θ_kl J^k_i J^l_p) g^{jp}.
fn k_from_theta(theta: &FormField, j: &TensorField, metric: &MetricField) -> TensorField {
    let grid = theta.grid();
    let d = grid.dim();
    let mut out = TensorField::zeros(grid, 1, 1);
    let mut th = [0.0; 36];
    let mut thj = [0.0; 36];
    for p in 0..grid.npoints() {
        theta.matrix_at(p, &mut th);
        hermitian::j_pullback_matrix(&th, j.at(p), d, &mut thj);
        let gi = metric.g_inv().at(p);
        let dst = &mut out.data_mut()[p * d * d..(p + 1) * d * d];
        for jj in 0..d {
            for i in 0..d {
                let mut s = 0.0;
                for q in 0..d {
                    s += (th[i * d + q] - thj[i * d + q]) * gi[jj * d + q];
                }
                dst[jj * d + i] = 0.5 * s;
            }
        }
    }
    out
}

/// X^k = g^{pq} ∂_p(ω_qj) ω^{jk} from first differences of ω.
fn x_from_grads(grad_omega: &[FormField], omega: &FormField, metric: &MetricField) -> Result<TensorField, HermitianError> {
    let grid = omega.grid();
    let d = grid.dim();
    let mut out = TensorField::zeros(grid, 1, 0);
    let mut w = [0.0; 36];
    let mut winv = [0.0; 36];
    let mut dw = [0.0; 36];
    let mut v = [0.0; 6];
    for pt in 0..grid.npoints() {
        omega.matrix_at(pt, &mut w);
        if linalg::inverse(&w, d, &mut winv).is_none() {
            return Err(HermitianError::NondegeneracyLost { min_pf: 0.0 });
        }
        let gi = metric.g_inv().at(pt);
        v[..d].iter_mut().for_each(|x| *x = 0.0);
        for (p, gp) in grad_omega.iter().enumerate() {
            gp.matrix_at(pt, &mut dw);
            for q in 0..d {
                let c = gi[p * d + q];
                if c != 0.0 {
                    for jj in 0..d {
                        v[jj] += c * dw[q * d + jj];
                    }
                }
            }
        }
        let dst = &mut out.data_mut()[pt * d..(pt + 1) * d];
        for k in 0..d {
            dst[k] = (0..d).map(|jj| v[jj] * winv[jj * d + k]).sum();
        }
    }
    Ok(out)
}

fn transpose_into(a: &[f64], d: usize, out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            out[j * d + i] = a[i * d + j];
        }
    }
}

/// K₂ and its pieces for a pair whose ω is J-compatible (not re-checked).
fn k2_raw(
    omega: &FormField,
    j: &TensorField,
    metric: &MetricField,
    dstard: &FormField,
    grad_omega: &[FormField],
    grad_j: &[TensorField],
) -> K2Parts {
    let grid = omega.grid();
    let d = grid.dim();
    let dd = d * d;
    let basis = form_basis(d, 2);
    let nb = basis.len();
    let hess_omega = trace_hessian(grad_omega, metric);
    let hess_j = trace_hessian(grad_j, metric);
    let psi = dstard.scale(-1.0).sub(&hess_omega);
    let psi_anti = split_raw(&psi, j, -1.0);

    let mut phi = FormField::zeros(grid, 2);
    let mut l = TensorField::zeros(grid, 1, 1);
    let mut k2 = TensorField::zeros(grid, 1, 1);
    let mut w = [0.0; 36];
    let mut a = [0.0; 36];
    let mut t1 = [0.0; 36];
    let mut t2 = [0.0; 36];
    let mut at = [0.0; 36];
    let mut dwm = [0.0; 36];
    let mut djt = [0.0; 36];
    let mut jt = [0.0; 36];
    let mut ph = [0.0; 36];
    let mut m = [0.0; 36];
    for pt in 0..grid.npoints() {
        let jm = j.at(pt);
        let gi = metric.g_inv().at(pt);
        let g = metric.g().at(pt);
        omega.matrix_at(pt, &mut w);
        transpose_into(jm, d, &mut jt);
        ph[..dd].iter_mut().for_each(|x| *x = 0.0);
        // φ = 2 Σ_p [A_pᵀ Ω_p J + Jᵀ Ω_p A_p + (∂_pJ)ᵀ W A_p],  A_p = Σ_q g^{pq} ∂_qJ
        for p in 0..d {
            a[..dd].iter_mut().for_each(|x| *x = 0.0);
            for q in 0..d {
                let c = gi[p * d + q];
                if c != 0.0 {
                    let djq = grad_j[q].at(pt);
                    for e in 0..dd {
                        a[e] += c * djq[e];
                    }
                }
            }
            if a[..dd].iter().all(|&x| x == 0.0) {
                continue;
            }
            grad_omega[p].matrix_at(pt, &mut dwm);
            transpose_into(&a, d, &mut at);
            linalg::mat_mul(&at, &dwm, d, &mut t1);
            linalg::mat_mul(&t1, jm, d, &mut t2);
            for e in 0..dd {
                ph[e] += 2.0 * t2[e];
            }
            linalg::mat_mul(&jt, &dwm, d, &mut t1);
            linalg::mat_mul(&t1, &a, d, &mut t2);
            for e in 0..dd {
                ph[e] += 2.0 * t2[e];
            }
            transpose_into(grad_j[p].at(pt), d, &mut djt);
            linalg::mat_mul(&djt, &w, d, &mut t1);
            linalg::mat_mul(&t1, &a, d, &mut t2);
            for e in 0..dd {
                ph[e] += 2.0 * t2[e];
            }
        }
        let phi_dst = &mut phi.data_mut()[pt * nb..(pt + 1) * nb];
        for (c, idx) in basis.indices.iter().enumerate() {
            phi_dst[c] = 0.5 * (ph[idx[0] * d + idx[1]] - ph[idx[1] * d + idx[0]]);
        }
        // M = ψ_J− + ½φ as a matrix; L^j_i = M_ik g^{kj}
        psi_anti.matrix_at(pt, &mut m);
        for (c, idx) in basis.indices.iter().enumerate() {
            let v = 0.5 * phi_dst[c];
            m[idx[0] * d + idx[1]] += v;
            m[idx[1] * d + idx[0]] -= v;
        }
        let hj = hess_j.at(pt);
        let ldst = &mut l.data_mut()[pt * dd..(pt + 1) * dd];
        for jj in 0..d {
            for i in 0..d {
                ldst[jj * d + i] = (0..d).map(|k| m[i * d + k] * gi[k * d + jj]).sum();
            }
        }
        let kdst = &mut k2.data_mut()[pt * dd..(pt + 1) * dd];
        // K₂ = ½(H_J − g⁻¹ H_Jᵀ g) + L
        for jj in 0..d {
            for i in 0..d {
                let mut s = 0.0;
                for aa in 0..d {
                    for b in 0..d {
                        s += gi[jj * d + aa] * hj[b * d + aa] * g[b * d + i];
                    }
                }
                kdst[jj * d + i] = 0.5 * (hj[jj * d + i] - s) + l.data()[pt * dd + jj * d + i];
            }
        }
    }
    K2Parts { k2, hess_omega, psi, phi, l }
}

fn require_compatible(pair: &HermitianPair, tol: f64) -> Result<(), FlowError> {
    if pair.compat_defect() > tol {
        return Err(FlowError::NotCompatible { defect: pair.compat_defect() });
    }
    Ok(())
}

/// K₁ with g(K₁x, y) = θ_J−(x, y); θ is usually −d*dω.
pub fn k1(pair: &HermitianPair, theta: &FormField) -> Result<TensorField, FlowError> {
    require_compatible(pair, TOL_COMPAT)?;
    Ok(k_from_theta(theta, pair.j().tensor(), pair.metric()))
}

/// DeTurck field X^k = g^{pq} ∂_p(ω_qj) ω^{jk} for the flat background.
pub fn deturck_x(pair: &HermitianPair) -> TensorField {
    let grid = pair.grid();
    let d = grid.dim();
    let grads = gradient(pair.omega());
    let mut out = TensorField::zeros(grid, 1, 0);
    let mut dw = [0.0; 36];
    for pt in 0..grid.npoints() {
        let gi = pair.g_inv().at(pt);
        let winv = pair.omega_inv().at(pt);
        let mut v = [0.0; 6];
        for (p, gp) in grads.iter().enumerate() {
            gp.matrix_at(pt, &mut dw);
            for q in 0..d {
                for jj in 0..d {
                    v[jj] += gi[p * d + q] * dw[q * d + jj];
                }
            }
        }
        for k in 0..d {
            out.data_mut()[pt * d + k] = (0..d).map(|jj| v[jj] * winv[jj * d + k]).sum();
        }
    }
    out
}

/// K₂ and its pieces built from (ω_J, J).
pub fn k2_parts(pair: &HermitianPair) -> Result<K2Parts, FlowError> {
    let j = pair.j().tensor();
    let omega_c = split_raw(pair.omega(), j, 1.0);
    let metric = pair.metric();
    let dstard = exterior::dstar_d(&omega_c, metric)?;
    Ok(k2_raw(&omega_c, j, metric, &dstard, &gradient(&omega_c), &gradient(j)))
}

pub fn k2(pair: &HermitianPair) -> Result<TensorField, FlowError> {
    Ok(k2_parts(pair)?.k2)
}

fn rhs_raw(kind: FlowKind, omega: &FormField, j: &TensorField) -> Result<Rhs, FlowError> {
    match kind {
        FlowKind::TamedDstard => {
            let metric = metric_of(omega, j)?;
            Ok(Rhs { theta: exterior::dstar_d(omega, &metric)?.scale(-1.0), k: None })
        }
        FlowKind::CompatibleDstard => {
            let metric = metric_of(omega, j)?;
            let theta = exterior::dstar_d(omega, &metric)?.scale(-1.0);
            let k = k_from_theta(&theta, j, &metric);
            Ok(Rhs { theta, k: Some(k) })
        }
        FlowKind::DstardRicci => {
            let metric = metric_of(omega, j)?;
            let theta = exterior::dstar_d(omega, &metric)?.scale(-1.0);
            let ric = curvature::ricci(&metric);
            let k = k_from_theta(&theta, j, &metric).add(&curvature::b_tensor_raw(j, &metric, &ric));
            Ok(Rhs { theta, k: Some(k) })
        }
        FlowKind::LaplacianExploratory => {
            let metric = metric_of(omega, j)?;
            let theta = exterior::hodge_laplacian(omega, &metric)?.scale(-1.0);
            let k = k_from_theta(&theta, j, &metric);
            Ok(Rhs { theta, k: Some(k) })
        }
        FlowKind::Deturck => {
            let omega_c = split_raw(omega, j, 1.0);
            let omega_a = split_raw(omega, j, -1.0);
            let metric = metric_of(&omega_c, j)?;
            let grad_c = gradient(&omega_c);
            let grad_j = gradient(j);
            let dstard = exterior::dstar_d(&omega_c, &metric)?;
            let x = x_from_grads(&grad_c, &omega_c, &metric)?;
            let parts = k2_raw(&omega_c, j, &metric, &dstard, &grad_c, &grad_j);
            let theta = dstard
                .scale(-1.0)
                .add(&exterior::lie_derivative_form(&x, &omega_c))
                .add(&trace_hessian(&gradient(&omega_a), &metric));
            let k = parts.k2.add(&exterior::lie_derivative_j(&x, j));
            Ok(Rhs { theta, k: Some(k) })
        }
    }
}

/// Right-hand side of `kind` at a validated pair, enforcing compatibility
/// where the kind needs it.
pub fn rhs(pair: &HermitianPair, kind: FlowKind) -> Result<Rhs, FlowError> {
    if kind.requires_compatible() {
        require_compatible(pair, TOL_COMPAT)?;
    }
    rhs_raw(kind, pair.omega(), pair.j().tensor())
}

fn stage_error(e: FlowError, t: f64) -> FlowError {
    match e {
        FlowError::Hermitian(h) => hermitian_error(h, t),
        other => other,
    }
}

fn hermitian_error(e: HermitianError, t: f64) -> FlowError {
    match e {
        HermitianError::NondegeneracyLost { min_pf } => FlowError::NondegeneracyLost { t, min_pf },
        HermitianError::NotTamed { point } | HermitianError::DegenerateMetric { point } => FlowError::TamingLost { t, point },
        HermitianError::RetractionDiverged { point } => FlowError::RetractionDiverged { t, point },
        other => FlowError::Hermitian(other),
    }
}

fn combine<F: GridField>(base: &F, incs: &[(&F, f64)]) -> F {
    let mut out = base.clone();
    for (f, c) in incs {
        out = out.axpy(*c, f);
    }
    out
}

/// One RK4 step of the configured flow from `state` at the CFL time step,
/// shortened to land on t_end.
pub fn step(state: &FlowState, cfg: &FlowConfig) -> Result<FlowState, FlowError> {
    let dt = cfg.time_step(state.pair.grid()).min(cfg.t_end - state.t);
    step_with_dt(state, cfg, dt)
}

/// One RK4 step of size `dt`, followed by the J retraction and diagnostics.
pub fn step_with_dt(state: &FlowState, cfg: &FlowConfig, dt: f64) -> Result<FlowState, FlowError> {
    let kind = cfg.kind;
    let t = state.t;
    let w0 = state.pair.omega();
    let j0 = state.pair.j().tensor();
    let eval = |w: &FormField, j: &TensorField| rhs_raw(kind, w, j).map_err(|e| stage_error(e, t));
    let zero_k = TensorField::zeros(w0.grid(), 1, 1);
    let kk = |r: &Rhs| -> TensorField { r.k.clone().unwrap_or_else(|| zero_k.clone()) };

    let r1 = eval(w0, j0)?;
    let k1 = kk(&r1);
    let r2 = eval(&combine(w0, &[(&r1.theta, 0.5 * dt)]), &combine(j0, &[(&k1, 0.5 * dt)]))?;
    let k2 = kk(&r2);
    let r3 = eval(&combine(w0, &[(&r2.theta, 0.5 * dt)]), &combine(j0, &[(&k2, 0.5 * dt)]))?;
    let k3 = kk(&r3);
    let r4 = eval(&combine(w0, &[(&r3.theta, dt)]), &combine(j0, &[(&k3, dt)]))?;
    let k4 = kk(&r4);
    let c1 = dt / 6.0;
    let c2 = dt / 3.0;
    let w1 = combine(w0, &[(&r1.theta, c1), (&r2.theta, c2), (&r3.theta, c2), (&r4.theta, c1)]);
    let t1 = t + dt;
    if !w1.is_finite() {
        return Err(FlowError::BlowupDetected { t: t1, monitor: "non-finite omega", value: f64::NAN });
    }
    let j1 = if kind.evolves_j() {
        let raw = combine(j0, &[(&k1, c1), (&k2, c2), (&k3, c2), (&k4, c1)]);
        if !raw.is_finite() {
            return Err(FlowError::BlowupDetected { t: t1, monitor: "non-finite J", value: f64::NAN });
        }
        if cfg.retraction {
            hermitian::retract_j(&raw).map_err(|e| hermitian_error(e, t1))?
        } else {
            AlmostComplexField::new(raw).map_err(|e| hermitian_error(e, t1))?
        }
    } else {
        state.pair.j().clone()
    };
    let pair = HermitianPair::new(w1, j1).map_err(|e| hermitian_error(e, t1))?;
    let n = state.step + 1;
    let monitors = n % cfg.monitor_every == 0;
    let diagnostics = diagnose(&pair, n, t1, dt, monitors, Some(state.diagnostics.volume), cfg)?;
    check_monitors(&diagnostics, cfg)?;
    Ok(FlowState { pair, t: t1, step: n, diagnostics })
}

fn check_monitors(d: &Diagnostics, cfg: &FlowConfig) -> Result<(), FlowError> {
    let th = &cfg.thresholds;
    if d.min_pf <= th.min_pf {
        return Err(FlowError::NondegeneracyLost { t: d.t, min_pf: d.min_pf });
    }
    let checks: [(&'static str, Option<f64>, f64); 3] = [
        ("max_rm", d.max_rm, th.max_rm),
        ("max_grad_omega", d.max_grad_omega, th.max_grad_omega),
        ("max_hess_omega", d.max_hess_omega, th.max_hess_omega),
    ];
    for (name, v, limit) in checks {
        if let Some(v) = v {
            if !(v <= limit) {
                return Err(FlowError::BlowupDetected { t: d.t, monitor: name, value: v });
            }
        }
    }
    for (name, v) in [("H0", d.h0), ("H1", d.h1), ("volume", d.volume)] {
        if !v.is_finite() {
            return Err(FlowError::BlowupDetected { t: d.t, monitor: name, value: v });
        }
    }
    if let Some(e) = d.min_metric_eig {
        if e <= th.min_metric_eig {
            return Err(FlowError::TamingLost { t: d.t, point: 0 });
        }
    }
    Ok(())
}

fn tensor_norm_max(t: &TensorField, metric: &MetricField) -> f64 {
    let d = t.grid().dim();
    let r = t.valence().1;
    let mut raised = vec![0.0; t.ncomp()];
    let mut worst = 0.0f64;
    for p in 0..t.grid().npoints() {
        curvature::raise_all(t.at(p), metric.g_inv().at(p), d, r, &mut raised);
        let s: f64 = t.at(p).iter().zip(&raised).map(|(a, b)| a * b).sum();
        worst = worst.max(s.max(0.0).sqrt());
    }
    worst
}

fn min_metric_eigenvalue(metric: &MetricField) -> f64 {
    let d = metric.grid().dim();
    let mut worst = f64::INFINITY;
    for p in 0..metric.grid().npoints() {
        let m = nalgebra::DMatrix::from_row_slice(d, d, metric.g().at(p));
        worst = worst.min(crate::linalg::sym_eigen(&m).0[0]);
    }
    worst
}

/// max |d(ω^{n−1})|; zero in dimension 2.
pub fn d_omega_power(omega: &FormField) -> Result<f64, FlowError> {
    let n = omega.grid().dim() / 2;
    if n < 2 {
        return Ok(0.0);
    }
    let mut acc = omega.clone();
    for _ in 2..n {
        acc = exterior::wedge(&acc, omega)?;
    }
    Ok(exterior::exterior_d(&acc)?.max_abs())
}

fn diagnose(
    pair: &HermitianPair,
    step: usize,
    t: f64,
    dt: f64,
    monitors: bool,
    prev_volume: Option<f64>,
    cfg: &FlowConfig,
) -> Result<Diagnostics, FlowError> {
    let e = exterior::energies(pair)?;
    let mut out = Diagnostics {
        step,
        t,
        dt,
        volume: e.volume,
        h0: e.h0,
        h1: e.h1,
        compat_inf: pair.compat_defect(),
        min_pf: pair.min_abs_pfaffian(),
        max_rm: None,
        max_grad_omega: None,
        max_hess_omega: None,
        min_metric_eig: None,
        d_omega_power: None,
        volume_increased: false,
    };
    if let Some(v0) = prev_volume {
        out.volume_increased = cfg.kind.is_dstard_type() && e.volume > v0 + cfg.thresholds.tol_mono * v0.abs();
    }
    if monitors {
        let metric = pair.metric();
        let gamma = curvature::christoffel(metric);
        let rm = curvature::riemann_with(metric, &gamma);
        out.max_rm = Some(curvature::max_curvature_norm(metric, &rm));
        let grad = curvature::covariant_derivative(&pair.omega().to_tensor(), &gamma)?;
        out.max_grad_omega = Some(tensor_norm_max(&grad, metric));
        let hess = curvature::covariant_derivative(&grad, &gamma)?;
        out.max_hess_omega = Some(tensor_norm_max(&hess, metric));
        out.min_metric_eig = Some(min_metric_eigenvalue(metric));
        out.d_omega_power = Some(d_omega_power(pair.omega())?);
    }
    Ok(out)
}

/// Result of [`run`]: the last valid state, one diagnostics row per step
/// (including t = 0), and the error that stopped the run early, if any.
#[derive(Debug)]
pub struct RunOutcome {
    pub state: FlowState,
    pub rows: Vec<Diagnostics>,
    pub error: Option<FlowError>,
    pub csv_path: Option<PathBuf>,
}

fn snapshot(dir: &Path, tag: &str, state: &FlowState) -> Result<(), FlowError> {
    write_snapshot(&dir.join(format!("{tag}_omega")), "omega", state.pair.omega())?;
    write_snapshot(&dir.join(format!("{tag}_j")), "J", state.pair.j().tensor())?;
    Ok(())
}

/// Integrate from `pair` to `cfg.t_end`. With `out_dir`, rows go to
/// `diagnostics.csv` as they are produced and snapshots are written every
/// `snapshot_every` steps plus once for the last valid state.
pub fn run(pair: HermitianPair, cfg: &FlowConfig, out_dir: Option<&Path>) -> Result<RunOutcome, FlowError> {
    cfg.validate()?;
    if cfg.kind.requires_compatible() {
        require_compatible(&pair, cfg.thresholds.tol_compat)?;
    }
    let mut writer = None;
    let mut csv_path = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("diagnostics.csv");
        let mut w = csv::Writer::from_writer(File::create(&path)?);
        w.write_record(CSV_HEADER)?;
        writer = Some(w);
        csv_path = Some(path);
    }
    let mut state = FlowState::initial(pair, cfg)?;
    let mut rows = vec![state.diagnostics];
    let emit = |d: &Diagnostics, writer: &mut Option<csv::Writer<File>>| -> Result<(), FlowError> {
        if let Some(w) = writer.as_mut() {
            w.write_record(d.csv_record())?;
            w.flush()?;
        }
        Ok(())
    };
    emit(&state.diagnostics, &mut writer)?;
    if let (Some(dir), Some(_)) = (out_dir, cfg.snapshot_every) {
        snapshot(dir, "step_000000", &state)?;
    }
    let mut error = None;
    let t_stop = cfg.t_end * (1.0 - 1e-12);
    while state.t < t_stop && cfg.max_steps.is_none_or(|m| state.step < m) {
        match step(&state, cfg) {
            Ok(next) => {
                state = next;
                rows.push(state.diagnostics);
                emit(&state.diagnostics, &mut writer)?;
                if let (Some(dir), Some(k)) = (out_dir, cfg.snapshot_every) {
                    if state.step % k == 0 {
                        snapshot(dir, &format!("step_{:06}", state.step), &state)?;
                    }
                }
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    if state.diagnostics.max_rm.is_none() {
        // the last state always carries the full monitors
        let d = &state.diagnostics;
        let mut full = diagnose(&state.pair, d.step, d.t, d.dt, true, None, cfg)?;
        full.volume_increased = d.volume_increased;
        state.diagnostics = full;
    }
    if let Some(dir) = out_dir {
        snapshot(dir, "final", &state)?;
    }
    Ok(RunOutcome { state, rows, error, csv_path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::GridSpec;
    use std::f64::consts::PI;

    fn warped_pair(grid: &GridSpec, b: impl Fn(&[f64]) -> f64) -> HermitianPair {
        let omega = FormField::from_fn(grid, 2, |x, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[0] = 1.0;
            out[5] = b(x);
        });
        HermitianPair::new(omega, AlmostComplexField::standard(grid)).unwrap()
    }

    #[test]
    fn config_validation_names_field() {
        let mut c = FlowConfig::new(FlowKind::Deturck, 1.0);
        assert!(c.validate().is_ok());
        c.cfl_sigma = 1.5;
        match c.validate() {
            Err(FlowError::InvalidConfig { field, .. }) => assert_eq!(field, "cfl_sigma"),
            other => panic!("{other:?}"),
        }
        let mut c = FlowConfig::new(FlowKind::LaplacianExploratory, 1.0);
        assert!(c.validate().is_err());
        c.allow_exploratory = true;
        assert!(c.validate().is_ok());
        assert!(FlowConfig::new(FlowKind::TamedDstard, 0.0).validate().is_err());
        assert_eq!("dstard_ricci".parse::<FlowKind>().unwrap(), FlowKind::DstardRicci);
    }

    #[test]
    fn standard_pair_is_fixed_for_every_kind() {
        let g = GridSpec::cubic(4, 4, 2.0 * PI).unwrap();
        let pair = HermitianPair::standard(&g);
        for kind in FlowKind::ALL {
            let r = rhs(&pair, kind).unwrap();
            assert_eq!(r.theta.max_abs(), 0.0, "{kind:?}");
            if let Some(k) = r.k {
                assert_eq!(k.max_abs(), 0.0, "{kind:?}");
            }
        }
        assert_eq!(deturck_x(&pair).max_abs(), 0.0);
        assert_eq!(k2(&pair).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn warped_tamed_rhs_matches_b_equation() {
        let n = 64;
        let g = GridSpec::new(vec![n, 4, 4, 4], vec![2.0 * PI; 4]).unwrap();
        let b = |x: &[f64]| (0.1 * x[0].cos()).exp();
        let pair = warped_pair(&g, b);
        let r = rhs(&pair, FlowKind::TamedDstard).unwrap();
        assert!(r.k.is_none());
        let h = 2.0 * PI / n as f64;
        let mut worst = 0.0f64;
        for p in 0..g.npoints() {
            let x = g.coords(p);
            // Δb − |∇b|²/b = −0.1 cos x · b
            let expected = -0.1 * x[0].cos() * b(&x);
            let th = r.theta.at(p);
            worst = worst.max((th[5] - expected).abs());
            for c in 0..5 {
                assert!(th[c].abs() < 1e-15);
            }
        }
        assert!(worst < 0.5 * h * h, "{worst}");
        // θ is J₀-invariant, so K₁ vanishes
        assert!(k1(&pair, &r.theta).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn theta_has_no_second_derivative_coupling_to_j() {
        // Δθ from a one-point J bump scales with |∂ω|; K₂ responds at O(1/h²)
        let g = GridSpec::new(vec![16, 16, 4, 4], vec![2.0 * PI; 4]).unwrap();
        let bump = |j: &TensorField| {
            let mut j = j.clone();
            let p0 = 5 * g.stride(0) + 7 * g.stride(1);
            let d = 4;
            // rotate J slightly in the (0,2) plane at p0: J' = R J R⁻¹
            let eps: f64 = 1e-3;
            let (c, s) = (eps.cos(), eps.sin());
            let mut r = [0.0; 16];
            let mut ri = [0.0; 16];
            for i in 0..4 {
                r[i * 4 + i] = 1.0;
                ri[i * 4 + i] = 1.0;
            }
            r[0] = c;
            r[2] = -s;
            r[8] = s;
            r[10] = c;
            ri[0] = c;
            ri[2] = s;
            ri[8] = -s;
            ri[10] = c;
            let m = j.at(p0).to_vec();
            let mut t = [0.0; 16];
            linalg::mat_mul(&r, &m, d, &mut t);
            linalg::mat_mul(&t, &ri, d, &mut j.data_mut()[p0 * 16..(p0 + 1) * 16]);
            j
        };
        let mut responses = Vec::new();
        for amp in [0.0, 0.05, 0.1] {
            let omega = FormField::from_fn(&g, 2, |x, out| {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[0] = 1.0;
                out[5] = 1.0 + amp * (x[0] + 2.0 * x[1]).sin();
            });
            let j0 = AlmostComplexField::standard(&g);
            let jb = AlmostComplexField::new(bump(j0.tensor())).unwrap();
            // −d*dω + L_Xω and K₂ at (ω, J)
            let eval = |j: AlmostComplexField| {
                let pair = HermitianPair::new(omega.clone(), j).unwrap();
                let x = deturck_x(&pair);
                let th = exterior::dstar_d(pair.omega(), pair.metric())
                    .unwrap()
                    .scale(-1.0)
                    .add(&exterior::lie_derivative_form(&x, pair.omega()));
                (th, k2(&pair).unwrap())
            };
            let a = eval(j0.clone());
            let b = eval(jb);
            responses.push((amp, a.0.sub(&b.0).max_abs(), a.1.sub(&b.1).max_abs()));
        }
        assert!(responses[0].1 < 1e-15, "{responses:?}");
        assert!(responses[2].1 > responses[1].1);
        assert!(responses[2].1 / 0.1 < 10.0 * responses[1].1 / 0.05);
        // K₂ feels the bump through second differences even for constant ω
        assert!(responses[0].2 > 1e-4, "{responses:?}");
    }

    #[test]
    fn fixed_point_run_and_csv() {
        let g = GridSpec::cubic(4, 4, 2.0 * PI).unwrap();
        let pair = HermitianPair::standard(&g);
        let mut cfg = FlowConfig::new(FlowKind::CompatibleDstard, 1.0);
        cfg.max_steps = Some(3);
        let dir = std::env::temp_dir().join(format!("hermflow-flow-{}", std::process::id()));
        let out = run(pair.clone(), &cfg, Some(&dir)).unwrap();
        assert!(out.error.is_none());
        assert_eq!(out.rows.len(), 4);
        assert_eq!(out.state.pair.omega(), pair.omega());
        let text = std::fs::read_to_string(out.csv_path.unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(text.lines().count(), 5);
        std::fs::remove_dir_all(dir).ok();
    }
}
