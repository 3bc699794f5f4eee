//! Periodic structured grids and the field types that live on them.
//!
//! Storage is collocated and point-major: component `c` of point `p` sits at
//! `data[p * ncomp + c]`. Points are ordered row-major with axis 0 slowest.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported dimension (tori T², T⁴, T⁶).
pub const MAX_DIM: usize = 6;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("axis {axis} out of range for dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("field contains non-finite values")]
    NonFinite,
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("form degree {degree} exceeds dimension {dim}")]
    DegreeOverflow { degree: usize, dim: usize },
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    sizes: Vec<usize>,
    lengths: Vec<f64>,
}

impl GridSpec {
    pub fn new(sizes: Vec<usize>, lengths: Vec<f64>) -> Result<Self, FieldError> {
        let dim = sizes.len();
        if !matches!(dim, 2 | 4 | 6) {
            return Err(FieldError::InvalidGrid(format!("dimension {dim} is not one of 2, 4, 6")));
        }
        if lengths.len() != dim {
            return Err(FieldError::InvalidGrid("sizes and lengths differ in length".into()));
        }
        if let Some(n) = sizes.iter().find(|&&n| n < 4) {
            return Err(FieldError::InvalidGrid(format!("axis size {n} < 4")));
        }
        if lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(FieldError::InvalidGrid("periods must be positive".into()));
        }
        Ok(Self { dim, sizes, lengths })
    }

    /// Equal sizes and periods on every axis.
    pub fn cubic(dim: usize, n: usize, length: f64) -> Result<Self, FieldError> {
        Self::new(vec![n; dim], vec![length; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.sizes[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn npoints(&self) -> usize {
        self.sizes.iter().product()
    }

    /// Volume of a grid cell, Π h_a.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    /// Point stride of an axis in the row-major ordering.
    pub fn stride(&self, axis: usize) -> usize {
        self.sizes[axis + 1..].iter().product()
    }

    pub fn check_axis(&self, axis: usize) -> Result<(), FieldError> {
        if axis < self.dim {
            Ok(())
        } else {
            Err(FieldError::AxisOutOfRange { axis, dim: self.dim })
        }
    }

    /// Integer coordinates of point `p`.
    pub fn index_of(&self, p: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        let mut rest = p;
        for a in (0..self.dim).rev() {
            idx[a] = rest % self.sizes[a];
            rest /= self.sizes[a];
        }
        idx
    }

    /// Physical coordinates x_a = i_a h_a of point `p`.
    pub fn coords(&self, p: usize) -> [f64; MAX_DIM] {
        let idx = self.index_of(p);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = idx[a] as f64 * self.spacing(a);
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    Scalar,
    Tensor { upper: usize, lower: usize },
    Form { degree: usize },
}

/// Common view of every component array on a grid.
pub trait GridField: Clone + Sized {
    fn grid(&self) -> &GridSpec;
    fn kind(&self) -> FieldKind;
    fn data(&self) -> &[f64];
    fn data_mut(&mut self) -> &mut [f64];
    /// Same grid and shape, new component array.
    fn with_data(&self, data: Vec<f64>) -> Self;

    fn ncomp(&self) -> usize {
        match self.kind() {
            FieldKind::Scalar => 1,
            FieldKind::Tensor { upper, lower } => self.grid().dim().pow((upper + lower) as u32),
            FieldKind::Form { degree } => binomial(self.grid().dim(), degree),
        }
    }

    fn at(&self, p: usize) -> &[f64] {
        let nc = self.ncomp();
        &self.data()[p * nc..(p + 1) * nc]
    }

    fn max_abs(&self) -> f64 {
        self.data().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn is_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    fn zeros_like(&self) -> Self {
        self.with_data(vec![0.0; self.data().len()])
    }

    /// Pointwise linear combination `self + s * other`.
    fn axpy(&self, s: f64, other: &Self) -> Self {
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + s * b).collect();
        self.with_data(data)
    }

    fn scale(&self, s: f64) -> Self {
        self.with_data(self.data().iter().map(|v| s * v).collect())
    }

    fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    fn add(&self, other: &Self) -> Self {
        self.axpy(1.0, other)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self, FieldError> {
        check_len(grid.npoints(), values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite);
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        Self { values: vec![c; grid.npoints()], grid: grid.clone() }
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.npoints()).map(|p| f(&grid.coords(p)[..grid.dim()])).collect();
        Self { grid: grid.clone(), values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_data(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

impl GridField for ScalarField {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }
    fn kind(&self) -> FieldKind {
        FieldKind::Scalar
    }
    fn data(&self) -> &[f64] {
        &self.values
    }
    fn data_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.values.len());
        Self { grid: self.grid.clone(), values: data }
    }
}

/// Tensor of valence (upper, lower). Component multi-index is the upper
/// indices followed by the lower ones, flattened row-major, so J^j_i sits at
/// `j * dim + i` and Γ^k_ij at `(k * dim + i) * dim + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: GridSpec,
    upper: usize,
    lower: usize,
    data: Vec<f64>,
}

impl TensorField {
    pub fn new(grid: GridSpec, upper: usize, lower: usize, data: Vec<f64>) -> Result<Self, FieldError> {
        let nc = grid.dim().pow((upper + lower) as u32);
        check_len(grid.npoints() * nc, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite);
        }
        Ok(Self { grid, upper, lower, data })
    }

    pub fn zeros(grid: &GridSpec, upper: usize, lower: usize) -> Self {
        let nc = grid.dim().pow((upper + lower) as u32);
        Self { grid: grid.clone(), upper, lower, data: vec![0.0; grid.npoints() * nc] }
    }

    /// Fill by a per-point closure writing all components.
    pub fn from_fn(grid: &GridSpec, upper: usize, lower: usize, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let mut t = Self::zeros(grid, upper, lower);
        let nc = t.ncomp();
        for p in 0..grid.npoints() {
            f(&grid.coords(p)[..grid.dim()], &mut t.data[p * nc..(p + 1) * nc]);
        }
        t
    }

    /// The same matrix at every point (valence with two indices).
    pub fn constant(grid: &GridSpec, upper: usize, lower: usize, comps: &[f64]) -> Self {
        let mut data = Vec::with_capacity(grid.npoints() * comps.len());
        for _ in 0..grid.npoints() {
            data.extend_from_slice(comps);
        }
        Self { grid: grid.clone(), upper, lower, data }
    }

    pub fn identity(grid: &GridSpec) -> Self {
        let d = grid.dim();
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        Self::constant(grid, 1, 1, &m)
    }

    pub fn valence(&self) -> (usize, usize) {
        (self.upper, self.lower)
    }

    /// Component at point `p` for the flattened index list (upper then lower).
    pub fn get(&self, p: usize, idx: &[usize]) -> f64 {
        let d = self.grid.dim();
        let c = idx.iter().fold(0, |acc, &i| acc * d + i);
        self.data[p * self.ncomp() + c]
    }

    /// Reinterpret the valence without touching components (index raising
    /// bookkeeping is the caller's responsibility).
    pub fn relabel(mut self, upper: usize, lower: usize) -> Self {
        assert_eq!(self.upper + self.lower, upper + lower);
        self.upper = upper;
        self.lower = lower;
        self
    }
}

impl GridField for TensorField {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }
    fn kind(&self) -> FieldKind {
        FieldKind::Tensor { upper: self.upper, lower: self.lower }
    }
    fn data(&self) -> &[f64] {
        &self.data
    }
    fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self { grid: self.grid.clone(), upper: self.upper, lower: self.lower, data }
    }
}

/// Differential form α = Σ_{I increasing} a_I dx^I with unit coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FormField {
    grid: GridSpec,
    degree: usize,
    data: Vec<f64>,
}

impl FormField {
    pub fn new(grid: GridSpec, degree: usize, data: Vec<f64>) -> Result<Self, FieldError> {
        if degree > grid.dim() {
            return Err(FieldError::DegreeOverflow { degree, dim: grid.dim() });
        }
        check_len(grid.npoints() * binomial(grid.dim(), degree), data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite);
        }
        Ok(Self { grid, degree, data })
    }

    pub fn zeros(grid: &GridSpec, degree: usize) -> Self {
        assert!(degree <= grid.dim(), "form degree exceeds dimension");
        let nc = binomial(grid.dim(), degree);
        Self { grid: grid.clone(), degree, data: vec![0.0; grid.npoints() * nc] }
    }

    /// Fill by a per-point closure writing the increasing-index components.
    pub fn from_fn(grid: &GridSpec, degree: usize, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let mut a = Self::zeros(grid, degree);
        let nc = a.ncomp();
        for p in 0..grid.npoints() {
            f(&grid.coords(p)[..grid.dim()], &mut a.data[p * nc..(p + 1) * nc]);
        }
        a
    }

    pub fn constant(grid: &GridSpec, degree: usize, comps: &[f64]) -> Self {
        let mut a = Self::zeros(grid, degree);
        assert_eq!(comps.len(), a.ncomp());
        for chunk in a.data.chunks_mut(comps.len()) {
            chunk.copy_from_slice(comps);
        }
        a
    }

    /// Build a two-form from a per-point antisymmetric matrix closure.
    pub fn two_form_from_matrix(grid: &GridSpec, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let d = grid.dim();
        let basis = form_basis(d, 2);
        Self::from_fn(grid, 2, |x, out| {
            let mut local = vec![0.0; d * d];
            f(x, &mut local);
            for (c, idx) in basis.indices.iter().enumerate() {
                out[c] = local[idx[0] * d + idx[1]];
            }
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Antisymmetric extension: component for an arbitrary index list.
    pub fn component(&self, p: usize, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.degree);
        match sort_sign(idx) {
            Some((sign, mask)) => {
                let b = form_basis(self.grid.dim(), self.degree);
                sign * self.data[p * b.len() + b.position(mask)]
            }
            None => 0.0,
        }
    }

    /// Component a_ij of a two-form, antisymmetric in (i, j).
    pub fn comp2(&self, p: usize, i: usize, j: usize) -> f64 {
        self.component(p, &[i, j])
    }

    /// Full antisymmetric matrix of a two-form at point `p`, row-major.
    pub fn matrix_at(&self, p: usize, out: &mut [f64]) {
        assert_eq!(self.degree, 2);
        let d = self.grid.dim();
        let b = form_basis(d, 2);
        let nc = b.len();
        out[..d * d].iter_mut().for_each(|v| *v = 0.0);
        for (c, idx) in b.indices.iter().enumerate() {
            let v = self.data[p * nc + c];
            out[idx[0] * d + idx[1]] = v;
            out[idx[1] * d + idx[0]] = -v;
        }
    }

    /// Component ScalarField for increasing multi-index position `c`.
    pub fn component_field(&self, c: usize) -> ScalarField {
        let nc = self.ncomp();
        let values = (0..self.grid.npoints()).map(|p| self.data[p * nc + c]).collect();
        ScalarField { grid: self.grid.clone(), values }
    }

    /// Two-form as a (0,2) tensor field a_ij.
    pub fn to_tensor(&self) -> TensorField {
        assert_eq!(self.degree, 2);
        let d = self.grid.dim();
        let mut t = TensorField::zeros(&self.grid, 0, 2);
        for p in 0..self.grid.npoints() {
            self.matrix_at(p, &mut t.data[p * d * d..(p + 1) * d * d]);
        }
        t
    }

    /// Antisymmetric part of a (0,2) tensor read as a two-form, a_ij = ½(t_ij − t_ji).
    pub fn from_tensor(t: &TensorField) -> Self {
        assert_eq!(t.valence(), (0, 2));
        let d = t.grid.dim();
        let b = form_basis(d, 2);
        let mut a = Self::zeros(&t.grid, 2);
        let nc = b.len();
        for p in 0..t.grid.npoints() {
            let m = &t.data[p * d * d..(p + 1) * d * d];
            for (c, idx) in b.indices.iter().enumerate() {
                let (i, j) = (idx[0], idx[1]);
                a.data[p * nc + c] = 0.5 * (m[i * d + j] - m[j * d + i]);
            }
        }
        a
    }
}

impl GridField for FormField {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }
    fn kind(&self) -> FieldKind {
        FieldKind::Form { degree: self.degree }
    }
    fn data(&self) -> &[f64] {
        &self.data
    }
    fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self { grid: self.grid.clone(), degree: self.degree, data }
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), FieldError> {
    if expected == got {
        Ok(())
    } else {
        Err(FieldError::LengthMismatch { expected, got })
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Increasing multi-indices of one degree in one dimension, in lexicographic
/// order, with a bitmask lookup.
#[derive(Debug)]
pub struct FormBasis {
    pub dim: usize,
    pub degree: usize,
    pub indices: Vec<Vec<usize>>,
    pub masks: Vec<u32>,
    lookup: Vec<usize>,
}

impl FormBasis {
    fn build(dim: usize, degree: usize) -> Self {
        let mut indices = Vec::new();
        let mut cur = Vec::with_capacity(degree);
        fn rec(start: usize, dim: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if left == 0 {
                out.push(cur.clone());
                return;
            }
            for i in start..dim {
                cur.push(i);
                rec(i + 1, dim, left - 1, cur, out);
                cur.pop();
            }
        }
        rec(0, dim, degree, &mut cur, &mut indices);
        let masks: Vec<u32> = indices.iter().map(|idx| idx.iter().map(|&i| 1u32 << i).sum()).collect();
        let mut lookup = vec![usize::MAX; 1 << dim];
        for (c, &m) in masks.iter().enumerate() {
            lookup[m as usize] = c;
        }
        Self { dim, degree, indices, masks, lookup }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Position of the multi-index with the given bitmask.
    pub fn position(&self, mask: u32) -> usize {
        let c = self.lookup[mask as usize];
        debug_assert!(c != usize::MAX, "mask has wrong degree");
        c
    }
}

/// Cached basis for `dim ≤ 6`.
pub fn form_basis(dim: usize, degree: usize) -> &'static FormBasis {
    static TABLE: OnceLock<Vec<Vec<FormBasis>>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        (0..=MAX_DIM).map(|d| (0..=d).map(|p| FormBasis::build(d, p)).collect()).collect()
    });
    &table[dim][degree]
}

/// Sign of the permutation sorting `idx` and the bitmask of its entries, or
/// `None` on a repeated index.
pub fn sort_sign(idx: &[usize]) -> Option<(f64, u32)> {
    let mut mask = 0u32;
    let mut inversions = 0;
    for (a, &i) in idx.iter().enumerate() {
        if mask & (1 << i) != 0 {
            return None;
        }
        mask |= 1 << i;
        inversions += idx[a + 1..].iter().filter(|&&j| j < i).count();
    }
    Some((if inversions % 2 == 0 { 1.0 } else { -1.0 }, mask))
}

/// Sign of dx^I ∧ dx^K relative to the increasing order of I ∪ K (0 if they
/// overlap), for disjoint bitmasks.
pub fn merge_sign(mask_i: u32, mask_k: u32) -> f64 {
    if mask_i & mask_k != 0 {
        return 0.0;
    }
    // count pairs (i in I, k in K) with k < i
    let mut inv = 0u32;
    let mut m = mask_i;
    while m != 0 {
        let i = m.trailing_zeros();
        inv += (mask_k & ((1u32 << i) - 1)).count_ones();
        m &= m - 1;
    }
    if inv % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Visit every point with the indices of its periodic neighbours,
/// `plus[a]` = x + h e_a and `minus[a]` = x − h e_a.
pub fn for_each_point(grid: &GridSpec, mut f: impl FnMut(usize, &[usize; MAX_DIM], &[usize; MAX_DIM])) {
    let d = grid.dim();
    let sizes = grid.sizes();
    let mut strides = [0; MAX_DIM];
    for (a, s) in strides.iter_mut().enumerate().take(d) {
        *s = grid.stride(a);
    }
    let mut idx = [0usize; MAX_DIM];
    let mut plus = [0usize; MAX_DIM];
    let mut minus = [0usize; MAX_DIM];
    for p in 0..grid.npoints() {
        for a in 0..d {
            let s = strides[a];
            plus[a] = if idx[a] + 1 == sizes[a] { p + s - sizes[a] * s } else { p + s };
            minus[a] = if idx[a] == 0 { p + (sizes[a] - 1) * s } else { p - s };
        }
        f(p, &plus, &minus);
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < sizes[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Apply a periodic three-point stencil along `axis` to every component:
/// `out = f(v[x - h], v[x], v[x + h])` component-wise.
fn stencil_axis(
    grid: &GridSpec,
    data: &[f64],
    ncomp: usize,
    axis: usize,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Vec<f64> {
    let n = grid.sizes()[axis];
    let s = grid.stride(axis);
    let block = n * s;
    let outer = grid.npoints() / block;
    let row = s * ncomp;
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        let base = o * block * ncomp;
        for i in 0..n {
            let im = (i + n - 1) % n;
            let ip = (i + 1) % n;
            let cur = &data[base + i * row..base + (i + 1) * row];
            let prev = &data[base + im * row..base + (im + 1) * row];
            let next = &data[base + ip * row..base + (ip + 1) * row];
            let dst = &mut out[base + i * row..base + (i + 1) * row];
            for k in 0..row {
                dst[k] = f(prev[k], cur[k], next[k]);
            }
        }
    }
    out
}

/// Centered difference ∂_a of every component, (v₊ − v₋)/(2h_a).
pub fn partial<F: GridField>(field: &F, axis: usize) -> Result<F, FieldError> {
    field.grid().check_axis(axis)?;
    let c = 0.5 / field.grid().spacing(axis);
    let out = stencil_axis(field.grid(), field.data(), field.ncomp(), axis, |m, _, p| (p - m) * c);
    Ok(field.with_data(out))
}

/// Second difference: three-point stencil for a = b, composed centered
/// differences for a ≠ b. The composition always runs the lower axis first,
/// so ∂_a∂_b and ∂_b∂_a return bit-identical fields.
pub fn second_partial<F: GridField>(field: &F, a: usize, b: usize) -> Result<F, FieldError> {
    field.grid().check_axis(a)?;
    field.grid().check_axis(b)?;
    if a == b {
        let h = field.grid().spacing(a);
        let c = 1.0 / (h * h);
        let out = stencil_axis(field.grid(), field.data(), field.ncomp(), a, |m, v, p| (p - 2.0 * v + m) * c);
        Ok(field.with_data(out))
    } else {
        partial(&partial(field, a.min(b))?, a.max(b))
    }
}

/// Centered differences along every axis, `out[a]` = ∂_a field.
pub fn gradient<F: GridField>(field: &F) -> Vec<F> {
    (0..field.grid().dim()).map(|a| partial(field, a).expect("axis in range")).collect()
}

/// Rectangle rule Σ v · Π h_a on the periodic grid.
pub fn integrate(density: &ScalarField) -> f64 {
    density.values.iter().sum::<f64>() * density.grid.cell_volume()
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    grid: GridSpec,
    name: String,
    #[serde(flatten)]
    kind: FieldKind,
    count: usize,
    encoding: String,
    payload: String,
}

/// Write `<path>.json` (header) and `<path>.bin` (little-endian f64 payload).
pub fn write_snapshot<F: GridField>(path: &Path, name: &str, field: &F) -> Result<PathBuf, FieldError> {
    let bin = path.with_extension("bin");
    let json = path.with_extension("json");
    let header = SnapshotHeader {
        grid: field.grid().clone(),
        name: name.to_string(),
        kind: field.kind(),
        count: field.data().len(),
        encoding: "float64-le".into(),
        payload: bin.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let mut bytes = Vec::with_capacity(field.data().len() * 8);
    for v in field.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, bytes)?;
    let mut f = fs::File::create(&json)?;
    f.write_all(serde_json::to_string_pretty(&header).map_err(|e| FieldError::Format(e.to_string()))?.as_bytes())?;
    Ok(json)
}

/// Any field read back from a snapshot header.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyField {
    Scalar(ScalarField),
    Tensor(TensorField),
    Form(FormField),
}

pub fn read_snapshot(header_path: &Path) -> Result<(String, AnyField), FieldError> {
    let text = fs::read_to_string(header_path)?;
    let header: SnapshotHeader = serde_json::from_str(&text).map_err(|e| FieldError::Format(e.to_string()))?;
    if header.encoding != "float64-le" {
        return Err(FieldError::Format(format!("unsupported encoding {}", header.encoding)));
    }
    let grid = GridSpec::new(header.grid.sizes.clone(), header.grid.lengths.clone())?;
    let bin = header_path.with_file_name(&header.payload);
    let bytes = fs::read(bin)?;
    if bytes.len() != header.count * 8 {
        return Err(FieldError::LengthMismatch { expected: header.count * 8, got: bytes.len() });
    }
    let data: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let field = match header.kind {
        FieldKind::Scalar => AnyField::Scalar(ScalarField::new(grid, data)?),
        FieldKind::Tensor { upper, lower } => AnyField::Tensor(TensorField::new(grid, upper, lower, data)?),
        FieldKind::Form { degree } => AnyField::Form(FormField::new(grid, degree, data)?),
    };
    Ok((header.name, field))
}
