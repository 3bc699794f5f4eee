//! Refinement studies of the compatible d*d flow against the warped exact
//! solutions.

use hermflow::exact::{self, ExactError, WarpedKind};
use hermflow::fields::{FieldError, GridSpec, ScalarField};
use hermflow::flows::{self, FlowConfig, FlowError, FlowKind};
use std::f64::consts::PI;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("need at least two grids, got {0}")]
    TooFewGrids(usize),
    #[error("grid sizes must be increasing and at least 8, got {0:?}")]
    BadGrids(Vec<usize>),
    #[error("t_end must be positive, got {0}")]
    BadTime(f64),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// b₀ = e^{0.1cos x} on T⁴, grid N×4³.
    T4Warped,
    /// T²×T⁴ with n = 2, f₀ = 1 + 0.1cos x, grid N×4⁵.
    ProductF,
}

/// Known initial-data names that have no exact solution to compare with.
const WITHOUT_ORACLE: [&str; 3] = ["standard", "eigenform", "random_tamed"];

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "t4_warped" => Ok(Scenario::T4Warped),
            "product_f" => Ok(Scenario::ProductF),
            other if WITHOUT_ORACLE.contains(&other) => {
                Err(format!("scenario `{other}` has no exact oracle; use t4_warped or product_f"))
            }
            other => Err(format!("unknown scenario `{other}`; known: t4_warped, product_f")),
        }
    }
}

impl Scenario {
    fn grid(self, n: usize) -> Result<GridSpec, FieldError> {
        let sizes = match self {
            Scenario::T4Warped => vec![n, 4, 4, 4],
            Scenario::ProductF => vec![n, 4, 4, 4, 4, 4],
        };
        let dim = sizes.len();
        GridSpec::new(sizes, vec![2.0 * PI; dim])
    }

    fn kind(self) -> WarpedKind {
        match self {
            Scenario::T4Warped => WarpedKind::T4B,
            Scenario::ProductF => WarpedKind::ProductF { n: 2 },
        }
    }

    fn data(self, grid: &GridSpec) -> ScalarField {
        match self {
            Scenario::T4Warped => ScalarField::from_fn(grid, |x| (0.1 * x[0].cos()).exp()),
            Scenario::ProductF => ScalarField::from_fn(grid, |x| 1.0 + 0.1 * x[0].cos()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StudyRow {
    pub n: usize,
    pub h: f64,
    /// max |c_num − c_exact| of the warping coefficient at t_end.
    pub error: f64,
    /// Observed order against the previous row.
    pub order: Option<f64>,
}

pub fn study(scenario: Scenario, grids: &[usize], t_end: f64) -> Result<Vec<StudyRow>, StudyError> {
    if grids.len() < 2 {
        return Err(StudyError::TooFewGrids(grids.len()));
    }
    if grids.iter().any(|&n| n < 8) || grids.windows(2).any(|w| w[1] <= w[0]) {
        return Err(StudyError::BadGrids(grids.to_vec()));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(StudyError::BadTime(t_end));
    }
    let mut cfg = FlowConfig::new(FlowKind::CompatibleDstard, t_end);
    cfg.monitor_every = usize::MAX;
    let mut rows: Vec<StudyRow> = Vec::new();
    for &n in grids {
        let grid = scenario.grid(n)?;
        let data = scenario.data(&grid);
        let pair = exact::warped_pair(scenario.kind(), &data)?;
        let out = flows::run(pair, &cfg, None)?;
        if let Some(e) = out.error {
            return Err(e.into());
        }
        let want = exact::warped_coefficient(scenario.kind(), &data, out.state.t)?;
        let got = exact::warped_coefficient_of(out.state.pair.omega());
        let error = got.values().iter().zip(want.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let h = 2.0 * PI / n as f64;
        let order = rows.last().map(|prev| exact::observed_orders(&[prev.h, h], &[prev.error, error])[0]);
        rows.push(StudyRow { n, h, error, order });
    }
    Ok(rows)
}
