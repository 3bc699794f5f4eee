//! TOML run configuration and the initial-data presets.

use hermflow::exact::{self, WarpedKind};
use hermflow::fields::{read_snapshot, AnyField, FormField, GridField, GridSpec, ScalarField};
use hermflow::flows::FlowConfig;
use hermflow::hermitian::{standard_omega, AlmostComplexField, HermitianPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("initial data: {0}")]
    Initial(String),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for presets that draw random data.
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    pub output_dir: Option<PathBuf>,
    pub grid: GridConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub flow: FlowConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub sizes: Vec<usize>,
    /// Side lengths; 2π on every axis when omitted.
    pub lengths: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    /// Constant (ω₀, J₀).
    Standard,
    /// ω = c·dx∧dy + exp(amplitude·cos x) dz∧dw on T⁴, with J₀ and
    /// c = base_scale. The x-diffusivity of the flow is 1/c.
    T4Warped {
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default = "default_base_scale")]
        base_scale: f64,
    },
    /// ω = dx∧dy + f(dx²∧dx³ + …), f = 1 + amplitude·cos x, with J₀.
    ProductF {
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    /// ω_std + eps·α with α a flat eigen-2-form of eigenvalue lambda.
    Eigenform {
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    /// ω₀ plus random lowest Fourier modes in every component, with J₀.
    /// Tamed for small amplitude, not compatible.
    RandomTamed {
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    /// ω and J read from snapshot headers written by a previous run.
    /// Relative paths are resolved against the config file's directory.
    Snapshot { omega: PathBuf, j: PathBuf },
}

fn default_amplitude() -> f64 {
    0.1
}

fn default_base_scale() -> f64 {
    1.0
}

fn default_lambda() -> f64 {
    1.0
}

fn default_eps() -> f64 {
    0.01
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg: RunConfig = toml::from_str(&text)?;
        if let InitialConfig::Snapshot { omega, j } = &mut cfg.initial {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [omega, j] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<GridSpec, ConfigError> {
        let n = self.grid.sizes.len();
        let lengths = self.grid.lengths.clone().unwrap_or_else(|| vec![2.0 * PI; n]);
        if lengths.len() != n {
            return Err(invalid("grid.lengths", format!("expected {n} entries, got {}", lengths.len())));
        }
        GridSpec::new(self.grid.sizes.clone(), lengths).map_err(|e| invalid("grid", e.to_string()))
    }

    /// Checks everything that does not need the initial data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid()?;
        self.flow.validate().map_err(|e| match e {
            hermflow::flows::FlowError::InvalidConfig { field, reason } => invalid(&format!("flow.{field}"), reason),
            other => invalid("flow", other.to_string()),
        })
    }

    pub fn initial_pair(&self) -> Result<HermitianPair, ConfigError> {
        let grid = self.grid()?;
        let d = grid.dim();
        let init = |e: &dyn std::fmt::Display| ConfigError::Initial(e.to_string());
        match &self.initial {
            InitialConfig::Standard => Ok(HermitianPair::standard(&grid)),
            InitialConfig::T4Warped { amplitude, base_scale } => {
                if d != 4 {
                    return Err(invalid("initial.preset", format!("t4_warped needs a 4-dimensional grid, got {d}")));
                }
                if !(*base_scale > 0.0) {
                    return Err(invalid("initial.base_scale", "must be positive"));
                }
                let b0 = ScalarField::from_fn(&grid, |x| (amplitude * x[0].cos()).exp());
                let pair = exact::warped_pair(WarpedKind::T4B, &b0).map_err(|e| init(&e))?;
                let mut omega = pair.omega().clone();
                // component 0 is dx⁰∧dx¹
                omega.data_mut().chunks_mut(6).for_each(|c| c[0] = *base_scale);
                HermitianPair::new(omega, pair.j().clone()).map_err(|e| init(&e))
            }
            InitialConfig::ProductF { amplitude } => {
                if d < 4 {
                    return Err(invalid("initial.preset", "product_f needs a grid of dimension 4 or 6"));
                }
                let f0 = ScalarField::from_fn(&grid, |x| 1.0 + amplitude * x[0].cos());
                exact::warped_pair(WarpedKind::ProductF { n: d / 2 - 1 }, &f0).map_err(|e| init(&e))
            }
            InitialConfig::Eigenform { lambda, eps } => {
                let eig = exact::eigenform_project(&grid, *lambda, *eps).map_err(|e| init(&e))?;
                eig.pair().map_err(|e| init(&e))
            }
            InitialConfig::RandomTamed { amplitude } => {
                let pair = random_tamed(&grid, *amplitude, self.seed);
                pair.map_err(|e| init(&e))
            }
            InitialConfig::Snapshot { omega, j } => {
                let omega = match read_snapshot(omega).map_err(|e| init(&e))?.1 {
                    AnyField::Form(f) if f.degree() == 2 => f,
                    _ => return Err(invalid("initial.omega", "snapshot is not a 2-form")),
                };
                let j = match read_snapshot(j).map_err(|e| init(&e))?.1 {
                    AnyField::Tensor(t) if t.valence() == (1, 1) => t,
                    _ => return Err(invalid("initial.j", "snapshot is not a (1,1) tensor")),
                };
                if omega.grid() != j.grid() {
                    return Err(invalid("initial", "omega and J snapshots live on different grids"));
                }
                if omega.grid() != &grid {
                    return Err(invalid("grid", "does not match the snapshot grid"));
                }
                let j = AlmostComplexField::new(j).map_err(|e| init(&e))?;
                HermitianPair::new(omega, j).map_err(|e| init(&e))
            }
        }
    }
}

fn random_tamed(grid: &GridSpec, amplitude: f64, seed: u64) -> Result<HermitianPair, hermflow::hermitian::HermitianError> {
    let d = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ncomp = d * (d - 1) / 2;
    // per component: (axis, cos coefficient, sin coefficient)
    let modes: Vec<(usize, f64, f64)> =
        (0..ncomp).map(|_| (rng.gen_range(0..d), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let lengths = grid.lengths().to_vec();
    let pert = FormField::from_fn(grid, 2, |x, out| {
        for (c, &(axis, a, b)) in modes.iter().enumerate() {
            let phase = 2.0 * PI * x[axis] / lengths[axis];
            out[c] = amplitude * (a * phase.cos() + b * phase.sin());
        }
    });
    HermitianPair::new(standard_omega(grid).add(&pert), AlmostComplexField::standard(grid))
}
