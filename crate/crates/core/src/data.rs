//! Initial data: closed-form profiles, scaled ground states and CSV files.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{sample, sample_with_velocity, RadialGrid, RadialState};
use crate::ground_state::{w_value, GroundStateResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialData {
    Zero,
    /// `λ μ^{1/2} W(μr) exp(-(μr/cutoff)²)`; no cutoff when `cutoff` is absent.
    ConcentratedW {
        amplitude: f64,
        concentration: f64,
        cutoff: Option<f64>,
    },
    /// `(a e^{-r²/w²}, b e^{-r²/w²})`.
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        velocity: f64,
    },
    /// `a e · exp(-1/(1 - r²/R²))` on `r < R`, zero outside.
    Bump { amplitude: f64, radius: f64 },
    /// `λ Q(r/s)` for the computed ground state.
    GroundState {
        amplitude: f64,
        #[serde(default = "unit")]
        dilation: f64,
    },
    /// Columns `r,u,v` written by [`RadialState::write_csv`].
    Csv { path: PathBuf },
}

fn unit() -> f64 {
    1.0
}

/// Smooth compactly supported bump with peak value `amplitude`.
pub fn bump(r: f64, amplitude: f64, radius: f64) -> f64 {
    if r >= radius {
        0.0
    } else {
        amplitude * (1.0 - 1.0 / (1.0 - (r / radius).powi(2))).exp()
    }
}

/// Cubic Hermite interpolation of a nodal profile with known derivative;
/// zero beyond the last node.
pub fn hermite(radii: &[f64], f: &[f64], df: &[f64], r: f64) -> f64 {
    let n = radii.len();
    if r >= radii[n - 1] {
        return 0.0;
    }
    let k = radii.partition_point(|&x| x <= r).clamp(1, n - 1) - 1;
    let h = radii[k + 1] - radii[k];
    let t = (r - radii[k]) / h;
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * f[k]
        + (t3 - 2.0 * t2 + t) * h * df[k]
        + (-2.0 * t3 + 3.0 * t2) * f[k + 1]
        + (t3 - t2) * h * df[k + 1]
}

impl InitialData {
    /// Samples the data on `grid`; `ground_state` is required for
    /// [`InitialData::GroundState`].
    pub fn build(&self, grid: Arc<RadialGrid>, ground_state: Option<&GroundStateResult>) -> Result<RadialState> {
        let d = grid.dim();
        match self {
            InitialData::Zero => Ok(RadialState::zero(grid)),
            InitialData::ConcentratedW {
                amplitude,
                concentration,
                cutoff,
            } => {
                if d < 3 {
                    return Err(LabError::Config(format!("W needs d >= 3, got {d}")));
                }
                let (a, mu) = (*amplitude, *concentration);
                if !(mu > 0.0) {
                    return Err(LabError::Config("concentration must be positive".into()));
                }
                let scale = mu.powf((d as f64 - 2.0) / 2.0);
                sample(grid, |r| {
                    let s = mu * r;
                    let cut = cutoff.map_or(1.0, |c| (-(s / c).powi(2)).exp());
                    a * scale * w_value(d, s) * cut
                })
            }
            InitialData::Gaussian {
                amplitude,
                width,
                velocity,
            } => {
                let w = *width;
                if !(w > 0.0) {
                    return Err(LabError::Config("width must be positive".into()));
                }
                sample_with_velocity(
                    grid,
                    |r| amplitude * (-(r / w).powi(2)).exp(),
                    |r| velocity * (-(r / w).powi(2)).exp(),
                )
            }
            InitialData::Bump { amplitude, radius } => {
                if !(*radius > 0.0) {
                    return Err(LabError::Config("radius must be positive".into()));
                }
                sample(grid, |r| bump(r, *amplitude, *radius))
            }
            InitialData::GroundState { amplitude, dilation } => {
                let gs = ground_state.ok_or_else(|| {
                    LabError::Config("ground-state data needs a computed ground state; run `groundstate` first".into())
                })?;
                if gs.q.dim() != d {
                    return Err(LabError::Config(format!(
                        "ground state has dimension {}, grid has {d}",
                        gs.q.dim()
                    )));
                }
                if !(*dilation > 0.0) {
                    return Err(LabError::Config("dilation must be positive".into()));
                }
                let radii = gs.q.grid.radii();
                sample(grid, |r| amplitude * hermite(radii, &gs.q.u, &gs.dq, r / dilation))
            }
            InitialData::Csv { path } => {
                let st = RadialState::read_csv(path, d)?;
                if st.u.len() != grid.len() || (st.grid.r_max() - grid.r_max()).abs() > 1e-9 * grid.r_max() {
                    return Err(LabError::Input(format!(
                        "{} does not match the configured grid",
                        path.display()
                    )));
                }
                Ok(st)
            }
        }
    }
}
