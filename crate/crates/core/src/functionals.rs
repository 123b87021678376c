//! Conserved and variational functionals of a radial state.
//!
//! All integrals use the grid's discrete inner product and Dirichlet form, so
//! the identities tying them to the discrete dynamics (energy conservation,
//! the virial identity) hold without an additional spatial error.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{RadialGrid, RadialState};
use crate::nonlinearity::NonlinearityModel;

/// Exponents `(α, β)` of the scaling family `e^{αλ} φ(x / e^{βλ})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPair {
    pub alpha: f64,
    pub beta: f64,
}

impl ScalingPair {
    /// Validates `α >= 0`, `2α + dβ >= 0`, `2α + (d-2)β >= 0`, `(α, β) != 0`.
    pub fn new(alpha: f64, beta: f64, dim: usize) -> Result<Self> {
        let pair = Self { alpha, beta };
        if !pair.is_admissible(dim) {
            return Err(LabError::Domain(format!(
                "inadmissible scaling pair ({alpha}, {beta}) in d = {dim}"
            )));
        }
        Ok(pair)
    }

    pub fn is_admissible(&self, dim: usize) -> bool {
        let d = dim as f64;
        let (a, b) = (self.alpha, self.beta);
        a.is_finite()
            && b.is_finite()
            && a >= 0.0
            && 2.0 * a + d * b >= 0.0
            && 2.0 * a + (d - 2.0) * b >= 0.0
            && (a != 0.0 || b != 0.0)
    }

    /// `K₀`: amplitude scaling.
    pub fn amplitude() -> Self {
        Self { alpha: 1.0, beta: 0.0 }
    }

    /// `K_∞`: `L^∞`-preserving dilation.
    pub fn dilation() -> Self {
        Self { alpha: 0.0, beta: 1.0 }
    }

    /// `K₂`: `L²`-preserving scaling `(d, -2)`.
    pub fn l2_preserving(dim: usize) -> Self {
        Self {
            alpha: dim as f64,
            beta: -2.0,
        }
    }

    pub fn canonical(dim: usize) -> [Self; 3] {
        [Self::amplitude(), Self::dilation(), Self::l2_preserving(dim)]
    }

    /// `μ̄ = 2α + max(βd, β(d-2))`.
    pub fn mu_bar(&self, dim: usize) -> f64 {
        let d = dim as f64;
        2.0 * self.alpha + (self.beta * d).max(self.beta * (d - 2.0))
    }

    pub fn label(&self) -> String {
        format!("K({},{})", self.alpha, self.beta)
    }
}

/// The raw integrals every functional is assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateIntegrals {
    pub dim: usize,
    /// `‖∇u‖²`
    pub kinetic: f64,
    /// `‖u‖²`
    pub mass_l2: f64,
    /// `‖u_t‖²`
    pub vel_l2: f64,
    /// `F = ∫ f(u)`
    pub nonlinear: f64,
    /// `G₀ = ∫ u f'(u)`
    pub g0: f64,
    /// `G₂ = d ∫ (u f' - 2f)`
    pub g2: f64,
}

impl StateIntegrals {
    pub fn compute(state: &RadialState, model: &NonlinearityModel) -> Result<Self> {
        check_dims(state, model)?;
        let grid = &state.grid;
        let (nonlinear, g0) = nonlinear_integrals(grid, &state.u, model)?;
        let d = grid.dim() as f64;
        Ok(Self {
            dim: grid.dim(),
            kinetic: grid.dirichlet_energy(&state.u),
            mass_l2: grid.inner(&state.u, &state.u),
            vel_l2: grid.inner(&state.v, &state.v),
            nonlinear,
            g0,
            g2: d * (g0 - 2.0 * nonlinear),
        })
    }

    /// `K_{α,β}` at the given mass coefficient.
    pub fn k(&self, pair: ScalingPair, mass: f64) -> f64 {
        let d = self.dim as f64;
        let (a, b) = (pair.alpha, pair.beta);
        (a + b * (d - 2.0) / 2.0) * self.kinetic + (a + b * d / 2.0) * mass * self.mass_l2
            - (a * self.g0 + b * d * self.nonlinear)
    }

    /// Quadratic (free) part of `K_{α,β}`.
    pub fn k_free(&self, pair: ScalingPair, mass: f64) -> f64 {
        let d = self.dim as f64;
        let (a, b) = (pair.alpha, pair.beta);
        (a + b * (d - 2.0) / 2.0) * self.kinetic + (a + b * d / 2.0) * mass * self.mass_l2
    }

    pub fn k0(&self, mass: f64) -> f64 {
        self.kinetic + mass * self.mass_l2 - self.g0
    }

    pub fn k_inf(&self, mass: f64) -> f64 {
        let d = self.dim as f64;
        (d - 2.0) / 2.0 * self.kinetic + d / 2.0 * mass * self.mass_l2 - d * self.nonlinear
    }

    pub fn k2(&self) -> f64 {
        2.0 * self.kinetic - self.g2
    }

    /// Static energy `J^{(a)}`.
    pub fn static_energy(&self, mass: f64) -> f64 {
        0.5 * self.kinetic + 0.5 * mass * self.mass_l2 - self.nonlinear
    }

    /// Energy `E^{(a)}`.
    pub fn energy(&self, mass: f64) -> f64 {
        0.5 * self.vel_l2 + self.static_energy(mass)
    }

    /// Free energy `∫ e_F^{(a)}`.
    pub fn free_energy(&self, mass: f64) -> f64 {
        0.5 * (self.vel_l2 + self.kinetic + mass * self.mass_l2)
    }

    /// `M = ‖u_t‖² + (1 - c)‖u‖²`.
    pub fn m_functional(&self, c: f64) -> f64 {
        self.vel_l2 + (1.0 - c) * self.mass_l2
    }

    /// `‖u‖²_{H¹}`.
    pub fn h1_sq(&self) -> f64 {
        self.kinetic + self.mass_l2
    }

    /// Payne–Sattinger functional `H_p^{(a)} = J^{(a)} - K₀^{(a)}/p`.
    pub fn payne_sattinger(&self, p: f64, mass: f64) -> f64 {
        self.static_energy(mass) - self.k0(mass) / p
    }
}

fn check_dims(state: &RadialState, model: &NonlinearityModel) -> Result<()> {
    if state.dim() != model.dim {
        return Err(LabError::Domain(format!(
            "state dimension {} differs from model dimension {}",
            state.dim(),
            model.dim
        )));
    }
    Ok(())
}

/// `(∫ f(u), ∫ u f'(u))`.
pub fn nonlinear_integrals(grid: &RadialGrid, u: &[f64], model: &NonlinearityModel) -> Result<(f64, f64)> {
    let mut f_sum = 0.0;
    let mut g_sum = 0.0;
    for (w, &x) in grid.weights().iter().zip(u) {
        if *w == 0.0 || x == 0.0 {
            continue;
        }
        let b = model.bundle(x)?;
        f_sum += w * b.f;
        g_sum += w * b.scaling;
    }
    Ok((f_sum, g_sum))
}

/// Everything conserved or variational about one state, flattened for output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalBundle {
    /// `E` at mass 1.
    pub energy: f64,
    /// `E^{(c)}`.
    pub energy_c: f64,
    /// `J` at mass 1.
    pub static_energy: f64,
    /// `J^{(c)}`.
    pub static_energy_c: f64,
    pub nonlinear_f: f64,
    pub g0: f64,
    pub g2: f64,
    pub kinetic: f64,
    pub mass_l2: f64,
    pub vel_l2: f64,
    /// Radial component of the momentum, zero for radial states.
    pub momentum: f64,
    pub m_functional: f64,
    pub mass_shift: f64,
}

impl FunctionalBundle {
    pub fn from_integrals(s: &StateIntegrals, c: f64) -> Self {
        Self {
            energy: s.energy(1.0),
            energy_c: s.energy(c),
            static_energy: s.static_energy(1.0),
            static_energy_c: s.static_energy(c),
            nonlinear_f: s.nonlinear,
            g0: s.g0,
            g2: s.g2,
            kinetic: s.kinetic,
            mass_l2: s.mass_l2,
            vel_l2: s.vel_l2,
            momentum: 0.0,
            m_functional: s.m_functional(c),
            mass_shift: c,
        }
    }

    pub const CSV_HEADER: [&'static str; 13] = [
        "energy",
        "energy_c",
        "static_energy",
        "static_energy_c",
        "nonlinear_f",
        "g0",
        "g2",
        "kinetic",
        "mass_l2",
        "vel_l2",
        "momentum",
        "m_functional",
        "mass_shift",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        [
            self.energy,
            self.energy_c,
            self.static_energy,
            self.static_energy_c,
            self.nonlinear_f,
            self.g0,
            self.g2,
            self.kinetic,
            self.mass_l2,
            self.vel_l2,
            self.momentum,
            self.m_functional,
            self.mass_shift,
        ]
        .iter()
        .map(|x| x.to_string())
        .collect()
    }
}

pub fn evaluate(state: &RadialState, model: &NonlinearityModel) -> Result<FunctionalBundle> {
    let s = StateIntegrals::compute(state, model)?;
    Ok(FunctionalBundle::from_integrals(&s, model.mass_shift))
}

/// `K_{α,β}^{(mass)}(u)`.
pub fn k_value(state: &RadialState, model: &NonlinearityModel, pair: ScalingPair, mass: f64) -> Result<f64> {
    if !pair.is_admissible(state.dim()) {
        return Err(LabError::Domain(format!(
            "inadmissible scaling pair {}",
            pair.label()
        )));
    }
    Ok(StateIntegrals::compute(state, model)?.k(pair, mass))
}

/// Free energy density integrated over `|x| > R` at the given mass:
/// `∫_{|x|>R} (|u_t|² + |∇u|² + mass |u|²) / 2`. Nodal terms count when the
/// node lies beyond `R`, gradient terms when the edge midpoint does.
pub fn exterior_energy(state: &RadialState, mass: f64, radius: f64) -> f64 {
    let g = &state.grid;
    let k = g.radii().partition_point(|&r| r <= radius);
    let w = g.weights();
    let nodes: f64 = (k..g.len())
        .map(|i| 0.5 * w[i] * (state.v[i] * state.v[i] + mass * state.u[i] * state.u[i]))
        .sum();
    let edges: f64 = (0..g.len() - 1)
        .filter(|&i| g.edge_radius(i) > radius)
        .map(|i| {
            let du = state.u[i + 1] - state.u[i];
            0.5 * g.edges()[i] * du * du
        })
        .sum();
    nodes + edges
}

/// `ext[k] = ∫_{|x| > r_k} e_F` at every node radius `r_k` (strict inequality,
/// nodes and edge midpoints).
pub fn exterior_profile(state: &RadialState, mass: f64) -> Vec<f64> {
    let g = &state.grid;
    let n = g.len();
    let w = g.weights();
    let s = g.edges();
    let mut ext = vec![0.0; n];
    let mut acc = 0.0;
    for k in (0..n).rev() {
        ext[k] = acc;
        // entering r_{k} from above: node k and edge k-1 (midpoint > r_{k-1}) join
        acc += 0.5 * w[k] * (state.v[k] * state.v[k] + mass * state.u[k] * state.u[k]);
        if k > 0 {
            let du = state.u[k] - state.u[k - 1];
            acc += 0.5 * s[k - 1] * du * du;
        }
    }
    ext
}

/// Total free energy `∫ e_F` at the given mass.
pub fn free_energy(state: &RadialState, mass: f64) -> f64 {
    let g = &state.grid;
    0.5 * (g.inner(&state.v, &state.v) + g.dirichlet_energy(&state.u) + mass * g.inner(&state.u, &state.u))
}

/// How the concentration radius measures the energy left outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadiusCriterion {
    /// Smallest `R` with `∫_{|x|>R} e_F <= ε · reference` (reference = `m` or `E`).
    ExteriorFraction { reference: f64 },
    /// Smallest `R` with `∫_{|x|<R} e_F >= energy - ε`.
    InteriorDeficit { energy: f64 },
}

/// Smallest node radius satisfying the criterion; the origin for a zero state.
pub fn concentration_radius(
    state: &RadialState,
    eps: f64,
    mass: f64,
    criterion: RadiusCriterion,
) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(LabError::Domain(format!("ε must lie in (0, 1), got {eps}")));
    }
    let ext = exterior_profile(state, mass);
    let total = free_energy(state, mass);
    let radii = state.grid.radii();
    let k = match criterion {
        RadiusCriterion::ExteriorFraction { reference } => {
            let bound = eps * reference.abs();
            ext.iter().position(|&e| e <= bound)
        }
        RadiusCriterion::InteriorDeficit { energy } => {
            let target = energy - eps;
            // interior mass up to and including r_k is total - ext[k]
            ext.iter().position(|&e| total - e >= target)
        }
    };
    Ok(k.map(|k| radii[k]).unwrap_or(state.grid.r_max()))
}
