//! Radial time integration of `u_tt - Δu + mass·u = f'(u)`, the linear
//! companion flow used to certify scattering, and the time-series diagnostics
//! of the blowup and scattering arguments.
//!
//! Second derivatives in time (`ÿ`, `z̈`, `d⟨u|u̇⟩/dt`) are central differences
//! of per-step values, so every recorded sample is finalised one step after it
//! is taken.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::Verdict;
use crate::error::{LabError, Result};
use crate::functionals::{concentration_radius, exterior_energy, free_energy, RadiusCriterion, ScalingPair, StateIntegrals};
use crate::grid::{RadialGrid, RadialState};
use crate::nonlinearity::NonlinearityModel;
use crate::spectral::FreePropagator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Störmer–Verlet (kick–drift–kick).
    Leapfrog,
    /// Exact free half-steps around a nonlinear kick.
    StrangSplit,
}

/// Backward light cone `|x| > radius + |t - t0|` whose exterior energy is tracked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub t0: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolveConfig {
    pub dt: f64,
    pub t_final: f64,
    pub scheme: Scheme,
    /// Mass coefficient of the flow (1 for the Klein-Gordon problem).
    pub flow_mass: f64,
    pub record_every: usize,
    /// Energy-norm growth factor that counts as blowup.
    pub blowup_factor: f64,
    /// Exponent `p = 2 + ε` of the Payne–Sattinger functional and of `z = y^{-ε/4}`.
    pub p: f64,
    /// Duration over which the concavity of `z` must hold; defaults to half
    /// the Sturm length `2π/(ε sqrt(1 - c))`.
    pub concavity_window: Option<f64>,
    /// Slack of the concavity test, relative to `z`.
    pub concavity_tol: f64,
    /// Window length `L ≥ 2` of the scattering test.
    pub scatter_window: f64,
    /// Energy-norm distance to the linear companion flow that counts as scattered.
    pub scatter_tol: f64,
    /// Smallest concentration radius over the window that counts as dispersed.
    pub dispersal_radius: f64,
    /// Bound on the window mean of `G₀ + F`.
    pub nonlinear_tol: f64,
    /// Exterior fraction `ε` of the concentration radius.
    pub radius_eps: f64,
    pub exterior_radii: Vec<f64>,
    pub cone: Option<ConeSpec>,
    /// Threshold `m`, used to flag runs with `|E - m| ≤ near_threshold_tol · m`.
    pub threshold: Option<f64>,
    pub near_threshold_tol: f64,
    /// Evolve the linear equation instead (`f' ≡ 0`).
    pub drop_nonlinearity: bool,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 10.0,
            scheme: Scheme::Leapfrog,
            flow_mass: 1.0,
            record_every: 10,
            blowup_factor: 10.0,
            p: 2.5,
            concavity_window: None,
            concavity_tol: 1e-6,
            scatter_window: 2.0,
            scatter_tol: 1e-3,
            dispersal_radius: 0.0,
            nonlinear_tol: 1e-6,
            radius_eps: 0.01,
            exterior_radii: Vec::new(),
            cone: None,
            threshold: None,
            near_threshold_tol: 1e-3,
            drop_nonlinearity: false,
        }
    }
}

impl EvolveConfig {
    pub fn epsilon(&self) -> f64 {
        self.p - 2.0
    }

    /// Validates the configuration against a grid (CFL `dt ≤ h/2`, `L ≥ 2`, ...).
    pub fn validate(&self, grid: &RadialGrid) -> Result<()> {
        let h = grid.spacing();
        if !(self.dt > 0.0) || self.dt > 0.5 * h * (1.0 + 1e-12) {
            return Err(LabError::Domain(format!(
                "time step {} violates the CFL bound dt <= h/2 = {}",
                self.dt,
                0.5 * h
            )));
        }
        if !(self.t_final >= 0.0) {
            return Err(LabError::Domain(format!("final time must be >= 0, got {}", self.t_final)));
        }
        if self.scatter_window < 2.0 {
            return Err(LabError::Domain(format!(
                "scatter window must be >= 2, got {}",
                self.scatter_window
            )));
        }
        if !(self.p > 2.0 && self.p < 4.0) {
            return Err(LabError::Domain(format!("p must lie in (2, 4), got {}", self.p)));
        }
        if self.record_every == 0 {
            return Err(LabError::Domain("record_every must be positive".into()));
        }
        if !(self.blowup_factor > 1.0) {
            return Err(LabError::Domain("blowup factor must exceed 1".into()));
        }
        if !(self.flow_mass >= 0.0) {
            return Err(LabError::Domain("flow mass must be >= 0".into()));
        }
        Ok(())
    }

    fn sturm_length(&self, c: f64) -> f64 {
        2.0 * std::f64::consts::PI / (self.epsilon() * (1.0 - c).max(1e-300).sqrt())
    }
}

/// One recorded time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    /// `y = ‖u‖²`
    pub y: f64,
    /// `ẏ = 2⟨u|u̇⟩`
    pub y_dot: f64,
    /// Central second difference of `y`.
    pub y_ddot: f64,
    pub vel_l2: f64,
    pub kinetic: f64,
    pub mass_l2: f64,
    pub nonlinear: f64,
    pub g0: f64,
    pub k0: f64,
    pub k0_c: f64,
    pub k2: f64,
    pub k_inf: f64,
    pub k_inf_c: f64,
    /// `M = ‖u̇‖² + (1 - c)‖u‖²`
    pub m_functional: f64,
    pub hp: f64,
    pub hp_c: f64,
    /// `z = y^{-ε/4}`
    pub z: f64,
    pub z_ddot: f64,
    /// Energy at the flow mass.
    pub energy: f64,
    pub free_energy: f64,
    /// `sqrt(‖∇u‖² + ‖u‖² + ‖u̇‖²)`
    pub energy_norm: f64,
    /// `⟨u|u̇⟩`
    pub dual: f64,
    /// Central difference of `⟨u|u̇⟩`.
    pub dual_dot: f64,
    /// `ÿ/2 - (‖u̇‖² - K₀)` at the flow mass.
    pub virial_residual: f64,
    /// `d⟨u|u̇⟩/dt - (‖u̇‖² - ‖∇u‖² - mass‖u‖² + G₀)`.
    pub equipartition_residual: f64,
    pub concentration_radius: f64,
    /// Energy outside the tracked cone (`NaN` without a cone).
    pub cone_exterior: f64,
    /// Energy-norm distance to the running linear companion (`NaN` outside a window).
    pub companion_distance: f64,
    pub exterior: Vec<f64>,
}

/// Every recorded diagnostic of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSeries {
    pub epsilon: f64,
    pub mass_shift: f64,
    pub flow_mass: f64,
    pub exterior_radii: Vec<f64>,
    pub cone: Option<ConeSpec>,
    pub samples: Vec<Sample>,
}

impl DiagnosticsSeries {
    /// Fixed column order of the CSV output.
    pub const COLUMNS: [&'static str; 30] = [
        "t",
        "y",
        "y_dot",
        "y_ddot",
        "vel_l2",
        "kinetic",
        "mass_l2",
        "F",
        "G0",
        "K0",
        "K0_c",
        "K2",
        "Kinf",
        "Kinf_c",
        "M",
        "Hp",
        "Hp_c",
        "z",
        "z_ddot",
        "energy",
        "free_energy",
        "energy_norm",
        "dual",
        "dual_dot",
        "virial_residual",
        "equipartition_residual",
        "concentration_radius",
        "cone_exterior",
        "companion_distance",
        "exterior_count",
    ];

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = Self::COLUMNS[..Self::COLUMNS.len() - 1].iter().map(|s| s.to_string()).collect();
        h.extend(self.exterior_radii.iter().map(|r| format!("exterior_{r}")));
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for s in &self.samples {
            let mut row = vec![
                s.t,
                s.y,
                s.y_dot,
                s.y_ddot,
                s.vel_l2,
                s.kinetic,
                s.mass_l2,
                s.nonlinear,
                s.g0,
                s.k0,
                s.k0_c,
                s.k2,
                s.k_inf,
                s.k_inf_c,
                s.m_functional,
                s.hp,
                s.hp_c,
                s.z,
                s.z_ddot,
                s.energy,
                s.free_energy,
                s.energy_norm,
                s.dual,
                s.dual_dot,
                s.virial_residual,
                s.equipartition_residual,
                s.concentration_radius,
                s.cone_exterior,
                s.companion_distance,
            ];
            row.extend(&s.exterior);
            w.write_record(row.iter().map(|x| format!("{x:.12e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Downsampled `(t, y, K₀, concentration radius)` rows for plotting.
    pub fn write_plot_csv(&self, path: &Path, max_rows: usize) -> Result<()> {
        let stride = self.samples.len().div_ceil(max_rows.max(1)).max(1);
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "y", "K0", "concentration_radius"])?;
        for s in self.samples.iter().step_by(stride) {
            w.write_record([s.t, s.y, s.k0, s.concentration_radius].iter().map(|x| format!("{x:.9e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn max_virial_residual(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.virial_residual.abs())
            .filter(|x| x.is_finite())
            .fold(0.0, f64::max)
    }

    pub fn max_energy_drift(&self) -> f64 {
        let Some(first) = self.samples.first() else {
            return 0.0;
        };
        let scale = if first.energy != 0.0 { first.energy.abs() } else { 1.0 };
        self.samples
            .iter()
            .map(|s| (s.energy - first.energy).abs() / scale)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunVerdict {
    Scattered,
    BlewUp,
    Undecided,
}

impl RunVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunVerdict::Scattered => "scattered",
            RunVerdict::BlewUp => "blew_up",
            RunVerdict::Undecided => "undecided",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowupCriterion {
    /// Energy norm above `blowup_factor` times its initial value.
    NormGrowth,
    /// The nonlinearity refused an out-of-range amplitude.
    Saturation,
    /// `z̈ ≤ -(1 - c)ε²z/4` held over the concavity window.
    Concavity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub criterion: Option<BlowupCriterion>,
    pub time: Option<f64>,
    /// Fraction of sampled times at which `ÿ ≥ (1 + ε/4)ẏ²/y + (1 - c)εy`.
    pub di_y_fraction: f64,
    pub di_y_samples: usize,
    /// Length of the terminal stretch of samples with `z̈ ≤ 0`.
    pub terminal_concave_span: f64,
}

/// Incremental blowup detector fed one sample at a time.
#[derive(Debug, Clone)]
pub struct BlowupDetector {
    epsilon: f64,
    c: f64,
    factor: f64,
    window: f64,
    tol: f64,
    initial_norm: Option<f64>,
    concave_since: Option<f64>,
    nonpositive_since: Option<f64>,
    last_t: f64,
    di_held: usize,
    di_checked: usize,
    fired: Option<(BlowupCriterion, f64)>,
}

impl BlowupDetector {
    pub fn new(cfg: &EvolveConfig, c: f64) -> Self {
        Self {
            epsilon: cfg.epsilon(),
            c,
            factor: cfg.blowup_factor,
            window: cfg.concavity_window.unwrap_or(0.5 * cfg.sturm_length(c)),
            tol: cfg.concavity_tol,
            initial_norm: None,
            concave_since: None,
            nonpositive_since: None,
            last_t: 0.0,
            di_held: 0,
            di_checked: 0,
            fired: None,
        }
    }

    /// Norm test alone, usable at every step.
    pub fn norm_exceeded(&mut self, t: f64, norm: f64) -> bool {
        let init = *self.initial_norm.get_or_insert(norm);
        if norm > self.factor * init && self.fired.is_none() {
            self.fired = Some((BlowupCriterion::NormGrowth, t));
        }
        matches!(self.fired, Some((BlowupCriterion::NormGrowth, _)))
    }

    pub fn saturated(&mut self, t: f64) {
        if self.fired.is_none() {
            self.fired = Some((BlowupCriterion::Saturation, t));
        }
    }

    pub fn push(&mut self, s: &Sample) -> Option<BlowupCriterion> {
        self.last_t = s.t;
        if self.norm_exceeded(s.t, s.energy_norm) {
            return Some(BlowupCriterion::NormGrowth);
        }
        if s.y > 0.0 && s.y_ddot.is_finite() {
            let (e, c) = (self.epsilon, self.c);
            let rhs = (1.0 + e / 4.0) * s.y_dot * s.y_dot / s.y + (1.0 - c) * e * s.y;
            self.di_checked += 1;
            if s.y_ddot >= rhs - 1e-12 * rhs.abs() {
                self.di_held += 1;
            }
        }
        if s.z_ddot.is_finite() {
            if s.z_ddot <= 0.0 {
                self.nonpositive_since.get_or_insert(s.t);
            } else {
                self.nonpositive_since = None;
            }
            let bound = -(1.0 - self.c) * self.epsilon * self.epsilon * s.z / 4.0 + self.tol * s.z;
            if s.z_ddot <= bound {
                let since = *self.concave_since.get_or_insert(s.t);
                if s.t - since >= self.window && self.fired.is_none() {
                    self.fired = Some((BlowupCriterion::Concavity, s.t));
                }
            } else {
                self.concave_since = None;
            }
        }
        self.fired.map(|(c, _)| c)
    }

    pub fn report(&self) -> BlowupReport {
        BlowupReport {
            criterion: self.fired.map(|(c, _)| c),
            time: self.fired.map(|(_, t)| t),
            di_y_fraction: if self.di_checked > 0 {
                self.di_held as f64 / self.di_checked as f64
            } else {
                f64::NAN
            },
            di_y_samples: self.di_checked,
            terminal_concave_span: self.nonpositive_since.map_or(0.0, |t0| self.last_t - t0),
        }
    }
}

/// Runs the blowup detector over a recorded series.
pub fn blowup_detect(series: &DiagnosticsSeries, cfg: &EvolveConfig) -> BlowupReport {
    let mut det = BlowupDetector::new(cfg, series.mass_shift);
    for s in &series.samples {
        if det.push(s).is_some() {
            break;
        }
    }
    det.report()
}

/// One completed scattering window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterWindow {
    pub start: f64,
    pub max_distance: f64,
    pub min_radius: f64,
    pub mean_nonlinear: f64,
    pub passed: bool,
}

/// Judges a window of samples `(distance, radius, G₀ + F)`.
pub fn scatter_window_verdict(start: f64, window: &[(f64, f64, f64)], cfg: &EvolveConfig) -> ScatterWindow {
    let max_distance = window.iter().map(|w| w.0).fold(0.0, f64::max);
    let min_radius = window.iter().map(|w| w.1).fold(f64::INFINITY, f64::min);
    let mean_nonlinear = window.iter().map(|w| w.2).sum::<f64>() / window.len().max(1) as f64;
    ScatterWindow {
        start,
        max_distance,
        min_radius,
        mean_nonlinear,
        passed: !window.is_empty()
            && max_distance <= cfg.scatter_tol
            && min_radius >= cfg.dispersal_radius
            && mean_nonlinear.abs() <= cfg.nonlinear_tol,
    }
}

/// Replays the scattering windows recorded in a series (samples carrying a
/// companion distance); returns the first passing window, if any.
pub fn scatter_detect(series: &DiagnosticsSeries, cfg: &EvolveConfig) -> Option<ScatterWindow> {
    let mut start: Option<f64> = None;
    let mut buf = Vec::new();
    for s in &series.samples {
        if !s.companion_distance.is_finite() {
            continue;
        }
        let t0 = *start.get_or_insert(s.t);
        buf.push((s.companion_distance, s.concentration_radius, s.g0 + s.nonlinear));
        if s.t - t0 >= cfg.scatter_window - 0.5 * cfg.dt {
            let w = scatter_window_verdict(t0, &buf, cfg);
            if w.passed {
                return Some(w);
            }
            start = Some(s.t);
            buf.clear();
            buf.push((0.0, s.concentration_radius, s.g0 + s.nonlinear));
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub scheme: Scheme,
    pub verdict: RunVerdict,
    /// Which detector decided the verdict.
    pub detector: Option<String>,
    pub detection_time: Option<f64>,
    pub final_time: f64,
    pub steps: usize,
    pub dt: f64,
    pub h: f64,
    pub initial_energy: f64,
    pub energy_drift: f64,
    pub near_threshold: bool,
    pub blowup: BlowupReport,
    pub scatter_windows: Vec<ScatterWindow>,
    pub classification: Option<Verdict>,
}

impl RunRecord {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Owns a state and advances it with one scheme.
#[derive(Clone)]
struct Integrator<'a> {
    model: &'a NonlinearityModel,
    scheme: Scheme,
    mass: f64,
    dt: f64,
    nonlinear: bool,
    propagator: Option<Arc<FreePropagator>>,
    state: RadialState,
    accel: Vec<f64>,
}

impl<'a> Integrator<'a> {
    fn new(
        state: RadialState,
        model: &'a NonlinearityModel,
        cfg: &EvolveConfig,
        nonlinear: bool,
        propagator: Option<Arc<FreePropagator>>,
    ) -> Result<Self> {
        let mut it = Self {
            model,
            scheme: cfg.scheme,
            mass: cfg.flow_mass,
            dt: cfg.dt,
            nonlinear,
            propagator,
            accel: vec![0.0; state.u.len()],
            state,
        };
        it.refresh_accel()?;
        Ok(it)
    }

    fn refresh_accel(&mut self) -> Result<()> {
        let grid = self.state.grid.clone();
        grid.laplacian_into(&self.state.u, &mut self.accel);
        for i in grid.active() {
            let u = self.state.u[i];
            self.accel[i] -= self.mass * u;
            if self.nonlinear {
                self.accel[i] += self.model.force(u)?;
            }
        }
        Ok(())
    }

    fn linear_companion(&self) -> Result<Self> {
        let mut it = self.clone();
        it.nonlinear = false;
        it.refresh_accel()?;
        Ok(it)
    }

    fn advance(&mut self) -> Result<()> {
        let grid = self.state.grid.clone();
        let dt = self.dt;
        match self.scheme {
            Scheme::Leapfrog => {
                let st = &mut self.state;
                for i in grid.active() {
                    st.v[i] += 0.5 * dt * self.accel[i];
                    st.u[i] += dt * st.v[i];
                }
                grid.apply_boundary(&mut st.u);
                self.refresh_accel()?;
                let st = &mut self.state;
                for i in grid.active() {
                    st.v[i] += 0.5 * dt * self.accel[i];
                }
                grid.apply_boundary(&mut st.v);
                st.time += dt;
            }
            Scheme::StrangSplit => {
                let prop = self.propagator.as_ref().expect("split scheme carries a propagator");
                let mut st = prop.evolve(&self.state, self.mass, 0.5 * dt);
                if self.nonlinear {
                    for i in grid.active() {
                        st.v[i] += dt * self.model.force(st.u[i])?;
                    }
                    grid.apply_boundary(&mut st.v);
                }
                self.state = prop.evolve(&st, self.mass, 0.5 * dt);
            }
        }
        Ok(())
    }
}

fn propagator_for(grid: &Arc<RadialGrid>, cfg: &EvolveConfig) -> Result<Option<Arc<FreePropagator>>> {
    Ok(match cfg.scheme {
        Scheme::Leapfrog => None,
        Scheme::StrangSplit => Some(Arc::new(FreePropagator::new(grid.clone())?)),
    })
}

/// One time step of the configured scheme.
pub fn step(state: &RadialState, model: &NonlinearityModel, cfg: &EvolveConfig) -> Result<RadialState> {
    cfg.validate(&state.grid)?;
    let prop = propagator_for(&state.grid, cfg)?;
    let mut it = Integrator::new(state.clone(), model, cfg, !cfg.drop_nonlinearity, prop)?;
    it.advance()?;
    if !it.state.is_finite() {
        return Err(instability(it.state.time, cfg, &state.grid));
    }
    Ok(it.state)
}

fn instability(time: f64, cfg: &EvolveConfig, grid: &RadialGrid) -> LabError {
    LabError::Instability {
        time,
        detail: format!(
            "non-finite state; dt/h = {:.4} (CFL requires <= 0.5), consider a smaller dt",
            cfg.dt / grid.spacing()
        ),
    }
}

/// Energy-norm distance `sqrt(‖∇w‖² + mass‖w‖² + ‖w_t‖²)` between two states.
pub fn energy_distance(a: &RadialState, b: &RadialState, mass: f64) -> f64 {
    let du: Vec<f64> = a.u.iter().zip(&b.u).map(|(x, y)| x - y).collect();
    let dv: Vec<f64> = a.v.iter().zip(&b.v).map(|(x, y)| x - y).collect();
    let g = &a.grid;
    (g.dirichlet_energy(&du) + mass * g.inner(&du, &du) + g.inner(&dv, &dv)).sqrt()
}

/// Per-step scalars entering the finite differences.
#[derive(Debug, Clone, Copy)]
struct Scalars {
    y: f64,
    dual: f64,
    z: f64,
}

impl Scalars {
    fn of(state: &RadialState, eps: f64) -> Self {
        let g = &state.grid;
        let y = g.inner(&state.u, &state.u);
        Self {
            y,
            dual: g.inner(&state.u, &state.v),
            z: if y > 0.0 { y.powf(-eps / 4.0) } else { f64::NAN },
        }
    }
}

struct Recorder<'a> {
    model: &'a NonlinearityModel,
    cfg: &'a EvolveConfig,
    c: f64,
    radius_reference: f64,
}

impl Recorder<'_> {
    fn sample(&self, st: &RadialState, companion: Option<&RadialState>) -> Result<Sample> {
        let s = StateIntegrals::compute(st, self.model)?;
        let (nonlinear, g0) = if self.cfg.drop_nonlinearity { (0.0, 0.0) } else { (s.nonlinear, s.g0) };
        let lin = StateIntegrals { nonlinear, g0, g2: 0.0, ..s };
        let s = if self.cfg.drop_nonlinearity { lin } else { s };
        let a = self.cfg.flow_mass;
        let c = self.c;
        let d = st.dim();
        let p = self.cfg.p;
        let eps = self.cfg.epsilon();
        let sc = Scalars::of(st, eps);
        Ok(Sample {
            t: st.time,
            y: sc.y,
            y_dot: 2.0 * sc.dual,
            y_ddot: f64::NAN,
            vel_l2: s.vel_l2,
            kinetic: s.kinetic,
            mass_l2: s.mass_l2,
            nonlinear: s.nonlinear,
            g0: s.g0,
            k0: s.k0(a),
            k0_c: s.k0(c),
            k2: s.k(ScalingPair::l2_preserving(d), a),
            k_inf: s.k_inf(a),
            k_inf_c: s.k_inf(c),
            m_functional: s.m_functional(c),
            hp: s.payne_sattinger(p, a),
            hp_c: s.payne_sattinger(p, c),
            z: sc.z,
            z_ddot: f64::NAN,
            energy: s.energy(a),
            free_energy: s.free_energy(a),
            energy_norm: (s.kinetic + s.mass_l2 + s.vel_l2).sqrt(),
            dual: sc.dual,
            dual_dot: f64::NAN,
            virial_residual: f64::NAN,
            equipartition_residual: f64::NAN,
            concentration_radius: concentration_radius(
                st,
                self.cfg.radius_eps,
                a,
                RadiusCriterion::ExteriorFraction {
                    reference: self.radius_reference,
                },
            )?,
            cone_exterior: self.cfg.cone.map_or(f64::NAN, |cone| {
                exterior_energy(st, a, cone.radius + (st.time - cone.t0).abs())
            }),
            companion_distance: companion.map_or(f64::NAN, |w| energy_distance(st, w, a)),
            exterior: self.cfg.exterior_radii.iter().map(|&r| exterior_energy(st, a, r)).collect(),
        })
    }

    fn finalize(&self, s: &mut Sample, prev: Scalars, next: Scalars) {
        let dt = self.cfg.dt;
        let cur = Scalars {
            y: s.y,
            dual: s.dual,
            z: s.z,
        };
        s.y_ddot = (next.y - 2.0 * cur.y + prev.y) / (dt * dt);
        s.z_ddot = (next.z - 2.0 * cur.z + prev.z) / (dt * dt);
        s.dual_dot = (next.dual - prev.dual) / (2.0 * dt);
        s.virial_residual = 0.5 * s.y_ddot - (s.vel_l2 - s.k0);
        let a = self.cfg.flow_mass;
        s.equipartition_residual = s.dual_dot - (s.vel_l2 - s.kinetic - a * s.mass_l2 + s.g0);
    }
}

/// Integrates from `state` until `t_final`, a blowup detection or a
/// scattering detection, recording diagnostics every `record_every` steps.
pub fn evolve(
    state: &RadialState,
    model: &NonlinearityModel,
    cfg: &EvolveConfig,
    classification: Option<Verdict>,
) -> Result<(RunRecord, DiagnosticsSeries)> {
    let grid = state.grid.clone();
    cfg.validate(&grid)?;
    if state.dim() != model.dim {
        return Err(LabError::Domain(format!(
            "state dimension {} differs from model dimension {}",
            state.dim(),
            model.dim
        )));
    }
    if !state.is_finite() {
        return Err(LabError::Input("initial state is not finite".into()));
    }
    let c = model.mass_shift;
    let eps = cfg.epsilon();
    let n_steps = (cfg.t_final / cfg.dt).round() as usize;
    let nonlinear = !cfg.drop_nonlinearity;
    let prop = propagator_for(&grid, cfg)?;
    let initial_free = free_energy(state, cfg.flow_mass);
    let rec = Recorder {
        model,
        cfg,
        c,
        radius_reference: initial_free,
    };
    let mut series = DiagnosticsSeries {
        epsilon: eps,
        mass_shift: c,
        flow_mass: cfg.flow_mass,
        exterior_radii: cfg.exterior_radii.clone(),
        cone: cfg.cone,
        samples: Vec::new(),
    };
    let mut detector = BlowupDetector::new(cfg, c);
    let mut record = RunRecord {
        config_hash: None,
        seed: None,
        scheme: cfg.scheme,
        verdict: RunVerdict::Undecided,
        detector: None,
        detection_time: None,
        final_time: state.time,
        steps: 0,
        dt: cfg.dt,
        h: grid.spacing(),
        initial_energy: 0.0,
        energy_drift: 0.0,
        near_threshold: false,
        blowup: detector.report(),
        scatter_windows: Vec::new(),
        classification,
    };

    let mut main = match Integrator::new(state.clone(), model, cfg, nonlinear, prop.clone()) {
        Ok(it) => it,
        Err(LabError::Saturation { .. }) => {
            detector.saturated(state.time);
            return Ok(finish(record, series, &detector, "saturation", state.time));
        }
        Err(e) => return Err(e),
    };
    let first = rec.sample(state, None)?;
    record.initial_energy = first.energy;
    if let Some(m) = cfg.threshold {
        record.near_threshold = (first.energy - m).abs() <= cfg.near_threshold_tol * m.abs();
    }
    if initial_free == 0.0 {
        // the zero field is a free solution of itself
        let mut s = first;
        s.companion_distance = 0.0;
        s.y_ddot = 0.0;
        s.z_ddot = f64::NAN;
        s.dual_dot = 0.0;
        s.virial_residual = 0.0;
        s.equipartition_residual = 0.0;
        series.samples.push(s);
        record.verdict = RunVerdict::Scattered;
        record.detector = Some("zero_data".into());
        record.detection_time = Some(state.time);
        record.scatter_windows.push(ScatterWindow {
            start: state.time,
            max_distance: 0.0,
            min_radius: 0.0,
            mean_nonlinear: 0.0,
            passed: true,
        });
        record.blowup = detector.report();
        return Ok((record, series));
    }

    // reversible backward step provides the sample before t0
    let prev0 = {
        let mut back = main.clone();
        back.dt = -cfg.dt;
        match back.advance() {
            Ok(()) => Scalars::of(&back.state, eps),
            Err(_) => Scalars {
                y: f64::NAN,
                dual: f64::NAN,
                z: f64::NAN,
            },
        }
    };
    let mut prev = prev0;
    let mut cur = Scalars::of(&main.state, eps);
    let mut companion = Some(main.linear_companion()?);
    let mut window_start = state.time;
    let mut window: Vec<(f64, f64, f64)> = Vec::new();
    let mut pending = Some(first);
    if let Some(s) = pending.as_mut() {
        s.companion_distance = 0.0;
        window.push((0.0, s.concentration_radius, s.g0 + s.nonlinear));
    }
    detector.norm_exceeded(state.time, pending.as_ref().map_or(0.0, |s| s.energy_norm));

    for n in 0..n_steps {
        match main.advance() {
            Ok(()) => {}
            Err(LabError::Saturation { .. }) => {
                let t = main.state.time + cfg.dt;
                detector.saturated(t);
                if let Some(s) = pending.take() {
                    series.samples.push(s);
                }
                return Ok(finish(record, series, &detector, "saturation", t));
            }
            Err(e) => return Err(e),
        }
        let t = main.state.time;
        record.steps = n + 1;
        let next = Scalars::of(&main.state, eps);
        if !(next.y.is_finite() && next.dual.is_finite()) || !main.state.is_finite() {
            return Err(instability(t, cfg, &grid));
        }
        if let Some(w) = companion.as_mut() {
            w.advance()?;
        }
        if let Some(mut s) = pending.take() {
            rec.finalize(&mut s, prev, next);
            let fired = detector.push(&s);
            series.samples.push(s);
            if let Some(crit) = fired {
                let name = criterion_name(crit);
                return Ok(finish(record, series, &detector, name, t));
            }
        }
        let g = &main.state.grid;
        let norm = (g.dirichlet_energy(&main.state.u)
            + g.inner(&main.state.u, &main.state.u)
            + g.inner(&main.state.v, &main.state.v))
        .sqrt();
        if detector.norm_exceeded(t, norm) {
            let s = rec.sample(&main.state, None)?;
            series.samples.push(s);
            return Ok(finish(record, series, &detector, "norm_growth", t));
        }
        prev = cur;
        cur = next;
        if (n + 1) % cfg.record_every == 0 || n + 1 == n_steps {
            let s = rec.sample(&main.state, companion.as_ref().map(|w| &w.state))?;
            window.push((s.companion_distance, s.concentration_radius, s.g0 + s.nonlinear));
            if t - window_start >= cfg.scatter_window - 0.5 * cfg.dt {
                let verdict = scatter_window_verdict(window_start, &window, cfg);
                record.scatter_windows.push(verdict);
                if verdict.passed {
                    let mut s = s;
                    let lookahead = lookahead_scalars(&main, eps);
                    rec.finalize(&mut s, prev, lookahead);
                    series.samples.push(s);
                    record.verdict = RunVerdict::Scattered;
                    record.detector = Some("free_flow_window".into());
                    record.detection_time = Some(t);
                    record.final_time = t;
                    record.blowup = detector.report();
                    record.energy_drift = series.max_energy_drift();
                    return Ok((record, series));
                }
                window_start = t;
                window.clear();
                window.push((0.0, s.concentration_radius, s.g0 + s.nonlinear));
                companion = Some(main.linear_companion()?);
            }
            pending = Some(s);
        }
    }
    if let Some(mut s) = pending.take() {
        let lookahead = lookahead_scalars(&main, eps);
        rec.finalize(&mut s, prev, lookahead);
        detector.push(&s);
        series.samples.push(s);
    }
    record.final_time = main.state.time;
    record.blowup = detector.report();
    if let Some(crit) = record.blowup.criterion {
        let t = record.blowup.time.unwrap_or(record.final_time);
        return Ok(finish(record, series, &detector, criterion_name(crit), t));
    }
    record.energy_drift = series.max_energy_drift();
    Ok((record, series))
}

fn lookahead_scalars(main: &Integrator, eps: f64) -> Scalars {
    let mut probe = main.clone();
    match probe.advance() {
        Ok(()) => Scalars::of(&probe.state, eps),
        Err(_) => Scalars {
            y: f64::NAN,
            dual: f64::NAN,
            z: f64::NAN,
        },
    }
}

fn criterion_name(c: BlowupCriterion) -> &'static str {
    match c {
        BlowupCriterion::NormGrowth => "norm_growth",
        BlowupCriterion::Saturation => "saturation",
        BlowupCriterion::Concavity => "concavity",
    }
}

fn finish(
    mut record: RunRecord,
    series: DiagnosticsSeries,
    detector: &BlowupDetector,
    name: &str,
    t: f64,
) -> (RunRecord, DiagnosticsSeries) {
    record.verdict = RunVerdict::BlewUp;
    record.detector = Some(name.into());
    record.detection_time = Some(t);
    record.final_time = t;
    record.blowup = detector.report();
    record.energy_drift = series.max_energy_drift();
    (record, series)
}

/// Outcome of the exterior-cone check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExteriorReport {
    pub t0: f64,
    pub radius: f64,
    pub initial_exterior: f64,
    pub scheme_eps: f64,
    pub max_exterior: f64,
    /// Empirical `C` in `ext(t) ≤ C (ext(t0) + scheme_eps)`.
    pub constant: f64,
}

/// Checks that the free energy outside the cone `|x| > R + |t - t0|` stays
/// bounded by a multiple of its value at `t0` (plus a scheme tolerance
/// `scheme_eps_rel` times the free energy at `t0`). Fails hard when the
/// empirical constant exceeds `cap`.
pub fn exterior_smallness_check(series: &DiagnosticsSeries, scheme_eps_rel: f64, cap: f64) -> Result<ExteriorReport> {
    let cone = series
        .cone
        .ok_or_else(|| LabError::Domain("the run did not track an exterior cone".into()))?;
    let at_t0 = series
        .samples
        .iter()
        .min_by(|a, b| (a.t - cone.t0).abs().total_cmp(&(b.t - cone.t0).abs()))
        .ok_or_else(|| LabError::Domain("empty series".into()))?;
    let initial = at_t0.cone_exterior;
    let scheme_eps = scheme_eps_rel * at_t0.free_energy;
    let max_exterior = series.samples.iter().map(|s| s.cone_exterior).fold(0.0, f64::max);
    let denom = initial + scheme_eps;
    let constant = if denom > 0.0 {
        max_exterior / denom
    } else if max_exterior == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    if constant > cap {
        return Err(LabError::HardFailure(format!(
            "exterior energy {max_exterior:e} exceeds {cap} x ({initial:e} + {scheme_eps:e}) outside the cone"
        )));
    }
    Ok(ExteriorReport {
        t0: cone.t0,
        radius: cone.radius,
        initial_exterior: initial,
        scheme_eps,
        max_exterior,
        constant,
    })
}

/// Window means of the quantities in the equipartition identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowAverages {
    pub start: f64,
    pub vel_l2: f64,
    pub kinetic: f64,
    pub mass_l2: f64,
    pub g0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquipartitionReport {
    /// `max |d⟨u|u̇⟩/dt - (‖u̇‖² - ‖∇u‖² - mass‖u‖² + G₀)|`.
    pub max_residual: f64,
    /// Largest magnitude of the right-hand side, for scale.
    pub max_rhs: f64,
    pub windows: Vec<WindowAverages>,
}

/// Checks `∂_t⟨u|u̇⟩ = ‖u̇‖² - ‖∇u‖² - mass‖u‖² + G₀` along the series and
/// averages its terms over consecutive windows of length `window`.
pub fn equipartition_monitor(series: &DiagnosticsSeries, window: f64) -> EquipartitionReport {
    let a = series.flow_mass;
    let mut max_residual: f64 = 0.0;
    let mut max_rhs: f64 = 0.0;
    for s in &series.samples {
        if s.equipartition_residual.is_finite() {
            max_residual = max_residual.max(s.equipartition_residual.abs());
        }
        max_rhs = max_rhs.max((s.vel_l2 - s.kinetic - a * s.mass_l2 + s.g0).abs());
    }
    let mut windows = Vec::new();
    let mut i = 0;
    let samples = &series.samples;
    while i < samples.len() {
        let start = samples[i].t;
        let j = samples[i..].partition_point(|s| s.t < start + window) + i;
        if j >= samples.len() && samples.last().map_or(true, |s| s.t - start < window * (1.0 - 1e-9)) {
            break;
        }
        let chunk = &samples[i..j.max(i + 1)];
        let k = chunk.len() as f64;
        windows.push(WindowAverages {
            start,
            vel_l2: chunk.iter().map(|s| s.vel_l2).sum::<f64>() / k,
            kinetic: chunk.iter().map(|s| s.kinetic).sum::<f64>() / k,
            mass_l2: chunk.iter().map(|s| s.mass_l2).sum::<f64>() / k,
            g0: chunk.iter().map(|s| s.g0).sum::<f64>() / k,
        });
        i = j.max(i + 1);
    }
    EquipartitionReport {
        max_residual,
        max_rhs,
        windows,
    }
}
