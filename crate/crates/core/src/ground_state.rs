//! Radial ground states of `-ΔQ + cQ = f'(Q)` by shooting, the threshold
//! `m = J^{(c)}(Q)`, and the minimax cross-check of `m`.
//!
//! Profile integrals are evaluated with a fourth-order rule on the shooting
//! nodes using the integrator's own derivative `Q'`, so the variational
//! identities close far below the second-order accuracy of the lattice
//! functionals. Slowly decaying massless tails are added analytically.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::functionals::{ScalingPair, StateIntegrals};
use crate::grid::{sphere_area, RadialGrid, RadialState};
use crate::nonlinearity::{NonlinearityKind, NonlinearityModel};

pub use crate::tm::{tm_constant, TmConfig, TmReport};

/// `W(r) = (1 + r²/(d(d-2)))^{-(d-2)/2}`.
pub fn w_value(d: usize, r: f64) -> f64 {
    let k = (d * (d - 2)) as f64;
    (1.0 + r * r / k).powf(-(d as f64 - 2.0) / 2.0)
}

/// `W'(r) = -(r/d) (1 + r²/(d(d-2)))^{-d/2}`.
pub fn w_derivative(d: usize, r: f64) -> f64 {
    let k = (d * (d - 2)) as f64;
    -(r / d as f64) * (1.0 + r * r / k).powf(-(d as f64) / 2.0)
}

/// The static solution of `-ΔW = W^{2*-1}` normalised by `W(0) = 1`.
pub fn closed_form_w(d: usize, grid: Arc<RadialGrid>) -> Result<RadialState> {
    if d < 3 {
        return Err(LabError::Domain(format!("closed-form W needs d >= 3, got {d}")));
    }
    if grid.dim() != d {
        return Err(LabError::Domain(format!(
            "grid dimension {} differs from requested {d}",
            grid.dim()
        )));
    }
    crate::grid::sample(grid, |r| w_value(d, r))
}

const D2: [f64; 4] = [8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0];
const D1: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];

/// `max |-ΔQ + cQ - f'(Q)|` over interior nodes, using eighth-order central
/// differences (even reflection through the origin).
pub fn static_residual(grid: &RadialGrid, q: &[f64], model: &NonlinearityModel, c: f64) -> Result<f64> {
    let n = grid.len();
    let h = grid.spacing();
    let r = grid.radii();
    let d = grid.dim() as f64;
    let at = |j: isize| -> f64 {
        if grid.staggered() && j < 0 {
            // r_{-1-k} = -r_k
            q[(-j - 1) as usize]
        } else {
            q[j.unsigned_abs()]
        }
    };
    let mut worst: f64 = 0.0;
    for i in 0..n.saturating_sub(4) {
        let j = i as isize;
        let v: [f64; 9] = std::array::from_fn(|k| at(j + k as isize - 4));
        let mut second = -205.0 / 72.0 * v[4];
        let mut first = 0.0;
        for k in 1..5 {
            second += D2[k - 1] * (v[4 + k] + v[4 - k]);
            first += D1[k - 1] * (v[4 + k] - v[4 - k]);
        }
        second /= h * h;
        first /= h;
        let lap = if r[i] == 0.0 {
            d * second
        } else {
            second + (d - 1.0) / r[i] * first
        };
        let res = -lap + c * v[4] - model.force(v[4])?;
        worst = worst.max(res.abs());
    }
    Ok(worst)
}

/// Fourth-order composite rule for `∫_0^{r_max} ω_d r^{d-1} g(r) dr` on a
/// node-centred grid (Simpson, closed with Simpson 3/8 for an odd interval count).
pub fn profile_quadrature(grid: &RadialGrid) -> Result<Vec<f64>> {
    if grid.staggered() {
        return Err(LabError::Config("profile quadrature needs a node-centred grid".into()));
    }
    let n = grid.len();
    let intervals = n - 1;
    let h = grid.spacing();
    let mut c = vec![0.0; n];
    let simpson_end = if intervals % 2 == 0 { intervals } else { intervals - 3 };
    let mut k = 0;
    while k < simpson_end {
        c[k] += h / 3.0;
        c[k + 1] += 4.0 * h / 3.0;
        c[k + 2] += h / 3.0;
        k += 2;
    }
    if simpson_end < intervals {
        if intervals < 3 {
            return Err(LabError::Config("grid too small for the profile quadrature".into()));
        }
        let s = simpson_end;
        for (off, wgt) in [(0, 1.0), (1, 3.0), (2, 3.0), (3, 1.0)] {
            c[s + off] += 3.0 * h / 8.0 * wgt;
        }
    }
    let omega = sphere_area(grid.dim());
    Ok(grid
        .radii()
        .iter()
        .zip(c)
        .map(|(&r, ci)| omega * r.powi(grid.dim() as i32 - 1) * ci)
        .collect())
}

/// Analytic contributions from `r > r_max` of a massless profile that decays
/// like `A r^{2-d}`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MasslessTail {
    pub kinetic: f64,
    pub g0: f64,
    pub nonlinear: f64,
}

fn massless_tail(grid: &RadialGrid, q_end: f64, dq_end: f64, model: &NonlinearityModel) -> MasslessTail {
    let d = grid.dim();
    if d < 3 || !matches!(model.kind, NonlinearityKind::CriticalPower) {
        return MasslessTail::default();
    }
    let dd = d as f64;
    let big_r = grid.r_max();
    let omega = sphere_area(d);
    let crit = model.critical_exponent();
    let amp = q_end * big_r.powf(dd - 2.0);
    let g0 = omega * amp.abs().powf(crit) * big_r.powf(-dd) / dd;
    MasslessTail {
        // ∫_R^∞ |∇Q|² = -ω R^{d-1} Q Q' + ∫_R^∞ Q f'(Q)
        kinetic: -omega * big_r.powf(dd - 1.0) * q_end * dq_end + g0,
        g0,
        nonlinear: g0 / crit,
    }
}

/// Fourth-order integrals of a static profile with known derivative.
pub fn profile_integrals(
    grid: &RadialGrid,
    q: &[f64],
    dq: &[f64],
    model: &NonlinearityModel,
    tail: MasslessTail,
) -> Result<StateIntegrals> {
    let w = profile_quadrature(grid)?;
    let mut kinetic = 0.0;
    let mut mass_l2 = 0.0;
    let mut nonlinear = 0.0;
    let mut g0 = 0.0;
    for i in 0..grid.len() {
        kinetic += w[i] * dq[i] * dq[i];
        mass_l2 += w[i] * q[i] * q[i];
        if q[i] != 0.0 {
            let b = model.bundle(q[i])?;
            nonlinear += w[i] * b.f;
            g0 += w[i] * b.scaling;
        }
    }
    kinetic += tail.kinetic;
    nonlinear += tail.nonlinear;
    g0 += tail.g0;
    let d = grid.dim() as f64;
    Ok(StateIntegrals {
        dim: grid.dim(),
        kinetic,
        mass_l2,
        vel_l2: 0.0,
        nonlinear,
        g0,
        g2: d * (g0 - 2.0 * nonlinear),
    })
}

/// Outcome of one shooting trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShotEvent {
    /// `Q` became negative: the shooting parameter is too large.
    CrossesZero,
    /// `Q'` became positive while `Q > 0`: the shooting parameter is too small.
    TurnsUp,
    /// Reached `r_max` with neither event.
    Survived,
}

#[derive(Debug, Clone)]
struct Shot {
    q: Vec<f64>,
    p: Vec<f64>,
    event: ShotEvent,
}

/// Integrates outward from `Q(0) = a`, stopping at the first event.
fn shoot_once(model: &NonlinearityModel, c: f64, grid: &RadialGrid, a: f64) -> Result<Shot> {
    let r = grid.radii();
    let n = r.len();
    let d = grid.dim() as f64;
    let rhs = |rr: f64, q: f64, p: f64| -> Result<f64> { Ok(c * q - model.force(q)? - (d - 1.0) / rr * p) };
    // Taylor start: Q = a + A r² + B r⁴ with 2dA = g(a), 4(d+2)B = g'(a) A
    let (_, fp, fpp) = model.derivatives(a)?;
    let g0 = c * a - fp;
    let big_a = g0 / (2.0 * d);
    let big_b = (c - fpp) * big_a / (4.0 * (d + 2.0));
    let advance = |r_from: f64, r_to: f64, sub: usize, y0: f64, z0: f64| -> Result<(f64, f64)> {
        let hh = (r_to - r_from) / sub as f64;
        let (mut yn, mut zn) = (y0, z0);
        for k in 0..sub {
            let rr = r_from + k as f64 * hh;
            let (y, z) = (yn, zn);
            let k1y = z;
            let k1z = rhs(rr, y, z)?;
            let k2y = z + 0.5 * hh * k1z;
            let k2z = rhs(rr + 0.5 * hh, y + 0.5 * hh * k1y, z + 0.5 * hh * k1z)?;
            let k3y = z + 0.5 * hh * k2z;
            let k3z = rhs(rr + 0.5 * hh, y + 0.5 * hh * k2y, z + 0.5 * hh * k2z)?;
            let k4y = z + hh * k3z;
            let k4z = rhs(rr + hh, y + hh * k3y, z + hh * k3z)?;
            yn = y + hh / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
            zn = z + hh / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
        }
        Ok((yn, zn))
    };
    let mut q = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    let mut start = 0;
    if r[0] == 0.0 {
        q.push(a);
        p.push(0.0);
        start = 1;
    }
    // the series is used only very close to the origin and then integrated out
    let first = r[start];
    let rs = first / 1024.0;
    let (y1, z1) = advance(
        rs,
        first,
        1024,
        a + big_a * rs * rs + big_b * rs.powi(4),
        2.0 * big_a * rs + 4.0 * big_b * rs.powi(3),
    )?;
    q.push(y1);
    p.push(z1);
    let mut event = ShotEvent::Survived;
    let spacing = grid.spacing();
    for i in start..n - 1 {
        // the (d-1)/r coefficient is large near the origin: refine there
        let near_origin = (256.0 * spacing / r[i]).ceil() as usize;
        // and wherever the local oscillation scale is not resolved to
        // round-off: the residual check differentiates the nodal values twice
        let stiffness = (model.derivatives(q[i])?.2.abs() + c).sqrt() * (r[i + 1] - r[i]);
        let sub = near_origin.max((stiffness / 2e-3).ceil() as usize).clamp(1, 1024);
        let (yn, zn) = advance(r[i], r[i + 1], sub, q[i], p[i])?;
        let rr = r[i];
        if !yn.is_finite() || !zn.is_finite() {
            return Err(LabError::Convergence(format!(
                "shooting trajectory from Q(0) = {a} became non-finite at r = {rr}"
            )));
        }
        q.push(yn);
        p.push(zn);
        if yn < 0.0 {
            event = ShotEvent::CrossesZero;
            break;
        } else if zn > 0.0 {
            event = ShotEvent::TurnsUp;
            break;
        }
    }
    // a parameter below the constant equilibrium turns up immediately
    if event == ShotEvent::Survived && g0 > 0.0 {
        event = ShotEvent::TurnsUp;
    }
    Ok(Shot { q, p, event })
}

/// `e^z K_ν(z)` for `z > 0`: the asymptotic series for large `z`, otherwise the
/// trapezoid rule on `∫_0^∞ e^{-z(cosh t - 1)} cosh(νt) dt`.
pub fn scaled_bessel_k(nu: f64, z: f64) -> f64 {
    if z >= 20.0 {
        let mu = 4.0 * nu * nu;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..40 {
            let next = term * (mu - ((2 * k - 1) as f64).powi(2)) / (k as f64 * 8.0 * z);
            if next.abs() >= term.abs() {
                break;
            }
            term = next;
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        return (std::f64::consts::PI / (2.0 * z)).sqrt() * sum;
    }
    let t_max = (1.0 + 50.0 / z).acosh();
    let steps = if z < 2.0 { 800 } else { 200 };
    let dt = t_max / steps as f64;
    let mut s = 0.5;
    for k in 1..=steps {
        let t = k as f64 * dt;
        let wgt = if k == steps { 0.5 } else { 1.0 };
        s += wgt * (-z * (t.cosh() - 1.0)).exp() * (nu * t).cosh();
    }
    s * dt
}

/// Ground state, threshold and variational diagnostics.
#[derive(Debug, Clone)]
pub struct GroundStateResult {
    pub q: RadialState,
    /// `Q'` at the nodes.
    pub dq: Vec<f64>,
    pub m: f64,
    pub c: f64,
    pub residual_linf: f64,
    /// `K^{(c)}_{α,β}(Q)` keyed by pair label.
    pub nehari: BTreeMap<String, f64>,
    pub integrals: StateIntegrals,
    pub tail: MasslessTail,
    /// Normalisation used for the closure tolerances: `‖Q‖²_{H¹}`, or `‖∇Q‖²`
    /// when `Q ∉ L²` (massless critical problem in `d = 3, 4`).
    pub norm_sq: f64,
    pub shooting_parameter: f64,
    pub model: NonlinearityModel,
    pub notes: Vec<String>,
}

/// Metadata persisted next to the profile CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundStateMeta {
    pub dim: usize,
    pub n: usize,
    pub r_max: f64,
    pub m: f64,
    pub c: f64,
    pub residual_linf: f64,
    pub nehari: BTreeMap<String, f64>,
    pub integrals: StateIntegrals,
    pub tail: MasslessTail,
    pub norm_sq: f64,
    pub shooting_parameter: f64,
    pub model: NonlinearityModel,
    pub notes: Vec<String>,
}

/// Canonical pairs plus two fixed admissible pairs drawn from a seeded generator.
pub fn closure_pairs(d: usize) -> Vec<ScalingPair> {
    let mut pairs = ScalingPair::canonical(d).to_vec();
    pairs.extend(random_admissible_pairs(d, 2, 0x5eed));
    pairs
}

/// Admissible `(α, β)`: `α ≥ 0`, `2α + dβ ≥ 0`, `2α + (d-2)β ≥ 0`.
pub fn random_admissible_pairs(d: usize, count: usize, seed: u64) -> Vec<ScalingPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let alpha: f64 = rng.gen_range(0.0..2.0);
        let beta: f64 = rng.gen_range(-2.0..2.0);
        if let Ok(pair) = ScalingPair::new(alpha, beta, d) {
            if pair.mu_bar(d) > 1e-3 {
                out.push(pair);
            }
        }
    }
    out
}

impl GroundStateResult {
    fn assemble(
        grid: Arc<RadialGrid>,
        q: Vec<f64>,
        dq: Vec<f64>,
        model: NonlinearityModel,
        c: f64,
        a: f64,
        mut notes: Vec<String>,
    ) -> Result<Self> {
        let tail = if c == 0.0 {
            massless_tail(&grid, q[q.len() - 1], dq[dq.len() - 1], &model)
        } else {
            MasslessTail::default()
        };
        let integrals = profile_integrals(&grid, &q, &dq, &model, tail)?;
        let residual_linf = static_residual(&grid, &q, &model, c)?;
        let d = grid.dim();
        let l2_finite = c > 0.0 || d > 4;
        if !l2_finite {
            notes.push(format!(
                "Q decays like r^{{{}}} and is not square integrable; closure tolerances use ‖∇Q‖²",
                2 - d as i64
            ));
        }
        let norm_sq = if l2_finite {
            integrals.kinetic + integrals.mass_l2
        } else {
            integrals.kinetic
        };
        let nehari = closure_pairs(d)
            .into_iter()
            .map(|pair| (pair.label(), integrals.k(pair, c)))
            .collect();
        let m = integrals.static_energy(c);
        let state = RadialState::from_parts(grid.clone(), q, vec![0.0; grid.len()], 0.0)?;
        Ok(Self {
            q: state,
            dq,
            m,
            c,
            residual_linf,
            nehari,
            integrals,
            tail,
            norm_sq,
            shooting_parameter: a,
            model,
            notes,
        })
    }

    /// Largest `|K|/norm_sq` over the closure pairs.
    pub fn worst_closure(&self) -> f64 {
        self.nehari
            .values()
            .map(|k| k.abs() / self.norm_sq)
            .fold(0.0, f64::max)
    }

    pub fn meta(&self) -> GroundStateMeta {
        let g = &self.q.grid;
        GroundStateMeta {
            dim: g.dim(),
            n: g.len(),
            r_max: g.r_max(),
            m: self.m,
            c: self.c,
            residual_linf: self.residual_linf,
            nehari: self.nehari.clone(),
            integrals: self.integrals,
            tail: self.tail,
            norm_sq: self.norm_sq,
            shooting_parameter: self.shooting_parameter,
            model: self.model,
            notes: self.notes.clone(),
        }
    }

    /// Writes `ground_state.json` and `ground_state.csv` (`r,Q,dQ`) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(dir.join("ground_state.json"), json)?;
        let mut w = csv::Writer::from_path(dir.join("ground_state.csv"))?;
        w.write_record(["r", "Q", "dQ"])?;
        for i in 0..self.q.grid.len() {
            w.write_record([
                format!("{:.17e}", self.q.grid.radii()[i]),
                format!("{:.17e}", self.q.u[i]),
                format!("{:.17e}", self.dq[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a result written by [`GroundStateResult::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let meta: GroundStateMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("ground_state.json"))?)?;
        let mut rdr = csv::Reader::from_path(dir.join("ground_state.csv"))?;
        let mut q = Vec::new();
        let mut dq = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| LabError::Input("short ground-state row".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| LabError::Input(format!("bad number in ground-state CSV: {e}")))
            };
            q.push(parse(1)?);
            dq.push(parse(2)?);
        }
        if q.len() != meta.n {
            return Err(LabError::Input(format!(
                "ground-state CSV has {} rows, metadata says {}",
                q.len(),
                meta.n
            )));
        }
        let grid = Arc::new(RadialGrid::new(meta.dim, meta.n, meta.r_max, false)?);
        let state = RadialState::from_parts(grid, q, vec![0.0; meta.n], 0.0)?;
        Ok(Self {
            q: state,
            dq,
            m: meta.m,
            c: meta.c,
            residual_linf: meta.residual_linf,
            nehari: meta.nehari,
            integrals: meta.integrals,
            tail: meta.tail,
            norm_sq: meta.norm_sq,
            shooting_parameter: meta.shooting_parameter,
            model: meta.model,
            notes: meta.notes,
        })
    }
}

/// Shooting parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootConfig {
    pub max_iter: usize,
    /// Relative agreement of the bracketing trajectories required before the
    /// profile is continued by its linear decaying tail.
    pub split_tol: f64,
}

impl Default for ShootConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            split_tol: 1e-8,
        }
    }
}

/// Ground state of `-ΔQ + cQ = f'(Q)` with `Q'(0) = 0`, bisecting on `Q(0)`
/// inside `bracket`. For the massless critical power the scaling family is
/// pinned by `Q(0) = 1` and the bracket is not used.
pub fn shoot(
    model: &NonlinearityModel,
    c: f64,
    grid: Arc<RadialGrid>,
    bracket: (f64, f64),
) -> Result<GroundStateResult> {
    shoot_with(model, c, grid, bracket, ShootConfig::default())
}

pub fn shoot_with(
    model: &NonlinearityModel,
    c: f64,
    grid: Arc<RadialGrid>,
    bracket: (f64, f64),
    cfg: ShootConfig,
) -> Result<GroundStateResult> {
    if !(0.0..1.0).contains(&c) && c != 1.0 {
        return Err(LabError::Domain(format!("mass coefficient must lie in [0, 1], got {c}")));
    }
    if grid.dim() != model.dim {
        return Err(LabError::Domain(format!(
            "grid dimension {} differs from model dimension {}",
            grid.dim(),
            model.dim
        )));
    }
    if grid.staggered() {
        return Err(LabError::Config("shooting needs a node-centred grid".into()));
    }
    let model = model.with_mass_shift(c)?;
    if matches!(model.kind, NonlinearityKind::CriticalPower) && c == 0.0 {
        let shot = shoot_once(&model, 0.0, &grid, 1.0)?;
        let notes = vec!["massless critical problem: scaling family pinned by Q(0) = 1".to_string()];
        return GroundStateResult::assemble(grid, shot.q, shot.p, model, c, 1.0, notes);
    }
    if model.is_exponential() && c <= 0.0 {
        return Err(LabError::Domain("the exponential model needs c > 0 for decaying solutions".into()));
    }
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(LabError::Bracket(format!("bracket ({lo}, {hi}) must satisfy 0 < lo < hi")));
    }
    let e_lo = shoot_once(&model, c, &grid, lo)?.event;
    let e_hi = shoot_once(&model, c, &grid, hi)?.event;
    match (e_lo, e_hi) {
        (ShotEvent::TurnsUp, ShotEvent::CrossesZero) => {}
        _ => {
            return Err(LabError::Bracket(format!(
                "bracket ({lo}, {hi}) does not straddle the ground state: events {e_lo:?}, {e_hi:?}"
            )))
        }
    }
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 4.0 * f64::EPSILON * hi {
            converged = true;
            break;
        }
        match shoot_once(&model, c, &grid, mid)?.event {
            ShotEvent::CrossesZero => hi = mid,
            ShotEvent::TurnsUp => lo = mid,
            ShotEvent::Survived => {
                lo = mid;
                hi = mid;
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(LabError::Convergence(format!(
            "no bracket collapse within {} bisection steps (width {})",
            cfg.max_iter,
            hi - lo
        )));
    }
    let under = shoot_once(&model, c, &grid, lo)?;
    let over = shoot_once(&model, c, &grid, hi)?;
    let n = grid.len();
    let common = under.q.len().min(over.q.len());
    let first_bad = (0..common).find(|&i| {
        let ql = under.q[i];
        (over.q[i] - ql).abs() > cfg.split_tol * ql.abs() || ql <= 0.0 || under.p[i] > 0.0
    });
    let split = match first_bad {
        Some(i) => i.saturating_sub(1).max(1),
        None if common == n => n - 1,
        None => common.saturating_sub(2).max(1),
    };
    let mut notes = Vec::new();
    let mut q = vec![0.0; n];
    let mut dq = vec![0.0; n];
    for i in 0..=split {
        q[i] = 0.5 * (under.q[i] + over.q[i]);
        dq[i] = 0.5 * (under.p[i] + over.p[i]);
    }
    if split < n - 1 {
        let q_split = q[split];
        if q_split > 1e-4 * q[0] {
            return Err(LabError::Convergence(format!(
                "bracketing trajectories separate at r = {} while Q = {q_split} is not yet small",
                grid.radii()[split]
            )));
        }
        let mu = c.sqrt();
        let nu = (grid.dim() as f64 - 2.0) / 2.0;
        let r = grid.radii();
        // decaying solution r^{-ν} K_ν(√c r) of the linearised equation
        let log_g = |rr: f64| -nu * rr.ln() - mu * rr + scaled_bessel_k(nu, mu * rr).ln();
        let dlog_g = |rr: f64| -mu * scaled_bessel_k(nu + 1.0, mu * rr) / scaled_bessel_k(nu, mu * rr);
        let base = log_g(r[split]);
        for i in split + 1..n {
            q[i] = q_split * (log_g(r[i]) - base).exp();
            dq[i] = q[i] * dlog_g(r[i]);
        }
        notes.push(format!(
            "profile continued by the linear decaying tail beyond r = {:.4}",
            r[split]
        ));
    } else if q[n - 1].abs() > 1e-8 * q[0] {
        notes.push(format!(
            "profile has not decayed at r_max (Q = {:.3e}); enlarge the grid",
            q[n - 1]
        ));
    }
    GroundStateResult::assemble(grid, q, dq, model, c, 0.5 * (lo + hi), notes)
}

/// `J^{(c)}(Q)` recomputed from the stored profile.
pub fn compute_m(result: &GroundStateResult, model: &NonlinearityModel) -> Result<f64> {
    let i = profile_integrals(&result.q.grid, &result.q.u, &result.dq, model, result.tail)?;
    Ok(i.static_energy(result.c))
}

/// Outcome of sampling `J^{(c)}` over perturbed profiles projected onto
/// `K^{(c)}_{α,β} = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxReport {
    pub m: f64,
    pub values: Vec<f64>,
    pub skipped: Vec<String>,
    /// `min_j (J_j - m)`.
    pub min_margin: f64,
}

impl MinimaxReport {
    pub fn holds(&self, tol: f64) -> bool {
        !self.values.is_empty() && self.min_margin >= -tol
    }
}

/// Integrals of `e^{αs} φ(e^{-βs} x)` as functions of `s`.
struct ScaledProfile<'a> {
    grid: &'a RadialGrid,
    q: Vec<f64>,
    base: StateIntegrals,
    weights: Vec<f64>,
    tail: MasslessTail,
    model: &'a NonlinearityModel,
    c: f64,
    pair: ScalingPair,
}

impl ScaledProfile<'_> {
    fn amplitude_integrals(&self, amp: f64) -> Result<(f64, f64)> {
        let mut f = 0.0;
        let mut g = 0.0;
        for (w, &x) in self.weights.iter().zip(&self.q) {
            if x != 0.0 {
                let b = self.model.bundle(amp * x)?;
                f += w * b.f;
                g += w * b.scaling;
            }
        }
        // the massless tail is homogeneous of degree 2* in the amplitude
        if self.tail.g0 != 0.0 {
            let crit = self.model.critical_exponent();
            let s = amp.abs().powf(crit);
            f += s * self.tail.nonlinear;
            g += s * self.tail.g0;
        }
        Ok((f, g))
    }

    /// `(K_{α,β}, J)` of the rescaled profile.
    fn eval(&self, s: f64) -> Result<(f64, f64)> {
        let d = self.grid.dim() as f64;
        let (a, b) = (self.pair.alpha, self.pair.beta);
        let amp = (a * s).exp();
        let ek = (2.0 * a * s + (d - 2.0) * b * s).exp();
        let em = (2.0 * a * s + d * b * s).exp();
        let ev = (d * b * s).exp();
        let (f, g) = self.amplitude_integrals(amp)?;
        let kin = ek * self.base.kinetic;
        let mass = em * self.base.mass_l2;
        let k = (a + b * (d - 2.0) / 2.0) * kin + (a + b * d / 2.0) * self.c * mass - ev * (a * g + b * d * f);
        let j = 0.5 * kin + 0.5 * self.c * mass - ev * f;
        Ok((k, j))
    }

    /// Root of `K(s) = 0` with `K > 0` for small `s`.
    fn project(&self) -> Result<f64> {
        let k0 = self.eval(0.0)?.0;
        let (mut lo, mut hi) = if k0 > 0.0 { (0.0, 0.5) } else { (-0.5, 0.0) };
        let mut tries = 0;
        loop {
            let klo = self.eval(lo)?.0;
            let khi = self.eval(hi)?.0;
            if klo > 0.0 && khi <= 0.0 {
                break;
            }
            if klo <= 0.0 {
                lo -= 0.5;
            }
            if khi > 0.0 {
                hi += 0.5;
            }
            tries += 1;
            if tries > 80 {
                return Err(LabError::Bracket("no sign change of K along the scaling curve".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid)?.0 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Samples `J^{(c)}` on `samples` random perturbations `Q + ε η` of the ground
/// state, each rescaled onto `K^{(c)}_{α,β} = 0`. The perturbations are sums of
/// Gaussian shells with analytic derivatives, so every sample is integrated
/// with the same fourth-order rule as `m` itself.
pub fn minimax_check(
    result: &GroundStateResult,
    model: &NonlinearityModel,
    pair: ScalingPair,
    samples: usize,
    seed: u64,
) -> Result<MinimaxReport> {
    let grid = &result.q.grid;
    let weights = profile_quadrature(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = grid.radii();
    let q0 = result.q.u[0].abs().max(1e-300);
    let mut values = Vec::new();
    let mut skipped = Vec::new();
    for j in 0..samples {
        let bumps: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                let amp = rng.gen_range(-0.3..0.3) * q0;
                let centre = rng.gen_range(0.0..4.0);
                let width = rng.gen_range(0.4..2.0);
                (amp, centre, width)
            })
            .collect();
        let eta = |x: f64| -> (f64, f64) {
            bumps.iter().fold((0.0, 0.0), |(v, dv), &(a, c0, w)| {
                // even in r so the profile stays smooth at the origin
                let e1 = (-((x - c0) / w).powi(2)).exp();
                let e2 = (-((x + c0) / w).powi(2)).exp();
                (
                    v + a * (e1 + e2),
                    dv + a * (-2.0 * (x - c0) / (w * w) * e1 - 2.0 * (x + c0) / (w * w) * e2),
                )
            })
        };
        let mut q = result.q.u.clone();
        let mut dq = result.dq.clone();
        for i in 0..r.len() {
            let (v, dv) = eta(r[i]);
            q[i] += v;
            dq[i] += dv;
        }
        let base = match profile_integrals(grid, &q, &dq, model, result.tail) {
            Ok(b) => b,
            Err(e) => {
                skipped.push(format!("sample {j}: {e}"));
                continue;
            }
        };
        let prof = ScaledProfile {
            grid,
            q,
            base,
            weights: weights.clone(),
            tail: result.tail,
            model,
            c: result.c,
            pair,
        };
        match prof.project().and_then(|s| prof.eval(s)) {
            Ok((_, jv)) => values.push(jv),
            Err(e) => skipped.push(format!("sample {j}: {e}")),
        }
    }
    let min_margin = values.iter().map(|v| v - result.m).fold(f64::INFINITY, f64::min);
    Ok(MinimaxReport {
        m: result.m,
        values,
        skipped,
        min_margin,
    })
}
