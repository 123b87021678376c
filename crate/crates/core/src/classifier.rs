//! Membership of initial data in the sets `K⁺` / `K⁻`, audits of the
//! variational estimates that drive the dichotomy, and the energy–momentum
//! algebra of Lorentz boosts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::functionals::{ScalingPair, StateIntegrals};
use crate::ground_state::random_admissible_pairs;
use crate::grid::RadialState;
use crate::nonlinearity::NonlinearityModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSet {
    KPlus,
    KMinus,
    AboveThreshold,
    BoundaryUnresolved,
}

impl VerdictSet {
    pub fn as_str(&self) -> &'static str {
        match self {
            VerdictSet::KPlus => "K_plus",
            VerdictSet::KMinus => "K_minus",
            VerdictSet::AboveThreshold => "above_threshold",
            VerdictSet::BoundaryUnresolved => "boundary_unresolved",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub set: VerdictSet,
    /// `m - E^{(a)}(u)`.
    pub energy_margin: f64,
    pub k_values: BTreeMap<String, f64>,
    pub mass_used: f64,
}

/// Tolerances of the classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyOptions {
    /// Mass coefficient `a` of `E^{(a)}` and `K^{(a)}`.
    pub mass: f64,
    /// Dead band `|K| ≤ sign_tol · ‖u‖²_{H¹}`.
    pub sign_tol: f64,
    /// Energy comparison `E ≤ m (1 + energy_tol)`.
    pub energy_tol: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            mass: 1.0,
            sign_tol: 1e-9,
            energy_tol: 1e-8,
        }
    }
}

impl ClassifyOptions {
    pub fn at_mass(mass: f64) -> Self {
        Self {
            mass,
            ..Self::default()
        }
    }
}

fn check_pairs(pairs: &[ScalingPair], d: usize) -> Result<()> {
    if let Some(p) = pairs.iter().find(|p| !p.is_admissible(d)) {
        return Err(LabError::Domain(format!("inadmissible pair {}", p.label())));
    }
    let canon = ScalingPair::canonical(d);
    for c in canon {
        if !pairs.iter().any(|p| (p.alpha - c.alpha).abs() < 1e-15 && (p.beta - c.beta).abs() < 1e-15) {
            return Err(LabError::Domain(format!(
                "audited pairs must include the canonical pair {}",
                c.label()
            )));
        }
    }
    Ok(())
}

/// Classifies `(u, u_t)` from its integrals.
pub fn classify_integrals(
    s: &StateIntegrals,
    m: f64,
    pairs: &[ScalingPair],
    opts: ClassifyOptions,
) -> Result<Verdict> {
    let a = opts.mass;
    let energy = s.energy(a);
    let k_values: BTreeMap<String, f64> = pairs.iter().map(|p| (p.label(), s.k(*p, a))).collect();
    let mut verdict = Verdict {
        set: VerdictSet::KPlus,
        energy_margin: m - energy,
        k_values,
        mass_used: a,
    };
    if energy > m + opts.energy_tol * m.abs() {
        verdict.set = VerdictSet::AboveThreshold;
        return Ok(verdict);
    }
    let norm = s.kinetic + s.mass_l2;
    if norm == 0.0 {
        // the zero field belongs to K⁺ through the non-strict inequalities
        return Ok(verdict);
    }
    let band = opts.sign_tol * norm;
    if verdict.k_values.values().any(|k| k.abs() <= band) {
        verdict.set = VerdictSet::BoundaryUnresolved;
        return Ok(verdict);
    }
    let positive = verdict.k_values.values().filter(|k| **k > 0.0).count();
    verdict.set = if positive == pairs.len() {
        VerdictSet::KPlus
    } else if positive == 0 {
        VerdictSet::KMinus
    } else {
        return Err(LabError::Inconsistency(verdict.k_values.into_iter().collect()));
    };
    Ok(verdict)
}

/// Decides whether `state` lies in `K⁺`, `K⁻`, above the threshold `m`, or
/// inside the numerical dead band around `K = 0`.
pub fn classify(
    state: &RadialState,
    model: &NonlinearityModel,
    m: f64,
    pairs: &[ScalingPair],
    opts: ClassifyOptions,
) -> Result<Verdict> {
    check_pairs(pairs, state.dim())?;
    let s = StateIntegrals::compute(state, model)?;
    classify_integrals(&s, m, pairs, opts)
}

/// The canonical pairs plus `extra` seeded admissible pairs.
pub fn audit_pairs(d: usize, extra: usize, seed: u64) -> Vec<ScalingPair> {
    let mut pairs = ScalingPair::canonical(d).to_vec();
    pairs.extend(random_admissible_pairs(d, extra, seed));
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignAuditRow {
    pub state: usize,
    pub pair: String,
    pub k: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignAuditReport {
    pub rows: Vec<SignAuditRow>,
    /// States whose audited signs were all equal.
    pub consistent: usize,
    /// States with mixed signs outside the dead band.
    pub disagreements: Vec<usize>,
    /// States with some `|K|` inside the dead band (excluded from the tally).
    pub boundary: Vec<usize>,
    /// States skipped because `E ≥ m`.
    pub skipped: Vec<usize>,
}

impl SignAuditReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["state", "pair", "K"])?;
        for r in &self.rows {
            w.write_record([r.state.to_string(), r.pair.clone(), format!("{:.17e}", r.k)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Checks that the sign of `K_{α,β}` does not depend on the admissible pair
/// for states strictly below the threshold.
pub fn sign_independence_audit(
    states: &[RadialState],
    model: &NonlinearityModel,
    m: f64,
    n_pairs: usize,
    seed: u64,
    opts: ClassifyOptions,
) -> Result<SignAuditReport> {
    let mut report = SignAuditReport::default();
    if states.is_empty() {
        return Ok(report);
    }
    let pairs = audit_pairs(states[0].dim(), n_pairs, seed);
    for (idx, st) in states.iter().enumerate() {
        let s = StateIntegrals::compute(st, model)?;
        if s.energy(opts.mass) >= m {
            report.skipped.push(idx);
            continue;
        }
        let band = opts.sign_tol * (s.kinetic + s.mass_l2);
        let ks: Vec<f64> = pairs.iter().map(|p| s.k(*p, opts.mass)).collect();
        for (p, k) in pairs.iter().zip(&ks) {
            report.rows.push(SignAuditRow {
                state: idx,
                pair: p.label(),
                k: *k,
            });
        }
        if ks.iter().any(|k| k.abs() <= band) {
            report.boundary.push(idx);
        } else if ks.iter().all(|k| *k > 0.0) || ks.iter().all(|k| *k < 0.0) {
            report.consistent += 1;
        } else {
            report.disagreements.push(idx);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct K2BoundReport {
    pub checked: usize,
    /// States removed by the filter `J ≤ m`, `K₂ ≥ 0`.
    pub excluded: usize,
    /// `min K₂/‖∇φ‖²` over the checked states (`+∞` when none had gradient).
    pub min_ratio: f64,
    /// The bound `1 - c`.
    pub bound: f64,
}

/// Checks `K₂(φ) ≥ (1 - c)‖∇φ‖²` on states with `J(φ) ≤ m` and `K₂(φ) ≥ 0`
/// (mass-one functionals) for the mass-shifted two-dimensional problem.
pub fn k2_lower_bound_probe(
    states: &[RadialState],
    model: &NonlinearityModel,
    m: f64,
    tol: f64,
) -> Result<K2BoundReport> {
    let c = model.mass_shift;
    if model.dim != 2 || !(c > 0.0 && c < 1.0) {
        return Err(LabError::Domain(format!(
            "the uniform K₂ bound needs d = 2 and c in (0, 1), got d = {}, c = {c}",
            model.dim
        )));
    }
    let bound = 1.0 - c;
    let mut report = K2BoundReport {
        checked: 0,
        excluded: 0,
        min_ratio: f64::INFINITY,
        bound,
    };
    for st in states {
        let s = StateIntegrals::compute(st, model)?;
        let k2 = s.k2();
        if s.static_energy(1.0) > m || k2 < 0.0 {
            report.excluded += 1;
            continue;
        }
        report.checked += 1;
        if s.kinetic > 0.0 {
            let ratio = k2 / s.kinetic;
            report.min_ratio = report.min_ratio.min(ratio);
            if ratio < bound - tol {
                return Err(LabError::HardFailure(format!(
                    "K₂/‖∇φ‖² = {ratio} below 1 - c = {bound}"
                )));
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdKReport {
    pub pair: String,
    pub mu_bar: f64,
    /// Largest `δ̂ ∈ (0, 1]` for which every `K⁺` sample passes.
    pub delta_hat: f64,
    pub plus_checked: usize,
    pub minus_checked: usize,
    /// Largest `K^{(c)} + μ̄M/2` over the `K⁻` samples (must be `≤ 0`).
    pub minus_worst: f64,
}

/// Audits `K^{(c)} ≥ min(δ̂ K^{(c)Q}, μ̄M/2)` on `K⁺` samples and
/// `K^{(c)} ≤ -μ̄M/2` on `K⁻` samples, where `K^{(c)Q}` is the quadratic part
/// and `M = ‖u_t‖² + (1 - c)‖u‖²`.
pub fn bdk_probe(
    plus: &[RadialState],
    minus: &[RadialState],
    model: &NonlinearityModel,
    pair: ScalingPair,
    tol: f64,
) -> Result<BdKReport> {
    let d = model.dim;
    if d == 2 && pair.alpha == 0.0 {
        return Err(LabError::Domain("the estimate excludes α = 0 in two dimensions".into()));
    }
    let c = model.mass_shift;
    let mu_bar = pair.mu_bar(d);
    let mut delta_hat: f64 = 1.0;
    for st in plus {
        let s = StateIntegrals::compute(st, model)?;
        let k = s.k(pair, c);
        let kq = s.k_free(pair, c);
        let half_m = mu_bar * s.m_functional(c) / 2.0;
        if k >= half_m || kq == 0.0 {
            continue;
        }
        delta_hat = delta_hat.min(k / kq);
    }
    if !(delta_hat > 0.0) && !plus.is_empty() {
        return Err(LabError::HardFailure(format!(
            "no positive δ̂ exists for the K⁺ samples (best {delta_hat})"
        )));
    }
    let mut minus_worst = f64::NEG_INFINITY;
    for st in minus {
        let s = StateIntegrals::compute(st, model)?;
        let excess = s.k(pair, c) + mu_bar * s.m_functional(c) / 2.0;
        minus_worst = minus_worst.max(excess);
        if excess > tol * s.h1_sq().max(1.0) {
            return Err(LabError::HardFailure(format!(
                "K^(c) = {} exceeds -μ̄M/2 on a K⁻ sample",
                s.k(pair, c)
            )));
        }
    }
    Ok(BdKReport {
        pair: pair.label(),
        mu_bar,
        delta_hat,
        plus_checked: plus.len(),
        minus_checked: minus.len(),
        minus_worst,
    })
}

/// Energy and momentum of a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyMomentum {
    pub e: f64,
    pub p: Vec<f64>,
}

impl EnergyMomentum {
    pub fn momentum_norm(&self) -> f64 {
        self.p.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `E² - |P|²`, invariant under boosts.
    pub fn invariant_mass_sq(&self) -> f64 {
        self.e * self.e - self.p.iter().map(|x| x * x).sum::<f64>()
    }
}

/// Hyperboloid coordinates `(α, β)`, `α² - |β|² = 1`, of the boost with
/// velocity `v`, `|v| < 1`.
pub fn boost_coordinates(v: &[f64]) -> Result<(f64, Vec<f64>)> {
    let v2: f64 = v.iter().map(|x| x * x).sum();
    if !(v2 < 1.0) {
        return Err(LabError::Domain(format!("boost velocity must satisfy |v| < 1, got {}", v2.sqrt())));
    }
    let alpha = 1.0 / (1.0 - v2).sqrt();
    Ok((alpha, v.iter().map(|x| alpha * x).collect()))
}

/// `E' = αE + β·P`, `P' = αP + βE` for the boost with velocity `v`.
pub fn lorentz_boost(ep: &EnergyMomentum, v: &[f64]) -> Result<EnergyMomentum> {
    if v.len() != ep.p.len() {
        return Err(LabError::Domain(format!(
            "boost has {} components, momentum has {}",
            v.len(),
            ep.p.len()
        )));
    }
    let (alpha, beta) = boost_coordinates(v)?;
    let bp: f64 = beta.iter().zip(&ep.p).map(|(b, p)| b * p).sum();
    Ok(EnergyMomentum {
        e: alpha * ep.e + bp,
        p: ep.p.iter().zip(&beta).map(|(p, b)| alpha * p + b * ep.e).collect(),
    })
}

/// The boost velocity that removes the momentum, and the reduced pair with
/// `E' = sqrt(E² - |P|²)`, `P' = 0`.
pub fn zero_momentum_reduce(ep: &EnergyMomentum) -> Result<(Vec<f64>, EnergyMomentum)> {
    let pn = ep.momentum_norm();
    if !(ep.e > pn) {
        return Err(LabError::Domain(format!("reduction needs E > |P|, got E = {}, |P| = {pn}", ep.e)));
    }
    let v: Vec<f64> = ep.p.iter().map(|p| -p / ep.e).collect();
    let reduced = EnergyMomentum {
        e: ((ep.e - pn) * (ep.e + pn)).sqrt(),
        p: vec![0.0; ep.p.len()],
    };
    Ok((v, reduced))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_boost() {
        let ep = EnergyMomentum { e: 2.0, p: vec![0.5, -0.3] };
        assert_eq!(lorentz_boost(&ep, &[0.0, 0.0]).unwrap(), ep);
        assert!(lorentz_boost(&ep, &[0.8, 0.6]).is_err());
        assert!(lorentz_boost(&ep, &[0.1]).is_err());
    }

    #[test]
    fn reduction_examples() {
        let (_, r) = zero_momentum_reduce(&EnergyMomentum { e: 5.0, p: vec![3.0] }).unwrap();
        assert!((r.e - 4.0).abs() < 1e-15);
        let (v, r) = zero_momentum_reduce(&EnergyMomentum { e: 1.0, p: vec![0.0] }).unwrap();
        assert_eq!(v, vec![0.0]);
        assert_eq!(r.e, 1.0);
        assert!(zero_momentum_reduce(&EnergyMomentum { e: 1.0, p: vec![1.0] }).is_err());
    }

    #[test]
    fn reduced_pair_matches_explicit_boost() {
        let ep = EnergyMomentum { e: 1.0, p: vec![0.3, 0.4] };
        let (v, r) = zero_momentum_reduce(&ep).unwrap();
        let b = lorentz_boost(&ep, &v).unwrap();
        assert!((b.e - r.e).abs() < 1e-14);
        assert!(b.p.iter().all(|p| p.abs() < 1e-14));
        assert!((r.e - 0.75f64.sqrt()).abs() < 1e-15);
    }
}
