//! Focusing nonlinearities `f(u)` and numerical audits of the two-dimensional
//! exponential growth conditions.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Default overflow cap for the exponential model.
pub const DEFAULT_U_CAP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearityKind {
    /// `f(u) = |u|^{2*} / 2*`, `2* = 2d/(d-2)`, `d >= 3`.
    CriticalPower,
    /// `f(u) = λ (e^{κ u²} - 1 - κ u² - κ² u⁴ / 2) / (1 + |u|^β)` in two dimensions.
    /// `p` is the exponent audited in the monotonicity/convexity conditions.
    Exp2D {
        kappa: f64,
        beta: f64,
        lambda: f64,
        p: f64,
    },
    /// `f(u) = λ |u|^p / p`.
    SubcriticalPower { p: f64, lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityModel {
    pub kind: NonlinearityKind,
    pub dim: usize,
    /// Mass coefficient `c` of the shifted static problem.
    pub mass_shift: f64,
    /// Largest `|u|` at which the exponential model may be evaluated.
    /// Infinite for the power models; written as `null`.
    #[serde(default = "default_cap", with = "cap_serde")]
    pub u_cap: f64,
}

fn default_cap() -> f64 {
    DEFAULT_U_CAP
}

mod cap_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(cap: &f64, s: S) -> Result<S::Ok, S::Error> {
        if cap.is_finite() {
            s.serialize_some(cap)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Pointwise values `f`, `f'`, `Df = u f'` and `d (Df - 2f)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FBundle {
    pub f: f64,
    pub df: f64,
    pub scaling: f64,
    pub g2_density: f64,
}

impl NonlinearityModel {
    pub fn critical(dim: usize) -> Result<Self> {
        if dim < 3 {
            return Err(LabError::Domain(format!(
                "critical power needs d >= 3, got {dim}"
            )));
        }
        Ok(Self {
            kind: NonlinearityKind::CriticalPower,
            dim,
            mass_shift: 0.0,
            u_cap: f64::INFINITY,
        })
    }

    pub fn exp2d(kappa: f64, beta: f64, lambda: f64, p: f64, mass_shift: f64) -> Result<Self> {
        if !(kappa > 0.0 && beta >= 2.0 && lambda > 0.0) {
            return Err(LabError::Domain(format!(
                "exponential model needs κ > 0, β >= 2, λ > 0 (got {kappa}, {beta}, {lambda})"
            )));
        }
        let model = Self {
            kind: NonlinearityKind::Exp2D {
                kappa,
                beta,
                lambda,
                p,
            },
            dim: 2,
            mass_shift,
            u_cap: DEFAULT_U_CAP,
        };
        model.check_mass_shift()?;
        Ok(model)
    }

    pub fn subcritical(dim: usize, p: f64, lambda: f64, mass_shift: f64) -> Result<Self> {
        if p <= 2.0 {
            return Err(LabError::Domain(format!("power must exceed 2, got {p}")));
        }
        let model = Self {
            kind: NonlinearityKind::SubcriticalPower { p, lambda },
            dim,
            mass_shift,
            u_cap: f64::INFINITY,
        };
        model.check_mass_shift()?;
        Ok(model)
    }

    pub fn with_mass_shift(mut self, c: f64) -> Result<Self> {
        self.mass_shift = c;
        self.check_mass_shift()?;
        Ok(self)
    }

    fn check_mass_shift(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mass_shift) && self.mass_shift != 1.0 {
            return Err(LabError::Domain(format!(
                "mass shift must lie in [0, 1), got {}",
                self.mass_shift
            )));
        }
        Ok(())
    }

    /// Critical exponent `2d/(d-2)` (infinite in two dimensions).
    pub fn critical_exponent(&self) -> f64 {
        if self.dim <= 2 {
            f64::INFINITY
        } else {
            2.0 * self.dim as f64 / (self.dim as f64 - 2.0)
        }
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self.kind, NonlinearityKind::Exp2D { .. })
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        match &mut self.kind {
            NonlinearityKind::Exp2D { lambda: l, .. } => *l = lambda,
            NonlinearityKind::SubcriticalPower { lambda: l, .. } => *l = lambda,
            NonlinearityKind::CriticalPower => {}
        }
        self
    }

    fn check_cap(&self, u: f64) -> Result<()> {
        if u.abs() > self.u_cap {
            return Err(LabError::Saturation {
                value: u.abs(),
                cap: self.u_cap,
            });
        }
        Ok(())
    }

    /// `f(u)`, `f'(u)`, `f''(u)`.
    pub fn derivatives(&self, u: f64) -> Result<(f64, f64, f64)> {
        let a = u.abs();
        Ok(match self.kind {
            NonlinearityKind::CriticalPower => {
                let q = self.critical_exponent();
                let aq2 = a.powf(q - 2.0);
                (a * a * aq2 / q, aq2 * u, (q - 1.0) * aq2)
            }
            NonlinearityKind::SubcriticalPower { p, lambda } => {
                let ap2 = a.powf(p - 2.0);
                (lambda * a * a * ap2 / p, lambda * ap2 * u, lambda * (p - 1.0) * ap2)
            }
            NonlinearityKind::Exp2D {
                kappa,
                beta,
                lambda,
                ..
            } => {
                self.check_cap(u)?;
                exp2d_derivatives(kappa, beta, lambda, u)
            }
        })
    }

    pub fn bundle(&self, u: f64) -> Result<FBundle> {
        if !u.is_finite() {
            return Err(LabError::Input(format!("non-finite field value {u}")));
        }
        let (f, df, scaling) = match self.kind {
            NonlinearityKind::CriticalPower => {
                let q = self.critical_exponent();
                let a = u.abs();
                let aq2 = a.powf(q - 2.0);
                let f = a * a * aq2 / q;
                // Df = 2* f exactly
                (f, aq2 * u, q * f)
            }
            NonlinearityKind::SubcriticalPower { p, lambda } => {
                let a = u.abs();
                let ap2 = a.powf(p - 2.0);
                let f = lambda * a * a * ap2 / p;
                (f, lambda * ap2 * u, p * f)
            }
            NonlinearityKind::Exp2D { .. } => {
                let (f, df, _) = self.derivatives(u)?;
                (f, df, u * df)
            }
        };
        Ok(FBundle {
            f,
            df,
            scaling,
            g2_density: self.dim as f64 * (scaling - 2.0 * f),
        })
    }

    /// `f'(u)` only; the hot path of time stepping.
    #[inline]
    pub fn force(&self, u: f64) -> Result<f64> {
        match self.kind {
            NonlinearityKind::CriticalPower => {
                if self.dim == 3 {
                    let u2 = u * u;
                    Ok(u2 * u2 * u)
                } else {
                    let q = self.critical_exponent();
                    Ok(u.abs().powf(q - 2.0) * u)
                }
            }
            NonlinearityKind::SubcriticalPower { p, lambda } => Ok(lambda * u.abs().powf(p - 2.0) * u),
            NonlinearityKind::Exp2D { .. } => Ok(self.derivatives(u)?.1),
        }
    }

    /// `D²f = u f' + u² f''`.
    pub fn scaling_second(&self, u: f64) -> Result<f64> {
        let (_, df, ddf) = self.derivatives(u)?;
        Ok(u * df + u * u * ddf)
    }
}

/// `e^x - 1 - x - x²/2`, `e^x - 1 - x` without cancellation for small `x`.
fn exp_tails(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        let mut term = x * x / 2.0;
        let mut second = 0.0;
        let mut third = 0.0;
        let mut k = 2.0;
        // term = x^k / k!
        second += term;
        loop {
            k += 1.0;
            term *= x / k;
            second += term;
            third += term;
            if term.abs() <= 1e-18 * third.abs() || k > 60.0 {
                break;
            }
        }
        (third, second)
    } else {
        let e = x.exp_m1();
        (e - x - 0.5 * x * x, e - x)
    }
}

fn exp2d_derivatives(kappa: f64, beta: f64, lambda: f64, u: f64) -> (f64, f64, f64) {
    let a = u.abs();
    let x = kappa * u * u;
    let (g0, g1) = exp_tails(x);
    let em1 = x.exp_m1();
    let g = g0;
    let gp = 2.0 * kappa * u * g1;
    let gpp = 2.0 * kappa * g1 + 4.0 * kappa * kappa * u * u * em1;
    let h = 1.0 + a.powf(beta);
    let hp = beta * a.powf(beta - 1.0) * u.signum();
    let hpp = beta * (beta - 1.0) * a.powf(beta - 2.0);
    let f = lambda * g / h;
    let fp = lambda * (gp / h - g * hp / (h * h));
    let fpp = lambda
        * (gpp / h - 2.0 * gp * hp / (h * h) - g * hpp / (h * h) + 2.0 * g * hp * hp / (h * h * h));
    (f, fp, fpp)
}

/// `(f, f', Df, d (Df - 2f))` at `u`.
pub fn f_bundle(model: &NonlinearityModel, u: f64) -> Result<FBundle> {
    model.bundle(u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCondition {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub applicable: bool,
    pub exponent: f64,
    /// Largest sampled `|u|`; the large-`|u|` conditions are only checked up to here.
    pub largest_sample: f64,
    pub conditions: Vec<AuditCondition>,
}

impl AuditReport {
    pub fn all_passed(&self) -> bool {
        self.applicable && self.conditions.iter().all(|c| c.passed)
    }

    pub fn condition(&self, name: &str) -> Option<&AuditCondition> {
        self.conditions.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.conditions.push(AuditCondition {
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

/// Checks the two-dimensional growth conditions on a finite sample of `u > 0`.
///
/// Limits at `|u| → ∞` cannot be certified; the tail conditions compare the
/// behaviour over the upper half of the sampled range and are heuristic.
pub fn assumption_audit(model: &NonlinearityModel, u_samples: &[f64]) -> AuditReport {
    let (exponent, kappa0) = match model.kind {
        NonlinearityKind::Exp2D { p, kappa, .. } if model.dim == 2 => (p, Some(kappa)),
        NonlinearityKind::SubcriticalPower { p, .. } if model.dim == 2 => (p, None),
        _ => (f64::NAN, None),
    };
    let mut samples: Vec<f64> = u_samples
        .iter()
        .map(|u| u.abs())
        .filter(|u| *u > 0.0 && *u <= model.u_cap)
        .collect();
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let largest = samples.last().copied().unwrap_or(0.0);
    let mut report = AuditReport {
        applicable: exponent.is_finite(),
        exponent,
        largest_sample: largest,
        conditions: Vec::new(),
    };
    if !report.applicable || samples.is_empty() {
        return report;
    }
    let p = exponent;

    let at_zero = model.derivatives(0.0).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    let vanish = at_zero.0 == 0.0 && at_zero.1 == 0.0 && at_zero.2.abs() <= f64::EPSILON;
    report.push("f0_vanishing", vanish, format!("f, f', f'' at 0 = {at_zero:?}"));

    report.push("f1_exponent", p > 4.0, format!("p = {p}"));

    let eval: Vec<(f64, f64, f64, f64)> = samples
        .iter()
        .map(|&u| {
            let (f, df, ddf) = model.derivatives(u).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
            (u, f, u * df, u * df + u * u * ddf)
        })
        .collect();

    // (D - p) f >= 0 and (D - 2)(D - p) f = D²f - (p + 2) Df + 2p f >= 0
    let rel = |x: f64, scale: f64| x >= -1e-12 * scale.abs();
    let mut worst1 = (f64::INFINITY, 0.0);
    let mut worst2 = (f64::INFINITY, 0.0);
    let mut ok1 = true;
    let mut ok2 = true;
    for &(u, f, d1, d2) in &eval {
        let c1 = d1 - p * f;
        let c2 = d2 - (p + 2.0) * d1 + 2.0 * p * f;
        let scale = d2.abs() + d1.abs() + f.abs();
        ok1 &= rel(c1, scale);
        ok2 &= rel(c2, scale);
        let r1 = if f > 0.0 { c1 / f } else { 0.0 };
        let r2 = if f > 0.0 { c2 / f } else { 0.0 };
        if r1 < worst1.0 {
            worst1 = (r1, u);
        }
        if r2 < worst2.0 {
            worst2 = (r2, u);
        }
    }
    report.push(
        "f1_monotone",
        ok1,
        format!("min (D-p)f/f = {:.3e} at u = {}", worst1.0, worst1.1),
    );
    report.push(
        "f1_convex",
        ok2,
        format!("min (D-2)(D-p)f/f = {:.3e} at u = {}", worst2.0, worst2.1),
    );

    // small-u decay of D²f: |u|^{-p} |D²f| must not blow up toward 0
    let small_cut = samples[0].max(1e-300) * 100.0;
    let small: Vec<(f64, f64)> = eval
        .iter()
        .filter(|e| e.0 <= small_cut.min(0.1))
        .map(|e| (e.0, e.0.powf(-p) * e.3.abs()))
        .collect();
    let (ok3, detail3) = bounded_toward_zero(&small);
    report.push("f2_small_u_decay", ok3, detail3);

    let tail: Vec<&(f64, f64, f64, f64)> = eval.iter().filter(|e| e.0 >= 0.5 * largest).collect();
    let first = tail.first().copied();
    let last = tail.last().copied();
    match (kappa0, first, last) {
        (Some(k0), Some(a), Some(b)) if tail.len() >= 2 => {
            let ratio_a = a.2 / a.1;
            let ratio_b = b.2 / b.1;
            report.push(
                "f3_df_over_f_grows",
                ratio_b > ratio_a && ratio_b > p,
                format!("Df/f: {ratio_a:.3e} -> {ratio_b:.3e}"),
            );
            let k_hi = 1.1 * k0;
            let decay = |e: &(f64, f64, f64, f64)| {
                let (_, _, ddf) = model.derivatives(e.0).unwrap_or((0.0, 0.0, f64::NAN));
                (-k_hi * e.0 * e.0).exp() * ddf
            };
            let (da, db) = (decay(a), decay(b));
            report.push(
                "f3_second_derivative_decay",
                db.is_finite() && db.abs() < da.abs(),
                format!("e^(-1.1κ0 u²) f'': {da:.3e} -> {db:.3e}"),
            );
            let k_lo = 0.9 * k0;
            let (ga, gb) = (
                (-k_lo * a.0 * a.0).exp() * a.1,
                (-k_lo * b.0 * b.0).exp() * b.1,
            );
            report.push(
                "f3_growth",
                gb > ga,
                format!("e^(-0.9κ0 u²) f: {ga:.3e} -> {gb:.3e}"),
            );
            let bound: Vec<f64> = tail.iter().map(|e| (-k0 * e.0 * e.0).exp() * e.2).collect();
            let max_b = bound.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let end_b = *bound.last().unwrap();
            report.push(
                "df_bound",
                max_b.is_finite() && end_b <= max_b * (1.0 + 1e-9),
                format!("e^(-κ0 u²) Df: max {max_b:.3e}, last {end_b:.3e}"),
            );
            let tm: Vec<f64> = tail
                .iter()
                .map(|e| (-k0 * e.0 * e.0).exp() * e.0 * e.0 * e.1)
                .collect();
            let tm_max = tm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tm_end = *tm.last().unwrap();
            let near0: Vec<(f64, f64)> = eval.iter().map(|e| (e.0, e.1 / (e.0 * e.0))).collect();
            let (ok0, _) = bounded_toward_zero(&near0);
            report.push(
                "tm_condition",
                ok0 && tm_max.is_finite() && tm_end <= tm_max * (1.0 + 1e-9),
                format!("e^(-κ0 u²) u² f: max {tm_max:.3e}, last {tm_end:.3e}"),
            );
        }
        _ => {
            // power pseudo-models have no exponential tail
            report.push(
                "f3_df_over_f_grows",
                false,
                "no exponential growth parameter".into(),
            );
        }
    }
    report
}

/// A sequence sampled at increasing `u` is "bounded toward zero" when its value
/// at the smallest sample does not exceed ten times its maximum elsewhere.
fn bounded_toward_zero(values: &[(f64, f64)]) -> (bool, String) {
    if values.len() < 2 {
        return (true, "too few small samples".into());
    }
    let head = values[0].1;
    let rest = values[values.len() / 2..]
        .iter()
        .map(|v| v.1)
        .fold(0.0_f64, f64::max);
    let ok = head.is_finite() && rest.is_finite() && head <= 10.0 * rest + 1e-300;
    (ok, format!("value at u={:.1e}: {head:.3e}, upper half max {rest:.3e}", values[0].0))
}

/// Checks `(D - 4/(2-ε)) f >= 0` and `(D - 2)² f >= 0` on the samples; these
/// make the Payne–Sattinger functional `J - K₀/p`, `p = 2 + ε`, monotone.
pub fn blowup_exponent_audit(model: &NonlinearityModel, eps: f64, u_samples: &[f64]) -> bool {
    if !(eps > 0.0 && eps < 2.0) {
        return false;
    }
    let k = 4.0 / (2.0 - eps);
    u_samples.iter().all(|&u| match model.derivatives(u) {
        Ok((f, df, ddf)) => {
            let d1 = u * df;
            let d2 = d1 + u * u * ddf;
            let scale = 1e-12 * (d2.abs() + d1.abs() + f.abs());
            d1 - k * f >= -scale && d2 - 4.0 * d1 + 4.0 * f >= -scale
        }
        Err(_) => false,
    })
}

/// Log-spaced samples in `[lo, hi]`.
pub fn log_samples(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_unit_input() {
        let m = NonlinearityModel::critical(3).unwrap();
        let b = m.bundle(1.0).unwrap();
        assert!((b.f - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(b.df, 1.0);
        assert_eq!(b.scaling, 1.0);
        assert!((b.g2_density - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_input_vanishes() {
        let models = [
            NonlinearityModel::critical(3).unwrap(),
            NonlinearityModel::critical(4).unwrap(),
            NonlinearityModel::exp2d(1.0, 2.0, 1.0, 5.0, 0.5).unwrap(),
            NonlinearityModel::subcritical(3, 3.0, 1.0, 1.0).unwrap(),
        ];
        for m in &models {
            let b = m.bundle(0.0).unwrap();
            assert_eq!(b, FBundle::default());
            assert_eq!(m.derivatives(0.0).unwrap().2.abs(), 0.0);
        }
    }

    #[test]
    fn exp2d_matches_extended_precision() {
        // 50-digit evaluation of the model formula at u = 2 (κ = 1, β = 2, λ = 1)
        let m = NonlinearityModel::exp2d(1.0, 2.0, 1.0, 5.0, 0.5).unwrap();
        let b = m.bundle(2.0).unwrap();
        let close = |a: f64, b: f64| ((a - b) / b).abs() < 1e-12;
        assert!(close(b.f, 8.319_630_006_628_847_815_622));
        assert!(close(b.df, 33.022_816_021_212_313_009_99));
        assert!(close(b.scaling, 66.045_632_042_424_626_019_98));
        assert!(close(b.g2_density, 98.812_744_058_333_860_777_47));
        let (_, _, ddf) = m.derivatives(2.0).unwrap();
        assert!(close(ddf, 135.188_982_482_728_020_738_96));
    }

    #[test]
    fn exp2d_small_u_series_is_smooth() {
        let m = NonlinearityModel::exp2d(1.0, 2.0, 1.0, 5.0, 0.5).unwrap();
        // leading term λ κ³ u⁶ / 6
        let u: f64 = 1e-3;
        let f = m.bundle(u).unwrap().f;
        assert!((f / (u.powi(6) / 6.0) - 1.0).abs() < 1e-5);
        // continuity across the series/direct switch at κu² = 1
        let below = m.bundle(1.0 - 1e-12).unwrap();
        let above = m.bundle(1.0 + 1e-12).unwrap();
        assert!(((below.f - above.f) / above.f).abs() < 1e-10);
    }

    #[test]
    fn exp2d_finite_difference_of_f_gives_force() {
        let m = NonlinearityModel::exp2d(1.0, 2.0, 0.7, 5.0, 0.5).unwrap();
        for &u in &[0.3, 0.9, 1.7, 2.5, -1.2] {
            let mut errs = Vec::new();
            for &delta in &[1e-3, 5e-4] {
                let fd = (m.bundle(u + delta).unwrap().f - m.bundle(u - delta).unwrap().f) / (2.0 * delta);
                errs.push((fd - m.bundle(u).unwrap().df).abs());
            }
            // O(δ²): halving δ divides the error by about 4
            assert!(errs[1] < errs[0] / 3.0 || errs[0] < 1e-12, "u={u}: {errs:?}");
        }
    }

    #[test]
    fn saturation_beyond_cap() {
        let m = NonlinearityModel::exp2d(1.0, 2.0, 1.0, 5.0, 0.5).unwrap();
        assert!(matches!(m.bundle(31.0), Err(LabError::Saturation { .. })));
        assert!(m.bundle(29.0).is_ok());
    }

    #[test]
    fn audit_not_applicable_for_critical() {
        let m = NonlinearityModel::critical(3).unwrap();
        let r = assumption_audit(&m, &log_samples(1e-3, 20.0, 100));
        assert!(!r.applicable);
        assert!(!r.all_passed());
    }

    #[test]
    fn audit_cubic_pseudo_model_fails_exponent() {
        let m = NonlinearityModel::subcritical(2, 3.0, 1.0, 0.5).unwrap();
        let r = assumption_audit(&m, &log_samples(1e-3, 20.0, 100));
        assert!(r.applicable);
        assert!(!r.condition("f1_exponent").unwrap().passed);
        assert!(!r.all_passed());
    }

    #[test]
    fn blowup_exponent_for_critical_power() {
        let m = NonlinearityModel::critical(3).unwrap();
        let s = log_samples(1e-3, 20.0, 50);
        assert!(blowup_exponent_audit(&m, 0.5, &s));
        // 4/(2-ε) > 6 once ε > 4/3
        assert!(!blowup_exponent_audit(&m, 1.5, &s));
    }
}
