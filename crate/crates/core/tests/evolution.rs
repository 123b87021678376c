use std::sync::Arc;

use nlkg_core::data::InitialData;
use nlkg_core::evolution::{
    energy_distance, equipartition_monitor, evolve, exterior_smallness_check, step, BlowupCriterion, BlowupDetector,
    ConeSpec, EvolveConfig, RunVerdict, Sample, Scheme,
};
use nlkg_core::grid::{sample, sample_with_velocity};
use nlkg_core::ground_state::shoot;
use nlkg_core::spectral::free_evolve;
use nlkg_core::{NonlinearityModel, RadialGrid, RadialState};
use proptest::prelude::*;

fn grid(n: usize, r_max: f64) -> Arc<RadialGrid> {
    Arc::new(RadialGrid::new(3, n, r_max, false).unwrap())
}

fn run_steps(st: &RadialState, model: &NonlinearityModel, cfg: &EvolveConfig, n: usize) -> RadialState {
    let mut s = st.clone();
    for _ in 0..n {
        s = step(&s, model, cfg).unwrap();
    }
    s
}

fn linear_error(scheme: Scheme, dt: f64) -> f64 {
    let g = grid(801, 20.0);
    let st = sample_with_velocity(g, |r| (-r * r).exp(), |r| 0.5 * (-r * r / 2.0).exp()).unwrap();
    let model = NonlinearityModel::critical(3).unwrap();
    let cfg = EvolveConfig {
        dt,
        scheme,
        drop_nonlinearity: true,
        ..Default::default()
    };
    let t = 2.0;
    let n = (t / dt).round() as usize;
    let num = run_steps(&st, &model, &cfg, n);
    let exact = free_evolve(&st, 1.0, n as f64 * dt).unwrap();
    energy_distance(&num, &exact, 1.0)
}

#[test]
fn leapfrog_linear_flow_converges_at_second_order_in_time() {
    let coarse = linear_error(Scheme::Leapfrog, 0.01);
    let fine = linear_error(Scheme::Leapfrog, 0.005);
    let ratio = coarse / fine;
    assert!((3.5..4.5).contains(&ratio), "errors {coarse:e} {fine:e}");
}

#[test]
fn split_scheme_is_exact_for_the_linear_flow() {
    assert!(linear_error(Scheme::StrangSplit, 0.01) < 1e-10);
}

fn ground_state_drift(n: usize) -> f64 {
    let model = NonlinearityModel::subcritical(3, 3.0, 1.0, 1.0).unwrap();
    let g = grid(n, 30.0);
    let gs = shoot(&model, 1.0, g.clone(), (1.5, 10.0)).unwrap();
    let cfg = EvolveConfig {
        dt: 0.5 * g.spacing(),
        ..Default::default()
    };
    let end = run_steps(&gs.q, &model, &cfg, (2.0 / cfg.dt).round() as usize);
    energy_distance(&end, &gs.q, 1.0) / energy_distance(&gs.q, &RadialState::zero(g), 1.0)
}

#[test]
fn ground_state_is_stationary_under_the_massive_flow() {
    // The sampled profile is stationary up to the O(h²) consistency error.
    let coarse = ground_state_drift(1001);
    let fine = ground_state_drift(2001);
    assert!(fine < 1e-3, "{fine:e}");
    assert!(coarse / fine > 3.0, "{coarse:e} {fine:e}");
}

fn synthetic(t: f64, y: f64) -> Sample {
    Sample {
        t,
        y,
        energy_norm: y.sqrt(),
        z_ddot: f64::NAN,
        y_ddot: f64::NAN,
        ..Default::default()
    }
}

#[test]
fn norm_growth_fires_before_a_synthetic_singularity() {
    // y = (1 - t)^{-2}, so ‖u‖ ~ (1 - t)^{-1} crosses ten times its start at t = 0.9.
    let cfg = EvolveConfig::default();
    let mut det = BlowupDetector::new(&cfg, 0.0);
    let mut fired = None;
    for k in 0..1000 {
        let t = k as f64 * 1e-3;
        if let Some(c) = det.push(&synthetic(t, (1.0 - t).powi(-2))) {
            fired = Some((c, t));
            break;
        }
    }
    let (c, t) = fired.expect("detector fired");
    assert_eq!(c, BlowupCriterion::NormGrowth);
    assert!(t < 1.0 && (t - 0.9).abs() < 2e-3, "{t}");
}

#[test]
fn bounded_synthetic_series_is_not_flagged() {
    let cfg = EvolveConfig::default();
    let mut det = BlowupDetector::new(&cfg, 0.0);
    for k in 0..5000 {
        let s = Sample {
            z: 1.0,
            z_ddot: 0.0,
            ..synthetic(k as f64 * 1e-2, 2.0)
        };
        assert!(det.push(&s).is_none());
    }
    assert!(det.report().criterion.is_none());
}

#[test]
fn compact_data_stays_inside_the_light_cone() {
    let model = NonlinearityModel::critical(3).unwrap();
    let st = InitialData::Bump { amplitude: 0.5, radius: 2.0 }
        .build(grid(4001, 20.0), None)
        .unwrap();
    let cfg = EvolveConfig {
        dt: 0.5 * st.grid.spacing(),
        t_final: 6.0,
        cone: Some(ConeSpec { t0: 0.0, radius: 2.0 }),
        scatter_window: 100.0,
        ..Default::default()
    };
    let (_, series) = evolve(&st, &model, &cfg, None).unwrap();
    let rep = exterior_smallness_check(&series, 1e-10, 2.0).unwrap();
    assert_eq!(rep.initial_exterior, 0.0);
    assert!(rep.max_exterior < 1e-9 * series.samples[0].free_energy);
}

#[test]
fn two_schemes_agree_on_small_data() {
    let model = NonlinearityModel::critical(3).unwrap();
    let st = sample(grid(1001, 20.0), |r| 0.8 * (-r * r).exp()).unwrap();
    let mut ends = Vec::new();
    for scheme in [Scheme::Leapfrog, Scheme::StrangSplit] {
        let cfg = EvolveConfig {
            dt: 0.005,
            scheme,
            ..Default::default()
        };
        ends.push(run_steps(&st, &model, &cfg, 400));
    }
    let diff = energy_distance(&ends[0], &ends[1], 1.0);
    assert!(diff < 1e-3, "{diff:e}");
}

#[test]
fn equipartition_identity_and_energy_conservation() {
    let model = NonlinearityModel::critical(3).unwrap();
    let st = sample_with_velocity(grid(2001, 20.0), |r| 0.8 * (-r * r).exp(), |r| 0.3 * (-r * r).exp()).unwrap();
    let cfg = EvolveConfig {
        dt: 0.005,
        t_final: 6.0,
        record_every: 1,
        scatter_window: 100.0,
        ..Default::default()
    };
    let (rec, series) = evolve(&st, &model, &cfg, None).unwrap();
    assert_ne!(rec.verdict, RunVerdict::BlewUp);
    let eq = equipartition_monitor(&series, 2.0);
    assert!(eq.max_residual < 1e-3 * eq.max_rhs, "{} vs {}", eq.max_residual, eq.max_rhs);
    assert_eq!(eq.windows.len(), 2);
    assert!(rec.energy_drift < 1e-4, "{}", rec.energy_drift);
}

#[test]
fn energy_drift_at_default_resolution() {
    // Default step on the default lab grid (N = 2001, r_max = 40), T = 50.
    let model = NonlinearityModel::critical(3).unwrap();
    let st = sample_with_velocity(grid(2001, 40.0), |r| 0.5 * (-r * r / 4.0).exp(), |r| 0.2 * (-r * r / 4.0).exp())
        .unwrap();
    let cfg = EvolveConfig {
        t_final: 50.0,
        record_every: 50,
        scatter_window: 100.0,
        ..Default::default()
    };
    let (rec, _) = evolve(&st, &model, &cfg, None).unwrap();
    assert_ne!(rec.verdict, RunVerdict::BlewUp);
    assert!(rec.energy_drift <= 1e-6, "{}", rec.energy_drift);
}

#[test]
fn large_data_blows_up_and_small_data_scatters() {
    let model = NonlinearityModel::critical(3).unwrap();
    let g = grid(1001, 20.0);
    let cfg = EvolveConfig {
        dt: 0.005,
        t_final: 20.0,
        record_every: 1,
        scatter_tol: 1e-2,
        ..Default::default()
    };
    let big = sample(g.clone(), |r| 4.0 * (-r * r).exp()).unwrap();
    let (rec, _) = evolve(&big, &model, &cfg, None).unwrap();
    assert_eq!(rec.verdict, RunVerdict::BlewUp);
    let small = sample(g, |r| 0.05 * (-r * r).exp()).unwrap();
    let (rec, _) = evolve(&small, &model, &cfg, None).unwrap();
    assert_eq!(rec.verdict, RunVerdict::Scattered, "{rec:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn leapfrog_reverses_and_conserves(amp in 0.05f64..0.8, width in 0.5f64..2.0, vel in -0.5f64..0.5) {
        let model = NonlinearityModel::critical(3).unwrap();
        let st = sample_with_velocity(grid(401, 20.0), |r| amp * (-(r / width).powi(2)).exp(), |r| vel * (-r * r).exp()).unwrap();
        let cfg = EvolveConfig { dt: 0.02, ..Default::default() };
        let fwd = run_steps(&st, &model, &cfg, 100);
        let mut back = fwd.clone();
        back.v.iter_mut().for_each(|v| *v = -*v);
        let mut home = run_steps(&back, &model, &cfg, 100);
        home.v.iter_mut().for_each(|v| *v = -*v);
        let active = st.grid.active();
        let scale = energy_distance(&st, &RadialState::zero(st.grid.clone()), 1.0);
        let err = active.clone().map(|i| (home.u[i] - st.u[i]).abs().max((home.v[i] - st.v[i]).abs())).fold(0.0, f64::max);
        prop_assert!(err < 1e-9 * scale.max(1.0), "{err:e}");
    }
}
