use std::sync::Arc;

use nlkg_core::functionals::free_energy;
use nlkg_core::grid::sample_with_velocity;
use nlkg_core::spectral::{free_evolve, mean_kinetic_split, FreePropagator};
use nlkg_core::RadialGrid;
use proptest::prelude::*;

fn grid(d: usize, n: usize) -> Arc<RadialGrid> {
    Arc::new(RadialGrid::new(d, n, 15.0, false).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn free_energy_is_conserved_exactly(
        d in prop_oneof![Just(2usize), Just(3), Just(4)],
        a in 0.1f64..2.0, b in -2.0f64..2.0, w in 0.3f64..3.0,
        mass in prop_oneof![Just(0.0), Just(0.68), Just(1.0)],
    ) {
        let g = grid(d, 301);
        let st = sample_with_velocity(g, |r| a * (-(r / w).powi(2)).exp(), |r| b * (-r * r).exp()).unwrap();
        let later = free_evolve(&st, mass, 17.3).unwrap();
        let (e0, e1) = (free_energy(&st, mass), free_energy(&later, mass));
        prop_assert!((e1 - e0).abs() <= 1e-12 * e0, "{e0} -> {e1}");
    }

    #[test]
    fn zero_time_is_the_identity(a in 0.1f64..2.0, b in -2.0f64..2.0) {
        // the origin node is slaved to its neighbours, so compare active nodes
        let g = grid(3, 301);
        let st = sample_with_velocity(g.clone(), |r| a * (-r * r).exp(), |r| b * (-r * r).exp()).unwrap();
        let same = free_evolve(&st, 1.0, 0.0).unwrap();
        for i in g.active() {
            prop_assert!((same.u[i] - st.u[i]).abs() <= 1e-12 * (a + b.abs()));
            prop_assert!((same.v[i] - st.v[i]).abs() <= 1e-12 * (a + b.abs()));
        }
    }

    #[test]
    fn cross_term_obeys_its_bound(a in 0.1f64..2.0, b in -2.0f64..2.0, window in 2.0f64..10.0) {
        let g = grid(3, 301);
        let prop = FreePropagator::new(g.clone()).unwrap();
        let st = sample_with_velocity(g, |r| a * (-r * r).exp(), |r| b * (-r * r).exp()).unwrap();
        let split = mean_kinetic_split(&prop, &st, window, 1.0).unwrap();
        prop_assert!(split.equivalence_holds());
        prop_assert!(split.forward >= 0.0 && split.backward >= 0.0);
    }
}

#[test]
fn short_windows_are_rejected() {
    let g = grid(3, 101);
    let prop = FreePropagator::new(g.clone()).unwrap();
    let st = sample_with_velocity(g, |r| (-r * r).exp(), |_| 0.0).unwrap();
    assert!(mean_kinetic_split(&prop, &st, 1.5, 1.0).is_err());
}
