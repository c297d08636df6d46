mod common;

use gtot_core::correlators::CONSERVATION_THRESHOLD;
use gtot_core::{build_correlator_set, conservation_report, initial_state, integrate, uniform_grid, IntegrateOptions};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn g_tot_is_constant_under_u1_and_uniform_loss(model in common::u1_model(150)) {
        let space = model.spec.space();
        let rho0 = initial_state(space, &model.initial).unwrap();
        let sets: Vec<_> = [2, 3].iter().map(|&m| build_correlator_set(space, m).unwrap()).collect();
        let observables: Vec<_> = sets.iter().flat_map(|cs| cs.observables()).collect();
        let traj = integrate(&model.spec, &rho0, &uniform_grid(1.5, 31), &IntegrateOptions::with_tol(1e-10), &observables)
            .unwrap();
        for cs in &sets {
            let rep = conservation_report(&traj, cs, CONSERVATION_THRESHOLD).unwrap();
            prop_assert!(rep.floor_breach.is_none());
            prop_assert!(rep.conserved, "m = {}: relative deviation {:e}", cs.m, rep.max_rel_dev);
        }
    }
}
