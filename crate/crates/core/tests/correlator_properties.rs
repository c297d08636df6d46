mod common;

use gtot_core::{build_correlator_set, check_u1_symmetry, total_number_operator, HilbertSpace, ModeSpec, Operator};
use proptest::prelude::*;

fn space_strategy() -> impl Strategy<Value = HilbertSpace> {
    prop::collection::vec(prop_oneof![Just(None), (0usize..=4).prop_map(Some)], 1..=3).prop_map(|modes| {
        let specs = modes
            .iter()
            .enumerate()
            .map(|(i, m)| match m {
                Some(c) => ModeSpec::boson(format!("m{i}"), *c),
                None => ModeSpec::two_level(format!("m{i}")),
            })
            .collect();
        HilbertSpace::new(specs).unwrap()
    })
}

fn falling_factorial(n: &Operator, m: usize) -> Operator {
    let id = Operator::identity(n.dim());
    (0..m).fold(id.clone(), |acc, k| &acc * &(n - &id.scale_re(k as f64)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn j_is_falling_factorial_of_n(space in space_strategy(), m in 2usize..=4) {
        let cs = build_correlator_set(&space, m).unwrap();
        let expect = falling_factorial(&total_number_operator(&space), m);
        prop_assert!((&cs.j_op - &expect).frobenius_norm() <= 1e-10 * expect.frobenius_norm().max(1.0));
    }

    #[test]
    fn j_is_hermitian_diagonal_and_nonnegative(space in space_strategy(), m in 2usize..=3) {
        let cs = build_correlator_set(&space, m).unwrap();
        prop_assert!(cs.j_op.is_hermitian(1e-12));
        prop_assert!(cs.n_op.is_hermitian(0.0));
        prop_assert!(cs.j_op.is_diagonal());
        prop_assert!(cs.j_op.diagonal_values().iter().all(|v| v.re >= -1e-12));
        prop_assert!(cs.j_op.commutator(&cs.n_op).frobenius_norm() < 1e-12);
    }

    #[test]
    fn pair_moments_are_symmetric(space in space_strategy()) {
        let cs = build_correlator_set(&space, 2).unwrap();
        for i in 0..space.n_modes() {
            for j in 0..space.n_modes() {
                prop_assert_eq!(cs.pair_op(i, j).unwrap(), cs.pair_op(j, i).unwrap());
            }
        }
    }

    #[test]
    fn number_conserving_hamiltonians_commute_with_j(model in common::u1_model(400), m in 2usize..=3) {
        let spec = &model.spec;
        let report = check_u1_symmetry(spec, 1e-12, &[0.0]);
        prop_assert!(report.is_u1_symmetric);
        prop_assert!(report.predicted_conserved);
        let cs = build_correlator_set(spec.space(), m).unwrap();
        let h = spec.static_hamiltonian();
        let scale = h.frobenius_norm() * cs.j_op.frobenius_norm();
        prop_assert!(h.commutator(&cs.j_op).frobenius_norm() <= 1e-12 * scale);
    }
}
