#![allow(dead_code)]

use gtot_core::{
    DissipatorChannel, HamiltonianTerm, HilbertSpace, InitialState, ModeSpec, ModelSpec, C64,
};

/// Two Kerr modes coupled by hopping, uniform linear loss (γ = 1).
pub fn coupled_kerr(cutoff: usize, tau: f64, g: f64) -> ModelSpec {
    let space = HilbertSpace::new(vec![ModeSpec::boson("1", cutoff), ModeSpec::boson("2", cutoff)]).unwrap();
    ModelSpec::new(
        space,
        vec![
            HamiltonianTerm::Hopping { modes: (0, 1), tau },
            HamiltonianTerm::Kerr { mode: 0, g },
            HamiltonianTerm::Kerr { mode: 1, g },
        ],
        vec![DissipatorChannel::loss(0, 1.0), DissipatorChannel::loss(1, 1.0)],
    )
    .unwrap()
}

pub fn coherent(mean_number: f64) -> InitialState {
    InitialState::Coherent(C64::new(mean_number.sqrt(), 0.0))
}

use proptest::prelude::*;

/// Mode layout and parameters of a random number-conserving model.
#[derive(Clone, Debug)]
pub struct RandomModel {
    pub spec: ModelSpec,
    pub initial: Vec<InitialState>,
}

fn mode_strategy() -> impl Strategy<Value = Option<usize>> {
    // None is a two-level mode
    prop_oneof![1 => Just(None), 3 => (2usize..=5).prop_map(Some)]
}

/// Random models with only U(1)-symmetric terms and uniform linear loss.
pub fn u1_model(max_dim: usize) -> impl Strategy<Value = RandomModel> {
    prop::collection::vec(mode_strategy(), 2..=3)
        .prop_filter("dimension budget", move |modes| {
            modes.iter().map(|m| m.map_or(2, |c| c + 1)).product::<usize>() <= max_dim
        })
        .prop_flat_map(|modes| {
            let n = modes.len();
            (
                Just(modes),
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(-0.5f64..0.5, n),
                prop::collection::vec(-1.0f64..1.0, n * n),
                0.2f64..1.5,
                prop::collection::vec((0usize..3, 0.0f64..1.2, 0.0f64..6.3), n),
            )
        })
        .prop_map(|(modes, omegas, kerrs, couplings, gamma, init)| {
            let mode_specs: Vec<ModeSpec> = modes
                .iter()
                .enumerate()
                .map(|(i, m)| match m {
                    Some(c) => ModeSpec::boson(format!("b{i}"), *c),
                    None => ModeSpec::two_level(format!("q{i}")),
                })
                .collect();
            let n = modes.len();
            let mut terms = Vec::new();
            for i in 0..n {
                terms.push(HamiltonianTerm::Detuning { mode: i, omega: omegas[i] });
                if modes[i].is_some() {
                    terms.push(HamiltonianTerm::Kerr { mode: i, g: kerrs[i] });
                }
                for j in i + 1..n {
                    let c = couplings[i * n + j];
                    match (modes[i], modes[j]) {
                        (Some(_), Some(_)) => terms.push(HamiltonianTerm::Hopping { modes: (i, j), tau: c }),
                        (Some(_), None) => terms.push(HamiltonianTerm::JcCoupling { boson: i, two_level: j, eta: c }),
                        (None, Some(_)) => terms.push(HamiltonianTerm::JcCoupling { boson: j, two_level: i, eta: c }),
                        (None, None) => {}
                    }
                }
            }
            let channels = (0..n).map(|i| DissipatorChannel::loss(i, gamma)).collect();
            let mut initial: Vec<InitialState> = modes
                .iter()
                .zip(&init)
                .map(|(m, &(kind, mag, phase))| match (m, kind) {
                    (None, 0) => InitialState::Ground,
                    (None, _) => InitialState::Excited,
                    (Some(c), 0) => InitialState::Fock((mag as usize + 1).min(*c)),
                    (Some(_), _) => InitialState::Coherent(C64::from_polar(mag * 0.6, phase)),
                })
                .collect();
            // keep ⟨N⟩ away from the floor
            initial[0] = match modes[0] {
                None => InitialState::Excited,
                Some(_) => InitialState::Fock(1),
            };
            let space = HilbertSpace::new(mode_specs).unwrap();
            RandomModel { spec: ModelSpec::new(space, terms, channels).unwrap(), initial }
        })
}
