//! Fixtures shared by the benchmarks.

use gtot_core::{
    initial_state, DensityMatrix, DissipatorChannel, HamiltonianTerm, HilbertSpace, InitialState, ModeSpec, ModelSpec,
    C64,
};

/// Two Kerr modes with hopping and uniform loss, as in the bundled `fig1` scenario.
pub fn coupled_kerr(cutoff: usize) -> ModelSpec {
    let space = HilbertSpace::new(vec![ModeSpec::boson("1", cutoff), ModeSpec::boson("2", cutoff)]).unwrap();
    ModelSpec::new(
        space,
        vec![
            HamiltonianTerm::Hopping { modes: (0, 1), tau: 1.5 },
            HamiltonianTerm::Kerr { mode: 0, g: 0.25 },
            HamiltonianTerm::Kerr { mode: 1, g: 0.25 },
        ],
        vec![DissipatorChannel::loss(0, 1.0), DissipatorChannel::loss(1, 1.0)],
    )
    .unwrap()
}

/// Initial coherent amplitudes with mean numbers 1.7 and 0.22.
pub fn fig1_amplitudes() -> [C64; 2] {
    [C64::new(1.7f64.sqrt(), 0.0), C64::new(0.22f64.sqrt(), 0.0)]
}

pub fn fig1_state(spec: &ModelSpec) -> DensityMatrix {
    let [a, b] = fig1_amplitudes();
    initial_state(spec.space(), &[InitialState::Coherent(a), InitialState::Coherent(b)]).unwrap()
}
