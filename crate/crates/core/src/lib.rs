//! Simulation engine for total equal-time correlators in dissipative
//! multimode systems of bosonic and two-level modes.
//!
//! The crate builds truncated operators ([`hilbert`]), Hamiltonians and
//! dissipators ([`model`]), integrates the Lindblad master equation
//! ([`dynamics`]), evaluates pairwise and total correlators ([`correlators`]),
//! and samples bosonic models in the positive-P representation ([`positivep`]).

pub mod correlators;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod liouville;
pub mod model;
pub mod ode;
pub mod operator;
pub mod positivep;

pub use correlators::{
    build_correlator_set, conservation_report, derivative_crosscheck, g2_grouped, g2_pair, g_tot, ConservationReport,
    CorrelatorSet, Identity,
};
pub use dynamics::{
    initial_state, integrate, lindblad_rhs, measure_leakage, uniform_grid, DensityMatrix, InitialState,
    IntegrateOptions, LindbladGenerator, Observable, Trajectory, DISSIPATOR_CONVENTION, LEAKAGE_KEY,
};
pub use error::{Error, Result};
pub use hilbert::{
    annihilation_matrix, embed, sigma_minus, total_number_operator, HilbertSpace, ModeKind, ModeSpec,
};
pub use model::{
    build_hamiltonian, build_jump_operators, check_u1_symmetry, ChannelKind, DissipatorChannel, Envelope,
    HamiltonianTerm, ModelSpec, SymmetryReport,
};
pub use operator::{Operator, C64};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use positivep::{pp_drift_diffusion, pp_run, PpEnsemble, PpModel, PpOptions};
