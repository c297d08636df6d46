//! Hamiltonian and dissipator construction plus U(1) symmetry analysis.

use crate::error::{Error, Result};
use crate::hilbert::{total_number_operator, HilbertSpace, ModeKind};
use crate::operator::Operator;

/// Real time envelope `h(t)` multiplying a classical drive.
#[derive(Clone, Debug, PartialEq)]
pub enum Envelope {
    /// Continuous wave, `h ≡ 1`.
    Constant,
    Cosine { omega: f64, phase: f64 },
    Gaussian { center: f64, width: f64 },
    /// `1` on `[on, off)`, `0` elsewhere.
    Window { on: f64, off: f64 },
}

impl Envelope {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Envelope::Constant => 1.0,
            Envelope::Cosine { omega, phase } => (omega * t + phase).cos(),
            Envelope::Gaussian { center, width } => (-0.5 * ((t - center) / width).powi(2)).exp(),
            Envelope::Window { on, off } => {
                if t >= on && t < off {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Envelope::Constant)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HamiltonianTerm {
    /// `ω n`
    Detuning { mode: usize, omega: f64 },
    /// `τ (cᵢ†cⱼ + cⱼ†cᵢ)`
    Hopping { modes: (usize, usize), tau: f64 },
    /// `g a†²a²`
    Kerr { mode: usize, g: f64 },
    /// `η (a†σ⁻ + aσ⁺)`
    JcCoupling { boson: usize, two_level: usize, eta: f64 },
    /// `f h(t) (c + c†)`
    Drive { mode: usize, amplitude: f64, envelope: Envelope },
}

impl HamiltonianTerm {
    fn modes(&self) -> Vec<usize> {
        match *self {
            HamiltonianTerm::Detuning { mode, .. }
            | HamiltonianTerm::Kerr { mode, .. }
            | HamiltonianTerm::Drive { mode, .. } => vec![mode],
            HamiltonianTerm::Hopping { modes: (i, j), .. } => vec![i, j],
            HamiltonianTerm::JcCoupling { boson, two_level, .. } => vec![boson, two_level],
        }
    }

    fn rate(&self) -> f64 {
        match *self {
            HamiltonianTerm::Detuning { omega, .. } => omega,
            HamiltonianTerm::Hopping { tau, .. } => tau,
            HamiltonianTerm::Kerr { g, .. } => g,
            HamiltonianTerm::JcCoupling { eta, .. } => eta,
            HamiltonianTerm::Drive { amplitude, .. } => amplitude,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    /// Jump operator `aᵖ` (or `σ⁻` for `p = 1` on a two-level mode).
    Loss { p: u32 },
    /// Jump operator `a†`.
    Gain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DissipatorChannel {
    pub mode: usize,
    pub kind: ChannelKind,
    pub rate: f64,
}

impl DissipatorChannel {
    pub fn loss(mode: usize, rate: f64) -> Self {
        Self { mode, kind: ChannelKind::Loss { p: 1 }, rate }
    }

    pub fn multi_photon_loss(mode: usize, p: u32, rate: f64) -> Self {
        Self { mode, kind: ChannelKind::Loss { p }, rate }
    }

    pub fn gain(mode: usize, rate: f64) -> Self {
        Self { mode, kind: ChannelKind::Gain, rate }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, ChannelKind::Loss { p: 1 } | ChannelKind::Gain)
    }
}

/// Validated open-system model: space, Hamiltonian terms, dissipator channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    space: HilbertSpace,
    terms: Vec<HamiltonianTerm>,
    channels: Vec<DissipatorChannel>,
}

impl ModelSpec {
    pub fn new(space: HilbertSpace, terms: Vec<HamiltonianTerm>, channels: Vec<DissipatorChannel>) -> Result<Self> {
        let n = space.n_modes();
        let check = |index: usize| -> Result<()> {
            if index < n {
                Ok(())
            } else {
                Err(Error::ModeIndex { index, count: n })
            }
        };
        for term in &terms {
            for m in term.modes() {
                check(m)?;
            }
            if !term.rate().is_finite() {
                return Err(Error::InvalidModel(format!("non-finite rate in {term:?}")));
            }
            match term {
                HamiltonianTerm::Hopping { modes: (i, j), .. } if i == j => {
                    return Err(Error::InvalidModel(format!("hopping couples mode {i} to itself")));
                }
                HamiltonianTerm::JcCoupling { boson, two_level, .. } => {
                    if !space.modes()[*boson].is_boson() {
                        return Err(Error::KindMismatch(format!(
                            "JC coupling expects mode `{}` to be bosonic",
                            space.modes()[*boson].label
                        )));
                    }
                    if space.modes()[*two_level].kind != ModeKind::TwoLevel {
                        return Err(Error::KindMismatch(format!(
                            "JC coupling expects mode `{}` to be two-level",
                            space.modes()[*two_level].label
                        )));
                    }
                }
                HamiltonianTerm::Kerr { mode, .. } if !space.modes()[*mode].is_boson() => {
                    return Err(Error::KindMismatch(format!(
                        "Kerr term on two-level mode `{}`",
                        space.modes()[*mode].label
                    )));
                }
                HamiltonianTerm::Drive { envelope: Envelope::Gaussian { width, .. }, .. } if *width <= 0.0 => {
                    return Err(Error::InvalidModel("Gaussian envelope width must be positive".into()));
                }
                _ => {}
            }
        }
        for ch in &channels {
            check(ch.mode)?;
            if !(ch.rate.is_finite() && ch.rate >= 0.0) {
                return Err(Error::InvalidModel(format!("channel rate must be finite and ≥ 0, got {}", ch.rate)));
            }
            let mode = &space.modes()[ch.mode];
            match (ch.kind, &mode.kind) {
                (ChannelKind::Loss { p: 0 }, _) => {
                    return Err(Error::InvalidModel("loss order p must be ≥ 1".into()));
                }
                (ChannelKind::Gain, ModeKind::TwoLevel) => {
                    return Err(Error::KindMismatch(format!("gain channel on two-level mode `{}`", mode.label)));
                }
                (ChannelKind::Loss { p }, ModeKind::TwoLevel) if p >= 2 => {
                    return Err(Error::KindMismatch(format!(
                        "{p}-photon loss on two-level mode `{}`",
                        mode.label
                    )));
                }
                _ => {}
            }
        }
        Ok(Self { space, terms, channels })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn terms(&self) -> &[HamiltonianTerm] {
        &self.terms
    }

    pub fn channels(&self) -> &[DissipatorChannel] {
        &self.channels
    }

    /// True when no drive carries a time-dependent envelope.
    pub fn is_autonomous(&self) -> bool {
        self.terms.iter().all(|t| match t {
            HamiltonianTerm::Drive { envelope, amplitude, .. } => envelope.is_constant() || *amplitude == 0.0,
            _ => true,
        })
    }

    /// Hamiltonian with every drive term removed.
    pub fn static_hamiltonian(&self) -> Operator {
        self.sum_terms(|t| !matches!(t, HamiltonianTerm::Drive { .. }), 0.0)
    }

    /// Drive terms as `(f, h, c + c†)` triples.
    pub fn drive_operators(&self) -> Vec<(f64, Envelope, Operator)> {
        self.terms
            .iter()
            .filter_map(|t| match t {
                HamiltonianTerm::Drive { mode, amplitude, envelope } => {
                    let c = self.space.lowering(*mode).expect("validated index");
                    Some((*amplitude, envelope.clone(), &c + &c.adjoint()))
                }
                _ => None,
            })
            .collect()
    }

    pub fn hamiltonian(&self, t: f64) -> Operator {
        self.sum_terms(|_| true, t)
    }

    fn sum_terms(&self, keep: impl Fn(&HamiltonianTerm) -> bool, t: f64) -> Operator {
        let dim = self.space.dim();
        let lower = |m: usize| self.space.lowering(m).expect("validated index");
        let mut h = Operator::zeros(dim);
        for term in self.terms.iter().filter(|t| keep(t)) {
            let piece = match *term {
                HamiltonianTerm::Detuning { mode, omega } => self.space.number(mode).expect("validated").scale_re(omega),
                HamiltonianTerm::Hopping { modes: (i, j), tau } => {
                    let (ci, cj) = (lower(i), lower(j));
                    let hop = &ci.adjoint() * &cj;
                    (&hop + &hop.adjoint()).scale_re(tau)
                }
                HamiltonianTerm::Kerr { mode, g } => {
                    let a2 = lower(mode).pow(2);
                    (&a2.adjoint() * &a2).scale_re(g)
                }
                HamiltonianTerm::JcCoupling { boson, two_level, eta } => {
                    let (a, s) = (lower(boson), lower(two_level));
                    let x = &a.adjoint() * &s;
                    (&x + &x.adjoint()).scale_re(eta)
                }
                HamiltonianTerm::Drive { mode, amplitude, ref envelope } => {
                    let c = lower(mode);
                    (&c + &c.adjoint()).scale_re(amplitude * envelope.value(t))
                }
            };
            h = &h + &piece;
        }
        h
    }

    /// One `(γ, F)` pair per channel.
    pub fn jump_operators(&self) -> Vec<(f64, Operator)> {
        self.channels
            .iter()
            .map(|ch| {
                let c = self.space.lowering(ch.mode).expect("validated index");
                let f = match ch.kind {
                    ChannelKind::Loss { p } => c.pow(p),
                    ChannelKind::Gain => c.adjoint(),
                };
                (ch.rate, f)
            })
            .collect()
    }
}

/// `H(t)` for a validated spec.
pub fn build_hamiltonian(spec: &ModelSpec, t: f64) -> Operator {
    spec.hamiltonian(t)
}

pub fn build_jump_operators(spec: &ModelSpec) -> Vec<(f64, Operator)> {
    spec.jump_operators()
}

/// Outcome of the global U(1) analysis of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryReport {
    /// `max_t ‖[H(t), N]‖_F / (‖H(t)‖_F ‖N‖_F)`.
    pub commutator_norm: f64,
    pub is_u1_symmetric: bool,
    /// All channels are first powers of mode operators.
    pub linear_dissipation: bool,
    /// Every mode loses at the same total rate (or there is no dissipation).
    pub uniform_rates: bool,
    /// No gain channel is present.
    pub gain_free: bool,
    pub predicted_conserved: bool,
}

pub fn check_u1_symmetry(spec: &ModelSpec, tol: f64, sample_times: &[f64]) -> SymmetryReport {
    let n_op = total_number_operator(spec.space());
    let n_norm = n_op.frobenius_norm();
    let times: &[f64] = if sample_times.is_empty() { &[0.0] } else { sample_times };
    let commutator_norm = times
        .iter()
        .map(|&t| {
            let h = spec.hamiltonian(t);
            let h_norm = h.frobenius_norm();
            if h_norm == 0.0 || n_norm == 0.0 {
                0.0
            } else {
                h.commutator(&n_op).frobenius_norm() / (h_norm * n_norm)
            }
        })
        .fold(0.0, f64::max);
    let is_u1_symmetric = commutator_norm < tol;
    let linear_dissipation = spec.channels().iter().all(DissipatorChannel::is_linear);
    let gain_free = spec.channels().iter().all(|c| c.kind != ChannelKind::Gain);
    let uniform_rates = spec.channels().is_empty() || {
        let mut per_mode = vec![0.0; spec.space().n_modes()];
        for ch in spec.channels() {
            per_mode[ch.mode] += ch.rate;
        }
        let first = per_mode[0];
        first > 0.0 && per_mode.iter().all(|&r| (r - first).abs() <= 1e-12 * first)
    };
    SymmetryReport {
        commutator_norm,
        is_u1_symmetric,
        linear_dissipation,
        uniform_rates,
        gain_free,
        predicted_conserved: is_u1_symmetric && linear_dissipation && uniform_rates && gain_free,
    }
}

/// Largest Hermiticity defect of `H(t)` over the given times.
pub fn hamiltonian_hermiticity_error(spec: &ModelSpec, times: &[f64]) -> f64 {
    times.iter().map(|&t| spec.hamiltonian(t).hermiticity_error()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::ModeSpec;
    use crate::operator::C64;
    use nalgebra::DMatrix;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn eigenvalues(op: &Operator) -> Vec<f64> {
        let m: DMatrix<C64> = op.to_dense();
        let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    fn two_boson(cutoff: usize) -> HilbertSpace {
        HilbertSpace::new(vec![ModeSpec::boson("a1", cutoff), ModeSpec::boson("a2", cutoff)]).unwrap()
    }

    fn jc_space(cutoff: usize) -> HilbertSpace {
        HilbertSpace::new(vec![ModeSpec::boson("a", cutoff), ModeSpec::two_level("q")]).unwrap()
    }

    #[test]
    fn empty_terms_give_zero() {
        let spec = ModelSpec::new(two_boson(2), vec![], vec![]).unwrap();
        assert!(build_hamiltonian(&spec, 0.3).is_zero());
    }

    #[test]
    fn jc_single_excitation_splitting() {
        let eta = 0.7;
        let spec = ModelSpec::new(
            jc_space(1),
            vec![HamiltonianTerm::JcCoupling { boson: 0, two_level: 1, eta }],
            vec![],
        )
        .unwrap();
        let h = build_hamiltonian(&spec, 0.0);
        let s = spec.space();
        let (g1, e0) = (s.basis_index(&[1, 0]).unwrap(), s.basis_index(&[0, 1]).unwrap());
        let block = Operator::from_triplets(
            2,
            [(0, 0, h.get(g1, g1)), (0, 1, h.get(g1, e0)), (1, 0, h.get(e0, g1)), (1, 1, h.get(e0, e0))],
        );
        let ev = eigenvalues(&block);
        assert!((ev[0] + eta).abs() < 1e-12 && (ev[1] - eta).abs() < 1e-12);
    }

    #[test]
    fn two_site_hopping_splitting() {
        let tau = 1.5;
        let spec = ModelSpec::new(two_boson(1), vec![HamiltonianTerm::Hopping { modes: (0, 1), tau }], vec![])
            .unwrap();
        let h = build_hamiltonian(&spec, 0.0);
        let s = spec.space();
        let (x, y) = (s.basis_index(&[1, 0]).unwrap(), s.basis_index(&[0, 1]).unwrap());
        let block = Operator::from_triplets(
            2,
            [(0, 0, h.get(x, x)), (0, 1, h.get(x, y)), (1, 0, h.get(y, x)), (1, 1, h.get(y, y))],
        );
        let ev = eigenvalues(&block);
        assert!((ev[0] + tau).abs() < 1e-12 && (ev[1] - tau).abs() < 1e-12);
    }

    #[test]
    fn kerr_is_unhalved_falling_factorial() {
        let space = HilbertSpace::new(vec![ModeSpec::boson("a", 4)]).unwrap();
        let spec = ModelSpec::new(space, vec![HamiltonianTerm::Kerr { mode: 0, g: 0.25 }], vec![]).unwrap();
        let h = spec.hamiltonian(0.0);
        for n in 0..5 {
            assert!((h.get(n, n) - c(0.25 * (n * n.saturating_sub(1)) as f64)).norm() < 1e-14);
        }
    }

    #[test]
    fn jump_operator_examples() {
        let space = HilbertSpace::new(vec![ModeSpec::boson("a", 3), ModeSpec::two_level("q")]).unwrap();
        let spec = ModelSpec::new(
            space.clone(),
            vec![],
            vec![DissipatorChannel::multi_photon_loss(0, 2, 0.4), DissipatorChannel::loss(1, 0.2)],
        )
        .unwrap();
        let jumps = build_jump_operators(&spec);
        assert_eq!(jumps[0].0, 0.4);
        assert_eq!(jumps[1].0, 0.2);
        assert_eq!(jumps[1].1, space.lowering(1).unwrap());

        // a² on a lone cutoff-3 mode: dense square of the ladder matrix
        let single = HilbertSpace::new(vec![ModeSpec::boson("a", 3)]).unwrap();
        let spec = ModelSpec::new(single, vec![], vec![DissipatorChannel::multi_photon_loss(0, 2, 1.0)]).unwrap();
        let f = &build_jump_operators(&spec)[0].1;
        let a = crate::hilbert::annihilation_matrix(3).to_dense();
        let oracle = &a * &a;
        assert!((f.to_dense() - &oracle).norm() < 1e-14);
        assert!((f.get(0, 2) - c(2f64.sqrt())).norm() < 1e-14);
        assert!((f.get(1, 3) - c(6f64.sqrt())).norm() < 1e-14);
        assert_eq!(f.nnz(), 2);
    }

    #[test]
    fn channel_kind_errors() {
        let space = jc_space(2);
        let err = ModelSpec::new(space.clone(), vec![], vec![DissipatorChannel::gain(1, 1.0)]);
        assert!(matches!(err, Err(Error::KindMismatch(_))));
        let err = ModelSpec::new(space.clone(), vec![], vec![DissipatorChannel::multi_photon_loss(1, 2, 1.0)]);
        assert!(matches!(err, Err(Error::KindMismatch(_))));
        let err = ModelSpec::new(
            space.clone(),
            vec![HamiltonianTerm::JcCoupling { boson: 1, two_level: 0, eta: 1.0 }],
            vec![],
        );
        assert!(matches!(err, Err(Error::KindMismatch(_))));
        let err = ModelSpec::new(space, vec![HamiltonianTerm::Detuning { mode: 5, omega: 1.0 }], vec![]);
        assert!(matches!(err, Err(Error::ModeIndex { .. })));
    }

    #[test]
    fn symmetry_examples() {
        let htm = ModelSpec::new(
            two_boson(3),
            vec![
                HamiltonianTerm::Detuning { mode: 0, omega: 0.3 },
                HamiltonianTerm::Detuning { mode: 1, omega: -1.1 },
                HamiltonianTerm::Hopping { modes: (0, 1), tau: 1.5 },
            ],
            vec![DissipatorChannel::loss(0, 1.0), DissipatorChannel::loss(1, 1.0)],
        )
        .unwrap();
        let r = check_u1_symmetry(&htm, 1e-10, &[0.0]);
        assert!(r.is_u1_symmetric && r.predicted_conserved);

        let single = HilbertSpace::new(vec![ModeSpec::boson("a", 4)]).unwrap();
        let driven = ModelSpec::new(
            single,
            vec![HamiltonianTerm::Drive { mode: 0, amplitude: 0.5, envelope: Envelope::Constant }],
            vec![DissipatorChannel::loss(0, 1.0)],
        )
        .unwrap();
        let r = check_u1_symmetry(&driven, 1e-10, &[0.0]);
        assert!(!r.is_u1_symmetric && !r.predicted_conserved);
        assert!(r.commutator_norm > 1e-3);

        let jc = ModelSpec::new(
            jc_space(4),
            vec![
                HamiltonianTerm::Detuning { mode: 0, omega: 0.2 },
                HamiltonianTerm::Detuning { mode: 1, omega: 0.1 },
                HamiltonianTerm::JcCoupling { boson: 0, two_level: 1, eta: 0.25 },
            ],
            vec![],
        )
        .unwrap();
        assert!(check_u1_symmetry(&jc, 1e-10, &[0.0]).is_u1_symmetric);
    }

    #[test]
    fn rate_conditions() {
        let hop = vec![HamiltonianTerm::Hopping { modes: (0, 1), tau: 1.0 }];
        let unequal = ModelSpec::new(
            two_boson(2),
            hop.clone(),
            vec![DissipatorChannel::loss(0, 1.0), DissipatorChannel::loss(1, 2.0)],
        )
        .unwrap();
        let r = check_u1_symmetry(&unequal, 1e-10, &[0.0]);
        assert!(r.is_u1_symmetric && r.linear_dissipation && !r.uniform_rates && !r.predicted_conserved);

        let partial = ModelSpec::new(two_boson(2), hop.clone(), vec![DissipatorChannel::loss(0, 1.0)]).unwrap();
        assert!(!check_u1_symmetry(&partial, 1e-10, &[0.0]).uniform_rates);

        let absorber = ModelSpec::new(
            two_boson(2),
            hop.clone(),
            vec![DissipatorChannel::multi_photon_loss(0, 2, 1.0), DissipatorChannel::multi_photon_loss(1, 2, 1.0)],
        )
        .unwrap();
        let r = check_u1_symmetry(&absorber, 1e-10, &[0.0]);
        assert!(!r.linear_dissipation && !r.predicted_conserved);

        let gain = ModelSpec::new(
            two_boson(2),
            hop.clone(),
            vec![DissipatorChannel::gain(0, 1.0), DissipatorChannel::gain(1, 1.0)],
        )
        .unwrap();
        let r = check_u1_symmetry(&gain, 1e-10, &[0.0]);
        assert!(r.linear_dissipation && r.uniform_rates && !r.gain_free && !r.predicted_conserved);

        let closed = ModelSpec::new(two_boson(2), hop, vec![]).unwrap();
        assert!(check_u1_symmetry(&closed, 1e-10, &[0.0]).predicted_conserved);
    }

    #[test]
    fn time_dependent_drive_is_sampled() {
        let single = HilbertSpace::new(vec![ModeSpec::boson("a", 3)]).unwrap();
        let spec = ModelSpec::new(
            single,
            vec![
                HamiltonianTerm::Detuning { mode: 0, omega: 1.0 },
                HamiltonianTerm::Drive { mode: 0, amplitude: 0.5, envelope: Envelope::Window { on: 1.0, off: 2.0 } },
            ],
            vec![],
        )
        .unwrap();
        assert!(!spec.is_autonomous());
        assert!(check_u1_symmetry(&spec, 1e-10, &[0.0]).is_u1_symmetric);
        assert!(!check_u1_symmetry(&spec, 1e-10, &[0.0, 1.5]).is_u1_symmetric);
        assert!(hamiltonian_hermiticity_error(&spec, &[0.0, 1.5]) < 1e-15);
    }

    #[test]
    fn local_symmetry_is_broken_by_hopping() {
        let spec = ModelSpec::new(two_boson(2), vec![HamiltonianTerm::Hopping { modes: (0, 1), tau: 1.0 }], vec![])
            .unwrap();
        let h = spec.hamiltonian(0.0);
        assert!(!h.commutator(&spec.space().number(0).unwrap()).is_zero());
        assert!(h.commutator(&total_number_operator(spec.space())).frobenius_norm() < 1e-14);
    }
}
