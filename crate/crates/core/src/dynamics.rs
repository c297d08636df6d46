//! Lindblad master-equation evaluation and time integration.
//!
//! The dissipator convention used throughout is
//!
//! ```text
//! D(ρ) = Σᵢ γᵢ (2 Fᵢ ρ Fᵢ† − Fᵢ†Fᵢ ρ − ρ Fᵢ†Fᵢ)
//! ```
//!
//! so a single linearly damped mode obeys `d⟨n⟩/dt = −2γ⟨n⟩`.

use indexmap::IndexMap;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hilbert::{HilbertSpace, ModeKind};
use crate::model::{Envelope, ModelSpec};
use crate::ode::{DormandPrince, OdeStats};
use crate::operator::{Operator, C64};

/// Human-readable statement of the dissipator convention, emitted with every run.
pub const DISSIPATOR_CONVENTION: &str = "D(rho) = sum_i gamma_i (2 F_i rho F_i^dag - F_i^dag F_i rho - rho F_i^dag F_i); \
     a single linearly damped mode obeys d<n>/dt = -2 gamma <n>";

/// Threshold below which a sampled eigenvalue is reported as a positivity violation.
pub const POSITIVITY_WARN: f64 = -1e-7;

/// Density matrix on a truncated composite space.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(DMatrix<C64>);

impl DensityMatrix {
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), actual: m.ncols() });
        }
        Ok(Self(m))
    }

    pub fn from_pure(psi: &[C64]) -> Self {
        let n = psi.len();
        Self(DMatrix::from_fn(n, n, |i, j| psi[i] * psi[j].conj()))
    }

    pub(crate) fn from_column_major(n: usize, data: &[C64]) -> Self {
        Self(DMatrix::from_column_slice(n, n, data))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn purity(&self) -> f64 {
        // Tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ
        self.0.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.0 - self.0.adjoint()).norm()
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let herm = (&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: Vec<f64> = herm.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// `½ ‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: other.dim() });
        }
        let diff = Self(&self.0 - &other.0);
        Ok(0.5 * diff.eigenvalues().iter().map(|v| v.abs()).sum::<f64>())
    }

    pub fn expect(&self, op: &Operator) -> C64 {
        op.expectation(&self.0)
    }
}

/// Per-mode initial condition for a pure product state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialState {
    Coherent(C64),
    Fock(usize),
    Ground,
    Excited,
}

/// Coherent amplitudes `e^{−|α|²/2} αⁿ/√n!` for `n ≤ cutoff`, renormalized.
pub fn truncated_coherent(alpha: C64, cutoff: usize) -> Vec<C64> {
    let mut amps = Vec::with_capacity(cutoff + 1);
    let mut c = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    amps.push(c);
    for n in 1..=cutoff {
        c = c * alpha / (n as f64).sqrt();
        amps.push(c);
    }
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    amps.iter().map(|a| a / norm).collect()
}

/// Pure product state `|ψ⟩⟨ψ|` built mode by mode.
pub fn initial_state(space: &HilbertSpace, spec: &[InitialState]) -> Result<DensityMatrix> {
    if spec.len() != space.n_modes() {
        return Err(Error::DimensionMismatch { expected: space.n_modes(), actual: spec.len() });
    }
    let mut psi = vec![C64::new(1.0, 0.0)];
    for (mode, init) in space.modes().iter().zip(spec) {
        let local = match (&mode.kind, *init) {
            (ModeKind::Boson { cutoff }, InitialState::Coherent(alpha)) => truncated_coherent(alpha, *cutoff),
            (ModeKind::Boson { cutoff }, InitialState::Fock(n)) => {
                if n > *cutoff {
                    return Err(Error::InvalidState(format!(
                        "Fock({n}) exceeds cutoff {cutoff} of mode `{}`",
                        mode.label
                    )));
                }
                let mut v = vec![C64::new(0.0, 0.0); cutoff + 1];
                v[n] = C64::new(1.0, 0.0);
                v
            }
            (ModeKind::TwoLevel, InitialState::Ground) => vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            (ModeKind::TwoLevel, InitialState::Excited) => vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            (ModeKind::TwoLevel, InitialState::Fock(n)) if n <= 1 => {
                let mut v = vec![C64::new(0.0, 0.0); 2];
                v[n] = C64::new(1.0, 0.0);
                v
            }
            (kind, init) => {
                return Err(Error::KindMismatch(format!(
                    "initial state {init:?} does not apply to mode `{}` ({kind:?})",
                    mode.label
                )));
            }
        };
        psi = psi.iter().flat_map(|a| local.iter().map(move |b| a * b)).collect();
    }
    Ok(DensityMatrix::from_pure(&psi))
}

/// Precomputed pieces of the Lindblad generator.
///
/// The anticommutator part is folded into a non-Hermitian effective
/// Hamiltonian `H_eff = H₀ − i Σ γ F†F`, so that
/// `L(ρ) = −i H_eff ρ + i ρ H_eff† − i[Σ f h(t) X, ρ] + Σ 2γ F ρ F†`.
#[derive(Clone, Debug)]
pub struct LindbladGenerator {
    dim: usize,
    h_eff: Operator,
    h_eff_dag: Operator,
    drives: Vec<(f64, Envelope, Operator)>,
    jumps: Vec<(f64, Operator, Operator)>,
}

impl LindbladGenerator {
    pub fn new(spec: &ModelSpec) -> Self {
        let dim = spec.space().dim();
        let mut h_eff = spec.static_hamiltonian();
        let mut jumps = Vec::new();
        for (rate, f) in spec.jump_operators() {
            if rate == 0.0 {
                continue;
            }
            let fd = f.adjoint();
            h_eff = &h_eff - &(&fd * &f).scale(C64::new(0.0, rate));
            jumps.push((rate, f, fd));
        }
        let h_eff_dag = h_eff.adjoint();
        let drives = spec.drive_operators().into_iter().filter(|(f, _, _)| *f != 0.0).collect();
        Self { dim, h_eff, h_eff_dag, drives, jumps }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes `L_t(ρ)` into `out`; both are column-major `dim × dim`.
    pub fn apply(&self, t: f64, rho: &[C64], out: &mut [C64], scratch: &mut [C64]) {
        let n = self.dim;
        let zero = C64::new(0.0, 0.0);
        out.iter_mut().for_each(|v| *v = zero);
        let i = C64::new(0.0, 1.0);
        self.h_eff.left_mul_slice(rho, -i, out);
        self.h_eff_dag.right_mul_slice(rho, n, i, out);
        for (f, env, x) in &self.drives {
            let s = f * env.value(t);
            if s != 0.0 {
                x.left_mul_slice(rho, -i * s, out);
                x.right_mul_slice(rho, n, i * s, out);
            }
        }
        for (rate, f, fd) in &self.jumps {
            scratch.iter_mut().for_each(|v| *v = zero);
            f.left_mul_slice(rho, C64::new(1.0, 0.0), scratch);
            fd.right_mul_slice(scratch, n, C64::new(2.0 * rate, 0.0), out);
        }
    }

    pub fn apply_matrix(&self, t: f64, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        let mut scratch = vec![C64::new(0.0, 0.0); self.dim * self.dim];
        self.apply(t, rho.as_slice(), out.as_mut_slice(), &mut scratch);
        out
    }
}

/// `dρ/dt = −i[H(t), ρ] + D(ρ)`.
pub fn lindblad_rhs(spec: &ModelSpec, rho: &DensityMatrix, t: f64) -> Result<DMatrix<C64>> {
    if rho.dim() != spec.space().dim() {
        return Err(Error::DimensionMismatch { expected: spec.space().dim(), actual: rho.dim() });
    }
    Ok(LindbladGenerator::new(spec).apply_matrix(t, rho.matrix()))
}

/// Total population of basis states with any boson at its cutoff level.
pub fn measure_leakage(rho: &DensityMatrix, space: &HilbertSpace) -> f64 {
    leakage_indices(space).iter().map(|&b| rho.matrix()[(b, b)].re).sum()
}

fn leakage_indices(space: &HilbertSpace) -> Vec<usize> {
    (0..space.dim())
        .filter(|&b| {
            space
                .occupations(b)
                .iter()
                .zip(space.modes())
                .any(|(&n, m)| m.cutoff() == Some(n))
        })
        .collect()
}

/// A named expectation value recorded along a trajectory.
#[derive(Clone, Debug)]
pub struct Observable {
    pub name: String,
    pub op: Operator,
    /// Record real and imaginary parts (`<name>.re`, `<name>.im`) instead of
    /// the real part alone.
    pub complex: bool,
}

impl Observable {
    pub fn real(name: impl Into<String>, op: Operator) -> Self {
        Self { name: name.into(), op, complex: false }
    }

    pub fn complex(name: impl Into<String>, op: Operator) -> Self {
        Self { name: name.into(), op, complex: true }
    }
}

#[derive(Clone, Debug)]
pub struct IntegrateOptions {
    /// Absolute and relative tolerance of the step controller.
    pub tol: f64,
    /// Abort with a truncation error once leakage exceeds this bound.
    pub leakage_bound: Option<f64>,
    /// Number of grid points (evenly spread) at which the minimum eigenvalue is sampled.
    pub positivity_samples: usize,
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { tol: 1e-9, leakage_bound: None, positivity_samples: 3, max_steps: 50_000_000 }
    }
}

impl IntegrateOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Time series produced by [`integrate`].
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub records: IndexMap<String, Vec<f64>>,
    pub final_state: DensityMatrix,
    pub leakage_max: f64,
    pub trace_drift_max: f64,
    pub hermiticity_max: f64,
    pub purity_max: f64,
    /// Smallest sampled eigenvalue of ρ.
    pub min_eigenvalue: f64,
    pub stats: OdeStats,
}

impl Trajectory {
    pub fn series(&self, name: &str) -> Result<&[f64]> {
        self.records.get(name).map(Vec::as_slice).ok_or_else(|| Error::MissingSeries(name.to_string()))
    }
}

/// Record name of the per-time truncation leakage.
pub const LEAKAGE_KEY: &str = "leakage";

/// Name of the recorded occupation series for a mode label.
pub fn occupation_key(label: &str) -> String {
    format!("n_{label}")
}

/// Integrates the master equation over `times`, recording every observable
/// (and every mode occupation) at each grid point.
pub fn integrate(
    spec: &ModelSpec,
    rho0: &DensityMatrix,
    times: &[f64],
    options: &IntegrateOptions,
    observables: &[Observable],
) -> Result<Trajectory> {
    let space = spec.space();
    let dim = space.dim();
    if rho0.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, actual: rho0.dim() });
    }
    if !(options.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if times.is_empty() {
        return Err(Error::InvalidArgument("time grid is empty".into()));
    }
    for o in observables {
        o.op.check_dim(dim)?;
    }

    let mut all: Vec<Observable> = space
        .modes()
        .iter()
        .enumerate()
        .map(|(i, m)| Observable::real(occupation_key(&m.label), space.number(i).expect("valid index")))
        .collect();
    for o in observables {
        if !all.iter().any(|seen| seen.name == o.name) {
            all.push(o.clone());
        }
    }

    let mut records: IndexMap<String, Vec<f64>> = IndexMap::new();
    for o in &all {
        if o.complex {
            records.insert(format!("{}.re", o.name), Vec::with_capacity(times.len()));
            records.insert(format!("{}.im", o.name), Vec::with_capacity(times.len()));
        } else {
            records.insert(o.name.clone(), Vec::with_capacity(times.len()));
        }
    }

    records.insert(LEAKAGE_KEY.to_string(), Vec::with_capacity(times.len()));

    let generator = LindbladGenerator::new(spec);
    let leak_idx = leakage_indices(space);
    let leakage = |y: &[C64]| leak_idx.iter().map(|&b| y[b * dim + b].re).sum::<f64>();
    let samples: Vec<usize> = match options.positivity_samples {
        0 => Vec::new(),
        1 => vec![times.len() - 1],
        k => (0..k).map(|j| j * (times.len() - 1) / (k - 1)).collect(),
    };

    let mut leakage_max = leakage(rho0.matrix().as_slice());
    let mut trace_drift_max = 0.0f64;
    let mut hermiticity_max = 0.0f64;
    let mut purity_max = 0.0f64;
    let mut min_eigenvalue = f64::INFINITY;
    let mut final_state = rho0.clone();
    let mut scratch = vec![C64::new(0.0, 0.0); dim * dim];

    let mut solver = DormandPrince::new(options.tol);
    solver.max_steps = options.max_steps;
    let stats = solver.integrate(
        rho0.matrix().as_slice(),
        times,
        |t, y, dy| generator.apply(t, y, dy, &mut scratch),
        |t, y| {
            let leak = leakage(y);
            leakage_max = leakage_max.max(leak);
            match options.leakage_bound {
                Some(bound) if leak > bound => Err(Error::Truncation { leakage: leak, bound, t }),
                _ => Ok(()),
            }
        },
        |k, t, y| {
            let rho = DensityMatrix::from_column_major(dim, y);
            for o in &all {
                let v = o.op.expectation(rho.matrix());
                if o.complex {
                    records.get_mut(&format!("{}.re", o.name)).unwrap().push(v.re);
                    records.get_mut(&format!("{}.im", o.name)).unwrap().push(v.im);
                } else {
                    records.get_mut(&o.name).unwrap().push(v.re);
                }
            }
            records.get_mut(LEAKAGE_KEY).unwrap().push(leakage(y));
            trace_drift_max = trace_drift_max.max((rho.trace() - C64::new(1.0, 0.0)).norm());
            hermiticity_max = hermiticity_max.max(rho.hermiticity_error());
            purity_max = purity_max.max(rho.purity());
            if samples.contains(&k) {
                let ev = rho.min_eigenvalue();
                if ev < POSITIVITY_WARN {
                    log::warn!("density matrix eigenvalue {ev:e} at t = {t}");
                }
                min_eigenvalue = min_eigenvalue.min(ev);
            }
            if k + 1 == times.len() {
                final_state = rho;
            }
            Ok(())
        },
    )?;

    Ok(Trajectory {
        times: times.to_vec(),
        records,
        final_state,
        leakage_max,
        trace_drift_max,
        hermiticity_max,
        purity_max,
        min_eigenvalue,
        stats,
    })
}

/// Evenly spaced grid `t_k = k t_end / (n_points − 1)`.
pub fn uniform_grid(t_end: f64, n_points: usize) -> Vec<f64> {
    match n_points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect(),
    }
}
