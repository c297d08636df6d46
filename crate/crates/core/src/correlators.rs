//! Equal-time correlators, the total m-th order correlator and its
//! conservation, and finite-difference checks of moment equations.
//!
//! For a set of modes with operators `cᵢ`, the total correlator is
//! `g_tot⁽ᵐ⁾ = ⟨J⟩ / ⟨N⟩ᵐ` with `J = :Nᵐ: = Σ c†ᵢ₁…c†ᵢₘ cᵢₘ…cᵢ₁`.
//! `J` is materialized through the recursion `Jₘ = Σᵢ cᵢ† Jₘ₋₁ cᵢ`, `J₀ = I`.

use std::fmt;
use std::str::FromStr;

use crate::dynamics::{occupation_key, DensityMatrix, Observable, Trajectory};
use crate::error::{Error, Result};
use crate::hilbert::{total_number_operator, HilbertSpace};
use crate::model::{ChannelKind, HamiltonianTerm, ModelSpec};
use crate::operator::{Operator, C64};

/// Denominators below this value leave a correlator undefined.
pub const CORRELATOR_FLOOR: f64 = 1e-9;

/// Default relative deviation below which a series counts as conserved.
pub const CONSERVATION_THRESHOLD: f64 = 1e-4;

const IMAG_TOL: f64 = 1e-10;

pub const N_TOTAL_KEY: &str = "N_total";

pub fn j_key(m: usize) -> String {
    format!("J_{m}")
}

/// Record name of the pair moment `⟨cᵢ†cⱼ†cᵢcⱼ⟩`.
pub fn pair_key(label_i: &str, label_j: &str) -> String {
    format!("P_{label_i}_{label_j}")
}

/// Operators needed to evaluate correlators of order `m` on a space.
#[derive(Clone, Debug)]
pub struct CorrelatorSet {
    pub m: usize,
    pub j_op: Operator,
    pub n_op: Operator,
    /// `cᵢ†cⱼ†cᵢcⱼ` for every unordered pair `i ≤ j`, in declaration order.
    pub pair_ops: Vec<((usize, usize), Operator)>,
    pub number_ops: Vec<Operator>,
    pub labels: Vec<String>,
}

pub fn build_correlator_set(space: &HilbertSpace, m: usize) -> Result<CorrelatorSet> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("correlator order must be ≥ 2, got {m}")));
    }
    let lowering: Vec<Operator> = (0..space.n_modes()).map(|i| space.lowering(i)).collect::<Result<_>>()?;
    let raising: Vec<Operator> = lowering.iter().map(Operator::adjoint).collect();
    let mut j_op = Operator::identity(space.dim());
    for _ in 0..m {
        let mut next = Operator::zeros(space.dim());
        for (c, cd) in lowering.iter().zip(&raising) {
            next = &next + &(&(cd * &j_op) * c);
        }
        j_op = next;
    }
    let mut pair_ops = Vec::new();
    for i in 0..space.n_modes() {
        for j in i..space.n_modes() {
            let op = &(&(&raising[i] * &raising[j]) * &lowering[i]) * &lowering[j];
            pair_ops.push(((i, j), op));
        }
    }
    Ok(CorrelatorSet {
        m,
        j_op,
        n_op: total_number_operator(space),
        pair_ops,
        number_ops: (0..space.n_modes()).map(|i| space.number(i)).collect::<Result<_>>()?,
        labels: space.modes().iter().map(|m| m.label.clone()).collect(),
    })
}

impl CorrelatorSet {
    pub fn pair_op(&self, i: usize, j: usize) -> Result<&Operator> {
        let key = (i.min(j), i.max(j));
        self.pair_ops
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, op)| op)
            .ok_or(Error::ModeIndex { index: i.max(j), count: self.labels.len() })
    }

    /// Observables to record so the correlators can be rebuilt from a trajectory.
    pub fn observables(&self) -> Vec<Observable> {
        let mut obs = vec![
            Observable::real(N_TOTAL_KEY, self.n_op.clone()),
            Observable::real(j_key(self.m), self.j_op.clone()),
        ];
        for ((i, j), op) in &self.pair_ops {
            obs.push(Observable::real(pair_key(&self.labels[*i], &self.labels[*j]), op.clone()));
        }
        obs
    }
}

fn real_expectation(rho: &DensityMatrix, op: &Operator, what: &str) -> Result<f64> {
    let v = rho.expect(op);
    if v.im.abs() > IMAG_TOL * v.norm().max(1.0) {
        return Err(Error::Undefined(format!("{what} has imaginary part {:e}", v.im)));
    }
    Ok(v.re)
}

/// `⟨J⟩ / ⟨N⟩ᵐ`.
pub fn g_tot(rho: &DensityMatrix, cs: &CorrelatorSet) -> Result<f64> {
    let n = real_expectation(rho, &cs.n_op, "⟨N⟩")?;
    let j = real_expectation(rho, &cs.j_op, "⟨J⟩")?;
    g_tot_from_moments(j, n, cs.m)
        .ok_or_else(|| Error::Undefined(format!("⟨N⟩ = {n:e} is below the floor {CORRELATOR_FLOOR:e}")))
}

pub fn g_tot_from_moments(j: f64, n: f64, m: usize) -> Option<f64> {
    (n > CORRELATOR_FLOOR).then(|| j / n.powi(m as i32))
}

/// `⟨cᵢ†cⱼ†cᵢcⱼ⟩ / (⟨nᵢ⟩⟨nⱼ⟩)`.
pub fn g2_pair(rho: &DensityMatrix, cs: &CorrelatorSet, i: usize, j: usize) -> Result<f64> {
    let p = real_expectation(rho, cs.pair_op(i, j)?, "pair moment")?;
    let ni = real_expectation(rho, &cs.number_ops[i], "⟨nᵢ⟩")?;
    let nj = real_expectation(rho, &cs.number_ops[j], "⟨nⱼ⟩")?;
    if ni <= CORRELATOR_FLOOR || nj <= CORRELATOR_FLOOR {
        return Err(Error::Undefined(format!("occupations ({ni:e}, {nj:e}) below floor")));
    }
    Ok(p / (ni * nj))
}

/// `⟨cᵢ†cⱼ†cᵢcⱼ⟩ / (⟨nᵢ⟩ + ⟨nⱼ⟩)²`.
pub fn g2_grouped(rho: &DensityMatrix, cs: &CorrelatorSet, i: usize, j: usize) -> Result<f64> {
    let p = real_expectation(rho, cs.pair_op(i, j)?, "pair moment")?;
    let ni = real_expectation(rho, &cs.number_ops[i], "⟨nᵢ⟩")?;
    let nj = real_expectation(rho, &cs.number_ops[j], "⟨nⱼ⟩")?;
    g2_grouped_from_moments(p, ni, nj)
        .ok_or_else(|| Error::Undefined(format!("⟨nᵢ⟩ + ⟨nⱼ⟩ = {:e} below floor", ni + nj)))
}

pub fn g2_grouped_from_moments(pair: f64, ni: f64, nj: f64) -> Option<f64> {
    let d = ni + nj;
    (d > CORRELATOR_FLOOR).then(|| pair / (d * d))
}

/// `g_tot⁽ᵐ⁾` at every recorded time (`None` below the floor).
pub fn g_tot_series(traj: &Trajectory, m: usize) -> Result<Vec<Option<f64>>> {
    let n = traj.series(N_TOTAL_KEY)?;
    let j = traj.series(&j_key(m))?;
    Ok(n.iter().zip(j).map(|(&n, &j)| g_tot_from_moments(j, n, m)).collect())
}

/// `𝒢⁽²⁾ᵢⱼ` at every recorded time.
pub fn g2_grouped_series(traj: &Trajectory, label_i: &str, label_j: &str) -> Result<Vec<Option<f64>>> {
    let p = traj.series(&pair_key(label_i, label_j))?;
    let ni = traj.series(&occupation_key(label_i))?;
    let nj = traj.series(&occupation_key(label_j))?;
    Ok((0..p.len()).map(|k| g2_grouped_from_moments(p[k], ni[k], nj[k])).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConservationReport {
    pub m: usize,
    /// `g_tot⁽ᵐ⁾(t)` up to (excluding) the first floor breach.
    pub series: Vec<f64>,
    pub max_abs_dev: f64,
    /// Deviation relative to `|g(0)|` (absolute when `g(0) = 0`).
    pub max_rel_dev: f64,
    pub conserved: bool,
    /// Time at which `⟨N⟩` first fell below the floor.
    pub floor_breach: Option<f64>,
}

pub fn conservation_report(traj: &Trajectory, cs: &CorrelatorSet, threshold: f64) -> Result<ConservationReport> {
    let values = g_tot_series(traj, cs.m)?;
    let breach = values.iter().position(Option::is_none);
    let series: Vec<f64> = values.iter().map_while(|v| *v).collect();
    let (max_abs_dev, max_rel_dev) = match series.first() {
        Some(&g0) => {
            let abs = series.iter().map(|g| (g - g0).abs()).fold(0.0, f64::max);
            (abs, if g0 != 0.0 { abs / g0.abs() } else { abs })
        }
        None => (f64::NAN, f64::NAN),
    };
    Ok(ConservationReport {
        m: cs.m,
        conserved: !series.is_empty() && max_rel_dev < threshold,
        series,
        max_abs_dev,
        max_rel_dev,
        floor_breach: breach.map(|k| traj.times[k]),
    })
}

/// Moment equations checked against finite differences of a simulation.
///
/// Dissipative rates follow the adopted convention: each ladder operator of
/// a linearly damped mode contributes `−γ` to the decay of a normally ordered
/// moment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Identity {
    /// Driven single mode: `d⟨a†²a²⟩/dt = −iF(2⟨a†a†a⟩ − 2⟨a†aa⟩) − 4γ⟨a†²a²⟩`.
    DrivenPairMoment,
    /// Driven single mode: `d⟨n⟩/dt = −iF(⟨a†⟩ − ⟨a⟩) − 2γ⟨n⟩`.
    DrivenOccupation,
    /// Driven single mode: `dg⁽²⁾/dt = −iF/⟨n⟩² [2⟨a†a†a⟩ − 2⟨a†aa⟩ + 2⟨n⟩g⁽²⁾(⟨a⟩ − ⟨a†⟩)]`.
    DrivenG2,
    /// Hopping pair: `d⟨a₁†²a₁²⟩/dt = −iτ(2⟨a₁†²a₁a₂⟩ − 2⟨a₂†a₁†a₁²⟩) − 4γ₁⟨a₁†²a₁²⟩`, and 1 ↔ 2.
    HoppingAutoMoment,
    /// Hopping pair: `d⟨n₁⟩/dt = −iτ⟨a₁†a₂ − a₂†a₁⟩ − 2γ₁⟨n₁⟩`, and 1 ↔ 2.
    HoppingOccupation,
    /// Hopping pair: `d⟨n₁n₂⟩/dt = −iτ⟨n₂a₁†a₂ + a₂†a₁n₁ − a₁†a₂n₁ − n₂a₂†a₁⟩ − 2(γ₁+γ₂)⟨n₁n₂⟩`.
    HoppingCrossMoment,
    /// Two-photon absorber: `d⟨n⟩/dt = −2γ₁⟨n⟩ − 4γ₂⟨a†²a²⟩`.
    AbsorberOccupation,
    /// Two-photon absorber: `d⟨a†²a²⟩/dt = −4γ₁⟨a†²a²⟩ + 2γ₂⟨n(n−1)(6−4n)⟩`.
    AbsorberPairMoment,
}

impl Identity {
    pub const ALL: [Identity; 8] = [
        Identity::DrivenPairMoment,
        Identity::DrivenOccupation,
        Identity::DrivenG2,
        Identity::HoppingAutoMoment,
        Identity::HoppingOccupation,
        Identity::HoppingCrossMoment,
        Identity::AbsorberOccupation,
        Identity::AbsorberPairMoment,
    ];

    /// Short command-line tag.
    pub fn tag(self) -> &'static str {
        match self {
            Identity::DrivenPairMoment => "eq15",
            Identity::DrivenOccupation => "eq16",
            Identity::DrivenG2 => "eq17",
            Identity::HoppingAutoMoment => "eq18",
            Identity::HoppingOccupation => "eq19",
            Identity::HoppingCrossMoment => "eq20",
            Identity::AbsorberOccupation => "absorber-n",
            Identity::AbsorberPairMoment => "absorber-j",
        }
    }

    fn mismatch(self, reason: impl Into<String>) -> Error {
        Error::IdentityMismatch { identity: self.tag().to_string(), reason: reason.into() }
    }

    /// Observables the identity reads from a trajectory. Fails when the
    /// model is outside the identity's scope.
    pub fn auxiliary_observables(self, spec: &ModelSpec) -> Result<Vec<Observable>> {
        let space = spec.space();
        match self {
            Identity::DrivenPairMoment | Identity::DrivenOccupation | Identity::DrivenG2 => {
                self.require_single_driven(spec)?;
                let a = space.lowering(0)?;
                let ad = a.adjoint();
                let n = &ad * &a;
                Ok(vec![
                    Observable::complex("a", a.clone()),
                    Observable::complex("ad_a_a", &n * &a),
                    Observable::complex("ad_ad_a", &(&ad * &ad) * &a),
                    Observable::real("ad_ad_a_a", &(&ad * &n) * &a),
                ])
            }
            Identity::HoppingAutoMoment | Identity::HoppingOccupation | Identity::HoppingCrossMoment => {
                self.require_hopping_pair(spec)?;
                let (a1, a2) = (space.lowering(0)?, space.lowering(1)?);
                let (d1, d2) = (a1.adjoint(), a2.adjoint());
                let (n1, n2) = (&d1 * &a1, &d2 * &a2);
                let prod = |ops: &[&Operator]| ops[1..].iter().fold(ops[0].clone(), |acc, o| &acc * *o);
                Ok(vec![
                    Observable::complex("a1d_a2", prod(&[&d1, &a2])),
                    Observable::real("pair_11", prod(&[&d1, &d1, &a1, &a1])),
                    Observable::real("pair_22", prod(&[&d2, &d2, &a2, &a2])),
                    Observable::real("pair_12", prod(&[&d1, &d2, &a1, &a2])),
                    Observable::complex("a1d_a1d_a1_a2", prod(&[&d1, &d1, &a1, &a2])),
                    Observable::complex("a2d_a1d_a1_a1", prod(&[&d2, &d1, &a1, &a1])),
                    Observable::complex("a2d_a2d_a2_a1", prod(&[&d2, &d2, &a2, &a1])),
                    Observable::complex("a1d_a2d_a2_a2", prod(&[&d1, &d2, &a2, &a2])),
                    Observable::complex("n2_a1d_a2", prod(&[&n2, &d1, &a2])),
                    Observable::complex("a2d_a1_n1", prod(&[&d2, &a1, &n1])),
                    Observable::complex("a1d_a2_n1", prod(&[&d1, &a2, &n1])),
                    Observable::complex("n2_a2d_a1", prod(&[&n2, &d2, &a1])),
                ])
            }
            Identity::AbsorberOccupation | Identity::AbsorberPairMoment => {
                self.require_absorber(spec)?;
                let a = space.lowering(0)?;
                let n = &a.adjoint() * &a;
                let id = Operator::identity(space.dim());
                let falling = &n * &(&n - &id);
                let cubic = &falling * &(&id.scale_re(6.0) - &n.scale_re(4.0));
                Ok(vec![Observable::real("ad_ad_a_a", falling), Observable::real("nn1_6m4n", cubic)])
            }
        }
    }

    fn loss_rates(self, spec: &ModelSpec, allowed_p: &[u32]) -> Result<Vec<[f64; 3]>> {
        let mut rates = vec![[0.0; 3]; spec.space().n_modes()];
        for ch in spec.channels() {
            match ch.kind {
                ChannelKind::Loss { p } if allowed_p.contains(&p) => rates[ch.mode][p as usize] += ch.rate,
                other => return Err(self.mismatch(format!("unsupported channel {other:?}"))),
            }
        }
        Ok(rates)
    }

    fn require_single_driven(self, spec: &ModelSpec) -> Result<()> {
        if spec.space().n_modes() != 1 || !spec.space().modes()[0].is_boson() {
            return Err(self.mismatch("requires exactly one bosonic mode"));
        }
        for t in spec.terms() {
            if !matches!(t, HamiltonianTerm::Detuning { .. } | HamiltonianTerm::Kerr { .. } | HamiltonianTerm::Drive { .. }) {
                return Err(self.mismatch(format!("term {t:?} is outside the driven single-mode model")));
            }
        }
        self.loss_rates(spec, &[1]).map(|_| ())
    }

    fn require_hopping_pair(self, spec: &ModelSpec) -> Result<()> {
        let space = spec.space();
        if space.n_modes() != 2 || !space.modes().iter().all(|m| m.is_boson()) {
            return Err(self.mismatch("requires exactly two bosonic modes"));
        }
        for t in spec.terms() {
            if !matches!(t, HamiltonianTerm::Detuning { .. } | HamiltonianTerm::Kerr { .. } | HamiltonianTerm::Hopping { .. })
            {
                return Err(self.mismatch(format!("term {t:?} is outside the coupled-mode model")));
            }
        }
        self.loss_rates(spec, &[1]).map(|_| ())
    }

    fn require_absorber(self, spec: &ModelSpec) -> Result<()> {
        if spec.space().n_modes() != 1 || !spec.space().modes()[0].is_boson() {
            return Err(self.mismatch("requires exactly one bosonic mode"));
        }
        for t in spec.terms() {
            if !matches!(t, HamiltonianTerm::Detuning { .. } | HamiltonianTerm::Kerr { .. }) {
                return Err(self.mismatch(format!("term {t:?} does not commute with the number operator")));
            }
        }
        self.loss_rates(spec, &[1, 2]).map(|_| ())
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Identity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Identity::ALL
            .into_iter()
            .find(|id| id.tag() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown identity `{s}`")))
    }
}

/// Fourth-order centered derivative at interior points `2..n−2` of a uniform grid.
pub fn centered_derivative(times: &[f64], values: &[f64]) -> Result<Vec<(usize, f64)>> {
    if times.len() != values.len() || times.len() < 5 {
        return Err(Error::InvalidArgument("need at least five samples on a shared grid".into()));
    }
    let h = times[1] - times[0];
    let uniform = times.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs());
    if !uniform || h <= 0.0 {
        return Err(Error::InvalidArgument("finite differences need a uniform increasing grid".into()));
    }
    Ok((2..values.len() - 2)
        .map(|k| (k, (values[k - 2] - 8.0 * values[k - 1] + 8.0 * values[k + 1] - values[k + 2]) / (12.0 * h)))
        .collect())
}

fn complex_series(traj: &Trajectory, name: &str) -> Result<Vec<C64>> {
    let re = traj.series(&format!("{name}.re"))?;
    let im = traj.series(&format!("{name}.im"))?;
    Ok(re.iter().zip(im).map(|(&r, &i)| C64::new(r, i)).collect())
}

fn drive_amplitude(spec: &ModelSpec, t: f64) -> f64 {
    spec.terms()
        .iter()
        .map(|term| match term {
            HamiltonianTerm::Drive { amplitude, envelope, .. } => amplitude * envelope.value(t),
            _ => 0.0,
        })
        .sum()
}

fn hopping_rate(spec: &ModelSpec) -> f64 {
    spec.terms()
        .iter()
        .map(|term| match term {
            HamiltonianTerm::Hopping { tau, .. } => *tau,
            _ => 0.0,
        })
        .sum()
}

/// Max relative residual between the finite-difference derivative of a
/// recorded series and the analytic right-hand side of `identity`,
/// normalized by `max(max|rhs|, max|series| / duration)`.
pub fn derivative_crosscheck(traj: &Trajectory, spec: &ModelSpec, identity: Identity) -> Result<f64> {
    let i = C64::new(0.0, 1.0);
    let times = &traj.times;
    // (lhs series, rhs series) pairs
    let mut checks: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    match identity {
        Identity::DrivenPairMoment | Identity::DrivenOccupation | Identity::DrivenG2 => {
            identity.require_single_driven(spec)?;
            let gamma = identity.loss_rates(spec, &[1])?[0][1];
            let a = complex_series(traj, "a")?;
            let z = complex_series(traj, "ad_a_a")?;
            let zd = complex_series(traj, "ad_ad_a")?;
            let pair = traj.series("ad_ad_a_a")?.to_vec();
            let n = traj.series(&occupation_key(&spec.space().modes()[0].label))?.to_vec();
            let drift_pair: Vec<f64> = (0..times.len())
                .map(|k| {
                    let f = drive_amplitude(spec, times[k]);
                    (-i * f * (zd[k] * 2.0 - z[k] * 2.0)).re - 4.0 * gamma * pair[k]
                })
                .collect();
            let drift_n: Vec<f64> = (0..times.len())
                .map(|k| {
                    let f = drive_amplitude(spec, times[k]);
                    (-i * f * (a[k].conj() - a[k])).re - 2.0 * gamma * n[k]
                })
                .collect();
            match identity {
                Identity::DrivenPairMoment => checks.push((pair, drift_pair)),
                Identity::DrivenOccupation => checks.push((n, drift_n)),
                _ => {
                    if n.iter().any(|&v| v <= CORRELATOR_FLOOR) {
                        return Err(Error::Undefined("⟨n⟩ falls below the floor; g⁽²⁾ is undefined".into()));
                    }
                    let g2: Vec<f64> = pair.iter().zip(&n).map(|(p, n)| p / (n * n)).collect();
                    let rhs: Vec<f64> = (0..times.len())
                        .map(|k| {
                            let f = drive_amplitude(spec, times[k]);
                            let bracket = zd[k] * 2.0 - z[k] * 2.0 + (a[k] - a[k].conj()) * (2.0 * n[k] * g2[k]);
                            (-i * f / (n[k] * n[k]) * bracket).re
                        })
                        .collect();
                    checks.push((g2, rhs));
                }
            }
        }
        Identity::HoppingAutoMoment | Identity::HoppingOccupation | Identity::HoppingCrossMoment => {
            identity.require_hopping_pair(spec)?;
            let rates = identity.loss_rates(spec, &[1])?;
            let (g1, g2) = (rates[0][1], rates[1][1]);
            let tau = hopping_rate(spec);
            let labels: Vec<&str> = spec.space().modes().iter().map(|m| m.label.as_str()).collect();
            match identity {
                Identity::HoppingAutoMoment => {
                    for (pair, fwd, back, gamma) in [
                        ("pair_11", "a1d_a1d_a1_a2", "a2d_a1d_a1_a1", g1),
                        ("pair_22", "a2d_a2d_a2_a1", "a1d_a2d_a2_a2", g2),
                    ] {
                        let p = traj.series(pair)?.to_vec();
                        let (u, v) = (complex_series(traj, fwd)?, complex_series(traj, back)?);
                        let rhs = (0..times.len())
                            .map(|k| (-i * tau * (u[k] * 2.0 - v[k] * 2.0)).re - 4.0 * gamma * p[k])
                            .collect();
                        checks.push((p, rhs));
                    }
                }
                Identity::HoppingOccupation => {
                    let u = complex_series(traj, "a1d_a2")?;
                    for (label, sign, gamma) in [(labels[0], 1.0, g1), (labels[1], -1.0, g2)] {
                        let n = traj.series(&occupation_key(label))?.to_vec();
                        let rhs = (0..times.len())
                            .map(|k| sign * (-i * tau * (u[k] - u[k].conj())).re - 2.0 * gamma * n[k])
                            .collect();
                        checks.push((n, rhs));
                    }
                }
                _ => {
                    let p = traj.series("pair_12")?.to_vec();
                    let w: Vec<[C64; 4]> = {
                        let s = ["n2_a1d_a2", "a2d_a1_n1", "a1d_a2_n1", "n2_a2d_a1"]
                            .iter()
                            .map(|name| complex_series(traj, name))
                            .collect::<Result<Vec<_>>>()?;
                        (0..times.len()).map(|k| [s[0][k], s[1][k], s[2][k], s[3][k]]).collect()
                    };
                    let rhs = (0..times.len())
                        .map(|k| {
                            let [x1, x2, x3, x4] = w[k];
                            (-i * tau * (x1 + x2 - x3 - x4)).re - 2.0 * (g1 + g2) * p[k]
                        })
                        .collect();
                    checks.push((p, rhs));
                }
            }
        }
        Identity::AbsorberOccupation | Identity::AbsorberPairMoment => {
            identity.require_absorber(spec)?;
            let rates = identity.loss_rates(spec, &[1, 2])?;
            let (lin, two) = (rates[0][1], rates[0][2]);
            let pair = traj.series("ad_ad_a_a")?.to_vec();
            if identity == Identity::AbsorberOccupation {
                let n = traj.series(&occupation_key(&spec.space().modes()[0].label))?.to_vec();
                let rhs = (0..times.len()).map(|k| -2.0 * lin * n[k] - 4.0 * two * pair[k]).collect();
                checks.push((n, rhs));
            } else {
                let cubic = traj.series("nn1_6m4n")?;
                let rhs = (0..times.len()).map(|k| -4.0 * lin * pair[k] + 2.0 * two * cubic[k]).collect();
                checks.push((pair, rhs));
            }
        }
    }

    let duration = times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0);
    let mut worst = 0.0f64;
    for (lhs, rhs) in checks {
        let fd = centered_derivative(times, &lhs)?;
        let scale = rhs
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max)
            .max(lhs.iter().map(|v| v.abs()).fold(0.0, f64::max) / duration);
        if scale == 0.0 {
            continue;
        }
        for (k, d) in fd {
            worst = worst.max((d - rhs[k]).abs() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{initial_state, integrate, uniform_grid, InitialState, IntegrateOptions};
    use crate::hilbert::ModeSpec;
    use crate::model::{DissipatorChannel, Envelope};

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn falling(n: &Operator, m: usize) -> Operator {
        let id = Operator::identity(n.dim());
        (0..m).fold(id.clone(), |acc, k| &acc * &(n - &id.scale_re(k as f64)))
    }

    #[test]
    fn order_must_be_at_least_two() {
        let space = HilbertSpace::new(vec![ModeSpec::boson("a", 2)]).unwrap();
        assert!(build_correlator_set(&space, 1).is_err());
    }

    #[test]
    fn single_boson_falling_factorial() {
        let space = HilbertSpace::new(vec![ModeSpec::boson("a", 6)]).unwrap();
        for m in 2..=4 {
            let cs = build_correlator_set(&space, m).unwrap();
            assert!((&cs.j_op - &falling(&cs.n_op, m)).frobenius_norm() < 1e-10, "m = {m}");
        }
    }

    #[test]
    fn boson_two_level_expansion() {
        // oracle: index-pair expansion by hand; the (q, q) term vanishes and
        // the cross terms coincide
        let space = HilbertSpace::new(vec![ModeSpec::boson("a", 3), ModeSpec::two_level("q")]).unwrap();
        let cs = build_correlator_set(&space, 2).unwrap();
        let a = space.lowering(0).unwrap();
        let na = space.number(0).unwrap();
        let nq = space.number(1).unwrap();
        let a2 = a.pow(2);
        let expect = &(&a2.adjoint() * &a2) + &(&na * &nq).scale_re(2.0);
        assert!((&cs.j_op - &expect).frobenius_norm() < 1e-13);
        // J = N² − N also holds because n_q² = n_q
        let n = &cs.n_op;
        assert!((&cs.j_op - &(&(n * n) - n)).frobenius_norm() < 1e-13);
    }

    #[test]
    fn two_boson_expansion() {
        let space = HilbertSpace::new(vec![ModeSpec::boson("a", 3), ModeSpec::boson("b", 2)]).unwrap();
        let cs = build_correlator_set(&space, 2).unwrap();
        let (a, b) = (space.lowering(0).unwrap(), space.lowering(1).unwrap());
        let (a2, b2) = (a.pow(2), b.pow(2));
        let cross = &(&(&a.adjoint() * &b.adjoint()) * &a) * &b;
        let expect = &(&(&a2.adjoint() * &a2) + &(&b2.adjoint() * &b2)) + &cross.scale_re(2.0);
        assert!((&cs.j_op - &expect).frobenius_norm() < 1e-13);
        let n = cs.n_op.to_dense();
        let oracle = &n * &n - &n;
        assert!((cs.j_op.to_dense() - oracle).norm() < 1e-13);
    }

    #[test]
    fn g_tot_examples() {
        let space = HilbertSpace::new(vec![ModeSpec::boson("a", 25)]).unwrap();
        let cs = build_correlator_set(&space, 2).unwrap();
        let coh = initial_state(&space, &[InitialState::Coherent(C64::new(1.2, 0.4))]).unwrap();
        assert!((g_tot(&coh, &cs).unwrap() - 1.0).abs() < 1e-10);
        let fock1 = initial_state(&space, &[InitialState::Fock(1)]).unwrap();
        assert_eq!(g_tot(&fock1, &cs).unwrap(), 0.0);
        let vac = initial_state(&space, &[InitialState::Fock(0)]).unwrap();
        assert!(matches!(g_tot(&vac, &cs), Err(Error::Undefined(_))));

        let jc = HilbertSpace::new(vec![ModeSpec::boson("a", 8), ModeSpec::two_level("q")]).unwrap();
        let cs = build_correlator_set(&jc, 2).unwrap();
        let rho = initial_state(&jc, &[InitialState::Coherent(c(0.18f64.sqrt())), InitialState::Excited]).unwrap();
        // ⟨J⟩ = |α|⁴ + 2|α|², ⟨N⟩ = |α|² + 1 on the product state
        let x: f64 = 0.18;
        let expected = (x * x + 2.0 * x) / (1.0 + x).powi(2);
        assert!((expected - 0.3924 / 1.3924).abs() < 1e-15);
        assert!((g_tot(&rho, &cs).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn pair_correlator_examples() {
        let space = HilbertSpace::new(vec![ModeSpec::boson("a", 20), ModeSpec::boson("b", 20)]).unwrap();
        let cs = build_correlator_set(&space, 2).unwrap();
        let fock = initial_state(&space, &[InitialState::Fock(2), InitialState::Fock(1)]).unwrap();
        assert!((g2_pair(&fock, &cs, 0, 0).unwrap() - 0.5).abs() < 1e-14);
        assert_eq!(g2_pair(&fock, &cs, 1, 1).unwrap(), 0.0);

        let coh = initial_state(
            &space,
            &[InitialState::Coherent(C64::new(0.9, 0.2)), InitialState::Coherent(C64::new(-0.3, 0.7))],
        )
        .unwrap();
        assert!((g2_pair(&coh, &cs, 0, 1).unwrap() - 1.0).abs() < 1e-10);
        assert!((g2_pair(&coh, &cs, 1, 0).unwrap() - 1.0).abs() < 1e-10);
        assert!((g2_pair(&coh, &cs, 0, 0).unwrap() - 1.0).abs() < 1e-10);
        assert!((g2_grouped(&coh, &cs, 0, 0).unwrap() - 0.25).abs() < 1e-10);

        let ones = initial_state(&space, &[InitialState::Fock(1), InitialState::Fock(1)]).unwrap();
        assert!((g2_grouped(&ones, &cs, 0, 1).unwrap() - 0.25).abs() < 1e-14);

        let vac = initial_state(&space, &[InitialState::Fock(0), InitialState::Fock(1)]).unwrap();
        assert!(matches!(g2_pair(&vac, &cs, 0, 1), Err(Error::Undefined(_))));
        assert!(g2_grouped(&vac, &cs, 0, 1).is_ok());
    }

    #[test]
    fn grouped_terms_do_not_sum_to_g_tot() {
        let jc = HilbertSpace::new(vec![ModeSpec::boson("a", 8), ModeSpec::two_level("q")]).unwrap();
        let cs = build_correlator_set(&jc, 2).unwrap();
        let rho = initial_state(&jc, &[InitialState::Coherent(c(0.18f64.sqrt())), InitialState::Excited]).unwrap();
        let bb = g2_grouped(&rho, &cs, 0, 0).unwrap();
        let qq = g2_grouped(&rho, &cs, 1, 1).unwrap();
        let bq = g2_grouped(&rho, &cs, 0, 1).unwrap();
        assert!((bb - 0.18f64.powi(2) / 0.36f64.powi(2)).abs() < 1e-9);
        assert_eq!(qq, 0.0);
        assert!((bq - 0.18 / 1.18f64.powi(2)).abs() < 1e-9);
        let total = g_tot(&rho, &cs).unwrap();
        assert!((bb + qq + 2.0 * bq - total).abs() > 1e-2);
    }

    #[test]
    fn identity_tags_round_trip() {
        for id in Identity::ALL {
            assert_eq!(id.tag().parse::<Identity>().unwrap(), id);
        }
        assert!("eq99".parse::<Identity>().is_err());
    }

    #[test]
    fn derivative_of_polynomial_is_exact() {
        let times = uniform_grid(1.0, 21);
        let values: Vec<f64> = times.iter().map(|t| 3.0 * t * t * t - t).collect();
        for (k, d) in centered_derivative(&times, &values).unwrap() {
            let t = times[k];
            assert!((d - (9.0 * t * t - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn undriven_mode_conserves_g2() {
        let space = HilbertSpace::new(vec![ModeSpec::boson("a", 14)]).unwrap();
        let spec = ModelSpec::new(
            space.clone(),
            vec![
                HamiltonianTerm::Kerr { mode: 0, g: 0.3 },
                HamiltonianTerm::Drive { mode: 0, amplitude: 0.0, envelope: Envelope::Constant },
            ],
            vec![DissipatorChannel::loss(0, 1.0)],
        )
        .unwrap();
        let rho0 = initial_state(&space, &[InitialState::Coherent(C64::new(1.2, 0.0))]).unwrap();
        let times = uniform_grid(3.0, 400);
        let obs = Identity::DrivenPairMoment.auxiliary_observables(&spec).unwrap();
        let traj = integrate(&spec, &rho0, &times, &IntegrateOptions::with_tol(1e-10), &obs).unwrap();
        assert!(derivative_crosscheck(&traj, &spec, Identity::DrivenPairMoment).unwrap() < 1e-6);
        assert!(derivative_crosscheck(&traj, &spec, Identity::DrivenG2).unwrap() < 1e-6);
        let cs = build_correlator_set(&space, 2).unwrap();
        let g: Vec<f64> = traj
            .series("ad_ad_a_a")
            .unwrap()
            .iter()
            .zip(traj.series("n_a").unwrap())
            .map(|(p, n)| p / (n * n))
            .collect();
        let spread = g.iter().fold(f64::MIN, |a, &b| a.max(b)) - g.iter().fold(f64::MAX, |a, &b| a.min(b));
        assert!(spread < 1e-7, "spread {spread:e}");
        assert_eq!(cs.m, 2);
    }

    #[test]
    fn identity_scope_is_enforced() {
        let two = HilbertSpace::new(vec![ModeSpec::boson("a", 2), ModeSpec::boson("b", 2)]).unwrap();
        let spec = ModelSpec::new(two, vec![HamiltonianTerm::Hopping { modes: (0, 1), tau: 1.0 }], vec![]).unwrap();
        assert!(matches!(
            Identity::DrivenPairMoment.auxiliary_observables(&spec),
            Err(Error::IdentityMismatch { .. })
        ));
        assert!(Identity::HoppingCrossMoment.auxiliary_observables(&spec).is_ok());

        let one = HilbertSpace::new(vec![ModeSpec::boson("a", 2)]).unwrap();
        let gain = ModelSpec::new(one, vec![], vec![DissipatorChannel::gain(0, 1.0)]).unwrap();
        assert!(Identity::DrivenOccupation.auxiliary_observables(&gain).is_err());
    }

    #[test]
    fn conservation_report_flags_floor_breach() {
        let space = HilbertSpace::new(vec![ModeSpec::boson("a", 2)]).unwrap();
        let spec = ModelSpec::new(space.clone(), vec![], vec![DissipatorChannel::loss(0, 1.0)]).unwrap();
        let cs = build_correlator_set(&space, 2).unwrap();
        let rho0 = initial_state(&space, &[InitialState::Fock(0)]).unwrap();
        let traj = integrate(&spec, &rho0, &uniform_grid(1.0, 5), &IntegrateOptions::default(), &cs.observables())
            .unwrap();
        let rep = conservation_report(&traj, &cs, CONSERVATION_THRESHOLD).unwrap();
        assert_eq!(rep.floor_breach, Some(0.0));
        assert!(rep.series.is_empty() && !rep.conserved);
    }
}
