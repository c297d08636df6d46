//! Positive-P phase-space sampling for bosonic models built from detunings,
//! hopping, Kerr terms, coherent drives and linear loss/gain.
//!
//! Each mode carries two independent amplitudes `(α, β)`. Normally ordered
//! moments are estimated as trajectory means of `β…β α…α`. The Itô equations
//! follow from the standard correspondences under the dissipator convention
//! of [`crate::dynamics`]:
//!
//! ```text
//! dαᵢ = [−iΣⱼHᵢⱼαⱼ − (κᵢ − λᵢ)αᵢ − 2igᵢβᵢαᵢ² − iFᵢ(t)] dt + √(−2igᵢ) αᵢ dW₁ᵢ + √λᵢ (dW₃ᵢ + i dW₄ᵢ)
//! dβᵢ = [+iΣⱼHᵢⱼ*βⱼ − (κᵢ − λᵢ)βᵢ + 2igᵢαᵢβᵢ² + iFᵢ(t)] dt + √(+2igᵢ) βᵢ dW₂ᵢ + √λᵢ (dW₃ᵢ − i dW₄ᵢ)
//! ```
//!
//! with `H` the single-particle matrix (detunings, hopping), `κ` loss and `λ`
//! gain rates. The drift is advanced with classical RK4 and the noise with an
//! Euler–Maruyama increment evaluated at the start of the step.

use indexmap::IndexMap;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::correlators::{j_key, pair_key, N_TOTAL_KEY};
use crate::dynamics::occupation_key;
use crate::error::{Error, Result};
use crate::model::{ChannelKind, Envelope, HamiltonianTerm, ModelSpec};
use crate::operator::C64;

/// Noise factorization used for every run; recorded in run metadata.
pub const NOISE_FACTORIZATION: &str = "Kerr: principal roots sqrt(-2ig) alpha dW1, sqrt(2ig) beta dW2 (independent real Wiener); \
gain: sqrt(lambda) (dW3 +/- i dW4); Ito, RK4 drift + Euler-Maruyama noise at step start";

pub const DEFAULT_ESCAPE_RADIUS: f64 = 1e6;

/// Exclusion fraction above which an ensemble is marked unreliable.
pub const UNRELIABLE_FRACTION: f64 = 1e-3;

const CHUNK: usize = 64;

/// Drift and diffusion coefficients of the phase-space equations.
#[derive(Clone, Debug)]
pub struct PpModel {
    labels: Vec<String>,
    /// `−iH − diag(κ − λ)`, acting on α. The β matrix is its conjugate.
    linear: DMatrix<C64>,
    kerr: Vec<f64>,
    gain: Vec<f64>,
    drives: Vec<(usize, f64, Envelope)>,
}

pub fn pp_drift_diffusion(spec: &ModelSpec) -> Result<PpModel> {
    let space = spec.space();
    if let Some(m) = space.modes().iter().find(|m| !m.is_boson()) {
        return Err(Error::Unsupported(format!("positive-P needs bosonic modes; `{}` is two-level", m.label)));
    }
    let n = space.n_modes();
    let i = C64::new(0.0, 1.0);
    let mut linear = DMatrix::<C64>::zeros(n, n);
    let mut kerr = vec![0.0; n];
    let mut gain = vec![0.0; n];
    let mut drives = Vec::new();
    for term in spec.terms() {
        match term {
            HamiltonianTerm::Detuning { mode, omega } => linear[(*mode, *mode)] -= i * *omega,
            HamiltonianTerm::Hopping { modes: (a, b), tau } => {
                linear[(*a, *b)] -= i * *tau;
                linear[(*b, *a)] -= i * *tau;
            }
            HamiltonianTerm::Kerr { mode, g } => kerr[*mode] += g,
            HamiltonianTerm::Drive { mode, amplitude, envelope } => drives.push((*mode, *amplitude, envelope.clone())),
            HamiltonianTerm::JcCoupling { .. } => {
                return Err(Error::Unsupported("positive-P does not handle Jaynes-Cummings coupling".into()))
            }
        }
    }
    for ch in spec.channels() {
        match ch.kind {
            ChannelKind::Loss { p: 1 } => linear[(ch.mode, ch.mode)] -= C64::new(ch.rate, 0.0),
            ChannelKind::Gain => {
                linear[(ch.mode, ch.mode)] += C64::new(ch.rate, 0.0);
                gain[ch.mode] += ch.rate;
            }
            ChannelKind::Loss { p } => {
                return Err(Error::Unsupported(format!("positive-P handles linear loss only, got p = {p}")))
            }
        }
    }
    Ok(PpModel { labels: space.modes().iter().map(|m| m.label.clone()).collect(), linear, kerr, gain, drives })
}

impl PpModel {
    pub fn n_modes(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn is_noise_free(&self) -> bool {
        self.kerr.iter().all(|&g| g == 0.0) && self.gain.iter().all(|&l| l == 0.0)
    }

    /// Drift of the packed state `[α₀…αₙ₋₁, β₀…βₙ₋₁]`.
    pub fn drift(&self, t: f64, y: &[C64], out: &mut [C64]) {
        let n = self.n_modes();
        let (alpha, beta) = y.split_at(n);
        let i = C64::new(0.0, 1.0);
        for r in 0..n {
            let mut da = C64::new(0.0, 0.0);
            let mut db = C64::new(0.0, 0.0);
            for c in 0..n {
                let m = self.linear[(r, c)];
                da += m * alpha[c];
                db += m.conj() * beta[c];
            }
            let g = self.kerr[r];
            if g != 0.0 {
                let nb = beta[r] * alpha[r];
                da -= i * (2.0 * g) * nb * alpha[r];
                db += i * (2.0 * g) * nb * beta[r];
            }
            out[r] = da;
            out[n + r] = db;
        }
        for (mode, amp, env) in &self.drives {
            let f = amp * env.value(t);
            out[*mode] -= i * f;
            out[n + mode] += i * f;
        }
    }

    /// Adds the noise increment for Wiener increments `dw` (four per mode).
    fn add_noise(&self, y: &mut [C64], y0: &[C64], dw: &[f64]) {
        let n = self.n_modes();
        for r in 0..n {
            let w = &dw[4 * r..4 * r + 4];
            let g = self.kerr[r];
            if g != 0.0 {
                let sa = C64::new(0.0, -2.0 * g).sqrt();
                let sb = C64::new(0.0, 2.0 * g).sqrt();
                y[r] += sa * y0[r] * w[0];
                y[n + r] += sb * y0[n + r] * w[1];
            }
            let l = self.gain[r];
            if l != 0.0 {
                let s = l.sqrt();
                y[r] += C64::new(s * w[2], s * w[3]);
                y[n + r] += C64::new(s * w[2], -s * w[3]);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct PpOptions {
    pub n_traj: usize,
    pub seed: u64,
    pub dt: f64,
    pub escape_radius: f64,
    /// Correlator orders `m` whose `J` and `g_tot` are estimated.
    pub orders: Vec<usize>,
}

impl PpOptions {
    pub fn new(n_traj: usize, seed: u64, dt: f64) -> Self {
        Self { n_traj, seed, dt, escape_radius: DEFAULT_ESCAPE_RADIUS, orders: vec![2] }
    }
}

/// Mean and standard error of one estimated quantity over the output grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Estimate {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// Mean imaginary part, a consistency diagnostic.
    pub imag: Vec<f64>,
    pub imag_se: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PpEnsemble {
    pub n_traj: usize,
    pub seed: u64,
    /// Requested step.
    pub dt: f64,
    /// Largest step actually taken after fitting whole steps between outputs.
    pub dt_used: f64,
    pub times: Vec<f64>,
    pub excluded: usize,
    pub unreliable: bool,
    /// Keyed by `n_<label>`, `P_<i>_<j>`, `N_total`, `J_<m>`, `g_tot_<m>`.
    pub estimates: IndexMap<String, Estimate>,
}

impl PpEnsemble {
    pub fn estimate(&self, name: &str) -> Result<&Estimate> {
        self.estimates.get(name).ok_or_else(|| Error::MissingSeries(name.to_string()))
    }

    pub fn accepted(&self) -> usize {
        self.n_traj - self.excluded
    }
}

/// Running means and co-moments (Welford, merged with Chan's formula).
#[derive(Clone, Debug)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    cross: Vec<f64>,
}

impl Moments {
    fn new(vars: usize, cross: usize) -> Self {
        Self { count: 0.0, mean: vec![0.0; vars], m2: vec![0.0; vars], cross: vec![0.0; cross] }
    }

    fn push(&mut self, x: &[f64], pairs: &[(usize, usize)]) {
        self.count += 1.0;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        for (k, d) in delta.iter().enumerate() {
            self.mean[k] += d / self.count;
            self.m2[k] += d * (x[k] - self.mean[k]);
        }
        for (c, &(a, b)) in pairs.iter().enumerate() {
            self.cross[c] += delta[a] * (x[b] - self.mean[b]);
        }
    }

    fn merge(&mut self, other: &Moments, pairs: &[(usize, usize)]) {
        if other.count == 0.0 {
            return;
        }
        if self.count == 0.0 {
            *self = other.clone();
            return;
        }
        let n = self.count + other.count;
        let w = self.count * other.count / n;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        for (k, d) in delta.iter().enumerate() {
            self.mean[k] += d * other.count / n;
            self.m2[k] += other.m2[k] + d * d * w;
        }
        for (c, &(a, b)) in pairs.iter().enumerate() {
            self.cross[c] += other.cross[c] + delta[a] * delta[b] * w;
        }
        self.count = n;
    }

    fn variance(&self, k: usize) -> f64 {
        if self.count < 2.0 {
            0.0
        } else {
            (self.m2[k] / (self.count - 1.0)).max(0.0)
        }
    }

    fn covariance(&self, c: usize) -> f64 {
        if self.count < 2.0 {
            0.0
        } else {
            self.cross[c] / (self.count - 1.0)
        }
    }
}

/// Layout of the per-time sample vector: complex quantities as (re, im).
struct Layout {
    names: Vec<String>,
    pairs: Vec<(usize, usize)>,
    n_index: usize,
    j_index: Vec<usize>,
    /// (N.re, J_m.re) covariance pairs, one per order.
    cov_pairs: Vec<(usize, usize)>,
}

impl Layout {
    fn new(labels: &[String], orders: &[usize]) -> Self {
        let mut names: Vec<String> = labels.iter().map(|l| occupation_key(l)).collect();
        let mut pairs = Vec::new();
        for i in 0..labels.len() {
            for j in i..labels.len() {
                names.push(pair_key(&labels[i], &labels[j]));
                pairs.push((i, j));
            }
        }
        let n_index = names.len();
        names.push(N_TOTAL_KEY.to_string());
        let j_index: Vec<usize> = orders
            .iter()
            .map(|&m| {
                names.push(j_key(m));
                names.len() - 1
            })
            .collect();
        let cov_pairs = j_index.iter().map(|&j| (2 * n_index, 2 * j)).collect();
        Self { names, pairs, n_index, j_index, cov_pairs }
    }

    fn fill(&self, y: &[C64], n_modes: usize, orders: &[usize], out: &mut [f64]) {
        let (alpha, beta) = y.split_at(n_modes);
        let mut put = |k: usize, v: C64| {
            out[2 * k] = v.re;
            out[2 * k + 1] = v.im;
        };
        let mut total = C64::new(0.0, 0.0);
        for i in 0..n_modes {
            let n = beta[i] * alpha[i];
            total += n;
            put(i, n);
        }
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            put(n_modes + k, beta[i] * beta[j] * alpha[i] * alpha[j]);
        }
        put(self.n_index, total);
        for (&m, &k) in orders.iter().zip(&self.j_index) {
            put(k, total.powu(m as u32));
        }
    }
}

fn check_inputs(model: &PpModel, init: &[C64], times: &[f64], opts: &PpOptions) -> Result<()> {
    if init.len() != model.n_modes() {
        return Err(Error::DimensionMismatch { expected: model.n_modes(), actual: init.len() });
    }
    if opts.n_traj == 0 {
        return Err(Error::InvalidArgument("n_traj must be at least 1".into()));
    }
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {}", opts.dt)));
    }
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("output times must be non-empty and strictly increasing".into()));
    }
    if let Some(&m) = opts.orders.iter().find(|&&m| m < 2) {
        return Err(Error::InvalidArgument(format!("correlator order must be ≥ 2, got {m}")));
    }
    Ok(())
}

/// Substep counts between consecutive outputs, so every step is at most `dt`.
fn substeps(times: &[f64], dt: f64) -> Vec<usize> {
    times
        .windows(2)
        .map(|w| {
            let r = (w[1] - w[0]) / dt;
            // tolerate grids that are whole multiples of dt up to rounding
            let nearest = r.round();
            if (r - nearest).abs() < 1e-9 * r.max(1.0) {
                nearest.max(1.0) as usize
            } else {
                r.ceil() as usize
            }
        })
        .collect()
}

struct Trajectory<'a> {
    model: &'a PpModel,
    layout: &'a Layout,
    orders: &'a [usize],
    times: &'a [f64],
    steps: &'a [usize],
    init: &'a [C64],
    radius: f64,
}

impl Trajectory<'_> {
    /// Samples at every output time, or `None` if the trajectory escaped.
    fn run(&self, rng: &mut ChaCha8Rng, samples: &mut [f64]) -> bool {
        let n = self.model.n_modes();
        let width = 2 * self.layout.names.len();
        let noisy = !self.model.is_noise_free();
        let mut y: Vec<C64> = self.init.iter().copied().chain(self.init.iter().map(|a| a.conj())).collect();
        let mut k1 = vec![C64::new(0.0, 0.0); 2 * n];
        let mut k2 = k1.clone();
        let mut k3 = k1.clone();
        let mut k4 = k1.clone();
        let mut tmp = k1.clone();
        let mut y0 = k1.clone();
        let mut dw = vec![0.0; 4 * n];
        self.layout.fill(&y, n, self.orders, &mut samples[..width]);
        for (seg, &count) in self.steps.iter().enumerate() {
            let t_start = self.times[seg];
            let h = (self.times[seg + 1] - t_start) / count as f64;
            for s in 0..count {
                let t = t_start + s as f64 * h;
                y0.copy_from_slice(&y);
                self.model.drift(t, &y, &mut k1);
                axpy(&y0, &k1, 0.5 * h, &mut tmp);
                self.model.drift(t + 0.5 * h, &tmp, &mut k2);
                axpy(&y0, &k2, 0.5 * h, &mut tmp);
                self.model.drift(t + 0.5 * h, &tmp, &mut k3);
                axpy(&y0, &k3, h, &mut tmp);
                self.model.drift(t + h, &tmp, &mut k4);
                for r in 0..2 * n {
                    y[r] = y0[r] + (k1[r] + k2[r] * 2.0 + k3[r] * 2.0 + k4[r]) * (h / 6.0);
                }
                if noisy {
                    let sq = h.sqrt();
                    for w in dw.iter_mut() {
                        let z: f64 = StandardNormal.sample(rng);
                        *w = z * sq;
                    }
                    self.model.add_noise(&mut y, &y0, &dw);
                }
                if y.iter().any(|v| !(v.norm() <= self.radius)) {
                    return false;
                }
            }
            let off = (seg + 1) * width;
            self.layout.fill(&y, n, self.orders, &mut samples[off..off + width]);
        }
        true
    }
}

fn axpy(y: &[C64], k: &[C64], h: f64, out: &mut [C64]) {
    for ((o, y), k) in out.iter_mut().zip(y).zip(k) {
        *o = y + k * h;
    }
}

/// Runs `n_traj` trajectories from coherent amplitudes `init`.
///
/// Trajectory `k` draws from a ChaCha8 stream selected by `(seed, k)`.
/// Chunks of trajectories are reduced in a fixed order, so the output is
/// bit-identical for any thread count.
pub fn pp_run(spec: &ModelSpec, init: &[C64], times: &[f64], opts: &PpOptions) -> Result<PpEnsemble> {
    let model = pp_drift_diffusion(spec)?;
    check_inputs(&model, init, times, opts)?;
    let layout = Layout::new(model.labels(), &opts.orders);
    let steps = substeps(times, opts.dt);
    let dt_used = times
        .windows(2)
        .zip(&steps)
        .map(|(w, &c)| (w[1] - w[0]) / c as f64)
        .fold(0.0, f64::max);
    let traj = Trajectory {
        model: &model,
        layout: &layout,
        orders: &opts.orders,
        times,
        steps: &steps,
        init,
        radius: opts.escape_radius,
    };
    let width = 2 * layout.names.len();
    let n_chunks = opts.n_traj.div_ceil(CHUNK);

    let chunks: Vec<(Vec<Moments>, usize)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Moments::new(width, layout.cov_pairs.len()); times.len()];
            let mut excluded = 0;
            let mut samples = vec![0.0; width * times.len()];
            for k in c * CHUNK..((c + 1) * CHUNK).min(opts.n_traj) {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(k as u64);
                if traj.run(&mut rng, &mut samples) {
                    for (t, m) in acc.iter_mut().enumerate() {
                        m.push(&samples[t * width..(t + 1) * width], &layout.cov_pairs);
                    }
                } else {
                    excluded += 1;
                }
            }
            (acc, excluded)
        })
        .collect();

    let mut total = vec![Moments::new(width, layout.cov_pairs.len()); times.len()];
    let mut excluded = 0;
    for (acc, ex) in &chunks {
        excluded += ex;
        for (t, m) in total.iter_mut().zip(acc) {
            t.merge(m, &layout.cov_pairs);
        }
    }
    if excluded == opts.n_traj {
        return Err(Error::InvalidState("every positive-P trajectory escaped".into()));
    }
    if excluded > 0 {
        log::warn!("{excluded} of {} positive-P trajectories escaped and were excluded", opts.n_traj);
    }

    let mut estimates = IndexMap::new();
    for (q, name) in layout.names.iter().enumerate() {
        let mut e = Estimate::default();
        for m in &total {
            let sqrt_n = m.count.sqrt();
            e.mean.push(m.mean[2 * q]);
            e.se.push((m.variance(2 * q)).sqrt() / sqrt_n);
            e.imag.push(m.mean[2 * q + 1]);
            e.imag_se.push((m.variance(2 * q + 1)).sqrt() / sqrt_n);
        }
        estimates.insert(name.clone(), e);
    }
    for (c, (&order, &jk)) in opts.orders.iter().zip(&layout.j_index).enumerate() {
        let mut e = Estimate::default();
        let p = order as i32;
        for m in &total {
            let n_bar = m.mean[2 * layout.n_index];
            let j_bar = m.mean[2 * jk];
            let g = j_bar / n_bar.powi(p);
            let var = m.variance(2 * jk) / n_bar.powi(2 * p)
                + (order * order) as f64 * j_bar * j_bar * m.variance(2 * layout.n_index) / n_bar.powi(2 * p + 2)
                - 2.0 * order as f64 * j_bar * m.covariance(c) / n_bar.powi(2 * p + 1);
            e.mean.push(g);
            e.se.push((var.max(0.0) / m.count).sqrt());
            e.imag.push(0.0);
            e.imag_se.push(0.0);
        }
        estimates.insert(format!("g_tot_{order}"), e);
    }

    Ok(PpEnsemble {
        n_traj: opts.n_traj,
        seed: opts.seed,
        dt: opts.dt,
        dt_used,
        times: times.to_vec(),
        excluded,
        unreliable: excluded as f64 > UNRELIABLE_FRACTION * opts.n_traj as f64,
        estimates,
    })
}

/// Reruns at `dt / 2` and returns, per estimate, the largest
/// `|Δmean| / √(se₁² + se₂²)` over the grid.
pub fn pp_halving_check(
    spec: &ModelSpec,
    init: &[C64],
    times: &[f64],
    opts: &PpOptions,
) -> Result<IndexMap<String, f64>> {
    let coarse = pp_run(spec, init, times, opts)?;
    let fine = pp_run(spec, init, times, &PpOptions { dt: opts.dt / 2.0, ..opts.clone() })?;
    let mut out = IndexMap::new();
    for (name, a) in &coarse.estimates {
        let b = fine.estimate(name)?;
        let worst = (0..a.mean.len())
            .map(|k| {
                let d = (a.mean[k] - b.mean[k]).abs();
                let s = (a.se[k].powi(2) + b.se[k].powi(2)).sqrt();
                if s > 0.0 {
                    d / s
                } else if d == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max);
        out.insert(name.clone(), worst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::uniform_grid;
    use crate::hilbert::{HilbertSpace, ModeSpec};
    use crate::model::DissipatorChannel;

    fn single(terms: Vec<HamiltonianTerm>, channels: Vec<DissipatorChannel>) -> ModelSpec {
        ModelSpec::new(HilbertSpace::new(vec![ModeSpec::boson("a", 4)]).unwrap(), terms, channels).unwrap()
    }

    #[test]
    fn unsupported_models() {
        let jc = HilbertSpace::new(vec![ModeSpec::boson("a", 2), ModeSpec::two_level("q")]).unwrap();
        let spec = ModelSpec::new(jc, vec![], vec![]).unwrap();
        assert!(matches!(pp_drift_diffusion(&spec), Err(Error::Unsupported(_))));
        let two_photon = single(vec![], vec![DissipatorChannel::multi_photon_loss(0, 2, 1.0)]);
        assert!(matches!(pp_drift_diffusion(&two_photon), Err(Error::Unsupported(_))));
    }

    #[test]
    fn drift_coefficients() {
        let spec = ModelSpec::new(
            HilbertSpace::new(vec![ModeSpec::boson("a", 2), ModeSpec::boson("b", 2)]).unwrap(),
            vec![
                HamiltonianTerm::Detuning { mode: 0, omega: 0.7 },
                HamiltonianTerm::Hopping { modes: (0, 1), tau: 1.5 },
                HamiltonianTerm::Kerr { mode: 0, g: 0.25 },
            ],
            vec![DissipatorChannel::loss(0, 1.0), DissipatorChannel::loss(1, 1.0)],
        )
        .unwrap();
        let model = pp_drift_diffusion(&spec).unwrap();
        let (a1, a2, b1, b2) = (C64::new(0.3, -0.2), C64::new(1.1, 0.4), C64::new(-0.5, 0.9), C64::new(0.2, 0.1));
        let mut out = vec![C64::new(0.0, 0.0); 4];
        model.drift(0.0, &[a1, a2, b1, b2], &mut out);
        let i = C64::new(0.0, 1.0);
        let expect_a1 = -(1.0 + i * 0.7) * a1 - i * 1.5 * a2 - 2.0 * i * 0.25 * b1 * a1 * a1;
        let expect_b1 = -(1.0 - i * 0.7) * b1 + i * 1.5 * b2 + 2.0 * i * 0.25 * a1 * b1 * b1;
        assert!((out[0] - expect_a1).norm() < 1e-15);
        assert!((out[2] - expect_b1).norm() < 1e-15);
        assert!((out[1] - (-a2 - i * 1.5 * a1)).norm() < 1e-15);
    }

    #[test]
    fn linear_loss_is_deterministic() {
        let spec = single(vec![], vec![DissipatorChannel::loss(0, 1.0)]);
        let alpha = C64::new(1.3, 0.4);
        let times = uniform_grid(2.0, 11);
        let ens = pp_run(&spec, &[alpha], &times, &PpOptions::new(7, 3, 1e-3)).unwrap();
        let n = ens.estimate("n_a").unwrap();
        for (k, t) in times.iter().enumerate() {
            let exact = alpha.norm_sqr() * (-2.0 * t).exp();
            assert!((n.mean[k] - exact).abs() < 1e-11, "t = {t}");
            assert_eq!(n.se[k], 0.0);
        }
        let g = ens.estimate("g_tot_2").unwrap();
        assert!(g.mean.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(g.se.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn drive_steady_state() {
        // dα/dt = −γα − iF → α(t) = −iF/γ (1 − e^{−γt})
        let spec = single(
            vec![HamiltonianTerm::Drive { mode: 0, amplitude: 0.5, envelope: Envelope::Constant }],
            vec![DissipatorChannel::loss(0, 1.0)],
        );
        let ens = pp_run(&spec, &[C64::new(0.0, 0.0)], &[0.0, 20.0], &PpOptions::new(1, 0, 1e-3)).unwrap();
        let exact = 0.25 * (1.0 - (-20.0f64).exp()).powi(2);
        assert!((ens.estimate("n_a").unwrap().mean[1] - exact).abs() < 1e-12);
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let spec = single(vec![HamiltonianTerm::Kerr { mode: 0, g: 0.3 }], vec![DissipatorChannel::loss(0, 1.0)]);
        let times = uniform_grid(0.5, 6);
        let opts = PpOptions::new(100, 42, 1e-3);
        let a = pp_run(&spec, &[C64::new(1.0, 0.0)], &times, &opts).unwrap();
        let b = pp_run(&spec, &[C64::new(1.0, 0.0)], &times, &opts).unwrap();
        for (name, e) in &a.estimates {
            assert_eq!(e, b.estimate(name).unwrap(), "{name}");
        }
        let c = pp_run(&spec, &[C64::new(1.0, 0.0)], &times, &PpOptions { seed: 43, ..opts }).unwrap();
        assert_ne!(a.estimate("n_a").unwrap().mean[5], c.estimate("n_a").unwrap().mean[5]);
    }

    #[test]
    fn gain_cross_noise_matches_occupation_growth() {
        // with loss κ and gain λ: d⟨n⟩/dt = −2(κ − λ)⟨n⟩ + 2λ
        let spec = single(vec![], vec![DissipatorChannel::loss(0, 1.0), DissipatorChannel::gain(0, 0.4)]);
        let ens = pp_run(&spec, &[C64::new(0.8, 0.0)], &[0.0, 0.5, 1.0], &PpOptions::new(20_000, 9, 1e-3)).unwrap();
        let n = ens.estimate("n_a").unwrap();
        for (k, t) in [0.0f64, 0.5, 1.0].iter().enumerate() {
            let rate = 2.0 * 0.6;
            let exact = 0.64 * (-rate * t).exp() + 0.8 / rate * (1.0 - (-rate * t).exp());
            assert!((n.mean[k] - exact).abs() < 4.0 * n.se[k] + 1e-12, "t = {t}: {} vs {exact}", n.mean[k]);
        }
    }

    #[test]
    fn merge_matches_sequential() {
        let pairs = [(0, 1)];
        let data: Vec<[f64; 2]> = (0..50).map(|k| [(k as f64).sin(), (k as f64 * 0.3).cos()]).collect();
        let mut seq = Moments::new(2, 1);
        for x in &data {
            seq.push(x, &pairs);
        }
        let mut left = Moments::new(2, 1);
        let mut right = Moments::new(2, 1);
        for x in &data[..17] {
            left.push(x, &pairs);
        }
        for x in &data[17..] {
            right.push(x, &pairs);
        }
        left.merge(&right, &pairs);
        for k in 0..2 {
            assert!((left.mean[k] - seq.mean[k]).abs() < 1e-14);
            assert!((left.variance(k) - seq.variance(k)).abs() < 1e-13);
        }
        assert!((left.covariance(0) - seq.covariance(0)).abs() < 1e-13);
    }

    #[test]
    fn input_validation() {
        let spec = single(vec![], vec![]);
        let z = [C64::new(0.0, 0.0)];
        assert!(pp_run(&spec, &z, &[0.0, 1.0], &PpOptions::new(0, 0, 1e-3)).is_err());
        assert!(pp_run(&spec, &z, &[0.0, 1.0], &PpOptions::new(1, 0, 0.0)).is_err());
        assert!(pp_run(&spec, &[], &[0.0, 1.0], &PpOptions::new(1, 0, 1e-3)).is_err());
        assert!(pp_run(&spec, &z, &[1.0, 0.0], &PpOptions::new(1, 0, 1e-3)).is_err());
    }
}
