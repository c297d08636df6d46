//! Vectorized Lindblad generator and exact propagation by its exponential.
//!
//! With column stacking, `vec(A X B) = (Bᵀ ⊗ A) vec(X)`, the generator becomes
//!
//! ```text
//! L = −i (I ⊗ H − Hᵀ ⊗ I) + Σ γ (2 F̄ ⊗ F − I ⊗ F†F − (F†F)ᵀ ⊗ I)
//! ```
//!
//! `exp(tL)` is applied to `vec(ρ)` with a scaled Taylor series, which makes
//! this an independent reference for the Runge–Kutta integrator.

use crate::dynamics::DensityMatrix;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::operator::{Operator, C64};

/// Sparse `dim² × dim²` superoperator for an autonomous model.
pub fn vectorized_generator(spec: &ModelSpec) -> Result<Operator> {
    if !spec.is_autonomous() {
        return Err(Error::Unsupported("vectorized generator requires a time-independent Hamiltonian".into()));
    }
    let dim = spec.space().dim();
    let id = Operator::identity(dim);
    let h = spec.hamiltonian(0.0);
    let i = C64::new(0.0, 1.0);
    let mut l = (&id.kron(&h) - &h.transpose().kron(&id)).scale(-i);
    for (rate, f) in spec.jump_operators() {
        let k = &f.adjoint() * &f;
        let jump = f.conj().kron(&f).scale_re(2.0);
        let anti = &id.kron(&k) + &k.transpose().kron(&id);
        l = &l + &(&jump - &anti).scale_re(rate);
    }
    Ok(l)
}

/// `exp(t L) v` by Taylor series on `s` substeps with `‖tL‖₁ / s ≤ 2`.
pub fn expm_action(l: &Operator, v: &[C64], t: f64, tol: f64) -> Vec<C64> {
    let norm = l.norm_1() * t.abs();
    let steps = (norm / 2.0).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let mut x = v.to_vec();
    let mut term = vec![C64::new(0.0, 0.0); v.len()];
    let mut next = vec![C64::new(0.0, 0.0); v.len()];
    let vnorm = |y: &[C64]| y.iter().map(|c| c.norm()).sum::<f64>();
    for _ in 0..steps {
        term.copy_from_slice(&x);
        let mut sum = x.clone();
        let mut small = 0;
        for k in 1..200 {
            l.apply_into(&term, &mut next);
            let scale = h / k as f64;
            for (t_, n) in term.iter_mut().zip(&next) {
                *t_ = n * scale;
            }
            for (s, t_) in sum.iter_mut().zip(&term) {
                *s += t_;
            }
            if vnorm(&term) <= tol * vnorm(&sum) {
                small += 1;
                if small == 2 {
                    break;
                }
            } else {
                small = 0;
            }
        }
        x = sum;
    }
    x
}

/// States at every entry of `times` propagated exactly from `rho0` at `times[0]`.
pub fn propagate_exact(spec: &ModelSpec, rho0: &DensityMatrix, times: &[f64]) -> Result<Vec<DensityMatrix>> {
    let dim = spec.space().dim();
    if rho0.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, actual: rho0.dim() });
    }
    let l = vectorized_generator(spec)?;
    let mut v: Vec<C64> = rho0.matrix().as_slice().to_vec();
    let mut out = Vec::with_capacity(times.len());
    let mut prev = match times.first() {
        Some(&t) => t,
        None => return Ok(out),
    };
    for &t in times {
        if t > prev {
            v = expm_action(&l, &v, t - prev, 1e-16);
            prev = t;
        }
        out.push(DensityMatrix::from_column_major(dim, &v));
    }
    Ok(out)
}
