//! Adaptive Dormand–Prince 5(4) integrator for complex-valued linear systems.
//!
//! Steps are clipped so that every requested output time is hit exactly;
//! the proposed step size is carried across clipped steps.

use crate::error::{Error, Result};
use crate::operator::C64;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Clone, Debug)]
pub struct DormandPrince {
    pub atol: f64,
    pub rtol: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl DormandPrince {
    pub fn new(tol: f64) -> Self {
        Self { atol: tol, rtol: tol, h_min: 1e-14, max_steps: 50_000_000 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

fn combine(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (w, k) in terms {
            acc += k[i] * *w;
        }
        *o = y[i] + acc * h;
    }
}

impl DormandPrince {
    /// Integrates `dy/dt = rhs(t, y)` from `times[0]`, calling `on_output`
    /// at every entry of `times` (including the first) and `on_step` after
    /// every accepted step.
    pub fn integrate<F, S, O>(
        &self,
        y0: &[C64],
        times: &[f64],
        mut rhs: F,
        mut on_step: S,
        mut on_output: O,
    ) -> Result<OdeStats>
    where
        F: FnMut(f64, &[C64], &mut [C64]),
        S: FnMut(f64, &[C64]) -> Result<()>,
        O: FnMut(usize, f64, &[C64]) -> Result<()>,
    {
        if times.is_empty() {
            return Ok(OdeStats::default());
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("output times must be strictly increasing".into()));
        }
        let n = y0.len();
        let mut stats = OdeStats::default();
        let mut y = y0.to_vec();
        let mut t = times[0];
        on_output(0, t, &y)?;
        if times.len() == 1 {
            return Ok(stats);
        }
        let zero = C64::new(0.0, 0.0);
        let mut k: Vec<Vec<C64>> = (0..7).map(|_| vec![zero; n]).collect();
        let mut tmp = vec![zero; n];
        let mut ynew = vec![zero; n];

        rhs(t, &y, &mut k[0]);
        stats.rhs_evals += 1;
        let mut h = self.initial_step(t, &y, &k[0], &mut rhs, &mut tmp, &mut ynew, times[times.len() - 1] - t);
        stats.rhs_evals += 1;

        for (idx, &target) in times.iter().enumerate().skip(1) {
            while t < target {
                if stats.accepted + stats.rejected >= self.max_steps {
                    return Err(Error::TooManySteps { steps: self.max_steps, t });
                }
                let remaining = target - t;
                let clipped = h >= remaining;
                let step = if clipped { remaining } else { h };
                if step < self.h_min && !clipped {
                    return Err(Error::StepUnderflow { t, h: step });
                }
                let (k1, rest) = k.split_at_mut(1);
                let k1 = &k1[0];
                let [k2, k3, k4, k5, k6, k7] = rest else { unreachable!() };

                combine(&mut tmp, &y, step, &[(A21, k1)]);
                rhs(t + C2 * step, &tmp, k2);
                combine(&mut tmp, &y, step, &[(A31, k1), (A32, k2)]);
                rhs(t + C3 * step, &tmp, k3);
                combine(&mut tmp, &y, step, &[(A41, k1), (A42, k2), (A43, k3)]);
                rhs(t + C4 * step, &tmp, k4);
                combine(&mut tmp, &y, step, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
                rhs(t + C5 * step, &tmp, k5);
                combine(&mut tmp, &y, step, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]);
                rhs(t + step, &tmp, k6);
                combine(&mut ynew, &y, step, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)]);
                rhs(t + step, &ynew, k7);
                stats.rhs_evals += 6;

                let mut err = 0.0f64;
                for i in 0..n {
                    let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * step;
                    let scale = self.atol + self.rtol * y[i].norm().max(ynew[i].norm());
                    err = err.max(e.norm() / scale);
                }
                if !err.is_finite() {
                    return Err(Error::StepUnderflow { t, h: step });
                }

                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if err <= 1.0 {
                    stats.accepted += 1;
                    t = if clipped { target } else { t + step };
                    std::mem::swap(&mut y, &mut ynew);
                    k.swap(0, 6);
                    on_step(t, &y)?;
                    // a step clipped to the grid says little about the natural scale
                    if !clipped || factor < 1.0 {
                        h = step * factor;
                    }
                } else {
                    stats.rejected += 1;
                    h = step * factor.min(1.0);
                }
            }
            on_output(idx, t, &y)?;
        }
        Ok(stats)
    }

    fn initial_step<F>(
        &self,
        t: f64,
        y: &[C64],
        f0: &[C64],
        rhs: &mut F,
        tmp: &mut [C64],
        f1: &mut [C64],
        span: f64,
    ) -> f64
    where
        F: FnMut(f64, &[C64], &mut [C64]),
    {
        let scale = |i: usize, v: &[C64]| self.atol + self.rtol * v[i].norm();
        let rms = |v: &[C64]| {
            (v.iter().enumerate().map(|(i, x)| (x.norm() / scale(i, y)).powi(2)).sum::<f64>() / v.len().max(1) as f64)
                .sqrt()
        };
        let d0 = rms(y);
        let d1 = rms(f0);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        for i in 0..y.len() {
            tmp[i] = y[i] + f0[i] * h0;
        }
        rhs(t + h0, tmp, f1);
        let diff: Vec<C64> = f1.iter().zip(f0).map(|(a, b)| (a - b) / h0).collect();
        let d2 = rms(&diff);
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
        (100.0 * h0).min(h1).min(span)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn exponential_decay_with_rotation() {
        // y' = (−0.7 + 2i) y
        let lam = c(-0.7, 2.0);
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.25).collect();
        let mut out = Vec::new();
        DormandPrince::new(1e-11)
            .integrate(
                &[c(1.0, 0.0)],
                &times,
                |_, y, dy| dy[0] = lam * y[0],
                |_, _| Ok(()),
                |_, t, y| {
                    out.push((t, y[0]));
                    Ok(())
                },
            )
            .unwrap();
        assert_eq!(out.len(), times.len());
        for (t, y) in out {
            assert!((y - (lam * t).exp()).norm() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn time_dependent_forcing() {
        // y' = cos t, y(0) = 0
        let times = [0.0, 1.0, 2.5, 4.0];
        let mut last = c(0.0, 0.0);
        let stats = DormandPrince::new(1e-10)
            .integrate(&[c(0.0, 0.0)], &times, |t, _, dy| dy[0] = c(t.cos(), 0.0), |_, _| Ok(()), |_, t, y| {
                assert!((y[0].re - t.sin()).abs() < 1e-8);
                last = y[0];
                Ok(())
            })
            .unwrap();
        assert!(stats.accepted > 0);
        assert!((last.re - 4f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn rejects_non_increasing_grid() {
        let r = DormandPrince::new(1e-8).integrate(&[c(1.0, 0.0)], &[0.0, 1.0, 1.0], |_, _, dy| dy[0] = c(0.0, 0.0), |_, _| Ok(()), |_, _, _| Ok(()));
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn step_budget_is_enforced() {
        let mut solver = DormandPrince::new(1e-12);
        solver.max_steps = 3;
        let r = solver.integrate(&[c(1.0, 0.0)], &[0.0, 100.0], |_, y, dy| dy[0] = c(0.0, 30.0) * y[0], |_, _| Ok(()), |_, _, _| Ok(()));
        assert!(matches!(r, Err(Error::TooManySteps { .. })));
    }
}
