//! Dormand–Prince 5(4) with FSAL, elementary step-size control and the
//! fourth-order continuous extension.
//!
//! Integration runs in either direction; a negative span simply uses signed
//! steps.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step magnitude; estimated from the field when `None`.
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 10_000_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(invalid("tol", "tolerances must be > 0"));
        }
        if !(self.h_max > 0.0) {
            return Err(invalid("h_max", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// One accepted step with its continuous extension.
#[derive(Debug, Clone)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub t1: f64,
    pub x0: [f64; N],
    pub x1: [f64; N],
    h: f64,
    rcont: [[f64; N]; 4],
}

impl<const N: usize> DenseStep<N> {
    /// Continuous extension, valid for `t` between `t0` and `t1`.
    pub fn eval(&self, t: f64) -> [f64; N] {
        if t == self.t0 {
            return self.x0;
        }
        if t == self.t1 {
            return self.x1;
        }
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [r2, r3, r4, r5] = &self.rcont;
        std::array::from_fn(|i| {
            self.x0[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])))
        })
    }

    /// Whether `t` lies in `(t0, t1]` along the direction of integration.
    pub fn covers(&self, t: f64) -> bool {
        if self.h > 0.0 {
            t > self.t0 && t <= self.t1
        } else {
            t < self.t0 && t >= self.t1
        }
    }
}

/// Final state of a [`solve`] call.
#[derive(Debug, Clone)]
pub struct OdeEnd<const N: usize> {
    pub t: f64,
    pub x: [f64; N],
    pub stats: OdeStats,
    /// The observer asked to stop before `t1`.
    pub stopped: bool,
}

fn rms_norm<const N: usize>(v: &[f64; N], sc: &[f64; N]) -> f64 {
    let s: f64 = v.iter().zip(sc).map(|(a, b)| (a / b) * (a / b)).sum();
    (s / N as f64).sqrt()
}

fn axpy<const N: usize>(x: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| x[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

/// Integrates `dx/dt = field(t, x)` from `t0` to `t1`, handing every
/// accepted step to `observer`. The observer may stop the integration early.
pub fn solve<const N: usize, F, O>(
    mut field: F,
    x0: [f64; N],
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
    mut observer: O,
) -> Result<OdeEnd<N>>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
    O: FnMut(&DenseStep<N>) -> ControlFlow<()>,
{
    opts.validate()?;
    if !(t0.is_finite() && t1.is_finite()) {
        return Err(invalid("tau", "integration bounds must be finite"));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { tau: t0 });
    }
    let mut stats = OdeStats::default();
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(OdeEnd { t: t0, x: x0, stats, stopped: false });
    }
    let dir = span.signum();
    let mut t = t0;
    let mut x = x0;
    let mut k1 = field(t, &x);
    stats.evaluations += 1;

    let mut h = match opts.h_init {
        Some(h) => h.abs(),
        None => {
            stats.evaluations += 1;
            initial_step(&mut field, &x, &k1, t, dir, opts)
        }
    }
    .min(opts.h_max)
    .min(span.abs());
    let mut last_rejected = false;

    loop {
        if (t1 - t) * dir <= 0.0 {
            break;
        }
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::MaxStepsExceeded { tau: t, max_steps: opts.max_steps });
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(1e-300) {
            return Err(Error::StepSizeUnderflow { tau: t, h });
        }
        // Stretch slightly rather than leave a sliver of a final step.
        let last = (t + 1.01 * dir * h - t1) * dir >= 0.0;
        let hs = if last { t1 - t } else { dir * h };

        let k2 = field(t + C2 * hs, &axpy(&x, hs, &[(A21, &k1)]));
        let k3 = field(t + C3 * hs, &axpy(&x, hs, &[(A31, &k1), (A32, &k2)]));
        let k4 = field(t + C4 * hs, &axpy(&x, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = field(
            t + C5 * hs,
            &axpy(&x, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = field(
            t + hs,
            &axpy(&x, hs, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        );
        let x_new = axpy(&x, hs, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let t_new = if last { t1 } else { t + hs };
        let k7 = field(t_new, &x_new);
        stats.evaluations += 6;

        let err_vec: [f64; N] = std::array::from_fn(|i| {
            hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
        });
        let sc: [f64; N] =
            std::array::from_fn(|i| opts.atol + opts.rtol * x[i].abs().max(x_new[i].abs()));
        let mut err = rms_norm(&err_vec, &sc);
        if !err.is_finite() || x_new.iter().chain(&k7).any(|v| !v.is_finite()) {
            err = f64::INFINITY;
        }

        if err <= 1.0 {
            stats.accepted += 1;
            let ydiff: [f64; N] = std::array::from_fn(|i| x_new[i] - x[i]);
            let bspl: [f64; N] = std::array::from_fn(|i| hs * k1[i] - ydiff[i]);
            let r4: [f64; N] = std::array::from_fn(|i| ydiff[i] - hs * k7[i] - bspl[i]);
            let r5: [f64; N] = std::array::from_fn(|i| {
                hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
            });
            let step = DenseStep {
                t0: t,
                t1: t_new,
                x0: x,
                x1: x_new,
                h: hs,
                rcont: [ydiff, bspl, r4, r5],
            };
            t = t_new;
            x = x_new;
            k1 = k7;
            let fac_max = if last_rejected { 1.0 } else { FAC_MAX };
            let fac = (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, fac_max);
            h = (hs.abs() * fac).min(opts.h_max);
            last_rejected = false;
            if observer(&step).is_break() {
                return Ok(OdeEnd { t, x, stats, stopped: true });
            }
        } else {
            stats.rejected += 1;
            let fac = if err.is_finite() { (SAFETY * err.powf(-0.2)).max(FAC_MIN) } else { FAC_MIN };
            h = hs.abs() * fac.min(1.0);
            last_rejected = true;
        }
    }
    Ok(OdeEnd { t, x, stats, stopped: false })
}

fn initial_step<const N: usize, F>(
    field: &mut F,
    x: &[f64; N],
    f0: &[f64; N],
    t: f64,
    dir: f64,
    opts: &OdeOptions,
) -> f64
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let sc: [f64; N] = std::array::from_fn(|i| opts.atol + opts.rtol * x[i].abs());
    let d0 = rms_norm(x, &sc);
    let d1 = rms_norm(f0, &sc);
    let h0 = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 } else { 0.01 * d0 / d1 }.min(opts.h_max);
    let x1: [f64; N] = std::array::from_fn(|i| x[i] + dir * h0 * f0[i]);
    let f1 = field(t + dir * h0, &x1);
    let df: [f64; N] = std::array::from_fn(|i| f1[i] - f0[i]);
    let d2 = rms_norm(&df, &sc) / h0;
    let m = d1.max(d2);
    let h1 = if m <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / m).powf(0.2) };
    (100.0 * h0).min(h1).min(opts.h_max)
}

/// Samples of an ODE solution.
#[derive(Debug, Clone)]
pub struct OdeSolution<const N: usize> {
    pub times: Vec<f64>,
    pub states: Vec<[f64; N]>,
    pub stats: OdeStats,
}

/// Integrates from `t0` to `t1` and returns the solution at `samples`
/// (which must be ordered along the direction of integration and lie in the
/// span). With no samples requested, the initial point and every accepted
/// step are returned.
pub fn integrate_ode<const N: usize, F>(
    field: F,
    x0: [f64; N],
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
    samples: &[f64],
) -> Result<OdeSolution<N>>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let dir = (t1 - t0).signum();
    if samples.windows(2).any(|w| (w[1] - w[0]) * dir <= 0.0) {
        return Err(invalid("samples", "sample times must be strictly ordered along the span"));
    }
    if samples.iter().any(|&s| (s - t0) * dir < 0.0 || (s - t1) * dir > 0.0) {
        return Err(invalid("samples", "sample times must lie within the span"));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut next = 0;
    if samples.is_empty() {
        times.push(t0);
        states.push(x0);
    } else {
        while next < samples.len() && samples[next] == t0 {
            times.push(t0);
            states.push(x0);
            next += 1;
        }
    }
    let end = solve(field, x0, t0, t1, opts, |step| {
        if samples.is_empty() {
            times.push(step.t1);
            states.push(step.x1);
        } else {
            while next < samples.len() && step.covers(samples[next]) {
                times.push(samples[next]);
                states.push(step.eval(samples[next]));
                next += 1;
            }
        }
        ControlFlow::Continue(())
    })?;
    Ok(OdeSolution { times, states, stats: end.stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tableau_consistency() {
        let rows: [(f64, &[f64]); 6] = [
            (C2, &[A21]),
            (C3, &[A31, A32]),
            (C4, &[A41, A42, A43]),
            (C5, &[A51, A52, A53, A54]),
            (1.0, &[A61, A62, A63, A64, A65]),
            (1.0, &[A71, 0.0, A73, A74, A75, A76]),
        ];
        for (c, a) in rows {
            assert!((a.iter().sum::<f64>() - c).abs() < 1e-14);
        }
        // Error weights sum to zero (both solutions consistent).
        assert!((E1 + E3 + E4 + E5 + E6 + E7).abs() < 1e-16);
        // The dense correction vanishes for constant fields.
        assert!((D1 + D3 + D4 + D5 + D6 + D7).abs() < 1e-12);
    }

    #[test]
    fn zero_field_is_identity() {
        let sol = integrate_ode(|_, _| [0.0, 0.0], [1.5, -2.0], 0.0, 10.0, &OdeOptions::with_tol(1e-8), &[])
            .unwrap();
        assert!(sol.states.iter().all(|s| *s == [1.5, -2.0]));
        assert_eq!(*sol.times.last().unwrap(), 10.0);
    }

    #[test]
    fn exponential_forward_and_backward() {
        let opts = OdeOptions::with_tol(1e-12);
        let f = |_: f64, x: &[f64; 1]| [-x[0]];
        let fwd = integrate_ode(f, [1.0], 0.0, 5.0, &opts, &[1.0, 2.5, 5.0]).unwrap();
        for (t, x) in fwd.times.iter().zip(&fwd.states) {
            assert!((x[0] - (-t).exp()).abs() < 1e-11);
        }
        let bwd = integrate_ode(f, [(-5.0f64).exp()], 5.0, 0.0, &opts, &[2.0, 0.0]).unwrap();
        assert!((bwd.states[0][0] - (-2.0f64).exp()).abs() < 1e-11);
        assert!((bwd.states[1][0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dense_output_is_fourth_order_accurate() {
        // Harmonic oscillator, sampled between steps.
        let opts = OdeOptions::with_tol(1e-10);
        let samples: Vec<f64> = (1..200).map(|i| i as f64 * 0.05).collect();
        let sol = integrate_ode(|_, x: &[f64; 2]| [x[1], -x[0]], [1.0, 0.0], 0.0, 10.0, &opts, &samples)
            .unwrap();
        for (t, x) in sol.times.iter().zip(&sol.states) {
            assert!((x[0] - t.cos()).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn fixed_step_order_is_five() {
        // Loose tolerance plus capped steps turns the controller off.
        let mut errs = Vec::new();
        let ns = [10usize, 20, 40, 80];
        for &n in &ns {
            let h = 2.0 / n as f64;
            let opts = OdeOptions {
                rtol: 1e6,
                atol: 1e6,
                h_init: Some(h),
                h_max: h,
                max_steps: 1000,
            };
            let end = solve(|_, x: &[f64; 1]| [-2.0 * x[0]], [1.0], 0.0, 2.0, &opts, |_| {
                ControlFlow::Continue(())
            })
            .unwrap();
            assert_eq!(end.stats.accepted, n);
            errs.push((end.x[0] - (-4.0f64).exp()).abs());
        }
        let xs: Vec<f64> = ns.iter().map(|n| (*n as f64).ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let slope = crate::stats::ols_slope(&xs, &ys).slope;
        assert!((slope + 5.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn blow_up_reports_underflow_with_location() {
        // x' = x², x(0)=1 blows up at t=1.
        let err = solve(|_, x: &[f64; 1]| [x[0] * x[0]], [1.0], 0.0, 2.0, &OdeOptions::with_tol(1e-10), |_| {
            ControlFlow::Continue(())
        })
        .unwrap_err();
        match err {
            Error::StepSizeUnderflow { tau, .. } => assert!((tau - 1.0).abs() < 1e-3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn observer_can_stop() {
        let end = solve(|_, _: &[f64; 1]| [1.0], [0.0], 0.0, 100.0, &OdeOptions::with_tol(1e-8), |s| {
            if s.x1[0] > 10.0 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        assert!(end.stopped && end.t < 100.0 && end.x[0] > 10.0);
    }

    #[test]
    fn rejects_bad_samples() {
        let f = |_: f64, x: &[f64; 1]| [x[0]];
        let o = OdeOptions::with_tol(1e-8);
        assert!(integrate_ode(f, [1.0], 0.0, 1.0, &o, &[0.5, 0.2]).is_err());
        assert!(integrate_ode(f, [1.0], 0.0, 1.0, &o, &[2.0]).is_err());
    }
}
