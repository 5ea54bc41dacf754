//! Parametrically driven pendulum with a slowly chirped pump, and a check of
//! its envelope against the averaged `(r, ψ)` system.
//!
//! With slow time `τ = εt/2`, the pendulum's oscillation is
//! `u ≈ √(4εr(τ)) cos(ψ(τ)/2 + Φ(t))`, where `Φ(t) = t − αt²/2` and
//! `λ = 8α/ε²`, `γ = 2ϑ/ε`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::integrators::{integrate_ode, OdeOptions, Trajectory, TrajectoryMeta, PENDULUM_COLUMNS, STATE_COLUMNS};
use crate::model::{rhs_primary, State, SystemParams};

/// Output spacing in `t` for pendulum trajectories. About 125 samples per
/// oscillation, enough for parabolic extremum refinement.
pub const SAMPLE_DT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    pub eps: f64,
    pub alpha: f64,
    pub theta: f64,
    #[serde(default)]
    pub mu: f64,
}

impl PendulumParams {
    /// Pendulum parameters that map onto `p` at the given `ε`.
    pub fn from_system(p: &SystemParams, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(invalid("eps", "must lie in (0, 1)"));
        }
        Ok(Self { eps, alpha: p.lambda() * eps * eps / 8.0, theta: p.gamma() * eps / 2.0, mu: 0.0 })
    }

    /// Pump phase `Φ(t) = t − αt²/2`.
    pub fn pump_phase(&self, t: f64) -> f64 {
        t - 0.5 * self.alpha * t * t
    }

    pub fn slow_time(&self, t: f64) -> f64 {
        0.5 * self.eps * t
    }

    pub fn fast_time(&self, tau: f64) -> f64 {
        2.0 * tau / self.eps
    }
}

/// `(λ, γ) = (8α/ε², 2ϑ/ε)`.
pub fn map_params(pp: &PendulumParams) -> Result<SystemParams> {
    if !(pp.eps > 0.0 && pp.eps < 1.0) {
        return Err(invalid("eps", "must lie in (0, 1)"));
    }
    let lambda = 8.0 * pp.alpha / (pp.eps * pp.eps);
    let gamma = 2.0 * pp.theta / pp.eps;
    if !(lambda > 0.0) {
        return Err(invalid("alpha", format!("derived λ = 8α/ε² = {lambda} must be > 0")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid("theta", format!("derived γ = 2ϑ/ε = {gamma} must lie in (0, 1)")));
    }
    SystemParams::new(lambda, gamma)
}

/// Leading-order inverse of the substitution at `t = 0`:
/// `u = √(4εr) cos(ψ/2)`, `u' = −√(4εr) sin(ψ/2)`.
pub fn seed_from_averaged(pp: &PendulumParams, s: State) -> Result<(f64, f64)> {
    if !(s.r >= 0.0) {
        return Err(invalid("r", "amplitude must be ≥ 0"));
    }
    let a = (4.0 * pp.eps * s.r).sqrt();
    Ok((a * (0.5 * s.psi).cos(), -a * (0.5 * s.psi).sin()))
}

pub fn pendulum_rhs(pp: &PendulumParams, t: f64, x: &[f64; 2]) -> [f64; 2] {
    let pump = 1.0 + pp.eps * (2.0 * pp.pump_phase(t)).cos();
    [x[1], -pump * x[0].sin() - pp.theta * x[1]]
}

/// Integrates the pendulum on `[0, t_end]`, sampled every [`SAMPLE_DT`].
pub fn integrate_pendulum(pp: &PendulumParams, u0: f64, v0: f64, t_end: f64, tol: f64) -> Result<Trajectory> {
    if pp.mu != 0.0 {
        return Err(invalid("mu", "only the unperturbed pendulum (mu = 0) is integrated"));
    }
    if !(pp.eps >= 0.0 && pp.theta >= 0.0 && pp.alpha.is_finite()) {
        return Err(invalid("eps", "eps and theta must be ≥ 0"));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(invalid("t_end", "must be > 0"));
    }
    let n = (t_end / SAMPLE_DT).ceil() as usize;
    let samples: Vec<f64> = (0..=n).map(|i| (i as f64 * SAMPLE_DT).min(t_end)).collect();
    let mut samples = samples;
    samples.dedup();
    let opts = OdeOptions { h_max: 0.5, ..OdeOptions::with_tol(tol) };
    let sol = integrate_ode(|t, x: &[f64; 2]| pendulum_rhs(pp, t, x), [u0, v0], 0.0, t_end, &opts, &samples)?;
    let mut traj = Trajectory::new(TrajectoryMeta::deterministic("dopri5", tol, PENDULUM_COLUMNS));
    for (t, x) in sol.times.iter().zip(&sol.states) {
        traj.push(*t, *x);
    }
    Ok(traj)
}

/// Deterministic averaged trajectory on `[0, tau_end]`, sampled every
/// `sample` in τ.
pub fn averaged_trajectory(p: &SystemParams, s0: State, tau_end: f64, sample: f64, tol: f64) -> Result<Trajectory> {
    if !(sample > 0.0 && tau_end > 0.0) {
        return Err(invalid("sample", "sample spacing and tau_end must be > 0"));
    }
    let n = (tau_end / sample).ceil() as usize;
    let mut samples: Vec<f64> = (0..=n).map(|i| (i as f64 * sample).min(tau_end)).collect();
    samples.dedup();
    let sol = integrate_ode(
        |t, x: &[f64; 2]| rhs_primary(State::from_array(*x), t, p),
        s0.to_array(),
        0.0,
        tau_end,
        &OdeOptions::with_tol(tol),
        &samples,
    )?;
    let mut traj = Trajectory::new(TrajectoryMeta::deterministic("dopri5", tol, STATE_COLUMNS));
    for (t, x) in sol.times.iter().zip(&sol.states) {
        traj.push(*t, *x);
    }
    Ok(traj)
}

/// Local extrema of `|u|` as `(t, |u|)`, refined by a parabola through the
/// three samples around each one.
pub fn extrema(traj: &Trajectory) -> Vec<(f64, f64)> {
    let (t, x) = (&traj.times, &traj.states);
    let mut out = Vec::new();
    for i in 1..x.len().saturating_sub(1) {
        let (a, b, c) = (x[i - 1][0], x[i][0], x[i + 1][0]);
        let is_max = b > a && b >= c && b > 0.0;
        let is_min = b < a && b <= c && b < 0.0;
        if !(is_max || is_min) {
            continue;
        }
        let h = t[i + 1] - t[i];
        let denom = a - 2.0 * b + c;
        let (dt, peak) = if denom != 0.0 && (t[i] - t[i - 1] - h).abs() < 1e-9 * h {
            let s = 0.5 * (a - c) / denom;
            (s * h, b - 0.25 * (a - c) * s)
        } else {
            (0.0, b)
        };
        out.push((t[i] + dt, peak.abs()));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub tau: f64,
    pub envelope: f64,
    pub predicted: f64,
    pub relerr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeComparison {
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub extrema: usize,
    pub rows: Vec<EnvelopeRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeOptions {
    /// Slow-time window; defaults to the common coverage of both inputs.
    pub window: Option<(f64, f64)>,
    /// Leading fraction of the window skipped as transient.
    pub transient: f64,
    pub min_extrema: usize,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self { window: None, transient: 0.1, min_extrema: 20 }
    }
}

/// Linear interpolation of column `k` of a trajectory with sorted times.
fn interp(traj: &Trajectory, t: f64, k: usize) -> Option<f64> {
    let ts = &traj.times;
    if ts.is_empty() || t < ts[0] || t > ts[ts.len() - 1] {
        return None;
    }
    let j = ts.partition_point(|&s| s < t);
    if j == 0 {
        return Some(traj.states[0][k]);
    }
    let (t0, t1) = (ts[j - 1], ts[j]);
    let w = (t - t0) / (t1 - t0);
    Some((1.0 - w) * traj.states[j - 1][k] + w * traj.states[j][k])
}

/// Compares the pendulum envelope, read off at successive extrema of `u`,
/// with `√(4εr(τ))` from the averaged trajectory.
pub fn envelope_compare(
    pendulum: &Trajectory,
    averaged: &Trajectory,
    pp: &PendulumParams,
    opts: &EnvelopeOptions,
) -> Result<EnvelopeComparison> {
    let (Some((tp_end, _)), Some((ta_end, _))) = (pendulum.last(), averaged.last()) else {
        return Err(Error::TooFewExtrema { found: 0, needed: opts.min_extrema });
    };
    let cover_lo = pp.slow_time(pendulum.times[0]).max(averaged.times[0]);
    let cover_hi = pp.slow_time(tp_end).min(ta_end);
    let (lo, hi) = opts.window.unwrap_or((cover_lo, cover_hi));
    if !(lo >= cover_lo - 1e-12 && hi <= cover_hi + 1e-12 && hi > lo) {
        return Err(invalid(
            "window",
            format!("[{lo}, {hi}] is not inside the common coverage [{cover_lo}, {cover_hi}]"),
        ));
    }
    if !(0.0..1.0).contains(&opts.transient) {
        return Err(invalid("transient", "must lie in [0, 1)"));
    }
    let start = lo + opts.transient * (hi - lo);
    let rows: Vec<EnvelopeRow> = extrema(pendulum)
        .into_iter()
        .filter_map(|(t, env)| {
            let tau = pp.slow_time(t);
            if tau < start || tau > hi {
                return None;
            }
            let r = interp(averaged, tau, 0)?;
            let predicted = (4.0 * pp.eps * r.max(0.0)).sqrt();
            Some(EnvelopeRow { tau, envelope: env, predicted, relerr: (env - predicted).abs() / predicted })
        })
        .collect();
    if rows.len() < opts.min_extrema {
        return Err(Error::TooFewExtrema { found: rows.len(), needed: opts.min_extrema });
    }
    let max_rel_error = rows.iter().map(|r| r.relerr).fold(0.0, f64::max);
    let mean_rel_error = rows.iter().map(|r| r.relerr).sum::<f64>() / rows.len() as f64;
    Ok(EnvelopeComparison { max_rel_error, mean_rel_error, extrema: rows.len(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> PendulumParams {
        PendulumParams { eps: 0.05, alpha: 3.125e-4, theta: 2.5e-3, mu: 0.0 }
    }

    #[test]
    fn map_example() {
        let p = map_params(&base()).unwrap();
        assert!((p.lambda() - 1.0).abs() < 1e-12 && (p.gamma() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn undamped_map_is_rejected() {
        let err = map_params(&PendulumParams { theta: 0.0, ..base() }).unwrap_err();
        assert!(err.to_string().contains("γ"), "{err}");
    }

    #[test]
    fn map_is_homogeneous() {
        let b = base();
        let half = PendulumParams { eps: b.eps / 2.0, alpha: b.alpha / 4.0, theta: b.theta / 2.0, mu: 0.0 };
        let (p, q) = (map_params(&b).unwrap(), map_params(&half).unwrap());
        assert!((p.lambda() - q.lambda()).abs() < 1e-12 && (p.gamma() - q.gamma()).abs() < 1e-12);
        let back = PendulumParams::from_system(&p, 0.05).unwrap();
        assert!((back.alpha - b.alpha).abs() < 1e-18 && (back.theta - b.theta).abs() < 1e-15);
    }

    #[test]
    fn noisy_pendulum_is_refused() {
        assert!(integrate_pendulum(&PendulumParams { mu: 0.1, ..base() }, 0.1, 0.0, 10.0, 1e-8).is_err());
    }

    #[test]
    fn unpumped_damped_pendulum_loses_energy() {
        let pp = PendulumParams { eps: 0.0, alpha: 0.0, theta: 0.05, mu: 0.0 };
        let traj = integrate_pendulum(&pp, 1.0, 0.0, 100.0, 1e-10).unwrap();
        let energy: Vec<f64> = traj.states.iter().map(|x| 0.5 * x[1] * x[1] + 1.0 - x[0].cos()).collect();
        assert!(energy.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        assert!(energy[energy.len() - 1] < 0.1 * energy[0]);
    }

    #[test]
    fn small_oscillation_has_unit_frequency() {
        let pp = PendulumParams { eps: 0.0, alpha: 0.0, theta: 0.0, mu: 0.0 };
        let traj = integrate_pendulum(&pp, 1e-3, 0.0, 20.0 * std::f64::consts::PI, 1e-11).unwrap();
        let ex = extrema(&traj);
        // Extrema of cos t sit at multiples of π.
        for (k, (t, a)) in ex.iter().enumerate() {
            assert!((t - (k + 1) as f64 * std::f64::consts::PI).abs() < 1e-4, "t = {t}");
            assert!((a - 1e-3).abs() < 1e-8);
        }
        assert!(ex.len() >= 19);
    }

    #[test]
    fn predicted_envelope_example() {
        let p = map_params(&base()).unwrap();
        let r = p.lambda() * 10.0 + p.nu();
        assert!(((4.0 * 0.05 * r).sqrt() - 1.483).abs() < 5e-4);
    }

    #[test]
    fn synthetic_signal_matches_itself() {
        let pp = base();
        let p = map_params(&pp).unwrap();
        let avg = averaged_trajectory(&p, State::new(1.0, 2.5), 20.0, 0.01, 1e-11).unwrap();
        let mut u = Trajectory::new(TrajectoryMeta::deterministic("synthetic", 0.0, PENDULUM_COLUMNS));
        let n = (pp.fast_time(20.0) / SAMPLE_DT) as usize;
        for i in 0..=n {
            let t = i as f64 * SAMPLE_DT;
            let tau = pp.slow_time(t);
            let r = interp(&avg, tau, 0).unwrap();
            let psi = interp(&avg, tau, 1).unwrap();
            u.push(t, [(4.0 * pp.eps * r).sqrt() * (0.5 * psi + pp.pump_phase(t)).cos(), 0.0]);
        }
        let cmp = envelope_compare(&u, &avg, &pp, &EnvelopeOptions::default()).unwrap();
        assert!(cmp.max_rel_error < 1e-3, "{}", cmp.max_rel_error);
    }

    #[test]
    fn too_short_window_fails() {
        let pp = base();
        let p = map_params(&pp).unwrap();
        let avg = averaged_trajectory(&p, State::new(1.0, 2.5), 1.0, 0.01, 1e-10).unwrap();
        let traj = integrate_pendulum(&pp, 0.4, 0.0, pp.fast_time(0.5), 1e-9).unwrap();
        assert!(matches!(
            envelope_compare(&traj, &avg, &pp, &EnvelopeOptions::default()),
            Err(Error::TooFewExtrema { .. })
        ));
    }
}
