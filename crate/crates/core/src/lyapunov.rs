//! Lyapunov function for the error system, sampled certification of its
//! inequalities, and the finite-horizon stochastic thresholds built on it.
//!
//! The candidate is
//!
//! ```text
//! V(R, Ψ, τ) = (ντ)⁻¹ [ H(R, Ψ, τ) + γRΨ/2 ]
//! ```
//!
//! and the certified inequalities on `{√(R²+Ψ²) ≤ d0, τ0 ≤ τ ≤ τ_hi}` are
//!
//! ```text
//! ¼ m ≤ V ≤ ¾ m,   m = (ντ)⁻¹R² + Ψ²,
//! dV/dτ ≤ −(γ/6) V,
//! |∇V|² ≤ B_V V,   |∂²V| ≤ C_V.
//! ```
//!
//! The stochastic machinery works with `U = 4V`, for which the sandwich reads
//! `Ψ² + a τ^{-b} R² ≤ U ≤ A(Ψ² + a τ^{-b} R²)` with `A = 3`, `a = 1/ν`,
//! `b = 1`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{
    hamiltonian_jet, rhs_error_at, CapturedSolution, ErrorState, NoiseSchedule, RefPoint, Schedule,
    SystemParams,
};

/// Normalization factor between `V` and the stochastic Lyapunov function.
pub const U_SCALE: f64 = 4.0;

/// `V` with its partials and its derivative along the error system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovJet {
    pub value: f64,
    pub d_amp: f64,
    pub d_phase: f64,
    pub d_amp_amp: f64,
    pub d_amp_phase: f64,
    pub d_phase_phase: f64,
    /// `∂_τ V + ∂_R V·(−∂_Ψ H − γR) + ∂_Ψ V·∂_R H`
    pub d_flow: f64,
    /// `(ντ)⁻¹R² + Ψ²`
    pub weighted_norm: f64,
}

impl LyapunovJet {
    pub fn grad_sq(&self) -> f64 {
        self.d_amp * self.d_amp + self.d_phase * self.d_phase
    }

    /// Largest absolute second partial.
    pub fn hess_max(&self) -> f64 {
        self.d_amp_amp
            .abs()
            .max(self.d_amp_phase.abs())
            .max(self.d_phase_phase.abs())
    }
}

/// Closed-form evaluation at a reference point.
pub fn lyapunov_jet(e: ErrorState, tau: f64, at: &RefPoint, p: &SystemParams) -> LyapunovJet {
    let g = p.gamma();
    let w = 1.0 / (p.nu() * tau);
    let h = hamiltonian_jet(e, at);
    let cross = 0.5 * g * e.amp * e.phase;
    let value = w * (h.value + cross);
    let d_amp = w * (h.d_amp + 0.5 * g * e.phase);
    let d_phase = w * (h.d_phase + 0.5 * g * e.amp);
    // ∂_τ V = w ∂_τ H − V/τ, since ∂_τ w = −w/τ.
    let d_tau = w * h.d_tau - value / tau;
    let [f_amp, f_phase] = rhs_error_at(e, at, p);
    LyapunovJet {
        value,
        d_amp,
        d_phase,
        d_amp_amp: w * h.d_amp_amp,
        d_amp_phase: w * (h.d_amp_phase + 0.5 * g),
        d_phase_phase: w * h.d_phase_phase,
        d_flow: d_tau + d_amp * f_amp + d_phase * f_phase,
        weighted_norm: w * e.amp * e.amp + e.phase * e.phase,
    }
}

pub fn eval_v(e: ErrorState, tau: f64, p: &SystemParams, reference: &impl CapturedSolution) -> Result<f64> {
    Ok(lyapunov_jet(e, tau, &reference.point(tau)?, p).value)
}

/// `dV/dτ` along the deterministic error system.
pub fn dv_dtau(e: ErrorState, tau: f64, p: &SystemParams, reference: &impl CapturedSolution) -> Result<f64> {
    Ok(lyapunov_jet(e, tau, &reference.point(tau)?, p).d_flow)
}

/// `U = 4V`.
pub fn eval_u(e: ErrorState, tau: f64, p: &SystemParams, reference: &impl CapturedSolution) -> Result<f64> {
    Ok(U_SCALE * eval_v(e, tau, p, reference)?)
}

/// Decay rate certified for `V` (and `U`).
pub fn decay_rate(p: &SystemParams) -> f64 {
    p.gamma() / 6.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// `V ≥ ¼[(ντ)⁻¹R² + Ψ²]`
    LowerSandwich,
    /// `V ≤ ¾[(ντ)⁻¹R² + Ψ²]`
    UpperSandwich,
    /// `dV/dτ ≤ −(γ/6)V`
    Decay,
    /// `|∇V|² ≤ B_V·V`
    GradientBound,
    /// `|∂²V| ≤ C_V`
    HessianBound,
}

/// First inequality that failed and where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub inequality: Inequality,
    pub amp: f64,
    pub phase: f64,
    pub tau: f64,
    /// Signed slack divided by the weighted norm (negative here).
    pub slack: f64,
    pub d0: f64,
    pub tau0: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} fails (normalized slack {:.3e}) at R = {:.6}, Ψ = {:.6}, τ = {:.4} for d0 = {}, τ0 = {}",
            self.inequality, self.slack, self.amp, self.phase, self.tau, self.d0, self.tau0
        )
    }
}

/// Normalized slacks of the three structural inequalities; all `≥ 0` when
/// they hold. Dividing by the weighted norm keeps the scale uniform as the
/// point approaches the origin.
fn slacks(j: &LyapunovJet, q: f64) -> [(Inequality, f64); 3] {
    let m = j.weighted_norm;
    [
        (Inequality::LowerSandwich, (j.value - 0.25 * m) / m),
        (Inequality::UpperSandwich, (0.75 * m - j.value) / m),
        (Inequality::Decay, (-q * j.value - j.d_flow) / m),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    pub d_range: (f64, f64),
    pub tau_range: (f64, f64),
    /// Points per axis (τ, radius); angles use twice as many.
    pub grid: usize,
    pub tau0_candidates: usize,
    pub bisection_steps: usize,
    pub spot_checks: usize,
    pub seed: u64,
    /// Relative headroom added to the measured `B` and `C`.
    pub headroom: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            d_range: (0.02, 0.5),
            tau_range: (5.0, 200.0),
            grid: 48,
            tau0_candidates: 8,
            bisection_steps: 10,
            spot_checks: 10_000,
            seed: 0x5eed,
            headroom: 0.01,
        }
    }
}

impl CertifyConfig {
    fn validate(&self) -> Result<()> {
        if self.grid < 32 {
            return Err(invalid("grid", format!("need at least 32 points per axis, got {}", self.grid)));
        }
        let (dl, dh) = self.d_range;
        if !(dl > 0.0 && dh >= dl) {
            return Err(invalid("d_range", "need 0 < lo ≤ hi"));
        }
        let (tl, th) = self.tau_range;
        if !(tl >= 1.0 && th > tl) {
            return Err(invalid("tau_range", "need 1 ≤ lo < hi"));
        }
        if self.tau0_candidates == 0 {
            return Err(invalid("tau0_candidates", "must be ≥ 1"));
        }
        if !(self.headroom >= 0.0) {
            return Err(invalid("headroom", "must be ≥ 0"));
        }
        Ok(())
    }
}

/// Numerically validated constants for the error system's Lyapunov function.
///
/// `A`, `B`, `C`, `a`, `b`, `q` refer to `U = 4V` in the general template;
/// `b_v`, `c_v` are the same bounds measured for `V` itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct StabilityCertificate {
    pub d0: f64,
    pub tau0: f64,
    pub tau_max: f64,
    pub A: f64,
    pub B: f64,
    pub C: f64,
    pub q: f64,
    pub a: f64,
    pub b: f64,
    /// Validity radius in `(R, Ψ)`; taken equal to `d0`.
    pub rho0: f64,
    pub b_v: f64,
    pub c_v: f64,
    pub grid: usize,
    /// Smallest normalized slack over the grid (sandwich and decay).
    pub margin: f64,
    pub spot_checks: usize,
    pub spot_violations: usize,
    /// Sampled, not proven.
    pub method: String,
}

/// Aggregate over one sampled domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainScan {
    pub margin: f64,
    pub max_grad_ratio: f64,
    pub max_hessian: f64,
    pub violation: Option<Violation>,
}

fn tau_points(tau0: f64, tau_hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                tau_hi
            } else {
                tau0 * (tau_hi / tau0).powf(i as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

/// Evaluates every inequality on the grid for the disk of radius `d0` and
/// `τ ∈ [tau0, tau_hi]`.
pub fn scan_domain(
    p: &SystemParams,
    reference: &impl CapturedSolution,
    d0: f64,
    tau0: f64,
    tau_hi: f64,
    grid: usize,
) -> Result<DomainScan> {
    let q = decay_rate(p);
    let taus = tau_points(tau0, tau_hi, grid);
    let angles: Vec<(f64, f64)> = (0..2 * grid)
        .map(|k| (std::f64::consts::TAU * k as f64 / (2 * grid) as f64).sin_cos())
        .collect();
    let per_tau: Vec<Result<DomainScan>> = taus
        .par_iter()
        .map(|&tau| {
            let at = reference.point(tau)?;
            let mut scan = DomainScan {
                margin: f64::INFINITY,
                max_grad_ratio: 0.0,
                max_hessian: 0.0,
                violation: None,
            };
            for i in 1..=grid {
                let rad = d0 * i as f64 / grid as f64;
                for &(s, c) in &angles {
                    let e = ErrorState::new(rad * c, rad * s);
                    let j = lyapunov_jet(e, tau, &at, p);
                    for (ineq, slack) in slacks(&j, q) {
                        if slack < scan.margin {
                            scan.margin = slack;
                        }
                        if slack < 0.0 && scan.violation.is_none() {
                            scan.violation = Some(Violation {
                                inequality: ineq,
                                amp: e.amp,
                                phase: e.phase,
                                tau,
                                slack,
                                d0,
                                tau0,
                            });
                        }
                    }
                    scan.max_grad_ratio = scan.max_grad_ratio.max(j.grad_sq() / j.value);
                    scan.max_hessian = scan.max_hessian.max(j.hess_max());
                }
            }
            Ok(scan)
        })
        .collect();
    let mut total = DomainScan {
        margin: f64::INFINITY,
        max_grad_ratio: 0.0,
        max_hessian: 0.0,
        violation: None,
    };
    for s in per_tau {
        let s = s?;
        total.margin = total.margin.min(s.margin);
        total.max_grad_ratio = total.max_grad_ratio.max(s.max_grad_ratio);
        total.max_hessian = total.max_hessian.max(s.max_hessian);
        if total.violation.is_none() {
            total.violation = s.violation;
        }
    }
    Ok(total)
}

/// Searches for the largest tube radius `d0` (and, among equals, the smallest
/// `τ0`) on which the inequalities hold at every grid point, then measures
/// `B`, `C` and spot-checks the result at random points.
pub fn certify(p: &SystemParams, reference: &impl CapturedSolution, cfg: &CertifyConfig) -> Result<StabilityCertificate> {
    cfg.validate()?;
    let (ref_lo, ref_hi) = reference.domain();
    let tau_lo = cfg.tau_range.0.max(ref_lo);
    let tau_hi = cfg.tau_range.1.min(ref_hi);
    if !(tau_hi > tau_lo) {
        return Err(invalid("tau_range", "does not overlap the reference domain"));
    }
    let (d_lo, d_hi) = cfg.d_range;
    let candidates = if cfg.tau0_candidates == 1 {
        vec![tau_lo]
    } else {
        tau_points(tau_lo, (0.5 * tau_hi).max(tau_lo), cfg.tau0_candidates)
    };

    let mut best: Option<(f64, f64)> = None;
    let mut first_violation = None;
    for &tau0 in &candidates {
        let holds = |d: f64| -> Result<Option<Violation>> {
            Ok(scan_domain(p, reference, d, tau0, tau_hi, cfg.grid)?.violation)
        };
        let d0 = if holds(d_hi)?.is_none() {
            d_hi
        } else if let Some(v) = holds(d_lo)? {
            first_violation.get_or_insert(v);
            continue;
        } else {
            let (mut ok, mut bad) = (d_lo, d_hi);
            for _ in 0..cfg.bisection_steps {
                let mid = 0.5 * (ok + bad);
                if holds(mid)?.is_none() {
                    ok = mid;
                } else {
                    bad = mid;
                }
            }
            ok
        };
        if best.is_none_or(|(bd, _)| d0 > bd) {
            best = Some((d0, tau0));
        }
        if d0 == d_hi {
            break;
        }
    }
    let Some((d0, tau0)) = best else {
        return Err(Error::NoCertificate(first_violation.expect("a failing candidate records its violation")));
    };

    let scan = scan_domain(p, reference, d0, tau0, tau_hi, cfg.grid)?;
    let b_v = scan.max_grad_ratio * (1.0 + cfg.headroom);
    let c_v = scan.max_hessian * (1.0 + cfg.headroom);
    let mut cert = StabilityCertificate {
        d0,
        tau0,
        tau_max: tau_hi,
        A: 3.0,
        B: U_SCALE * b_v,
        C: U_SCALE * c_v,
        q: decay_rate(p),
        a: 1.0 / p.nu(),
        b: 1.0,
        rho0: d0,
        b_v,
        c_v,
        grid: cfg.grid,
        margin: scan.margin,
        spot_checks: 0,
        spot_violations: 0,
        method: "sampled grid search with random spot checks (not a proof)".into(),
    };
    let spot = spot_check(&cert, p, reference, cfg.spot_checks, cfg.seed)?;
    cert.spot_checks = spot.samples;
    cert.spot_violations = spot.violations.len();
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotCheck {
    pub samples: usize,
    pub violations: Vec<Violation>,
    pub worst_slack: f64,
}

/// Checks all five certified inequalities at `samples` random points of the
/// certified domain (uniform in area, log-uniform in τ).
pub fn spot_check(
    cert: &StabilityCertificate,
    p: &SystemParams,
    reference: &impl CapturedSolution,
    samples: usize,
    seed: u64,
) -> Result<SpotCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = decay_rate(p);
    let mut out = SpotCheck {
        samples,
        violations: Vec::new(),
        worst_slack: f64::INFINITY,
    };
    let log_span = (cert.tau_max / cert.tau0).ln();
    for _ in 0..samples {
        let tau = (cert.tau0 * (rng.random::<f64>() * log_span).exp()).min(cert.tau_max);
        let rad = cert.d0 * (1.0 - rng.random::<f64>()).sqrt();
        let ang = std::f64::consts::TAU * rng.random::<f64>();
        let e = ErrorState::new(rad * ang.cos(), rad * ang.sin());
        let j = lyapunov_jet(e, tau, &reference.point(tau)?, p);
        let mut checks = slacks(&j, q).to_vec();
        checks.push((Inequality::GradientBound, (cert.b_v * j.value - j.grad_sq()) / j.weighted_norm));
        checks.push((Inequality::HessianBound, cert.c_v - j.hess_max()));
        for (ineq, slack) in checks {
            out.worst_slack = out.worst_slack.min(slack);
            if slack < 0.0 {
                out.violations.push(Violation {
                    inequality: ineq,
                    amp: e.amp,
                    phase: e.phase,
                    tau,
                    slack,
                    d0: cert.d0,
                    tau0: cert.tau0,
                });
            }
        }
    }
    Ok(out)
}

/// Coefficient `a_k = (k+1) n² h (B+C) / q` of the moment chain.
pub fn chain_coefficient(k: usize, n: usize, h: f64, b: f64, c: f64, q: f64) -> f64 {
    (k + 1) as f64 * (n * n) as f64 * h * (b + c) / q
}

/// Parameters of the chain `U_N(z, t; T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub order: usize,
    pub mu: f64,
    pub h: f64,
    /// State dimension `n`.
    pub dim: usize,
    pub b: f64,
    pub c: f64,
    pub q: f64,
    /// Horizon `T`.
    pub horizon: f64,
    pub t0: f64,
}

/// `U_1 = U + μ² h n² C (T + t0 − t)`, `U_k = U^k + μ² a_{k−1} U_{k−1}`.
pub fn chain_u(cp: &ChainParams, u: f64, t: f64) -> f64 {
    let n2 = (cp.dim * cp.dim) as f64;
    let mut acc = u + cp.mu * cp.mu * cp.h * n2 * cp.c * (cp.horizon + cp.t0 - t);
    for k in 2..=cp.order {
        let a = chain_coefficient(k - 1, cp.dim, cp.h, cp.b, cp.c, cp.q);
        acc = u.powi(k as i32) + cp.mu * cp.mu * a * acc;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    /// `δ`, `Δ` from the closed forms valid for `N = 1`.
    ClosedForm,
    /// `N > 1`: only the horizon exponent is known; `δ`, `Δ` must be found
    /// empirically.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub order: usize,
    pub kappa: f64,
    pub h: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub kind: ThresholdKind,
    /// Admissible initial radius.
    pub delta: Option<f64>,
    /// Admissible noise amplitude bound.
    pub mu_max: Option<f64>,
    /// `T_μ = μ^{t_mu_exponent}`.
    pub t_mu_exponent: f64,
}

impl ThresholdReport {
    pub fn horizon(&self, mu: f64) -> f64 {
        mu.powf(self.t_mu_exponent)
    }
}

/// Inputs of [`thresholds`]; `a_weight` is the `a` of the sandwich.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdInputs {
    pub order: usize,
    pub kappa: f64,
    pub h: f64,
    pub dim: usize,
    #[serde(rename = "A")]
    pub big_a: f64,
    #[serde(rename = "a")]
    pub a_weight: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub eps1: f64,
    pub eps2: f64,
}

/// `δ = (ε1²ε2 / (2A(1+a)))^{1/2}`, `Δ = (ε1²ε2 / (2n²hC))^{1/(2κ)}`,
/// `T_μ = μ^{−2N(1−κ)}`.
pub fn thresholds(t: &ThresholdInputs) -> Result<ThresholdReport> {
    if !(t.kappa > 0.0 && t.kappa < 1.0) {
        return Err(invalid("kappa", format!("must lie in (0, 1), got {}", t.kappa)));
    }
    if t.order == 0 {
        return Err(invalid("N", "must be ≥ 1"));
    }
    if t.dim == 0 {
        return Err(invalid("n", "must be ≥ 1"));
    }
    for (name, v) in [("h", t.h), ("A", t.big_a), ("C", t.c), ("eps1", t.eps1), ("eps2", t.eps2)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(name, format!("must be > 0, got {v}")));
        }
    }
    if !(t.a_weight >= 0.0) {
        return Err(invalid("a", "must be ≥ 0"));
    }
    let budget = t.eps1 * t.eps1 * t.eps2;
    let (kind, delta, mu_max) = if t.order == 1 {
        let delta = (budget / (2.0 * t.big_a * (1.0 + t.a_weight))).sqrt();
        let n2 = (t.dim * t.dim) as f64;
        let mu_max = (budget / (2.0 * n2 * t.h * t.c)).powf(1.0 / (2.0 * t.kappa));
        (ThresholdKind::ClosedForm, Some(delta), Some(mu_max))
    } else {
        (ThresholdKind::Empirical, None, None)
    };
    Ok(ThresholdReport {
        order: t.order,
        kappa: t.kappa,
        h: t.h,
        eps1: t.eps1,
        eps2: t.eps2,
        kind,
        delta,
        mu_max,
        t_mu_exponent: -2.0 * t.order as f64 * (1.0 - t.kappa),
    })
}

/// Horizon exponent `(κ − 2)/(1 + β)` for intensities decaying like
/// `(1+t)^{−β}`.
pub fn thresholds_beta(beta: f64, kappa: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid("beta", format!("must be > 0, got {beta}")));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(invalid("kappa", format!("must lie in (0, 1), got {kappa}")));
    }
    Ok((kappa - 2.0) / (1.0 + beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassCheck {
    pub bound: f64,
    pub admissible: bool,
}

/// `sup_{τ>τ0} |σ(τ)|·τ^w` for a preset, with `w ∈ {0, 1}`.
fn preset_sup(s: &Schedule, tau0: f64, weight: f64) -> Result<f64> {
    let (c, p) = match s {
        Schedule::Constant(c) => (*c, 0.0),
        Schedule::PowerLaw { c, p } => (*c, *p),
        Schedule::Tabulated { .. } => return Err(Error::NonPresetSchedule(s.label())),
    };
    if c == 0.0 {
        return Ok(0.0);
    }
    let e = p + weight;
    Ok(if e > 0.0 {
        f64::INFINITY
    } else if e == 0.0 {
        c.abs()
    } else {
        c.abs() * tau0.powf(e)
    })
}

/// Closed-form `sup_{τ>τ0} {|σ1(τ)|τ + |σ2(τ)|}` and its comparison with the
/// declared class bound `h`. Each preset term is monotone in τ, so the
/// supremum of the sum is the sum of the suprema.
pub fn noise_class_check(n: &NoiseSchedule, tau0: f64) -> Result<ClassCheck> {
    if !(tau0 > 0.0) {
        return Err(invalid("tau0", "must be > 0"));
    }
    let bound = preset_sup(&n.sigma1, tau0, 1.0)? + preset_sup(&n.sigma2, tau0, 0.0)?;
    Ok(ClassCheck {
        bound,
        admissible: bound <= n.h,
    })
}
