//! Domain types and closed-form vector fields.
//!
//! The primary system is
//!
//! ```text
//! dr/dτ = r sinψ − γ r,        dψ/dτ = r − λτ + cosψ,
//! ```
//!
//! and its white-noise perturbation (Itô form) adds `μ G(r, ψ, τ) dW` with
//!
//! ```text
//! G = [ σ1(τ) r sinψ   0     ]
//!     [ σ1(τ) cosψ     σ2(τ) ].
//! ```
//!
//! Deviations `(R, Ψ)` from a captured solution `(r*, ψ*)` evolve in a damped
//! near-Hamiltonian system driven by
//!
//! ```text
//! H = R²/2 + (R + r*)[cos(Ψ + ψ*) − cosψ*] + Ψ r* sinψ*.
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Parameter pair `(λ, γ)` with the derived `ν = √(1 − γ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct SystemParams {
    lambda: f64,
    gamma: f64,
    nu: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    lambda: f64,
    gamma: f64,
}

impl TryFrom<RawParams> for SystemParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        SystemParams::new(raw.lambda, raw.gamma)
    }
}

impl From<SystemParams> for RawParams {
    fn from(p: SystemParams) -> Self {
        RawParams {
            lambda: p.lambda,
            gamma: p.gamma,
        }
    }
}

impl SystemParams {
    pub fn new(lambda: f64, gamma: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(invalid("lambda", format!("must be > 0, got {lambda}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid("gamma", format!("must lie in (0, 1), got {gamma}")));
        }
        Ok(Self {
            lambda,
            gamma,
            nu: (1.0 - gamma * gamma).sqrt(),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }
}

/// Amplitude and phase shift. The phase is never wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct State {
    pub r: f64,
    pub psi: f64,
}

impl State {
    pub fn new(r: f64, psi: f64) -> Self {
        Self { r, psi }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.r, self.psi]
    }

    pub fn from_array(x: [f64; 2]) -> Self {
        Self { r: x[0], psi: x[1] }
    }
}

/// Deviation `(R, Ψ)` from the captured solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorState {
    /// `R = r − r*`
    pub amp: f64,
    /// `Ψ = ψ − ψ*`
    pub phase: f64,
}

impl ErrorState {
    pub fn new(amp: f64, phase: f64) -> Self {
        Self { amp, phase }
    }

    pub fn norm(&self) -> f64 {
        self.amp.hypot(self.phase)
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.amp, self.phase]
    }

    pub fn from_array(x: [f64; 2]) -> Self {
        Self {
            amp: x[0],
            phase: x[1],
        }
    }
}

/// Noise intensity schedule `τ ↦ σ(τ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `σ(τ) = c`
    Constant(f64),
    /// `σ(τ) = c · τ^p`
    PowerLaw { c: f64, p: f64 },
    /// Piecewise-linear table with constant extrapolation. Evaluable, but not
    /// a closed-form preset, so the class check rejects it.
    Tabulated { tau: Vec<f64>, values: Vec<f64> },
}

impl Schedule {
    pub fn eval(&self, tau: f64) -> f64 {
        match self {
            Schedule::Constant(c) => *c,
            Schedule::PowerLaw { c, p } => {
                if *c == 0.0 {
                    0.0
                } else {
                    c * tau.powf(*p)
                }
            }
            Schedule::Tabulated { tau: knots, values } => {
                let n = knots.len();
                if tau <= knots[0] {
                    return values[0];
                }
                if tau >= knots[n - 1] {
                    return values[n - 1];
                }
                let i = knots.partition_point(|&k| k <= tau) - 1;
                let w = (tau - knots[i]) / (knots[i + 1] - knots[i]);
                values[i] + w * (values[i + 1] - values[i])
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Schedule::Constant(c) => *c == 0.0,
            Schedule::PowerLaw { c, .. } => *c == 0.0,
            Schedule::Tabulated { values, .. } => values.iter().all(|v| *v == 0.0),
        }
    }

    fn validate(&self, name: &'static str) -> Result<()> {
        match self {
            Schedule::Constant(c) if !c.is_finite() => Err(invalid(name, "constant must be finite")),
            Schedule::PowerLaw { c, p } if !(c.is_finite() && p.is_finite()) => {
                Err(invalid(name, "power-law coefficients must be finite"))
            }
            Schedule::Tabulated { tau, values } => {
                if tau.is_empty() || tau.len() != values.len() {
                    return Err(invalid(name, "table needs matching, non-empty tau/values"));
                }
                if tau.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid(name, "table knots must be strictly increasing"));
                }
                if values.iter().chain(tau).any(|v| !v.is_finite()) {
                    return Err(invalid(name, "table entries must be finite"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn label(&self) -> String {
        match self {
            Schedule::Constant(c) => format!("constant({c})"),
            Schedule::PowerLaw { c, p } => format!("{c}·τ^{p}"),
            Schedule::Tabulated { tau, .. } => format!("tabulated({} knots)", tau.len()),
        }
    }
}

/// Noise amplitude `μ`, the two intensity schedules and the declared class
/// bound `h`.
///
/// `μ = 0` is accepted as the deterministic limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub mu: f64,
    pub sigma1: Schedule,
    pub sigma2: Schedule,
    pub h: f64,
}

impl NoiseSchedule {
    pub fn new(mu: f64, sigma1: Schedule, sigma2: Schedule, h: f64) -> Result<Self> {
        let n = Self {
            mu,
            sigma1,
            sigma2,
            h,
        };
        n.validate()?;
        Ok(n)
    }

    /// Additive phase noise: `σ1 ≡ 0`, `σ2 ≡ 1`, `h = 1`.
    pub fn additive_phase(mu: f64) -> Result<Self> {
        Self::new(mu, Schedule::Constant(0.0), Schedule::Constant(1.0), 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu < 1.0) {
            return Err(invalid("mu", format!("must lie in [0, 1), got {}", self.mu)));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(invalid("h", format!("must be > 0, got {}", self.h)));
        }
        self.sigma1.validate("sigma1")?;
        self.sigma2.validate("sigma2")
    }
}

/// A captured solution sampled at one instant: value and time derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefPoint {
    pub r: f64,
    pub psi: f64,
    pub dr: f64,
    pub dpsi: f64,
}

/// Anything that can supply `(r*, ψ*)` and their derivatives on a domain.
pub trait CapturedSolution: Sync {
    fn domain(&self) -> (f64, f64);

    fn point(&self, tau: f64) -> Result<RefPoint>;
}

/// Right-hand side of the primary system.
pub fn rhs_primary(s: State, tau: f64, p: &SystemParams) -> [f64; 2] {
    let (sin, cos) = s.psi.sin_cos();
    [s.r * sin - p.gamma * s.r, s.r - p.lambda * tau + cos]
}

/// Itô drift of the perturbed system. It coincides with [`rhs_primary`];
/// `μ` only scales the diffusion.
pub fn drift_perturbed(s: State, tau: f64, p: &SystemParams, _noise: &NoiseSchedule) -> [f64; 2] {
    rhs_primary(s, tau, p)
}

/// Diffusion matrix `G` (rows: r, ψ; columns: w1, w2), without the `μ` factor.
pub fn diffusion_matrix(s: State, tau: f64, noise: &NoiseSchedule) -> [[f64; 2]; 2] {
    let s1 = noise.sigma1.eval(tau);
    let s2 = noise.sigma2.eval(tau);
    let (sin, cos) = s.psi.sin_cos();
    [[s1 * s.r * sin, 0.0], [s1 * cos, s2]]
}

/// `σ = G·Gᵀ/2`.
pub fn diffusion_covariance(g: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = 0.5 * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    out
}

/// `H` together with its first and second partials and explicit τ-derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianJet {
    pub value: f64,
    /// `∂_R H`
    pub d_amp: f64,
    /// `∂_Ψ H`
    pub d_phase: f64,
    pub d_amp_amp: f64,
    pub d_amp_phase: f64,
    pub d_phase_phase: f64,
    /// `∂_τ H` at fixed `(R, Ψ)`, through `r*(τ)` and `ψ*(τ)`.
    pub d_tau: f64,
}

/// Evaluates `H` and its partials in closed form at a reference point.
pub fn hamiltonian_jet(e: ErrorState, at: &RefPoint) -> HamiltonianJet {
    let (sr, cr) = at.psi.sin_cos();
    let (sf, cf) = (at.psi + e.phase).sin_cos();
    let full_r = e.amp + at.r;
    let bracket = cf - cr;
    let value = 0.5 * e.amp * e.amp + full_r * bracket + e.phase * at.r * sr;
    let d_amp = e.amp + bracket;
    let d_phase = -full_r * sf + at.r * sr;
    let d_tau = at.dr * (bracket + e.phase * sr)
        + at.dpsi * (full_r * (sr - sf) + e.phase * at.r * cr);
    HamiltonianJet {
        value,
        d_amp,
        d_phase,
        d_amp_amp: 1.0,
        d_amp_phase: -sf,
        d_phase_phase: -full_r * cf,
        d_tau,
    }
}

/// `H(R, Ψ, τ)` along the given captured solution.
pub fn hamiltonian(e: ErrorState, tau: f64, reference: &impl CapturedSolution) -> Result<f64> {
    Ok(hamiltonian_jet(e, &reference.point(tau)?).value)
}

/// Error-system field `(−∂_Ψ H − γR, ∂_R H)` at a reference point.
pub fn rhs_error_at(e: ErrorState, at: &RefPoint, p: &SystemParams) -> [f64; 2] {
    let jet = hamiltonian_jet(e, at);
    [-jet.d_phase - p.gamma * e.amp, jet.d_amp]
}

pub fn rhs_error(
    e: ErrorState,
    tau: f64,
    p: &SystemParams,
    reference: &impl CapturedSolution,
) -> Result<[f64; 2]> {
    Ok(rhs_error_at(e, &reference.point(tau)?, p))
}
