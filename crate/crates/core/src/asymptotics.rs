//! Formal power series in `1/τ` for captured solutions.
//!
//! Captured solutions behave as
//!
//! ```text
//! r(τ) = λτ + Σ_{k≥0} r_k τ^{-k},     ψ(τ) = ψ0 + Σ_{k≥1} ψ_k τ^{-k},
//! ```
//!
//! with `sin ψ0 = γ`. Substituting `x = 1/τ` (so `d/dτ = −x² d/dx`) and
//! writing `ρ = r − λτ`, `φ = ψ − ψ0`, the system becomes
//!
//! ```text
//! λx − x³ ρ'(x) = (λ + xρ)(sin(ψ0 + φ) − γ)
//!      −x² φ'(x) = ρ + cos(ψ0 + φ)
//! ```
//!
//! At order `x^n` both equations are affine in the new pair `(ψ_n, r_n)`; the
//! coefficients are found by a 2×2 solve per order. `sin`/`cos` of the phase
//! series use the usual power-series recurrences, truncated at the working
//! order.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{rhs_primary, CapturedSolution, RefPoint, State, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `ψ0 = π − arcsin γ`, `cos ψ0 = −ν`.
    #[default]
    Stable,
    /// `ψ0 = arcsin γ`, `cos ψ0 = +ν`.
    Unstable,
}

impl std::str::FromStr for Branch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stable" => Ok(Branch::Stable),
            "unstable" => Ok(Branch::Unstable),
            other => Err(invalid("branch", format!("expected stable|unstable, got `{other}`"))),
        }
    }
}

/// Leading phase for a damping value `γ ∈ [0, 1)`.
pub fn psi0_for(gamma: f64, branch: Branch) -> f64 {
    match branch {
        Branch::Unstable => gamma.asin(),
        Branch::Stable => std::f64::consts::PI - gamma.asin(),
    }
}

pub fn solve_psi0(p: &SystemParams, branch: Branch) -> f64 {
    psi0_for(p.gamma(), branch)
}

/// Truncated series for one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticExpansion {
    pub branch: Branch,
    pub lambda: f64,
    pub gamma: f64,
    pub psi0: f64,
    /// `r_0 ..= r_K`
    pub r_coeffs: Vec<f64>,
    /// `ψ_0 ..= ψ_K`; index 0 holds `ψ0` so indices line up with `r_coeffs`.
    pub psi_coeffs: Vec<f64>,
}

/// Coefficients of `sin(ψ0 + f)` and `cos(ψ0 + f)` through `x^n`, where
/// `f[0] = 0`.
fn sin_cos_series(psi0: f64, f: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut s = vec![0.0; n + 1];
    let mut c = vec![0.0; n + 1];
    (s[0], c[0]) = psi0.sin_cos();
    for m in 1..=n {
        let mut sm = 0.0;
        let mut cm = 0.0;
        for k in 1..=m.min(f.len() - 1) {
            let kf = k as f64 * f[k];
            sm += kf * c[m - k];
            cm -= kf * s[m - k];
        }
        s[m] = sm / m as f64;
        c[m] = cm / m as f64;
    }
    (s, c)
}

/// Coefficient of `x^n` in both transformed equations (LHS − RHS), given
/// `r[0..=n]` and `psi[0..=n]` (`psi[0]` is ψ0).
fn order_residual(lambda: f64, gamma: f64, r: &[f64], psi: &[f64], n: usize) -> [f64; 2] {
    let mut phi = psi[..=n].to_vec();
    phi[0] = 0.0;
    let (mut s, c) = sin_cos_series(psi[0], &phi, n);
    s[0] -= gamma;

    let mut lhs_r = if n == 1 { lambda } else { 0.0 };
    if n >= 3 {
        lhs_r -= (n - 2) as f64 * r[n - 2];
    }
    let mut rhs_r = lambda * s[n];
    for j in 0..n {
        rhs_r += r[j] * s[n - 1 - j];
    }

    let lhs_psi = if n >= 2 { -((n - 1) as f64) * psi[n - 1] } else { 0.0 };
    let rhs_psi = r[n] + c[n];
    [lhs_r - rhs_r, lhs_psi - rhs_psi]
}

/// Builds the expansion through order `order` for `λ > 0`, `γ ∈ [0, 1)`.
///
/// Kept separate from [`expand`] because the undamped limit `γ = 0` is a
/// valid series even though it is not a valid [`SystemParams`].
pub fn expand_raw(lambda: f64, gamma: f64, branch: Branch, order: usize) -> Result<AsymptoticExpansion> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid("lambda", format!("must be > 0, got {lambda}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid("gamma", format!("must lie in [0, 1), got {gamma}")));
    }
    let psi0 = psi0_for(gamma, branch);
    let mut r = vec![-psi0.cos()];
    let mut psi = vec![psi0];

    for n in 1..=order {
        r.push(0.0);
        psi.push(0.0);
        // Affine in (ψ_n, r_n): probe three points for offset and Jacobian.
        let base = order_residual(lambda, gamma, &r, &psi, n);
        psi[n] = 1.0;
        let e_psi = order_residual(lambda, gamma, &r, &psi, n);
        psi[n] = 0.0;
        r[n] = 1.0;
        let e_r = order_residual(lambda, gamma, &r, &psi, n);
        r[n] = 0.0;

        let j = [
            [e_psi[0] - base[0], e_r[0] - base[0]],
            [e_psi[1] - base[1], e_r[1] - base[1]],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let scale = j.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(det.abs() > 1e-12 * scale * scale) {
            return Err(Error::SingularRecurrence { order: n });
        }
        psi[n] = (-base[0] * j[1][1] + base[1] * j[0][1]) / det;
        r[n] = (-base[1] * j[0][0] + base[0] * j[1][0]) / det;
    }

    Ok(AsymptoticExpansion {
        branch,
        lambda,
        gamma,
        psi0,
        r_coeffs: r,
        psi_coeffs: psi,
    })
}

pub fn expand(p: &SystemParams, branch: Branch, order: usize) -> Result<AsymptoticExpansion> {
    expand_raw(p.lambda(), p.gamma(), branch, order)
}

impl AsymptoticExpansion {
    pub fn order(&self) -> usize {
        self.r_coeffs.len() - 1
    }

    /// Value and exact τ-derivative of the truncation.
    fn jet(&self, tau: f64) -> (State, [f64; 2]) {
        let x = tau.recip();
        let (mut r, mut psi) = (self.lambda * tau, 0.0);
        let (mut dr, mut dpsi) = (self.lambda, 0.0);
        // Horner-free accumulation is fine at these orders.
        let mut xk = 1.0;
        for k in 0..self.r_coeffs.len() {
            r += self.r_coeffs[k] * xk;
            psi += self.psi_coeffs[k] * xk;
            if k > 0 {
                let w = -(k as f64) * xk * x;
                dr += self.r_coeffs[k] * w;
                dpsi += self.psi_coeffs[k] * w;
            }
            xk *= x;
        }
        (State::new(r, psi), [dr, dpsi])
    }

    pub fn evaluate(&self, tau: f64) -> Result<State> {
        check_tau(tau)?;
        Ok(self.jet(tau).0)
    }

    /// Defect of the truncation in the primary equations:
    /// `(dr/dτ − rhs_r, dψ/dτ − rhs_ψ)`.
    pub fn residual(&self, tau: f64) -> Result<[f64; 2]> {
        check_tau(tau)?;
        let (s, d) = self.jet(tau);
        let (sin, cos) = s.psi.sin_cos();
        let f = [s.r * sin - self.gamma * s.r, s.r - self.lambda * tau + cos];
        Ok([d[0] - f[0], d[1] - f[1]])
    }

    pub fn residual_norm(&self, tau: f64) -> Result<f64> {
        let [a, b] = self.residual(tau)?;
        Ok(a.hypot(b))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(invalid("tau", format!("series needs τ > 0, got {tau}")))
    }
}

pub fn evaluate(e: &AsymptoticExpansion, tau: f64) -> Result<State> {
    e.evaluate(tau)
}

pub fn residual(e: &AsymptoticExpansion, tau: f64) -> Result<[f64; 2]> {
    e.residual(tau)
}

/// The truncated series used directly as a (crude) captured solution.
/// Derivatives come from the primary field, not the series, so the error
/// system sees a consistent reference. Not evaluated below τ = 1.
pub struct SeriesReference {
    pub expansion: AsymptoticExpansion,
    pub params: SystemParams,
}

impl CapturedSolution for SeriesReference {
    fn domain(&self) -> (f64, f64) {
        (1.0, f64::INFINITY)
    }

    fn point(&self, tau: f64) -> Result<RefPoint> {
        if !(tau >= 1.0) {
            return Err(Error::OutsideDomain {
                tau,
                min: 1.0,
                max: f64::INFINITY,
            });
        }
        let s = self.expansion.evaluate(tau)?;
        let d = rhs_primary(s, tau, &self.params);
        Ok(RefPoint {
            r: s.r,
            psi: s.psi,
            dr: d[0],
            dpsi: d[1],
        })
    }
}

/// Least-squares slope of `log|residual|` against `log τ` on `samples`
/// geometric points in `[lo, hi]`.
pub fn residual_slope(e: &AsymptoticExpansion, lo: f64, hi: f64, samples: usize) -> Result<f64> {
    let mut xs = Vec::with_capacity(samples);
    let mut ys = Vec::with_capacity(samples);
    for i in 0..samples {
        let tau = lo * (hi / lo).powf(i as f64 / (samples - 1) as f64);
        xs.push(tau.ln());
        ys.push(e.residual_norm(tau)?.ln());
    }
    Ok(crate::stats::ols_slope(&xs, &ys).slope)
}
