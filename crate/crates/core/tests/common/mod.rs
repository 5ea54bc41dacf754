//! Oracles shared by the integration tests.
#![allow(dead_code)]

use autores::integrators::{integrate_ode, OdeOptions};
use autores::model::SystemParams;
use nalgebra::{DMatrix, DVector};

pub fn params() -> SystemParams {
    SystemParams::new(1.0, 0.1).unwrap()
}

/// Least-squares solution of `A c = y` via SVD.
pub fn lstsq(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let a = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    let b = DVector::from_column_slice(y);
    a.svd(true, true).solve(&b, 1e-15).unwrap().iter().copied().collect()
}

/// Long forward run of the primary system written for `ρ = r − λτ` and
/// `φ = ψ − ψ0`, so the state stays small and `sin ψ − γ` is formed without
/// cancellation. Returns samples `(τ, ρ, ψ)`.
pub fn offset_trajectory(p: &SystemParams, rho0: f64, psi0: f64, t0: f64, samples: &[f64], tol: f64) -> Vec<(f64, f64, f64)> {
    let (l, g) = (p.lambda(), p.gamma());
    let base = std::f64::consts::PI - g.asin();
    let field = move |t: f64, x: &[f64; 2]| {
        let r = x[0] + l * t;
        let sin_minus_gamma = 2.0 * (base + 0.5 * x[1]).cos() * (0.5 * x[1]).sin();
        [r * sin_minus_gamma - l, x[0] + (base + x[1]).cos()]
    };
    let opts = OdeOptions { max_steps: 50_000_000, ..OdeOptions::with_tol(tol) };
    let sol = integrate_ode(field, [rho0, psi0 - base], t0, *samples.last().unwrap(), &opts, samples).unwrap();
    sol.times.iter().zip(&sol.states).map(|(t, x)| (*t, x[0], base + x[1])).collect()
}
