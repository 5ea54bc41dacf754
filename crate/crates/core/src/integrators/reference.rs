//! The captured solution `(r*, ψ*)` as a tabulated numerical trajectory.
//!
//! The truncated series is accurate only for large τ, so it is used as a
//! seed at `tau_seed` and the primary flow is integrated backward to
//! `tau_min` and forward to `tau_max` at tight tolerance. Values are stored on
//! a uniform grid and interpolated with cubic Hermite polynomials built from
//! the node values and the field at the nodes.

use serde::{Deserialize, Serialize};

use super::dopri5::{integrate_ode, OdeOptions};
use crate::asymptotics::{expand, AsymptoticExpansion, Branch};
use crate::error::{invalid, Error, Result};
use crate::model::{rhs_primary, CapturedSolution, RefPoint, State, SystemParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub branch: Branch,
    /// Series order used for the seed.
    pub order: usize,
    pub tau_seed: f64,
    /// Relative and absolute integration tolerance.
    pub tol: f64,
    /// Largest acceptable series residual at the seed.
    pub seed_residual_tol: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub grid_step: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            branch: Branch::Stable,
            order: 3,
            tau_seed: 100.0,
            tol: 1e-12,
            seed_residual_tol: 1e-5,
            tau_min: 5.0,
            tau_max: 200.0,
            grid_step: 0.01,
        }
    }
}

impl ReferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min >= 1.0) {
            return Err(invalid("tau_min", "series is never evaluated below τ = 1"));
        }
        if !(self.tau_max > self.tau_min) {
            return Err(invalid("tau_max", "must exceed tau_min"));
        }
        if !(self.tau_seed >= self.tau_min) {
            return Err(invalid("tau_seed", "must be at least tau_min"));
        }
        if !(self.tol > 0.0 && self.seed_residual_tol > 0.0) {
            return Err(invalid("tol", "tolerances must be > 0"));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 0.1) {
            return Err(invalid("grid_step", "must lie in (0, 0.1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    params: SystemParams,
    config: ReferenceConfig,
    expansion: AsymptoticExpansion,
    step: f64,
    nodes: Vec<[f64; 2]>,
    slopes: Vec<[f64; 2]>,
}

/// Phase departure from ψ0 beyond which the backward run is declared lost.
const BACKWARD_PHASE_LIMIT: f64 = 1.0;

impl ReferenceSolution {
    pub fn build(params: &SystemParams, config: &ReferenceConfig) -> Result<Self> {
        config.validate()?;
        let expansion = expand(params, config.branch, config.order)?;
        let seed = expansion.evaluate(config.tau_seed)?;
        let residual = expansion.residual_norm(config.tau_seed)?;
        if !(residual <= config.seed_residual_tol) {
            return Err(Error::SeedResidual {
                tau_seed: config.tau_seed,
                residual,
                tolerance: config.seed_residual_tol,
            });
        }

        let n = ((config.tau_max - config.tau_min) / config.grid_step).round().max(1.0) as usize;
        let step = (config.tau_max - config.tau_min) / n as f64;
        let grid: Vec<f64> = (0..=n).map(|i| node_time(config.tau_min, step, i, n, config.tau_max)).collect();
        let split = grid.partition_point(|&t| t <= config.tau_seed);

        let opts = OdeOptions::with_tol(config.tol);
        let field = |t: f64, x: &[f64; 2]| rhs_primary(State::from_array(*x), t, params);

        let backward: Vec<f64> = grid[..split].iter().rev().copied().collect();
        let back = integrate_ode(field, seed.to_array(), config.tau_seed, config.tau_min, &opts, &backward)
            .map_err(|e| match e {
                Error::StepSizeUnderflow { tau, .. } | Error::NonFinite { tau } => {
                    Error::BackwardInstability { tau_reached: tau }
                }
                other => other,
            })?;
        for (t, x) in back.times.iter().zip(&back.states) {
            if !((x[1] - expansion.psi0).abs() < BACKWARD_PHASE_LIMIT && x[0] > 0.0) {
                return Err(Error::BackwardInstability { tau_reached: *t });
            }
        }

        let mut nodes: Vec<[f64; 2]> = back.states.into_iter().rev().collect();
        if split < grid.len() {
            let fwd = integrate_ode(field, seed.to_array(), config.tau_seed, config.tau_max, &opts, &grid[split..])?;
            nodes.extend(fwd.states);
        }
        debug_assert_eq!(nodes.len(), grid.len());
        let slopes = grid
            .iter()
            .zip(&nodes)
            .map(|(&t, x)| rhs_primary(State::from_array(*x), t, params))
            .collect();

        Ok(Self {
            params: *params,
            config: config.clone(),
            expansion,
            step,
            nodes,
            slopes,
        })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn config(&self) -> &ReferenceConfig {
        &self.config
    }

    pub fn expansion(&self) -> &AsymptoticExpansion {
        &self.expansion
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize) -> (f64, State) {
        let t = node_time(self.config.tau_min, self.step, i, self.nodes.len() - 1, self.config.tau_max);
        (t, State::from_array(self.nodes[i]))
    }

    /// Interpolated `(r*, ψ*)`; exact at nodes.
    pub fn state(&self, tau: f64) -> Result<State> {
        let (lo, hi) = self.domain();
        if !(tau >= lo && tau <= hi) {
            return Err(Error::OutsideDomain { tau, min: lo, max: hi });
        }
        let pos = (tau - lo) / self.step;
        let last = self.nodes.len() - 1;
        // Snap to a node when τ is one up to rounding in the position.
        let nearest = pos.round();
        if (pos - nearest).abs() < 1e-12 {
            return Ok(State::from_array(self.nodes[(nearest as usize).min(last)]));
        }
        let i = (pos.floor() as usize).min(last - 1);
        let t0 = self.node(i).0;
        let th = (tau - t0) / self.step;
        let (y0, y1) = (self.nodes[i], self.nodes[i + 1]);
        let (m0, m1) = (self.slopes[i], self.slopes[i + 1]);
        let th2 = th * th;
        let th3 = th2 * th;
        let h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
        let h10 = th3 - 2.0 * th2 + th;
        let h01 = -2.0 * th3 + 3.0 * th2;
        let h11 = th3 - th2;
        let v: [f64; 2] = std::array::from_fn(|k| {
            h00 * y0[k] + h10 * self.step * m0[k] + h01 * y1[k] + h11 * self.step * m1[k]
        });
        Ok(State::from_array(v))
    }
}

fn node_time(lo: f64, step: f64, i: usize, n: usize, hi: f64) -> f64 {
    if i == n {
        hi
    } else {
        lo + i as f64 * step
    }
}

impl CapturedSolution for ReferenceSolution {
    fn domain(&self) -> (f64, f64) {
        (self.config.tau_min, self.config.tau_max)
    }

    /// Derivatives come from the primary field at the interpolated state.
    fn point(&self, tau: f64) -> Result<RefPoint> {
        let s = self.state(tau)?;
        let d = rhs_primary(s, tau, &self.params);
        Ok(RefPoint { r: s.r, psi: s.psi, dr: d[0], dpsi: d[1] })
    }
}

/// Builds a reference on `[5, 200]` with the given seed settings.
pub fn reference_solution(params: &SystemParams, order: usize, tau_seed: f64, tol: f64) -> Result<ReferenceSolution> {
    ReferenceSolution::build(
        params,
        &ReferenceConfig {
            order,
            tau_seed,
            tol,
            ..ReferenceConfig::default()
        },
    )
}
