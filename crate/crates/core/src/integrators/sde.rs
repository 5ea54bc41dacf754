//! Fixed-step Itô integration with two Wiener channels.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::noise::IncrementSource;
use super::trajectory::{Trajectory, TrajectoryMeta};
use crate::error::{invalid, Result};
use crate::model::{diffusion_matrix, rhs_primary, NoiseSchedule, State, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeScheme {
    #[default]
    EulerMaruyama,
    /// Euler–Maruyama plus the per-channel Milstein terms
    /// `½ μ² (G_j·∇)G_j (ΔW_j² − dt)`. Cross-channel (Lévy area) terms are
    /// not simulated, so strong order 1 holds only when one channel is active.
    Milstein,
}

impl SdeScheme {
    pub fn name(self) -> &'static str {
        match self {
            SdeScheme::EulerMaruyama => "euler-maruyama",
            SdeScheme::Milstein => "milstein",
        }
    }
}

/// Itô system `dx = f(t, x) dt + μ G(t, x) dW` with `W` two-dimensional.
pub trait SdeSystem<const N: usize> {
    fn drift(&self, t: f64, x: &[f64; N]) -> [f64; N];

    /// Rows index state components, columns index the channels `w1`, `w2`.
    fn diffusion(&self, t: f64, x: &[f64; N]) -> [[f64; 2]; N];

    /// `out[i][j][k] = ∂G_ij/∂x_k`; needed only by the Milstein scheme.
    fn diffusion_jacobian(&self, _t: f64, _x: &[f64; N]) -> Option<[[[f64; N]; 2]; N]> {
        None
    }
}

/// Closure-backed system.
pub struct FnSde<F, G> {
    pub drift: F,
    pub diffusion: G,
}

impl<const N: usize, F, G> SdeSystem<N> for FnSde<F, G>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    G: Fn(f64, &[f64; N]) -> [[f64; 2]; N],
{
    fn drift(&self, t: f64, x: &[f64; N]) -> [f64; N] {
        (self.drift)(t, x)
    }

    fn diffusion(&self, t: f64, x: &[f64; N]) -> [[f64; 2]; N] {
        (self.diffusion)(t, x)
    }
}

/// The perturbed autoresonance system in `(r, ψ)`.
pub struct AutoresonanceSde<'a> {
    pub params: &'a SystemParams,
    pub noise: &'a NoiseSchedule,
}

impl SdeSystem<2> for AutoresonanceSde<'_> {
    fn drift(&self, t: f64, x: &[f64; 2]) -> [f64; 2] {
        rhs_primary(State::from_array(*x), t, self.params)
    }

    fn diffusion(&self, t: f64, x: &[f64; 2]) -> [[f64; 2]; 2] {
        diffusion_matrix(State::from_array(*x), t, self.noise)
    }

    fn diffusion_jacobian(&self, t: f64, x: &[f64; 2]) -> Option<[[[f64; 2]; 2]; 2]> {
        let s1 = self.noise.sigma1.eval(t);
        let (sin, cos) = x[1].sin_cos();
        // G is state-independent in the second channel.
        Some([
            [[s1 * sin, s1 * x[0] * cos], [0.0, 0.0]],
            [[0.0, -s1 * sin], [0.0, 0.0]],
        ])
    }
}

/// How a fixed-step run ended.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeEnd<const N: usize> {
    /// Time of the last finite state.
    pub t: f64,
    pub x: [f64; N],
    pub steps: usize,
    /// First time a non-finite state appeared.
    pub blew_up: Option<f64>,
    /// The observer asked to stop.
    pub stopped: bool,
}

/// Number of steps for `[t0, t1]` at nominal step `dt`; the last one may be
/// partial.
pub fn step_count(t0: f64, t1: f64, dt: f64) -> usize {
    (((t1 - t0) / dt) - 1e-9).ceil().max(0.0) as usize
}

/// Runs one path. The observer sees the initial point and every step; the
/// endpoint `t1` is hit exactly. Increments are drawn `w1` then `w2` on every
/// step (also when `μ = 0`) so that stream positions never depend on `μ`.
#[allow(clippy::too_many_arguments)]
pub fn run_sde<const N: usize, S, I, O>(
    sys: &S,
    x0: [f64; N],
    t0: f64,
    t1: f64,
    dt: f64,
    mu: f64,
    scheme: SdeScheme,
    increments: &mut I,
    mut observer: O,
) -> Result<SdeEnd<N>>
where
    S: SdeSystem<N>,
    I: IncrementSource + ?Sized,
    O: FnMut(f64, &[f64; N]) -> ControlFlow<()>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("must be > 0, got {dt}")));
    }
    if !(t1 >= t0) {
        return Err(invalid("tau", "SDE integration runs forward only"));
    }
    let n = step_count(t0, t1, dt);
    let mut x = x0;
    let mut end = SdeEnd { t: t0, x, steps: 0, blew_up: None, stopped: false };
    if observer(t0, &x).is_break() {
        end.stopped = true;
        return Ok(end);
    }
    for k in 0..n {
        let ta = t0 + k as f64 * dt;
        let tb = if k + 1 == n { t1 } else { t0 + (k + 1) as f64 * dt };
        let h = tb - ta;
        let dw = increments.next_pair(h);
        let f = sys.drift(ta, &x);
        let g = sys.diffusion(ta, &x);
        let mut next: [f64; N] =
            std::array::from_fn(|i| x[i] + f[i] * h + mu * (g[i][0] * dw[0] + g[i][1] * dw[1]));
        if scheme == SdeScheme::Milstein {
            if let Some(dg) = sys.diffusion_jacobian(ta, &x) {
                for (i, xi) in next.iter_mut().enumerate() {
                    for j in 0..2 {
                        let lg: f64 = (0..N).map(|k| g[k][j] * dg[i][j][k]).sum();
                        *xi += 0.5 * mu * mu * lg * (dw[j] * dw[j] - h);
                    }
                }
            }
        }
        end.steps = k + 1;
        if next.iter().any(|v| !v.is_finite()) {
            end.blew_up = Some(tb);
            return Ok(end);
        }
        x = next;
        end.t = tb;
        end.x = x;
        if observer(tb, &x).is_break() {
            end.stopped = true;
            return Ok(end);
        }
    }
    Ok(end)
}

/// Runs one 2-D path and records every `stride`-th step plus the endpoint.
#[allow(clippy::too_many_arguments)]
pub fn integrate_sde<S, I>(
    sys: &S,
    x0: [f64; 2],
    t0: f64,
    t1: f64,
    dt: f64,
    mu: f64,
    scheme: SdeScheme,
    increments: &mut I,
    stride: usize,
    meta: TrajectoryMeta,
) -> Result<Trajectory>
where
    S: SdeSystem<2>,
    I: IncrementSource + ?Sized,
{
    let stride = stride.max(1);
    let mut traj = Trajectory::new(meta);
    let mut count = 0usize;
    let n = step_count(t0, t1, dt);
    let end = run_sde(sys, x0, t0, t1, dt, mu, scheme, increments, |t, x| {
        if count % stride == 0 || count == n {
            traj.push(t, *x);
        }
        count += 1;
        ControlFlow::Continue(())
    })?;
    if end.blew_up.is_some() {
        traj.meta.truncated = true;
        if traj.last().map(|(t, _)| t) != Some(end.t) {
            traj.push(end.t, end.x);
        }
    }
    Ok(traj)
}

/// Default step: 1e-3 for μ ≥ 0.05, otherwise `min(1e-3, μ²/10)`.
pub fn default_dt(mu: f64) -> f64 {
    if mu >= 0.05 || mu == 0.0 {
        1e-3
    } else {
        (mu * mu / 10.0).min(1e-3)
    }
}
