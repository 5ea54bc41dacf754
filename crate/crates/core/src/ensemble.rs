//! Monte Carlo engine for the perturbed system: deviation probabilities,
//! first-exit times from the deviation tube, capture fractions and the
//! supermartingale check of the Lyapunov chain.
//!
//! Paths are independent tasks run on a dedicated rayon pool; results are
//! collected in path-index order, so every aggregate is bit-identical for any
//! thread count.

use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::integrators::{
    default_dt, run_sde, step_count, AutoresonanceSde, NoiseStream, ReferenceConfig, ReferenceSolution, SdeScheme,
    Trajectory,
};
use crate::lyapunov::{chain_u, lyapunov_jet, noise_class_check, ChainParams, ClassCheck, StabilityCertificate, U_SCALE};
use crate::model::{CapturedSolution, ErrorState, NoiseSchedule, State, SystemParams};
use crate::stats::{bootstrap_median, mean_se, ols_slope, quantile_sorted, wilson, Interval};

/// Minimum ensemble size for any probability estimate.
pub const MIN_PATHS: usize = 100;

/// Offsets the initial-state sampler's seed from the noise seed.
const INITIAL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// Fixed `(r, ψ)` at `tau0`.
    Point { r: f64, psi: f64 },
    /// Uniform in the disk of the given radius around the reference at `tau0`.
    ReferenceBall { radius: f64 },
    /// Reference at `tau0` shifted by `(R, Ψ)`.
    ReferenceOffset { amp: f64, phase: f64 },
}

fn default_true() -> bool {
    true
}

fn default_max_steps() -> usize {
    200_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub params: SystemParams,
    pub noise: NoiseSchedule,
    pub initial: InitialState,
    pub tau0: f64,
    /// Run length `T`; paths cover `[tau0, tau0 + T]`.
    pub horizon: f64,
    /// Step size; the default rule applies when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    pub paths: usize,
    pub master_seed: u64,
    /// Tube half-width for `|Ψ|` and `τ^{-1/2}|R|`.
    pub eps1: f64,
    #[serde(default)]
    pub scheme: SdeScheme,
    /// Track deviations from the captured solution. Requires the reference
    /// to cover `tau0`, which rules out runs that start near τ = 0.
    #[serde(default = "default_true")]
    pub deviation: bool,
    #[serde(default)]
    pub reference: ReferenceConfig,
    /// Stop each path at its first exit from the tube.
    #[serde(default)]
    pub stop_at_exit: bool,
    /// Run even though the schedules fail the class check.
    #[serde(default)]
    pub out_of_class: bool,
    #[serde(default = "default_max_steps")]
    pub max_steps_per_path: usize,
}

impl EnsembleConfig {
    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or_else(|| default_dt(self.noise.mu))
    }

    pub fn tau_end(&self) -> f64 {
        self.tau0 + self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.paths < MIN_PATHS {
            return Err(invalid("paths", format!("need at least {MIN_PATHS} paths, got {}", self.paths)));
        }
        if !(self.tau0 >= 0.0 && self.tau0.is_finite()) {
            return Err(invalid("tau0", "must be finite and ≥ 0"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", "must be > 0"));
        }
        let dt = self.dt();
        if !(dt > 0.0 && dt <= self.horizon) {
            return Err(invalid("dt", format!("must lie in (0, horizon], got {dt}")));
        }
        let steps = step_count(self.tau0, self.tau_end(), dt);
        if steps > self.max_steps_per_path {
            return Err(invalid(
                "dt",
                format!("{steps} steps per path exceed the budget of {}", self.max_steps_per_path),
            ));
        }
        if !(self.eps1 > 0.0) {
            return Err(invalid("eps1", "must be > 0"));
        }
        match self.initial {
            InitialState::Point { r, psi } if !(r.is_finite() && psi.is_finite()) => {
                return Err(invalid("initial", "point must be finite"))
            }
            InitialState::ReferenceBall { radius } if !(radius >= 0.0) => {
                return Err(invalid("initial", "radius must be ≥ 0"))
            }
            InitialState::ReferenceBall { .. } | InitialState::ReferenceOffset { .. } if !self.deviation => {
                return Err(invalid("initial", "reference-relative start needs deviation tracking"))
            }
            _ => {}
        }
        if self.deviation && self.tau0 < 1.0 {
            return Err(invalid("tau0", "deviation tracking needs tau0 ≥ 1 (reference domain)"));
        }
        if self.stop_at_exit && !self.deviation {
            return Err(invalid("stop_at_exit", "needs deviation tracking"));
        }
        Ok(())
    }

    /// Reference settings stretched to cover the run.
    pub fn reference_config(&self) -> ReferenceConfig {
        let mut rc = self.reference.clone();
        rc.tau_min = rc.tau_min.min(self.tau0);
        rc.tau_max = rc.tau_max.max(self.tau_end());
        rc.tau_seed = rc.tau_seed.max(rc.tau_min);
        rc
    }

    /// Class check gate; out-of-class runs must be declared.
    pub fn class_gate(&self) -> Result<Option<ClassCheck>> {
        let tau0 = self.tau0.max(f64::MIN_POSITIVE);
        match noise_class_check(&self.noise, tau0) {
            Ok(c) if c.admissible || self.out_of_class => Ok(Some(c)),
            Ok(c) => Err(Error::OutOfClass { bound: c.bound, h: self.noise.h }),
            Err(Error::NonPresetSchedule(_)) if self.out_of_class => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capture {
    Captured,
    Escaped,
    /// Window too short (τ_end < 50) or path stopped early.
    Indeterminate,
}

/// Shortest run the capture classifier accepts.
pub const MIN_CLASSIFY_TAU: f64 = 50.0;

/// Streaming unit-τ block means of ψ. Block averaging removes the Brownian
/// roughness that would otherwise dominate the total variation.
#[derive(Debug, Clone, Default)]
pub struct PhaseBlocks {
    start: f64,
    means: Vec<(f64, f64)>,
    current: Option<(i64, f64, usize)>,
}

impl PhaseBlocks {
    pub fn new(start: f64) -> Self {
        Self { start, ..Default::default() }
    }

    pub fn push(&mut self, t: f64, psi: f64) {
        let b = ((t - self.start).floor() as i64).max(0);
        match &mut self.current {
            Some((cb, sum, n)) if *cb == b => {
                *sum += psi;
                *n += 1;
            }
            _ => {
                self.flush();
                self.current = Some((b, psi, 1));
            }
        }
    }

    fn flush(&mut self) {
        if let Some((b, sum, n)) = self.current.take() {
            self.means.push((self.start + b as f64, sum / n as f64));
        }
    }

    /// Total variation of the block means whose block starts at or after
    /// `from`.
    pub fn variation_after(mut self, from: f64) -> f64 {
        self.flush();
        let tail: Vec<f64> = self.means.iter().filter(|(t, _)| *t >= from).map(|(_, m)| *m).collect();
        tail.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }
}

/// Capture rule: `r(τ_end) > λτ_end/2` and the total variation of ψ (unit-τ
/// block means) over the last 20% of the window stays below 2π.
pub fn classify_from_parts(
    tau_start: f64,
    tau_end: f64,
    r_end: f64,
    blocks: PhaseBlocks,
    p: &SystemParams,
) -> Capture {
    if tau_end < MIN_CLASSIFY_TAU {
        return Capture::Indeterminate;
    }
    let from = tau_end - 0.2 * (tau_end - tau_start);
    let tv = blocks.variation_after(from);
    if r_end > 0.5 * p.lambda() * tau_end && tv < std::f64::consts::TAU {
        Capture::Captured
    } else {
        Capture::Escaped
    }
}

pub fn classify_capture(t: &Trajectory, p: &SystemParams) -> Capture {
    let Some((tau_end, x_end)) = t.last() else {
        return Capture::Indeterminate;
    };
    let tau_start = t.times[0];
    let mut blocks = PhaseBlocks::new(tau_start);
    for (tau, x) in t.times.iter().zip(&t.states) {
        blocks.push(*tau, x[1]);
    }
    if t.meta.truncated {
        return Capture::Escaped;
    }
    classify_from_parts(tau_start, tau_end, x_end[0], blocks, p)
}

/// Outcome of one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub path_index: u64,
    pub r0: f64,
    pub psi0: f64,
    pub tau_end: f64,
    pub r_end: f64,
    pub psi_end: f64,
    /// `sup |ψ − ψ*|`
    pub sup_phase_dev: Option<f64>,
    /// `sup τ^{-1/2}|r − r*|`
    pub sup_amp_dev: Option<f64>,
    /// `sup |r − r*|`
    pub sup_amp_dev_raw: Option<f64>,
    /// First exit from the tube, or `None` if censored at the horizon.
    pub exit_tau: Option<f64>,
    pub exited_by_phase: bool,
    pub exited_by_amp: bool,
    pub blew_up: Option<f64>,
    pub capture: Capture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitTime {
    /// Elapsed time `τ_exit − τ0`, or the horizon when censored.
    pub time: f64,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub paths: usize,
    pub exceed_prob_psi: Option<Interval>,
    pub exceed_prob_r: Option<Interval>,
    pub exceed_prob_any: Option<Interval>,
    pub exit_times: Vec<ExitTime>,
    pub median_exit: Option<Interval>,
    pub censored: usize,
    pub capture_fraction: Interval,
    pub captured: usize,
    pub escaped: usize,
    pub indeterminate: usize,
    pub blown_up: usize,
    pub class_check: Option<ClassCheck>,
    pub out_of_class: bool,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub stats: EnsembleStats,
    pub paths: Vec<PathResult>,
}

/// Builds the reference needed by `cfg`, or `None` without deviation tracking.
pub fn build_reference(cfg: &EnsembleConfig) -> Result<Option<ReferenceSolution>> {
    if !cfg.deviation {
        return Ok(None);
    }
    ReferenceSolution::build(&cfg.params, &cfg.reference_config()).map(Some)
}

fn initial_state(cfg: &EnsembleConfig, reference: Option<&ReferenceSolution>, index: u64) -> Result<State> {
    let at = |tau: f64| -> Result<State> {
        reference
            .ok_or_else(|| invalid("initial", "reference-relative start needs deviation tracking"))?
            .state(tau)
    };
    Ok(match cfg.initial {
        InitialState::Point { r, psi } => State::new(r, psi),
        InitialState::ReferenceOffset { amp, phase } => {
            let s = at(cfg.tau0)?;
            State::new(s.r + amp, s.psi + phase)
        }
        InitialState::ReferenceBall { radius } => {
            let s = at(cfg.tau0)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed ^ INITIAL_SEED_SALT);
            rng.set_stream(index);
            let rad = radius * rng.random::<f64>().sqrt();
            let ang = std::f64::consts::TAU * rng.random::<f64>();
            State::new(s.r + rad * ang.cos(), s.psi + rad * ang.sin())
        }
    })
}

/// Integrates path `index` of the ensemble.
pub fn run_path(cfg: &EnsembleConfig, reference: Option<&ReferenceSolution>, index: u64) -> Result<PathResult> {
    let x0 = initial_state(cfg, reference, index)?;
    let sys = AutoresonanceSde { params: &cfg.params, noise: &cfg.noise };
    let mut stream = NoiseStream::new(cfg.master_seed, index);
    let mut blocks = PhaseBlocks::new(cfg.tau0);
    let (mut sup_phase, mut sup_amp, mut sup_raw) = (0.0f64, 0.0f64, 0.0f64);
    let mut exit: Option<(f64, bool, bool)> = None;
    let mut lookup_err = None;
    let end = run_sde(
        &sys,
        x0.to_array(),
        cfg.tau0,
        cfg.tau_end(),
        cfg.dt(),
        cfg.noise.mu,
        cfg.scheme,
        &mut stream,
        |t, x| {
            blocks.push(t, x[1]);
            if let Some(reference) = reference {
                let s = match reference.state(t) {
                    Ok(s) => s,
                    Err(e) => {
                        lookup_err = Some(e);
                        return ControlFlow::Break(());
                    }
                };
                let dphase = (x[1] - s.psi).abs();
                let draw = (x[0] - s.r).abs();
                let damp = draw / t.sqrt();
                sup_phase = sup_phase.max(dphase);
                sup_amp = sup_amp.max(damp);
                sup_raw = sup_raw.max(draw);
                if exit.is_none() && (dphase >= cfg.eps1 || damp >= cfg.eps1) {
                    exit = Some((t, dphase >= cfg.eps1, damp >= cfg.eps1));
                    if cfg.stop_at_exit {
                        return ControlFlow::Break(());
                    }
                }
            }
            ControlFlow::Continue(())
        },
    )?;
    if let Some(e) = lookup_err {
        return Err(e);
    }
    if let (Some(t), None, true) = (end.blew_up, exit, cfg.deviation) {
        exit = Some((t, true, true));
    }
    let capture = if end.blew_up.is_some() {
        Capture::Escaped
    } else if end.stopped {
        Capture::Indeterminate
    } else {
        classify_from_parts(cfg.tau0, end.t, end.x[0], blocks, &cfg.params)
    };
    let tracked = |v: f64| if cfg.deviation { Some(v) } else { None };
    Ok(PathResult {
        path_index: index,
        r0: x0.r,
        psi0: x0.psi,
        tau_end: end.t,
        r_end: end.x[0],
        psi_end: end.x[1],
        sup_phase_dev: tracked(sup_phase),
        sup_amp_dev: tracked(sup_amp),
        sup_amp_dev_raw: tracked(sup_raw),
        exit_tau: exit.map(|e| e.0),
        exited_by_phase: exit.is_some_and(|e| e.1),
        exited_by_amp: exit.is_some_and(|e| e.2),
        blew_up: end.blew_up,
        capture,
    })
}

/// Runs `f` on a pool with `threads` workers (0 = rayon default).
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid("threads", e.to_string()))?;
    Ok(pool.install(f))
}

pub fn run_ensemble(cfg: &EnsembleConfig, threads: usize) -> Result<EnsembleRun> {
    let reference = build_reference(cfg)?;
    run_ensemble_with(cfg, reference.as_ref(), threads)
}

/// As [`run_ensemble`] with a prebuilt reference covering the run.
pub fn run_ensemble_with(cfg: &EnsembleConfig, reference: Option<&ReferenceSolution>, threads: usize) -> Result<EnsembleRun> {
    cfg.validate()?;
    let class_check = cfg.class_gate()?;
    if cfg.deviation && reference.is_none() {
        return Err(invalid("deviation", "reference required"));
    }
    let paths: Vec<PathResult> = with_pool(threads, || {
        (0..cfg.paths as u64)
            .into_par_iter()
            .map(|i| run_path(cfg, reference, i))
            .collect::<Result<Vec<_>>>()
    })??;
    let stats = aggregate(cfg, &paths, class_check);
    Ok(EnsembleRun { stats, paths })
}

fn aggregate(cfg: &EnsembleConfig, paths: &[PathResult], class_check: Option<ClassCheck>) -> EnsembleStats {
    let m = paths.len();
    let count = |f: &dyn Fn(&PathResult) -> bool| paths.iter().filter(|p| f(p)).count();
    let captured = count(&|p| p.capture == Capture::Captured);
    let escaped = count(&|p| p.capture == Capture::Escaped);
    let indeterminate = m - captured - escaped;
    let blown_up = count(&|p| p.blew_up.is_some());

    let (mut exceed_psi, mut exceed_r, mut exceed_any) = (None, None, None);
    let mut exit_times = Vec::new();
    let mut median_exit = None;
    let mut censored = 0;
    if cfg.deviation {
        exceed_psi = Some(wilson(count(&|p| p.exited_by_phase), m));
        exceed_r = Some(wilson(count(&|p| p.exited_by_amp), m));
        exceed_any = Some(wilson(count(&|p| p.exit_tau.is_some()), m));
        exit_times = paths
            .iter()
            .map(|p| match p.exit_tau {
                Some(t) => ExitTime { time: t - cfg.tau0, censored: false },
                None => ExitTime { time: cfg.horizon, censored: true },
            })
            .collect();
        censored = exit_times.iter().filter(|e| e.censored).count();
        let xs: Vec<f64> = exit_times.iter().map(|e| e.time).collect();
        median_exit = Some(bootstrap_median(&xs, 1000, cfg.master_seed));
    }
    EnsembleStats {
        paths: m,
        exceed_prob_psi: exceed_psi,
        exceed_prob_r: exceed_r,
        exceed_prob_any: exceed_any,
        exit_times,
        median_exit,
        censored,
        capture_fraction: wilson(captured, captured + escaped),
        captured,
        escaped,
        indeterminate,
        blown_up,
        class_check,
        out_of_class: cfg.out_of_class,
    }
}

/// Exit-time scaling across noise amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub mus: Vec<f64>,
    pub medians: Vec<Interval>,
    pub censored_fraction: Vec<f64>,
    pub slope: f64,
    /// Percentile bootstrap (1000 resamples) of the slope.
    pub slope_interval: (f64, f64),
    /// One-sided property: slope ≤ −1.
    pub slope_at_most_minus_one: bool,
}

/// Fits `log median exit time` against `log μ`. All configs must agree on
/// everything except `noise.mu`.
pub fn exit_time_scaling(cfgs: &[EnsembleConfig], threads: usize, bootstrap_seed: u64) -> Result<ScalingReport> {
    if cfgs.len() < 3 {
        return Err(invalid("mu_list", "need at least 3 noise amplitudes"));
    }
    let base = &cfgs[0];
    for c in cfgs {
        let mut probe = c.clone();
        probe.noise.mu = base.noise.mu;
        probe.dt = base.dt;
        if probe != *base {
            return Err(invalid("mu_list", "configs may differ only in mu (and dt)"));
        }
    }
    let reference = build_reference(base)?;
    let mut samples = Vec::new();
    for c in cfgs {
        let run = run_ensemble_with(c, reference.as_ref(), threads)?;
        samples.push(run.stats.exit_times.iter().map(|e| e.time).collect::<Vec<f64>>());
    }
    let censored_fraction: Vec<f64> = cfgs
        .iter()
        .zip(&samples)
        .map(|(c, xs)| xs.iter().filter(|&&t| t >= c.horizon).count() as f64 / xs.len() as f64)
        .collect();
    if censored_fraction.iter().all(|&f| f > 0.5) {
        return Err(Error::TooManyCensored);
    }
    let mus: Vec<f64> = cfgs.iter().map(|c| c.noise.mu).collect();
    let lx: Vec<f64> = mus.iter().map(|m| m.ln()).collect();
    let medians: Vec<Interval> = samples
        .iter()
        .enumerate()
        .map(|(i, xs)| bootstrap_median(xs, 1000, bootstrap_seed.wrapping_add(i as u64)))
        .collect();
    let ly: Vec<f64> = medians.iter().map(|m| m.estimate.ln()).collect();
    let slope = ols_slope(&lx, &ly).slope;

    let mut rng = ChaCha8Rng::seed_from_u64(bootstrap_seed);
    let mut slopes = Vec::with_capacity(1000);
    let mut buf = Vec::new();
    for _ in 0..1000 {
        let ys: Vec<f64> = samples
            .iter()
            .map(|xs| {
                buf.clear();
                buf.extend((0..xs.len()).map(|_| xs[rng.random_range(0..xs.len())]));
                crate::stats::median(&buf).ln()
            })
            .collect();
        slopes.push(ols_slope(&lx, &ys).slope);
    }
    slopes.sort_by(f64::total_cmp);
    Ok(ScalingReport {
        mus,
        medians,
        censored_fraction,
        slope,
        slope_interval: (quantile_sorted(&slopes, 0.025), quantile_sorted(&slopes, 0.975)),
        slope_at_most_minus_one: slope <= -1.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub c: f64,
    pub fraction: f64,
    pub bound: f64,
    pub standard_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermartingaleReport {
    pub order: usize,
    /// Radius of the stopping tube in `(R, Ψ)`.
    pub tube: f64,
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Per consecutive pair: `mean[k+1] ≤ mean[k] + 2·SE` (combined).
    pub band_pass: Vec<bool>,
    pub ladder: Vec<LadderRung>,
    /// Paths whose sampled chain value never increased.
    pub pathwise_nonincreasing: usize,
    pub stopped_paths: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupermartingaleOptions {
    pub order: usize,
    /// Number of sampling intervals on `[τ0, τ0 + T]`.
    pub grid: usize,
    /// Doob levels as multiples of the mean starting value.
    pub ladder: Vec<f64>,
}

impl Default for SupermartingaleOptions {
    fn default() -> Self {
        Self { order: 1, grid: 20, ladder: vec![1.0, 2.0, 4.0] }
    }
}

/// Evaluates the chain `U_N` along paths stopped at their first exit from
/// the tube `|z| < min(eps1, d0)` and checks the supermartingale property and
/// Doob's maximal inequality empirically. The horizon `T` of the chain is the
/// run length `cfg.horizon`.
pub fn supermartingale_check(
    cfg: &EnsembleConfig,
    cert: &StabilityCertificate,
    opts: &SupermartingaleOptions,
    threads: usize,
) -> Result<SupermartingaleReport> {
    cfg.validate()?;
    cfg.class_gate()?;
    if !cfg.deviation {
        return Err(invalid("deviation", "supermartingale check needs deviation tracking"));
    }
    if opts.order == 0 || opts.grid == 0 {
        return Err(invalid("order", "order and grid must be ≥ 1"));
    }
    if cfg.tau0 < cert.tau0 {
        return Err(invalid("tau0", format!("must be at least the certified τ0 = {}", cert.tau0)));
    }
    let reference = build_reference(cfg)?.expect("deviation tracking builds a reference");
    let tube = cfg.eps1.min(cert.d0);
    let chain = ChainParams {
        order: opts.order,
        mu: cfg.noise.mu,
        h: cfg.noise.h,
        dim: 2,
        b: cert.B,
        c: cert.C,
        q: cert.q,
        horizon: cfg.horizon,
        t0: cfg.tau0,
    };
    let dt = cfg.dt();
    let total = step_count(cfg.tau0, cfg.tau_end(), dt);
    let sample_steps: Vec<usize> = (0..=opts.grid).map(|k| (k * total) / opts.grid).collect();
    let times: Vec<f64> = sample_steps
        .iter()
        .map(|&s| if s == total { cfg.tau_end() } else { cfg.tau0 + s as f64 * dt })
        .collect();

    struct PathChain {
        samples: Vec<f64>,
        sup: f64,
        stopped: bool,
    }

    let per_path: Vec<PathChain> = with_pool(threads, || {
        (0..cfg.paths as u64)
            .into_par_iter()
            .map(|i| -> Result<PathChain> {
                let x0 = initial_state(cfg, Some(&reference), i)?;
                let sys = AutoresonanceSde { params: &cfg.params, noise: &cfg.noise };
                let mut stream = NoiseStream::new(cfg.master_seed, i);
                let mut samples = Vec::with_capacity(opts.grid + 1);
                let mut sup = 0.0f64;
                let mut step = 0usize;
                let mut frozen: Option<f64> = None;
                let mut err = None;
                run_sde(&sys, x0.to_array(), cfg.tau0, cfg.tau_end(), dt, cfg.noise.mu, cfg.scheme, &mut stream, |t, x| {
                    let at = match reference.point(t) {
                        Ok(a) => a,
                        Err(e) => {
                            err = Some(e);
                            return ControlFlow::Break(());
                        }
                    };
                    let e = ErrorState::new(x[0] - at.r, x[1] - at.psi);
                    let u = U_SCALE * lyapunov_jet(e, t, &at, &cfg.params).value;
                    let value = chain_u(&chain, u, t);
                    sup = sup.max(value);
                    if e.norm() >= tube {
                        frozen = Some(value);
                        return ControlFlow::Break(());
                    }
                    if sample_steps.get(samples.len()) == Some(&step) {
                        samples.push(value);
                    }
                    step += 1;
                    ControlFlow::Continue(())
                })?;
                if let Some(e) = err {
                    return Err(e);
                }
                // The stopped process keeps its exit value.
                let last = frozen.or(samples.last().copied()).unwrap_or(f64::NAN);
                let stopped = frozen.is_some();
                samples.resize(opts.grid + 1, last);
                Ok(PathChain { samples, sup, stopped })
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut means = Vec::with_capacity(times.len());
    let mut ses = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let col: Vec<f64> = per_path.iter().map(|p| p.samples[k]).collect();
        let (m, se) = mean_se(&col);
        means.push(m);
        ses.push(se);
    }
    let band_pass: Vec<bool> = (1..times.len())
        .map(|k| means[k] <= means[k - 1] + 2.0 * (ses[k].powi(2) + ses[k - 1].powi(2)).sqrt())
        .collect();
    let m = per_path.len() as f64;
    let ladder: Vec<LadderRung> = opts
        .ladder
        .iter()
        .map(|&mult| {
            let c = mult * means[0];
            let fraction = per_path.iter().filter(|p| p.sup >= c).count() as f64 / m;
            let bound = (means[0] / c).min(1.0);
            let standard_error = (bound * (1.0 - bound) / m).sqrt();
            LadderRung { c, fraction, bound, standard_error, pass: fraction <= bound + 3.0 * standard_error }
        })
        .collect();
    let pathwise_nonincreasing = per_path
        .iter()
        .filter(|p| p.samples.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)))
        .count();
    let pass = band_pass.iter().all(|b| *b) && ladder.iter().all(|r| r.pass);
    Ok(SupermartingaleReport {
        order: opts.order,
        tube,
        times,
        means,
        standard_errors: ses,
        band_pass,
        ladder,
        pathwise_nonincreasing,
        stopped_paths: per_path.iter().filter(|p| p.stopped).count(),
        pass,
    })
}

/// Sample path of the perturbed system in `(r, ψ)`, recorded every
/// `stride` steps.
pub fn sample_path(
    params: &SystemParams,
    noise: &NoiseSchedule,
    x0: State,
    tau0: f64,
    tau1: f64,
    dt: f64,
    seed: u64,
    path_index: u64,
    stride: usize,
) -> Result<Trajectory> {
    use crate::integrators::{integrate_sde, TrajectoryMeta, STATE_COLUMNS};
    let sys = AutoresonanceSde { params, noise };
    let meta = TrajectoryMeta::stochastic(SdeScheme::EulerMaruyama.name(), dt, seed, path_index, STATE_COLUMNS);
    integrate_sde(
        &sys,
        x0.to_array(),
        tau0,
        tau1,
        dt,
        noise.mu,
        SdeScheme::EulerMaruyama,
        &mut NoiseStream::new(seed, path_index),
        stride,
        meta,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::{TrajectoryMeta, STATE_COLUMNS};

    fn p() -> SystemParams {
        SystemParams::new(1.0, 0.1).unwrap()
    }

    fn synthetic(r: impl Fn(f64) -> f64, psi: impl Fn(f64) -> f64, t_end: f64) -> Trajectory {
        let mut t = Trajectory::new(TrajectoryMeta::deterministic("synthetic", 0.0, STATE_COLUMNS));
        let n = 2000;
        for i in 0..=n {
            let tau = t_end * i as f64 / n as f64;
            t.push(tau, [r(tau), psi(tau)]);
        }
        t
    }

    #[test]
    fn exact_profile_is_captured() {
        let nu = p().nu();
        let t = synthetic(|tau| tau + nu, |_| 3.0414, 100.0);
        assert_eq!(classify_capture(&t, &p()), Capture::Captured);
    }

    #[test]
    fn slipping_phase_escapes() {
        let t = synthetic(|tau| 1.5 + 0.5 * tau.sin(), |tau| -10.0 * std::f64::consts::PI * tau / 100.0, 100.0);
        assert_eq!(classify_capture(&t, &p()), Capture::Escaped);
    }

    #[test]
    fn short_window_is_indeterminate() {
        let t = synthetic(|tau| tau + 1.0, |_| 3.0, 40.0);
        assert_eq!(classify_capture(&t, &p()), Capture::Indeterminate);
    }

    #[test]
    fn classifier_thresholds_are_not_knife_edge() {
        // Growing amplitude with a slow phase drift of 1.5π over the tail:
        // captured; with 3π: escaped.
        for (drift, expect) in [(1.5, Capture::Captured), (3.0, Capture::Escaped)] {
            let t = synthetic(
                |tau| tau,
                |tau| if tau > 80.0 { 3.0 - drift * std::f64::consts::PI * (tau - 80.0) / 20.0 } else { 3.0 },
                100.0,
            );
            assert_eq!(classify_capture(&t, &p()), expect, "drift {drift}π");
        }
    }

    #[test]
    fn config_validation() {
        let cfg = EnsembleConfig {
            params: p(),
            noise: NoiseSchedule::additive_phase(0.1).unwrap(),
            initial: InitialState::Point { r: 1.09, psi: 2.15 },
            tau0: 0.0,
            horizon: 60.0,
            dt: None,
            paths: 50,
            master_seed: 1,
            eps1: 0.5,
            scheme: SdeScheme::EulerMaruyama,
            deviation: false,
            reference: ReferenceConfig::default(),
            stop_at_exit: false,
            out_of_class: false,
            max_steps_per_path: 1000,
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("paths"), "{err}");
        let cfg = EnsembleConfig { paths: 100, ..cfg };
        assert!(cfg.validate().unwrap_err().to_string().contains("budget"));
        let cfg = EnsembleConfig { max_steps_per_path: 100_000, ..cfg };
        cfg.validate().unwrap();
        let bad = EnsembleConfig { deviation: true, ..cfg.clone() };
        assert!(bad.validate().is_err());
        let json = serde_json::to_string(&cfg).unwrap();
        let back: EnsembleConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        let extra = json.replacen('{', "{\"bogus\":1,", 1);
        assert!(serde_json::from_str::<EnsembleConfig>(&extra).is_err());
    }

    #[test]
    fn out_of_class_gate() {
        let mut cfg = EnsembleConfig {
            params: p(),
            noise: NoiseSchedule::new(0.1, crate::model::Schedule::Constant(0.5), crate::model::Schedule::Constant(0.0), 1.0)
                .unwrap(),
            initial: InitialState::Point { r: 1.0, psi: 2.0 },
            tau0: 0.0,
            horizon: 1.0,
            dt: None,
            paths: 100,
            master_seed: 1,
            eps1: 0.5,
            scheme: SdeScheme::EulerMaruyama,
            deviation: false,
            reference: ReferenceConfig::default(),
            stop_at_exit: false,
            out_of_class: false,
            max_steps_per_path: default_max_steps(),
        };
        assert!(matches!(cfg.class_gate(), Err(Error::OutOfClass { .. })));
        cfg.out_of_class = true;
        assert!(cfg.class_gate().unwrap().is_some());
    }
}
