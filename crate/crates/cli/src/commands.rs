//! One function per subcommand. Each resolves its config, writes outputs
//! into the run directory and returns the resolved config for the manifest.

use std::fmt::Write as _;

use autores::asymptotics::{expand, residual_slope, Branch};
use autores::ensemble::{
    classify_capture, exit_time_scaling, run_ensemble, Capture, EnsembleConfig, PathResult,
};
use autores::integrators::{
    default_dt, fmt17, integrate_ode, integrate_sde, AutoresonanceSde, NoiseStream, OdeOptions, ReferenceConfig,
    ReferenceSolution, SdeScheme, Trajectory, TrajectoryMeta, STATE_COLUMNS,
};
use autores::lyapunov::{certify, noise_class_check, thresholds, thresholds_beta, CertifyConfig, ThresholdInputs};
use autores::model::{rhs_primary, NoiseSchedule, State, SystemParams};
use autores::pendulum::{
    averaged_trajectory, envelope_compare, integrate_pendulum, map_params, seed_from_averaged, EnvelopeOptions,
    PendulumParams,
};
use serde::{Deserialize, Serialize};

use crate::config::OutDir;
use crate::error::{CliError, Context};

fn opt(x: Option<f64>) -> String {
    x.map(fmt17).unwrap_or_default()
}

fn write_trajectory(out: &mut OutDir, name: &str, t: &Trajectory) -> Result<(), CliError> {
    let path = out.file(name);
    out.file(&format!("{name}.meta.json"));
    t.write_csv(&path).in_module("integrators")
}

fn bad(field: &str, reason: &str) -> CliError {
    CliError::Config(format!("invalid parameter `{field}`: {reason}"))
}

fn default_order() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesConfig {
    pub params: SystemParams,
    #[serde(default)]
    pub branch: Branch,
    #[serde(default = "default_order")]
    pub order: usize,
    /// Evaluation points; each must be ≥ 1.
    #[serde(default)]
    pub taus: Vec<f64>,
    /// Window for the log–log residual slope.
    #[serde(default = "default_residual_window")]
    pub residual_window: (f64, f64),
}

fn default_residual_window() -> (f64, f64) {
    (10.0, 1000.0)
}

#[derive(Serialize)]
struct SeriesSummary {
    branch: Branch,
    order: usize,
    psi0: f64,
    /// `r_0 … r_K`; the series is `r = λτ + Σ r_k τ^{-k}`.
    r: Vec<f64>,
    /// `ψ_0 … ψ_K`; the series is `ψ = Σ ψ_k τ^{-k}`.
    psi: Vec<f64>,
    residual_slope: f64,
}

pub fn series(cfg: &SeriesConfig, out: &mut OutDir) -> Result<(), CliError> {
    let e = expand(&cfg.params, cfg.branch, cfg.order).in_module("asymptotics")?;
    let (lo, hi) = cfg.residual_window;
    let slope = residual_slope(&e, lo, hi, 40).in_module("asymptotics")?;
    out.write_json(
        "series.json",
        &SeriesSummary {
            branch: cfg.branch,
            order: cfg.order,
            psi0: e.psi0,
            r: e.r_coeffs.clone(),
            psi: e.psi_coeffs.clone(),
            residual_slope: slope,
        },
    )?;
    if !cfg.taus.is_empty() {
        let mut csv = String::from("tau,r,psi,residual_r,residual_psi\n");
        for &tau in &cfg.taus {
            let s = e.evaluate(tau).in_module("asymptotics")?;
            let res = e.residual(tau).in_module("asymptotics")?;
            writeln!(csv, "{},{},{},{},{}", fmt17(tau), fmt17(s.r), fmt17(s.psi), fmt17(res[0]), fmt17(res[1])).unwrap();
        }
        out.write_text("series_eval.csv", &csv)?;
    }
    Ok(())
}

fn default_tol() -> f64 {
    1e-10
}

fn default_sample() -> f64 {
    0.01
}

fn default_stride() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub params: SystemParams,
    pub initial: State,
    #[serde(default)]
    pub tau0: f64,
    pub tau1: f64,
    /// Absent or `mu = 0`: deterministic adaptive integration.
    #[serde(default)]
    pub noise: Option<NoiseSchedule>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Output spacing for deterministic runs.
    #[serde(default = "default_sample")]
    pub sample_dt: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub scheme: SdeScheme,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub path_index: u64,
    /// Record every `stride` steps for stochastic runs.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

pub fn deterministic_path(p: &SystemParams, s0: State, tau0: f64, tau1: f64, sample: f64, tol: f64) -> autores::Result<Trajectory> {
    if !(sample > 0.0 && tau1 > tau0) {
        return Err(autores::Error::InvalidParameter { name: "tau1".into(), reason: "need tau1 > tau0 and sample_dt > 0".into() });
    }
    let n = ((tau1 - tau0) / sample).ceil() as usize;
    let mut samples: Vec<f64> = (1..=n).map(|i| (tau0 + i as f64 * sample).min(tau1)).collect();
    samples.dedup();
    let sol = integrate_ode(|t, x: &[f64; 2]| rhs_primary(State::from_array(*x), t, p), s0.to_array(), tau0, tau1, &OdeOptions::with_tol(tol), &samples)?;
    let mut t = Trajectory::new(TrajectoryMeta::deterministic("dopri5", tol, STATE_COLUMNS));
    t.push(tau0, s0.to_array());
    for (tau, x) in sol.times.iter().zip(&sol.states) {
        t.push(*tau, *x);
    }
    Ok(t)
}

pub fn stochastic_path(
    p: &SystemParams,
    noise: &NoiseSchedule,
    s0: State,
    tau0: f64,
    tau1: f64,
    dt: f64,
    scheme: SdeScheme,
    seed: u64,
    path_index: u64,
    stride: usize,
) -> autores::Result<Trajectory> {
    noise.validate()?;
    let sys = AutoresonanceSde { params: p, noise };
    let meta = TrajectoryMeta::stochastic(scheme.name(), dt, seed, path_index, STATE_COLUMNS);
    integrate_sde(&sys, s0.to_array(), tau0, tau1, dt, noise.mu, scheme, &mut NoiseStream::new(seed, path_index), stride, meta)
}

#[derive(Serialize)]
struct PathSummary {
    samples: usize,
    tau_end: f64,
    r_end: f64,
    psi_end: f64,
    truncated: bool,
    capture: Capture,
}

fn summarize(t: &Trajectory, p: &SystemParams) -> PathSummary {
    let (tau_end, x) = t.last().unwrap_or((f64::NAN, [f64::NAN; 2]));
    PathSummary { samples: t.len(), tau_end, r_end: x[0], psi_end: x[1], truncated: t.meta.truncated, capture: classify_capture(t, p) }
}

pub fn simulate(cfg: &SimulateConfig, out: &mut OutDir) -> Result<(), CliError> {
    if cfg.stride == 0 {
        return Err(bad("stride", "must be ≥ 1"));
    }
    let traj = match &cfg.noise {
        Some(n) if n.mu > 0.0 => {
            let dt = cfg.dt.unwrap_or_else(|| default_dt(n.mu));
            stochastic_path(&cfg.params, n, cfg.initial, cfg.tau0, cfg.tau1, dt, cfg.scheme, cfg.seed, cfg.path_index, cfg.stride)
        }
        _ => deterministic_path(&cfg.params, cfg.initial, cfg.tau0, cfg.tau1, cfg.sample_dt, cfg.tol),
    }
    .in_module("integrators")?;
    write_trajectory(out, "trajectory.csv", &traj)?;
    out.write_json("summary.json", &summarize(&traj, &cfg.params))
}

pub fn write_paths(out: &mut OutDir, name: &str, paths: &[PathResult]) -> Result<(), CliError> {
    let mut csv = String::from(
        "path_index,r0,psi0,tau_end,r_end,psi_end,sup_phase_dev,sup_amp_dev,sup_amp_dev_raw,exit_tau,blew_up,capture\n",
    );
    for p in paths {
        let capture = match p.capture {
            Capture::Captured => "captured",
            Capture::Escaped => "escaped",
            Capture::Indeterminate => "indeterminate",
        };
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            p.path_index,
            fmt17(p.r0),
            fmt17(p.psi0),
            fmt17(p.tau_end),
            fmt17(p.r_end),
            fmt17(p.psi_end),
            opt(p.sup_phase_dev),
            opt(p.sup_amp_dev),
            opt(p.sup_amp_dev_raw),
            opt(p.exit_tau),
            opt(p.blew_up),
            capture
        )
        .unwrap();
    }
    out.write_text(name, &csv)
}

pub fn ensemble(cfg: &EnsembleConfig, threads: usize, out: &mut OutDir) -> Result<(), CliError> {
    let run = run_ensemble(cfg, threads).in_module("ensemble")?;
    out.write_json("stats.json", &run.stats)?;
    write_paths(out, "paths.csv", &run.paths)
}

fn default_bootstrap_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitTimesConfig {
    /// Shared settings; `noise.mu` is replaced by each entry of `mu_list`.
    pub ensemble: EnsembleConfig,
    pub mu_list: Vec<f64>,
    #[serde(default = "default_bootstrap_seed")]
    pub bootstrap_seed: u64,
}

pub fn exit_times(cfg: &ExitTimesConfig, threads: usize, out: &mut OutDir) -> Result<(), CliError> {
    let cfgs: Vec<EnsembleConfig> = cfg
        .mu_list
        .iter()
        .map(|&mu| {
            let mut c = cfg.ensemble.clone();
            c.noise.mu = mu;
            c
        })
        .collect();
    let report = exit_time_scaling(&cfgs, threads, cfg.bootstrap_seed).in_module("ensemble")?;
    out.write_json("scaling.json", &report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyRun {
    pub params: SystemParams,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub certify: CertifyConfig,
}

pub fn certify_cmd(cfg: &CertifyRun, threads: usize, out: &mut OutDir) -> Result<(), CliError> {
    let reference = ReferenceSolution::build(&cfg.params, &cfg.reference).in_module("integrators")?;
    let cert = autores::ensemble::with_pool(threads, || certify(&cfg.params, &reference, &cfg.certify))
        .in_module("lyapunov")?
        .in_module("lyapunov")?;
    out.write_json("certificate.json", &cert)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsConfig {
    pub inputs: ThresholdInputs,
    /// Optional `β` values for the `T = μ^{(κ−2)/(1+β)}` horizons.
    #[serde(default)]
    pub beta: Vec<f64>,
    /// Optional schedules to class-check at `tau0`.
    #[serde(default)]
    pub noise: Option<NoiseSchedule>,
    #[serde(default = "default_class_tau0")]
    pub tau0: f64,
}

fn default_class_tau0() -> f64 {
    1.0
}

#[derive(Serialize)]
struct BetaHorizon {
    beta: f64,
    exponent: f64,
}

#[derive(Serialize)]
struct ThresholdsOutput {
    report: autores::lyapunov::ThresholdReport,
    beta_horizons: Vec<BetaHorizon>,
    class_check: Option<autores::lyapunov::ClassCheck>,
}

pub fn thresholds_cmd(cfg: &ThresholdsConfig, out: &mut OutDir) -> Result<(), CliError> {
    let report = thresholds(&cfg.inputs).in_module("lyapunov")?;
    let beta_horizons = cfg
        .beta
        .iter()
        .map(|&beta| Ok(BetaHorizon { beta, exponent: thresholds_beta(beta, cfg.inputs.kappa)? }))
        .collect::<autores::Result<Vec<_>>>()
        .in_module("lyapunov")?;
    let class_check = cfg.noise.as_ref().map(|n| noise_class_check(n, cfg.tau0)).transpose().in_module("lyapunov")?;
    out.write_json("thresholds.json", &ThresholdsOutput { report, beta_horizons, class_check })
}

fn default_pendulum_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumRun {
    pub pendulum: PendulumParams,
    /// Averaged `(r, ψ)` at τ = 0, mapped to `(u, u')` at t = 0.
    pub initial: State,
    pub tau_end: f64,
    #[serde(default = "default_pendulum_tol")]
    pub tol: f64,
    #[serde(default)]
    pub envelope: EnvelopeOptions,
}

#[derive(Serialize)]
struct PendulumSummary {
    lambda: f64,
    gamma: f64,
    u0: f64,
    v0: f64,
    max_rel_error: f64,
    mean_rel_error: f64,
    extrema: usize,
}

pub fn pendulum(cfg: &PendulumRun, out: &mut OutDir) -> Result<(), CliError> {
    let p = map_params(&cfg.pendulum).in_module("pendulum")?;
    let (u0, v0) = seed_from_averaged(&cfg.pendulum, cfg.initial).in_module("pendulum")?;
    let traj = integrate_pendulum(&cfg.pendulum, u0, v0, cfg.pendulum.fast_time(cfg.tau_end), cfg.tol).in_module("pendulum")?;
    let avg = averaged_trajectory(&p, cfg.initial, cfg.tau_end, 0.01, cfg.tol).in_module("pendulum")?;
    let cmp = envelope_compare(&traj, &avg, &cfg.pendulum, &cfg.envelope).in_module("pendulum")?;
    write_trajectory(out, "pendulum.csv", &traj)?;
    let mut csv = String::from("tau,envelope,predicted,relerr\n");
    for r in &cmp.rows {
        writeln!(csv, "{},{},{},{}", fmt17(r.tau), fmt17(r.envelope), fmt17(r.predicted), fmt17(r.relerr)).unwrap();
    }
    out.write_text("comparison.csv", &csv)?;
    out.write_json(
        "summary.json",
        &PendulumSummary {
            lambda: p.lambda(),
            gamma: p.gamma(),
            u0,
            v0,
            max_rel_error: cmp.max_rel_error,
            mean_rel_error: cmp.mean_rel_error,
            extrema: cmp.extrema,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    Fig1,
    Fig2,
}

fn default_figure_seed() -> u64 {
    20_240_601
}

fn default_fig_params() -> SystemParams {
    SystemParams::new(1.0, 0.1).expect("valid defaults")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiguresConfig {
    pub which: Figure,
    #[serde(default = "default_fig_params")]
    pub params: SystemParams,
    #[serde(default = "default_figure_seed")]
    pub seed: u64,
}

pub const FIG1_R0: [f64; 8] = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];
pub const FIG2_MU: [f64; 3] = [0.1, 0.35, 0.55];

pub fn figures(cfg: &FiguresConfig, out: &mut OutDir) -> Result<(), CliError> {
    let p = &cfg.params;
    let mut labels = String::new();
    match cfg.which {
        Figure::Fig1 => {
            labels.push_str("file,r0,psi0,capture\n");
            for (i, r0) in FIG1_R0.iter().enumerate() {
                for k in 0..4 {
                    let psi0 = k as f64 * std::f64::consts::FRAC_PI_2;
                    let t = deterministic_path(p, State::new(*r0, psi0), 0.0, 60.0, 0.01, 1e-10).in_module("integrators")?;
                    let name = format!("fig1_r{i}_psi{k}.csv");
                    write_trajectory(out, &name, &t)?;
                    let class = match classify_capture(&t, p) {
                        Capture::Captured => "captured",
                        Capture::Escaped => "escaped",
                        Capture::Indeterminate => "indeterminate",
                    };
                    writeln!(labels, "{name},{},{},{class}", fmt17(*r0), fmt17(psi0)).unwrap();
                }
            }
            out.write_text("fig1_labels.csv", &labels)
        }
        Figure::Fig2 => {
            labels.push_str("file,mu,capture\n");
            for (i, mu) in FIG2_MU.iter().enumerate() {
                let noise = NoiseSchedule::additive_phase(*mu).in_module("model")?;
                let t = stochastic_path(p, &noise, State::new(1.09, 2.15), 0.0, 60.0, default_dt(*mu), SdeScheme::EulerMaruyama, cfg.seed, i as u64, 10)
                    .in_module("integrators")?;
                let name = format!("fig2_mu{i}.csv");
                write_trajectory(out, &name, &t)?;
                let class = match classify_capture(&t, p) {
                    Capture::Captured => "captured",
                    Capture::Escaped => "escaped",
                    Capture::Indeterminate => "indeterminate",
                };
                writeln!(labels, "{name},{},{class}", fmt17(*mu)).unwrap();
            }
            out.write_text("fig2_labels.csv", &labels)
        }
    }
}
