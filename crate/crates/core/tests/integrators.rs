mod common;

use std::ops::ControlFlow;

use autores::asymptotics::{expand, Branch};
use autores::integrators::{
    integrate_ode, integrate_sde, run_sde, AutoresonanceSde, FnSde, IncrementSource, NoiseStream, OdeOptions,
    ReferenceConfig, ReferenceSolution, SdeScheme, Trajectory, TrajectoryMeta, STATE_COLUMNS,
};
use autores::model::{rhs_primary, NoiseSchedule, State};
use autores::stats::{mean_se, ols_slope};
use common::params;
use rayon::prelude::*;

/// Coarse increments built from the sums of `m` fine increments of the same
/// stream, so coarse and fine paths share one Brownian path.
struct Coarsened {
    inner: NoiseStream,
    m: usize,
}

impl IncrementSource for Coarsened {
    fn next_pair(&mut self, dt: f64) -> [f64; 2] {
        let fine = dt / self.m as f64;
        let mut acc = [0.0; 2];
        for _ in 0..self.m {
            let w = self.inner.next_pair(fine);
            acc[0] += w[0];
            acc[1] += w[1];
        }
        acc
    }
}

#[test]
fn dopri_converges_at_nominal_order_on_linear_equation() {
    // x' = −x + cos t has x(t) = e^{−t} x0' + (cos t + sin t)/2.
    let field = |t: f64, x: &[f64; 1]| [-x[0] + t.cos()];
    let exact = |t: f64| 0.5 * (-t).exp() + 0.5 * (t.cos() + t.sin());
    let mut errs = Vec::new();
    let hs = [0.2, 0.1, 0.05, 0.025];
    for h in hs {
        let opts = OdeOptions { h_init: Some(h), h_max: h, ..OdeOptions::with_tol(1.0) };
        let sol = integrate_ode(field, [1.0], 0.0, 4.0, &opts, &[4.0]).unwrap();
        errs.push((sol.states[0][0] - exact(4.0)).abs());
    }
    let lh: Vec<f64> = hs.iter().map(|h: &f64| h.ln()).collect();
    let le: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let slope = ols_slope(&lh, &le).slope;
    assert!(slope > 4.5, "order {slope}, errors {errs:?}");
}

#[test]
fn tightening_tolerance_reduces_error() {
    let p = params();
    let s0 = State::new(21.0, 3.0);
    let field = |t: f64, x: &[f64; 2]| rhs_primary(State::from_array(*x), t, &p);
    let end = |tol: f64| integrate_ode(field, s0.to_array(), 20.0, 60.0, &OdeOptions::with_tol(tol), &[60.0]).unwrap().states[0];
    let truth = end(1e-13);
    let tols = [1e-6, 5e-7, 2.5e-7, 1.25e-7, 6.25e-8];
    let errs: Vec<f64> = tols
        .iter()
        .map(|&t| {
            let x = end(t);
            ((x[0] - truth[0]).powi(2) + (x[1] - truth[1]).powi(2)).sqrt()
        })
        .collect();
    let lt: Vec<f64> = tols.iter().map(|t| t.ln()).collect();
    let le: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let slope = ols_slope(&lt, &le).slope;
    assert!(slope >= 0.7, "error vs tol slope {slope}: {errs:?}");
}

#[test]
fn flow_tracks_series_from_tau_50() {
    let p = params();
    let e = expand(&p, Branch::Stable, 3).unwrap();
    let samples: Vec<f64> = (1..=50).map(|k| 50.0 + k as f64).collect();
    let sol = integrate_ode(
        |t, x: &[f64; 2]| rhs_primary(State::from_array(*x), t, &p),
        e.evaluate(50.0).unwrap().to_array(),
        50.0,
        100.0,
        &OdeOptions::with_tol(1e-12),
        &samples,
    )
    .unwrap();
    for (t, x) in sol.times.iter().zip(&sol.states) {
        let s = e.evaluate(*t).unwrap();
        assert!((x[0] - s.r).abs() < 1e-2 && (x[1] - s.psi).abs() < 1e-2, "τ = {t}");
    }
}

#[test]
fn reference_matches_leading_asymptotics() {
    let p = params();
    let r = ReferenceSolution::build(&p, &ReferenceConfig::default()).unwrap();
    let offsets: Vec<f64> = (50..=200).step_by(10).map(|t| r.state(t as f64).unwrap().r - t as f64).collect();
    assert!(offsets.windows(2).all(|w| (w[1] - p.nu()).abs() <= (w[0] - p.nu()).abs()), "{offsets:?}");
    assert!((offsets.last().unwrap() - p.nu()).abs() < 1e-3);
    let psi0 = std::f64::consts::PI - p.gamma().asin();
    let shift = r.state(100.0).unwrap().psi - psi0;
    let lead = -1.0 / (p.nu() * 100.0);
    assert!(((shift - lead) / lead).abs() < 0.1, "{shift} vs {lead}");
}

#[test]
fn backward_forward_round_trip() {
    let p = params();
    let tol = 1e-12;
    let field = |t: f64, x: &[f64; 2]| rhs_primary(State::from_array(*x), t, &p);
    let seed = expand(&p, Branch::Stable, 3).unwrap().evaluate(100.0).unwrap().to_array();
    let back = integrate_ode(field, seed, 100.0, 60.0, &OdeOptions::with_tol(tol), &[60.0]).unwrap();
    let fwd = integrate_ode(field, back.states[0], 60.0, 100.0, &OdeOptions::with_tol(tol), &[100.0]).unwrap();
    for k in 0..2 {
        let err = (fwd.states[0][k] - seed[k]).abs() / seed[k].abs().max(1.0);
        assert!(err <= 10.0 * tol * 100.0, "component {k}: {err}");
    }
}

#[test]
fn pure_noise_endpoint_variance() {
    let mu = 0.3;
    let sys = FnSde { drift: |_t: f64, _x: &[f64; 1]| [0.0], diffusion: |_t: f64, _x: &[f64; 1]| [[0.0, 1.0]] };
    let finals: Vec<f64> = (0..10_000u64)
        .map(|i| {
            let mut s = NoiseStream::new(7, i);
            run_sde(&sys, [0.0], 2.0, 5.0, 0.01, mu, SdeScheme::EulerMaruyama, &mut s, |_, _| ControlFlow::Continue(()))
                .unwrap()
                .x[0]
        })
        .collect();
    let sq: Vec<f64> = finals.iter().map(|x| x * x).collect();
    let (var, se) = mean_se(&sq);
    let expect = mu * mu * 3.0;
    assert!((var - expect).abs() <= 3.0 * se, "{var} ± {se} vs {expect}");
}

#[test]
fn strong_error_scales_with_step() {
    let p = params();
    let noise = NoiseSchedule::additive_phase(0.3).unwrap();
    let sys = AutoresonanceSde { params: &p, noise: &noise };
    let e = expand(&p, Branch::Stable, 3).unwrap();
    let x0 = e.evaluate(10.0).unwrap().to_array();
    let dts = [0.01, 0.005, 0.0025, 0.00125];
    let errs: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let per_path: Vec<f64> = (0..200u64)
                .into_par_iter()
                .map(|i| {
                    let go = |src: &mut dyn IncrementSource, h: f64| {
                        run_sde(&sys, x0, 10.0, 15.0, h, 0.3, SdeScheme::EulerMaruyama, src, |_, _| {
                            ControlFlow::Continue(())
                        })
                        .unwrap()
                        .x
                    };
                    let coarse = go(&mut Coarsened { inner: NoiseStream::new(3, i), m: 16 }, dt);
                    let fine = go(&mut NoiseStream::new(3, i), dt / 16.0);
                    ((coarse[0] - fine[0]).powi(2) + (coarse[1] - fine[1]).powi(2)).sqrt()
                })
                .collect();
            per_path.iter().sum::<f64>() / per_path.len() as f64
        })
        .collect();
    let ld: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let le: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let slope = ols_slope(&ld, &le).slope;
    assert!((0.4..=1.2).contains(&slope), "strong order {slope}: {errs:?}");
}

#[test]
fn ensembles_are_identical_across_thread_counts() {
    let p = params();
    let noise = NoiseSchedule::additive_phase(0.2).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            (0..64u64)
                .into_par_iter()
                .map(|i| {
                    let sys = AutoresonanceSde { params: &p, noise: &noise };
                    let meta = TrajectoryMeta::stochastic("euler-maruyama", 1e-3, 11, i, STATE_COLUMNS);
                    let mut s = NoiseStream::new(11, i);
                    let t = integrate_sde(&sys, [1.09, 2.15], 0.0, 3.0, 1e-3, 0.2, SdeScheme::EulerMaruyama, &mut s, 100, meta)
                        .unwrap();
                    t.states.iter().map(|x| (x[0].to_bits(), x[1].to_bits())).collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        })
    };
    assert_eq!(run(1), run(8));
}

#[test]
fn csv_round_trip_is_exact() {
    let mut t = Trajectory::new(TrajectoryMeta::deterministic("dopri5", 1e-10, STATE_COLUMNS));
    for k in 0..50 {
        let x = k as f64 * 0.1;
        t.push(x, [x.exp() * 1.000_000_000_1, (x * 7.3).sin() / 3.0]);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    t.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("tau,r,psi"));
    for (line, (tau, x)) in lines.zip(t.times.iter().zip(&t.states)) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(v, vec![*tau, x[0], x[1]]);
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("traj.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["integrator"], "dopri5");
}
