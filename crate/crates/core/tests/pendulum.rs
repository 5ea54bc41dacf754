mod common;

use autores::model::{State, SystemParams};
use autores::pendulum::{
    averaged_trajectory, envelope_compare, extrema, integrate_pendulum, seed_from_averaged, EnvelopeOptions,
    PendulumParams,
};
use common::params;

/// Mean relative envelope error over τ ∈ [5, 30] for a captured start.
fn envelope_error(p: &SystemParams, eps: f64, start: State) -> f64 {
    let pp = PendulumParams::from_system(p, eps).unwrap();
    let avg = averaged_trajectory(p, start, 30.0, 0.01, 1e-11).unwrap();
    let (u0, v0) = seed_from_averaged(&pp, start).unwrap();
    let traj = integrate_pendulum(&pp, u0, v0, pp.fast_time(30.0), 1e-10).unwrap();
    let opts = EnvelopeOptions { window: Some((5.0, 30.0)), ..Default::default() };
    envelope_compare(&traj, &avg, &pp, &opts).unwrap().mean_rel_error
}

#[test]
fn captured_seed_grows_like_the_averaged_envelope() {
    let err = envelope_error(&params(), 0.05, State::new(1.09, 2.15));
    assert!(err <= 0.15, "mean relative error {err}");
}

#[test]
fn envelope_error_shrinks_with_eps() {
    let p = params();
    let errs: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|&e| envelope_error(&p, e, State::new(1.09, 2.15))).collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn averaged_classification_predicts_pendulum_growth() {
    // Growth at τ = 30: the averaged amplitude passes half the captured
    // level λτ, or the pendulum envelope passes √(4ε·λτ/2).
    let p = params();
    let eps = 0.05;
    let pp = PendulumParams::from_system(&p, eps).unwrap();
    let tau_end = 30.0;
    let half = 0.5 * p.lambda() * tau_end;
    let mut agree = 0;
    let mut total = 0;
    for r0 in [0.2, 0.6, 1.0, 1.4, 1.8] {
        for k in 0..4 {
            let start = State::new(r0, k as f64 * std::f64::consts::FRAC_PI_2);
            let avg = averaged_trajectory(&p, start, tau_end, 0.05, 1e-10).unwrap();
            let averaged_grows = avg.last().unwrap().1[0] > half;
            let (u0, v0) = seed_from_averaged(&pp, start).unwrap();
            let traj = integrate_pendulum(&pp, u0, v0, pp.fast_time(tau_end), 1e-9).unwrap();
            let ex = extrema(&traj);
            let tail = &ex[ex.len() - 10..];
            let envelope = tail.iter().map(|e| e.1).sum::<f64>() / tail.len() as f64;
            let pendulum_grows = envelope > (4.0 * eps * half).sqrt();
            total += 1;
            agree += usize::from(averaged_grows == pendulum_grows);
        }
    }
    assert!(agree as f64 >= 0.9 * total as f64, "agreement {agree}/{total}");
}
