mod common;

use std::sync::OnceLock;

use autores::integrators::{integrate_ode, OdeOptions, ReferenceConfig, ReferenceSolution};
use autores::lyapunov::{
    certify, dv_dtau, eval_u, eval_v, lyapunov_jet, spot_check, CertifyConfig, StabilityCertificate,
};
use autores::model::{rhs_primary, CapturedSolution, ErrorState, State};
use common::params;
use proptest::prelude::*;

fn reference() -> &'static ReferenceSolution {
    static R: OnceLock<ReferenceSolution> = OnceLock::new();
    R.get_or_init(|| ReferenceSolution::build(&params(), &ReferenceConfig::default()).unwrap())
}

fn certificate() -> &'static StabilityCertificate {
    static C: OnceLock<StabilityCertificate> = OnceLock::new();
    C.get_or_init(|| certify(&params(), reference(), &CertifyConfig::default()).unwrap())
}

/// Perturbed primary trajectory sampled on `taus`.
fn perturbed(tau0: f64, amp: f64, phase: f64, taus: &[f64]) -> Vec<State> {
    let p = params();
    let s = reference().state(tau0).unwrap();
    let sol = integrate_ode(
        |t, x: &[f64; 2]| rhs_primary(State::from_array(*x), t, &p),
        [s.r + amp, s.psi + phase],
        tau0,
        *taus.last().unwrap(),
        &OdeOptions::with_tol(1e-12),
        taus,
    )
    .unwrap();
    sol.states.iter().map(|x| State::from_array(*x)).collect()
}

#[test]
fn certificate_for_standard_parameters() {
    let p = params();
    let c = certificate();
    assert!(c.d0 >= 0.05 && c.tau0 <= 50.0, "{c:?}");
    assert_eq!(c.q, p.gamma() / 6.0);
    assert!((c.a - 1.0 / p.nu()).abs() < 1e-15 && c.b == 1.0);
    assert_eq!(c.spot_violations, 0);
    // Independent spot check with a different seed.
    let again = spot_check(c, &p, reference(), 5000, 99).unwrap();
    assert!(again.violations.is_empty(), "{again:?}");
}

#[test]
fn deviations_decay_at_least_at_the_certified_rate() {
    let p = params();
    let taus: Vec<f64> = (0..=1800).map(|i| 20.0 + 0.1 * i as f64).collect();
    let states = perturbed(20.0, 0.01, 0.01, &taus);
    let u: Vec<f64> = taus
        .iter()
        .zip(&states)
        .map(|(t, s)| {
            let at = reference().point(*t).unwrap();
            eval_u(ErrorState::new(s.r - at.r, s.psi - at.psi), *t, &p, reference()).unwrap()
        })
        .collect();
    let q = p.gamma() / 6.0;
    for (k, (t, v)) in taus.iter().zip(&u).enumerate() {
        let bound = u[0] * (-q * (t - 20.0)).exp();
        assert!(*v <= bound * (1.0 + 1e-6), "U exceeds e^(-qτ) bound at τ={t} (k={k})");
    }
}

#[test]
fn flow_derivative_matches_finite_differences_along_paths() {
    let p = params();
    for (amp, phase, t) in [(0.05, -0.02, 30.0), (-0.2, 0.1, 75.0), (0.3, 0.3, 140.0)] {
        let h = 1e-3;
        let taus = [t - h, t, t + h];
        let states = perturbed(t - 10.0, amp, phase, &taus);
        let v: Vec<f64> = taus
            .iter()
            .zip(&states)
            .map(|(tau, s)| {
                let at = reference().state(*tau).unwrap();
                eval_v(ErrorState::new(s.r - at.r, s.psi - at.psi), *tau, &p, reference()).unwrap()
            })
            .collect();
        let fd = (v[2] - v[0]) / (2.0 * h);
        let at = reference().state(t).unwrap();
        let e = ErrorState::new(states[1].r - at.r, states[1].psi - at.psi);
        let exact = dv_dtau(e, t, &p, reference()).unwrap();
        assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1e-6), "τ={t}: fd {fd} vs {exact}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sandwich_holds_inside_the_certified_tube(
        rad in 0.0f64..1.0, ang in 0.0f64..std::f64::consts::TAU, s in 0.0f64..1.0
    ) {
        let p = params();
        let c = certificate();
        let tau = c.tau0 + s * (c.tau_max - c.tau0);
        let e = ErrorState::new(c.d0 * rad * ang.cos(), c.d0 * rad * ang.sin());
        prop_assume!(e.norm() > 1e-9);
        let at = reference().point(tau).unwrap();
        let j = lyapunov_jet(e, tau, &at, &p);
        let m = e.amp * e.amp / (p.nu() * tau) + e.phase * e.phase;
        prop_assert!(j.value >= 0.25 * m * (1.0 - 1e-9));
        prop_assert!(j.value <= 0.75 * m * (1.0 + 1e-9));
        prop_assert!(j.d_flow <= -c.q * j.value + 1e-12 * m);
        prop_assert!(4.0 * j.grad_sq() * 4.0 <= c.B * 4.0 * j.value * (1.0 + 1e-9));
        prop_assert!(4.0 * j.hess_max() <= c.C * (1.0 + 1e-9));
    }
}
