mod common;

use autores::asymptotics::{expand, expand_raw, residual_slope, Branch};
use common::{lstsq, offset_trajectory, params};
use proptest::prelude::*;

/// Fits `(r − λτ, ψ)` from a long forward run against powers of `1/τ`.
/// The run starts at τ = 20 near the captured solution; the seed only sets
/// the size of the transient, which decays at roughly exp(−0.04τ) and is
/// far below the τ⁻³ terms on the fit window.
fn fitted_coefficients(lo: f64, hi: f64, terms: usize) -> (Vec<f64>, Vec<f64>) {
    let p = params();
    let t0 = 20.0;
    let seed = expand(&p, Branch::Stable, 3).unwrap().evaluate(t0).unwrap();
    let (rho, psi) = (seed.r - p.lambda() * t0, seed.psi);
    let samples: Vec<f64> = (0..=3000).map(|i| lo + (hi - lo) * i as f64 / 3000.0).collect();
    let traj = offset_trajectory(&p, rho, psi, t0, &samples, 3e-14);
    let rows: Vec<Vec<f64>> = traj.iter().map(|(t, _, _)| (0..terms).map(|k| (lo / t).powi(k as i32)).collect()).collect();
    let unscale = |c: Vec<f64>| c.iter().enumerate().map(|(k, c)| c * lo.powi(k as i32)).collect::<Vec<_>>();
    let r = unscale(lstsq(&rows, &traj.iter().map(|x| x.1).collect::<Vec<_>>()));
    let s = unscale(lstsq(&rows, &traj.iter().map(|x| x.2).collect::<Vec<_>>()));
    (r, s)
}

fn same_to_three_digits(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-3 * b.abs()
}

#[test]
fn third_order_coefficients_match_trajectory_fit() {
    let e = expand(&params(), Branch::Stable, 3).unwrap();
    let (r, psi) = fitted_coefficients(400.0, 1200.0, 5);
    for k in 0..=3 {
        assert!(same_to_three_digits(r[k], e.r_coeffs[k]), "r_{k}: fit {} vs {}", r[k], e.r_coeffs[k]);
        assert!(same_to_three_digits(psi[k], e.psi_coeffs[k]), "ψ_{k}: fit {} vs {}", psi[k], e.psi_coeffs[k]);
    }
}

#[test]
fn first_order_closed_forms() {
    let p = params();
    let e = expand(&p, Branch::Stable, 1).unwrap();
    let psi0 = e.psi0;
    assert!((psi0.sin() - p.gamma()).abs() < 1e-15);
    assert!((e.r_coeffs[0] + psi0.cos()).abs() < 1e-15);
    assert!((e.psi_coeffs[1] - 1.0 / psi0.cos()).abs() < 1e-13);
    // Balancing the phase equation at order 1/τ gives r_1 = sinψ0·ψ_1 = tanψ0.
    assert!((e.r_coeffs[1] - psi0.tan()).abs() < 1e-13);
}

#[test]
fn residual_decays_with_order_on_both_branches() {
    for branch in [Branch::Stable, Branch::Unstable] {
        for k in 0..=4 {
            let e = expand(&params(), branch, k).unwrap();
            let slope = residual_slope(&e, 10.0, 1000.0, 40).unwrap();
            assert!(slope <= -(k as f64) + 0.3, "{branch:?} K={k}: slope {slope}");
        }
    }
}

#[test]
fn branches_decay_at_the_same_order() {
    for k in 1..=3 {
        let s = residual_slope(&expand(&params(), Branch::Stable, k).unwrap(), 50.0, 1000.0, 40).unwrap();
        let u = residual_slope(&expand(&params(), Branch::Unstable, k).unwrap(), 50.0, 1000.0, 40).unwrap();
        assert!((s - u).abs() < 0.3, "K={k}: {s} vs {u}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Raising the order changes the truncation by O(τ^{-(K+1)}).
    #[test]
    fn truncations_are_consistent(
        lambda in 0.2f64..5.0, gamma in 0.01f64..0.9, k in 1usize..4, tau in 50.0f64..500.0
    ) {
        let lo = expand_raw(lambda, gamma, Branch::Stable, k).unwrap();
        let hi = expand_raw(lambda, gamma, Branch::Stable, k + 1).unwrap();
        for i in 0..=k {
            prop_assert_eq!(lo.r_coeffs[i], hi.r_coeffs[i]);
            prop_assert_eq!(lo.psi_coeffs[i], hi.psi_coeffs[i]);
        }
        let (a, b) = (lo.evaluate(tau).unwrap(), hi.evaluate(tau).unwrap());
        let scale = tau.powi(-(k as i32 + 1));
        prop_assert!((a.r - b.r).abs() <= 1.0001 * hi.r_coeffs[k + 1].abs() * scale + 1e-12);
        prop_assert!((a.psi - b.psi).abs() <= 1.0001 * hi.psi_coeffs[k + 1].abs() * scale + 1e-12);
    }
}
