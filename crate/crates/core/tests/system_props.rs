mod common;

use common::dv;
use nalgebra::{DVector, Vector2};
use pbcbf::barrier::{h_ddot_form, h_dot, AngleOfAttackBarrier, Barrier, GapBarrier, RadialBarrier};
use pbcbf::numdiff;
use pbcbf::ode::rk4_step;
use pbcbf::system::{
    cartesian_to_polar, linearize, polar_to_cartesian, AdaptiveCruise, AffineSystem, AircraftParams,
    DoubleIntegratorPolar, LongitudinalAircraft,
};
use proptest::prelude::*;

fn aircraft() -> LongitudinalAircraft {
    let p = AircraftParams::load(common::scenarios_dir().join("trainer_jet.json")).unwrap();
    LongitudinalAircraft::new(p).unwrap()
}

fn close(a: &DVector<f64>, b: &DVector<f64>, rel: f64) -> bool {
    (a - b).amax() <= rel * (1.0 + a.amax().max(b.amax()))
}

fn aircraft_state() -> impl Strategy<Value = DVector<f64>> {
    (60.0..110.0f64, -12.0..25.0f64, -0.5..0.5f64, -0.4..0.6f64).prop_map(|(v, a, q, th)| {
        let alpha = a.to_radians();
        dv(&[v * alpha.cos(), v * alpha.sin(), q, th])
    })
}

fn di_state() -> impl Strategy<Value = DVector<f64>> {
    (0.5..5.0f64, -3.0..3.0f64, -2.0..2.0f64, -1.5..1.5f64).prop_map(|(r, th, rd, om)| dv(&[r, th, rd, om]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dynamics_are_affine_in_the_input(x in aircraft_state(), e1 in -0.3..0.2f64, e2 in -0.3..0.2f64,
                                        t1 in 0.0..100.0f64, t2 in 0.0..100.0f64, s in 0.0..1.0f64) {
        let ac = aircraft();
        let (u1, u2) = (dv(&[e1, t1]), dv(&[e2, t2]));
        let mixed = ac.dynamics(&x, &(&u1 * s + &u2 * (1.0 - s))).unwrap();
        let combo = ac.dynamics(&x, &u1).unwrap() * s + ac.dynamics(&x, &u2).unwrap() * (1.0 - s);
        prop_assert!(close(&mixed, &combo, 1e-12));
    }

    #[test]
    fn di_dynamics_are_affine(x in di_state(), a in -1.0..1.0f64, b in -1.0..1.0f64, s in 0.0..1.0f64) {
        let di = DoubleIntegratorPolar::new(1.0).unwrap();
        let (u1, u2) = (dv(&[a, b]), dv(&[b, -a]));
        let mixed = di.dynamics(&x, &(&u1 * s + &u2 * (1.0 - s))).unwrap();
        let combo = di.dynamics(&x, &u1).unwrap() * s + di.dynamics(&x, &u2).unwrap() * (1.0 - s);
        prop_assert!(close(&mixed, &combo, 1e-13));
    }

    #[test]
    fn polar_coordinates_reproduce_cartesian_motion(
        px in -4.0..4.0f64, py in -4.0..4.0f64, vx in -0.6..0.6f64, vy in -0.6..0.6f64,
        ax in -0.05..0.05f64, ay in -0.05..0.05f64,
    ) {
        let (p0, v0, acc) = (Vector2::new(px, py), Vector2::new(vx, vy), Vector2::new(ax, ay));
        let exact = |t: f64| (p0 + v0 * t + acc * (0.5 * t * t), v0 + acc * t);
        let min_r = (0..=1000).map(|k| exact(k as f64 * 0.01).0.norm()).fold(f64::INFINITY, f64::min);
        prop_assume!(min_r > 0.5);

        let di = DoubleIntegratorPolar::new(1.0).unwrap();
        // Constant Cartesian acceleration, resolved onto the polar channels.
        let field = |_t: f64, x: &DVector<f64>| {
            let (s, c) = x[1].sin_cos();
            di.dynamics(x, &dv(&[acc.x * c + acc.y * s, -acc.x * s + acc.y * c]))
        };
        let dt = 1e-3;
        let mut x = cartesian_to_polar(p0, v0);
        for k in 0..10_000 {
            x = rk4_step(field, &x, k as f64 * dt, dt).unwrap();
        }
        let (pos, vel) = polar_to_cartesian(&x);
        let (pe, ve) = exact(10.0);
        prop_assert!((pos - pe).norm() < 1e-5, "position error {}", (pos - pe).norm());
        prop_assert!((vel - ve).norm() < 1e-5, "velocity error {}", (vel - ve).norm());
    }

    #[test]
    fn analytic_gradients_match_differences(x in aircraft_state(), y in di_state()) {
        let hi = AngleOfAttackBarrier::upper(15f64.to_radians());
        let lo = AngleOfAttackBarrier::lower(-10f64.to_radians());
        let radial = RadialBarrier { radius: 1.0, mu: 1.5 };
        let cases: [(&dyn Barrier, &DVector<f64>); 3] = [(&hi, &x), (&lo, &x), (&radial, &y)];
        for (b, state) in cases {
            let fd = numdiff::gradient(|z| b.value(z), state).unwrap();
            prop_assert!(close(&b.gradient(state).unwrap(), &fd, 1e-7));
            let fd_h = numdiff::jacobian(|z| b.gradient(z), state).unwrap();
            let h = b.hessian(state).unwrap();
            prop_assert!((&h - &fd_h).amax() <= 1e-6 * (1.0 + h.amax()));
        }
    }

    #[test]
    fn hddot_form_matches_rate_derivative_on_aircraft(x in aircraft_state(), e in -0.3..0.17f64, th in 0.0..100.0f64) {
        let ac = aircraft();
        let b = AngleOfAttackBarrier::upper(15f64.to_radians());
        let u = dv(&[e, th]);
        let form = h_ddot_form(&b, &ac, &x).unwrap();
        let xdot = ac.dynamics(&x, &u).unwrap();
        let eps = 1e-5;
        let fd = (h_dot(&b, &ac, &(&x + &xdot * eps), &u).unwrap() - h_dot(&b, &ac, &(&x - &xdot * eps), &u).unwrap()) / (2.0 * eps);
        let value = form.eval(&u);
        prop_assert!((value - fd).abs() <= 1e-4 * (1.0 + fd.abs()), "{value} vs {fd}");
    }

    #[test]
    fn hddot_form_matches_rate_derivative_on_di(x in di_state(), a in -1.0..1.0f64, b in -1.0..1.0f64) {
        let di = DoubleIntegratorPolar::new(1.0).unwrap();
        let barrier = RadialBarrier { radius: 1.0, mu: 1.5 };
        let u = dv(&[a, b]);
        let form = h_ddot_form(&barrier, &di, &x).unwrap();
        let xdot = di.dynamics(&x, &u).unwrap();
        let eps = 1e-5;
        let fd = (h_dot(&barrier, &di, &(&x + &xdot * eps), &u).unwrap() - h_dot(&barrier, &di, &(&x - &xdot * eps), &u).unwrap()) / (2.0 * eps);
        prop_assert!((form.eval(&u) - fd).abs() <= 1e-5 * (1.0 + fd.abs()));
    }
}

#[test]
fn acc_is_linear_without_resistance() {
    let acc = AdaptiveCruise::new(1500.0, 20.0, 3.0, vec![]).unwrap();
    let x0 = dv(&[25.0, 60.0]);
    let (a, b) = linearize(&acc, &x0, &dv(&[0.0])).unwrap();
    let expected = dv(&[0.0, -1.0]);
    assert!((a.column(0) - expected).amax() < 1e-9 && a.column(1).amax() < 1e-12);
    assert_eq!(b, acc.input_map(&x0).unwrap());
    let gap = GapBarrier { z_min: 5.0, headway: 1.2 };
    // h_dot = -1.2 v' + (v_f - v)
    let rate = h_dot(&gap, &acc, &x0, &dv(&[-1500.0])).unwrap();
    assert!((rate - (1.2 - 5.0)).abs() < 1e-12);
}

#[test]
fn aircraft_linearization_input_map_is_exact() {
    let ac = aircraft();
    let x = dv(&[84.0, 14.0, 0.02, 0.18]);
    let (_, b) = linearize(&ac, &x, &dv(&[-0.1, 50.0])).unwrap();
    assert_eq!(b, ac.input_map(&x).unwrap());
}
