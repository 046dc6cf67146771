mod common;

use common::{dv, scenarios_dir};
use pbcbf::barrier::{check_opposed_pair, AngleOfAttackBarrier};
use pbcbf::harness::{PidSas, SasGains};
use pbcbf::ode::rk4_step;
use pbcbf::system::{angle_of_attack, trim_solve, AffineSystem, AircraftParams, LongitudinalAircraft};

fn params() -> AircraftParams {
    AircraftParams::load(scenarios_dir().join("trainer_jet.json")).unwrap()
}

fn gains() -> SasGains {
    SasGains {
        k_p_alpha: 0.5,
        k_d_theta: 0.3,
        k_p_theta: 0.5,
        k_i_theta: 0.1,
        k_p_u: -2.0,
        k_i_u: -0.2,
        k_d_u: -0.5,
        derivative_pole: 50.0,
    }
}

#[test]
fn trim_at_the_reference_airspeed() {
    let trim = trim_solve(&params(), 85.34, 0.0).unwrap();
    assert!((9.0..=11.0).contains(&trim.alpha.to_degrees()), "alpha {}", trim.alpha.to_degrees());
    assert!(trim.residual < 1e-9);
    let ac = LongitudinalAircraft::new(params()).unwrap();
    let xdot = ac.dynamics(&trim.state, &trim.input).unwrap();
    assert!(xdot.norm() < 1e-8, "{xdot}");
    assert!((angle_of_attack(&trim.state) - trim.alpha).abs() < 1e-12);
}

#[test]
fn alpha_limits_form_an_opposed_pair() {
    let hi = AngleOfAttackBarrier::upper(15f64.to_radians());
    let lo = AngleOfAttackBarrier::lower(-10f64.to_radians());
    let samples: Vec<_> = (0..25)
        .map(|k| {
            let a = (-9.0 + k as f64).to_radians();
            let v = 60.0 + 2.0 * k as f64;
            dv(&[v * a.cos(), v * a.sin(), 0.1, a + 0.02])
        })
        .collect();
    assert!(check_opposed_pair(&hi, &lo, &samples).unwrap());
}

#[test]
fn sas_at_trim_commands_the_trim_input() {
    let p = params();
    let trim = trim_solve(&p, 85.34, 0.0).unwrap();
    let ac = LongitudinalAircraft::new(p).unwrap();
    let mut sas = PidSas::new(gains(), trim.clone(), ac.bounds());
    for _ in 0..100 {
        assert!((sas.output(&trim.state) - &trim.input).norm() < 1e-12);
        sas.advance(&trim.state, 0.01);
    }
}

#[test]
fn nose_up_elevator_raises_alpha() {
    let p = params();
    let trim = trim_solve(&p, 85.34, 0.0).unwrap();
    let ac = LongitudinalAircraft::new(p).unwrap();
    let mut u = trim.input.clone();
    u[0] -= 5f64.to_radians();
    let mut x = trim.state.clone();
    for k in 0..500 {
        x = rk4_step(|_, x| ac.dynamics(x, &u), &x, k as f64 * 1e-3, 1e-3).unwrap();
    }
    assert!(angle_of_attack(&x) > trim.alpha + 1f64.to_radians());
    assert!(x[1] > trim.state[1]);
}

#[test]
fn sas_corrections_have_the_gain_signs() {
    let p = params();
    let trim = trim_solve(&p, 85.34, 0.0).unwrap();
    let ac = LongitudinalAircraft::new(p).unwrap();
    let sas = PidSas::new(gains(), trim.clone(), ac.bounds());
    let mut x = trim.state.clone();
    x[1] += 2.0;
    let du = sas.output(&x) - &trim.input;
    assert!(du[0] > 0.0, "alpha above trim should push the nose down, got {du}");
    assert_eq!(du[1], 0.0);
}

#[test]
fn airspeed_step_gives_a_bounded_throttle_kick() {
    let p = params();
    let trim = trim_solve(&p, 85.34, 0.0).unwrap();
    let ac = LongitudinalAircraft::new(p).unwrap();
    let mut sas = PidSas::new(gains(), trim.clone(), ac.bounds());
    let mut x = trim.state.clone();
    x[0] += 1.0;
    let g = gains();
    let first = sas.output(&x)[1] - trim.input[1];
    assert!((first - (g.k_p_u + g.k_d_u * g.derivative_pole)).abs() < 1e-9);
    let mut last = first;
    for _ in 0..200 {
        sas.advance(&x, 1e-3);
        let now = sas.output(&x)[1] - trim.input[1];
        assert!(now.abs() <= first.abs() + 1e-12);
        last = now;
    }
    // The derivative kick has decayed; proportional and integral remain.
    assert!((last - g.k_p_u - g.k_i_u * 0.2).abs() < 0.1);
}
