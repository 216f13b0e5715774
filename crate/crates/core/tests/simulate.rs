use meshderiv::simulate::{global_errors, loglog_slope, step_values, Integrator};
use meshderiv::Result;

const DTS: [f64; 3] = [0.2, 0.1, 0.05];

fn decay_order(integ: Integrator) -> f64 {
    let mut f = |s: &[f64]| -> Result<Vec<f64>> { Ok(s.iter().map(|v| -v).collect()) };
    let exact = [(-1.0f64).exp()];
    let e = global_errors(integ, &mut f, &[1.0], 1.0, &exact, &DTS).unwrap();
    loglog_slope(&DTS, &e).unwrap()
}

#[test]
fn convergence_orders_on_decay() {
    for (integ, expected, tol) in [(Integrator::Euler, 1.0, 0.1), (Integrator::Heun, 2.0, 0.1), (Integrator::Rk4, 4.0, 0.3)] {
        let p = decay_order(integ);
        assert!((p - expected).abs() <= tol, "{integ}: observed order {p}");
    }
}

#[test]
fn oscillator_orders() {
    // x'' = -x as a first-order system; exact solution (cos t, -sin t).
    let mut f = |s: &[f64]| -> Result<Vec<f64>> { Ok(vec![s[1], -s[0]]) };
    let t: f64 = 2.0;
    let exact = [t.cos(), -t.sin()];
    let dts = [0.1, 0.05, 0.025];
    for (integ, expected) in [(Integrator::Euler, 1.0), (Integrator::Heun, 2.0), (Integrator::Rk4, 4.0)] {
        let e = global_errors(integ, &mut f, &[1.0, 0.0], t, &exact, &dts).unwrap();
        let p = loglog_slope(&dts, &e).unwrap();
        assert!((p - expected).abs() < 0.15, "{integ}: {p}");
    }
}

#[test]
fn rk4_is_exact_on_cubics_in_time() {
    // ds/dt = 3t² written autonomously with t as a second component.
    let mut f = |s: &[f64]| -> Result<Vec<f64>> { Ok(vec![3.0 * s[1] * s[1], 1.0]) };
    let s = step_values(Integrator::Rk4, &mut f, &[0.0, 0.0], 0.5).unwrap();
    assert!((s[0] - 0.125).abs() < 1e-15);
    let h = step_values(Integrator::Heun, &mut f, &[0.0, 0.0], 0.5).unwrap();
    assert!((h[0] - 0.125).abs() > 1e-3);
}

#[test]
fn bad_ladders_are_rejected() {
    let mut f = |s: &[f64]| -> Result<Vec<f64>> { Ok(s.to_vec()) };
    assert!(global_errors(Integrator::Euler, &mut f, &[1.0], 1.0, &[1.0], &[0.3]).is_err());
    assert!(loglog_slope(&[0.1], &[1.0]).is_err());
    assert!(loglog_slope(&[0.1, 0.05], &[1.0, 0.0]).is_err());
}
