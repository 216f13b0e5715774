//! Exact solution of the one-dimensional Riemann problem for an ideal gas.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub rho: f64,
    pub u: f64,
    pub p: f64,
}

impl Primitive {
    pub fn sound_speed(&self, gamma: f64) -> f64 {
        (gamma * self.p / self.rho).sqrt()
    }
}

/// Left or right nonlinear wave of the solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Wave {
    Shock { speed: f64 },
    Rarefaction { head: f64, tail: f64 },
}

impl Wave {
    pub fn max_abs_speed(&self) -> f64 {
        match *self {
            Wave::Shock { speed } => speed.abs(),
            Wave::Rarefaction { head, tail } => head.abs().max(tail.abs()),
        }
    }
}

/// Self-similar solution sampled at `ξ = (x − x_D) / t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannSolution {
    pub left: Primitive,
    pub right: Primitive,
    pub gamma: f64,
    pub p_star: f64,
    pub u_star: f64,
    pub rho_star_left: f64,
    pub rho_star_right: f64,
    pub left_wave: Wave,
    pub right_wave: Wave,
    pub iterations: usize,
}

const TOL: f64 = 1e-12;
const MAX_ITER: usize = 100;

/// `f_K(p)` and its derivative for one side.
fn pressure_function(p: f64, s: &Primitive, gamma: f64) -> (f64, f64) {
    let a = s.sound_speed(gamma);
    if p > s.p {
        let ak = 2.0 / ((gamma + 1.0) * s.rho);
        let bk = (gamma - 1.0) / (gamma + 1.0) * s.p;
        let q = (ak / (p + bk)).sqrt();
        ((p - s.p) * q, q * (1.0 - 0.5 * (p - s.p) / (bk + p)))
    } else {
        let e = (gamma - 1.0) / (2.0 * gamma);
        let r = p / s.p;
        (
            2.0 * a / (gamma - 1.0) * (r.powf(e) - 1.0),
            r.powf(-(gamma + 1.0) / (2.0 * gamma)) / (s.rho * a),
        )
    }
}

pub fn solve_riemann(left: Primitive, right: Primitive, gamma: f64) -> Result<RiemannSolution> {
    for s in [&left, &right] {
        if !(s.rho > 0.0 && s.p > 0.0) || !s.u.is_finite() {
            return Err(invalid(format!("Riemann states need positive density and pressure: {s:?}")));
        }
    }
    if !(gamma > 1.0) {
        return Err(invalid(format!("gamma must exceed 1, got {gamma}")));
    }
    let (al, ar) = (left.sound_speed(gamma), right.sound_speed(gamma));
    let du = right.u - left.u;
    if 2.0 * (al + ar) / (gamma - 1.0) <= du {
        return Err(Error::Oracle("initial states generate a vacuum".into()));
    }
    // two-rarefaction guess
    let e = (gamma - 1.0) / (2.0 * gamma);
    let mut p = ((al + ar - 0.5 * (gamma - 1.0) * du) / (al / left.p.powf(e) + ar / right.p.powf(e))).powf(1.0 / e);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let (fl, dl) = pressure_function(p, &left, gamma);
        let (fr, dr) = pressure_function(p, &right, gamma);
        let next = (p - (fl + fr + du) / (dl + dr)).max(TOL * p);
        let change = 2.0 * (next - p).abs() / (next + p);
        p = next;
        if change < TOL {
            break;
        }
        if iterations >= MAX_ITER || !p.is_finite() {
            return Err(Error::Oracle(format!(
                "star pressure did not converge in {MAX_ITER} iterations"
            )));
        }
    }
    let (fl, _) = pressure_function(p, &left, gamma);
    let (fr, _) = pressure_function(p, &right, gamma);
    let u_star = 0.5 * (left.u + right.u) + 0.5 * (fr - fl);
    let g = (gamma - 1.0) / (gamma + 1.0);
    let star_density = |s: &Primitive| {
        if p > s.p {
            s.rho * (p / s.p + g) / (g * p / s.p + 1.0)
        } else {
            s.rho * (p / s.p).powf(1.0 / gamma)
        }
    };
    let rho_star_left = star_density(&left);
    let rho_star_right = star_density(&right);
    let shock_factor = |s: &Primitive| ((gamma + 1.0) / (2.0 * gamma) * p / s.p + (gamma - 1.0) / (2.0 * gamma)).sqrt();
    let left_wave = if p > left.p {
        Wave::Shock {
            speed: left.u - al * shock_factor(&left),
        }
    } else {
        Wave::Rarefaction {
            head: left.u - al,
            tail: u_star - al * (p / left.p).powf(e),
        }
    };
    let right_wave = if p > right.p {
        Wave::Shock {
            speed: right.u + ar * shock_factor(&right),
        }
    } else {
        Wave::Rarefaction {
            head: right.u + ar,
            tail: u_star + ar * (p / right.p).powf(e),
        }
    };
    Ok(RiemannSolution {
        left,
        right,
        gamma,
        p_star: p,
        u_star,
        rho_star_left,
        rho_star_right,
        left_wave,
        right_wave,
        iterations,
    })
}

impl RiemannSolution {
    /// Largest absolute signal speed of the solution.
    pub fn max_wave_speed(&self) -> f64 {
        self.left_wave
            .max_abs_speed()
            .max(self.right_wave.max_abs_speed())
            .max(self.u_star.abs())
    }

    /// State at offset `x` from the diaphragm at time `t ≥ 0`.
    pub fn sample(&self, x: f64, t: f64) -> Primitive {
        if t <= 0.0 {
            return if x < 0.0 { self.left } else { self.right };
        }
        let xi = x / t;
        let gamma = self.gamma;
        let gm = gamma - 1.0;
        let gp = gamma + 1.0;
        if xi < self.u_star {
            let s = self.left;
            match self.left_wave {
                Wave::Shock { speed } => {
                    if xi < speed {
                        s
                    } else {
                        self.star(self.rho_star_left)
                    }
                }
                Wave::Rarefaction { head, tail } => {
                    if xi < head {
                        s
                    } else if xi > tail {
                        self.star(self.rho_star_left)
                    } else {
                        let a = s.sound_speed(gamma);
                        let c = 2.0 / gp + gm / (gp * a) * (s.u - xi);
                        Primitive {
                            rho: s.rho * c.powf(2.0 / gm),
                            u: 2.0 / gp * (a + 0.5 * gm * s.u + xi),
                            p: s.p * c.powf(2.0 * gamma / gm),
                        }
                    }
                }
            }
        } else {
            let s = self.right;
            match self.right_wave {
                Wave::Shock { speed } => {
                    if xi > speed {
                        s
                    } else {
                        self.star(self.rho_star_right)
                    }
                }
                Wave::Rarefaction { head, tail } => {
                    if xi > head {
                        s
                    } else if xi < tail {
                        self.star(self.rho_star_right)
                    } else {
                        let a = s.sound_speed(gamma);
                        let c = 2.0 / gp - gm / (gp * a) * (s.u - xi);
                        Primitive {
                            rho: s.rho * c.powf(2.0 / gm),
                            u: 2.0 / gp * (-a + 0.5 * gm * s.u + xi),
                            p: s.p * c.powf(2.0 * gamma / gm),
                        }
                    }
                }
            }
        }
    }

    fn star(&self, rho: f64) -> Primitive {
        Primitive {
            rho,
            u: self.u_star,
            p: self.p_star,
        }
    }
}

/// Shock-tube problem with fixed left/right ratios and gas at rest.
pub fn sod_problem(p_left: f64, rho_left: f64, p_ratio: f64, rho_ratio: f64, gamma: f64) -> Result<RiemannSolution> {
    solve_riemann(
        Primitive {
            rho: rho_left,
            u: 0.0,
            p: p_left,
        },
        Primitive {
            rho: rho_left / rho_ratio,
            u: 0.0,
            p: p_left / p_ratio,
        },
        gamma,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: f64 = 1.4;

    fn conserved(s: Primitive) -> [f64; 3] {
        [s.rho, s.rho * s.u, s.p / (G - 1.0) + 0.5 * s.rho * s.u * s.u]
    }

    fn flux(s: Primitive) -> [f64; 3] {
        let e = conserved(s)[2];
        [s.rho * s.u, s.rho * s.u * s.u + s.p, s.u * (e + s.p)]
    }

    #[test]
    fn classic_sod_star_state() {
        let sol = sod_problem(1.0, 1.0, 10.0, 8.0, G).unwrap();
        assert!((sol.p_star - 0.30313).abs() < 1e-5);
        assert!((sol.u_star - 0.92745).abs() < 1e-5);
        assert!((sol.rho_star_left - 0.42632).abs() < 1e-5);
        assert!((sol.rho_star_right - 0.26557).abs() < 1e-5);
        assert!(sol.iterations <= 100);
    }

    #[test]
    fn initial_condition_at_time_zero() {
        let sol = sod_problem(1e5, 1.0, 10.0, 8.0, G).unwrap();
        assert_eq!(sol.sample(-0.1, 0.0), sol.left);
        assert_eq!(sol.sample(0.1, 0.0), sol.right);
    }

    #[test]
    fn contact_continuity_and_rankine_hugoniot() {
        let sol = sod_problem(143_750.0, 0.5625, 10.0, 8.0, G).unwrap();
        let t = 1e-4;
        let eps = 1e-9;
        let a = sol.sample((sol.u_star - eps) * t, t);
        let b = sol.sample((sol.u_star + eps) * t, t);
        assert!((a.p - b.p).abs() < 1e-10 * sol.p_star);
        assert!((a.u - b.u).abs() < 1e-10 * sol.u_star.abs());
        let Wave::Shock { speed } = sol.right_wave else {
            panic!("right wave must be a shock");
        };
        let pre = sol.right;
        let post = sol.sample((speed - eps) * t, t);
        let (up, uq) = (conserved(pre), conserved(post));
        let (fp, fq) = (flux(pre), flux(post));
        for k in 0..3 {
            let residual = (fq[k] - fp[k]) - speed * (uq[k] - up[k]);
            let scale = fq[k].abs().max(fp[k].abs()).max(speed.abs() * uq[k].abs());
            assert!(residual.abs() < 1e-10 * scale, "component {k}: {residual}");
        }
    }

    #[test]
    fn rarefaction_is_continuous_at_its_edges() {
        let sol = sod_problem(1.0, 1.0, 10.0, 8.0, G).unwrap();
        let Wave::Rarefaction { head, tail } = sol.left_wave else {
            panic!("left wave must be a rarefaction");
        };
        let eps = 1e-10;
        let a = sol.sample(head - eps, 1.0);
        let b = sol.sample(head + eps, 1.0);
        assert!((a.rho - b.rho).abs() < 1e-8);
        let c = sol.sample(tail - eps, 1.0);
        let d = sol.sample(tail + eps, 1.0);
        assert!((c.rho - d.rho).abs() < 1e-8 && (c.p - d.p).abs() < 1e-8);
    }

    #[test]
    fn shock_speed_ratio_for_these_ratios() {
        let sol = sod_problem(1e5, 1.0, 10.0, 8.0, G).unwrap();
        let ratio = sol.max_wave_speed() / sol.left.sound_speed(G);
        assert!((ratio - 1.4810).abs() < 1e-3, "{ratio}");
    }
}
