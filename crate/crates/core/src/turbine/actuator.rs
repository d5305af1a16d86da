//! Generator/converter and hydraulic pitch-actuator dynamics.
//!
//! The generator/converter is the first-order lag
//! τ̇_g + α τ_g = α τ̂_gr (equal coefficients give unit DC gain), stepped
//! with the exact zero-order-hold solution so the response matches the
//! analytic exponential to machine precision. The pitch actuator is the
//! second-order system β̈ + 2ζω_n β̇ + ω_n² β = ω_n² β̂_c, stepped with
//! classical fourth-order Runge–Kutta.

use crate::error::{Error, Result};

/// One exact zero-order-hold step of the generator/converter lag.
///
/// For constant reference over the step, the solution of
/// τ̇_g = α (τ̂_gr − τ_g) is τ̂_gr + (τ_g − τ̂_gr) e^(−α dt).
pub fn step_generator(tau_g: f64, tau_ref: f64, alpha: f64, dt: f64) -> f64 {
    tau_ref + (tau_g - tau_ref) * (-alpha * dt).exp()
}

/// One RK4 step of the pitch actuator for a single blade.
///
/// State is (β, β̇) in degrees and deg/s; `beta_cmd` is held constant over
/// the step (sample-and-hold from the 80 Hz controller).
pub fn step_pitch_actuator(
    beta: f64,
    beta_dot: f64,
    beta_cmd: f64,
    zeta: f64,
    omega_n: f64,
    dt: f64,
) -> Result<(f64, f64)> {
    if !(zeta > 0.0) {
        return Err(Error::invalid(format!("pitch damping must be > 0, got {zeta}")));
    }
    if !(omega_n > 0.0) {
        return Err(Error::invalid(format!("pitch natural frequency must be > 0, got {omega_n}")));
    }
    let accel = |b: f64, bd: f64| -> f64 {
        omega_n * omega_n * (beta_cmd - b) - 2.0 * zeta * omega_n * bd
    };
    let (k1b, k1d) = (beta_dot, accel(beta, beta_dot));
    let (k2b, k2d) = (
        beta_dot + 0.5 * dt * k1d,
        accel(beta + 0.5 * dt * k1b, beta_dot + 0.5 * dt * k1d),
    );
    let (k3b, k3d) = (
        beta_dot + 0.5 * dt * k2d,
        accel(beta + 0.5 * dt * k2b, beta_dot + 0.5 * dt * k2d),
    );
    let (k4b, k4d) = (beta_dot + dt * k3d, accel(beta + dt * k3b, beta_dot + dt * k3d));
    Ok((
        beta + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b),
        beta_dot + dt / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d),
    ))
}

/// Analytic unit-step response of the underdamped second-order actuator:
/// β(t) for β̂_c = `cmd`, zero initial conditions. Valid for ζ < 1.
pub fn pitch_step_response_analytic(cmd: f64, zeta: f64, omega_n: f64, t: f64) -> f64 {
    let wd = omega_n * (1.0 - zeta * zeta).sqrt();
    let decay = (-zeta * omega_n * t).exp();
    cmd * (1.0 - decay * ((wd * t).cos() + zeta * omega_n / wd * (wd * t).sin()))
}

/// 10–90% rise time of the unit step response, found by bisection on the
/// analytic solution (first crossing of each level).
pub fn rise_time_10_90(zeta: f64, omega_n: f64) -> f64 {
    let crossing = |level: f64| -> f64 {
        // March until the response first reaches the level, then bisect.
        let dt = 1e-3 / omega_n;
        let mut t = 0.0;
        while pitch_step_response_analytic(1.0, zeta, omega_n, t) < level {
            t += dt;
        }
        let (mut lo, mut hi) = ((t - dt).max(0.0), t);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if pitch_step_response_analytic(1.0, zeta, omega_n, mid) < level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    crossing(0.9) - crossing(0.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DT_80: f64 = 1.0 / 80.0;
    const DT_160: f64 = 1.0 / 160.0;

    #[test]
    fn generator_fixed_point() {
        // Equal torque and reference: derivative is zero, state unchanged.
        assert_eq!(step_generator(40_000.0, 40_000.0, 50.0, DT_80), 40_000.0);
    }

    #[test]
    fn generator_decay_matches_exponential() {
        // τ_g(0) = 1000, reference 0: τ_g(t) = 1000 e^(−50 t).
        let mut tau = 1000.0;
        let steps = (0.1 / DT_80).round() as usize;
        for _ in 0..steps {
            tau = step_generator(tau, 0.0, 50.0, DT_80);
        }
        let exact = 1000.0 * (-50.0_f64 * 0.1).exp();
        assert!(
            ((tau - exact) / exact).abs() <= 1e-6,
            "relative error {} above 1e-6",
            ((tau - exact) / exact).abs()
        );
    }

    #[test]
    fn generator_step_response_matches_closed_form() {
        // Reference steps 0 → 40000: τ_g(t) = 40000 (1 − e^(−50 t)).
        let mut tau = 0.0;
        let mut t = 0.0;
        for _ in 0..80 {
            tau = step_generator(tau, 40_000.0, 50.0, DT_80);
            t += DT_80;
            let exact = 40_000.0 * (1.0 - (-50.0 * t).exp());
            assert!(((tau - exact) / exact).abs() <= 1e-6);
        }
    }

    #[test]
    fn pitch_dc_gain_is_unity() {
        // Constant command 10°: β settles at 10° (unit DC gain).
        let (mut b, mut bd) = (0.0, 0.0);
        for _ in 0..(20.0 / DT_160) as usize {
            (b, bd) = step_pitch_actuator(b, bd, 10.0, 0.7, 11.11, DT_160).unwrap();
        }
        assert!((b - 10.0).abs() < 1e-9, "settled at {b}");
        assert!(bd.abs() < 1e-9);
    }

    #[test]
    fn pitch_step_matches_analytic_solution() {
        // Nominal parameters, 10° step: every 80 Hz sample within 1e-3 abs.
        let (zeta, wn) = (0.7, 11.11);
        let (mut b, mut bd) = (0.0, 0.0);
        for k in 1..=400 {
            for _ in 0..2 {
                (b, bd) = step_pitch_actuator(b, bd, 10.0, zeta, wn, DT_160).unwrap();
            }
            let t = k as f64 * DT_80;
            let exact = pitch_step_response_analytic(10.0, zeta, wn, t);
            assert!(
                (b - exact).abs() <= 1e-3,
                "t={t}: |{b} - {exact}| = {} above 1e-3",
                (b - exact).abs()
            );
        }
    }

    #[test]
    fn degraded_actuator_rises_slower() {
        // High-air-content parameters respond strictly slower than nominal.
        let nominal = rise_time_10_90(0.7, 11.11);
        let degraded = rise_time_10_90(0.45, 5.73);
        assert!(
            degraded > nominal,
            "degraded rise time {degraded} not greater than nominal {nominal}"
        );
    }

    #[test]
    fn invalid_actuator_params_rejected() {
        assert!(step_pitch_actuator(0.0, 0.0, 1.0, 0.0, 11.11, DT_160).is_err());
        assert!(step_pitch_actuator(0.0, 0.0, 1.0, 0.7, -1.0, DT_160).is_err());
    }

    proptest! {
        /// The exact generator step matches the closed-form solution for
        /// arbitrary states, references, and step sizes in range.
        #[test]
        fn generator_step_is_exact(
            tau in -1.0e5_f64..1.0e5,
            tau_ref in -1.0e5_f64..1.0e5,
            dt in 1.0e-4_f64..0.05,
        ) {
            let stepped = step_generator(tau, tau_ref, 50.0, dt);
            let exact = tau_ref + (tau - tau_ref) * (-50.0 * dt).exp();
            prop_assert_eq!(stepped, exact);
        }

        /// RK4 keeps the pitch actuator near the analytic solution from
        /// arbitrary quiescent commands.
        #[test]
        fn pitch_rk4_tracks_analytic(cmd in 0.1_f64..45.0) {
            let (mut b, mut bd) = (0.0, 0.0);
            for _ in 0..160 {
                (b, bd) = step_pitch_actuator(b, bd, cmd, 0.7, 11.11, DT_160).unwrap();
            }
            let exact = pitch_step_response_analytic(cmd, 0.7, 11.11, 1.0);
            prop_assert!((b - exact).abs() <= 1e-3 * cmd.max(1.0));
        }
    }
}
