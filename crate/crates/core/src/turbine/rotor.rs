//! One-degree-of-freedom drivetrain with an analytic power-coefficient
//! surface.
//!
//! The aerodynamic torque comes from the exponential-family approximation
//! C_p(λ, β) — a documented surrogate for aeroelastic rotor codes — and the
//! drivetrain is the rigid-shaft balance J ω̇_r = τ_aero − N τ_g. The C_p
//! coefficients are chosen so rated power is reached near the rated wind
//! speed at fine pitch, which is the operating knee the controllers care
//! about.

use crate::error::{Error, Result};

use super::{CpCoefficients, TurbineParams};

/// Power coefficient C_p(λ, β) with tip-speed ratio λ and pitch β in
/// degrees, clamped to [0, cp_max]. At full feather (β → 90°) the surface
/// is strongly negative before the clamp, so the clamped torque vanishes.
pub fn power_coefficient(lambda: f64, beta_deg: f64, c: &CpCoefficients) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    let beta = beta_deg.max(0.0);
    let inv_li = 1.0 / (lambda + 0.08 * beta) - 0.035 / (beta.powi(3) + 1.0);
    let cp = c.c1 * (c.c2 * inv_li - c.c3 * beta - c.c4) * (-c.c5 * inv_li).exp() + c.c6 * lambda;
    cp.clamp(0.0, c.cp_max)
}

/// Aerodynamic rotor torque in Nm: ½ ρ A v³ C_p(λ, β) / ω_r.
pub fn aero_torque(wind_speed: f64, omega_r: f64, beta_deg: f64, params: &TurbineParams) -> f64 {
    let r = params.rotor_radius();
    let area = std::f64::consts::PI * r * r;
    let lambda = omega_r * r / wind_speed;
    let cp = power_coefficient(lambda, beta_deg, &params.cp);
    0.5 * params.air_density * area * wind_speed.powi(3) * cp / omega_r
}

/// One RK4 step of J ω̇_r = τ_aero(v, ω_r, β) − N τ_g with wind speed,
/// collective pitch, and generator torque held constant over the step.
pub fn step_rotor(
    omega_r: f64,
    wind_speed: f64,
    beta_deg: f64,
    tau_g: f64,
    dt: f64,
    params: &TurbineParams,
) -> Result<f64> {
    if !(omega_r > 0.0) {
        return Err(Error::SimulationDiverged {
            run_id: String::new(),
            t: 0.0,
            detail: format!("rotor speed must stay positive, got {omega_r}"),
        });
    }
    if !(0.5..=40.0).contains(&wind_speed) {
        return Err(Error::invalid(format!(
            "wind speed {wind_speed} outside the supported [0.5, 40] m/s range"
        )));
    }
    let deriv = |w: f64| -> f64 {
        let w = w.max(1e-6);
        (aero_torque(wind_speed, w, beta_deg, params) - params.gearbox_ratio * tau_g)
            / params.rotor_inertia
    };
    let k1 = deriv(omega_r);
    let k2 = deriv(omega_r + 0.5 * dt * k1);
    let k3 = deriv(omega_r + 0.5 * dt * k2);
    let k4 = deriv(omega_r + dt * k3);
    Ok(omega_r + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// Collective pitch angle at which the rotor torque balances the generator
/// load for the given wind speed at nominal rotor speed, found by bisection.
/// Used to start runs near equilibrium so the regulation transient is short.
pub fn equilibrium_pitch(wind_speed: f64, params: &TurbineParams) -> f64 {
    let omega_r = params.nominal_generator_speed() / params.gearbox_ratio;
    let tau_g = params.rated_power / params.nominal_generator_speed();
    let net = |beta: f64| aero_torque(wind_speed, omega_r, beta, params) - params.gearbox_ratio * tau_g;
    // Net torque decreases with pitch; bracket the zero in [0°, 45°].
    if net(0.0) <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 45.0);
    if net(hi) > 0.0 {
        return hi;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if net(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
