//! Baseline controllers: power-tracking torque law, gain-scheduled PI
//! collective pitch, and the generator-speed low-pass filter.
//!
//! Both controllers run at the 80 Hz sample rate on the *filtered*
//! generator speed. The pitch controller's proportional and integral gains
//! shrink with pitch angle through the schedule 1/(1 + β/β_k), the standard
//! compensation for the growing aerodynamic sensitivity at high pitch.

use serde::{Deserialize, Serialize};

use super::TurbineParams;

/// Power-tracking torque law: τ̂_gr = P_ref / max(ω̂_g, floor), clamped to
/// [0, τ_max]. The floor guards the singularity at standstill.
pub fn torque_controller(p_ref: f64, omega_g_filtered: f64, params: &TurbineParams) -> f64 {
    let omega = omega_g_filtered.max(params.torque_ctrl_speed_floor);
    (p_ref / omega).clamp(0.0, params.max_generator_torque)
}

/// One exact zero-order-hold step of the first-order generator-speed
/// low-pass filter with corner frequency `corner_hz`.
pub fn step_speed_filter(filtered: f64, raw: f64, corner_hz: f64, dt: f64) -> f64 {
    let pole = (-dt * std::f64::consts::TAU * corner_hz).exp();
    raw + (filtered - raw) * pole
}

/// Persistent state of the pitch PI controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchController {
    /// Integral term in degrees (already gain-weighted).
    pub integrator: f64,
    /// Pitch angle used for gain scheduling, degrees (previous command).
    pub schedule_pitch: f64,
}

impl PitchController {
    pub fn new(initial_pitch: f64) -> Self {
        PitchController {
            integrator: initial_pitch,
            schedule_pitch: initial_pitch,
        }
    }

    /// Scheduled gain factor 1/(1 + β/β_k).
    pub fn gain_factor(&self, params: &TurbineParams) -> f64 {
        1.0 / (1.0 + self.schedule_pitch.max(0.0) / params.pitch_gain_schedule_deg)
    }

    /// One 80 Hz update. `omega_g_filtered` and `omega_ref` are generator
    /// speeds in rad/s; returns the collective pitch command in degrees.
    ///
    /// Both the integral term and the output are clamped to [0°, 90°]
    /// (anti-windup), so the command can always be realized by the
    /// actuators.
    pub fn step(
        &mut self,
        omega_g_filtered: f64,
        omega_ref: f64,
        dt: f64,
        params: &TurbineParams,
    ) -> f64 {
        let gk = self.gain_factor(params);
        let kp = params.pitch_kp * gk;
        let ki = params.pitch_ki * gk;
        let error = omega_g_filtered - omega_ref;
        self.integrator = (self.integrator + ki * error * dt).clamp(0.0, 90.0);
        let cmd = (kp * error + self.integrator).clamp(0.0, 90.0);
        self.schedule_pitch = cmd;
        cmd
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> TurbineParams {
        TurbineParams::default()
    }

    #[test]
    fn torque_law_at_nominal_point() {
        // 5 MW at 122.91 rad/s is about 40 680 Nm.
        let tau = torque_controller(5.0e6, 122.91, &params());
        assert!((tau - 40_680.0).abs() < 1.0, "got {tau}");
    }

    #[test]
    fn torque_law_zero_power() {
        assert_eq!(torque_controller(0.0, 300.0, &params()), 0.0);
    }

    #[test]
    fn torque_law_floor_and_clamp() {
        // At standstill the floor takes over and the clamp saturates:
        // 5e6 / 1.0 = 5e6 Nm → clamped to τ_max.
        let p = params();
        assert_eq!(torque_controller(5.0e6, 0.0, &p), p.max_generator_torque);
    }

    #[test]
    fn pitch_zero_error_zero_integral_gives_zero() {
        let mut pc = PitchController::new(0.0);
        let cmd = pc.step(122.9096, 122.9096, 1.0 / 80.0, &params());
        assert_eq!(cmd, 0.0);
    }

    #[test]
    fn pitch_integral_accumulates_ki_e_t() {
        // Constant error held for T with frozen scheduling: the integral
        // term equals K_i·e·T within accumulation tolerance.
        let p = params();
        let mut pc = PitchController::new(0.0);
        let dt = 1.0 / 80.0;
        let e = 0.5; // rad/s overspeed
        let steps = 400; // T = 5 s
        let mut integral = 0.0_f64;
        for _ in 0..steps {
            // Freeze the schedule at zero pitch by resetting it each step.
            pc.schedule_pitch = 0.0;
            pc.step(100.0 + e, 100.0, dt, &p);
            integral += p.pitch_ki * e * dt;
        }
        let expected = p.pitch_ki * e * (steps as f64 * dt);
        assert!((integral - expected).abs() / expected < 1e-12);
        assert!(
            (pc.integrator - expected).abs() / expected < 1e-9,
            "integrator {} vs {}",
            pc.integrator,
            expected
        );
    }

    #[test]
    fn pitch_anti_windup_clamps() {
        let p = params();
        let mut pc = PitchController::new(0.0);
        // Enormous persistent overspeed: command and integrator must cap at 90°.
        for _ in 0..80 * 60 {
            pc.step(500.0, 122.9096, 1.0 / 80.0, &p);
        }
        assert!(pc.integrator <= 90.0);
        let cmd = pc.step(500.0, 122.9096, 1.0 / 80.0, &p);
        assert_eq!(cmd, 90.0);
        // ... and recovery from persistent underspeed pins at 0°.
        for _ in 0..80 * 600 {
            pc.step(0.0, 122.9096, 1.0 / 80.0, &p);
        }
        assert_eq!(pc.integrator, 0.0);
    }

    #[test]
    fn gain_schedule_halves_at_schedule_angle() {
        let p = params();
        let mut pc = PitchController::new(p.pitch_gain_schedule_deg);
        assert!((pc.gain_factor(&p) - 0.5).abs() < 1e-12);
        pc.schedule_pitch = 0.0;
        assert_eq!(pc.gain_factor(&p), 1.0);
    }

    #[test]
    fn speed_filter_converges_to_input() {
        let mut f = 0.0;
        for _ in 0..80 * 20 {
            f = step_speed_filter(f, 122.9, 0.25, 1.0 / 80.0);
        }
        assert!((f - 122.9).abs() < 1e-6);
    }
}
