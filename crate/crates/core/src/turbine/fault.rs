//! Fault scenarios and their injection point.
//!
//! Three families, kept strictly separate so a fault never leaks across its
//! family boundary:
//!
//! * **Actuator parameter faults** (hydraulic degradation) override the
//!   pitch damping and natural frequency on all three blades while active;
//!   the sensor pipeline stays the identity.
//! * **Sensor faults** transform only the reported readings — a gain on the
//!   generator-side speed encoder or a frozen pitch channel. The internal
//!   state trajectory is bit-identical to the healthy run under the same
//!   wind, because the controllers read the true state.
//! * **Torque actuator fault** adds a constant offset to the torque command
//!   entering the converter, perturbing the state but not the sensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition label of a run: healthy or one of seven faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Healthy,
    /// High air content in the hydraulic oil: ζ = 0.45, ω_n = 5.73 rad/s.
    F1HighAir,
    /// Pump wear: ζ = 0.75, ω_n = 7.27 rad/s.
    F2PumpWear,
    /// Hydraulic leakage: ζ = 0.9, ω_n = 3.42 rad/s.
    F3HydraulicLeak,
    /// Generator speed sensor gain factor 1.2.
    F4GenSpeedGain,
    /// Pitch-angle sensor stuck at 10°.
    F5PitchFixed10,
    /// Pitch-angle sensor stuck at 5°.
    F6PitchFixed5,
    /// Constant 2000 Nm offset on the converter torque input.
    F7TorqueOffset,
}

impl FaultKind {
    /// All kinds in label order.
    pub const ALL: [FaultKind; 8] = [
        FaultKind::Healthy,
        FaultKind::F1HighAir,
        FaultKind::F2PumpWear,
        FaultKind::F3HydraulicLeak,
        FaultKind::F4GenSpeedGain,
        FaultKind::F5PitchFixed10,
        FaultKind::F6PitchFixed5,
        FaultKind::F7TorqueOffset,
    ];

    /// Class label, 0 for healthy through 7.
    pub fn label(&self) -> u8 {
        Self::ALL.iter().position(|k| k == self).unwrap() as u8
    }

    pub fn from_label(label: u8) -> Result<Self> {
        Self::ALL
            .get(label as usize)
            .copied()
            .ok_or_else(|| Error::invalid(format!("label {label} out of range 0..=7")))
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FaultKind::Healthy => "healthy",
            FaultKind::F1HighAir => "f1",
            FaultKind::F2PumpWear => "f2",
            FaultKind::F3HydraulicLeak => "f3",
            FaultKind::F4GenSpeedGain => "f4",
            FaultKind::F5PitchFixed10 => "f5",
            FaultKind::F6PitchFixed5 => "f6",
            FaultKind::F7TorqueOffset => "f7",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .iter()
            .find(|k| k.as_str() == lower)
            .copied()
            .ok_or_else(|| {
                Error::invalid(format!("unknown scenario '{s}' (expected healthy or f1..f7)"))
            })
    }
}

impl std::fmt::Display for FaultKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fault kind plus its activation window and parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    pub kind: FaultKind,
    /// Seconds within the run during which the fault is active
    /// (`None` = the entire run).
    pub active_interval: Option<(f64, f64)>,
    /// Actuator damping override (F1–F3).
    pub pitch_zeta: Option<f64>,
    /// Actuator natural-frequency override in rad/s (F1–F3).
    pub pitch_omega_n: Option<f64>,
    /// Speed-sensor gain (F4).
    pub sensor_gain: Option<f64>,
    /// Frozen pitch-channel value in degrees (F5/F6).
    pub fixed_pitch_value: Option<f64>,
    /// Converter input offset in Nm (F7).
    pub torque_offset: Option<f64>,
    /// Which blade's sensor channel the fixed-value faults freeze (0-based).
    pub faulty_pitch_channel: usize,
}

impl FaultScenario {
    /// The scenario with its standard parameter values, active for the
    /// whole run.
    pub fn standard(kind: FaultKind) -> Self {
        let mut s = FaultScenario {
            kind,
            active_interval: None,
            pitch_zeta: None,
            pitch_omega_n: None,
            sensor_gain: None,
            fixed_pitch_value: None,
            torque_offset: None,
            faulty_pitch_channel: 0,
        };
        match kind {
            FaultKind::Healthy => {}
            FaultKind::F1HighAir => {
                s.pitch_zeta = Some(0.45);
                s.pitch_omega_n = Some(5.73);
            }
            FaultKind::F2PumpWear => {
                s.pitch_zeta = Some(0.75);
                s.pitch_omega_n = Some(7.27);
            }
            FaultKind::F3HydraulicLeak => {
                s.pitch_zeta = Some(0.9);
                s.pitch_omega_n = Some(3.42);
            }
            FaultKind::F4GenSpeedGain => s.sensor_gain = Some(1.2),
            FaultKind::F5PitchFixed10 => s.fixed_pitch_value = Some(10.0),
            FaultKind::F6PitchFixed5 => s.fixed_pitch_value = Some(5.0),
            FaultKind::F7TorqueOffset => s.torque_offset = Some(2000.0),
        }
        s
    }

    /// Exactly the fields relevant to the kind must be present.
    pub fn validate(&self, duration_s: f64) -> Result<()> {
        use FaultKind::*;
        let expect = |cond: bool, what: &str| -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::invalid(format!("scenario {}: {what}", self.kind)))
            }
        };
        let actuator = self.pitch_zeta.is_some() || self.pitch_omega_n.is_some();
        match self.kind {
            Healthy => {
                expect(
                    !actuator
                        && self.sensor_gain.is_none()
                        && self.fixed_pitch_value.is_none()
                        && self.torque_offset.is_none(),
                    "healthy must carry no overrides",
                )?;
            }
            F1HighAir | F2PumpWear | F3HydraulicLeak => {
                expect(
                    self.pitch_zeta.is_some() && self.pitch_omega_n.is_some(),
                    "actuator fault needs both zeta and omega_n",
                )?;
                expect(
                    self.sensor_gain.is_none()
                        && self.fixed_pitch_value.is_none()
                        && self.torque_offset.is_none(),
                    "actuator fault must not carry sensor or torque fields",
                )?;
            }
            F4GenSpeedGain => {
                expect(self.sensor_gain.is_some(), "needs sensor_gain")?;
                expect(
                    !actuator && self.fixed_pitch_value.is_none() && self.torque_offset.is_none(),
                    "gain fault carries only sensor_gain",
                )?;
            }
            F5PitchFixed10 | F6PitchFixed5 => {
                expect(self.fixed_pitch_value.is_some(), "needs fixed_pitch_value")?;
                expect(
                    !actuator && self.sensor_gain.is_none() && self.torque_offset.is_none(),
                    "fixed-value fault carries only fixed_pitch_value",
                )?;
                expect(self.faulty_pitch_channel < 3, "pitch channel must be 0..3")?;
            }
            F7TorqueOffset => {
                expect(self.torque_offset.is_some(), "needs torque_offset")?;
                expect(
                    !actuator && self.sensor_gain.is_none() && self.fixed_pitch_value.is_none(),
                    "torque fault carries only torque_offset",
                )?;
            }
        }
        if let Some((a, b)) = self.active_interval {
            if !(0.0 <= a && a <= b && b <= duration_s) {
                return Err(Error::invalid(format!(
                    "active_interval [{a}, {b}] outside [0, {duration_s}]"
                )));
            }
        }
        Ok(())
    }

    /// Whether the fault is active at time `t`.
    pub fn active_at(&self, t: f64) -> bool {
        if self.kind == FaultKind::Healthy {
            return false;
        }
        match self.active_interval {
            None => true,
            Some((a, b)) => (a..=b).contains(&t),
        }
    }
}

/// Sensor readings before or after fault transformation. The rotor-speed
/// reading is derived from the generator-side encoder (reading / gearbox
/// ratio), so a speed-sensor gain shows up on both fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReadings {
    /// Generator speed in rad/s.
    pub generator_speed: f64,
    /// Rotor speed in rad/s (generator encoder reading over the ratio).
    pub rotor_speed: f64,
    /// Generator torque in Nm.
    pub generator_torque: f64,
    /// Blade pitch angles in degrees.
    pub pitch: [f64; 3],
}

/// Effective plant-side parameters after actuator faults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveActuation {
    /// Pitch damping applied to all three blades.
    pub pitch_zeta: f64,
    /// Pitch natural frequency in rad/s.
    pub pitch_omega_n: f64,
    /// Offset added to the torque command entering the converter, Nm.
    pub torque_offset: f64,
}

/// Apply a fault at time `t`: sensor faults transform only the readings,
/// actuator faults only the effective parameters. Healthy is the identity.
pub fn apply_fault(
    readings: &SensorReadings,
    nominal_zeta: f64,
    nominal_omega_n: f64,
    scenario: &FaultScenario,
    t: f64,
) -> (SensorReadings, EffectiveActuation) {
    let mut out = *readings;
    let mut eff = EffectiveActuation {
        pitch_zeta: nominal_zeta,
        pitch_omega_n: nominal_omega_n,
        torque_offset: 0.0,
    };
    if !scenario.active_at(t) {
        return (out, eff);
    }
    match scenario.kind {
        FaultKind::Healthy => {}
        FaultKind::F1HighAir | FaultKind::F2PumpWear | FaultKind::F3HydraulicLeak => {
            eff.pitch_zeta = scenario.pitch_zeta.expect("validated");
            eff.pitch_omega_n = scenario.pitch_omega_n.expect("validated");
        }
        FaultKind::F4GenSpeedGain => {
            let g = scenario.sensor_gain.expect("validated");
            out.generator_speed = g * out.generator_speed;
            out.rotor_speed = g * out.rotor_speed;
        }
        FaultKind::F5PitchFixed10 | FaultKind::F6PitchFixed5 => {
            out.pitch[scenario.faulty_pitch_channel] = scenario.fixed_pitch_value.expect("validated");
        }
        FaultKind::F7TorqueOffset => {
            eff.torque_offset = scenario.torque_offset.expect("validated");
        }
    }
    (out, eff)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn readings() -> SensorReadings {
        SensorReadings {
            generator_speed: 100.0,
            rotor_speed: 100.0 / 98.0,
            generator_torque: 40_000.0,
            pitch: [12.0, 12.5, 11.8],
        }
    }

    #[test]
    fn healthy_is_identity() {
        let s = FaultScenario::standard(FaultKind::Healthy);
        let (r, eff) = apply_fault(&readings(), 0.7, 11.11, &s, 30.0);
        assert_eq!(r, readings());
        assert_eq!(eff.pitch_zeta, 0.7);
        assert_eq!(eff.pitch_omega_n, 11.11);
        assert_eq!(eff.torque_offset, 0.0);
    }

    #[test]
    fn f4_scales_speed_reading_only() {
        let s = FaultScenario::standard(FaultKind::F4GenSpeedGain);
        let (r, eff) = apply_fault(&readings(), 0.7, 11.11, &s, 1.0);
        assert!((r.generator_speed - 120.0).abs() < 1e-12);
        assert_eq!(r.generator_speed, 1.2 * readings().generator_speed);
        assert_eq!(r.rotor_speed, 1.2 * readings().rotor_speed);
        assert_eq!(r.generator_torque, readings().generator_torque);
        assert_eq!(r.pitch, readings().pitch);
        // actuator side untouched
        assert_eq!(eff.pitch_zeta, 0.7);
        assert_eq!(eff.torque_offset, 0.0);
    }

    #[test]
    fn f1_overrides_params_sensor_identity() {
        let s = FaultScenario::standard(FaultKind::F1HighAir);
        let (r, eff) = apply_fault(&readings(), 0.7, 11.11, &s, 1.0);
        assert_eq!(r, readings());
        assert_eq!(eff.pitch_zeta, 0.45);
        assert_eq!(eff.pitch_omega_n, 5.73);
    }

    #[test]
    fn f5_f6_freeze_the_configured_channel() {
        for (kind, value) in [(FaultKind::F5PitchFixed10, 10.0), (FaultKind::F6PitchFixed5, 5.0)] {
            let s = FaultScenario::standard(kind);
            let (r, _) = apply_fault(&readings(), 0.7, 11.11, &s, 1.0);
            assert_eq!(r.pitch[0], value);
            assert_eq!(r.pitch[1], readings().pitch[1]);
            assert_eq!(r.pitch[2], readings().pitch[2]);
        }
    }

    #[test]
    fn f7_only_offsets_torque_command() {
        let s = FaultScenario::standard(FaultKind::F7TorqueOffset);
        let (r, eff) = apply_fault(&readings(), 0.7, 11.11, &s, 1.0);
        assert_eq!(r, readings());
        assert_eq!(eff.torque_offset, 2000.0);
    }

    #[test]
    fn interval_bounds_respected() {
        let mut s = FaultScenario::standard(FaultKind::F4GenSpeedGain);
        s.active_interval = Some((10.0, 20.0));
        s.validate(60.0).unwrap();
        let (before, _) = apply_fault(&readings(), 0.7, 11.11, &s, 5.0);
        let (during, _) = apply_fault(&readings(), 0.7, 11.11, &s, 15.0);
        let (after, _) = apply_fault(&readings(), 0.7, 11.11, &s, 25.0);
        assert_eq!(before, readings());
        assert_ne!(during, readings());
        assert_eq!(after, readings());
        s.active_interval = Some((10.0, 80.0));
        assert!(s.validate(60.0).is_err());
    }

    #[test]
    fn validation_rejects_cross_family_fields() {
        let mut s = FaultScenario::standard(FaultKind::Healthy);
        s.sensor_gain = Some(1.2);
        assert!(s.validate(60.0).is_err());
        let mut s = FaultScenario::standard(FaultKind::F1HighAir);
        s.torque_offset = Some(1.0);
        assert!(s.validate(60.0).is_err());
        let mut s = FaultScenario::standard(FaultKind::F5PitchFixed10);
        s.faulty_pitch_channel = 3;
        assert!(s.validate(60.0).is_err());
        for kind in FaultKind::ALL {
            FaultScenario::standard(kind).validate(60.0).unwrap();
        }
    }

    #[test]
    fn labels_round_trip() {
        for (i, kind) in FaultKind::ALL.iter().enumerate() {
            assert_eq!(kind.label() as usize, i);
            assert_eq!(FaultKind::from_label(i as u8).unwrap(), *kind);
            assert_eq!(FaultKind::parse(kind.as_str()).unwrap(), *kind);
        }
        assert!(FaultKind::from_label(8).is_err());
        assert!(FaultKind::parse("f9").is_err());
    }
}
