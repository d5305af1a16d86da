//! The assembled closed loop: plant, controllers, fault injection, and
//! 80 Hz sensor sampling.
//!
//! Each 80 Hz cycle records the (possibly fault-transformed) sensor row,
//! updates the speed filter and both controllers on the *true* state, then
//! integrates the plant through two 1/160 s substeps. Controllers are
//! sample-and-hold across the substeps. Everything is a pure function of
//! (params, scenario, wind), so repeated runs are bit-identical.

use ndarray::Array2;

use crate::error::{Error, Result};

use super::actuator::{step_generator, step_pitch_actuator};
use super::control::{step_speed_filter, torque_controller, PitchController};
use super::fault::{apply_fault, FaultScenario, SensorReadings};
use super::rotor::{equilibrium_pitch, step_rotor};
use super::trace::SensorTrace;
use super::wind::WindProfile;
use super::{TurbineParams, TurbineState, N_CHANNELS, SAMPLE_RATE_HZ, SUBSTEPS_PER_SAMPLE};

/// What one 80 Hz cycle produced: the recorded row plus the commands that
/// drove the plant (useful for fault-injection checks).
#[derive(Debug, Clone, Copy)]
pub struct SampleOutput {
    /// Recorded sensor row in channel order.
    pub row: [f64; N_CHANNELS],
    /// Torque reference produced by the controller, Nm.
    pub torque_reference: f64,
    /// Torque command entering the converter (reference + fault offset), Nm.
    pub converter_input: f64,
    /// Collective pitch command, degrees.
    pub pitch_command: f64,
}

/// A finished run: the recorded trace plus the final plant state (used to
/// verify that sensor faults leave the state trajectory untouched).
#[derive(Debug, Clone)]
pub struct SimRun {
    pub trace: SensorTrace,
    pub final_state: TurbineState,
}

/// Step-by-step closed-loop simulator.
pub struct ClosedLoopSim {
    params: TurbineParams,
    scenario: FaultScenario,
    wind: Vec<f64>,
    run_id: String,
    state: TurbineState,
    pitch_ctrl: PitchController,
    sample_idx: usize,
    dt_sample: f64,
    dt_sub: f64,
}

impl ClosedLoopSim {
    /// Build a simulator. The wind profile must be sampled at the internal
    /// substep rate (160 Hz) and is consumed two samples per cycle.
    pub fn new(
        params: TurbineParams,
        scenario: FaultScenario,
        wind: &WindProfile,
        run_id: impl Into<String>,
    ) -> Result<Self> {
        params.validate()?;
        let dt_sample = 1.0 / SAMPLE_RATE_HZ;
        let dt_sub = dt_sample / SUBSTEPS_PER_SAMPLE as f64;
        if (wind.dt - dt_sub).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "wind must be sampled at {dt_sub} s (internal substep), got {} s",
                wind.dt
            )));
        }
        let omega_g = params.nominal_generator_speed();
        let omega_r = omega_g / params.gearbox_ratio;
        let tau_g = params.rated_power / omega_g;
        let beta0 = equilibrium_pitch(wind.target_mean, &params);
        let state = TurbineState {
            rotor_speed: omega_r,
            generator_speed: omega_g,
            filtered_generator_speed: omega_g,
            generator_torque: tau_g,
            torque_reference: tau_g,
            pitch: [beta0; 3],
            pitch_rate: [0.0; 3],
            pitch_command: beta0,
            generator_power: params.generator_efficiency * omega_g * tau_g,
            pitch_integrator: beta0,
        };
        Ok(ClosedLoopSim {
            params,
            scenario,
            wind: wind.samples.clone(),
            run_id: run_id.into(),
            state,
            pitch_ctrl: PitchController::new(beta0),
            sample_idx: 0,
            dt_sample,
            dt_sub,
        })
    }

    pub fn state(&self) -> &TurbineState {
        &self.state
    }

    /// Current simulation time in seconds.
    pub fn time(&self) -> f64 {
        self.sample_idx as f64 * self.dt_sample
    }

    /// Run one 80 Hz cycle: record, control, integrate.
    pub fn step_sample(&mut self) -> Result<SampleOutput> {
        let t = self.time();
        let sub_base = self.sample_idx * SUBSTEPS_PER_SAMPLE;
        if sub_base + SUBSTEPS_PER_SAMPLE > self.wind.len() {
            return Err(Error::invalid(format!(
                "wind profile exhausted at t = {t} s (have {} substep samples)",
                self.wind.len()
            )));
        }

        // 1. Sensor pipeline: true readings, then the fault transformation.
        let true_readings = SensorReadings {
            generator_speed: self.state.generator_speed,
            rotor_speed: self.state.rotor_speed,
            generator_torque: self.state.generator_torque,
            pitch: self.state.pitch,
        };
        let (reported, eff) = apply_fault(
            &true_readings,
            self.params.pitch_zeta,
            self.params.pitch_omega_n,
            &self.scenario,
            t,
        );
        let row = [
            reported.rotor_speed,
            reported.generator_torque,
            reported.pitch[0],
            reported.pitch[1],
            reported.pitch[2],
        ];

        // 2. Controllers at 80 Hz on the true state (sensor faults are
        //    observation-only by contract).
        self.state.filtered_generator_speed = step_speed_filter(
            self.state.filtered_generator_speed,
            self.state.generator_speed,
            self.params.speed_filter_corner_hz,
            self.dt_sample,
        );
        let tau_ref = torque_controller(
            self.params.rated_power,
            self.state.filtered_generator_speed,
            &self.params,
        );
        let beta_cmd = self.pitch_ctrl.step(
            self.state.filtered_generator_speed,
            self.params.nominal_generator_speed(),
            self.dt_sample,
            &self.params,
        );
        self.state.torque_reference = tau_ref;
        self.state.pitch_command = beta_cmd;
        self.state.pitch_integrator = self.pitch_ctrl.integrator;
        let converter_input = tau_ref + eff.torque_offset;

        // 3. Plant integration: two fixed substeps with held commands.
        for sub in 0..SUBSTEPS_PER_SAMPLE {
            let v = self.wind[sub_base + sub];
            self.state.generator_torque = step_generator(
                self.state.generator_torque,
                converter_input,
                self.params.converter_param,
                self.dt_sub,
            );
            for b in 0..3 {
                let (beta, rate) = step_pitch_actuator(
                    self.state.pitch[b],
                    self.state.pitch_rate[b],
                    beta_cmd,
                    eff.pitch_zeta,
                    eff.pitch_omega_n,
                    self.dt_sub,
                )?;
                // Physical travel limits: pin position, zero the rate.
                if beta < 0.0 {
                    self.state.pitch[b] = 0.0;
                    self.state.pitch_rate[b] = 0.0;
                } else if beta > 90.0 {
                    self.state.pitch[b] = 90.0;
                    self.state.pitch_rate[b] = 0.0;
                } else {
                    self.state.pitch[b] = beta;
                    self.state.pitch_rate[b] = rate;
                }
            }
            let collective =
                (self.state.pitch[0] + self.state.pitch[1] + self.state.pitch[2]) / 3.0;
            self.state.rotor_speed = step_rotor(
                self.state.rotor_speed,
                v,
                collective,
                self.state.generator_torque,
                self.dt_sub,
                &self.params,
            )
            .map_err(|e| self.diverged(t, e))?;
            self.state.generator_speed = self.params.gearbox_ratio * self.state.rotor_speed;
        }
        self.state.generator_power = self.params.generator_efficiency
            * self.state.generator_speed
            * self.state.generator_torque;

        if !self.state.is_finite() || self.state.rotor_speed <= 0.0 {
            return Err(Error::SimulationDiverged {
                run_id: self.run_id.clone(),
                t,
                detail: "non-finite or non-physical state".into(),
            });
        }
        self.sample_idx += 1;
        Ok(SampleOutput {
            row,
            torque_reference: tau_ref,
            converter_input,
            pitch_command: beta_cmd,
        })
    }

    fn diverged(&self, t: f64, e: Error) -> Error {
        match e {
            Error::SimulationDiverged { detail, .. } => Error::SimulationDiverged {
                run_id: self.run_id.clone(),
                t,
                detail,
            },
            other => other,
        }
    }
}

/// Integrate the full closed loop for `duration_s` seconds and record the
/// five sensor channels at exactly 80 Hz.
pub fn run_simulation(
    params: &TurbineParams,
    scenario: &FaultScenario,
    wind: &WindProfile,
    duration_s: f64,
    run_id: impl Into<String>,
) -> Result<SimRun> {
    let run_id = run_id.into();
    scenario.validate(duration_s)?;
    let rows_f = duration_s * SAMPLE_RATE_HZ;
    if (rows_f - rows_f.round()).abs() > 1e-9 || rows_f < 1.0 {
        return Err(Error::invalid(format!(
            "duration {duration_s} s does not give an integer sample count at 80 Hz"
        )));
    }
    let rows = rows_f.round() as usize;
    let needed = rows * SUBSTEPS_PER_SAMPLE;
    if wind.samples.len() < needed {
        return Err(Error::invalid(format!(
            "wind profile too short: {} samples, need {needed}",
            wind.samples.len()
        )));
    }
    let mut sim = ClosedLoopSim::new(params.clone(), scenario.clone(), wind, run_id.clone())?;
    let mut values = Array2::zeros((rows, N_CHANNELS));
    for r in 0..rows {
        let out = sim.step_sample()?;
        for (c, v) in out.row.iter().enumerate() {
            values[[r, c]] = *v;
        }
    }
    Ok(SimRun {
        trace: SensorTrace {
            run_id,
            kind: scenario.kind,
            sample_rate: SAMPLE_RATE_HZ,
            values,
            wind_seed: wind.seed,
            scenario: scenario.clone(),
        },
        final_state: *sim.state(),
    })
}
