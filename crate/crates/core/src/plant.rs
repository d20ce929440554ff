//! Forward-looking PHEV stand-in: PI speed tracking, point-mass longitudinal
//! dynamics, a Willans-line engine, a power-limited battery and a two-mode
//! rule-based energy management strategy.
//!
//! Sign convention: battery power and energy are positive when the battery
//! is discharging.

use serde::{Deserialize, Serialize};

use crate::edm::Trajectory;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lower heating value used to convert battery energy to fuel mass (J/g).
pub const LHV_J_PER_G: f64 = 42761.0;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams<T> {
    /// Vehicle mass (kg).
    pub mass: T,
    /// `0.5 * rho * Cd * A` (kg/m).
    pub aero_term: T,
    pub rolling_coeff: T,
    pub driveline_efficiency: T,
    /// Wheel radius (m).
    pub wheel_radius: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams<T> {
    /// Usable capacity (Wh).
    pub energy_capacity: T,
    /// Discharge power limit (W).
    pub max_discharge_power: T,
    /// Charge power limit (W).
    pub max_charge_power: T,
    pub soc_min: T,
    pub soc_max: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineParams<T> {
    /// Fuel per unit of output energy (g/kJ).
    pub willans_slope: T,
    /// Fuel rate whenever the engine is on (g/s).
    pub idle_rate: T,
    /// Output power limit (W).
    pub max_power: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmsParams<T> {
    /// At or below this state of charge the strategy sustains charge.
    pub charge_sustain_soc: T,
    /// Demand (W) above which the engine engages while charge depleting.
    pub engine_assist_power: T,
}

/// One point of the PI gain schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainPoint<T> {
    /// Speed (m/s).
    pub speed: T,
    /// Proportional gain (N·m per m/s).
    pub kp: T,
    /// Integral gain (N·m per m).
    pub ki: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams<T> {
    pub schedule: Vec<GainPoint<T>>,
    /// Anti-windup bound on the integral term (N·m).
    pub integrator_clamp: T,
    pub torque_min: T,
    pub torque_max: T,
}

/// Complete plant description, serialized as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams<T> {
    pub vehicle: VehicleParams<T>,
    pub battery: BatteryParams<T>,
    pub engine: EngineParams<T>,
    pub ems: EmsParams<T>,
    pub controller: ControllerParams<T>,
}

impl<T: Real> Default for PlantParams<T> {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams {
                mass: T::of(2200.0),
                aero_term: T::of(0.40),
                rolling_coeff: T::of(0.009),
                driveline_efficiency: T::of(0.92),
                wheel_radius: T::of(0.35),
            },
            battery: BatteryParams {
                energy_capacity: T::of(12_000.0),
                max_discharge_power: T::of(85_000.0),
                max_charge_power: T::of(60_000.0),
                soc_min: T::of(0.20),
                soc_max: T::of(0.95),
            },
            engine: EngineParams {
                willans_slope: T::of(0.075),
                idle_rate: T::of(0.15),
                max_power: T::of(120_000.0),
            },
            ems: EmsParams {
                charge_sustain_soc: T::of(0.25),
                engine_assist_power: T::of(60_000.0),
            },
            controller: ControllerParams {
                schedule: vec![
                    GainPoint {
                        speed: T::of(5.0),
                        kp: T::of(4000.0),
                        ki: T::of(600.0),
                    },
                    GainPoint {
                        speed: T::of(25.0),
                        kp: T::of(3000.0),
                        ki: T::of(400.0),
                    },
                ],
                integrator_clamp: T::of(500.0),
                torque_min: T::of(-8000.0),
                torque_max: T::of(8000.0),
            },
        }
    }
}

impl<T: Real> PlantParams<T> {
    pub fn validate(&self) -> Result<()> {
        let v = &self.vehicle;
        let pos = |name: &str, x: T| {
            if x > T::zero() && x.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive (got {x})")))
            }
        };
        pos("vehicle.mass", v.mass)?;
        pos("vehicle.aero_term", v.aero_term)?;
        pos("vehicle.rolling_coeff", v.rolling_coeff)?;
        pos("vehicle.wheel_radius", v.wheel_radius)?;
        if !(v.driveline_efficiency > T::zero() && v.driveline_efficiency <= T::one()) {
            return Err(Error::invalid("vehicle.driveline_efficiency must lie in (0, 1]"));
        }
        let b = &self.battery;
        pos("battery.energy_capacity", b.energy_capacity)?;
        pos("battery.max_discharge_power", b.max_discharge_power)?;
        pos("battery.max_charge_power", b.max_charge_power)?;
        if !(T::zero() <= b.soc_min && b.soc_min < b.soc_max && b.soc_max <= T::one()) {
            return Err(Error::invalid("battery SoC bounds must satisfy 0 <= soc_min < soc_max <= 1"));
        }
        let e = &self.engine;
        pos("engine.willans_slope", e.willans_slope)?;
        pos("engine.idle_rate", e.idle_rate)?;
        pos("engine.max_power", e.max_power)?;
        let m = &self.ems;
        if !(b.soc_min < m.charge_sustain_soc && m.charge_sustain_soc < b.soc_max) {
            return Err(Error::invalid(
                "ems.charge_sustain_soc must lie strictly between the battery SoC bounds",
            ));
        }
        pos("ems.engine_assist_power", m.engine_assist_power)?;
        let c = &self.controller;
        if c.schedule.is_empty() {
            return Err(Error::invalid("controller.schedule is empty"));
        }
        for w in c.schedule.windows(2) {
            if !(w[0].speed < w[1].speed) {
                return Err(Error::invalid("controller.schedule speeds must be strictly increasing"));
            }
        }
        for g in &c.schedule {
            pos("controller gain kp", g.kp)?;
            pos("controller gain ki", g.ki)?;
        }
        pos("controller.integrator_clamp", c.integrator_clamp)?;
        if !(c.torque_min < T::zero() && c.torque_max > T::zero()) {
            return Err(Error::invalid("controller torque limits must bracket zero"));
        }
        Ok(())
    }
}

impl<T: Real> ControllerParams<T> {
    /// Gains linearly interpolated over the schedule, held flat outside it.
    pub fn gains_at(&self, v: T) -> (T, T) {
        let s = &self.schedule;
        let first = s[0];
        let last = s[s.len() - 1];
        if v <= first.speed {
            return (first.kp, first.ki);
        }
        if v >= last.speed {
            return (last.kp, last.ki);
        }
        let i = s.partition_point(|g| g.speed <= v);
        let (lo, hi) = (s[i - 1], s[i]);
        let w = (v - lo.speed) / (hi.speed - lo.speed);
        (lo.kp + w * (hi.kp - lo.kp), lo.ki + w * (hi.ki - lo.ki))
    }
}

/// Integral state of the speed controller (N·m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PiState<T> {
    pub integral: T,
}

/// Torque request of the gain-scheduled PI speed controller.
pub fn pi_torque<T: Real>(
    v_ref: T,
    v: T,
    state: &mut PiState<T>,
    ctrl: &ControllerParams<T>,
    dt: T,
) -> T {
    let (kp, ki) = ctrl.gains_at(v);
    let err = v_ref - v;
    state.integral = (state.integral + ki * err * dt)
        .max(-ctrl.integrator_clamp)
        .min(ctrl.integrator_clamp);
    (kp * err + state.integral)
        .max(ctrl.torque_min)
        .min(ctrl.torque_max)
}

/// Rolling plus aerodynamic resistance on a flat road (N).
#[inline]
pub fn road_load<T: Real>(v: T, params: &VehicleParams<T>) -> T {
    params.rolling_coeff * params.mass * T::of(GRAVITY) + params.aero_term * v * v
}

/// Source power allocation for one step (W).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSplit<T> {
    pub engine: T,
    pub battery: T,
    /// Braking power not absorbed by the battery (friction brakes).
    pub dissipated: T,
    /// Positive demand exceeded the combined engine and battery limits.
    pub infeasible: bool,
}

/// Rule-based energy management.
///
/// Charge depleting (SoC above the sustain threshold) runs all-electric while
/// the demand fits the battery and the engine-assist threshold. Otherwise the
/// engine supplies up to its limit and the battery covers the rest. Braking
/// demand charges the battery up to its charge limit.
pub fn ems_split<T: Real>(
    p_req: T,
    soc: T,
    _v: T,
    ems: &EmsParams<T>,
    batt: &BatteryParams<T>,
    eng: &EngineParams<T>,
) -> PowerSplit<T> {
    let zero = T::zero();
    if p_req <= zero {
        let charge_cap = if soc < batt.soc_max { batt.max_charge_power } else { zero };
        let battery = p_req.max(-charge_cap);
        return PowerSplit {
            engine: zero,
            battery,
            dissipated: battery - p_req,
            infeasible: false,
        };
    }
    let discharge_cap = if soc > batt.soc_min { batt.max_discharge_power } else { zero };
    if soc > ems.charge_sustain_soc && p_req <= discharge_cap.min(ems.engine_assist_power) {
        return PowerSplit {
            engine: zero,
            battery: p_req,
            dissipated: zero,
            infeasible: false,
        };
    }
    let engine = p_req.min(eng.max_power);
    let battery = (p_req - engine).min(discharge_cap);
    PowerSplit {
        engine,
        battery,
        dissipated: zero,
        infeasible: engine + battery < p_req,
    }
}

/// Willans-line fuel rate (g/s); zero with the engine off.
#[inline]
pub fn fuel_rate<T: Real>(p_eng: T, eng: &EngineParams<T>) -> T {
    if p_eng <= T::zero() {
        T::zero()
    } else {
        eng.idle_rate + eng.willans_slope * p_eng / T::of(1000.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryStep<T> {
    pub soc: T,
    /// Energy drawn at the terminals this step (J).
    pub energy: T,
    /// The state of charge hit a bound and was clipped.
    pub clipped: bool,
}

pub fn battery_step<T: Real>(p_batt: T, soc: T, dt: T, batt: &BatteryParams<T>) -> BatteryStep<T> {
    let energy = p_batt * dt;
    let raw = soc - energy / (batt.energy_capacity * T::of(3600.0));
    let clipped_soc = raw.max(batt.soc_min).min(batt.soc_max);
    BatteryStep {
        soc: clipped_soc,
        energy,
        clipped: clipped_soc != raw,
    }
}

/// Fuel mass plus battery energy expressed as fuel mass (g).
#[inline]
pub fn equivalent_fuel<T: Real>(m_fuel: T, e_batt: T) -> T {
    m_fuel + e_batt / T::of(LHV_J_PER_G)
}

/// One step of the optional detailed trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlantSample<T> {
    pub t: T,
    pub v: T,
    pub p_eng: T,
    pub p_batt: T,
    pub soc: T,
    /// Cumulative fuel (g).
    pub fuel: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyResult<T> {
    /// Total fuel (g).
    pub m_fuel: T,
    /// Net battery energy (J), positive for depletion.
    pub e_batt: T,
    /// Equivalent fuel (g).
    pub m_f_eq: T,
    pub soc_trace: Vec<T>,
    pub soc_final: T,
    /// RMS difference between plant and reference speed (m/s).
    pub tracking_rmse: T,
    /// Steps where demand exceeded the powertrain limits.
    pub infeasible_steps: usize,
    /// Steps where the state of charge was clipped at a bound.
    pub clipped_steps: usize,
    pub trace: Option<Vec<PlantSample<T>>>,
}

/// Summary written as JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub m_fuel_g: f64,
    #[serde(rename = "E_batt_J")]
    pub e_batt_j: f64,
    pub m_f_eq_g: f64,
    pub soc_final: f64,
}

impl<T: Real> EnergyResult<T> {
    pub fn summary(&self) -> EnergySummary {
        EnergySummary {
            m_fuel_g: self.m_fuel.as_f64(),
            e_batt_j: self.e_batt.as_f64(),
            m_f_eq_g: self.m_f_eq.as_f64(),
            soc_final: self.soc_final.as_f64(),
        }
    }
}

const DIVERGENCE_MPS: f64 = 5.0;
const DIVERGENCE_S: f64 = 5.0;

/// Runs the closed loop over a reference speed trajectory.
pub fn simulate_energy<T: Real>(
    reference: &Trajectory<T>,
    soc0: T,
    params: &PlantParams<T>,
) -> Result<EnergyResult<T>> {
    run(reference, soc0, params, false)
}

/// Like [`simulate_energy`] but also records a per-step trace.
pub fn simulate_energy_traced<T: Real>(
    reference: &Trajectory<T>,
    soc0: T,
    params: &PlantParams<T>,
) -> Result<EnergyResult<T>> {
    run(reference, soc0, params, true)
}

fn run<T: Real>(
    reference: &Trajectory<T>,
    soc0: T,
    params: &PlantParams<T>,
    keep_trace: bool,
) -> Result<EnergyResult<T>> {
    params.validate()?;
    let batt = &params.battery;
    if !(soc0 >= batt.soc_min && soc0 <= batt.soc_max) {
        return Err(Error::invalid(format!(
            "initial SoC {soc0} outside [{}, {}]",
            batt.soc_min, batt.soc_max
        )));
    }
    if reference.is_empty() {
        return Err(Error::invalid("reference trajectory is empty"));
    }
    let veh = &params.vehicle;
    let dt = reference.dt;
    let eta = veh.driveline_efficiency;
    let zero = T::zero();

    let samples = &reference.samples;
    let mut v = samples[0].v;
    let mut soc = soc0;
    let mut pi = PiState::default();
    let mut m_fuel = zero;
    let mut e_batt = zero;
    let mut sq_err = zero;
    let mut diverged_for = zero;
    let mut infeasible_steps = 0;
    let mut clipped_steps = 0;
    let mut soc_trace = Vec::with_capacity(samples.len());
    soc_trace.push(soc);
    let mut trace = keep_trace.then(|| Vec::with_capacity(samples.len()));

    for k in 0..samples.len() - 1 {
        let err_now = samples[k].v - v;
        sq_err += err_now * err_now;
        if err_now.abs() > T::of(DIVERGENCE_MPS) {
            diverged_for += dt;
            if diverged_for >= T::of(DIVERGENCE_S) {
                return Err(Error::TrackingDivergence {
                    t_s: samples[k].t.as_f64(),
                    error_mps: err_now.as_f64(),
                });
            }
        } else {
            diverged_for = zero;
        }

        let v_ref = samples[k + 1].v;
        let torque = pi_torque(v_ref, v, &mut pi, &params.controller, dt);
        let f_req = torque / veh.wheel_radius;
        let p_wheel = f_req * v;
        let p_req = if p_wheel >= zero { p_wheel / eta } else { p_wheel * eta };
        let split = ems_split(p_req, soc, v, &params.ems, batt, &params.engine);
        if split.infeasible {
            infeasible_steps += 1;
        }
        let f_trac = if p_wheel > zero {
            (split.engine + split.battery) * eta / v
        } else {
            f_req
        };

        m_fuel += fuel_rate(split.engine, &params.engine) * dt;
        let b = battery_step(split.battery, soc, dt, batt);
        if b.clipped {
            clipped_steps += 1;
        }
        e_batt += b.energy;
        soc = b.soc;
        soc_trace.push(soc);

        if let Some(tr) = trace.as_mut() {
            tr.push(PlantSample {
                t: samples[k].t,
                v,
                p_eng: split.engine,
                p_batt: split.battery,
                soc,
                fuel: m_fuel,
            });
        }

        let accel = (f_trac - road_load(v, veh)) / veh.mass;
        v = (v + accel * dt).max(zero);
    }
    let last = samples.len() - 1;
    let err_last = samples[last].v - v;
    sq_err += err_last * err_last;
    if let Some(tr) = trace.as_mut() {
        tr.push(PlantSample {
            t: samples[last].t,
            v,
            p_eng: zero,
            p_batt: zero,
            soc,
            fuel: m_fuel,
        });
    }

    Ok(EnergyResult {
        m_fuel,
        e_batt,
        m_f_eq: equivalent_fuel(m_fuel, e_batt),
        soc_final: soc,
        soc_trace,
        tracking_rmse: (sq_err / T::of_usize(samples.len())).sqrt(),
        infeasible_steps,
        clipped_steps,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edm::{simulate_trip, DriverParams, Mode, Route, RouteSegment, Sample};
    use approx::assert_relative_eq;

    fn ctrl() -> ControllerParams<f64> {
        PlantParams::default().controller
    }

    #[test]
    fn pi_examples() {
        let c = ctrl();
        let mut s = PiState::default();
        assert_eq!(pi_torque(12.0, 12.0, &mut s, &c, 0.1), 0.0);

        let mut s = PiState::default();
        let (kp, ki) = c.gains_at(3.0);
        let out = pi_torque(3.5, 3.0, &mut s, &c, 0.1);
        assert_relative_eq!(out, kp * 0.5 + ki * 0.5 * 0.1, max_relative = 1e-14);

        let mut s = PiState::default();
        assert_eq!(pi_torque(40.0, 0.0, &mut s, &c, 0.1), c.torque_max);
        let mut s = PiState::default();
        for _ in 0..1000 {
            pi_torque(10.0, 9.0, &mut s, &c, 0.1);
        }
        assert_eq!(s.integral, c.integrator_clamp);
    }

    #[test]
    fn gain_schedule_interpolates() {
        let c = ctrl();
        assert_eq!(c.gains_at(0.0), (4000.0, 600.0));
        assert_eq!(c.gains_at(15.0), (3500.0, 500.0));
        assert_eq!(c.gains_at(40.0), (3000.0, 400.0));
    }

    #[test]
    fn road_load_examples() {
        let base = PlantParams::<f64>::default().vehicle;
        let p = VehicleParams {
            rolling_coeff: 0.01,
            mass: 2000.0,
            ..base
        };
        assert_relative_eq!(road_load(0.0, &p), 196.2, max_relative = 1e-14);
        let p = VehicleParams {
            rolling_coeff: 0.0,
            aero_term: 0.4,
            ..base
        };
        assert_relative_eq!(road_load(20.0, &p), 160.0, max_relative = 1e-14);
        assert_eq!(road_load(0.0, &p), 0.0);
    }

    #[test]
    fn ems_examples() {
        let d = PlantParams::<f64>::default();
        let s = ems_split(10_000.0, 0.40, 10.0, &d.ems, &d.battery, &d.engine);
        assert_eq!((s.engine, s.battery), (0.0, 10_000.0));
        let eng = EngineParams {
            max_power: 100_000.0,
            ..d.engine
        };
        let s = ems_split(30_000.0, 0.24, 10.0, &d.ems, &d.battery, &eng);
        assert_eq!((s.engine, s.battery), (30_000.0, 0.0));
        let s = ems_split(0.0, 0.5, 10.0, &d.ems, &d.battery, &d.engine);
        assert_eq!((s.engine, s.battery), (0.0, 0.0));
    }

    #[test]
    fn ems_regen_and_saturation() {
        let d = PlantParams::<f64>::default();
        let s = ems_split(-80_000.0, 0.5, 10.0, &d.ems, &d.battery, &d.engine);
        assert_eq!(s.battery, -60_000.0);
        assert_eq!(s.dissipated, 20_000.0);
        let s = ems_split(-1000.0, 0.95, 10.0, &d.ems, &d.battery, &d.engine);
        assert_eq!(s.battery, 0.0);
        let s = ems_split(300_000.0, 0.5, 30.0, &d.ems, &d.battery, &d.engine);
        assert!(s.infeasible);
        assert_eq!(s.engine, 120_000.0);
        assert_eq!(s.battery, 85_000.0);
        // Empty battery cannot discharge.
        let s = ems_split(150_000.0, 0.20, 30.0, &d.ems, &d.battery, &d.engine);
        assert_eq!(s.battery, 0.0);
    }

    #[test]
    fn fuel_rate_examples() {
        let eng: EngineParams<f64> = EngineParams {
            willans_slope: 0.08,
            idle_rate: 0.2,
            max_power: 120_000.0,
        };
        assert_eq!(fuel_rate(0.0, &eng), 0.0);
        assert_relative_eq!(fuel_rate(50_000.0, &eng), 4.2, max_relative = 1e-14);
        assert!(fuel_rate(eng.max_power, &eng).is_finite());
    }

    #[test]
    fn battery_examples() {
        let b = BatteryParams {
            energy_capacity: 10_000.0,
            ..PlantParams::<f64>::default().battery
        };
        let s = battery_step(3600.0, 0.5, 1.0, &b);
        assert_relative_eq!(0.5 - s.soc, 1e-4, max_relative = 1e-9);
        assert_eq!(s.energy, 3600.0);
        assert_eq!(battery_step(0.0, 0.5, 1.0, &b).soc, 0.5);
        assert!(battery_step(-2000.0, 0.5, 1.0, &b).soc > 0.5);
        let s = battery_step(1e9, 0.21, 1.0, &b);
        assert!(s.clipped && s.soc == b.soc_min);
    }

    #[test]
    fn equivalent_fuel_examples() {
        assert_relative_eq!(equivalent_fuel(500.0, 4.2761e6), 600.0, max_relative = 1e-12);
        assert_eq!(equivalent_fuel(123.4, 0.0), 123.4);
        assert_relative_eq!(equivalent_fuel(0.0, 42761.0), 1.0, max_relative = 1e-15);
    }

    fn reference(route: &Route<f64>) -> Trajectory<f64> {
        let p = DriverParams::new(1.5, 2.0, 4.0, 1.0, 0.0).unwrap();
        simulate_trip(&p, route, &Default::default(), None).unwrap()
    }

    #[test]
    fn zero_reference_uses_no_energy() {
        let traj = Trajectory {
            dt: 0.1,
            samples: (0..100)
                .map(|k| Sample {
                    t: k as f64 * 0.1,
                    x: 0.0,
                    v: 0.0,
                    accel: 0.0,
                    mode: Mode::Stop,
                })
                .collect(),
            segments: vec![],
        };
        let r = simulate_energy(&traj, 0.4, &PlantParams::default()).unwrap();
        assert_eq!(r.m_fuel, 0.0);
        assert_eq!(r.e_batt, 0.0);
        assert_eq!(r.m_f_eq, r.m_fuel);
    }

    #[test]
    fn tracks_reference_and_books_energy() {
        let route = Route::new(vec![
            RouteSegment::new(600.0, 15.0, true).unwrap(),
            RouteSegment::new(1500.0, 25.0, false).unwrap(),
        ])
        .unwrap();
        let traj = reference(&route);
        let params = PlantParams::default();
        let r = simulate_energy_traced(&traj, 0.26, &params).unwrap();
        assert!(r.tracking_rmse < 0.5, "rmse {}", r.tracking_rmse);
        assert!(r.m_fuel > 0.0, "the trip crosses the sustain threshold: {r:?}");
        let trace = r.trace.as_ref().unwrap();
        let summed: f64 = trace.iter().map(|s| s.p_batt * traj.dt).sum();
        assert!((summed - r.e_batt).abs() <= 1e-9 * r.e_batt.abs().max(1.0));
        assert!(trace.windows(2).all(|w| w[1].fuel >= w[0].fuel));
        for &s in &r.soc_trace {
            assert!(s >= params.battery.soc_min && s <= params.battery.soc_max);
        }
        assert_eq!(r.soc_trace.len(), traj.len());
    }

    #[test]
    fn deterministic() {
        let route = Route::single(RouteSegment::new(900.0, 20.0, true).unwrap()).unwrap();
        let traj = reference(&route);
        let a = simulate_energy(&traj, 0.26, &PlantParams::default()).unwrap();
        let b = simulate_energy(&traj, 0.26, &PlantParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn longer_routes_cost_more() {
        let mut last = 0.0;
        for len in [400.0, 800.0, 1600.0, 2500.0] {
            let route = Route::single(RouteSegment::new(len, 22.0, false).unwrap()).unwrap();
            let r = simulate_energy(&reference(&route), 0.3, &PlantParams::default()).unwrap();
            assert!(r.m_f_eq >= last);
            last = r.m_f_eq;
        }
    }

    #[test]
    fn rejects_out_of_range_soc() {
        let route = Route::single(RouteSegment::new(300.0, 10.0, false).unwrap()).unwrap();
        assert!(simulate_energy(&reference(&route), 0.1, &PlantParams::default()).is_err());
    }

    #[test]
    fn reports_divergence() {
        let route = Route::single(RouteSegment::new(2000.0, 30.0, false).unwrap()).unwrap();
        let mut params = PlantParams::default();
        params.engine.max_power = 1000.0;
        params.battery.max_discharge_power = 1000.0;
        params.ems.engine_assist_power = 1000.0;
        let err = simulate_energy(&reference(&route), 0.5, &params).unwrap_err();
        assert!(matches!(err, Error::TrackingDivergence { .. }));
    }
}
