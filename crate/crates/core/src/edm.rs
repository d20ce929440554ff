//! Longitudinal driver model with freeway, car-following and stop modes.
//!
//! A driver is described by five parameters (`a`, `b`, `delta`, `c1`,
//! `theta`). Each step the enabled modes each propose an acceleration and the
//! most conservative (smallest) one is applied; see [`resolve`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Speed below which the vehicle counts as stopped (m/s).
pub const STANDSTILL_MPS: f64 = 0.1;

/// The five behavioural parameters of one driver on one stretch of road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverParams<T> {
    /// Maximum acceleration (m/s²).
    pub a: T,
    /// Maximum deceleration magnitude (m/s²).
    pub b: T,
    /// Acceleration exponent.
    pub delta: T,
    /// Critical braking calibration.
    pub c1: T,
    /// Speed-limit offset (m/s). Positive drives below the limit.
    pub theta: T,
}

impl<T: Real> DriverParams<T> {
    pub const NAMES: [&'static str; 5] = ["a", "b", "delta", "c1", "theta"];

    pub fn new(a: T, b: T, delta: T, c1: T, theta: T) -> Result<Self> {
        let p = Self {
            a,
            b,
            delta,
            c1,
            theta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_array(v: [T; 5]) -> Self {
        Self {
            a: v[0],
            b: v[1],
            delta: v[2],
            c1: v[3],
            theta: v[4],
        }
    }

    pub fn to_array(&self) -> [T; 5] {
        [self.a, self.b, self.delta, self.c1, self.theta]
    }

    pub fn validate(&self) -> Result<()> {
        let arr = self.to_array();
        if arr.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite driver parameter in {self:?}")));
        }
        if self.a <= T::zero() || self.b <= T::zero() || self.delta <= T::zero() {
            return Err(Error::invalid(format!(
                "driver parameters a, b, delta must be positive (got {self:?})"
            )));
        }
        if self.c1 < T::zero() {
            return Err(Error::invalid(format!("c1 must be non-negative (got {})", self.c1)));
        }
        Ok(())
    }

    /// Checks that every segment leaves a positive target speed.
    pub fn validate_for_route(&self, route: &Route<T>) -> Result<()> {
        self.validate()?;
        for (i, seg) in route.segments().iter().enumerate() {
            if seg.speed_limit - self.theta <= T::zero() {
                return Err(Error::invalid(format!(
                    "segment {i}: speed limit {} m/s minus theta {} is not positive",
                    seg.speed_limit, self.theta
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteSegment<T> {
    /// Segment length (m).
    pub length: T,
    /// Speed limit (m/s).
    pub speed_limit: T,
    /// Whether a stop sign terminates the segment.
    pub ends_with_stop: bool,
}

impl<T: Real> RouteSegment<T> {
    pub fn new(length: T, speed_limit: T, ends_with_stop: bool) -> Result<Self> {
        if !(length > T::zero()) || !length.is_finite() {
            return Err(Error::invalid(format!("segment length must be positive (got {length})")));
        }
        if !(speed_limit > T::zero()) || !speed_limit.is_finite() {
            return Err(Error::invalid(format!(
                "segment speed limit must be positive (got {speed_limit})"
            )));
        }
        Ok(Self {
            length,
            speed_limit,
            ends_with_stop,
        })
    }
}

/// Ordered segments with their cumulative end positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Route<T> {
    segments: Vec<RouteSegment<T>>,
    ends: Vec<T>,
    stop_lines: Vec<T>,
}

impl<T: Real> Route<T> {
    pub fn new(segments: Vec<RouteSegment<T>>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("route has no segments"));
        }
        let mut ends = Vec::with_capacity(segments.len());
        let mut stop_lines = Vec::new();
        let mut acc = T::zero();
        for (i, s) in segments.iter().enumerate() {
            RouteSegment::new(s.length, s.speed_limit, s.ends_with_stop)
                .map_err(|e| Error::invalid(format!("segment {i}: {e}")))?;
            acc += s.length;
            ends.push(acc);
            if s.ends_with_stop {
                stop_lines.push(acc);
            }
        }
        Ok(Self {
            segments,
            ends,
            stop_lines,
        })
    }

    pub fn single(segment: RouteSegment<T>) -> Result<Self> {
        Self::new(vec![segment])
    }

    pub fn segments(&self) -> &[RouteSegment<T>] {
        &self.segments
    }

    /// Cumulative end position of each segment (m).
    pub fn segment_ends(&self) -> &[T] {
        &self.ends
    }

    /// Positions of the stop lines, ascending.
    pub fn stop_lines(&self) -> &[T] {
        &self.stop_lines
    }

    pub fn total_length(&self) -> T {
        *self.ends.last().expect("route is non-empty")
    }

    /// Index of the segment containing `x`; positions past the end map to the
    /// last segment.
    pub fn segment_at(&self, x: T) -> usize {
        let i = self.ends.partition_point(|&e| e <= x);
        i.min(self.segments.len() - 1)
    }

    pub fn speed_limit_at(&self, x: T) -> T {
        self.segments[self.segment_at(x)].speed_limit
    }

    /// First stop line strictly ahead of `x`.
    pub fn next_stop_after(&self, x: T) -> Option<T> {
        self.stop_lines.iter().copied().find(|&s| s > x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoState<T> {
    pub x: T,
    pub v: T,
    pub t: T,
}

impl<T: Real> EgoState<T> {
    pub fn at_rest() -> Self {
        Self {
            x: T::zero(),
            v: T::zero(),
            t: T::zero(),
        }
    }
}

/// Position of the lead vehicle's rear and its speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadState<T> {
    pub x: T,
    pub v: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LeadSpeed<T> {
    Constant(T),
    /// Speeds sampled every `dt` seconds; the last value is held.
    Profile { dt: T, speeds: Vec<T> },
}

/// A lead vehicle driving ahead of the ego vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct Lead<T> {
    /// Initial rear position (m).
    pub x0: T,
    pub speed: LeadSpeed<T>,
}

impl<T: Real> Lead<T> {
    pub fn constant(x0: T, v: T) -> Self {
        Self {
            x0,
            speed: LeadSpeed::Constant(v),
        }
    }

    fn speed_at(&self, t: T) -> T {
        match &self.speed {
            LeadSpeed::Constant(v) => *v,
            LeadSpeed::Profile { dt, speeds } => {
                if speeds.is_empty() {
                    return T::zero();
                }
                let k = (t / *dt).floor().to_usize().unwrap_or(0);
                speeds[k.min(speeds.len() - 1)]
            }
        }
    }
}

/// Fixed constants of the simulation, shared by all drivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverConstants<T> {
    /// Standstill gap kept before a stop line or stopped lead (m).
    pub x_safe: T,
    /// Detection horizon for leads and stop signs (m).
    pub line_of_sight: T,
    /// Integration step (s).
    pub dt: T,
    /// Magnitude cap on stop-mode deceleration (m/s²).
    pub a_brake_cap: T,
    /// Time held at a stop sign before moving on (s).
    pub stop_dwell: T,
    /// Time ceiling per metre of route (s/m).
    pub time_ceiling_per_m: T,
}

impl<T: Real> Default for DriverConstants<T> {
    fn default() -> Self {
        Self {
            x_safe: T::of(2.0),
            line_of_sight: T::of(100.0),
            dt: T::of(0.1),
            a_brake_cap: T::of(9.0),
            stop_dwell: T::of(2.0),
            time_ceiling_per_m: T::of(10.0),
        }
    }
}

impl<T: Real> DriverConstants<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.x_safe,
            self.line_of_sight,
            self.dt,
            self.a_brake_cap,
            self.time_ceiling_per_m,
        ];
        if all.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) || self.stop_dwell < T::zero() {
            return Err(Error::invalid(format!("driver constants must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "FD")]
    FreewayDriving,
    #[serde(rename = "CF")]
    CarFollowing,
    #[serde(rename = "SM")]
    Stop,
}

impl Mode {
    pub fn code(self) -> &'static str {
        match self {
            Mode::FreewayDriving => "FD",
            Mode::CarFollowing => "CF",
            Mode::Stop => "SM",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "FD" => Some(Mode::FreewayDriving),
            "CF" => Some(Mode::CarFollowing),
            "SM" => Some(Mode::Stop),
            _ => None,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// The quantity a mode regulates against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target<T> {
    /// Posted speed limit; the driver aims for `v_lim - theta`.
    SpeedLimit(T),
    /// Lead vehicle speed.
    LeadSpeed(T),
    /// Gap to the obstacle beyond the safe distance.
    Gap(T),
}

/// The stop law is singular at a non-positive gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegenerateGap;

/// Gap to the next obstacle beyond the safe distance. Negative inside the
/// safe gap.
#[inline]
pub fn gap_to_next<T: Real>(x_next: T, x_ego: T, x_safe: T) -> T {
    x_next - x_ego - x_safe
}

/// Critical braking distance `(1 + c1/delta) v² / (2b)`.
#[inline]
pub fn brake_distance<T: Real>(v: T, params: &DriverParams<T>) -> T {
    (T::one() + params.c1 / params.delta) * v * v / (T::of(2.0) * params.b)
}

fn approach<T: Real>(v: T, reference: T, p: &DriverParams<T>) -> T {
    if v <= reference {
        if reference <= T::zero() {
            return T::zero();
        }
        p.a * (T::one() - (v / reference).powf(p.delta))
    } else {
        -p.b * (T::one() - (reference / v).powf(p.delta))
    }
}

/// Raw acceleration law of one mode, before any clamping.
pub fn edm_accel<T: Real>(
    mode: Mode,
    ego: &EgoState<T>,
    params: &DriverParams<T>,
    target: Target<T>,
) -> std::result::Result<T, DegenerateGap> {
    let v = ego.v;
    match (mode, target) {
        (Mode::FreewayDriving, Target::SpeedLimit(v_lim)) => {
            Ok(approach(v, v_lim - params.theta, params))
        }
        (Mode::CarFollowing, Target::LeadSpeed(v_lead)) => Ok(approach(v, v_lead, params)),
        (Mode::Stop, Target::Gap(s)) => {
            if s <= T::zero() {
                return Err(DegenerateGap);
            }
            let q = v * v / (T::of(2.0) * s);
            Ok(-(q * q) / params.b)
        }
        _ => panic!("edm_accel: target {target:?} does not belong to mode {mode}"),
    }
}

/// Explicit Euler step; position advances with the pre-step speed and speed
/// is clamped at zero.
#[inline]
pub fn step<T: Real>(ego: &EgoState<T>, accel: T, dt: T) -> EgoState<T> {
    EgoState {
        x: ego.x + ego.v * dt,
        v: (ego.v + accel * dt).max(T::zero()),
        t: ego.t + dt,
    }
}

/// Mode chosen for one step and the acceleration it commands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision<T> {
    pub mode: Mode,
    pub accel: T,
    /// What stop mode is braking for, when it was enabled.
    pub obstacle: Option<Obstacle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Obstacle {
    StopLine,
    StoppedLead,
}

/// Everything the mode logic sees at one instant.
#[derive(Debug, Clone, Copy)]
pub struct Surroundings<T> {
    /// Posted limit at the ego position (m/s).
    pub speed_limit: T,
    /// Next stop line that has not yet been served.
    pub next_stop: Option<T>,
    pub lead: Option<LeadState<T>>,
    /// Stop mode stays engaged once triggered, until the stop is served.
    pub stop_latched: bool,
}

/// Evaluates every enabled mode and applies the smallest acceleration.
///
/// Car following is enabled while a moving lead is within line of sight.
/// Freeway driving is enabled whenever car following is not. Stop mode is
/// enabled when the gap to the nearer of the next stop line and a stopped
/// lead drops below the braking distance (or is latched). Ties resolve
/// CF, then SM, then FD.
pub fn resolve<T: Real>(
    ego: &EgoState<T>,
    params: &DriverParams<T>,
    env: &Surroundings<T>,
    consts: &DriverConstants<T>,
) -> Decision<T> {
    let standstill = T::of(STANDSTILL_MPS);
    let lead_in_range = env
        .lead
        .filter(|l| l.x > ego.x && l.x - ego.x <= consts.line_of_sight);
    let moving_lead = lead_in_range.filter(|l| l.v >= standstill);
    let stopped_lead = lead_in_range.filter(|l| l.v < standstill);

    let mut candidates: Vec<(Mode, T)> = Vec::with_capacity(3);
    if let Some(l) = moving_lead {
        let a = edm_accel(Mode::CarFollowing, ego, params, Target::LeadSpeed(l.v))
            .expect("car following is total");
        candidates.push((Mode::CarFollowing, a));
    }

    let nearest = match (env.next_stop, stopped_lead) {
        (Some(s), Some(l)) if l.x < s => Some((l.x, Obstacle::StoppedLead)),
        (Some(s), _) => Some((s, Obstacle::StopLine)),
        (None, Some(l)) => Some((l.x, Obstacle::StoppedLead)),
        (None, None) => None,
    };
    let mut obstacle = None;
    if let Some((x_next, kind)) = nearest {
        let s = gap_to_next(x_next, ego.x, consts.x_safe);
        if env.stop_latched || s < brake_distance(ego.v, params) {
            obstacle = Some(kind);
            let a = match edm_accel(Mode::Stop, ego, params, Target::Gap(s)) {
                Ok(a) => a.max(-consts.a_brake_cap),
                Err(DegenerateGap) => {
                    if ego.v < standstill {
                        T::zero()
                    } else {
                        -consts.a_brake_cap
                    }
                }
            };
            candidates.push((Mode::Stop, a));
        }
    }

    if moving_lead.is_none() {
        let a = edm_accel(
            Mode::FreewayDriving,
            ego,
            params,
            Target::SpeedLimit(env.speed_limit),
        )
        .expect("freeway driving is total");
        candidates.push((Mode::FreewayDriving, a));
    }

    let (mode, accel) = candidates
        .into_iter()
        .fold(None::<(Mode, T)>, |best, c| match best {
            Some(b) if b.1 <= c.1 => Some(b),
            _ => Some(c),
        })
        .expect("at least one mode is enabled");
    Decision {
        mode,
        accel,
        obstacle: if mode == Mode::Stop { obstacle } else { None },
    }
}

/// Mode the driver would use at `ego`, without stop-mode latching.
pub fn select_mode<T: Real>(
    ego: &EgoState<T>,
    params: &DriverParams<T>,
    route: &Route<T>,
    lead: Option<LeadState<T>>,
    consts: &DriverConstants<T>,
) -> Mode {
    let env = Surroundings {
        speed_limit: route.speed_limit_at(ego.x),
        next_stop: route.next_stop_after(ego.x),
        lead,
        stop_latched: false,
    };
    resolve(ego, params, &env, consts).mode
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample<T> {
    pub t: T,
    pub x: T,
    pub v: T,
    pub accel: T,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SegmentStats<T> {
    /// Time spent with the ego position inside the segment (s).
    pub elapsed: T,
    /// Distance covered inside the segment (m).
    pub distance: T,
}

/// Uniformly sampled speed trace of one trip.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub dt: T,
    pub samples: Vec<Sample<T>>,
    pub segments: Vec<SegmentStats<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> T {
        self.samples.last().map_or(T::zero(), |s| s.t)
    }

    pub fn speeds(&self) -> impl Iterator<Item = T> + '_ {
        self.samples.iter().map(|s| s.v)
    }

    pub fn last(&self) -> Option<&Sample<T>> {
        self.samples.last()
    }
}

/// Simulates one trip from rest at the start of `route`.
pub fn simulate_trip<T: Real>(
    params: &DriverParams<T>,
    route: &Route<T>,
    consts: &DriverConstants<T>,
    lead: Option<&Lead<T>>,
) -> Result<Trajectory<T>> {
    simulate_trip_from(params, route, consts, lead, T::zero())
}

/// Like [`simulate_trip`] but starting at speed `v0`.
pub fn simulate_trip_from<T: Real>(
    params: &DriverParams<T>,
    route: &Route<T>,
    consts: &DriverConstants<T>,
    lead: Option<&Lead<T>>,
    v0: T,
) -> Result<Trajectory<T>> {
    params.validate_for_route(route)?;
    consts.validate()?;
    if !(v0 >= T::zero()) {
        return Err(Error::invalid(format!("initial speed must be non-negative (got {v0})")));
    }
    if let Some(l) = lead {
        if !(l.x0 > T::zero()) {
            return Err(Error::invalid("lead vehicle must start ahead of the ego vehicle"));
        }
    }

    let dt = consts.dt;
    let end = route.total_length();
    let ceiling = consts.time_ceiling_per_m * end;
    let standstill = T::of(STANDSTILL_MPS);
    let stops = route.stop_lines();
    let final_stop = stops.last().copied().filter(|&s| s >= end);

    let mut ego = EgoState {
        x: T::zero(),
        v: v0,
        t: T::zero(),
    };
    let mut lead_state = lead.map(|l| LeadState {
        x: l.x0,
        v: l.speed_at(T::zero()),
    });
    let mut served = 0usize;
    let mut latched = false;
    let mut dwell_left: Option<T> = None;
    let mut k = 0usize;
    let capacity = (ceiling / dt).to_usize().unwrap_or(0).min(1 << 20);
    let mut samples = Vec::with_capacity(capacity.min(4096));
    let mut stats = vec![SegmentStats::default(); route.segments().len()];

    loop {
        ego.t = T::of_usize(k) * dt;
        let seg = route.segment_at(ego.x);
        if ego.x >= end {
            samples.push(Sample {
                t: ego.t,
                x: ego.x,
                v: ego.v,
                accel: T::zero(),
                mode: samples.last().map_or(Mode::FreewayDriving, |s: &Sample<T>| s.mode),
            });
            break;
        }
        if ego.t > ceiling {
            return Err(Error::SimulationAborted {
                segment: seg,
                reason: format!(
                    "simulated time exceeded {ceiling} s at x = {} m, v = {} m/s",
                    ego.x, ego.v
                ),
            });
        }

        if let Some(left) = dwell_left {
            samples.push(Sample {
                t: ego.t,
                x: ego.x,
                v: T::zero(),
                accel: T::zero(),
                mode: Mode::Stop,
            });
            stats[seg].elapsed += dt;
            if let Some(l) = lead.zip(lead_state.as_mut()) {
                advance_lead(l.0, l.1, ego.t, dt);
            }
            let left = left - dt;
            if left <= dt * T::of(0.5) {
                dwell_left = None;
                served += 1;
                latched = false;
            } else {
                dwell_left = Some(left);
            }
            k += 1;
            continue;
        }

        let env = Surroundings {
            speed_limit: route.segments()[seg].speed_limit,
            next_stop: stops.get(served).copied(),
            lead: lead_state,
            stop_latched: latched,
        };
        let decision = resolve(&ego, params, &env, consts);
        if decision.obstacle == Some(Obstacle::StopLine) {
            latched = true;
        }

        if decision.obstacle == Some(Obstacle::StopLine) && ego.v < standstill {
            // Arrived at the stop sign.
            ego.v = T::zero();
            samples.push(Sample {
                t: ego.t,
                x: ego.x,
                v: T::zero(),
                accel: T::zero(),
                mode: Mode::Stop,
            });
            if final_stop.is_some() && served + 1 == stops.len() {
                break;
            }
            stats[seg].elapsed += dt;
            if let Some(l) = lead.zip(lead_state.as_mut()) {
                advance_lead(l.0, l.1, ego.t, dt);
            }
            if consts.stop_dwell > T::zero() {
                dwell_left = Some(consts.stop_dwell);
            } else {
                served += 1;
                latched = false;
            }
            k += 1;
            continue;
        }

        samples.push(Sample {
            t: ego.t,
            x: ego.x,
            v: ego.v,
            accel: decision.accel,
            mode: decision.mode,
        });
        let next = step(&ego, decision.accel, dt);
        stats[seg].elapsed += dt;
        stats[seg].distance += next.x - ego.x;
        ego = next;
        if let Some(l) = lead.zip(lead_state.as_mut()) {
            advance_lead(l.0, l.1, ego.t, dt);
        }
        k += 1;
    }

    Ok(Trajectory {
        dt,
        samples,
        segments: stats,
    })
}

fn advance_lead<T: Real>(lead: &Lead<T>, state: &mut LeadState<T>, t: T, dt: T) {
    state.x += state.v * dt;
    state.v = lead.speed_at(t + dt).max(T::zero());
}
