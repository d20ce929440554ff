//! Genetic-algorithm fit of driver parameters to a measured speed trace.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edm::{simulate_trip_from, DriverConstants, DriverParams, Route, Trajectory};
use crate::error::{Error, Result};
use crate::scalar::MPH_PER_MPS;

/// Uniformly sampled speed series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrace {
    pub t0: f64,
    pub dt: f64,
    /// Speeds (m/s).
    pub v: Vec<f64>,
}

impl ReferenceTrace {
    pub fn new(t0: f64, dt: f64, v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::invalid("reference trace is empty"));
        }
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(Error::invalid(format!("reference time step must be positive (got {dt})")));
        }
        if let Some((i, s)) = v.iter().enumerate().find(|(_, s)| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("reference speed at sample {i} is {s}")));
        }
        Ok(Self { t0, dt, v })
    }

    /// Builds a trace from `(t, v)` pairs, which must be uniformly spaced.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        match pairs.len() {
            0 => return Err(Error::invalid("reference trace is empty")),
            1 => return Self::new(pairs[0].0, 1.0, vec![pairs[0].1]),
            _ => {}
        }
        let dt = pairs[1].0 - pairs[0].0;
        for (i, w) in pairs.windows(2).enumerate() {
            let d = w[1].0 - w[0].0;
            if !(d > 0.0) || (d - dt).abs() > 1e-6 * dt.abs().max(1e-9) + 1e-9 {
                return Err(Error::invalid(format!(
                    "reference samples are not uniformly spaced near row {}",
                    i + 1
                )));
            }
        }
        let t0 = pairs[0].0;
        Self::new(t0, dt, pairs.iter().map(|p| p.1).collect())
    }

    pub fn from_trajectory(traj: &Trajectory<f64>) -> Result<Self> {
        let t0 = traj.samples.first().map_or(0.0, |s| s.t);
        Self::new(t0, traj.dt, traj.speeds().collect())
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * (self.v.len() - 1) as f64
    }

    /// Linear interpolation, clamped at the ends.
    pub fn at(&self, t: f64) -> f64 {
        interp(self.t0, self.dt, &self.v, t)
    }
}

fn interp(t0: f64, dt: f64, v: &[f64], t: f64) -> f64 {
    let pos = (t - t0) / dt;
    if pos <= 0.0 {
        return v[0];
    }
    let k = pos.floor() as usize;
    if k + 1 >= v.len() {
        return v[v.len() - 1];
    }
    let w = pos - k as f64;
    v[k] + w * (v[k + 1] - v[k])
}

fn rmse_mps(a: (f64, f64, &[f64]), b: (f64, f64, &[f64])) -> Result<f64> {
    if a.2.is_empty() || b.2.is_empty() {
        return Err(Error::invalid("speed traces must be non-empty"));
    }
    let end = |s: (f64, f64, &[f64])| s.0 + s.1 * (s.2.len() - 1) as f64;
    let start = a.0.max(b.0);
    let stop = end(a).min(end(b));
    if !(stop > start) {
        return Err(Error::invalid("speed traces do not overlap in time"));
    }
    let dt = a.1.min(b.1);
    let steps = ((stop - start) / dt + 1e-9).floor() as usize;
    let mut sum = 0.0;
    for k in 0..=steps {
        let t = start + k as f64 * dt;
        let d = interp(a.0, a.1, a.2, t) - interp(b.0, b.1, b.2, t);
        sum += d * d;
    }
    Ok((sum / (steps + 1) as f64).sqrt())
}

/// RMS speed difference (mph) over the overlapping time span, both traces
/// resampled onto the finer of the two time steps.
pub fn speed_rmse(simulated: &Trajectory<f64>, reference: &ReferenceTrace) -> Result<f64> {
    let sim: Vec<f64> = simulated.speeds().collect();
    let t0 = simulated.samples.first().map_or(0.0, |s| s.t);
    let r = rmse_mps((t0, simulated.dt, &sim), (reference.t0, reference.dt, &reference.v))?;
    Ok(r * MPH_PER_MPS)
}

/// RMS difference (mph) between two reference traces.
pub fn trace_rmse(a: &ReferenceTrace, b: &ReferenceTrace) -> Result<f64> {
    Ok(rmse_mps((a.t0, a.dt, &a.v), (b.t0, b.dt, &b.v))? * MPH_PER_MPS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    /// `[lo, hi]` per parameter, in the order a, b, delta, c1, theta.
    pub bounds: [[f64; 2]; 5],
    pub crossover_rate: f64,
    /// Per-gene probability of a Gaussian perturbation.
    pub mutation_rate: f64,
    /// Mutation standard deviation as a fraction of the bound width.
    pub mutation_scale: f64,
    pub elite: usize,
    pub tournament: usize,
    pub seed: u64,
    pub driver: DriverConstants<f64>,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 60,
            bounds: [[0.3, 4.0], [0.3, 4.0], [1.0, 10.0], [0.0, 5.0], [-5.0, 5.0]],
            crossover_rate: 0.9,
            mutation_rate: 0.2,
            mutation_scale: 0.1,
            elite: 2,
            tournament: 3,
            seed: 0,
            driver: DriverConstants::default(),
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::invalid("GA population must be at least 4"));
        }
        for (i, [lo, hi]) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "bounds for {} are degenerate: [{lo}, {hi}]",
                    DriverParams::<f64>::NAMES[i]
                )));
            }
        }
        if self.bounds[0][0] <= 0.0 || self.bounds[1][0] <= 0.0 || self.bounds[2][0] <= 0.0 || self.bounds[3][0] < 0.0 {
            return Err(Error::invalid("bounds must keep a, b, delta positive and c1 non-negative"));
        }
        for (name, r) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
            ("mutation_scale", self.mutation_scale),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1] (got {r})")));
            }
        }
        if self.elite >= self.population {
            return Err(Error::invalid("elite count must be below the population size"));
        }
        if self.tournament == 0 {
            return Err(Error::invalid("tournament size must be at least 1"));
        }
        self.driver.validate()
    }

    fn clamp(&self, g: &mut [f64; 5]) {
        for (v, [lo, hi]) in g.iter_mut().zip(&self.bounds) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: DriverParams<f64>,
    pub rmse_mph: f64,
    /// Best RMSE (mph) after each generation; entry 0 is the initial population.
    pub history: Vec<f64>,
    /// Candidates whose simulation failed.
    pub failed_evaluations: usize,
}

fn evaluate(g: &[f64; 5], reference: &ReferenceTrace, route: &Route<f64>, cfg: &GaConfig) -> Option<f64> {
    let p = DriverParams::from_array(*g);
    let v0 = reference.v[0];
    let traj = simulate_trip_from(&p, route, &cfg.driver, None, v0).ok()?;
    speed_rmse(&traj, reference).ok().filter(|r| r.is_finite())
}

/// Runs the GA from a random initial population inside the bounds.
pub fn fit_edm(reference: &ReferenceTrace, route: &Route<f64>, config: &GaConfig) -> Result<CalibrationResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init: Vec<DriverParams<f64>> = (0..config.population)
        .map(|_| DriverParams::from_array(std::array::from_fn(|j| rng.random_range(config.bounds[j][0]..=config.bounds[j][1]))))
        .collect();
    evolve(reference, route, config, init, rng)
}

/// Runs the GA from a given initial population (clamped to the bounds).
pub fn fit_edm_from(
    reference: &ReferenceTrace,
    route: &Route<f64>,
    config: &GaConfig,
    initial: Vec<DriverParams<f64>>,
) -> Result<CalibrationResult> {
    config.validate()?;
    if initial.len() != config.population {
        return Err(Error::invalid(format!(
            "initial population has {} members, config expects {}",
            initial.len(),
            config.population
        )));
    }
    let rng = ChaCha8Rng::seed_from_u64(config.seed);
    evolve(reference, route, config, initial, rng)
}

fn evolve(
    reference: &ReferenceTrace,
    route: &Route<f64>,
    cfg: &GaConfig,
    initial: Vec<DriverParams<f64>>,
    mut rng: ChaCha8Rng,
) -> Result<CalibrationResult> {
    let mut pop: Vec<[f64; 5]> = initial
        .iter()
        .map(|p| {
            let mut g = p.to_array();
            cfg.clamp(&mut g);
            g
        })
        .collect();
    let score = |pop: &[[f64; 5]]| -> Vec<Option<f64>> {
        pop.par_iter().map(|g| evaluate(g, reference, route, cfg)).collect()
    };
    let mut fit = score(&pop);
    let mut failed = fit.iter().filter(|f| f.is_none()).count();
    // lower is better; failures rank last
    let key = |f: &Option<f64>| f.unwrap_or(f64::INFINITY);
    let ranking = |fit: &[Option<f64>]| {
        let mut idx: Vec<usize> = (0..fit.len()).collect();
        idx.sort_by(|&a, &b| key(&fit[a]).total_cmp(&key(&fit[b])).then(a.cmp(&b)));
        idx
    };

    let mut order = ranking(&fit);
    let mut history = vec![key(&fit[order[0]])];
    let mutation: Vec<Normal<f64>> = cfg
        .bounds
        .iter()
        .map(|[lo, hi]| Normal::new(0.0, cfg.mutation_scale * (hi - lo)).expect("finite scale"))
        .collect();
    let all: Vec<usize> = (0..cfg.population).collect();

    for _ in 0..cfg.generations {
        let mut next: Vec<[f64; 5]> = order[..cfg.elite].iter().map(|&i| pop[i]).collect();
        let mut next_fit: Vec<Option<f64>> = order[..cfg.elite].iter().map(|&i| fit[i]).collect();
        let tournament = |rng: &mut ChaCha8Rng| {
            let picks: Vec<usize> = (0..cfg.tournament).map(|_| *all.choose(rng).expect("non-empty")).collect();
            *picks
                .iter()
                .min_by(|&&a, &&b| key(&fit[a]).total_cmp(&key(&fit[b])).then(a.cmp(&b)))
                .expect("non-empty")
        };
        let mut children = Vec::with_capacity(cfg.population - cfg.elite);
        while next.len() + children.len() < cfg.population {
            let p1 = tournament(&mut rng);
            let p2 = tournament(&mut rng);
            let mut child = pop[p1];
            if rng.random::<f64>() < cfg.crossover_rate {
                for (j, c) in child.iter_mut().enumerate() {
                    if rng.random::<bool>() {
                        *c = pop[p2][j];
                    }
                }
            }
            for (j, c) in child.iter_mut().enumerate() {
                if rng.random::<f64>() < cfg.mutation_rate {
                    *c += mutation[j].sample(&mut rng);
                }
            }
            cfg.clamp(&mut child);
            children.push(child);
        }
        let child_fit = score(&children);
        failed += child_fit.iter().filter(|f| f.is_none()).count();
        next.extend(children);
        next_fit.extend(child_fit);
        pop = next;
        fit = next_fit;
        order = ranking(&fit);
        history.push(key(&fit[order[0]]));
    }

    let best = order[0];
    match fit[best] {
        Some(rmse) => Ok(CalibrationResult {
            params: DriverParams::from_array(pop[best]),
            rmse_mph: rmse,
            history,
            failed_evaluations: failed,
        }),
        None => Err(Error::Calibration("every candidate simulation failed".into())),
    }
}

/// Cuts a whole-route trace at the segment boundaries, locating them by
/// integrating the measured speed. Each piece is re-based to start at 0 s.
pub fn split_by_segment(reference: &ReferenceTrace, route: &Route<f64>) -> Result<Vec<ReferenceTrace>> {
    let ends = route.segment_ends();
    let mut pieces = Vec::with_capacity(ends.len());
    let mut start = 0usize;
    let mut dist = 0.0;
    let mut k = 0usize;
    for (s, &end) in ends.iter().enumerate() {
        let last = s + 1 == ends.len();
        if last {
            k = reference.len() - 1;
        } else {
            while k + 1 < reference.len() && dist < end {
                dist += 0.5 * (reference.v[k] + reference.v[k + 1]) * reference.dt;
                k += 1;
            }
        }
        if k <= start {
            return Err(Error::invalid(format!("reference trace does not cover segment {s}")));
        }
        pieces.push(ReferenceTrace::new(0.0, reference.dt, reference.v[start..=k].to_vec())?);
        start = k;
    }
    Ok(pieces)
}

/// Calibrates each segment of `route` on its own slice of the trace.
/// Segment `s` uses seed `config.seed + s`.
pub fn calibrate_route(
    reference: &ReferenceTrace,
    route: &Route<f64>,
    config: &GaConfig,
) -> Result<Vec<CalibrationResult>> {
    let pieces = split_by_segment(reference, route)?;
    pieces
        .iter()
        .zip(route.segments())
        .enumerate()
        .map(|(s, (piece, seg))| {
            let cfg = GaConfig {
                seed: config.seed.wrapping_add(s as u64),
                ..config.clone()
            };
            fit_edm(piece, &Route::single(*seg)?, &cfg)
        })
        .collect()
}
