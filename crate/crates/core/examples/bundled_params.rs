//! Regenerates `data/calibrated_params.csv`.
//!
//! Seed population: 26 drivers. Each driver has a base parameter vector
//! drawn once (seed 2024) and a small per-segment perturbation, so one
//! driver behaves slightly differently on each of the 8 default segments.
//! Every (driver, segment) trip is simulated from rest, Gaussian speed noise
//! (sd 0.15 m/s) is added, and the GA recovers parameters from that trace.
//!
//! ```text
//! cargo run --release -p fuelband --example bundled_params -- crates/core/data/calibrated_params.csv
//! ```

use std::path::PathBuf;

use fuelband::calibrate::{fit_edm, GaConfig, ReferenceTrace};
use fuelband::edm::{simulate_trip, DriverConstants, DriverParams, Route};
use fuelband::io::write_params_csv;
use fuelband::synth::default_segments;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

const DRIVERS: usize = 26;
const POPULATION_SEED: u64 = 2024;
const NOISE_MPS: f64 = 0.15;

fn base_driver(rng: &mut ChaCha8Rng) -> [f64; 5] {
    let z = Normal::new(0.0, 1.0).unwrap();
    // A shared "aggressiveness" factor correlates a, b and theta.
    let g: f64 = z.sample(rng);
    let a = (0.35 + 0.25 * g + 0.15 * z.sample(rng)).exp();
    let b = (0.55 + 0.2 * g + 0.15 * z.sample(rng)).exp();
    let delta = rng.random_range(2.5..7.0);
    let c1 = rng.random_range(0.3..2.5);
    let theta = -1.2 * g + 0.8 * z.sample(rng);
    [a, b, delta, c1, theta]
}

fn perturb(base: [f64; 5], rng: &mut ChaCha8Rng) -> DriverParams<f64> {
    let z = Normal::new(0.0, 1.0).unwrap();
    let bounds = GaConfig::default().bounds;
    let sd = [0.08, 0.08, 0.3, 0.1, 0.4];
    let mut v = base;
    for j in 0..5 {
        let step: f64 = sd[j] * z.sample(rng);
        v[j] = if j < 2 { v[j] * step.exp() } else { v[j] + step };
        // keep the truth strictly inside the search box
        let margin = 0.05 * (bounds[j][1] - bounds[j][0]);
        v[j] = v[j].clamp(bounds[j][0] + margin, bounds[j][1] - margin);
    }
    DriverParams::from_array(v)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("calibrated_params.csv"));
    let segments = default_segments();
    let mut rng = ChaCha8Rng::seed_from_u64(POPULATION_SEED);
    let mut jobs = Vec::new();
    for d in 0..DRIVERS {
        let base = base_driver(&mut rng);
        for s in 0..segments.len() {
            jobs.push((d, s, perturb(base, &mut rng), rng.random::<u64>()));
        }
    }

    let consts = DriverConstants::default();
    let results: Vec<(usize, usize, DriverParams<f64>, f64)> = jobs
        .par_iter()
        .map(|&(d, s, truth, noise_seed)| {
            let route = Route::single(segments[s]).unwrap();
            let traj = simulate_trip(&truth, &route, &consts, None).unwrap();
            let noise = Normal::new(0.0, NOISE_MPS).unwrap();
            let mut nrng = ChaCha8Rng::seed_from_u64(noise_seed);
            let v: Vec<f64> = traj.speeds().map(|v| (v + noise.sample(&mut nrng)).max(0.0)).collect();
            let reference = ReferenceTrace::new(0.0, traj.dt, v).unwrap();
            let cfg = GaConfig {
                seed: POPULATION_SEED + (d * segments.len() + s) as u64,
                ..GaConfig::default()
            };
            let fit = fit_edm(&reference, &route, &cfg).unwrap();
            (d, s, fit.params, fit.rmse_mph)
        })
        .collect();

    let mean_rmse = results.iter().map(|r| r.3).sum::<f64>() / results.len() as f64;
    eprintln!("{} rows, mean RMSE {mean_rmse:.3} mph", results.len());
    let params: Vec<DriverParams<f64>> = results.iter().map(|r| r.2).collect();
    write_params_csv(&out, &params)?;
    Ok(())
}
