//! Synthetic drivers from a t-copula over calibrated parameters, and the
//! Monte Carlo trip dataset built from them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::edm::{simulate_trip, DriverConstants, DriverParams, Route, RouteSegment};
use crate::error::{Error, Result};
use crate::model::Features;
use crate::plant::{simulate_energy, PlantParams};
use crate::scalar::mph_to_mps;

/// Number of driver parameters.
pub const DIM: usize = 5;

/// Degrees-of-freedom grid searched by [`fit_tcopula`].
pub const NU_GRID: std::ops::RangeInclusive<u32> = 2..=30;

/// Smallest eigenvalue kept by the positive-definite repair.
const EIG_FLOOR: f64 = 1e-6;

/// Empirical marginal: sorted sample values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub sorted: Vec<f64>,
}

impl Marginal {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Self { sorted: values }
    }

    /// Piecewise-linear inverse through `(k / (n + 1), x_(k))`, clamped to
    /// the sample range.
    pub fn inverse(&self, u: f64) -> f64 {
        let n = self.sorted.len();
        let pos = u * (n + 1) as f64;
        if pos <= 1.0 {
            return self.sorted[0];
        }
        if pos >= n as f64 {
            return self.sorted[n - 1];
        }
        let k = pos.floor() as usize;
        let w = pos - k as f64;
        self.sorted[k - 1] + w * (self.sorted[k] - self.sorted[k - 1])
    }

    /// Empirical CDF `#{x_i <= x} / n`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaModel {
    /// Row-major correlation matrix.
    pub corr: [[f64; DIM]; DIM],
    pub nu: u32,
    pub marginals: Vec<Marginal>,
    /// Pairwise Kendall tau of the fitted data.
    pub kendall: [[f64; DIM]; DIM],
    /// Whether the correlation matrix needed positive-definite repair.
    pub repaired: bool,
}

impl CopulaModel {
    /// Kendall tau implied by the correlation, `2 asin(rho) / pi`.
    pub fn implied_tau(&self, i: usize, j: usize) -> f64 {
        2.0 * self.corr[i][j].asin() / std::f64::consts::PI
    }

    fn corr_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(DIM, DIM, |i, j| self.corr[i][j])
    }
}

/// Kendall's tau-b of two equally long samples.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tie_x += 1;
            } else if dy == 0.0 {
                tie_y += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let denom = (((concordant + discordant + tie_x) as f64) * ((concordant + discordant + tie_y) as f64)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (concordant - discordant) as f64 / denom
    }
}

/// Pseudo-observations `rank / (n + 1)` of one column; ties share the
/// average rank.
pub fn pseudo_observations(col: &[f64]) -> Vec<f64> {
    let n = col.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    let mut u = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && col[idx[j + 1]] == col[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            u[k] = rank / (n + 1) as f64;
        }
        i = j + 1;
    }
    u
}

/// Clips eigenvalues at a small floor and rescales to unit diagonal.
/// Returns the matrix unchanged when it is already positive definite.
pub fn nearest_pd(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().all(|&l| l > EIG_FLOOR) {
        return (m.clone(), false);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(EIG_FLOOR));
    let a = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d = DVector::from_fn(m.nrows(), |i, _| 1.0 / a[(i, i)].sqrt());
    let out = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        if i == j {
            1.0
        } else {
            a[(i, j)] * d[i] * d[j]
        }
    });
    (out, true)
}

/// Mean t-copula log-density of pseudo-observations `u` (rows of length
/// `DIM`) under correlation `corr` and `nu` degrees of freedom.
pub fn tcopula_loglik(u: &[[f64; DIM]], corr: &DMatrix<f64>, nu: f64) -> Result<f64> {
    let chol = corr
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Fit("correlation matrix is not positive definite".into()))?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inv = chol.inverse();
    let t = StudentsT::new(0.0, 1.0, nu).map_err(|e| Error::Fit(e.to_string()))?;
    let d = DIM as f64;
    let c_joint = ln_gamma((nu + d) / 2.0) - ln_gamma(nu / 2.0) - d / 2.0 * (nu * std::f64::consts::PI).ln()
        - 0.5 * log_det;
    let c_marg = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln();
    let mut total = 0.0;
    let mut x = DVector::zeros(DIM);
    for row in u {
        let mut marg = 0.0;
        for j in 0..DIM {
            let q = t.inverse_cdf(row[j]);
            x[j] = q;
            marg += c_marg - (nu + 1.0) / 2.0 * (q * q / nu).ln_1p();
        }
        let quad = x.dot(&(&inv * &x));
        let joint = c_joint - (nu + d) / 2.0 * (quad / nu).ln_1p();
        total += joint - marg;
    }
    Ok(total / u.len() as f64)
}

/// Fits a t-copula with empirical marginals to parameter rows.
pub fn fit_tcopula(data: &[DriverParams<f64>]) -> Result<CopulaModel> {
    let n = data.len();
    if n < 5 {
        return Err(Error::Fit(format!("copula fit needs at least 5 rows, got {n}")));
    }
    let cols: Vec<Vec<f64>> = (0..DIM).map(|j| data.iter().map(|p| p.to_array()[j]).collect()).collect();
    for (j, c) in cols.iter().enumerate() {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit(format!("column {} has non-finite values", DriverParams::<f64>::NAMES[j])));
        }
        if c.iter().all(|&v| v == c[0]) {
            return Err(Error::Fit(format!("column {} is constant", DriverParams::<f64>::NAMES[j])));
        }
    }

    let mut kendall = [[1.0; DIM]; DIM];
    let mut raw = DMatrix::identity(DIM, DIM);
    for i in 0..DIM {
        for j in i + 1..DIM {
            let tau = kendall_tau(&cols[i], &cols[j]);
            kendall[i][j] = tau;
            kendall[j][i] = tau;
            let rho = (std::f64::consts::FRAC_PI_2 * tau).sin();
            raw[(i, j)] = rho;
            raw[(j, i)] = rho;
        }
    }
    let (corr, repaired) = nearest_pd(&raw);
    if corr.clone().cholesky().is_none() {
        return Err(Error::Fit("correlation matrix could not be repaired".into()));
    }
    if repaired {
        log::warn!("copula correlation was not positive definite; eigenvalues clipped");
    }

    let pseudo: Vec<Vec<f64>> = cols.iter().map(|c| pseudo_observations(c)).collect();
    let u: Vec<[f64; DIM]> = (0..n).map(|i| std::array::from_fn(|j| pseudo[j][i])).collect();
    let scores = NU_GRID
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&nu| tcopula_loglik(&u, &corr, nu as f64).map(|ll| (nu, ll)))
        .collect::<Result<Vec<_>>>()?;
    let mut best = scores[0];
    for &(nu, ll) in &scores[1..] {
        if ll > best.1 {
            best = (nu, ll);
        }
    }

    Ok(CopulaModel {
        corr: std::array::from_fn(|i| std::array::from_fn(|j| corr[(i, j)])),
        nu: best.0,
        marginals: cols.into_iter().map(Marginal::new).collect(),
        kendall,
        repaired,
    })
}

/// Draws copula uniforms, `n` rows of `DIM` values in (0, 1).
pub fn sample_uniforms(model: &CopulaModel, n: usize, seed: u64) -> Result<Vec<[f64; DIM]>> {
    let chol = model
        .corr_matrix()
        .cholesky()
        .ok_or_else(|| Error::Fit("copula correlation is not positive definite".into()))?;
    let l = chol.l();
    let nu = model.nu as f64;
    let chi = ChiSquared::new(nu).map_err(|e| Error::Fit(e.to_string()))?;
    let t = StudentsT::new(0.0, 1.0, nu).map_err(|e| Error::Fit(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut eps = DVector::zeros(DIM);
    for _ in 0..n {
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(&mut rng);
        }
        let z = &l * &eps;
        let w: f64 = chi.sample(&mut rng) / nu;
        let s = w.sqrt();
        out.push(std::array::from_fn(|j| t.cdf(z[j] / s)));
    }
    Ok(out)
}

/// Samples `n` synthetic driver parameter rows.
pub fn sample_tcopula(model: &CopulaModel, n: usize, seed: u64) -> Result<Vec<DriverParams<f64>>> {
    Ok(sample_uniforms(model, n, seed)?
        .into_iter()
        .map(|u| DriverParams::from_array(std::array::from_fn(|j| model.marginals[j].inverse(u[j]))))
        .collect())
}

/// One supervised example: driver, segment and initial charge, with the
/// resulting equivalent fuel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub c1: f64,
    pub theta: f64,
    pub v_lim_mps: f64,
    pub l_r_m: f64,
    pub soc0: f64,
    pub m_f_eq_g: f64,
}

impl FeatureRow {
    pub const N_FEATURES: usize = 8;
    pub const HEADER: [&'static str; 9] =
        ["a", "b", "delta", "c1", "theta", "v_lim_mps", "l_r_m", "soc0", "m_f_eq_g"];

    pub fn features(&self) -> [f64; 8] {
        [self.a, self.b, self.delta, self.c1, self.theta, self.v_lim_mps, self.l_r_m, self.soc0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub param_index: usize,
    pub segment_index: usize,
    pub soc0: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub n_params: usize,
    pub segments: Vec<RouteSegment<f64>>,
    pub soc0: Vec<f64>,
    pub requested: usize,
    pub rows: usize,
    pub exclusions: Vec<Exclusion>,
    /// Lowest and highest state of charge seen over all kept trips.
    pub soc_range: (f64, f64),
    /// Kept trips whose charge left the battery window.
    pub soc_violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<FeatureRow>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn features(&self) -> Features<f64> {
        let data = self.rows.iter().flat_map(|r| r.features()).collect();
        Features::new(FeatureRow::N_FEATURES, data).expect("rows have 8 features")
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.m_f_eq_g).collect()
    }
}

/// Inputs that stay fixed across a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default)]
    pub driver: DriverConstants<f64>,
    #[serde(default)]
    pub plant: PlantParams<f64>,
    /// Largest tolerated fraction of excluded rows.
    #[serde(default = "default_max_excluded")]
    pub max_excluded_fraction: f64,
}

fn default_max_excluded() -> f64 {
    0.01
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            driver: DriverConstants::default(),
            plant: PlantParams::default(),
            max_excluded_fraction: default_max_excluded(),
        }
    }
}

/// The eight default route segments: four stop-terminated urban segments,
/// then open suburban and highway segments, ending at a stop.
pub fn default_segments() -> Vec<RouteSegment<f64>> {
    [
        (0.4, 25.0, true),
        (0.7, 35.0, true),
        (0.5, 30.0, true),
        (0.9, 45.0, true),
        (0.8, 40.0, false),
        (1.2, 55.0, false),
        (2.5, 65.0, false),
        (1.0, 55.0, true),
    ]
    .iter()
    .map(|&(km, mph, stop)| RouteSegment {
        length: km * 1000.0,
        speed_limit: mph_to_mps(mph),
        ends_with_stop: stop,
    })
    .collect()
}

pub const DEFAULT_SOC0: [f64; 3] = [0.26, 0.30, 0.40];

enum Outcome {
    Row(FeatureRow, (f64, f64), bool),
    Excluded(String),
}

/// Simulates every (driver, segment, initial charge) triple. Rows come out
/// in driver-major, then segment, then charge order.
pub fn generate_dataset(
    params: &[DriverParams<f64>],
    segments: &[RouteSegment<f64>],
    soc0_list: &[f64],
    config: &SimConfig,
    seed: u64,
) -> Result<Dataset> {
    if segments.is_empty() {
        return Err(Error::invalid("at least one route segment is required"));
    }
    if soc0_list.is_empty() {
        return Err(Error::invalid("at least one initial state of charge is required"));
    }
    config.driver.validate()?;
    config.plant.validate()?;
    let batt = &config.plant.battery;
    for &s in soc0_list {
        if !(s >= batt.soc_min && s <= batt.soc_max) {
            return Err(Error::invalid(format!(
                "initial state of charge {s} outside [{}, {}]",
                batt.soc_min, batt.soc_max
            )));
        }
    }
    let routes = segments
        .iter()
        .map(|s| Route::single(*s))
        .collect::<Result<Vec<_>>>()?;

    let pairs: Vec<(usize, usize)> = (0..params.len())
        .flat_map(|p| (0..segments.len()).map(move |s| (p, s)))
        .collect();
    let outcomes: Vec<Vec<Outcome>> = pairs
        .par_iter()
        .map(|&(pi, si)| {
            let p = &params[pi];
            let seg = &segments[si];
            let trip = match simulate_trip(p, &routes[si], &config.driver, None) {
                Ok(t) => t,
                Err(e) => return soc0_list.iter().map(|_| Outcome::Excluded(e.to_string())).collect(),
            };
            soc0_list
                .iter()
                .map(|&soc0| match simulate_energy(&trip, soc0, &config.plant) {
                    Ok(r) if r.m_f_eq >= 0.0 && r.m_f_eq.is_finite() => {
                        let lo = r.soc_trace.iter().copied().fold(soc0, f64::min);
                        let hi = r.soc_trace.iter().copied().fold(soc0, f64::max);
                        let inside = lo >= batt.soc_min - 1e-12 && hi <= batt.soc_max + 1e-12;
                        Outcome::Row(
                            FeatureRow {
                                a: p.a,
                                b: p.b,
                                delta: p.delta,
                                c1: p.c1,
                                theta: p.theta,
                                v_lim_mps: seg.speed_limit,
                                l_r_m: seg.length,
                                soc0,
                                m_f_eq_g: r.m_f_eq,
                            },
                            (lo, hi),
                            inside,
                        )
                    }
                    Ok(r) => Outcome::Excluded(format!("equivalent fuel {} g is negative", r.m_f_eq)),
                    Err(e) => Outcome::Excluded(e.to_string()),
                })
                .collect()
        })
        .collect();

    let requested = params.len() * segments.len() * soc0_list.len();
    let mut rows = Vec::with_capacity(requested);
    let mut exclusions = Vec::new();
    let mut soc_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut soc_violations = 0;
    for (&(pi, si), outs) in pairs.iter().zip(outcomes) {
        for (o, &soc0) in outs.into_iter().zip(soc0_list) {
            match o {
                Outcome::Row(row, (lo, hi), inside) => {
                    rows.push(row);
                    soc_range = (soc_range.0.min(lo), soc_range.1.max(hi));
                    if !inside {
                        soc_violations += 1;
                    }
                }
                Outcome::Excluded(reason) => exclusions.push(Exclusion {
                    param_index: pi,
                    segment_index: si,
                    soc0,
                    reason,
                }),
            }
        }
    }
    let frac = exclusions.len() as f64 / requested.max(1) as f64;
    if !exclusions.is_empty() {
        log::warn!("{} of {requested} trips excluded", exclusions.len());
    }
    if frac >= config.max_excluded_fraction && !exclusions.is_empty() {
        return Err(Error::SimulationAborted {
            segment: exclusions[0].segment_index,
            reason: format!(
                "{} of {requested} trips failed ({:.2}%), first: {}",
                exclusions.len(),
                100.0 * frac,
                exclusions[0].reason
            ),
        });
    }
    Ok(Dataset {
        meta: DatasetMeta {
            seed,
            n_params: params.len(),
            segments: segments.to_vec(),
            soc0: soc0_list.to_vec(),
            requested,
            rows: rows.len(),
            exclusions,
            soc_range,
            soc_violations,
        },
        rows,
    })
}
