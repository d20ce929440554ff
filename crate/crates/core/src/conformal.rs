//! Conformal prediction intervals: conformalized quantile regression and
//! the cross-conformal (CV, CV+) and jackknife+-after-bootstrap baselines.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{subset, Features, Learner, QuantileLearner, Regressor};
use crate::scalar::Real;
use crate::stats::{ceil_rank, floor_rank, kth_smallest};

/// Disjoint train / calibration / test row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl DataSplit {
    /// Train and calibration rows concatenated, in that order.
    pub fn pooled(&self) -> Vec<usize> {
        self.train.iter().chain(&self.calib).copied().collect()
    }
}

/// Random permutation of `0..n` cut into three parts. The first two sizes
/// are `floor(n * f)`; the test part takes the remainder.
pub fn split(n: usize, fractions: [f64; 3], seed: u64) -> Result<DataSplit> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::invalid("split fractions must be positive"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions sum to {total}, not 1")));
    }
    let n_train = floor_rank(fractions[0], n);
    let n_calib = floor_rank(fractions[1], n);
    if n_train == 0 || n_calib == 0 || n_train + n_calib >= n {
        return Err(Error::invalid(format!(
            "{n} rows cannot be split into three non-empty parts with fractions {fractions:?}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = perm.split_off(n_train + n_calib);
    let calib = perm.split_off(n_train);
    Ok(DataSplit {
        train: perm,
        calib,
        test,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval<T> {
    pub lo: T,
    pub hi: T,
    /// Set when the endpoints arrived in the wrong order and were swapped.
    pub crossing: bool,
}

impl<T: Real> PredictionInterval<T> {
    pub fn new(lo: T, hi: T) -> Self {
        if lo > hi {
            Self {
                lo: hi,
                hi: lo,
                crossing: true,
            }
        } else {
            Self {
                lo,
                hi,
                crossing: false,
            }
        }
    }

    pub fn width(&self) -> T {
        self.hi - self.lo
    }

    /// Closed-interval membership.
    pub fn contains(&self, y: T) -> bool {
        self.lo <= y && y <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "CQR")]
    Cqr,
    #[serde(rename = "CV")]
    Cv,
    #[serde(rename = "CV+")]
    CvPlus,
    #[serde(rename = "JK+aB")]
    JackknifeAb,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cqr, Method::Cv, Method::CvPlus, Method::JackknifeAb];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cqr => "CQR",
            Method::Cv => "CV",
            Method::CvPlus => "CV+",
            Method::JackknifeAb => "JK+aB",
        }
    }

    /// Accepts the display name or a lowercase alias (`cqr`, `cv`, `cvplus`, `jkab`).
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cqr" => Ok(Method::Cqr),
            "cv" => Ok(Method::Cv),
            "cv+" | "cvplus" | "cv_plus" => Ok(Method::CvPlus),
            "jk+ab" | "jkab" | "jackknife+ab" => Ok(Method::JackknifeAb),
            _ => Err(Error::invalid(format!("unknown method `{s}`"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// How far `y` falls outside `[q_lo, q_hi]`; negative inside.
#[inline]
pub fn conformity_score<T: Real>(q_lo: T, q_hi: T, y: T) -> T {
    (q_lo - y).max(y - q_hi)
}

/// Rank `ceil((1 - alpha)(n + 1))` of the upper conformal quantile.
pub fn upper_rank(alpha: f64, n: usize) -> usize {
    ceil_rank(1.0 - alpha, n + 1)
}

/// Rank `floor(alpha (n + 1))` of the lower conformal quantile.
pub fn lower_rank(alpha: f64, n: usize) -> usize {
    floor_rank(alpha, n + 1)
}

fn checked_upper(alpha: f64, n: usize) -> Result<usize> {
    let k = upper_rank(alpha, n);
    if k > n {
        return Err(Error::InsufficientScores { rank: k, available: n });
    }
    Ok(k.max(1))
}

fn checked_lower(alpha: f64, n: usize) -> Result<usize> {
    let k = lower_rank(alpha, n);
    if k == 0 {
        let need = (1.0 / alpha).ceil() as usize - 1;
        return Err(Error::invalid(format!(
            "alpha = {alpha} needs at least {need} samples for a finite lower endpoint, got {n}"
        )));
    }
    Ok(k.min(n))
}

/// The `ceil((1 - alpha)(n + 1))`-th smallest score.
pub fn q_hat<T: Real>(scores: &[T], alpha: f64) -> Result<T> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::InsufficientScores { rank: 1, available: 0 });
    }
    let k = checked_upper(alpha, scores.len())?;
    Ok(kth_smallest(&mut scores.to_vec(), k))
}

/// Conformalized quantile regression: two quantile models plus a
/// calibration margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqrModel<T, M> {
    pub lower: M,
    pub upper: M,
    pub q_alpha: T,
    pub alpha: f64,
}

impl<T: Real, M: Regressor<T>> CqrModel<T, M> {
    /// Trains the band on `(x_train, y_train)` at levels `alpha/2` and
    /// `1 - alpha/2`, then calibrates it on `(x_cal, y_cal)`.
    pub fn fit<L>(
        learner: &L,
        x_train: &Features<T>,
        y_train: &[T],
        x_cal: &Features<T>,
        y_cal: &[T],
        alpha: f64,
    ) -> Result<Self>
    where
        L: QuantileLearner<T, Model = M>,
    {
        check_alpha(alpha)?;
        if x_cal.n_rows() != y_cal.len() {
            return Err(Error::invalid("calibration features and targets differ in length"));
        }
        // Fail before training if the calibration set cannot support alpha.
        checked_upper(alpha, y_cal.len())?;
        let (lower, upper) = rayon::join(
            || learner.fit_quantile(x_train, y_train, T::of(alpha / 2.0)),
            || learner.fit_quantile(x_train, y_train, T::of(1.0 - alpha / 2.0)),
        );
        Self::calibrate(lower?, upper?, x_cal, y_cal, alpha)
    }

    /// Computes the margin for an already-trained band.
    pub fn calibrate(lower: M, upper: M, x_cal: &Features<T>, y_cal: &[T], alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let scores: Vec<T> = x_cal
            .rows()
            .zip(y_cal)
            .map(|(r, &y)| conformity_score(lower.predict(r), upper.predict(r), y))
            .collect();
        let q_alpha = q_hat(&scores, alpha)?;
        Ok(Self {
            lower,
            upper,
            q_alpha,
            alpha,
        })
    }

    /// Uncalibrated quantile band `(q_lo(x), q_hi(x))`.
    pub fn raw_band(&self, x: &[T]) -> (T, T) {
        (self.lower.predict(x), self.upper.predict(x))
    }

    pub fn predict(&self, x: &[T]) -> PredictionInterval<T> {
        let (lo, hi) = self.raw_band(x);
        PredictionInterval::new(lo - self.q_alpha, hi + self.q_alpha)
    }

    pub fn predict_all(&self, x: &Features<T>) -> Vec<PredictionInterval<T>> {
        x.rows().map(|r| self.predict(r)).collect()
    }
}

/// K-fold models with out-of-fold residuals, shared by CV and CV+.
#[derive(Debug, Clone)]
pub struct CrossConformal<T, M> {
    pub folds: Vec<M>,
    /// Fold index of every pooled row.
    pub fold_of: Vec<usize>,
    /// `|y_i - mu_{-fold(i)}(x_i)|`.
    pub residuals: Vec<T>,
    /// Point model trained on all pooled rows; needed by CV only.
    pub full: Option<M>,
}

/// Contiguous fold assignment: fold `k` owns rows `[k n / K, (k + 1) n / K)`.
pub fn contiguous_folds(n: usize, k: usize) -> Vec<usize> {
    let mut fold_of = vec![0; n];
    for f in 0..k {
        for slot in &mut fold_of[f * n / k..(f + 1) * n / k] {
            *slot = f;
        }
    }
    fold_of
}

impl<T: Real, M: Regressor<T>> CrossConformal<T, M> {
    pub fn fit<L>(learner: &L, x: &Features<T>, y: &[T], k: usize, with_full: bool) -> Result<Self>
    where
        L: Learner<T, Model = M>,
    {
        let n = y.len();
        if x.n_rows() != n {
            return Err(Error::invalid("features and targets differ in length"));
        }
        if k < 2 || n < k {
            return Err(Error::invalid(format!("need 2 <= K <= n, got K = {k}, n = {n}")));
        }
        let fold_of = contiguous_folds(n, k);
        let fit_fold = |f: usize| {
            let idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
            let (xs, ys) = subset(x, y, &idx);
            learner.fit(&xs, &ys)
        };
        let (folds, full) = rayon::join(
            || (0..k).into_par_iter().map(fit_fold).collect::<Result<Vec<_>>>(),
            || with_full.then(|| learner.fit(x, y)).transpose(),
        );
        let folds = folds?;
        let residuals = (0..n)
            .map(|i| (y[i] - folds[fold_of[i]].predict(x.row(i))).abs())
            .collect();
        Ok(Self {
            folds,
            fold_of,
            residuals,
            full: full?,
        })
    }

    /// CV half-width: the `ceil((1 - alpha)(n + 1))`-th smallest residual.
    pub fn cv_half_width(&self, alpha: f64) -> Result<T> {
        q_hat(&self.residuals, alpha)
    }

    /// CV intervals `mu(x) +- half_width` around the full-data model.
    pub fn cv_predict_all(&self, x: &Features<T>, alpha: f64) -> Result<Vec<PredictionInterval<T>>> {
        let full = self
            .full
            .as_ref()
            .ok_or_else(|| Error::invalid("CV needs the full-data model; fit with with_full = true"))?;
        let h = self.cv_half_width(alpha)?;
        Ok(x.rows()
            .map(|r| {
                let m = full.predict(r);
                PredictionInterval::new(m - h, m + h)
            })
            .collect())
    }

    /// CV+ interval at one point.
    pub fn cvplus_predict(&self, x: &[T], alpha: f64) -> Result<PredictionInterval<T>> {
        let preds: Vec<T> = self.folds.iter().map(|m| m.predict(x)).collect();
        let centers: Vec<T> = self.fold_of.iter().map(|&f| preds[f]).collect();
        plus_interval(&centers, &self.residuals, alpha)
    }

    pub fn cvplus_predict_all(&self, x: &Features<T>, alpha: f64) -> Result<Vec<PredictionInterval<T>>> {
        check_alpha(alpha)?;
        x.rows()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|r| self.cvplus_predict(r, alpha))
            .collect()
    }
}

/// Lower: `floor(alpha (n+1))`-th smallest of `c_i - R_i`; upper:
/// `ceil((1-alpha)(n+1))`-th smallest of `c_i + R_i`.
pub fn plus_interval<T: Real>(centers: &[T], residuals: &[T], alpha: f64) -> Result<PredictionInterval<T>> {
    check_alpha(alpha)?;
    let n = centers.len();
    debug_assert_eq!(n, residuals.len());
    let kl = checked_lower(alpha, n)?;
    let ku = checked_upper(alpha, n)?;
    let mut lo: Vec<T> = centers.iter().zip(residuals).map(|(&c, &r)| c - r).collect();
    let mut hi: Vec<T> = centers.iter().zip(residuals).map(|(&c, &r)| c + r).collect();
    Ok(PredictionInterval::new(kth_smallest(&mut lo, kl), kth_smallest(&mut hi, ku)))
}

/// Jackknife+-after-bootstrap with mean aggregation over out-of-bag models.
#[derive(Debug, Clone)]
pub struct JackknifeAb<T, M> {
    pub models: Vec<M>,
    /// Out-of-bag model indices per pooled row; empty when the row was in
    /// every resample.
    pub oob: Vec<Vec<u32>>,
    /// Out-of-bag residuals of the rows that have at least one such model.
    pub residuals: Vec<T>,
    /// Pooled rows contributing to `residuals`, in the same order.
    pub kept: Vec<usize>,
}

/// `b` bootstrap resamples of size `n`, drawn with replacement.
pub fn bootstrap_resamples(n: usize, b: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..b)
        .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
        .collect()
}

impl<T: Real, M: Regressor<T>> JackknifeAb<T, M> {
    pub fn fit_seeded<L>(learner: &L, x: &Features<T>, y: &[T], b: usize, seed: u64) -> Result<Self>
    where
        L: Learner<T, Model = M>,
    {
        if b < 2 {
            return Err(Error::invalid(format!("need at least 2 bootstrap models, got {b}")));
        }
        Self::fit(learner, x, y, &bootstrap_resamples(y.len(), b, seed))
    }

    /// Fits one model per given resample (row indices into the pool).
    pub fn fit<L>(learner: &L, x: &Features<T>, y: &[T], resamples: &[Vec<usize>]) -> Result<Self>
    where
        L: Learner<T, Model = M>,
    {
        let n = y.len();
        if x.n_rows() != n || n == 0 {
            return Err(Error::invalid("features and targets must be non-empty and equal in length"));
        }
        if resamples.len() < 2 {
            return Err(Error::invalid("need at least 2 bootstrap resamples"));
        }
        if resamples.iter().flatten().any(|&i| i >= n) {
            return Err(Error::invalid("bootstrap index out of range"));
        }
        let models = resamples
            .par_iter()
            .map(|idx| {
                let (xs, ys) = subset(x, y, idx);
                learner.fit(&xs, &ys)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_models(models, resamples, x, y)
    }

    /// Builds the out-of-bag bookkeeping for already-trained models.
    pub fn from_models(models: Vec<M>, resamples: &[Vec<usize>], x: &Features<T>, y: &[T]) -> Result<Self> {
        let n = y.len();
        let mut in_bag = vec![false; n * resamples.len()];
        for (b, idx) in resamples.iter().enumerate() {
            for &i in idx {
                in_bag[i * resamples.len() + b] = true;
            }
        }
        let oob: Vec<Vec<u32>> = (0..n)
            .map(|i| {
                (0..resamples.len())
                    .filter(|&b| !in_bag[i * resamples.len() + b])
                    .map(|b| b as u32)
                    .collect()
            })
            .collect();
        let mut residuals = Vec::new();
        let mut kept = Vec::new();
        for i in 0..n {
            if oob[i].is_empty() {
                continue;
            }
            let r = x.row(i);
            let s: T = oob[i].iter().map(|&b| models[b as usize].predict(r)).sum();
            let mu = s / T::of_usize(oob[i].len());
            residuals.push((y[i] - mu).abs());
            kept.push(i);
        }
        if kept.is_empty() {
            return Err(Error::Fit("every sample is in-bag for every bootstrap model".into()));
        }
        let dropped = n - kept.len();
        if dropped > 0 {
            log::info!("JK+aB: {dropped} of {n} samples have no out-of-bag model and are excluded");
        }
        Ok(Self {
            models,
            oob,
            residuals,
            kept,
        })
    }

    pub fn n_excluded(&self) -> usize {
        self.oob.len() - self.kept.len()
    }

    pub fn predict(&self, x: &[T], alpha: f64) -> Result<PredictionInterval<T>> {
        let preds: Vec<T> = self.models.iter().map(|m| m.predict(x)).collect();
        let centers: Vec<T> = self
            .kept
            .iter()
            .map(|&i| {
                let o = &self.oob[i];
                o.iter().map(|&b| preds[b as usize]).sum::<T>() / T::of_usize(o.len())
            })
            .collect();
        plus_interval(&centers, &self.residuals, alpha)
    }

    pub fn predict_all(&self, x: &Features<T>, alpha: f64) -> Result<Vec<PredictionInterval<T>>> {
        check_alpha(alpha)?;
        x.rows()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|r| self.predict(r, alpha))
            .collect()
    }
}

/// CV intervals from a fresh K-fold fit on the pooled rows.
pub fn cv_fit_predict<T: Real, L: Learner<T>>(
    learner: &L,
    x: &Features<T>,
    y: &[T],
    x_test: &Features<T>,
    alpha: f64,
    k: usize,
) -> Result<Vec<PredictionInterval<T>>> {
    CrossConformal::fit(learner, x, y, k, true)?.cv_predict_all(x_test, alpha)
}

pub fn cvplus_fit_predict<T: Real, L: Learner<T>>(
    learner: &L,
    x: &Features<T>,
    y: &[T],
    x_test: &Features<T>,
    alpha: f64,
    k: usize,
) -> Result<Vec<PredictionInterval<T>>> {
    CrossConformal::fit(learner, x, y, k, false)?.cvplus_predict_all(x_test, alpha)
}

pub fn jkab_fit_predict<T: Real, L: Learner<T>>(
    learner: &L,
    x: &Features<T>,
    y: &[T],
    x_test: &Features<T>,
    alpha: f64,
    b: usize,
    seed: u64,
) -> Result<Vec<PredictionInterval<T>>> {
    JackknifeAb::fit_seeded(learner, x, y, b, seed)?.predict_all(x_test, alpha)
}

/// Writes `row_id,y_true_g,lo_g,hi_g,method,crossing_flag` rows.
pub fn write_intervals<T: Real>(
    path: &Path,
    method: Method,
    row_ids: &[usize],
    y_true: &[T],
    intervals: &[PredictionInterval<T>],
) -> Result<()> {
    if row_ids.len() != y_true.len() || y_true.len() != intervals.len() {
        return Err(Error::invalid("interval table columns differ in length"));
    }
    let csv_err = |source| Error::Csv {
        context: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["row_id", "y_true_g", "lo_g", "hi_g", "method", "crossing_flag"])
        .map_err(csv_err)?;
    for ((id, y), iv) in row_ids.iter().zip(y_true).zip(intervals) {
        w.write_record([
            id.to_string(),
            y.to_string(),
            iv.lo.to_string(),
            iv.hi.to_string(),
            method.name().to_string(),
            iv.crossing.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
