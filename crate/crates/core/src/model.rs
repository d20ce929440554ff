//! Feature matrices and the regressor traits the conformal wrappers build on.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features<T> {
    n_features: usize,
    data: Vec<T>,
}

impl<T: Real> Features<T> {
    pub fn new(n_features: usize, data: Vec<T>) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::invalid("feature matrix needs at least one column"));
        }
        if !data.len().is_multiple_of(n_features) {
            return Err(Error::invalid(format!(
                "{} values do not form rows of {n_features} features",
                data.len()
            )));
        }
        Ok(Self { n_features, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let n_features = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_features);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n_features {
                return Err(Error::invalid(format!(
                    "row {i} has {} features, expected {n_features}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(n_features, data)
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_features
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n_features + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.n_features)
    }

    /// Copies the given rows, in order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            n_features: self.n_features,
            data,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A fitted point or quantile predictor.
pub trait Regressor<T>: Send + Sync {
    fn predict(&self, x: &[T]) -> T;

    fn predict_all(&self, x: &Features<T>) -> Vec<T>
    where
        T: Real,
    {
        x.rows().map(|r| self.predict(r)).collect()
    }
}

impl<T, R: Regressor<T> + ?Sized> Regressor<T> for Box<R> {
    fn predict(&self, x: &[T]) -> T {
        (**self).predict(x)
    }
}

/// Fits a point predictor (conditional mean).
pub trait Learner<T>: Sync {
    type Model: Regressor<T>;

    fn fit(&self, x: &Features<T>, y: &[T]) -> Result<Self::Model>;
}

/// Fits a conditional quantile predictor at level `tau`.
pub trait QuantileLearner<T>: Sync {
    type Model: Regressor<T>;

    fn fit_quantile(&self, x: &Features<T>, y: &[T], tau: T) -> Result<Self::Model>;
}

/// Subset of `(x, y)` at the given indices.
pub(crate) fn subset<T: Real>(x: &Features<T>, y: &[T], idx: &[usize]) -> (Features<T>, Vec<T>) {
    (x.select(idx), idx.iter().map(|&i| y[i]).collect())
}
