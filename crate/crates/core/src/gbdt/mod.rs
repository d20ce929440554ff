//! Gradient-boosted regression trees with squared or pinball loss.
//!
//! Trees are grown leaf-wise on 256-bin feature histograms. Under pinball
//! loss each leaf value is replaced by the empirical quantile of the
//! in-leaf residuals, so the ensemble tracks a conditional quantile rather
//! than a mean.

mod binning;
mod grow;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use binning::{BinMapper, BinnedMatrix};

use crate::error::{Error, Result};
use crate::model::{Features, Learner, QuantileLearner, Regressor};
use crate::scalar::Real;
use crate::stats::{mean, pinball_quantile};

/// Serialization format version of [`QuantileEnsemble`] documents.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub histogram_bins: usize,
    /// Reserved for sampling; boosting itself is deterministic.
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n_trees: 955,
            learning_rate: 0.19,
            max_depth: 14,
            max_leaves: 42,
            min_samples_leaf: 20,
            histogram_bins: 256,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::invalid("n_trees must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid("learning_rate must lie in (0, 1]"));
        }
        if self.max_depth == 0 {
            return Err(Error::invalid("max_depth must be at least 1"));
        }
        if self.max_leaves < 2 {
            return Err(Error::invalid("max_leaves must be at least 2"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::invalid("min_samples_leaf must be at least 1"));
        }
        if !(2..=256).contains(&self.histogram_bins) {
            return Err(Error::invalid("histogram_bins must lie in 2..=256"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossSpec<T> {
    Squared,
    Quantile { tau: T },
}

impl<T: Real> LossSpec<T> {
    pub fn quantile(tau: T) -> Result<Self> {
        if !(tau > T::zero() && tau < T::one()) {
            return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {tau}")));
        }
        Ok(LossSpec::Quantile { tau })
    }

    pub fn loss(&self, y: T, y_hat: T) -> T {
        match *self {
            LossSpec::Squared => (y - y_hat) * (y - y_hat),
            LossSpec::Quantile { tau } => pinball_loss(y, y_hat, tau),
        }
    }
}

/// Pinball loss of predicting `y_hat` for observation `y` at level `tau`.
#[inline]
pub fn pinball_loss<T: Real>(y: T, y_hat: T, tau: T) -> T {
    let r = y - y_hat;
    if r >= T::zero() {
        tau * r
    } else {
        (tau - T::one()) * r
    }
}

/// A binary regression tree in flattened form. Node 0 is the root; a node
/// is a leaf when `left[i] < 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<T> {
    pub feature: Vec<u32>,
    pub threshold: Vec<T>,
    pub left: Vec<i32>,
    pub right: Vec<i32>,
    pub value: Vec<T>,
}

impl<T: Real> Tree<T> {
    fn leaf_only() -> Self {
        Self {
            feature: vec![0],
            threshold: vec![T::zero()],
            left: vec![-1],
            right: vec![-1],
            value: vec![T::zero()],
        }
    }

    fn push_leaf(&mut self) -> usize {
        self.feature.push(0);
        self.threshold.push(T::zero());
        self.left.push(-1);
        self.right.push(-1);
        self.value.push(T::zero());
        self.feature.len() - 1
    }

    fn split_leaf(&mut self, node: usize, feature: usize, threshold: T) -> (usize, usize) {
        let l = self.push_leaf();
        let r = self.push_leaf();
        self.feature[node] = feature as u32;
        self.threshold[node] = threshold;
        self.left[node] = l as i32;
        self.right[node] = r as i32;
        (l, r)
    }

    pub fn n_nodes(&self) -> usize {
        self.left.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.left.iter().filter(|&&l| l < 0).count()
    }

    pub fn depth(&self) -> usize {
        fn go<T>(t: &Tree<T>, i: usize) -> usize {
            if t.left[i] < 0 {
                0
            } else {
                1 + go(t, t.left[i] as usize).max(go(t, t.right[i] as usize))
            }
        }
        go(self, 0)
    }

    /// Leaf value reached by `x`; `x <= threshold` goes left.
    #[inline]
    pub fn evaluate(&self, x: &[T]) -> T {
        let mut i = 0usize;
        while self.left[i] >= 0 {
            i = if x[self.feature[i] as usize] <= self.threshold[i] {
                self.left[i] as usize
            } else {
                self.right[i] as usize
            };
        }
        self.value[i]
    }

    fn check(&self, n_features: usize) -> Result<()> {
        let n = self.left.len();
        if n == 0
            || [self.feature.len(), self.threshold.len(), self.right.len(), self.value.len()]
                .iter()
                .any(|&m| m != n)
        {
            return Err(Error::invalid("tree node arrays have inconsistent lengths"));
        }
        for i in 0..n {
            let (l, r) = (self.left[i], self.right[i]);
            if l >= 0 {
                if r < 0 || l as usize >= n || r as usize >= n || l as usize <= i || r as usize <= i {
                    return Err(Error::invalid(format!("tree node {i} has invalid children")));
                }
                if self.feature[i] as usize >= n_features {
                    return Err(Error::invalid(format!("tree node {i} uses unknown feature")));
                }
            }
        }
        Ok(())
    }
}

/// Boosted ensemble; prediction is `base_score + learning_rate * sum(tree outputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileEnsemble<T> {
    pub format_version: u32,
    pub base_score: T,
    pub learning_rate: T,
    pub loss: LossSpec<T>,
    pub hyperparams: Hyperparams,
    pub n_features: usize,
    pub trees: Vec<Tree<T>>,
}

impl<T: Real> QuantileEnsemble<T> {
    /// A model with no trees, predicting `base_score` everywhere.
    pub fn constant(base_score: T, n_features: usize, loss: LossSpec<T>) -> Self {
        let hp = Hyperparams::default();
        Self {
            format_version: MODEL_FORMAT_VERSION,
            base_score,
            learning_rate: T::of(hp.learning_rate),
            loss,
            hyperparams: hp,
            n_features,
            trees: Vec::new(),
        }
    }

    #[inline]
    pub fn predict(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.n_features);
        let mut acc = self.base_score;
        for t in &self.trees {
            acc += self.learning_rate * t.evaluate(x);
        }
        acc
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|source| Error::Json {
            context: "serializing model".into(),
            source,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s).map_err(|source| Error::Json {
            context: "parsing model".into(),
            source,
        })?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        for t in &m.trees {
            t.check(m.n_features)?;
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

impl<T: Real> Regressor<T> for QuantileEnsemble<T> {
    fn predict(&self, x: &[T]) -> T {
        QuantileEnsemble::predict(self, x)
    }
}

/// Training loss (mean pinball or mean squared error) after each round.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace<T> {
    /// Entry 0 is the loss of the constant base score.
    pub train_loss: Vec<T>,
}

pub fn fit<T: Real>(
    x: &Features<T>,
    y: &[T],
    loss: LossSpec<T>,
    hp: &Hyperparams,
) -> Result<QuantileEnsemble<T>> {
    fit_inner(x, y, loss, hp, false).map(|(m, _)| m)
}

/// [`fit`] that also records the training loss after every round.
pub fn fit_traced<T: Real>(
    x: &Features<T>,
    y: &[T],
    loss: LossSpec<T>,
    hp: &Hyperparams,
) -> Result<(QuantileEnsemble<T>, FitTrace<T>)> {
    fit_inner(x, y, loss, hp, true)
}

fn mean_loss<T: Real>(loss: &LossSpec<T>, y: &[T], pred: &[T]) -> T {
    let s: T = y.iter().zip(pred).map(|(&a, &b)| loss.loss(a, b)).sum();
    s / T::of_usize(y.len())
}

fn fit_inner<T: Real>(
    x: &Features<T>,
    y: &[T],
    loss: LossSpec<T>,
    hp: &Hyperparams,
    trace: bool,
) -> Result<(QuantileEnsemble<T>, FitTrace<T>)> {
    hp.validate()?;
    if let LossSpec::Quantile { tau } = loss {
        LossSpec::quantile(tau)?;
    }
    let n = x.n_rows();
    if n != y.len() {
        return Err(Error::invalid(format!("{n} feature rows but {} targets", y.len())));
    }
    if n == 0 || n < 2 * hp.min_samples_leaf {
        return Err(Error::Fit(format!(
            "need at least {} rows (2 x min_samples_leaf), got {n}",
            2 * hp.min_samples_leaf
        )));
    }
    if n > u32::MAX as usize {
        return Err(Error::Fit("too many rows".into()));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("features and targets must be finite".into()));
    }

    let mapper = BinMapper::fit(x, hp.histogram_bins);
    let binned = mapper.transform(x);
    let lr = T::of(hp.learning_rate);

    let base_score = match loss {
        LossSpec::Squared => mean(y),
        LossSpec::Quantile { tau } => pinball_quantile(&mut y.to_vec(), tau),
    };
    let mut pred = vec![base_score; n];
    let mut grad = vec![T::zero(); n];
    let mut order: Vec<u32> = Vec::with_capacity(n);
    let mut resid: Vec<T> = Vec::new();
    let mut trees = Vec::with_capacity(hp.n_trees);
    let mut history = Vec::new();
    if trace {
        history.push(mean_loss(&loss, y, &pred));
    }

    let mut grower = grow::Grower::new(
        &binned,
        &mapper,
        grow::GrowParams {
            max_depth: hp.max_depth,
            max_leaves: hp.max_leaves,
            min_samples_leaf: hp.min_samples_leaf,
        },
    );

    for _ in 0..hp.n_trees {
        match loss {
            LossSpec::Squared => {
                for i in 0..n {
                    grad[i] = y[i] - pred[i];
                }
            }
            LossSpec::Quantile { tau } => {
                for i in 0..n {
                    grad[i] = if y[i] < pred[i] { tau - T::one() } else { tau };
                }
            }
        }
        order.clear();
        order.extend(0..n as u32);
        let grow::Grown { mut tree, leaves } = grower.grow(&grad, &mut order);

        for &(node, start, end) in &leaves {
            let rows = &order[start..end];
            let value = match loss {
                LossSpec::Squared => {
                    let s: T = rows.iter().map(|&i| grad[i as usize]).sum();
                    s / T::of_usize(rows.len())
                }
                LossSpec::Quantile { tau } => {
                    resid.clear();
                    resid.extend(rows.iter().map(|&i| y[i as usize] - pred[i as usize]));
                    pinball_quantile(&mut resid, tau)
                }
            };
            tree.value[node] = value;
            let step = lr * value;
            for &i in rows {
                pred[i as usize] += step;
            }
        }
        trees.push(tree);
        if trace {
            history.push(mean_loss(&loss, y, &pred));
        }
    }

    Ok((
        QuantileEnsemble {
            format_version: MODEL_FORMAT_VERSION,
            base_score,
            learning_rate: lr,
            loss,
            hyperparams: hp.clone(),
            n_features: x.n_features(),
            trees,
        },
        FitTrace {
            train_loss: history,
        },
    ))
}

/// Boosted-tree learner usable by the conformal wrappers.
#[derive(Debug, Clone, PartialEq)]
pub struct GbdtLearner {
    pub hp: Hyperparams,
}

impl GbdtLearner {
    pub fn new(hp: Hyperparams) -> Self {
        Self { hp }
    }
}

impl<T: Real> Learner<T> for GbdtLearner {
    type Model = QuantileEnsemble<T>;

    fn fit(&self, x: &Features<T>, y: &[T]) -> Result<Self::Model> {
        fit(x, y, LossSpec::Squared, &self.hp)
    }
}

impl<T: Real> QuantileLearner<T> for GbdtLearner {
    type Model = QuantileEnsemble<T>;

    fn fit_quantile(&self, x: &Features<T>, y: &[T], tau: T) -> Result<Self::Model> {
        fit(x, y, LossSpec::quantile(tau)?, &self.hp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_hp() -> Hyperparams {
        Hyperparams {
            n_trees: 30,
            learning_rate: 0.3,
            max_depth: 4,
            max_leaves: 8,
            min_samples_leaf: 5,
            ..Default::default()
        }
    }

    fn toy(n: usize, seed: u64) -> (Features<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            rows.push([a, b]);
            y.push(3.0 * a + (6.0 * b).sin() + 0.3 * rng.random::<f64>());
        }
        (Features::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball_loss(2.0f64, 2.0, 0.3), 0.0);
        assert!((pinball_loss(1.0f64, 0.0, 0.9) - 0.9).abs() < 1e-15);
        assert!((pinball_loss(0.0f64, 1.0, 0.9) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_target_predicts_constant() {
        let (x, _) = toy(200, 1);
        let y = vec![4.25; 200];
        for loss in [LossSpec::Squared, LossSpec::Quantile { tau: 0.1 }] {
            let m = fit(&x, &y, loss, &small_hp()).unwrap();
            for r in x.rows() {
                assert!((m.predict(r) - 4.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_tree_model_is_base_score() {
        let m = QuantileEnsemble::constant(7.5, 3, LossSpec::<f64>::Squared);
        assert_eq!(m.predict(&[1.0, 2.0, 3.0]), 7.5);
    }

    #[test]
    fn tree_shape_respects_limits() {
        let (x, y) = toy(2000, 2);
        let hp = Hyperparams {
            n_trees: 5,
            max_depth: 3,
            max_leaves: 6,
            min_samples_leaf: 40,
            ..Default::default()
        };
        let m = fit(&x, &y, LossSpec::Squared, &hp).unwrap();
        for t in &m.trees {
            assert!(t.depth() <= 3);
            assert!(t.n_leaves() <= 6);
            assert_eq!(t.n_nodes(), 2 * t.n_leaves() - 1);
        }
    }

    #[test]
    fn squared_fit_reduces_error() {
        let (x, y) = toy(1000, 3);
        let (m, tr) = fit_traced(&x, &y, LossSpec::Squared, &small_hp()).unwrap();
        assert!(tr.train_loss.last().unwrap() < &(0.2 * tr.train_loss[0]));
        assert!(tr.train_loss.windows(2).all(|w| w[1] <= w[0]));
        let p = m.predict_all(&x);
        let mse: f64 = y.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 1000.0;
        assert!((mse - tr.train_loss.last().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn quantile_fit_covers_about_tau() {
        let (x, y) = toy(4000, 4);
        let m = fit(&x, &y, LossSpec::Quantile { tau: 0.9 }, &small_hp()).unwrap();
        let below = x.rows().zip(&y).filter(|(r, &t)| t <= m.predict(r)).count();
        let frac = below as f64 / 4000.0;
        assert!((frac - 0.9).abs() < 0.03, "fraction below {frac}");
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let (x, y) = toy(500, 5);
        let m = fit(&x, &y, LossSpec::Quantile { tau: 0.05 }, &small_hp()).unwrap();
        let back = QuantileEnsemble::<f64>::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        for r in x.rows() {
            assert_eq!(back.predict(r).to_bits(), m.predict(r).to_bits());
        }
    }

    #[test]
    fn rejects_bad_input() {
        let (x, y) = toy(30, 6);
        assert!(matches!(
            fit(&x, &y, LossSpec::Squared, &Hyperparams::default()),
            Err(Error::Fit(_))
        ));
        assert!(fit(&x, &y[..10], LossSpec::Squared, &small_hp()).is_err());
        assert!(fit(&x, &y, LossSpec::Quantile { tau: 1.0 }, &small_hp()).is_err());
        let bad = Hyperparams {
            max_leaves: 1,
            ..small_hp()
        };
        assert!(fit(&x, &y, LossSpec::Squared, &bad).is_err());
    }

    #[test]
    fn rejects_corrupt_model_json() {
        let (x, y) = toy(200, 7);
        let m = fit(&x, &y, LossSpec::Squared, &small_hp()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        v["format_version"] = 99.into();
        assert!(QuantileEnsemble::<f64>::from_json(&v.to_string()).is_err());
        v["format_version"] = 1.into();
        v["trees"][0]["left"][0] = 0.into();
        assert!(QuantileEnsemble::<f64>::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let (x, y) = toy(600, 8);
        let rows: Vec<Vec<f32>> = x.rows().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
        let xf = Features::from_rows(&rows).unwrap();
        let yf: Vec<f32> = y.iter().map(|&v| v as f32).collect();
        let (_, tr) = fit_traced(&xf, &yf, LossSpec::Quantile { tau: 0.5f32 }, &small_hp()).unwrap();
        assert!(tr.train_loss.last().unwrap() < &tr.train_loss[0]);
    }
}
