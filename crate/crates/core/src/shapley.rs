//! Exact Shapley attribution by full subset enumeration.
//!
//! The value of a feature subset `A` for an instance `x` is the interventional
//! expectation: features in `A` are taken from `x`, all others from a
//! background row, and the model output is averaged over the background. All
//! `2^n` subset values are computed once per instance and shared by every
//! feature's weighted sum.
//!
//! Summation runs over masks in ascending order regardless of how the subset
//! values were scheduled, so results are bit-identical between sequential and
//! parallel execution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{Feature, FEATURE_COUNT};
use crate::gbt::{GbtModel, Tree};

/// Enumeration guard: `2^25` subset values per instance.
pub const MAX_FEATURES: usize = 25;

/// Anything that maps a feature row to a real output.
pub trait Predictor: Sync {
    fn feature_count(&self) -> usize;
    fn predict_row(&self, row: &[f64]) -> f64;
}

impl Predictor for GbtModel {
    fn feature_count(&self) -> usize {
        self.feature_count
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        self.predict_raw(row)
    }
}

/// Wraps a closure as a [`Predictor`].
pub struct FnModel<F> {
    pub features: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnModel<F> {
    fn feature_count(&self) -> usize {
        self.features
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        (self.f)(row)
    }
}

/// Shapley weights `|A|! (n-|A|-1)! / n!` indexed by `|A|`, reduced as exact
/// integer fractions before a single conversion to floating point.
pub fn shapley_weights(n: usize) -> Vec<f64> {
    assert!((1..=MAX_FEATURES).contains(&n));
    let fact: Vec<u128> = (0..=n as u128)
        .scan(1u128, |acc, k| {
            if k > 0 {
                *acc *= k;
            }
            Some(*acc)
        })
        .collect();
    (0..n)
        .map(|a| {
            let mut num = fact[a] * fact[n - a - 1];
            let mut den = fact[n];
            let g = gcd(num, den);
            num /= g;
            den /= g;
            num as f64 / den as f64
        })
        .collect()
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Combines precomputed subset values into per-feature Shapley values.
///
/// `values[mask]` is the value of the subset whose bits are set in `mask`.
pub fn shapley_from_values(values: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(values.len(), 1usize << n);
    let weights = shapley_weights(n);
    let mut phi = vec![0.0; n];
    for (f, phi_f) in phi.iter_mut().enumerate() {
        let bit = 1usize << f;
        let mut acc = 0.0;
        for mask in 0..values.len() {
            if mask & bit != 0 {
                continue;
            }
            let size = mask.count_ones() as usize;
            acc += weights[size] * (values[mask | bit] - values[mask]);
        }
        *phi_f = acc;
    }
    phi
}

/// Interventional value function over a background sample.
pub struct ValueFunction<'a, P: Predictor> {
    model: &'a P,
    background: &'a [Vec<f64>],
}

impl<'a, P: Predictor> ValueFunction<'a, P> {
    pub fn new(model: &'a P, background: &'a [Vec<f64>]) -> Result<Self> {
        if background.is_empty() {
            return Err(Error::Degenerate("empty background".into()));
        }
        let n = model.feature_count();
        if let Some(row) = background.iter().find(|r| r.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: row.len(),
            });
        }
        if n > MAX_FEATURES {
            return Err(Error::TooManyFeatures(n));
        }
        Ok(ValueFunction { model, background })
    }

    pub fn feature_count(&self) -> usize {
        self.model.feature_count()
    }

    fn check(&self, instance: &[f64]) -> Result<()> {
        if instance.len() != self.feature_count() {
            return Err(Error::Dimension {
                expected: self.feature_count(),
                got: instance.len(),
            });
        }
        Ok(())
    }

    /// Mean model output over the background with features in `mask` fixed to the instance.
    pub fn subset_value(&self, instance: &[f64], mask: u32) -> Result<f64> {
        self.check(instance)?;
        let mut row = vec![0.0; instance.len()];
        Ok(self.composite_mean(instance, mask, &mut row))
    }

    fn composite_mean(&self, instance: &[f64], mask: u32, row: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for b in self.background {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = if mask >> j & 1 == 1 { instance[j] } else { b[j] };
            }
            total += self.model.predict_row(row);
        }
        total / self.background.len() as f64
    }

    /// The full subset-value cache for one instance, indexed by mask.
    pub fn subset_values(&self, instance: &[f64]) -> Result<Vec<f64>> {
        self.check(instance)?;
        let n = self.feature_count();
        Ok((0..1u32 << n)
            .into_par_iter()
            .map_init(|| vec![0.0; n], |row, mask| self.composite_mean(instance, mask, row))
            .collect())
    }

    pub fn shap_values(&self, instance: &[f64]) -> Result<Attribution> {
        let values = self.subset_values(instance)?;
        Ok(Attribution::from_values(String::new(), &values, self.feature_count()))
    }
}

/// Subset values for tree ensembles, computed tree by tree.
///
/// A tree's interventional mean only depends on which of *its own* split
/// features are in the subset, so each tree needs at most `2^k` background
/// passes for `k` distinct split features instead of one per subset.
pub struct TreeValueFunction<'a> {
    model: &'a GbtModel,
    background: &'a [Vec<f64>],
    /// Per tree: its distinct split features.
    tree_features: Vec<Vec<usize>>,
}

impl<'a> TreeValueFunction<'a> {
    pub fn new(model: &'a GbtModel, background: &'a [Vec<f64>]) -> Result<Self> {
        ValueFunction::new(model, background)?;
        let tree_features = model
            .trees
            .iter()
            .map(|t| t.split_features().into_iter().collect())
            .collect();
        Ok(TreeValueFunction {
            model,
            background,
            tree_features,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.model.feature_count
    }

    fn tree_table(&self, tree: &Tree, features: &[usize], instance: &[f64]) -> Vec<f64> {
        let m = self.background.len() as f64;
        (0..1usize << features.len())
            .map(|local| {
                let total: f64 = self
                    .background
                    .iter()
                    .map(|b| {
                        tree.eval(|j| {
                            match features.iter().position(|&f| f == j) {
                                Some(k) if local >> k & 1 == 1 => instance[j],
                                _ => b[j],
                            }
                        })
                    })
                    .sum();
                total / m
            })
            .collect()
    }

    pub fn subset_values(&self, instance: &[f64]) -> Result<Vec<f64>> {
        let n = self.feature_count();
        if instance.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: instance.len(),
            });
        }
        let tables: Vec<Vec<f64>> = self
            .model
            .trees
            .iter()
            .zip(&self.tree_features)
            .map(|(t, fs)| self.tree_table(t, fs, instance))
            .collect();
        let lr = self.model.learning_rate;
        let base = self.model.base_value;
        Ok((0..1usize << n)
            .map(|mask| {
                let sum: f64 = tables
                    .iter()
                    .zip(&self.tree_features)
                    .map(|(table, fs)| {
                        let local = fs
                            .iter()
                            .enumerate()
                            .fold(0usize, |acc, (k, &f)| acc | ((mask >> f & 1) << k));
                        table[local]
                    })
                    .sum();
                base + lr * sum
            })
            .collect())
    }

    pub fn shap_values(&self, instance: &[f64]) -> Result<Attribution> {
        let values = self.subset_values(instance)?;
        Ok(Attribution::from_values(String::new(), &values, self.feature_count()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub dialogue_id: String,
    pub phi: Vec<f64>,
    /// Value of the empty subset: mean background prediction.
    pub base: f64,
    pub prediction: f64,
}

impl Attribution {
    fn from_values(dialogue_id: String, values: &[f64], n: usize) -> Self {
        Attribution {
            dialogue_id,
            phi: shapley_from_values(values, n),
            base: values[0],
            prediction: values[values.len() - 1],
        }
    }

    /// `prediction - base - sum(phi)`; zero up to rounding.
    pub fn efficiency_gap(&self) -> f64 {
        self.prediction - self.base - self.phi.iter().sum::<f64>()
    }
}

/// Picks `size` background rows deterministically, keeping their original order.
pub fn subsample_background(matrix: &[Vec<f64>], size: usize, seed: u64) -> Vec<Vec<f64>> {
    if size == 0 || size >= matrix.len() {
        return matrix.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, matrix.len(), size).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| matrix[i].clone()).collect()
}

/// One attribution per instance, in input order, with the background fixed.
pub fn shap_matrix(
    model: &GbtModel,
    background: &[Vec<f64>],
    instances: &[Vec<f64>],
    ids: &[String],
) -> Result<Vec<Attribution>> {
    if ids.len() != instances.len() {
        return Err(Error::Dimension {
            expected: instances.len(),
            got: ids.len(),
        });
    }
    let vf = TreeValueFunction::new(model, background)?;
    instances
        .par_iter()
        .zip(ids.par_iter())
        .map(|(x, id)| {
            let mut a = vf.shap_values(x)?;
            a.dialogue_id = id.clone();
            Ok(a)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub feature: Feature,
    pub mean_abs_shap: f64,
    pub percent: f64,
    /// Mean absolute attribution exceeds 0.100.
    pub bold: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapSummary {
    pub rows: Vec<SummaryRow>,
    /// All attributions were zero, so every percentage is reported as 0.
    pub all_zero: bool,
}

pub const BOLD_THRESHOLD: f64 = 0.100;

impl ShapSummary {
    /// Builds the table from per-feature mean absolute attributions.
    pub fn from_mean_abs(mean_abs: &[f64]) -> Result<ShapSummary> {
        if mean_abs.len() != FEATURE_COUNT {
            return Err(Error::Dimension {
                expected: FEATURE_COUNT,
                got: mean_abs.len(),
            });
        }
        let total: f64 = mean_abs.iter().sum();
        let all_zero = total == 0.0;
        let rows = Feature::ALL
            .iter()
            .zip(mean_abs)
            .map(|(&feature, &m)| SummaryRow {
                feature,
                mean_abs_shap: m,
                percent: if all_zero { 0.0 } else { 100.0 * m / total },
                bold: m > BOLD_THRESHOLD,
            })
            .collect();
        Ok(ShapSummary { rows, all_zero })
    }

    /// Features by descending mean absolute attribution (stable on ties).
    pub fn ranking(&self) -> Vec<Feature> {
        let mut rows: Vec<&SummaryRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.mean_abs_shap.total_cmp(&a.mean_abs_shap));
        rows.into_iter().map(|r| r.feature).collect()
    }

    pub fn row(&self, f: Feature) -> &SummaryRow {
        &self.rows[f.index()]
    }
}

pub fn summarize(attributions: &[Attribution]) -> Result<ShapSummary> {
    if attributions.is_empty() {
        return Err(Error::Degenerate("no attributions".into()));
    }
    let mut mean_abs = vec![0.0; FEATURE_COUNT];
    for a in attributions {
        if a.phi.len() != FEATURE_COUNT {
            return Err(Error::Dimension {
                expected: FEATURE_COUNT,
                got: a.phi.len(),
            });
        }
        for (m, p) in mean_abs.iter_mut().zip(&a.phi) {
            *m += p.abs();
        }
    }
    for m in &mut mean_abs {
        *m /= attributions.len() as f64;
    }
    ShapSummary::from_mean_abs(&mean_abs)
}
