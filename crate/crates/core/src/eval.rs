//! Leave-one-out evaluation and score distributions.

use rayon::prelude::*;

use crate::corpus::{Corpus, SCORE_MAX, SCORE_MIN};
use crate::error::{Error, Result};
use crate::gbt::{fit, GbtConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct HeldOut {
    pub id: String,
    pub truth: f64,
    pub prediction: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoocvResult {
    pub per_dialogue: Vec<HeldOut>,
    pub mae: f64,
    pub config: GbtConfig,
}

impl LoocvResult {
    pub fn from_predictions(
        ids: &[String],
        truths: &[f64],
        predictions: &[f64],
        config: GbtConfig,
    ) -> Result<Self> {
        if truths.len() != ids.len() || predictions.len() != ids.len() {
            return Err(Error::Dimension {
                expected: ids.len(),
                got: truths.len().min(predictions.len()),
            });
        }
        if ids.is_empty() {
            return Err(Error::Degenerate("no predictions".into()));
        }
        let per_dialogue: Vec<HeldOut> = ids
            .iter()
            .zip(truths.iter().zip(predictions))
            .map(|(id, (&truth, &prediction))| HeldOut {
                id: id.clone(),
                truth,
                prediction,
                abs_error: (truth - prediction).abs(),
            })
            .collect();
        let mae = per_dialogue.iter().map(|h| h.abs_error).sum::<f64>() / per_dialogue.len() as f64;
        Ok(LoocvResult {
            per_dialogue,
            mae,
            config,
        })
    }
}

/// Predicts every row from a model fit on all other rows.
///
/// With `groups`, every row sharing the held-out row's group is left out too
/// (e.g. all dialogues of one participant).
pub fn loocv(
    matrix: &[Vec<f64>],
    targets: &[f64],
    ids: &[String],
    config: &GbtConfig,
    groups: Option<&[String]>,
) -> Result<LoocvResult> {
    let n = matrix.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("leave-one-out needs at least 3 rows, got {n}")));
    }
    if targets.len() != n || ids.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: targets.len().min(ids.len()),
        });
    }
    if let Some(g) = groups {
        if g.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: g.len(),
            });
        }
    }
    config.validate()?;

    let predictions: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let keep = |j: usize| match groups {
                Some(g) => g[j] != g[i],
                None => j != i,
            };
            let train_x: Vec<Vec<f64>> = (0..n).filter(|&j| keep(j)).map(|j| matrix[j].clone()).collect();
            let train_y: Vec<f64> = (0..n).filter(|&j| keep(j)).map(|j| targets[j]).collect();
            let model = fit(&train_x, &train_y, config)?;
            model.predict(&matrix[i])
        })
        .collect::<Result<_>>()?;

    LoocvResult::from_predictions(ids, targets, &predictions, *config)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Counts scores in bins of `bin_width` covering [1, 7]; the top bin is closed.
pub fn histogram(scores: &[f64], bin_width: f64) -> Result<Vec<HistogramBin>> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::Config(format!("bin width must be positive, got {bin_width}")));
    }
    let span = SCORE_MAX - SCORE_MIN;
    let n_bins = ((span / bin_width) - 1e-9).ceil().max(1.0) as usize;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|k| HistogramBin {
            low: SCORE_MIN + k as f64 * bin_width,
            high: (SCORE_MIN + (k + 1) as f64 * bin_width).min(SCORE_MAX),
            count: 0,
        })
        .collect();
    for &s in scores {
        if !(SCORE_MIN..=SCORE_MAX).contains(&s) {
            return Err(Error::Degenerate(format!("score {s} outside [1, 7]")));
        }
        let k = (((s - SCORE_MIN) / bin_width).floor() as usize).min(n_bins - 1);
        bins[k].count += 1;
    }
    Ok(bins)
}

pub fn score_histogram(corpus: &Corpus, bin_width: f64) -> Result<Vec<HistogramBin>> {
    let scores: Vec<f64> = corpus
        .dialogues
        .iter()
        .map(|d| d.target_score())
        .collect::<Result<_>>()?;
    histogram(&scores, bin_width)
}
