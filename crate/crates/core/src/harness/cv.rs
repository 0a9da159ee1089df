use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::categorical::{total_deviance, ObservationMatrix};
use crate::error::{Error, Result};
use crate::estimators::SoftLabelClassifier;
use crate::rng::{RngStream, Substream};

/// Fold index per row: a seeded shuffle dealt round-robin, so fold sizes
/// differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Config(format!("{n} rows cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngStream::new(seed).substream(Substream::Folds, 0));
    let mut assignment = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % folds;
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Mean per-sample held-out deviance times `n`.
    pub total_deviance: f64,
    pub fold_deviances: Vec<f64>,
    pub fold_sizes: Vec<usize>,
}

impl CvResult {
    pub fn mean_per_sample(&self) -> f64 {
        self.total_deviance / self.fold_sizes.iter().sum::<usize>() as f64
    }
}

/// K-fold cross-validation; every fold's model is fitted with `model_seed`.
pub fn cross_validate(
    fitter: &dyn SoftLabelClassifier,
    x: ArrayView2<'_, f64>,
    obs: &ObservationMatrix,
    folds: usize,
    fold_seed: u64,
    model_seed: u64,
) -> Result<CvResult> {
    let n = obs.n();
    if x.nrows() != n {
        return Err(Error::Dimension(format!("{} feature rows vs {n} observation rows", x.nrows())));
    }
    let assignment = fold_assignment(n, folds, fold_seed)?;
    let mut fold_deviances = Vec::with_capacity(folds);
    let mut fold_sizes = Vec::with_capacity(folds);
    for f in 0..folds {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assignment[i] == f);
        let x_train = x.select(ndarray::Axis(0), &train);
        let x_test = x.select(ndarray::Axis(0), &test);
        let model = fitter.fit(x_train.view(), &obs.select_rows(&train), model_seed)?;
        let held_out = total_deviance(&obs.select_rows(&test), &model.predict(x_test.view())?)?;
        fold_deviances.push(held_out);
        fold_sizes.push(test.len());
    }
    // Each row is held out exactly once, so the sum is already on the n scale.
    let total_deviance = fold_deviances.iter().sum();
    Ok(CvResult {
        total_deviance,
        fold_deviances,
        fold_sizes,
    })
}
