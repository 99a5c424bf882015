//! Reference predictors that any trained operator should beat.

use hamlet_core::training::{nrmse, rmse};
use hamlet_core::{OperatorSample, Tensor};

use crate::{CliError, Result};

/// Score of a predictor on a test set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineScore {
    pub nrmse: f64,
    pub rmse: f64,
}

fn score(preds: &[Tensor], test: &[OperatorSample]) -> Result<BaselineScore> {
    let targets: Vec<Tensor> = test.iter().map(|s| s.target.clone()).collect();
    let num = |e: hamlet_core::training::TrainError| CliError::Numeric(e.to_string());
    Ok(BaselineScore { nrmse: nrmse(preds, &targets).map_err(num)?, rmse: rmse(preds, &targets).map_err(num)? })
}

fn check_shapes(train: &[OperatorSample], test: &[OperatorSample]) -> Result<usize> {
    let n = train.first().ok_or_else(|| CliError::Usage("baselines need training samples".into()))?.target.len();
    if test.is_empty() || train.iter().chain(test).any(|s| s.target.shape() != train[0].target.shape()) {
        return Err(CliError::Usage("baselines need a non-empty test set sharing the training target layout".into()));
    }
    Ok(n)
}

/// Pointwise mean of the training targets, predicted for every test input.
/// Requires all samples to share one target layout.
pub fn mean_field(train: &[OperatorSample], test: &[OperatorSample]) -> Result<BaselineScore> {
    let n = check_shapes(train, test)?;
    let mut mean = vec![0.0; n];
    for s in train {
        mean.iter_mut().zip(s.target.data()).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    let mean = Tensor::new(train[0].target.shape().to_vec(), mean).expect("target extents");
    score(&vec![mean; test.len()], test)
}

/// Target of the training sample whose input field is closest in L₂.
pub fn nearest_neighbor(train: &[OperatorSample], test: &[OperatorSample]) -> Result<BaselineScore> {
    check_shapes(train, test)?;
    if test.iter().any(|s| s.theta.shape() != train[0].theta.shape()) {
        return Err(CliError::Usage("nearest-neighbor baseline needs inputs on one layout".into()));
    }
    let preds: Vec<Tensor> = test
        .iter()
        .map(|s| {
            let dist = |t: &OperatorSample| t.theta.data().iter().zip(s.theta.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = train.iter().min_by(|a, b| dist(a).total_cmp(&dist(b))).expect("non-empty");
            best.target.clone()
        })
        .collect();
    score(&preds, test)
}
