//! Losses and error metrics, on plain tensors and on the tape.

use super::{Result, TrainError};
use crate::scalar::Real;
use crate::tensor::{Tape, Tensor, Var};

fn check_pair<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(TrainError::Shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    Ok(())
}

fn sq_err<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> T {
    pred.data().iter().zip(target.data()).fold(T::zero(), |a, (&p, &t)| a + (p - t) * (p - t))
}

fn sq_norm<T: Real>(t: &Tensor<T>) -> T {
    t.data().iter().fold(T::zero(), |a, &x| a + x * x)
}

/// Mean over all elements of the squared error.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    check_pair(pred, target)?;
    Ok(sq_err(pred, target) / T::count(pred.len()))
}

/// `‖pred − target‖₂ / ‖target‖₂` for one sample.
pub fn relative_l2<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    check_pair(pred, target)?;
    let den = sq_norm(target);
    if den <= T::zero() {
        return Err(TrainError::ZeroTarget);
    }
    Ok((sq_err(pred, target) / den).sqrt())
}

/// Per-sample relative L2, averaged over the batch.
pub fn rel_l2_loss<T: Real>(preds: &[Tensor<T>], targets: &[Tensor<T>]) -> Result<T> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(TrainError::Shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let mut s = T::zero();
    for (p, t) in preds.iter().zip(targets) {
        s += relative_l2(p, t)?;
    }
    Ok(s / T::count(preds.len()))
}

/// Normalized RMSE: mean over samples of the per-sample relative L2 error.
pub fn nrmse<T: Real>(preds: &[Tensor<T>], targets: &[Tensor<T>]) -> Result<T> {
    rel_l2_loss(preds, targets)
}

/// Root of the mean squared error over every element of every sample.
pub fn rmse<T: Real>(preds: &[Tensor<T>], targets: &[Tensor<T>]) -> Result<T> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(TrainError::Shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let (mut s, mut n) = (T::zero(), 0);
    for (p, t) in preds.iter().zip(targets) {
        check_pair(p, t)?;
        s += sq_err(p, t);
        n += p.len();
    }
    Ok((s / T::count(n)).sqrt())
}

pub fn mse_loss_vars<T: Real>(tape: &mut Tape<T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
    if tape.shape(pred) != target.shape() {
        return Err(TrainError::Shape(format!("prediction {:?} vs target {:?}", tape.shape(pred), target.shape())));
    }
    let t = tape.constant(target);
    let d = tape.sub(pred, t)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq)?)
}

pub fn rel_l2_loss_vars<T: Real>(tape: &mut Tape<T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
    if tape.shape(pred) != target.shape() {
        return Err(TrainError::Shape(format!("prediction {:?} vs target {:?}", tape.shape(pred), target.shape())));
    }
    let den = sq_norm(target);
    if den <= T::zero() {
        return Err(TrainError::ZeroTarget);
    }
    let t = tape.constant(target);
    let d = tape.sub(pred, t)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq)?;
    let s = tape.scale(s, T::one() / den)?;
    Ok(tape.sqrt(s)?)
}
