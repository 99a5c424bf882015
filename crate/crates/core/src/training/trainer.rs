use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{mse_loss_vars, nrmse, rel_l2_loss_vars, relative_l2, rmse};
use super::{clip_global_norm, Adam, AdamConfig, LossKind, OneCycle, Result, TrainError};
use crate::graph::PointSet;
use crate::model::{ChannelAffine, InputGraph, Mode, OperatorModel, QuerySet};
use crate::scalar::Real;
use crate::tensor::{Tape, Tensor, Var};

/// One training pair: the input field on its discretization, the query
/// locations and the target there (L′×out, or steps×L′×out for rollouts).
#[derive(Clone, Debug)]
pub struct OperatorSample<T> {
    pub theta: Tensor<T>,
    pub points: Arc<PointSet<T>>,
    pub queries: QuerySet<T>,
    pub target: Tensor<T>,
}

impl<T: Real> OperatorSample<T> {
    /// Target frames as L′×out matrices.
    pub fn target_frames(&self) -> Vec<Tensor<T>> {
        let s = self.target.shape();
        if s.len() == 2 {
            return vec![self.target.clone()];
        }
        let frame = s[1] * s[2];
        self.target
            .data()
            .chunks(frame)
            .map(|c| Tensor::matrix(s[1], s[2], c.to_vec()).expect("frame extents"))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    /// Peak learning rate of the one-cycle schedule.
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub onecycle: OneCycle,
    pub adam: AdamConfig,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Mse,
            lr: 1e-4,
            epochs: 100,
            batch_size: 8,
            onecycle: OneCycle::default(),
            adam: AdamConfig::default(),
            seed: 0,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.epochs == 0 || self.batch_size == 0 || !(self.clip_norm > 0.0) {
            return Err(TrainError::Config(format!(
                "lr, epochs, batch_size and clip_norm must be positive (lr = {}, epochs = {}, batch_size = {})",
                self.lr, self.epochs, self.batch_size
            )));
        }
        self.onecycle.validate()
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch.
    pub train_loss: f64,
    pub eval_nrmse: f64,
    pub eval_rmse: f64,
    /// Rate used for the last step of the epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,eval_nrmse,eval_rmse,lr,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.epoch, r.train_loss, r.eval_nrmse, r.eval_rmse, r.lr, r.seconds);
        }
        s
    }

    pub fn lr_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lr).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub nrmse: f64,
    pub rmse: f64,
    pub per_sample: Vec<f64>,
}

/// Metrics of `model` on `samples`.
pub fn evaluate<T: Real>(model: &OperatorModel<T>, samples: &[OperatorSample<T>]) -> Result<EvalReport> {
    let inputs = prepare(model, samples)?;
    evaluate_prepared(model, &inputs, samples)
}

fn prepare<T: Real>(model: &OperatorModel<T>, samples: &[OperatorSample<T>]) -> Result<Vec<InputGraph<T>>> {
    samples.iter().map(|s| Ok(model.prepare_input(&s.theta, &s.points)?)).collect()
}

fn evaluate_prepared<T: Real>(
    model: &OperatorModel<T>,
    inputs: &[InputGraph<T>],
    samples: &[OperatorSample<T>],
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut preds = Vec::with_capacity(samples.len());
    for (input, s) in inputs.iter().zip(samples) {
        preds.push(model.predict(input, &s.queries)?);
    }
    let targets: Vec<Tensor<T>> = samples.iter().map(|s| s.target.clone()).collect();
    let per_sample =
        preds.iter().zip(&targets).map(|(p, t)| relative_l2(p, t).map(|x| x.to_f64_lossy())).collect::<Result<_>>()?;
    Ok(EvalReport {
        nrmse: nrmse(&preds, &targets)?.to_f64_lossy(),
        rmse: rmse(&preds, &targets)?.to_f64_lossy(),
        per_sample,
    })
}

fn channel_stats<'a, T: Real>(blocks: impl Iterator<Item = &'a [T]>, c: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; c];
    let mut sq = vec![0.0; c];
    let mut n = 0usize;
    for data in blocks {
        for (i, x) in data.iter().enumerate() {
            let x = x.to_f64_lossy();
            sum[i % c] += x;
            sq[i % c] += x * x;
        }
        n += data.len() / c;
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let s = (q / n - m * m).max(0.0).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Sets the model's input standardization and output de-standardization
/// from per-channel statistics of `samples`.
pub fn fit_normalizers<T: Real>(model: &mut OperatorModel<T>, samples: &[OperatorSample<T>]) {
    let cin = model.config.in_channels;
    let cout = model.config.out_channels;
    let (m, s) = channel_stats(samples.iter().map(|x| x.theta.data()), cin);
    model.input_norm = ChannelAffine {
        shift: Tensor::new(vec![cin], m.iter().zip(&s).map(|(m, s)| T::lit(-m / s)).collect()).expect("channels"),
        scale: Tensor::new(vec![cin], s.iter().map(|s| T::lit(1.0 / s)).collect()).expect("channels"),
    };
    let (m, s) = channel_stats(samples.iter().map(|x| x.target.data()), cout);
    model.output_norm = ChannelAffine {
        shift: Tensor::new(vec![cout], m.iter().map(|&m| T::lit(m)).collect()).expect("channels"),
        scale: Tensor::new(vec![cout], s.iter().map(|&s| T::lit(s)).collect()).expect("channels"),
    };
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Model with the lowest eval nRMSE (train loss when there is no eval set).
    pub best: OperatorModel<T>,
    /// Model after the last completed epoch.
    pub last: OperatorModel<T>,
    pub history: TrainHistory,
    /// Set when a NaN/inf stopped training; `last` is then the last good state.
    pub fault: Option<String>,
}

/// Mini-batch Adam training under a one-cycle schedule. Holds the optimizer
/// state and schedule position so a run can be checkpointed and resumed.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: OperatorModel<T>,
    pub cfg: TrainConfig,
    pub adam: Adam<T>,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Epochs completed so far.
    pub epoch: usize,
    pub history: TrainHistory,
    best: Option<(f64, OperatorModel<T>)>,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: OperatorModel<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let sizes: Vec<usize> = model.params().iter().map(|(_, t)| t.len()).collect();
        let adam = Adam::new(cfg.adam, &sizes);
        Ok(Self { model, cfg, adam, step: 0, epoch: 0, history: TrainHistory::default(), best: None })
    }

    /// Optimizer state and schedule position as named tensors for a
    /// checkpoint.
    pub fn state_tensors(&self) -> Vec<(String, Tensor<f64>)> {
        let scalar = |x: f64| Tensor::scalar(x);
        let mut out = vec![
            ("train.step".to_string(), scalar(self.step as f64)),
            ("train.epoch".to_string(), scalar(self.epoch as f64)),
            ("adam.t".to_string(), scalar(self.adam.t as f64)),
        ];
        for (k, (name, _)) in self.model.params().iter().enumerate() {
            let cast = |v: &[T]| Tensor::new(vec![v.len()], v.iter().map(|x| x.to_f64_lossy()).collect()).expect("non-empty");
            out.push((format!("adam.m.{name}"), cast(&self.adam.m[k])));
            out.push((format!("adam.v.{name}"), cast(&self.adam.v[k])));
        }
        out
    }

    /// Restores what [`Self::state_tensors`] wrote.
    pub fn restore_state(&mut self, tensors: &[(String, Tensor<f64>)]) -> Result<()> {
        let get = |name: &str| {
            tensors
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, t)| t)
                .ok_or_else(|| TrainError::Config(format!("checkpoint lacks {name}")))
        };
        let whole = |name: &str| -> Result<usize> {
            let x = get(name)?.data()[0];
            if x < 0.0 || x.fract() != 0.0 {
                return Err(TrainError::Config(format!("{name} = {x} is not a count")));
            }
            Ok(x as usize)
        };
        self.step = whole("train.step")?;
        self.epoch = whole("train.epoch")?;
        self.adam.t = whole("adam.t")? as u64;
        let names: Vec<String> = self.model.params().into_iter().map(|(k, _)| k).collect();
        for (k, name) in names.iter().enumerate() {
            for (slot, prefix) in [(&mut self.adam.m[k], "adam.m"), (&mut self.adam.v[k], "adam.v")] {
                let t = get(&format!("{prefix}.{name}"))?;
                if t.len() != slot.len() {
                    return Err(TrainError::Config(format!("{prefix}.{name} has {} entries", t.len())));
                }
                *slot = t.data().iter().map(|&x| T::lit(x)).collect();
            }
        }
        Ok(())
    }

    fn sample_loss(&self, tape: &mut Tape<T>, frames: &[Var], sample: &OperatorSample<T>) -> Result<Var> {
        let targets = sample.target_frames();
        if targets.len() != frames.len() {
            return Err(TrainError::Shape(format!("{} predicted frames for {} target frames", frames.len(), targets.len())));
        }
        let mut total: Option<Var> = None;
        for (&f, t) in frames.iter().zip(&targets) {
            let l = match self.cfg.loss {
                LossKind::Mse => mse_loss_vars(tape, f, t)?,
                LossKind::RelL2 => rel_l2_loss_vars(tape, f, t)?,
            };
            total = Some(match total {
                Some(acc) => tape.add(acc, l)?,
                None => l,
            });
        }
        total.ok_or(TrainError::EmptyDataset)
    }

    /// Forward and backward on one sample; adds its gradients to `grads`.
    fn accumulate(&self, input: &InputGraph<T>, sample: &OperatorSample<T>, grads: &mut [Vec<T>]) -> Result<T> {
        let mut tape = Tape::new();
        let mut leaves = Vec::with_capacity(grads.len());
        let vars = self.model.bind_with(&mut |t| {
            let v = tape.leaf(t);
            leaves.push(v);
            v
        });
        let frames = self.model.forward_vars(&mut tape, &vars, input, &sample.queries)?;
        let loss = self.sample_loss(&mut tape, &frames, sample)?;
        tape.backward(loss)?;
        for (g, &leaf) in grads.iter_mut().zip(&leaves) {
            if let Some(d) = tape.grad(leaf) {
                g.iter_mut().zip(d).for_each(|(a, &b)| *a += b);
            }
        }
        Ok(tape.value(loss)[0])
    }

    /// Trains until `cfg.epochs` epochs are complete, calling `on_epoch`
    /// after each one.
    pub fn run(
        &mut self,
        train: &[OperatorSample<T>],
        eval: &[OperatorSample<T>],
        on_epoch: impl FnMut(&EpochRecord, &Self),
    ) -> Result<TrainOutcome<T>> {
        self.run_until(self.cfg.epochs, train, eval, on_epoch)
    }

    /// Like [`Trainer::run`] but stops once `epoch_limit` epochs are done;
    /// the schedule still spans `cfg.epochs`, so a later call continues it.
    pub fn run_until(
        &mut self,
        epoch_limit: usize,
        train: &[OperatorSample<T>],
        eval: &[OperatorSample<T>],
        mut on_epoch: impl FnMut(&EpochRecord, &Self),
    ) -> Result<TrainOutcome<T>> {
        if train.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        if self.model.config.mode == Mode::Rollout && self.model.config.rollout_steps == 0 {
            return Err(TrainError::Config("rollout model without steps".into()));
        }
        let train_inputs = prepare(&self.model, train)?;
        let eval_inputs = prepare(&self.model, eval)?;
        let per_epoch = self.cfg.steps_per_epoch(train.len());
        let total = per_epoch * self.cfg.epochs;
        let sizes: Vec<usize> = self.model.params().iter().map(|(_, t)| t.len()).collect();
        let mut fault = None;

        while self.epoch < self.cfg.epochs.min(epoch_limit) {
            let started = Instant::now();
            let snapshot = (self.model.clone(), self.adam.clone(), self.step);
            let mut order: Vec<usize> = (0..train.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (self.epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            order.shuffle(&mut rng);

            let mut loss_sum = 0.0;
            let mut lr = 0.0;
            let mut result: Result<()> = Ok(());
            for batch in order.chunks(self.cfg.batch_size) {
                let mut grads: Vec<Vec<T>> = sizes.iter().map(|&n| vec![T::zero(); n]).collect();
                for &i in batch {
                    match self.accumulate(&train_inputs[i], &train[i], &mut grads) {
                        Ok(l) => loss_sum += l.to_f64_lossy(),
                        Err(e) => {
                            result = Err(e);
                            break;
                        }
                    }
                }
                if result.is_err() {
                    break;
                }
                if grads.iter().flatten().any(|g| !g.is_finite()) {
                    result = Err(TrainError::Tensor(crate::tensor::TensorError::NumericFault { op: "gradient" }));
                    break;
                }
                clip_global_norm(&mut grads, self.cfg.clip_norm);
                lr = self.cfg.onecycle.lr(self.step.min(total - 1), total, self.cfg.lr)?;
                let mut params: Vec<&mut Tensor<T>> = self.model.params_mut().into_iter().map(|(_, t)| t).collect();
                self.adam.step(&mut params, &grads, lr);
                self.step += 1;
                if !self.model.is_finite() {
                    result = Err(TrainError::Tensor(crate::tensor::TensorError::NumericFault { op: "adam" }));
                    break;
                }
            }
            if let Err(e) = result {
                if !e.is_numeric_fault() {
                    return Err(e);
                }
                log::warn!("numeric fault in epoch {}: {e}; keeping the last good state", self.epoch);
                (self.model, self.adam, self.step) = snapshot;
                fault = Some(e.to_string());
                break;
            }

            let train_loss = loss_sum / train.len() as f64;
            let (eval_nrmse, eval_rmse) = if eval.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let r = evaluate_prepared(&self.model, &eval_inputs, eval)?;
                (r.nrmse, r.rmse)
            };
            let score = if eval.is_empty() { train_loss } else { eval_nrmse };
            if self.best.as_ref().map_or(true, |(b, _)| score < *b) {
                self.best = Some((score, self.model.clone()));
            }
            self.epoch += 1;
            let rec = EpochRecord {
                epoch: self.epoch,
                train_loss,
                eval_nrmse,
                eval_rmse,
                lr,
                seconds: started.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {:>4}  loss {:.4e}  eval nRMSE {:.4e}  RMSE {:.4e}  lr {:.3e}",
                rec.epoch,
                rec.train_loss,
                rec.eval_nrmse,
                rec.eval_rmse,
                rec.lr
            );
            self.history.records.push(rec.clone());
            on_epoch(&rec, self);
        }

        let best = self.best.as_ref().map_or_else(|| self.model.clone(), |(_, m)| m.clone());
        Ok(TrainOutcome { best, last: self.model.clone(), history: self.history.clone(), fault })
    }
}
