use super::{Result, TrainError};

/// One-cycle learning-rate policy with cosine warm-up and annealing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneCycle {
    pub div_factor: f64,
    pub pct_start: f64,
    pub final_div_factor: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        Self { div_factor: 20.0, pct_start: 0.05, final_div_factor: 1000.0 }
    }
}

fn cosine(from: f64, to: f64, frac: f64) -> f64 {
    to + (from - to) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

impl OneCycle {
    /// Step at which the rate peaks.
    pub fn peak_step(&self, total_steps: usize) -> usize {
        let peak = (self.pct_start * total_steps as f64).round() as usize;
        peak.clamp(1, total_steps.saturating_sub(1).max(1))
    }

    /// Rate at `step`: warms from `lr_max/div_factor` to `lr_max` by
    /// [`Self::peak_step`], then anneals to `lr_max/final_div_factor` at the
    /// last step.
    pub fn lr(&self, step: usize, total_steps: usize, lr_max: f64) -> Result<f64> {
        if step >= total_steps {
            return Err(TrainError::Range(format!("step {step} outside schedule of {total_steps}")));
        }
        let start = lr_max / self.div_factor;
        let end = lr_max / self.final_div_factor;
        let peak = self.peak_step(total_steps);
        let last = total_steps - 1;
        Ok(if step < peak {
            cosine(start, lr_max, step as f64 / peak as f64)
        } else if last > peak {
            cosine(lr_max, end, (step - peak) as f64 / (last - peak) as f64)
        } else {
            lr_max
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) || !(self.div_factor > 0.0) || !(self.final_div_factor > 0.0) {
            return Err(TrainError::Config(format!("invalid one-cycle settings {self:?}")));
        }
        Ok(())
    }
}

/// Free-function form of [`OneCycle::lr`].
pub fn onecycle_lr(step: usize, total_steps: usize, lr_max: f64, cfg: &OneCycle) -> Result<f64> {
    cfg.lr(step, total_steps, lr_max)
}
