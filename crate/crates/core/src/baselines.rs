//! Classical predictors the meta-learned model is judged against.
//!
//! The naive baselines read only the log-volume entries of the feature
//! vector (prices never enter them). The linear baseline is a single
//! pooled regression over normalized features, trained with Adam and
//! selected on dev MSE.

use crate::data::{Instance, NormStats, FIELDS_PER_POINT, PRIOR_DAYS, SAME_DAY_SLOTS};
use crate::diff::{linear_grad_theta, linear_predict, OptState, ParamVector, Rng};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Same slot on the most recent prior trading day.
    Yesterday,
    /// Previous slot of the same day.
    LastSlot,
    /// Mean of the 12 same-day context slots.
    Sma12,
    /// Mean of the same slot over the 20 prior days.
    Sma20,
    /// Weighted mean of both windows (all 32 context points).
    SmaCombined,
    /// Exponential moving average over the 12 same-day slots.
    Ema12,
    /// Exponential moving average over the 20 prior days.
    Ema20,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 7] = [
        BaselineKind::Yesterday,
        BaselineKind::Sma20,
        BaselineKind::Ema20,
        BaselineKind::LastSlot,
        BaselineKind::Sma12,
        BaselineKind::Ema12,
        BaselineKind::SmaCombined,
    ];

    /// Report row label.
    pub fn label(&self) -> &'static str {
        match self {
            BaselineKind::Yesterday => "Yesterday",
            BaselineKind::Sma20 => "20-day Average",
            BaselineKind::Ema20 => "20-day EMA",
            BaselineKind::LastSlot => "Last Time Slot",
            BaselineKind::Sma12 => "12-slot Average",
            BaselineKind::Ema12 => "12-slot EMA",
            BaselineKind::SmaCombined => "20-day and 12-slot Average",
        }
    }
}

fn same_day_vol(x: &[f64], k: usize) -> f64 {
    x[k * FIELDS_PER_POINT]
}

fn prior_day_vol(x: &[f64], k: usize) -> f64 {
    x[(SAME_DAY_SLOTS + k) * FIELDS_PER_POINT]
}

/// EMA with the position-dependent smoothing `y_n = (2x_n + (n-1)y_{n-1})/(n+1)`,
/// oldest value first; equals the mean for n <= 2 and weights recent
/// values progressively more.
fn ema(values: impl Iterator<Item = f64>) -> f64 {
    let mut y = 0.0;
    let mut n = 0usize;
    for x in values {
        n += 1;
        y = if n == 1 { x } else { (2.0 * x + (n as f64 - 1.0) * y) / (n as f64 + 1.0) };
    }
    y
}

/// Applies a naive baseline to one instance. All of them predict log
/// volume directly from the log-volume context entries.
pub fn predict_baseline(kind: BaselineKind, inst: &Instance) -> f64 {
    let x = &inst.x;
    match kind {
        BaselineKind::Yesterday => prior_day_vol(x, PRIOR_DAYS - 1),
        BaselineKind::LastSlot => same_day_vol(x, SAME_DAY_SLOTS - 1),
        BaselineKind::Sma12 => {
            (0..SAME_DAY_SLOTS).map(|k| same_day_vol(x, k)).sum::<f64>() / SAME_DAY_SLOTS as f64
        }
        BaselineKind::Sma20 => {
            (0..PRIOR_DAYS).map(|k| prior_day_vol(x, k)).sum::<f64>() / PRIOR_DAYS as f64
        }
        BaselineKind::SmaCombined => {
            let total = (0..SAME_DAY_SLOTS).map(|k| same_day_vol(x, k)).sum::<f64>()
                + (0..PRIOR_DAYS).map(|k| prior_day_vol(x, k)).sum::<f64>();
            total / (SAME_DAY_SLOTS + PRIOR_DAYS) as f64
        }
        BaselineKind::Ema12 => ema((0..SAME_DAY_SLOTS).map(|k| same_day_vol(x, k))),
        BaselineKind::Ema20 => ema((0..PRIOR_DAYS).map(|k| prior_day_vol(x, k))),
    }
}

/// Pooled linear regression on normalized features.
#[derive(Debug, Clone)]
pub struct LinearBaseline {
    /// `[weights..., bias]`, applied to normalized features.
    pub theta: Vec<f64>,
    pub norm: NormStats,
    /// Dev MSE of the selected parameters (train MSE when dev is empty).
    pub selected_mse: f64,
}

impl LinearBaseline {
    pub fn predict(&self, inst: &Instance) -> f64 {
        linear_predict(&self.theta, &self.norm.apply(&inst.x))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearFitSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub std_floor: f64,
}

impl Default for LinearFitSpec {
    fn default() -> Self {
        LinearFitSpec { epochs: 50, batch_size: 32, learning_rate: 1e-4, std_floor: 1e-8 }
    }
}

/// Trains the pooled linear baseline with Adam from zero weights,
/// shuffling per epoch, keeping the epoch-end parameters with the best
/// dev MSE. Normalization is fitted on `train` only.
pub fn fit_linear_baseline(
    train: &[&Instance],
    dev: &[&Instance],
    spec: &LinearFitSpec,
    rng: &mut Rng,
) -> Result<LinearBaseline> {
    if train.is_empty() {
        return Err(Error::data("linear baseline needs at least one training instance"));
    }
    if spec.epochs == 0 || spec.batch_size == 0 {
        return Err(Error::config("linear baseline needs epochs > 0 and batch_size > 0"));
    }
    let dim = train[0].x.len();
    let norm = NormStats::fit(train.iter().map(|i| i.x.as_slice()), dim, spec.std_floor)?;
    let xs: Vec<Vec<f64>> = train.iter().map(|i| norm.apply(&i.x)).collect();
    let ys: Vec<f64> = train.iter().map(|i| i.y).collect();
    let dev_xs: Vec<Vec<f64>> = dev.iter().map(|i| norm.apply(&i.x)).collect();
    let dev_ys: Vec<f64> = dev.iter().map(|i| i.y).collect();

    let mut theta = ParamVector::zeros(&[("w", vec![dim]), ("b", vec![1])]);
    let mut opt = OptState::adam(theta.len());
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut order: Vec<usize> = (0..xs.len()).collect();

    let mse_of = |theta: &[f64], xs: &[Vec<f64>], ys: &[f64]| -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, y)| {
                let d = linear_predict(theta, x) - y;
                d * d
            })
            .sum::<f64>()
            / xs.len() as f64
    };

    for _ in 0..spec.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(spec.batch_size) {
            let mut grad = theta.zeros_like();
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                let upstream = scale * (linear_predict(theta.values(), &xs[i]) - ys[i]);
                linear_grad_theta(&xs[i], upstream, grad.values_mut());
            }
            opt.step(&mut theta, &grad, spec.learning_rate)?;
        }
        let score = if dev_xs.is_empty() {
            mse_of(theta.values(), &xs, &ys)
        } else {
            mse_of(theta.values(), &dev_xs, &dev_ys)
        };
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, theta.values().to_vec()));
        }
    }
    let (selected_mse, theta) = best.expect("epochs > 0");
    Ok(LinearBaseline { theta, norm, selected_mse })
}
