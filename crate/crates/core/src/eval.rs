//! Inference-time adaptation, prediction, metrics and the evaluation
//! report.

use serde::Serialize;

use crate::baselines::{predict_baseline, BaselineKind, LinearBaseline};
use crate::data::{Split, StockTask};
use crate::diff::{linear_grad_theta, linear_predict, OptState, Rng};
use crate::error::{Error, Result};
use crate::meta::{mean_vec, sample_span, MetaModel};

/// One prediction with everything the metrics need.
#[derive(Debug, Clone, Serialize)]
pub struct PredRecord {
    pub stock: String,
    pub day: u32,
    pub slot: u32,
    pub pred: f64,
    pub y: f64,
    pub v_last: f64,
}

/// Regression and direction metrics over a set of predictions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub acc: f64,
    pub count: usize,
}

/// MSE, MAE, and direction accuracy. A prediction scores 1 when it moves
/// to the same side of the previous slot's volume as the truth, 0 on the
/// opposite side, and 0.5 when either movement is exactly zero; carrying
/// the last slot forward therefore scores exactly 0.5.
pub fn compute_metrics(preds: &[PredRecord]) -> Metrics {
    let n = preds.len();
    if n == 0 {
        return Metrics { mse: 0.0, mae: 0.0, acc: 0.0, count: 0 };
    }
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut acc = 0.0;
    for p in preds {
        let d = p.pred - p.y;
        se += d * d;
        ae += d.abs();
        let moved = (p.pred - p.v_last) * (p.y - p.v_last);
        acc += if moved > 0.0 {
            1.0
        } else if moved < 0.0 {
            0.0
        } else {
            0.5
        };
    }
    Metrics { mse: se / n as f64, mae: ae / n as f64, acc: acc / n as f64, count: n }
}

/// Tunes the model to one stock and returns the final linear predictor
/// parameters.
///
/// With a decoder: a per-stock copy of the global decoder takes
/// `adapt_steps` SGD steps at `adapt_lr`, each on a sampled training
/// span, with the latent held fixed; the tuned decoder then emits the
/// predictor. Without one, the globally learned predictor itself takes
/// the steps. An empty training split skips adaptation (no draws) and
/// decodes from the untuned global state.
pub fn adapt_for_stock(model: &MetaModel, task: &StockTask, rng: &mut Rng) -> Result<Vec<f64>> {
    let cfg = &model.config;
    let reps: Vec<Vec<f64>> = task.train.iter().map(|i| model.rep(&i.x)).collect();
    let ys: Vec<f64> = task.train.iter().map(|i| i.y).collect();

    if !model.uses_decoder() {
        let mut theta = model.theta_global.clone().expect("theta_global under no_decoder");
        if !reps.is_empty() {
            for _ in 0..cfg.adapt_steps {
                let span = sample_span(reps.len(), cfg.batch_size, rng);
                let mut grad = vec![0.0; theta.len()];
                let scale = 2.0 / span.len() as f64;
                for i in span {
                    let upstream = scale * (linear_predict(&theta, &reps[i]) - ys[i]);
                    linear_grad_theta(&reps[i], upstream, &mut grad);
                }
                for (t, g) in theta.iter_mut().zip(&grad) {
                    *t -= cfg.adapt_lr * g;
                }
            }
        }
        return Ok(theta);
    }

    let spec = model.decoder_spec();
    let mut phi_di = model.decoder.clone().expect("decoder present");
    let no_latent = model.ablation().no_latent;
    let zi = if no_latent { Vec::new() } else { model.latent_of(&model.task_of(&task.stock)) };
    if !reps.is_empty() {
        for _ in 0..cfg.adapt_steps {
            let span = sample_span(reps.len(), cfg.batch_size, rng);
            let input = if no_latent {
                mean_vec(span.clone().map(|i| reps[i].as_slice()), model.rep_dim())
            } else {
                zi.clone()
            };
            let theta = model.decode_theta(&phi_di, &input);
            let mut u_theta = vec![0.0; theta.len()];
            let scale = 2.0 / span.len() as f64;
            for i in span {
                let upstream = scale * (linear_predict(&theta, &reps[i]) - ys[i]);
                linear_grad_theta(&reps[i], upstream, &mut u_theta);
            }
            let mut grad = phi_di.zeros_like();
            spec.backward(&phi_di, "d", &input, &u_theta, &mut grad);
            OptState::sgd().step(&mut phi_di, &grad, cfg.adapt_lr)?;
        }
    }
    let final_input = model.decoder_input_for(task);
    Ok(model.decode_theta(&phi_di, &final_input))
}

/// Adapts to every task and predicts its `split` instances. Tasks are
/// visited in order, drawing from `rng` sequentially.
pub fn predictions_for_model(
    model: &MetaModel,
    tasks: &[StockTask],
    split: Split,
    rng: &mut Rng,
) -> Result<Vec<PredRecord>> {
    let mut out = Vec::new();
    for task in tasks {
        let theta = adapt_for_stock(model, task, rng)?;
        for inst in task.split(split) {
            let pred = model.predict_with(&theta, inst);
            if !pred.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite prediction for {} day {} slot {}",
                    inst.stock, inst.day, inst.slot
                )));
            }
            out.push(PredRecord {
                stock: inst.stock.clone(),
                day: inst.day,
                slot: inst.slot,
                pred,
                y: inst.y,
                v_last: inst.v_last,
            });
        }
    }
    Ok(out)
}

/// Pooled dev MSE under the inference procedure; `None` when no task has
/// dev instances.
pub fn dev_mse(model: &MetaModel, tasks: &[StockTask], rng: &mut Rng) -> Result<Option<f64>> {
    let preds = predictions_for_model(model, tasks, Split::Dev, rng)?;
    if preds.is_empty() {
        return Ok(None);
    }
    Ok(Some(compute_metrics(&preds).mse))
}

pub fn predictions_for_baseline(
    kind: BaselineKind,
    tasks: &[StockTask],
    split: Split,
) -> Vec<PredRecord> {
    tasks
        .iter()
        .flat_map(|t| t.split(split).iter())
        .map(|inst| PredRecord {
            stock: inst.stock.clone(),
            day: inst.day,
            slot: inst.slot,
            pred: predict_baseline(kind, inst),
            y: inst.y,
            v_last: inst.v_last,
        })
        .collect()
}

pub fn predictions_for_linear(
    lin: &LinearBaseline,
    tasks: &[StockTask],
    split: Split,
) -> Vec<PredRecord> {
    tasks
        .iter()
        .flat_map(|t| t.split(split).iter())
        .map(|inst| PredRecord {
            stock: inst.stock.clone(),
            day: inst.day,
            slot: inst.slot,
            pred: lin.predict(inst),
            y: inst.y,
            v_last: inst.v_last,
        })
        .collect()
}

/// Per-stock metric breakdown.
#[derive(Debug, Clone, Serialize)]
pub struct StockMetrics {
    pub stock: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// One evaluated model (a baseline row or the meta model).
#[derive(Debug, Clone, Serialize)]
pub struct ModelReport {
    pub model: String,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub per_stock: Vec<StockMetrics>,
}

impl ModelReport {
    pub fn from_predictions(name: &str, preds: &[PredRecord]) -> ModelReport {
        let metrics = compute_metrics(preds);
        let mut per_stock = Vec::new();
        let mut stocks: Vec<&str> = preds.iter().map(|p| p.stock.as_str()).collect();
        stocks.sort_unstable();
        stocks.dedup();
        for stock in stocks {
            let subset: Vec<PredRecord> =
                preds.iter().filter(|p| p.stock == stock).cloned().collect();
            per_stock.push(StockMetrics {
                stock: stock.to_string(),
                metrics: compute_metrics(&subset),
            });
        }
        ModelReport { model: name.to_string(), metrics, per_stock }
    }
}

/// The full evaluation artifact.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub manifest_hash: String,
    pub config_hash: String,
    pub data_fingerprint: String,
    pub seed: u64,
    pub split: String,
    pub models: Vec<ModelReport>,
}

impl EvalReport {
    /// Internal consistency checks: counts positive, metrics finite and
    /// non-negative, accuracy a probability, and `mae^2 <= mse` (Jensen)
    /// within a relative tolerance of 1e-12.
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Verify("report contains no models".into()));
        }
        for m in &self.models {
            let rows = std::iter::once((&m.model, &m.metrics))
                .chain(m.per_stock.iter().map(|s| (&s.stock, &s.metrics)));
            for (name, metrics) in rows {
                if metrics.count == 0 {
                    return Err(Error::Verify(format!("{name}: zero instances")));
                }
                for (label, v) in [("mse", metrics.mse), ("mae", metrics.mae)] {
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::Verify(format!("{name}: {label} is {v}")));
                    }
                }
                if !(0.0..=1.0).contains(&metrics.acc) {
                    return Err(Error::Verify(format!("{name}: acc {} outside [0,1]", metrics.acc)));
                }
                if metrics.mae * metrics.mae > metrics.mse * (1.0 + 1e-12) {
                    return Err(Error::Verify(format!(
                        "{name}: mae^2 {} exceeds mse {}",
                        metrics.mae * metrics.mae,
                        metrics.mse
                    )));
                }
            }
        }
        Ok(())
    }

    /// Plain-text comparison table.
    pub fn render_table(&self) -> String {
        let name_w = self
            .models
            .iter()
            .map(|m| m.model.len())
            .chain(std::iter::once("Model".len()))
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        out.push_str(&format!("split: {}\n", self.split));
        out.push_str(&format!(
            "{:<name_w$}  {:>10}  {:>10}  {:>7}  {:>7}\n",
            "Model", "MSE", "MAE", "ACC", "N"
        ));
        for m in &self.models {
            out.push_str(&format!(
                "{:<name_w$}  {:>10.4} {:>11.4}  {:>7.3}  {:>7}\n",
                m.model, m.metrics.mse, m.metrics.mae, m.metrics.acc, m.metrics.count
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(pred: f64, y: f64, v_last: f64) -> PredRecord {
        PredRecord { stock: "A".into(), day: 0, slot: 12, pred, y, v_last }
    }

    #[test]
    fn metrics_match_hand_computation() {
        // Pairs {(2,3,1),(0,3,1)}: errors 1 and 3 -> mse 5, mae 2;
        // directions: up/up = 1, down/up = 0 -> acc 0.5.
        let preds = [rec(2.0, 3.0, 1.0), rec(0.0, 3.0, 1.0)];
        let m = compute_metrics(&preds);
        assert_eq!(m.mse, 5.0);
        assert_eq!(m.mae, 2.0);
        assert_eq!(m.acc, 0.5);
        assert_eq!(m.count, 2);
    }

    #[test]
    fn tie_rule_gives_half_credit() {
        // Prediction equals v_last: moved == 0 -> 0.5 regardless of truth.
        let m = compute_metrics(&[rec(1.0, 5.0, 1.0)]);
        assert_eq!(m.acc, 0.5);
        // Truth equals v_last too.
        let m = compute_metrics(&[rec(3.0, 1.0, 1.0)]);
        assert_eq!(m.acc, 0.5);
    }

    #[test]
    fn carrying_the_last_slot_scores_exactly_half() {
        let mut rng = Rng::new(4);
        let preds: Vec<PredRecord> = (0..100)
            .map(|_| {
                let v_last = rng.normal();
                let y = rng.normal();
                rec(v_last, y, v_last)
            })
            .collect();
        assert_eq!(compute_metrics(&preds).acc, 0.5);
    }

    #[test]
    fn direction_accuracy_is_scale_free_in_the_prediction_gap() {
        // Shrinking the predicted move toward v_last never flips the sign.
        let mut rng = Rng::new(6);
        let base: Vec<PredRecord> = (0..50)
            .map(|_| rec(rng.normal(), rng.normal(), rng.normal()))
            .collect();
        let shrunk: Vec<PredRecord> = base
            .iter()
            .map(|p| rec(p.v_last + 0.01 * (p.pred - p.v_last), p.y, p.v_last))
            .collect();
        assert_eq!(compute_metrics(&base).acc, compute_metrics(&shrunk).acc);
    }

    #[test]
    fn validate_enforces_the_stated_bounds() {
        let good = EvalReport {
            manifest_hash: "m".into(),
            config_hash: "c".into(),
            data_fingerprint: "d".into(),
            seed: 1,
            split: "test".into(),
            models: vec![ModelReport::from_predictions("DPML", &[rec(2.0, 3.0, 1.0)])],
        };
        good.validate().unwrap();

        let mut bad = good.clone();
        bad.models[0].metrics.acc = 1.5;
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.models[0].metrics.mse = f64::NAN;
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        // mae^2 > mse is impossible for real prediction sets.
        bad.models[0].metrics.mae = 10.0;
        bad.models[0].metrics.mse = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn per_stock_breakdown_sums_to_the_pool() {
        let mut preds = vec![rec(1.0, 2.0, 0.0), rec(5.0, 4.0, 0.0)];
        preds[1].stock = "B".into();
        let report = ModelReport::from_predictions("x", &preds);
        assert_eq!(report.per_stock.len(), 2);
        let total: usize = report.per_stock.iter().map(|s| s.metrics.count).sum();
        assert_eq!(total, report.metrics.count);
    }
}
