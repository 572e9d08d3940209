//! The dual meta-learning training loop.
//!
//! Each epoch visits every task in shuffled order. A task visit clones
//! the global decoder, then runs `span_iters` iterations: the inner layer
//! samples a contiguous time span, encodes it into a span latent,
//! optimizes that latent against the span loss for `inner_steps` steps,
//! and folds it into the stock latent at rate `beta`; the outer layer
//! samples an independent span and updates the per-stock decoder, the
//! encoder, and (when trainable) the extractor by SGD on its loss. After
//! the visit the global decoder moves toward the per-stock copy at rate
//! `gamma`.
//!
//! The encoder gradient is first order: the latent's inner gradient steps
//! are treated as constants, so the outer loss reaches the encoder only
//! through the span latent's initialization, scaled by `beta`.
//!
//! RNG discipline makes runs reproducible and resumable: epoch `e` draws
//! from `derive("train-epoch", e)` (shuffle first, then two span draws
//! per iteration, except one under `no_inner_meta`), and the per-epoch
//! dev evaluation from `derive("dev-eval", e)`.

use serde::Serialize;

use super::{sample_span, MetaModel};
use crate::config::RunConfig;
use crate::data::StockTask;
use crate::diff::{linear_grad_theta, linear_predict, OptState, Rng};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Number of task visits (stocks, or 1 when pooled).
    pub tasks: usize,
    /// Mean inner-layer span loss, where the path has an inner loop.
    pub inner_loss: Option<f64>,
    /// Mean outer-layer loss across the epoch's task visits.
    pub train_loss: f64,
    /// Pooled dev MSE under the inference procedure; absent when no task
    /// has dev instances.
    pub dev_mse: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Model with the best selection score seen during this call; `None`
    /// when no epoch improved on the resumed threshold.
    pub best: Option<MetaModel>,
    /// Final state (what a `last` checkpoint should hold).
    pub last: MetaModel,
    pub history: Vec<EpochStats>,
}

/// Runs meta-training from scratch or from a resumed model, invoking
/// `on_epoch` after every epoch (checkpointing hook). Selection uses dev
/// MSE, falling back to the epoch train loss when dev is empty.
pub fn meta_train<F>(
    tasks: &[StockTask],
    cfg: &RunConfig,
    resume: Option<MetaModel>,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&MetaModel, &EpochStats) -> Result<()>,
{
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::data("meta_train needs at least one task"));
    }
    let base_rng = Rng::new(cfg.seed);
    let mut model = match resume {
        Some(m) => {
            check_resume_compatible(&m.config, cfg)?;
            let mut m = m;
            m.config = cfg.clone();
            m
        }
        None => MetaModel::init(tasks, cfg, &base_rng)?,
    };

    let states = build_task_states(&model, tasks);
    let mut best_score = model.best_dev_mse;
    let mut best_model: Option<MetaModel> = None;
    let mut history = Vec::new();

    for epoch in model.epochs_trained..cfg.epochs {
        let mut rng = base_rng.derive("train-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..states.len()).collect();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut inner_sum = 0.0;
        let mut inner_n = 0usize;
        for &ti in &order {
            let (l2, l1) = train_task(&mut model, &states[ti], cfg, &mut rng).map_err(|e| {
                Error::numeric(format!("epoch {epoch}, task {}: {e}", states[ti].id))
            })?;
            loss_sum += l2;
            if let Some(v) = l1 {
                inner_sum += v;
                inner_n += 1;
            }
        }
        let train_loss = loss_sum / states.len() as f64;
        let inner_loss = (inner_n > 0).then(|| inner_sum / inner_n as f64);
        model.epochs_trained = epoch + 1;

        let mut dev_rng = base_rng.derive("dev-eval", epoch as u64);
        let dev_mse = crate::eval::dev_mse(&model, tasks, &mut dev_rng)?;
        let score = dev_mse.unwrap_or(train_loss);
        if !score.is_finite() || !train_loss.is_finite() {
            return Err(Error::numeric(format!(
                "epoch {epoch}: non-finite loss (train {train_loss}, selection {score})"
            )));
        }
        if best_score.map_or(true, |b| score < b) {
            best_score = Some(score);
            model.best_dev_mse = Some(score);
            best_model = Some(model.clone());
        }
        model.best_dev_mse = best_score;

        let stats = EpochStats { epoch, tasks: states.len(), inner_loss, train_loss, dev_mse };
        history.push(stats.clone());
        on_epoch(&model, &stats)?;
    }
    Ok(TrainOutcome { best: best_model, last: model, history })
}

fn check_resume_compatible(old: &RunConfig, new: &RunConfig) -> Result<()> {
    let mut a = old.clone();
    let mut b = new.clone();
    a.epochs = 0;
    b.epochs = 0;
    if a != b {
        return Err(Error::config(
            "resume config differs from the checkpoint (only epochs may change)",
        ));
    }
    Ok(())
}

/// Training-split features (normalized) and targets for one task.
struct TaskState {
    id: String,
    xn: Vec<Vec<f64>>,
    ys: Vec<f64>,
}

impl TaskState {
    fn len(&self) -> usize {
        self.xn.len()
    }
}

fn build_task_states(model: &MetaModel, tasks: &[StockTask]) -> Vec<TaskState> {
    let prepare = |task: &StockTask, state: &mut TaskState| {
        for inst in &task.train {
            state.xn.push(model.norm.apply(&inst.x));
            state.ys.push(inst.y);
        }
    };
    if model.ablation().no_tasks {
        let mut state =
            TaskState { id: super::POOLED_TASK.to_string(), xn: Vec::new(), ys: Vec::new() };
        for task in tasks {
            prepare(task, &mut state);
        }
        vec![state]
    } else {
        tasks
            .iter()
            .map(|task| {
                let mut state =
                    TaskState { id: task.stock.clone(), xn: Vec::new(), ys: Vec::new() };
                prepare(task, &mut state);
                state
            })
            .collect()
    }
}

/// Batch MSE plus its gradients: the loss, `dL/d theta`, and the
/// per-sample upstream `2 (pred - y) / n` in batch order.
fn mse_grad(theta: &[f64], reps: &[Vec<f64>], ys: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = reps.len() as f64;
    let mut u_theta = vec![0.0; theta.len()];
    let mut ups = Vec::with_capacity(reps.len());
    let mut loss = 0.0;
    for (rep, y) in reps.iter().zip(ys) {
        let d = linear_predict(theta, rep) - y;
        loss += d * d;
        let u = 2.0 * d / n;
        ups.push(u);
        linear_grad_theta(rep, u, &mut u_theta);
    }
    (loss / n, u_theta, ups)
}

fn gather(
    model: &MetaModel,
    ts: &TaskState,
    span: std::ops::Range<usize>,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let reps = span.clone().map(|i| model.extractor.extract(&ts.xn[i])).collect();
    let ys = span.map(|i| ts.ys[i]).collect();
    (reps, ys)
}

/// SGD on the extractor through the prediction path of the outer batch.
fn update_extractor(
    model: &mut MetaModel,
    ts: &TaskState,
    span: std::ops::Range<usize>,
    theta: &[f64],
    ups: &[f64],
    cfg: &RunConfig,
) -> Result<()> {
    if !model.extractor.is_trainable() {
        return Ok(());
    }
    let rep_dim = model.rep_dim();
    let w = &theta[..rep_dim];
    let mut grad = model.extractor.grad_template().expect("trainable extractor");
    for (k, i) in span.enumerate() {
        let urep: Vec<f64> = w.iter().map(|wi| wi * ups[k]).collect();
        model.extractor.backward_rep(&ts.xn[i], &urep, &mut grad);
    }
    model.extractor.sgd_step(&grad, cfg.learning_rate)
}

/// One task visit. Returns the mean outer loss and, where the path has an
/// inner loop, the mean inner span loss.
fn train_task(
    model: &mut MetaModel,
    ts: &TaskState,
    cfg: &RunConfig,
    rng: &mut Rng,
) -> Result<(f64, Option<f64>)> {
    if !model.uses_decoder() {
        train_task_predictor_only(model, ts, cfg, rng)
    } else if model.ablation().no_latent {
        train_task_span_stats(model, ts, cfg, rng)
    } else if model.ablation().no_inner_meta {
        train_task_whole_split(model, ts, cfg, rng)
    } else {
        train_task_dual(model, ts, cfg, rng)
    }
}

/// Convex interpolation of a stock latent toward an adapted span latent.
/// Keeps `max |z_i|` bounded by the largest adapted latent seen so far.
fn fold_latent(zi: &mut [f64], z: &[f64], beta: f64) {
    for (a, b) in zi.iter_mut().zip(z) {
        *a += beta * (*b - *a);
    }
}

/// Full dual-process path (also covers `no_encoder`, whose latent
/// initialization falls back inside [`MetaModel::encode_mean`]).
fn train_task_dual(
    model: &mut MetaModel,
    ts: &TaskState,
    cfg: &RunConfig,
    rng: &mut Rng,
) -> Result<(f64, Option<f64>)> {
    let dec_spec = model.decoder_spec();
    let mut phi_di = model.decoder.as_ref().expect("decoder present").clone();
    let mut loss_sum = 0.0;
    let mut inner_sum = 0.0;
    let mut inner_n = 0usize;
    for _ in 0..cfg.span_iters {
        // Inner layer: span latent from t1, optimized in latent space.
        let span1 = sample_span(ts.len(), cfg.batch_size, rng);
        let (reps1, ys1) = gather(model, ts, span1);
        let mut z = model.encode_mean(reps1.iter().map(Vec::as_slice));
        let mut scratch = phi_di.zeros_like();
        for _ in 0..cfg.inner_steps {
            let theta = dec_spec.forward(&phi_di, "d", &z);
            let (l1, u_theta, _) = mse_grad(&theta, &reps1, &ys1);
            let dz = dec_spec.backward(&phi_di, "d", &z, &u_theta, &mut scratch);
            for (zj, g) in z.iter_mut().zip(&dz) {
                *zj -= cfg.alpha * g;
            }
            inner_sum += l1;
            inner_n += 1;
        }
        fold_latent(model.latents.get_mut(&ts.id).expect("latent exists"), &z, cfg.beta);
        let zi = model.latents[&ts.id].clone();

        // Outer layer: independent span t2.
        let span2 = sample_span(ts.len(), cfg.batch_size, rng);
        let (reps2, ys2) = gather(model, ts, span2.clone());
        let theta_i = dec_spec.forward(&phi_di, "d", &zi);
        let (loss2, u_theta2, ups2) = mse_grad(&theta_i, &reps2, &ys2);
        if !loss2.is_finite() {
            return Err(Error::numeric(format!("outer loss became {loss2}")));
        }
        let mut grad_d = phi_di.zeros_like();
        let dz2 = dec_spec.backward(&phi_di, "d", &zi, &u_theta2, &mut grad_d);

        if model.encoder.is_some() {
            // dL2/d z0 = beta * dL2/d z_i', averaged over the t1 batch.
            let enc_spec = model.encoder_spec();
            let factor = cfg.beta / reps1.len() as f64;
            let upstream_z: Vec<f64> = dz2.iter().map(|g| g * factor).collect();
            let encoder = model.encoder.as_mut().expect("encoder present");
            let mut grad_e = encoder.zeros_like();
            for rep in &reps1 {
                enc_spec.backward(encoder, "e", rep, &upstream_z, &mut grad_e);
            }
            OptState::sgd().step(encoder, &grad_e, cfg.learning_rate)?;
        }
        update_extractor(model, ts, span2, &theta_i, &ups2, cfg)?;
        OptState::sgd().step(&mut phi_di, &grad_d, cfg.learning_rate)?;
        loss_sum += loss2;
    }
    sync_decoder(model, phi_di, cfg);
    let inner = (inner_n > 0).then(|| inner_sum / inner_n as f64);
    Ok((loss_sum / cfg.span_iters as f64, inner))
}

/// `no_inner_meta`: the stock latent is the encoding of the whole
/// training split, refreshed once per visit; spans only feed the outer
/// layer.
fn train_task_whole_split(
    model: &mut MetaModel,
    ts: &TaskState,
    cfg: &RunConfig,
    rng: &mut Rng,
) -> Result<(f64, Option<f64>)> {
    let dec_spec = model.decoder_spec();
    let (reps_all, _) = gather(model, ts, 0..ts.len());
    let zi = model.encode_mean(reps_all.iter().map(Vec::as_slice));
    model.latents.insert(ts.id.clone(), zi.clone());

    let mut phi_di = model.decoder.as_ref().expect("decoder present").clone();
    let mut loss_sum = 0.0;
    for _ in 0..cfg.span_iters {
        let span2 = sample_span(ts.len(), cfg.batch_size, rng);
        let (reps2, ys2) = gather(model, ts, span2.clone());
        let theta_i = dec_spec.forward(&phi_di, "d", &zi);
        let (loss2, u_theta2, ups2) = mse_grad(&theta_i, &reps2, &ys2);
        if !loss2.is_finite() {
            return Err(Error::numeric(format!("outer loss became {loss2}")));
        }
        let mut grad_d = phi_di.zeros_like();
        let dz2 = dec_spec.backward(&phi_di, "d", &zi, &u_theta2, &mut grad_d);

        if model.encoder.is_some() {
            // z_i is the direct mean encoding, so the factor is 1/N.
            let enc_spec = model.encoder_spec();
            let factor = 1.0 / reps_all.len() as f64;
            let upstream_z: Vec<f64> = dz2.iter().map(|g| g * factor).collect();
            let encoder = model.encoder.as_mut().expect("encoder present");
            let mut grad_e = encoder.zeros_like();
            for rep in &reps_all {
                enc_spec.backward(encoder, "e", rep, &upstream_z, &mut grad_e);
            }
            OptState::sgd().step(encoder, &grad_e, cfg.learning_rate)?;
        }
        update_extractor(model, ts, span2, &theta_i, &ups2, cfg)?;
        OptState::sgd().step(&mut phi_di, &grad_d, cfg.learning_rate)?;
        loss_sum += loss2;
    }
    sync_decoder(model, phi_di, cfg);
    Ok((loss_sum / cfg.span_iters as f64, None))
}

/// `no_latent`: the decoder consumes span statistics (mean
/// representation of t1) instead of a learned latent.
fn train_task_span_stats(
    model: &mut MetaModel,
    ts: &TaskState,
    cfg: &RunConfig,
    rng: &mut Rng,
) -> Result<(f64, Option<f64>)> {
    let dec_spec = model.decoder_spec();
    let mut phi_di = model.decoder.as_ref().expect("decoder present").clone();
    let mut loss_sum = 0.0;
    for _ in 0..cfg.span_iters {
        let span1 = sample_span(ts.len(), cfg.batch_size, rng);
        let (reps1, _) = gather(model, ts, span1);
        let input = super::mean_vec(reps1.iter().map(Vec::as_slice), model.rep_dim());

        let span2 = sample_span(ts.len(), cfg.batch_size, rng);
        let (reps2, ys2) = gather(model, ts, span2.clone());
        let theta_i = dec_spec.forward(&phi_di, "d", &input);
        let (loss2, u_theta2, ups2) = mse_grad(&theta_i, &reps2, &ys2);
        if !loss2.is_finite() {
            return Err(Error::numeric(format!("outer loss became {loss2}")));
        }
        let mut grad_d = phi_di.zeros_like();
        dec_spec.backward(&phi_di, "d", &input, &u_theta2, &mut grad_d);
        update_extractor(model, ts, span2, &theta_i, &ups2, cfg)?;
        OptState::sgd().step(&mut phi_di, &grad_d, cfg.learning_rate)?;
        loss_sum += loss2;
    }
    sync_decoder(model, phi_di, cfg);
    Ok((loss_sum / cfg.span_iters as f64, None))
}

/// `no_decoder`: interpolation training directly on predictor
/// parameters. t1 drives `inner_steps` SGD steps at `alpha`; t2 one step
/// at the outer rate; the global parameters then move toward the
/// per-stock copy at `gamma`.
fn train_task_predictor_only(
    model: &mut MetaModel,
    ts: &TaskState,
    cfg: &RunConfig,
    rng: &mut Rng,
) -> Result<(f64, Option<f64>)> {
    let mut theta_i = model.theta_global.clone().expect("theta_global present");
    let mut loss_sum = 0.0;
    let mut inner_sum = 0.0;
    let mut inner_n = 0usize;
    for _ in 0..cfg.span_iters {
        let span1 = sample_span(ts.len(), cfg.batch_size, rng);
        let (reps1, ys1) = gather(model, ts, span1);
        for _ in 0..cfg.inner_steps {
            let (l1, g, _) = mse_grad(&theta_i, &reps1, &ys1);
            for (t, gi) in theta_i.iter_mut().zip(&g) {
                *t -= cfg.alpha * gi;
            }
            inner_sum += l1;
            inner_n += 1;
        }
        let span2 = sample_span(ts.len(), cfg.batch_size, rng);
        let (reps2, ys2) = gather(model, ts, span2);
        let (loss2, g2, _) = mse_grad(&theta_i, &reps2, &ys2);
        if !loss2.is_finite() {
            return Err(Error::numeric(format!("outer loss became {loss2}")));
        }
        for (t, gi) in theta_i.iter_mut().zip(&g2) {
            *t -= cfg.learning_rate * gi;
        }
        loss_sum += loss2;
    }
    let tg = model.theta_global.as_mut().expect("theta_global present");
    if cfg.ablation.shared_decoder || cfg.gamma == 1.0 {
        *tg = theta_i;
    } else {
        for (g, t) in tg.iter_mut().zip(&theta_i) {
            *g += cfg.gamma * (t - *g);
        }
    }
    let inner = (inner_n > 0).then(|| inner_sum / inner_n as f64);
    Ok((loss_sum / cfg.span_iters as f64, inner))
}

fn sync_decoder(model: &mut MetaModel, phi_di: crate::diff::ParamVector, cfg: &RunConfig) {
    let decoder = model.decoder.as_mut().expect("decoder present");
    if cfg.ablation.shared_decoder {
        *decoder = phi_di;
    } else {
        decoder.lerp_toward(&phi_di, cfg.gamma);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::features::{build_instances, split_tasks};
    use crate::data::synth::{generate, SynthSpec};
    use crate::data::SplitSpec;

    fn small_tasks(stocks: usize, seed: u64) -> Vec<StockTask> {
        let spec = SynthSpec { stocks, days: 30, slots: 14, ..SynthSpec::default() };
        let panel = generate(&spec, seed).unwrap();
        split_tasks(build_instances(&panel).instances, SplitSpec::new(26, 28).unwrap())
            .unwrap()
            .tasks
    }

    fn fast_config(epochs: usize) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.epochs = epochs;
        cfg.latent_dim = 4;
        cfg.encoder_hidden = (12, 12);
        cfg.decoder_hidden = (12, 12);
        cfg.span_iters = 2;
        cfg.inner_steps = 2;
        cfg.batch_size = 8;
        cfg.alpha = 1e-2;
        cfg.beta = 0.2;
        cfg.learning_rate = 1e-3;
        cfg
    }

    #[test]
    fn training_moves_the_model_and_tracks_best() {
        let tasks = small_tasks(3, 11);
        let cfg = fast_config(3);
        let out = meta_train(&tasks, &cfg, None, |_, _| Ok(())).unwrap();
        assert_eq!(out.history.len(), 3);
        assert!(out.best.is_some());
        let last = &out.last;
        assert_eq!(last.epochs_trained, 3);
        assert!(last.latents.values().any(|z| z.iter().any(|v| *v != 0.0)));
        assert!(out.history.iter().all(|h| h.train_loss.is_finite()));
        assert!(out.history.iter().all(|h| h.dev_mse.unwrap().is_finite()));
        let best = out.best.unwrap();
        assert_eq!(best.best_dev_mse, out.history.iter().filter_map(|h| h.dev_mse).fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v)))));
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let tasks = small_tasks(2, 4);
        let cfg = fast_config(2);
        let a = meta_train(&tasks, &cfg, None, |_, _| Ok(())).unwrap();
        let b = meta_train(&tasks, &cfg, None, |_, _| Ok(())).unwrap();
        assert_eq!(
            a.last.to_checkpoint().unwrap().render(),
            b.last.to_checkpoint().unwrap().render()
        );
    }

    #[test]
    fn resume_matches_uninterrupted_training() {
        let tasks = small_tasks(2, 9);
        let full_cfg = fast_config(4);
        let straight = meta_train(&tasks, &full_cfg, None, |_, _| Ok(())).unwrap();

        let half_cfg = fast_config(2);
        let first = meta_train(&tasks, &half_cfg, None, |_, _| Ok(())).unwrap();
        let resumed = meta_train(&tasks, &full_cfg, Some(first.last), |_, _| Ok(())).unwrap();

        assert_eq!(
            straight.last.to_checkpoint().unwrap().render(),
            resumed.last.to_checkpoint().unwrap().render()
        );
    }

    #[test]
    fn resume_rejects_changed_hyperparameters() {
        let tasks = small_tasks(2, 9);
        let cfg = fast_config(2);
        let first = meta_train(&tasks, &cfg, None, |_, _| Ok(())).unwrap();
        let mut changed = fast_config(4);
        changed.alpha *= 2.0;
        assert!(meta_train(&tasks, &changed, Some(first.last), |_, _| Ok(())).is_err());
    }

    #[test]
    fn every_ablation_trains() {
        let tasks = small_tasks(3, 2);
        for name in crate::config::AblationFlags::NAMES {
            let mut cfg = fast_config(2);
            cfg.ablation.set(name, true).unwrap();
            let out = meta_train(&tasks, &cfg, None, |_, _| Ok(()))
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(out.last.epochs_trained, 2, "{name}");
            assert!(out.history.iter().all(|h| h.train_loss.is_finite()), "{name}");
        }
    }

    #[test]
    fn single_task_shared_decoder_equals_gamma_one_sync() {
        // With one task, copying the decoder out and interpolating back at
        // gamma = 1 is exactly the in-place shared update; the RNG streams
        // coincide, so all tensors must match bit for bit.
        let tasks = small_tasks(1, 6);
        let mut shared_cfg = fast_config(2);
        shared_cfg.ablation.shared_decoder = true;
        let mut sync_cfg = fast_config(2);
        sync_cfg.gamma = 1.0;

        let shared = meta_train(&tasks, &shared_cfg, None, |_, _| Ok(())).unwrap();
        let synced = meta_train(&tasks, &sync_cfg, None, |_, _| Ok(())).unwrap();
        let a = shared.last.to_checkpoint().unwrap();
        let b = synced.last.to_checkpoint().unwrap();
        assert_eq!(a.tensors().len(), b.tensors().len());
        for (ta, tb) in a.tensors().iter().zip(b.tensors()) {
            assert_eq!(ta.name, tb.name);
            for (va, vb) in ta.values.iter().zip(&tb.values) {
                assert_eq!(va.to_bits(), vb.to_bits(), "tensor {}", ta.name);
            }
        }
    }

    #[test]
    fn latents_diverge_across_stocks() {
        let tasks = small_tasks(3, 13);
        let mut cfg = fast_config(4);
        cfg.beta = 0.5;
        let out = meta_train(&tasks, &cfg, None, |_, _| Ok(())).unwrap();
        let latents: Vec<&Vec<f64>> = out.last.latents.values().collect();
        for i in 0..latents.len() {
            for j in (i + 1)..latents.len() {
                assert_ne!(latents[i], latents[j], "latents {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn latent_interpolation_never_escapes_the_observed_range() {
        // z_i starts at 0 and each fold is a convex combination, so its
        // sup norm stays within the largest adapted latent seen.
        let mut rng = crate::diff::Rng::new(17);
        for _ in 0..50 {
            let beta = rng.uniform();
            if beta == 0.0 {
                continue;
            }
            let mut zi = vec![0.0; 6];
            let mut seen_max = 0.0_f64;
            for _ in 0..40 {
                let z: Vec<f64> = (0..6).map(|_| 10.0 * rng.normal()).collect();
                let z_max = z.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                seen_max = seen_max.max(z_max);
                fold_latent(&mut zi, &z, beta);
                let zi_max = zi.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                assert!(zi_max <= seen_max * (1.0 + 1e-12), "{zi_max} > {seen_max}");
            }
        }
    }

    #[test]
    fn epoch_stats_carry_the_logged_fields() {
        let tasks = small_tasks(2, 21);
        let cfg = fast_config(1);
        let out = meta_train(&tasks, &cfg, None, |_, _| Ok(())).unwrap();
        let h = &out.history[0];
        assert_eq!(h.tasks, 2);
        assert!(h.inner_loss.unwrap().is_finite());

        let mut cfg = fast_config(1);
        cfg.ablation.no_inner_meta = true;
        let out = meta_train(&tasks, &cfg, None, |_, _| Ok(())).unwrap();
        assert!(out.history[0].inner_loss.is_none());
    }

    #[test]
    fn zero_epoch_training_returns_the_initial_model() {
        let tasks = small_tasks(2, 3);
        let cfg = fast_config(0);
        let out = meta_train(&tasks, &cfg, None, |_, _| Ok(())).unwrap();
        assert!(out.best.is_none());
        assert_eq!(out.last.epochs_trained, 0);
        assert!(out.last.latents.values().all(|z| z.iter().all(|v| *v == 0.0)));
    }
}
