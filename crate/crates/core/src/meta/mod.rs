//! The dual-process meta-learned model: a feature pipeline, an encoder
//! that summarizes a span of a stock's history into a latent vector, a
//! decoder that maps latents to linear predictor parameters, and the
//! per-stock latents themselves.

pub mod engine;
pub mod extractor;

use std::collections::BTreeMap;

use crate::config::{AblationFlags, RunConfig};
use crate::data::{Instance, NormStats, StockTask, FEATURE_DIM};
use crate::diff::{Checkpoint, MlpSpec, ParamVector, Rng};
use crate::error::{Error, Result};

pub use extractor::Extractor;

/// Task id used when all stocks are pooled into one task.
pub const POOLED_TASK: &str = "__pooled__";

/// Everything inference needs; exactly what checkpoints carry.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaModel {
    pub config: RunConfig,
    pub norm: NormStats,
    pub extractor: Extractor,
    /// Absent under `no_encoder`, `no_latent` and `no_decoder`.
    pub encoder: Option<ParamVector>,
    /// The global decoder; absent under `no_decoder`.
    pub decoder: Option<ParamVector>,
    /// Directly learned predictor parameters; present under `no_decoder`.
    pub theta_global: Option<Vec<f64>>,
    /// Stock latents (keyed [`POOLED_TASK`] under `no_tasks`).
    pub latents: BTreeMap<String, Vec<f64>>,
    pub epochs_trained: usize,
    pub best_dev_mse: Option<f64>,
}

impl MetaModel {
    /// Builds the initial model: normalization fitted on the pooled train
    /// split, extractor pretrained if configured, Glorot-initialized
    /// encoder/decoder, zero latents. Consumes the streams
    /// `derive("extractor-pretrain")` and `derive("init")` of `rng`.
    pub fn init(tasks: &[StockTask], cfg: &RunConfig, rng: &Rng) -> Result<MetaModel> {
        let train_x = || tasks.iter().flat_map(|t| t.train.iter().map(|i| i.x.as_slice()));
        let norm = NormStats::fit(train_x(), FEATURE_DIM, cfg.std_floor)?;
        let extractor = Extractor::build(tasks, cfg, &norm, &mut rng.derive("extractor-pretrain", 0))?;

        let mut model = MetaModel {
            config: cfg.clone(),
            norm,
            extractor,
            encoder: None,
            decoder: None,
            theta_global: None,
            latents: BTreeMap::new(),
            epochs_trained: 0,
            best_dev_mse: None,
        };
        let mut init_rng = rng.derive("init", 0);
        if model.uses_encoder() {
            let spec = model.encoder_spec();
            let mut params = ParamVector::zeros(&as_refs(&spec.segments("e")));
            spec.init(&mut params, "e", &mut init_rng);
            model.encoder = Some(params);
        }
        if model.uses_decoder() {
            let spec = model.decoder_spec();
            let mut params = ParamVector::zeros(&as_refs(&spec.segments("d")));
            spec.init(&mut params, "d", &mut init_rng);
            model.decoder = Some(params);
        } else {
            model.theta_global = Some(vec![0.0; model.theta_dim()]);
        }
        if model.uses_latents() {
            for id in model.task_ids(tasks) {
                model.latents.insert(id, vec![0.0; cfg.latent_dim]);
            }
        }
        Ok(model)
    }

    pub fn ablation(&self) -> &AblationFlags {
        &self.config.ablation
    }

    pub fn uses_decoder(&self) -> bool {
        !self.ablation().no_decoder
    }

    pub fn uses_latents(&self) -> bool {
        self.uses_decoder() && !self.ablation().no_latent
    }

    pub fn uses_encoder(&self) -> bool {
        self.uses_latents() && !self.ablation().no_encoder
    }

    /// Task ids in training order: the stocks, or one pooled id.
    pub fn task_ids(&self, tasks: &[StockTask]) -> Vec<String> {
        if self.ablation().no_tasks {
            vec![POOLED_TASK.to_string()]
        } else {
            tasks.iter().map(|t| t.stock.clone()).collect()
        }
    }

    pub fn rep_dim(&self) -> usize {
        self.extractor.rep_dim()
    }

    /// Linear predictor parameter count (weights plus bias).
    pub fn theta_dim(&self) -> usize {
        self.rep_dim() + 1
    }

    pub fn encoder_spec(&self) -> MlpSpec {
        let (h1, h2) = self.config.encoder_hidden;
        MlpSpec::new([self.rep_dim(), h1, h2, self.config.latent_dim])
    }

    pub fn decoder_spec(&self) -> MlpSpec {
        let (h1, h2) = self.config.decoder_hidden;
        let in_dim = if self.ablation().no_latent { self.rep_dim() } else { self.config.latent_dim };
        MlpSpec::new([in_dim, h1, h2, self.theta_dim()])
    }

    /// Normalized, extracted representation of a raw feature vector.
    pub fn rep(&self, x: &[f64]) -> Vec<f64> {
        self.extractor.extract(&self.norm.apply(x))
    }

    /// Mean of encoder outputs over representations; under `no_encoder`,
    /// the mean representation truncated or zero-padded to the latent
    /// width.
    pub fn encode_mean<'a>(&self, reps: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
        let latent_dim = self.config.latent_dim;
        if let Some(encoder) = &self.encoder {
            let spec = self.encoder_spec();
            let mut acc = vec![0.0; latent_dim];
            let mut n = 0usize;
            for rep in reps {
                for (a, v) in acc.iter_mut().zip(spec.forward(encoder, "e", rep)) {
                    *a += v;
                }
                n += 1;
            }
            if n > 0 {
                for a in &mut acc {
                    *a /= n as f64;
                }
            }
            acc
        } else {
            let mut acc = vec![0.0; self.rep_dim()];
            let mut n = 0usize;
            for rep in reps {
                for (a, v) in acc.iter_mut().zip(rep) {
                    *a += v;
                }
                n += 1;
            }
            let mut z = vec![0.0; latent_dim];
            if n > 0 {
                for (zj, a) in z.iter_mut().zip(&acc) {
                    *zj = a / n as f64;
                }
            }
            z
        }
    }

    /// Runs `decoder` on `input`, yielding linear predictor parameters.
    pub fn decode_theta(&self, decoder: &ParamVector, input: &[f64]) -> Vec<f64> {
        self.decoder_spec().forward(decoder, "d", input)
    }

    /// Task id an instance belongs to.
    pub fn task_of(&self, stock: &str) -> String {
        if self.ablation().no_tasks {
            POOLED_TASK.to_string()
        } else {
            stock.to_string()
        }
    }

    /// Stored latent for a task; unseen tasks fall back to the mean of
    /// all trained latents (zeros if none exist).
    pub fn latent_of(&self, task_id: &str) -> Vec<f64> {
        if let Some(z) = self.latents.get(task_id) {
            return z.clone();
        }
        let mut mean = vec![0.0; self.config.latent_dim];
        if self.latents.is_empty() {
            return mean;
        }
        for z in self.latents.values() {
            for (m, v) in mean.iter_mut().zip(z) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= self.latents.len() as f64;
        }
        mean
    }

    /// Decoder input for final predictions: the stock latent, or the mean
    /// training representation under `no_latent`.
    pub fn decoder_input_for(&self, task: &StockTask) -> Vec<f64> {
        if self.ablation().no_latent {
            let reps: Vec<Vec<f64>> = task.train.iter().map(|i| self.rep(&i.x)).collect();
            mean_vec(reps.iter().map(Vec::as_slice), self.rep_dim())
        } else {
            self.latent_of(&self.task_of(&task.stock))
        }
    }

    /// Predicts one instance with explicit predictor parameters.
    pub fn predict_with(&self, theta: &[f64], inst: &Instance) -> f64 {
        crate::diff::linear_predict(theta, &self.rep(&inst.x))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        ckpt.set_meta("format", "dpml-meta-model");
        ckpt.set_meta("config", self.config.canonical_text());
        ckpt.set_meta("epochs_trained", self.epochs_trained.to_string());
        if let Some(mse) = self.best_dev_mse {
            ckpt.set_meta("best_dev_mse", format!("{:016x}", mse.to_bits()));
        }
        let dim = self.norm.dim();
        ckpt.push_tensor("norm.mean", vec![dim], self.norm.mean.clone())?;
        ckpt.push_tensor("norm.std", vec![dim], self.norm.std.clone())?;
        for params in [&self.encoder, &self.decoder].into_iter().flatten() {
            push_segments(&mut ckpt, params)?;
        }
        if let Extractor::Mlp { params, .. } = &self.extractor {
            push_segments(&mut ckpt, params)?;
        }
        if let Some(theta) = &self.theta_global {
            ckpt.push_tensor("theta_global", vec![theta.len()], theta.clone())?;
        }
        for (stock, z) in &self.latents {
            ckpt.push_tensor(format!("latent.{stock}"), vec![z.len()], z.clone())?;
        }
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<MetaModel> {
        if ckpt.meta("format") != Some("dpml-meta-model") {
            return Err(Error::checkpoint("not a model checkpoint (bad format key)"));
        }
        let config = RunConfig::parse_text(ckpt.require_meta("config")?)?;
        let epochs_trained = ckpt
            .require_meta("epochs_trained")?
            .parse()
            .map_err(|_| Error::checkpoint("bad epochs_trained"))?;
        let best_dev_mse = match ckpt.meta("best_dev_mse") {
            None => None,
            Some(hex) => Some(f64::from_bits(
                u64::from_str_radix(hex, 16)
                    .map_err(|_| Error::checkpoint("bad best_dev_mse bits"))?,
            )),
        };

        let mean = ckpt.require_tensor("norm.mean")?.values.clone();
        let std = ckpt.require_tensor("norm.std")?.values.clone();
        if mean.len() != std.len() {
            return Err(Error::checkpoint("norm.mean and norm.std disagree on width"));
        }
        let norm = NormStats { mean, std };
        let extractor = Extractor::from_checkpoint(&config, ckpt)?;

        let mut model = MetaModel {
            config,
            norm,
            extractor,
            encoder: None,
            decoder: None,
            theta_global: None,
            latents: BTreeMap::new(),
            epochs_trained,
            best_dev_mse,
        };
        if model.uses_encoder() {
            model.encoder = Some(pull_segments(ckpt, &model.encoder_spec().segments("e"))?);
        }
        if model.uses_decoder() {
            model.decoder = Some(pull_segments(ckpt, &model.decoder_spec().segments("d"))?);
        } else {
            let t = ckpt.require_tensor("theta_global")?;
            if t.values.len() != model.theta_dim() {
                return Err(Error::checkpoint(format!(
                    "theta_global has {} values, expected {}",
                    t.values.len(),
                    model.theta_dim()
                )));
            }
            model.theta_global = Some(t.values.clone());
        }
        for tensor in ckpt.tensors() {
            if let Some(stock) = tensor.name.strip_prefix("latent.") {
                if tensor.values.len() != model.config.latent_dim {
                    return Err(Error::checkpoint(format!(
                        "latent.{stock} has {} values, expected {}",
                        tensor.values.len(),
                        model.config.latent_dim
                    )));
                }
                model.latents.insert(stock.to_string(), tensor.values.clone());
            }
        }
        Ok(model)
    }
}

/// Contiguous index window of up to `batch` instances with a uniformly
/// drawn start. Always consumes exactly one draw so stream positions stay
/// independent of task length.
pub fn sample_span(len: usize, batch: usize, rng: &mut Rng) -> std::ops::Range<usize> {
    assert!(len > 0 && batch > 0, "sample_span needs len > 0 and batch > 0");
    let slack = len.saturating_sub(batch);
    let start = rng.below(slack + 1);
    start..(start + batch).min(len)
}

pub(crate) fn mean_vec<'a>(vecs: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for v in vecs {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        n += 1;
    }
    if n > 0 {
        for a in &mut acc {
            *a /= n as f64;
        }
    }
    acc
}

fn as_refs(segs: &[(String, Vec<usize>)]) -> Vec<(&str, Vec<usize>)> {
    segs.iter().map(|(n, d)| (n.as_str(), d.clone())).collect()
}

fn push_segments(ckpt: &mut Checkpoint, params: &ParamVector) -> Result<()> {
    for seg in params.segments() {
        ckpt.push_tensor(
            seg.name.clone(),
            seg.dims.clone(),
            params.get(&seg.name).to_vec(),
        )?;
    }
    Ok(())
}

pub(crate) fn pull_segments(
    ckpt: &Checkpoint,
    layout: &[(String, Vec<usize>)],
) -> Result<ParamVector> {
    let mut params = ParamVector::zeros(&as_refs(layout));
    for (name, dims) in layout {
        let tensor = ckpt.require_tensor(name)?;
        if tensor.dims != *dims {
            return Err(Error::checkpoint(format!(
                "tensor {name} has dims {:?}, expected {dims:?}",
                tensor.dims
            )));
        }
        params.get_mut(name).copy_from_slice(&tensor.values);
    }
    Ok(params)
}
