//! Feature extractor in front of the encoder and predictor.
//!
//! Identity passes normalized features straight through. The MLP variant
//! is pretrained end-to-end with a scalar head on the pooled training
//! split; afterwards its second hidden layer serves as the representation
//! and keeps training by SGD inside the outer meta-learning layer (the
//! dormant head parameters stay in the vector so checkpoints are
//! complete).

use crate::config::{ExtractorKind, RunConfig};
use crate::data::{NormStats, StockTask, FEATURE_DIM};
use crate::diff::{Checkpoint, MlpSpec, OptState, ParamVector, Rng};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Extractor {
    Identity { dim: usize },
    Mlp { spec: MlpSpec, params: ParamVector },
}

impl Extractor {
    pub fn build(
        tasks: &[StockTask],
        cfg: &RunConfig,
        norm: &NormStats,
        rng: &mut Rng,
    ) -> Result<Extractor> {
        match cfg.extractor {
            ExtractorKind::Identity => Ok(Extractor::Identity { dim: FEATURE_DIM }),
            ExtractorKind::Mlp => {
                let (h1, h2) = cfg.extractor_hidden;
                let spec = MlpSpec::new([FEATURE_DIM, h1, h2, 1]);
                let (params, _) = pretrain_mlp(tasks, cfg, norm, spec, rng)?;
                Ok(Extractor::Mlp { spec, params })
            }
        }
    }

    pub fn rep_dim(&self) -> usize {
        match self {
            Extractor::Identity { dim } => *dim,
            Extractor::Mlp { spec, .. } => spec.dims[2],
        }
    }

    /// Maps a normalized feature vector to its representation.
    pub fn extract(&self, xn: &[f64]) -> Vec<f64> {
        match self {
            Extractor::Identity { .. } => xn.to_vec(),
            Extractor::Mlp { spec, params } => spec.forward_hidden(params, "f", xn),
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Extractor::Mlp { .. })
    }

    pub fn grad_template(&self) -> Option<ParamVector> {
        match self {
            Extractor::Identity { .. } => None,
            Extractor::Mlp { params, .. } => Some(params.zeros_like()),
        }
    }

    /// Accumulates gradients for upstream `dL/d rep` at input `xn`.
    pub fn backward_rep(&self, xn: &[f64], upstream: &[f64], grad: &mut ParamVector) {
        if let Extractor::Mlp { spec, params } = self {
            spec.backward_hidden(params, "f", xn, upstream, grad);
        }
    }

    pub fn sgd_step(&mut self, grad: &ParamVector, lr: f64) -> Result<()> {
        if let Extractor::Mlp { params, .. } = self {
            OptState::sgd().step(params, grad, lr)?;
        }
        Ok(())
    }

    pub fn from_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Extractor> {
        match cfg.extractor {
            ExtractorKind::Identity => Ok(Extractor::Identity { dim: FEATURE_DIM }),
            ExtractorKind::Mlp => {
                let (h1, h2) = cfg.extractor_hidden;
                let spec = MlpSpec::new([FEATURE_DIM, h1, h2, 1]);
                let params = super::pull_segments(ckpt, &spec.segments("f"))?;
                Ok(Extractor::Mlp { spec, params })
            }
        }
    }
}

/// Trains `spec` on the pooled normalized train split (MSE, Adam,
/// shuffled batches), returning the epoch-end parameters with the lowest
/// dev MSE and that MSE (train MSE when dev is empty).
pub fn pretrain_mlp(
    tasks: &[StockTask],
    cfg: &RunConfig,
    norm: &NormStats,
    spec: MlpSpec,
    rng: &mut Rng,
) -> Result<(ParamVector, f64)> {
    let train: Vec<(Vec<f64>, f64)> = tasks
        .iter()
        .flat_map(|t| t.train.iter().map(|i| (norm.apply(&i.x), i.y)))
        .collect();
    let dev: Vec<(Vec<f64>, f64)> = tasks
        .iter()
        .flat_map(|t| t.dev.iter().map(|i| (norm.apply(&i.x), i.y)))
        .collect();
    if train.is_empty() {
        return Err(Error::data("extractor pretrain needs training instances"));
    }
    if cfg.extractor_pretrain_epochs == 0 {
        return Err(Error::config("extractor_pretrain_epochs must be > 0 for the mlp extractor"));
    }

    let segs = spec.segments("f");
    let refs: Vec<(&str, Vec<usize>)> = segs.iter().map(|(n, d)| (n.as_str(), d.clone())).collect();
    let mut params = ParamVector::zeros(&refs);
    spec.init(&mut params, "f", rng);
    let mut opt = OptState::adam(params.len());

    let mse_of = |params: &ParamVector, data: &[(Vec<f64>, f64)]| -> f64 {
        data.iter()
            .map(|(x, y)| {
                let d = spec.forward(params, "f", x)[0] - y;
                d * d
            })
            .sum::<f64>()
            / data.len() as f64
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, ParamVector)> = None;
    for _ in 0..cfg.extractor_pretrain_epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = params.zeros_like();
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                let (x, y) = &train[i];
                let pred = spec.forward(&params, "f", x)[0];
                spec.backward(&params, "f", x, &[scale * (pred - y)], &mut grad);
            }
            opt.step(&mut params, &grad, cfg.adam_lr)?;
        }
        let score = if dev.is_empty() { mse_of(&params, &train) } else { mse_of(&params, &dev) };
        if !score.is_finite() {
            return Err(Error::numeric(format!("extractor pretrain diverged (mse {score})")));
        }
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, params.clone()));
        }
    }
    let (mse, params) = best.expect("epochs > 0");
    Ok((params, mse))
}
