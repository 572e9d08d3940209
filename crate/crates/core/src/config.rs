//! Flat key=value run configuration.
//!
//! One file drives generation, training and evaluation. Precedence, low
//! to high: built-in defaults, config file, `DPML_*` environment
//! variables, explicit overrides (CLI flags). Unknown keys are errors.
//! The canonical rendering (sorted keys, shortest round-trip floats) is
//! hashed into every manifest so artifacts pin the exact configuration.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::synth::SynthSpec;
use crate::data::SplitSpec;
use crate::error::{Error, Result};

/// Which feature representation feeds the encoder and predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    /// Normalized features pass through unchanged.
    Identity,
    /// Pretrained MLP; its second hidden layer is the representation.
    Mlp,
}

impl ExtractorKind {
    fn as_str(&self) -> &'static str {
        match self {
            ExtractorKind::Identity => "identity",
            ExtractorKind::Mlp => "mlp",
        }
    }
}

/// Component knock-outs for the ablation study. All false in the full
/// model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    /// Pool every stock into one task.
    pub no_tasks: bool,
    /// Replace the encoder with truncation/padding of the mean feature.
    pub no_encoder: bool,
    /// Feed span statistics to the decoder directly; drop latents.
    pub no_latent: bool,
    /// Drop the hypernetwork; train predictor parameters Reptile-style.
    pub no_decoder: bool,
    /// Encode the whole training split once; never adapt over spans.
    pub no_inner_meta: bool,
    /// One decoder for all stocks (skip the per-stock copy and sync).
    pub shared_decoder: bool,
}

impl AblationFlags {
    pub const NAMES: [&'static str; 6] =
        ["no_tasks", "no_encoder", "no_latent", "no_decoder", "no_inner_meta", "shared_decoder"];

    pub fn get(&self, name: &str) -> Option<bool> {
        match name {
            "no_tasks" => Some(self.no_tasks),
            "no_encoder" => Some(self.no_encoder),
            "no_latent" => Some(self.no_latent),
            "no_decoder" => Some(self.no_decoder),
            "no_inner_meta" => Some(self.no_inner_meta),
            "shared_decoder" => Some(self.shared_decoder),
            _ => None,
        }
    }

    pub fn set(&mut self, name: &str, value: bool) -> Result<()> {
        match name {
            "no_tasks" => self.no_tasks = value,
            "no_encoder" => self.no_encoder = value,
            "no_latent" => self.no_latent = value,
            "no_decoder" => self.no_decoder = value,
            "no_inner_meta" => self.no_inner_meta = value,
            "shared_decoder" => self.shared_decoder = value,
            other => return Err(Error::config(format!("unknown ablation flag {other:?}"))),
        }
        Ok(())
    }

    pub fn any(&self) -> bool {
        AblationFlags::NAMES.iter().any(|n| self.get(n).unwrap())
    }

    /// Active flags, comma-joined ("full" when none).
    pub fn describe(&self) -> String {
        let on: Vec<&str> =
            AblationFlags::NAMES.iter().copied().filter(|n| self.get(n).unwrap()).collect();
        if on.is_empty() {
            "full".to_string()
        } else {
            on.join(",")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Outer iterations per stock per epoch (span pairs sampled).
    pub span_iters: usize,
    /// Gradient steps on the span latent in the inner layer.
    pub inner_steps: usize,
    /// Inner-layer latent learning rate.
    pub alpha: f64,
    /// Interpolation rate folding span latents into the stock latent.
    pub beta: f64,
    /// Interpolation rate folding per-stock decoders into the global one.
    pub gamma: f64,
    /// SGD rate for encoder and decoder updates in the outer layer.
    pub learning_rate: f64,
    pub latent_dim: usize,
    pub encoder_hidden: (usize, usize),
    pub decoder_hidden: (usize, usize),
    /// Decoder tuning steps per stock before prediction.
    pub adapt_steps: usize,
    pub adapt_lr: f64,
    /// Lower bound for feature standard deviations.
    pub std_floor: f64,
    /// Fraction of days assigned to train when boundaries are auto.
    pub train_frac: f64,
    /// Fraction of days assigned to dev when boundaries are auto.
    pub dev_frac: f64,
    /// Explicit split boundaries; `None` derives them from the fractions.
    pub dev_start: Option<u32>,
    pub test_start: Option<u32>,
    pub extractor: ExtractorKind,
    pub extractor_hidden: (usize, usize),
    pub extractor_pretrain_epochs: usize,
    /// Adam rate for the extractor pretrain and the linear baseline.
    pub adam_lr: f64,
    /// Epochs for the linear baseline fit.
    pub baseline_epochs: usize,
    pub ablation: AblationFlags,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            epochs: 50,
            batch_size: 32,
            span_iters: 4,
            inner_steps: 5,
            alpha: 1e-4,
            beta: 1e-4,
            gamma: 1.0,
            learning_rate: 1e-5,
            latent_dim: 16,
            encoder_hidden: (64, 64),
            decoder_hidden: (64, 64),
            adapt_steps: 10,
            adapt_lr: 1e-6,
            std_floor: 1e-8,
            train_frac: 0.8,
            dev_frac: 0.1,
            dev_start: None,
            test_start: None,
            extractor: ExtractorKind::Identity,
            extractor_hidden: (64, 32),
            extractor_pretrain_epochs: 20,
            adam_lr: 1e-4,
            baseline_epochs: 50,
            ablation: AblationFlags::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    /// Applies defaults, then `path` (if given), then `DPML_*` environment
    /// variables, then `overrides`, and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
            for (key, value) in parse_pairs(&text)? {
                cfg.set(&key, &value)?;
            }
        }
        for key in KEYS {
            let env_name = format!("DPML_{}", key.to_uppercase());
            if let Ok(value) = std::env::var(&env_name) {
                cfg.set(key, &value)
                    .map_err(|e| Error::config(format!("{env_name}: {e}")))?;
            }
        }
        for (key, value) in overrides {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (key, value) in parse_pairs(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "span_iters" => self.span_iters = parse_num(key, v)?,
            "inner_steps" => self.inner_steps = parse_num(key, v)?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "beta" => self.beta = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "learning_rate" => self.learning_rate = parse_num(key, v)?,
            "latent_dim" => self.latent_dim = parse_num(key, v)?,
            "encoder_hidden" => self.encoder_hidden = parse_pair(key, v)?,
            "decoder_hidden" => self.decoder_hidden = parse_pair(key, v)?,
            "adapt_steps" => self.adapt_steps = parse_num(key, v)?,
            "adapt_lr" => self.adapt_lr = parse_num(key, v)?,
            "std_floor" => self.std_floor = parse_num(key, v)?,
            "train_frac" => self.train_frac = parse_num(key, v)?,
            "dev_frac" => self.dev_frac = parse_num(key, v)?,
            "dev_start" => self.dev_start = parse_auto(key, v)?,
            "test_start" => self.test_start = parse_auto(key, v)?,
            "extractor" => {
                self.extractor = match v {
                    "identity" => ExtractorKind::Identity,
                    "mlp" => ExtractorKind::Mlp,
                    other => {
                        return Err(Error::config(format!(
                            "extractor must be identity or mlp, got {other:?}"
                        )))
                    }
                }
            }
            "extractor_hidden" => self.extractor_hidden = parse_pair(key, v)?,
            "extractor_pretrain_epochs" => self.extractor_pretrain_epochs = parse_num(key, v)?,
            "adam_lr" => self.adam_lr = parse_num(key, v)?,
            "baseline_epochs" => self.baseline_epochs = parse_num(key, v)?,
            "no_tasks" | "no_encoder" | "no_latent" | "no_decoder" | "no_inner_meta"
            | "shared_decoder" => {
                let b = parse_bool(key, v)?;
                self.ablation.set(key, b)?;
            }
            "synth_stocks" => self.synth.stocks = parse_num(key, v)?,
            "synth_days" => self.synth.days = parse_num(key, v)?,
            "synth_slots" => self.synth.slots = parse_num(key, v)?,
            "synth_base_log_volume" => self.synth.base_log_volume = parse_num(key, v)?,
            "synth_level_spread" => self.synth.level_spread = parse_num(key, v)?,
            "synth_u_shape_amp" => self.synth.u_shape_amp = parse_num(key, v)?,
            "synth_phase_amp" => self.synth.phase_amp = parse_num(key, v)?,
            "synth_dow_amp" => self.synth.dow_amp = parse_num(key, v)?,
            "synth_ar_rho_min" => self.synth.ar_rho_min = parse_num(key, v)?,
            "synth_ar_rho_max" => self.synth.ar_rho_max = parse_num(key, v)?,
            "synth_noise_sigma" => self.synth.noise_sigma = parse_num(key, v)?,
            "synth_small_cap_frac" => self.synth.small_cap_frac = parse_num(key, v)?,
            "synth_small_cap_noise_mult" => self.synth.small_cap_noise_mult = parse_num(key, v)?,
            "synth_price_sigma" => self.synth.price_sigma = parse_num(key, v)?,
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be > 0"));
        }
        if self.span_iters == 0 {
            return Err(Error::config("span_iters must be > 0"));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("learning_rate", self.learning_rate),
            ("adapt_lr", self.adapt_lr),
            ("adam_lr", self.adam_lr),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v <= 0.0 || v > 1.0 {
                return Err(Error::config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim must be > 0"));
        }
        if !(self.std_floor.is_finite() && self.std_floor > 0.0) {
            return Err(Error::config("std_floor must be finite and > 0"));
        }
        if !(self.train_frac > 0.0 && self.dev_frac >= 0.0 && self.train_frac + self.dev_frac < 1.0)
        {
            return Err(Error::config(format!(
                "fractions must satisfy train_frac > 0, dev_frac >= 0, train_frac + dev_frac < 1, got {} and {}",
                self.train_frac, self.dev_frac
            )));
        }
        match (self.dev_start, self.test_start) {
            (Some(d), Some(t)) => {
                SplitSpec::new(d, t)?;
            }
            (None, None) => {}
            _ => {
                return Err(Error::config(
                    "dev_start and test_start must be set together (or both auto)",
                ))
            }
        }
        self.synth.validate()?;
        Ok(())
    }

    /// Concrete split boundaries for a panel whose days run `0..=max_day`.
    pub fn resolve_split(&self, max_day: u32) -> Result<SplitSpec> {
        if let (Some(d), Some(t)) = (self.dev_start, self.test_start) {
            return SplitSpec::new(d, t);
        }
        let n = (max_day + 1) as f64;
        let dev_start = (n * self.train_frac).ceil() as u32;
        let test_start = (n * (self.train_frac + self.dev_frac)).ceil() as u32;
        SplitSpec::new(dev_start, test_start)
    }

    /// Sorted `key = value` rendering: the text that is hashed, stored in
    /// checkpoints, and re-parseable into an identical config.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(&format!("{key} = {}\n", self.value_of(key)));
        }
        out
    }

    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_text().as_bytes());
        crate::data::hex(&hasher.finalize())
    }

    fn value_of(&self, key: &str) -> String {
        let auto = |v: Option<u32>| v.map_or("auto".to_string(), |x| x.to_string());
        let pair = |(a, b): (usize, usize)| format!("{a},{b}");
        match key {
            "seed" => self.seed.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "span_iters" => self.span_iters.to_string(),
            "inner_steps" => self.inner_steps.to_string(),
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "gamma" => self.gamma.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "latent_dim" => self.latent_dim.to_string(),
            "encoder_hidden" => pair(self.encoder_hidden),
            "decoder_hidden" => pair(self.decoder_hidden),
            "adapt_steps" => self.adapt_steps.to_string(),
            "adapt_lr" => self.adapt_lr.to_string(),
            "std_floor" => self.std_floor.to_string(),
            "train_frac" => self.train_frac.to_string(),
            "dev_frac" => self.dev_frac.to_string(),
            "dev_start" => auto(self.dev_start),
            "test_start" => auto(self.test_start),
            "extractor" => self.extractor.as_str().to_string(),
            "extractor_hidden" => pair(self.extractor_hidden),
            "extractor_pretrain_epochs" => self.extractor_pretrain_epochs.to_string(),
            "adam_lr" => self.adam_lr.to_string(),
            "baseline_epochs" => self.baseline_epochs.to_string(),
            "no_tasks" | "no_encoder" | "no_latent" | "no_decoder" | "no_inner_meta"
            | "shared_decoder" => self.ablation.get(key).unwrap().to_string(),
            "synth_stocks" => self.synth.stocks.to_string(),
            "synth_days" => self.synth.days.to_string(),
            "synth_slots" => self.synth.slots.to_string(),
            "synth_base_log_volume" => self.synth.base_log_volume.to_string(),
            "synth_level_spread" => self.synth.level_spread.to_string(),
            "synth_u_shape_amp" => self.synth.u_shape_amp.to_string(),
            "synth_phase_amp" => self.synth.phase_amp.to_string(),
            "synth_dow_amp" => self.synth.dow_amp.to_string(),
            "synth_ar_rho_min" => self.synth.ar_rho_min.to_string(),
            "synth_ar_rho_max" => self.synth.ar_rho_max.to_string(),
            "synth_noise_sigma" => self.synth.noise_sigma.to_string(),
            "synth_small_cap_frac" => self.synth.small_cap_frac.to_string(),
            "synth_small_cap_noise_mult" => self.synth.small_cap_noise_mult.to_string(),
            "synth_price_sigma" => self.synth.price_sigma.to_string(),
            other => unreachable!("value_of called with unknown key {other}"),
        }
    }
}

/// Every recognized key, sorted.
pub const KEYS: [&str; 44] = [
    "adam_lr",
    "adapt_lr",
    "adapt_steps",
    "alpha",
    "baseline_epochs",
    "batch_size",
    "beta",
    "decoder_hidden",
    "dev_frac",
    "dev_start",
    "encoder_hidden",
    "epochs",
    "extractor",
    "extractor_hidden",
    "extractor_pretrain_epochs",
    "gamma",
    "inner_steps",
    "latent_dim",
    "learning_rate",
    "no_decoder",
    "no_encoder",
    "no_inner_meta",
    "no_latent",
    "no_tasks",
    "seed",
    "shared_decoder",
    "span_iters",
    "std_floor",
    "synth_ar_rho_max",
    "synth_ar_rho_min",
    "synth_base_log_volume",
    "synth_days",
    "synth_dow_amp",
    "synth_level_spread",
    "synth_noise_sigma",
    "synth_phase_amp",
    "synth_price_sigma",
    "synth_slots",
    "synth_small_cap_frac",
    "synth_small_cap_noise_mult",
    "synth_stocks",
    "synth_u_shape_amp",
    "test_start",
    "train_frac",
];

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}: expected key = value, got {line:?}", ln + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("bad value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::config(format!("{key} must be true or false, got {other:?}"))),
    }
}

fn parse_pair(key: &str, v: &str) -> Result<(usize, usize)> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| Error::config(format!("{key} expects \"a,b\", got {v:?}")))?;
    Ok((parse_num(key, a.trim())?, parse_num(key, b.trim())?))
}

fn parse_auto(key: &str, v: &str) -> Result<Option<u32>> {
    if v == "auto" {
        Ok(None)
    } else {
        Ok(Some(parse_num(key, v)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.seed = 99;
        cfg.alpha = 0.05;
        cfg.ablation.no_tasks = true;
        cfg.dev_start = Some(64);
        cfg.test_start = Some(72);
        cfg.extractor = ExtractorKind::Mlp;
        let text = cfg.canonical_text();
        let back = RunConfig::parse_text(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn covers_every_key_exactly_once() {
        // KEYS is sorted and value_of answers for each entry.
        let mut sorted = KEYS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, KEYS.to_vec());
        let cfg = RunConfig::default();
        for key in KEYS {
            let _ = cfg.value_of(key);
            let mut probe = RunConfig::default();
            probe.set(key, &cfg.value_of(key)).unwrap();
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.set("epochs", "abc").is_err());
        assert!(cfg.set("no_tasks", "yes").is_err());
        assert!(RunConfig::parse_text("epochs 5\n").is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::parse_text("# comment\n\nseed = 7\nepochs = 3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.epochs, 3);
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut cfg = RunConfig::default();
        cfg.beta = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.gamma = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.dev_start = Some(10);
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.train_frac = 0.95;
        cfg.dev_frac = 0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn split_resolution() {
        let cfg = RunConfig::default();
        // 80 days at 0.8/0.1.
        let spec = cfg.resolve_split(79).unwrap();
        assert_eq!(spec.dev_start, 64);
        assert_eq!(spec.test_start, 72);
        let mut cfg = RunConfig::default();
        cfg.dev_start = Some(30);
        cfg.test_start = Some(40);
        let spec = cfg.resolve_split(79).unwrap();
        assert_eq!((spec.dev_start, spec.test_start), (30, 40));
    }

    #[test]
    fn hash_changes_with_any_key() {
        let base = RunConfig::default().hash();
        let mut cfg = RunConfig::default();
        cfg.synth.noise_sigma = 0.31;
        assert_ne!(cfg.hash(), base);
    }

    #[test]
    fn env_overrides_apply() {
        // Serialized through a single test to avoid env races: set, load, unset.
        std::env::set_var("DPML_EPOCHS", "11");
        let cfg = RunConfig::load(None, &[]).unwrap();
        std::env::remove_var("DPML_EPOCHS");
        assert_eq!(cfg.epochs, 11);
        let cfg =
            RunConfig::load(None, &[("epochs".to_string(), "12".to_string())]).unwrap();
        assert_eq!(cfg.epochs, 12);
    }
}
