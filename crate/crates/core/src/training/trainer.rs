//! Two-stage training loop.
//!
//! Stage 1 trains on the spectral loss alone with a slow plateau decay;
//! stage 2 switches to the full loss and restarts from a smaller rate with a
//! faster decay.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::SlowFastConfig;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::model::ModelWeights;
use crate::persistence::save_model;

use super::backprop::{backward_terms, forward_trace, TrainingPair};
use super::corpus::{make_corpus, EVAL_SNRS_DB, TRAIN_SNRS_DB};
use super::loss::{sisnr, LossWeights, StftParams, StftWindow};
use super::optim::{Adam, AdamParams, Plateau};

/// Learning-rate rule and loss of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub loss: LossWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: SlowFastConfig,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_pairs: usize,
    pub eval_pairs: usize,
    pub train_snrs: Vec<f64>,
    pub eval_snrs: Vec<f64>,
    /// First epoch (1-based) of stage 2; larger than `epochs` disables it.
    pub stage2_epoch: usize,
    pub stage1: Stage,
    pub stage2: Stage,
    pub stft: StftParams,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Where to write the last finite weights if training diverges.
    pub dump_path: Option<PathBuf>,
}

impl TrainConfig {
    /// Defaults for a desk-scale run of `model`.
    pub fn new(model: SlowFastConfig) -> Self {
        let epochs = 20;
        Self {
            model,
            seed: 0,
            epochs,
            batch_size: 8,
            train_pairs: 200,
            eval_pairs: 16,
            train_snrs: TRAIN_SNRS_DB.to_vec(),
            eval_snrs: EVAL_SNRS_DB.to_vec(),
            stage2_epoch: default_stage2_epoch(epochs),
            stage1: Stage {
                lr: 1e-3,
                factor: 0.9,
                patience: 2,
                loss: LossWeights {
                    spec_mse: LossWeights::FULL.spec_mse,
                    sisnr: 0.0,
                },
            },
            stage2: Stage {
                lr: 1e-4,
                factor: 0.75,
                patience: 1,
                loss: LossWeights::FULL,
            },
            stft: StftParams::default(),
            grad_clip: None,
            dump_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.train_pairs == 0 {
            return Err(Error::Config(
                "epochs, batch_size and train_pairs must be positive".into(),
            ));
        }
        if self.train_snrs.is_empty() || (self.eval_pairs > 0 && self.eval_snrs.is_empty()) {
            return Err(Error::Config("SNR grids must not be empty".into()));
        }
        for st in [&self.stage1, &self.stage2] {
            Plateau::new(st.lr, st.factor, st.patience)?;
            st.loss.validate()?;
        }
        self.stft.validate()?;
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!(
                    "grad_clip must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }

    /// Model keys plus the training keys below; anything absent keeps its
    /// default.
    ///
    /// `seed`, `epochs`, `batch_size`, `train_pairs`, `eval_pairs`,
    /// `train_snrs`, `eval_snrs` (comma-separated dB), `stage2_epoch`,
    /// `stage{1,2}_{lr,factor,patience,lambda_spec_mse,lambda_sisnr}`,
    /// `stft_size`, `stft_hop`, `grad_clip`, `dump_path`.
    pub fn from_kv(m: &KvMap) -> Result<Self> {
        let mut t = Self::new(SlowFastConfig::from_kv(m)?);
        macro_rules! opt {
            ($field:expr, $key:literal) => {
                if let Some(v) = m.parse_value($key)? {
                    $field = v;
                }
            };
        }
        opt!(t.seed, "seed");
        opt!(t.epochs, "epochs");
        t.stage2_epoch = default_stage2_epoch(t.epochs);
        opt!(t.batch_size, "batch_size");
        opt!(t.train_pairs, "train_pairs");
        opt!(t.eval_pairs, "eval_pairs");
        opt!(t.stage2_epoch, "stage2_epoch");
        for (st, p) in [(&mut t.stage1, "stage1"), (&mut t.stage2, "stage2")] {
            let key = |k: &str| format!("{p}_{k}");
            if let Some(v) = m.parse_value(&key("lr"))? {
                st.lr = v;
            }
            if let Some(v) = m.parse_value(&key("factor"))? {
                st.factor = v;
            }
            if let Some(v) = m.parse_value(&key("patience"))? {
                st.patience = v;
            }
            if let Some(v) = m.parse_value(&key("lambda_spec_mse"))? {
                st.loss.spec_mse = v;
            }
            if let Some(v) = m.parse_value(&key("lambda_sisnr"))? {
                st.loss.sisnr = v;
            }
        }
        if let Some(v) = m.get("train_snrs") {
            t.train_snrs = parse_list(v, "train_snrs")?;
        }
        if let Some(v) = m.get("eval_snrs") {
            t.eval_snrs = parse_list(v, "eval_snrs")?;
        }
        let size = m.parse_value("stft_size")?.unwrap_or(t.stft.fft_size);
        let hop = m.parse_value("stft_hop")?.unwrap_or(t.stft.hop);
        t.stft = StftParams {
            fft_size: size,
            hop,
            window: StftWindow::Hann,
        };
        t.grad_clip = m.parse_value("grad_clip")?;
        t.dump_path = m.get("dump_path").map(PathBuf::from);
        t.validate()?;
        Ok(t)
    }

    pub fn stage(&self, epoch: usize) -> &Stage {
        if epoch >= self.stage2_epoch {
            &self.stage2
        } else {
            &self.stage1
        }
    }
}

/// Mirrors a 200 + 30 epoch split: stage 2 covers the last 13% of epochs.
fn default_stage2_epoch(epochs: usize) -> usize {
    (epochs * 200).div_ceil(230) + 1
}

fn parse_list(v: &str, key: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("key `{key}`: {s:?}: {e}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training objective of the stage in effect.
    pub loss: f64,
    /// Mean unweighted spectral loss on the training batches, comparable
    /// across stages. NaN when the stage gives it zero weight.
    pub spec_mse: f64,
    pub eval_sisnr: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub log: Vec<EpochRecord>,
    /// Mean SI-SNR of the unprocessed eval mixtures.
    pub eval_input_sisnr: f64,
}

impl TrainOutcome {
    /// `epoch,loss,spec_mse,eval_sisnr,lr` with a header row.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,loss,spec_mse,eval_sisnr,lr\n");
        for r in &self.log {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.4},{:.3e}",
                r.epoch, r.loss, r.spec_mse, r.eval_sisnr, r.lr
            );
        }
        s
    }
}

/// Mean SI-SNR (dB) of the enhanced noisy signals against the clean ones.
pub fn mean_sisnr(pairs: &[TrainingPair], w: &ModelWeights, cfg: &SlowFastConfig) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(f64::NAN);
    }
    let mut sum = 0.0;
    for p in pairs {
        sum += sisnr(forward_trace(&p.noisy, w, cfg)?.output(), &p.clean)?;
    }
    Ok(sum / pairs.len() as f64)
}

pub fn input_sisnr(pairs: &[TrainingPair]) -> Result<f64> {
    let mut sum = 0.0;
    for p in pairs {
        sum += sisnr(&p.noisy, &p.clean)?;
    }
    Ok(sum / pairs.len().max(1) as f64)
}

fn grad_norm(g: &ModelWeights) -> f64 {
    g.arrays()
        .iter()
        .flat_map(|a| a.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn diverged(cfg: &TrainConfig, w: &ModelWeights, epoch: usize, reason: String) -> Error {
    let mut reason = reason;
    if let Some(path) = &cfg.dump_path {
        match save_model(w, &cfg.model, path) {
            Ok(()) => reason.push_str(&format!(
                "; last finite weights saved to {}",
                path.display()
            )),
            Err(e) => reason.push_str(&format!("; state dump to {} failed: {e}", path.display())),
        }
    }
    Error::Diverged { epoch, reason }
}

/// Trains on synthesized pairs drawn from `cfg.seed`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_synthetic(cfg, |_| {})
}

/// [`train`] with a per-epoch callback.
pub fn train_synthetic(
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set: Vec<TrainingPair> = make_corpus(cfg.seed, cfg.train_pairs, &cfg.train_snrs)?
        .into_iter()
        .map(|it| it.pair)
        .collect();
    let eval_set: Vec<TrainingPair> = if cfg.eval_pairs == 0 {
        Vec::new()
    } else {
        make_corpus(cfg.seed ^ 0xE7A1, cfg.eval_pairs, &cfg.eval_snrs)?
            .into_iter()
            .map(|it| it.pair)
            .collect()
    };
    train_on(cfg, &train_set, &eval_set, on_epoch)
}

/// Trains on the given pairs from a seeded initialization. `on_epoch` sees
/// every record as it is made.
pub fn train_on(
    cfg: &TrainConfig,
    train_set: &[TrainingPair],
    eval_set: &[TrainingPair],
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let init = ModelWeights::init(&cfg.model, cfg.seed);
    train_from(cfg, init, train_set, eval_set, on_epoch)
}

/// Continues training from `weights`.
pub fn train_from(
    cfg: &TrainConfig,
    mut weights: ModelWeights,
    train_set: &[TrainingPair],
    eval_set: &[TrainingPair],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let model = &cfg.model;
    weights.check(model)?;
    let mut adam = Adam::new(&weights, AdamParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut plateau = Plateau::new(cfg.stage1.lr, cfg.stage1.factor, cfg.stage1.patience)?;
    let eval_input_sisnr = if eval_set.is_empty() {
        f64::NAN
    } else {
        input_sisnr(eval_set)?
    };
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        if epoch == cfg.stage2_epoch {
            plateau = Plateau::new(cfg.stage2.lr, cfg.stage2.factor, cfg.stage2.patience)?;
        }
        let stage = cfg.stage(epoch);
        let lr = plateau.lr();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut spec_sum = 0.0;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainingPair> =
                batch_idx.iter().map(|&k| train_set[k].clone()).collect();
            let (terms, mut grad) = backward_terms(&batch, &weights, model, &stage.loss, &cfg.stft)
                .map_err(|e| diverged(cfg, &weights, epoch, e.to_string()))?;
            let loss = terms.total;
            if !loss.is_finite() {
                return Err(diverged(cfg, &weights, epoch, format!("loss = {loss}")));
            }
            if let Some(max) = cfg.grad_clip {
                let n = grad_norm(&grad);
                if n > max {
                    let s = max / n;
                    for a in grad.arrays_mut() {
                        a.data.iter_mut().for_each(|v| *v *= s);
                    }
                }
            }
            let before = weights.clone();
            adam.step(&mut weights, &grad, lr)?;
            if weights.check(model).is_err() {
                return Err(diverged(
                    cfg,
                    &before,
                    epoch,
                    "non-finite weights after update".into(),
                ));
            }
            loss_sum += loss * batch.len() as f64;
            spec_sum += terms.spec_mse * batch.len() as f64;
        }
        let n = train_set.len() as f64;
        let loss = loss_sum / n;
        let record = EpochRecord {
            epoch,
            loss,
            spec_mse: spec_sum / n,
            eval_sisnr: mean_sisnr(eval_set, &weights, model)?,
            lr,
        };
        plateau.observe(loss);
        on_epoch(&record);
        log.push(record);
    }
    weights.round_to_f32();
    Ok(TrainOutcome {
        weights,
        log,
        eval_input_sisnr,
    })
}
