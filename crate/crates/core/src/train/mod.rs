//! Training: the single-shot embedding stage and the hybrid
//! cross-entropy + REINFORCE sequence stage.

pub mod reinforce;

pub use reinforce::{
    compute_rewards, cumulative, reinforce_activation_grads, score_factor, strict_argmax, Baseline, Episode,
};

use serde::{Deserialize, Serialize};

use crate::data::{batch_iterator, PreparedDataset, Split, Window};
use crate::embedding::{cross_entropy, Embedding, FrameEmbedding};
use crate::error::{Error, Result};
use crate::numeric::{axpy, sgd_step, HasParameters, Mode, Parameter, RngStream, SgdConfig};
use crate::sequence::SequenceModel;

/// Whether the embedding is trained together with the sequence layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Embedding frozen (lr multiplier 0) while the sequence layers train.
    Staged,
    EndToEnd,
}

/// Which posterior the attention reward scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    /// The LSTM posterior of step `t` alone.
    Frame,
    /// The running fusion `sum_{tau <= t} w_tau c_tau` of posteriors under
    /// the sampled attention weights. Before any frame is selected the
    /// fusion is all zeros, a tie, and scores 0.
    FusedSamples,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub embed_lr: f64,
    pub embed_momentum: f64,
    pub embed_epochs: usize,
    pub embed_batch_size: usize,
    /// Epochs without a lower training loss before the embedding lr drops.
    pub embed_plateau_patience: usize,
    pub embed_plateau_factor: f64,
    pub momentum: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub lr_decay_epochs: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub rho: usize,
    pub reinforce_weight: f64,
    pub baseline_lr: f64,
    pub reward: RewardSource,
    pub regime: Regime,
    pub rta_lr_multiplier: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embed_lr: 3e-4,
            embed_momentum: 0.5,
            embed_epochs: 30,
            embed_batch_size: 50,
            embed_plateau_patience: 3,
            embed_plateau_factor: 0.1,
            momentum: 0.9,
            lr_start: 0.01,
            lr_end: 1e-4,
            lr_decay_epochs: 200,
            max_epochs: 250,
            weight_decay: 2e-4,
            batch_size: 50,
            rho: 3,
            reinforce_weight: 1.0,
            baseline_lr: 0.05,
            reward: RewardSource::FusedSamples,
            regime: Regime::Staged,
            rta_lr_multiplier: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, key: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("train.{key}"), format!("{v} must be > 0")))
            }
        };
        let non_negative = |v: f64, key: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("train.{key}"), format!("{v} must be >= 0")))
            }
        };
        let momentum = |v: f64, key: &str| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("train.{key}"), format!("{v} outside [0, 1)")))
            }
        };
        let at_least_one = |v: usize, key: &str| {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::config(format!("train.{key}"), "must be >= 1"))
            }
        };
        positive(self.embed_lr, "embed_lr")?;
        momentum(self.embed_momentum, "embed_momentum")?;
        at_least_one(self.embed_batch_size, "embed_batch_size")?;
        positive(self.embed_plateau_factor, "embed_plateau_factor")?;
        momentum(self.momentum, "momentum")?;
        positive(self.lr_start, "lr_start")?;
        positive(self.lr_end, "lr_end")?;
        at_least_one(self.lr_decay_epochs, "lr_decay_epochs")?;
        non_negative(self.weight_decay, "weight_decay")?;
        at_least_one(self.batch_size, "batch_size")?;
        at_least_one(self.rho, "rho")?;
        non_negative(self.reinforce_weight, "reinforce_weight")?;
        non_negative(self.baseline_lr, "baseline_lr")?;
        non_negative(self.rta_lr_multiplier, "rta_lr_multiplier")?;
        Ok(())
    }
}

/// Linear decay from `lr_start` at epoch 0 to `lr_end` at `lr_decay_epochs`,
/// constant afterwards.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let frac = epoch.min(cfg.lr_decay_epochs) as f64 / cfg.lr_decay_epochs as f64;
    cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub cross_entropy: f64,
    pub mean_reward: Option<f64>,
    pub base_lr: f64,
    pub train_accuracy: f64,
}

fn diverged(context: String, loss: f64) -> Error {
    Error::Diverged {
        context,
        detail: format!("loss is {loss}"),
    }
}

/// Train the embedding and its classifier head as a single-frame classifier.
/// A head for `data.classes` identities is attached when missing.
pub fn train_embedding(
    emb: &mut FrameEmbedding,
    data: &PreparedDataset,
    cfg: &TrainConfig,
    rng: &mut RngStream,
    mut log: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if emb.head().is_none_or(|h| h.classes() != data.classes) {
        emb.adapt_head(data.classes, rng)?;
    }
    let frames: Vec<(usize, usize)> = data
        .split_indices(Split::Train)
        .into_iter()
        .flat_map(|s| (0..data.sequences[s].frames.len()).map(move |f| (s, f)))
        .collect();
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no training frames".into()));
    }
    let mut lr = cfg.embed_lr;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut records = Vec::with_capacity(cfg.embed_epochs);
    for epoch in 0..cfg.embed_epochs {
        let mut order = frames.clone();
        rng.shuffle(&mut order);
        let (mut total, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.embed_batch_size) {
            emb.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &(s, f) in batch {
                let seq = &data.sequences[s];
                let (posterior, trace, head_trace) = emb.classify(&seq.frames[f], Mode::Train, rng)?;
                let (loss, mut d) = cross_entropy(&posterior, seq.label);
                if !loss.is_finite() {
                    return Err(diverged(format!("embedding epoch {epoch}"), loss));
                }
                total += loss;
                correct += usize::from(strict_argmax(&posterior) == Some(seq.label));
                d.iter_mut().for_each(|v| *v *= scale);
                let head = emb.head_mut().expect("head attached above");
                let dg = head.backward_logits(&head_trace, &d)?;
                emb.backward(&trace, &dg)?;
            }
            sgd_step(
                emb.parameters_mut(),
                &SgdConfig {
                    base_lr: lr,
                    momentum: cfg.embed_momentum,
                    weight_decay: cfg.weight_decay,
                },
            )?;
        }
        let mean = total / frames.len() as f64;
        let record = EpochRecord {
            stage: "embedding".into(),
            epoch,
            cross_entropy: mean,
            mean_reward: None,
            base_lr: lr,
            train_accuracy: correct as f64 / frames.len() as f64,
        };
        log(&record);
        records.push(record);
        if mean < best * (1.0 - 1e-4) {
            best = mean;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.embed_plateau_patience.max(1) {
                lr *= cfg.embed_plateau_factor;
                stale = 0;
                log::info!("embedding lr reduced to {lr:e} at epoch {epoch}");
            }
        }
    }
    Ok(records)
}

/// Evaluation-mode embeddings of every frame, indexed `[sequence][frame]`.
pub fn embed_dataset(emb: &FrameEmbedding, data: &PreparedDataset) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut rng = RngStream::new(0);
    data.sequences
        .iter()
        .map(|s| {
            s.frames
                .iter()
                .map(|f| emb.embed(f, Mode::Eval, &mut rng).map(|(Embedding(v), _)| v))
                .collect()
        })
        .collect()
}

/// Aggregate statistics of one hybrid update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    /// Mean over valid steps.
    pub cross_entropy: f64,
    /// Mean raw reward over valid steps.
    pub mean_reward: f64,
    pub correct_steps: usize,
    pub valid_steps: usize,
    pub baseline: Vec<f64>,
}

/// Rewards of one rollout; see [`RewardSource`].
fn rollout_rewards(posteriors: &[Vec<f64>], samples: &[bool], valid: &[bool], truth: usize, source: RewardSource) -> Vec<f64> {
    let n = posteriors.first().map_or(0, Vec::len);
    let mut fused = vec![0.0; n];
    posteriors
        .iter()
        .enumerate()
        .map(|(t, c)| {
            if !valid[t] {
                return 0.0;
            }
            let hit = match source {
                RewardSource::Frame => strict_argmax(c) == Some(truth),
                RewardSource::FusedSamples => {
                    if samples[t] {
                        axpy(1.0, c, &mut fused);
                    }
                    strict_argmax(&fused) == Some(truth)
                }
            };
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// One hybrid update over a batch of windows: cross-entropy on every valid
/// step for the LSTM, classifier (and embedding in end-to-end mode), plus
/// `reinforce_weight` times the REINFORCE gradient for the attention unit
/// (and embedding), a baseline step and an SGD step at `base_lr`.
///
/// `cache` holds precomputed embeddings (staged regime); without it the
/// embedding runs in training mode and receives gradients.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_train_step(
    emb: &mut FrameEmbedding,
    model: &mut SequenceModel,
    baseline: &mut Baseline,
    data: &PreparedDataset,
    cache: Option<&[Vec<Vec<f64>>]>,
    batch: &[Window],
    cfg: &TrainConfig,
    base_lr: f64,
    rng: &mut RngStream,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    emb.zero_grads();
    model.zero_grads();
    let valid_steps: usize = batch.iter().map(|w| w.valid.iter().filter(|&&v| v).count()).sum();
    let ce_scale = 1.0 / valid_steps.max(1) as f64;

    let mut episodes = Vec::with_capacity(batch.len());
    let mut rollouts = Vec::with_capacity(batch.len());
    let (mut ce_total, mut correct) = (0.0, 0usize);
    for window in batch {
        let seq = &data.sequences[window.sequence];
        let (gs, traces) = match cache {
            Some(c) => (window.frames.iter().map(|&f| c[window.sequence][f].clone()).collect::<Vec<_>>(), None),
            None => {
                let mut gs = Vec::with_capacity(window.frames.len());
                let mut traces = Vec::with_capacity(window.frames.len());
                for &f in &window.frames {
                    let (Embedding(g), trace) = emb.embed(&seq.frames[f], Mode::Train, rng)?;
                    gs.push(g);
                    traces.push(trace);
                }
                (gs, Some(traces))
            }
        };
        let refs: Vec<&[f64]> = gs.iter().map(Vec::as_slice).collect();
        let trace = model.forward_window(&refs, Mode::Train, rng)?;

        let mut dlogits = Vec::with_capacity(refs.len());
        for (t, head) in trace.heads.iter().enumerate() {
            if !window.valid[t] {
                dlogits.push(None);
                continue;
            }
            let (loss, mut d) = cross_entropy(&head.posterior, seq.label);
            if !loss.is_finite() {
                return Err(diverged(
                    format!("sequence {} step {t}", window.sequence),
                    loss,
                ));
            }
            ce_total += loss;
            correct += usize::from(strict_argmax(&head.posterior) == Some(seq.label));
            d.iter_mut().for_each(|v| *v *= ce_scale);
            dlogits.push(Some(d));
        }

        let posteriors: Vec<Vec<f64>> = trace.heads.iter().map(|h| h.posterior.clone()).collect();
        let samples: Vec<bool> = trace.attention.iter().map(|a| a.sample.unwrap_or(true)).collect();
        let rewards = rollout_rewards(&posteriors, &samples, &window.valid, seq.label, cfg.reward);
        episodes.push(Episode {
            p: trace.attention.iter().map(|a| a.p).collect(),
            w: samples,
            returns: cumulative(&rewards),
            rewards,
            valid: window.valid.clone(),
        });
        rollouts.push((gs, traces, trace, dlogits));
    }

    if baseline.values().len() < cfg.rho {
        *baseline = Baseline::from_values(
            (0..cfg.rho).map(|t| baseline.value(t)).collect(),
        );
    }
    let activation_grads = reinforce_activation_grads(&episodes, baseline)?;
    for (((gs, traces, trace, dlogits), da), window) in rollouts.into_iter().zip(&activation_grads).zip(batch) {
        let mut dgs = model.backward_window(&trace, &dlogits)?;
        for (t, g) in gs.iter().enumerate() {
            let dact = cfg.reinforce_weight * da[t];
            if dact != 0.0 {
                let dg = model.rta.backward(g, dact);
                axpy(1.0, &dg, &mut dgs[t]);
            }
        }
        if let Some(traces) = traces {
            for (t, trace) in traces.iter().enumerate() {
                if window.valid[t] || dgs[t].iter().any(|&v| v != 0.0) {
                    emb.backward(trace, &dgs[t])?;
                }
            }
        }
    }
    baseline.update(&episodes, cfg.baseline_lr);

    let sgd = SgdConfig {
        base_lr,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    };
    let mut params: Vec<&mut Parameter> = model.parameters_mut();
    if cache.is_none() {
        params.extend(emb.parameters_mut());
    }
    sgd_step(params, &sgd)?;

    let reward_total: f64 = episodes.iter().flat_map(|e| e.rewards.iter()).sum();
    Ok(StepStats {
        cross_entropy: ce_total * ce_scale,
        mean_reward: reward_total * ce_scale,
        correct_steps: correct,
        valid_steps,
        baseline: baseline.values().to_vec(),
    })
}

/// Result of the sequence stage.
#[derive(Clone, Debug)]
pub struct SequenceTraining {
    pub records: Vec<EpochRecord>,
    pub baseline: Baseline,
}

/// Train the LSTM, classifier and attention unit on top of `emb` for
/// `cfg.max_epochs` epochs following [`lr_schedule`]. In the staged regime
/// the embedding's multipliers are set to 0 and its outputs are cached.
pub fn train_sequence(
    emb: &mut FrameEmbedding,
    model: &mut SequenceModel,
    data: &PreparedDataset,
    cfg: &TrainConfig,
    rng: &mut RngStream,
    mut log: impl FnMut(&EpochRecord),
) -> Result<SequenceTraining> {
    cfg.validate()?;
    if model.classes() != data.classes {
        return Err(Error::InvalidArgument(format!(
            "sequence model has {} classes, dataset has {}",
            model.classes(),
            data.classes
        )));
    }
    let lengths = data.split_lengths(Split::Train);
    if lengths.is_empty() {
        return Err(Error::InvalidArgument("no training sequences".into()));
    }
    model.rta.weight.lr_multiplier = cfg.rta_lr_multiplier;
    model.rta.bias.lr_multiplier = cfg.rta_lr_multiplier;
    let cache = match cfg.regime {
        Regime::Staged => {
            for p in emb.parameters_mut() {
                p.lr_multiplier = 0.0;
            }
            Some(embed_dataset(emb, data)?)
        }
        Regime::EndToEnd => None,
    };
    let mut baseline = Baseline::new(cfg.rho);
    let mut records = Vec::with_capacity(cfg.max_epochs);
    for epoch in 0..cfg.max_epochs {
        let base_lr = lr_schedule(epoch, cfg);
        let (mut ce, mut reward, mut correct, mut steps) = (0.0, 0.0, 0usize, 0usize);
        for batch in batch_iterator(&lengths, cfg.rho, cfg.batch_size, rng)? {
            let stats = hybrid_train_step(
                emb,
                model,
                &mut baseline,
                data,
                cache.as_deref(),
                &batch,
                cfg,
                base_lr,
                rng,
            )?;
            ce += stats.cross_entropy * stats.valid_steps as f64;
            reward += stats.mean_reward * stats.valid_steps as f64;
            correct += stats.correct_steps;
            steps += stats.valid_steps;
        }
        let n = steps.max(1) as f64;
        let record = EpochRecord {
            stage: "sequence".into(),
            epoch,
            cross_entropy: ce / n,
            mean_reward: Some(reward / n),
            base_lr,
            train_accuracy: correct as f64 / n,
        };
        log(&record);
        records.push(record);
    }
    Ok(SequenceTraining { records, baseline })
}
