//! Training steps, early-stopped fitting and evaluation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{backward_feature, forward_feature, Fusion, Prepared};
use super::head::{cross_entropy, one_hot, softmax, NUM_CLASSES};
use super::optim::{AdamW, AdamWConfig};
use super::params::{DetectorParams, Gradients};
use super::ModelError;
use crate::discrim::{loss_more_backward, relearn_cycle};
use crate::replay::{align_with_grad, total_loss, LossReport, LossWeights, MemoryBuffer};

/// Which parts of the method are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Components {
    pub aux: bool,
    pub coop: bool,
    pub more: bool,
    pub less: bool,
    pub mem: bool,
    pub align: bool,
}

impl Components {
    pub const FULL: Self = Self {
        aux: true,
        coop: true,
        more: true,
        less: true,
        mem: true,
        align: true,
    };

    /// Plain sequential fine-tuning.
    pub const STREAM: Self = Self {
        aux: false,
        coop: false,
        more: false,
        less: false,
        mem: false,
        align: false,
    };

    pub fn fusion(&self) -> Fusion {
        match (self.aux, self.coop) {
            (false, _) => Fusion::Plain,
            (true, false) => Fusion::Average,
            (true, true) => Fusion::Gated,
        }
    }

    pub fn without(mut self, ablation: Ablation) -> Self {
        match ablation {
            Ablation::Aux => self.aux = false,
            Ablation::Coop => self.coop = false,
            Ablation::Disc => {
                self.more = false;
                self.less = false;
            }
            Ablation::More => self.more = false,
            Ablation::Less => self.less = false,
            Ablation::Mem => self.mem = false,
            Ablation::Align => self.align = false,
        }
        self
    }
}

/// Single-component ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ablation {
    #[serde(rename = "wo_aux")]
    Aux,
    #[serde(rename = "wo_coop")]
    Coop,
    #[serde(rename = "wo_disc")]
    Disc,
    #[serde(rename = "wo_more")]
    More,
    #[serde(rename = "wo_less")]
    Less,
    #[serde(rename = "wo_mem")]
    Mem,
    #[serde(rename = "wo_align")]
    Align,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::Aux,
        Ablation::Coop,
        Ablation::Disc,
        Ablation::More,
        Ablation::Less,
        Ablation::Mem,
        Ablation::Align,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Aux => "wo_aux",
            Ablation::Coop => "wo_coop",
            Ablation::Disc => "wo_disc",
            Ablation::More => "wo_more",
            Ablation::Less => "wo_less",
            Ablation::Mem => "wo_mem",
            Ablation::Align => "wo_align",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '/'], "_");
        let key = key.trim_start_matches("w_o_").trim_start_matches("wo_");
        Ablation::ALL
            .into_iter()
            .find(|a| &a.name()[3..] == key)
            .ok_or_else(|| ModelError::Config(format!("unknown ablation `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Quadrature points for attributions.
    pub ig_steps: usize,
    /// Unlearn/relearn alternations per batch.
    pub relearn_cycles: usize,
    /// Fresh samples per memory sample in a batch.
    pub memory_ratio: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamWConfig::default(),
            batch_size: 32,
            max_epochs: 20,
            patience: 5,
            seed: 0,
            weights: LossWeights::default(),
            ig_steps: 20,
            relearn_cycles: 3,
            memory_ratio: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if !(self.optimizer.learning_rate > 0.0 && self.optimizer.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weights.lambda >= 0.0 && self.weights.gamma >= 0.0) {
            return bad("lambda and gamma must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.ig_steps == 0 {
            return bad("ig_steps must be at least 1");
        }
        if self.memory_ratio == 0 {
            return bad("memory_ratio must be at least 1");
        }
        Ok(())
    }

    /// Terms that contribute under `components`; a zero weight disables
    /// its terms entirely.
    pub fn active(&self, components: &Components, memory: &MemoryBuffer) -> ActiveTerms {
        ActiveTerms {
            fusion: components.fusion(),
            more: components.more && self.weights.lambda > 0.0,
            less: components.less && self.weights.lambda > 0.0 && self.relearn_cycles > 0,
            align: components.align && components.mem && self.weights.gamma > 0.0 && !memory.is_empty(),
            mem: components.mem && !memory.is_empty(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveTerms {
    pub fusion: Fusion,
    pub more: bool,
    pub less: bool,
    pub align: bool,
    pub mem: bool,
}

fn check(term: &'static str, value: f64, step: u64) -> Result<f64, ModelError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ModelError::NonFinite { term, value, step })
    }
}

/// One update on `cls + lambda more + gamma align`; returns the three
/// unweighted terms.
pub fn classification_step(
    params: &mut DetectorParams,
    opt: &mut AdamW,
    batch: &[&Prepared],
    memory: &MemoryBuffer,
    config: &TrainConfig,
    active: &ActiveTerms,
) -> Result<(f64, f64, f64), ModelError> {
    let mut grads = Gradients::zeros_like(params);
    let scale = 1.0 / batch.len().max(1) as f64;
    let lambda = config.weights.lambda;
    let (mut cls, mut more, mut align) = (0.0, 0.0, 0.0);
    for sample in batch {
        let tape = forward_feature(params, sample, active.fusion);
        let trace = params.head.forward(&tape.f);
        let (l, dl) = cross_entropy(trace.logits, one_hot(sample.label));
        cls += l * scale;
        let mut df = params.head.backward(&trace, &tape.f, [dl[0] * scale, dl[1] * scale], &mut grads.head);
        if active.more {
            let (lm, dm) = loss_more_backward(&tape.f, sample.label, &params.head, lambda * scale, &mut grads);
            more += lm * scale;
            df.iter_mut().zip(dm).for_each(|(a, b)| *a += b);
        }
        backward_feature(params, sample, &tape, active.fusion, &df, &mut grads);
    }
    if active.align {
        let tapes: Vec<_> = memory
            .entries
            .iter()
            .map(|e| forward_feature(params, &e.sample, active.fusion))
            .collect();
        let domains: Vec<usize> = memory.entries.iter().map(|e| e.domain).collect();
        let old: Vec<&[f64]> = memory.entries.iter().map(|e| e.f_old.as_slice()).collect();
        let cur: Vec<Vec<f64>> = tapes.iter().map(|t| t.f.clone()).collect();
        let (la, dcur) = align_with_grad(&domains, &old, &cur);
        align = la;
        let gamma = config.weights.gamma;
        for ((entry, tape), d) in memory.entries.iter().zip(&tapes).zip(dcur) {
            let d: Vec<f64> = d.into_iter().map(|v| v * gamma).collect();
            backward_feature(params, &entry.sample, tape, active.fusion, &d, &mut grads);
        }
    }
    let step = opt.step + 1;
    check("cls", cls, step)?;
    check("more", more, step)?;
    check("align", align, step)?;
    opt.apply(params, &grads);
    Ok((cls, more, align))
}

/// One batch of training; with the unlearning term active this is a full
/// relearn cycle.
pub fn train_step(
    params: &mut DetectorParams,
    opt: &mut AdamW,
    batch: &[&Prepared],
    memory: &MemoryBuffer,
    config: &TrainConfig,
    components: &Components,
) -> Result<LossReport, ModelError> {
    let active = config.active(components, memory);
    let cycles = if active.less { config.relearn_cycles } else { 0 };
    relearn_cycle(params, opt, batch, memory, config, &active, cycles)
}

pub(crate) fn report(cls: f64, more: f64, less: f64, align: f64, weights: LossWeights, step: u64) -> Result<LossReport, ModelError> {
    total_loss(cls, more, less, align, weights).map_err(|e| match e {
        crate::replay::ReplayError::NonFinite { term, value } => ModelError::NonFinite { term, value, step },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_valid_accuracy: f64,
    pub steps: u64,
    /// Mean itemized loss per epoch.
    pub epoch_losses: Vec<LossReport>,
}

/// Trains on `train` with early stopping on `valid` accuracy and restores
/// the best parameters. Memory samples are mixed into every batch.
pub fn fit(
    params: &mut DetectorParams,
    train: &[Prepared],
    valid: &[Prepared],
    memory: &MemoryBuffer,
    config: &TrainConfig,
    components: &Components,
    rng: &mut ChaCha8Rng,
) -> Result<FitReport, ModelError> {
    config.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    let mut opt = AdamW::new(params, config.optimizer);
    let active = config.active(components, memory);
    let fusion = active.fusion;
    let mut best = (f64::NEG_INFINITY, 0usize, None::<DetectorParams>);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut epochs = 0;
    for epoch in 0..config.max_epochs {
        epochs = epoch + 1;
        order.shuffle(rng);
        let mut sum = LossReport::default();
        let mut batches = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut batch: Vec<&Prepared> = chunk.iter().map(|&i| &train[i]).collect();
            if active.mem {
                let n_mem = chunk.len().div_ceil(config.memory_ratio);
                for _ in 0..n_mem {
                    let j = rng.gen_range(0..memory.len());
                    batch.push(&memory.entries[j].sample);
                }
            }
            let r = train_step(params, &mut opt, &batch, memory, config, components)?;
            sum.cls += r.cls;
            sum.more += r.more;
            sum.less += r.less;
            sum.align += r.align;
            sum.total += r.total;
            batches += 1.0;
        }
        epoch_losses.push(LossReport {
            cls: sum.cls / batches,
            more: sum.more / batches,
            less: sum.less / batches,
            align: sum.align / batches,
            total: sum.total / batches,
        });
        if valid.is_empty() {
            continue;
        }
        let acc = evaluate(params, valid, fusion)?;
        log::debug!("epoch {epochs}: loss {:.4} valid {:.4}", sum.total / batches, acc);
        if acc > best.0 {
            best = (acc, epochs, Some(params.clone()));
        } else if epochs - best.1 >= config.patience {
            break;
        }
    }
    if let Some(snapshot) = best.2 {
        *params = snapshot;
    }
    Ok(FitReport {
        epochs,
        best_epoch: if valid.is_empty() { epochs } else { best.1 },
        best_valid_accuracy: best.0.max(0.0),
        steps: opt.step,
        epoch_losses,
    })
}

/// Class probabilities for a feature.
pub fn classify(feature: &[f64], params: &DetectorParams) -> [f64; NUM_CLASSES] {
    softmax(params.head.logits(feature))
}

pub fn predict(params: &DetectorParams, sample: &Prepared, fusion: Fusion) -> u8 {
    let f = forward_feature(params, sample, fusion).f;
    let l = params.head.logits(&f);
    u8::from(l[1] > l[0])
}

/// Fraction of correct argmax predictions.
pub fn evaluate(params: &DetectorParams, samples: &[Prepared], fusion: Fusion) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptySplit("evaluation"));
    }
    let correct = samples
        .iter()
        .filter(|s| predict(params, s, fusion) == s.label)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabeledText;
    use crate::model::{EncoderConfig, ModelConfig};
    use rand::SeedableRng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig { buckets: 1 << 10, dim: 16, ..Default::default() },
            hidden: 8,
            ..Default::default()
        }
    }

    fn toy(config: &ModelConfig) -> Vec<Prepared> {
        let texts = [
            ("you idiot", 1),
            ("what a moron", 1),
            ("shut up loser", 1),
            ("you are stupid", 1),
            ("have a nice day", 0),
            ("thanks my friend", 0),
            ("lovely weather", 0),
            ("great work team", 0),
        ];
        texts
            .iter()
            .enumerate()
            .map(|(i, (t, l))| Prepared::new(&LabeledText::new(format!("s{i}"), *t, *l), &config.encoder))
            .collect()
    }

    #[test]
    fn overfits_separable_batch() {
        let config = small_config();
        let mut params = DetectorParams::init(config, 0);
        let data = toy(&config);
        let batch: Vec<&Prepared> = data.iter().collect();
        let tc = TrainConfig::default();
        let mut opt = AdamW::new(&params, tc.optimizer);
        let memory = MemoryBuffer::new(0);
        let mut losses = Vec::new();
        for _ in 0..200 {
            losses.push(train_step(&mut params, &mut opt, &batch, &memory, &tc, &Components::STREAM).unwrap().cls);
        }
        assert_eq!(evaluate(&params, &data, Fusion::Plain).unwrap(), 1.0);
        for w in losses[..10].windows(2) {
            assert!(w[1] < w[0], "{losses:?}");
        }
    }

    #[test]
    fn zero_weights_reproduce_cls_only() {
        let config = small_config();
        let data = toy(&config);
        let batch: Vec<&Prepared> = data.iter().collect();
        let memory = MemoryBuffer::new(0);
        let run = |components: Components, tc: TrainConfig| {
            let mut params = DetectorParams::init(config, 3);
            let mut opt = AdamW::new(&params, tc.optimizer);
            for _ in 0..20 {
                train_step(&mut params, &mut opt, &batch, &memory, &tc, &components).unwrap();
            }
            params
        };
        let zero = TrainConfig {
            weights: LossWeights { lambda: 0.0, gamma: 0.0 },
            ..Default::default()
        };
        let plain = Components { aux: false, coop: false, ..Components::STREAM };
        let all_terms = Components { aux: false, coop: false, ..Components::FULL };
        assert_eq!(run(all_terms, zero), run(plain, TrainConfig::default()));
    }

    #[test]
    fn evaluate_counts_hand_confusion() {
        let config = small_config();
        let params = DetectorParams::init(config, 9);
        let data = toy(&config);
        let manual = data.iter().filter(|s| predict(&params, s, Fusion::Plain) == s.label).count();
        assert_eq!(evaluate(&params, &data, Fusion::Plain).unwrap(), manual as f64 / 8.0);
        assert!(matches!(evaluate(&params, &[], Fusion::Plain), Err(ModelError::EmptySplit(_))));
    }

    #[test]
    fn fit_is_reproducible_and_restores_best() {
        let config = small_config();
        let data = toy(&config);
        let tc = TrainConfig { max_epochs: 8, batch_size: 4, ..Default::default() };
        let go = || {
            let mut params = DetectorParams::init(config, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let r = fit(&mut params, &data, &data, &MemoryBuffer::new(0), &tc, &Components::FULL, &mut rng).unwrap();
            (params, r)
        };
        let (p1, r1) = go();
        let (p2, r2) = go();
        assert_eq!(p1, p2);
        assert_eq!(r1, r2);
        assert_eq!(evaluate(&p1, &data, Fusion::Gated).unwrap(), r1.best_valid_accuracy);
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert_eq!("w/o-disc".parse::<Ablation>().unwrap(), Ablation::Disc);
        assert!("wo_everything".parse::<Ablation>().is_err());
        let c = Components::FULL.without(Ablation::Disc);
        assert!(!c.more && !c.less && c.aux && c.align);
    }
}
