//! Continual-learning orchestration: domain sequencing, per-moment
//! evaluation, orders, ablations, memory sweeps and retention analysis.

pub mod desk;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, Split};
use crate::discrim::AttributionVector;
use crate::model::{
    evaluate, feature, fit, Components, DetectorParams, EncoderConfig, FitReport, Fusion, ModelConfig, ModelError,
    Prepared, TrainConfig,
};
use crate::perturb::PerturbationKind;
use crate::replay::{select_memories, MemoryBuffer};
use crate::util::mix64;

pub use report::{Report, RetentionRecord};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no {split:?} samples for domain {kind}")]
    MissingDomain { kind: PerturbationKind, split: Split },
    #[error("data error: {0}")]
    Data(String),
    #[error("empty domain order")]
    EmptyOrder,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Memory samples kept per finished domain.
    pub memory_k: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            memory_k: 8,
        }
    }
}

/// One domain's splits reduced to n-gram buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainData {
    pub train: Vec<Prepared>,
    pub valid: Vec<Prepared>,
    pub test: Vec<Prepared>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub domains: BTreeMap<PerturbationKind, DomainData>,
}

impl PreparedDataset {
    pub fn new(dataset: &Dataset, encoder: &EncoderConfig) -> Self {
        let domains = dataset
            .kinds()
            .into_iter()
            .map(|kind| {
                let split = |s| Prepared::batch(&dataset.select(kind, s), encoder);
                (
                    kind,
                    DomainData {
                        train: split(Split::Train),
                        valid: split(Split::Valid),
                        test: split(Split::Test),
                    },
                )
            })
            .collect();
        Self { domains }
    }

    fn domain(&self, kind: PerturbationKind) -> Result<&DomainData, HarnessError> {
        let d = self
            .domains
            .get(&kind)
            .ok_or(HarnessError::MissingDomain { kind, split: Split::Train })?;
        for (split, v) in [(Split::Train, &d.train), (Split::Test, &d.test)] {
            if v.is_empty() {
                return Err(HarnessError::MissingDomain { kind, split });
            }
        }
        Ok(d)
    }
}

/// Accuracies after training on the `moment`-th domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentLog {
    pub method: String,
    pub order_id: String,
    pub seed: u64,
    /// 1-based.
    pub moment: usize,
    pub trained_on: PerturbationKind,
    /// Test accuracy per seen domain, in order of appearance.
    pub accuracies: Vec<(PerturbationKind, f64)>,
    pub average: f64,
    pub components: Components,
    pub epochs: usize,
    pub best_epoch: usize,
    pub wall_clock_secs: f64,
}

impl MomentLog {
    /// Equality of everything except timing.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.wall_clock_secs = other.wall_clock_secs;
        &a == other
    }
}

/// Feature indices judged discriminative (mask 0) on a majority of a
/// domain's test samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalFeatureSet {
    pub domain: PerturbationKind,
    pub moment: usize,
    pub features: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub logs: Vec<MomentLog>,
    pub critical: Vec<CriticalFeatureSet>,
    pub params: DetectorParams,
    pub memory: MemoryBuffer,
}

impl RunResult {
    pub fn final_average(&self) -> f64 {
        self.logs.last().map_or(0.0, |l| l.average)
    }

    pub fn critical_set(&self, domain: PerturbationKind, moment: usize) -> Option<&BTreeSet<usize>> {
        self.critical
            .iter()
            .find(|c| c.domain == domain && c.moment == moment)
            .map(|c| &c.features)
    }

    /// Retention of the first domain's critical features at the final moment.
    pub fn first_domain_retention(&self) -> Option<f64> {
        let first = self.logs.first()?.trained_on;
        let last = self.logs.len();
        Some(retention_rate(self.critical_set(first, 1)?, self.critical_set(first, last)?))
    }

    /// Retention of every domain from its own moment to each later one.
    pub fn retention_records(&self) -> Vec<RetentionRecord> {
        let Some(head) = self.logs.first() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for (i, log) in self.logs.iter().enumerate() {
            let then = i + 1;
            let Some(c_then) = self.critical_set(log.trained_on, then) else { continue };
            for now in then..=self.logs.len() {
                if let Some(c_now) = self.critical_set(log.trained_on, now) {
                    out.push(RetentionRecord {
                        method: head.method.clone(),
                        order_id: head.order_id.clone(),
                        seed: head.seed,
                        domain: log.trained_on,
                        moment_then: then,
                        moment_now: now,
                        rate: retention_rate(c_then, c_now),
                    });
                }
            }
        }
        out
    }
}

/// `|then ∩ now| / |then|`, 1 for an empty `then`.
pub fn retention_rate(then: &BTreeSet<usize>, now: &BTreeSet<usize>) -> f64 {
    if then.is_empty() {
        return 1.0;
    }
    then.intersection(now).count() as f64 / then.len() as f64
}

/// Majority-vote critical features of `samples`.
pub fn critical_features(params: &DetectorParams, samples: &[Prepared], fusion: Fusion, steps: usize) -> BTreeSet<usize> {
    let d = params.config.dim();
    let mut votes = vec![0usize; d];
    for s in samples {
        let f = feature(params, s, fusion);
        for k in AttributionVector::compute(&params.head, &f, steps).mask().discriminative() {
            votes[k] += 1;
        }
    }
    (0..d).filter(|&k| 2 * votes[k] > samples.len()).collect()
}

fn moment_rng(seed: u64, moment: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(moment as u64)))
}

/// Label for a component set: `full`, `stream`, `wo_<flag>` or a list.
pub fn method_name(components: &Components) -> String {
    if *components == Components::FULL {
        return "full".into();
    }
    if *components == Components::STREAM {
        return "stream".into();
    }
    let off: Vec<&str> = [
        ("aux", components.aux),
        ("coop", components.coop),
        ("more", components.more),
        ("less", components.less),
        ("mem", components.mem),
        ("align", components.align),
    ]
    .iter()
    .filter(|(_, on)| !on)
    .map(|(n, _)| *n)
    .collect();
    if off == ["more", "less"] {
        return "wo_disc".into();
    }
    format!("wo_{}", off.join("_"))
}

/// Trains through `order` one domain at a time, evaluating every seen
/// domain after each moment.
pub fn run_sequence(
    data: &PreparedDataset,
    order: &[PerturbationKind],
    order_id: &str,
    config: &ExperimentConfig,
    components: &Components,
) -> Result<RunResult, HarnessError> {
    run_sequence_named(data, order, order_id, config, components, &method_name(components))
}

pub fn run_sequence_named(
    data: &PreparedDataset,
    order: &[PerturbationKind],
    order_id: &str,
    config: &ExperimentConfig,
    components: &Components,
    method: &str,
) -> Result<RunResult, HarnessError> {
    if order.is_empty() {
        return Err(HarnessError::EmptyOrder);
    }
    let domains: Vec<&DomainData> = order.iter().map(|&k| data.domain(k)).collect::<Result<_, _>>()?;
    config.train.validate()?;

    let seed = config.train.seed;
    let fusion = components.fusion();
    let k = if components.mem { config.memory_k } else { 0 };
    let mut params = DetectorParams::init(config.model, seed);
    let mut memory = MemoryBuffer::new(k);
    let mut logs = Vec::with_capacity(order.len());
    let mut critical = Vec::new();

    for (i, (&kind, domain)) in order.iter().zip(&domains).enumerate() {
        let started = Instant::now();
        let moment = i + 1;
        let mut rng = moment_rng(seed, moment);
        let report: FitReport = fit(&mut params, &domain.train, &domain.valid, &memory, &config.train, components, &mut rng)?;
        if k > 0 {
            let feats: Vec<Vec<f64>> = domain.train.iter().map(|s| feature(&params, s, fusion)).collect();
            memory.extend_domain(select_memories(i, kind.name(), &domain.train, &feats, k));
        }
        let mut accuracies = Vec::with_capacity(moment);
        for (&seen, d) in order[..moment].iter().zip(&domains) {
            accuracies.push((seen, evaluate(&params, &d.test, fusion)?));
            critical.push(CriticalFeatureSet {
                domain: seen,
                moment,
                features: critical_features(&params, &d.test, fusion, config.train.ig_steps),
            });
        }
        let average = accuracies.iter().map(|a| a.1).sum::<f64>() / moment as f64;
        log::info!("{method} {order_id} T{moment} ({kind}): average {:.4}", average);
        logs.push(MomentLog {
            method: method.to_string(),
            order_id: order_id.to_string(),
            seed,
            moment,
            trained_on: kind,
            accuracies,
            average,
            components: *components,
            epochs: report.epochs,
            best_epoch: report.best_epoch,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        });
    }
    Ok(RunResult {
        logs,
        critical,
        params,
        memory,
    })
}

/// Trains once on the union of all train splits and evaluates each domain.
pub fn run_joint(
    data: &PreparedDataset,
    kinds: &[PerturbationKind],
    config: &ExperimentConfig,
    components: &Components,
) -> Result<Vec<MomentLog>, HarnessError> {
    if kinds.is_empty() {
        return Err(HarnessError::EmptyOrder);
    }
    let domains: Vec<&DomainData> = kinds.iter().map(|&k| data.domain(k)).collect::<Result<_, _>>()?;
    let started = Instant::now();
    let train: Vec<Prepared> = domains.iter().flat_map(|d| d.train.iter().cloned()).collect();
    let valid: Vec<Prepared> = domains.iter().flat_map(|d| d.valid.iter().cloned()).collect();
    let joint = Components {
        mem: false,
        align: false,
        ..*components
    };
    let mut params = DetectorParams::init(config.model, config.train.seed);
    let mut rng = moment_rng(config.train.seed, 0);
    let report = fit(&mut params, &train, &valid, &MemoryBuffer::new(0), &config.train, &joint, &mut rng)?;
    let fusion = joint.fusion();
    let accuracies = kinds
        .iter()
        .zip(&domains)
        .map(|(&k, d)| Ok((k, evaluate(&params, &d.test, fusion)?)))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let average = accuracies.iter().map(|a| a.1).sum::<f64>() / kinds.len() as f64;
    Ok(vec![MomentLog {
        method: "joint".into(),
        order_id: "joint".into(),
        seed: config.train.seed,
        moment: kinds.len(),
        trained_on: *kinds.last().expect("non-empty kinds"),
        accuracies,
        average,
        components: joint,
        epochs: report.epochs,
        best_epoch: report.best_epoch,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }])
}

/// One independent sequential run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub method: String,
    pub order_id: String,
    pub order: Vec<PerturbationKind>,
    pub config: ExperimentConfig,
    pub components: Components,
}

impl RunSpec {
    pub fn new(order_id: &str, order: &[PerturbationKind], config: ExperimentConfig, components: Components) -> Self {
        Self {
            method: method_name(&components),
            order_id: order_id.to_string(),
            order: order.to_vec(),
            config,
            components,
        }
    }
}

/// Runs `specs` on up to `workers` threads. Results keep the input order
/// and do not depend on the worker count.
pub fn run_many(data: &PreparedDataset, specs: &[RunSpec], workers: usize) -> Result<Vec<RunResult>, HarnessError> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunResult, HarnessError>>>> = specs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, specs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = specs.get(i) else { break };
                let out = run_sequence_named(data, &spec.order, &spec.order_id, &spec.config, &spec.components, &spec.method);
                *slots[i].lock().expect("result slot") = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every spec ran"))
        .collect()
}

/// One sequential run per memory size under a shared seed.
pub fn sweep_memory(
    data: &PreparedDataset,
    ks: &[usize],
    order: &[PerturbationKind],
    config: &ExperimentConfig,
    components: &Components,
) -> Result<Vec<(usize, Vec<MomentLog>)>, HarnessError> {
    ks.iter()
        .map(|&k| {
            let cfg = ExperimentConfig { memory_k: k, ..*config };
            let result = run_sequence_named(data, order, "sweep", &cfg, components, &format!("k={k}"))?;
            Ok((k, result.logs))
        })
        .collect()
}

/// Moment, method and retention tables.
pub fn report(logs: &[MomentLog], retention: &[RetentionRecord]) -> Report {
    report::build(logs, retention)
}

/// Identity, reverse and two seeded shuffles of `kinds`.
pub fn default_orders(kinds: &[PerturbationKind], seed: u64) -> Vec<(String, Vec<PerturbationKind>)> {
    let mut out = vec![("identity".to_string(), kinds.to_vec())];
    out.push(("reverse".into(), kinds.iter().rev().copied().collect()));
    for j in 0..2u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed.wrapping_add(j + 1)));
        let mut o = kinds.to_vec();
        o.shuffle(&mut rng);
        out.push((format!("shuffle{}", j + 1), o));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn retention_examples() {
        assert_eq!(retention_rate(&set(&[1, 2]), &set(&[1, 2])), 1.0);
        assert_eq!(retention_rate(&set(&[1, 2]), &set(&[3])), 0.0);
        assert_eq!(retention_rate(&set(&[1, 2, 3, 4]), &set(&[2, 3, 4, 9])), 0.75);
        assert_eq!(retention_rate(&set(&[]), &set(&[3])), 1.0);
    }

    proptest::proptest! {
        #[test]
        fn retention_monotone_under_refinement(
            then in proptest::collection::btree_set(0usize..32, 0..16),
            now in proptest::collection::btree_set(0usize..32, 0..16),
            drop in proptest::collection::btree_set(0usize..32, 0..8),
        ) {
            let smaller: BTreeSet<usize> = now.difference(&drop).copied().collect();
            let r = retention_rate(&then, &now);
            proptest::prop_assert!((0.0..=1.0).contains(&r));
            proptest::prop_assert!(retention_rate(&then, &smaller) <= r);
        }
    }

    #[test]
    fn default_orders_are_permutations() {
        let kinds = PerturbationKind::ALL.to_vec();
        let orders = default_orders(&kinds, 0);
        assert_eq!(orders.len(), 4);
        for (_, o) in &orders {
            let mut s = o.clone();
            s.sort();
            let mut k = kinds.clone();
            k.sort();
            assert_eq!(s, k);
        }
        assert_eq!(orders, default_orders(&kinds, 0));
    }

    fn tiny() -> (PreparedDataset, ExperimentConfig) {
        let setup = desk::DeskSetup {
            per_class: 200,
            per_kind_quota: 30,
            kinds: vec![PerturbationKind::Swap, PerturbationKind::Homoglyph, PerturbationKind::Insert],
            ..Default::default()
        };
        let mut config = ExperimentConfig::default();
        config.model.encoder.dim = 8;
        config.model.encoder.buckets = 1024;
        config.model.hidden = 6;
        config.train.max_epochs = 3;
        config.memory_k = 2;
        let (data, _) = desk::build_desk_dataset(&setup, &crate::perturb::Lexicons::builtin(), config.model).unwrap();
        (PreparedDataset::new(&data, &config.model.encoder), config)
    }

    #[test]
    fn single_moment_is_plain_fine_tuning() {
        let (data, config) = tiny();
        let kind = PerturbationKind::Swap;
        let run = run_sequence(&data, &[kind], "one", &config, &Components::STREAM).unwrap();
        let d = &data.domains[&kind];
        let mut params = DetectorParams::init(config.model, config.train.seed);
        let mut rng = moment_rng(config.train.seed, 1);
        fit(&mut params, &d.train, &d.valid, &MemoryBuffer::new(0), &config.train, &Components::STREAM, &mut rng).unwrap();
        assert_eq!(run.params, params);
        assert_eq!(run.logs[0].average, evaluate(&params, &d.test, Fusion::Plain).unwrap());
    }

    #[test]
    fn evaluation_covers_seen_domains_only() {
        let (data, config) = tiny();
        let order = [PerturbationKind::Insert, PerturbationKind::Swap, PerturbationKind::Homoglyph];
        let run = run_sequence(&data, &order, "o", &config, &Components::FULL).unwrap();
        for (i, log) in run.logs.iter().enumerate() {
            let seen: Vec<PerturbationKind> = log.accuracies.iter().map(|a| a.0).collect();
            assert_eq!(seen, order[..=i]);
            assert!(log.accuracies.iter().all(|a| (0.0..=1.0).contains(&a.1)));
        }
        assert_eq!(run.memory.len(), 2 * 3);
        assert_eq!(run.retention_records().len(), 3 + 2 + 1);
    }

    #[test]
    fn missing_domain_fails_before_training() {
        let (data, config) = tiny();
        let err = run_sequence(&data, &[PerturbationKind::Swap, PerturbationKind::Abbreviation], "o", &config, &Components::FULL)
            .unwrap_err();
        assert!(matches!(err, HarnessError::MissingDomain { kind: PerturbationKind::Abbreviation, .. }));
        assert!(matches!(run_sequence(&data, &[], "o", &config, &Components::FULL), Err(HarnessError::EmptyOrder)));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (data, config) = tiny();
        let order = [PerturbationKind::Swap, PerturbationKind::Insert];
        let specs: Vec<RunSpec> = [Components::FULL, Components::STREAM, Components::FULL.without(crate::model::Ablation::Aux)]
            .iter()
            .map(|c| RunSpec::new("o", &order, config, *c))
            .collect();
        let serial = run_many(&data, &specs, 1).unwrap();
        let parallel = run_many(&data, &specs, 3).unwrap();
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(a.params, b.params);
            assert!(a.logs.iter().zip(&b.logs).all(|(x, y)| x.same_outcome(y)));
        }
        assert_eq!(serial[1].logs[0].method, "stream");
    }

    #[test]
    fn joint_evaluates_every_domain() {
        let (data, config) = tiny();
        let kinds = [PerturbationKind::Swap, PerturbationKind::Insert];
        let logs = run_joint(&data, &kinds, &config, &Components::FULL).unwrap();
        assert_eq!(logs.len(), 1);
        assert_eq!(logs[0].accuracies.len(), 2);
        assert!(!logs[0].components.mem);
    }

    #[test]
    fn method_names() {
        use crate::model::Ablation;
        assert_eq!(method_name(&Components::FULL), "full");
        assert_eq!(method_name(&Components::STREAM), "stream");
        for a in Ablation::ALL {
            assert_eq!(method_name(&Components::FULL.without(a)), a.name());
        }
        let c = Components::FULL.without(Ablation::Disc).without(Ablation::Align);
        assert_eq!(method_name(&c), "wo_more_less_align");
    }
}
