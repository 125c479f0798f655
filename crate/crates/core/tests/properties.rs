use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use contiguard::discrim::AttributionVector;
use contiguard::harness::desk::{build_desk_dataset, DeskSetup};
use contiguard::harness::PreparedDataset;
use contiguard::model::head::{cross_entropy, one_hot};
use contiguard::model::{
    backward_feature, embed, feature, fit, forward_feature, Components, DetectorParams, EncoderConfig, Fusion,
    Gradients, ModelConfig, Prepared, TrainConfig,
};
use contiguard::perturb::{Lexicons, PerturbationKind};
use contiguard::replay::MemoryBuffer;

const H: f64 = 1e-5;

fn small_params(seed: u64) -> DetectorParams {
    let config = ModelConfig {
        encoder: EncoderConfig {
            dim: 5,
            buckets: 16,
            ..Default::default()
        },
        hidden: 4,
        embed_init: 0.6,
        ..Default::default()
    };
    DetectorParams::init(config, seed)
}

fn mixed_loss(params: &DetectorParams, table: &[f64], sample: &Prepared, alpha: f64) -> f64 {
    let d = params.config.dim();
    let x_p = embed(&sample.text, table, d);
    let x_a = embed(sample.aux.as_deref().unwrap(), table, d);
    let f: Vec<f64> = x_p.iter().zip(&x_a).map(|(p, a)| alpha * p + (1.0 - alpha) * a).collect();
    cross_entropy(params.head.logits(&f), one_hot(sample.label)).0
}

fn directional(table: &[f64], buckets: &[u32], d: usize, direction: &[f64]) -> f64 {
    embed(buckets, table, d).iter().zip(direction).map(|(x, g)| x * g).sum()
}

fn fd(table: &[f64], idx: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut t = table.to_vec();
    t[idx] += H;
    let plus = f(&t);
    t[idx] -= 2.0 * H;
    let minus = f(&t);
    (plus - minus) / (2.0 * H)
}

#[test]
fn linear_mix_gradient_splits_by_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..10 {
        let params = small_params(seed);
        let d = params.config.dim();
        let sample = Prepared {
            id: "s".into(),
            label: rng.gen_range(0..2),
            text: (0..4).map(|_| rng.gen_range(0..8)).collect(),
            aux: Some((0..3).map(|_| rng.gen_range(4..12)).collect()),
        };
        let aux = sample.aux.clone().unwrap();
        for alpha in [0.0, 0.5, 1.0] {
            let x_p = embed(&sample.text, &params.embedding, d);
            let x_a = embed(&aux, &params.embedding, d);
            let f: Vec<f64> = x_p.iter().zip(&x_a).map(|(p, a)| alpha * p + (1.0 - alpha) * a).collect();
            let trace = params.head.forward(&f);
            let (_, dl) = cross_entropy(trace.logits, one_hot(sample.label));
            let df = params.head.backward(&trace, &f, dl, &mut Gradients::zeros_like(&params).head);

            for idx in 0..params.embedding.len() {
                let total = fd(&params.embedding, idx, |t| mixed_loss(&params, t, &sample, alpha));
                let via_p = fd(&params.embedding, idx, |t| directional(t, &sample.text, d, &df));
                let via_a = fd(&params.embedding, idx, |t| directional(t, &aux, d, &df));
                let split = alpha * via_p + (1.0 - alpha) * via_a;
                assert!(
                    (total - split).abs() <= 1e-6 * total.abs().max(split.abs()).max(1.0),
                    "seed {seed} alpha {alpha} entry {idx}: {total} vs {split}"
                );
            }
        }
    }
}

#[test]
fn average_fusion_backward_is_the_half_mix() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for seed in 0..10 {
        let params = small_params(seed);
        let sample = Prepared {
            id: "s".into(),
            label: rng.gen_range(0..2),
            text: (0..5).map(|_| rng.gen_range(0..16)).collect(),
            aux: Some((0..4).map(|_| rng.gen_range(0..16)).collect()),
        };
        let tape = forward_feature(&params, &sample, Fusion::Average);
        let trace = params.head.forward(&tape.f);
        let (_, dl) = cross_entropy(trace.logits, one_hot(sample.label));
        let mut grads = Gradients::zeros_like(&params);
        let df = params.head.backward(&trace, &tape.f, dl, &mut grads.head);
        backward_feature(&params, &sample, &tape, Fusion::Average, &df, &mut grads);
        let d = params.config.dim();
        for idx in 0..params.embedding.len() {
            let numeric = fd(&params.embedding, idx, |t| mixed_loss(&params, t, &sample, 0.5));
            let analytic = grads.embedding.get((idx / d) as u32).map_or(0.0, |r| r[idx % d]);
            assert!(
                (numeric - analytic).abs() <= 1e-3 * numeric.abs().max(analytic.abs()).max(1e-5),
                "seed {seed} entry {idx}: {analytic} vs {numeric}"
            );
        }
    }
}

#[test]
fn discriminative_coordinates_separate_the_classes_more() {
    let setup = DeskSetup {
        per_class: 300,
        per_kind_quota: 60,
        kinds: vec![PerturbationKind::Swap],
        ..Default::default()
    };
    let mut model = ModelConfig::default();
    model.encoder.dim = 16;
    model.encoder.buckets = 1 << 12;
    model.hidden = 8;
    let (dataset, _) = build_desk_dataset(&setup, &Lexicons::builtin(), model).unwrap();
    let data = PreparedDataset::new(&dataset, &model.encoder);
    let domain = &data.domains[&PerturbationKind::Swap];
    let mut params = DetectorParams::init(model, 0);
    let config = TrainConfig {
        max_epochs: 2,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    fit(&mut params, &domain.train, &domain.valid, &MemoryBuffer::new(0), &config, &Components::STREAM, &mut rng).unwrap();

    let (mut shared, mut distinct) = ((0.0, 0usize), (0.0, 0usize));
    for s in domain.train.iter().chain(&domain.test) {
        let f = feature(&params, s, Fusion::Plain);
        let attr = AttributionVector::compute(&params.head, &f, 20);
        for (k, &m) in attr.mask().mask.iter().enumerate() {
            let gap = (attr.per_class[0][k] - attr.per_class[1][k]).abs();
            let slot = if m { &mut shared } else { &mut distinct };
            slot.0 += gap;
            slot.1 += 1;
        }
    }
    assert!(shared.1 > 0 && distinct.1 > 0, "both mask values occur: {shared:?} {distinct:?}");
    let (shared, distinct) = (shared.0 / shared.1 as f64, distinct.0 / distinct.1 as f64);
    assert!(distinct > shared, "mask 0 mean gap {distinct} vs mask 1 mean gap {shared}");
}
