//! Discriminability-driven feature learning.
//!
//! Integrated-gradient attributions of both class scores decide which
//! feature coordinates are shared by the classes. Those coordinates are
//! unlearned toward a uniform prediction while a flipping loss sharpens the
//! remaining ones.

mod relearn;

use serde::{Deserialize, Serialize};

use crate::model::head::{cross_entropy, one_hot, Head, UNIFORM};
use crate::model::Gradients;

pub use relearn::{relearn_cycle, unlearn_step};

/// A differentiable per-class score `F_y(f)`.
pub trait ClassScore {
    fn dim(&self) -> usize;
    fn score(&self, f: &[f64], y: usize) -> f64;
    fn gradient(&self, f: &[f64], y: usize) -> Vec<f64>;
}

impl ClassScore for Head {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, f: &[f64], y: usize) -> f64 {
        self.logits(f)[y]
    }

    fn gradient(&self, f: &[f64], y: usize) -> Vec<f64> {
        self.logit_gradient(f, y)
    }
}

/// `F_y(f) = v_y . f + b_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weights: [Vec<f64>; 2],
    pub bias: [f64; 2],
}

impl ClassScore for LinearHead {
    fn dim(&self) -> usize {
        self.weights[0].len()
    }

    fn score(&self, f: &[f64], y: usize) -> f64 {
        self.weights[y].iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + self.bias[y]
    }

    fn gradient(&self, _f: &[f64], y: usize) -> Vec<f64> {
        self.weights[y].clone()
    }
}

/// Integrated gradients of class `y` from `baseline` to `f` with the
/// midpoint rule over `steps` points.
pub fn integrated_gradients<S: ClassScore + ?Sized>(
    f: &[f64],
    scorer: &S,
    y: usize,
    baseline: &[f64],
    steps: usize,
) -> Vec<f64> {
    let steps = steps.max(1);
    let delta: Vec<f64> = f.iter().zip(baseline).map(|(a, b)| a - b).collect();
    let mut avg = vec![0.0; f.len()];
    let mut point = vec![0.0; f.len()];
    for s in 0..steps {
        let beta = (s as f64 + 0.5) / steps as f64;
        for k in 0..f.len() {
            point[k] = baseline[k] + beta * delta[k];
        }
        for (a, g) in avg.iter_mut().zip(scorer.gradient(&point, y)) {
            *a += g;
        }
    }
    delta
        .iter()
        .zip(avg)
        .map(|(d, g)| d * g / steps as f64)
        .collect()
}

/// Attributions for both classes of the tanh head.
///
/// Along the straight path the hidden pre-activation is affine in the path
/// parameter, so the averaged gradient needs one `W1` projection per class.
pub fn head_attributions(head: &Head, f: &[f64], baseline: &[f64], steps: usize) -> [Vec<f64>; 2] {
    let steps = steps.max(1);
    let delta: Vec<f64> = f.iter().zip(baseline).map(|(a, b)| a - b).collect();
    let start = head.pre_activation(baseline);
    let end = head.pre_activation(f);
    let mut mean_slope = vec![0.0; head.hidden];
    for s in 0..steps {
        let beta = (s as f64 + 0.5) / steps as f64;
        for j in 0..head.hidden {
            let t = (start[j] + beta * (end[j] - start[j])).tanh();
            mean_slope[j] += 1.0 - t * t;
        }
    }
    mean_slope.iter_mut().for_each(|v| *v /= steps as f64);
    [0, 1].map(|y| {
        head.project_back(&mean_slope, y)
            .iter()
            .zip(&delta)
            .map(|(g, d)| g * d)
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub per_class: [Vec<f64>; 2],
    pub baseline: Vec<f64>,
    pub steps: usize,
}

impl AttributionVector {
    /// Zero-baseline attributions of `f` under `head`.
    pub fn compute(head: &Head, f: &[f64], steps: usize) -> Self {
        let baseline = vec![0.0; f.len()];
        Self {
            per_class: head_attributions(head, f, &baseline, steps),
            baseline,
            steps,
        }
    }

    pub fn mask(&self) -> DiscriminabilityMask {
        less_discriminative_mask(&self.per_class[0], &self.per_class[1])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminabilityMask {
    /// `true` where both classes attribute with the same strict sign.
    pub mask: Vec<bool>,
}

impl DiscriminabilityMask {
    pub fn as_f64(&self) -> Vec<f64> {
        self.mask.iter().map(|&m| f64::from(u8::from(m))).collect()
    }

    /// Indices with mask 0.
    pub fn discriminative(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| !m).map(|(i, _)| i)
    }
}

/// `m_k = 1` iff `A0_k * A1_k > 0`; a zero product gives 0.
pub fn less_discriminative_mask(a0: &[f64], a1: &[f64]) -> DiscriminabilityMask {
    DiscriminabilityMask {
        mask: a0.iter().zip(a1).map(|(x, y)| x * y > 0.0).collect(),
    }
}

/// Cross-entropy of the head on the negated feature against the true label.
pub fn loss_more(f: &[f64], label: u8, head: &Head) -> f64 {
    let neg: Vec<f64> = f.iter().map(|v| -v).collect();
    cross_entropy(head.logits(&neg), one_hot(label)).0
}

/// Cross-entropy of the head on the masked feature against the uniform
/// distribution.
pub fn loss_less(f: &[f64], mask: &DiscriminabilityMask, head: &Head) -> f64 {
    let masked = apply_mask(f, mask);
    cross_entropy(head.logits(&masked), UNIFORM).0
}

fn apply_mask(f: &[f64], mask: &DiscriminabilityMask) -> Vec<f64> {
    f.iter().zip(&mask.mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect()
}

/// [`loss_more`] with `scale * dL` accumulated into the head gradients;
/// returns the loss and `scale * dL/df`.
pub(crate) fn loss_more_backward(f: &[f64], label: u8, head: &Head, scale: f64, grads: &mut Gradients) -> (f64, Vec<f64>) {
    let neg: Vec<f64> = f.iter().map(|v| -v).collect();
    let trace = head.forward(&neg);
    let (loss, dl) = cross_entropy(trace.logits, one_hot(label));
    let dneg = head.backward(&trace, &neg, [dl[0] * scale, dl[1] * scale], &mut grads.head);
    (loss, dneg.into_iter().map(|v| -v).collect())
}

/// [`loss_less`] with gradients, as for [`loss_more_backward`].
pub(crate) fn loss_less_backward(
    f: &[f64],
    mask: &DiscriminabilityMask,
    head: &Head,
    scale: f64,
    grads: &mut Gradients,
) -> (f64, Vec<f64>) {
    let masked = apply_mask(f, mask);
    let trace = head.forward(&masked);
    let (loss, dl) = cross_entropy(trace.logits, UNIFORM);
    let dm = head.backward(&trace, &masked, [dl[0] * scale, dl[1] * scale], &mut grads.head);
    (loss, apply_mask(&dm, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn linear_head_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = LinearHead {
            weights: [random_vec(&mut rng, 6), random_vec(&mut rng, 6)],
            bias: [0.3, -0.2],
        };
        let f = random_vec(&mut rng, 6);
        for steps in [1, 3, 20] {
            let a = integrated_gradients(&f, &head, 1, &[0.0; 6], steps);
            for k in 0..6 {
                assert!((a[k] - f[k] * head.weights[1][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_path_zero_attribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = Head::init(5, 4, &mut rng);
        let f = random_vec(&mut rng, 5);
        let a = head_attributions(&head, &f, &f, 20);
        assert!(a.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn fast_path_matches_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let head = Head::init(8, 5, &mut rng);
            let f = random_vec(&mut rng, 8);
            let base = random_vec(&mut rng, 8);
            let fast = head_attributions(&head, &f, &base, 17);
            for y in 0..2 {
                let slow = integrated_gradients(&f, &head, y, &base, 17);
                for k in 0..8 {
                    assert!((fast[y][k] - slow[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn completeness_at_100_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let mut head = Head::init(8, 6, &mut rng);
            head.b1 = random_vec(&mut rng, 6);
            let f: Vec<f64> = random_vec(&mut rng, 8).iter().map(|v| v * 3.0).collect();
            let a = head_attributions(&head, &f, &[0.0; 8], 100);
            for y in 0..2 {
                let target = head.logits(&f)[y] - head.logits(&[0.0; 8])[y];
                let sum: f64 = a[y].iter().sum();
                assert!((sum - target).abs() <= 1e-3 * head.logits(&f)[y].abs().max(1.0));
            }
        }
    }

    #[test]
    fn mask_examples() {
        let m = less_discriminative_mask(&[0.5, -0.2, 0.0], &[0.3, 0.1, 0.4]);
        assert_eq!(m.mask, vec![true, false, false]);
        let a = [0.2, -1.0, 3.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!(less_discriminative_mask(&a, &neg).mask.iter().all(|m| !m));
        assert!(less_discriminative_mask(&a, &a).mask.iter().all(|m| *m));
        assert_eq!(m.discriminative().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn loss_more_hand_value() {
        // Head whose logits are (2, -2) at f and (-2, 2) at -f.
        let mut head = Head::zeros(1, 1);
        head.w1 = vec![100.0];
        head.w2 = vec![2.0, -2.0];
        let l = loss_more(&[1.0], 0, &head);
        let expect = -(1.0 / (1.0 + 4f64.exp())).ln();
        assert!((l - expect).abs() < 1e-9, "{l}");
        assert!((l - 4.0181).abs() < 1e-4);
    }

    #[test]
    fn loss_more_at_zero_equals_plain_ce() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = Head::init(4, 3, &mut rng);
        let plain = cross_entropy(head.logits(&[0.0; 4]), one_hot(1)).0;
        assert_eq!(loss_more(&[0.0; 4], 1, &head), plain);
    }

    #[test]
    fn loss_less_bounds() {
        let head = Head::zeros(3, 2);
        let mask = DiscriminabilityMask { mask: vec![false; 3] };
        assert!((loss_less(&[1.0, 2.0, 3.0], &mask, &head) - 2f64.ln()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let mut head = Head::init(3, 2, &mut rng);
            head.b2 = random_vec(&mut rng, 2);
            let mask = DiscriminabilityMask { mask: (0..3).map(|_| rng.gen_bool(0.5)).collect() };
            assert!(loss_less(&random_vec(&mut rng, 3), &mask, &head) >= 2f64.ln() - 1e-15);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let head = Head::init(5, 4, &mut rng);
        let f = random_vec(&mut rng, 5);
        let mask = DiscriminabilityMask { mask: vec![true, false, true, true, false] };
        let mut grads = Gradients {
            embedding: crate::model::SparseRows::new(5),
            head: Head::zeros(5, 4),
            gate: crate::enrich::GateParams::new(5, crate::enrich::GateMode::Diagonal, &mut rng).zeros_like(),
            gate_used: false,
        };
        let (_, dmore) = loss_more_backward(&f, 1, &head, 1.0, &mut grads);
        let (_, dless) = loss_less_backward(&f, &mask, &head, 1.0, &mut grads);
        for k in 0..5 {
            let mut p = f.clone();
            p[k] += 1e-6;
            let mut m = f.clone();
            m[k] -= 1e-6;
            let num_more = (loss_more(&p, 1, &head) - loss_more(&m, 1, &head)) / 2e-6;
            let num_less = (loss_less(&p, &mask, &head) - loss_less(&m, &mask, &head)) / 2e-6;
            assert!((num_more - dmore[k]).abs() < 1e-7);
            assert!((num_less - dless[k]).abs() < 1e-7);
        }
    }

    proptest::proptest! {
        #[test]
        fn mask_matches_elementwise_oracle(
            a0 in proptest::collection::vec(-2.0f64..2.0, 1..16),
            a1 in proptest::collection::vec(-2.0f64..2.0, 16),
            scale in 0.001f64..1000.0,
        ) {
            let a1 = &a1[..a0.len()];
            let m = less_discriminative_mask(&a0, a1);
            for k in 0..a0.len() {
                let same = (a0[k] > 0.0 && a1[k] > 0.0) || (a0[k] < 0.0 && a1[k] < 0.0);
                proptest::prop_assert_eq!(m.mask[k], same);
            }
            let s0: Vec<f64> = a0.iter().map(|v| v * scale).collect();
            let s1: Vec<f64> = a1.iter().map(|v| v * scale).collect();
            proptest::prop_assert_eq!(less_discriminative_mask(&s0, &s1), m);
        }

        #[test]
        fn residual_shrinks_with_steps(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let head = Head::init(6, 5, &mut rng);
            let f: Vec<f64> = random_vec(&mut rng, 6).iter().map(|v| v * 2.0).collect();
            let zero = [0.0; 6];
            let target = head.logits(&f)[0] - head.logits(&zero)[0];
            let residual = |steps| (head_attributions(&head, &f, &zero, steps)[0].iter().sum::<f64>() - target).abs();
            let r: Vec<f64> = [5, 10, 20, 50, 100].iter().map(|&s| residual(s)).collect();
            for w in r.windows(2) {
                proptest::prop_assert!(w[1] <= w[0] + 1e-12);
            }
            proptest::prop_assert!(r[4] <= 1e-3 * head.logits(&f)[0].abs().max(1.0));
        }
    }
}
