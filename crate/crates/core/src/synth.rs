//! Seeded synthetic softmax datasets and random model states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, Example};
use crate::objective::{log_sum_exp, Formulation, ModelState};
use crate::sparse::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    /// Standard deviation of the generating weights.
    pub weight_scale: f64,
    /// When set, each class gets a mean direction and `x` is drawn around the
    /// mean of its label with this strength before normalization, so the
    /// label's own logit tends to dominate.
    pub class_mean_strength: Option<f64>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n: usize, k: usize, d: usize, seed: u64) -> Self {
        Self { n, k, d, weight_scale: 1.0, class_mean_strength: None, seed }
    }
}

fn normal_vec<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|a| *a /= norm);
    }
    v
}

/// Draws unit-norm features and softmax labels from random true weights.
/// Every class is guaranteed at least one example.
pub fn softmax_dataset(cfg: SynthConfig) -> Dataset {
    assert!(cfg.k >= 2 && cfg.n >= cfg.k && cfg.d >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w_true: Vec<Vec<f64>> = (0..cfg.k).map(|_| normal_vec(&mut rng, cfg.d, cfg.weight_scale)).collect();
    let means: Vec<Vec<f64>> = match cfg.class_mean_strength {
        Some(_) => (0..cfg.k).map(|_| unit(normal_vec(&mut rng, cfg.d, 1.0))).collect(),
        None => Vec::new(),
    };
    let mut examples = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let x = match cfg.class_mean_strength {
            Some(strength) => {
                // Label first, then features around that label's mean.
                let label = if i < cfg.k { i } else { rng.gen_range(0..cfg.k) };
                let noise = normal_vec(&mut rng, cfg.d, 1.0);
                let x: Vec<f64> = noise.iter().zip(&means[label]).map(|(z, m)| z + strength * m).collect();
                examples.push(Example { label, x: SparseVector::dense(&unit(x)) });
                continue;
            }
            None => unit(normal_vec(&mut rng, cfg.d, 1.0)),
        };
        let logits: Vec<f64> = w_true.iter().map(|w| w.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
        let label = if i < cfg.k {
            i
        } else {
            let lse = log_sum_exp(&logits);
            let r: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = cfg.k - 1;
            for (c, l) in logits.iter().enumerate() {
                acc += (l - lse).exp();
                if r < acc {
                    pick = c;
                    break;
                }
            }
            pick
        };
        examples.push(Example { label, x: SparseVector::dense(&x) });
    }
    Dataset::new("synthetic", examples, cfg.k, cfg.d)
}

/// Random `W` with entries of the given scale and `u_i` uniform in `u_range`.
pub fn random_state<R: Rng>(
    rng: &mut R,
    ds: &Dataset,
    w_scale: f64,
    u_range: (f64, f64),
    formulation: Formulation,
) -> ModelState {
    let w = normal_vec(rng, ds.k() * ds.d(), w_scale);
    let u = (0..ds.n()).map(|_| rng.gen_range(u_range.0..=u_range.1)).collect();
    ModelState::from_parts(ds.k(), ds.d(), w, u, formulation)
}

/// Small dataset with dense random unit features, `D ≥ 1`, random labels.
pub fn random_tiny<R: Rng>(rng: &mut R, n: usize, k: usize, d: usize) -> Dataset {
    let examples = (0..n)
        .map(|i| {
            let label = if i < k { i } else { rng.gen_range(0..k) };
            Example { label, x: SparseVector::dense(&unit(normal_vec(rng, d, 1.0))) }
        })
        .collect();
    Dataset::new("tiny", examples, k, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SynthConfig::new(200, 7, 4, 3);
        let a = softmax_dataset(cfg);
        let b = softmax_dataset(cfg);
        assert_eq!((a.n(), a.k(), a.d()), (200, 7, 4));
        assert!(a.class_counts().iter().all(|&c| c > 0));
        assert!(a.examples.iter().zip(&b.examples).all(|(x, y)| x.label == y.label && x.x == y.x));
        assert!((a.max_x_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn class_means_variant() {
        let cfg = SynthConfig { class_mean_strength: Some(3.0), ..SynthConfig::new(100, 5, 6, 1) };
        let ds = softmax_dataset(cfg);
        assert_eq!(ds.k(), 5);
        assert!(ds.class_counts().iter().all(|&c| c > 0));
    }
}
