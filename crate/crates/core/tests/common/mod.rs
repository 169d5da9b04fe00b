#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use uavnet::nlp::SparseNlp;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Point strictly inside the simple bounds; unbounded directions get a
/// normal perturbation of the initial guess.
pub fn random_point(nlp: &SparseNlp, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..nlp.n())
        .map(|i| {
            let (lb, ub, x0) = (nlp.x_lb[i], nlp.x_ub[i], nlp.x0[i]);
            let z: f64 = rng.sample(StandardNormal);
            match (lb.is_finite(), ub.is_finite()) {
                (true, true) if lb == ub => lb,
                (true, true) => lb + (ub - lb) * rng.gen_range(0.05..0.95),
                (true, false) => lb + z.abs() * x0.abs().max(1.0) + 1e-3,
                (false, true) => ub - z.abs() * x0.abs().max(1.0) - 1e-3,
                (false, false) => x0 + z * x0.abs().max(1.0),
            }
        })
        .collect()
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

/// Golden-section minimum of a unimodal function on `[a, b]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..300 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    0.5 * (a + b)
}
